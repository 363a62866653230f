#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "taxonet/util.hpp"

namespace taxonet {

// Deterministic random stream. Uniform doubles and normal draws are produced
// from raw mt19937_64 output (Box-Muller, both values consumed, no cached
// spare), so sequences are identical across standard libraries. Streams for
// distinct purposes/steps are derived with `substream`, which keeps trainer
// state resumable from plain counters.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  static RandomStream substream(std::uint64_t seed, std::uint64_t tag,
                                std::uint64_t a = 0, std::uint64_t b = 0);

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform();
  double uniform(double lo, double hi);

  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n);

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Mat normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Vec normal_vector(Eigen::Index n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const;
  void deserialize(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 hash step, used to mix seeds for substreams.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace taxonet
