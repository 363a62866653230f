#include "taxonet/random.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace taxonet {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

RandomStream RandomStream::substream(std::uint64_t seed, std::uint64_t tag,
                                     std::uint64_t a, std::uint64_t b) {
  std::uint64_t s = splitmix64(seed ^ splitmix64(tag ^ splitmix64(a ^ splitmix64(b))));
  return RandomStream(s);
}

double RandomStream::uniform() {
  // 53 random bits -> double in [0, 1)
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t RandomStream::uniform_index(std::uint64_t n) {
  // rejection sampling to avoid modulo bias
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - (std::numeric_limits<std::uint64_t>::max() % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double RandomStream::normal() {
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Mat RandomStream::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
  return m;
}

Vec RandomStream::normal_vector(Eigen::Index n) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

std::string RandomStream::serialize() const {
  std::ostringstream ss;
  ss << engine_;
  return ss.str();
}

void RandomStream::deserialize(const std::string& s) {
  std::istringstream ss(s);
  ss >> engine_;
}

}  // namespace taxonet
