#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "taxonet/taxonomy.hpp"
#include "taxonet/util.hpp"

namespace taxonet {

struct Dataset {
  Mat inputs;                               // N x prod(input_shape)
  std::vector<int> input_shape;             // {C,H,W} for images, {D} for features
  std::optional<std::vector<int>> labels;   // values in [0, num_classes)
  std::string source;
  bool standardized = false;

  Eigen::Index size() const { return inputs.rows(); }
  int num_classes() const;
};

// IDX image/label pair (big-endian, magic 0x00000803 / 0x00000801); pixels are
// scaled to [0,1]. Rejects bad magic, truncation and count mismatches without
// yielding a partial dataset.
Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path);

// Feature file, binary ("TXFT", little-endian) or CSV, chosen by extension
// (.csv); see README for the byte-exact layout. Optional per-dimension
// standardization to mean 0 / stddev 1.
Dataset load_features(const std::filesystem::path& path, bool standardize = false);
void save_features(const std::filesystem::path& path, const Mat& values,
                   const std::vector<int>* labels);

enum class ObservationMap { identity, random_linear };

struct SyntheticTreeSpec {
  int depth = 3;
  int latent_dim = 2;
  double separation = 8.0;
  int samples_per_leaf = 500;
  ObservationMap observation = ObservationMap::identity;
  int obs_dim = 0;  // random_linear only; 0 -> latent_dim
  double noise_sigma = 0.2;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Dataset data;          // labels = generating leaf index
  TaxonomyTree tree;     // ground truth
};

// Ground-truth tree built by recursive offsetting: each child displaced by
// +/- separation/2^level from its parent along dimension (level-1) mod D, so
// sibling leaves at the deepest level are 2*separation/2^depth apart and the
// hierarchy is metrically recoverable. Leaf variance = noise_sigma^2.
SyntheticData generate_synthetic(const SyntheticTreeSpec& spec);

}  // namespace taxonet
