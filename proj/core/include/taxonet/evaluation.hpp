#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "taxonet/util.hpp"

namespace taxonet {

// Per-sample cluster posteriors, rows summing to 1 over all |T| nodes.
struct AssignmentTable {
  Mat probs;                              // N x |T|
  std::optional<std::vector<int>> labels;

  Eigen::Index size() const { return probs.rows(); }
  int num_nodes() const { return static_cast<int>(probs.cols()); }
  // |T| = 2^(depth+1) - 1
  int tree_depth() const;
  void validate() const;
};

// |Y| x |T| empirical class distributions; after normalization each column
// sums to 1 and is P(Y | c).
struct AnnotationMatrix {
  Mat values;
  std::vector<int> class_labels;
  bool normalized = false;
};

// A[y][c] = sum_{i: y_i = y} p(c|z_i), then epsilon-smoothed (1e-8 per entry)
// and column-normalized.
AnnotationMatrix build_annotation_matrix(const AssignmentTable& train);

// P(y|z) = sum_c p(c|z) P(Y=y|c); each output row is a probability vector.
Mat classify(const AssignmentTable& test, const AnnotationMatrix& ann);

// argmax of the predicted distribution, ties to the lowest class index.
double accuracy(const Mat& pred, const std::vector<int>& labels);
std::vector<int> argmax_rows(const Mat& pred);

// Normalized mutual information, arithmetic-mean normalization.
double nmi(const std::vector<int>& a, const std::vector<int>& b);

// Probabilistic dendrogram purity. Same-class pairs are enumerated in a
// canonical order keyed to sorted sample identity; classes exceeding
// pair_budget pairs are uniformly subsampled without replacement under the
// fixed seed, so the metric is invariant to shuffling the table.
double prob_dendrogram_purity(const AssignmentTable& table, long pair_budget = 100000,
                              std::uint64_t seed = 0);

// Probabilistic leaf purity over the 2^depth leaf columns; the denominator is
// the total leaf mass (not renormalized per sample).
double prob_leaf_purity(const AssignmentTable& table, int tree_depth);

struct MetricsReport {
  double acc = 0.0;
  double nmi = 0.0;
  double dp = 0.0;
  double lp = 0.0;
  long n = 0;
  int tree_depth = 0;
  long pair_budget = 0;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

MetricsReport evaluate(const AssignmentTable& train, const AssignmentTable& test,
                       long pair_budget = 100000, std::uint64_t seed = 0);

// Assignment-table files: binary ("TXAT", little-endian) or CSV by extension;
// byte-exact layouts documented in the README.
void save_assignment_table(const std::filesystem::path& path, const AssignmentTable& table);
AssignmentTable load_assignment_table(const std::filesystem::path& path);

// one integer label per line
std::vector<int> load_labels_file(const std::filesystem::path& path);
void save_labels_file(const std::filesystem::path& path, const std::vector<int>& labels);

}  // namespace taxonet
