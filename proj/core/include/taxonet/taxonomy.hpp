#pragma once

#include <utility>
#include <vector>

#include "taxonet/autodiff.hpp"
#include "taxonet/random.hpp"
#include "taxonet/util.hpp"

namespace taxonet {

enum class VarianceMode { isotropic, diagonal };

// Per-node diagonal Gaussian. In isotropic mode log_var has a single entry
// shared by all dimensions.
struct NodeParams {
  Vec mean;
  Vec log_var;

  Vec variances(int latent_dim) const;
};

struct ClusterPosterior {
  Vec probs;  // over all |T| nodes, heap order
};

// Complete-binary-tree mixture-of-Gaussians prior. Leaves store learnable
// means/log-variances; each internal node carries a convex weight
// alpha = logistic(branch_logit) and its Gaussian is the moment-matched
// approximation of the two-child mixture, derived bottom-up.
//
// Node indexing is heap order: root = 0, children of i are 2i+1 and 2i+2,
// leaves occupy [2^depth - 1, 2^(depth+1) - 1).
class TaxonomyTree {
 public:
  TaxonomyTree(int depth, int latent_dim, VarianceMode mode = VarianceMode::isotropic);

  // Leaf means ~ N(0, 0.1^2) per coordinate, leaf log-variances 0, logits 0.
  static TaxonomyTree random_init(int depth, int latent_dim, VarianceMode mode,
                                  RandomStream& rng);

  int depth() const { return depth_; }
  int latent_dim() const { return latent_dim_; }
  VarianceMode variance_mode() const { return mode_; }
  int num_leaves() const { return 1 << depth_; }
  int num_nodes() const { return (1 << (depth_ + 1)) - 1; }
  int num_internal() const { return num_leaves() - 1; }
  int leaf_offset() const { return num_leaves() - 1; }

  static int parent_of(int i) { return (i - 1) / 2; }
  static int left_child(int i) { return 2 * i + 1; }
  static int right_child(int i) { return 2 * i + 2; }
  static int node_depth(int i);
  bool is_leaf(int i) const { return i >= leaf_offset(); }

  Mat& leaf_means() { return leaf_means_; }
  const Mat& leaf_means() const { return leaf_means_; }
  Mat& leaf_log_vars() { return leaf_log_vars_; }
  const Mat& leaf_log_vars() const { return leaf_log_vars_; }
  // (num_internal) x 1 matrix of unconstrained logits, heap order.
  Mat& branch_logits() { return branch_logits_; }
  const Mat& branch_logits() const { return branch_logits_; }

  // alpha_c = logistic(branch_logits[c]) for internal node c, heap order.
  Vec alphas() const;

  std::vector<Mat*> params() { return {&leaf_means_, &leaf_log_vars_, &branch_logits_}; }

  // All 2^(depth+1)-1 node parameters, heap order, moment matching bottom-up.
  std::vector<NodeParams> derive_all_node_params() const;

  // Tape version for training. mu: |T| x D. var/log_var: |T| x 1 (isotropic)
  // or |T| x D (diagonal). alpha: num_internal x 1.
  struct Derived {
    ad::Var mu;
    ad::Var var;
    ad::Var log_var;
    ad::Var alpha;
  };
  struct Binding {
    ad::Var leaf_means;
    ad::Var leaf_log_vars;
    ad::Var branch_logits;
  };
  Binding bind(ad::Tape& tape) const;
  Derived derive_on_tape(ad::Tape& tape) const;
  Derived derive_on_tape(ad::Tape& tape, const Binding& b) const;

  // p(c|z) over all nodes under the given prior (softmax of log prior +
  // log density, log-sum-exp stabilized).
  ClusterPosterior cluster_posterior(const Vec& z, const Vec& prior) const;
  Mat cluster_posterior_batch(const Mat& z_rows, const Vec& prior) const;

  Vec uniform_prior() const { return Vec::Constant(num_nodes(), 1.0 / num_nodes()); }

  // Generative steps (1)-(2): draw a node from the prior, then z from its
  // Gaussian.
  std::pair<int, Vec> sample_generative(const Vec& prior, RandomStream& rng) const;

  // Permutation for export: position -> heap index, leaves (left-to-right)
  // first, then each shallower level, root last.
  std::vector<int> leaves_first_permutation() const;

  static constexpr double kLogVarClamp = 10.0;

 private:
  int depth_;
  int latent_dim_;
  VarianceMode mode_;
  Mat leaf_means_;     // L x D
  Mat leaf_log_vars_;  // L x D (diagonal) or L x 1 (isotropic)
  Mat branch_logits_;  // (L-1) x 1
};

// log N(z | mean, diag(var)) for a diagonal Gaussian.
double log_gaussian_pdf(const Vec& z, const NodeParams& node);
double log_gaussian_pdf(const Vec& z, const Vec& mean, const Vec& var);

// Closed-form KL(q || p) between diagonal Gaussians; >= 0, zero iff equal.
double kl_diag_gaussians(const NodeParams& q, const NodeParams& p, int latent_dim);
double kl_diag_gaussians(const Vec& mu_q, const Vec& var_q, const Vec& mu_p, const Vec& var_p);

namespace ops {

// log N(z_i | mu_c, var_c) for every sample row i and node row c -> B x T.
// mu: T x D; log_var: T x 1 (isotropic) or T x D.
ad::Var log_gaussian_matrix(ad::Var z, ad::Var mu, ad::Var log_var, bool isotropic);

// KL(q_i || p_c) -> B x T for diagonal Gaussians given per-sample posterior
// (mu_q, log_var_q: B x D) and node parameters as above.
ad::Var kl_matrix(ad::Var mu_q, ad::Var log_var_q, ad::Var mu_p, ad::Var log_var_p,
                  bool isotropic);

}  // namespace ops

}  // namespace taxonet
