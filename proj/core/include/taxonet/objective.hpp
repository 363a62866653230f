#pragma once

#include <optional>
#include <string>

#include "taxonet/model.hpp"
#include "taxonet/taxonomy.hpp"

namespace taxonet {

struct LossWeights {
  double recon_weight = 5.0;
  double kl_weight = 1.0;
  double contrastive_weight = 100.0;
  double lambda_ent = 0.01;
  double lambda_dkl = 0.01;
  double margin = 1.2;
  double tau_embed = 0.5;
  double tau_cluster = 0.3;
};

enum class RdklDepthConvention { children, parent };

struct ObjectiveOptions {
  bool contrastive = false;
  bool stop_grad_assignment = false;  // stop gradients through w in the cluster KL
  bool r_ent_enabled = true;
  bool r_dkl_enabled = true;
  bool ntxent_embed_enabled = true;
  bool ntxent_cluster_enabled = true;
  RdklDepthConvention rdkl_depth = RdklDepthConvention::children;
  bool rdkl_leaf_only = false;
};

// Raw term values. recon is the batch-mean reconstruction log-likelihood
// (higher is better); kl_cluster/kl_assign are KL divergences (>= 0);
// r_ent is a reward, r_dkl a penalty; the ntxent terms are losses. total is
// the minimized objective:
//   -recon_weight*recon + kl_weight*(kl_cluster + kl_assign)
//   + contrastive_weight*(ntxent_embed + ntxent_cluster) - r_ent + r_dkl
struct LossBreakdown {
  double recon = 0.0;
  double kl_cluster = 0.0;
  double kl_assign = 0.0;
  double r_ent = 0.0;
  double r_dkl = 0.0;
  double ntxent_embed = 0.0;
  double ntxent_cluster = 0.0;
  double total = 0.0;

  bool finite() const;
  std::string to_json_line(long step) const;
};

// ----- spec-level operations (value-only) -----

struct ElboTerms {
  double recon = 0.0;
  double kl_cluster = 0.0;
  double kl_assign = 0.0;
};

// Batch-mean ELBO terms with one reparameterized z per sample and the
// assignment distribution w = p(c|z) over all nodes (uniform cluster prior).
ElboTerms elbo_terms(Model& model, const TaxonomyTree& tree, const Mat& batch,
                     std::uint64_t rng_seed);

// Entropy reward on branch weights, sum over internal nodes of
// lambda^depth(c) * H(alpha_c), depth(root) = 0.
double r_ent(const TaxonomyTree& tree, double lambda_ent);

// Sibling separation penalty: hinge on symmetric KL of each sibling pair
// against margin m * lambda^(N - depth), controlled by the depth convention
// and the leaf-only switch.
double r_dkl(const TaxonomyTree& tree, double lambda_dkl, double margin,
             RdklDepthConvention depth_convention = RdklDepthConvention::children,
             bool leaf_only = false);

// NT-Xent over 2N projection rows with view pairs at (i, i+N); cosine
// similarity at temperature tau. Throws on zero-norm rows.
double ntxent(const Mat& projections, double tau);

struct CategoryUtility {
  double i_zt = 0.0;          // I(Z;T) estimate
  Vec h_z_given_c;            // per-node Gaussian entropies
  double h_z = 0.0;           // Monte-Carlo entropy of the aggregate posterior
  double h_z_given_t = 0.0;   // uniform-prior average of h_z_given_c
};
// Diagnostic only; never enters gradients.
CategoryUtility category_utility_diagnostic(Model& model, const TaxonomyTree& tree,
                                            const Mat& batch, int n_mc, RandomStream& rng);

// Deterministic per-point ELBO (unweighted): reconstruction expectation
// averaged over recon_mc posterior draws, with w = p(c|z) at the posterior
// mean. A valid lower bound on log p(x) up to reconstruction MC error.
double elbo_point(Model& model, const TaxonomyTree& tree, const Vec& x, int recon_mc,
                  RandomStream& rng);

// Importance-weighted log-likelihood estimate with n_samples draws from q(z|x).
double iw_log_px(Model& model, const TaxonomyTree& tree, const Vec& x, int n_samples,
                 RandomStream& rng);

// ----- tape builders (training path) -----

namespace ops {

// -log[exp(sim(h_i,h_j)/tau) / sum_{k != i} exp(sim(h_i,h_k)/tau)], mean over anchors.
ad::Var ntxent(ad::Var projections, double tau);

ad::Var r_ent(ad::Var branch_logits, const TaxonomyTree& tree, double lambda_ent);

ad::Var r_dkl(const TaxonomyTree::Derived& derived, const TaxonomyTree& tree, double lambda_dkl,
              double margin, RdklDepthConvention depth_convention, bool leaf_only);

struct ElboVars {
  ad::Var recon;       // 1x1 batch mean
  ad::Var kl_cluster;  // 1x1
  ad::Var kl_assign;   // 1x1
  ad::Var log_w;       // B x T
  ad::Var w;           // B x T (differentiable)
  ad::Var z;           // B x D
  ad::Var hidden;      // B x hidden
};
ElboVars build_elbo(ad::Tape& tape, Model& model, const Model::Binding& mp,
                    const TaxonomyTree& tree, const TaxonomyTree::Derived& derived, const Mat& x,
                    const Mat& eps, bool stop_grad_assignment, bool training = true);

}  // namespace ops

// Full training graph for one batch (x2 present iff contrastive views).
struct LossGraph {
  ad::Var total;
  LossBreakdown values;
  Model::Binding model_params;
  ProjectionHeads::Binding head_params;
  TaxonomyTree::Binding tree_params;
};
LossGraph build_loss(ad::Tape& tape, Model& model, const TaxonomyTree& tree,
                     ProjectionHeads* heads, const Mat& x1, const Mat* x2,
                     const LossWeights& weights, const ObjectiveOptions& options,
                     RandomStream& rng, bool training = true);

}  // namespace taxonet
