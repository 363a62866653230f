#include "taxonet/taxonomy.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace taxonet {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)
}

Vec NodeParams::variances(int latent_dim) const {
  if (log_var.size() == 1) return Vec::Constant(latent_dim, std::exp(log_var[0]));
  return log_var.array().exp();
}

TaxonomyTree::TaxonomyTree(int depth, int latent_dim, VarianceMode mode)
    : depth_(depth), latent_dim_(latent_dim), mode_(mode) {
  if (depth < 1) throw std::invalid_argument("tree depth must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  const int leaves = num_leaves();
  leaf_means_ = Mat::Zero(leaves, latent_dim);
  leaf_log_vars_ = Mat::Zero(leaves, mode == VarianceMode::isotropic ? 1 : latent_dim);
  branch_logits_ = Mat::Zero(leaves - 1, 1);
}

TaxonomyTree TaxonomyTree::random_init(int depth, int latent_dim, VarianceMode mode,
                                       RandomStream& rng) {
  TaxonomyTree t(depth, latent_dim, mode);
  t.leaf_means_ = 0.1 * rng.normal_matrix(t.num_leaves(), latent_dim);
  return t;
}

int TaxonomyTree::node_depth(int i) {
  int d = 0;
  while (i > 0) {
    i = parent_of(i);
    ++d;
  }
  return d;
}

Vec TaxonomyTree::alphas() const {
  return (1.0 / (1.0 + (-branch_logits_.col(0).array()).exp())).matrix();
}

std::vector<NodeParams> TaxonomyTree::derive_all_node_params() const {
  const int n = num_nodes();
  const int off = leaf_offset();
  const int d = latent_dim_;
  std::vector<NodeParams> out(static_cast<std::size_t>(n));
  std::vector<Vec> var(static_cast<std::size_t>(n));
  for (int leaf = 0; leaf < num_leaves(); ++leaf) {
    int i = off + leaf;
    out[i].mean = leaf_means_.row(leaf).transpose();
    Vec lv = leaf_log_vars_.row(leaf).transpose().cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);
    out[i].log_var = lv;
    var[i] = lv.array().exp();
  }
  const Vec a = alphas();
  for (int i = off - 1; i >= 0; --i) {
    const NodeParams& l = out[left_child(i)];
    const NodeParams& r = out[right_child(i)];
    double alpha = a[i];
    Vec mu = alpha * l.mean + (1.0 - alpha) * r.mean;
    if (mode_ == VarianceMode::isotropic) {
      double dl = (l.mean - mu).squaredNorm() / d;
      double dr = (r.mean - mu).squaredNorm() / d;
      double v = alpha * (var[left_child(i)][0] + dl) + (1.0 - alpha) * (var[right_child(i)][0] + dr);
      var[i] = Vec::Constant(1, v);
      out[i].log_var = Vec::Constant(1, std::log(v));
    } else {
      Vec dl = (l.mean - mu).array().square();
      Vec dr = (r.mean - mu).array().square();
      Vec v = alpha * (var[left_child(i)] + dl) + (1.0 - alpha) * (var[right_child(i)] + dr);
      var[i] = v;
      out[i].log_var = v.array().log();
    }
    out[i].mean = std::move(mu);
  }
  return out;
}

TaxonomyTree::Binding TaxonomyTree::bind(ad::Tape& tape) const {
  return Binding{tape.leaf(leaf_means_), tape.leaf(leaf_log_vars_), tape.leaf(branch_logits_)};
}

TaxonomyTree::Derived TaxonomyTree::derive_on_tape(ad::Tape& tape) const {
  return derive_on_tape(tape, bind(tape));
}

TaxonomyTree::Derived TaxonomyTree::derive_on_tape(ad::Tape& tape, const Binding& bnd) const {
  using namespace ad;
  ad::Var leaf_means = bnd.leaf_means;
  ad::Var leaf_log_vars = bnd.leaf_log_vars;
  const bool iso = mode_ == VarianceMode::isotropic;
  const double dinv = 1.0 / latent_dim_;
  Var alpha_all = sigmoid(bnd.branch_logits);  // (L-1) x 1

  std::vector<Var> mu_levels(static_cast<std::size_t>(depth_) + 1);
  std::vector<Var> var_levels(static_cast<std::size_t>(depth_) + 1);
  mu_levels[static_cast<std::size_t>(depth_)] = leaf_means;
  var_levels[static_cast<std::size_t>(depth_)] =
      exp(clamp(leaf_log_vars, -kLogVarClamp, kLogVarClamp));

  for (int k = depth_ - 1; k >= 0; --k) {
    const int m = 1 << k;
    std::vector<int> internal_idx(static_cast<std::size_t>(m));
    std::vector<int> evens(static_cast<std::size_t>(m)), odds(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      internal_idx[j] = (m - 1) + j;  // heap index == alpha index for internal nodes
      evens[j] = 2 * j;
      odds[j] = 2 * j + 1;
    }
    Var ak = gather_rows(alpha_all, internal_idx);    // m x 1
    Var ak1m = adds(neg(ak), 1.0);                    // 1 - alpha
    Var ml = gather_rows(mu_levels[k + 1], evens);    // m x D
    Var mr = gather_rows(mu_levels[k + 1], odds);
    Var vl = gather_rows(var_levels[k + 1], evens);
    Var vr = gather_rows(var_levels[k + 1], odds);

    Var mu = add(mul_colvec(ml, ak), mul_colvec(mr, ak1m));
    Var var;
    if (iso) {
      Var dl = muls(row_sum(square(sub(ml, mu))), dinv);
      Var dr = muls(row_sum(square(sub(mr, mu))), dinv);
      var = add(mul(ak, add(vl, dl)), mul(ak1m, add(vr, dr)));
    } else {
      Var dl = square(sub(ml, mu));
      Var dr = square(sub(mr, mu));
      var = add(mul_colvec(add(vl, dl), ak), mul_colvec(add(vr, dr), ak1m));
    }
    mu_levels[static_cast<std::size_t>(k)] = mu;
    var_levels[static_cast<std::size_t>(k)] = var;
  }

  Derived out;
  out.mu = vcat(mu_levels);
  out.var = vcat(var_levels);
  out.log_var = log(out.var);
  out.alpha = alpha_all;
  return out;
}

ClusterPosterior TaxonomyTree::cluster_posterior(const Vec& z, const Vec& prior) const {
  Mat zr = z.transpose();
  Mat p = cluster_posterior_batch(zr, prior);
  return ClusterPosterior{p.row(0).transpose()};
}

Mat TaxonomyTree::cluster_posterior_batch(const Mat& z_rows, const Vec& prior) const {
  const int n = num_nodes();
  if (prior.size() != n) throw std::invalid_argument("prior size must equal |T|");
  auto nodes = derive_all_node_params();
  const Eigen::Index bsz = z_rows.rows();
  Mat logp(bsz, n);
  Vec log_prior = prior.array().max(1e-300).log();
  for (int c = 0; c < n; ++c) {
    const Vec& mu = nodes[c].mean;
    Vec var = nodes[c].variances(latent_dim_);
    double logdet = var.array().log().sum();
    Vec inv = var.cwiseInverse();
    for (Eigen::Index i = 0; i < bsz; ++i) {
      Vec diff = z_rows.row(i).transpose() - mu;
      double quad = diff.array().square().matrix().dot(inv);
      logp(i, c) = log_prior[c] - 0.5 * (latent_dim_ * kLog2Pi + logdet + quad);
    }
  }
  Mat out(bsz, n);
  for (Eigen::Index i = 0; i < bsz; ++i) {
    double m = logp.row(i).maxCoeff();
    Eigen::ArrayXd ex = (logp.row(i).array() - m).exp();
    out.row(i) = (ex / ex.sum()).matrix();
  }
  return out;
}

std::pair<int, Vec> TaxonomyTree::sample_generative(const Vec& prior, RandomStream& rng) const {
  if (prior.size() != num_nodes()) throw std::invalid_argument("prior size must equal |T|");
  double u = rng.uniform();
  double acc = 0.0;
  int node = num_nodes() - 1;
  for (int c = 0; c < num_nodes(); ++c) {
    acc += prior[c];
    if (u < acc) {
      node = c;
      break;
    }
  }
  auto nodes = derive_all_node_params();
  Vec sd = nodes[node].variances(latent_dim_).array().sqrt();
  Vec z = nodes[node].mean + sd.cwiseProduct(rng.normal_vector(latent_dim_));
  return {node, z};
}

std::vector<int> TaxonomyTree::leaves_first_permutation() const {
  std::vector<int> perm;
  perm.reserve(static_cast<std::size_t>(num_nodes()));
  for (int level = depth_; level >= 0; --level) {
    int first = (1 << level) - 1;
    int count = 1 << level;
    for (int j = 0; j < count; ++j) perm.push_back(first + j);
  }
  return perm;
}

double log_gaussian_pdf(const Vec& z, const Vec& mean, const Vec& var) {
  const double d = static_cast<double>(z.size());
  double logdet = var.array().log().sum();
  double quad = ((z - mean).array().square() / var.array()).sum();
  return -0.5 * (d * kLog2Pi + logdet + quad);
}

double log_gaussian_pdf(const Vec& z, const NodeParams& node) {
  return log_gaussian_pdf(z, node.mean, node.variances(static_cast<int>(z.size())));
}

double kl_diag_gaussians(const Vec& mu_q, const Vec& var_q, const Vec& mu_p, const Vec& var_p) {
  double kl = 0.0;
  for (Eigen::Index d = 0; d < mu_q.size(); ++d) {
    kl += std::log(var_p[d] / var_q[d]) + (var_q[d] + (mu_q[d] - mu_p[d]) * (mu_q[d] - mu_p[d])) / var_p[d] - 1.0;
  }
  return 0.5 * kl;
}

double kl_diag_gaussians(const NodeParams& q, const NodeParams& p, int latent_dim) {
  return kl_diag_gaussians(q.mean, q.variances(latent_dim), p.mean, p.variances(latent_dim));
}

namespace ops {

ad::Var log_gaussian_matrix(ad::Var z, ad::Var mu, ad::Var log_var, bool isotropic) {
  using namespace ad;
  const double d = static_cast<double>(z.cols());
  Var quad, logdet;  // quad: B x T, logdet: T x 1
  if (isotropic) {
    Var inv_var = exp(neg(log_var));  // T x 1
    Var a = row_sum(square(z));       // B x 1
    Var b = matmul(z, transpose(mu)); // B x T
    Var c = row_sum(square(mu));      // T x 1
    Var sq = add_colvec(add_rowvec(muls(b, -2.0), transpose(c)), a);
    quad = mul_rowvec(sq, transpose(inv_var));
    logdet = muls(log_var, d);
  } else {
    Var inv_var = exp(neg(log_var));  // T x D
    Var a = matmul(square(z), transpose(inv_var));
    Var b = matmul(z, transpose(mul(mu, inv_var)));
    Var c = row_sum(mul(square(mu), inv_var));  // T x 1
    quad = add_rowvec(add(a, muls(b, -2.0)), transpose(c));
    logdet = row_sum(log_var);
  }
  Var inner = add_rowvec(quad, transpose(logdet));
  return adds(muls(inner, -0.5), -0.5 * d * kLog2Pi);
}

ad::Var kl_matrix(ad::Var mu_q, ad::Var log_var_q, ad::Var mu_p, ad::Var log_var_p,
                  bool isotropic) {
  using namespace ad;
  const double d = static_cast<double>(mu_q.cols());
  Var var_q = exp(log_var_q);  // B x D
  Var trace, quad, logdet_p;   // trace/quad: B x T, logdet_p: T x 1
  if (isotropic) {
    Var inv_vp = exp(neg(log_var_p));  // T x 1
    trace = matmul(row_sum(var_q), transpose(inv_vp));
    Var a = row_sum(square(mu_q));      // B x 1
    Var b = matmul(mu_q, transpose(mu_p));
    Var c = row_sum(square(mu_p));      // T x 1
    Var sq = add_colvec(add_rowvec(muls(b, -2.0), transpose(c)), a);
    quad = mul_rowvec(sq, transpose(inv_vp));
    logdet_p = muls(log_var_p, d);
  } else {
    Var inv_vp = exp(neg(log_var_p));  // T x D
    trace = matmul(var_q, transpose(inv_vp));
    Var a = matmul(square(mu_q), transpose(inv_vp));
    Var b = matmul(mu_q, transpose(mul(mu_p, inv_vp)));
    Var c = row_sum(mul(square(mu_p), inv_vp));
    quad = add_rowvec(add(a, muls(b, -2.0)), transpose(c));
    logdet_p = row_sum(log_var_p);
  }
  Var logdet_q = row_sum(log_var_q);  // B x 1
  Var x = add(trace, quad);
  x = add_rowvec(x, transpose(logdet_p));
  x = add_colvec(x, neg(logdet_q));
  return muls(adds(x, -d), 0.5);
}

}  // namespace ops

}  // namespace taxonet
