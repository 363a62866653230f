#include "taxonet/objective.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace taxonet {

namespace {
constexpr double kLog2Pi = 1.8378770664093453;

double softplus_stable(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
}  // namespace

bool LossBreakdown::finite() const {
  for (double v : {recon, kl_cluster, kl_assign, r_ent, r_dkl, ntxent_embed, ntxent_cluster, total})
    if (!std::isfinite(v)) return false;
  return true;
}

std::string LossBreakdown::to_json_line(long step) const {
  nlohmann::json j;
  j["step"] = step;
  j["recon"] = recon;
  j["kl_cluster"] = kl_cluster;
  j["kl_assign"] = kl_assign;
  j["r_ent"] = r_ent;
  j["r_dkl"] = r_dkl;
  j["ntxent_embed"] = ntxent_embed;
  j["ntxent_cluster"] = ntxent_cluster;
  j["total"] = total;
  return j.dump();
}

namespace ops {

ElboVars build_elbo(ad::Tape& tape, Model& model, const Model::Binding& mp,
                    const TaxonomyTree& tree, const TaxonomyTree::Derived& derived, const Mat& x,
                    const Mat& eps, bool stop_grad_assignment, bool training) {
  using namespace ad;
  const bool iso = tree.variance_mode() == VarianceMode::isotropic;
  const int num_nodes = tree.num_nodes();

  Var xc = tape.constant(x);
  auto enc = model.encode_on_tape(tape, mp, xc, training);
  Var z = reparameterize(enc.mean, enc.log_var, tape.constant(eps));
  Var x_hat = model.decode_on_tape(tape, mp, z);
  Var recon = mean_all(recon_log_likelihood(xc, x_hat, model.spec().likelihood));

  // assignment distribution w = p(c|z), uniform prior over all nodes
  Var logp = log_gaussian_matrix(z, derived.mu, derived.log_var, iso);
  Var log_w = log_softmax_rows(logp);
  Var w = exp(log_w);

  Var w_kl = stop_grad_assignment ? stop_gradient(w) : w;
  Var klm = kl_matrix(enc.mean, enc.log_var, derived.mu, derived.log_var, iso);
  Var kl_cluster = mean_all(row_sum(mul(w_kl, klm)));

  // KL(w || uniform) = sum w (log w + log |T|)
  Var kl_assign = mean_all(row_sum(mul(w, adds(log_w, std::log(static_cast<double>(num_nodes))))));

  return {recon, kl_cluster, kl_assign, log_w, w, z, enc.hidden};
}

ad::Var ntxent(ad::Var h, double tau) {
  using namespace ad;
  const Eigen::Index n = h.rows();
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("ntxent expects 2N projection rows");
  for (Eigen::Index i = 0; i < n; ++i)
    if (h.value().row(i).norm() <= 0.0) throw std::invalid_argument("ntxent: zero-norm projection row");

  Var norms = sqrt(row_sum(square(h)));        // n x 1
  Var hn = mul_colvec(h, div(h.tape->constant(Mat::Ones(n, 1)), norms));
  Var sim = muls(matmul(hn, transpose(hn)), 1.0 / tau);
  Mat mask = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) mask(i, i) = -1e9;
  Var masked = add(sim, sim.tape->constant(mask));
  std::vector<std::pair<int, int>> pos;
  pos.reserve(static_cast<std::size_t>(n));
  const int half = static_cast<int>(n / 2);
  for (int i = 0; i < n; ++i) pos.emplace_back(i, (i + half) % static_cast<int>(n));
  Var positives = gather_elems(masked, pos);   // uses masked: diagonal never a positive
  Var lse = logsumexp_rows(masked);
  return mean_all(sub(lse, positives));
}

ad::Var r_ent(ad::Var branch_logits, const TaxonomyTree& tree, double lambda_ent) {
  using namespace ad;
  const int m = tree.num_internal();
  Mat weights(m, 1);
  for (int i = 0; i < m; ++i) weights(i, 0) = std::pow(lambda_ent, TaxonomyTree::node_depth(i));
  // H(sigmoid(t)) = sigmoid(t) softplus(-t) + sigmoid(-t) softplus(t); avoids log(0)
  Var a = sigmoid(branch_logits);
  Var ent = add(mul(a, softplus(neg(branch_logits))),
                mul(adds(neg(a), 1.0), softplus(branch_logits)));
  return sum_all(mul(branch_logits.tape->constant(weights), ent));
}

namespace {

// per-pair KL(a || b) for rows of (mu, var, log_var)
ad::Var kl_rows(ad::Var mu_a, ad::Var var_a, ad::Var lv_a, ad::Var mu_b, ad::Var var_b,
                ad::Var lv_b, bool iso, int latent_dim) {
  using namespace ad;
  const double d = static_cast<double>(latent_dim);
  if (iso) {
    Var dsq = row_sum(square(sub(mu_a, mu_b)));
    Var term = div(add(muls(var_a, d), dsq), var_b);
    return muls(adds(add(muls(sub(lv_b, lv_a), d), term), -d), 0.5);
  }
  Var dsq = square(sub(mu_a, mu_b));
  Var inner = add(sub(lv_b, lv_a), div(add(var_a, dsq), var_b));
  return muls(adds(row_sum(inner), -d), 0.5);
}

}  // namespace

ad::Var r_dkl(const TaxonomyTree::Derived& derived, const TaxonomyTree& tree, double lambda_dkl,
              double margin, RdklDepthConvention depth_convention, bool leaf_only) {
  using namespace ad;
  std::vector<int> lefts, rights;
  std::vector<double> margins;
  for (int i = 0; i < tree.num_internal(); ++i) {
    const int l = TaxonomyTree::left_child(i);
    if (leaf_only && !tree.is_leaf(l)) continue;
    const int depth_c = depth_convention == RdklDepthConvention::children
                            ? TaxonomyTree::node_depth(l)
                            : TaxonomyTree::node_depth(i);
    lefts.push_back(l);
    rights.push_back(TaxonomyTree::right_child(i));
    margins.push_back(margin * std::pow(lambda_dkl, tree.depth() - depth_c));
  }
  const bool iso = tree.variance_mode() == VarianceMode::isotropic;
  Var ml = gather_rows(derived.mu, lefts), mr = gather_rows(derived.mu, rights);
  Var vl = gather_rows(derived.var, lefts), vr = gather_rows(derived.var, rights);
  Var ll = gather_rows(derived.log_var, lefts), lr = gather_rows(derived.log_var, rights);
  Var sym = add(kl_rows(ml, vl, ll, mr, vr, lr, iso, tree.latent_dim()),
                kl_rows(mr, vr, lr, ml, vl, ll, iso, tree.latent_dim()));
  Mat mvec(static_cast<Eigen::Index>(margins.size()), 1);
  for (std::size_t i = 0; i < margins.size(); ++i) mvec(static_cast<Eigen::Index>(i), 0) = margins[i];
  return sum_all(relu(sub(sym.tape->constant(mvec), sym)));
}

}  // namespace ops

ElboTerms elbo_terms(Model& model, const TaxonomyTree& tree, const Mat& batch,
                     std::uint64_t rng_seed) {
  ad::Tape tape(false);
  auto mp = model.bind(tape);
  auto derived = tree.derive_on_tape(tape);
  RandomStream rng(rng_seed);
  Mat eps = rng.normal_matrix(batch.rows(), tree.latent_dim());
  auto ev = ops::build_elbo(tape, model, mp, tree, derived, batch, eps, false, false);
  return {ev.recon.scalar(), ev.kl_cluster.scalar(), ev.kl_assign.scalar()};
}

double r_ent(const TaxonomyTree& tree, double lambda_ent) {
  double total = 0.0;
  const Mat& logits = tree.branch_logits();
  for (int i = 0; i < tree.num_internal(); ++i) {
    const double t = logits(i, 0);
    const double a = 1.0 / (1.0 + std::exp(-t));
    const double ent = a * softplus_stable(-t) + (1.0 - a) * softplus_stable(t);
    total += std::pow(lambda_ent, TaxonomyTree::node_depth(i)) * ent;
  }
  return total;
}

double r_dkl(const TaxonomyTree& tree, double lambda_dkl, double margin,
             RdklDepthConvention depth_convention, bool leaf_only) {
  auto nodes = tree.derive_all_node_params();
  double total = 0.0;
  for (int i = 0; i < tree.num_internal(); ++i) {
    const int l = TaxonomyTree::left_child(i), r = TaxonomyTree::right_child(i);
    if (leaf_only && !tree.is_leaf(l)) continue;
    const int depth_c = depth_convention == RdklDepthConvention::children
                            ? TaxonomyTree::node_depth(l)
                            : TaxonomyTree::node_depth(i);
    const double sym = kl_diag_gaussians(nodes[l], nodes[r], tree.latent_dim()) +
                       kl_diag_gaussians(nodes[r], nodes[l], tree.latent_dim());
    const double m = margin * std::pow(lambda_dkl, tree.depth() - depth_c);
    total += std::max(0.0, m - sym);
  }
  return total;
}

double ntxent(const Mat& projections, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("ntxent: temperature must be positive");
  ad::Tape tape(false);
  return ops::ntxent(tape.constant(projections), tau).scalar();
}

CategoryUtility category_utility_diagnostic(Model& model, const TaxonomyTree& tree,
                                            const Mat& batch, int n_mc, RandomStream& rng) {
  if (n_mc < 1) throw std::invalid_argument("n_mc must be >= 1");
  const int d = tree.latent_dim();
  auto nodes = tree.derive_all_node_params();
  CategoryUtility out;
  out.h_z_given_c.resize(tree.num_nodes());
  for (int c = 0; c < tree.num_nodes(); ++c) {
    double logdet = nodes[c].variances(d).array().log().sum();
    out.h_z_given_c[c] = 0.5 * d * kLog2Pi + 0.5 * d + 0.5 * logdet;
  }
  out.h_z_given_t = out.h_z_given_c.mean();

  auto post = model.encode_batch(batch);
  const Eigen::Index n = batch.rows();
  double acc = 0.0;
  long count = 0;
  for (int m = 0; m < n_mc; ++m) {
    Mat z = reparameterize_batch(post.mean, post.log_var, rng);
    for (Eigen::Index i = 0; i < n; ++i) {
      // aggregate posterior: log (1/N) sum_j q(z_i | x_j)
      double best = -std::numeric_limits<double>::infinity();
      Vec lp(n);
      for (Eigen::Index j = 0; j < n; ++j) {
        Vec var = post.log_var.row(j).transpose().array().exp();
        lp[j] = log_gaussian_pdf(z.row(i).transpose(), post.mean.row(j).transpose(), var);
        best = std::max(best, lp[j]);
      }
      double lse = best + std::log((lp.array() - best).exp().sum());
      acc += lse - std::log(static_cast<double>(n));
      ++count;
    }
  }
  out.h_z = -acc / static_cast<double>(count);
  out.i_zt = out.h_z - out.h_z_given_t;
  return out;
}

namespace {

double log_prior_mixture(const std::vector<NodeParams>& nodes, int latent_dim, const Vec& z) {
  double best = -std::numeric_limits<double>::infinity();
  Vec lp(static_cast<Eigen::Index>(nodes.size()));
  const double logp_c = -std::log(static_cast<double>(nodes.size()));
  for (std::size_t c = 0; c < nodes.size(); ++c) {
    lp[static_cast<Eigen::Index>(c)] = logp_c + log_gaussian_pdf(z, nodes[c].mean, nodes[c].variances(latent_dim));
    best = std::max(best, lp[static_cast<Eigen::Index>(c)]);
  }
  return best + std::log((lp.array() - best).exp().sum());
}

}  // namespace

double elbo_point(Model& model, const TaxonomyTree& tree, const Vec& x, int recon_mc,
                  RandomStream& rng) {
  LatentPosterior post = model.encode(x);
  Vec w = tree.cluster_posterior(post.mean, tree.uniform_prior()).probs;
  auto nodes = tree.derive_all_node_params();
  const int d = tree.latent_dim();

  double recon = 0.0;
  for (int s = 0; s < recon_mc; ++s) {
    Vec z = reparameterize(post, rng);
    Vec x_hat = model.decode_batch(z.transpose()).row(0).transpose();
    recon += recon_log_likelihood(x, x_hat, model.spec().likelihood);
  }
  recon /= recon_mc;

  Vec var_q = post.log_var.array().exp();
  double kl_cluster = 0.0;
  for (int c = 0; c < tree.num_nodes(); ++c)
    kl_cluster += w[c] * kl_diag_gaussians(post.mean, var_q, nodes[c].mean, nodes[c].variances(d));
  double kl_assign = 0.0;
  const double log_t = std::log(static_cast<double>(tree.num_nodes()));
  for (int c = 0; c < tree.num_nodes(); ++c)
    if (w[c] > 0.0) kl_assign += w[c] * (std::log(w[c]) + log_t);
  return recon - kl_cluster - kl_assign;
}

double iw_log_px(Model& model, const TaxonomyTree& tree, const Vec& x, int n_samples,
                 RandomStream& rng) {
  LatentPosterior post = model.encode(x);
  auto nodes = tree.derive_all_node_params();
  Vec var_q = post.log_var.array().exp();
  Vec lw(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    Vec z = reparameterize(post, rng);
    Vec x_hat = model.decode_batch(z.transpose()).row(0).transpose();
    double log_px_z = recon_log_likelihood(x, x_hat, model.spec().likelihood);
    double log_pz = log_prior_mixture(nodes, tree.latent_dim(), z);
    double log_qz = log_gaussian_pdf(z, post.mean, var_q);
    lw[s] = log_px_z + log_pz - log_qz;
  }
  double m = lw.maxCoeff();
  return m + std::log((lw.array() - m).exp().sum()) - std::log(static_cast<double>(n_samples));
}

LossGraph build_loss(ad::Tape& tape, Model& model, const TaxonomyTree& tree,
                     ProjectionHeads* heads, const Mat& x1, const Mat* x2,
                     const LossWeights& weights, const ObjectiveOptions& options,
                     RandomStream& rng, bool training) {
  using namespace ad;
  LossGraph g;
  g.model_params = model.bind(tape);
  g.tree_params = tree.bind(tape);
  auto derived = tree.derive_on_tape(tape, g.tree_params);

  Mat eps1 = rng.normal_matrix(x1.rows(), tree.latent_dim());
  auto ev = ops::build_elbo(tape, model, g.model_params, tree, derived, x1, eps1,
                            options.stop_grad_assignment, training);

  Var total = adds(muls(ev.recon, -weights.recon_weight), 0.0);
  total = add(total, muls(add(ev.kl_cluster, ev.kl_assign), weights.kl_weight));

  g.values.recon = ev.recon.scalar();
  g.values.kl_cluster = ev.kl_cluster.scalar();
  g.values.kl_assign = ev.kl_assign.scalar();

  if (options.r_ent_enabled) {
    Var re = ops::r_ent(g.tree_params.branch_logits, tree, weights.lambda_ent);
    g.values.r_ent = re.scalar();
    total = sub(total, re);
  }
  if (options.r_dkl_enabled) {
    Var rd = ops::r_dkl(derived, tree, weights.lambda_dkl, weights.margin, options.rdkl_depth,
                        options.rdkl_leaf_only);
    g.values.r_dkl = rd.scalar();
    total = add(total, rd);
  }

  if (options.contrastive) {
    if (heads == nullptr || x2 == nullptr)
      throw std::invalid_argument("contrastive loss needs projection heads and a second view");
    g.head_params = heads->bind(tape);
    Mat eps2 = rng.normal_matrix(x2->rows(), tree.latent_dim());
    auto ev2 = ops::build_elbo(tape, model, g.model_params, tree, derived, *x2, eps2,
                               options.stop_grad_assignment, training);
    Var contrast = tape.constant(Mat::Zero(1, 1));
    if (options.ntxent_embed_enabled) {
      Var hcat = vcat({ev.hidden, ev2.hidden});
      Var he = heads->embed_on_tape(tape, g.head_params, hcat);
      Var nte = ops::ntxent(he, weights.tau_embed);
      g.values.ntxent_embed = nte.scalar();
      contrast = add(contrast, nte);
    }
    if (options.ntxent_cluster_enabled) {
      Var wcat = vcat({ev.w, ev2.w});
      Var hc = heads->cluster_on_tape(tape, g.head_params, wcat);
      Var ntc = ops::ntxent(hc, weights.tau_cluster);
      g.values.ntxent_cluster = ntc.scalar();
      contrast = add(contrast, ntc);
    }
    total = add(total, muls(contrast, weights.contrastive_weight));
  }

  g.total = total;
  g.values.total = total.scalar();
  return g;
}

}  // namespace taxonet
