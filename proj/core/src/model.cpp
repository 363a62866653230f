#include "taxonet/model.hpp"

#include <cmath>
#include <stdexcept>

namespace taxonet {

std::string to_string(Arch a) {
  switch (a) {
    case Arch::mlp: return "mlp";
    case Arch::conv_grayscale: return "conv_grayscale";
    case Arch::linear_feature: return "linear_feature";
  }
  return "?";
}

std::string to_string(Likelihood l) {
  return l == Likelihood::bernoulli ? "bernoulli" : "gaussian_unit_variance";
}

Arch arch_from_string(const std::string& s) {
  if (s == "mlp") return Arch::mlp;
  if (s == "conv_grayscale") return Arch::conv_grayscale;
  if (s == "linear_feature") return Arch::linear_feature;
  throw std::invalid_argument("unknown architecture: " + s);
}

Likelihood likelihood_from_string(const std::string& s) {
  if (s == "bernoulli") return Likelihood::bernoulli;
  if (s == "gaussian_unit_variance" || s == "gaussian") return Likelihood::gaussian_unit_variance;
  throw std::invalid_argument("unknown likelihood: " + s);
}

int ModelSpec::input_dim() const {
  int d = 1;
  for (int s : input_shape) d *= s;
  return d;
}

std::vector<int> ModelSpec::widths_or_default() const {
  if (!hidden_widths.empty()) return hidden_widths;
  switch (arch) {
    case Arch::mlp: return {256, 128};
    case Arch::linear_feature: return {128};
    case Arch::conv_grayscale: return {};
  }
  return {};
}

Vec reparameterize(const LatentPosterior& post, RandomStream& rng) {
  Vec eps = rng.normal_vector(post.mean.size());
  return post.mean + (0.5 * post.log_var.array()).exp().matrix().cwiseProduct(eps);
}

Mat reparameterize_batch(const Mat& mean, const Mat& log_var, RandomStream& rng) {
  Mat eps = rng.normal_matrix(mean.rows(), mean.cols());
  return mean + (0.5 * log_var.array()).exp().matrix().cwiseProduct(eps);
}

double recon_log_likelihood(const Vec& x, const Vec& x_hat, Likelihood lik) {
  if (x.size() != x_hat.size()) throw std::invalid_argument("recon_log_likelihood: shape mismatch");
  if (lik == Likelihood::gaussian_unit_variance) return -0.5 * (x - x_hat).squaredNorm();
  if ((x.array() < 0.0).any() || (x.array() > 1.0).any())
    throw std::domain_error("bernoulli likelihood requires x in [0,1]");
  Eigen::ArrayXd p = x_hat.array().max(1e-7).min(1.0 - 1e-7);
  return (x.array() * p.log() + (1.0 - x.array()) * (1.0 - p).log()).sum();
}

Model::Model(ModelSpec spec, RandomStream& rng) : spec_(std::move(spec)) {
  if (spec_.latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (spec_.input_shape.empty()) throw std::invalid_argument("input_shape must be set");
  build(rng);
  index_params();
}

Model::LinearLayer Model::make_linear(int in, int out, RandomStream& rng) {
  LinearLayer l;
  l.W = rng.normal_matrix(in, out) * (1.0 / std::sqrt(static_cast<double>(in)));
  l.b = Mat::Zero(1, out);
  return l;
}

void Model::build(RandomStream& rng) {
  const int D = spec_.latent_dim;
  switch (spec_.arch) {
    case Arch::mlp: {
      auto widths = spec_.widths_or_default();
      int in = spec_.input_dim();
      for (int w : widths) {
        enc_lin_.push_back(make_linear(in, w, rng));
        in = w;
      }
      hidden_dim_ = in;
      enc_mean_ = make_linear(in, D, rng);
      enc_logvar_ = make_linear(in, D, rng);
      int zin = D;
      for (auto it = widths.rbegin(); it != widths.rend(); ++it) {
        dec_lin_.push_back(make_linear(zin, *it, rng));
        zin = *it;
      }
      dec_lin_.push_back(make_linear(zin, spec_.input_dim(), rng));
      break;
    }
    case Arch::linear_feature: {
      auto widths = spec_.widths_or_default();
      const int h = widths.empty() ? 128 : widths[0];
      enc_lin_.push_back(make_linear(spec_.input_dim(), h, rng));
      hidden_dim_ = h;
      enc_mean_ = make_linear(h, D, rng);
      enc_logvar_ = make_linear(h, D, rng);
      dec_lin_.push_back(make_linear(D, h, rng));
      dec_lin_.push_back(make_linear(h, spec_.input_dim(), rng));
      break;
    }
    case Arch::conv_grayscale: {
      if (spec_.input_shape != std::vector<int>{1, 28, 28})
        throw std::invalid_argument("conv_grayscale expects input shape 1x28x28");
      auto add_conv = [&](int inC, int h, int w, int outC, int k, int s, int p) {
        ConvLayer c;
        c.geom = ad::ConvGeom{inC, h, w, outC, k, s, p};
        c.im = ad::make_conv_index_map(inC, h, w, k, s, p);
        c.W = rng.normal_matrix(outC, inC * k * k) * (1.0 / std::sqrt(static_cast<double>(inC * k * k)));
        c.b = Mat::Zero(1, outC);
        if (spec_.batch_norm) {
          c.gamma = Mat::Ones(1, outC);
          c.beta = Mat::Zero(1, outC);
          c.rmean = Mat::Zero(1, outC);
          c.rvar = Mat::Ones(1, outC);
        }
        enc_conv_.push_back(std::move(c));
      };
      add_conv(1, 28, 28, 8, 3, 2, 1);   // -> 8 x 14 x 14
      add_conv(8, 14, 14, 16, 3, 2, 1);  // -> 16 x 7 x 7
      add_conv(16, 7, 7, 32, 3, 2, 0);   // -> 32 x 3 x 3
      hidden_dim_ = 32 * 3 * 3;
      enc_mean_ = make_linear(hidden_dim_, D, rng);
      enc_logvar_ = make_linear(hidden_dim_, D, rng);
      dec_in_ = make_linear(D, hidden_dim_, rng);
      auto add_convt = [&](int inC, int h, int w, int outC, int k, int s, int p, int op) {
        ConvTLayer c;
        c.geom = ad::ConvTGeom{inC, h, w, outC, k, s, p, op};
        c.im = ad::make_conv_index_map(outC, c.geom.out_h(), c.geom.out_w(), k, s, p);
        c.W = rng.normal_matrix(inC, outC * k * k) * (1.0 / std::sqrt(static_cast<double>(inC * k * k)));
        c.b = Mat::Zero(1, outC);
        dec_conv_.push_back(std::move(c));
      };
      add_convt(32, 3, 3, 16, 3, 2, 0, 0);   // -> 16 x 7 x 7
      add_convt(16, 7, 7, 8, 3, 2, 1, 1);    // -> 8 x 14 x 14
      add_convt(8, 14, 14, 1, 3, 2, 1, 1);   // -> 1 x 28 x 28
      break;
    }
  }
}

void Model::index_params() {
  param_names_.clear();
  buffer_names_.clear();
  int counter = 0;
  auto reg = [&](Mat&, const std::string& name, int& slot) {
    slot = counter++;
    param_names_.push_back(name);
  };
  for (std::size_t i = 0; i < enc_conv_.size(); ++i) {
    auto& c = enc_conv_[i];
    std::string base = "enc_conv" + std::to_string(i);
    reg(c.W, base + ".W", c.wi);
    reg(c.b, base + ".b", c.bi);
    if (spec_.batch_norm) {
      reg(c.gamma, base + ".gamma", c.gi);
      reg(c.beta, base + ".beta", c.bei);
      buffer_names_.push_back(base + ".running_mean");
      buffer_names_.push_back(base + ".running_var");
    }
  }
  for (std::size_t i = 0; i < enc_lin_.size(); ++i) {
    auto& l = enc_lin_[i];
    std::string base = "enc_lin" + std::to_string(i);
    reg(l.W, base + ".W", l.wi);
    reg(l.b, base + ".b", l.bi);
  }
  reg(enc_mean_.W, "enc_mean.W", enc_mean_.wi);
  reg(enc_mean_.b, "enc_mean.b", enc_mean_.bi);
  reg(enc_logvar_.W, "enc_logvar.W", enc_logvar_.wi);
  reg(enc_logvar_.b, "enc_logvar.b", enc_logvar_.bi);
  if (spec_.arch == Arch::conv_grayscale) {
    reg(dec_in_.W, "dec_in.W", dec_in_.wi);
    reg(dec_in_.b, "dec_in.b", dec_in_.bi);
    for (std::size_t i = 0; i < dec_conv_.size(); ++i) {
      auto& c = dec_conv_[i];
      std::string base = "dec_conv" + std::to_string(i);
      reg(c.W, base + ".W", c.wi);
      reg(c.b, base + ".b", c.bi);
    }
  } else {
    for (std::size_t i = 0; i < dec_lin_.size(); ++i) {
      auto& l = dec_lin_[i];
      std::string base = "dec_lin" + std::to_string(i);
      reg(l.W, base + ".W", l.wi);
      reg(l.b, base + ".b", l.bi);
    }
  }
}

std::vector<Mat*> Model::params() {
  std::vector<Mat*> out;
  for (auto& c : enc_conv_) {
    out.push_back(&c.W);
    out.push_back(&c.b);
    if (spec_.batch_norm) {
      out.push_back(&c.gamma);
      out.push_back(&c.beta);
    }
  }
  for (auto& l : enc_lin_) {
    out.push_back(&l.W);
    out.push_back(&l.b);
  }
  out.push_back(&enc_mean_.W);
  out.push_back(&enc_mean_.b);
  out.push_back(&enc_logvar_.W);
  out.push_back(&enc_logvar_.b);
  if (spec_.arch == Arch::conv_grayscale) {
    out.push_back(&dec_in_.W);
    out.push_back(&dec_in_.b);
    for (auto& c : dec_conv_) {
      out.push_back(&c.W);
      out.push_back(&c.b);
    }
  } else {
    for (auto& l : dec_lin_) {
      out.push_back(&l.W);
      out.push_back(&l.b);
    }
  }
  return out;
}

std::vector<Mat*> Model::buffers() {
  std::vector<Mat*> out;
  if (spec_.batch_norm)
    for (auto& c : enc_conv_) {
      out.push_back(&c.rmean);
      out.push_back(&c.rvar);
    }
  return out;
}

Model::Binding Model::bind(ad::Tape& tape) {
  Binding b;
  for (Mat* m : params()) b.push_back(tape.leaf(*m));
  return b;
}

Model::EncodeVars Model::encode_on_tape(ad::Tape& tape, const Binding& p, ad::Var x,
                                        bool training) {
  using namespace ad;
  if (x.cols() != input_dim()) throw std::invalid_argument("encode: input shape mismatch");
  Var h = x;
  for (auto& c : enc_conv_) {
    h = conv2d(h, p[c.wi], p[c.bi], c.geom, c.im);
    if (spec_.batch_norm) {
      h = batch_norm(h, p[c.gi], p[c.bei], c.geom.out_channels, c.geom.out_h() * c.geom.out_w(),
                     spec_.bn_eps, training, &c.rmean, &c.rvar, spec_.bn_momentum);
    }
    h = relu(h);
  }
  for (std::size_t i = 0; i < enc_lin_.size(); ++i) {
    auto& l = enc_lin_[i];
    h = add_rowvec(matmul(h, p[l.wi]), p[l.bi]);
    if (spec_.arch == Arch::mlp) h = relu(h);  // linear_feature stays linear
  }
  Var mean = add_rowvec(matmul(h, p[enc_mean_.wi]), p[enc_mean_.bi]);
  Var lv = add_rowvec(matmul(h, p[enc_logvar_.wi]), p[enc_logvar_.bi]);
  lv = clamp(lv, -kPosteriorLogVarClamp, kPosteriorLogVarClamp);
  return {mean, lv, h};
}

ad::Var Model::decode_on_tape(ad::Tape& tape, const Binding& p, ad::Var z) {
  using namespace ad;
  if (z.cols() != spec_.latent_dim) throw std::invalid_argument("decode: latent shape mismatch");
  Var h = z;
  if (spec_.arch == Arch::conv_grayscale) {
    h = relu(add_rowvec(matmul(h, p[dec_in_.wi]), p[dec_in_.bi]));
    for (std::size_t i = 0; i < dec_conv_.size(); ++i) {
      auto& c = dec_conv_[i];
      h = conv2d_transpose(h, p[c.wi], p[c.bi], c.geom, c.im);
      if (i + 1 < dec_conv_.size()) h = relu(h);
    }
  } else {
    for (std::size_t i = 0; i < dec_lin_.size(); ++i) {
      auto& l = dec_lin_[i];
      h = add_rowvec(matmul(h, p[l.wi]), p[l.bi]);
      const bool last = (i + 1 == dec_lin_.size());
      if (!last && spec_.arch == Arch::mlp) h = relu(h);
    }
  }
  if (spec_.likelihood == Likelihood::bernoulli) h = sigmoid(h);
  (void)tape;
  return h;
}

Model::PosteriorBatch Model::encode_batch(const Mat& x) {
  ad::Tape tape(false);
  auto p = bind(tape);
  auto enc = encode_on_tape(tape, p, tape.constant(x), /*training=*/false);
  return {enc.mean.value(), enc.log_var.value()};
}

LatentPosterior Model::encode(const Vec& x) {
  auto pb = encode_batch(x.transpose());
  return {pb.mean.row(0).transpose(), pb.log_var.row(0).transpose()};
}

Mat Model::decode_batch(const Mat& z) {
  ad::Tape tape(false);
  auto p = bind(tape);
  return decode_on_tape(tape, p, tape.constant(z)).value();
}

void Model::init_linear_identity() {
  if (spec_.arch != Arch::linear_feature)
    throw std::logic_error("identity init is defined for linear_feature only");
  auto block_identity = [](Mat& w) {
    w.setZero();
    for (Eigen::Index i = 0; i < std::min(w.rows(), w.cols()); ++i) w(i, i) = 1.0;
  };
  block_identity(enc_lin_[0].W);
  enc_lin_[0].b.setZero();
  block_identity(enc_mean_.W);
  enc_mean_.b.setZero();
  enc_logvar_.W.setZero();
  enc_logvar_.b.setZero();
  block_identity(dec_lin_[0].W);
  dec_lin_[0].b.setZero();
  block_identity(dec_lin_[1].W);
  dec_lin_[1].b.setZero();
}

ProjectionHeads::ProjectionHeads(int hidden_dim, int num_nodes, RandomStream& rng,
                                 int proj_hidden, int proj_dim)
    : proj_dim_(proj_dim) {
  auto init = [&](int in, int out) {
    return Mat(rng.normal_matrix(in, out) * (1.0 / std::sqrt(static_cast<double>(in))));
  };
  e1_W = init(hidden_dim, proj_hidden);
  e1_b = Mat::Zero(1, proj_hidden);
  e2_W = init(proj_hidden, proj_dim);
  e2_b = Mat::Zero(1, proj_dim);
  c_W = init(num_nodes, proj_dim);
  c_b = Mat::Zero(1, proj_dim);
  param_names_ = {"embed1.W", "embed1.b", "embed2.W", "embed2.b", "cluster.W", "cluster.b"};
}

std::vector<Mat*> ProjectionHeads::params() { return {&e1_W, &e1_b, &e2_W, &e2_b, &c_W, &c_b}; }

ProjectionHeads::Binding ProjectionHeads::bind(ad::Tape& tape) {
  Binding b;
  for (Mat* m : params()) b.push_back(tape.leaf(*m));
  return b;
}

ad::Var ProjectionHeads::embed_on_tape(ad::Tape& tape, const Binding& p, ad::Var hidden) {
  using namespace ad;
  (void)tape;
  Var h = relu(add_rowvec(matmul(hidden, p[0]), p[1]));
  return add_rowvec(matmul(h, p[2]), p[3]);
}

ad::Var ProjectionHeads::cluster_on_tape(ad::Tape& tape, const Binding& p, ad::Var assignment) {
  using namespace ad;
  (void)tape;
  return add_rowvec(matmul(assignment, p[4]), p[5]);
}

namespace ops {

ad::Var reparameterize(ad::Var mean, ad::Var log_var, ad::Var eps) {
  using namespace ad;
  return add(mean, mul(exp(muls(log_var, 0.5)), eps));
}

ad::Var recon_log_likelihood(ad::Var x, ad::Var x_hat, Likelihood lik) {
  using namespace ad;
  if (lik == Likelihood::gaussian_unit_variance)
    return muls(row_sum(square(sub(x, x_hat))), -0.5);
  Var p = clamp(x_hat, 1e-7, 1.0 - 1e-7);
  Var one_minus_x = adds(neg(x), 1.0);
  return row_sum(add(mul(x, log(p)), mul(one_minus_x, log(adds(neg(p), 1.0)))));
}

}  // namespace ops

}  // namespace taxonet
