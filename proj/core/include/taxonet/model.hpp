#pragma once

#include <string>
#include <vector>

#include "taxonet/autodiff.hpp"
#include "taxonet/random.hpp"
#include "taxonet/util.hpp"

namespace taxonet {

enum class Arch { mlp, conv_grayscale, linear_feature };
enum class Likelihood { bernoulli, gaussian_unit_variance };

std::string to_string(Arch a);
std::string to_string(Likelihood l);
Arch arch_from_string(const std::string& s);
Likelihood likelihood_from_string(const std::string& s);

struct ModelSpec {
  std::vector<int> input_shape;   // {C,H,W} for images, {D_in} for features
  int latent_dim = 8;
  Arch arch = Arch::mlp;
  std::vector<int> hidden_widths; // empty -> architecture default
  Likelihood likelihood = Likelihood::bernoulli;
  bool batch_norm = false;        // conv encoder only
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  int input_dim() const;
  std::vector<int> widths_or_default() const;
};

struct LatentPosterior {
  Vec mean;
  Vec log_var;
};

constexpr double kPosteriorLogVarClamp = 10.0;

// z = mean + exp(log_var / 2) * eps, eps ~ N(0, I)
Vec reparameterize(const LatentPosterior& post, RandomStream& rng);
Mat reparameterize_batch(const Mat& mean, const Mat& log_var, RandomStream& rng);

// Per-sample reconstruction log-likelihood. Bernoulli clamps probabilities to
// [1e-7, 1-1e-7] and requires x in [0,1]; gaussian_unit_variance drops the
// additive constant.
double recon_log_likelihood(const Vec& x, const Vec& x_hat, Likelihood lik);

// Encoder/decoder pair. Forward passes are pure functions of (input, params);
// tape variants share parameter leaves through bind().
class Model {
 public:
  Model(ModelSpec spec, RandomStream& rng);

  const ModelSpec& spec() const { return spec_; }
  int input_dim() const { return spec_.input_dim(); }
  int hidden_dim() const { return hidden_dim_; }

  std::vector<Mat*> params();
  const std::vector<std::string>& param_names() const { return param_names_; }

  using Binding = std::vector<ad::Var>;
  Binding bind(ad::Tape& tape);

  struct EncodeVars {
    ad::Var mean;
    ad::Var log_var;
    ad::Var hidden;  // projection-head input
  };
  EncodeVars encode_on_tape(ad::Tape& tape, const Binding& p, ad::Var x, bool training = true);
  ad::Var decode_on_tape(ad::Tape& tape, const Binding& p, ad::Var z);

  struct PosteriorBatch {
    Mat mean;
    Mat log_var;
  };
  PosteriorBatch encode_batch(const Mat& x);
  LatentPosterior encode(const Vec& x);
  Mat decode_batch(const Mat& z);

  // linear_feature only: weights become block-identity embeddings, biases 0;
  // with input_dim == latent_dim the encoder mean is the input itself.
  void init_linear_identity();

  // BatchNorm running statistics (empty when batch_norm is off).
  std::vector<Mat*> buffers();
  const std::vector<std::string>& buffer_names() const { return buffer_names_; }

 private:
  struct LinearLayer {
    Mat W;  // in x out
    Mat b;  // 1 x out
    int wi = -1, bi = -1;
  };
  struct ConvLayer {
    Mat W;  // outC x inC*k*k
    Mat b;  // 1 x outC
    ad::ConvGeom geom;
    std::shared_ptr<const ad::ConvIndexMap> im;
    Mat gamma, beta, rmean, rvar;  // batch norm (optional)
    int wi = -1, bi = -1, gi = -1, bei = -1;
  };
  struct ConvTLayer {
    Mat W;  // inC x outC*k*k
    Mat b;  // 1 x outC
    ad::ConvTGeom geom;
    std::shared_ptr<const ad::ConvIndexMap> im;
    int wi = -1, bi = -1;
  };

  void build(RandomStream& rng);
  void index_params();
  LinearLayer make_linear(int in, int out, RandomStream& rng);

  ModelSpec spec_;
  int hidden_dim_ = 0;

  std::vector<ConvLayer> enc_conv_;
  std::vector<LinearLayer> enc_lin_;
  LinearLayer enc_mean_, enc_logvar_;
  LinearLayer dec_in_;                // conv arch: latent -> flattened maps
  std::vector<ConvTLayer> dec_conv_;
  std::vector<LinearLayer> dec_lin_;  // mlp / linear_feature decoder stack

  std::vector<std::string> param_names_;
  std::vector<std::string> buffer_names_;
};

// Contrastive projection heads: a two-layer rectified MLP on encoder features
// and a single linear map on the cluster assignment vector; both emit
// 64-dimensional projections.
class ProjectionHeads {
 public:
  ProjectionHeads(int hidden_dim, int num_nodes, RandomStream& rng, int proj_hidden = 512,
                  int proj_dim = 64);

  int proj_dim() const { return proj_dim_; }
  std::vector<Mat*> params();
  const std::vector<std::string>& param_names() const { return param_names_; }

  using Binding = std::vector<ad::Var>;
  Binding bind(ad::Tape& tape);

  ad::Var embed_on_tape(ad::Tape& tape, const Binding& p, ad::Var hidden);
  ad::Var cluster_on_tape(ad::Tape& tape, const Binding& p, ad::Var assignment);

 private:
  int proj_dim_;
  Mat e1_W, e1_b, e2_W, e2_b;  // hidden -> proj_hidden -> proj_dim
  Mat c_W, c_b;                // num_nodes -> proj_dim
  std::vector<std::string> param_names_;
};

namespace ops {

ad::Var reparameterize(ad::Var mean, ad::Var log_var, ad::Var eps);
// per-sample reconstruction log-likelihood -> B x 1 (x is a constant)
ad::Var recon_log_likelihood(ad::Var x, ad::Var x_hat, Likelihood lik);

}  // namespace ops

}  // namespace taxonet
