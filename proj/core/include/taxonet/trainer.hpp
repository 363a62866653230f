#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "taxonet/data.hpp"
#include "taxonet/model.hpp"
#include "taxonet/objective.hpp"
#include "taxonet/taxonomy.hpp"

namespace taxonet {

struct AugmentSpec {
  bool crop = true;
  double crop_scale_min = 0.6;
  double crop_scale_max = 1.0;
  bool hflip = true;
  double hflip_prob = 0.5;
  bool noise = true;
  double noise_sigma = 0.05;
};

// Random crop (area scale, bilinear resize back), horizontal flip, additive
// Gaussian noise; result clamped to [0,1]. Each transform independently
// switchable.
Vec augment_image(const Vec& image, int height, int width, const AugmentSpec& spec,
                  RandomStream& rng);

struct TrainConfig {
  int depth = 10;
  int latent_dim = 8;
  Arch arch = Arch::mlp;
  Likelihood likelihood = Likelihood::bernoulli;
  VarianceMode variance_mode = VarianceMode::isotropic;
  std::vector<int> hidden_widths;  // empty -> architecture default
  bool batch_norm = false;
  int proj_hidden = 512;

  double learning_rate = 1e-3;
  int batch_size = 256;
  int epochs = 400;
  long max_steps = 0;  // 0 -> run all epochs
  std::uint64_t seed = 0;
  int checkpoint_every_epochs = 0;  // 0 -> final checkpoint only
  int log_every_steps = 1;

  LossWeights weights;
  ObjectiveOptions objective;
  AugmentSpec augment;

  void validate() const;
};

// Adam with bias correction (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
class AdamOptimizer {
 public:
  AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Mat*>& params, const std::vector<Mat>& grads);

  long t() const { return t_; }
  std::vector<Mat>& moments1() { return m_; }
  std::vector<Mat>& moments2() { return v_; }
  void set_t(long t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

// Optimization loop. All randomness (shuffles, reparameterization,
// augmentation) is derived functionally from (seed, epoch, step), so runs are
// reproducible at thread count 1 and state restores need only plain counters.
class Trainer {
 public:
  Trainer(TrainConfig config, const Dataset& dataset);

  // Advances one step; returns the logged breakdown.
  LossBreakdown step_once();
  bool done() const;

  // Runs all epochs/steps; invokes on_log after each logged step.
  void run(const std::function<void(long, const LossBreakdown&)>& on_log = nullptr);

  long global_step() const { return global_step_; }
  int epoch() const { return epoch_; }

  Model& model() { return model_; }
  TaxonomyTree& tree() { return tree_; }
  ProjectionHeads* heads() { return heads_ ? &*heads_ : nullptr; }
  const std::vector<std::string>& loss_log() const { return loss_log_; }
  const TrainConfig& config() const { return config_; }

  // Full optimization state (parameters, Adam moments, counters) as a JSON
  // document; restoring it and stepping reproduces the uninterrupted run.
  std::string save_state();
  void load_state(const std::string& json_text);

 private:
  std::vector<Mat*> all_params();
  Mat make_views(const Mat& batch, int view_index, RandomStream& rng) const;
  std::vector<int> epoch_permutation(int epoch) const;

  TrainConfig config_;
  const Dataset& data_;
  TaxonomyTree tree_;
  Model model_;
  std::optional<ProjectionHeads> heads_;
  AdamOptimizer adam_;
  int epoch_ = 0;
  int step_in_epoch_ = 0;
  long global_step_ = 0;
  long steps_per_epoch_ = 0;
  std::vector<std::string> loss_log_;
};

}  // namespace taxonet
