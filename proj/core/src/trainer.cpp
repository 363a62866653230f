#include "taxonet/trainer.hpp"

#include <cmath>
#include <sstream>

#include "json.hpp"

namespace taxonet {

using nlohmann::json;

Vec augment_image(const Vec& image, int height, int width, const AugmentSpec& spec,
                  RandomStream& rng) {
  if (image.size() != static_cast<Eigen::Index>(height) * width)
    throw std::invalid_argument("augment_image: shape mismatch");
  Vec img = image;
  if (spec.crop) {
    const double scale = rng.uniform(spec.crop_scale_min, spec.crop_scale_max);
    const int ch = std::max(1, static_cast<int>(std::lround(height * std::sqrt(scale))));
    const int cw = std::max(1, static_cast<int>(std::lround(width * std::sqrt(scale))));
    const int top = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(height - ch + 1)));
    const int left = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(width - cw + 1)));
    // bilinear resize of the crop back to full resolution
    Vec out(image.size());
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double sy = top + (ch > 1 ? y * (ch - 1.0) / (height - 1.0) : 0.0);
        const double sx = left + (cw > 1 ? x * (cw - 1.0) / (width - 1.0) : 0.0);
        const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
        const int y1 = std::min(y0 + 1, height - 1), x1 = std::min(x0 + 1, width - 1);
        const double fy = sy - y0, fx = sx - x0;
        out[y * width + x] = (1 - fy) * ((1 - fx) * img[y0 * width + x0] + fx * img[y0 * width + x1]) +
                             fy * ((1 - fx) * img[y1 * width + x0] + fx * img[y1 * width + x1]);
      }
    img = std::move(out);
  }
  if (spec.hflip && rng.uniform() < spec.hflip_prob) {
    Vec out(img.size());
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out[y * width + x] = img[y * width + (width - 1 - x)];
    img = std::move(out);
  }
  if (spec.noise) {
    for (Eigen::Index i = 0; i < img.size(); ++i) img[i] += spec.noise_sigma * rng.normal();
  }
  return img.cwiseMax(0.0).cwiseMin(1.0);
}

void TrainConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("latent_dim must be >= 1");
  if (learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0 || max_steps < 0) throw std::invalid_argument("epochs/max_steps must be >= 0");
  if (weights.tau_embed <= 0.0 || weights.tau_cluster <= 0.0)
    throw std::invalid_argument("temperatures must be positive");
  for (double w : {weights.recon_weight, weights.kl_weight, weights.contrastive_weight,
                   weights.lambda_ent, weights.lambda_dkl, weights.margin})
    if (w < 0.0) throw std::invalid_argument("loss weights must be nonnegative");
}

void AdamOptimizer::step(const std::vector<Mat*>& params, const std::vector<Mat>& grads) {
  if (m_.empty()) {
    for (Mat* p : params) {
      m_.emplace_back(Mat::Zero(p->rows(), p->cols()));
      v_.emplace_back(Mat::Zero(p->rows(), p->cols()));
    }
  }
  if (params.size() != grads.size() || params.size() != m_.size())
    throw std::invalid_argument("adam: parameter/gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    params[i]->array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

namespace {
// substream tags
constexpr std::uint64_t kTagInit = 1, kTagShuffle = 2, kTagStep = 3;
}  // namespace

Trainer::Trainer(TrainConfig config, const Dataset& dataset)
    : config_(std::move(config)),
      data_(dataset),
      tree_([&] {
        RandomStream rng = RandomStream::substream(config_.seed, kTagInit, 0);
        return TaxonomyTree::random_init(config_.depth, config_.latent_dim, config_.variance_mode,
                                         rng);
      }()),
      model_([&] {
        ModelSpec spec;
        spec.input_shape = dataset.input_shape;
        spec.latent_dim = config_.latent_dim;
        spec.arch = config_.arch;
        spec.hidden_widths = config_.hidden_widths;
        spec.likelihood = config_.likelihood;
        spec.batch_norm = config_.batch_norm;
        RandomStream rng = RandomStream::substream(config_.seed, kTagInit, 1);
        return Model(spec, rng);
      }()),
      adam_(config_.learning_rate) {
  config_.validate();
  if (data_.size() == 0) throw std::invalid_argument("dataset is empty");
  if (config_.objective.contrastive) {
    RandomStream rng = RandomStream::substream(config_.seed, kTagInit, 2);
    heads_.emplace(model_.hidden_dim(), tree_.num_nodes(), rng, config_.proj_hidden);
  }
  steps_per_epoch_ = (data_.size() + config_.batch_size - 1) / config_.batch_size;
}

std::vector<Mat*> Trainer::all_params() {
  std::vector<Mat*> out = model_.params();
  for (Mat* p : tree_.params()) out.push_back(p);
  if (heads_)
    for (Mat* p : heads_->params()) out.push_back(p);
  return out;
}

std::vector<int> Trainer::epoch_permutation(int epoch) const {
  std::vector<int> perm(static_cast<std::size_t>(data_.size()));
  std::iota(perm.begin(), perm.end(), 0);
  RandomStream rng = RandomStream::substream(config_.seed, kTagShuffle, static_cast<std::uint64_t>(epoch));
  rng.shuffle(perm);
  return perm;
}

bool Trainer::done() const {
  if (config_.max_steps > 0 && global_step_ >= config_.max_steps) return true;
  return epoch_ >= config_.epochs && config_.max_steps == 0;
}

LossBreakdown Trainer::step_once() {
  auto perm = epoch_permutation(epoch_);
  const Eigen::Index begin = static_cast<Eigen::Index>(step_in_epoch_) * config_.batch_size;
  const Eigen::Index count = std::min<Eigen::Index>(config_.batch_size, data_.size() - begin);
  Mat batch(count, data_.inputs.cols());
  for (Eigen::Index i = 0; i < count; ++i)
    batch.row(i) = data_.inputs.row(perm[static_cast<std::size_t>(begin + i)]);

  RandomStream step_rng = RandomStream::substream(
      config_.seed, kTagStep, static_cast<std::uint64_t>(epoch_),
      static_cast<std::uint64_t>(step_in_epoch_));

  Mat view1, view2;
  const Mat* x2 = nullptr;
  if (config_.objective.contrastive) {
    view1 = make_views(batch, 0, step_rng);
    view2 = make_views(batch, 1, step_rng);
    x2 = &view2;
  } else {
    view1 = std::move(batch);
  }

  ad::Tape tape(true);
  LossGraph g = build_loss(tape, model_, tree_, heads_ ? &*heads_ : nullptr, view1, x2,
                           config_.weights, config_.objective, step_rng, /*training=*/true);
  if (!g.values.finite()) {
    throw TrainDivergenceError("non-finite loss at step " + std::to_string(global_step_) +
                               " (epoch " + std::to_string(epoch_) + ", batch " +
                               std::to_string(step_in_epoch_) + "): " +
                               g.values.to_json_line(global_step_));
  }
  tape.backward(g.total);

  std::vector<Mat> grads;
  for (const ad::Var& v : g.model_params) grads.push_back(v.grad());
  grads.push_back(g.tree_params.leaf_means.grad());
  grads.push_back(g.tree_params.leaf_log_vars.grad());
  grads.push_back(g.tree_params.branch_logits.grad());
  if (heads_)
    for (const ad::Var& v : g.head_params) grads.push_back(v.grad());

  if (config_.learning_rate > 0.0) adam_.step(all_params(), grads);

  ++global_step_;
  ++step_in_epoch_;
  if (step_in_epoch_ >= static_cast<int>(steps_per_epoch_)) {
    step_in_epoch_ = 0;
    ++epoch_;
  }
  if (config_.log_every_steps > 0 && (global_step_ - 1) % config_.log_every_steps == 0)
    loss_log_.push_back(g.values.to_json_line(global_step_ - 1));
  return g.values;
}

Mat Trainer::make_views(const Mat& batch, int view_index, RandomStream& rng) const {
  (void)view_index;
  Mat out(batch.rows(), batch.cols());
  if (data_.input_shape.size() == 3) {
    const int h = data_.input_shape[1], w = data_.input_shape[2];
    for (Eigen::Index i = 0; i < batch.rows(); ++i)
      out.row(i) = augment_image(batch.row(i).transpose(), h, w, config_.augment, rng).transpose();
  } else {
    // feature inputs: additive noise only, no [0,1] clamp
    for (Eigen::Index i = 0; i < batch.rows(); ++i)
      for (Eigen::Index j = 0; j < batch.cols(); ++j)
        out(i, j) = batch(i, j) + (config_.augment.noise ? config_.augment.noise_sigma * rng.normal() : 0.0);
  }
  return out;
}

void Trainer::run(const std::function<void(long, const LossBreakdown&)>& on_log) {
  while (!done()) {
    LossBreakdown b = step_once();
    for (Mat* p : all_params())
      if (!all_finite(*p))
        throw TrainDivergenceError("non-finite parameter after step " +
                                   std::to_string(global_step_ - 1));
    if (on_log) on_log(global_step_ - 1, b);
  }
}

namespace {
json mat_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}
Mat mat_from(const json& j) {
  Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = j[i][c].get<double>();
  return m;
}
}  // namespace

std::string Trainer::save_state() {
  json j;
  j["format_version"] = 1;
  j["kind"] = "train_state";
  j["epoch"] = epoch_;
  j["step_in_epoch"] = step_in_epoch_;
  j["global_step"] = global_step_;
  j["adam_t"] = adam_.t();
  json params = json::array();
  for (Mat* p : all_params()) params.push_back(mat_json(*p));
  j["params"] = std::move(params);
  json m1 = json::array(), m2 = json::array();
  for (const Mat& m : adam_.moments1()) m1.push_back(mat_json(m));
  for (const Mat& m : adam_.moments2()) m2.push_back(mat_json(m));
  j["adam_m"] = std::move(m1);
  j["adam_v"] = std::move(m2);
  return j.dump();
}

void Trainer::load_state(const std::string& text) {
  json j = json::parse(text);
  if (j.value("kind", "") != "train_state") throw DataFormatError("not a train_state document");
  epoch_ = j.at("epoch").get<int>();
  step_in_epoch_ = j.at("step_in_epoch").get<int>();
  global_step_ = j.at("global_step").get<long>();
  auto ps = all_params();
  const json& jp = j.at("params");
  if (jp.size() != ps.size()) throw DataFormatError("train_state: parameter count mismatch");
  for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] = mat_from(jp[i]);
  adam_.set_t(j.at("adam_t").get<long>());
  auto& m1 = adam_.moments1();
  auto& m2 = adam_.moments2();
  m1.clear();
  m2.clear();
  for (const auto& m : j.at("adam_m")) m1.push_back(mat_from(m));
  for (const auto& m : j.at("adam_v")) m2.push_back(mat_from(m));
}

}  // namespace taxonet
