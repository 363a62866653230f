#include "taxonet/config.hpp"

#include <algorithm>
#include <sstream>

namespace taxonet {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw DataFormatError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataFormatError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    cfg.values_[section.empty() ? key : section + "." + key] = value;
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

long ConfigFile::get_int(const std::string& key, long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stol(it->second);
  } catch (...) {
    throw DataFormatError("config: " + key + " is not an integer: " + it->second);
  }
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (...) {
    throw DataFormatError("config: " + key + " is not a number: " + it->second);
  }
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw DataFormatError("config: " + key + " is not a boolean: " + it->second);
}

std::vector<int> ConfigFile::get_int_list(const std::string& key, std::vector<int> fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::string v = it->second;
  if (!v.empty() && v.front() == '[') v = v.substr(1);
  if (!v.empty() && v.back() == ']') v.pop_back();
  std::vector<int> out;
  std::stringstream ss(v);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    if (!cell.empty()) out.push_back(std::stoi(cell));
  }
  return out;
}

TrainConfig train_config_from(const ConfigFile& cfg) {
  TrainConfig c;
  c.depth = static_cast<int>(cfg.get_int("model.depth", c.depth));
  c.latent_dim = static_cast<int>(cfg.get_int("model.latent_dim", c.latent_dim));
  c.arch = arch_from_string(cfg.get_string("model.architecture", to_string(c.arch)));
  c.likelihood = likelihood_from_string(cfg.get_string("model.likelihood", to_string(c.likelihood)));
  const std::string vm = cfg.get_string("model.variance_mode", "isotropic");
  if (vm != "isotropic" && vm != "diagonal") throw DataFormatError("unknown variance_mode: " + vm);
  c.variance_mode = vm == "isotropic" ? VarianceMode::isotropic : VarianceMode::diagonal;
  c.hidden_widths = cfg.get_int_list("model.hidden_widths", {});
  c.batch_norm = cfg.get_bool("model.batch_norm", false);
  c.proj_hidden = static_cast<int>(cfg.get_int("model.proj_hidden", c.proj_hidden));

  c.learning_rate = cfg.get_double("train.learning_rate", c.learning_rate);
  c.batch_size = static_cast<int>(cfg.get_int("train.batch_size", c.batch_size));
  c.epochs = static_cast<int>(cfg.get_int("train.epochs", c.epochs));
  c.max_steps = cfg.get_int("train.max_steps", c.max_steps);
  c.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
  c.checkpoint_every_epochs =
      static_cast<int>(cfg.get_int("train.checkpoint_every", c.checkpoint_every_epochs));
  c.log_every_steps = static_cast<int>(cfg.get_int("train.log_every", c.log_every_steps));

  c.weights.recon_weight = cfg.get_double("loss.recon_weight", c.weights.recon_weight);
  c.weights.kl_weight = cfg.get_double("loss.kl_weight", c.weights.kl_weight);
  c.weights.contrastive_weight =
      cfg.get_double("loss.contrastive_weight", c.weights.contrastive_weight);
  c.weights.lambda_ent = cfg.get_double("loss.lambda_ent", c.weights.lambda_ent);
  c.weights.lambda_dkl = cfg.get_double("loss.lambda_dkl", c.weights.lambda_dkl);
  c.weights.margin = cfg.get_double("loss.margin", c.weights.margin);
  c.weights.tau_embed = cfg.get_double("loss.tau_embed", c.weights.tau_embed);
  c.weights.tau_cluster = cfg.get_double("loss.tau_cluster", c.weights.tau_cluster);

  c.objective.contrastive = cfg.get_bool("loss.contrastive", c.objective.contrastive);
  c.objective.stop_grad_assignment =
      cfg.get_bool("loss.stop_grad_assignment", c.objective.stop_grad_assignment);
  c.objective.r_ent_enabled = cfg.get_bool("loss.r_ent", c.objective.r_ent_enabled);
  c.objective.r_dkl_enabled = cfg.get_bool("loss.r_dkl", c.objective.r_dkl_enabled);
  c.objective.ntxent_embed_enabled =
      cfg.get_bool("loss.ntxent_embed", c.objective.ntxent_embed_enabled);
  c.objective.ntxent_cluster_enabled =
      cfg.get_bool("loss.ntxent_cluster", c.objective.ntxent_cluster_enabled);
  const std::string rd = cfg.get_string("loss.rdkl_depth", "children");
  if (rd != "children" && rd != "parent") throw DataFormatError("unknown rdkl_depth: " + rd);
  c.objective.rdkl_depth =
      rd == "children" ? RdklDepthConvention::children : RdklDepthConvention::parent;
  c.objective.rdkl_leaf_only = cfg.get_bool("loss.rdkl_leaf_only", c.objective.rdkl_leaf_only);

  c.augment.crop = cfg.get_bool("augment.crop", c.augment.crop);
  c.augment.crop_scale_min = cfg.get_double("augment.crop_scale_min", c.augment.crop_scale_min);
  c.augment.crop_scale_max = cfg.get_double("augment.crop_scale_max", c.augment.crop_scale_max);
  c.augment.hflip = cfg.get_bool("augment.hflip", c.augment.hflip);
  c.augment.hflip_prob = cfg.get_double("augment.hflip_prob", c.augment.hflip_prob);
  c.augment.noise = cfg.get_bool("augment.noise", c.augment.noise);
  c.augment.noise_sigma = cfg.get_double("augment.noise_sigma", c.augment.noise_sigma);
  return c;
}

DataConfig data_config_from(const ConfigFile& cfg) {
  DataConfig dc;
  dc.kind = cfg.get_string("data.kind", "");
  dc.images = cfg.get_string("data.images", "");
  dc.labels = cfg.get_string("data.labels", "");
  dc.features = cfg.get_string("data.features", "");
  dc.standardize = cfg.get_bool("data.standardize", false);
  dc.synthetic.depth = static_cast<int>(cfg.get_int("synthetic.depth", dc.synthetic.depth));
  dc.synthetic.latent_dim =
      static_cast<int>(cfg.get_int("synthetic.latent_dim", dc.synthetic.latent_dim));
  dc.synthetic.separation = cfg.get_double("synthetic.separation", dc.synthetic.separation);
  dc.synthetic.samples_per_leaf =
      static_cast<int>(cfg.get_int("synthetic.samples_per_leaf", dc.synthetic.samples_per_leaf));
  const std::string obs = cfg.get_string("synthetic.observation", "identity");
  if (obs != "identity" && obs != "random_linear")
    throw DataFormatError("unknown synthetic.observation: " + obs);
  dc.synthetic.observation =
      obs == "identity" ? ObservationMap::identity : ObservationMap::random_linear;
  dc.synthetic.obs_dim = static_cast<int>(cfg.get_int("synthetic.obs_dim", dc.synthetic.obs_dim));
  dc.synthetic.noise_sigma = cfg.get_double("synthetic.noise_sigma", dc.synthetic.noise_sigma);
  dc.synthetic.seed = static_cast<std::uint64_t>(cfg.get_int("synthetic.seed", 0));
  return dc;
}

Dataset load_dataset(const DataConfig& dc) {
  if (dc.kind == "idx") {
    if (dc.images.empty() || dc.labels.empty())
      throw DataFormatError("data.kind = idx requires data.images and data.labels");
    return load_idx(dc.images, dc.labels);
  }
  if (dc.kind == "features") {
    if (dc.features.empty()) throw DataFormatError("data.kind = features requires data.features");
    return load_features(dc.features, dc.standardize);
  }
  if (dc.kind == "synthetic") return generate_synthetic(dc.synthetic).data;
  throw DataFormatError("unknown data.kind: '" + dc.kind + "' (idx | features | synthetic)");
}

}  // namespace taxonet
