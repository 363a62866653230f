#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "taxonet/data.hpp"
#include "taxonet/trainer.hpp"

namespace taxonet {

// Minimal TOML-style config: [section] headers, key = value lines, '#'
// comments. Values: integers, floats, booleans, quoted strings, and flat
// integer arrays like [256, 128]. Keys are exposed as "section.key".
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text);
  static ConfigFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& raw() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

struct DataConfig {
  std::string kind;  // "idx" | "features" | "synthetic"
  std::string images, labels, features;
  bool standardize = false;
  SyntheticTreeSpec synthetic;
};

TrainConfig train_config_from(const ConfigFile& cfg);
DataConfig data_config_from(const ConfigFile& cfg);
Dataset load_dataset(const DataConfig& dc);

}  // namespace taxonet
