#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace taxonet {

// Subcommand bodies behind the CLI. They throw on config/data errors; the
// CLI entry point maps exceptions to nonzero exit codes. All file outputs go
// through write-to-temp-then-rename.

struct TrainOptions {
  std::string config_path;
  std::map<std::string, std::string> overrides;  // config keys, e.g. "train.seed"
  std::string out_dir;
};
void cmd_train(const TrainOptions& opt);

struct DataOptions {
  std::string data_path;    // feature file, or IDX images when labels_path is IDX
  std::string labels_path;  // IDX labels or plain-text labels file
  bool standardize = false;
};

struct AssignOptions {
  std::string checkpoint_dir;
  DataOptions data;
  std::string out_path;  // .bin or .csv
};
void cmd_assign(const AssignOptions& opt);

struct EvalOptions {
  std::string train_table;
  std::string test_table;
  std::string out_path;
  long pair_budget = 100000;
  std::uint64_t seed = 0;
  std::string train_labels;  // optional label-column overrides
  std::string test_labels;
};
void cmd_eval(const EvalOptions& opt);

struct ExportTreeOptions {
  std::string checkpoint;  // checkpoint dir or tree.json path
  std::string format = "dot";       // dot | json
  std::string ordering = "heap";    // heap | leaves-first
  std::string out_path;
};
void cmd_export_tree(const ExportTreeOptions& opt);

struct SampleOptions {
  std::string checkpoint_dir;
  int count = 1;
  int node = -1;  // -1: draw from the uniform prior
  std::uint64_t seed = 0;
  std::string out_dir;
};
void cmd_sample(const SampleOptions& opt);

struct PrototypesOptions {
  std::string checkpoint_dir;
  DataOptions data;
  std::vector<int> nodes;  // empty: all nodes
  int k = 9;
  std::string out_dir;
};
void cmd_prototypes(const PrototypesOptions& opt);

struct SynthOptions {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  std::string out_dir;
};
void cmd_synth(const SynthOptions& opt);

}  // namespace taxonet
