#include "taxonet/commands.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "taxonet/checkpoint.hpp"
#include "taxonet/config.hpp"
#include "taxonet/evaluation.hpp"
#include "taxonet/trainer.hpp"

namespace taxonet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Dataset load_data_options(const DataOptions& opt) {
  if (opt.data_path.empty()) throw DataFormatError("no input data given (--data)");
  // IDX images are detected by magic; anything else is a feature file.
  {
    std::ifstream probe(opt.data_path, std::ios::binary);
    if (!probe) throw DataFormatError("cannot open " + opt.data_path);
    unsigned char head[4] = {0, 0, 0, 0};
    probe.read(reinterpret_cast<char*>(head), 4);
    if (head[0] == 0 && head[1] == 0 && head[2] == 0x08 && head[3] == 0x03) {
      if (opt.labels_path.empty())
        throw DataFormatError("IDX images need an IDX labels file (--labels)");
      return load_idx(opt.data_path, opt.labels_path);
    }
  }
  Dataset ds = load_features(opt.data_path, opt.standardize);
  if (!opt.labels_path.empty()) ds.labels = load_labels_file(opt.labels_path);
  return ds;
}

struct LoadedCheckpoint {
  Model model;
  TaxonomyTree tree;
};

LoadedCheckpoint load_checkpoint_dir(const std::string& dir) {
  fs::path base(dir);
  auto mc = load_model_checkpoint(base / "model.json");
  auto tree = load_tree_checkpoint(base / "tree.json");
  if (mc.model.spec().latent_dim != tree.latent_dim())
    throw DataFormatError("checkpoint: model and tree latent_dim disagree");
  return {std::move(mc.model), std::move(tree)};
}

Mat posterior_mean_assignments(Model& model, const TaxonomyTree& tree, const Mat& inputs) {
  // evaluation uses the posterior mean, no z sampling
  auto post = model.encode_batch(inputs);
  return tree.cluster_posterior_batch(post.mean, tree.uniform_prior());
}

void write_pgm_grid(const fs::path& path, const Mat& images, int h, int w, int per_row) {
  const int n = static_cast<int>(images.rows());
  const int rows = (n + per_row - 1) / per_row;
  const int gw = per_row * w + (per_row - 1);
  const int gh = rows * h + (rows - 1);
  std::vector<unsigned char> canvas(static_cast<std::size_t>(gw) * gh, 255);
  for (int i = 0; i < n; ++i) {
    const int gr = i / per_row, gc = i % per_row;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double v = std::clamp(images(i, y * w + x), 0.0, 1.0);
        canvas[static_cast<std::size_t>(gr * (h + 1) + y) * gw + gc * (w + 1) + x] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
  }
  std::ostringstream out(std::ios::binary);
  out << "P5\n" << gw << " " << gh << "\n255\n";
  out.write(reinterpret_cast<const char*>(canvas.data()), static_cast<std::streamsize>(canvas.size()));
  write_file_atomic(path, out.str());
}

ConfigFile load_config_with_overrides(const std::string& path,
                                      const std::map<std::string, std::string>& overrides) {
  if (path.empty()) throw DataFormatError("missing config file (--config)");
  if (!fs::exists(path)) throw DataFormatError("config file not found: " + path);
  ConfigFile cfg = ConfigFile::load(path);
  for (const auto& [k, v] : overrides) cfg.set(k, v);
  return cfg;
}

}  // namespace

void cmd_train(const TrainOptions& opt) {
  ConfigFile cfg = load_config_with_overrides(opt.config_path, opt.overrides);
  TrainConfig tc = train_config_from(cfg);
  DataConfig dc = data_config_from(cfg);
  Dataset data = load_dataset(dc);

  fs::create_directories(opt.out_dir);
  Trainer trainer(tc, data);
  std::ostringstream log;
  long next_checkpoint_epoch = tc.checkpoint_every_epochs > 0 ? tc.checkpoint_every_epochs : -1;
  while (!trainer.done()) {
    trainer.step_once();
    if (next_checkpoint_epoch > 0 && trainer.epoch() >= next_checkpoint_epoch) {
      fs::path dir = fs::path(opt.out_dir) / ("epoch_" + std::to_string(trainer.epoch()));
      fs::create_directories(dir);
      save_model_checkpoint(dir / "model.json", trainer.model(), trainer.heads());
      save_tree_checkpoint(dir / "tree.json", trainer.tree());
      next_checkpoint_epoch += tc.checkpoint_every_epochs;
    }
  }
  for (const std::string& line : trainer.loss_log()) log << line << "\n";
  save_model_checkpoint(fs::path(opt.out_dir) / "model.json", trainer.model(), trainer.heads());
  save_tree_checkpoint(fs::path(opt.out_dir) / "tree.json", trainer.tree());
  write_file_atomic(fs::path(opt.out_dir) / "loss_log.jsonl", log.str());
  write_file_atomic(fs::path(opt.out_dir) / "train_state.json", trainer.save_state());
}

void cmd_assign(const AssignOptions& opt) {
  auto ck = load_checkpoint_dir(opt.checkpoint_dir);
  Dataset data = load_data_options(opt.data);
  if (data.inputs.cols() != ck.model.input_dim())
    throw DataFormatError("dataset dimensionality does not match the checkpointed model");
  AssignmentTable table;
  table.probs = posterior_mean_assignments(ck.model, ck.tree, data.inputs);
  table.labels = data.labels;
  save_assignment_table(opt.out_path, table);
}

void cmd_eval(const EvalOptions& opt) {
  AssignmentTable train = load_assignment_table(opt.train_table);
  AssignmentTable test = load_assignment_table(opt.test_table);
  if (!opt.train_labels.empty()) train.labels = load_labels_file(opt.train_labels);
  if (!opt.test_labels.empty()) test.labels = load_labels_file(opt.test_labels);
  MetricsReport report = evaluate(train, test, opt.pair_budget, opt.seed);
  write_file_atomic(opt.out_path, report.to_json());
}

void cmd_export_tree(const ExportTreeOptions& opt) {
  fs::path src(opt.checkpoint);
  if (fs::is_directory(src)) src /= "tree.json";
  TaxonomyTree tree = load_tree_checkpoint(src);
  auto nodes = tree.derive_all_node_params();
  const Vec alpha = tree.alphas();

  std::vector<int> order(static_cast<std::size_t>(tree.num_nodes()));
  if (opt.ordering == "heap") {
    std::iota(order.begin(), order.end(), 0);
  } else if (opt.ordering == "leaves-first") {
    order = tree.leaves_first_permutation();
  } else {
    throw DataFormatError("unknown ordering: " + opt.ordering + " (heap | leaves-first)");
  }

  if (opt.format == "dot") {
    std::ostringstream out;
    out << "digraph taxonomy {\n  node [shape=box];\n";
    out.precision(6);
    for (int pos = 0; pos < tree.num_nodes(); ++pos) {
      const int i = order[static_cast<std::size_t>(pos)];
      out << "  n" << i << " [label=\"c" << i << " d" << TaxonomyTree::node_depth(i);
      if (!tree.is_leaf(i)) out << " a=" << alpha[i];
      const double mean_lv = nodes[static_cast<std::size_t>(i)].log_var.mean();
      out << "\\n|mu|=" << nodes[static_cast<std::size_t>(i)].mean.norm() << " lv=" << mean_lv
          << "\"];\n";
    }
    for (int i = 0; i < tree.num_internal(); ++i) {
      out << "  n" << i << " -> n" << TaxonomyTree::left_child(i) << ";\n";
      out << "  n" << i << " -> n" << TaxonomyTree::right_child(i) << ";\n";
    }
    out << "}\n";
    write_file_atomic(opt.out_path, out.str());
  } else if (opt.format == "json") {
    json j;
    j["format_version"] = 1;
    j["kind"] = "tree_export";
    j["depth"] = tree.depth();
    j["latent_dim"] = tree.latent_dim();
    j["ordering"] = opt.ordering;
    json arr = json::array();
    for (int pos = 0; pos < tree.num_nodes(); ++pos) {
      const int i = order[static_cast<std::size_t>(pos)];
      json n;
      n["heap_index"] = i;
      n["depth"] = TaxonomyTree::node_depth(i);
      n["is_leaf"] = tree.is_leaf(i);
      if (!tree.is_leaf(i)) n["alpha"] = alpha[i];
      n["mean"] = std::vector<double>(nodes[static_cast<std::size_t>(i)].mean.data(),
                                      nodes[static_cast<std::size_t>(i)].mean.data() + tree.latent_dim());
      n["log_var"] = std::vector<double>(
          nodes[static_cast<std::size_t>(i)].log_var.data(),
          nodes[static_cast<std::size_t>(i)].log_var.data() + nodes[static_cast<std::size_t>(i)].log_var.size());
      arr.push_back(std::move(n));
    }
    j["nodes"] = std::move(arr);
    write_file_atomic(opt.out_path, j.dump(1));
  } else {
    throw DataFormatError("unknown format: " + opt.format + " (dot | json)");
  }
}

void cmd_sample(const SampleOptions& opt) {
  auto ck = load_checkpoint_dir(opt.checkpoint_dir);
  if (opt.count < 1) throw DataFormatError("sample count must be >= 1");
  if (opt.node >= ck.tree.num_nodes())
    throw DataFormatError("node index out of range (|T| = " + std::to_string(ck.tree.num_nodes()) + ")");
  RandomStream rng(opt.seed);
  Vec prior = ck.tree.uniform_prior();
  if (opt.node >= 0) {
    prior.setZero();
    prior[opt.node] = 1.0;
  }
  Mat z(opt.count, ck.tree.latent_dim());
  std::vector<int> drawn(static_cast<std::size_t>(opt.count));
  for (int i = 0; i < opt.count; ++i) {
    auto [node, zi] = ck.tree.sample_generative(prior, rng);
    drawn[static_cast<std::size_t>(i)] = node;
    z.row(i) = zi.transpose();
  }
  Mat obs = ck.model.decode_batch(z);
  fs::create_directories(opt.out_dir);
  save_features(fs::path(opt.out_dir) / "samples.bin", obs, &drawn);
  json meta;
  meta["count"] = opt.count;
  meta["seed"] = opt.seed;
  meta["pinned_node"] = opt.node;
  meta["nodes"] = drawn;
  write_file_atomic(fs::path(opt.out_dir) / "samples_meta.json", meta.dump(1));
  const auto& shape = ck.model.spec().input_shape;
  if (shape.size() == 3 && shape[0] == 1)
    write_pgm_grid(fs::path(opt.out_dir) / "samples.pgm", obs, shape[1], shape[2],
                   std::min(opt.count, 10));
}

void cmd_prototypes(const PrototypesOptions& opt) {
  auto ck = load_checkpoint_dir(opt.checkpoint_dir);
  Dataset data = load_data_options(opt.data);
  if (opt.k < 1) throw DataFormatError("k must be >= 1");
  std::vector<int> nodes = opt.nodes;
  if (nodes.empty()) {
    nodes.resize(static_cast<std::size_t>(ck.tree.num_nodes()));
    std::iota(nodes.begin(), nodes.end(), 0);
  }
  for (int n : nodes)
    if (n < 0 || n >= ck.tree.num_nodes())
      throw DataFormatError("invalid node index " + std::to_string(n));

  auto post = ck.model.encode_batch(data.inputs);
  auto derived = ck.tree.derive_all_node_params();
  fs::create_directories(opt.out_dir);
  json j;
  j["k"] = opt.k;
  const auto& shape = ck.model.spec().input_shape;
  for (int n : nodes) {
    const Vec mean = derived[static_cast<std::size_t>(n)].mean;
    const Vec var = derived[static_cast<std::size_t>(n)].variances(ck.tree.latent_dim());
    std::vector<std::pair<double, int>> scored(static_cast<std::size_t>(post.mean.rows()));
    for (Eigen::Index i = 0; i < post.mean.rows(); ++i)
      scored[static_cast<std::size_t>(i)] = {log_gaussian_pdf(post.mean.row(i).transpose(), mean, var),
                                             static_cast<int>(i)};
    const int k = std::min<int>(opt.k, static_cast<int>(scored.size()));
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    std::vector<int> top;
    for (int i = 0; i < k; ++i) top.push_back(scored[static_cast<std::size_t>(i)].second);
    j["nodes"][std::to_string(n)] = top;
    if (shape.size() == 3 && shape[0] == 1) {
      Mat grid(k, data.inputs.cols());
      for (int i = 0; i < k; ++i) grid.row(i) = data.inputs.row(top[static_cast<std::size_t>(i)]);
      write_pgm_grid(fs::path(opt.out_dir) / ("node_" + std::to_string(n) + ".pgm"), grid,
                     shape[1], shape[2], std::min(k, 3));
    }
  }
  write_file_atomic(fs::path(opt.out_dir) / "prototypes.json", j.dump(1));
}

void cmd_synth(const SynthOptions& opt) {
  ConfigFile cfg = load_config_with_overrides(opt.config_path, opt.overrides);
  DataConfig dc = data_config_from(cfg);
  SyntheticData synth = generate_synthetic(dc.synthetic);
  fs::create_directories(opt.out_dir);
  save_features(fs::path(opt.out_dir) / "features.bin", synth.data.inputs,
                synth.data.labels ? &*synth.data.labels : nullptr);
  save_tree_checkpoint(fs::path(opt.out_dir) / "tree.json", synth.tree);
  if (synth.data.labels) save_labels_file(fs::path(opt.out_dir) / "labels.txt", *synth.data.labels);
}

}  // namespace taxonet
