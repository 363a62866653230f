#include "taxonet/checkpoint.hpp"

#include "json.hpp"
#include "taxonet/util.hpp"

namespace taxonet {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json matrix_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw DataFormatError("checkpoint: expected matrix");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols)
      throw DataFormatError("checkpoint: ragged matrix");
    for (Eigen::Index jj = 0; jj < cols; ++jj) m(i, jj) = j[i][jj].get<double>();
  }
  return m;
}

json parse_document(const std::filesystem::path& path, const char* kind) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataFormatError("cannot parse " + path.string() + ": " + e.what());
  }
  if (j.value("format_version", -1) != kFormatVersion)
    throw DataFormatError(path.string() + ": unsupported format_version");
  if (j.value("kind", "") != kind)
    throw DataFormatError(path.string() + ": expected kind '" + std::string(kind) + "'");
  return j;
}

}  // namespace

void save_tree_checkpoint(const std::filesystem::path& path, const TaxonomyTree& tree) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "taxonomy_tree";
  j["depth"] = tree.depth();
  j["latent_dim"] = tree.latent_dim();
  j["variance_mode"] = tree.variance_mode() == VarianceMode::isotropic ? "isotropic" : "diagonal";
  j["leaf_means"] = matrix_to_json(tree.leaf_means());
  j["leaf_log_vars"] = matrix_to_json(tree.leaf_log_vars());
  j["branch_logits"] = matrix_to_json(tree.branch_logits());
  write_file_atomic(path, j.dump(1));
}

TaxonomyTree load_tree_checkpoint(const std::filesystem::path& path) {
  json j = parse_document(path, "taxonomy_tree");
  const std::string mode = j.at("variance_mode").get<std::string>();
  if (mode != "isotropic" && mode != "diagonal")
    throw DataFormatError(path.string() + ": unknown variance_mode");
  TaxonomyTree tree(j.at("depth").get<int>(), j.at("latent_dim").get<int>(),
                    mode == "isotropic" ? VarianceMode::isotropic : VarianceMode::diagonal);
  Mat lm = matrix_from_json(j.at("leaf_means"));
  Mat lv = matrix_from_json(j.at("leaf_log_vars"));
  Mat bl = matrix_from_json(j.at("branch_logits"));
  if (lm.rows() != tree.num_leaves() || lm.cols() != tree.latent_dim() ||
      lv.rows() != tree.num_leaves() || bl.rows() != tree.num_internal() || bl.cols() != 1)
    throw DataFormatError(path.string() + ": parameter shapes do not match depth/latent_dim");
  tree.leaf_means() = lm;
  tree.leaf_log_vars() = lv;
  tree.branch_logits() = bl;
  return tree;
}

void save_model_checkpoint(const std::filesystem::path& path, Model& model,
                           ProjectionHeads* heads) {
  json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "model";
  const ModelSpec& spec = model.spec();
  j["spec"]["input_shape"] = spec.input_shape;
  j["spec"]["latent_dim"] = spec.latent_dim;
  j["spec"]["architecture"] = to_string(spec.arch);
  j["spec"]["hidden_widths"] = spec.hidden_widths;
  j["spec"]["likelihood"] = to_string(spec.likelihood);
  j["spec"]["batch_norm"] = spec.batch_norm;
  j["spec"]["bn_eps"] = spec.bn_eps;
  j["spec"]["bn_momentum"] = spec.bn_momentum;
  json params = json::object();
  auto ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) params[model.param_names()[i]] = matrix_to_json(*ps[i]);
  j["params"] = std::move(params);
  json bufs = json::object();
  auto bs = model.buffers();
  for (std::size_t i = 0; i < bs.size(); ++i) bufs[model.buffer_names()[i]] = matrix_to_json(*bs[i]);
  j["buffers"] = std::move(bufs);
  if (heads != nullptr) {
    json h;
    auto hp = heads->params();
    h["proj_dim"] = heads->proj_dim();
    for (std::size_t i = 0; i < hp.size(); ++i)
      h["params"][heads->param_names()[i]] = matrix_to_json(*hp[i]);
    j["projection_heads"] = std::move(h);
  }
  write_file_atomic(path, j.dump(1));
}

ModelCheckpoint load_model_checkpoint(const std::filesystem::path& path) {
  json j = parse_document(path, "model");
  ModelSpec spec;
  const json& js = j.at("spec");
  spec.input_shape = js.at("input_shape").get<std::vector<int>>();
  spec.latent_dim = js.at("latent_dim").get<int>();
  spec.arch = arch_from_string(js.at("architecture").get<std::string>());
  spec.hidden_widths = js.at("hidden_widths").get<std::vector<int>>();
  spec.likelihood = likelihood_from_string(js.at("likelihood").get<std::string>());
  spec.batch_norm = js.value("batch_norm", false);
  spec.bn_eps = js.value("bn_eps", 1e-5);
  spec.bn_momentum = js.value("bn_momentum", 0.1);
  RandomStream rng(0);
  Model model(spec, rng);
  auto ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string& name = model.param_names()[i];
    if (!j.at("params").contains(name)) throw DataFormatError("model checkpoint missing " + name);
    Mat m = matrix_from_json(j.at("params").at(name));
    if (m.rows() != ps[i]->rows() || m.cols() != ps[i]->cols())
      throw DataFormatError("model checkpoint: bad shape for " + name);
    *ps[i] = std::move(m);
  }
  auto bs = model.buffers();
  for (std::size_t i = 0; i < bs.size(); ++i) {
    const std::string& name = model.buffer_names()[i];
    if (j.at("buffers").contains(name)) *bs[i] = matrix_from_json(j.at("buffers").at(name));
  }
  ModelCheckpoint out{std::move(model), std::nullopt};
  if (j.contains("projection_heads")) {
    const json& h = j.at("projection_heads");
    Mat e1w = matrix_from_json(h.at("params").at("embed1.W"));
    Mat cw = matrix_from_json(h.at("params").at("cluster.W"));
    RandomStream hrng(0);
    ProjectionHeads heads(static_cast<int>(e1w.rows()), static_cast<int>(cw.rows()), hrng,
                          static_cast<int>(e1w.cols()), h.at("proj_dim").get<int>());
    auto hp = heads.params();
    for (std::size_t i = 0; i < hp.size(); ++i)
      *hp[i] = matrix_from_json(h.at("params").at(heads.param_names()[i]));
    out.heads = std::move(heads);
  }
  return out;
}

}  // namespace taxonet
