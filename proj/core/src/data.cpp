#include "taxonet/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace taxonet {

int Dataset::num_classes() const {
  if (!labels || labels->empty()) return 0;
  return *std::max_element(labels->begin(), labels->end()) + 1;
}

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& what) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw DataFormatError("truncated file while reading " + what);
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataFormatError("truncated file while reading " + what);
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataFormatError("cannot open " + images_path.string());
  if (read_u32_be(img, "image magic") != 0x00000803u)
    throw DataFormatError(images_path.string() + ": bad IDX image magic");
  const std::uint32_t n = read_u32_be(img, "image count");
  const std::uint32_t rows = read_u32_be(img, "rows");
  const std::uint32_t cols = read_u32_be(img, "cols");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataFormatError("cannot open " + labels_path.string());
  if (read_u32_be(lab, "label magic") != 0x00000801u)
    throw DataFormatError(labels_path.string() + ": bad IDX label magic");
  const std::uint32_t nl = read_u32_be(lab, "label count");
  if (n != nl)
    throw DataFormatError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                          std::to_string(nl) + " labels");

  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> buf(pixels);
  Mat inputs(n, static_cast<Eigen::Index>(pixels));
  for (std::uint32_t i = 0; i < n; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (!img) throw DataFormatError(images_path.string() + ": truncated image data");
    for (std::size_t p = 0; p < pixels; ++p)
      inputs(i, static_cast<Eigen::Index>(p)) = buf[p] / 255.0;
  }
  std::vector<int> labels(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    unsigned char l;
    lab.read(reinterpret_cast<char*>(&l), 1);
    if (!lab) throw DataFormatError(labels_path.string() + ": truncated label data");
    labels[i] = l;
  }
  Dataset ds;
  ds.inputs = std::move(inputs);
  ds.input_shape = {1, static_cast<int>(rows), static_cast<int>(cols)};
  ds.labels = std::move(labels);
  ds.source = images_path.string();
  return ds;
}

namespace {

constexpr char kFeatureMagic[4] = {'T', 'X', 'F', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;

Dataset load_features_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw DataFormatError(path.string() + ": bad feature-file magic");
  if (read_le<std::uint32_t>(in, "version") != kFeatureVersion)
    throw DataFormatError(path.string() + ": unsupported feature-file version");
  const auto n = read_le<std::uint64_t>(in, "N");
  const auto d = read_le<std::uint32_t>(in, "D");
  const auto has_labels = read_le<std::uint8_t>(in, "label flag");
  if (d == 0 || n == 0) throw DataFormatError(path.string() + ": empty feature file");
  Mat values(static_cast<Eigen::Index>(n), d);
  for (std::uint64_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j) values(static_cast<Eigen::Index>(i), j) = read_le<double>(in, "value");
  Dataset ds;
  if (has_labels != 0) {
    std::vector<int> labels(n);
    for (std::uint64_t i = 0; i < n; ++i) labels[i] = read_le<std::int32_t>(in, "label");
    ds.labels = std::move(labels);
  }
  ds.inputs = std::move(values);
  ds.input_shape = {static_cast<int>(d)};
  ds.source = path.string();
  return ds;
}

Dataset load_features_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw DataFormatError(path.string() + ": empty CSV");
  const bool has_labels = header.find("label") != std::string::npos;
  std::size_t ncols = header.empty() ? 0 : 1;
  for (char c : header)
    if (c == ',') ++ncols;
  const std::size_t d = has_labels ? ncols - 1 : ncols;
  if (d == 0) throw DataFormatError(path.string() + ": CSV has no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col < d)
        values.push_back(std::stod(cell));
      else
        labels.push_back(std::stoi(cell));
      ++col;
    }
    if (col != ncols)
      throw DataFormatError(path.string() + ": ragged CSV row " + std::to_string(n + 2));
    ++n;
  }
  if (n == 0) throw DataFormatError(path.string() + ": CSV has no data rows");
  Mat m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * d + j];
  Dataset ds;
  ds.inputs = std::move(m);
  ds.input_shape = {static_cast<int>(d)};
  if (has_labels) ds.labels = std::move(labels);
  ds.source = path.string();
  return ds;
}

}  // namespace

Dataset load_features(const std::filesystem::path& path, bool standardize) {
  Dataset ds = path.extension() == ".csv" ? load_features_csv(path) : load_features_binary(path);
  if (standardize) {
    Vec mean = ds.inputs.colwise().mean();
    Vec sd(ds.inputs.cols());
    for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j) {
      double v = (ds.inputs.col(j).array() - mean[j]).square().sum() / ds.inputs.rows();
      sd[j] = std::sqrt(std::max(v, 1e-12));
    }
    for (Eigen::Index j = 0; j < ds.inputs.cols(); ++j)
      ds.inputs.col(j) = (ds.inputs.col(j).array() - mean[j]) / sd[j];
    ds.standardized = true;
  }
  return ds;
}

void save_features(const std::filesystem::path& path, const Mat& values,
                   const std::vector<int>* labels) {
  if (labels != nullptr && static_cast<Eigen::Index>(labels->size()) != values.rows())
    throw std::invalid_argument("save_features: label count mismatch");
  std::ostringstream out(std::ios::binary);
  if (path.extension() == ".csv") {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      out << "feature_" << j;
      if (j + 1 < values.cols() || labels != nullptr) out << ",";
    }
    if (labels != nullptr) out << "label";
    out << "\n";
    out.precision(17);
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      for (Eigen::Index j = 0; j < values.cols(); ++j) {
        out << values(i, j);
        if (j + 1 < values.cols() || labels != nullptr) out << ",";
      }
      if (labels != nullptr) out << (*labels)[static_cast<std::size_t>(i)];
      out << "\n";
    }
  } else {
    out.write(kFeatureMagic, 4);
    write_le(out, kFeatureVersion);
    write_le(out, static_cast<std::uint64_t>(values.rows()));
    write_le(out, static_cast<std::uint32_t>(values.cols()));
    write_le(out, static_cast<std::uint8_t>(labels != nullptr ? 1 : 0));
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      for (Eigen::Index j = 0; j < values.cols(); ++j) write_le(out, values(i, j));
    if (labels != nullptr)
      for (int l : *labels) write_le(out, static_cast<std::int32_t>(l));
  }
  write_file_atomic(path, out.str());
}

SyntheticData generate_synthetic(const SyntheticTreeSpec& spec) {
  if (spec.separation <= 0.0) throw std::invalid_argument("separation must be positive");
  if (spec.samples_per_leaf < 1) throw std::invalid_argument("samples_per_leaf must be >= 1");
  TaxonomyTree tree(spec.depth, spec.latent_dim, VarianceMode::isotropic);

  // node means by recursive offsetting, heap order
  const int n_nodes = tree.num_nodes();
  Mat means = Mat::Zero(n_nodes, spec.latent_dim);
  for (int i = 1; i < n_nodes; ++i) {
    const int level = TaxonomyTree::node_depth(i);
    const int dim = (level - 1) % spec.latent_dim;
    const double sign = (i % 2 == 1) ? -1.0 : 1.0;  // left child odd index
    means.row(i) = means.row(TaxonomyTree::parent_of(i));
    means(i, dim) += sign * spec.separation / static_cast<double>(1 << level);
  }
  for (int l = 0; l < tree.num_leaves(); ++l)
    tree.leaf_means().row(l) = means.row(tree.leaf_offset() + l);
  tree.leaf_log_vars().setConstant(2.0 * std::log(spec.noise_sigma));

  RandomStream rng(spec.seed);
  const int n = tree.num_leaves() * spec.samples_per_leaf;
  Mat z(n, spec.latent_dim);
  std::vector<int> labels(static_cast<std::size_t>(n));
  int row = 0;
  for (int leaf = 0; leaf < tree.num_leaves(); ++leaf)
    for (int s = 0; s < spec.samples_per_leaf; ++s, ++row) {
      z.row(row) = tree.leaf_means().row(leaf) +
                   spec.noise_sigma * rng.normal_vector(spec.latent_dim).transpose();
      labels[static_cast<std::size_t>(row)] = leaf;
    }

  Dataset ds;
  if (spec.observation == ObservationMap::identity) {
    ds.inputs = std::move(z);
    ds.input_shape = {spec.latent_dim};
  } else {
    const int od = spec.obs_dim > 0 ? spec.obs_dim : spec.latent_dim;
    Mat a = rng.normal_matrix(spec.latent_dim, od) / std::sqrt(static_cast<double>(spec.latent_dim));
    ds.inputs = z * a;
    ds.input_shape = {od};
  }
  ds.labels = std::move(labels);
  ds.source = "synthetic";
  return SyntheticData{std::move(ds), std::move(tree)};
}

}  // namespace taxonet
