#include "taxonet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "taxonet/random.hpp"

namespace taxonet {

int AssignmentTable::tree_depth() const {
  const long t = num_nodes() + 1;
  if (t < 4 || (t & (t - 1)) != 0)
    throw DataFormatError("assignment table: |T|+1 is not a power of two");
  int d = -1;
  for (long v = t; v > 1; v >>= 1) ++d;
  return d;
}

void AssignmentTable::validate() const {
  if (probs.rows() == 0 || probs.cols() == 0) throw DataFormatError("assignment table is empty");
  if ((probs.array() < -1e-12).any()) throw DataFormatError("assignment table: negative probability");
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-6)
      throw DataFormatError("assignment table: row " + std::to_string(i) + " does not sum to 1");
  }
  if (labels && static_cast<Eigen::Index>(labels->size()) != probs.rows())
    throw DataFormatError("assignment table: label count mismatch");
}

AnnotationMatrix build_annotation_matrix(const AssignmentTable& train) {
  if (!train.labels) throw std::invalid_argument("annotation matrix needs labeled assignments");
  const auto& labels = *train.labels;
  const int ncls = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<long> counts(static_cast<std::size_t>(ncls), 0);
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("negative class label");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int y = 0; y < ncls; ++y)
    if (counts[static_cast<std::size_t>(y)] == 0)
      throw std::invalid_argument("class " + std::to_string(y) + " has no samples");

  AnnotationMatrix ann;
  ann.values = Mat::Zero(ncls, train.probs.cols());
  for (Eigen::Index i = 0; i < train.probs.rows(); ++i)
    ann.values.row(labels[static_cast<std::size_t>(i)]) += train.probs.row(i);
  ann.values.array() += 1e-8;
  for (Eigen::Index c = 0; c < ann.values.cols(); ++c) ann.values.col(c) /= ann.values.col(c).sum();
  ann.class_labels.resize(static_cast<std::size_t>(ncls));
  std::iota(ann.class_labels.begin(), ann.class_labels.end(), 0);
  ann.normalized = true;
  return ann;
}

Mat classify(const AssignmentTable& test, const AnnotationMatrix& ann) {
  if (!ann.normalized) throw std::invalid_argument("annotation matrix must be normalized");
  if (test.probs.cols() != ann.values.cols())
    throw std::invalid_argument("classify: node-count mismatch");
  return test.probs * ann.values.transpose();  // N x |Y|
}

std::vector<int> argmax_rows(const Mat& pred) {
  std::vector<int> out(static_cast<std::size_t>(pred.rows()));
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < pred.cols(); ++j)
      if (pred(i, j) > pred(i, best)) best = static_cast<int>(j);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

double accuracy(const Mat& pred, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != pred.rows())
    throw std::invalid_argument("accuracy: label count mismatch");
  auto hard = argmax_rows(pred);
  long correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (hard[i] == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("nmi: size mismatch");
  const double n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, long> joint;
  std::map<int, long> ca, cb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++joint[{a[i], b[i]}];
    ++ca[a[i]];
    ++cb[b[i]];
  }
  double ha = 0.0, hb = 0.0, mi = 0.0;
  for (auto& [k, v] : ca) ha -= (v / n) * std::log(v / n);
  for (auto& [k, v] : cb) hb -= (v / n) * std::log(v / n);
  for (auto& [k, v] : joint) {
    const double pij = v / n;
    const double pi = ca[k.first] / n, pj = cb[k.second] / n;
    mi += pij * std::log(pij / (pi * pj));
  }
  if (ha + hb <= 0.0) return 1.0;  // both labelings constant
  return std::max(0.0, mi) / (0.5 * (ha + hb));
}

namespace {

// canonical sample order: by label, then lexicographically by assignment row
std::vector<int> canonical_order(const AssignmentTable& t) {
  std::vector<int> idx(static_cast<std::size_t>(t.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto& labels = *t.labels;
  std::sort(idx.begin(), idx.end(), [&](int x, int y) {
    if (labels[static_cast<std::size_t>(x)] != labels[static_cast<std::size_t>(y)])
      return labels[static_cast<std::size_t>(x)] < labels[static_cast<std::size_t>(y)];
    for (Eigen::Index c = 0; c < t.probs.cols(); ++c) {
      if (t.probs(x, c) != t.probs(y, c)) return t.probs(x, c) < t.probs(y, c);
    }
    return false;
  });
  return idx;
}

// pair id -> (i, j), i < j, over n members; ids ordered (0,1),(0,2),...,(1,2),...
std::pair<long, long> unrank_pair(long id, long n) {
  long lo = 0, hi = n - 1;  // first index
  auto before = [n](long i) { return i * (2 * n - i - 1) / 2; };
  while (lo < hi) {
    long mid = (lo + hi + 1) / 2;
    if (before(mid) <= id)
      lo = mid;
    else
      hi = mid - 1;
  }
  return {lo, lo + 1 + (id - before(lo))};
}

// distinct draws without replacement (Floyd)
std::vector<long> sample_distinct(long k, long total, RandomStream& rng) {
  std::set<long> chosen;
  for (long r = total - k; r < total; ++r) {
    long v = static_cast<long>(rng.uniform_index(static_cast<std::uint64_t>(r + 1)));
    if (!chosen.insert(v).second) chosen.insert(r);
  }
  return {chosen.begin(), chosen.end()};
}

}  // namespace

double prob_dendrogram_purity(const AssignmentTable& table, long pair_budget, std::uint64_t seed) {
  table.validate();
  if (!table.labels) throw std::invalid_argument("dendrogram purity needs labels");
  const auto& labels = *table.labels;
  const int ncls = *std::max_element(labels.begin(), labels.end()) + 1;
  const int t = table.num_nodes();

  // P(c, G_k) over the full table
  Mat class_mass = Mat::Zero(ncls, t);
  for (Eigen::Index i = 0; i < table.size(); ++i)
    class_mass.row(labels[static_cast<std::size_t>(i)]) += table.probs.row(i);
  Vec total_mass = class_mass.colwise().sum();
  Mat purity(ncls, t);
  for (int c = 0; c < t; ++c)
    purity.col(c) = total_mass[c] > 0.0 ? (class_mass.col(c) / total_mass[c]).eval()
                                        : Vec::Zero(ncls).eval();

  auto order = canonical_order(table);
  std::vector<std::vector<int>> members(static_cast<std::size_t>(ncls));
  for (int i : order) members[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);

  auto pair_purity = [&](int i, int j, int k) {
    double num = 0.0, den = 0.0;
    for (int c = 0; c < t; ++c) {
      const double s = table.probs(i, c) * table.probs(j, c);
      num += s * purity(k, c);
      den += s;
    }
    return den > 0.0 ? num / den : 0.0;
  };

  double weighted_sum = 0.0;
  long total_pairs = 0;
  for (int k = 0; k < ncls; ++k) {
    const auto& m = members[static_cast<std::size_t>(k)];
    const long nk = static_cast<long>(m.size());
    const long all_pairs = nk * (nk - 1) / 2;
    if (all_pairs == 0) continue;
    std::vector<std::pair<int, int>> pairs;
    if (all_pairs <= pair_budget) {
      pairs.reserve(static_cast<std::size_t>(all_pairs));
      for (long i = 0; i < nk; ++i)
        for (long j = i + 1; j < nk; ++j) pairs.emplace_back(m[i], m[j]);
    } else {
      RandomStream rng(splitmix64(seed ^ (0x9e37ULL + static_cast<std::uint64_t>(k))));
      for (long id : sample_distinct(pair_budget, all_pairs, rng)) {
        auto [i, j] = unrank_pair(id, nk);
        pairs.emplace_back(m[static_cast<std::size_t>(i)], m[static_cast<std::size_t>(j)]);
      }
    }
    // chunked accumulation with deterministic reduction order
    const int nthreads = std::min<int>(worker_threads(), 8);
    std::vector<double> partial(static_cast<std::size_t>(nthreads), 0.0);
    auto work = [&](int w) {
      double acc = 0.0;
      for (std::size_t p = static_cast<std::size_t>(w); p < pairs.size(); p += static_cast<std::size_t>(nthreads))
        acc += pair_purity(pairs[p].first, pairs[p].second, k);
      partial[static_cast<std::size_t>(w)] = acc;
    };
    if (nthreads == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < nthreads; ++w) pool.emplace_back(work, w);
      for (auto& th : pool) th.join();
    }
    double class_sum = 0.0;
    for (double p : partial) class_sum += p;
    // estimate preserves per-class pair weights when subsampling
    weighted_sum += class_sum * (static_cast<double>(all_pairs) / static_cast<double>(pairs.size()));
    total_pairs += all_pairs;
  }
  if (total_pairs == 0) throw std::invalid_argument("dendrogram purity: no same-class pair exists");
  return weighted_sum / static_cast<double>(total_pairs);
}

double prob_leaf_purity(const AssignmentTable& table, int tree_depth) {
  table.validate();
  if (!table.labels) throw std::invalid_argument("leaf purity needs labels");
  const auto& labels = *table.labels;
  const int leaves = 1 << tree_depth;
  const int off = leaves - 1;
  if (off + leaves > table.num_nodes())
    throw std::invalid_argument("leaf purity: tree depth inconsistent with table width");
  const int ncls = *std::max_element(labels.begin(), labels.end()) + 1;
  Mat mass = Mat::Zero(ncls, leaves);  // M(L, G_k)
  for (Eigen::Index i = 0; i < table.size(); ++i)
    mass.row(labels[static_cast<std::size_t>(i)]) += table.probs.row(i).segment(off, leaves);
  double correct = 0.0;
  for (int l = 0; l < leaves; ++l) {
    int best = 0;
    for (int k = 1; k < ncls; ++k)
      if (mass(k, l) > mass(best, l)) best = k;
    correct += mass(best, l);
  }
  const double total = mass.sum();
  if (total <= 0.0) throw std::invalid_argument("leaf purity: zero total leaf mass");
  return correct / total;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["acc"] = acc;
  j["nmi"] = nmi;
  j["dp"] = dp;
  j["lp"] = lp;
  j["n"] = n;
  j["tree_depth"] = tree_depth;
  j["pair_budget"] = pair_budget;
  j["seed"] = seed;
  return j.dump(1);
}

MetricsReport evaluate(const AssignmentTable& train, const AssignmentTable& test, long pair_budget,
                       std::uint64_t seed) {
  train.validate();
  test.validate();
  if (!test.labels) throw std::invalid_argument("evaluate: test table needs labels");
  auto ann = build_annotation_matrix(train);
  Mat pred = classify(test, ann);
  MetricsReport r;
  r.acc = accuracy(pred, *test.labels);
  r.nmi = nmi(argmax_rows(pred), *test.labels);
  r.dp = prob_dendrogram_purity(test, pair_budget, seed);
  r.lp = prob_leaf_purity(test, test.tree_depth());
  r.n = test.size();
  r.tree_depth = test.tree_depth();
  r.pair_budget = pair_budget;
  r.seed = seed;
  return r;
}

namespace {
constexpr char kTableMagic[4] = {'T', 'X', 'A', 'T'};
constexpr std::uint32_t kTableVersion = 1;

template <typename T>
T read_le(std::istream& in, const char* what) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataFormatError(std::string("truncated assignment table at ") + what);
  return v;
}
}  // namespace

void save_assignment_table(const std::filesystem::path& path, const AssignmentTable& table) {
  table.validate();
  std::ostringstream out(std::ios::binary);
  if (path.extension() == ".csv") {
    for (int c = 0; c < table.num_nodes(); ++c) {
      out << "c" << c;
      if (c + 1 < table.num_nodes() || table.labels) out << ",";
    }
    if (table.labels) out << "label";
    out << "\n";
    out.precision(17);
    for (Eigen::Index i = 0; i < table.size(); ++i) {
      for (int c = 0; c < table.num_nodes(); ++c) {
        out << table.probs(i, c);
        if (c + 1 < table.num_nodes() || table.labels) out << ",";
      }
      if (table.labels) out << (*table.labels)[static_cast<std::size_t>(i)];
      out << "\n";
    }
  } else {
    out.write(kTableMagic, 4);
    auto w = [&out](auto v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    w(kTableVersion);
    w(static_cast<std::uint64_t>(table.size()));
    w(static_cast<std::uint32_t>(table.num_nodes()));
    w(static_cast<std::uint8_t>(table.labels ? 1 : 0));
    for (Eigen::Index i = 0; i < table.size(); ++i)
      for (int c = 0; c < table.num_nodes(); ++c) w(table.probs(i, c));
    if (table.labels)
      for (int l : *table.labels) w(static_cast<std::int32_t>(l));
  }
  write_file_atomic(path, out.str());
}

AssignmentTable load_assignment_table(const std::filesystem::path& path) {
  AssignmentTable table;
  if (path.extension() == ".csv") {
    std::ifstream in(path);
    if (!in) throw DataFormatError("cannot open " + path.string());
    std::string header;
    if (!std::getline(in, header)) throw DataFormatError(path.string() + ": empty table");
    const bool has_labels = header.find("label") != std::string::npos;
    std::size_t ncols = 1;
    for (char ch : header)
      if (ch == ',') ++ncols;
    const std::size_t t = has_labels ? ncols - 1 : ncols;
    std::vector<double> vals;
    std::vector<int> labels;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::size_t col = 0;
      while (std::getline(ss, cell, ',')) {
        if (col < t)
          vals.push_back(std::stod(cell));
        else
          labels.push_back(std::stoi(cell));
        ++col;
      }
      if (col != ncols) throw DataFormatError(path.string() + ": ragged row");
      ++n;
    }
    table.probs = Mat(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(t));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < t; ++c)
        table.probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = vals[i * t + c];
    if (has_labels) table.labels = std::move(labels);
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataFormatError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kTableMagic, 4) != 0)
      throw DataFormatError(path.string() + ": bad assignment-table magic");
    if (read_le<std::uint32_t>(in, "version") != kTableVersion)
      throw DataFormatError(path.string() + ": unsupported version");
    const auto n = read_le<std::uint64_t>(in, "N");
    const auto t = read_le<std::uint32_t>(in, "T");
    const auto has_labels = read_le<std::uint8_t>(in, "label flag");
    table.probs = Mat(static_cast<Eigen::Index>(n), t);
    for (std::uint64_t i = 0; i < n; ++i)
      for (std::uint32_t c = 0; c < t; ++c)
        table.probs(static_cast<Eigen::Index>(i), c) = read_le<double>(in, "prob");
    if (has_labels != 0) {
      std::vector<int> labels(n);
      for (std::uint64_t i = 0; i < n; ++i) labels[i] = read_le<std::int32_t>(in, "label");
      table.labels = std::move(labels);
    }
  }
  table.validate();
  return table;
}

std::vector<int> load_labels_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open " + path.string());
  std::vector<int> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    labels.push_back(std::stoi(line));
  }
  if (labels.empty()) throw DataFormatError(path.string() + ": no labels");
  return labels;
}

void save_labels_file(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ostringstream out;
  for (int l : labels) out << l << "\n";
  write_file_atomic(path, out.str());
}

}  // namespace taxonet
