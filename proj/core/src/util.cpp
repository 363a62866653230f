#include "taxonet/util.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace taxonet {

int worker_threads() {
  static const int n = [] {
    const char* env = std::getenv("TAXONNET_THREADS");
    if (env == nullptr) return 1;
    int v = std::atoi(env);
    return v >= 1 ? v : 1;
  }();
  return n;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path() && !fs::exists(path.parent_path())) {
    throw std::runtime_error("output directory does not exist: " + path.parent_path().string());
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) {
      fs::remove(tmp);
      throw std::runtime_error("write failed: " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace taxonet
