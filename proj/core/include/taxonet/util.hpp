#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace taxonet {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Malformed or truncated input files (IDX, feature files, checkpoints).
class DataFormatError : public std::runtime_error {
 public:
  explicit DataFormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a non-finite loss; message carries the term breakdown.
class TrainDivergenceError : public std::runtime_error {
 public:
  explicit TrainDivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// Worker-thread cap, read once from TAXONNET_THREADS (default 1).
int worker_threads();

// Writes to a sibling temp file, then renames. A failed write leaves no
// partial file at `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

bool all_finite(const Mat& m);

}  // namespace taxonet
