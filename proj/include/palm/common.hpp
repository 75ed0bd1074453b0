#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace palm {

/// Batches are stored one sample per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

enum class ErrorKind {
  DegenerateVector,
  DegeneratePrototype,
  SpecInfeasible,
  NumericalError,
  EmptyClass,
  InvalidInput,
  InvalidConfiguration,
  InsufficientData,
  SingularCovariance,
  DegenerateRange,
  InternalError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// A batch of points, optionally labeled. `labels` is empty for unlabeled data.
struct EmbeddingBatch {
  Matrix values;
  std::vector<int> labels;

  bool labeled() const { return !labels.empty(); }
  Eigen::Index size() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

/// Independent stream derived from a base seed and a tuple of stream ids.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::vector<std::uint32_t> words;
  words.push_back(static_cast<std::uint32_t>(seed));
  words.push_back(static_cast<std::uint32_t>(seed >> 32));
  for (auto s : stream) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace palm
