#pragma once

#include <cstdint>
#include <vector>

#include "wslab/linalg.hpp"

namespace wslab {

// A context of n token embeddings in dimension d. Rows are tokens.
class TokenMatrix {
 public:
  TokenMatrix() = default;
  explicit TokenMatrix(RowMatrix values, bool normalized = false);

  Index n() const { return values_.rows(); }
  Index d() const { return values_.cols(); }
  Index flat_size() const { return values_.size(); }
  bool normalized() const { return normalized_; }

  const RowMatrix& values() const { return values_; }
  auto row(Index i) const { return values_.row(i); }

  // Row-major flattening, Flat(X) = [x_1; x_2; ...; x_n].
  Eigen::Map<const VectorXd> flat() const {
    return Eigen::Map<const VectorXd>(values_.data(), values_.size());
  }

  bool operator==(const TokenMatrix& other) const;

 private:
  RowMatrix values_;
  bool normalized_ = false;
};

enum class BudgetMode { strict, clip, none };

struct PerturbationEntry {
  Index row = 0;
  VectorXd delta;
};

struct Perturbation {
  std::vector<PerturbationEntry> entries;
  BudgetMode mode = BudgetMode::strict;

  static Perturbation single(Index row, VectorXd delta, BudgetMode mode = BudgetMode::strict);
  Index size() const { return static_cast<Index>(entries.size()); }
};

// Labels are -1 / +1. An empty label vector marks an unlabeled dataset.
struct LabeledDataset {
  std::vector<TokenMatrix> samples;
  std::vector<std::int8_t> labels;

  bool labeled() const { return !labels.empty(); }
  Index n() const { return samples.empty() ? 0 : samples.front().n(); }
  Index d() const { return samples.empty() ? 0 : samples.front().d(); }
  void validate() const;
  bool operator==(const LabeledDataset& other) const = default;
};

inline constexpr double kZeroRowThreshold = 1e-300;

TokenMatrix normalize_rows(const TokenMatrix& x);
TokenMatrix synth_context(Index n, Index d, std::uint64_t seed);

// Checks indices and budgets against the shape (n, d). Clip mode rescales
// over-budget deltas to norm sqrt(d) in the returned copy.
Perturbation validate_perturbation(const Perturbation& p, Index n, Index d);
TokenMatrix apply_perturbation(const TokenMatrix& x, const Perturbation& p);

}  // namespace wslab
