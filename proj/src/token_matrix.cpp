#include "wslab/token_matrix.hpp"

#include <cmath>
#include <set>

#include "wslab/error.hpp"
#include "wslab/rng.hpp"

namespace wslab {

TokenMatrix::TokenMatrix(RowMatrix values, bool normalized)
    : values_(std::move(values)), normalized_(normalized) {
  if (values_.rows() < 1 || values_.cols() < 1)
    throw Error(ErrorCode::DimMismatch, "token matrix needs n >= 1 and d >= 1");
  if (!values_.allFinite())
    throw Error(ErrorCode::NumericalFailure, "token matrix has non-finite entries");
}

bool TokenMatrix::operator==(const TokenMatrix& other) const {
  return normalized_ == other.normalized_ && values_.rows() == other.values_.rows() &&
         values_.cols() == other.values_.cols() && values_ == other.values_;
}

Perturbation Perturbation::single(Index row, VectorXd delta, BudgetMode mode) {
  Perturbation p;
  p.entries.push_back({row, std::move(delta)});
  p.mode = mode;
  return p;
}

void LabeledDataset::validate() const {
  if (labeled() && labels.size() != samples.size())
    throw Error(ErrorCode::DimMismatch, "label count differs from sample count");
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].n() != n() || samples[s].d() != d())
      throw Error(ErrorCode::DimMismatch, "samples must share (n, d)", static_cast<std::int64_t>(s));
  }
  for (std::size_t s = 0; s < labels.size(); ++s) {
    if (labels[s] != 1 && labels[s] != -1)
      throw Error(ErrorCode::InvalidArgument, "labels must be -1 or +1", static_cast<std::int64_t>(s));
  }
}

TokenMatrix normalize_rows(const TokenMatrix& x) {
  RowMatrix out = x.values();
  const double target = std::sqrt(static_cast<double>(x.d()));
  for (Index r = 0; r < out.rows(); ++r) {
    const double norm = out.row(r).norm();
    if (norm < kZeroRowThreshold) throw Error(ErrorCode::ZeroRow, "row has zero norm", r);
    out.row(r) *= target / norm;
  }
  return TokenMatrix(std::move(out), true);
}

TokenMatrix synth_context(Index n, Index d, std::uint64_t seed) {
  if (n < 1 || d < 1) throw Error(ErrorCode::InvalidArgument, "n and d must be positive");
  Rng rng(seed);
  const double radius = std::sqrt(static_cast<double>(d));
  RowMatrix values(n, d);
  for (Index r = 0; r < n; ++r) values.row(r) = random_on_sphere(d, radius, rng).transpose();
  return TokenMatrix(std::move(values), true);
}

Perturbation validate_perturbation(const Perturbation& p, Index n, Index d) {
  Perturbation out = p;
  const double budget = std::sqrt(static_cast<double>(d));
  std::set<Index> seen;
  for (auto& e : out.entries) {
    if (e.row < 0 || e.row >= n) throw Error(ErrorCode::IndexOutOfRange, "row outside context", e.row);
    if (!seen.insert(e.row).second)
      throw Error(ErrorCode::InvalidArgument, "duplicate perturbation row", e.row);
    if (e.delta.size() != d) throw Error(ErrorCode::DimMismatch, "delta length differs from d", e.row);
    const double norm = e.delta.norm();
    if (out.mode != BudgetMode::none && norm > budget + 1e-12) {
      if (out.mode == BudgetMode::strict)
        throw Error(ErrorCode::BudgetExceeded, "delta norm exceeds sqrt(d)", e.row);
      e.delta *= budget / norm;
    }
  }
  return out;
}

TokenMatrix apply_perturbation(const TokenMatrix& x, const Perturbation& p) {
  const Perturbation valid = validate_perturbation(p, x.n(), x.d());
  RowMatrix out = x.values();
  for (const auto& e : valid.entries) out.row(e.row) += e.delta.transpose();
  return TokenMatrix(std::move(out), false);
}

}  // namespace wslab
