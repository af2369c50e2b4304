#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace wslab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Largest singular value by power iteration on A^T A. Converges from below;
// stops when the relative change falls under `tol`.
double operator_norm(const MatrixXd& a, int max_iterations = 500, double tol = 1e-12,
                     std::uint64_t seed = 7);

// Scales every row of `block` that lies outside the Euclidean ball of the given
// radius back onto its surface.
void project_rows_to_ball(Eigen::Ref<MatrixXd> block, double radius);

// Numerically stable in-place softmax of each row (max subtraction).
void softmax_rows(Eigen::Ref<MatrixXd> logits);

// FNV-1a over raw bytes; chained via `seed`.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fingerprint(const MatrixXd& m, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Standard base64 (RFC 4648, padded) of a float64 little-endian vector.
std::string encode_base64(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> decode_base64(const std::string& text);
std::string encode_vector(const VectorXd& v);
VectorXd decode_vector(const std::string& text);

}  // namespace wslab
