#pragma once

#include <filesystem>
#include <iosfwd>

#include "wslab/featmaps.hpp"

namespace wslab {

// "PRM1" container: magic, u32 version, u32 kind, u64 seed, then the
// kind-specific dims, the activation and every weight matrix as
// (u64 rows, u64 cols, row-major float64). Little-endian throughout.
void write_params(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_params(const std::filesystem::path& path);

// Shared helpers for the binary containers.
namespace binio {
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_matrix(std::ostream& out, const MatrixXd& m);
void write_vector(std::ostream& out, const VectorXd& v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
MatrixXd read_matrix(std::istream& in);
VectorXd read_vector(std::istream& in);
void expect_magic(std::istream& in, const char (&magic)[5]);
}  // namespace binio

}  // namespace wslab
