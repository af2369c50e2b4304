#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace wslab {

using Rng = std::mt19937_64;

// Stable 64-bit hash of a tag string (FNV-1a); used to name RNG purposes.
std::uint64_t tag(std::string_view name);

// Derives an independent stream seed from a master seed and a path of
// integers, e.g. derive_seed(master, {tag("trial"), trial, tag("weights")}).
std::uint64_t derive_seed(std::uint64_t master,
                          std::initializer_list<std::uint64_t> path);

Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path);

// Fills with i.i.d. N(0, stddev^2) in storage order.
void fill_gaussian(Eigen::Ref<Eigen::MatrixXd> out, double stddev, Rng& rng);
Eigen::VectorXd gaussian_vector(Eigen::Index size, Rng& rng);

// Uniform direction scaled to the requested radius.
Eigen::VectorXd random_on_sphere(Eigen::Index size, double radius, Rng& rng);

}  // namespace wslab
