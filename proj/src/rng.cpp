#include "wslab/rng.hpp"

#include "wslab/error.hpp"

namespace wslab {

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t tag(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t master,
                          std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(master, path));
}

void fill_gaussian(Eigen::Ref<Eigen::MatrixXd> out, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  double* data = out.data();
  const Eigen::Index count = out.size();
  if (out.outerStride() == out.innerSize()) {
    for (Eigen::Index t = 0; t < count; ++t) data[t] = normal(rng);
  } else {
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      for (Eigen::Index r = 0; r < out.rows(); ++r) out(r, c) = normal(rng);
  }
}

Eigen::VectorXd gaussian_vector(Eigen::Index size, Rng& rng) {
  Eigen::VectorXd v(size);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index t = 0; t < size; ++t) v[t] = normal(rng);
  return v;
}

Eigen::VectorXd random_on_sphere(Eigen::Index size, double radius, Rng& rng) {
  if (size < 1) throw Error(ErrorCode::InvalidArgument, "sphere dimension must be positive");
  Eigen::VectorXd v = gaussian_vector(size, rng);
  double norm = v.norm();
  while (norm == 0.0) {
    v = gaussian_vector(size, rng);
    norm = v.norm();
  }
  return v * (radius / norm);
}

}  // namespace wslab
