#include "wslab/linalg.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "wslab/error.hpp"
#include "wslab/rng.hpp"

namespace wslab {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

double operator_norm(const MatrixXd& a, int max_iterations, double tol, std::uint64_t seed) {
  if (a.size() == 0) return 0.0;
  Rng rng(seed);
  VectorXd v = random_on_sphere(a.cols(), 1.0, rng);
  double sigma = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    VectorXd av = a * v;
    VectorXd w = a.transpose() * av;
    const double wn = w.norm();
    if (wn == 0.0) return 0.0;
    v = w / wn;
    const double next = std::sqrt(wn);
    if (std::abs(next - sigma) <= tol * next) {
      sigma = next;
      break;
    }
    sigma = next;
  }
  return (a * v).norm();
}

void project_rows_to_ball(Eigen::Ref<MatrixXd> block, double radius) {
  for (Index r = 0; r < block.rows(); ++r) {
    const double norm = block.row(r).norm();
    if (norm > radius) block.row(r) *= radius / norm;
  }
}

void softmax_rows(Eigen::Ref<MatrixXd> logits) {
  for (Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const double top = row.maxCoeff();
    row = (row.array() - top).exp();
    row /= row.sum();
  }
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fingerprint(const MatrixXd& m, std::uint64_t seed) {
  const auto* raw = reinterpret_cast<const std::uint8_t*>(m.data());
  std::uint64_t h = seed;
  const std::int64_t dims[2] = {m.rows(), m.cols()};
  h = fnv1a({reinterpret_cast<const std::uint8_t*>(dims), sizeof(dims)}, h);
  return fnv1a({raw, static_cast<std::size_t>(m.size()) * sizeof(double)}, h);
}

namespace {
constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string encode_base64(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t chunk = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(chunk >> 18) & 63];
    out += kAlphabet[(chunk >> 12) & 63];
    out += kAlphabet[(chunk >> 6) & 63];
    out += kAlphabet[chunk & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t chunk = bytes[i] << 16;
    out += kAlphabet[(chunk >> 18) & 63];
    out += kAlphabet[(chunk >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t chunk = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(chunk >> 18) & 63];
    out += kAlphabet[(chunk >> 12) & 63];
    out += kAlphabet[(chunk >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> decode_base64(const std::string& text) {
  if (text.size() % 4 != 0)
    throw Error(ErrorCode::InvalidArgument, "base64 length must be a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int t = 0; t < 4; ++t) {
      const char c = text[i + t];
      if (c == '=') {
        vals[t] = 0;
        ++pad;
      } else {
        vals[t] = decode_char(c);
        if (vals[t] < 0 || pad > 0)
          throw Error(ErrorCode::InvalidArgument, "invalid base64 character");
      }
    }
    const std::uint32_t chunk = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out.push_back(static_cast<std::uint8_t>(chunk >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((chunk >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(chunk & 0xff));
  }
  return out;
}

std::string encode_vector(const VectorXd& v) {
  const auto* raw = reinterpret_cast<const std::uint8_t*>(v.data());
  return encode_base64({raw, static_cast<std::size_t>(v.size()) * sizeof(double)});
}

VectorXd decode_vector(const std::string& text) {
  const auto bytes = decode_base64(text);
  if (bytes.size() % sizeof(double) != 0)
    throw Error(ErrorCode::InvalidArgument, "base64 payload is not a float64 array");
  VectorXd v(static_cast<Index>(bytes.size() / sizeof(double)));
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

}  // namespace wslab
