#include "wslab/params_io.hpp"

#include <cstring>
#include <fstream>

#include "wslab/error.hpp"

namespace wslab {

namespace binio {

namespace {
template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw Error(ErrorCode::ShortRead, "container ended early");
  return v;
}
}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { put(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put(out, v); }
void write_f64(std::ostream& out, double v) { put(out, v); }
std::uint32_t read_u32(std::istream& in) { return get<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return get<std::uint64_t>(in); }
double read_f64(std::istream& in) { return get<double>(in); }

void write_matrix(std::ostream& out, const MatrixXd& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  const RowMatrix rm = m;
  out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(double)));
}

void write_vector(std::ostream& out, const VectorXd& v) {
  write_u64(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

MatrixXd read_matrix(std::istream& in) {
  const auto rows = static_cast<Index>(read_u64(in));
  const auto cols = static_cast<Index>(read_u64(in));
  if (rows < 0 || cols < 0 || (rows > 0 && cols > (Index{1} << 40) / rows))
    throw Error(ErrorCode::DimMismatch, "implausible matrix shape in container");
  RowMatrix rm(rows, cols);
  const auto bytes = static_cast<std::streamsize>(rm.size() * sizeof(double));
  in.read(reinterpret_cast<char*>(rm.data()), bytes);
  if (in.gcount() != bytes) throw Error(ErrorCode::ShortRead, "matrix payload truncated");
  return rm;
}

VectorXd read_vector(std::istream& in) {
  const auto size = static_cast<Index>(read_u64(in));
  if (size < 0 || size > (Index{1} << 40)) throw Error(ErrorCode::DimMismatch, "implausible vector length");
  VectorXd v(size);
  const auto bytes = static_cast<std::streamsize>(size * sizeof(double));
  in.read(reinterpret_cast<char*>(v.data()), bytes);
  if (in.gcount() != bytes) throw Error(ErrorCode::ShortRead, "vector payload truncated");
  return v;
}

void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4];
  in.read(buf, 4);
  if (in.gcount() != 4) throw Error(ErrorCode::ShortRead, "file shorter than magic");
  if (std::memcmp(buf, magic, 4) != 0)
    throw Error(ErrorCode::BadMagic, std::string("expected ") + magic + " magic");
}

}  // namespace binio

namespace {

constexpr std::uint32_t kParamsVersion = 1;

void write_activation(std::ostream& out, const Activation& act) {
  binio::write_u32(out, static_cast<std::uint32_t>(act.kind()));
  binio::write_u64(out, act.knots().size());
  for (double k : act.knots()) binio::write_f64(out, k);
  for (double v : act.values()) binio::write_f64(out, v);
}

Activation read_activation(std::istream& in) {
  const auto kind = static_cast<ActivationKind>(binio::read_u32(in));
  const auto count = binio::read_u64(in);
  if (count > (1u << 20)) throw Error(ErrorCode::DimMismatch, "implausible activation table");
  std::vector<double> knots(count), values(count);
  for (auto& k : knots) k = binio::read_f64(in);
  for (auto& v : values) v = binio::read_f64(in);
  switch (kind) {
    case ActivationKind::relu: return Activation::relu();
    case ActivationKind::identity: return Activation::identity();
    case ActivationKind::tanh: return Activation::tanh();
    case ActivationKind::table: return Activation::table(std::move(knots), std::move(values));
  }
  throw Error(ErrorCode::BadMagic, "unknown activation tag");
}

}  // namespace

void write_params(const std::filesystem::path& path, const FeatureMap& map) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::WriteError, "cannot open " + path.string());
  out.write("PRM1", 4);
  binio::write_u32(out, kParamsVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(map.kind()));
  switch (map.kind()) {
    case MapKind::rf: {
      const auto& p = map.rf();
      binio::write_u64(out, p.seed);
      binio::write_u64(out, p.n);
      binio::write_u64(out, p.d);
      write_activation(out, p.act);
      binio::write_matrix(out, p.V);
      break;
    }
    case MapKind::drf: {
      const auto& p = map.drf();
      binio::write_u64(out, p.seed);
      binio::write_u64(out, p.n);
      binio::write_u64(out, p.d);
      binio::write_f64(out, p.beta);
      write_activation(out, p.act);
      binio::write_u64(out, p.layers.size());
      for (const auto& V : p.layers) binio::write_matrix(out, V);
      break;
    }
    default: {
      const auto& p = map.raf();
      binio::write_u64(out, p.seed);
      binio::write_matrix(out, p.W);
      binio::write_matrix(out, p.WQ);
      binio::write_matrix(out, p.WK);
      binio::write_matrix(out, p.WV);
      break;
    }
  }
  if (!out) throw Error(ErrorCode::WriteError, "write failed for " + path.string());
}

FeatureMap read_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ShortRead, "cannot open " + path.string());
  binio::expect_magic(in, "PRM1");
  const auto version = binio::read_u32(in);
  if (version != kParamsVersion) throw Error(ErrorCode::VersionUnsupported, "version " + std::to_string(version));
  const auto tag = binio::read_u32(in);
  if (tag > static_cast<std::uint32_t>(MapKind::qkv)) throw Error(ErrorCode::BadMagic, "unknown map kind tag");
  const auto kind = static_cast<MapKind>(tag);
  switch (kind) {
    case MapKind::rf: {
      RFParams p;
      p.seed = binio::read_u64(in);
      p.n = static_cast<Index>(binio::read_u64(in));
      p.d = static_cast<Index>(binio::read_u64(in));
      p.act = read_activation(in);
      p.V = binio::read_matrix(in);
      return FeatureMap(std::move(p));
    }
    case MapKind::drf: {
      DRFParams p;
      p.seed = binio::read_u64(in);
      p.n = static_cast<Index>(binio::read_u64(in));
      p.d = static_cast<Index>(binio::read_u64(in));
      p.beta = binio::read_f64(in);
      p.act = read_activation(in);
      const auto L = binio::read_u64(in);
      if (L > 4096) throw Error(ErrorCode::DimMismatch, "implausible depth");
      for (std::uint64_t l = 0; l < L; ++l) p.layers.push_back(binio::read_matrix(in));
      return FeatureMap(std::move(p));
    }
    default: {
      RAFParams p;
      p.seed = binio::read_u64(in);
      p.W = binio::read_matrix(in);
      p.WQ = binio::read_matrix(in);
      p.WK = binio::read_matrix(in);
      p.WV = binio::read_matrix(in);
      return FeatureMap(kind, std::move(p));
    }
  }
}

}  // namespace wslab
