#include "wslab/emb_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "wslab/error.hpp"

namespace wslab {

namespace {

template <typename T>
void read_raw(std::istream& in, T& value, const char* what) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T)))
    throw Error(ErrorCode::ShortRead, std::string("file ended while reading ") + what);
}

template <typename T>
void write_raw(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

EmbHeader parse_header(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4) throw Error(ErrorCode::ShortRead, "file shorter than magic");
  if (std::memcmp(magic, "EMB1", 4) != 0) throw Error(ErrorCode::BadMagic, "expected EMB1 magic");
  EmbHeader h;
  read_raw(in, h.version, "version");
  if (h.version != kEmbVersion)
    throw Error(ErrorCode::VersionUnsupported, "version " + std::to_string(h.version));
  read_raw(in, h.count, "count");
  read_raw(in, h.n, "n");
  read_raw(in, h.d, "d");
  read_raw(in, h.flags, "flags");
  return h;
}

bool rows_on_sphere(const RowMatrix& m) {
  const double target = std::sqrt(static_cast<double>(m.cols()));
  for (Index r = 0; r < m.rows(); ++r)
    if (std::abs(m.row(r).norm() - target) > 1e-9 * target) return false;
  return true;
}

TokenMatrix finish_sample(RowMatrix full, const ReadOptions& opts) {
  const Index n = opts.n.value_or(full.rows());
  const Index d = opts.d.value_or(full.cols());
  if (n < 1 || d < 1 || n > full.rows() || d > full.cols())
    throw Error(ErrorCode::TruncationTooLarge,
                "requested " + std::to_string(n) + "x" + std::to_string(d) + " from " +
                    std::to_string(full.rows()) + "x" + std::to_string(full.cols()));
  RowMatrix block = full.topLeftCorner(n, d);
  TokenMatrix x(std::move(block));
  if (opts.normalize) return normalize_rows(x);
  const bool on_sphere = rows_on_sphere(x.values());
  return TokenMatrix(x.values(), on_sphere);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ShortRead, "cannot open " + path.string());
  return in;
}

}  // namespace

EmbHeader read_emb_header(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_header(in);
}

LabeledDataset read_emb(const std::filesystem::path& path, const ReadOptions& opts) {
  auto in = open_in(path);
  const EmbHeader h = parse_header(in);
  if (h.n == 0 || h.d == 0) throw Error(ErrorCode::DimMismatch, "header has zero n or d");
  LabeledDataset out;
  out.samples.reserve(h.count);
  for (std::uint64_t s = 0; s < h.count; ++s) {
    if (h.has_labels()) {
      std::int8_t label;
      read_raw(in, label, "label");
      if (label != 1 && label != -1)
        throw Error(ErrorCode::InvalidArgument, "label must be -1 or +1", static_cast<std::int64_t>(s));
      out.labels.push_back(label);
    }
    RowMatrix full(static_cast<Index>(h.n), static_cast<Index>(h.d));
    const auto bytes = static_cast<std::streamsize>(full.size() * sizeof(double));
    in.read(reinterpret_cast<char*>(full.data()), bytes);
    if (in.gcount() != bytes)
      throw Error(ErrorCode::ShortRead, "sample payload truncated", static_cast<std::int64_t>(s));
    out.samples.push_back(finish_sample(std::move(full), opts));
  }
  return out;
}

void write_emb(const std::filesystem::path& path, const LabeledDataset& data) {
  data.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::WriteError, "cannot open " + path.string());
  out.write("EMB1", 4);
  write_raw(out, kEmbVersion);
  write_raw(out, static_cast<std::uint64_t>(data.samples.size()));
  write_raw(out, static_cast<std::uint64_t>(data.n()));
  write_raw(out, static_cast<std::uint64_t>(data.d()));
  write_raw(out, static_cast<std::uint32_t>(data.labeled() ? 1u : 0u));
  for (std::size_t s = 0; s < data.samples.size(); ++s) {
    if (data.labeled()) write_raw(out, data.labels[s]);
    const auto& v = data.samples[s].values();
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!out) throw Error(ErrorCode::WriteError, "write failed for " + path.string());
}

TokenMatrix read_csv_sample(const std::filesystem::path& path, const ReadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ShortRead, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw Error(ErrorCode::ShortRead, "unparsable value '" + cell + "'", line_no);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorCode::DimMismatch, "ragged CSV row", line_no);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::ShortRead, "empty CSV sample " + path.string());
  RowMatrix full(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index r = 0; r < full.rows(); ++r)
    for (Index c = 0; c < full.cols(); ++c) full(r, c) = rows[r][c];
  return finish_sample(std::move(full), opts);
}

std::optional<std::int8_t> read_csv_label(const std::filesystem::path& path) {
  std::ifstream in(path.string() + ".label");
  if (!in) return std::nullopt;
  int label = 0;
  if (!(in >> label) || (label != 1 && label != -1))
    throw Error(ErrorCode::InvalidArgument, "label sidecar must hold -1 or +1");
  return static_cast<std::int8_t>(label);
}

void write_csv_sample(const std::filesystem::path& path, const TokenMatrix& x,
                      std::optional<std::int8_t> label) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::WriteError, "cannot open " + path.string());
  out.precision(17);
  for (Index r = 0; r < x.n(); ++r) {
    for (Index c = 0; c < x.d(); ++c) {
      if (c) out << ',';
      out << x.values()(r, c);
    }
    out << '\n';
  }
  if (label) {
    std::ofstream side(path.string() + ".label", std::ios::trunc);
    side << static_cast<int>(*label) << '\n';
  }
  if (!out) throw Error(ErrorCode::WriteError, "write failed for " + path.string());
}

}  // namespace wslab
