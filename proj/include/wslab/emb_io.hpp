#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "wslab/token_matrix.hpp"

namespace wslab {

struct EmbHeader {
  std::uint32_t version = 1;
  std::uint64_t count = 0;
  std::uint64_t n = 0;
  std::uint64_t d = 0;
  std::uint32_t flags = 0;
  bool has_labels() const { return flags & 1u; }
};

struct ReadOptions {
  // Keep only the leading n' rows / d' columns of each sample.
  std::optional<Index> n;
  std::optional<Index> d;
  // Rescale rows to sqrt(d') after truncation.
  bool normalize = false;
};

inline constexpr std::uint32_t kEmbVersion = 1;

EmbHeader read_emb_header(const std::filesystem::path& path);
LabeledDataset read_emb(const std::filesystem::path& path, const ReadOptions& opts = {});
void write_emb(const std::filesystem::path& path, const LabeledDataset& data);

// One sample per CSV file (n lines of d comma-separated values). The label,
// when present, sits in `<path>.label` as a single integer.
TokenMatrix read_csv_sample(const std::filesystem::path& path, const ReadOptions& opts = {});
std::optional<std::int8_t> read_csv_label(const std::filesystem::path& path);
void write_csv_sample(const std::filesystem::path& path, const TokenMatrix& x,
                      std::optional<std::int8_t> label = std::nullopt);

}  // namespace wslab
