#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wslab/attack.hpp"
#include "wslab/config.hpp"
#include "wslab/construct.hpp"
#include "wslab/featmaps.hpp"
#include "wslab/sensitivity.hpp"

namespace wslab {

using Record = nlohmann::ordered_json;

struct SensitivitySweep {
  std::uint64_t seed = 0;
  std::vector<MapKind> maps{MapKind::rf};
  std::vector<Index> n{8, 16, 32, 64, 128, 256};
  std::vector<Index> d{256};
  std::vector<Index> L{1};  // depths, used by drf only
  std::vector<Index> words{1};
  Index k = 512;
  Activation act = Activation::relu();
  int trials = 10;
  PGAConfig pga;
  bool construct = true;
  ConstructConfig construct_cfg;
  std::optional<std::filesystem::path> data;
  int jobs = 1;
  bool timing = false;

  static SensitivitySweep from_config(const Config& cfg);
};

struct GeneralizationSweep {
  std::uint64_t seed = 0;
  std::vector<MapKind> maps{MapKind::rf};
  std::vector<Index> N{64};
  std::vector<Index> n{128};
  Index d = 128;
  Index k = 2048;
  Activation act = Activation::relu();
  int trials = 50;
  // Entries are err, ft_align, rt_align or their *_pen forms.
  std::vector<std::string> objectives{"err", "ft_align", "rt_align"};
  std::vector<double> penalties{1.0, 0.1, 0.01};
  // "default" pairs objectives with their natural update; "cross" swaps
  // ft/rt; "both" runs both.
  std::string update_mode = "default";
  AttackConfig attack;
  std::optional<std::filesystem::path> data;
  int jobs = 1;
  bool timing = false;

  static GeneralizationSweep from_config(const Config& cfg);
};

// Runs fn(0..count-1) on `jobs` workers; results come back in index order.
void run_indexed(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

std::vector<Record> run_sensitivity_sweep(const SensitivitySweep& sweep);
std::vector<Record> run_generalization_sweep(const GeneralizationSweep& sweep);

struct AggregateRow {
  std::vector<std::string> group;
  std::string metric;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (0 for a single value)
};

// Groups records by the given keys (first-appearance order) and summarizes
// every numeric metric present.
std::vector<AggregateRow> aggregate(const std::vector<Record>& records, const std::vector<std::string>& group_keys,
                                    const std::vector<std::string>& metrics);

std::string to_jsonl(const std::vector<Record>& records);
std::string to_csv(const std::vector<AggregateRow>& rows, const std::vector<std::string>& group_keys);
std::string sensitivity_plot_data(const std::vector<Record>& records);
std::string generalization_plot_data(const std::vector<Record>& records);

extern const std::vector<std::string> kSensitivityGroup;
extern const std::vector<std::string> kSensitivityMetrics;
extern const std::vector<std::string> kGeneralizationGroup;
extern const std::vector<std::string> kGeneralizationMetrics;

// Writes records.jsonl, aggregate.csv and (optionally) plot_data.csv.
void write_sweep_outputs(const std::filesystem::path& dir, const std::vector<Record>& records,
                         const std::vector<std::string>& group_keys, const std::vector<std::string>& metrics,
                         const std::string* plot_data);

std::string format_double(double v);

}  // namespace wslab
