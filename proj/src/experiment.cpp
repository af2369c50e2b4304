#include "wslab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstring>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "wslab/emb_io.hpp"
#include "wslab/error.hpp"
#include "wslab/glm.hpp"
#include "wslab/rng.hpp"

namespace wslab {

const std::vector<std::string> kSensitivityGroup{"map", "n", "d", "k", "L", "m"};
const std::vector<std::string> kSensitivityMetrics{"ratio", "construct_ratio", "concentration"};
const std::vector<std::string> kGeneralizationGroup{"map", "N", "n", "d", "k", "objective", "penalty", "update"};
const std::vector<std::string> kGeneralizationMetrics{"gamma", "err", "coefficient", "c_meas", "lambda_min",
                                                      "robustness"};

namespace {

std::vector<Index> to_index(const std::vector<std::int64_t>& v) { return {v.begin(), v.end()}; }

std::vector<std::int64_t> to_i64(const std::vector<Index>& v) { return {v.begin(), v.end()}; }

std::vector<MapKind> parse_maps(const std::vector<std::string>& names) {
  std::vector<MapKind> out;
  for (const auto& n : names) out.push_back(parse_map_kind(n));
  return out;
}

void require_positive(const std::vector<Index>& v, const char* what) {
  for (Index x : v)
    if (x < 1) throw Error(ErrorCode::ConfigError, std::string(what) + " values must be positive");
}

PGAConfig read_pga(const Config& cfg, const std::string& sec, PGAConfig pga) {
  pga.iterations = static_cast<int>(cfg.get_int(sec, "iterations", pga.iterations));
  pga.restarts = static_cast<int>(cfg.get_int(sec, "restarts", pga.restarts));
  pga.step_size = cfg.get_double(sec, "step_size", pga.step_size);
  pga.init_scale = cfg.get_double(sec, "init_scale", pga.init_scale);
  pga.index = static_cast<Index>(cfg.get_int(sec, "index", pga.index));
  const auto mode = cfg.get_string(sec, "index_mode", "fixed");
  if (mode == "fixed")
    pga.index_mode = IndexMode::fixed;
  else if (mode == "sweep_all")
    pga.index_mode = IndexMode::sweep_all;
  else
    throw Error(ErrorCode::ConfigError, "index_mode must be fixed or sweep_all");
  try {
    pga.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return pga;
}

std::optional<std::filesystem::path> read_data(const Config& cfg, const std::string& sec) {
  const auto p = cfg.get_string(sec, "data", "");
  if (p.empty() || p == "synthetic") return std::nullopt;
  return std::filesystem::path(p);
}

FeatureMap make_map(MapKind kind, Index n, Index d, Index k, Index L, const Activation& act, std::uint64_t seed) {
  switch (kind) {
    case MapKind::rf: return FeatureMap(sample_rf(n, d, k, act, seed));
    case MapKind::drf: return FeatureMap(sample_drf(n, d, k, L, act, seed));
    case MapKind::qkv: return FeatureMap(kind, sample_raf(d, seed, d));
    default: return FeatureMap(kind, sample_raf(d, seed));
  }
}

// Truncated, normalized sample `index` of a loaded dataset.
TokenMatrix data_sample(const LabeledDataset& data, std::size_t index, Index n, Index d) {
  const auto& src = data.samples[index % data.samples.size()];
  if (n > src.n() || d > src.d())
    throw Error(ErrorCode::TruncationTooLarge, "grid point exceeds the data file shape");
  return normalize_rows(TokenMatrix(src.values().topLeftCorner(n, d)));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

SensitivitySweep SensitivitySweep::from_config(const Config& cfg) {
  const std::string sec = "sensitivity";
  SensitivitySweep s;
  s.seed = cfg.get_u64(sec, "seed", s.seed);
  s.maps = parse_maps(cfg.get_string_list(sec, "maps", {"rf"}));
  s.n = to_index(cfg.get_int_list(sec, "n", to_i64(s.n)));
  s.d = to_index(cfg.get_int_list(sec, "d", to_i64(s.d)));
  s.L = to_index(cfg.get_int_list(sec, "L", to_i64(s.L)));
  s.words = to_index(cfg.get_int_list(sec, "words", to_i64(s.words)));
  s.k = static_cast<Index>(cfg.get_int(sec, "k", s.k));
  s.act = Activation::parse(cfg.get_string(sec, "activation", "relu"));
  s.trials = static_cast<int>(cfg.get_int(sec, "trials", s.trials));
  s.pga = read_pga(cfg, sec, s.pga);
  s.construct = cfg.get_bool(sec, "construct", s.construct);
  s.construct_cfg.sphere_samples = static_cast<int>(cfg.get_int(sec, "sphere_samples", s.construct_cfg.sphere_samples));
  s.construct_cfg.tau = cfg.get_double(sec, "tau", s.construct_cfg.tau);
  s.construct_cfg.lift_cap = cfg.get_double(sec, "lift_cap", s.construct_cfg.lift_cap);
  s.construct_cfg.concentration_eps = cfg.get_double(sec, "concentration_eps", s.construct_cfg.concentration_eps);
  s.data = read_data(cfg, sec);
  s.jobs = static_cast<int>(cfg.get_int(sec, "jobs", s.jobs));
  s.timing = cfg.get_bool(sec, "timing", s.timing);
  require_positive(s.n, "n");
  require_positive(s.d, "d");
  require_positive(s.L, "L");
  require_positive(s.words, "words");
  if (s.k < 1 || s.trials < 1 || s.jobs < 1) throw Error(ErrorCode::ConfigError, "k, trials and jobs must be positive");
  return s;
}

GeneralizationSweep GeneralizationSweep::from_config(const Config& cfg) {
  const std::string sec = "generalization";
  GeneralizationSweep s;
  s.seed = cfg.get_u64(sec, "seed", s.seed);
  s.maps = parse_maps(cfg.get_string_list(sec, "maps", {"rf"}));
  s.N = to_index(cfg.get_int_list(sec, "N", to_i64(s.N)));
  s.n = to_index(cfg.get_int_list(sec, "n", to_i64(s.n)));
  s.d = static_cast<Index>(cfg.get_int(sec, "d", s.d));
  s.k = static_cast<Index>(cfg.get_int(sec, "k", s.k));
  s.act = Activation::parse(cfg.get_string(sec, "activation", "relu"));
  s.trials = static_cast<int>(cfg.get_int(sec, "trials", s.trials));
  s.objectives = cfg.get_string_list(sec, "objectives", s.objectives);
  for (const auto& o : s.objectives) parse_objective(o);
  s.penalties = cfg.get_double_list(sec, "penalties", s.penalties);
  s.update_mode = cfg.get_string(sec, "update_mode", s.update_mode);
  if (s.update_mode != "default" && s.update_mode != "cross" && s.update_mode != "both")
    throw Error(ErrorCode::ConfigError, "update_mode must be default, cross or both");
  s.attack.optimizer = read_pga(cfg, sec, s.attack.optimizer);
  s.attack.index = s.attack.optimizer.index;
  s.data = read_data(cfg, sec);
  s.jobs = static_cast<int>(cfg.get_int(sec, "jobs", s.jobs));
  s.timing = cfg.get_bool(sec, "timing", s.timing);
  require_positive(s.N, "N");
  require_positive(s.n, "n");
  for (double p : s.penalties)
    if (!(p >= 0.0)) throw Error(ErrorCode::ConfigError, "penalties must be non-negative");
  if (s.d < 1 || s.k < 1 || s.trials < 1 || s.jobs < 1)
    throw Error(ErrorCode::ConfigError, "d, k, trials and jobs must be positive");
  return s;
}

void run_indexed(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex guard;
  std::size_t failed_at = count;
  std::exception_ptr failure;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::min(workers, count); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(guard);
            if (i < failed_at) {
              failed_at = i;
              failure = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

std::vector<Record> run_sensitivity_sweep(const SensitivitySweep& sweep) {
  struct Task {
    MapKind map;
    Index d, L, n;
    int trial;
  };
  std::vector<Task> tasks;
  for (MapKind map : sweep.maps)
    for (Index d : sweep.d)
      for (Index L : (map == MapKind::drf ? sweep.L : std::vector<Index>{1}))
        for (Index n : sweep.n)
          for (int t = 0; t < sweep.trials; ++t) tasks.push_back({map, d, L, n, t});

  std::optional<LabeledDataset> data;
  if (sweep.data) data = read_emb(*sweep.data);

  std::vector<std::vector<Record>> results(tasks.size());
  run_indexed(tasks.size(), sweep.jobs, [&](std::size_t idx) {
    const Task& task = tasks[idx];
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t trial_seed =
        derive_seed(sweep.seed, {tag("sensitivity"), tag(to_string(task.map)), static_cast<std::uint64_t>(task.d),
                                 static_cast<std::uint64_t>(task.L), static_cast<std::uint64_t>(task.n),
                                 static_cast<std::uint64_t>(task.trial)});
    const TokenMatrix x = data ? data_sample(*data, static_cast<std::size_t>(task.trial), task.n, task.d)
                               : synth_context(task.n, task.d, derive_seed(trial_seed, {tag("x")}));
    const FeatureMap map =
        make_map(task.map, task.n, task.d, sweep.k, task.L, sweep.act, derive_seed(trial_seed, {tag("params")}));
    PGAConfig pga = sweep.pga;
    pga.seed = derive_seed(trial_seed, {tag("pga")});

    std::optional<ConstructReport> rep;
    if (sweep.construct && is_attention(task.map) && task.n < task.d) {
      ConstructConfig cc = sweep.construct_cfg;
      cc.seed = derive_seed(trial_seed, {tag("construct")});
      rep = construct_perturbation(map.raf(), task.map, x, pga.index, cc);
    }
    for (Index m : sweep.words) {
      if (m > task.n) continue;
      const SensitivityEstimate est = m == 1 ? estimate_ws(map, x, pga) : estimate_ws_multi(map, x, m, pga);
      Record r;
      r["experiment"] = "sensitivity";
      r["map"] = std::string(to_string(task.map));
      r["n"] = task.n;
      r["d"] = task.d;
      r["k"] = map.k();
      r["L"] = map.depth();
      r["m"] = m;
      r["seed"] = trial_seed;
      r["trial"] = task.trial;
      r["index"] = est.index;
      r["ratio"] = est.ratio;
      r["numerator"] = est.numerator;
      r["denominator"] = est.denominator;
      r["iterations_used"] = est.iterations_used;
      if (rep) {
        r["construct_ratio"] = rep->ratio;
        r["concentration"] = std::max(rep->concentration[0], rep->concentration[1]);
        r["aligned"] = rep->aligned;
      }
      if (sweep.timing) r["wall_time"] = seconds_since(t0);
      results[idx].push_back(std::move(r));
    }
  });
  std::vector<Record> out;
  for (auto& rs : results)
    for (auto& r : rs) out.push_back(std::move(r));
  return out;
}

std::vector<Record> run_generalization_sweep(const GeneralizationSweep& sweep) {
  struct Task {
    MapKind map;
    Index N, n;
    int trial;
  };
  std::vector<Task> tasks;
  for (MapKind map : sweep.maps)
    for (Index N : sweep.N)
      for (Index n : sweep.n)
        for (int t = 0; t < sweep.trials; ++t) tasks.push_back({map, N, n, t});

  struct Job {
    AttackObjective objective;
    double penalty;
    UpdateKind update;
    std::string name;
  };
  std::vector<Job> jobs;
  for (const auto& name : sweep.objectives) {
    bool pen = false;
    const AttackObjective o = parse_objective(name, &pen);
    std::vector<UpdateKind> updates;
    const UpdateKind natural = default_update(o);
    const UpdateKind swapped = natural == UpdateKind::finetuned ? UpdateKind::retrained : UpdateKind::finetuned;
    if (sweep.update_mode == "default" || sweep.update_mode == "both" || o == AttackObjective::err)
      updates.push_back(natural);
    if (o != AttackObjective::err && (sweep.update_mode == "cross" || sweep.update_mode == "both"))
      updates.push_back(swapped);
    for (const UpdateKind u : updates) {
      if (pen) {
        for (double p : sweep.penalties) jobs.push_back({o, p, u, name});
      } else {
        jobs.push_back({o, 0.0, u, name});
      }
    }
  }

  std::optional<LabeledDataset> data;
  if (sweep.data) {
    data = read_emb(*sweep.data);
    if (!data->labeled()) throw Error(ErrorCode::DimMismatch, "generalization data needs labels");
  }

  std::vector<std::vector<Record>> results(tasks.size());
  run_indexed(tasks.size(), sweep.jobs, [&](std::size_t idx) {
    const Task& task = tasks[idx];
    const auto t0 = std::chrono::steady_clock::now();
    const Index d = sweep.d;
    const std::uint64_t trial_seed =
        derive_seed(sweep.seed, {tag("generalization"), tag(to_string(task.map)), static_cast<std::uint64_t>(task.N),
                                 static_cast<std::uint64_t>(task.n), static_cast<std::uint64_t>(d),
                                 static_cast<std::uint64_t>(task.trial)});
    const FeatureMap map =
        make_map(task.map, task.n, d, sweep.k, 1, sweep.act, derive_seed(trial_seed, {tag("params")}));

    std::vector<TokenMatrix> train;
    VectorXd Y(task.N);
    TokenMatrix x;
    double y = 1.0;
    if (data) {
      const std::size_t total = data->samples.size();
      if (static_cast<std::size_t>(task.N) >= total)
        throw Error(ErrorCode::DimMismatch, "data file holds too few samples for N");
      Rng pick = make_rng(trial_seed, {tag("subset")});
      std::vector<std::size_t> order(total);
      for (std::size_t s = 0; s < total; ++s) order[s] = s;
      std::shuffle(order.begin(), order.end(), pick);
      for (Index s = 0; s < task.N; ++s) {
        train.push_back(data_sample(*data, order[s], task.n, d));
        Y[s] = data->labels[order[s]];
      }
      x = data_sample(*data, order[task.N], task.n, d);
      y = data->labels[order[task.N]];
    } else {
      Rng lab = make_rng(trial_seed, {tag("labels")});
      std::bernoulli_distribution coin(0.5);
      for (Index s = 0; s < task.N; ++s) {
        train.push_back(synth_context(task.n, d, derive_seed(trial_seed, {tag("train"), static_cast<std::uint64_t>(s)})));
        Y[s] = coin(lab) ? 1.0 : -1.0;
      }
      x = synth_context(task.n, d, derive_seed(trial_seed, {tag("pair")}));
      y = coin(lab) ? 1.0 : -1.0;
    }
    const double y_delta = -y;

    const FeatureMatrix phi = feature_matrix(map, train);
    const GLMModel base = fit(map, phi, Y);
    const VectorXd phiX = map.features(x);
    const GLMModel ft = finetune(base, phiX, y);
    const GLMModel rt = retrain(base, phi, Y, phiX, y);
    const ResidualProjector proj(phi.phi);
    FeatureMatrix phi_r;
    phi_r.phi.resize(phi.N() + 1, phi.p());
    phi_r.phi << phi.phi, phiX.transpose();
    const KernelDiagnostics kd = kernel_diagnostics(phi_r);

    for (const Job& job : jobs) {
      const GLMModel& tuned = job.update == UpdateKind::finetuned ? ft : rt;
      AttackConfig ac = sweep.attack;
      ac.objective = job.objective;
      ac.penalty = job.penalty;
      std::uint64_t pen_bits = 0;
      std::memcpy(&pen_bits, &job.penalty, sizeof pen_bits);
      ac.optimizer.seed = derive_seed(trial_seed, {tag("attack"), tag(job.name), pen_bits,
                                                   static_cast<std::uint64_t>(job.update)});
      AttackContext ctx{map, x, y_delta, base.theta, tuned.theta, phiX, &proj};
      const AttackResult res = optimize_delta(ctx, ac);
      const VectorXd phiXd = map.features(apply_perturbation(x, Perturbation::single(ac.index, res.delta)));
      const GeneralizationMeasure m = measure_pair(base, tuned, job.update, &proj, phiX, phiXd, y, y_delta);

      Record r;
      r["experiment"] = "generalization";
      r["map"] = std::string(to_string(task.map));
      r["N"] = task.N;
      r["n"] = task.n;
      r["d"] = d;
      r["k"] = map.k();
      r["objective"] = job.name;
      r["penalty"] = job.penalty;
      r["update"] = std::string(to_string(job.update));
      r["seed"] = trial_seed;
      r["trial"] = task.trial;
      r["y"] = y;
      r["loss"] = res.loss;
      const double gamma = std::min(m.pair.gamma, 2.0);
      r["gamma"] = gamma;
      r["gamma_raw"] = m.pair.gamma;
      r["err"] = m.pair.err;
      r["reference"] = (2.0 - gamma) * (2.0 - gamma);
      r["chain_bound"] = m.chain_bound;
      r["c_meas"] = m.c_meas;
      r["coefficient"] = m.coefficient;
      r["f_x"] = m.pair.f_x;
      r["f_xd"] = m.pair.f_xd;
      r["tuned_xd"] = m.pair.tuned_xd;
      r["delta_norm"] = res.delta.norm();
      r["lambda_min"] = kd.lambda_min;
      r["robustness"] = std::abs(rt.predict_features(phiXd) - rt.predict_features(phiX));
      r["sqrt_N_over_n"] = std::sqrt(static_cast<double>(task.N) / static_cast<double>(task.n));
      if (sweep.timing) r["wall_time"] = seconds_since(t0);
      results[idx].push_back(std::move(r));
    }
  });
  std::vector<Record> out;
  for (auto& rs : results)
    for (auto& r : rs) out.push_back(std::move(r));
  return out;
}

namespace {
std::string cell(const Record& r, const std::string& key) {
  if (!r.contains(key)) return "";
  const auto& v = r.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) return format_double(v.get<double>());
  return v.dump();
}
}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<Record>& records, const std::vector<std::string>& group_keys,
                                    const std::vector<std::string>& metrics) {
  std::vector<std::vector<std::string>> order;
  std::map<std::vector<std::string>, std::map<std::string, std::vector<double>>> values;
  for (const auto& r : records) {
    std::vector<std::string> g;
    for (const auto& k : group_keys) g.push_back(cell(r, k));
    if (!values.count(g)) order.push_back(g);
    auto& slot = values[g];
    for (const auto& m : metrics)
      if (r.contains(m) && r.at(m).is_number()) slot[m].push_back(r.at(m).get<double>());
  }
  std::vector<AggregateRow> out;
  for (const auto& g : order) {
    for (const auto& m : metrics) {
      auto it = values[g].find(m);
      if (it == values[g].end()) continue;
      const auto& v = it->second;
      AggregateRow row;
      row.group = g;
      row.metric = m;
      row.count = v.size();
      double sum = 0.0;
      for (double x : v) sum += x;
      row.mean = sum / static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - row.mean) * (x - row.mean);
      row.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::string to_jsonl(const std::vector<Record>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

std::string to_csv(const std::vector<AggregateRow>& rows, const std::vector<std::string>& group_keys) {
  std::string out;
  for (const auto& k : group_keys) out += k + ",";
  out += "metric,count,mean,std\n";
  for (const auto& row : rows) {
    for (const auto& g : row.group) out += g + ",";
    out += row.metric + "," + std::to_string(row.count) + "," + format_double(row.mean) + "," +
           format_double(row.std) + "\n";
  }
  return out;
}

std::string sensitivity_plot_data(const std::vector<Record>& records) {
  std::string out = "figure,series,trial,x_name,x,y_name,y\n";
  for (const auto& r : records) {
    const std::string series = cell(r, "map") + "|d=" + cell(r, "d") + "|L=" + cell(r, "L") + "|m=" + cell(r, "m");
    out += "ws_vs_n," + series + "," + cell(r, "trial") + ",n," + cell(r, "n") + ",ratio," + cell(r, "ratio") + "\n";
    if (r.contains("construct_ratio"))
      out += "construct_vs_n," + series + "," + cell(r, "trial") + ",n," + cell(r, "n") + ",ratio," +
             cell(r, "construct_ratio") + "\n";
  }
  return out;
}

std::string generalization_plot_data(const std::vector<Record>& records) {
  std::string out = "figure,series,trial,x_name,x,y_name,y\n";
  for (const auto& r : records) {
    const std::string series = cell(r, "map") + "|N=" + cell(r, "N") + "|n=" + cell(r, "n") + "|" +
                               cell(r, "objective") + "|p=" + cell(r, "penalty") + "|" + cell(r, "update");
    out += "err_vs_gamma," + series + "," + cell(r, "trial") + ",gamma," + cell(r, "gamma") + ",err," +
           cell(r, "err") + "\n";
    out += "robustness," + series + "," + cell(r, "trial") + ",sqrt_N_over_n," + cell(r, "sqrt_N_over_n") +
           ",robustness," + cell(r, "robustness") + "\n";
  }
  for (int t = 0; t <= 40; ++t) {
    const double g = 0.05 * t;
    out += "err_vs_gamma,reference,," + std::string("gamma,") + format_double(g) + ",err," +
           format_double((2.0 - g) * (2.0 - g)) + "\n";
  }
  return out;
}

void write_sweep_outputs(const std::filesystem::path& dir, const std::vector<Record>& records,
                         const std::vector<std::string>& group_keys, const std::vector<std::string>& metrics,
                         const std::string* plot_data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::WriteError, "cannot create " + dir.string());
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    out << body;
    if (!out) throw Error(ErrorCode::WriteError, "write failed for " + (dir / name).string());
  };
  write("records.jsonl", to_jsonl(records));
  write("aggregate.csv", to_csv(aggregate(records, group_keys, metrics), group_keys));
  if (plot_data) write("plot_data.csv", *plot_data);
}

}  // namespace wslab
