// Command line driver: single-shot estimators, GLM utilities and sweeps.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wslab/attack.hpp"
#include "wslab/config.hpp"
#include "wslab/construct.hpp"
#include "wslab/emb_io.hpp"
#include "wslab/error.hpp"
#include "wslab/experiment.hpp"
#include "wslab/glm.hpp"
#include "wslab/linalg.hpp"
#include "wslab/params_io.hpp"
#include "wslab/rng.hpp"
#include "wslab/sensitivity.hpp"

using namespace wslab;
using json = nlohmann::ordered_json;

namespace {

// A subcommand whose every flag mirrors a config key of the same name
// (dashes in flags, underscores in keys).
struct Command {
  CLI::App* app = nullptr;
  std::string section;
  std::vector<std::string> keys;
  std::vector<std::string> switches;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
};

std::string dashed(std::string key) {
  for (char& c : key)
    if (c == '_') c = '-';
  return "--" + key;
}

Command& add_command(CLI::App& root, std::vector<std::unique_ptr<Command>>& all, const std::string& name,
                     const std::string& help, const std::string& section, std::vector<std::string> keys,
                     std::vector<std::string> switches = {}) {
  auto cmd = std::make_unique<Command>();
  cmd->app = root.add_subcommand(name, help);
  cmd->section = section;
  cmd->keys = std::move(keys);
  cmd->switches = std::move(switches);
  cmd->app->add_option("--config", cmd->config_path, "INI-style config file");
  for (const auto& k : cmd->keys) cmd->options[k] = cmd->app->add_option(dashed(k), cmd->values[k]);
  for (const auto& k : cmd->switches) cmd->options[k] = cmd->app->add_flag(dashed(k));
  all.push_back(std::move(cmd));
  return *all.back();
}

// File values, then WSLAB_SEED, then flags.
Config layered_config(const Command& cmd) {
  Config cfg = cmd.config_path.empty() ? Config() : Config::load(cmd.config_path);
  const std::string prefix = cmd.section + ".";
  for (const auto& key : cfg.keys(cmd.section)) {
    const bool known = std::find(cmd.keys.begin(), cmd.keys.end(), key) != cmd.keys.end() ||
                       std::find(cmd.switches.begin(), cmd.switches.end(), key) != cmd.switches.end();
    if (!known) {
      const int line = cfg.line(prefix + key);
      throw Error(ErrorCode::ConfigError, "unknown key '" + key + "' in [" + cmd.section + "]",
                  line > 0 ? std::optional<Index>(line) : std::nullopt);
    }
  }
  if (const char* env = std::getenv("WSLAB_SEED")) cfg.set(prefix + "seed", env);
  for (const auto& k : cmd.keys)
    if (cmd.options.at(k)->count() > 0) cfg.set(prefix + k, cmd.values.at(k));
  for (const auto& k : cmd.switches)
    if (cmd.options.at(k)->count() > 0) cfg.set(prefix + k, "true");
  return cfg;
}

class Reader {
 public:
  Reader(const Config& cfg, std::string section) : cfg_(cfg), sec_(std::move(section)) {}
  std::string str(const std::string& k, const std::string& fb = "") const { return cfg_.get_string(sec_, k, fb); }
  bool has(const std::string& k) const { return cfg_.raw(sec_, k).has_value(); }
  Index idx(const std::string& k, Index fb) const { return static_cast<Index>(cfg_.get_int(sec_, k, fb)); }
  double num(const std::string& k, double fb) const { return cfg_.get_double(sec_, k, fb); }
  std::uint64_t u64(const std::string& k, std::uint64_t fb) const { return cfg_.get_u64(sec_, k, fb); }
  std::string required(const std::string& k) const {
    auto v = cfg_.raw(sec_, k);
    if (!v || v->empty()) throw Error(ErrorCode::ConfigError, "missing required option " + dashed(k));
    return *v;
  }

 private:
  const Config& cfg_;
  std::string sec_;
};

void emit(const Reader& r, const std::string& text) {
  const auto path = r.str("out");
  if (path.empty() || path == "-") {
    std::cout << text << '\n';
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  out << text << '\n';
  if (!out) throw Error(ErrorCode::WriteError, "cannot write " + path);
}

bool is_csv(const std::string& path) { return path.size() >= 4 && path.substr(path.size() - 4) == ".csv"; }

struct Shape {
  Index n;
  Index d;
};

// n and d from flags, else from the data file, else defaults.
Shape resolve_shape(const Reader& r, const std::optional<FeatureMap>& map) {
  Shape s{16, 64};
  const auto data = r.str("data");
  if (!data.empty() && !is_csv(data)) {
    const EmbHeader h = read_emb_header(data);
    s = {static_cast<Index>(h.n), static_cast<Index>(h.d)};
  } else if (!data.empty()) {
    const TokenMatrix x = read_csv_sample(data);
    s = {x.n(), x.d()};
  }
  if (map) {
    s.d = map->input_d();
    if (map->input_n()) s.n = *map->input_n();
  }
  s.n = r.idx("n", s.n);
  s.d = r.idx("d", s.d);
  return s;
}

std::optional<FeatureMap> maybe_params(const Reader& r) {
  if (!r.has("params")) return std::nullopt;
  return read_params(r.str("params"));
}

FeatureMap build_map(const Reader& r, const std::optional<FeatureMap>& loaded, Shape s, std::uint64_t seed) {
  if (loaded) return *loaded;
  const MapKind kind = parse_map_kind(r.str("map", "rf"));
  const Activation act = Activation::parse(r.str("activation", "relu"));
  const Index k = r.idx("k", 512);
  const std::uint64_t ps = derive_seed(seed, {tag("params")});
  FeatureMap map;
  switch (kind) {
    case MapKind::rf: map = FeatureMap(sample_rf(s.n, s.d, k, act, ps)); break;
    case MapKind::drf: {
      std::optional<double> beta;
      if (r.has("beta")) beta = r.num("beta", 0.0);
      map = FeatureMap(sample_drf(s.n, s.d, k, r.idx("L", 1), act, ps, beta));
      break;
    }
    case MapKind::qkv: map = FeatureMap(kind, sample_raf(s.d, ps, r.idx("d_inner", s.d))); break;
    default: map = FeatureMap(kind, sample_raf(s.d, ps)); break;
  }
  if (r.has("save_params")) write_params(r.str("save_params"), map);
  return map;
}

struct Sample {
  TokenMatrix x;
  std::optional<double> y;
};

Sample load_sample(const Reader& r, const std::string& key, Shape s, std::uint64_t seed) {
  const auto path = r.str(key);
  ReadOptions opts{s.n, s.d, true};
  Sample out;
  if (path.empty()) {
    out.x = synth_context(s.n, s.d, derive_seed(seed, {tag("x")}));
  } else if (is_csv(path)) {
    out.x = read_csv_sample(path, opts);
    if (auto l = read_csv_label(path)) out.y = *l;
  } else {
    const LabeledDataset data = read_emb(path, opts);
    const Index i = r.idx("sample", 0);
    if (i < 0 || i >= static_cast<Index>(data.samples.size()))
      throw Error(ErrorCode::IndexOutOfRange, "sample index outside the data file", i);
    out.x = data.samples[i];
    if (data.labeled()) out.y = data.labels[i];
  }
  if (r.has("y")) out.y = r.num("y", 1.0);
  return out;
}

PGAConfig read_pga(const Reader& r, std::uint64_t seed, PGAConfig pga) {
  pga.iterations = static_cast<int>(r.idx("iterations", pga.iterations));
  pga.restarts = static_cast<int>(r.idx("restarts", pga.restarts));
  pga.step_size = r.num("step_size", pga.step_size);
  pga.init_scale = r.num("init_scale", pga.init_scale);
  pga.index = r.idx("index", 0);
  const auto mode = r.str("index_mode", "fixed");
  if (mode == "sweep_all") {
    pga.index_mode = IndexMode::sweep_all;
  } else if (mode != "fixed") {
    throw Error(ErrorCode::ConfigError, "index_mode must be fixed or sweep_all");
  }
  pga.seed = derive_seed(seed, {tag("pga")});
  pga.validate();
  return pga;
}

const std::vector<std::string> kMapKeys{"map", "n", "d", "k", "L", "activation", "beta", "d_inner", "seed",
                                        "params", "save_params"};
const std::vector<std::string> kPgaKeys{"index", "index_mode", "iterations", "restarts", "step_size", "init_scale"};

std::vector<std::string> join(std::initializer_list<std::vector<std::string>> parts) {
  std::vector<std::string> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

int cmd_ws_estimate(const Command& cmd) {
  const Config cfg = layered_config(cmd);
  const Reader r(cfg, cmd.section);
  const std::uint64_t seed = r.u64("seed", 0);
  const auto loaded = maybe_params(r);
  const Shape s = resolve_shape(r, loaded);
  const FeatureMap map = build_map(r, loaded, s, seed);
  const Sample smp = load_sample(r, "data", s, seed);
  const PGAConfig pga = read_pga(r, seed, PGAConfig{});
  const Index m = r.idx("words", 1);
  const SensitivityEstimate est = m == 1 ? estimate_ws(map, smp.x, pga) : estimate_ws_multi(map, smp.x, m, pga);
  emit(r, to_json(est, map, smp.x, seed));
  return 0;
}

int cmd_ws_construct(const Command& cmd) {
  const Config cfg = layered_config(cmd);
  const Reader r(cfg, cmd.section);
  const std::uint64_t seed = r.u64("seed", 0);
  const auto loaded = maybe_params(r);
  Shape s = resolve_shape(r, loaded);
  Config with_map = cfg;
  if (!r.has("map")) with_map.set(cmd.section + ".map", "raf");
  const Reader rm(with_map, cmd.section);
  const FeatureMap map = build_map(rm, loaded, s, seed);
  if (!is_attention(map.kind())) throw Error(ErrorCode::ConfigError, "ws-construct needs an attention map");
  if (s.n > s.d) std::cerr << "warning: n > d, the construction is outside its intended regime\n";
  const Sample smp = load_sample(r, "data", s, seed);
  ConstructConfig cc;
  cc.sphere_samples = static_cast<int>(r.idx("sphere_samples", cc.sphere_samples));
  cc.tau = r.num("tau", cc.tau);
  cc.target_fraction = r.num("target_fraction", cc.target_fraction);
  cc.lift_cap = r.num("lift_cap", cc.lift_cap);
  cc.concentration_eps = r.num("concentration_eps", cc.concentration_eps);
  cc.seed = derive_seed(seed, {tag("construct")});
  cc.validate();
  emit(r, to_json(construct_perturbation(map.raf(), map.kind(), smp.x, r.idx("index", 0), cc)));
  return 0;
}

struct Training {
  FeatureMatrix phi;
  VectorXd Y;
};

Training load_training(const Reader& r, const FeatureMap& map, Shape s, std::uint64_t seed, int jobs) {
  Training t;
  std::vector<TokenMatrix> samples;
  const auto path = r.str("train");
  if (!path.empty()) {
    LabeledDataset data = read_emb(path, ReadOptions{s.n, s.d, true});
    if (!data.labeled()) throw Error(ErrorCode::DimMismatch, "training file has no labels");
    samples = std::move(data.samples);
    t.Y.resize(static_cast<Index>(samples.size()));
    for (Index i = 0; i < t.Y.size(); ++i) t.Y[i] = data.labels[i];
  } else {
    const Index N = r.idx("N", 64);
    if (N < 1) throw Error(ErrorCode::ConfigError, "N must be positive");
    Rng lab = make_rng(seed, {tag("labels")});
    std::bernoulli_distribution coin(0.5);
    t.Y.resize(N);
    for (Index i = 0; i < N; ++i) {
      samples.push_back(synth_context(s.n, s.d, derive_seed(seed, {tag("train"), static_cast<std::uint64_t>(i)})));
      t.Y[i] = coin(lab) ? 1.0 : -1.0;
    }
  }
  t.phi = feature_matrix(map, samples, jobs);
  return t;
}

json model_summary(const GLMModel& model) {
  json j;
  j["p"] = model.p();
  j["theta_norm"] = model.theta.norm();
  j["fingerprint"] = model.map.fingerprint();
  return j;
}

int cmd_glm_train(const Command& cmd) {
  const Config cfg = layered_config(cmd);
  const Reader r(cfg, cmd.section);
  const std::uint64_t seed = r.u64("seed", 0);
  const auto loaded = maybe_params(r);
  Config shaped = cfg;
  if (!r.has("data") && r.has("train")) shaped.set(cmd.section + ".data", r.str("train"));
  const Shape s = resolve_shape(Reader(shaped, cmd.section), loaded);
  const FeatureMap map = build_map(r, loaded, s, seed);
  const Training t = load_training(r, map, s, seed, static_cast<int>(r.idx("jobs", 1)));
  const GLMModel model = fit(map, t.phi, t.Y);
  write_glm(r.required("model_out"), model);
  json j = model_summary(model);
  j["N"] = t.phi.N();
  j["train_residual"] = (t.phi.phi * model.theta - t.Y).norm();
  const KernelDiagnostics kd = kernel_diagnostics(t.phi);
  j["lambda_min"] = kd.lambda_min;
  j["lambda_max"] = kd.lambda_max;
  emit(r, j.dump());
  return 0;
}

struct Loaded {
  FeatureMap map;
  GLMModel model;
  Shape shape;
};

Loaded load_model(const Reader& r) {
  Loaded l;
  l.map = read_params(r.required("params"));
  l.model = read_glm(r.required("model"), l.map);
  l.shape = {l.map.input_n().value_or(r.idx("n", 16)), l.map.input_d()};
  return l;
}

double require_label(const Sample& s) {
  if (!s.y) throw Error(ErrorCode::ConfigError, "the sample has no label; pass --y");
  if (*s.y != 1.0 && *s.y != -1.0) throw Error(ErrorCode::ConfigError, "labels must be +1 or -1");
  return *s.y;
}

int cmd_glm_update(const Command& cmd, UpdateKind update) {
  const Config cfg = layered_config(cmd);
  const Reader r(cfg, cmd.section);
  const std::uint64_t seed = r.u64("seed", 0);
  const Loaded l = load_model(r);
  const Sample smp = load_sample(r, "data", l.shape, seed);
  const double y = require_label(smp);
  const VectorXd phiX = l.map.features(smp.x);
  GLMModel tuned;
  if (update == UpdateKind::finetuned) {
    tuned = finetune(l.model, phiX, y);
  } else {
    const Training t = load_training(r, l.map, l.shape, seed, static_cast<int>(r.idx("jobs", 1)));
    tuned = retrain(l.model, t.phi, t.Y, phiX, y);
  }
  write_glm(r.required("model_out"), tuned);
  json j = model_summary(tuned);
  j["y"] = y;
  j["f_before"] = l.model.predict_features(phiX);
  j["f_after"] = tuned.predict_features(phiX);
  emit(r, j.dump());
  return 0;
}

int cmd_attack(const Command& cmd) {
  const Config cfg = layered_config(cmd);
  const Reader r(cfg, cmd.section);
  const std::uint64_t seed = r.u64("seed", 0);
  const Loaded l = load_model(r);
  const Sample smp = load_sample(r, "data", l.shape, seed);
  const double y = require_label(smp);
  const double y_delta = r.num("y_delta", -y);
  const VectorXd phiX = l.map.features(smp.x);

  AttackConfig ac;
  bool pen = false;
  ac.objective = parse_objective(r.str("objective", "err"), &pen);
  ac.penalty = r.num("penalty", pen ? 0.1 : 0.0);
  ac.optimizer = read_pga(r, seed, ac.optimizer);
  ac.index = ac.optimizer.index;
  const UpdateKind update = r.has("update") ? parse_update(r.str("update")) : default_update(ac.objective);

  std::optional<ResidualProjector> proj;
  GLMModel tuned;
  if (update == UpdateKind::retrained || ac.objective == AttackObjective::rt_align) {
    const Training t = load_training(r, l.map, l.shape, seed, static_cast<int>(r.idx("jobs", 1)));
    proj.emplace(t.phi.phi);
    tuned = update == UpdateKind::retrained ? retrain(l.model, t.phi, t.Y, phiX, y) : finetune(l.model, phiX, y);
  } else {
    tuned = finetune(l.model, phiX, y);
  }
  const AttackContext ctx{l.map, smp.x, y_delta, l.model.theta, tuned.theta, phiX, proj ? &*proj : nullptr};
  const AttackResult res = optimize_delta(ctx, ac);
  const VectorXd phiXd = l.map.features(apply_perturbation(smp.x, Perturbation::single(ac.index, res.delta)));
  const GeneralizationMeasure m =
      measure_pair(l.model, tuned, update, proj ? &*proj : nullptr, phiX, phiXd, y, y_delta);

  json j;
  j["objective"] = std::string(to_string(ac.objective));
  j["penalty"] = ac.penalty;
  j["update"] = std::string(to_string(update));
  j["index"] = ac.index;
  j["loss"] = res.loss;
  j["restart"] = res.restart;
  j["gamma"] = m.pair.gamma;
  j["err"] = m.pair.err;
  j["coefficient"] = m.coefficient;
  j["chain_bound"] = m.chain_bound;
  j["reference"] = m.reference;
  j["delta"] = encode_vector(res.delta);
  emit(r, j.dump());
  return 0;
}

int cmd_sweep(const Command& cmd, bool sensitivity) {
  const Config cfg = layered_config(cmd);
  const Reader r(cfg, cmd.section);
  const bool plot = cfg.get_bool(cmd.section, "plot_data", false);
  const std::string out = r.str("out", sensitivity ? "sensitivity_out" : "generalization_out");
  std::vector<Record> records;
  std::string plot_text;
  if (sensitivity) {
    const auto sweep = SensitivitySweep::from_config(cfg);
    for (Index n : sweep.n)
      for (Index d : sweep.d)
        if (n > d) std::cerr << "warning: n=" << n << " > d=" << d << '\n';
    records = run_sensitivity_sweep(sweep);
    if (plot) plot_text = sensitivity_plot_data(records);
    write_sweep_outputs(out, records, kSensitivityGroup, kSensitivityMetrics, plot ? &plot_text : nullptr);
  } else {
    records = run_generalization_sweep(GeneralizationSweep::from_config(cfg));
    if (plot) plot_text = generalization_plot_data(records);
    write_sweep_outputs(out, records, kGeneralizationGroup, kGeneralizationMetrics, plot ? &plot_text : nullptr);
  }
  std::cerr << records.size() << " records written to " << out << '\n';
  return 0;
}

int cmd_fmt_inspect(const std::string& path, bool all) {
  const EmbHeader h = read_emb_header(path);
  json j;
  j["magic"] = "EMB1";
  j["version"] = h.version;
  j["count"] = h.count;
  j["n"] = h.n;
  j["d"] = h.d;
  j["labels"] = h.has_labels();
  if (all) {
    const LabeledDataset data = read_emb(path);
    json samples = json::array();
    for (std::size_t s = 0; s < data.samples.size(); ++s) {
      const auto norms = data.samples[s].values().rowwise().norm();
      json e;
      e["sample"] = s;
      if (data.labeled()) e["label"] = data.labels[s];
      e["min_row_norm"] = norms.minCoeff();
      e["max_row_norm"] = norms.maxCoeff();
      e["normalized"] = data.samples[s].normalized();
      samples.push_back(e);
    }
    j["samples"] = samples;
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Word-sensitivity experiments for random-feature and attention maps"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> cmds;
  const auto sample_keys = std::vector<std::string>{"data", "sample", "y", "out"};

  auto& est = add_command(app, cmds, "ws-estimate", "estimate the word sensitivity of one context", "ws-estimate",
                          join({kMapKeys, kPgaKeys, sample_keys, {"words"}}));
  auto& con = add_command(app, cmds, "ws-construct", "build the constructive attention perturbation", "ws-construct",
                          join({kMapKeys, sample_keys,
                                {"index", "sphere_samples", "tau", "target_fraction", "lift_cap", "concentration_eps"}}));
  auto& train = add_command(app, cmds, "glm-train", "fit the minimum-norm GLM", "glm-train",
                            join({kMapKeys, {"train", "N", "model_out", "jobs", "out"}}));
  auto& ft = add_command(app, cmds, "glm-finetune", "fine-tune a model on one labeled sample", "glm-finetune",
                         join({{"params", "model", "model_out", "seed", "n"}, sample_keys}));
  auto& rt = add_command(app, cmds, "glm-retrain", "retrain a model on its data plus one sample", "glm-retrain",
                         join({{"params", "model", "model_out", "seed", "n", "train", "N", "jobs"}, sample_keys}));
  auto& atk = add_command(app, cmds, "attack", "search a perturbation that flips the updated model", "attack",
                          join({{"params", "model", "seed", "n", "train", "N", "jobs", "objective", "penalty",
                                 "update", "y_delta"},
                                kPgaKeys, sample_keys}));
  const std::vector<std::string> sweep_common{"seed", "maps", "n", "d", "k", "activation", "trials", "data",
                                              "jobs", "out"};
  auto& sws = add_command(app, cmds, "sweep-sensitivity", "word-sensitivity sweep over a grid", "sensitivity",
                          join({sweep_common, kPgaKeys,
                                {"L", "words", "construct", "sphere_samples", "tau", "lift_cap",
                                 "concentration_eps"}}),
                          {"plot_data", "timing"});
  auto& swg = add_command(app, cmds, "sweep-generalization", "fine-tune / retrain generalization sweep",
                          "generalization",
                          join({sweep_common, kPgaKeys, {"N", "objectives", "penalties", "update_mode"}}),
                          {"plot_data", "timing"});
  auto* inspect = app.add_subcommand("fmt-inspect", "print an EMB1 header");
  std::string inspect_path;
  bool inspect_all = false;
  inspect->add_option("file", inspect_path)->required();
  inspect->add_flag("--samples", inspect_all, "also summarize every sample");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (est.app->parsed()) return cmd_ws_estimate(est);
    if (con.app->parsed()) return cmd_ws_construct(con);
    if (train.app->parsed()) return cmd_glm_train(train);
    if (ft.app->parsed()) return cmd_glm_update(ft, UpdateKind::finetuned);
    if (rt.app->parsed()) return cmd_glm_update(rt, UpdateKind::retrained);
    if (atk.app->parsed()) return cmd_attack(atk);
    if (sws.app->parsed()) return cmd_sweep(sws, true);
    if (swg.app->parsed()) return cmd_sweep(swg, false);
    if (inspect->parsed()) return cmd_fmt_inspect(inspect_path, inspect_all);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 2;
}
