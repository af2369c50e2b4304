#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "oracles.hpp"
#include "wslab/emb_io.hpp"
#include "wslab/error.hpp"
#include "wslab/experiment.hpp"

using namespace wslab;

namespace {

SensitivitySweep tiny_sensitivity() {
  const Config cfg = Config::parse(
      "[sensitivity]\nmaps = rf, raf, drf\nn = 4, 8\nd = 16\nL = 2\nk = 32\ntrials = 2\n"
      "iterations = 15\nrestarts = 2\nsphere_samples = 32\nseed = 3\n");
  return SensitivitySweep::from_config(cfg);
}

GeneralizationSweep tiny_generalization() {
  const Config cfg = Config::parse(
      "[generalization]\nmaps = rf, raf\nN = 6\nn = 4\nd = 8\nk = 48\ntrials = 2\n"
      "objectives = err, ft_align, rt_pen\npenalties = 0.5\niterations = 15\nrestarts = 2\nseed = 4\n");
  return GeneralizationSweep::from_config(cfg);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + WSLAB_CLI_PATH + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cli_output(const std::string& args, const std::string& env = "") {
  const auto out = oracle::temp_path("cli_out.json");
  run_cli(args + " --out " + out.string(), env);
  return slurp(out);
}

}  // namespace

TEST(RunIndexed, CoversEveryIndexAndRethrowsLowestFailure) {
  std::vector<int> hits(50, 0);
  run_indexed(50, 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) EXPECT_EQ(h, 1);
  try {
    run_indexed(20, 3, [](std::size_t i) {
      if (i == 7 || i == 13) throw Error(ErrorCode::NumericalFailure, "boom", static_cast<std::int64_t>(i));
    });
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.index().value(), 7);
  }
}

TEST(SensitivitySweep, DeterministicAcrossJobCounts) {
  SensitivitySweep s = tiny_sensitivity();
  const auto a = to_jsonl(run_sensitivity_sweep(s));
  s.jobs = 3;
  const auto b = to_jsonl(run_sensitivity_sweep(s));
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a.empty());
}

TEST(SensitivitySweep, RecordsCarryConfig) {
  const auto records = run_sensitivity_sweep(tiny_sensitivity());
  ASSERT_EQ(records.size(), 3u * 2u * 2u);
  for (const auto& r : records) {
    for (const char* key : {"map", "n", "d", "k", "L", "m", "seed", "trial", "ratio"}) EXPECT_TRUE(r.contains(key));
    EXPECT_FALSE(r.contains("wall_time"));
    EXPECT_GT(r["ratio"].get<double>(), 0.0);
    if (r["map"] == "raf") {
      EXPECT_TRUE(r.contains("construct_ratio"));
    }
    if (r["map"] == "drf") {
      EXPECT_EQ(r["L"], 2);
    }
  }
}

TEST(SensitivitySweep, AggregatesRecomputable) {
  const auto records = run_sensitivity_sweep(tiny_sensitivity());
  const auto rows = aggregate(records, kSensitivityGroup, kSensitivityMetrics);
  for (const auto& row : rows) {
    std::vector<double> v;
    for (const auto& r : records) {
      bool match = true;
      for (std::size_t g = 0; g < kSensitivityGroup.size(); ++g) {
        const auto& cell = r[kSensitivityGroup[g]];
        match = match && (cell.is_string() ? cell.get<std::string>() : cell.dump()) == row.group[g];
      }
      if (match && r.contains(row.metric)) v.push_back(r[row.metric].get<double>());
    }
    ASSERT_EQ(v.size(), row.count);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(row.mean, mean, 1e-12);
    EXPECT_NEAR(row.std, std::sqrt(ss / static_cast<double>(v.size() - 1)), 1e-12);
  }
  const std::string csv = to_csv(rows, kSensitivityGroup);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "map,n,d,k,L,m,metric,count,mean,std");
}

TEST(SensitivitySweep, AcceptsFigureGridsAndRejectsBadValues) {
  const Config ok = Config::parse("[sensitivity]\nd = 192, 384, 768\n");
  EXPECT_EQ(SensitivitySweep::from_config(ok).d, (std::vector<Index>{192, 384, 768}));
  const Config bad = Config::parse("[sensitivity]\nn = 8\nmaps = rf, lstm\n");
  EXPECT_THROW(SensitivitySweep::from_config(bad), Error);
  try {
    SensitivitySweep::from_config(Config::parse("[sensitivity]\n\nk = lots\n"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
    EXPECT_EQ(e.index().value(), 3);
  }
}

TEST(SensitivitySweep, ReadsEmbData) {
  LabeledDataset ds;
  for (std::uint64_t s = 0; s < 3; ++s) ds.samples.push_back(synth_context(10, 20, s));
  const auto path = oracle::temp_path("sweep.emb");
  write_emb(path, ds);
  SensitivitySweep s = tiny_sensitivity();
  s.maps = {MapKind::rf};
  s.d = {12};
  s.data = path;
  const auto records = run_sensitivity_sweep(s);
  EXPECT_EQ(records.size(), 4u);
  s.d = {24};
  EXPECT_THROW(run_sensitivity_sweep(s), Error);
}

TEST(GeneralizationSweep, RecordsAreWellFormed) {
  GeneralizationSweep g = tiny_generalization();
  const auto records = run_generalization_sweep(g);
  // err, ft_align and rt_pen with one penalty, per trial and map.
  EXPECT_EQ(records.size(), 2u * 2u * 3u);
  for (const auto& r : records) {
    const double gamma = r["gamma"].get<double>();
    EXPECT_GE(gamma, 0.0);
    EXPECT_LE(gamma, 2.0);
    EXPECT_GE(r["err"].get<double>(), 0.0);
    EXPECT_GE(r["err"].get<double>(), r["chain_bound"].get<double>() - 1e-9);
    EXPECT_TRUE(r.contains("robustness"));
    EXPECT_NEAR(r["sqrt_N_over_n"].get<double>(), std::sqrt(6.0 / 4.0), 1e-15);
  }
  g.jobs = 2;
  EXPECT_EQ(to_jsonl(run_generalization_sweep(g)), to_jsonl(records));
  const std::string plot = generalization_plot_data(records);
  EXPECT_NE(plot.find("err_vs_gamma,reference"), std::string::npos);
}

TEST(GeneralizationSweep, AcceptsFigureGrids) {
  const Config cfg = Config::parse("[generalization]\nN = 100, 700, 1300\nn = 40, 120\nd = 768\nupdate_mode = both\n");
  const GeneralizationSweep g = GeneralizationSweep::from_config(cfg);
  EXPECT_EQ(g.N, (std::vector<Index>{100, 700, 1300}));
  EXPECT_EQ(g.n, (std::vector<Index>{40, 120}));
  EXPECT_THROW(GeneralizationSweep::from_config(Config::parse("[generalization]\nupdate_mode = sometimes\n")), Error);
  EXPECT_THROW(GeneralizationSweep::from_config(Config::parse("[generalization]\npenalties = -1\n")), Error);
}

TEST(Outputs, WrittenFilesAreByteStable) {
  const auto records = run_sensitivity_sweep(tiny_sensitivity());
  const auto plot = sensitivity_plot_data(records);
  const auto d1 = oracle::temp_path("out1"), d2 = oracle::temp_path("out2");
  write_sweep_outputs(d1, records, kSensitivityGroup, kSensitivityMetrics, &plot);
  write_sweep_outputs(d2, run_sensitivity_sweep(tiny_sensitivity()), kSensitivityGroup, kSensitivityMetrics, &plot);
  for (const char* f : {"records.jsonl", "aggregate.csv", "plot_data.csv"}) EXPECT_EQ(slurp(d1 / f), slurp(d2 / f));
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run_cli("ws-estimate --n 4 --d 8 --k 16 --iterations 5 --restarts 1"), 0);
  EXPECT_EQ(run_cli("ws-estimate --map nonsense"), 2);
  EXPECT_EQ(run_cli("no-such-command"), 2);
  const auto bad = oracle::temp_path("bad_magic.emb");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "XEMB0000000000000000000000000000000000";
  }
  EXPECT_EQ(run_cli("fmt-inspect " + bad.string()), 3);
  EXPECT_EQ(run_cli("ws-estimate --n 4 --d 8 --index 9 --iterations 5 --restarts 1"), 3);
  const auto cfg = oracle::temp_path("bad.ini");
  {
    std::ofstream out(cfg);
    out << "[sensitivity]\nn = 4\nfrobnicate = 1\n";
  }
  EXPECT_EQ(run_cli("sweep-sensitivity --config " + cfg.string()), 2);
}

TEST(Cli, SeedLayering) {
  const std::string base = "ws-estimate --n 4 --d 8 --k 16 --iterations 5 --restarts 1";
  const auto cfg = oracle::temp_path("seed.ini");
  {
    std::ofstream out(cfg);
    out << "[ws-estimate]\nseed = 11\n";
  }
  const auto from_file = cli_output(base + " --config " + cfg.string());
  EXPECT_NE(from_file.find("\"seed\":11"), std::string::npos);
  const auto from_env = cli_output(base + " --config " + cfg.string(), "WSLAB_SEED=12");
  EXPECT_NE(from_env.find("\"seed\":12"), std::string::npos);
  const auto from_flag = cli_output(base + " --config " + cfg.string() + " --seed 13", "WSLAB_SEED=12");
  EXPECT_NE(from_flag.find("\"seed\":13"), std::string::npos);
}

TEST(Cli, GlmWorkflow) {
  const auto dir = oracle::temp_path("glm_flow");
  std::filesystem::create_directories(dir);
  const std::string prm = (dir / "m.prm").string(), glm = (dir / "m.glm").string(), ft = (dir / "ft.glm").string();
  ASSERT_EQ(run_cli("glm-train --n 4 --d 6 --k 40 --N 10 --save-params " + prm + " --model-out " + glm), 0);
  ASSERT_EQ(run_cli("glm-finetune --params " + prm + " --model " + glm + " --y 1 --model-out " + ft), 0);
  ASSERT_EQ(run_cli("glm-retrain --params " + prm + " --model " + glm + " --N 10 --y -1 --model-out " + ft), 0);
  ASSERT_EQ(run_cli("attack --params " + prm + " --model " + glm + " --y 1 --objective ft_align --iterations 10 "
                    "--restarts 1"), 0);
  ASSERT_EQ(run_cli("attack --params " + prm + " --model " + glm + " --N 10 --y 1 --objective rt_pen --penalty 0.1 "
                    "--iterations 10 --restarts 1"), 0);
  EXPECT_EQ(run_cli("glm-finetune --params " + prm + " --model " + glm + " --model-out " + ft), 2);
}

TEST(Cli, SweepOutputsAreByteIdentical) {
  const auto cfg = oracle::temp_path("sweep.ini");
  {
    std::ofstream out(cfg);
    out << "[sensitivity]\nmaps = rf, relu_raf\nn = 4, 8\nd = 16\nk = 32\ntrials = 2\niterations = 10\n"
           "restarts = 1\nsphere_samples = 16\n";
  }
  const auto a = oracle::temp_path("cli_sweep_a"), b = oracle::temp_path("cli_sweep_b");
  ASSERT_EQ(run_cli("sweep-sensitivity --config " + cfg.string() + " --plot-data --out " + a.string()), 0);
  ASSERT_EQ(run_cli("sweep-sensitivity --config " + cfg.string() + " --plot-data --jobs 2 --out " + b.string()), 0);
  for (const char* f : {"records.jsonl", "aggregate.csv", "plot_data.csv"}) {
    EXPECT_FALSE(slurp(a / f).empty());
    EXPECT_EQ(slurp(a / f), slurp(b / f));
  }
}
