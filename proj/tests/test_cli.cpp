#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "boostformer/experiment.hpp"
#include "doctest.h"

using namespace boostformer;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "boostformer_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kTinyConfig = R"({
  "data": {"synthetic": {"vocab_size": 40, "min_length": 6, "max_length": 10,
                          "n_train": 64, "n_test": 32, "seed": 2}},
  "seed": 4,
  "timing": false,
  "vanilla_epochs": 2,
  "ensemble": {"rounds": 2},
  "transformer": {"layers": 1, "heads": 2, "d_model": 8, "d_ff": 16, "max_len": 16, "dropout": 0.0},
  "optimizer": {"epochs": 1, "learning_rate": 0.003}
})";

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli run(std::vector<std::string> args) {
  args.insert(args.begin(), "boostformer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Cli r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

MetricsRow row(const std::string& variant, int step, double test_acc, double elapsed = 0.0) {
  return MetricsRow{variant, step, 0.5, test_acc, 1.0, elapsed};
}

}  // namespace

TEST_CASE("config parsing") {
  const RunConfig c = parse_run_config(nlohmann::json::parse(kTinyConfig));
  CHECK(c.seed == 4u);
  CHECK(c.ensemble.rounds == 2);
  CHECK(c.transformer.d_model == 8);
  CHECK(c.data.synthetic->n_train == 64);
  CHECK_FALSE(c.timing);

  auto with = [](const std::string& patch) {
    nlohmann::json j = nlohmann::json::parse(kTinyConfig);
    j.merge_patch(nlohmann::json::parse(patch));
    return j;
  };
  CHECK_THROWS_AS(parse_run_config(with(R"({"ensemble": {"roundz": 3}})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(with(R"({"bogus": 1})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(with(R"({"variant": "turbo"})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(with(R"({"optimizer": {"learning_rate": "fast"}})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(with(R"({"transformer": {"precision": "half"}})")), ConfigError);
  CHECK_THROWS_AS(parse_run_config(nlohmann::json::parse(R"({"seed": 1})")), ConfigError);

  nlohmann::json unseeded = nlohmann::json::parse(kTinyConfig);
  unseeded.erase("seed");
  const RunConfig u = parse_run_config(unseeded);
  const PreparedData data = prepare_data(u.data, u.transformer.max_len);
  CHECK_THROWS_AS(make_run_options(u, data), ConfigError);
}

TEST_CASE("metrics files") {
  const std::vector<MetricsRow> rows{row("boost", 1, 0.75, 1.25), row("boost", 2, 0.8125, 2.5)};
  const std::string text = format_metrics(rows);
  CHECK(text.rfind("variant,step,train_acc,test_acc,risk,elapsed_s\n", 0) == 0);
  CHECK(text.find("boost,1,0.500000,0.750000,1.000000,1.250\n") != std::string::npos);
  const auto parsed = parse_metrics(text, "mem");
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[1].test_acc == 0.8125);
  CHECK_THROWS_AS(parse_metrics("a,b\n", "mem"), DataError);
  CHECK_THROWS_AS(parse_metrics(std::string(kMetricsHeader) + "\nboost,1,x,0,0,0\n", "mem"), DataError);
}

TEST_CASE("plot data") {
  CHECK(epoch_axis(Variant::Boost, 3, 5) == 15);
  CHECK(epoch_axis(Variant::IsBoost, 0, 5) == 5);
  CHECK(epoch_axis(Variant::Vanilla, 7, 5) == 7);

  std::vector<MetricsRow> baseline;
  for (int e = 1; e <= 30; ++e) baseline.push_back(row("vanilla", e, 0.5 + 0.01 * e));
  SUBCASE("identical to the baseline") {
    const std::vector<std::vector<MetricsRow>> runs{baseline};
    for (const auto& p : plot_points(baseline, runs, 5))
      if (p.series == "relative") CHECK(p.value == doctest::Approx(0.0));
  }
  SUBCASE("relative accuracy and improvement") {
    std::vector<MetricsRow> flat(30, row("vanilla", 0, 0.80));
    for (int e = 0; e < 30; ++e) flat[static_cast<std::size_t>(e)].step = e + 1;
    const std::vector<std::vector<MetricsRow>> runs{{row("boost", 1, 0.85), row("boost", 2, 0.9)}};
    const auto points = plot_points(flat, runs, 5);
    REQUIRE(points.size() == 4);
    CHECK(points[0].series == "relative");
    CHECK(points[0].epoch == 5);
    CHECK(points[0].value == doctest::Approx(0.05));
    CHECK(points[3].series == "improvement");
    CHECK(points[3].value == doctest::Approx(0.05));
  }
  SUBCASE("interpolation between baseline epochs") {
    const std::vector<MetricsRow> sparse{row("vanilla", 4, 0.6), row("vanilla", 6, 0.7)};
    const std::vector<std::vector<MetricsRow>> runs{{row("boost", 1, 0.7)}};
    CHECK(plot_points(sparse, runs, 5).front().value == doctest::Approx(0.05));
  }
}

TEST_CASE("timing table") {
  const std::vector<TimingEntry> entries{{"synthetic", {row("boost", 1, 0.9, 5.0), row("boost", 2, 0.9, 12.3)}},
                                         {"synthetic", {row("is-boost", 0, 0.9, 4.0)}}};
  const std::string table = timing_table(entries);
  CHECK(table ==
        "dataset,vanilla,subseq-vanilla,boost,subseq-boost,is-boost,subseq-is-boost\n"
        "synthetic,-,-,12.3,-,4.0,-\n");
  CHECK_THROWS_AS(timing_table({}), ConfigError);
}

TEST_CASE("verification suite") {
  VerifyOptions options;
  options.instances = 6;
  options.draws = 20000;
  const VerifyOutcome good = run_verification(options);
  CHECK(good.passed);
  CHECK(good.report["failing_instances"].empty());
  options.corrupt_closed_form = true;
  const VerifyOutcome bad = run_verification(options);
  CHECK_FALSE(bad.passed);
  CHECK_FALSE(bad.report["failing_instances"].empty());
  CHECK(bad.report["failing_instances"][0].contains("scores"));
}

TEST_CASE("command line") {
  const fs::path dir = scratch("cli");
  const fs::path config = dir / "tiny.json";
  std::ofstream(config) << kTinyConfig;

  SUBCASE("exit codes") {
    CHECK(run({}).code == 2);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"train"}).code == 2);
    CHECK(run({"train", "--config", (dir / "missing.json").string()}).code == 2);
    CHECK(run({"train", "--config", config.string(), "--variant", "turbo"}).code == 2);
    CHECK(run({"verify", "--instances", "3", "--draws", "5000"}).code == 0);
    CHECK(run({"verify", "--instances", "3", "--draws", "5000", "--corrupt-closed-form"}).code == 4);
    CHECK(run({"eval", "--model", (dir / "none.bfm").string(), "--config", config.string()}).code == 2);
    CHECK(run({"timing"}).code == 2);
  }

  SUBCASE("train, eval and importance") {
    const fs::path out = dir / "run";
    const Cli t = run({"train", "--config", config.string(), "--variant", "subseq-boost", "--out", out.string(),
                       "--quiet"});
    REQUIRE(t.code == 0);
    const auto metrics = read_metrics(out / "metrics_subseq-boost.csv");
    CHECK(metrics.size() == 3);
    CHECK_FALSE(fs::exists(out / "metrics_subseq-boost.csv.tmp"));

    const Cli e = run({"eval", "--model", (out / "model_subseq-boost.bfm").string(), "--config", config.string()});
    REQUIRE(e.code == 0);
    const auto report = nlohmann::json::parse(e.out);
    CHECK(report["accuracy"].get<double>() == doctest::Approx(metrics.back().test_acc).epsilon(1e-12));
    CHECK(report["confusion"].size() == 2);

    const Cli i = run({"importance", "--model", (out / "model_subseq-boost.bfm").string(), "--config",
                       config.string(), "--stage", "1"});
    REQUIRE(i.code == 0);
    CHECK(i.out.rfind("token_id,token_string,score,kept\n", 0) == 0);
    CHECK(run({"importance", "--model", (out / "model_subseq-boost.bfm").string(), "--config", config.string(),
               "--stage", "9"})
              .code == 2);
  }

  SUBCASE("flags override the config file") {
    const fs::path out = dir / "flags";
    REQUIRE(run({"train", "--config", config.string(), "--out", out.string(), "--rounds", "1", "--quiet"}).code == 0);
    CHECK(read_metrics(out / "metrics_boost.csv").size() == 1);
  }

  SUBCASE("the environment overrides the configured output directory") {
    const fs::path env_dir = dir / "from_env";
    ::setenv(kOutputDirEnv, env_dir.string().c_str(), 1);
    const Cli t = run({"train", "--config", config.string(), "--variant", "vanilla", "--quiet"});
    ::unsetenv(kOutputDirEnv);
    REQUIRE(t.code == 0);
    CHECK(fs::exists(env_dir / "metrics_vanilla.csv"));
  }

  SUBCASE("same seed, same bytes") {
    for (const char* variant : {"boost", "subseq-is-boost", "subseq-vanilla"}) {
      const fs::path a = dir / "a", b = dir / "b";
      REQUIRE(run({"train", "--config", config.string(), "--variant", variant, "--out", a.string(), "--quiet"}).code == 0);
      REQUIRE(run({"train", "--config", config.string(), "--variant", variant, "--out", b.string(), "--quiet"}).code == 0);
      const std::string name = std::string("metrics_") + variant + ".csv";
      CHECK(slurp(a / name) == slurp(b / name));
      const std::string model = std::string("model_") + variant + ".bfm";
      CHECK(slurp(a / model) == slurp(b / model));
    }
  }
}
