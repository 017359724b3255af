#pragma once

// Run configuration, metrics files, figure/table data, the randomized
// verification suite, and the command-line entry point shared by the
// `boostformer` executable and the tests.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "boostformer/booster.hpp"
#include "boostformer/oracle.hpp"
#include "json.hpp"

namespace boostformer {

/// Environment variable that overrides the configured output directory.
inline constexpr const char* kOutputDirEnv = "BOOSTFORMER_OUTPUT_DIR";

struct DataConfig {
  std::optional<SyntheticSpec> synthetic;  // takes precedence over files
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  CorpusFormat format = CorpusFormat::Jsonl;
  int num_classes = 0;  // 0: inferred from the largest label
  int min_freq = 1;
  std::size_t max_vocab = 0;  // 0: unlimited
};

struct RunConfig {
  DataConfig data;
  Variant variant = Variant::Boost;
  EnsembleConfig ensemble;
  TransformerConfig transformer;
  OptimizerConfig optimizer;
  int vanilla_epochs = 30;
  double removal_fraction = 0.2;
  std::optional<std::uint64_t> seed;  // required before a run
  std::filesystem::path output_dir = "runs";
  bool timing = true;
};

/// Parses a JSON run configuration. Unknown keys and out-of-range values
/// raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& document);
RunConfig load_run_config(const std::filesystem::path& path);

struct PreparedData {
  Tokenizer tokenizer;
  std::vector<Sample> train;
  std::vector<Sample> test;
  int num_classes = 0;
};

/// Loads or generates both splits and builds the vocabulary on the training split.
PreparedData prepare_data(const DataConfig& data, int max_len);

/// RunOptions for `config` once the data is known (vocabulary size and class count filled in).
RunOptions make_run_options(const RunConfig& config, const PreparedData& data);

inline constexpr const char* kMetricsHeader = "variant,step,train_acc,test_acc,risk,elapsed_s";

std::string format_metrics(std::span<const MetricsRow> rows);
std::vector<MetricsRow> parse_metrics(const std::string& text, const std::string& source);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Cumulative weak-learner epochs consumed after `step` of `variant`.
double epoch_axis(Variant variant, int step, int epochs_per_learner);

struct PlotPoint {
  std::string series;  // "relative" or "improvement"
  std::string variant;
  int step = 0;
  double epoch = 0.0;
  double value = 0.0;
};

/// Relative accuracy (test accuracy minus the baseline's, linearly
/// interpolated on the epoch axis) and improvement (minus the variant's own
/// first test accuracy) for every row of every run.
std::vector<PlotPoint> plot_points(std::span<const MetricsRow> baseline,
                                   std::span<const std::vector<MetricsRow>> runs,
                                   int epochs_per_learner);
std::string format_plot_points(std::span<const PlotPoint> points);

struct TimingEntry {
  std::string dataset;
  std::vector<MetricsRow> rows;
};

/// One row per dataset, one column per variant, total training seconds.
std::string timing_table(std::span<const TimingEntry> entries);

struct VerifyOptions {
  std::uint64_t seed = 1;
  int instances = 50;
  std::size_t draws = 100000;
  std::size_t candidates = 20;
  bool corrupt_closed_form = false;  // test hook: perturbs the closed form
};

struct VerifyOutcome {
  nlohmann::ordered_json report;
  bool passed = true;
};

VerifyOutcome run_verification(const VerifyOptions& options);

/// Dispatches a command line; returns the process exit code
/// (0 ok, 1 unexpected error, 2 configuration or input error, 3 numeric
/// failure, 4 verification failure).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace boostformer
