#pragma once

// End-to-end runs of the six model variants: the two non-boosted baselines
// and the plain, subsequence, importance-sampling and combined boosting loops.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "boostformer/data.hpp"
#include "boostformer/ensemble.hpp"
#include "boostformer/trainer.hpp"

namespace boostformer {

enum class Variant { Vanilla, SubseqVanilla, Boost, SubseqBoost, IsBoost, SubseqIsBoost };

/// Timing-table column order.
inline constexpr std::array<Variant, 6> kAllVariants = {
    Variant::Vanilla, Variant::SubseqVanilla, Variant::Boost,
    Variant::SubseqBoost, Variant::IsBoost, Variant::SubseqIsBoost};

std::string_view variant_name(Variant variant);
/// Throws ConfigError for unknown names.
Variant parse_variant(std::string_view name);

bool is_boosted(Variant variant);
bool uses_subsequences(Variant variant);  // vocabulary pruning (boosted variants only)
bool uses_sampling(Variant variant);
/// Boosted variants that start from a full-data base learner g0.
bool has_base_learner(Variant variant);

struct MetricsRow {
  std::string variant;
  int step = 0;  // boosting round (0 = base learner) or epoch for the baselines
  double train_acc = 0.0;
  double test_acc = 0.0;
  double risk = 0.0;
  double elapsed_s = 0.0;  // cumulative training time; 0 when timing is off
};

struct RunOptions {
  EnsembleConfig ensemble;
  TransformerConfig transformer;
  OptimizerConfig optimizer;
  int vanilla_epochs = 30;
  double removal_fraction = 0.2;  // subseq-vanilla token removal
  std::uint64_t seed = 0;
  bool timing = true;
  std::function<void(const MetricsRow&)> on_row;  // progress hook
};

template <typename Scalar>
struct RunResult {
  Ensemble<Transformer<Scalar>> ensemble;
  std::vector<MetricsRow> metrics;
  std::vector<RoundReport> rounds;
  std::vector<VocabSubset> vocab_history;  // V_0, V_1, ... for subsequence variants
};

/// Trains `variant` on `train` and reports metrics on both splits after every
/// round (or epoch). `options.transformer.vocab_size` and `num_classes` must
/// already match the data. Deterministic given the options.
template <typename Scalar>
RunResult<Scalar> run_variant(Variant variant, const RunOptions& options,
                              std::span<const Sample> train, std::span<const Sample> test);

extern template RunResult<float> run_variant<float>(Variant, const RunOptions&,
                                                    std::span<const Sample>, std::span<const Sample>);
extern template RunResult<double> run_variant<double>(Variant, const RunOptions&,
                                                      std::span<const Sample>, std::span<const Sample>);

/// Initial vocabulary for the subsequence variants: special tokens plus every
/// token id present in `samples`.
VocabSubset observed_vocabulary(std::span<const Sample> samples);

}  // namespace boostformer
