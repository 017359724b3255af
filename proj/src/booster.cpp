#include "boostformer/booster.hpp"

#include <chrono>
#include <optional>
#include <set>

#include "boostformer/sampling.hpp"

namespace boostformer {

std::string_view variant_name(Variant variant) {
  switch (variant) {
    case Variant::Vanilla: return "vanilla";
    case Variant::SubseqVanilla: return "subseq-vanilla";
    case Variant::Boost: return "boost";
    case Variant::SubseqBoost: return "subseq-boost";
    case Variant::IsBoost: return "is-boost";
    case Variant::SubseqIsBoost: return "subseq-is-boost";
  }
  throw std::logic_error("unhandled variant");
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected vanilla, subseq-vanilla, boost, subseq-boost, is-boost or subseq-is-boost)");
}

bool is_boosted(Variant v) { return v != Variant::Vanilla && v != Variant::SubseqVanilla; }
bool uses_subsequences(Variant v) { return v == Variant::SubseqBoost || v == Variant::SubseqIsBoost; }
bool uses_sampling(Variant v) { return v == Variant::IsBoost || v == Variant::SubseqIsBoost; }
bool has_base_learner(Variant v) { return is_boosted(v) && v != Variant::Boost; }

VocabSubset observed_vocabulary(std::span<const Sample> samples) {
  std::set<TokenId> ids;
  for (TokenId id = 0; id < kNumSpecialTokens; ++id) ids.insert(id);
  for (const auto& s : samples) ids.insert(s.tokens.begin(), s.tokens.end());
  return VocabSubset(std::vector<TokenId>(ids.begin(), ids.end()));
}

namespace {

// Accumulates training time only; evaluation is bracketed by pause/resume.
class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled) { resume(); }
  void pause() {
    if (enabled_ && running_) total_ += std::chrono::duration<double>(Clock::now() - start_).count();
    running_ = false;
  }
  void resume() {
    start_ = Clock::now();
    running_ = true;
  }
  double seconds() const { return enabled_ ? total_ : 0.0; }

 private:
  using Clock = std::chrono::steady_clock;
  bool enabled_;
  bool running_ = false;
  double total_ = 0.0;
  Clock::time_point start_;
};

using TokenScores = std::vector<std::vector<std::pair<TokenId, double>>>;

// Outputs plus per-sample token importance of one learner over `inputs`.
template <typename Scalar>
PredictionMatrix inspect(const Transformer<Scalar>& learner, std::span<const Sequence> inputs,
                         TokenScores& scores) {
  PredictionMatrix out(static_cast<Eigen::Index>(inputs.size()), learner.config().num_classes);
  scores.assign(inputs.size(), {});
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto [logits, attention] = learner.forward(inputs[i]);
    out.row(static_cast<Eigen::Index>(i)) = logits.transpose();
    scores[i] = token_scores(attention, inputs[i]);
  }
  return out;
}

// Importance over `domain`, summing the stored scores of the given rows
// (each occurrence of a row counts).
ImportanceTable table_from_scores(const VocabSubset& domain, const TokenScores& scores,
                                  std::span<const std::size_t> rows) {
  ImportanceTable table;
  for (TokenId id : domain.ids()) table.emplace(id, 0.0);
  auto add_row = [&](std::size_t r) {
    for (const auto& [token, value] : scores[r]) {
      const auto it = table.find(token);
      if (it != table.end()) it->second += value;
    }
  };
  if (rows.empty())
    for (std::size_t r = 0; r < scores.size(); ++r) add_row(r);
  else
    for (std::size_t r : rows) add_row(r);
  return table;
}

std::vector<Sequence> filter_all(std::span<const Sequence> inputs, const VocabSubset& vocab) {
  std::vector<Sequence> out;
  out.reserve(inputs.size());
  for (const auto& s : inputs) out.push_back(filter_sample(s, vocab));
  return out;
}

template <typename T>
std::vector<T> gather(std::span<const T> items, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(items[r]);
  return out;
}

PredictionMatrix gather_rows(const PredictionMatrix& m, std::span<const std::size_t> rows) {
  PredictionMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

void check_options(const RunOptions& options, std::span<const Sample> train, std::span<const Sample> test) {
  options.ensemble.validate();
  options.transformer.validate();
  options.optimizer.validate();
  if (options.transformer.num_classes != options.ensemble.num_classes)
    throw ConfigError("transformer and ensemble class counts differ");
  if (options.vanilla_epochs < 1) throw ConfigError("vanilla_epochs must be >= 1");
  if (!(options.removal_fraction >= 0.0 && options.removal_fraction < 1.0))
    throw ConfigError("removal_fraction must lie in [0, 1)");
  if (train.empty()) throw std::domain_error("empty training set");
  for (auto split : {train, test})
    for (const auto& s : split)
      if (s.label < 0 || s.label >= options.ensemble.num_classes)
        throw ConfigError("sample label outside the configured class count");
}

template <typename Scalar>
class Runner {
 public:
  Runner(Variant variant, const RunOptions& options, std::span<const Sample> train,
         std::span<const Sample> test)
      : variant_(variant),
        options_(options),
        train_inputs_(sequences(train)),
        train_labels_(labels(train)),
        test_inputs_(sequences(test)),
        test_labels_(labels(test)),
        train_samples_(train),
        scores_(PredictionMatrix::Zero(static_cast<Eigen::Index>(train.size()), options.ensemble.num_classes)),
        test_scores_(PredictionMatrix::Zero(static_cast<Eigen::Index>(test.size()), options.ensemble.num_classes)),
        result_{Ensemble<Transformer<Scalar>>(options.ensemble.num_classes, options.ensemble.shrinkage), {}, {}, {}},
        watch_(options.timing) {}

  RunResult<Scalar> run() {
    if (is_boosted(variant_))
      run_boosted();
    else
      run_baseline();
    return std::move(result_);
  }

 private:
  std::uint64_t seed(std::uint64_t stream) const { return derive_seed(options_.seed, stream); }

  void emit(int step, double train_acc, double test_acc, double risk_value) {
    MetricsRow row{std::string(variant_name(variant_)), step, train_acc, test_acc, risk_value,
                   watch_.seconds()};
    if (options_.on_row) options_.on_row(row);
    result_.metrics.push_back(std::move(row));
  }

  void emit_ensemble(int step) {
    emit(step, accuracy(scores_, train_labels_), accuracy(test_scores_, test_labels_),
         risk(scores_, train_labels_));
  }

  void add_test_output(const Stage<Transformer<Scalar>>& stage) {
    for (std::size_t i = 0; i < test_inputs_.size(); ++i)
      test_scores_.row(static_cast<Eigen::Index>(i)) +=
          stage.coefficient * Ensemble<Transformer<Scalar>>::stage_output(stage, test_inputs_[i]).transpose();
  }

  void run_baseline() {
    std::vector<Sequence> inputs = train_inputs_;
    if (variant_ == Variant::SubseqVanilla)
      inputs = sequences(remove_random_tokens(train_samples_, options_.removal_fraction, seed(4000)));

    Transformer<Scalar> learner(options_.transformer, seed(2000));
    OptimizerConfig optimizer = options_.optimizer;
    optimizer.epochs = options_.vanilla_epochs;
    auto on_epoch = [&](int epoch, const PredictionMatrix& outputs) {
      watch_.pause();
      const PredictionMatrix test_outputs = predict_all(learner, std::span<const Sequence>(test_inputs_));
      emit(epoch, accuracy(outputs, train_labels_), accuracy(test_outputs, test_labels_),
           risk(outputs, train_labels_));
      watch_.resume();
    };
    const TrainResult trained =
        train_classifier(learner, std::span<const Sequence>(inputs), train_labels_, optimizer, seed(1000), on_epoch);
    watch_.pause();
    scores_ = trained.outputs;
    result_.ensemble.base.emplace(Stage<Transformer<Scalar>>{1.0, 1.0, std::move(learner), std::nullopt});
    test_scores_ = predict_all(result_.ensemble.base->learner, std::span<const Sequence>(test_inputs_));
  }

  const Transformer<Scalar>* previous_learner() const {
    const auto& ens = result_.ensemble;
    if (!ens.stages.empty()) return &ens.stages.back().learner;
    if (ens.base) return &ens.base->learner;
    return nullptr;
  }

  Transformer<Scalar> make_learner(int round) const {
    // Each new learner starts from the previous one's parameters.
    if (const auto* prev = previous_learner()) return Transformer<Scalar>::init_from(*prev, options_.transformer);
    return Transformer<Scalar>(options_.transformer, seed(2000 + static_cast<std::uint64_t>(round)));
  }

  void train_base() {
    const PredictionMatrix weights = compute_weights(scores_, train_labels_);
    Transformer<Scalar> learner(options_.transformer, seed(2000));
    TrainResult trained = train_least_squares(learner, std::span<const Sequence>(train_inputs_), weights, {},
                                              options_.optimizer, seed(1000));
    PredictionMatrix outputs = std::move(trained.outputs);
    std::optional<VocabSubset> vocab;
    if (uses_subsequences(variant_)) {
      vocab = observed_vocabulary(train_samples_);
      result_.vocab_history.push_back(*vocab);
      outputs = inspect(learner, std::span<const Sequence>(train_inputs_), token_scores_);
    }
    scores_ += outputs;
    result_.ensemble.base.emplace(Stage<Transformer<Scalar>>{1.0, 1.0, std::move(learner), std::move(vocab)});
    watch_.pause();
    add_test_output(*result_.ensemble.base);
    emit_ensemble(0);
    watch_.resume();
  }

  TrainedStage<Transformer<Scalar>> train_stage(int round, const PredictionMatrix& weights) {
    const std::size_t n = train_inputs_.size();
    const auto stream = static_cast<std::uint64_t>(round);

    std::optional<SampledSubset> subset;
    WeightedRows weighted;
    if (uses_sampling(variant_)) {
      const SamplingDistribution dist = build_distribution(weights);
      std::mt19937_64 rng(seed(3000 + stream));
      subset = draw_subset(dist, options_.ensemble.keep_fraction, n, rng);
      weighted = importance_weights(dist, n, *subset);
    }

    std::optional<VocabSubset> vocab;
    std::vector<Sequence> filtered;
    if (uses_subsequences(variant_)) {
      const std::span<const std::size_t> rows =
          subset ? std::span<const std::size_t>(subset->indices) : std::span<const std::size_t>();
      const ImportanceTable table = table_from_scores(result_.vocab_history.back(), token_scores_, rows);
      vocab = prune_vocab(table, options_.ensemble.keep_fraction).kept;
      result_.vocab_history.push_back(*vocab);
      filtered = filter_all(train_inputs_, *vocab);
    }
    const std::span<const Sequence> inputs =
        vocab ? std::span<const Sequence>(filtered) : std::span<const Sequence>(train_inputs_);

    Transformer<Scalar> learner = make_learner(round);
    PredictionMatrix outputs;
    if (subset) {
      const std::vector<Sequence> sub_inputs = gather(inputs, std::span<const std::size_t>(weighted.rows));
      train_least_squares(learner, std::span<const Sequence>(sub_inputs), gather_rows(weights, weighted.rows),
                          weighted.weights, options_.optimizer, seed(1000 + stream));
      if (!vocab) outputs = predict_all(learner, inputs);
    } else {
      TrainResult trained =
          train_least_squares(learner, inputs, weights, {}, options_.optimizer, seed(1000 + stream));
      if (!vocab) outputs = std::move(trained.outputs);
    }
    if (vocab) outputs = inspect(learner, inputs, token_scores_);

    TrainedStage<Transformer<Scalar>> stage{std::move(learner), std::move(outputs), std::move(vocab), {}};
    if (subset) stage.line_search_rows = std::move(subset->indices);
    return stage;
  }

  void run_boosted() {
    if (has_base_learner(variant_)) train_base();
    for (int t = 1; t <= options_.ensemble.rounds; ++t) {
      const RoundReport report = boost_round(
          result_.ensemble, scores_, train_labels_, options_.ensemble,
          [&](const PredictionMatrix& weights) { return train_stage(t, weights); });
      watch_.pause();
      result_.rounds.push_back(report);
      add_test_output(result_.ensemble.stages.back());
      emit_ensemble(t);
      watch_.resume();
    }
    watch_.pause();
  }

  Variant variant_;
  const RunOptions& options_;
  std::vector<Sequence> train_inputs_;
  std::vector<int> train_labels_;
  std::vector<Sequence> test_inputs_;
  std::vector<int> test_labels_;
  std::span<const Sample> train_samples_;
  PredictionMatrix scores_;
  PredictionMatrix test_scores_;
  TokenScores token_scores_;  // of the latest learner, over its filtered inputs
  RunResult<Scalar> result_;
  Stopwatch watch_;
};

}  // namespace

template <typename Scalar>
RunResult<Scalar> run_variant(Variant variant, const RunOptions& options, std::span<const Sample> train,
                              std::span<const Sample> test) {
  check_options(options, train, test);
  return Runner<Scalar>(variant, options, train, test).run();
}

template RunResult<float> run_variant<float>(Variant, const RunOptions&, std::span<const Sample>,
                                             std::span<const Sample>);
template RunResult<double> run_variant<double>(Variant, const RunOptions&, std::span<const Sample>,
                                               std::span<const Sample>);

}  // namespace boostformer
