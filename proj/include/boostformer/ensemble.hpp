#pragma once

// Additive ensemble f(x) = g0(x) + sum_t nu * alpha_t * g_t(x^t) and one
// generic boosting round over any learner type.
//
// A Learner only needs `Eigen::VectorXd predict(std::span<const TokenId>) const`.
// The round is independent of how the learner is trained: the caller's trainer
// receives the boosting weights and returns the fitted learner together with
// its outputs on the training set.

#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "boostformer/boosting.hpp"
#include "boostformer/importance.hpp"

namespace boostformer {

template <typename Learner>
struct Stage {
  double coefficient = 1.0;  // multiplier applied to the learner's output
  double alpha = 0.0;        // line-search step before shrinkage
  Learner learner;
  std::optional<VocabSubset> vocab;  // inputs are filtered by this set when present
};

template <typename Learner>
class Ensemble {
 public:
  Ensemble(int num_classes, double shrinkage) : num_classes_(num_classes), shrinkage_(shrinkage) {}

  int num_classes() const { return num_classes_; }
  double shrinkage() const { return shrinkage_; }

  std::optional<Stage<Learner>> base;
  std::vector<Stage<Learner>> stages;

  /// Number of learners including the base.
  std::size_t size() const { return stages.size() + (base ? 1 : 0); }

  /// Output of one stage on a raw (unfiltered) sample.
  static Eigen::VectorXd stage_output(const Stage<Learner>& stage, std::span<const TokenId> tokens) {
    if (!stage.vocab) return stage.learner.predict(tokens);
    const Sequence filtered = filter_sample(tokens, *stage.vocab);
    return stage.learner.predict(filtered);
  }

  /// f(x); the zero vector for an empty ensemble.
  Eigen::VectorXd predict(std::span<const TokenId> tokens) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(num_classes_);
    if (base) f += base->coefficient * stage_output(*base, tokens);
    for (const auto& stage : stages) f += stage.coefficient * stage_output(stage, tokens);
    return f;
  }

  PredictionMatrix predict_all(std::span<const Sequence> inputs) const {
    PredictionMatrix out(static_cast<Eigen::Index>(inputs.size()), num_classes_);
    for (std::size_t i = 0; i < inputs.size(); ++i)
      out.row(static_cast<Eigen::Index>(i)) = predict(inputs[i]).transpose();
    return out;
  }

 private:
  int num_classes_;
  double shrinkage_;
};

/// What a trainer hands back to boost_round.
template <typename Learner>
struct TrainedStage {
  Learner learner;
  PredictionMatrix outputs;                   // g(x_i^t) for every training sample
  std::optional<VocabSubset> vocab;
  std::vector<std::size_t> line_search_rows;  // empty means every row
};

struct RoundReport {
  double alpha = 0.0;
  double coefficient = 0.0;
  double risk_before = 0.0;
  double risk_after = 0.0;
  bool saturated = false;  // an exponent was clamped while computing weights
};

/// Computes the weights at `scores`, trains a learner on them, line-searches
/// alpha, appends a stage with coefficient nu * alpha and updates `scores`.
template <typename Learner, typename Trainer>
RoundReport boost_round(Ensemble<Learner>& ensemble, PredictionMatrix& scores,
                        std::span<const int> labels, const EnsembleConfig& config,
                        Trainer&& trainer) {
  RoundReport report;
  const PredictionMatrix weights = compute_weights(scores, labels, &report.saturated);
  TrainedStage<Learner> trained = trainer(weights);
  if (trained.outputs.rows() != scores.rows() || trained.outputs.cols() != scores.cols())
    throw std::domain_error("weak learner outputs do not match the training set");

  report.risk_before = risk(scores, labels);
  report.alpha = line_search_alpha(scores, trained.outputs, labels, config, trained.line_search_rows);
  report.coefficient = ensemble.shrinkage() * report.alpha;
  scores += report.coefficient * trained.outputs;
  report.risk_after = risk(scores, labels);

  ensemble.stages.push_back(Stage<Learner>{report.coefficient, report.alpha,
                                           std::move(trained.learner), std::move(trained.vocab)});
  return report;
}

}  // namespace boostformer
