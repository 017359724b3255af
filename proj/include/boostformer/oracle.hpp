#pragma once

// Numerical checks of the optimal importance-sampling result: unbiasedness of
// the reweighted gradient estimator, the closed-form second moment of its
// subset mean, and minimality of the residual-norm distribution (Jensen
// equality).
//
// For a subset I of |I| i.i.d. draws from P over |D| samples the estimator is
//   gbar = (1/|I|) sum_{k in I} g_k / (|D| P_k)
// and its second moment is
//   E||gbar||^2 = (1/(|I||D|^2)) sum_i ||g_i||^2 / P_i - ||g||^2/|I| + ||g||^2
// with g the mean of the per-sample gradients.

#include <cstdint>
#include <string>
#include <vector>

#include "boostformer/sampling.hpp"

namespace boostformer {

struct GradientField {
  PredictionMatrix per_sample;  // row i: g_i

  std::size_t size() const { return static_cast<std::size_t>(per_sample.rows()); }
  Eigen::VectorXd mean() const { return per_sample.colwise().mean().transpose(); }
  Eigen::VectorXd norms() const { return per_sample.rowwise().norm(); }
};

/// Per-sample functional gradients -w_i / 2 at the given scores.
GradientField gradient_field_from_scores(const PredictionMatrix& scores, std::span<const int> labels);

/// Throws std::domain_error when P_i = 0 for a nonzero g_i.
double closed_form_second_moment(const GradientField& field, const Eigen::VectorXd& probabilities,
                                 std::size_t subset_size);

/// sum_i ||g_i||^2 / P_i (terms with g_i = 0 contribute 0).
double inverse_probability_term(const GradientField& field, const Eigen::VectorXd& probabilities);

/// Smallest attainable second moment: the closed form with sum ||g_i||^2/P_i
/// replaced by (sum ||g_i||)^2.
double jensen_minimum(const GradientField& field, std::size_t subset_size);

/// P* proportional to ||g_i||; uniform for an all-zero field.
Eigen::VectorXd residual_norm_distribution(const GradientField& field);

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t draws = 0;
};

MonteCarloEstimate monte_carlo_second_moment(const GradientField& field,
                                             const Eigen::VectorXd& probabilities,
                                             std::size_t subset_size, std::size_t draws,
                                             std::uint64_t seed);

struct VarianceReport {
  std::string distribution;
  double closed_form = 0.0;
  double jensen_bound = 0.0;
  std::size_t subset_size = 0;
};

struct OptimalityReport {
  std::vector<VarianceReport> candidates;  // first entry is P*
  bool degenerate = false;
  bool optimal_is_minimum = true;
  double jensen_gap = 0.0;  // |sum ||g||^2/P* - (sum ||g||)^2|, relative
  bool jensen_equality = true;
};

/// Evaluates P*, uniform, P proportional to ||g||^2 and `n_candidates`
/// Dirichlet(1) distributions, and checks that P* attains the minimum and the
/// Jensen equality (relative 1e-9).
OptimalityReport optimal_distribution_check(const GradientField& field, std::size_t subset_size,
                                            std::size_t n_candidates, std::uint64_t seed);

struct UnbiasednessReport {
  double max_deviation_in_se = 0.0;
  Eigen::VectorXd monte_carlo_mean;
  Eigen::VectorXd standard_error;
};

/// Monte Carlo mean of single-draw estimates g_k / (|D| P_k) against the full
/// mean gradient, componentwise. Components with zero standard error must
/// match to 1e-12 (scaled) or report infinity; rounding-level deviations count as 0.
UnbiasednessReport unbiasedness_check(const GradientField& field,
                                      const Eigen::VectorXd& probabilities, std::size_t draws,
                                      std::uint64_t seed);

/// A small random problem: scores ~ N(0, 1), uniform labels, and the field
/// they induce.
struct OracleInstance {
  PredictionMatrix scores;
  std::vector<int> labels;
  GradientField field;
  std::size_t subset_size = 1;
};

/// n in 2..8 and M in 2..3 drawn from (seed, index); |I| cycles through
/// {1, 2, n} with the index.
OracleInstance random_oracle_instance(std::uint64_t seed, int index);

}  // namespace boostformer
