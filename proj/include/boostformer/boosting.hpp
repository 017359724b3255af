#pragma once

// Multiclass boosting mathematics: exponential-margin loss, empirical risk,
// boosting weights (negative scaled functional gradient), the directional
// derivative of the risk, and the bounded line search for stage coefficients.
//
// Class indices are 0-based throughout; the data pipeline converts the
// 1-based labels of corpus files once at encode time. Everything here runs in
// double precision.

#include <cstddef>
#include <functional>
#include <span>

#include "boostformer/common.hpp"

namespace boostformer {

struct EnsembleConfig {
  int num_classes = 2;        // M
  int rounds = 6;             // N_b
  double shrinkage = 0.5;     // nu
  double keep_fraction = 0.8; // sigma
  double alpha_max = 10.0;
  double line_search_tol = 1e-6;

  /// Throws ConfigError when any field is out of range.
  void validate() const;
};

/// Unit vector 1_k in R^M.
Eigen::VectorXd codeword(int k, int num_classes);

/// Exponent magnitude beyond which exp() is clamped.
inline constexpr double kExponentClamp = 500.0;

/// exp(x) with x clamped to [-500, 500]; sets *saturated when clamping occurred.
double clamped_exp(double x, bool* saturated = nullptr);

/// L(z, f) = sum_{j != z} exp(-(f_z - f_j) / 2). Throws std::domain_error on
/// non-finite logits or an out-of-range class.
double per_sample_loss(const Eigen::Ref<const Eigen::VectorXd>& logits, int label);

/// Mean per-sample loss over the rows of `scores`.
double risk(const PredictionMatrix& scores, std::span<const int> labels);

/// Boosting weights w = -2 grad_f L(z, f):
///   w_k = -exp(-(f_z - f_k)/2) for k != z,  w_z = -sum_{k != z} w_k.
Eigen::VectorXd compute_weights(const Eigen::Ref<const Eigen::VectorXd>& logits, int label,
                                bool* saturated = nullptr);

/// Row-wise compute_weights over a dataset.
PredictionMatrix compute_weights(const PredictionMatrix& scores, std::span<const int> labels,
                                 bool* saturated = nullptr);

/// -(1 / (2|D|)) sum_i <g(x_i), w(x_i, z_i)>.
double directional_derivative(const PredictionMatrix& directions, const PredictionMatrix& weights);

/// Golden-section minimizer of a unimodal function on [lo, hi]; stops once
/// the bracket is narrower than `tol`.
double golden_section_minimize(const std::function<double(double)>& objective, double lo, double hi,
                               double tol);

/// Minimizer over [0, alpha_max] of alpha -> risk(scores + alpha * directions),
/// restricted to `rows` when non-empty (rows may repeat; each occurrence counts).
/// The objective is convex in alpha. Endpoints are compared explicitly and ties
/// resolve toward the smaller alpha, so a flat objective yields 0.
double line_search_alpha(const PredictionMatrix& scores, const PredictionMatrix& directions,
                         std::span<const int> labels, const EnsembleConfig& config,
                         std::span<const std::size_t> rows = {});

/// argmax over classes, ties to the lowest index.
int predicted_class(const Eigen::Ref<const Eigen::VectorXd>& scores);

/// Fraction of rows whose argmax equals the label.
double accuracy(const PredictionMatrix& scores, std::span<const int> labels);

}  // namespace boostformer
