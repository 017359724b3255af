#include "boostformer/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace boostformer {

void EnsembleConfig::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (!(shrinkage > 0.0 && shrinkage <= 1.0)) throw ConfigError("shrinkage must lie in (0, 1]");
  if (!(keep_fraction > 0.0 && keep_fraction < 1.0))
    throw ConfigError("keep_fraction must lie in (0, 1)");
  if (!(alpha_max > 0.0)) throw ConfigError("alpha_max must be positive");
  if (!(line_search_tol > 0.0)) throw ConfigError("line_search_tol must be positive");
}

Eigen::VectorXd codeword(int k, int num_classes) {
  if (num_classes < 1 || k < 0 || k >= num_classes)
    throw std::domain_error("codeword: class index out of range");
  return Eigen::VectorXd::Unit(num_classes, k);
}

double clamped_exp(double x, bool* saturated) {
  if (x > kExponentClamp || x < -kExponentClamp) {
    if (saturated) *saturated = true;
    x = std::clamp(x, -kExponentClamp, kExponentClamp);
  }
  return std::exp(x);
}

namespace {

void check_sample(const Eigen::Ref<const Eigen::VectorXd>& logits, int label) {
  if (label < 0 || label >= logits.size())
    throw std::domain_error("class index " + std::to_string(label) + " outside [0, " +
                            std::to_string(logits.size()) + ")");
  if (!logits.allFinite()) throw std::domain_error("non-finite logits");
}

void check_rows(const PredictionMatrix& scores, std::span<const int> labels) {
  if (scores.rows() == 0) throw std::domain_error("empty dataset");
  if (static_cast<std::size_t>(scores.rows()) != labels.size())
    throw std::domain_error("prediction rows do not match label count");
}

}  // namespace

double per_sample_loss(const Eigen::Ref<const Eigen::VectorXd>& logits, int label) {
  check_sample(logits, label);
  const double fz = logits[label];
  double loss = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (j == label) continue;
    loss += clamped_exp(-0.5 * (fz - logits[j]));
  }
  return loss;
}

double risk(const PredictionMatrix& scores, std::span<const int> labels) {
  check_rows(scores, labels);
  double total = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    total += per_sample_loss(scores.row(i).transpose(), labels[i]);
  return total / static_cast<double>(scores.rows());
}

Eigen::VectorXd compute_weights(const Eigen::Ref<const Eigen::VectorXd>& logits, int label,
                                bool* saturated) {
  check_sample(logits, label);
  const double fz = logits[label];
  Eigen::VectorXd w(logits.size());
  double positive = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) {
    if (k == label) continue;
    w[k] = -clamped_exp(-0.5 * (fz - logits[k]), saturated);
    positive -= w[k];
  }
  w[label] = positive;
  return w;
}

PredictionMatrix compute_weights(const PredictionMatrix& scores, std::span<const int> labels,
                                 bool* saturated) {
  check_rows(scores, labels);
  PredictionMatrix weights(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    weights.row(i) = compute_weights(scores.row(i).transpose(), labels[i], saturated).transpose();
  return weights;
}

double directional_derivative(const PredictionMatrix& directions, const PredictionMatrix& weights) {
  if (directions.rows() != weights.rows() || directions.cols() != weights.cols())
    throw std::domain_error("directional_derivative: dimension mismatch");
  if (directions.rows() == 0) throw std::domain_error("empty dataset");
  const double inner = directions.cwiseProduct(weights).sum();
  return -inner / (2.0 * static_cast<double>(directions.rows()));
}

double golden_section_minimize(const std::function<double(double)>& objective, double lo, double hi,
                               double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = objective(c);
  double fd = objective(d);
  while (hi - lo > tol) {
    // Ties move the bracket left so flat stretches resolve toward lo.
    if (fc <= fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = objective(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = objective(d);
    }
  }
  return 0.5 * (lo + hi);
}

double line_search_alpha(const PredictionMatrix& scores, const PredictionMatrix& directions,
                         std::span<const int> labels, const EnsembleConfig& config,
                         std::span<const std::size_t> rows) {
  check_rows(scores, labels);
  if (directions.rows() != scores.rows() || directions.cols() != scores.cols())
    throw std::domain_error("line_search_alpha: dimension mismatch");

  // Per (sample, wrong class) pair the loss term is exp(-(margin + alpha * slope) / 2).
  std::vector<double> margins;
  std::vector<double> slopes;
  auto add_row = [&](std::size_t i) {
    const int z = labels[i];
    const auto f = scores.row(static_cast<Eigen::Index>(i));
    const auto g = directions.row(static_cast<Eigen::Index>(i));
    if (!f.allFinite() || !g.allFinite()) throw std::domain_error("non-finite scores");
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (j == z) continue;
      margins.push_back(f[z] - f[j]);
      slopes.push_back(g[z] - g[j]);
    }
  };
  std::size_t count = 0;
  if (rows.empty()) {
    for (std::size_t i = 0; i < labels.size(); ++i) add_row(i);
    count = labels.size();
  } else {
    for (std::size_t i : rows) {
      if (i >= labels.size()) throw std::domain_error("line search row out of range");
      add_row(i);
    }
    count = rows.size();
  }

  const auto objective = [&](double alpha) {
    double total = 0.0;
    for (std::size_t p = 0; p < margins.size(); ++p)
      total += clamped_exp(-0.5 * (margins[p] + alpha * slopes[p]));
    return total / static_cast<double>(count);
  };

  const double interior = golden_section_minimize(objective, 0.0, config.alpha_max,
                                                  config.line_search_tol);
  double best_alpha = 0.0;
  double best_value = objective(0.0);
  for (double candidate : {interior, config.alpha_max}) {
    const double value = objective(candidate);
    if (value < best_value) {
      best_value = value;
      best_alpha = candidate;
    }
  }
  return best_alpha;
}

int predicted_class(const Eigen::Ref<const Eigen::VectorXd>& scores) {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = k;
  return static_cast<int>(best);
}

double accuracy(const PredictionMatrix& scores, std::span<const int> labels) {
  check_rows(scores, labels);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    if (predicted_class(scores.row(i).transpose()) == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(scores.rows());
}

}  // namespace boostformer
