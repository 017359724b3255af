#include "boostformer/oracle.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "boostformer/boosting.hpp"

namespace boostformer {

GradientField gradient_field_from_scores(const PredictionMatrix& scores, std::span<const int> labels) {
  return GradientField{-0.5 * compute_weights(scores, labels)};
}

double inverse_probability_term(const GradientField& field, const Eigen::VectorXd& probabilities) {
  if (static_cast<std::size_t>(probabilities.size()) != field.size())
    throw std::domain_error("distribution size does not match the gradient field");
  double total = 0.0;
  const Eigen::VectorXd norms = field.norms();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (norms[i] == 0.0) continue;
    if (!(probabilities[i] > 0.0))
      throw std::domain_error("zero probability on a sample with nonzero gradient");
    total += norms[i] * norms[i] / probabilities[i];
  }
  return total;
}

namespace {

double assemble_second_moment(double inverse_term, const GradientField& field, std::size_t subset_size) {
  if (subset_size == 0) throw std::domain_error("subset size must be positive");
  const double n = static_cast<double>(field.size());
  const double m = static_cast<double>(subset_size);
  const double mean_sq = field.mean().squaredNorm();
  return inverse_term / (m * n * n) - mean_sq / m + mean_sq;
}

}  // namespace

double closed_form_second_moment(const GradientField& field, const Eigen::VectorXd& probabilities,
                                 std::size_t subset_size) {
  return assemble_second_moment(inverse_probability_term(field, probabilities), field, subset_size);
}

double jensen_minimum(const GradientField& field, std::size_t subset_size) {
  const double total_norm = field.norms().sum();
  return assemble_second_moment(total_norm * total_norm, field, subset_size);
}

Eigen::VectorXd residual_norm_distribution(const GradientField& field) {
  Eigen::VectorXd p = field.norms();
  const double total = p.sum();
  if (total <= 0.0) return Eigen::VectorXd::Constant(p.size(), 1.0 / static_cast<double>(p.size()));
  return p / total;
}

namespace {

std::discrete_distribution<std::size_t> make_sampler(const Eigen::VectorXd& probabilities) {
  return std::discrete_distribution<std::size_t>(probabilities.data(),
                                                 probabilities.data() + probabilities.size());
}

}  // namespace

MonteCarloEstimate monte_carlo_second_moment(const GradientField& field,
                                             const Eigen::VectorXd& probabilities,
                                             std::size_t subset_size, std::size_t draws,
                                             std::uint64_t seed) {
  if (static_cast<std::size_t>(probabilities.size()) != field.size())
    throw std::domain_error("distribution size does not match the gradient field");
  if (subset_size == 0 || draws < 2) throw std::domain_error("need a positive subset and >= 2 draws");
  std::mt19937_64 rng(seed);
  auto sampler = make_sampler(probabilities);
  const double n = static_cast<double>(field.size());

  // Welford running mean / variance of ||gbar||^2.
  double mean = 0.0;
  double m2 = 0.0;
  Eigen::VectorXd gbar(field.per_sample.cols());
  for (std::size_t t = 0; t < draws; ++t) {
    gbar.setZero();
    for (std::size_t k = 0; k < subset_size; ++k) {
      const std::size_t i = sampler(rng);
      gbar += field.per_sample.row(static_cast<Eigen::Index>(i)).transpose() /
              (n * probabilities[static_cast<Eigen::Index>(i)]);
    }
    gbar /= static_cast<double>(subset_size);
    const double value = gbar.squaredNorm();
    const double delta = value - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (value - mean);
  }
  const double variance = m2 / static_cast<double>(draws - 1);
  return MonteCarloEstimate{mean, std::sqrt(std::max(variance, 0.0) / static_cast<double>(draws)), draws};
}

OptimalityReport optimal_distribution_check(const GradientField& field, std::size_t subset_size,
                                            std::size_t n_candidates, std::uint64_t seed) {
  OptimalityReport report;
  const Eigen::VectorXd norms = field.norms();
  if (norms.sum() <= 0.0) {
    report.degenerate = true;
    return report;
  }
  const double bound = jensen_minimum(field, subset_size);
  auto add = [&](std::string name, const Eigen::VectorXd& p) {
    report.candidates.push_back(
        VarianceReport{std::move(name), closed_form_second_moment(field, p, subset_size), bound, subset_size});
  };

  const Eigen::VectorXd optimal = residual_norm_distribution(field);
  add("residual_norm", optimal);
  const auto n = static_cast<Eigen::Index>(field.size());
  add("uniform", Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
  const Eigen::VectorXd squared = norms.cwiseAbs2();
  add("squared_norm", squared / squared.sum());

  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gamma_one(1.0);  // Gamma(1) draws give Dirichlet(1)
  for (std::size_t c = 0; c < n_candidates; ++c) {
    Eigen::VectorXd p(n);
    for (Eigen::Index i = 0; i < n; ++i) p[i] = gamma_one(rng);
    add("dirichlet_" + std::to_string(c), p / p.sum());
  }

  const double best = report.candidates.front().closed_form;
  for (std::size_t c = 1; c < report.candidates.size(); ++c)
    if (report.candidates[c].closed_form < best - 1e-12 * std::max(1.0, std::abs(best)))
      report.optimal_is_minimum = false;

  const double lhs = inverse_probability_term(field, optimal);
  const double rhs = norms.sum() * norms.sum();
  report.jensen_gap = std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs));
  report.jensen_equality = report.jensen_gap <= 1e-9;
  return report;
}

UnbiasednessReport unbiasedness_check(const GradientField& field,
                                      const Eigen::VectorXd& probabilities, std::size_t draws,
                                      std::uint64_t seed) {
  if (static_cast<std::size_t>(probabilities.size()) != field.size())
    throw std::domain_error("distribution size does not match the gradient field");
  if (draws < 2) throw std::domain_error("need >= 2 draws");
  std::mt19937_64 rng(seed);
  auto sampler = make_sampler(probabilities);
  const double n = static_cast<double>(field.size());
  const Eigen::Index dims = field.per_sample.cols();

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(dims);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(dims);
  for (std::size_t t = 0; t < draws; ++t) {
    const std::size_t i = sampler(rng);
    const Eigen::VectorXd g = field.per_sample.row(static_cast<Eigen::Index>(i)).transpose() /
                              (n * probabilities[static_cast<Eigen::Index>(i)]);
    const Eigen::VectorXd delta = g - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta.cwiseProduct(g - mean);
  }

  UnbiasednessReport report;
  report.monte_carlo_mean = mean;
  report.standard_error = (m2.cwiseMax(0.0) / static_cast<double>(draws - 1) / static_cast<double>(draws)).cwiseSqrt();
  const Eigen::VectorXd target = field.mean();
  for (Eigen::Index k = 0; k < dims; ++k) {
    const double deviation = std::abs(mean[k] - target[k]);
    const double se = report.standard_error[k];
    // Deviations at rounding level count as exact agreement.
    double in_se = 0.0;
    if (deviation <= 1e-12 * std::max(1.0, std::abs(target[k])))
      in_se = 0.0;
    else if (se > 0.0)
      in_se = deviation / se;
    else
      in_se = std::numeric_limits<double>::infinity();
    report.max_deviation_in_se = std::max(report.max_deviation_in_se, in_se);
  }
  return report;
}

OracleInstance random_oracle_instance(std::uint64_t seed, int index) {
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  std::uniform_int_distribution<int> size_dist(2, 8);
  std::uniform_int_distribution<int> class_dist(2, 3);
  const int n = size_dist(rng);
  const int m = class_dist(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> label_dist(0, m - 1);

  OracleInstance instance;
  instance.scores.resize(n, m);
  for (Eigen::Index i = 0; i < instance.scores.size(); ++i) instance.scores.data()[i] = normal(rng);
  for (int i = 0; i < n; ++i) instance.labels.push_back(label_dist(rng));
  instance.field = gradient_field_from_scores(instance.scores, instance.labels);
  const std::size_t sizes[] = {1, 2, static_cast<std::size_t>(n)};
  instance.subset_size = sizes[index % 3];
  return instance;
}

}  // namespace boostformer
