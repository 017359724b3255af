#include "boostformer/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace boostformer {

SamplingDistribution build_distribution(const PredictionMatrix& weights) {
  if (weights.rows() == 0) throw std::domain_error("empty dataset");
  SamplingDistribution dist;
  dist.probabilities = weights.rowwise().norm();
  if (!dist.probabilities.allFinite()) throw std::domain_error("non-finite boosting weights");
  const double total = dist.probabilities.sum();
  if (total <= 0.0) {
    dist = uniform_distribution(static_cast<std::size_t>(weights.rows()));
    dist.degenerate = true;
    return dist;
  }
  dist.probabilities /= total;
  return dist;
}

SamplingDistribution uniform_distribution(std::size_t n) {
  if (n == 0) throw std::domain_error("empty dataset");
  SamplingDistribution dist;
  dist.probabilities = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
  return dist;
}

std::size_t subset_size(double keep_fraction, std::size_t dataset_size) {
  return static_cast<std::size_t>(
      std::ceil(keep_fraction * static_cast<double>(dataset_size) - 1e-9));
}

SampledSubset draw_subset(const SamplingDistribution& dist, double keep_fraction,
                          std::size_t dataset_size, std::mt19937_64& rng) {
  if (dist.size() != dataset_size) throw std::domain_error("distribution size mismatch");
  std::vector<double> cdf(dataset_size);
  double running = 0.0;
  for (std::size_t i = 0; i < dataset_size; ++i) {
    running += dist.probabilities[static_cast<Eigen::Index>(i)];
    cdf[i] = running;
  }
  SampledSubset subset;
  const std::size_t draws = subset_size(keep_fraction, dataset_size);
  subset.indices.reserve(draws);
  for (std::size_t k = 0; k < draws; ++k) {
    const double u = uniform01(rng) * running;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    subset.indices.push_back(std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()),
                                                   dataset_size - 1));
  }
  return subset;
}

namespace {

double inverse_weight(const SamplingDistribution& dist, std::size_t dataset_size, std::size_t i) {
  if (i >= dist.size()) throw std::domain_error("subset index out of range");
  const double p = dist.probabilities[static_cast<Eigen::Index>(i)];
  if (!(p > 0.0)) throw std::domain_error("selected sample has zero probability");
  return 1.0 / (static_cast<double>(dataset_size) * p);
}

}  // namespace

double weighted_loss(const PredictionMatrix& predictions, const PredictionMatrix& targets,
                     const SamplingDistribution& dist, std::size_t dataset_size,
                     const SampledSubset& subset) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    throw std::domain_error("weighted_loss: dimension mismatch");
  double total = 0.0;
  for (std::size_t i : subset.indices) {
    const auto row = static_cast<Eigen::Index>(i);
    if (row >= predictions.rows()) throw std::domain_error("subset index out of range");
    total += inverse_weight(dist, dataset_size, i) * (predictions.row(row) - targets.row(row)).squaredNorm();
  }
  return total;
}

WeightedRows importance_weights(const SamplingDistribution& dist, std::size_t dataset_size,
                                const SampledSubset& subset) {
  WeightedRows out;
  std::unordered_map<std::size_t, std::size_t> position;
  for (std::size_t i : subset.indices) {
    const double c = inverse_weight(dist, dataset_size, i);
    auto [it, inserted] = position.try_emplace(i, out.rows.size());
    if (inserted) {
      out.rows.push_back(i);
      out.weights.push_back(c);
    } else {
      out.weights[it->second] += c;
    }
  }
  return out;
}

}  // namespace boostformer
