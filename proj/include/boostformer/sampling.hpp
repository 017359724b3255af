#pragma once

// Residual-norm importance sampling over training samples: the sampling
// distribution, i.i.d. subset draws, and the reweighted (unbiased)
// least-squares loss.

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "boostformer/common.hpp"

namespace boostformer {

struct SamplingDistribution {
  Eigen::VectorXd probabilities;
  bool degenerate = false;  // all weight norms vanished; uniform fallback

  std::size_t size() const { return static_cast<std::size_t>(probabilities.size()); }
};

struct SampledSubset {
  std::vector<std::size_t> indices;  // with repetition, in draw order
};

/// P(i) = ||w_i|| / sum_j ||w_j|| over the rows of `weights`.
/// Throws std::domain_error for an empty dataset.
SamplingDistribution build_distribution(const PredictionMatrix& weights);

/// Uniform distribution over n samples.
SamplingDistribution uniform_distribution(std::size_t n);

/// ceil(keep_fraction * dataset_size) i.i.d. inverse-CDF draws with replacement.
SampledSubset draw_subset(const SamplingDistribution& dist, double keep_fraction,
                          std::size_t dataset_size, std::mt19937_64& rng);

/// Number of draws for a subset of the given fraction.
std::size_t subset_size(double keep_fraction, std::size_t dataset_size);

/// sum over draws of ||g_i - w_i||^2 / (|D| P_i), repeated draws counted each time.
/// Throws std::domain_error when a drawn index has zero probability.
double weighted_loss(const PredictionMatrix& predictions, const PredictionMatrix& targets,
                     const SamplingDistribution& dist, std::size_t dataset_size,
                     const SampledSubset& subset);

/// Collapsed form of a subset for training: distinct indices in first-draw
/// order with weights multiplicity / (|D| P_i). Training on these rows with
/// these weights has exactly the objective of weighted_loss.
struct WeightedRows {
  std::vector<std::size_t> rows;
  std::vector<double> weights;
};

WeightedRows importance_weights(const SamplingDistribution& dist, std::size_t dataset_size,
                                const SampledSubset& subset);

}  // namespace boostformer
