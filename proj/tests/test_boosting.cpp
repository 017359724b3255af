#include <cmath>
#include <random>

#include "boostformer/boosting.hpp"
#include "doctest.h"

using namespace boostformer;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

PredictionMatrix rows(std::initializer_list<std::initializer_list<double>> values) {
  PredictionMatrix m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : values) m.row(i++) = vec(r).transpose();
  return m;
}

}  // namespace

TEST_CASE("per-sample loss") {
  CHECK(per_sample_loss(vec({0, 0}), 0) == doctest::Approx(1.0));
  CHECK(per_sample_loss(vec({0, 0, 0}), 1) == doctest::Approx(2.0));
  CHECK(per_sample_loss(vec({1, 0}), 0) == doctest::Approx(0.6065306597).epsilon(1e-9));
  CHECK_THROWS_AS(per_sample_loss(vec({0, 0}), 2), std::domain_error);
  CHECK_THROWS_AS(per_sample_loss(vec({std::nan(""), 0}), 0), std::domain_error);
}

TEST_CASE("risk averages the per-sample loss") {
  const std::vector<int> two{0, 1};
  CHECK(risk(PredictionMatrix::Zero(2, 2), two) == doctest::Approx(1.0));
  const std::vector<int> one{0};
  CHECK(risk(rows({{1, 0}}), one) == doctest::Approx(0.6065306597).epsilon(1e-9));
}

TEST_CASE("boosting weights") {
  CHECK((compute_weights(vec({0, 0}), 0) - vec({1, -1})).norm() < 1e-15);
  CHECK((compute_weights(vec({0, 0, 0}), 1) - vec({-1, 2, -1})).norm() < 1e-15);
  const Eigen::VectorXd w = compute_weights(vec({1, 0}), 0);
  CHECK(w(0) == doctest::Approx(0.6065306597).epsilon(1e-9));
  CHECK(w(1) == doctest::Approx(-0.6065306597).epsilon(1e-9));
}

TEST_CASE("weights equal -2 times the finite-difference gradient") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 2 + trial % 4;
    Eigen::VectorXd f(m);
    for (int k = 0; k < m; ++k) f(k) = normal(rng);
    const int z = trial % m;
    const Eigen::VectorXd w = compute_weights(f, z);
    for (int k = 0; k < m; ++k) {
      const double h = 1e-6;
      Eigen::VectorXd up = f, down = f;
      up(k) += h;
      down(k) -= h;
      const double grad = (per_sample_loss(up, z) - per_sample_loss(down, z)) / (2 * h);
      CHECK(std::abs(w(k) + 2 * grad) <= 1e-6 * std::max(1.0, std::abs(w(k))));
    }
  }
}

TEST_CASE("exponent clamping is reported") {
  bool saturated = false;
  const Eigen::VectorXd w = compute_weights(vec({-2000, 0}), 0, &saturated);
  CHECK(saturated);
  CHECK(std::isfinite(w(0)));
  saturated = false;
  compute_weights(vec({1, 0}), 0, &saturated);
  CHECK_FALSE(saturated);
}

TEST_CASE("directional derivative") {
  const PredictionMatrix w = rows({{1, -1}});
  CHECK(directional_derivative(w, w) == doctest::Approx(-1.0));
  CHECK(directional_derivative(PredictionMatrix::Zero(1, 2), w) == 0.0);
  CHECK(directional_derivative(rows({{1, 1}}), w) == 0.0);
}

TEST_CASE("line search edge cases") {
  EnsembleConfig config;
  const std::vector<int> first{0};
  CHECK(line_search_alpha(PredictionMatrix::Zero(1, 2), rows({{1, -1}}), first, config) ==
        doctest::Approx(config.alpha_max).epsilon(1e-6));
  CHECK(line_search_alpha(PredictionMatrix::Zero(1, 2), rows({{-1, 1}}), first, config) == 0.0);
  const std::vector<int> both{0, 1};
  CHECK(line_search_alpha(PredictionMatrix::Zero(2, 2), rows({{1, -1}, {1, -1}}), both, config) ==
        doctest::Approx(0.0).epsilon(1e-5));
  // restricting to row 0 (twice) recovers the monotone case
  const std::vector<std::size_t> only_first{0, 0};
  CHECK(line_search_alpha(PredictionMatrix::Zero(2, 2), rows({{1, -1}, {1, -1}}), both, config, only_first) ==
        doctest::Approx(config.alpha_max).epsilon(1e-6));
}

TEST_CASE("golden section finds a quadratic minimum") {
  const double x = golden_section_minimize([](double a) { return (a - 1.3) * (a - 1.3); }, 0.0, 10.0, 1e-8);
  CHECK(x == doctest::Approx(1.3).epsilon(1e-6));
}

TEST_CASE("prediction and accuracy") {
  CHECK(predicted_class(vec({0, 0, 0})) == 0);
  CHECK(predicted_class(vec({0, 2, 2})) == 1);
  const std::vector<int> labels{0, 1, 1};
  CHECK(accuracy(rows({{1, 0}, {0, 1}, {0, 0}}), labels) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("ensemble config validation") {
  EnsembleConfig config;
  config.shrinkage = 0.0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config = {};
  config.keep_fraction = 1.5;
  CHECK_THROWS_AS(config.validate(), ConfigError);
}
