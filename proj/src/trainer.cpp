#include "boostformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace boostformer {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
    throw ConfigError("warmup_fraction must lie in [0, 1)");
}

double scheduled_learning_rate(const OptimizerConfig& config, long step, long total_steps) {
  const long warmup = static_cast<long>(std::floor(config.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup)
    return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const long remaining = total_steps - warmup;
  if (remaining <= 0) return 0.0;
  return config.learning_rate *
         std::max(0.0, static_cast<double>(total_steps - step) / static_cast<double>(remaining));
}

template <typename Scalar>
AdamW<Scalar>::AdamW(Eigen::Index size, double beta1, double beta2, double eps)
    : m_(Vector::Zero(size)), v_(Vector::Zero(size)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

template <typename Scalar>
void AdamW<Scalar>::step(Vector& params, const Vector& grad, double learning_rate,
                         double weight_decay) {
  ++t_;
  const Scalar b1 = static_cast<Scalar>(beta1_);
  const Scalar b2 = static_cast<Scalar>(beta2_);
  m_ = b1 * m_ + (Scalar(1) - b1) * grad;
  v_ = b2 * v_ + (Scalar(1) - b2) * grad.cwiseAbs2();
  const double bias1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bias2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const Scalar step_size = static_cast<Scalar>(learning_rate / bias1);
  const Scalar inv_sqrt_bias2 = static_cast<Scalar>(1.0 / std::sqrt(bias2));
  params *= static_cast<Scalar>(1.0 - learning_rate * weight_decay);
  params.array() -= step_size * m_.array() /
                    (v_.array().sqrt() * inv_sqrt_bias2 + static_cast<Scalar>(eps_));
}

template class AdamW<float>;
template class AdamW<double>;

double least_squares_loss(const PredictionMatrix& outputs, const PredictionMatrix& targets,
                          std::span<const double> weights) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
    throw std::domain_error("least_squares_loss: dimension mismatch");
  if (!weights.empty() && weights.size() != static_cast<std::size_t>(outputs.rows()))
    throw std::domain_error("least_squares_loss: weight count mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    const double err = (outputs.row(i) - targets.row(i)).squaredNorm();
    total += weights.empty() ? err : weights[static_cast<std::size_t>(i)] * err;
  }
  return total;
}

template <typename Scalar>
PredictionMatrix predict_all(const Transformer<Scalar>& learner, std::span<const Sequence> inputs) {
  PredictionMatrix out(static_cast<Eigen::Index>(inputs.size()), learner.config().num_classes);
  for (std::size_t i = 0; i < inputs.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = learner.predict(inputs[i]).transpose();
  return out;
}

namespace {

// Per-sample objective: returns the loss of sample i at `logits` and writes
// d(loss)/d(logits) into `dlogits`.
using SampleObjective =
    std::function<double(std::size_t i, const Eigen::VectorXd& logits, Eigen::VectorXd& dlogits)>;

template <typename Scalar>
TrainResult train_impl(Transformer<Scalar>& learner, std::span<const Sequence> inputs,
                       const SampleObjective& objective, const OptimizerConfig& config,
                       std::uint64_t seed, const EpochCallback& on_epoch) {
  config.validate();
  if (inputs.empty()) throw std::domain_error("training set is empty");
  using Vector = typename Transformer<Scalar>::Vector;

  auto full_loss = [&](const PredictionMatrix& outputs) {
    double total = 0.0;
    Eigen::VectorXd unused;
    for (std::size_t i = 0; i < inputs.size(); ++i)
      total += objective(i, outputs.row(static_cast<Eigen::Index>(i)).transpose(), unused);
    if (!std::isfinite(total)) throw NumericError("training loss is not finite");
    return total;
  };

  TrainResult result;
  result.outputs = predict_all(learner, inputs);
  result.best_loss = full_loss(result.outputs);
  result.loss_trace.push_back(result.best_loss);
  Vector best_params = learner.parameters();

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((inputs.size() + batch - 1) / batch);
  const long total_steps = steps_per_epoch * config.epochs;
  long step = 0;

  AdamW<Scalar> optimizer(learner.parameters().size());
  Vector grad = Vector::Zero(learner.parameters().size());
  typename Transformer<Scalar>::Cache cache;
  Eigen::VectorXd dlogits;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch, ++step) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      grad.setZero();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = order[b];
        const Eigen::VectorXd logits = learner.forward_train(inputs[i], cache, &rng);
        objective(i, logits, dlogits);
        learner.backward(cache, dlogits * inv_batch, grad);
      }
      if (!grad.allFinite()) throw NumericError("non-finite gradient");
      optimizer.step(learner.parameters(), grad, scheduled_learning_rate(config, step, total_steps),
                     config.weight_decay);
    }
    PredictionMatrix outputs = predict_all(learner, inputs);
    const double loss = full_loss(outputs);
    result.loss_trace.push_back(loss);
    if (on_epoch) on_epoch(epoch, outputs);
    if (loss < result.best_loss) {
      result.best_loss = loss;
      result.best_epoch = epoch;
      result.outputs = std::move(outputs);
      best_params = learner.parameters();
    }
  }
  learner.parameters() = best_params;
  return result;
}

}  // namespace

template <typename Scalar>
TrainResult train_least_squares(Transformer<Scalar>& learner, std::span<const Sequence> inputs,
                                const PredictionMatrix& targets, std::span<const double> weights,
                                const OptimizerConfig& config, std::uint64_t seed,
                                const EpochCallback& on_epoch) {
  if (static_cast<std::size_t>(targets.rows()) != inputs.size() ||
      targets.cols() != learner.config().num_classes)
    throw std::domain_error("targets do not match the training inputs");
  if (!weights.empty()) {
    if (weights.size() != inputs.size()) throw std::domain_error("sample weight count mismatch");
    for (double c : weights)
      if (!(c >= 0.0) || !std::isfinite(c)) throw std::domain_error("invalid sample weight");
  }
  const SampleObjective objective = [&](std::size_t i, const Eigen::VectorXd& logits,
                                        Eigen::VectorXd& dlogits) {
    const double c = weights.empty() ? 1.0 : weights[i];
    const Eigen::VectorXd residual = logits - targets.row(static_cast<Eigen::Index>(i)).transpose();
    dlogits = 2.0 * c * residual;
    return c * residual.squaredNorm();
  };
  return train_impl(learner, inputs, objective, config, seed, on_epoch);
}

template <typename Scalar>
TrainResult train_classifier(Transformer<Scalar>& learner, std::span<const Sequence> inputs,
                             std::span<const int> labels, const OptimizerConfig& config,
                             std::uint64_t seed, const EpochCallback& on_epoch) {
  if (labels.size() != inputs.size()) throw std::domain_error("label count mismatch");
  const SampleObjective objective = [&](std::size_t i, const Eigen::VectorXd& logits,
                                        Eigen::VectorXd& dlogits) {
    const double shift = logits.maxCoeff();
    const Eigen::VectorXd e = (logits.array() - shift).exp().matrix();
    const double total = e.sum();
    dlogits = e / total;
    dlogits[labels[i]] -= 1.0;
    return std::log(total) + shift - logits[labels[i]];
  };
  return train_impl(learner, inputs, objective, config, seed, on_epoch);
}

GradientCheckResult gradient_check(const Transformer<double>& learner,
                                   std::span<const TokenId> sample, const Eigen::VectorXd& target,
                                   double epsilon) {
  Transformer<double> probe = learner;
  Transformer<double>::Cache cache;
  const Eigen::VectorXd logits = probe.forward_train(sample, cache, nullptr);
  GradientCheckResult result;
  Transformer<double>::Vector grad = Transformer<double>::Vector::Zero(probe.parameters().size());
  probe.backward(cache, 2.0 * (logits - target), grad);
  result.analytic = grad;
  result.numeric.resize(grad.size());

  auto loss = [&] { return (probe.predict(sample) - target).squaredNorm(); };
  Eigen::Index worst = -1;
  for (Eigen::Index p = 0; p < grad.size(); ++p) {
    const double saved = probe.parameters()[p];
    probe.parameters()[p] = saved + epsilon;
    const double up = loss();
    probe.parameters()[p] = saved - epsilon;
    const double down = loss();
    probe.parameters()[p] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    result.numeric[p] = numeric;
    const double a = std::abs(grad[p]);
    const double n = std::abs(numeric);
    if (a < 1e-10 && n < 1e-10) continue;
    const double rel = std::abs(grad[p] - numeric) / std::max(a, n);
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      worst = p;
    }
  }
  if (worst >= 0) {
    for (const auto& s : probe.layout().slots())
      if (worst >= s.offset && worst < s.offset + s.size()) result.worst_tensor = s.name;
  }
  return result;
}

GradientCheckResult gradient_check(TransformerConfig config, std::span<const TokenId> sample,
                                   const Eigen::VectorXd& target, std::uint64_t seed,
                                   double epsilon) {
  config.precision = Precision::Double;
  config.dropout = 0.0;
  return gradient_check(Transformer<double>(config, seed), sample, target, epsilon);
}

#define BOOSTFORMER_INSTANTIATE(Scalar)                                                        \
  template PredictionMatrix predict_all(const Transformer<Scalar>&, std::span<const Sequence>); \
  template TrainResult train_least_squares(Transformer<Scalar>&, std::span<const Sequence>,     \
                                           const PredictionMatrix&, std::span<const double>,    \
                                           const OptimizerConfig&, std::uint64_t,               \
                                           const EpochCallback&);                               \
  template TrainResult train_classifier(Transformer<Scalar>&, std::span<const Sequence>,        \
                                        std::span<const int>, const OptimizerConfig&,           \
                                        std::uint64_t, const EpochCallback&);

BOOSTFORMER_INSTANTIATE(float)
BOOSTFORMER_INSTANTIATE(double)
#undef BOOSTFORMER_INSTANTIATE

}  // namespace boostformer
