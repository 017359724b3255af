#pragma once

// Mini-batch training of a Transformer weak learner: AdamW with decoupled
// weight decay, linear warmup followed by linear decay, and best-epoch
// checkpoint retention. Also the finite-difference gradient check used to
// validate the hand-written backward pass.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "boostformer/transformer.hpp"

namespace boostformer {

struct OptimizerConfig {
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  int batch_size = 16;
  int epochs = 5;
  double warmup_fraction = 0.06;

  void validate() const;
};

/// Learning rate for 0-based optimizer step `step` out of `total_steps`:
/// linear ramp over the warmup steps, then linear decay to zero.
double scheduled_learning_rate(const OptimizerConfig& config, long step, long total_steps);

template <typename Scalar>
class AdamW {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  explicit AdamW(Eigen::Index size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(Vector& params, const Vector& grad, double learning_rate, double weight_decay);

 private:
  Vector m_;
  Vector v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

struct TrainResult {
  std::vector<double> loss_trace;  // full-data loss before training, then after each epoch
  int best_epoch = 0;              // 0 = the initial parameters were never improved upon
  double best_loss = 0.0;
  PredictionMatrix outputs;        // outputs of the retained parameters on the training inputs
};

/// Invoked after every epoch with the epoch index (1-based) and the outputs of
/// that epoch's parameters on the training inputs.
using EpochCallback = std::function<void(int epoch, const PredictionMatrix& outputs)>;

/// sum_i c_i ||outputs_i - targets_i||^2 with c_i = 1 when `weights` is empty.
double least_squares_loss(const PredictionMatrix& outputs, const PredictionMatrix& targets,
                          std::span<const double> weights = {});

/// Inference-mode logits for every sequence, one row each.
template <typename Scalar>
PredictionMatrix predict_all(const Transformer<Scalar>& learner, std::span<const Sequence> inputs);

/// Fits the learner to `targets` under the (optionally weighted) least-squares
/// objective. On return the learner holds the parameters of the epoch with the
/// lowest full-data loss, which is never above the initial loss.
template <typename Scalar>
TrainResult train_least_squares(Transformer<Scalar>& learner, std::span<const Sequence> inputs,
                                const PredictionMatrix& targets, std::span<const double> weights,
                                const OptimizerConfig& config, std::uint64_t seed,
                                const EpochCallback& on_epoch = {});

/// Softmax cross-entropy training against 0-based labels; used by the
/// non-boosted baselines. Same schedule and checkpoint retention.
template <typename Scalar>
TrainResult train_classifier(Transformer<Scalar>& learner, std::span<const Sequence> inputs,
                             std::span<const int> labels, const OptimizerConfig& config,
                             std::uint64_t seed, const EpochCallback& on_epoch = {});

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  Eigen::VectorXd analytic;  // analytic gradient over the flat parameter vector
  Eigen::VectorXd numeric;   // central differences
};

/// Compares the analytic gradient of ||g(x) - target||^2 with central finite
/// differences at step `epsilon` for every parameter. Relative error per entry
/// is |a - n| / max(|a|, |n|); entries where both are below 1e-10 count as 0.
GradientCheckResult gradient_check(const Transformer<double>& learner,
                                   std::span<const TokenId> sample, const Eigen::VectorXd& target,
                                   double epsilon = 1e-4);

/// Same, on a freshly initialized double-precision learner (dropout disabled).
GradientCheckResult gradient_check(TransformerConfig config, std::span<const TokenId> sample,
                                   const Eigen::VectorXd& target, std::uint64_t seed,
                                   double epsilon = 1e-4);

}  // namespace boostformer
