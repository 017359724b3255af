#pragma once

// Bidirectional transformer encoder used as the boosting weak learner.
//
// Post-LN encoder blocks (multi-head self-attention and a GELU feed-forward,
// each with a residual connection and layer normalization) over token plus
// learned positional embeddings. A linear head maps the final hidden state of
// position 0 (the classification token) to R^M.
//
// All parameters live in one flat buffer; named tensors are row-major views
// into it. That makes copies, optimizer steps, finite-difference checks and
// checkpointing plain vector operations.

#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "boostformer/common.hpp"

namespace boostformer {

enum class Precision { Single, Double };

struct TransformerConfig {
  int layers = 6;
  int heads = 6;
  int d_model = 96;
  int d_ff = 384;
  int max_len = 128;   // s_max, including the classification token
  int vocab_size = 0;  // global vocabulary, special tokens included
  int num_classes = 2;
  double dropout = 0.1;
  Precision precision = Precision::Single;
  bool zero_head = true;  // zero-initialize the output head

  void validate() const;
  bool operator==(const TransformerConfig&) const = default;
};

/// Head-averaged attention of one forward pass. `layers[k](dst, src)` is the
/// weight with which destination `dst` in layer k+1 draws from source `src`
/// of layer k. Each row sums to one over the (non-padding) sources.
struct AttentionRecord {
  std::vector<Eigen::MatrixXd> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
  int length() const { return layers.empty() ? 0 : static_cast<int>(layers.front().rows()); }

  /// a(src, dst; layer) with 0-based positions and layers.
  double operator()(int src, int dst, int layer) const { return layers[layer](dst, src); }
};

struct TensorSlot {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index offset = 0;

  Eigen::Index size() const { return rows * cols; }
};

class ParameterLayout {
 public:
  struct Layer {
    std::size_t q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
    std::size_t ln1_g, ln1_b, ff1_w, ff1_b, ff2_w, ff2_b, ln2_g, ln2_b;
  };

  explicit ParameterLayout(const TransformerConfig& config);

  const std::vector<TensorSlot>& slots() const { return slots_; }
  const TensorSlot& slot(std::size_t index) const { return slots_[index]; }
  /// Throws std::out_of_range for unknown names.
  const TensorSlot& slot(std::string_view name) const;
  Eigen::Index total_size() const { return total_; }

  std::size_t token_embedding = 0;
  std::size_t position_embedding = 0;
  std::vector<Layer> layer;
  std::size_t head_w = 0;
  std::size_t head_b = 0;

 private:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

  std::vector<TensorSlot> slots_;
  Eigen::Index total_ = 0;
};

template <typename Scalar>
class Transformer {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  struct LayerCache {
    Matrix x_in, q, k, v;
    std::vector<Matrix> probs;  // per head, (dst, src)
    Matrix ctx;
    Matrix attn_mask;  // scaled dropout mask; empty when inactive
    Matrix xhat1;
    Vector rstd1;
    Matrix y1, h_pre, h_act;
    Matrix ff_mask;
    Matrix xhat2;
    Vector rstd2;
  };

  struct Cache {
    Sequence tokens;
    Matrix embed_mask;
    std::vector<LayerCache> layers;
    RowVector cls_hidden;
  };

  /// Random initialization drawn from `seed`.
  Transformer(const TransformerConfig& config, std::uint64_t seed);

  /// Full parameter copy of `previous`; throws std::domain_error when
  /// `config` differs from the previous learner's configuration.
  static Transformer init_from(const Transformer& previous, const TransformerConfig& config);

  const TransformerConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return *layout_; }
  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }

  MatrixMap tensor(std::string_view name);
  ConstMatrixMap tensor(std::string_view name) const;

  /// Inference-mode logits (dropout off).
  Eigen::VectorXd predict(std::span<const TokenId> tokens) const;

  /// Inference-mode logits together with the head-averaged attention record.
  std::pair<Eigen::VectorXd, AttentionRecord> forward(std::span<const TokenId> tokens) const;

  /// Forward pass that fills `cache` for a subsequent backward(). Dropout is
  /// applied when `dropout_rng` is non-null and the configured rate is > 0.
  Eigen::VectorXd forward_train(std::span<const TokenId> tokens, Cache& cache,
                                std::mt19937_64* dropout_rng) const;

  /// Accumulates d(loss)/d(parameters) into `grad` given d(loss)/d(logits).
  void backward(const Cache& cache, const Eigen::VectorXd& dlogits, Vector& grad) const;

 private:
  Eigen::VectorXd run(std::span<const TokenId> tokens, Cache* cache, AttentionRecord* record,
                      std::mt19937_64* dropout_rng) const;
  void check_input(std::span<const TokenId> tokens) const;

  MatrixMap view(Vector& buffer, std::size_t slot) const;
  ConstMatrixMap view(const Vector& buffer, std::size_t slot) const;

  TransformerConfig config_;
  std::shared_ptr<const ParameterLayout> layout_;
  Vector params_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace boostformer
