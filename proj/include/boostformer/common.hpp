#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace boostformer {

using TokenId = std::int32_t;
using Sequence = std::vector<TokenId>;

/// Reserved token ids shared by the tokenizer and the encoder.
inline constexpr TokenId kClsToken = 0;
inline constexpr TokenId kPadToken = 1;
inline constexpr TokenId kUnkToken = 2;
inline constexpr TokenId kNumSpecialTokens = 3;

inline bool is_special_token(TokenId id) { return id >= 0 && id < kNumSpecialTokens; }

/// Row i holds the M-dimensional prediction (or target) for sample i.
using PredictionMatrix = Eigen::MatrixXd;

/// Invalid or inconsistent configuration. Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input data (corpus files, checkpoints).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values during training or evaluation. Maps to CLI exit code 3.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Derives an independent 64-bit seed for a numbered stream (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit engine draw.
template <class Engine>
double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace boostformer
