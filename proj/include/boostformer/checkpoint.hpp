#pragma once

// Self-describing model container.
//
// Layout: the 8-byte magic "BFMODEL\0", a little-endian u32 format version, a
// little-endian u64 header length, a UTF-8 JSON header, then the raw tensor
// data. The header records the variant, transformer configuration,
// tokenizer vocabulary, per-stage coefficients and vocabularies, and a tensor
// table of {name, dims, dtype, offset}. Tensors are row-major little-endian
// float32 or float64; offsets are relative to the start of the data section.

#include <cstdint>
#include <filesystem>
#include <string>

#include "boostformer/data.hpp"
#include "boostformer/ensemble.hpp"

namespace boostformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
struct SavedModel {
  std::string variant;
  Tokenizer tokenizer;
  Ensemble<Transformer<Scalar>> ensemble;
};

/// Writes via a temporary file and rename.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const std::string& variant,
                     const Tokenizer& tokenizer, const Ensemble<Transformer<Scalar>>& ensemble);

/// Element type stored in a checkpoint, read from its header.
Precision checkpoint_precision(const std::filesystem::path& path);

/// Throws DataError on a malformed file, an unknown version, or a stored
/// element type different from Scalar.
template <typename Scalar>
SavedModel<Scalar> load_checkpoint(const std::filesystem::path& path);

/// Writes `bytes` to `path` through a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

extern template void save_checkpoint<float>(const std::filesystem::path&, const std::string&,
                                            const Tokenizer&, const Ensemble<Transformer<float>>&);
extern template void save_checkpoint<double>(const std::filesystem::path&, const std::string&,
                                             const Tokenizer&, const Ensemble<Transformer<double>>&);
extern template SavedModel<float> load_checkpoint<float>(const std::filesystem::path&);
extern template SavedModel<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace boostformer
