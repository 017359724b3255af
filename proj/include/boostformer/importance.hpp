#pragma once

// Attention-path token importance and vocabulary pruning for the subsequence
// boosting variants.
//
// Positions are 0-based: the classification token sits at position 0 and
// content tokens at 1..s-1. Attention is read through AttentionRecord's
// (source, destination, layer) accessor.

#include <map>
#include <span>
#include <vector>

#include "boostformer/transformer.hpp"

namespace boostformer {

/// Vocabulary token id -> accumulated importance score (>= 0).
using ImportanceTable = std::map<TokenId, double>;

/// Ordered, nested token set V_t.
class VocabSubset {
 public:
  VocabSubset() = default;
  /// Ids are sorted and de-duplicated.
  explicit VocabSubset(std::vector<TokenId> ids);

  /// Every id in [0, vocab_size).
  static VocabSubset full(TokenId vocab_size);

  const std::vector<TokenId>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }
  bool contains(TokenId id) const;
  /// True when every id here is also in `parent`.
  bool is_subset_of(const VocabSubset& parent) const;

 private:
  std::vector<TokenId> ids_;
  std::vector<bool> mask_;
};

struct PathScore {
  double value = 0.0;
  bool degenerate = false;  // no candidate position besides p
};

/// I^S at position p: a(p, 0; L) read from the last layer. Throws
/// std::domain_error unless 1 <= p < length.
double self_importance(const AttentionRecord& attention, int position);

/// I^R at position p: greedy path p_0 = p, p_k = argmax_{j != p} a(p_{k-1}, j; k)
/// (smallest index on ties) through layers 1..L-1, multiplied by the last-layer
/// attention a(p_{L-1}, 0; L). With a single layer the product is empty.
PathScore rest_importance(const AttentionRecord& attention, int position);

/// Adds I^S + I^R of every content position of one sample to `table`.
/// Tokens outside the table's domain are ignored.
void accumulate_importance(ImportanceTable& table, const AttentionRecord& attention,
                           std::span<const TokenId> tokens);

/// Per-position (token, I^S + I^R) contributions of one sample.
std::vector<std::pair<TokenId, double>> token_scores(const AttentionRecord& attention,
                                                     std::span<const TokenId> tokens);

/// Table over `vocabulary` (zeros included) summing I^S + I^R over every
/// occurrence in every sample.
ImportanceTable aggregate_importance(std::span<const AttentionRecord> attention,
                                     std::span<const Sequence> samples,
                                     const VocabSubset& vocabulary);

struct PruneResult {
  VocabSubset kept;
  bool unchanged_warning = false;  // nothing but special tokens to prune
};

/// Keeps the ceil(keep_fraction * n) highest-scoring non-special tokens of the
/// table (ties by ascending id), where n counts the table's non-special
/// tokens; special tokens are always kept and do not use the budget.
PruneResult prune_vocab(const ImportanceTable& table, double keep_fraction);

/// Order-preserving filter; the classification token stays at position 0.
Sequence filter_sample(std::span<const TokenId> sample, const VocabSubset& vocab);

}  // namespace boostformer
