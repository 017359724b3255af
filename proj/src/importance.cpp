#include "boostformer/importance.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace boostformer {

VocabSubset::VocabSubset(std::vector<TokenId> ids) : ids_(std::move(ids)) {
  std::sort(ids_.begin(), ids_.end());
  ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
  if (!ids_.empty()) {
    if (ids_.front() < 0) throw std::domain_error("negative token id in vocabulary subset");
    mask_.assign(static_cast<std::size_t>(ids_.back()) + 1, false);
    for (TokenId id : ids_) mask_[static_cast<std::size_t>(id)] = true;
  }
}

VocabSubset VocabSubset::full(TokenId vocab_size) {
  std::vector<TokenId> ids(static_cast<std::size_t>(vocab_size));
  for (TokenId i = 0; i < vocab_size; ++i) ids[static_cast<std::size_t>(i)] = i;
  return VocabSubset(std::move(ids));
}

bool VocabSubset::contains(TokenId id) const {
  return id >= 0 && static_cast<std::size_t>(id) < mask_.size() && mask_[static_cast<std::size_t>(id)];
}

bool VocabSubset::is_subset_of(const VocabSubset& parent) const {
  return std::all_of(ids_.begin(), ids_.end(), [&](TokenId id) { return parent.contains(id); });
}

namespace {

void check_position(const AttentionRecord& attention, int position) {
  if (attention.num_layers() < 1) throw std::domain_error("empty attention record");
  if (position < 1 || position >= attention.length())
    throw std::domain_error("importance position " + std::to_string(position) + " outside [1, " +
                            std::to_string(attention.length()) + ")");
}

}  // namespace

double self_importance(const AttentionRecord& attention, int position) {
  check_position(attention, position);
  return attention(position, 0, attention.num_layers() - 1);
}

PathScore rest_importance(const AttentionRecord& attention, int position) {
  check_position(attention, position);
  const int s = attention.length();
  const int last = attention.num_layers() - 1;
  PathScore out;
  double product = 1.0;
  int current = position;
  for (int k = 0; k < last; ++k) {
    int best = -1;
    double best_value = 0.0;
    for (int j = 0; j < s; ++j) {
      if (j == position) continue;
      const double a = attention(current, j, k);
      if (best < 0 || a > best_value) {
        best = j;
        best_value = a;
      }
    }
    if (best < 0) {
      out.degenerate = true;
      return out;
    }
    product *= best_value;
    current = best;
  }
  out.value = product * attention(current, 0, last);
  return out;
}

std::vector<std::pair<TokenId, double>> token_scores(const AttentionRecord& attention,
                                                     std::span<const TokenId> tokens) {
  if (static_cast<int>(tokens.size()) != attention.length())
    throw std::domain_error("attention record length does not match the sample");
  std::vector<std::pair<TokenId, double>> scores;
  scores.reserve(tokens.size());
  for (int p = 1; p < attention.length(); ++p) {
    if (tokens[static_cast<std::size_t>(p)] == kPadToken) continue;
    scores.emplace_back(tokens[static_cast<std::size_t>(p)],
                        self_importance(attention, p) + rest_importance(attention, p).value);
  }
  return scores;
}

void accumulate_importance(ImportanceTable& table, const AttentionRecord& attention,
                           std::span<const TokenId> tokens) {
  for (const auto& [token, score] : token_scores(attention, tokens)) {
    auto it = table.find(token);
    if (it != table.end()) it->second += score;
  }
}

ImportanceTable aggregate_importance(std::span<const AttentionRecord> attention,
                                     std::span<const Sequence> samples,
                                     const VocabSubset& vocabulary) {
  if (attention.size() != samples.size())
    throw std::domain_error("one attention record per sample is required");
  ImportanceTable table;
  for (TokenId id : vocabulary.ids()) table.emplace(id, 0.0);
  for (std::size_t i = 0; i < samples.size(); ++i)
    accumulate_importance(table, attention[i], samples[i]);
  return table;
}

PruneResult prune_vocab(const ImportanceTable& table, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction < 1.0))
    throw std::domain_error("keep fraction must lie in (0, 1)");
  std::vector<std::pair<TokenId, double>> content;
  std::vector<TokenId> kept;
  for (const auto& [id, score] : table) {
    if (is_special_token(id))
      kept.push_back(id);
    else
      content.emplace_back(id, score);
  }
  PruneResult result;
  if (content.empty()) {
    result.kept = VocabSubset(std::move(kept));
    result.unchanged_warning = true;
    return result;
  }
  // Guard against sigma * n landing a rounding error above an integer.
  const auto budget = static_cast<std::size_t>(
      std::ceil(keep_fraction * static_cast<double>(content.size()) - 1e-9));
  std::stable_sort(content.begin(), content.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (std::size_t i = 0; i < std::min(budget, content.size()); ++i) kept.push_back(content[i].first);
  result.kept = VocabSubset(std::move(kept));
  return result;
}

Sequence filter_sample(std::span<const TokenId> sample, const VocabSubset& vocab) {
  Sequence out;
  out.reserve(sample.size());
  for (std::size_t i = 0; i < sample.size(); ++i)
    if (i == 0 || vocab.contains(sample[i])) out.push_back(sample[i]);
  return out;
}

}  // namespace boostformer
