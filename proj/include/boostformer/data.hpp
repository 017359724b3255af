#pragma once

// Corpus ingestion, whitespace tokenization, vocabulary construction,
// synthetic planted-keyword corpora, and sample-level helpers.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "boostformer/common.hpp"

namespace boostformer {

/// Raw labelled text; the label is 1-based as in corpus files.
struct CorpusRecord {
  std::string text;
  int label = 1;
};

/// Encoded sample: [CLS] + token ids, with a 0-based label.
struct Sample {
  Sequence tokens;
  int label = 0;
};

std::vector<Sequence> sequences(std::span<const Sample> samples);
std::vector<int> labels(std::span<const Sample> samples);

class Tokenizer {
 public:
  /// Ranks whitespace-split (optionally casefolded) words by frequency, then
  /// lexicographically; keeps at most `max_size` words occurring at least
  /// `min_freq` times. Throws std::domain_error for an empty corpus.
  static Tokenizer build(std::span<const CorpusRecord> corpus, int min_freq = 1,
                         std::size_t max_size = std::numeric_limits<std::size_t>::max(),
                         bool casefold = true);

  /// Rebuilds a tokenizer from its regular words in id order.
  static Tokenizer from_words(std::vector<std::string> words, bool casefold);

  TokenId id(std::string_view word) const;
  std::string token_string(TokenId id) const;
  TokenId vocab_size() const { return static_cast<TokenId>(words_.size()) + kNumSpecialTokens; }
  const std::vector<std::string>& words() const { return words_; }
  bool casefold() const { return casefold_; }

  std::vector<std::string> split(std::string_view text) const;

  /// [CLS] + ids truncated to `max_len` ids in total; label converted to 0-based.
  Sample encode(const CorpusRecord& record, std::size_t max_len) const;
  /// Space-joined words of the non-classification tokens.
  std::string decode(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
  bool casefold_ = true;
};

std::vector<Sample> encode_all(const Tokenizer& tokenizer, std::span<const CorpusRecord> corpus,
                               std::size_t max_len);

/// Right-pads every sequence with PAD to the longest length in the batch.
std::vector<Sequence> pad_batch(std::span<const Sequence> batch);

enum class NoiseDistribution { Uniform, Zipf };

struct SyntheticSpec {
  int num_classes = 2;
  int vocab_size = 200;          // distinct words, keywords included
  int keywords_per_class = 5;
  int keywords_per_sample = 2;   // planted occurrences when injected
  double injection_prob = 0.9;
  int min_length = 12;           // content tokens, classification token excluded
  int max_length = 24;
  NoiseDistribution noise = NoiseDistribution::Uniform;
  double zipf_exponent = 1.0;
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<CorpusRecord> train;
  std::vector<CorpusRecord> test;
};

/// Each record draws a uniform label and noise words; with probability
/// `injection_prob` some positions are replaced by keywords of its class.
/// Keyword words are "kw<class>_<j>", noise words "w<j>".
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

enum class CorpusFormat { Jsonl, Csv };

CorpusFormat parse_corpus_format(std::string_view name);

/// Parses a JSONL ({"text", "label"} per line) or CSV (header text,label)
/// corpus, preserving file order. Labels must lie in 1..num_classes
/// (num_classes = 0 only requires label >= 1). Throws DataError naming the
/// offending line, and std::domain_error for an empty corpus.
std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path, CorpusFormat format,
                                      int num_classes);

/// Removes floor(fraction * (len - 1)) randomly chosen non-classification
/// tokens from every sample.
std::vector<Sample> remove_random_tokens(std::span<const Sample> samples, double fraction,
                                         std::uint64_t seed);

}  // namespace boostformer
