#include "boostformer/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

namespace boostformer {

std::vector<Sequence> sequences(std::span<const Sample> samples) {
  std::vector<Sequence> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.tokens);
  return out;
}

std::vector<int> labels(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

namespace {

const char* const kSpecialStrings[] = {"[CLS]", "[PAD]", "[UNK]"};

std::vector<std::string> split_words(std::string_view text, bool casefold) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(casefold ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

}  // namespace

Tokenizer Tokenizer::build(std::span<const CorpusRecord> corpus, int min_freq, std::size_t max_size,
                           bool casefold) {
  if (corpus.empty()) throw std::domain_error("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& record : corpus)
    for (auto& w : split_words(record.text, casefold)) ++counts[std::move(w)];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [word, count] : counts)
    if (count >= static_cast<std::size_t>(std::max(min_freq, 1))) ranked.emplace_back(word, count);
  // counts is ordered lexicographically, so a stable sort keeps that as the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_size) ranked.resize(max_size);

  std::vector<std::string> words;
  words.reserve(ranked.size());
  for (auto& entry : ranked) words.push_back(std::move(entry.first));
  return from_words(std::move(words), casefold);
}

Tokenizer Tokenizer::from_words(std::vector<std::string> words, bool casefold) {
  Tokenizer t;
  t.casefold_ = casefold;
  t.words_ = std::move(words);
  for (std::size_t i = 0; i < t.words_.size(); ++i) {
    const auto [it, inserted] =
        t.index_.emplace(t.words_[i], static_cast<TokenId>(i) + kNumSpecialTokens);
    if (!inserted) throw DataError("duplicate vocabulary word '" + t.words_[i] + "'");
  }
  return t;
}

TokenId Tokenizer::id(std::string_view word) const {
  const auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkToken : it->second;
}

std::string Tokenizer::token_string(TokenId id) const {
  if (is_special_token(id)) return kSpecialStrings[id];
  const auto index = static_cast<std::size_t>(id - kNumSpecialTokens);
  if (id < 0 || index >= words_.size()) throw std::domain_error("token id outside the vocabulary");
  return words_[index];
}

std::vector<std::string> Tokenizer::split(std::string_view text) const {
  return split_words(text, casefold_);
}

Sample Tokenizer::encode(const CorpusRecord& record, std::size_t max_len) const {
  if (max_len < 1) throw std::domain_error("max_len must be >= 1");
  Sample sample;
  sample.label = record.label - 1;
  sample.tokens.push_back(kClsToken);
  for (const auto& w : split(record.text)) {
    if (sample.tokens.size() >= max_len) break;
    sample.tokens.push_back(id(w));
  }
  return sample;
}

std::string Tokenizer::decode(std::span<const TokenId> tokens) const {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == kClsToken) continue;
    if (!out.empty()) out.push_back(' ');
    out += token_string(tokens[i]);
  }
  return out;
}

std::vector<Sample> encode_all(const Tokenizer& tokenizer, std::span<const CorpusRecord> corpus,
                               std::size_t max_len) {
  std::vector<Sample> out;
  out.reserve(corpus.size());
  for (const auto& record : corpus) out.push_back(tokenizer.encode(record, max_len));
  return out;
}

std::vector<Sequence> pad_batch(std::span<const Sequence> batch) {
  std::size_t longest = 0;
  for (const auto& s : batch) longest = std::max(longest, s.size());
  std::vector<Sequence> out(batch.begin(), batch.end());
  for (auto& s : out) s.resize(longest, kPadToken);
  return out;
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic num_classes must be >= 2");
  if (keywords_per_class < 1) throw ConfigError("keywords_per_class must be >= 1");
  if (vocab_size <= num_classes * keywords_per_class)
    throw ConfigError("synthetic vocab_size must exceed the keyword count");
  if (keywords_per_sample < 1) throw ConfigError("keywords_per_sample must be >= 1");
  if (!(injection_prob >= 0.0 && injection_prob <= 1.0))
    throw ConfigError("injection_prob must lie in [0, 1]");
  if (min_length < keywords_per_sample || max_length < min_length)
    throw ConfigError("synthetic lengths must satisfy keywords_per_sample <= min_length <= max_length");
  if (!(zipf_exponent > 0.0)) throw ConfigError("zipf_exponent must be positive");
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int noise_words = spec.vocab_size - spec.num_classes * spec.keywords_per_class;
  std::vector<double> noise_weights(static_cast<std::size_t>(noise_words), 1.0);
  if (spec.noise == NoiseDistribution::Zipf)
    for (int r = 0; r < noise_words; ++r)
      noise_weights[static_cast<std::size_t>(r)] = 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);

  std::mt19937_64 rng(spec.seed);
  std::discrete_distribution<int> noise(noise_weights.begin(), noise_weights.end());
  std::uniform_int_distribution<int> label_dist(1, spec.num_classes);
  std::uniform_int_distribution<int> length_dist(spec.min_length, spec.max_length);
  std::uniform_int_distribution<int> keyword_dist(0, spec.keywords_per_class - 1);

  auto make_record = [&] {
    CorpusRecord record;
    record.label = label_dist(rng);
    const int length = length_dist(rng);
    std::vector<std::string> words(static_cast<std::size_t>(length));
    for (auto& w : words) w = "w" + std::to_string(noise(rng));
    if (uniform01(rng) < spec.injection_prob) {
      std::vector<int> positions(static_cast<std::size_t>(length));
      std::iota(positions.begin(), positions.end(), 0);
      std::shuffle(positions.begin(), positions.end(), rng);
      for (int k = 0; k < spec.keywords_per_sample; ++k)
        words[static_cast<std::size_t>(positions[static_cast<std::size_t>(k)])] =
            "kw" + std::to_string(record.label) + "_" + std::to_string(keyword_dist(rng));
    }
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i) record.text.push_back(' ');
      record.text += words[i];
    }
    return record;
  };

  SyntheticCorpus corpus;
  corpus.train.reserve(spec.n_train);
  corpus.test.reserve(spec.n_test);
  for (std::size_t i = 0; i < spec.n_train; ++i) corpus.train.push_back(make_record());
  for (std::size_t i = 0; i < spec.n_test; ++i) corpus.test.push_back(make_record());
  return corpus;
}

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "jsonl") return CorpusFormat::Jsonl;
  if (name == "csv") return CorpusFormat::Csv;
  throw ConfigError("unknown corpus format '" + std::string(name) + "' (expected jsonl or csv)");
}

namespace {

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

void validate_record(const CorpusRecord& record, int num_classes, const std::filesystem::path& path,
                     std::size_t line) {
  if (record.text.empty()) throw DataError(location(path, line) + "empty text");
  if (record.label < 1 || (num_classes > 0 && record.label > num_classes))
    throw DataError(location(path, line) + "label " + std::to_string(record.label) +
                    " outside 1.." + (num_classes > 0 ? std::to_string(num_classes) : "M"));
}

std::vector<CorpusRecord> parse_jsonl(std::istream& in, const std::filesystem::path& path,
                                      int num_classes) {
  std::vector<CorpusRecord> records;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
      continue;
    CorpusRecord record;
    try {
      const auto doc = nlohmann::json::parse(line);
      record.text = doc.at("text").get<std::string>();
      const auto& label = doc.at("label");
      if (!label.is_number_integer()) throw DataError("label is not an integer");
      record.label = label.get<int>();
    } catch (const std::exception& e) {
      throw DataError(location(path, number) + "malformed record: " + e.what());
    }
    validate_record(record, num_classes, path, number);
    records.push_back(std::move(record));
  }
  return records;
}

// RFC 4180 fields: quoted fields may hold commas, doubled quotes and newlines.
std::vector<CorpusRecord> parse_csv(std::istream& in, const std::filesystem::path& path,
                                    int num_classes) {
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool row_started = false;
  std::size_t line = 1;
  std::size_t row_line = 1;
  auto end_row = [&] {
    fields.push_back(std::move(field));
    field.clear();
    rows.push_back(std::move(fields));
    row_lines.push_back(row_line);
    fields.clear();
    row_started = false;
  };
  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (!row_started) {
      row_started = true;
      row_line = line;
    }
    if (quoted) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') ++i;
      ++line;
      end_row();
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw DataError(location(path, row_line) + "unterminated quoted field");
  if (row_started) end_row();

  std::vector<CorpusRecord> records;
  bool header_seen = false;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (!header_seen) {
      if (row.size() != 2 || row[0] != "text" || row[1] != "label")
        throw DataError(location(path, row_lines[r]) + "expected header 'text,label'");
      header_seen = true;
      continue;
    }
    if (row.size() != 2)
      throw DataError(location(path, row_lines[r]) + "expected 2 fields, found " + std::to_string(row.size()));
    CorpusRecord record;
    record.text = row[0];
    try {
      std::size_t used = 0;
      record.label = std::stoi(row[1], &used);
      if (used != row[1].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw DataError(location(path, row_lines[r]) + "label '" + row[1] + "' is not an integer");
    }
    validate_record(record, num_classes, path, row_lines[r]);
    records.push_back(std::move(record));
  }
  return records;
}

}  // namespace

std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path, CorpusFormat format,
                                      int num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus " + path.string());
  auto records = format == CorpusFormat::Jsonl ? parse_jsonl(in, path, num_classes)
                                               : parse_csv(in, path, num_classes);
  if (records.empty()) throw std::domain_error("corpus " + path.string() + " holds no records");
  return records;
}

std::vector<Sample> remove_random_tokens(std::span<const Sample> samples, double fraction,
                                         std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::domain_error("removal fraction must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const auto& sample : samples) {
    const std::size_t content = sample.tokens.empty() ? 0 : sample.tokens.size() - 1;
    const auto drop = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(content) + 1e-9));
    std::vector<std::size_t> positions(content);
    std::iota(positions.begin(), positions.end(), std::size_t{1});
    std::shuffle(positions.begin(), positions.end(), rng);
    std::vector<bool> removed(sample.tokens.size(), false);
    for (std::size_t k = 0; k < drop; ++k) removed[positions[k]] = true;
    Sample kept;
    kept.label = sample.label;
    for (std::size_t i = 0; i < sample.tokens.size(); ++i)
      if (!removed[i]) kept.tokens.push_back(sample.tokens[i]);
    out.push_back(std::move(kept));
  }
  return out;
}

}  // namespace boostformer
