#include <cmath>
#include <filesystem>
#include <fstream>

#include "boostformer/data.hpp"
#include "doctest.h"

using namespace boostformer;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& content) {
  const auto dir = std::filesystem::temp_directory_path() / "boostformer_test_data";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path, std::ios::binary) << content;
  return path;
}

int keyword_class(const std::string& text, int num_classes) {
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int c = 1; c <= num_classes; ++c) {
    const std::string tag = "kw" + std::to_string(c) + "_";
    for (auto pos = text.find(tag); pos != std::string::npos; pos = text.find(tag, pos + 1))
      ++counts[static_cast<std::size_t>(c - 1)];
  }
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin()) + 1;
}

}  // namespace

TEST_CASE("vocabulary construction") {
  const std::vector<CorpusRecord> corpus{{"a a b", 1}};
  const Tokenizer t = Tokenizer::build(corpus);
  CHECK(t.words() == std::vector<std::string>{"a", "b"});
  CHECK(t.vocab_size() == 5);
  CHECK(t.id("a") == kNumSpecialTokens);

  const Tokenizer frequent = Tokenizer::build(corpus, 2);
  CHECK(frequent.words() == std::vector<std::string>{"a"});
  CHECK(frequent.encode({"a b", 1}, 16).tokens == Sequence{kClsToken, frequent.id("a"), kUnkToken});

  const std::vector<CorpusRecord> ties{{"zeta alpha mid", 1}};
  CHECK(Tokenizer::build(ties).words() == std::vector<std::string>{"alpha", "mid", "zeta"});
  CHECK(Tokenizer::build(std::vector<CorpusRecord>{{"b B a", 1}}).words() == std::vector<std::string>{"b", "a"});
  CHECK(Tokenizer::build(corpus, 1, 1).words() == std::vector<std::string>{"a"});
  CHECK_THROWS_AS(Tokenizer::build(std::vector<CorpusRecord>{}), std::domain_error);
}

TEST_CASE("encoding") {
  const Tokenizer t = Tokenizer::from_words({"a", "b"}, true);
  const Sample s = t.encode({"a b", 2}, 16);
  CHECK(s.tokens == Sequence{kClsToken, 3, 4});
  CHECK(s.label == 1);
  CHECK(t.encode({"a nope b", 1}, 16).tokens == Sequence{kClsToken, 3, kUnkToken, 4});
  const Sample truncated = t.encode({"a b a b a b a b", 1}, 5);
  CHECK(truncated.tokens.size() == 5);
  CHECK(truncated.tokens.front() == kClsToken);
  CHECK(t.decode(s.tokens) == "a b");
  CHECK(t.token_string(kClsToken) == "[CLS]");
  CHECK(t.token_string(kPadToken) == "[PAD]");
  CHECK_THROWS_AS(Tokenizer::from_words({"a", "a"}, true), DataError);
}

TEST_CASE("padding") {
  const std::vector<Sequence> batch{{kClsToken, 5}, {kClsToken, 5, 6, 7}};
  const auto padded = pad_batch(batch);
  CHECK(padded[0] == Sequence{kClsToken, 5, kPadToken, kPadToken});
  CHECK(padded[1] == batch[1]);
}

TEST_CASE("synthetic corpus") {
  SyntheticSpec spec;
  spec.n_train = 300;
  spec.n_test = 200;
  SUBCASE("fixed seed reproduces the corpus") {
    const SyntheticCorpus a = generate_synthetic(spec), b = generate_synthetic(spec);
    REQUIRE(a.train.size() == 300);
    for (std::size_t i = 0; i < a.train.size(); ++i) {
      CHECK(a.train[i].text == b.train[i].text);
      CHECK(a.train[i].label == b.train[i].label);
    }
  }
  SUBCASE("certain injection is perfectly separable") {
    spec.injection_prob = 1.0;
    spec.num_classes = 3;
    for (const auto& r : generate_synthetic(spec).test) CHECK(keyword_class(r.text, 3) == r.label);
  }
  SUBCASE("no injection carries no label signal") {
    spec.injection_prob = 0.0;
    spec.n_test = 4000;
    const SyntheticCorpus c = generate_synthetic(spec);
    std::size_t ones = 0;
    for (const auto& r : c.test) {
      CHECK(r.text.find("kw") == std::string::npos);
      ones += r.label == 1;
    }
    // a constant predictor is right about half the time
    const double sd = std::sqrt(4000 * 0.25);
    CHECK(std::abs(static_cast<double>(ones) - 2000.0) <= 3 * sd);
  }
  SUBCASE("lengths and vocabulary") {
    for (const auto& r : generate_synthetic(spec).train) {
      const auto words = Tokenizer::from_words({}, true).split(r.text);
      CHECK(words.size() >= 12);
      CHECK(words.size() <= 24);
    }
    CHECK(Tokenizer::build(generate_synthetic(spec).train).words().size() <= 200);
  }
  SUBCASE("validation") {
    spec.keywords_per_sample = 30;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }
}

TEST_CASE("corpus files") {
  SUBCASE("jsonl") {
    const auto path = write_temp("ok.jsonl", "{\"text\": \"good movie\", \"label\": 2}\n\n{\"text\": \"bad\", \"label\": 1}\n");
    const auto records = load_corpus(path, CorpusFormat::Jsonl, 2);
    REQUIRE(records.size() == 2);
    CHECK(records[0].text == "good movie");
    CHECK(records[0].label == 2);
  }
  SUBCASE("label 0 is rejected") {
    const auto path = write_temp("zero.jsonl", "{\"text\": \"x\", \"label\": 0}\n");
    CHECK_THROWS_AS(load_corpus(path, CorpusFormat::Jsonl, 2), DataError);
  }
  SUBCASE("label above the class count is rejected") {
    const auto path = write_temp("three.jsonl", "{\"text\": \"x\", \"label\": 3}\n");
    CHECK_THROWS_AS(load_corpus(path, CorpusFormat::Jsonl, 2), DataError);
    CHECK(load_corpus(path, CorpusFormat::Jsonl, 0).front().label == 3);
  }
  SUBCASE("empty file") {
    CHECK_THROWS_AS(load_corpus(write_temp("empty.jsonl", ""), CorpusFormat::Jsonl, 2), std::domain_error);
  }
  SUBCASE("malformed json names the line") {
    const auto path = write_temp("bad.jsonl", "{\"text\": \"x\", \"label\": 1}\n{oops\n");
    try {
      load_corpus(path, CorpusFormat::Jsonl, 2);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
  }
  SUBCASE("csv with quoting") {
    const auto path = write_temp("ok.csv", "text,label\n\"a, \"\"quoted\"\" b\",2\nplain,1\n");
    const auto records = load_corpus(path, CorpusFormat::Csv, 2);
    REQUIRE(records.size() == 2);
    CHECK(records[0].text == "a, \"quoted\" b");
    CHECK(records[1].label == 1);
  }
  SUBCASE("csv needs its header") {
    CHECK_THROWS_AS(load_corpus(write_temp("nohdr.csv", "a,1\n"), CorpusFormat::Csv, 2), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_corpus("/nonexistent/x.jsonl", CorpusFormat::Jsonl, 2), DataError);
  }
  CHECK(parse_corpus_format("csv") == CorpusFormat::Csv);
  CHECK_THROWS_AS(parse_corpus_format("xml"), ConfigError);
}

TEST_CASE("random token removal") {
  std::vector<Sample> samples{{{kClsToken, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, 0}, {{kClsToken, 3}, 1}};
  const auto removed = remove_random_tokens(samples, 0.2, 5);
  CHECK(removed[0].tokens.size() == 9);
  CHECK(removed[0].tokens.front() == kClsToken);
  CHECK(std::is_sorted(removed[0].tokens.begin(), removed[0].tokens.end()));
  CHECK(removed[1].tokens == samples[1].tokens);
  CHECK(removed[1].label == 1);
  CHECK(remove_random_tokens(samples, 0.2, 5)[0].tokens == removed[0].tokens);
}
