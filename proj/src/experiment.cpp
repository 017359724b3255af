#include "boostformer/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "boostformer/checkpoint.hpp"

namespace boostformer {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads typed fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string context) : object_(object), context_(std::move(context)) {
    if (!object_.is_object()) throw ConfigError(context_ + " must be a JSON object");
  }

  bool has(const std::string& key) const { return object_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return object_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& target) {
    if (!object_.contains(key)) return;
    seen_.insert(key);
    try {
      target = object_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(context_ + "." + key + " has the wrong type");
    }
  }

  void finish() const {
    for (const auto& item : object_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + context_ + "." + item.key());
  }

 private:
  const json& object_;
  std::string context_;
  std::set<std::string> seen_;
};

Precision parse_precision_name(const std::string& name) {
  if (name == "single") return Precision::Single;
  if (name == "double") return Precision::Double;
  throw ConfigError("precision must be 'single' or 'double'");
}

NoiseDistribution parse_noise(const std::string& name) {
  if (name == "uniform") return NoiseDistribution::Uniform;
  if (name == "zipf") return NoiseDistribution::Zipf;
  throw ConfigError("synthetic noise must be 'uniform' or 'zipf'");
}

SyntheticSpec parse_synthetic(const json& j) {
  SyntheticSpec spec;
  ObjectReader r(j, "data.synthetic");
  std::string noise = "uniform";
  r.get("num_classes", spec.num_classes);
  r.get("vocab_size", spec.vocab_size);
  r.get("keywords_per_class", spec.keywords_per_class);
  r.get("keywords_per_sample", spec.keywords_per_sample);
  r.get("injection_prob", spec.injection_prob);
  r.get("min_length", spec.min_length);
  r.get("max_length", spec.max_length);
  r.get("noise", noise);
  r.get("zipf_exponent", spec.zipf_exponent);
  r.get("n_train", spec.n_train);
  r.get("n_test", spec.n_test);
  r.get("seed", spec.seed);
  r.finish();
  spec.noise = parse_noise(noise);
  spec.validate();
  return spec;
}

DataConfig parse_data(const json& j) {
  DataConfig data;
  ObjectReader r(j, "data");
  if (r.has("synthetic")) data.synthetic = parse_synthetic(r.raw("synthetic"));
  std::string train, test, format = "jsonl";
  r.get("train", train);
  r.get("test", test);
  r.get("format", format);
  r.get("num_classes", data.num_classes);
  r.get("min_freq", data.min_freq);
  r.get("max_vocab", data.max_vocab);
  r.finish();
  data.train_path = train;
  data.test_path = test;
  data.format = parse_corpus_format(format);
  if (!data.synthetic && (train.empty() || test.empty()))
    throw ConfigError("data needs either 'synthetic' or both 'train' and 'test'");
  if (data.num_classes < 0 || data.num_classes == 1) throw ConfigError("data.num_classes must be >= 2");
  if (data.min_freq < 1) throw ConfigError("data.min_freq must be >= 1");
  return data;
}

std::string format_number(const char* pattern, double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), pattern, value);
  return buffer;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& document) {
  RunConfig config;
  ObjectReader r(document, "config");
  if (!r.has("data")) throw ConfigError("config.data is required");
  config.data = parse_data(r.raw("data"));

  std::string variant = std::string(variant_name(config.variant));
  r.get("variant", variant);
  config.variant = parse_variant(variant);
  if (r.has("seed")) {
    std::uint64_t seed = 0;
    r.get("seed", seed);
    config.seed = seed;
  }
  std::string output_dir = config.output_dir.string();
  r.get("output_dir", output_dir);
  config.output_dir = output_dir;
  r.get("timing", config.timing);
  r.get("vanilla_epochs", config.vanilla_epochs);
  r.get("removal_fraction", config.removal_fraction);

  if (r.has("ensemble")) {
    ObjectReader e(r.raw("ensemble"), "ensemble");
    e.get("rounds", config.ensemble.rounds);
    e.get("shrinkage", config.ensemble.shrinkage);
    e.get("keep_fraction", config.ensemble.keep_fraction);
    e.get("alpha_max", config.ensemble.alpha_max);
    e.get("line_search_tol", config.ensemble.line_search_tol);
    e.finish();
  }
  if (r.has("transformer")) {
    ObjectReader t(r.raw("transformer"), "transformer");
    std::string precision = "single";
    t.get("layers", config.transformer.layers);
    t.get("heads", config.transformer.heads);
    t.get("d_model", config.transformer.d_model);
    t.get("d_ff", config.transformer.d_ff);
    t.get("max_len", config.transformer.max_len);
    t.get("dropout", config.transformer.dropout);
    t.get("precision", precision);
    t.get("zero_head", config.transformer.zero_head);
    t.finish();
    config.transformer.precision = parse_precision_name(precision);
  }
  if (r.has("optimizer")) {
    ObjectReader o(r.raw("optimizer"), "optimizer");
    o.get("learning_rate", config.optimizer.learning_rate);
    o.get("weight_decay", config.optimizer.weight_decay);
    o.get("batch_size", config.optimizer.batch_size);
    o.get("epochs", config.optimizer.epochs);
    o.get("warmup_fraction", config.optimizer.warmup_fraction);
    o.finish();
  }
  r.finish();
  config.optimizer.validate();
  if (config.vanilla_epochs < 1) throw ConfigError("vanilla_epochs must be >= 1");
  if (!(config.removal_fraction >= 0.0 && config.removal_fraction < 1.0))
    throw ConfigError("removal_fraction must lie in [0, 1)");
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json document;
  try {
    document = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(document);
}

PreparedData prepare_data(const DataConfig& data, int max_len) {
  std::vector<CorpusRecord> train, test;
  int num_classes = data.num_classes;
  if (data.synthetic) {
    SyntheticCorpus corpus = generate_synthetic(*data.synthetic);
    train = std::move(corpus.train);
    test = std::move(corpus.test);
    if (num_classes == 0) num_classes = data.synthetic->num_classes;
    if (num_classes != data.synthetic->num_classes)
      throw ConfigError("data.num_classes disagrees with data.synthetic.num_classes");
  } else {
    train = load_corpus(data.train_path, data.format, num_classes);
    test = load_corpus(data.test_path, data.format, num_classes);
    if (num_classes == 0) {
      for (const auto* split : {&train, &test})
        for (const auto& rec : *split) num_classes = std::max(num_classes, rec.label);
      num_classes = std::max(num_classes, 2);
    }
  }
  PreparedData prepared;
  prepared.num_classes = num_classes;
  prepared.tokenizer = Tokenizer::build(
      train, data.min_freq, data.max_vocab == 0 ? std::numeric_limits<std::size_t>::max() : data.max_vocab);
  prepared.train = encode_all(prepared.tokenizer, train, static_cast<std::size_t>(max_len));
  prepared.test = encode_all(prepared.tokenizer, test, static_cast<std::size_t>(max_len));
  return prepared;
}

RunOptions make_run_options(const RunConfig& config, const PreparedData& data) {
  if (!config.seed) throw ConfigError("a seed is required (config 'seed' or --seed)");
  RunOptions options;
  options.ensemble = config.ensemble;
  options.ensemble.num_classes = data.num_classes;
  options.transformer = config.transformer;
  options.transformer.vocab_size = data.tokenizer.vocab_size();
  options.transformer.num_classes = data.num_classes;
  options.optimizer = config.optimizer;
  options.vanilla_epochs = config.vanilla_epochs;
  options.removal_fraction = config.removal_fraction;
  options.seed = *config.seed;
  options.timing = config.timing;
  return options;
}

std::string format_metrics(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += r.variant + "," + std::to_string(r.step) + "," + format_number("%.6f", r.train_acc) + "," +
           format_number("%.6f", r.test_acc) + "," + format_number("%.6f", r.risk) + "," +
           format_number("%.3f", r.elapsed_s) + "\n";
  }
  return out;
}

std::vector<MetricsRow> parse_metrics(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw DataError(source + ": expected header '" + kMetricsHeader + "'");
  std::vector<MetricsRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw DataError(source + ":" + std::to_string(number) + ": expected 6 fields");
    try {
      MetricsRow row;
      row.variant = fields[0];
      parse_variant(row.variant);
      row.step = std::stoi(fields[1]);
      row.train_acc = std::stod(fields[2]);
      row.test_acc = std::stod(fields[3]);
      row.risk = std::stod(fields[4]);
      row.elapsed_s = std::stod(fields[5]);
      rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      throw DataError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  if (rows.empty()) throw DataError(source + ": no metric rows");
  return rows;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  return parse_metrics(read_text(path), path.string());
}

double epoch_axis(Variant variant, int step, int epochs_per_learner) {
  if (!is_boosted(variant)) return step;
  const int learners = has_base_learner(variant) ? step + 1 : step;
  return static_cast<double>(learners) * epochs_per_learner;
}

namespace {

double interpolate(const std::vector<std::pair<double, double>>& curve, double x) {
  if (x <= curve.front().first) return curve.front().second;
  if (x >= curve.back().first) return curve.back().second;
  const auto upper = std::lower_bound(curve.begin(), curve.end(), x,
                                      [](const auto& p, double v) { return p.first < v; });
  const auto lower = upper - 1;
  if (upper->first == x) return upper->second;
  const double t = (x - lower->first) / (upper->first - lower->first);
  return lower->second + t * (upper->second - lower->second);
}

}  // namespace

std::vector<PlotPoint> plot_points(std::span<const MetricsRow> baseline,
                                   std::span<const std::vector<MetricsRow>> runs, int epochs_per_learner) {
  if (baseline.empty()) throw ConfigError("baseline metrics are empty");
  if (epochs_per_learner < 1) throw ConfigError("epochs per learner must be >= 1");
  std::vector<std::pair<double, double>> curve;
  for (const auto& r : baseline)
    curve.emplace_back(epoch_axis(parse_variant(r.variant), r.step, epochs_per_learner), r.test_acc);
  std::stable_sort(curve.begin(), curve.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<PlotPoint> relative, improvement;
  for (const auto& run : runs) {
    if (run.empty()) continue;
    const double first = run.front().test_acc;
    for (const auto& r : run) {
      const double epoch = epoch_axis(parse_variant(r.variant), r.step, epochs_per_learner);
      relative.push_back({"relative", r.variant, r.step, epoch, r.test_acc - interpolate(curve, epoch)});
      improvement.push_back({"improvement", r.variant, r.step, epoch, r.test_acc - first});
    }
  }
  relative.insert(relative.end(), improvement.begin(), improvement.end());
  return relative;
}

std::string format_plot_points(std::span<const PlotPoint> points) {
  std::string out = "series,variant,step,epoch,value\n";
  for (const auto& p : points)
    out += p.series + "," + p.variant + "," + std::to_string(p.step) + "," + format_number("%g", p.epoch) +
           "," + format_number("%.6f", p.value) + "\n";
  return out;
}

std::string timing_table(std::span<const TimingEntry> entries) {
  if (entries.empty()) throw ConfigError("timing needs at least one metrics file");
  std::vector<std::string> datasets;
  std::map<std::string, std::map<std::string, double>> cells;
  for (const auto& e : entries) {
    if (e.rows.empty()) throw DataError("empty metrics for dataset " + e.dataset);
    if (std::find(datasets.begin(), datasets.end(), e.dataset) == datasets.end()) datasets.push_back(e.dataset);
    double total = 0.0;
    for (const auto& r : e.rows) total = std::max(total, r.elapsed_s);
    cells[e.dataset][e.rows.back().variant] = total;
  }
  std::string out = "dataset";
  for (Variant v : kAllVariants) out += "," + std::string(variant_name(v));
  out += "\n";
  for (const auto& d : datasets) {
    out += d;
    for (Variant v : kAllVariants) {
      const auto it = cells[d].find(std::string(variant_name(v)));
      out += "," + (it == cells[d].end() ? std::string("-") : format_number("%.1f", it->second));
    }
    out += "\n";
  }
  return out;
}

VerifyOutcome run_verification(const VerifyOptions& options) {
  if (options.instances < 1) throw ConfigError("--instances must be >= 1");
  if (options.draws < 1000) throw ConfigError("--draws must be >= 1000");

  struct Tally {
    int checked = 0;
    int failed = 0;
  };
  std::map<std::string, Tally> tallies;
  for (const char* name : {"closed_form_vs_monte_carlo", "optimal_is_minimum", "jensen_equality", "unbiasedness"})
    tallies[name];
  ordered_json failures = ordered_json::array();
  double worst_mc_ratio = 0.0;
  double worst_unbiased_in_se = 0.0;
  double worst_jensen_gap = 0.0;

  for (int index = 0; index < options.instances; ++index) {
    const OracleInstance inst = random_oracle_instance(options.seed, index);
    const std::uint64_t base = derive_seed(options.seed, 100000 + static_cast<std::uint64_t>(index));
    const auto n = static_cast<Eigen::Index>(inst.field.size());
    const Eigen::VectorXd optimal = residual_norm_distribution(inst.field);
    const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));

    ordered_json failed_checks = ordered_json::array();
    auto fail = [&](const std::string& identity, ordered_json detail) {
      ++tallies[identity].failed;
      detail["identity"] = identity;
      failed_checks.push_back(std::move(detail));
    };

    int stream = 0;
    for (const auto& [name, p] : {std::pair<std::string, const Eigen::VectorXd&>{"residual_norm", optimal},
                                  std::pair<std::string, const Eigen::VectorXd&>{"uniform", uniform}}) {
      double closed = closed_form_second_moment(inst.field, p, inst.subset_size);
      if (options.corrupt_closed_form) closed = closed * 1.1 + 0.1;
      const MonteCarloEstimate mc =
          monte_carlo_second_moment(inst.field, p, inst.subset_size, options.draws, derive_seed(base, stream++));
      const double deviation = std::abs(closed - mc.mean);
      const double allowed = 3.0 * mc.standard_error + 1e-9 * std::max(1.0, std::abs(closed));
      ++tallies["closed_form_vs_monte_carlo"].checked;
      worst_mc_ratio = std::max(worst_mc_ratio, deviation / allowed);
      if (deviation > allowed)
        fail("closed_form_vs_monte_carlo", {{"distribution", name}, {"closed_form", closed},
                                            {"monte_carlo", mc.mean}, {"standard_error", mc.standard_error}});

      const UnbiasednessReport unbiased = unbiasedness_check(inst.field, p, options.draws, derive_seed(base, stream++));
      ++tallies["unbiasedness"].checked;
      worst_unbiased_in_se = std::max(worst_unbiased_in_se, unbiased.max_deviation_in_se);
      if (unbiased.max_deviation_in_se > 3.0)
        fail("unbiasedness", {{"distribution", name}, {"max_deviation_in_se", unbiased.max_deviation_in_se}});
    }

    const OptimalityReport optimality =
        optimal_distribution_check(inst.field, inst.subset_size, options.candidates, derive_seed(base, stream++));
    if (!optimality.degenerate) {
      ++tallies["optimal_is_minimum"].checked;
      ++tallies["jensen_equality"].checked;
      worst_jensen_gap = std::max(worst_jensen_gap, optimality.jensen_gap);
      if (!optimality.optimal_is_minimum) {
        ordered_json values = ordered_json::object();
        for (const auto& c : optimality.candidates) values[c.distribution] = c.closed_form;
        fail("optimal_is_minimum", {{"second_moments", values}});
      }
      if (!optimality.jensen_equality) fail("jensen_equality", {{"relative_gap", optimality.jensen_gap}});
    }

    if (!failed_checks.empty()) {
      ordered_json scores = ordered_json::array();
      for (Eigen::Index i = 0; i < inst.scores.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index k = 0; k < inst.scores.cols(); ++k) row.push_back(inst.scores(i, k));
        scores.push_back(std::move(row));
      }
      failures.push_back({{"instance", index}, {"n", inst.field.size()}, {"num_classes", inst.scores.cols()},
                          {"subset_size", inst.subset_size}, {"labels", inst.labels}, {"scores", scores},
                          {"failed", failed_checks}});
    }
  }

  VerifyOutcome outcome;
  ordered_json identities = ordered_json::object();
  for (const auto& [name, tally] : tallies) {
    identities[name] = {{"passed", tally.failed == 0}, {"checked", tally.checked}, {"failed", tally.failed}};
    if (tally.failed > 0) outcome.passed = false;
  }
  outcome.report = {{"seed", options.seed},
                    {"instances", options.instances},
                    {"draws", options.draws},
                    {"candidates", options.candidates},
                    {"passed", outcome.passed},
                    {"identities", identities},
                    {"worst", {{"monte_carlo_deviation_over_allowed", worst_mc_ratio},
                               {"unbiasedness_deviation_in_se", worst_unbiased_in_se},
                               {"jensen_relative_gap", worst_jensen_gap}}},
                    {"failing_instances", failures}};
  return outcome;
}

namespace {

std::filesystem::path resolve_output_dir(const RunConfig& config, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return config.output_dir;
}

template <typename Scalar>
int train_with(const RunConfig& config, const std::filesystem::path& out_dir, bool quiet, std::ostream& out,
               std::ostream& err) {
  const PreparedData data = prepare_data(config.data, config.transformer.max_len);
  RunOptions options = make_run_options(config, data);
  if (!quiet)
    options.on_row = [&err](const MetricsRow& r) {
      err << r.variant << " step " << r.step << " train_acc " << format_number("%.4f", r.train_acc) << " test_acc "
          << format_number("%.4f", r.test_acc) << " risk " << format_number("%.4f", r.risk) << "\n";
    };
  RunResult<Scalar> result = run_variant<Scalar>(config.variant, options, data.train, data.test);
  const std::string name(variant_name(config.variant));
  const auto metrics_path = out_dir / ("metrics_" + name + ".csv");
  const auto model_path = out_dir / ("model_" + name + ".bfm");
  write_file_atomic(metrics_path, format_metrics(result.metrics));
  save_checkpoint<Scalar>(model_path, name, data.tokenizer, result.ensemble);
  out << "wrote " << metrics_path.string() << " and " << model_path.string() << "\n";
  return 0;
}

// Labelled samples for eval/importance: a corpus file or a config's split.
std::vector<Sample> load_eval_samples(const Tokenizer& tokenizer, int num_classes, int max_len,
                                      const std::string& data_path, const std::string& format,
                                      const std::string& config_path, bool train_split) {
  std::vector<CorpusRecord> records;
  if (!data_path.empty()) {
    records = load_corpus(data_path, parse_corpus_format(format), num_classes);
  } else if (!config_path.empty()) {
    const RunConfig config = load_run_config(config_path);
    if (config.data.synthetic) {
      SyntheticCorpus corpus = generate_synthetic(*config.data.synthetic);
      records = train_split ? std::move(corpus.train) : std::move(corpus.test);
    } else {
      records = load_corpus(train_split ? config.data.train_path : config.data.test_path, config.data.format,
                            num_classes);
    }
  } else {
    throw ConfigError("either --data or --config is required");
  }
  for (const auto& r : records)
    if (r.label < 1 || r.label > num_classes)
      throw DataError("label " + std::to_string(r.label) + " does not fit the model's " +
                      std::to_string(num_classes) + " classes");
  return encode_all(tokenizer, records, static_cast<std::size_t>(max_len));
}

template <typename Scalar>
ordered_json evaluate_with(const std::filesystem::path& model_path, const std::string& data_path,
                           const std::string& format, const std::string& config_path) {
  const SavedModel<Scalar> model = load_checkpoint<Scalar>(model_path);
  const int m = model.ensemble.num_classes();
  const int max_len = (model.ensemble.base ? model.ensemble.base->learner : model.ensemble.stages.front().learner)
                          .config()
                          .max_len;
  const std::vector<Sample> samples =
      load_eval_samples(model.tokenizer, m, max_len, data_path, format, config_path, false);
  const PredictionMatrix scores = model.ensemble.predict_all(sequences(samples));
  std::vector<std::vector<long>> confusion(static_cast<std::size_t>(m), std::vector<long>(static_cast<std::size_t>(m), 0));
  long correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int predicted = predicted_class(scores.row(static_cast<Eigen::Index>(i)).transpose());
    ++confusion[static_cast<std::size_t>(samples[i].label)][static_cast<std::size_t>(predicted)];
    if (predicted == samples[i].label) ++correct;
  }
  return ordered_json{{"variant", model.variant},
                      {"samples", samples.size()},
                      {"accuracy", samples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(samples.size())},
                      {"confusion", confusion}};
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

template <typename Scalar>
std::string importance_with(const std::filesystem::path& model_path, const std::string& data_path,
                            const std::string& format, const std::string& config_path, int stage_index,
                            double sigma) {
  const SavedModel<Scalar> model = load_checkpoint<Scalar>(model_path);
  const auto& ens = model.ensemble;
  const int count = static_cast<int>(ens.stages.size());
  if (stage_index < 0) stage_index = count;
  const int first = ens.base ? 0 : 1;
  if (stage_index < first || stage_index > count)
    throw ConfigError("--stage must lie in " + std::to_string(first) + ".." + std::to_string(count));
  const Stage<Transformer<Scalar>>& stage =
      stage_index == 0 ? *ens.base : ens.stages[static_cast<std::size_t>(stage_index - 1)];

  const std::vector<Sample> samples = load_eval_samples(model.tokenizer, ens.num_classes(),
                                                        stage.learner.config().max_len, data_path, format,
                                                        config_path, true);
  const VocabSubset domain = stage.vocab ? *stage.vocab : VocabSubset::full(model.tokenizer.vocab_size());
  std::vector<AttentionRecord> records;
  std::vector<Sequence> inputs;
  for (const auto& s : samples) {
    inputs.push_back(filter_sample(s.tokens, domain));
    records.push_back(stage.learner.forward(inputs.back()).second);
  }
  const ImportanceTable table = aggregate_importance(records, inputs, domain);
  const PruneResult pruned = prune_vocab(table, sigma);
  std::string out = "token_id,token_string,score,kept\n";
  for (const auto& [id, score] : table)
    out += std::to_string(id) + "," + csv_quote(model.tokenizer.token_string(id)) + "," +
           format_number("%.9g", score) + "," + (pruned.kept.contains(id) ? "1" : "0") + "\n";
  return out;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty())
    out << text;
  else
    write_file_atomic(path, text);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Gradient boosting with transformer weak learners"};
  app.require_subcommand(1);

  // train
  std::string config_path, variant_flag, out_flag, timing_flag;
  std::optional<std::uint64_t> seed_flag;
  std::optional<int> rounds_flag, epochs_flag, vanilla_epochs_flag;
  std::optional<double> lr_flag;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train one model variant");
  train->add_option("--config", config_path, "Run configuration (JSON)")->required();
  train->add_option("--variant", variant_flag, "Model variant");
  train->add_option("--seed", seed_flag, "Random seed");
  train->add_option("--out", out_flag, "Output directory");
  train->add_option("--rounds", rounds_flag, "Boosting rounds");
  train->add_option("--epochs", epochs_flag, "Epochs per weak learner");
  train->add_option("--vanilla-epochs", vanilla_epochs_flag, "Epochs for the non-boosted baselines");
  train->add_option("--lr", lr_flag, "Learning rate");
  train->add_option("--timing", timing_flag, "Record wall-clock time (on|off)")->check(CLI::IsMember({"on", "off"}));
  train->add_flag("--quiet", quiet, "No progress output");

  // eval
  std::string model_path, data_path, format = "jsonl", eval_config, eval_out;
  auto* eval = app.add_subcommand("eval", "Evaluate a saved model");
  eval->add_option("--model", model_path, "Model checkpoint")->required();
  eval->add_option("--data", data_path, "Labelled corpus");
  eval->add_option("--format", format, "Corpus format (jsonl|csv)");
  eval->add_option("--config", eval_config, "Use the test split of this run configuration");
  eval->add_option("--out", eval_out, "Write the JSON report here");

  // importance
  int stage = -1;
  double sigma = 0.8;
  std::string imp_out;
  auto* importance = app.add_subcommand("importance", "Dump token importance of one learner");
  importance->add_option("--model", model_path, "Model checkpoint")->required();
  importance->add_option("--data", data_path, "Corpus to score");
  importance->add_option("--format", format, "Corpus format (jsonl|csv)");
  importance->add_option("--config", eval_config, "Use the training split of this run configuration");
  importance->add_option("--stage", stage, "Learner index (0 = base; default: last)");
  importance->add_option("--sigma", sigma, "Keep fraction for the kept column");
  importance->add_option("--out", imp_out, "Write the CSV here");

  // verify
  VerifyOptions verify_options;
  std::string verify_out;
  auto* verify = app.add_subcommand("verify", "Run the importance-sampling verification suite");
  verify->add_option("--seed", verify_options.seed, "Random seed");
  verify->add_option("--instances", verify_options.instances, "Random instances");
  verify->add_option("--draws", verify_options.draws, "Monte Carlo draws per estimate");
  verify->add_option("--candidates", verify_options.candidates, "Random candidate distributions");
  verify->add_option("--out", verify_out, "Write the JSON report here");
  verify->add_flag("--corrupt-closed-form", verify_options.corrupt_closed_form, "Negative control");

  // plot-data
  std::string baseline_path, plot_out;
  std::vector<std::string> metric_files;
  int epochs_per_learner = 5;
  auto* plot = app.add_subcommand("plot-data", "Relative-accuracy and improvement series");
  plot->add_option("--baseline", baseline_path, "Baseline metrics CSV");
  plot->add_option("--epochs-per-learner", epochs_per_learner, "Epochs consumed by each weak learner");
  plot->add_option("--out", plot_out, "Write the CSV here");
  plot->add_option("metrics", metric_files, "Metrics CSV files");

  // timing
  std::vector<std::string> timing_files;
  std::string timing_out;
  auto* timing = app.add_subcommand("timing", "Training-time table");
  timing->add_option("metrics", timing_files, "Metrics CSV files, optionally prefixed 'dataset:'");
  timing->add_option("--out", timing_out, "Write the CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      RunConfig config = load_run_config(config_path);
      if (!variant_flag.empty()) config.variant = parse_variant(variant_flag);
      if (seed_flag) config.seed = *seed_flag;
      if (rounds_flag) config.ensemble.rounds = *rounds_flag;
      if (epochs_flag) config.optimizer.epochs = *epochs_flag;
      if (vanilla_epochs_flag) config.vanilla_epochs = *vanilla_epochs_flag;
      if (lr_flag) config.optimizer.learning_rate = *lr_flag;
      if (!timing_flag.empty()) config.timing = timing_flag == "on";
      const auto out_dir = resolve_output_dir(config, out_flag);
      return config.transformer.precision == Precision::Double
                 ? train_with<double>(config, out_dir, quiet, out, err)
                 : train_with<float>(config, out_dir, quiet, out, err);
    }
    if (*eval) {
      const ordered_json report = checkpoint_precision(model_path) == Precision::Double
                                      ? evaluate_with<double>(model_path, data_path, format, eval_config)
                                      : evaluate_with<float>(model_path, data_path, format, eval_config);
      emit(report.dump(2) + "\n", eval_out, out);
      return 0;
    }
    if (*importance) {
      if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError("--sigma must lie in (0, 1)");
      const std::string csv =
          checkpoint_precision(model_path) == Precision::Double
              ? importance_with<double>(model_path, data_path, format, eval_config, stage, sigma)
              : importance_with<float>(model_path, data_path, format, eval_config, stage, sigma);
      emit(csv, imp_out, out);
      return 0;
    }
    if (*verify) {
      const VerifyOutcome outcome = run_verification(verify_options);
      emit(outcome.report.dump(2) + "\n", verify_out, out);
      if (!outcome.passed) {
        err << "verification failed\n";
        return 4;
      }
      return 0;
    }
    if (*plot) {
      if (baseline_path.empty()) throw ConfigError("--baseline is required");
      if (metric_files.empty()) throw ConfigError("at least one metrics file is required");
      const auto baseline = read_metrics(baseline_path);
      std::vector<std::vector<MetricsRow>> runs;
      for (const auto& f : metric_files) runs.push_back(read_metrics(f));
      emit(format_plot_points(plot_points(baseline, runs, epochs_per_learner)), plot_out, out);
      return 0;
    }
    if (*timing) {
      std::vector<TimingEntry> entries;
      for (const auto& arg : timing_files) {
        std::string dataset = "default";
        std::string path = arg;
        const auto colon = arg.find(':');
        if (colon != std::string::npos && colon > 0 && !std::filesystem::exists(arg)) {
          dataset = arg.substr(0, colon);
          path = arg.substr(colon + 1);
        }
        entries.push_back({dataset, read_metrics(path)});
      }
      emit(timing_table(entries), timing_out, out);
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "input error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::domain_error& e) {
    err << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace boostformer
