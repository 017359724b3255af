#include "boostformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "json.hpp"

namespace boostformer {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

using nlohmann::ordered_json;

constexpr char kMagic[8] = {'B', 'F', 'M', 'O', 'D', 'E', 'L', '\0'};

template <typename T>
void append_raw(std::string& out, const T& value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T read_raw(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint truncated");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

const char* precision_name(Precision p) { return p == Precision::Double ? "double" : "single"; }

Precision parse_precision(const std::string& name) {
  if (name == "double") return Precision::Double;
  if (name == "single") return Precision::Single;
  throw DataError("unknown precision '" + name + "'");
}

ordered_json config_to_json(const TransformerConfig& c) {
  return ordered_json{{"layers", c.layers},         {"heads", c.heads},
                      {"d_model", c.d_model},       {"d_ff", c.d_ff},
                      {"max_len", c.max_len},       {"vocab_size", c.vocab_size},
                      {"num_classes", c.num_classes}, {"dropout", c.dropout},
                      {"precision", precision_name(c.precision)}, {"zero_head", c.zero_head}};
}

TransformerConfig config_from_json(const ordered_json& j) {
  TransformerConfig c;
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.precision = parse_precision(j.at("precision").get<std::string>());
  c.zero_head = j.at("zero_head").get<bool>();
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct Parsed {
  ordered_json header;
  std::string bytes;
  std::size_t data_start = 0;
};

Parsed parse(const std::filesystem::path& path) {
  Parsed p;
  p.bytes = read_file(path);
  if (p.bytes.size() < sizeof(kMagic) || std::memcmp(p.bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError(path.string() + " is not a model checkpoint");
  std::size_t pos = sizeof(kMagic);
  const auto version = read_raw<std::uint32_t>(p.bytes, pos);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_raw<std::uint64_t>(p.bytes, pos);
  if (header_len > p.bytes.size() - pos) throw DataError("checkpoint header truncated");
  try {
    p.header = ordered_json::parse(p.bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   p.bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  p.data_start = pos + header_len;
  return p;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const std::string& variant,
                     const Tokenizer& tokenizer, const Ensemble<Transformer<Scalar>>& ensemble) {
  const Transformer<Scalar>* any = ensemble.base ? &ensemble.base->learner
                                   : ensemble.stages.empty() ? nullptr
                                                             : &ensemble.stages.front().learner;
  if (!any) throw std::domain_error("cannot save an empty ensemble");
  const TransformerConfig& config = any->config();
  const char* dtype = std::is_same_v<Scalar, double> ? "float64" : "float32";

  ordered_json header;
  header["format"] = "boostformer";
  header["variant"] = variant;
  header["num_classes"] = ensemble.num_classes();
  header["shrinkage"] = ensemble.shrinkage();
  header["transformer"] = config_to_json(config);
  header["tokenizer"] = ordered_json{{"casefold", tokenizer.casefold()}, {"words", tokenizer.words()}};

  std::string data;
  ordered_json stages = ordered_json::array();
  ordered_json tensors = ordered_json::array();
  auto add_stage = [&](const Stage<Transformer<Scalar>>& stage, const std::string& prefix, bool is_base) {
    if (!(stage.learner.config() == config)) throw std::domain_error("stages disagree on configuration");
    ordered_json s{{"name", prefix}, {"is_base", is_base}, {"coefficient", stage.coefficient},
                   {"alpha", stage.alpha}};
    s["vocab"] = stage.vocab ? ordered_json(stage.vocab->ids()) : ordered_json(nullptr);
    stages.push_back(std::move(s));
    const auto& params = stage.learner.parameters();
    for (const TensorSlot& slot : stage.learner.layout().slots()) {
      tensors.push_back(ordered_json{{"name", prefix + "." + slot.name},
                                     {"dims", {slot.rows, slot.cols}},
                                     {"dtype", dtype},
                                     {"offset", data.size()}});
      data.append(reinterpret_cast<const char*>(params.data() + slot.offset),
                  static_cast<std::size_t>(slot.size()) * sizeof(Scalar));
    }
  };
  if (ensemble.base) add_stage(*ensemble.base, "base", true);
  for (std::size_t t = 0; t < ensemble.stages.size(); ++t)
    add_stage(ensemble.stages[t], "stages." + std::to_string(t + 1), false);
  header["stages"] = std::move(stages);
  header["tensors"] = std::move(tensors);

  const std::string text = header.dump();
  std::string bytes(kMagic, sizeof(kMagic));
  append_raw(bytes, kCheckpointVersion);
  append_raw(bytes, static_cast<std::uint64_t>(text.size()));
  bytes += text;
  bytes += data;
  write_file_atomic(path, bytes);
}

Precision checkpoint_precision(const std::filesystem::path& path) {
  const Parsed p = parse(path);
  try {
    return parse_precision(p.header.at("transformer").at("precision").get<std::string>());
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
}

template <typename Scalar>
SavedModel<Scalar> load_checkpoint(const std::filesystem::path& path) {
  const Parsed p = parse(path);
  const std::string expected_dtype = std::is_same_v<Scalar, double> ? "float64" : "float32";
  try {
    const auto& h = p.header;
    const TransformerConfig config = config_from_json(h.at("transformer"));
    SavedModel<Scalar> model{h.at("variant").get<std::string>(),
                             Tokenizer::from_words(h.at("tokenizer").at("words").get<std::vector<std::string>>(),
                                                   h.at("tokenizer").at("casefold").get<bool>()),
                             Ensemble<Transformer<Scalar>>(h.at("num_classes").get<int>(),
                                                           h.at("shrinkage").get<double>())};
    if (model.tokenizer.vocab_size() != config.vocab_size)
      throw DataError("tokenizer and transformer vocabulary sizes differ");

    std::map<std::string, const ordered_json*> table;
    for (const auto& t : h.at("tensors")) table[t.at("name").get<std::string>()] = &t;

    for (const auto& s : h.at("stages")) {
      const std::string prefix = s.at("name").get<std::string>();
      Transformer<Scalar> learner(config, 0);
      auto& params = learner.parameters();
      for (const TensorSlot& slot : learner.layout().slots()) {
        const auto it = table.find(prefix + "." + slot.name);
        if (it == table.end()) throw DataError("missing tensor " + prefix + "." + slot.name);
        const auto& entry = *it->second;
        if (entry.at("dtype").get<std::string>() != expected_dtype)
          throw DataError("tensor " + it->first + " has dtype " + entry.at("dtype").get<std::string>());
        const auto dims = entry.at("dims").get<std::vector<Eigen::Index>>();
        if (dims.size() != 2 || dims[0] != slot.rows || dims[1] != slot.cols)
          throw DataError("tensor " + it->first + " has unexpected dimensions");
        const auto offset = entry.at("offset").get<std::size_t>();
        const std::size_t count = static_cast<std::size_t>(slot.size()) * sizeof(Scalar);
        if (p.data_start + offset + count > p.bytes.size()) throw DataError("tensor data truncated");
        std::memcpy(params.data() + slot.offset, p.bytes.data() + p.data_start + offset, count);
      }
      std::optional<VocabSubset> vocab;
      if (!s.at("vocab").is_null()) vocab = VocabSubset(s.at("vocab").get<std::vector<TokenId>>());
      Stage<Transformer<Scalar>> stage{s.at("coefficient").get<double>(), s.at("alpha").get<double>(),
                                       std::move(learner), std::move(vocab)};
      if (s.at("is_base").get<bool>())
        model.ensemble.base.emplace(std::move(stage));
      else
        model.ensemble.stages.push_back(std::move(stage));
    }
    return model;
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("invalid configuration in checkpoint: ") + e.what());
  }
}

template void save_checkpoint<float>(const std::filesystem::path&, const std::string&, const Tokenizer&,
                                     const Ensemble<Transformer<float>>&);
template void save_checkpoint<double>(const std::filesystem::path&, const std::string&, const Tokenizer&,
                                      const Ensemble<Transformer<double>>&);
template SavedModel<float> load_checkpoint<float>(const std::filesystem::path&);
template SavedModel<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace boostformer
