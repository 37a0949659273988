#include "hyperbert/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

#include "hyperbert/errors.hpp"
#include "hyperbert/io.hpp"

namespace hyperbert {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* expected) {
  T out{};
  const char* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) bad_value(key, value, expected);
  return out;
}

Index parse_index(const std::string& key, const std::string& value) {
  return parse_number<Index>(key, value, "an integer");
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  return parse_number<std::uint64_t>(key, value, "a non-negative integer");
}

double parse_real(const std::string& key, const std::string& value) {
  return parse_number<double>(key, value, "a number");
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "a boolean");
}

std::string text(bool v) { return v ? "true" : "false"; }
std::string text(Index v) { return std::to_string(v); }
std::string text(std::uint64_t v) { return std::to_string(v); }
std::string text(double v) { return format_double(v); }

template <typename E>
E parse_enum(const std::string& key, const std::string& value,
             std::initializer_list<std::pair<const char*, E>> names, const char* expected) {
  for (const auto& [name, e] : names) {
    if (value == name) return e;
  }
  bad_value(key, value, expected);
}

[[noreturn]] void unknown_key(const char* section, const std::string& key) {
  throw ConfigError(std::string("unknown ") + section + " config key '" + key + "'");
}

KeyValues adam_key_values(const AdamOptions& o) {
  return {{"lr", text(o.lr)},
          {"weight_decay", text(o.weight_decay)},
          {"beta1", text(o.beta1)},
          {"beta2", text(o.beta2)},
          {"eps", text(o.eps)}};
}

bool apply_adam(AdamOptions& o, const std::string& key, const std::string& value) {
  if (key == "lr") o.lr = parse_real(key, value);
  else if (key == "weight_decay") o.weight_decay = parse_real(key, value);
  else if (key == "beta1") o.beta1 = parse_real(key, value);
  else if (key == "beta2") o.beta2 = parse_real(key, value);
  else if (key == "eps") o.eps = parse_real(key, value);
  else return false;
  return true;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(NormStyle v) { return v == NormStyle::pre ? "pre" : "post"; }
std::string to_string(StructuralKind v) { return v == StructuralKind::hgnn ? "hgnn" : "gnn"; }
std::string to_string(Activation v) { return v == Activation::relu ? "relu" : "identity"; }
std::string to_string(StructuralInput v) { return v == StructuralInput::cls ? "cls" : "mean"; }
std::string to_string(HeadKind v) { return v == HeadKind::mlp ? "mlp" : "linear"; }

// --- model --------------------------------------------------------------

KeyValues to_key_values(const HyperBertConfig& c) {
  return {{"layers", text(c.layers)},
          {"d_model", text(c.d_model)},
          {"heads", text(c.heads)},
          {"d_k", text(c.d_k)},
          {"d_v", text(c.d_v)},
          {"d_ff", text(c.d_ff)},
          {"max_len", text(c.max_len)},
          {"vocab_size", text(c.vocab_size)},
          {"dropout", text(c.dropout)},
          {"ln_eps", text(c.ln_eps)},
          {"norm", to_string(c.norm)},
          {"structural", to_string(c.structural)},
          {"hgnn_depth", text(c.hgnn_depth)},
          {"activation", to_string(c.activation)},
          {"structural_input", to_string(c.structural_input)},
          {"inject_structure", text(c.inject_structure)},
          {"isolated_fallback", text(c.isolated_fallback)}};
}

void apply_key_value(HyperBertConfig& c, const std::string& key, const std::string& value) {
  if (key == "layers") c.layers = parse_index(key, value);
  else if (key == "d_model") c.d_model = parse_index(key, value);
  else if (key == "heads") c.heads = parse_index(key, value);
  else if (key == "d_k") c.d_k = parse_index(key, value);
  else if (key == "d_v") c.d_v = parse_index(key, value);
  else if (key == "d_ff") c.d_ff = parse_index(key, value);
  else if (key == "max_len") c.max_len = parse_index(key, value);
  else if (key == "vocab_size") c.vocab_size = parse_index(key, value);
  else if (key == "dropout") c.dropout = parse_real(key, value);
  else if (key == "ln_eps") c.ln_eps = parse_real(key, value);
  else if (key == "norm") {
    c.norm = parse_enum<NormStyle>(key, value, {{"pre", NormStyle::pre}, {"post", NormStyle::post}}, "pre|post");
  } else if (key == "structural") {
    c.structural = parse_enum<StructuralKind>(key, value, {{"hgnn", StructuralKind::hgnn}, {"gnn", StructuralKind::gnn}},
                              "hgnn|gnn");
  } else if (key == "hgnn_depth") c.hgnn_depth = parse_index(key, value);
  else if (key == "activation") {
    c.activation = parse_enum<Activation>(key, value, {{"relu", Activation::relu}, {"identity", Activation::identity}},
                              "relu|identity");
  } else if (key == "structural_input") {
    c.structural_input = parse_enum<StructuralInput>(
        key, value, {{"cls", StructuralInput::cls}, {"mean", StructuralInput::mean}}, "cls|mean");
  } else if (key == "inject_structure") c.inject_structure = parse_bool(key, value);
  else if (key == "isolated_fallback") c.isolated_fallback = parse_bool(key, value);
  else unknown_key("model", key);
}

// --- pretrain -----------------------------------------------------------

KeyValues to_key_values(const PretrainConfig& c) {
  KeyValues kv{{"batch_size", text(c.batch_size)}, {"max_steps", text(c.max_steps)}};
  for (auto& e : adam_key_values(c.optimizer)) kv.push_back(std::move(e));
  kv.insert(kv.end(), {{"temperature", text(c.temperature)},
                       {"lambda_semantic", text(c.weights.semantic)},
                       {"lambda_structural", text(c.weights.structural)},
                       {"lambda_alignment", text(c.weights.alignment)},
                       {"cosine", text(c.cosine)},
                       {"members_per_edge", text(c.members_per_edge)}});
  return kv;
}

void apply_key_value(PretrainConfig& c, const std::string& key, const std::string& value) {
  if (apply_adam(c.optimizer, key, value)) return;
  if (key == "batch_size") c.batch_size = parse_index(key, value);
  else if (key == "max_steps") c.max_steps = parse_index(key, value);
  else if (key == "temperature") c.temperature = parse_real(key, value);
  else if (key == "lambda_semantic") c.weights.semantic = parse_real(key, value);
  else if (key == "lambda_structural") c.weights.structural = parse_real(key, value);
  else if (key == "lambda_alignment") c.weights.alignment = parse_real(key, value);
  else if (key == "cosine") c.cosine = parse_bool(key, value);
  else if (key == "members_per_edge") c.members_per_edge = parse_index(key, value);
  else unknown_key("pretrain", key);
}

// --- finetune -----------------------------------------------------------

KeyValues to_key_values(const FinetuneConfig& c) {
  KeyValues kv{{"epochs", text(c.epochs)},
               {"eval_every", text(c.eval_every)},
               {"head", to_string(c.head)},
               {"width", text(c.width)},
               {"batch_size", text(c.batch_size)}};
  for (auto& e : adam_key_values(c.optimizer)) kv.push_back(std::move(e));
  return kv;
}

void apply_key_value(FinetuneConfig& c, const std::string& key, const std::string& value) {
  if (apply_adam(c.optimizer, key, value)) return;
  if (key == "epochs") c.epochs = parse_index(key, value);
  else if (key == "eval_every") c.eval_every = parse_index(key, value);
  else if (key == "head") {
    c.head = parse_enum<HeadKind>(key, value, {{"mlp", HeadKind::mlp}, {"linear", HeadKind::linear}}, "mlp|linear");
  } else if (key == "width") c.width = parse_index(key, value);
  else if (key == "batch_size") c.batch_size = parse_index(key, value);
  else unknown_key("finetune", key);
}

// --- data ---------------------------------------------------------------

KeyValues to_key_values(const DataConfig& c) {
  const SyntheticSpec& s = c.synthetic;
  return {{"num_classes", text(s.num_classes)},
          {"nodes_per_class", text(s.nodes_per_class)},
          {"edges_per_class", text(s.edges_per_class)},
          {"homophily", text(s.homophily)},
          {"vocab_per_class", text(s.vocab_per_class)},
          {"background_vocab", text(s.background_vocab)},
          {"text_len", text(s.text_len)},
          {"noise", text(s.noise)},
          {"min_edge_size", text(s.min_edge_size)},
          {"max_edge_size", text(s.max_edge_size)},
          {"seed", text(s.seed)},
          {"vocab_max_size", text(static_cast<std::uint64_t>(c.vocab_max_size))},
          {"vocab_min_count", text(static_cast<std::uint64_t>(c.vocab_min_count))}};
}

void apply_key_value(DataConfig& c, const std::string& key, const std::string& value) {
  SyntheticSpec& s = c.synthetic;
  if (key == "num_classes") s.num_classes = parse_index(key, value);
  else if (key == "nodes_per_class") s.nodes_per_class = parse_index(key, value);
  else if (key == "edges_per_class") s.edges_per_class = parse_index(key, value);
  else if (key == "homophily") s.homophily = parse_real(key, value);
  else if (key == "vocab_per_class") s.vocab_per_class = parse_index(key, value);
  else if (key == "background_vocab") s.background_vocab = parse_index(key, value);
  else if (key == "text_len") s.text_len = parse_index(key, value);
  else if (key == "noise") s.noise = parse_real(key, value);
  else if (key == "min_edge_size") s.min_edge_size = parse_index(key, value);
  else if (key == "max_edge_size") s.max_edge_size = parse_index(key, value);
  else if (key == "seed") s.seed = parse_u64(key, value);
  else if (key == "vocab_max_size") c.vocab_max_size = parse_u64(key, value);
  else if (key == "vocab_min_count") c.vocab_min_count = parse_u64(key, value);
  else unknown_key("data", key);
}

// --- experiment ---------------------------------------------------------

KeyValues to_key_values(const ExperimentConfig& c) {
  KeyValues kv;
  auto add = [&](const char* section, const KeyValues& part) {
    for (const auto& [k, v] : part) kv.emplace_back(std::string(section) + "." + k, v);
  };
  add("model", to_key_values(c.model));
  add("pretrain", to_key_values(c.pretrain));
  add("finetune", to_key_values(c.finetune));
  add("data", to_key_values(c.data));
  kv.emplace_back("seed", text(c.seed));
  kv.emplace_back("runs", text(c.runs));
  return kv;
}

void apply_key_value(ExperimentConfig& c, const std::string& qualified_key, const std::string& value) {
  const auto dot = qualified_key.find('.');
  if (dot == std::string::npos) {
    if (qualified_key == "seed") c.seed = parse_u64(qualified_key, value);
    else if (qualified_key == "runs") c.runs = parse_index(qualified_key, value);
    else unknown_key("top-level", qualified_key);
    return;
  }
  const std::string section = qualified_key.substr(0, dot);
  const std::string key = qualified_key.substr(dot + 1);
  if (section == "model") apply_key_value(c.model, key, value);
  else if (section == "pretrain") apply_key_value(c.pretrain, key, value);
  else if (section == "finetune") apply_key_value(c.finetune, key, value);
  else if (section == "data") apply_key_value(c.data, key, value);
  else throw ConfigError("unknown config section '" + section + "'");
}

std::vector<ConfigEntry> parse_config(std::istream& in, const std::string& source) {
  std::vector<ConfigEntry> entries;
  std::string section;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ParseError(source + ":" + std::to_string(lineno) + ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string value = trim(line.substr(eq + 1));
    const auto comment = value.find_first_of("#;");
    if (comment != std::string::npos) value = trim(value.substr(0, comment));
    entries.push_back({section, trim(line.substr(0, eq)), value, lineno});
  }
  return entries;
}

std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string());
  return parse_config(in, path.filename().string());
}

void apply_config(ExperimentConfig& c, const std::vector<ConfigEntry>& entries) {
  for (const auto& e : entries) {
    try {
      apply_key_value(c, e.section.empty() ? e.key : e.section + "." + e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError("line " + std::to_string(e.line) + ": " + err.what());
    }
  }
}

std::string to_config_text(const ExperimentConfig& c) {
  std::string out = "seed = " + text(c.seed) + "\nruns = " + text(c.runs) + "\n";
  auto section = [&](const char* name, const KeyValues& kv) {
    out += std::string("\n[") + name + "]\n";
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  };
  section("model", to_key_values(c.model));
  section("pretrain", to_key_values(c.pretrain));
  section("finetune", to_key_values(c.finetune));
  section("data", to_key_values(c.data));
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  std::string canonical;
  for (const auto& [k, v] : to_key_values(c)) {
    if (k == "runs") continue;  // the report lists its runs separately
    canonical += k + "=" + v + "\n";
  }
  return fnv1a64(canonical);
}

std::string hash_string(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace hyperbert
