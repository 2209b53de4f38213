#include "ancor/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ancor/error.hpp"

namespace ancor {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define ANCOR_NUM(name, member)                                                                        \
  Field {                                                                                              \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_double(name, v); },         \
        [](const ExperimentConfig& c) { return fmt(c.member); }                                        \
  }
#define ANCOR_UINT(name, member)                                                                       \
  Field {                                                                                              \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_uint(name, v); },           \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                             \
  }
#define ANCOR_BOOL(name, member)                                                                       \
  Field {                                                                                              \
    name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_bool(name, v); },           \
        [](const ExperimentConfig& c) { return std::string(c.member ? "true" : "false"); }             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      ANCOR_UINT("seed", seed),

      ANCOR_UINT("data.coarse_classes", data.coarse_classes),
      Field{"data.subclasses",
            [](ExperimentConfig& c, const std::string& v) { c.data.subclasses = parse_list("data.subclasses", v); },
            [](const ExperimentConfig& c) { return fmt_list(c.data.subclasses); }},
      ANCOR_UINT("data.input_dim", data.input_dim),
      ANCOR_UINT("data.samples_per_fine", data.samples_per_fine),
      ANCOR_NUM("data.coarse_radius", data.coarse_radius),
      ANCOR_NUM("data.fine_radius", data.fine_radius),
      ANCOR_NUM("data.noise_std", data.noise_std),

      ANCOR_NUM("augment.noise_std", train.augment.noise_std),
      ANCOR_NUM("augment.dropout", train.augment.dropout),
      ANCOR_NUM("augment.scale_lo", train.augment.scale_lo),
      ANCOR_NUM("augment.scale_hi", train.augment.scale_hi),

      Field{"train.preset", [](ExperimentConfig& c, const std::string& v) { c.train.preset = parse_preset(v); },
            [](const ExperimentConfig& c) { return to_string(c.train.preset); }},
      ANCOR_UINT("train.epochs", train.epochs),
      ANCOR_UINT("train.batch_size", train.batch_size),
      ANCOR_NUM("train.base_lr", train.base_lr),
      ANCOR_NUM("train.min_lr", train.min_lr),
      ANCOR_UINT("train.cycle_epochs", train.cycle_epochs),
      ANCOR_NUM("train.weight_decay", train.weight_decay),
      ANCOR_NUM("train.sgd_momentum", train.sgd_momentum),
      ANCOR_NUM("train.moco_momentum", train.moco_momentum),
      Field{"train.variant",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "seq") c.train.variant = ModelVariant::Seq;
              else if (v == "fork") c.train.variant = ModelVariant::Fork;
              else throw ConfigError("train.variant: expected seq or fork, got '" + v + "'");
            },
            [](const ExperimentConfig& c) { return to_string(c.train.variant); }},
      ANCOR_BOOL("train.fork_post_relu", train.fork_post_relu),
      ANCOR_UINT("train.feature_dim", train.feature_dim),
      ANCOR_UINT("train.embedding_dim", train.embedding_dim),
      ANCOR_UINT("train.encoder_hidden_layers", train.encoder_hidden_layers),
      ANCOR_NUM("train.contrastive.temperature", train.contrastive.temperature),
      ANCOR_BOOL("train.contrastive.angular", train.contrastive.angular_enabled),
      Field{"train.contrastive.queue_mode",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "multi") c.train.contrastive.queue_mode = QueueMode::Multi;
              else if (v == "single") c.train.contrastive.queue_mode = QueueMode::Single;
              else throw ConfigError("train.contrastive.queue_mode: expected multi or single, got '" + v + "'");
            },
            [](const ExperimentConfig& c) { return to_string(c.train.contrastive.queue_mode); }},
      ANCOR_UINT("train.contrastive.capacity", train.contrastive.capacity),
      ANCOR_BOOL("train.contrastive.anchor_gradient", train.contrastive.anchor_gradient),

      ANCOR_UINT("eval.episodes", eval.episodes),
      Field{"eval.mode", [](ExperimentConfig& c, const std::string& v) { c.eval.mode = parse_eval_mode(v); },
            [](const ExperimentConfig& c) { return to_string(c.eval.mode); }},
      ANCOR_UINT("eval.shot", eval.shot),
      ANCOR_UINT("eval.queries", eval.queries),
      ANCOR_UINT("eval.ways", eval.ways),
      ANCOR_UINT("eval.support_augment_copies", eval.support_augment_copies),
      ANCOR_BOOL("eval.include_original_support", eval.include_original_support),
      ANCOR_UINT("eval.head.iterations", eval.head.iterations),
      ANCOR_NUM("eval.head.step", eval.head.step),
      ANCOR_NUM("eval.head.l2", eval.head.l2),
  };
  return table;
}

#undef ANCOR_NUM
#undef ANCOR_UINT
#undef ANCOR_BOOL

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void ExperimentConfig::resolve() {
  data.seed = seed;
  train.seed = seed;
  eval.seed = seed;
  eval.augment = train.augment;
}

void ExperimentConfig::validate() const {
  data.validate();
  train.validate();
  eval.validate();
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
  cfg.resolve();
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("line " + std::to_string(line_no) + ": unterminated section header", line_no);
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("line " + std::to_string(line_no) + ": expected 'key = value'", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("line " + std::to_string(line_no) + ": empty key", line_no);
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      find_field(full).set(cfg, value);
    } catch (const ConfigError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  cfg.resolve();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

std::string to_text(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string key = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace ancor
