#include "aen/config.h"

#include <functional>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "aen/error.h"
#include "detail/bytes.h"

namespace aen {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// One configurable key: how to read it from and write it into a RunConfig.
struct KeyEntry {
  const char* key;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

[[noreturn]] void bad_type(const std::string& key, const char* expected,
                           const json& got) {
  throw ConfigError("config key \"" + key + "\" expects " + expected +
                    ", got " + got.dump());
}

int as_int(const std::string& key, const json& v) {
  if (!v.is_number_integer()) bad_type(key, "an integer", v);
  return v.get<int>();
}

double as_double(const std::string& key, const json& v) {
  if (!v.is_number()) bad_type(key, "a number", v);
  return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) bad_type(key, "a boolean", v);
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) bad_type(key, "a string", v);
  return v.get<std::string>();
}

std::uint64_t as_u64(const std::string& key, const json& v) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() &&
                                   v.get<std::int64_t>() >= 0)) {
    bad_type(key, "a non-negative integer", v);
  }
  return v.get<std::uint64_t>();
}

#define INT_KEY(name, field)                                        \
  KeyEntry {                                                        \
    name, [](RunConfig& c, const json& v) { c.field = as_int(name, v); }, \
        [](const RunConfig& c) { return json(c.field); }            \
  }
#define DOUBLE_KEY(name, field)                                     \
  KeyEntry {                                                        \
    name,                                                           \
        [](RunConfig& c, const json& v) { c.field = as_double(name, v); }, \
        [](const RunConfig& c) { return json(c.field); }            \
  }
#define BOOL_KEY(name, field)                                       \
  KeyEntry {                                                        \
    name, [](RunConfig& c, const json& v) { c.field = as_bool(name, v); }, \
        [](const RunConfig& c) { return json(c.field); }            \
  }
#define STRING_KEY(name, field)                                     \
  KeyEntry {                                                        \
    name,                                                           \
        [](RunConfig& c, const json& v) { c.field = as_string(name, v); }, \
        [](const RunConfig& c) { return json(c.field); }            \
  }

const std::vector<KeyEntry>& key_table() {
  static const std::vector<KeyEntry> table = {
      INT_KEY("mel.n_fft", mel.n_fft),
      INT_KEY("mel.hop", mel.hop),
      INT_KEY("mel.n_mels", mel.n_mels),
      DOUBLE_KEY("mel.f_min", mel.f_min),
      DOUBLE_KEY("mel.f_max", mel.f_max),
      BOOL_KEY("augment.enabled", augment.enabled),
      BOOL_KEY("augment.awgn_enabled", augment.awgn_enabled),
      DOUBLE_KEY("augment.snr_db_min", augment.snr_db_min),
      DOUBLE_KEY("augment.snr_db_max", augment.snr_db_max),
      INT_KEY("augment.n_freq_masks", augment.n_freq_masks),
      INT_KEY("augment.max_freq_width", augment.max_freq_width),
      INT_KEY("augment.n_time_masks", augment.n_time_masks),
      INT_KEY("augment.max_time_width", augment.max_time_width),
      DOUBLE_KEY("augment.apply_probability", augment.apply_probability),
      INT_KEY("model.kernel_size", model.kernel_size),
      KeyEntry{"model.conv_filters",
               [](RunConfig& c, const json& v) {
                 if (!v.is_array() || v.size() != 3) {
                   bad_type("model.conv_filters", "an array of 3 integers", v);
                 }
                 for (std::size_t i = 0; i < 3; ++i) {
                   c.model.conv_filters[i] =
                       as_int("model.conv_filters", v[i]);
                 }
               },
               [](const RunConfig& c) {
                 return json(std::vector<int>(c.model.conv_filters.begin(),
                                              c.model.conv_filters.end()));
               }},
      INT_KEY("model.fc_dim", model.fc_dim),
      INT_KEY("model.lstm_hidden", model.lstm_hidden),
      INT_KEY("model.lstm_layers", model.lstm_layers),
      DOUBLE_KEY("model.dropout", model.dropout),
      INT_KEY("model.num_classes", model.num_classes),
      DOUBLE_KEY("train.lr", train.lr),
      DOUBLE_KEY("train.weight_decay", train.weight_decay),
      DOUBLE_KEY("train.beta1", train.beta1),
      DOUBLE_KEY("train.beta2", train.beta2),
      DOUBLE_KEY("train.adam_eps", train.adam_eps),
      INT_KEY("train.batch_size", train.batch_size),
      INT_KEY("train.max_epochs", train.max_epochs),
      DOUBLE_KEY("train.scheduler_factor", train.scheduler_factor),
      INT_KEY("train.scheduler_patience", train.scheduler_patience),
      INT_KEY("train.early_stop_patience", train.early_stop_patience),
      INT_KEY("synth.n_per_class", synth.n_per_class),
      INT_KEY("synth.sample_rate", synth.sample_rate),
      DOUBLE_KEY("synth.duration_min", synth.duration_min),
      DOUBLE_KEY("synth.duration_max", synth.duration_max),
      STRING_KEY("synth.classes", synth.classes),
      INT_KEY("eval.k", k),
      KeyEntry{"seed",
               [](RunConfig& c, const json& v) { c.seed = as_u64("seed", v); },
               [](const RunConfig& c) { return json(c.seed); }},
  };
  return table;
}

#undef INT_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY
#undef STRING_KEY

const KeyEntry& find_key(const std::string& key) {
  for (const KeyEntry& e : key_table()) {
    if (key == e.key) return e;
  }
  throw ConfigError("unknown config key \"" + key + "\"");
}

}  // namespace

std::vector<SynthClassSpec> SynthConfig::parse_classes() const {
  std::vector<SynthClassSpec> specs;
  std::istringstream list(classes);
  std::string item;
  while (std::getline(list, item, ',')) {
    std::istringstream fields(item);
    SynthClassSpec spec;
    std::string carrier, am, extra;
    if (!std::getline(fields, spec.name, ':') ||
        !std::getline(fields, carrier, ':') || !std::getline(fields, am) ||
        spec.name.empty()) {
      throw ConfigError("synth.classes entry \"" + item +
                        "\" is not name:carrier_hz:am_hz");
    }
    try {
      std::size_t used = 0;
      spec.carrier_hz = std::stod(carrier, &used);
      if (used != carrier.size()) throw std::invalid_argument(carrier);
      spec.am_hz = std::stod(am, &used);
      if (used != am.size()) throw std::invalid_argument(am);
    } catch (const std::exception&) {
      throw ConfigError("synth.classes entry \"" + item +
                        "\" has non-numeric frequencies");
    }
    specs.push_back(std::move(spec));
  }
  if (specs.size() < 2) {
    throw ConfigError("synth.classes needs at least 2 classes, got \"" +
                      classes + "\"");
  }
  return specs;
}

void SynthConfig::validate() const {
  if (n_per_class < 1) {
    throw ConfigError("synth.n_per_class must be >= 1");
  }
  if (sample_rate < 1000) {
    throw ConfigError("synth.sample_rate must be >= 1000");
  }
  if (!(duration_min > 0.0) || !(duration_max >= duration_min)) {
    throw ConfigError("synth durations need 0 < duration_min <= duration_max");
  }
  parse_classes();
}

void RunConfig::normalize() {
  model.n_mels = mel.n_mels;
  train.seed = seed;
}

void RunConfig::validate() const {
  try {
    augment.validate();
    model.validate();
    train.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  synth.validate();
  if (k < 2) {
    throw ConfigError("eval.k must be >= 2");
  }
  // Mel settings are checked against a concrete sample rate when audio is
  // loaded; here we can only catch rate-independent mistakes.
  if (mel.n_fft < 2 || mel.hop < 1 || mel.n_mels < 1) {
    throw ConfigError("mel.n_fft, mel.hop, mel.n_mels must be positive");
  }
  if (!(mel.f_min >= 0.0) || !(mel.f_max > mel.f_min)) {
    throw ConfigError("mel frequencies need 0 <= f_min < f_max");
  }
}

RunConfig load_run_config(const std::string& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " +
                      e.what());
  }
  if (!doc.is_object()) {
    throw ConfigError("config file " + path +
                      " must hold a single JSON object of dotted keys");
  }
  RunConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    find_key(key).set(cfg, value);
  }
  cfg.normalize();
  return cfg;
}

void apply_override(RunConfig& cfg, const std::string& key,
                    const std::string& value) {
  const KeyEntry& entry = find_key(key);
  json parsed = json::parse(value, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded()) {
    parsed = json(value);  // unparseable literals are plain strings
  }
  entry.set(cfg, parsed);
  cfg.normalize();
}

std::string run_config_json(const RunConfig& cfg) {
  ordered_json out;
  for (const KeyEntry& e : key_table()) {
    out[e.key] = e.get(cfg);
  }
  return out.dump(2) + "\n";
}

}  // namespace aen
