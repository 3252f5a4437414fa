#include "fssuavl/experiment.hpp"

#include <fstream>

#include "fssuavl/error.hpp"
#include "fssuavl/rng.hpp"
#include "json_io.hpp"

namespace fssuavl {

void to_json(json& j, const DataSpec& d) {
  j = {{"train_images", d.train_images},
       {"train_audio", d.train_audio},
       {"test_images", d.test_images},
       {"test_audio", d.test_audio},
       {"synth_classes", d.synth_classes},
       {"synth_train_per_class", d.synth_train_per_class},
       {"synth_test_per_class", d.synth_test_per_class}};
}

void from_json(const json& j, DataSpec& d) {
  j.at("train_images").get_to(d.train_images);
  j.at("train_audio").get_to(d.train_audio);
  j.at("test_images").get_to(d.test_images);
  j.at("test_audio").get_to(d.test_audio);
  j.at("synth_classes").get_to(d.synth_classes);
  j.at("synth_train_per_class").get_to(d.synth_train_per_class);
  j.at("synth_test_per_class").get_to(d.synth_test_per_class);
}

namespace {

json to_tree(const ExperimentConfig& c) {
  json j = {{"encoder", c.encoder},     {"ssl", c.ssl},   {"featurize", c.featurize},
            {"partition", c.partition}, {"federation", c.federation}, {"eval", c.eval},
            {"data", c.data},           {"out", c.out}};
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  return j;
}

std::string kind_of(const json& v) {
  if (v.is_object()) return "object";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_unsigned()) return "unsigned integer";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_null()) return "null";
  return "array";
}

// Is `v` acceptable where the schema holds `schema`?
bool compatible(const json& schema, const json& v) {
  if (schema.is_object()) return v.is_object();
  if (schema.is_boolean()) return v.is_boolean();
  if (schema.is_number_unsigned()) return v.is_number_unsigned();
  if (schema.is_number_integer()) return v.is_number_integer();
  if (schema.is_number()) return v.is_number();
  if (schema.is_string()) return v.is_string();
  return true;
}

std::string expected_kind(const json& schema) {
  if (schema.is_number_unsigned()) return "non-negative integer";
  return kind_of(schema);
}

// Copies `src` into `dst` key by key, recording unknown keys and type errors.
// Types are judged against `schema` (the defaults tree), not against `dst`:
// values merged earlier must not narrow what later layers may set.
void merge(json& dst, const json& schema, const json& src, const std::string& prefix,
           std::vector<std::string>& errors) {
  for (const auto& [key, value] : src.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) {
      errors.push_back(path + ": unknown key");
      continue;
    }
    const json& kind = schema.at(key);
    json& slot = dst[key];
    if (path == "seed") {
      if (!value.is_number_unsigned()) errors.push_back(path + ": expected non-negative integer, got " + kind_of(value));
      else slot = value;
      continue;
    }
    if (!compatible(kind, value)) {
      errors.push_back(path + ": expected " + expected_kind(kind) + ", got " + kind_of(value));
      continue;
    }
    if (kind.is_object())
      merge(slot, kind, value, path, errors);
    else
      slot = value;
  }
}

// "a.b.c=value" -> nested object {"a":{"b":{"c":value}}}.
json override_tree(const std::string& spec, std::vector<std::string>& errors) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    errors.push_back("--set " + spec + ": expected key=value");
    return json::object();
  }
  const std::string key = spec.substr(0, eq), raw = spec.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json root = json::object();
  json* at = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) {
      errors.push_back("--set " + spec + ": empty key component");
      return json::object();
    }
    if (dot == std::string::npos) {
      (*at)[part] = value;
      break;
    }
    at = &(*at)[part];
    start = dot + 1;
  }
  return root;
}

template <class T>
void read_section(const json& tree, const char* key, T& out, std::vector<std::string>& errors) {
  try {
    out = tree.at(key).get<T>();
  } catch (const ConfigError& e) {
    errors.push_back(std::string(key) + ": " + e.what());
  } catch (const json::exception& e) {
    errors.push_back(std::string(key) + ": " + e.what());
  }
}

template <class T>
void collect(const T& section, std::vector<std::string>& errors) {
  try {
    section.validate();
  } catch (const ConfigError& e) {
    errors.push_back(e.what());
  }
}

[[noreturn]] void fail(const std::vector<std::string>& errors) {
  std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" + (errors.size() == 1 ? "" : "s") +
                    "):";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

void check_dir(const std::string& key, const std::string& dir, std::vector<std::string>& errors) {
  if (dir.empty()) return;
  if (!std::filesystem::is_directory(dir)) errors.push_back(key + ": directory '" + dir + "' does not exist");
  else if (!std::filesystem::exists(std::filesystem::path(dir) / "manifest.json"))
    errors.push_back(key + ": '" + dir + "' has no manifest.json");
}

std::vector<std::string> validation_errors(const ExperimentConfig& c) {
  std::vector<std::string> errors;
  collect(c.encoder, errors);
  collect(c.ssl, errors);
  collect(c.featurize, errors);
  collect(c.partition, errors);
  collect(c.federation, errors);
  collect(c.eval, errors);
  if (c.encoder.input_side != c.featurize.side)
    errors.push_back("encoder.input_side: " + std::to_string(c.encoder.input_side) + " differs from featurize.side " +
                     std::to_string(c.featurize.side));
  if (c.encoder.in_channels != 1) errors.push_back("encoder.in_channels: views are single-channel, must be 1");
  if (!c.seed) errors.push_back("seed: required");
  if (c.out.empty()) errors.push_back("out: must not be empty");
  const DataSpec& d = c.data;
  check_dir("data.train_images", d.train_images, errors);
  check_dir("data.train_audio", d.train_audio, errors);
  check_dir("data.test_images", d.test_images, errors);
  check_dir("data.test_audio", d.test_audio, errors);
  if (d.synth_classes < 2) errors.push_back("data.synth_classes: must be >= 2");
  if (d.synth_train_per_class < 1) errors.push_back("data.synth_train_per_class: must be >= 1");
  if (d.synth_test_per_class < 1) errors.push_back("data.synth_test_per_class: must be >= 1");
  return errors;
}

}  // namespace

void ExperimentConfig::validate() const {
  const auto errors = validation_errors(*this);
  if (!errors.empty()) fail(errors);
}

PretrainConfig ExperimentConfig::pretrain() const {
  if (!seed) throw ConfigError("invalid config:\n  seed: required");
  PretrainConfig p;
  p.encoder = encoder;
  p.ssl = ssl;
  p.featurize = featurize;
  p.federation = federation;
  p.seed = *seed;
  return p;
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) { return to_tree(cfg).dump(2) + "\n"; }

ExperimentConfig parse_experiment_config(const std::string& text, const std::vector<std::string>& overrides,
                                         const std::string& origin) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(origin, e.byte, std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw FormatError(origin, 0, "config must be a JSON object");

  std::vector<std::string> errors;
  ExperimentConfig defaults;
  const json schema = to_tree(defaults);
  json tree = schema;
  json explicit_keys = json::object();
  merge(tree, schema, user, "", errors);
  explicit_keys.merge_patch(user);
  for (const auto& spec : overrides) {
    const json o = override_tree(spec, errors);
    merge(tree, schema, o, "", errors);
    explicit_keys.merge_patch(o);
  }
  if (tree["seed"].is_number_unsigned()) {
    auto given = [&](const char* section) {
      return explicit_keys.contains(section) && explicit_keys[section].is_object() &&
             explicit_keys[section].contains("seed");
    };
    if (!given("partition")) tree["partition"]["seed"] = tree["seed"];
    if (!given("eval")) tree["eval"]["seed"] = tree["seed"];
  }

  ExperimentConfig c;
  read_section(tree, "encoder", c.encoder, errors);
  read_section(tree, "ssl", c.ssl, errors);
  read_section(tree, "featurize", c.featurize, errors);
  read_section(tree, "partition", c.partition, errors);
  read_section(tree, "federation", c.federation, errors);
  read_section(tree, "eval", c.eval, errors);
  read_section(tree, "data", c.data, errors);
  c.out = tree["out"].get<std::string>();
  if (tree["seed"].is_number_unsigned()) c.seed = tree["seed"].get<std::uint64_t>();
  if (errors.empty()) {
    const auto more = validation_errors(c);
    errors.insert(errors.end(), more.begin(), more.end());
  }
  if (!errors.empty()) fail(errors);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string(), 0, "cannot open config");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_experiment_config(text, overrides, path.string());
}

Corpora load_corpora(const ExperimentConfig& cfg) {
  if (!cfg.seed) throw ConfigError("invalid config:\n  seed: required");
  const DataSpec& d = cfg.data;
  auto get = [&](const std::string& dir, Modality m, int per_class, std::uint64_t tag) {
    if (!dir.empty()) return load_dataset(dir);
    return gen_synthetic_corpus(m, d.synth_classes, per_class, derive_seed(*cfg.seed, {hash_name("synth"), tag}));
  };
  Corpora c;
  c.train_images = get(d.train_images, Modality::image, d.synth_train_per_class, 0);
  c.train_audio = get(d.train_audio, Modality::audio, d.synth_train_per_class, 1);
  c.test_images = get(d.test_images, Modality::image, d.synth_test_per_class, 2);
  c.test_audio = get(d.test_audio, Modality::audio, d.synth_test_per_class, 3);
  if (c.train_images.modality != Modality::image || c.test_images.modality != Modality::image)
    throw ConfigError("invalid config:\n  data.*_images: directory holds audio, not images");
  if (c.train_audio.modality != Modality::audio || c.test_audio.modality != Modality::audio)
    throw ConfigError("invalid config:\n  data.*_audio: directory holds images, not audio");
  return c;
}

}  // namespace fssuavl
