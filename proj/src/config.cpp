#include "hssdct/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hssdct/bench.hpp"
#include "hssdct/error.hpp"
#include "hssdct/rng.hpp"

namespace hssdct {

using json = nlohmann::ordered_json;

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data.n_scenes == 0) throw ConfigError("data.n_scenes must be >= 1");
  if (data.height == 0 || data.width == 0 || data.height % model.ratio != 0 ||
      data.width % model.ratio != 0) {
    throw ConfigError("data.height and data.width must be positive multiples of model.ratio");
  }
  if (data.n_endmembers == 0) throw ConfigError("data.n_endmembers must be >= 1");
  if (!(data.noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma must be >= 0");
  if (bench.channels == 0) throw ConfigError("bench.channels must be >= 1");
  if (bench.repeats < 5) throw ConfigError("bench.repeats must be >= 5");
  if (bench.token_counts.size() < 4) throw ConfigError("bench.token_counts needs >= 4 entries");
  for (const auto& v : bench.variants) parse_variant(v);
}

void RunConfig::set_seed(std::uint64_t seed) {
  model.seed = seed;
  train.seed = seed;
  data.seed = seed;
}

SceneSpec RunConfig::scene_spec(std::size_t index) const {
  SceneSpec s;
  s.seed = derive_seed(data.seed, index);
  s.height = data.height;
  s.width = data.width;
  s.bands = model.hsi_bands;
  s.msi_bands = model.msi_bands;
  s.ratio = model.ratio;
  s.n_endmembers = data.n_endmembers;
  s.noise_sigma = data.noise_sigma;
  s.blur_sigma = data.blur_sigma;
  return s;
}

namespace {

json model_json(const ModelConfig& m) {
  return {{"hsi_bands", m.hsi_bands}, {"msi_bands", m.msi_bands},
          {"feat", m.feat},           {"n_blocks", m.n_blocks},
          {"block_windows", m.block_windows}, {"ratio", m.ratio},
          {"seed", m.seed},           {"compress_values", m.compress_values}};
}

json to_json(const RunConfig& c) {
  json j;
  j["model"] = model_json(c.model);
  j["train"] = {{"lr_max", c.train.lr_max},
                {"lr_min", c.train.lr_min},
                {"total_steps", c.train.total_steps},
                {"batch_size", c.train.batch_size},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"eps", c.train.eps},
                {"lambda1", c.train.loss_weights.lambda1},
                {"lambda2", c.train.loss_weights.lambda2},
                {"seed", c.train.seed}};
  j["data"] = {{"n_scenes", c.data.n_scenes},         {"height", c.data.height},
               {"width", c.data.width},               {"n_endmembers", c.data.n_endmembers},
               {"noise_sigma", c.data.noise_sigma},   {"blur_sigma", c.data.blur_sigma},
               {"seed", c.data.seed}};
  j["bench"] = {{"token_counts", c.bench.token_counts}, {"channels", c.bench.channels},
                {"repeats", c.bench.repeats},           {"warmup", c.bench.warmup},
                {"variants", c.bench.variants}};
  return j;
}

// Reads known keys of one object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("bad value for " + name_ + "." + key + ": " + it->dump());
    }
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key " + name_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_model(const json& j, ModelConfig& m) {
  Section s(j, "model");
  s.read("hsi_bands", m.hsi_bands);
  s.read("msi_bands", m.msi_bands);
  s.read("feat", m.feat);
  s.read("n_blocks", m.n_blocks);
  s.read("block_windows", m.block_windows);
  s.read("ratio", m.ratio);
  s.read("seed", m.seed);
  s.read("compress_values", m.compress_values);
  s.finish();
}

RunConfig from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, _] : j.items()) {
    if (key != "model" && key != "train" && key != "data" && key != "bench") {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }
  if (j.contains("model")) read_model(j["model"], c.model);
  if (j.contains("train")) {
    Section s(j["train"], "train");
    s.read("lr_max", c.train.lr_max);
    s.read("lr_min", c.train.lr_min);
    s.read("total_steps", c.train.total_steps);
    s.read("batch_size", c.train.batch_size);
    s.read("beta1", c.train.beta1);
    s.read("beta2", c.train.beta2);
    s.read("eps", c.train.eps);
    s.read("lambda1", c.train.loss_weights.lambda1);
    s.read("lambda2", c.train.loss_weights.lambda2);
    s.read("seed", c.train.seed);
    s.finish();
  }
  if (j.contains("data")) {
    Section s(j["data"], "data");
    s.read("n_scenes", c.data.n_scenes);
    s.read("height", c.data.height);
    s.read("width", c.data.width);
    s.read("n_endmembers", c.data.n_endmembers);
    s.read("noise_sigma", c.data.noise_sigma);
    s.read("blur_sigma", c.data.blur_sigma);
    s.read("seed", c.data.seed);
    s.finish();
  }
  if (j.contains("bench")) {
    Section s(j["bench"], "bench");
    s.read("token_counts", c.bench.token_counts);
    s.read("channels", c.bench.channels);
    s.read("repeats", c.bench.repeats);
    s.read("warmup", c.bench.warmup);
    s.read("variants", c.bench.variants);
    s.finish();
  }
  c.validate();
  return c;
}

json parse_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("malformed " + what + ": " + e.what());
  }
}

}  // namespace

std::string to_json_text(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

RunConfig parse_config(const std::string& text) { return from_json(parse_text(text, "config")); }

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string section = assignment.substr(0, dot);
  const std::string key = assignment.substr(dot + 1, eq - dot - 1);
  const std::string text = assignment.substr(eq + 1);
  json j = to_json(config);
  if (!j.contains(section) || !j[section].contains(key)) {
    throw ConfigError("unknown config key " + section + "." + key);
  }
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  j[section][key] = value;
  config = from_json(j);
}

std::string model_config_json(const ModelConfig& config) { return model_json(config).dump(); }

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig m;
  read_model(parse_text(text, "model config"), m);
  m.validate();
  return m;
}

}  // namespace hssdct
