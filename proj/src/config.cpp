#include "ipreid/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace ipreid {

namespace {

enum class Kind { kInt, kDouble, kBool, kString, kIntList };

struct SchemaEntry {
  Kind kind;
  const char* def;
  std::vector<std::string> choices;  // enum values when non-empty
};

const std::map<std::string, SchemaEntry>& schema() {
  static const std::map<std::string, SchemaEntry> s = {
      {"data.num_identities", {Kind::kInt, "20", {}}},
      {"data.num_cameras", {Kind::kInt, "4", {}}},
      {"data.images_per_id_per_cam", {Kind::kInt, "2", {}}},
      {"data.height", {Kind::kInt, "32", {}}},
      {"data.width", {Kind::kInt, "16", {}}},
      {"data.channels", {Kind::kInt, "3", {}}},
      {"gan.base_channels", {Kind::kInt, "16", {}}},
      {"gan.res_blocks", {Kind::kInt, "3", {}}},
      {"gan.d_base_channels", {Kind::kInt, "16", {}}},
      {"gan.d_layers", {Kind::kInt, "3", {}}},
      {"gan.leaky_slope", {Kind::kDouble, "0.01", {}}},
      {"gan.epochs", {Kind::kInt, "60", {}}},
      {"gan.batch_size", {Kind::kInt, "16", {}}},
      {"gan.lr", {Kind::kDouble, "1e-4", {}}},
      {"gan.beta1", {Kind::kDouble, "0.5", {}}},
      {"gan.beta2", {Kind::kDouble, "0.999", {}}},
      {"gan.d_steps_per_g_step", {Kind::kInt, "1", {}}},
      {"gan.nonsaturating", {Kind::kBool, "false", {}}},
      {"gan.checkpoint_every", {Kind::kInt, "0", {}}},
      {"weights.lambda_dom", {Kind::kDouble, "1", {}}},
      {"weights.lambda_rec", {Kind::kDouble, "10", {}}},
      {"weights.lambda_sem", {Kind::kDouble, "1", {}}},
      {"reid.stage_channels", {Kind::kIntList, "16,32,64,128", {}}},
      {"reid.blocks_per_stage", {Kind::kIntList, "1,1,1,1", {}}},
      {"reid.embedding_dim", {Kind::kInt, "1024", {}}},
      {"reid.feature_source",
       {Kind::kString, "embedding", {"embedding", "backbone_pool"}}},
      {"reid.use_ibn", {Kind::kBool, "false", {}}},
      {"reid.epochs", {Kind::kInt, "30", {}}},
      {"reid.batch_size", {Kind::kInt, "16", {}}},
      {"reid.lr", {Kind::kDouble, "1e-4", {}}},
      {"reid.beta1", {Kind::kDouble, "0.9", {}}},
      {"reid.beta2", {Kind::kDouble, "0.999", {}}},
      {"dsem.epochs", {Kind::kInt, "30", {}}},
      {"dsem.batch_size", {Kind::kInt, "16", {}}},
      {"dsem.lr", {Kind::kDouble, "1e-4", {}}},
      {"protocol.metric", {Kind::kString, "euclidean-l2", {"euclidean-l2"}}},
      {"protocol.max_rank", {Kind::kInt, "20", {}}},
  };
  return s;
}

int parse_int_value(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  }
}

double parse_double_value(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
}

}  // namespace

Config::Config() {
  for (const auto& [key, entry] : schema()) values_[key] = entry.def;
}

void Config::set_checked(const std::string& key, const std::string& value,
                         const std::string& origin) {
  auto it = schema().find(key);
  if (it == schema().end())
    throw ConfigError("unknown config key '" + key + "' (" + origin + ")");
  const SchemaEntry& e = it->second;
  switch (e.kind) {
    case Kind::kInt: parse_int_value(key, value); break;
    case Kind::kDouble: parse_double_value(key, value); break;
    case Kind::kBool:
      if (value != "true" && value != "false" && value != "0" && value != "1")
        throw ConfigError("config key '" + key + "': '" + value + "' is not a boolean");
      break;
    case Kind::kIntList: {
      std::stringstream ss(value);
      std::string tok;
      bool any = false;
      while (std::getline(ss, tok, ',')) {
        parse_int_value(key, tok);
        any = true;
      }
      if (!any) throw ConfigError("config key '" + key + "': empty list");
      break;
    }
    case Kind::kString:
      if (!e.choices.empty() &&
          std::find(e.choices.begin(), e.choices.end(), value) == e.choices.end()) {
        std::string opts;
        for (const auto& c : e.choices) opts += (opts.empty() ? "" : ", ") + c;
        throw ConfigError("config key '" + key + "': '" + value +
                          "' is not one of {" + opts + "}");
      }
      break;
  }
  values_[key] = value;
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed = line;
    auto pos = trimmed.find_first_not_of(" \t");
    trimmed = (pos == std::string::npos) ? "" : trimmed.substr(pos);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config file " + path.string() + ":" + std::to_string(lineno) +
                        ": expected key=value, got '" + line + "'");
    std::string key = trimmed.substr(0, eq);
    std::string value = trimmed.substr(eq + 1);
    auto strip = [](std::string& s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      s = (b == std::string::npos) ? "" : s.substr(b, e - b + 1);
    };
    strip(key);
    strip(value);
    set_checked(key, value, path.string() + ":" + std::to_string(lineno));
  }
}

void Config::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must be key=value, got '" + assignment + "'");
  set_checked(assignment.substr(0, eq), assignment.substr(eq + 1), "command line");
}

int Config::get_int(const std::string& key) const {
  return parse_int_value(key, get_string(key));
}

double Config::get_double(const std::string& key) const {
  return parse_double_value(key, get_string(key));
}

bool Config::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  return v == "true" || v == "1";
}

std::string Config::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  std::stringstream ss(get_string(key));
  std::string tok;
  std::vector<int> out;
  while (std::getline(ss, tok, ',')) out.push_back(parse_int_value(key, tok));
  return out;
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write resolved config: " + path.string());
  for (const auto& [k, v] : values_) f << k << "=" << v << "\n";
}

SyntheticSpec Config::synthetic_spec() const {
  SyntheticSpec s;
  s.num_identities = get_int("data.num_identities");
  s.num_cameras = get_int("data.num_cameras");
  s.images_per_identity_per_camera = get_int("data.images_per_id_per_cam");
  s.height = get_int("data.height");
  s.width = get_int("data.width");
  s.channels = get_int("data.channels");
  return s;
}

GeneratorConfig Config::generator_config(int num_domains) const {
  GeneratorConfig g;
  g.base_channels = get_int("gan.base_channels");
  g.num_res_blocks = get_int("gan.res_blocks");
  g.height = get_int("data.height");
  g.width = get_int("data.width");
  g.channels = get_int("data.channels");
  g.num_domains = num_domains;
  g.validate();
  return g;
}

DomainDiscriminatorConfig Config::discriminator_config(int num_domains) const {
  DomainDiscriminatorConfig d;
  d.base_channels = get_int("gan.d_base_channels");
  d.num_layers = get_int("gan.d_layers");
  d.leaky_slope = get_double("gan.leaky_slope");
  d.height = get_int("data.height");
  d.width = get_int("data.width");
  d.channels = get_int("data.channels");
  d.num_domains = num_domains;
  d.validate();
  return d;
}

ReIDConfig Config::reid_config() const {
  ReIDConfig r;
  r.stage_channels = get_int_list("reid.stage_channels");
  r.blocks_per_stage = get_int_list("reid.blocks_per_stage");
  r.embedding_dim = get_int("reid.embedding_dim");
  r.use_ibn = get_bool("reid.use_ibn");
  r.feature_source = get_string("reid.feature_source");
  r.height = get_int("data.height");
  r.width = get_int("data.width");
  r.channels = get_int("data.channels");
  r.num_classes = 1;  // placeholder; training fills the real value
  r.validate();
  r.num_classes = 0;
  return r;
}

namespace {
LossWeights weights_from(const Config& c) {
  LossWeights w;
  w.lambda_dom = c.get_double("weights.lambda_dom");
  w.lambda_rec = c.get_double("weights.lambda_rec");
  w.lambda_sem = c.get_double("weights.lambda_sem");
  return w;
}
}  // namespace

TrainConfig Config::gan_train_config(long seed) const {
  TrainConfig t;
  t.total_epochs = get_int("gan.epochs");
  t.base_lr = get_double("gan.lr");
  t.batch_size = get_int("gan.batch_size");
  t.seed = seed;
  t.weights = weights_from(*this);
  t.d_steps_per_g_step = get_int("gan.d_steps_per_g_step");
  t.with_semantic = t.weights.lambda_sem > 0;
  t.nonsaturating_g_adv = get_bool("gan.nonsaturating");
  t.beta1 = get_double("gan.beta1");
  t.beta2 = get_double("gan.beta2");
  t.checkpoint_every = get_int("gan.checkpoint_every");
  t.validate();
  return t;
}

TrainConfig Config::reid_train_config(long seed) const {
  TrainConfig t;
  t.total_epochs = get_int("reid.epochs");
  t.base_lr = get_double("reid.lr");
  t.batch_size = get_int("reid.batch_size");
  t.seed = seed;
  t.weights = weights_from(*this);
  t.beta1 = get_double("reid.beta1");
  t.beta2 = get_double("reid.beta2");
  t.validate();
  return t;
}

TrainConfig Config::dsem_train_config(long seed) const {
  TrainConfig t;
  t.total_epochs = get_int("dsem.epochs");
  t.base_lr = get_double("dsem.lr");
  t.batch_size = get_int("dsem.batch_size");
  t.seed = seed;
  t.weights = weights_from(*this);
  t.beta1 = get_double("reid.beta1");
  t.beta2 = get_double("reid.beta2");
  t.validate();
  return t;
}

}  // namespace ipreid
