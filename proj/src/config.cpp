#include "voltrack/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace voltrack {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  return std::all_of(key.begin(), key.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

const std::vector<ConfigEntry> kSimulateSchema = {
    {"seed", "", "root RNG seed (required)"},
    {"cameras", "3", "number of cameras on the ring rig"},
    {"points", "12", "number of tracked points"},
    {"frames", "48", "sequence length"},
    {"feature_dim", "16", "descriptor channels per point"},
    {"image_width", "640", "sensor width in pixels"},
    {"image_height", "480", "sensor height in pixels"},
    {"pixel_noise", "0.0", "track jitter sigma in pixels"},
    {"occlusion_rate", "0.0", "stationary per-view hidden fraction, [0, 0.9]"},
    {"feature_noise", "0.0", "per-view descriptor noise sigma"},
    {"motion", "mixed", "trajectory family: linear | orbit | mixed"},
};

const std::vector<ConfigEntry> kTrainSchema = {
    {"seed", "", "root RNG seed (required)"},
    {"steps", "2000", "optimizer steps"},
    {"warmup", "100", "linear warmup steps"},
    {"lr", "3e-3", "peak learning rate"},
    {"weight_decay", "1e-5", "decoupled weight decay"},
    {"hidden", "64,64,32", "hidden layer widths, comma separated"},
    {"dropout", "0.0", "hidden dropout rate"},
    {"standardize", "true", "per-layer activation standardization"},
    {"loss_recon", "1.0", "weight of the 3D reconstruction loss"},
    {"loss_proj", "0.7", "weight of the reprojection loss"},
    {"loss_attn", "0.8", "weight of the cross-view correspondence loss"},
    {"grid", "16", "voxel grid resolution per axis"},
    {"chunk", "8192", "voxel rows per aggregation chunk"},
    {"momentum", "0.8", "query state momentum"},
    {"attention", "full", "attention mode: full | uniform"},
};

const std::vector<ConfigEntry> kTrackSchema = {
    {"grid", "16", "voxel grid resolution per axis"},
    {"chunk", "8192", "voxel rows per aggregation chunk"},
    {"momentum", "0.8", "query state momentum"},
    {"attention", "full", "attention mode: full | uniform"},
};

const std::vector<ConfigEntry> kEvalSchema = {
    {"thresholds_3d", "0.01,0.02,0.04,0.08,0.16", "world-unit APD/AJ ladder"},
    {"thresholds_2d", "1,2,4,8,16", "pixel AJ ladder"},
};

const std::vector<ConfigEntry> kAblateSchema = {
    {"seed", "7", "root RNG seed for scenes and models"},
    {"scene_seeds", "1,2,3,4,5", "per-run scene seeds"},
    {"cameras", "3", "camera count for non-camera suites"},
    {"points", "12", "points per benchmark scene"},
    {"frames", "32", "frames per benchmark scene"},
    {"feature_dim", "6", "descriptor channels"},
    {"pixel_noise", "1.0", "benchmark pixel noise sigma"},
    {"occlusion_rate", "0.3", "benchmark occlusion rate"},
    {"feature_noise", "0.1", "benchmark descriptor noise"},
    {"steps", "2000", "training steps per variant"},
    {"warmup", "100", "warmup steps per variant"},
    {"lr", "3e-3", "peak learning rate"},
    {"hidden", "48,32", "hidden layer widths"},
    {"grid", "10", "voxel grid resolution"},
    {"chunk", "8192", "aggregation chunk size"},
    {"momentum", "0.8", "query state momentum"},
    {"thresholds_3d", "0.01,0.02,0.04,0.08,0.16", "metric ladder"},
};

const std::vector<ConfigEntry> kBenchSchema = {
    {"grids", "8,16,24", "voxel resolutions to sweep"},
    {"views", "2,3,4,5", "camera counts to sweep"},
    {"points", "12", "tracked points"},
    {"feature_dim", "16", "descriptor channels"},
    {"hidden", "64,64,32", "head widths for the FLOP model"},
    {"chunks", "1024,8192,65536", "chunk sizes to time"},
    {"timing_grid", "16", "resolution used for wall-clock rows"},
    {"timing_views", "3", "camera count used for wall-clock rows"},
};

}  // namespace

const std::vector<ConfigEntry>& config_schema(const std::string& command) {
  if (command == "simulate") return kSimulateSchema;
  if (command == "train") return kTrainSchema;
  if (command == "track") return kTrackSchema;
  if (command == "eval") return kEvalSchema;
  if (command == "ablate") return kAblateSchema;
  if (command == "bench") return kBenchSchema;
  throw ConfigInvalid("unknown command '" + command + "'");
}

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigInvalid("config line " + std::to_string(line_no) + " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key))
      throw ConfigInvalid("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
    if (cfg.values_.count(key))
      throw ConfigInvalid("duplicate config key '" + key + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_text(ss.str());
  } catch (const ConfigInvalid& e) {
    throw ConfigInvalid(path.string() + ": " + e.what());
  }
}

KeyValueConfig KeyValueConfig::for_command(const std::string& command,
                                           const KeyValueConfig& overrides) {
  const auto& schema = config_schema(command);
  KeyValueConfig cfg;
  for (const auto& entry : schema) cfg.values_[entry.key] = entry.default_value;
  for (const auto& [key, value] : overrides.values_) {
    if (!cfg.values_.count(key))
      throw ConfigInvalid("unknown config key '" + key + "' for command '" + command + "'");
    cfg.values_[key] = value;
  }
  return cfg;
}

bool KeyValueConfig::has(const std::string& key) const {
  const auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

void KeyValueConfig::require(const std::string& key) const {
  if (!has(key))
    throw ConfigInvalid("missing required config field '" + key + "'");
}

std::string KeyValueConfig::get_string(const std::string& key) const {
  require(key);
  return values_.at(key);
}

double KeyValueConfig::get_double(const std::string& key) const {
  const std::string raw = get_string(key);
  try {
    size_t used = 0;
    const double v = std::stod(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigInvalid("config field '" + key + "' is not a number: '" + raw + "'");
  }
}

int KeyValueConfig::get_int(const std::string& key) const {
  const std::string raw = get_string(key);
  try {
    size_t used = 0;
    const int v = std::stoi(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw ConfigInvalid("config field '" + key + "' is not an integer: '" + raw + "'");
  }
}

uint64_t KeyValueConfig::get_u64(const std::string& key) const {
  const std::string raw = get_string(key);
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(raw, &used);
    if (used != raw.size()) throw std::invalid_argument(raw);
    return static_cast<uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigInvalid("config field '" + key + "' is not an unsigned integer: '" + raw + "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const std::string raw = get_string(key);
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw ConfigInvalid("config field '" + key + "' must be true or false, got '" + raw + "'");
}

namespace {

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> parts;
  std::istringstream in(raw);
  std::string item;
  while (std::getline(in, item, ',')) parts.push_back(trim(item));
  return parts;
}

}  // namespace

std::vector<double> KeyValueConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& part : split_list(get_string(key))) {
    try {
      size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigInvalid("config field '" + key + "' has a non-numeric entry: '" + part + "'");
    }
  }
  if (out.empty()) throw ConfigInvalid("config field '" + key + "' must list at least one value");
  return out;
}

std::vector<int> KeyValueConfig::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (double v : get_doubles(key)) {
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
      throw ConfigInvalid("config field '" + key + "' must list integers");
    out.push_back(i);
  }
  return out;
}

void write_default_config(const std::string& command, const std::filesystem::path& path) {
  const auto& schema = config_schema(command);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config file " + path.string());
  out << "# " << command << " configuration\n";
  for (const auto& entry : schema) {
    out << "# " << entry.doc << "\n";
    out << entry.key << " = " << entry.default_value << "\n";
  }
  if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace voltrack
