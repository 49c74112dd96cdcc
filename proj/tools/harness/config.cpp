#include "config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "cilf/errors.hpp"

namespace cilf::harness {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class FieldError : public ConfigError {
 public:
  FieldError(const std::string& key, std::size_t line, const std::string& msg)
      : ConfigError("config line " + std::to_string(line) + ": " + key + ": " + msg) {}
};

std::uint64_t to_uint(const std::string& key, std::size_t line, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw FieldError(key, line, "expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, std::size_t line, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw FieldError(key, line, "expected a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, std::size_t line, const std::string& v) {
  if (v == "true" || v == "on") return true;
  if (v == "false" || v == "off") return false;
  throw FieldError(key, line, "expected true/false, got '" + v + "'");
}

template <typename T>
std::vector<T> to_uint_list(const std::string& key, std::size_t line, const std::string& v) {
  std::vector<T> out;
  for (const auto& item : split_list(v)) out.push_back(static_cast<T>(to_uint(key, line, item)));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, std::size_t line, const std::string& v)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"run.name", [](auto& c, auto&, auto, auto& v) { c.name = v; }},
      {"run.seeds", [](auto& c, auto& k, auto l, auto& v) { c.seeds = to_uint_list<std::uint64_t>(k, l, v); }},

      {"dataset.source",
       [](auto& c, auto& k, auto l, auto& v) {
         if (v == "glyphs") c.dataset.source = DatasetSource::Glyphs;
         else if (v == "idx") c.dataset.source = DatasetSource::Idx;
         else throw FieldError(k, l, "expected glyphs or idx, got '" + v + "'");
       }},
      {"dataset.classes", [](auto& c, auto& k, auto l, auto& v) { c.dataset.classes = to_uint(k, l, v); }},
      {"dataset.samples_per_class",
       [](auto& c, auto& k, auto l, auto& v) { c.dataset.samples_per_class = to_uint(k, l, v); }},
      {"dataset.size", [](auto& c, auto& k, auto l, auto& v) { c.dataset.size = to_uint(k, l, v); }},
      {"dataset.noise", [](auto& c, auto& k, auto l, auto& v) { c.dataset.noise = to_double(k, l, v); }},
      {"dataset.seed", [](auto& c, auto& k, auto l, auto& v) { c.dataset.seed = to_uint(k, l, v); }},
      {"dataset.train_images", [](auto& c, auto&, auto, auto& v) { c.dataset.train_images = v; }},
      {"dataset.train_labels", [](auto& c, auto&, auto, auto& v) { c.dataset.train_labels = v; }},
      {"dataset.test_images", [](auto& c, auto&, auto, auto& v) { c.dataset.test_images = v; }},
      {"dataset.test_labels", [](auto& c, auto&, auto, auto& v) { c.dataset.test_labels = v; }},

      {"stream.mode",
       [](auto& c, auto& k, auto l, auto& v) {
         if (v == "half_then_equal") c.stream.mode = StreamMode::HalfThenEqual;
         else if (v == "equal") c.stream.mode = StreamMode::Equal;
         else if (v == "base_then_equal") c.stream.mode = StreamMode::BaseThenEqual;
         else throw FieldError(k, l, "expected half_then_equal, equal or base_then_equal, got '" + v + "'");
       }},
      {"stream.tasks", [](auto& c, auto& k, auto l, auto& v) { c.stream.tasks = to_uint(k, l, v); }},
      {"stream.base_classes", [](auto& c, auto& k, auto l, auto& v) { c.stream.base_classes = to_uint(k, l, v); }},

      {"model.arch",
       [](auto& c, auto& k, auto l, auto& v) {
         try {
           c.arch.kind = parse_arch(v);
         } catch (const ConfigError& e) {
           throw FieldError(k, l, e.what());
         }
       }},
      {"model.hidden", [](auto& c, auto& k, auto l, auto& v) { c.arch.hidden = to_uint_list<std::size_t>(k, l, v); }},
      {"model.conv_channels",
       [](auto& c, auto& k, auto l, auto& v) { c.arch.conv_channels = to_uint_list<std::size_t>(k, l, v); }},
      {"model.feature_dim", [](auto& c, auto& k, auto l, auto& v) { c.arch.feature_dim = to_uint(k, l, v); }},

      {"train.epochs", [](auto& c, auto& k, auto l, auto& v) { c.train.epochs = to_uint(k, l, v); }},
      {"train.batch_size", [](auto& c, auto& k, auto l, auto& v) { c.train.batch_size = to_uint(k, l, v); }},
      {"train.learning_rate", [](auto& c, auto& k, auto l, auto& v) { c.train.learning_rate = to_double(k, l, v); }},
      {"train.lr_decay_epochs",
       [](auto& c, auto& k, auto l, auto& v) { c.train.lr_decay_epochs = to_uint_list<std::size_t>(k, l, v); }},
      {"train.lr_decay_factor",
       [](auto& c, auto& k, auto l, auto& v) { c.train.lr_decay_factor = to_double(k, l, v); }},
      {"train.alpha", [](auto& c, auto& k, auto l, auto& v) { c.train.weights.alpha = to_double(k, l, v); }},
      {"train.beta", [](auto& c, auto& k, auto l, auto& v) { c.train.weights.beta = to_double(k, l, v); }},
      {"train.gamma", [](auto& c, auto& k, auto l, auto& v) { c.train.weights.gamma = to_double(k, l, v); }},
      {"train.lambda", [](auto& c, auto& k, auto l, auto& v) { c.train.weights.lambda = to_double(k, l, v); }},
      {"train.protoaug",
       [](auto& c, auto& k, auto l, auto& v) {
         try {
           c.train.protoaug_mode = parse_protoaug(v);
         } catch (const ConfigError& e) {
           throw FieldError(k, l, e.what());
         }
       }},
      {"train.covariance",
       [](auto& c, auto& k, auto l, auto& v) {
         try {
           c.train.covariance_mode = parse_covariance(v);
         } catch (const ConfigError& e) {
           throw FieldError(k, l, e.what());
         }
       }},
      {"train.radius_policy",
       [](auto& c, auto& k, auto l, auto& v) {
         try {
           c.train.radius_policy = parse_radius_policy(v);
         } catch (const ConfigError& e) {
           throw FieldError(k, l, e.what());
         }
       }},
      {"train.hardness", [](auto& c, auto& k, auto l, auto& v) { c.train.hardness_enabled = to_bool(k, l, v); }},
      {"train.hardness_view0_only",
       [](auto& c, auto& k, auto l, auto& v) { c.train.hardness_view0_only = to_bool(k, l, v); }},
      {"train.sst", [](auto& c, auto& k, auto l, auto& v) { c.train.sst_enabled = to_bool(k, l, v); }},
      {"train.kd_squared", [](auto& c, auto& k, auto l, auto& v) { c.train.kd_squared = to_bool(k, l, v); }},

      {"eval.ensemble", [](auto& c, auto& k, auto l, auto& v) { c.train.ensemble_eval = to_bool(k, l, v); }},
      {"eval.corruptions", [](auto& c, auto&, auto, auto& v) { c.eval.corruptions = split_list(v); }},
      {"eval.corruption_severity",
       [](auto& c, auto& k, auto l, auto& v) { c.eval.corruption_severity = to_uint(k, l, v); }},
      {"eval.export_features", [](auto& c, auto& k, auto l, auto& v) { c.eval.export_features = to_bool(k, l, v); }},

      {"output.dir", [](auto& c, auto&, auto, auto& v) { c.output_dir = v; }},
      {"output.checkpoints", [](auto& c, auto& k, auto l, auto& v) { c.write_checkpoints = to_bool(k, l, v); }},
  };
  return table;
}

std::string to_hex(const unsigned char* data, unsigned int n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < n; ++i) {
    out.push_back(digits[data[i] >> 4]);
    out.push_back(digits[data[i] & 0xf]);
  }
  return out;
}

}  // namespace

ConfigText parse_config_text(const std::string& text) {
  ConfigText out;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find_first_of("#;");
    std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) throw ConfigError("config line " + std::to_string(line) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line) + ": expected key = value");
    if (section.empty()) throw ConfigError("config line " + std::to_string(line) + ": key outside any [section]");
    const std::string key = section + "." + trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (out.values.count(key)) {
      throw ConfigError("config line " + std::to_string(line) + ": duplicate key " + key + " (first set on line " +
                        std::to_string(out.lines[key]) + ")");
    }
    out.values[key] = value;
    out.lines[key] = line;
  }
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  return to_hex(digest, len);
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

std::string config_hash(const ConfigText& cfg) {
  std::string canonical;
  for (const auto& [k, v] : cfg.values) canonical += k + "=" + v + "\n";  // std::map iterates sorted
  return sha256_hex(canonical);
}

void ExperimentConfig::validate() const {
  arch.validate();
  train.validate();
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
  if (dataset.source == DatasetSource::Glyphs) {
    if (dataset.size < 8) throw ConfigError("dataset.size must be >= 8");
    if (dataset.classes == 0 || dataset.classes > glyph_alphabet_size()) {
      throw ConfigError("dataset.classes must be in [1, " + std::to_string(glyph_alphabet_size()) + "]");
    }
    if (dataset.samples_per_class < 2) throw ConfigError("dataset.samples_per_class must be >= 2");
    if (!(dataset.noise >= 0.0)) throw ConfigError("dataset.noise must be >= 0");
    if (arch.side != dataset.size) throw ConfigError("dataset.size does not match the model input side");
    task_sizes(dataset.classes, stream);
  } else {
    if (dataset.train_images.empty() || dataset.train_labels.empty()) {
      throw ConfigError("dataset.train_images and dataset.train_labels are required for idx data");
    }
    if (dataset.test_images.empty() != dataset.test_labels.empty()) {
      throw ConfigError("dataset.test_images and dataset.test_labels must be given together");
    }
  }
  for (const auto& kind : eval.corruptions) corruption_presets(kind);
  if (eval.corruption_severity < 1 || eval.corruption_severity > 3) {
    throw ConfigError("eval.corruption_severity must be 1, 2 or 3");
  }
  if (eval.export_features && arch.feature_dim != 2) {
    throw ConfigError("eval.export_features needs model.feature_dim = 2");
  }
}

ExperimentConfig load_config_text(const std::string& text) {
  const ConfigText parsed = parse_config_text(text);
  ExperimentConfig cfg;
  const auto& table = setters();
  for (const auto& [key, value] : parsed.values) {
    const std::size_t line = parsed.lines.at(key);
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config line " + std::to_string(line) + ": unknown key " + key);
    it->second(cfg, key, line, value);
  }
  if (parsed.values.count("dataset.size")) cfg.arch.side = cfg.dataset.size;
  cfg.hash = config_hash(parsed);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError(path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return load_config_text(buf.str());
}

TaskStream build_stream(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto& ds = cfg.dataset;
  if (ds.source == DatasetSource::Glyphs) {
    const auto data = generate_glyphs(ds.classes, ds.samples_per_class, ds.size, ds.noise, ds.seed);
    return make_task_stream(data, cfg.stream, seed);
  }
  for (const auto& p : {ds.train_images, ds.train_labels, ds.test_images, ds.test_labels}) {
    if (!p.empty() && !std::filesystem::exists(p)) throw MissingFileError(p);
  }
  const auto train = load_idx(ds.train_images, ds.train_labels);
  if (train.height != cfg.arch.side || train.channels != cfg.arch.channels) {
    throw ConfigError("idx images are " + std::to_string(train.height) + "x" + std::to_string(train.width) +
                      " but model input side is " + std::to_string(cfg.arch.side) + " (set dataset.size)");
  }
  if (ds.test_images.empty()) return make_task_stream(train, cfg.stream, seed);
  return make_task_stream(train, load_idx(ds.test_images, ds.test_labels), cfg.stream, seed);
}

}  // namespace cilf::harness
