#include "miq3d/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "miq3d/errors.hpp"
#include "miq3d/rng.hpp"

namespace miq3d {

namespace pt = boost::property_tree;

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  data.synth.validate();
  if (data.synth.shape != model.encoder.volume_shape)
    throw ConfigError("data shape must equal encoder volume_shape");
  // The single-query ablation is supervised with the prompted instance only.
  if (!model.disable_pciqg_cqrd && model.num_queries < data.synth.max_instances)
    throw ConfigError("num_queries must be at least max_instances so every instance can be matched");
  const auto& o = optimizer;
  if (!(o.lr > 0)) throw ConfigError("optimizer lr must be positive");
  if (!(o.beta1 >= 0 && o.beta1 < 1) || !(o.beta2 >= 0 && o.beta2 < 1))
    throw ConfigError("optimizer betas must lie in [0, 1)");
  if (!(o.eps > 0)) throw ConfigError("optimizer eps must be positive");
  if (o.grad_clip < 0) throw ConfigError("grad_clip must be nonnegative");
  if (o.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (data.train_count == 0) throw ConfigError("train_count must be >= 1");
}

namespace {

// Binds every INI key to a field once, for both reading and writing.
class Schema {
 public:
  using Getter = std::function<std::string()>;
  using Setter = std::function<void(const std::string&)>;

  void bind(const std::string& section, const std::string& key, Getter get, Setter set) {
    entries_.push_back({section, key, std::move(get), std::move(set)});
  }

  std::string write() const {
    std::string out;
    std::string current;
    for (const auto& e : entries_) {
      if (e.section != current) {
        if (!current.empty()) out += '\n';
        out += "[" + e.section + "]\n";
        current = e.section;
      }
      out += e.key + " = " + e.get() + "\n";
    }
    return out;
  }

  void read(const pt::ptree& tree) {
    std::map<std::string, const Entry*> lookup;
    std::set<std::string> sections;
    for (const auto& e : entries_) {
      lookup[e.section + "." + e.key] = &e;
      sections.insert(e.section);
    }
    for (const auto& [section, body] : tree) {
      if (!sections.count(section)) throw ConfigError("unknown config section [" + section + "]");
      for (const auto& [key, value] : body) {
        const auto it = lookup.find(section + "." + key);
        if (it == lookup.end()) throw ConfigError("unknown config key " + section + "." + key);
        try {
          it->second->set(value.get_value<std::string>());
        } catch (const ConfigError&) {
          throw;
        } catch (const std::exception&) {
          throw ConfigError("bad value for " + section + "." + key + ": '" +
                            value.get_value<std::string>() + "'");
        }
      }
    }
  }

 private:
  struct Entry {
    std::string section, key;
    Getter get;
    Setter set;
  };
  std::vector<Entry> entries_;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::size_t parse_size(const std::string& s) {
  const auto t = trim(s);
  std::size_t pos = 0;
  if (t.empty() || t[0] == '-') throw ConfigError("expected a nonnegative integer, got '" + s + "'");
  const auto v = std::stoull(t, &pos);
  if (pos != t.size()) throw ConfigError("expected an integer, got '" + s + "'");
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& s) {
  const auto t = trim(s);
  std::size_t pos = 0;
  const double v = std::stod(t, &pos);
  if (pos != t.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s) {
  const auto t = trim(s);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError("expected a boolean, got '" + s + "'");
}

std::vector<std::size_t> parse_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(item));
  return out;
}

Extent3 parse_extent(const std::string& s) {
  const auto v = parse_list(s);
  if (v.size() != 3) throw ConfigError("expected three comma-separated extents, got '" + s + "'");
  return {v[0], v[1], v[2]};
}

std::string fmt_list(const std::vector<std::size_t>& v) { return fmt::format("{}", fmt::join(v, ",")); }
std::string fmt_extent(const Extent3& e) { return fmt::format("{},{},{}", e[0], e[1], e[2]); }
// Shortest representation that parses back to the same double.
std::string fmt_real(double v) { return fmt::format("{}", v); }
std::string fmt_bool(bool v) { return v ? "true" : "false"; }

Schema make_schema(RunConfig& c) {
  Schema s;
  auto size_field = [&](const char* sec, const char* key, std::size_t& f) {
    s.bind(sec, key, [&f] { return std::to_string(f); }, [&f](const std::string& v) { f = parse_size(v); });
  };
  auto seed_field = [&](const char* sec, const char* key, std::uint64_t& f) {
    s.bind(sec, key, [&f] { return std::to_string(f); },
           [&f](const std::string& v) { f = static_cast<std::uint64_t>(parse_size(v)); });
  };
  auto real_field = [&](const char* sec, const char* key, double& f) {
    s.bind(sec, key, [&f] { return fmt_real(f); }, [&f](const std::string& v) { f = parse_real(v); });
  };
  auto bool_field = [&](const char* sec, const char* key, bool& f) {
    s.bind(sec, key, [&f] { return fmt_bool(f); }, [&f](const std::string& v) { f = parse_bool(v); });
  };
  auto extent_field = [&](const char* sec, const char* key, Extent3& f) {
    s.bind(sec, key, [&f] { return fmt_extent(f); }, [&f](const std::string& v) { f = parse_extent(v); });
  };

  auto& m = c.model;
  size_field("model", "num_queries", m.num_queries);
  bool_field("model", "disable_pciqg_cqrd", m.disable_pciqg_cqrd);
  bool_field("model", "disable_cnn_branch", m.disable_cnn_branch);

  auto& e = m.encoder;
  extent_field("encoder", "volume_shape", e.volume_shape);
  size_field("encoder", "patch_size", e.patch_size);
  size_field("encoder", "embed_dim", e.embed_dim);
  size_field("encoder", "num_heads", e.num_heads);
  size_field("encoder", "num_vit_blocks", e.num_vit_blocks);
  s.bind("encoder", "cnn_channels", [&e] { return fmt_list(e.cnn_channels); },
         [&e](const std::string& v) { e.cnn_channels = parse_list(v); });
  size_field("encoder", "mlp_ratio", e.mlp_ratio);
  bool_field("encoder", "freeze_vit", e.freeze_vit);
  bool_field("encoder", "gating", e.gating);

  auto& d = m.decoder;
  size_field("decoder", "num_layers", d.num_layers);
  size_field("decoder", "num_heads", d.num_heads);
  size_field("decoder", "ffn_hidden", d.ffn_hidden);
  bool_field("decoder", "self_attention", d.self_attention);

  auto& l = c.loss;
  real_field("loss", "lambda_cls", l.lambda_cls);
  real_field("loss", "lambda_dice", l.lambda_dice);
  real_field("loss", "lambda_bce", l.lambda_bce);
  real_field("loss", "no_object_weight", l.no_object_weight);
  real_field("loss", "dice_eps", l.dice_eps);

  auto& o = c.optimizer;
  real_field("optimizer", "lr", o.lr);
  real_field("optimizer", "beta1", o.beta1);
  real_field("optimizer", "beta2", o.beta2);
  real_field("optimizer", "eps", o.eps);
  real_field("optimizer", "grad_clip", o.grad_clip);
  size_field("optimizer", "steps", o.steps);
  size_field("optimizer", "batch_size", o.batch_size);

  auto& dt = c.data;
  extent_field("data", "shape", dt.synth.shape);
  size_field("data", "max_instances", dt.synth.max_instances);
  real_field("data", "radius_min", dt.synth.radius_min);
  real_field("data", "radius_max", dt.synth.radius_max);
  real_field("data", "noise_sigma", dt.synth.noise_sigma);
  real_field("data", "blur_sigma", dt.synth.blur_sigma);
  real_field("data", "intensity_offset", dt.synth.intensity_offset);
  seed_field("data", "train_seed", dt.train_seed);
  size_field("data", "train_count", dt.train_count);
  seed_field("data", "val_seed", dt.val_seed);
  size_field("data", "val_count", dt.val_count);
  seed_field("data", "test_seed", dt.test_seed);
  size_field("data", "test_count", dt.test_count);

  seed_field("run", "rng_seed", c.rng_seed);
  size_field("run", "log_interval", c.log_interval);
  size_field("run", "val_interval", c.val_interval);
  s.bind("run", "checkpoint", [&c] { return c.checkpoint_path; },
         [&c](const std::string& v) { c.checkpoint_path = trim(v); });
  return s;
}

}  // namespace

RunConfig parse_run_config(const std::string& ini_text) {
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  make_schema(cfg).read(tree);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_ini(const RunConfig& cfg) {
  RunConfig copy = cfg;
  return make_schema(copy).write();
}

std::uint64_t init_seed(const RunConfig& cfg) { return mix_seed(cfg.rng_seed, 0x1417); }
std::uint64_t batch_seed(const RunConfig& cfg) { return mix_seed(cfg.rng_seed, 0xba7c); }
std::uint64_t prompt_seed(const RunConfig& cfg, std::size_t step, std::size_t slot) {
  return mix_seed(mix_seed(cfg.rng_seed, 0x9207), step * 1024 + slot);
}
std::uint64_t eval_prompt_seed(std::uint64_t volume_seed) { return mix_seed(volume_seed, 0xe7a1); }

}  // namespace miq3d
