#include "arti/config.hpp"

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <sstream>

#include "arti/toml.hpp"

namespace arti {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", v);
  if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

struct Entry {
  std::string key;
  std::function<std::string()> get;
  std::function<void(const toml::Value&)> set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& want) {
  throw ConfigError("config key '" + key + "' expects " + want);
}

class Registry {
 public:
  explicit Registry(RunConfig* cfg) { bind(*cfg); }

  const std::vector<Entry>& entries() const { return entries_; }

  const Entry* find(std::string_view key) const {
    for (const Entry& e : entries_)
      if (e.key == key) return &e;
    return nullptr;
  }

 private:
  std::vector<Entry> entries_;

  void add_int(std::string key, int* p) {
    const std::string name = key;
    entries_.push_back({std::move(key), [p] { return std::to_string(*p); },
                        [p, name](const toml::Value& v) {
                          if (v.kind != toml::Value::Kind::Integer) bad_value(name, "an integer");
                          if (v.integer < std::numeric_limits<int>::min() ||
                              v.integer > std::numeric_limits<int>::max())
                            bad_value(name, "an integer in range");
                          *p = static_cast<int>(v.integer);
                        }});
  }

  void add_u64(std::string key, std::uint64_t* p) {
    const std::string name = key;
    entries_.push_back({std::move(key), [p] { return std::to_string(*p); },
                        [p, name](const toml::Value& v) {
                          if (v.kind != toml::Value::Kind::Integer || v.integer < 0)
                            bad_value(name, "a non-negative integer");
                          *p = static_cast<std::uint64_t>(v.integer);
                        }});
  }

  void add_double(std::string key, double* p) {
    const std::string name = key;
    entries_.push_back({std::move(key), [p] { return fmt_double(*p); },
                        [p, name](const toml::Value& v) {
                          if (!v.is_number()) bad_value(name, "a number");
                          *p = v.as_number();
                        }});
  }

  void add_bool(std::string key, bool* p) {
    const std::string name = key;
    entries_.push_back({std::move(key), [p] { return *p ? std::string("true") : std::string("false"); },
                        [p, name](const toml::Value& v) {
                          if (v.kind != toml::Value::Kind::Boolean) bad_value(name, "a boolean");
                          *p = v.boolean;
                        }});
  }

  void add_string(std::string key, std::string* p) {
    const std::string name = key;
    entries_.push_back({std::move(key), [p] { return quote(*p); },
                        [p, name](const toml::Value& v) {
                          if (v.kind != toml::Value::Kind::String) bad_value(name, "a string");
                          *p = v.str;
                        }});
  }

  void add_init_mode(std::string key, InitMode* p) {
    const std::string name = key;
    entries_.push_back({std::move(key),
                        [p] {
                          switch (*p) {
                            case InitMode::Part: return std::string("\"part\"");
                            case InitMode::Body: return std::string("\"body\"");
                            default: return std::string("\"all\"");
                          }
                        },
                        [p, name](const toml::Value& v) {
                          if (v.kind != toml::Value::Kind::String)
                            bad_value(name, "one of \"part\", \"body\", \"all\"");
                          if (v.str == "part") *p = InitMode::Part;
                          else if (v.str == "body") *p = InitMode::Body;
                          else if (v.str == "all") *p = InitMode::All;
                          else bad_value(name, "one of \"part\", \"body\", \"all\"");
                        }});
  }

  void bind(RunConfig& c) {
    add_int("threads", &c.threads);

    add_string("rig.preset", &c.rig.preset);
    add_string("rig.file", &c.rig.file);

    add_int("nets.hidden", &c.nets.hidden);
    add_int("nets.layers", &c.nets.layers);
    add_int("nets.pos_octaves", &c.nets.pos_octaves);
    add_int("nets.cond_octaves", &c.nets.cond_octaves);
    add_double("nets.cond_gain", &c.nets.cond_gain);
    add_u64("nets.seed", &c.net_seed);

    add_int("sampling.body", &c.train.budgets.body);
    add_int("sampling.left_hand", &c.train.budgets.left_hand);
    add_int("sampling.right_hand", &c.train.budgets.right_hand);
    add_int("sampling.face", &c.train.budgets.face);
    add_double("sampling.shell_body", &c.train.shells.body);
    add_double("sampling.shell_hand", &c.train.shells.hand);
    add_double("sampling.shell_face", &c.train.shells.face);
    add_int("sampling.bone_points", &c.train.reg.bone);
    add_int("sampling.surf_points", &c.train.reg.surf);
    add_bool("sampling.part_aware", &c.train.part_sampling);

    add_int("solver.max_iters", &c.train.solver.max_iters);
    add_double("solver.step_tol", &c.train.solver.step_tol);
    add_double("solver.valid_tol", &c.train.solver.valid_tol);
    add_double("solver.dedup_tol", &c.train.solver.dedup_tol);
    add_double("solver.damping", &c.train.solver.damping);

    add_double("loss.bce", &c.train.weights.bce);
    add_double("loss.normal", &c.train.weights.normal);
    add_double("loss.rgb", &c.train.weights.rgb);
    add_double("loss.bone", &c.train.weights.bone);
    add_double("loss.joint", &c.train.weights.joint);
    add_double("loss.surf", &c.train.weights.surf);

    add_int("train.steps", &c.train.steps);
    add_int("train.pretrain_steps", &c.train.pretrain_steps);
    add_int("train.pretrain_batch", &c.train.pretrain_batch);
    add_double("train.pretrain_jitter", &c.train.pretrain_jitter);
    add_double("train.lr", &c.train.adam.lr);
    add_double("train.beta1", &c.train.adam.beta1);
    add_double("train.beta2", &c.train.adam.beta2);
    add_double("train.eps", &c.train.adam.eps);
    add_double("train.pretrain_lr", &c.train.pretrain_adam.lr);
    add_init_mode("train.init", &c.train.init_mode);
    add_u64("train.seed", &c.train.seed);
    add_int("train.log_every", &c.train.log_every);
    add_int("train.checkpoint_every", &c.checkpoint_every);

    add_int("data.frames", &c.data.frames);
    add_int("data.test_frames", &c.data.test_frames);
    add_int("data.points", &c.data.points);
    add_int("data.gt_resolution", &c.data.gt_resolution);
    add_u64("data.seed", &c.data.seed);
    add_double("data.body_deg", &c.data.amp.body_deg);
    add_double("data.hand_deg", &c.data.amp.hand_deg);
    add_double("data.face_deg", &c.data.amp.face_deg);
    add_double("data.root_rot_deg", &c.data.amp.root_rot_deg);
    add_double("data.root_trans", &c.data.amp.root_trans);
    add_double("data.psi_amp", &c.data.amp.psi_amp);

    add_int("meshing.resolution", &c.meshing.resolution);
    add_double("meshing.level", &c.meshing.level);
    add_double("meshing.pad", &c.meshing.pad);

    add_int("eval.samples", &c.eval.samples);
    add_int("eval.iou_resolution", &c.eval.iou_resolution);
    add_u64("eval.seed", &c.eval.seed);
  }
};

void apply_document(RunConfig* cfg, const toml::Document& doc) {
  Registry reg(cfg);
  for (const toml::Section& sec : doc.sections) {
    if (sec.from_array)
      throw ConfigError("unexpected array of tables [[" + sec.name + "]] in run config");
    for (const auto& [key, value] : sec.table.kv) {
      const std::string full = sec.name.empty() ? key : sec.name + "." + key;
      const Entry* e = reg.find(full);
      if (!e) throw ConfigError("unknown config key '" + full + "'");
      e->set(value);
    }
  }
}

toml::Value parse_override_value(const std::string& text) {
  toml::Value v;
  if (text == "true" || text == "false") {
    v.kind = toml::Value::Kind::Boolean;
    v.boolean = text == "true";
    return v;
  }
  char* end = nullptr;
  const long long i = std::strtoll(text.c_str(), &end, 10);
  if (end && *end == '\0' && end != text.c_str()) {
    v.kind = toml::Value::Kind::Integer;
    v.integer = i;
    return v;
  }
  const double d = std::strtod(text.c_str(), &end);
  if (end && *end == '\0' && end != text.c_str()) {
    v.kind = toml::Value::Kind::Float;
    v.number = d;
    return v;
  }
  v.kind = toml::Value::Kind::String;
  v.str = text;
  if (v.str.size() >= 2 && v.str.front() == '"' && v.str.back() == '"')
    v.str = v.str.substr(1, v.str.size() - 2);
  return v;
}

void check_positive(long long v, const std::string& key) {
  if (v <= 0) throw ConfigError("config key '" + key + "' must be positive");
}

void check_nonneg(double v, const std::string& key) {
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
}

}  // namespace

void apply_config_text(RunConfig* cfg, std::string_view text) {
  toml::Document doc;
  try {
    doc = toml::parse(text);
  } catch (const toml::ParseError& e) {
    throw ConfigError(e.what());
  }
  apply_document(cfg, doc);
}

void apply_config_file(RunConfig* cfg, const std::string& path) {
  toml::Document doc;
  try {
    doc = toml::parse_file(path);
  } catch (const toml::ParseError& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  apply_document(cfg, doc);
}

void apply_override(RunConfig* cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
  Registry reg(cfg);
  const Entry* e = reg.find(key);
  if (!e) throw ConfigError("unknown config key '" + key + "'");
  e->set(parse_override_value(value));
}

void validate_config(const RunConfig& cfg) {
  check_positive(cfg.nets.hidden, "nets.hidden");
  check_positive(cfg.nets.layers, "nets.layers");
  if (cfg.nets.pos_octaves < 0) throw ConfigError("config key 'nets.pos_octaves' must be >= 0");
  if (cfg.nets.cond_octaves < 0) throw ConfigError("config key 'nets.cond_octaves' must be >= 0");
  if (cfg.nets.cond_gain < 0.0) throw ConfigError("config key 'nets.cond_gain' must be >= 0");
  check_positive(cfg.train.budgets.body, "sampling.body");
  if (cfg.train.budgets.left_hand < 0) throw ConfigError("config key 'sampling.left_hand' must be >= 0");
  if (cfg.train.budgets.right_hand < 0) throw ConfigError("config key 'sampling.right_hand' must be >= 0");
  if (cfg.train.budgets.face < 0) throw ConfigError("config key 'sampling.face' must be >= 0");
  check_nonneg(cfg.train.shells.body, "sampling.shell_body");
  check_nonneg(cfg.train.shells.hand, "sampling.shell_hand");
  check_nonneg(cfg.train.shells.face, "sampling.shell_face");
  check_positive(cfg.train.solver.max_iters, "solver.max_iters");
  check_nonneg(cfg.train.solver.valid_tol, "solver.valid_tol");
  if (cfg.train.steps < 0) throw ConfigError("config key 'train.steps' must be >= 0");
  if (cfg.train.pretrain_steps < 0)
    throw ConfigError("config key 'train.pretrain_steps' must be >= 0");
  if (cfg.train.adam.lr <= 0.0) throw ConfigError("config key 'train.lr' must be positive");
  if (cfg.train.pretrain_adam.lr <= 0.0)
    throw ConfigError("config key 'train.pretrain_lr' must be positive");
  check_positive(cfg.checkpoint_every, "train.checkpoint_every");
  check_positive(cfg.train.log_every, "train.log_every");
  check_positive(cfg.data.frames, "data.frames");
  if (cfg.data.test_frames < 0) throw ConfigError("config key 'data.test_frames' must be >= 0");
  check_positive(cfg.data.points, "data.points");
  if (cfg.data.gt_resolution < 2)
    throw ConfigError("config key 'data.gt_resolution' must be >= 2");
  if (cfg.meshing.resolution < 2)
    throw ConfigError("config key 'meshing.resolution' must be >= 2");
  if (cfg.meshing.level <= 0.0 || cfg.meshing.level >= 1.0)
    throw ConfigError("config key 'meshing.level' must lie in (0, 1)");
  check_nonneg(cfg.meshing.pad, "meshing.pad");
  check_positive(cfg.eval.samples, "eval.samples");
  if (cfg.eval.iou_resolution < 2)
    throw ConfigError("config key 'eval.iou_resolution' must be >= 2");
  if (cfg.threads < 0) throw ConfigError("config key 'threads' must be >= 0");
}

std::vector<std::pair<std::string, std::string>> config_keys(const RunConfig& cfg) {
  Registry reg(const_cast<RunConfig*>(&cfg));
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(reg.entries().size());
  for (const Entry& e : reg.entries()) out.emplace_back(e.key, e.get());
  return out;
}

std::string config_echo(const RunConfig& cfg) {
  std::ostringstream out;
  std::string section;
  bool first = true;
  for (const auto& [key, value] : config_keys(cfg)) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? std::string() : key.substr(0, dot);
    const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
    if (sec != section || first) {
      if (!first) out << "\n";
      if (!sec.empty()) out << "[" << sec << "]\n";
      section = sec;
      first = false;
    }
    out << leaf << " = " << value << "\n";
  }
  return out.str();
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = config_echo(cfg);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace arti
