#pragma once

#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "stmixer/hash.hpp"
#include "stmixer/optim.hpp"
#include "stmixer/synthdata.hpp"

namespace stmixer {

/// One flat key-value config fully determines a run: model dimensions,
/// strategy flags, dataset recipe, optimizer settings, seeds.
struct TrainConfig {
  // model
  int64_t d = 32;
  int64_t queries = 8;
  int64_t stages = 3;
  int64_t groups = 4;
  int64_t p_in = 8;
  int64_t p_out = 32;
  int64_t t_out = 32;
  int64_t heads = 4;
  std::string backbone = "hierarchical";  // hierarchical | plain
  std::string sampling = "adaptive";      // adaptive | fixed_grid
  std::string temporal = "copy";          // copy | move
  std::string mixing = "dual";            // dual | spatial_only | temporal_only | fixed_params
  int64_t grid = 7;                       // fixed-grid lattice side
  double threshold = 0.6;                 // human-score detection threshold

  // data
  GeneratorConfig data;
  int64_t clips = 16;       // dataset size (long phase: number of videos)
  uint64_t data_seed = 11;
  int64_t video_len = 1;    // clips per video; >= 2 enables the cross-clip class

  // training
  int64_t steps = 500;
  AdamWConfig optim{1e-3, 0.9, 0.999, 1e-8, 1e-4};
  uint64_t seed = 7;
  double lambda_cls = 2.0;
  double lambda_l1 = 2.0;
  double lambda_giou = 2.0;
  double lambda_act = 24.0;
  int64_t eval_every = 0;  // 0 disables periodic train-set mAP
  // One optimizer step accumulates this many clips. Single-clip steps make
  // the bipartite matching thrash between visits and the run never
  // converges; averaging half the desk dataset per step settles it.
  int64_t grad_accum = 8;
  std::string phase = "short";  // short | long

  // long-term classifier
  int64_t bank_k = 5;
  int64_t window = 60;
  int64_t ca_layers = 3;

  /// Points per frame actually sampled under the configured strategy.
  int64_t effective_p_in() const { return sampling == "fixed_grid" ? grid * grid : p_in; }

  void validate() const {
    auto positive = [](int64_t v, const char* name) {
      if (v <= 0) throw ConfigError(std::string("config: ") + name + " must be positive");
    };
    positive(d, "model.d");
    positive(queries, "model.queries");
    positive(stages, "model.stages");
    positive(groups, "model.groups");
    positive(p_in, "model.p_in");
    positive(p_out, "model.p_out");
    positive(t_out, "model.t_out");
    positive(heads, "model.heads");
    positive(grid, "model.grid");
    positive(steps, "train.steps");
    positive(grad_accum, "train.grad_accum");
    positive(clips, "data.clips");
    positive(bank_k, "long.k");
    if (d % groups != 0) throw ConfigError("config: model.d must divide into model.groups");
    if (d % heads != 0) throw ConfigError("config: model.d must divide into model.heads");
    if (backbone != "hierarchical" && backbone != "plain")
      throw ConfigError("config: bad model.backbone '" + backbone + "'");
    if (sampling != "adaptive" && sampling != "fixed_grid")
      throw ConfigError("config: bad model.sampling '" + sampling + "'");
    if (temporal != "copy" && temporal != "move")
      throw ConfigError("config: bad model.temporal '" + temporal + "'");
    if (mixing != "dual" && mixing != "spatial_only" && mixing != "temporal_only" &&
        mixing != "fixed_params")
      throw ConfigError("config: bad model.mixing '" + mixing + "'");
    if (phase != "short" && phase != "long")
      throw ConfigError("config: bad train.phase '" + phase + "'");
    if (phase == "long" && window < 2) throw ConfigError("config: long.window must be >= 2");
    if (phase == "long" && window % 2 != 0) throw ConfigError("config: long.window must be even");
    if (phase == "long" && video_len < 2)
      throw ConfigError("config: long phase needs data.video_len >= 2");
    if (data.t <= 0 || data.t % 2 != 0) throw ConfigError("config: data.frames must be even");
    if (data.height % 32 != 0 || data.width % 32 != 0)
      throw ConfigError("config: frame sizes must be divisible by 32");
    if (threshold < 0.0 || threshold > 1.0) throw ConfigError("config: bad model.threshold");
  }

  /// Desk-scale overfit preset. The paper-scale learning rate presumes
  /// pretrained backbones; training from scratch at this size needs the
  /// larger rate.
  static TrainConfig desk() { return TrainConfig{}; }

  /// Paper-scale network configuration and optimizer defaults, recorded as
  /// a preset (not runnable at desk scale).
  static TrainConfig paper_scale() {
    TrainConfig c;
    c.d = 256;
    c.queries = 100;
    c.stages = 6;
    c.groups = 4;
    c.p_in = 32;
    c.p_out = 128;   // 4 x p_in
    c.t_out = 32;    // 4 x 8 slow-pathway frames
    c.grid = 7;      // 49-point fixed-grid baseline
    c.threshold = 0.6;
    c.optim.lr = 2.0e-5;
    c.optim.weight_decay = 1.0e-4;
    c.lambda_cls = 2.0;
    c.lambda_l1 = 2.0;
    c.lambda_giou = 2.0;
    c.lambda_act = 24.0;
    c.bank_k = 5;
    c.window = 60;
    c.ca_layers = 3;
    return c;
  }
};

namespace detail {

struct ConfigField {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

inline int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline const std::map<std::string, ConfigField>& config_schema() {
  static const std::map<std::string, ConfigField> schema = [] {
    std::map<std::string, ConfigField> m;
    auto add_i = [&m](const std::string& key, int64_t TrainConfig::*field) {
      m[key] = ConfigField{[field](const TrainConfig& c) { return std::to_string(c.*field); },
                           [field, key](TrainConfig& c, const std::string& v) {
                             c.*field = parse_int(key, v);
                           }};
    };
    auto add_d = [&m](const std::string& key, double TrainConfig::*field) {
      m[key] = ConfigField{[field](const TrainConfig& c) { return fmt_double(c.*field); },
                           [field, key](TrainConfig& c, const std::string& v) {
                             c.*field = parse_double(key, v);
                           }};
    };
    auto add_s = [&m](const std::string& key, std::string TrainConfig::*field) {
      m[key] = ConfigField{[field](const TrainConfig& c) { return c.*field; },
                           [field](TrainConfig& c, const std::string& v) { c.*field = v; }};
    };
    add_i("model.d", &TrainConfig::d);
    add_i("model.queries", &TrainConfig::queries);
    add_i("model.stages", &TrainConfig::stages);
    add_i("model.groups", &TrainConfig::groups);
    add_i("model.p_in", &TrainConfig::p_in);
    add_i("model.p_out", &TrainConfig::p_out);
    add_i("model.t_out", &TrainConfig::t_out);
    add_i("model.heads", &TrainConfig::heads);
    add_s("model.backbone", &TrainConfig::backbone);
    add_s("model.sampling", &TrainConfig::sampling);
    add_s("model.temporal", &TrainConfig::temporal);
    add_s("model.mixing", &TrainConfig::mixing);
    add_i("model.grid", &TrainConfig::grid);
    add_d("model.threshold", &TrainConfig::threshold);
    add_i("train.steps", &TrainConfig::steps);
    add_d("train.lambda_cls", &TrainConfig::lambda_cls);
    add_d("train.lambda_l1", &TrainConfig::lambda_l1);
    add_d("train.lambda_giou", &TrainConfig::lambda_giou);
    add_d("train.lambda_act", &TrainConfig::lambda_act);
    add_i("train.eval_every", &TrainConfig::eval_every);
    add_i("train.grad_accum", &TrainConfig::grad_accum);
    add_s("train.phase", &TrainConfig::phase);
    add_i("data.clips", &TrainConfig::clips);
    add_i("data.video_len", &TrainConfig::video_len);
    add_i("long.k", &TrainConfig::bank_k);
    add_i("long.window", &TrainConfig::window);
    add_i("long.ca_layers", &TrainConfig::ca_layers);
    // nested structs
    m["train.lr"] = ConfigField{[](const TrainConfig& c) { return fmt_double(c.optim.lr); },
                                [](TrainConfig& c, const std::string& v) {
                                  c.optim.lr = parse_double("train.lr", v);
                                }};
    m["train.weight_decay"] =
        ConfigField{[](const TrainConfig& c) { return fmt_double(c.optim.weight_decay); },
                    [](TrainConfig& c, const std::string& v) {
                      c.optim.weight_decay = parse_double("train.weight_decay", v);
                    }};
    m["train.beta1"] = ConfigField{[](const TrainConfig& c) { return fmt_double(c.optim.beta1); },
                                   [](TrainConfig& c, const std::string& v) {
                                     c.optim.beta1 = parse_double("train.beta1", v);
                                   }};
    m["train.beta2"] = ConfigField{[](const TrainConfig& c) { return fmt_double(c.optim.beta2); },
                                   [](TrainConfig& c, const std::string& v) {
                                     c.optim.beta2 = parse_double("train.beta2", v);
                                   }};
    m["train.eps"] = ConfigField{[](const TrainConfig& c) { return fmt_double(c.optim.eps); },
                                 [](TrainConfig& c, const std::string& v) {
                                   c.optim.eps = parse_double("train.eps", v);
                                 }};
    m["train.seed"] = ConfigField{[](const TrainConfig& c) { return std::to_string(c.seed); },
                                  [](TrainConfig& c, const std::string& v) {
                                    c.seed = uint64_t(parse_int("train.seed", v));
                                  }};
    m["data.seed"] = ConfigField{[](const TrainConfig& c) { return std::to_string(c.data_seed); },
                                 [](TrainConfig& c, const std::string& v) {
                                   c.data_seed = uint64_t(parse_int("data.seed", v));
                                 }};
    m["data.frames"] = ConfigField{[](const TrainConfig& c) { return std::to_string(c.data.t); },
                                   [](TrainConfig& c, const std::string& v) {
                                     c.data.t = parse_int("data.frames", v);
                                   }};
    m["data.height"] = ConfigField{[](const TrainConfig& c) { return std::to_string(c.data.height); },
                                   [](TrainConfig& c, const std::string& v) {
                                     c.data.height = parse_int("data.height", v);
                                   }};
    m["data.width"] = ConfigField{[](const TrainConfig& c) { return std::to_string(c.data.width); },
                                  [](TrainConfig& c, const std::string& v) {
                                    c.data.width = parse_int("data.width", v);
                                  }};
    m["data.min_actors"] =
        ConfigField{[](const TrainConfig& c) { return std::to_string(c.data.min_actors); },
                    [](TrainConfig& c, const std::string& v) {
                      c.data.min_actors = int(parse_int("data.min_actors", v));
                    }};
    m["data.max_actors"] =
        ConfigField{[](const TrainConfig& c) { return std::to_string(c.data.max_actors); },
                    [](TrainConfig& c, const std::string& v) {
                      c.data.max_actors = int(parse_int("data.max_actors", v));
                    }};
    m["data.identity_pool"] =
        ConfigField{[](const TrainConfig& c) { return std::to_string(c.data.identity_pool); },
                    [](TrainConfig& c, const std::string& v) {
                      c.data.identity_pool = int(parse_int("data.identity_pool", v));
                    }};
    m["data.min_size"] =
        ConfigField{[](const TrainConfig& c) { return fmt_double(c.data.min_size); },
                    [](TrainConfig& c, const std::string& v) {
                      c.data.min_size = parse_double("data.min_size", v);
                    }};
    m["data.max_size"] =
        ConfigField{[](const TrainConfig& c) { return fmt_double(c.data.max_size); },
                    [](TrainConfig& c, const std::string& v) {
                      c.data.max_size = parse_double("data.max_size", v);
                    }};
    m["data.d_near_factor"] =
        ConfigField{[](const TrainConfig& c) { return fmt_double(c.data.d_near_factor); },
                    [](TrainConfig& c, const std::string& v) {
                      c.data.d_near_factor = parse_double("data.d_near_factor", v);
                    }};
    return m;
  }();
  return schema;
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Parses `key = value` lines; '#' starts a comment; unknown keys are
/// rejected so typos fail loudly.
inline TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    auto& schema = detail::config_schema();
    auto it = schema.find(key);
    if (it == schema.end())
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second.set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

/// Canonical serialization: every key in sorted order. Used for the
/// effective-config echo, checkpoint metadata, and hashing.
inline std::string serialize_config(const TrainConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, field] : detail::config_schema())
    os << key << " = " << field.get(cfg) << "\n";
  return os.str();
}

inline uint64_t config_hash(const TrainConfig& cfg) { return fnv1a64(serialize_config(cfg)); }

}  // namespace stmixer
