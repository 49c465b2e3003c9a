#pragma once

// Declarative description of one tandem run, its text form, and validation.
//
// The text form is INI-like: `[section]` headers followed by `key = value`
// lines, or equivalently flat `section.key = value` lines. `#` and `;` start
// comments. The manifest written by a run uses the flat form for every field,
// so it can be fed back as a config.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tandem/agent.hpp"
#include "tandem/env.hpp"
#include "tandem/error.hpp"
#include "tandem/metrics.hpp"
#include "tandem/neural.hpp"

namespace tandem {

enum class ModeKind {
  vanilla,
  bootstrap_variant,
  eps_sweep,
  sticky,
  replay_size,
  fork_fixed_policy,
  fork_fixed_replay,
  groundhog,
  self_data_mix,
  update_ratio,
  sarsa_eval,
  mc_eval,
  distill,
  tied_layers,
  arch_sweep,
  optimizer_choice
};

inline constexpr std::pair<ModeKind, std::string_view> kModeNames[] = {
    {ModeKind::vanilla, "vanilla"},
    {ModeKind::bootstrap_variant, "bootstrap_variant"},
    {ModeKind::eps_sweep, "eps_sweep"},
    {ModeKind::sticky, "sticky"},
    {ModeKind::replay_size, "replay_size"},
    {ModeKind::fork_fixed_policy, "fork_fixed_policy"},
    {ModeKind::fork_fixed_replay, "fork_fixed_replay"},
    {ModeKind::groundhog, "groundhog"},
    {ModeKind::self_data_mix, "self_data_mix"},
    {ModeKind::update_ratio, "update_ratio"},
    {ModeKind::sarsa_eval, "sarsa_eval"},
    {ModeKind::mc_eval, "mc_eval"},
    {ModeKind::distill, "distill"},
    {ModeKind::tied_layers, "tied_layers"},
    {ModeKind::arch_sweep, "arch_sweep"},
    {ModeKind::optimizer_choice, "optimizer_choice"},
};

inline std::string_view to_string(ModeKind k) {
  for (const auto& [kind, name] : kModeNames) {
    if (kind == k) return name;
  }
  return "?";
}

inline std::optional<ModeKind> parse_mode_kind(std::string_view s) {
  for (const auto& [kind, name] : kModeNames) {
    if (name == s) return kind;
  }
  return std::nullopt;
}

/// Protocol selector plus the parameters of every protocol. Only the
/// parameters of the selected kind take effect.
struct ExperimentMode {
  ModeKind kind = ModeKind::vanilla;
  TargetVariant variant = TargetVariant::vanilla;  // bootstrap_variant
  double epsilon = 0.1;                            // eps_sweep: active training epsilon
  double sticky = kDefaultStickyProbability;       // sticky
  long passive_capacity = 50'000;                  // replay_size
  int fork_iter = 50;                              // fork_*, groundhog, sarsa_eval, mc_eval
  std::optional<double> fork_epsilon;              // post-fork behaviour epsilon; unset = training epsilon
  double p_self = 0.5;                             // self_data_mix
  int n_passive = 1;                               // update_ratio
  bool fresh_init = false;                         // mc_eval
  int k = 0;                                       // tied_layers
  int depth = 2;                                   // arch_sweep
  int width = 32;                                  // arch_sweep
  OptimizerKind optimizer = OptimizerKind::adam;   // optimizer_choice

  bool is_forked() const {
    switch (kind) {
      case ModeKind::fork_fixed_policy:
      case ModeKind::fork_fixed_replay:
      case ModeKind::groundhog:
      case ModeKind::sarsa_eval:
      case ModeKind::mc_eval:
        return true;
      default:
        return false;
    }
  }

  /// Learning rule of the passive agent.
  TargetVariant passive_variant() const {
    switch (kind) {
      case ModeKind::bootstrap_variant: return variant;
      case ModeKind::sarsa_eval: return TargetVariant::sarsa;
      case ModeKind::mc_eval: return TargetVariant::monte_carlo;
      case ModeKind::distill: return TargetVariant::distill;
      default: return TargetVariant::vanilla;
    }
  }
};

struct ExperimentConfig {
  // [env]
  std::string env = "cartpole";
  double sticky = 0.0;
  // [network]
  int hidden_layers = 2;
  int hidden_units = 32;  // 512 in the reference setup; see README
  // [optimizer]
  OptimizerSettings optimizer = OptimizerSettings::adam_defaults(1e-3);
  // [agent]
  double gamma = 0.99;
  EpsilonSchedule epsilon{};
  // [replay]
  long active_capacity = 50'000;
  long passive_capacity = 50'000;
  // [schedule]
  int iterations = 200;
  int steps_per_iteration = 2'500;
  int update_period = 4;
  int target_sync_period = 100;
  int batch_size = 64;
  int eval_steps = 2'000;
  int min_replay = 500;
  // [metrics]
  int n_probe = 512;
  OverestimationKind overestimation = OverestimationKind::max_vs_max;
  bool wall_clock = false;
  // [mode]
  ExperimentMode mode{};
  // [run]
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string format_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a real number, got '" + v + "'", key);
}

inline long long to_integer(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'", key);
}

inline std::uint64_t to_unsigned(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v.front() != '-') {
      const unsigned long long x = std::stoull(v, &used);
      if (used == v.size()) return x;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'", key);
}

inline int to_int(const std::string& key, const std::string& v) {
  const long long x = to_integer(key, v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError(key + ": value out of range", key);
  }
  return static_cast<int>(x);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'", key);
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field int_field(std::string key, T ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
          [key, member](ExperimentConfig& c, const std::string& v) {
            c.*member = static_cast<T>(to_integer(key, v));
          }};
}

template <typename Projection>
Field real_field(std::string key, Projection proj) {
  return {key, [proj](const ExperimentConfig& c) { return format_exact(proj(c)); },
          [key, proj](ExperimentConfig& c, const std::string& v) { proj(c) = to_double(key, v); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"env.name", [](const ExperimentConfig& c) { return c.env; },
                 [](ExperimentConfig& c, const std::string& v) { c.env = v; }});
    f.push_back(real_field("env.sticky", [](auto& c) -> auto& { return c.sticky; }));

    f.push_back(int_field("network.hidden_layers", &ExperimentConfig::hidden_layers));
    f.push_back(int_field("network.hidden_units", &ExperimentConfig::hidden_units));

    f.push_back({"optimizer.algorithm",
                 [](const ExperimentConfig& c) { return to_string(c.optimizer.kind); },
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "adam") {
                     c.optimizer.kind = OptimizerKind::adam;
                   } else if (v == "rmsprop") {
                     c.optimizer.kind = OptimizerKind::rmsprop;
                   } else {
                     throw ConfigError("optimizer.algorithm: expected adam or rmsprop", "optimizer.algorithm");
                   }
                 }});
    f.push_back(real_field("optimizer.learning_rate",
                           [](auto& c) -> auto& { return c.optimizer.learning_rate; }));
    f.push_back(real_field("optimizer.rho", [](auto& c) -> auto& { return c.optimizer.rho; }));
    f.push_back(real_field("optimizer.beta1", [](auto& c) -> auto& { return c.optimizer.beta1; }));
    f.push_back(real_field("optimizer.beta2", [](auto& c) -> auto& { return c.optimizer.beta2; }));
    f.push_back(real_field("optimizer.epsilon", [](auto& c) -> auto& { return c.optimizer.epsilon; }));

    f.push_back(real_field("agent.gamma", [](auto& c) -> auto& { return c.gamma; }));
    f.push_back(real_field("agent.epsilon_train", [](auto& c) -> auto& { return c.epsilon.train; }));
    f.push_back(real_field("agent.epsilon_eval", [](auto& c) -> auto& { return c.epsilon.eval; }));
    f.push_back(real_field("agent.epsilon_start", [](auto& c) -> auto& { return c.epsilon.start; }));
    f.push_back({"agent.epsilon_warmup_steps",
                 [](const ExperimentConfig& c) { return std::to_string(c.epsilon.warmup_steps); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.epsilon.warmup_steps = static_cast<long>(to_integer("agent.epsilon_warmup_steps", v));
                 }});

    f.push_back(int_field("replay.active_capacity", &ExperimentConfig::active_capacity));
    f.push_back(int_field("replay.passive_capacity", &ExperimentConfig::passive_capacity));

    f.push_back(int_field("schedule.iterations", &ExperimentConfig::iterations));
    f.push_back(int_field("schedule.steps_per_iteration", &ExperimentConfig::steps_per_iteration));
    f.push_back(int_field("schedule.update_period", &ExperimentConfig::update_period));
    f.push_back(int_field("schedule.target_sync_period", &ExperimentConfig::target_sync_period));
    f.push_back(int_field("schedule.batch_size", &ExperimentConfig::batch_size));
    f.push_back(int_field("schedule.eval_steps", &ExperimentConfig::eval_steps));
    f.push_back(int_field("schedule.min_replay", &ExperimentConfig::min_replay));

    f.push_back(int_field("metrics.n_probe", &ExperimentConfig::n_probe));
    f.push_back({"metrics.overestimation",
                 [](const ExperimentConfig& c) { return std::string(to_string(c.overestimation)); },
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "max_vs_max") {
                     c.overestimation = OverestimationKind::max_vs_max;
                   } else if (v == "active_argmax") {
                     c.overestimation = OverestimationKind::active_argmax;
                   } else {
                     throw ConfigError("metrics.overestimation: expected max_vs_max or active_argmax",
                                       "metrics.overestimation");
                   }
                 }});
    f.push_back({"metrics.wall_clock", [](const ExperimentConfig& c) { return std::string(c.wall_clock ? "true" : "false"); },
                 [](ExperimentConfig& c, const std::string& v) { c.wall_clock = to_bool("metrics.wall_clock", v); }});

    f.push_back({"mode.type", [](const ExperimentConfig& c) { return std::string(to_string(c.mode.kind)); },
                 [](ExperimentConfig& c, const std::string& v) {
                   const auto k = parse_mode_kind(v);
                   if (!k) throw ConfigError("mode.type: unknown mode '" + v + "'", "mode.type");
                   c.mode.kind = *k;
                 }});
    f.push_back({"mode.variant", [](const ExperimentConfig& c) { return std::string(to_string(c.mode.variant)); },
                 [](ExperimentConfig& c, const std::string& v) {
                   const auto t = parse_target_variant(v);
                   if (!t) throw ConfigError("mode.variant: unknown target variant '" + v + "'", "mode.variant");
                   c.mode.variant = *t;
                 }});
    f.push_back(real_field("mode.epsilon", [](auto& c) -> auto& { return c.mode.epsilon; }));
    f.push_back(real_field("mode.sticky", [](auto& c) -> auto& { return c.mode.sticky; }));
    f.push_back({"mode.passive_capacity",
                 [](const ExperimentConfig& c) { return std::to_string(c.mode.passive_capacity); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.mode.passive_capacity = static_cast<long>(to_integer("mode.passive_capacity", v));
                 }});
    f.push_back({"mode.fork_iter", [](const ExperimentConfig& c) { return std::to_string(c.mode.fork_iter); },
                 [](ExperimentConfig& c, const std::string& v) { c.mode.fork_iter = to_int("mode.fork_iter", v); }});
    f.push_back({"mode.fork_epsilon",
                 [](const ExperimentConfig& c) {
                   return c.mode.fork_epsilon ? format_exact(*c.mode.fork_epsilon) : std::string("train");
                 },
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "train") {
                     c.mode.fork_epsilon.reset();
                   } else {
                     c.mode.fork_epsilon = to_double("mode.fork_epsilon", v);
                   }
                 }});
    f.push_back(real_field("mode.p_self", [](auto& c) -> auto& { return c.mode.p_self; }));
    f.push_back({"mode.n_passive", [](const ExperimentConfig& c) { return std::to_string(c.mode.n_passive); },
                 [](ExperimentConfig& c, const std::string& v) { c.mode.n_passive = to_int("mode.n_passive", v); }});
    f.push_back({"mode.fresh_init", [](const ExperimentConfig& c) { return std::string(c.mode.fresh_init ? "true" : "false"); },
                 [](ExperimentConfig& c, const std::string& v) { c.mode.fresh_init = to_bool("mode.fresh_init", v); }});
    f.push_back({"mode.k", [](const ExperimentConfig& c) { return std::to_string(c.mode.k); },
                 [](ExperimentConfig& c, const std::string& v) { c.mode.k = to_int("mode.k", v); }});
    f.push_back({"mode.depth", [](const ExperimentConfig& c) { return std::to_string(c.mode.depth); },
                 [](ExperimentConfig& c, const std::string& v) { c.mode.depth = to_int("mode.depth", v); }});
    f.push_back({"mode.width", [](const ExperimentConfig& c) { return std::to_string(c.mode.width); },
                 [](ExperimentConfig& c, const std::string& v) { c.mode.width = to_int("mode.width", v); }});
    f.push_back({"mode.optimizer", [](const ExperimentConfig& c) { return to_string(c.mode.optimizer); },
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v == "adam") {
                     c.mode.optimizer = OptimizerKind::adam;
                   } else if (v == "rmsprop") {
                     c.mode.optimizer = OptimizerKind::rmsprop;
                   } else {
                     throw ConfigError("mode.optimizer: expected adam or rmsprop", "mode.optimizer");
                   }
                 }});

    f.push_back({"run.seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
                 [](ExperimentConfig& c, const std::string& v) { c.seed = to_unsigned("run.seed", v); }});
    return f;
  }();
  return table;
}

inline const Field* find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace detail

/// All recognised flat keys, in manifest order.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : detail::fields()) keys.push_back(f.key);
  return keys;
}

/// Sets one flat key. Unknown keys are rejected.
inline void set_config_value(ExperimentConfig& config, std::string_view key, const std::string& value) {
  const auto* field = detail::find_field(key);
  if (!field) throw ConfigError("unknown config key '" + std::string(key) + "'", std::string(key));
  field->set(config, value);
}

inline std::string get_config_value(const ExperimentConfig& config, std::string_view key) {
  const auto* field = detail::find_field(key);
  if (!field) throw ConfigError("unknown config key '" + std::string(key) + "'", std::string(key));
  return field->get(config);
}

/// Applies `key=value` text (as given to --override).
inline void apply_override(ExperimentConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  set_config_value(config, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// Parses INI text into `config` (on top of its current values). Does not
/// validate; call validate_config afterwards.
inline void parse_config_into(ExperimentConfig& config, std::istream& is) {
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    const std::string text = detail::trim(line);
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(std::string_view(text).substr(1, text.size() - 2));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = detail::trim(std::string_view(text).substr(0, eq));
    const std::string value = detail::trim(std::string_view(text).substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    set_config_value(config, key, value);
  }
}

inline ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig config;
  parse_config_into(config, is);
  return config;
}

inline ExperimentConfig parse_config(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path);
  return parse_config(is);
}

/// Flat `key = value` listing of every field, resolved defaults included.
inline std::string config_manifest(const ExperimentConfig& config) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

/// Settings after applying the mode's overrides.
struct ResolvedConfig {
  ExperimentConfig config;
  EnvSpec env_spec;
  StickyConfig sticky;
  NetworkConfig network;
  OptimizerSettings optimizer;
  EpsilonSchedule epsilon;
  int layer_count = 0;
};

inline ResolvedConfig resolve_config(const ExperimentConfig& c) {
  ResolvedConfig r;
  r.config = c;
  r.env_spec = env_spec(c.env);
  r.sticky = {c.mode.kind == ModeKind::sticky ? c.mode.sticky : c.sticky};
  r.network.input_dim = r.env_spec.obs_dim;
  r.network.output_dim = r.env_spec.num_actions;
  r.network.hidden_layers = c.mode.kind == ModeKind::arch_sweep ? c.mode.depth : c.hidden_layers;
  r.network.hidden_units = c.mode.kind == ModeKind::arch_sweep ? c.mode.width : c.hidden_units;
  r.optimizer = c.optimizer;
  if (c.mode.kind == ModeKind::optimizer_choice && c.mode.optimizer != c.optimizer.kind) {
    // Switching algorithm also switches to that algorithm's stabilizer default.
    const double lr = c.optimizer.learning_rate;
    r.optimizer = c.mode.optimizer == OptimizerKind::adam ? OptimizerSettings::adam_defaults(lr)
                                                          : OptimizerSettings::rmsprop_defaults(lr);
  }
  r.epsilon = c.epsilon;
  if (c.mode.kind == ModeKind::eps_sweep) r.epsilon.train = c.mode.epsilon;
  r.layer_count = r.network.hidden_layers + 1;
  return r;
}

/// Throws ConfigError naming the first offending key.
inline ResolvedConfig validate_config(const ExperimentConfig& c) {
  auto require = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key + ": " + what, key);
  };
  auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };

  bool known_env = false;
  for (const auto& n : env_names()) known_env = known_env || n == c.env;
  require(known_env, "env.name", "unknown environment '" + c.env + "'");
  require(unit(c.sticky), "env.sticky", "must lie in [0, 1]");
  require(c.hidden_layers >= 0, "network.hidden_layers", "must be >= 0");
  require(c.hidden_units >= 1, "network.hidden_units", "must be >= 1");
  require(c.optimizer.learning_rate > 0.0, "optimizer.learning_rate", "must be positive");
  require(c.optimizer.rho >= 0.0 && c.optimizer.rho < 1.0, "optimizer.rho", "must lie in [0, 1)");
  require(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0, "optimizer.beta1", "must lie in [0, 1)");
  require(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0, "optimizer.beta2", "must lie in [0, 1)");
  require(c.optimizer.epsilon >= 0.0, "optimizer.epsilon", "must be >= 0");
  require(c.gamma >= 0.0 && c.gamma < 1.0, "agent.gamma", "must lie in [0, 1)");
  require(unit(c.epsilon.train), "agent.epsilon_train", "must lie in [0, 1]");
  require(unit(c.epsilon.eval), "agent.epsilon_eval", "must lie in [0, 1]");
  require(unit(c.epsilon.start), "agent.epsilon_start", "must lie in [0, 1]");
  require(c.epsilon.warmup_steps >= 0, "agent.epsilon_warmup_steps", "must be >= 0");
  require(c.active_capacity >= 1, "replay.active_capacity", "must be positive");
  require(c.passive_capacity >= 1, "replay.passive_capacity", "must be positive");
  require(c.iterations >= 1, "schedule.iterations", "must be positive");
  require(c.steps_per_iteration >= 1, "schedule.steps_per_iteration", "must be positive");
  require(c.update_period >= 1, "schedule.update_period", "must be positive");
  require(c.target_sync_period >= 1, "schedule.target_sync_period", "must be positive");
  require(c.batch_size >= 1, "schedule.batch_size", "must be positive");
  require(c.batch_size <= c.active_capacity, "schedule.batch_size", "must not exceed replay.active_capacity");
  require(c.eval_steps >= 1, "schedule.eval_steps", "must be positive");
  require(c.min_replay >= 1, "schedule.min_replay", "must be positive");
  require(c.n_probe >= 1, "metrics.n_probe", "must be positive");

  const ExperimentMode& m = c.mode;
  if (m.is_forked()) {
    require(m.fork_iter >= 1 && m.fork_iter < c.iterations, "mode.fork_iter",
            "must satisfy 1 <= fork_iter < schedule.iterations");
    if (m.fork_epsilon) require(unit(*m.fork_epsilon), "mode.fork_epsilon", "must lie in [0, 1]");
  }
  switch (m.kind) {
    case ModeKind::eps_sweep: require(unit(m.epsilon), "mode.epsilon", "must lie in [0, 1]"); break;
    case ModeKind::sticky: require(unit(m.sticky), "mode.sticky", "must lie in [0, 1]"); break;
    case ModeKind::replay_size: require(m.passive_capacity >= 1, "mode.passive_capacity", "must be positive"); break;
    case ModeKind::self_data_mix: require(unit(m.p_self), "mode.p_self", "must lie in [0, 1]"); break;
    case ModeKind::update_ratio: require(m.n_passive >= 1, "mode.n_passive", "must be >= 1"); break;
    case ModeKind::arch_sweep:
      require(m.depth >= 0, "mode.depth", "must be >= 0");
      require(m.width >= 1, "mode.width", "must be >= 1");
      break;
    case ModeKind::bootstrap_variant:
      require(m.variant != TargetVariant::monte_carlo && m.variant != TargetVariant::sarsa,
              "mode.variant", "sarsa and monte_carlo targets need on-policy data; use sarsa_eval or mc_eval");
      break;
    default: break;
  }
  const ResolvedConfig r = resolve_config(c);
  if (m.kind == ModeKind::tied_layers) {
    require(m.k >= 0 && m.k <= r.layer_count, "mode.k",
            "k must lie in [0, " + std::to_string(r.layer_count) + "] for a " +
                std::to_string(r.layer_count) + "-layer network");
  }
  return r;
}

}  // namespace tandem
