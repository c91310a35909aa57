#pragma once

// Experiment driver behind the command-line tool: configuration parsing,
// pretraining, training, evaluation, self-checks and report aggregation.
//
// Configuration is flat `key = value` text. Keys are dotted by section
// (task.name, harness.actors, level0.lr, ...); a `[section]` line prefixes
// the keys that follow it. `#` starts a comment. Every recognised key is
// listed in config_keys(); anything else is rejected.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "env_sim.hpp"
#include "gesture_core.hpp"
#include "gesture_oracle.hpp"
#include "harness.hpp"
#include "hierarchy.hpp"
#include "param_io.hpp"
#include "value_backend.hpp"

namespace ghrl {

class config_error : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  TaskConfig task = default_task_config("catch");
  bool task_seed_set = false;
  HarnessConfig harness;
  std::vector<std::size_t> level0_hidden{256};
  std::size_t pretrain_budget = 200000;
  double pretrain_threshold = 0.9;
  bool pretrain_inline = false;
  std::size_t train_budget = 100000;
  std::size_t eval_episodes = 100;
  std::uint64_t eval_seed = 1;
  std::string level0_path;
  std::string model_path;
  std::string out_dir = "out";
  Program policy = Program::Hierarchy;
  std::string eval_policy = "hierarchy";
  // Canonical key/value view, used for the configuration hash.
  std::map<std::string, std::string> values;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw config_error(key + ": expected a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw config_error(key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw config_error(key + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size() || !std::isfinite(x)) throw config_error(key + ": expected a number, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw config_error(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto n = parse_u64(key, trim(item));
    if (n == 0) throw config_error(key + ": layer sizes must be >= 1");
    out.push_back(n);
  }
  if (out.empty()) throw config_error(key + ": expected a comma-separated list of layer sizes");
  return out;
}

inline double parse_probability(const std::string& key, const std::string& v) {
  const double p = parse_double(key, v);
  if (p < 0.0 || p > 1.0) throw config_error(key + ": must lie in [0, 1]");
  return p;
}

inline HarnessMode parse_mode(const std::string& key, const std::string& v) {
  if (v == "concurrent") return HarnessMode::Concurrent;
  if (v == "deterministic") return HarnessMode::Deterministic;
  throw config_error(key + ": expected concurrent or deterministic, got '" + v + "'");
}

inline Program parse_policy(const std::string& key, const std::string& v) {
  if (v == "hierarchy") return Program::Hierarchy;
  if (v == "flat") return Program::Flat;
  throw config_error(key + ": expected hierarchy or flat, got '" + v + "'");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

inline void add_learner_keys(std::map<std::string, Setter>& keys, const std::string& prefix,
                             std::function<LearnerConfig&(ExperimentConfig&)> pick) {
  keys[prefix + ".lr"] = [pick](ExperimentConfig& c, const std::string& k, const std::string& v) {
    pick(c).td.learning_rate = parse_double(k, v);
  };
  keys[prefix + ".batch_size"] = [pick](ExperimentConfig& c, const std::string& k, const std::string& v) {
    pick(c).td.batch_size = parse_u64(k, v);
  };
  keys[prefix + ".sync_period"] = [pick](ExperimentConfig& c, const std::string& k, const std::string& v) {
    pick(c).td.target_sync_period = parse_u64(k, v);
  };
  keys[prefix + ".epsilon_start"] = [pick](ExperimentConfig& c, const std::string& k, const std::string& v) {
    pick(c).td.epsilon_start = parse_probability(k, v);
  };
  keys[prefix + ".epsilon_end"] = [pick](ExperimentConfig& c, const std::string& k, const std::string& v) {
    pick(c).td.epsilon_end = parse_probability(k, v);
  };
  keys[prefix + ".epsilon_decay_steps"] = [pick](ExperimentConfig& c, const std::string& k, const std::string& v) {
    pick(c).td.epsilon_decay_steps = parse_u64(k, v);
  };
  keys[prefix + ".replay_capacity"] = [pick](ExperimentConfig& c, const std::string& k, const std::string& v) {
    pick(c).replay_capacity = parse_u64(k, v);
  };
  keys[prefix + ".updates_per_round"] = [pick](ExperimentConfig& c, const std::string& k, const std::string& v) {
    pick(c).updates_per_round = parse_u64(k, v);
  };
  keys[prefix + ".transitions_per_update"] = [pick](ExperimentConfig& c, const std::string& k,
                                                    const std::string& v) {
    pick(c).transitions_per_update = parse_u64(k, v);
  };
}

}  // namespace detail

// Every recognised configuration key and how it is applied.
inline const std::map<std::string, detail::Setter>& config_keys() {
  using namespace detail;
  static const std::map<std::string, Setter> keys = [] {
    std::map<std::string, Setter> k;
    k["seed"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) { c.seed = parse_u64(key, v); };
    k["task.name"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      const auto& d = find_task(v);
      c.task.name = v;
      c.task.geometry = d.default_geometry;
      c.task.episode_limit = d.episode_limit;
    };
    k["task.rows"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.task.geometry = GridGeometry(static_cast<int>(parse_u64(key, v)), c.task.geometry.cols);
    };
    k["task.cols"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.task.geometry = GridGeometry(c.task.geometry.rows, static_cast<int>(parse_u64(key, v)));
    };
    k["task.seed"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.task.seed = parse_u64(key, v);
      c.task_seed_set = true;
    };
    k["task.latency_ticks"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.task.latency_ticks = static_cast<int>(parse_u64(key, v));
    };
    k["task.episode_limit"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.task.episode_limit = static_cast<int>(parse_u64(key, v));
    };
    k["harness.actors"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.actors = parse_u64(key, v);
    };
    k["harness.mode"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.mode = parse_mode(key, v);
    };
    k["harness.queue_capacity"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.queue_capacity = parse_u64(key, v);
    };
    k["harness.fetch_period"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.fetch_period = parse_u64(key, v);
    };
    k["harness.publish_period"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.publish_period = parse_u64(key, v);
    };
    k["harness.loss_window"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.loss_window = parse_u64(key, v);
    };
    k["harness.pretrain_slice"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.pretrain_slice = parse_u64(key, v);
    };
    add_learner_keys(k, "level0", [](ExperimentConfig& c) -> LearnerConfig& { return c.harness.learners[0]; });
    add_learner_keys(k, "level1", [](ExperimentConfig& c) -> LearnerConfig& { return c.harness.learners[1]; });
    add_learner_keys(k, "flat", [](ExperimentConfig& c) -> LearnerConfig& { return c.harness.flat_learner; });
    k["level0.hidden"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.level0_hidden = parse_sizes(key, v);
    };
    k["level0.relabel_budget"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.acting.relabel_budget = parse_u64(key, v);
    };
    k["level0.gvf_discount"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.acting.gvf_discount = parse_probability(key, v);
    };
    k["level0.option_timeout"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.acting.option_timeout = parse_u64(key, v);
    };
    k["level0.return_horizon"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.acting.return_horizon = parse_u64(key, v);
    };
    k["level0.epsilon"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.acting.epsilon0 = parse_probability(key, v);
    };
    k["level0.learn_during_task"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.acting.collect_level0 = parse_bool(key, v);
    };
    k["level1.hidden"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.level1_hidden = parse_sizes(key, v);
    };
    k["level1.gamma_env"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.acting.gamma_env = parse_probability(key, v);
    };
    k["level2.epsilon"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.acting.epsilon2 = parse_probability(key, v);
    };
    k["level2.per_option"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.acting.class_per_option = parse_bool(key, v);
    };
    k["flat.hidden"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.harness.flat_hidden = parse_sizes(key, v);
    };
    k["pretrain.budget"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.pretrain_budget = parse_u64(key, v);
    };
    k["pretrain.threshold"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.pretrain_threshold = parse_probability(key, v);
    };
    k["pretrain.inline"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.pretrain_inline = parse_bool(key, v);
    };
    k["train.budget"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.train_budget = parse_u64(key, v);
    };
    k["train.policy"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.policy = parse_policy(key, v);
      c.eval_policy = v;
    };
    k["eval.episodes"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.eval_episodes = parse_u64(key, v);
    };
    k["eval.seed"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      c.eval_seed = parse_u64(key, v);
    };
    k["eval.policy"] = [](ExperimentConfig& c, const std::string& key, const std::string& v) {
      if (v != "random" && v != "flat" && v != "hierarchy")
        throw config_error(key + ": expected random, flat or hierarchy, got '" + v + "'");
      c.eval_policy = v;
    };
    k["eval.model"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.model_path = v; };
    k["level0.path"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.level0_path = v; };
    k["out"] = [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; };
    return k;
  }();
  return keys;
}

// Desk-scale defaults tuned so the acceptance analogues are reachable.
inline ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  auto& l0 = c.harness.learners[0];
  l0.td.learning_rate = 0.1;
  l0.td.batch_size = 32;
  l0.td.target_sync_period = 200;
  l0.td.epsilon_start = 1.0;
  l0.td.epsilon_end = 0.05;
  l0.td.epsilon_decay_steps = 100000;
  l0.replay_capacity = 50000;
  l0.transitions_per_update = 2;
  auto& l1 = c.harness.learners[1];
  l1.td.learning_rate = 0.01;
  l1.td.batch_size = 32;
  l1.td.target_sync_period = 200;
  l1.td.epsilon_start = 1.0;
  l1.td.epsilon_end = 0.05;
  l1.td.epsilon_decay_steps = 30000;
  l1.replay_capacity = 20000;
  l1.transitions_per_update = 2;
  c.harness.learners[2] = l1;
  c.harness.flat_learner = l1;
  c.harness.acting.epsilon0 = 0.0;
  c.harness.acting.epsilon2 = 0.1;
  return c;
}

// Applies `key = value` lines (with optional [section] headers) on top of `base`.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = default_experiment_config()) {
  const auto& keys = config_keys();
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw config_error("line " + std::to_string(lineno) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw config_error("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    const auto it = keys.find(key);
    if (it == keys.end()) throw config_error("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      it->second(base, key, value);
    } catch (const config_error&) {
      throw;
    } catch (const std::exception& e) {
      throw config_error(key + ": " + e.what());
    }
    base.values[key] = value;
  }
  return base;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  return parse_config(in);
}

inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto it = config_keys().find(key);
  if (it == config_keys().end()) throw config_error("unknown key '" + key + "'");
  it->second(c, key, value);
  c.values[key] = value;
}

// Derives dependent seeds and validates; call after all overrides.
inline void finalize_config(ExperimentConfig& c) {
  if (!c.task_seed_set) c.task.seed = mix_seed(c.seed, 0x7a5cull);
  c.harness.seed = c.seed;
  c.harness.validate();
  if (c.task.geometry.rows < 1 || c.task.geometry.cols < 1) throw config_error("task geometry must be at least 1x1");
  if (c.task.episode_limit < 1) throw config_error("task.episode_limit must be >= 1");
  if (c.level0_hidden.empty()) throw config_error("level0.hidden must list at least one layer");
  // Catches task-specific geometry limits early.
  make_task(c.task);
}

// FNV-1a over the canonical `key=value` lines (sorted by key), hex encoded.
inline std::string config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [k, v] : c.values) feed(k + "=" + v + "\n");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------- evaluation

struct EvalResult {
  std::string policy;
  std::size_t episodes = 0;
  double mean_return = 0.0;
  double stddev = 0.0;
  double mean_per_event = 0.0;  // return per scoring event (per fall on catch)
  double success_rate = 0.0;    // episodes with positive return
};

inline EvalResult summarize(const std::string& policy, const std::vector<EpisodeOutput>& eps) {
  EvalResult r;
  r.policy = policy;
  r.episodes = eps.size();
  if (eps.empty()) return r;
  double sum = 0.0, per = 0.0, succ = 0.0;
  for (const auto& e : eps) {
    sum += e.total_reward;
    per += e.scoring_events > 0 ? e.total_reward / static_cast<double>(e.scoring_events) : e.total_reward;
    succ += e.total_reward > 0.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(eps.size());
  r.mean_return = sum / n;
  double var = 0.0;
  for (const auto& e : eps) var += (e.total_reward - r.mean_return) * (e.total_reward - r.mean_return);
  r.stddev = std::sqrt(var / n);
  r.mean_per_event = per / n;
  r.success_rate = succ / n;
  return r;
}

inline nlohmann::json to_json(const EvalResult& r) {
  return {{"policy", r.policy},
          {"episodes", r.episodes},
          {"mean_return", r.mean_return},
          {"stddev", r.stddev},
          {"mean_per_event", r.mean_per_event},
          {"success_rate", r.success_rate}};
}

inline void check_eval_episodes(std::size_t episodes) {
  if (episodes == 0) throw config_error("eval.episodes must be >= 1");
}

inline EvalResult evaluate_random(const TaskConfig& task, std::size_t episodes, std::uint64_t seed) {
  check_eval_episodes(episodes);
  TaskConfig tc = task;
  tc.seed = mix_seed(seed, 0xe7a1ull);
  auto env = make_task(tc);
  Rng rng(mix_seed(seed, 0x4a4dull));
  std::vector<EpisodeOutput> out;
  for (std::size_t i = 0; i < episodes; ++i) out.push_back(random_episode(*env, rng));
  return summarize("random", out);
}

inline EvalResult evaluate_flat(const TaskConfig& task, const FlatAgent& agent, std::size_t episodes,
                                std::uint64_t seed) {
  check_eval_episodes(episodes);
  TaskConfig tc = task;
  tc.seed = mix_seed(seed, 0xe7a1ull);
  auto env = make_task(tc);
  Rng rng(mix_seed(seed, 0x4a4dull));
  std::vector<EpisodeOutput> out;
  for (std::size_t i = 0; i < episodes; ++i) out.push_back(flat_episode(*env, agent, 0.0, 0.99, rng));
  return summarize("flat", out);
}

inline EvalResult evaluate_hierarchy(const TaskConfig& task, const LevelTwoAgent& l2, const LevelOneAgent& l1,
                                     const LevelZeroAgent& l0, const ActingConfig& acting, std::size_t episodes,
                                     std::uint64_t seed) {
  check_eval_episodes(episodes);
  TaskConfig tc = task;
  tc.seed = mix_seed(seed, 0xe7a1ull);
  auto env = make_task(tc);
  Rng rng(mix_seed(seed, 0x4a4dull));
  ActingConfig greedy = acting;
  greedy.epsilon0 = greedy.epsilon1 = greedy.epsilon2 = 0.0;
  greedy.collect_level0 = false;
  std::vector<EpisodeOutput> out;
  for (std::size_t i = 0; i < episodes; ++i) out.push_back(act_episode(*env, l2, l1, l0, greedy, rng));
  return summarize("hierarchy", out);
}

// Stored model: hierarchy = 3 level-0 networks, level-1 network, level-2 table; flat = one network.
inline std::vector<QApproximator> model_parameters(const TrainedModel& m) {
  std::vector<QApproximator> p = m.level0;
  if (m.level1) p.push_back(*m.level1);
  if (m.level2) p.push_back(*m.level2);
  return p;
}

inline EvalResult evaluate_model(const TaskConfig& task, const std::vector<QApproximator>& params,
                                 const std::string& policy, const ActingConfig& acting, std::size_t episodes,
                                 std::uint64_t seed) {
  const GridGeometry& g = task.geometry;
  if (policy == "flat") {
    if (params.size() != 1) throw config_error("model file does not hold a flat agent");
    return evaluate_flat(task, FlatAgent(g, params[0]), episodes, seed);
  }
  if (params.size() != 5) throw config_error("model file does not hold a hierarchy");
  LevelZeroAgent l0(g, {params[0], params[1], params[2]});
  LevelOneAgent l1(g, params[3]);
  LevelTwoAgent l2 = level2_from_table(params[4], 0.0);
  return evaluate_hierarchy(task, l2, l1, l0, acting, episodes, seed);
}

// ---------------------------------------------------------------- self-checks

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

using GestureMatcher = std::function<GoalSet(const GridGeometry&, const TouchHistory&)>;

// Fast gesture matcher against the literal oracle on every touch sequence of
// length <= max_len over the grid (with a leading LIFT).
inline CheckResult check_gesture_oracle(const GridGeometry& g = GridGeometry(2, 2), std::size_t max_len = 5,
                                        const GestureMatcher& matcher = completed_gestures) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t alphabet = static_cast<std::size_t>(g.cells()) + 1;
  std::size_t sequences = 0, mismatches = 0;
  std::vector<std::size_t> digits;
  for (std::size_t len = 0; len <= max_len; ++len) {
    digits.assign(len, 0);
    for (;;) {
      TouchHistory h(max_len + 1);
      h.push(TouchSymbol::lift());
      for (std::size_t d : digits)
        h.push(d + 1 == alphabet ? TouchSymbol::lift() : TouchSymbol::touch(static_cast<Cell>(d)));
      ++sequences;
      if (matcher(g, h) != oracle::completed_gestures(g, h)) ++mismatches;
      std::size_t i = 0;
      while (i < len && ++digits[i] == alphabet) digits[i++] = 0;
      if (i == len) break;
    }
  }
  CheckResult r{"gesture oracle equivalence", mismatches == 0,
                std::to_string(sequences) + " sequences, " + std::to_string(mismatches) + " mismatches"};
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Tabular Q-learning on a deterministic chain against value iteration.
inline CheckResult check_bellman_fixed_point(std::size_t states = 5, double gamma = 0.9, double tol = 1e-6) {
  const auto t0 = std::chrono::steady_clock::now();
  // Actions: 0 = advance (reward 1 on leaving the last state, which ends), 1 = stay (reward 0).
  const std::size_t actions = 2;
  auto layout = std::make_shared<FeatureLayout>();
  layout->add("state", states);
  auto feat = [&](std::size_t s) {
    FeatureVector f(layout);
    f.set_one_hot(0, s);
    return f;
  };
  std::vector<Transition> data;
  for (std::size_t s = 0; s < states; ++s) {
    for (std::size_t a = 0; a < actions; ++a) {
      Transition t;
      t.features = feat(s);
      t.actions = {static_cast<std::uint32_t>(a)};
      const bool last = s + 1 == states;
      if (a == 0) {
        t.cumulant = last ? 1.0 : 0.0;
        t.continuation = last ? 0.0 : gamma;
        t.next_features = feat(last ? s : s + 1);
      } else {
        t.cumulant = 0.0;
        t.continuation = gamma;
        t.next_features = feat(s);
      }
      data.push_back(std::move(t));
    }
  }
  // Value iteration oracle.
  Eigen::MatrixXd vi = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(states), 2);
  for (int it = 0; it < 2000; ++it) {
    Eigen::MatrixXd nx = vi;
    for (std::size_t s = 0; s < states; ++s) {
      const auto i = static_cast<Eigen::Index>(s);
      nx(i, 0) = s + 1 == states ? 1.0 : gamma * vi.row(i + 1).maxCoeff();
      nx(i, 1) = gamma * vi.row(i).maxCoeff();
    }
    vi = nx;
  }
  auto online = QApproximator::table(layout, actions);
  auto target = online;
  TdConfig td;
  td.learning_rate = 1.0;
  td.target_sync_period = 1;
  std::size_t updates = 0;
  double err = 1.0;
  while (updates < 10000) {
    for (const auto& t : data) {
      td_update(online, target, std::vector<Transition>{t}, td);
      ++updates;
    }
    err = (online.table_values() - vi).cwiseAbs().maxCoeff();
    if (err < tol) break;
  }
  CheckResult r{"bellman fixed point", err < tol && updates < 10000,
                "max |q - q*| = " + format_double(err) + " after " + std::to_string(updates) + " updates"};
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline CheckResult check_gradients(std::size_t networks = 20, std::uint64_t seed = 7, double tol = 1e-4) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t n = 0; n < networks; ++n) {
    std::vector<std::size_t> sizes{2 + rng.uniform_index(5)};
    const std::size_t hidden = 1 + rng.uniform_index(2);
    for (std::size_t h = 0; h < hidden; ++h) sizes.push_back(2 + rng.uniform_index(6));
    sizes.push_back(1 + rng.uniform_index(4));
    Mlp net(sizes, rng);
    for (std::size_t l = 0; l < net.layer_count(); ++l)
      for (Eigen::Index i = 0; i < net.bias(l).size(); ++i) net.bias(l)(i) = rng.uniform(-0.5, 0.5);
    Eigen::VectorXd x(static_cast<Eigen::Index>(sizes.front()));
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = rng.uniform(-1.0, 1.0);
    const std::size_t out = rng.uniform_index(sizes.back());
    worst = std::max(worst, finite_diff_gradcheck(net, x, out));
  }
  CheckResult r{"gradient check", worst < tol,
                std::to_string(networks) + " networks, max relative error " + format_double(worst)};
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::vector<CheckResult> run_selfcheck() {
  return {check_gesture_oracle(), check_bellman_fixed_point(), check_gradients()};
}

// ---------------------------------------------------------------- commands

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << s;
}

inline void write_report_files(const std::filesystem::path& dir, const std::string& stem, const TrainingReport& r,
                               const nlohmann::json& extra) {
  std::filesystem::create_directories(dir);
  nlohmann::json summary = summary_json(r);
  for (auto it = extra.begin(); it != extra.end(); ++it) summary[it.key()] = it.value();
  write_text(dir / (stem + "_summary.json"), summary.dump(2) + "\n");
  write_text(dir / (stem + "_episodes.csv"), episodes_csv(r));
  write_text(dir / (stem + "_losses.csv"), losses_csv(r));
}

}  // namespace detail

struct CompletionSummary {
  CompletionReport tap, swipe, fling;
};

inline CompletionSummary completion_summary(const LevelZeroAgent& agent, std::size_t max_len) {
  const auto& g = agent.geometry();
  return {completion_rate(agent, goals_of_class(g, GestureClass::Tap), max_len),
          completion_rate(agent, goals_of_class(g, GestureClass::Swipe), max_len),
          completion_rate(agent, goals_of_class(g, GestureClass::Fling), max_len)};
}

inline LevelZeroAgent initial_level0(const ExperimentConfig& c) {
  Rng rng(mix_seed(c.seed, 0x1e0ull));
  return LevelZeroAgent(c.task.geometry, c.level0_hidden, rng);
}

inline LevelZeroAgent pretrain_level0(const ExperimentConfig& c, TrainingReport* report = nullptr) {
  HarnessConfig hc = c.harness;
  hc.program = Program::Pretrain;
  auto result = run_harness(hc, {c.task, initial_level0(c)}, c.pretrain_budget);
  if (report) *report = std::move(result.report);
  return LevelZeroAgent(c.task.geometry, std::move(result.model.level0));
}

// Returns the written parameter file path.
inline std::string cmd_pretrain(const ExperimentConfig& c, std::ostream& log) {
  TrainingReport report;
  const LevelZeroAgent agent = pretrain_level0(c, &report);
  report.config_hash = config_hash(c);
  const std::filesystem::path dir(c.out_dir);
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "level0.bin").string();
  save_parameters(path, c.task.geometry, agent.parameters());
  const auto cs = completion_summary(agent, c.harness.acting.option_timeout);
  nlohmann::json completion = {{"tap", cs.tap.rate()}, {"swipe", cs.swipe.rate()}, {"fling", cs.fling.rate()},
                               {"threshold", c.pretrain_threshold}};
  const bool reached =
      std::min({cs.tap.rate(), cs.swipe.rate(), cs.fling.rate()}) >= c.pretrain_threshold;
  completion["threshold_reached"] = reached;
  detail::write_report_files(dir, "pretrain", report, {{"completion", completion}, {"parameters", path}});
  log << "pretrain: " << report.total_steps << " steps; completion tap " << cs.tap.rate() << " swipe "
      << cs.swipe.rate() << " fling " << cs.fling.rate() << "\n";
  if (!reached) log << "pretrain: budget too small to reach completion threshold " << c.pretrain_threshold << "\n";
  log << "pretrain: wrote " << path << "\n";
  return path;
}

inline LevelZeroAgent obtain_level0(const ExperimentConfig& c, std::ostream& log) {
  if (!c.level0_path.empty()) {
    if (!std::filesystem::exists(c.level0_path)) throw config_error("level-0 file not found: " + c.level0_path);
    return LevelZeroAgent(c.task.geometry, load_parameters(c.level0_path, c.task.geometry));
  }
  if (!c.pretrain_inline)
    throw config_error("train needs a pretrained level-0 file (--level0 or level0.path) or pretrain.inline = true");
  log << "train: pretraining level 0 inline for " << c.pretrain_budget << " steps\n";
  return pretrain_level0(c);
}

inline HarnessResult train_model(const ExperimentConfig& c, std::ostream& log) {
  HarnessConfig hc = c.harness;
  hc.program = c.policy;
  HarnessInputs in{c.task, std::nullopt};
  if (c.policy == Program::Hierarchy) in.level0 = obtain_level0(c, log);
  auto result = run_harness(hc, std::move(in), c.train_budget);
  result.report.config_hash = config_hash(c);
  return result;
}

inline std::string cmd_train(const ExperimentConfig& c, std::ostream& log) {
  auto result = train_model(c, log);
  const std::filesystem::path dir(c.out_dir);
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.bin").string();
  save_parameters(path, c.task.geometry, model_parameters(result.model));
  detail::write_report_files(dir, "train", result.report,
                             {{"policy", std::string(program_name(c.policy))}, {"parameters", path}});
  log << "train: " << program_name(c.policy) << " on " << c.task.name << ", " << result.report.total_steps
      << " steps, " << result.report.episodes.size() << " episodes; wrote " << path << "\n";
  return path;
}

inline EvalResult cmd_eval(const ExperimentConfig& c, std::ostream& log) {
  check_eval_episodes(c.eval_episodes);
  EvalResult r;
  if (c.eval_policy == "random") {
    r = evaluate_random(c.task, c.eval_episodes, c.eval_seed);
  } else {
    const std::string path =
        c.model_path.empty() ? (std::filesystem::path(c.out_dir) / "model.bin").string() : c.model_path;
    if (!std::filesystem::exists(path)) throw config_error("no trained parameters at " + path);
    r = evaluate_model(c.task, load_parameters(path, c.task.geometry), c.eval_policy, c.harness.acting,
                       c.eval_episodes, c.eval_seed);
  }
  const std::filesystem::path dir(c.out_dir);
  std::filesystem::create_directories(dir);
  nlohmann::json j = to_json(r);
  j["task"] = c.task.name;
  j["config_hash"] = config_hash(c);
  j["seed"] = c.seed;
  j["eval_seed"] = c.eval_seed;
  detail::write_text(dir / ("eval_" + r.policy + ".json"), j.dump(2) + "\n");
  log << "eval: " << r.policy << " on " << c.task.name << ": mean return " << r.mean_return << " (sd " << r.stddev
      << "), per event " << r.mean_per_event << ", success " << r.success_rate << " over " << r.episodes
      << " episodes\n";
  return r;
}

// Aggregates whatever run outputs exist in the output directory.
inline nlohmann::json cmd_report(const ExperimentConfig& c, std::ostream& log) {
  const std::filesystem::path dir(c.out_dir);
  if (!std::filesystem::is_directory(dir)) throw config_error("output directory not found: " + c.out_dir);
  nlohmann::json out;
  out["config_hash"] = config_hash(c);
  out["seed"] = c.seed;
  for (const char* stem : {"pretrain", "train"}) {
    const auto p = dir / (std::string(stem) + "_summary.json");
    if (std::filesystem::exists(p)) {
      std::ifstream in(p);
      out[stem] = nlohmann::json::parse(in);
    }
    const auto csv = dir / (std::string(stem) + "_episodes.csv");
    if (std::filesystem::exists(csv)) {
      // Learning curve: mean return per tenth of the run.
      std::ifstream in(csv);
      std::string line;
      std::vector<double> returns;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("episode,", 0) == 0) continue;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        std::getline(ss, field, ',');
        std::getline(ss, field, ',');
        returns.push_back(std::stod(field));
      }
      nlohmann::json curve = nlohmann::json::array();
      const std::size_t bins = std::min<std::size_t>(10, returns.size());
      for (std::size_t b = 0; b < bins; ++b) {
        const std::size_t lo = b * returns.size() / bins, hi = (b + 1) * returns.size() / bins;
        curve.push_back(std::accumulate(returns.begin() + static_cast<std::ptrdiff_t>(lo),
                                        returns.begin() + static_cast<std::ptrdiff_t>(hi), 0.0) /
                        static_cast<double>(hi - lo));
      }
      out[std::string(stem) + "_curve"] = curve;
    }
  }
  for (const char* policy : {"random", "flat", "hierarchy"}) {
    const auto p = dir / ("eval_" + std::string(policy) + ".json");
    if (std::filesystem::exists(p)) {
      std::ifstream in(p);
      out["eval"][policy] = nlohmann::json::parse(in);
    }
  }
  detail::write_text(dir / "report.json", out.dump(2) + "\n");
  log << out.dump(2) << "\n";
  return out;
}

}  // namespace ghrl
