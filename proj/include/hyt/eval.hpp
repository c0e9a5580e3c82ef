#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "hyt/codec.hpp"
#include "hyt/error.hpp"
#include "hyt/net.hpp"
#include "hyt/oracle.hpp"
#include "hyt/random.hpp"
#include "hyt/train.hpp"
#include "hyt/world.hpp"

namespace hyt {

// ---------------------------------------------------------------------------
// Loaded checkpoint ready for inference. Parameters are read-only after
// loading and may be shared across threads.

struct Policy {
  Parameters<float> params;
  Vocabulary vocab;
  ModalityConfig modality;
  std::string path;
};

inline std::shared_ptr<const Policy> make_policy(const TrainerState& st, std::string path = {}) {
  const TrainConfig tc = TrainConfig::from_json(st.train_config);
  auto p = std::make_shared<Policy>(Policy{st.params, Vocabulary(tc.modality.action_bins), tc.modality,
                                           std::move(path)});
  if (p->vocab.hash_hex() != st.vocab_hash) {
    throw FormatError("checkpoint vocabulary hash " + st.vocab_hash + " does not match codec vocabulary " +
                      p->vocab.hash_hex());
  }
  if (p->vocab.size() != p->params.cfg.vocab_size) {
    throw FormatError("checkpoint vocabulary size does not match network output size");
  }
  return p;
}

inline std::shared_ptr<const Policy> load_policy(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("checkpoint not found: " + path);
  auto st = load_checkpoint(path);
  st.adam = {};
  return make_policy(st, path);
}

enum class EvalMode : std::uint8_t { act, think, follow, hierarchical };

inline std::string_view to_string(EvalMode m) {
  static constexpr std::string_view names[] = {"act", "think", "follow", "hierarchical"};
  return names[static_cast<int>(m)];
}

inline EvalMode eval_mode_from_string(std::string_view s) {
  for (EvalMode m : {EvalMode::act, EvalMode::think, EvalMode::follow, EvalMode::hierarchical}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown eval mode '" + std::string(s) + "'");
}

enum class ThoughtSource : std::uint8_t { model, oracle, human };

inline std::string_view to_string(ThoughtSource s) {
  static constexpr std::string_view names[] = {"model", "oracle", "human"};
  return names[static_cast<int>(s)];
}

// ---------------------------------------------------------------------------
// One policy query.

struct DecodeOptions {
  double temperature = 0.0;
  int max_thought_tokens = 48;
  double token_noise = 0.0;  // probability of replacing a generated token (robustness testing)
};

struct StepDecision {
  std::vector<Action> actions;  // one per chunk entry; empty when malformed
  bool malformed = false;
  std::optional<std::string> thought_text;
  Tokens thought_tokens;
  ThoughtSource thought_source = ThoughtSource::model;
  int tokens_generated = 0;
  double decode_seconds = 0.0;
  std::optional<TokenClass> first_class;  // class of the first generated token
};

namespace detail {

class Generator {
 public:
  Generator(const Policy& p, const DecodeOptions& opt, Rng* rng) : p_(p), opt_(opt), rng_(rng), dec_(p.params) {}

  void feed(const Tokens& t) { dec_.feed(t); }

  Tokens generate(std::initializer_list<TokenId> stops, int max_new) {
    Tokens out;
    while (static_cast<int>(out.size()) < max_new && dec_.length() < p_.params.cfg.context_len) {
      TokenId t = dec_.pick(opt_.temperature, rng_);
      if (opt_.token_noise > 0.0 && rng_ && uniform01(*rng_) < opt_.token_noise) {
        t = static_cast<TokenId>(uniform_index(*rng_, static_cast<std::uint64_t>(p_.vocab.size())));
      }
      out.push_back(t);
      if (!first_) first_ = p_.vocab.token_class(t);
      if (std::find(stops.begin(), stops.end(), t) != stops.end()) break;
      if (static_cast<int>(out.size()) == max_new || dec_.length() >= p_.params.cfg.context_len) break;
      dec_.feed(std::span(&out.back(), 1));
    }
    generated_ += static_cast<int>(out.size());
    return out;
  }

  int generated() const { return generated_; }
  std::optional<TokenClass> first_class() const { return first_; }

 private:
  const Policy& p_;
  const DecodeOptions& opt_;
  Rng* rng_;
  Decoder<float> dec_;
  int generated_ = 0;
  std::optional<TokenClass> first_;
};

inline void parse_actions(const Policy& p, const Tokens& gen, StepDecision& out) {
  Tokens body = gen;
  if (!body.empty() && body.back() == Vocabulary::EOS) body.pop_back();
  const int chunk = p.modality.chunk_size;
  if (static_cast<int>(body.size()) != kActionTokens * chunk) {
    out.malformed = true;
    return;
  }
  for (int c = 0; c < chunk; ++c) {
    auto a = decode_action(std::span(body).subspan(static_cast<std::size_t>(c) * kActionTokens, kActionTokens),
                           p.vocab, p.modality.action_encoding);
    if (!a) {
      out.malformed = true;
      out.actions.clear();
      return;
    }
    out.actions.push_back(*a);
  }
}

inline int action_budget(const Policy& p) { return kActionTokens * p.modality.chunk_size + 1; }

inline Tokens strip_stop(Tokens t, TokenId stop) {
  if (!t.empty() && t.back() == stop) t.pop_back();
  return t;
}

template <typename F>
double timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

// act: actions after M_ACT.
inline StepDecision decide_act(const Policy& p, const WorldState& s, const DecodeOptions& opt = {},
                               Rng* rng = nullptr) {
  StepDecision out;
  out.decode_seconds = detail::timed([&] {
    detail::Generator g(p, opt, rng);
    g.feed(policy_input(s, s.task, Modality::act, nullptr, p.vocab));
    detail::parse_actions(p, g.generate({Vocabulary::EOS}, detail::action_budget(p)), out);
    out.tokens_generated = g.generated();
    out.first_class = g.first_class();
  });
  return out;
}

// think: thought until SEP, then actions. A forced thought (oracle
// substitution) is fed instead of generated and is not counted as output.
inline StepDecision decide_think(const Policy& p, const WorldState& s, const DecodeOptions& opt = {},
                                 Rng* rng = nullptr, const std::optional<Thought>& forced = {}) {
  StepDecision out;
  out.decode_seconds = detail::timed([&] {
    detail::Generator g(p, opt, rng);
    g.feed(policy_input(s, s.task, Modality::think, nullptr, p.vocab));
    Tokens thought;
    if (forced) {
      thought = render_thought(*forced, p.modality.thought_format, p.vocab);
      Tokens fed = thought;
      fed.push_back(Vocabulary::SEP);
      g.feed(fed);
      out.thought_source = ThoughtSource::oracle;
    } else {
      Tokens gen = g.generate({Vocabulary::SEP, Vocabulary::EOS}, opt.max_thought_tokens);
      out.first_class = g.first_class();
      if (gen.empty() || gen.back() != Vocabulary::SEP) {
        out.thought_text = p.vocab.decode(detail::strip_stop(gen, Vocabulary::EOS));
        out.malformed = true;
        out.tokens_generated = g.generated();
        return;
      }
      thought = detail::strip_stop(gen, Vocabulary::SEP);
      g.feed({Vocabulary::SEP});  // stop tokens are returned, not fed
    }
    out.thought_text = p.vocab.decode(thought);
    detail::parse_actions(p, g.generate({Vocabulary::EOS}, detail::action_budget(p)), out);
    out.tokens_generated = g.generated();
    if (!out.first_class) out.first_class = g.first_class();
  });
  return out;
}

// follow: actions conditioned on a supplied thought, task prompt omitted.
inline StepDecision decide_follow(const Policy& p, const WorldState& s, const Tokens& thought,
                                  const DecodeOptions& opt = {}, Rng* rng = nullptr) {
  StepDecision out;
  out.decode_seconds = detail::timed([&] {
    detail::Generator g(p, opt, rng);
    g.feed(policy_input(s, s.task, Modality::follow, &thought, p.vocab));
    detail::parse_actions(p, g.generate({Vocabulary::EOS}, detail::action_budget(p)), out);
    out.tokens_generated = g.generated();
    out.first_class = g.first_class();
  });
  out.thought_text = p.vocab.decode(thought);
  return out;
}

// Thought only, truncated at SEP (high level of a two-model hierarchy).
inline StepDecision generate_thought(const Policy& p, const WorldState& s, const DecodeOptions& opt = {},
                                     Rng* rng = nullptr) {
  StepDecision out;
  out.decode_seconds = detail::timed([&] {
    detail::Generator g(p, opt, rng);
    g.feed(policy_input(s, s.task, Modality::think, nullptr, p.vocab));
    Tokens gen = g.generate({Vocabulary::SEP, Vocabulary::EOS}, opt.max_thought_tokens);
    out.tokens_generated = g.generated();
    out.first_class = g.first_class();
    out.malformed = gen.empty() || gen.back() != Vocabulary::SEP;
    out.thought_tokens = detail::strip_stop(detail::strip_stop(gen, Vocabulary::SEP), Vocabulary::EOS);
    out.thought_text = p.vocab.decode(out.thought_tokens);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Episodes.

struct ThoughtLogEntry {
  int step = 0;
  std::string thought;
  ThoughtSource source = ThoughtSource::model;
};

struct EpisodeResult {
  std::uint64_t seed = 0;
  bool success = false;
  bool invalid = false;  // oracle could not plan from the live state
  int steps = 0;
  int policy_calls = 0;
  int tokens_generated = 0;
  double wall_time = 0.0;  // decode time only
  int malformed = 0;
  int obedient = 0;  // policy calls whose first generated token matches the mode grammar
  int obedience_checked = 0;
  std::vector<ThoughtLogEntry> thought_log;
};

struct EpisodeSpec {
  TaskFamily family = TaskFamily::PlaceAt;
  int n_objects = 2;
  std::uint64_t seed = 0;
  int grid_size = kDefaultGridSize;
};

struct RolloutOptions {
  EvalMode mode = EvalMode::act;
  int max_steps = 0;  // 0 means the oracle step budget for the scene
  bool oracle_substitution = false;
  DecodeOptions decode;
};

// Models: one policy, or two for hierarchical (thought model, then follow model).
inline EpisodeResult rollout(std::span<const std::shared_ptr<const Policy>> models, const EpisodeSpec& ep,
                             const RolloutOptions& opt) {
  if (models.empty()) throw ConfigError("rollout needs a checkpoint");
  if (opt.mode == EvalMode::hierarchical && models.size() < 2) {
    throw ConfigError("hierarchical mode needs two checkpoints");
  }
  if (opt.mode == EvalMode::follow && !opt.oracle_substitution) {
    throw ConfigError("follow mode needs a thought source; enable oracle substitution or use the service");
  }
  if (opt.oracle_substitution && opt.mode != EvalMode::think && opt.mode != EvalMode::follow) {
    throw ConfigError("oracle substitution applies to think and follow modes only");
  }
  const Policy& p = *models[0];
  const Policy& low = models.size() > 1 ? *models[1] : p;
  WorldState s = reset(ep.family, ep.n_objects, ep.seed, ep.grid_size);
  const int max_steps = opt.max_steps > 0 ? opt.max_steps : step_budget(s);
  Rng rng(mix_seed(ep.seed, 0x45564c));
  Rng* rng_ptr = (opt.decode.temperature > 0.0 || opt.decode.token_noise > 0.0) ? &rng : nullptr;

  EpisodeResult r;
  r.seed = ep.seed;
  auto check = [&](const StepDecision& d, TokenClass expected) {
    if (!d.first_class) return;
    ++r.obedience_checked;
    r.obedient += *d.first_class == expected;
  };
  while (!check_success(s) && r.steps < max_steps) {
    std::optional<Thought> oracle_thought;
    if (opt.oracle_substitution) {
      try {
        if (is_moving(live_subtask(s).kind)) oracle_thought = live_thought(s);
      } catch (const PlanningError&) {
        r.invalid = true;
        break;
      }
    }
    StepDecision d;
    switch (opt.mode) {
      case EvalMode::act:
        d = decide_act(p, s, opt.decode, rng_ptr);
        check(d, TokenClass::action);
        break;
      case EvalMode::think:
        d = decide_think(p, s, opt.decode, rng_ptr, oracle_thought);
        if (!oracle_thought) check(d, TokenClass::word);
        break;
      case EvalMode::follow: {
        if (oracle_thought) {
          d = decide_follow(p, s, render_thought(*oracle_thought, p.modality.thought_format, p.vocab), opt.decode,
                            rng_ptr);
          d.thought_source = ThoughtSource::oracle;
          check(d, TokenClass::action);
        } else {
          // Non-moving subtask: the model's own thought drives follow mode.
          const StepDecision t = generate_thought(p, s, opt.decode, rng_ptr);
          if (t.malformed) {
            d = t;
          } else {
            d = decide_follow(p, s, t.thought_tokens, opt.decode, rng_ptr);
            check(d, TokenClass::action);
            d.tokens_generated += t.tokens_generated;
            d.decode_seconds += t.decode_seconds;
          }
        }
        break;
      }
      case EvalMode::hierarchical: {
        const StepDecision t = generate_thought(p, s, opt.decode, rng_ptr);
        check(t, TokenClass::word);
        if (t.malformed) {
          d.malformed = true;
          d.thought_text = t.thought_text;
        } else {
          d = decide_follow(low, s, t.thought_tokens, opt.decode, rng_ptr);
          check(d, TokenClass::action);
        }
        d.tokens_generated += t.tokens_generated;
        d.decode_seconds += t.decode_seconds;
        break;
      }
    }
    ++r.policy_calls;
    r.tokens_generated += d.tokens_generated;
    r.wall_time += d.decode_seconds;
    if (opt.mode != EvalMode::act && d.thought_text) {
      r.thought_log.push_back({r.steps, *d.thought_text, d.thought_source});
    }
    if (d.malformed || d.actions.empty()) {
      ++r.malformed;
      s = step(s, Action{0, 0, s.gripper_state});
      ++r.steps;
      continue;
    }
    for (const Action& a : d.actions) {
      s = step(s, a);
      ++r.steps;
      if (check_success(s) || r.steps >= max_steps) break;
    }
  }
  r.success = !r.invalid && check_success(s);
  return r;
}

inline EpisodeResult rollout(const std::shared_ptr<const Policy>& model, const EpisodeSpec& ep,
                             const RolloutOptions& opt) {
  return rollout(std::span(&model, 1), ep, opt);
}

// Scripted oracle as a policy (completeness reference).
inline EpisodeResult oracle_rollout(const EpisodeSpec& ep, int max_steps = 0) {
  WorldState s = reset(ep.family, ep.n_objects, ep.seed, ep.grid_size);
  const int budget = max_steps > 0 ? max_steps : step_budget(s);
  EpisodeResult r;
  r.seed = ep.seed;
  while (!check_success(s) && r.steps < budget) {
    try {
      s = step(s, oracle_policy(s));
    } catch (const PlanningError&) {
      r.invalid = true;
      break;
    }
    ++r.steps;
  }
  r.success = !r.invalid && check_success(s);
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation over seeded episode sets.

struct TaskVariant {
  TaskFamily family = TaskFamily::PlaceAt;
  int n_objects = 2;
  friend bool operator==(const TaskVariant&, const TaskVariant&) = default;
};

inline constexpr std::uint64_t kDefaultEvalSeedBase = 1'000'000;

struct EvalConfig {
  EvalMode mode = EvalMode::act;
  int n_episodes = 100;
  int max_steps = 0;
  std::uint64_t seed_base = kDefaultEvalSeedBase;
  std::vector<std::string> checkpoints;
  bool oracle_substitution = false;
  std::vector<TaskVariant> variants{{TaskFamily::PlaceAt, 2}};
  int grid_size = kDefaultGridSize;
  double temperature = 0.0;
  int workers = 0;  // 0 means hardware concurrency
  std::string output;  // CSV path; empty means none

  void validate() const {
    if (n_episodes < 1) throw ConfigError("n_episodes must be >= 1");
    if (checkpoints.empty()) throw ConfigError("eval needs at least one checkpoint");
    if (mode == EvalMode::hierarchical && checkpoints.size() != 2) {
      throw ConfigError("hierarchical mode needs exactly two checkpoints (thought model, follow model)");
    }
    if (mode == EvalMode::follow && !oracle_substitution) {
      throw ConfigError("follow mode without oracle substitution needs an external thought source");
    }
    if (variants.empty()) throw ConfigError("eval needs at least one task variant");
  }

  static EvalConfig from_json(const nlohmann::json& j) {
    EvalConfig c;
    c.mode = eval_mode_from_string(j.value("mode", std::string("act")));
    c.n_episodes = j.value("n_episodes", c.n_episodes);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed_base = j.value("seed_base", c.seed_base);
    if (j.contains("checkpoints")) {
      c.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    } else if (j.contains("checkpoint")) {
      c.checkpoints = {j.at("checkpoint").get<std::string>()};
    }
    c.oracle_substitution = j.value("oracle_substitution", c.oracle_substitution);
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j.at("variants")) {
        c.variants.push_back({family_from_string(v.at("family").get<std::string>()), v.at("n_objects").get<int>()});
      }
    }
    c.grid_size = j.value("grid_size", c.grid_size);
    c.temperature = j.value("temperature", c.temperature);
    c.workers = j.value("workers", c.workers);
    c.output = j.value("output", c.output);
    c.validate();
    return c;
  }
};

struct EvalRow {
  TaskVariant variant;
  std::string checkpoint;
  std::string mode;
  bool oracle_substitution = false;
  int n = 0;  // valid episodes
  int invalid = 0;
  int successes = 0;
  double success_rate = 0;
  double stderr_ = 0;
  double mean_steps = 0;
  double tokens_per_step = 0;
  double wall_per_step = 0;
  int malformed = 0;
  double obedience = 1.0;
};

inline constexpr std::string_view kEvalHeader =
    "family,n_objects,checkpoint,mode,oracle_substitution,episodes,invalid,successes,success_rate,stderr,"
    "mean_steps,tokens_per_step,wall_per_step_s,malformed,obedience";

inline std::string eval_row_csv(const EvalRow& r) {
  std::ostringstream os;
  os.precision(6);
  os << to_string(r.variant.family) << ',' << r.variant.n_objects << ',' << r.checkpoint << ',' << r.mode << ','
     << (r.oracle_substitution ? 1 : 0) << ',' << r.n << ',' << r.invalid << ',' << r.successes << ','
     << r.success_rate << ',' << r.stderr_ << ',' << r.mean_steps << ',' << r.tokens_per_step << ','
     << r.wall_per_step << ',' << r.malformed << ',' << r.obedience;
  return os.str();
}

inline double success_stderr(double p, int n) { return n > 0 ? std::sqrt(p * (1.0 - p) / n) : 0.0; }

inline EvalRow summarize(const std::vector<EpisodeResult>& eps) {
  EvalRow row;
  long steps = 0, tokens = 0, calls_checked = 0, obedient = 0;
  double wall = 0;
  for (const auto& e : eps) {
    if (e.invalid) {
      ++row.invalid;
      continue;
    }
    ++row.n;
    row.successes += e.success;
    steps += e.steps;
    tokens += e.tokens_generated;
    wall += e.wall_time;
    row.malformed += e.malformed;
    calls_checked += e.obedience_checked;
    obedient += e.obedient;
  }
  row.success_rate = row.n > 0 ? double(row.successes) / row.n : 0.0;
  row.stderr_ = success_stderr(row.success_rate, row.n);
  row.mean_steps = row.n > 0 ? double(steps) / row.n : 0.0;
  row.tokens_per_step = steps > 0 ? double(tokens) / steps : 0.0;
  row.wall_per_step = steps > 0 ? wall / steps : 0.0;
  row.obedience = calls_checked > 0 ? double(obedient) / calls_checked : 1.0;
  return row;
}

// Runs episodes seed_base + i for i in [0, n) in parallel; results come back
// in seed order.
inline std::vector<EpisodeResult> run_episodes(std::span<const std::shared_ptr<const Policy>> models,
                                               const TaskVariant& v, int n, std::uint64_t seed_base,
                                               const RolloutOptions& opt, int grid_size = kDefaultGridSize,
                                               int workers = 0) {
  std::vector<EpisodeResult> out(static_cast<std::size_t>(n));
  const int w = std::max(1, std::min(n, workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency())));
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        out[static_cast<std::size_t>(i)] =
            rollout(models, {v.family, v.n_objects, seed_base + static_cast<std::uint64_t>(i), grid_size}, opt);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  if (w == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

inline std::vector<EvalRow> evaluate(const EvalConfig& cfg) {
  cfg.validate();
  std::vector<std::shared_ptr<const Policy>> models;
  for (const auto& c : cfg.checkpoints) models.push_back(load_policy(c));
  if (models.size() == 2 && models[0]->vocab.hash_hex() != models[1]->vocab.hash_hex()) {
    throw FormatError("hierarchical checkpoints use different vocabularies");
  }
  RolloutOptions opt;
  opt.mode = cfg.mode;
  opt.max_steps = cfg.max_steps;
  opt.oracle_substitution = cfg.oracle_substitution;
  opt.decode.temperature = cfg.temperature;
  std::string ckpt_label = cfg.checkpoints[0];
  for (std::size_t i = 1; i < cfg.checkpoints.size(); ++i) ckpt_label += "+" + cfg.checkpoints[i];
  std::vector<EvalRow> rows;
  for (const auto& v : cfg.variants) {
    EvalRow row = summarize(run_episodes(models, v, cfg.n_episodes, cfg.seed_base, opt, cfg.grid_size, cfg.workers));
    row.variant = v;
    row.checkpoint = ckpt_label;
    row.mode = std::string(to_string(cfg.mode));
    row.oracle_substitution = cfg.oracle_substitution;
    rows.push_back(row);
  }
  if (!cfg.output.empty()) {
    std::ostringstream os;
    os << kEvalHeader << '\n';
    for (const auto& r : rows) os << eval_row_csv(r) << '\n';
    write_file(cfg.output, os.str());
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Oracle-thought study: act, think, think+oracle, follow+oracle.

struct OracleStudyRow {
  TaskVariant variant;
  std::string condition;
  EvalRow metrics;
};

inline constexpr std::string_view kOracleStudyConditions[] = {"act", "think", "think+oracle", "follow+oracle"};

inline std::vector<OracleStudyRow> oracle_follow_eval(const std::shared_ptr<const Policy>& model,
                                                      const std::vector<TaskVariant>& variants, int n_episodes,
                                                      std::uint64_t seed_base = kDefaultEvalSeedBase,
                                                      int workers = 0) {
  std::vector<OracleStudyRow> rows;
  const std::pair<EvalMode, bool> conds[] = {
      {EvalMode::act, false}, {EvalMode::think, false}, {EvalMode::think, true}, {EvalMode::follow, true}};
  for (const auto& v : variants) {
    for (int c = 0; c < 4; ++c) {
      RolloutOptions opt;
      opt.mode = conds[c].first;
      opt.oracle_substitution = conds[c].second;
      EvalRow m = summarize(run_episodes(std::span(&model, 1), v, n_episodes, seed_base, opt, kDefaultGridSize, workers));
      m.variant = v;
      m.checkpoint = model->path;
      m.mode = std::string(kOracleStudyConditions[c]);
      m.oracle_substitution = conds[c].second;
      rows.push_back({v, std::string(kOracleStudyConditions[c]), m});
    }
  }
  return rows;
}

inline std::string oracle_study_csv(const std::vector<OracleStudyRow>& rows) {
  std::ostringstream os;
  os << kEvalHeader << '\n';
  for (const auto& r : rows) os << eval_row_csv(r.metrics) << '\n';
  return os.str();
}

}  // namespace hyt
