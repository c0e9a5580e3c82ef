// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [config.json] [artifact_dir]
// Missing checkpoints are trained into artifact_dir first and reused on
// later runs. Soft gates print SOFT-FAIL without affecting the exit status.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "fd_oracle.hpp"
#include "hyt/report.hpp"
#include "hyt/service.hpp"

namespace {

using namespace hyt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
  bool soft = false;
};

int hard_failures = 0;

void report(const std::string& name, const std::function<Verdict()>& check) {
  Verdict v;
  try {
    v = check();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const char* tag = v.pass ? "PASS" : (v.soft ? "SOFT-FAIL" : "FAIL");
  if (!v.pass && !v.soft) ++hard_failures;
  std::cout << "[" << tag << "] " << name << ": " << v.detail << std::endl;
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

// --- criteria without trained models ---------------------------------------

Verdict sampler_fidelity() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  const ModalityConfig m;
  std::array<int, 3> counts{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<int>(sample_modality(m, true, rng))];
  const double secs = seconds_since(t0);
  const double w[3] = {m.w_act, m.w_think, m.w_follow};
  double worst = 0;
  for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(counts[k] / double(n) - w[k]));
  return {worst <= 0.01 && secs < 1.0,
          "max |freq - w| = " + fmt(worst) + " (<= 0.01), " + fmt(secs) + " s (< 1 s)"};
}

Dataset acceptance_dataset(int total, double annotated) {
  DatasetSpec spec;
  spec.total = total;
  spec.annotated_fraction = annotated;
  return generate_dataset(spec);
}

Verdict baseline_subsumption() {
  const Dataset ds = acceptance_dataset(40, 1.0);
  const StepIndex index(ds);
  const Vocabulary vocab(256);
  int compared = 0;
  for (auto [wa, wt, m] : {std::tuple{1.0, 0.0, Modality::act}, std::tuple{0.0, 1.0, Modality::think}}) {
    TrainConfig cfg;
    cfg.seed = 99;
    cfg.batch_size = 64;
    cfg.modality.w_act = wa;
    cfg.modality.w_think = wt;
    cfg.modality.w_follow = 0;
    BatchStreams streams(cfg.seed);
    Rng dedicated(mix_seed(cfg.seed, 0x5354));
    for (int b = 0; b < 20; ++b) {
      const auto mixed = make_batch(ds, index, cfg, vocab, streams);
      const auto single = make_single_modality_batch(ds, index, cfg, vocab, dedicated, m);
      if (mixed != single) return {false, "batch " + std::to_string(b) + " differs for " + std::string(to_string(m))};
      compared += static_cast<int>(mixed.size());
    }
  }
  return {true, std::to_string(compared) + " samples bitwise equal for (1,0,0) and (0,1,0)"};
}

Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  const Dataset ds = acceptance_dataset(8, 1.0);
  const StepIndex index(ds);
  const Vocabulary vocab(256);
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.net.d_model = 32;
  cfg.net.n_heads = 4;
  cfg.net.n_layers = 2;
  cfg.net.vocab_size = vocab.size();
  cfg.net.init_scale = 0.3;
  cfg.net.seed = 3;
  BatchStreams streams(5);
  const auto batch = to_labeled(make_batch(ds, index, cfg, vocab, streams));
  const auto p = init<double>(cfg.net);
  const auto analytic = loss_and_grad<double>(p, batch);
  const auto r = testing::finite_difference_check(p, batch, analytic.grad, 200, 77);
  const double secs = seconds_since(t0);
  return {r.max_rel_error < 1e-3 && secs < 120,
          "max rel error " + fmt(r.max_rel_error) + " over " + std::to_string(r.checked) + " coords (< 1e-3), " +
              fmt(secs) + " s (< 120 s)"};
}

Verdict loss_mask_isolation() {
  const Dataset ds = acceptance_dataset(8, 1.0);
  const StepIndex index(ds);
  const Vocabulary vocab(256);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.net.d_model = 32;
  cfg.net.n_heads = 4;
  cfg.net.n_layers = 2;
  cfg.net.vocab_size = vocab.size();
  cfg.net.seed = 8;
  const auto p = init<float>(cfg.net);
  BatchStreams streams(13);
  auto batch = to_labeled(make_batch(ds, index, cfg, vocab, streams));
  Rng rng(1);
  int perturbed = 0;
  for (auto& s : batch) {
    for (std::size_t i = 0; i + 1 < s.mask.size(); ++i) s.mask[i] = uniform_index(rng, 2) ? s.mask[i] : 0;
  }
  const double base = batch_loss<float>(p, batch).loss;
  for (auto& s : batch) {
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      if (!s.mask[i]) {
        s.labels[i] = static_cast<TokenId>(uniform_index(rng, static_cast<std::uint64_t>(vocab.size())));
        ++perturbed;
      }
    }
  }
  const double after = batch_loss<float>(p, batch).loss;
  return {after == base && perturbed > 0,
          std::to_string(perturbed) + " mask-false labels perturbed, loss change " + fmt(after - base)};
}

Verdict oracle_completeness() {
  int demos = 0, successes = 0, single_pick = 0, keyframe_ok = 0;
  const TaskFamily families[] = {TaskFamily::PlaceAt, TaskFamily::PlaceOnTop, TaskFamily::StackTower};
  for (int i = 0; i < 1000; ++i) {
    const TaskFamily f = families[i % 3];
    const int n = 2 + (i / 3) % 3;
    const std::uint64_t seed = 50000 + static_cast<std::uint64_t>(i);
    const WorldState s = reset(f, n, seed);
    const OracleRun run = run_oracle(s);
    ++demos;
    const bool ok = check_success(run.final_state) && oracle_rollout({f, n, seed}).success;
    successes += ok;
    if (f != TaskFamily::StackTower) {
      ++single_pick;
      const auto kf = extract_keyframes(run.trajectory);
      bool match = kf.size() == run.boundaries.size();
      for (std::size_t k = 0; match && k < kf.size(); ++k) match = std::abs(kf[k] - run.boundaries[k]) <= 1;
      keyframe_ok += match;
    }
  }
  return {successes == demos && keyframe_ok == single_pick,
          std::to_string(successes) + "/" + std::to_string(demos) + " demos succeed, keyframes within 1 step on " +
              std::to_string(keyframe_ok) + "/" + std::to_string(single_pick) + " single-pick demos"};
}

Verdict tokenizer_round_trip() {
  const int k = 256, n = 1000001;
  double worst = 0;
  for (int i = 0; i < n; ++i) {
    const double v = -1.0 + 2.0 * i / (n - 1);
    worst = std::max(worst, std::abs(unbin_action(bin_action(v, k), k) - v));
  }
  return {worst <= 1.0 / k, "max |unbin(bin(v)) - v| = " + fmt(worst, 8) + " over " + std::to_string(n) +
                                " values (<= " + fmt(1.0 / k, 8) + ")"};
}

// --- criteria on trained checkpoints ---------------------------------------

struct Trained {
  ScalingConfig sweep;
  std::vector<std::uint64_t> seeds;
  int episodes = 100;
  std::vector<TaskVariant> study_variants;
  std::vector<std::string> checkpoints;  // HyT, one per seed
  std::vector<double> train_hours;
};

double training_hours(const std::string& ckpt) {
  const fs::path metrics = fs::path(ckpt).parent_path() / "metrics.csv";
  std::istringstream in(read_file(metrics.string()));
  std::string line;
  std::getline(in, line);
  double total = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    total += std::stod(line.substr(line.rfind(',') + 1));
  }
  return total / 3600.0;
}

EvalRow eval_one(const std::string& ckpt, TaskVariant v, int episodes, EvalMode mode, bool substitution = false) {
  auto p = load_policy(ckpt);
  RolloutOptions opt;
  opt.mode = mode;
  opt.oracle_substitution = substitution;
  return summarize(run_episodes(std::span(&p, 1), v, episodes, kDefaultEvalSeedBase, opt, kDefaultGridSize, 0));
}

Verdict trainability(const Trained& t) {
  std::ostringstream os;
  bool ok = true;
  for (std::size_t i = 0; i < t.checkpoints.size(); ++i) {
    const EvalRow r = eval_one(t.checkpoints[i], {TaskFamily::PlaceAt, 2}, t.episodes, EvalMode::act);
    ok = ok && r.success_rate >= 0.8 && t.train_hours[i] < 4.0;
    os << (i ? "; " : "") << "seed " << t.seeds[i] << " " << fmt(100 * r.success_rate, 3) << "% ("
       << fmt(t.train_hours[i], 3) << " h)";
  }
  return {ok, os.str() + " [each >= 80%, < 4 h]"};
}

Verdict mode_obedience(const Trained& t) {
  const std::string& ckpt = t.checkpoints.front();
  const TaskVariant v{TaskFamily::PlaceAt, 2};
  const double a = eval_one(ckpt, v, t.episodes, EvalMode::act).obedience;
  const double th = eval_one(ckpt, v, t.episodes, EvalMode::think).obedience;
  const double f = eval_one(ckpt, v, t.episodes, EvalMode::follow, true).obedience;
  return {std::min({a, th, f}) >= 0.99,
          "act " + fmt(a) + ", think " + fmt(th) + ", follow " + fmt(f) + " (each >= 0.99)"};
}

Verdict inference_cost(const Trained& t) {
  const std::string& ckpt = t.checkpoints.front();
  const TaskVariant v{TaskFamily::PlaceAt, 2};
  const EvalRow a = eval_one(ckpt, v, t.episodes, EvalMode::act);
  const EvalRow th = eval_one(ckpt, v, t.episodes, EvalMode::think);
  const bool ok = th.tokens_per_step >= 2 * a.tokens_per_step && a.wall_per_step < th.wall_per_step;
  return {ok, "tokens/step act " + fmt(a.tokens_per_step) + " think " + fmt(th.tokens_per_step) +
                  " (think >= 2x act); wall/step act " + fmt(a.wall_per_step * 1e3) + " ms think " +
                  fmt(th.wall_per_step * 1e3) + " ms (act lower)"};
}

Verdict directional_trend(const Trained& t) {
  const ScalingReport rep = scaling_report(t.sweep);
  Verdict v;
  v.soft = true;
  v.pass = rep.trend_holds.value_or(false);
  v.detail = rep.trend_note + "; report in " + t.sweep.root;
  return v;
}

Verdict oracle_study(const Trained& t) {
  double think = 0, think_oracle = 0, follow_oracle = 0;
  std::vector<OracleStudyRow> all;
  for (const auto& ckpt : t.checkpoints) {
    const auto rows = oracle_follow_eval(load_policy(ckpt), t.study_variants, t.episodes);
    for (const auto& r : rows) {
      if (r.condition == "think") think += r.metrics.success_rate;
      if (r.condition == "think+oracle") think_oracle += r.metrics.success_rate;
      if (r.condition == "follow+oracle") follow_oracle += r.metrics.success_rate;
    }
    all.insert(all.end(), rows.begin(), rows.end());
  }
  const double denom = double(t.checkpoints.size() * t.study_variants.size());
  think /= denom, think_oracle /= denom, follow_oracle /= denom;
  std::set<std::string> conditions;
  for (const auto& r : all) conditions.insert(r.condition);
  const std::string out = (fs::path(t.sweep.root) / "oracle_study.csv").string();
  write_file(out, oracle_study_csv(all));
  Verdict v;
  v.soft = conditions.size() == 4;  // structure is a hard requirement
  v.pass = conditions.size() == 4 && think_oracle >= think && follow_oracle >= think;
  v.detail = std::to_string(conditions.size()) + " conditions; seed-avg success think " + fmt(think) +
             ", think+oracle " + fmt(think_oracle) + ", follow+oracle " + fmt(follow_oracle) +
             " (oracle >= think); report in " + out;
  return v;
}

// --- service ----------------------------------------------------------------

Verdict service_contract(const std::string& ckpt) {
  SessionOptions o;
  o.default_checkpoint = ckpt;
  const char* modes[] = {"act", "think", "follow"};
  const char* families[] = {"PlaceAt", "PlaceOnTop", "StackTower"};
  const char* thoughts[] = {"subtask: move to the red cube ; move: left", "move right forward", "close"};
  auto create_req = [&](int i) {
    return Json{{"mode", modes[i % 3]}, {"task_family", families[(i / 3) % 3]}, {"n_objects", 2 + i % 3},
                {"seed", 7000 + i}};
  };
  auto step_req = [&](int i, int k) { return Json{{"thought", thoughts[(i + k) % 3]}}; };
  const int n = 100, steps = 6;

  // Mode immutability.
  SessionManager m(o);
  int immutable_ok = 0, immutable_total = 0;
  for (int i = 0; i < 3; ++i) {
    const std::string id = m.create(create_req(i)).at("id");
    for (const char* other : modes) {
      if (std::string(other) == modes[i % 3]) continue;
      for (int via = 0; via < 2; ++via) {
        ++immutable_total;
        try {
          via ? m.update(id, {{"mode", other}}) : m.step(id, {{"mode", other}});
        } catch (const ServiceError& e) {
          immutable_ok += e.status() == 409 && m.get(id).at("mode") == modes[i % 3] &&
                          m.get(id).at("history").empty();
        }
      }
    }
    m.remove(id);
  }

  // Interleaved sessions against solo replays.
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back(m.create(create_req(i)).at("id"));
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&, w] {
      for (int k = 0; k < steps; ++k) {
        for (int i = w; i < n; i += 4) {
          try {
            m.step(ids[i], step_req(i, k));
          } catch (const ServiceError&) {
          }
        }
      }
    });
  }
  for (auto& th : workers) th.join();
  int isolated = 0;
  SessionManager solo(o);
  for (int i = 0; i < n; ++i) {
    Json mixed = m.get(ids[i]);
    const std::string sid = solo.create(create_req(i)).at("id");
    for (int k = 0; k < steps; ++k) {
      try {
        solo.step(sid, step_req(i, k));
      } catch (const ServiceError&) {
      }
    }
    Json alone = solo.get(sid);
    solo.remove(sid);
    for (auto* j : {&mixed, &alone}) {
      j->erase("id");
      for (auto& h : (*j)["history"]) h.erase("decode_latency_s");
    }
    isolated += mixed == alone;
  }
  return {immutable_ok == immutable_total && isolated == n,
          "mode changes refused " + std::to_string(immutable_ok) + "/" + std::to_string(immutable_total) +
              "; interleaved sessions matching solo replay " + std::to_string(isolated) + "/" + std::to_string(n)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string config_path = argc > 1 ? argv[1] : HYT_ACCEPTANCE_CONFIG;
  const std::string artifacts = argc > 2 ? argv[2] : HYT_ACCEPTANCE_DIR;
  std::cout << "acceptance config " << config_path << ", artifacts " << artifacts << std::endl;

  report("Sampler fidelity", sampler_fidelity);
  report("Baseline subsumption", baseline_subsumption);
  report("Gradient correctness", gradient_correctness);
  report("Loss-mask isolation", loss_mask_isolation);
  report("Oracle completeness", oracle_completeness);
  report("Tokenizer round-trip", tokenizer_round_trip);

  Trained t;
  std::string setup_error;
  try {
    const Json j = Json::parse(read_file(config_path));
    t.sweep = ScalingConfig::from_json(j.at("scaling"));
    t.sweep.root = (fs::path(artifacts) / "scaling").string();
    t.episodes = j.value("episodes", t.episodes);
    for (const auto& v : j.at("oracle_study_variants")) {
      t.study_variants.push_back({family_from_string(v.at("family").get<std::string>()), v.at("n_objects").get<int>()});
    }
    const Json& tj = j.at("trainability");
    DatasetSpec data;
    data.total = tj.at("total").get<int>();
    data.n_objects = tj.value("n_objects", 0);
    const TrainConfig tc = TrainConfig::from_json(tj.at("train"));
    data.thought_format = tc.modality.thought_format;
    t.seeds = tj.at("seeds").get<std::vector<std::uint64_t>>();
    const fs::path root = fs::path(artifacts) / "trainability";
    for (std::uint64_t seed : t.seeds) {
      const auto t0 = Clock::now();
      const std::string ckpt = train_if_missing(tc, data, (root / "data.jsonl").string(),
                                                (root / ("hyt_s" + std::to_string(seed))).string(), seed);
      std::cout << "  hyt seed " << seed << " ready (" << fmt(seconds_since(t0)) << " s)" << std::endl;
      t.checkpoints.push_back(ckpt);
      t.train_hours.push_back(training_hours(ckpt));
    }
  } catch (const std::exception& e) {
    setup_error = e.what();
  }
  auto needs_models = [&](const std::function<Verdict(const Trained&)>& f) {
    return [&, f] { return setup_error.empty() ? f(t) : Verdict{false, "no trained models: " + setup_error}; };
  };
  report("Trainability", needs_models(trainability));
  report("Mode obedience", needs_models(mode_obedience));
  report("Inference-cost ordering", needs_models(inference_cost));
  report("Directional trend", needs_models(directional_trend));
  report("Oracle-follow study", needs_models(oracle_study));
  report("Service contract", [&] {
    return setup_error.empty() ? service_contract(t.checkpoints.front())
                               : Verdict{false, "no trained models: " + setup_error};
  });
  std::cout << (hard_failures ? "acceptance: FAILED (" + std::to_string(hard_failures) + ")" : "acceptance: OK")
            << std::endl;
  return hard_failures ? 1 : 0;
}
