#include <gtest/gtest.h>

#include <filesystem>

#include "hyt/eval.hpp"

namespace hyt {
namespace {

namespace fs = std::filesystem;

TrainConfig tiny_config() {
  TrainConfig c;
  c.net.d_model = 32;
  c.net.n_heads = 2;
  c.net.n_layers = 1;
  c.net.context_len = 128;
  c.net.seed = 5;
  c.output_dir = "";
  return c;
}

std::shared_ptr<const Policy> untrained_policy(int chunk = 1) {
  TrainConfig c = tiny_config();
  c.modality.chunk_size = chunk;
  return make_policy(fresh_state(c, Vocabulary(c.modality.action_bins)), "untrained");
}

TEST(Policy, VocabularyMismatchIsRefused) {
  TrainConfig c = tiny_config();
  TrainerState st = fresh_state(c, Vocabulary(c.modality.action_bins));
  st.vocab_hash = "0";
  EXPECT_THROW(make_policy(st), FormatError);
}

TEST(Policy, MissingCheckpointIsConfigError) {
  EXPECT_THROW(load_policy("/nonexistent/run/last.ckpt"), ConfigError);
}

TEST(Rollout, DeterministicApartFromWallTime) {
  auto p = untrained_policy();
  for (EvalMode m : {EvalMode::act, EvalMode::think}) {
    RolloutOptions opt;
    opt.mode = m;
    opt.max_steps = 12;
    const EpisodeResult a = rollout(p, {TaskFamily::PlaceAt, 2, 17}, opt);
    const EpisodeResult b = rollout(p, {TaskFamily::PlaceAt, 2, 17}, opt);
    EXPECT_EQ(a.success, b.success);
    EXPECT_EQ(a.steps, b.steps);
    EXPECT_EQ(a.tokens_generated, b.tokens_generated);
    EXPECT_EQ(a.malformed, b.malformed);
    ASSERT_EQ(a.thought_log.size(), b.thought_log.size());
    for (std::size_t i = 0; i < a.thought_log.size(); ++i) EXPECT_EQ(a.thought_log[i].thought, b.thought_log[i].thought);
  }
}

TEST(Rollout, ActModeHasEmptyThoughtLog) {
  RolloutOptions opt;
  opt.max_steps = 8;
  const EpisodeResult r = rollout(untrained_policy(), {TaskFamily::PlaceAt, 2, 3}, opt);
  EXPECT_TRUE(r.thought_log.empty());
  EXPECT_EQ(r.steps, 8);
}

TEST(Rollout, TokenNoiseNeverCrashes) {
  auto p = untrained_policy(2);
  for (EvalMode m : {EvalMode::act, EvalMode::think}) {
    RolloutOptions opt;
    opt.mode = m;
    opt.max_steps = 20;
    opt.decode.token_noise = 0.5;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      EpisodeResult r;
      EXPECT_NO_THROW(r = rollout(p, {TaskFamily::StackTower, 3, seed}, opt));
      EXPECT_LE(r.malformed, r.policy_calls);
      EXPECT_GE(r.steps, r.policy_calls);
    }
  }
}

TEST(Rollout, OracleSubstitutionMarksMovingSteps) {
  auto p = untrained_policy();
  RolloutOptions opt;
  opt.mode = EvalMode::follow;
  opt.oracle_substitution = true;
  opt.max_steps = 6;
  const EpisodeResult r = rollout(p, {TaskFamily::PlaceAt, 2, 11}, opt);
  WorldState s = reset(TaskFamily::PlaceAt, 2, 11);
  ASSERT_TRUE(is_moving(live_subtask(s).kind));
  ASSERT_FALSE(r.thought_log.empty());
  EXPECT_EQ(r.thought_log.front().source, ThoughtSource::oracle);
  EXPECT_EQ(r.thought_log.front().thought, render_thought_text(live_thought(s), ThoughtFormat::short_form));
}

TEST(Rollout, ThinkWithoutSubstitutionIsAllModel) {
  RolloutOptions opt;
  opt.mode = EvalMode::think;
  opt.max_steps = 6;
  const EpisodeResult r = rollout(untrained_policy(), {TaskFamily::PlaceAt, 2, 4}, opt);
  for (const auto& e : r.thought_log) EXPECT_EQ(e.source, ThoughtSource::model);
}

TEST(Rollout, ModeContractsAreEnforced) {
  auto p = untrained_policy();
  RolloutOptions opt;
  opt.mode = EvalMode::hierarchical;
  EXPECT_THROW(rollout(p, {TaskFamily::PlaceAt, 2, 0}, opt), ConfigError);
  opt.mode = EvalMode::follow;
  EXPECT_THROW(rollout(p, {TaskFamily::PlaceAt, 2, 0}, opt), ConfigError);
  opt.mode = EvalMode::act;
  opt.oracle_substitution = true;
  EXPECT_THROW(rollout(p, {TaskFamily::PlaceAt, 2, 0}, opt), ConfigError);
}

TEST(Rollout, HierarchicalCountsBothModels) {
  auto a = untrained_policy();
  auto b = untrained_policy();
  std::vector<std::shared_ptr<const Policy>> models{a, b};
  RolloutOptions opt;
  opt.mode = EvalMode::hierarchical;
  opt.max_steps = 4;
  const EpisodeResult r = rollout(models, {TaskFamily::PlaceAt, 2, 9}, opt);
  EXPECT_EQ(r.policy_calls, 4);
  EXPECT_GT(r.tokens_generated, 0);
}

TEST(OracleRollout, SolvesEveryVariant) {
  for (TaskFamily f : {TaskFamily::PlaceAt, TaskFamily::PlaceOnTop, TaskFamily::StackTower}) {
    for (int n = 2; n <= 4; ++n) {
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        EXPECT_TRUE(oracle_rollout({f, n, seed}).success) << to_string(f) << n << " " << seed;
      }
    }
  }
}

// A small net memorizes a handful of demos; think decoding on training
// states must then produce the demo thought, SEP, and the demo action.
TEST(Memorize, ThinkDecodingReproducesTrainingDemos) {
  DatasetSpec spec;
  spec.total = 5;
  spec.n_objects = 2;
  spec.seed_base = 40;
  const Dataset ds = generate_dataset(spec);
  TrainConfig c = tiny_config();
  c.net.d_model = 64;
  c.net.n_heads = 4;
  c.net.n_layers = 2;
  c.batch_size = 16;
  c.epochs = 200;
  c.learning_rate = 3e-3;
  c.modality.w_act = 0.5;
  c.modality.w_think = 0.5;
  c.modality.w_follow = 0.0;
  const auto r = train(c, ds);
  EXPECT_LT(r.metrics.back().loss[static_cast<int>(Modality::act)], 0.05);
  const auto p = make_policy(r.state, "memorized");
  int ok_act = 0, ok_think = 0, n = 0;
  for (const auto& demo : ds.episodes) {
    for (const auto& step : demo.steps) {
      ++n;
      const auto a = decide_act(*p, step.observation);
      if (!a.malformed && a.actions.front() == step.action) ++ok_act;
      const auto t = decide_think(*p, step.observation);
      if (!t.malformed && t.actions.front() == step.action) ++ok_think;
    }
  }
  EXPECT_GE(ok_act, 0.95 * n) << ok_act << " of " << n;
  EXPECT_GE(ok_think, 0.95 * n) << ok_think << " of " << n;
}

TEST(Summarize, StderrAndZeroSuccess) {
  std::vector<EpisodeResult> eps(100);
  for (auto& e : eps) e.steps = 10;
  EvalRow r = summarize(eps);
  EXPECT_EQ(r.success_rate, 0.0);
  EXPECT_EQ(r.stderr_, 0.0);
  for (int i = 0; i < 30; ++i) eps[i].success = true;
  r = summarize(eps);
  EXPECT_DOUBLE_EQ(r.success_rate, 0.3);
  EXPECT_DOUBLE_EQ(r.stderr_, std::sqrt(0.3 * 0.7 / 100));
  eps[0].invalid = true;
  r = summarize(eps);
  EXPECT_EQ(r.n, 99);
  EXPECT_EQ(r.invalid, 1);
}

TEST(RunEpisodes, SeedOrderAndEpisodeSetsIndependentOfWorkers) {
  auto p = untrained_policy();
  RolloutOptions opt;
  opt.max_steps = 5;
  const auto one = run_episodes(std::span(&p, 1), {TaskFamily::PlaceAt, 3}, 6, 500, opt, kDefaultGridSize, 1);
  const auto many = run_episodes(std::span(&p, 1), {TaskFamily::PlaceAt, 3}, 6, 500, opt, kDefaultGridSize, 3);
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(one[i].seed, 500u + i);
    EXPECT_EQ(many[i].seed, one[i].seed);
    EXPECT_EQ(many[i].tokens_generated, one[i].tokens_generated);
  }
}

TEST(Evaluate, WritesCsvFromCheckpoint) {
  const auto dir = fs::temp_directory_path() / "hyt_eval_test";
  fs::create_directories(dir);
  TrainConfig c = tiny_config();
  const std::string ckpt = (dir / "m.ckpt").string();
  save_checkpoint(fresh_state(c, Vocabulary(c.modality.action_bins)), ckpt);
  EvalConfig ec;
  ec.checkpoints = {ckpt};
  ec.n_episodes = 3;
  ec.max_steps = 4;
  ec.output = (dir / "eval.csv").string();
  ec.variants = {{TaskFamily::PlaceAt, 2}, {TaskFamily::StackTower, 3}};
  const auto rows = evaluate(ec);
  ASSERT_EQ(rows.size(), 2u);
  const std::string csv = read_file(ec.output);
  EXPECT_EQ(csv.substr(0, kEvalHeader.size()), kEvalHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  fs::remove_all(dir);
}

TEST(EvalConfig, Validation) {
  nlohmann::json j{{"mode", "hierarchical"}, {"checkpoints", {"a"}}};
  EXPECT_THROW(EvalConfig::from_json(j), ConfigError);
  j = {{"mode", "follow"}, {"checkpoint", "a"}};
  EXPECT_THROW(EvalConfig::from_json(j), ConfigError);
  j = {{"mode", "follow"}, {"checkpoint", "a"}, {"oracle_substitution", true},
       {"variants", {{{"family", "StackTower"}, {"n_objects", 4}}}}};
  const EvalConfig c = EvalConfig::from_json(j);
  EXPECT_EQ(c.variants.front().family, TaskFamily::StackTower);
  EXPECT_THROW(EvalConfig::from_json({{"mode", "dream"}, {"checkpoint", "a"}}), ConfigError);
}

TEST(OracleStudy, FourConditionsPerVariant) {
  auto p = untrained_policy();
  const auto rows = oracle_follow_eval(p, {{TaskFamily::PlaceAt, 2}}, 2, 0);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].condition, "act");
  EXPECT_EQ(rows[1].condition, "think");
  EXPECT_EQ(rows[2].condition, "think+oracle");
  EXPECT_EQ(rows[3].condition, "follow+oracle");
}

}  // namespace
}  // namespace hyt
