#include <gtest/gtest.h>

#include <set>

#include "hyt/codec.hpp"

namespace hyt {
namespace {

TEST(Binning, Boundaries) {
  EXPECT_EQ(bin_action(-1.0, 256), 0);
  EXPECT_EQ(bin_action(1.0, 256), 255);
  EXPECT_EQ(bin_action(0.0, 256), 128);
}

TEST(Binning, ZeroMatchesBruteForceScan) {
  // The bin holding v is the unique b with lower edge -1 + 2b/K <= v.
  auto brute = [](double v, int k) {
    int found = 0;
    for (int b = 0; b < k; ++b) {
      if (-1.0 + 2.0 * b / k <= v) found = b;
    }
    return found;
  };
  for (int k : {2, 3, 7, 256}) {
    for (double v : {-1.0, -0.5, -0.01, 0.0, 0.3, 0.999}) EXPECT_EQ(bin_action(v, k), brute(v, k)) << v;
  }
}

TEST(Binning, Errors) {
  EXPECT_THROW(bin_action(1.5, 256), RangeError);
  EXPECT_THROW(bin_action(std::nan(""), 256), RangeError);
  EXPECT_THROW(bin_action(0.0, 1), RangeError);
  EXPECT_THROW(unbin_action(256, 256), RangeError);
  EXPECT_THROW(unbin_action(-1, 256), RangeError);
}

TEST(Unbinning, Centers) {
  EXPECT_DOUBLE_EQ(unbin_action(0, 2), -0.5);
  EXPECT_DOUBLE_EQ(unbin_action(255, 256), 0.99609375);
}

TEST(BinningProperty, MonotoneAndRoundTripWithinOneBin) {
  Rng rng(9);
  for (int trial = 0; trial < 20000; ++trial) {
    const int k = 2 + static_cast<int>(uniform_index(rng, 300));
    const double a = uniform01(rng) * 2 - 1, b = uniform01(rng) * 2 - 1;
    ASSERT_LE(bin_action(std::min(a, b), k), bin_action(std::max(a, b), k));
    ASSERT_LE(std::abs(unbin_action(bin_action(a, k), k) - a), 1.0 / k + 1e-12);
  }
}

TEST(Vocabulary, DenseStableAndDistinctModalities) {
  const Vocabulary a(256), b(256);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), Vocabulary(128).hash());
  std::set<std::string> seen;
  for (TokenId i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(seen.insert(a.str(i)).second) << a.str(i);
    EXPECT_EQ(a.id(a.str(i)), i);
  }
  EXPECT_EQ(a.token_class(Vocabulary::M_ACT), TokenClass::modality);
  EXPECT_EQ(a.str(Vocabulary::M_THINK), "<think>");
  EXPECT_EQ(a.str(Vocabulary::M_FOLLOW), "<follow>");
  EXPECT_EQ(a.manifest().at("tokens").size(), static_cast<std::size_t>(a.size()));
}

TEST(Actions, EncodeDecodeBothEncodings) {
  const Vocabulary v(256);
  for (auto enc : {ActionEncoding::bins, ActionEncoding::axis}) {
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (Grip g : {Grip::open, Grip::closed}) {
          const Action a{dx, dy, g};
          const Tokens t = encode_action(a, v, enc);
          ASSERT_EQ(t.size(), 3u);
          EXPECT_EQ(decode_action(t, v, enc), a);
        }
      }
    }
  }
  EXPECT_EQ(encode_action({-1, 0, Grip::closed}, v, ActionEncoding::bins),
            (Tokens{v.bin_token(0), v.bin_token(128), v.bin_token(255)}));
  EXPECT_FALSE(decode_action(Tokens{v.id("the"), v.bin_token(0), v.bin_token(0)}, v, ActionEncoding::bins));
  EXPECT_FALSE(decode_action(Tokens{v.bin_token(0), v.bin_token(0)}, v, ActionEncoding::bins));
}

TEST(Observe, LayoutAndCanonicalOrder) {
  const Vocabulary v;
  WorldState s = reset(TaskFamily::PlaceAt, 2, 3);
  const Tokens obs = observe(s, v);
  EXPECT_EQ(obs.size(), 2u * 5 + 4);
  WorldState permuted = s;
  std::reverse(permuted.objects.begin(), permuted.objects.end());
  EXPECT_EQ(observe(permuted, v), obs);
}

TEST(Observe, HeldSlotNamesTheHeldObject) {
  const Vocabulary v;
  WorldState s;
  s.objects = {{0, Shape::cube, Color::red}, {1, Shape::sphere, Color::blue}};
  s.grid[{4, 4}] = {1};
  s.gripper_pos = {2, 2};
  s.gripper_state = Grip::closed;
  s.held = 0;
  const Tokens obs = observe(s, v);
  EXPECT_EQ(obs.back(), v.id("red_cube"));
  EXPECT_EQ(obs[4], v.id("l_held"));
  EXPECT_EQ(obs[2], v.id("x2"));
}

TEST(Prompt, TemplateAndVocabularyErrors) {
  const Vocabulary v;
  TaskSpec t;
  t.text = "place the red cube left of the blue cube";
  const Tokens p = render_prompt(t, v);
  EXPECT_EQ(v.decode(p), "what should the robot do to place the red cube left of the blue cube ?");
  EXPECT_EQ(prompt_text(t), "What should the robot do to place the red cube left of the blue cube?");
  EXPECT_EQ(render_prompt(t, v), p);
  t.text = "place the red teapot left of the blue cube";
  EXPECT_THROW(render_prompt(t, v), VocabularyError);
}

TEST(Thought, RenderMatchesTemplate) {
  const Thought t{"carry the red cube to left of the blue cube", "left forward", std::nullopt};
  const std::string text = render_thought_text(t, ThoughtFormat::short_form);
  EXPECT_EQ(text, "subtask: carry the red cube to left of the blue cube ; move: left forward");
  EXPECT_EQ(parse_thought(text), t);
  const Thought pick{"pick up the red cube", std::nullopt, std::nullopt};
  EXPECT_EQ(render_thought_text(pick, ThoughtFormat::short_form).find("move:"), std::string::npos);
  const Thought planned{"move to the red cube", "right", "pick up the red cube"};
  EXPECT_EQ(render_thought_text(planned, ThoughtFormat::extended),
            "plan: pick up the red cube ; subtask: move to the red cube ; move: right");
  EXPECT_EQ(parse_thought(render_thought_text(planned, ThoughtFormat::extended)), planned);
}

TEST(Thought, ParseErrorsCarryPosition) {
  try {
    parse_thought("subtask: move to the red cube ; left");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 7u);
  }
  EXPECT_THROW(parse_thought("move to the red cube"), ParseError);
  EXPECT_THROW(parse_thought("subtask: ; move: left"), ParseError);
  EXPECT_THROW(parse_thought(""), ParseError);
}

TEST(ThoughtProperty, ParseInvertsRenderOnRandomThoughts) {
  Rng rng(5);
  const Vocabulary v;
  for (int i = 0; i < 1000; ++i) {
    const Demonstration d = demo(kFamilies[i % 3], 2 + i % 3, static_cast<std::uint64_t>(i / 3), true);
    Thought t = *d.steps[uniform_index(rng, d.steps.size())].thought;
    const ThoughtFormat fmt = i % 2 ? ThoughtFormat::extended : ThoughtFormat::short_form;
    if (fmt == ThoughtFormat::short_form) t.plan_text.reset();
    ASSERT_EQ(parse_thought(render_thought_text(t, fmt)), t);
    ASSERT_EQ(parse_thought(render_thought(t, fmt, v), v), t);
  }
}

class AssembleTest : public ::testing::Test {
 protected:
  Vocabulary vocab;
  ModalityConfig cfg;
  Demonstration d = demo(TaskFamily::PlaceAt, 2, 0, true);
};

TEST_F(AssembleTest, ActLayout) {
  const TokenSample s = assemble(d, 0, Modality::act, cfg, vocab);
  EXPECT_EQ(s.input.front(), Vocabulary::BOS);
  EXPECT_EQ(s.input.back(), Vocabulary::M_ACT);
  EXPECT_EQ(s.target.size(), 4u);
  EXPECT_EQ(s.target.back(), Vocabulary::EOS);
  EXPECT_EQ(s.loss_mask, std::vector<std::uint8_t>(4, 1));
}

TEST_F(AssembleTest, ThinkTargetIsThoughtSepActionsEos) {
  const TokenSample s = assemble(d, 0, Modality::think, cfg, vocab);
  const Tokens thought = render_thought(*d.steps[0].thought, cfg.thought_format, vocab);
  ASSERT_EQ(s.target.size(), thought.size() + 1 + 3 + 1);
  EXPECT_TRUE(std::equal(thought.begin(), thought.end(), s.target.begin()));
  EXPECT_EQ(s.target[thought.size()], Vocabulary::SEP);
  EXPECT_EQ(s.input.back(), Vocabulary::M_THINK);
}

TEST_F(AssembleTest, FollowDropsThePrompt) {
  const TokenSample s = assemble(d, 0, Modality::follow, cfg, vocab);
  EXPECT_EQ(s.input.back(), Vocabulary::M_FOLLOW);
  for (const char* w : {"what", "should", "robot", "?"}) {
    EXPECT_EQ(std::count(s.input.begin(), s.input.end(), vocab.id(w)), 0) << w;
  }
  const Tokens thought = render_thought(*d.steps[0].thought, cfg.thought_format, vocab);
  EXPECT_TRUE(std::equal(thought.begin(), thought.end(), s.input.end() - 1 - thought.size()));
}

TEST_F(AssembleTest, ChunkPadsWithFinalAction) {
  cfg.chunk_size = 3;
  const std::size_t last = d.steps.size() - 1;
  const TokenSample s = assemble(d, last, Modality::act, cfg, vocab);
  ASSERT_EQ(s.target.size(), 10u);
  const Tokens a = encode_action(d.steps[last].action, vocab, cfg.action_encoding);
  for (int c = 0; c < 3; ++c) EXPECT_TRUE(std::equal(a.begin(), a.end(), s.target.begin() + 3 * c));
}

TEST_F(AssembleTest, ThoughtlessStepRejectsThinkAndFollow) {
  const Demonstration bare = demo(TaskFamily::PlaceAt, 2, 0, false);
  EXPECT_NO_THROW(assemble(bare, 0, Modality::act, cfg, vocab));
  EXPECT_THROW(assemble(bare, 0, Modality::think, cfg, vocab), AnnotationMissingError);
  EXPECT_THROW(assemble(bare, 0, Modality::follow, cfg, vocab), AnnotationMissingError);
}

TEST_F(AssembleTest, ModalityTokenOnlyAtTheEndAndDeterministic) {
  for (std::size_t i = 0; i < d.steps.size(); ++i) {
    for (Modality m : {Modality::act, Modality::think, Modality::follow}) {
      const TokenSample s = assemble(d, i, m, cfg, vocab);
      EXPECT_EQ(s, assemble(d, i, m, cfg, vocab));
      int count = 0;
      for (TokenId t : s.input) count += vocab.token_class(t) == TokenClass::modality;
      for (TokenId t : s.target) count += vocab.token_class(t) == TokenClass::modality;
      EXPECT_EQ(count, 1);
      EXPECT_EQ(s.input.back(), modality_token(m));
    }
  }
}

TEST(ModalityConfig, Validation) {
  ModalityConfig c;
  EXPECT_NO_THROW(c.validate());
  c.w_act = 0.3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.w_follow = -0.25;
  c.w_act = 0.75;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.chunk_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace hyt
