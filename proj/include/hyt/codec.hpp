#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "hyt/error.hpp"
#include "hyt/oracle.hpp"
#include "hyt/serialize.hpp"
#include "hyt/world.hpp"

namespace hyt {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

enum class Modality : std::uint8_t { act, think, follow };

inline std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::act: return "act";
    case Modality::think: return "think";
    case Modality::follow: return "follow";
  }
  return "?";
}

inline Modality modality_from_string(std::string_view s) {
  return enum_from_string(s, std::array{Modality::act, Modality::think, Modality::follow},
                          "modality");
}

enum class ActionEncoding : std::uint8_t { bins, axis };

inline std::string_view to_string(ActionEncoding e) {
  return e == ActionEncoding::bins ? "bins" : "axis";
}

inline ActionEncoding action_encoding_from_string(std::string_view s) {
  if (s == "bins") return ActionEncoding::bins;
  if (s == "axis") return ActionEncoding::axis;
  throw FormatError("unknown action encoding '" + std::string(s) + "'");
}

inline constexpr int kActionTokens = 3;  // dx, dy, grip

struct ModalityConfig {
  double w_act = 0.25;
  double w_think = 0.5;
  double w_follow = 0.25;
  ThoughtFormat thought_format = ThoughtFormat::short_form;
  int chunk_size = 1;
  int action_bins = 256;
  ActionEncoding action_encoding = ActionEncoding::bins;

  void validate() const {
    if (w_act < 0 || w_think < 0 || w_follow < 0) {
      throw ConfigError("modality weights must be nonnegative");
    }
    if (std::abs(w_act + w_think + w_follow - 1.0) > 1e-9) {
      throw ConfigError("modality weights must sum to 1");
    }
    if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
    if (action_bins < 2) throw ConfigError("action_bins must be >= 2");
  }
};

// ---------------------------------------------------------------------------
// Action binning.

inline int bin_action(double v, int bins) {
  if (bins < 2) throw RangeError("bin count must be >= 2");
  if (!std::isfinite(v) || v < -1.0 || v > 1.0) {
    throw RangeError("action value outside [-1, 1]");
  }
  const int b = static_cast<int>(std::floor((v + 1.0) / 2.0 * bins));
  return std::clamp(b, 0, bins - 1);
}

inline double unbin_action(int b, int bins) {
  if (bins < 2) throw RangeError("bin count must be >= 2");
  if (b < 0 || b >= bins) throw RangeError("bin index out of range");
  return -1.0 + (2.0 * b + 1.0) / bins;
}

// ---------------------------------------------------------------------------
// Vocabulary.

enum class TokenClass : std::uint8_t { structural, modality, word, coordinate, action };

class Vocabulary {
 public:
  static constexpr TokenId PAD = 0;
  static constexpr TokenId BOS = 1;
  static constexpr TokenId EOS = 2;
  static constexpr TokenId SEP = 3;
  static constexpr TokenId M_ACT = 4;
  static constexpr TokenId M_THINK = 5;
  static constexpr TokenId M_FOLLOW = 6;

  explicit Vocabulary(int action_bins = 256) : action_bins_(action_bins) {
    if (action_bins < 2) throw ConfigError("action_bins must be >= 2");
    for (const char* t : {"<pad>", "<bos>", "<eos>", "<sep>"}) add(t, TokenClass::structural);
    for (const char* t : {"<act>", "<think>", "<follow>"}) add(t, TokenClass::modality);
    for (const char* w :
         {"what", "should", "the", "robot", "do", "to", "?", "place", "stack", "then", "on",
          "top", "of", "left", "right", "behind", "in", "front", "move", "pick", "up", "carry",
          "subtask:", "move:", "plan:", ";", "close", "forward", "backward", "done"}) {
      add(w, TokenClass::word);
    }
    for (Shape s : kShapes) add(std::string(to_string(s)), TokenClass::word);
    for (Color c : kColors) add(std::string(to_string(c)), TokenClass::word);
    for (int i = 0; i < kMaxGridSize; ++i) add("x" + std::to_string(i), TokenClass::coordinate);
    for (int i = 0; i < kMaxGridSize; ++i) add("y" + std::to_string(i), TokenClass::coordinate);
    for (int i = 0; i < kMaxObjects; ++i) add("l" + std::to_string(i), TokenClass::coordinate);
    add("l_held", TokenClass::coordinate);
    add("g_open", TokenClass::coordinate);
    add("g_closed", TokenClass::coordinate);
    add("held_none", TokenClass::coordinate);
    for (Color c : kColors) {
      for (Shape s : kShapes) {
        add(std::string(to_string(c)) + "_" + std::string(to_string(s)), TokenClass::coordinate);
      }
    }
    for (const char* t : {"dx-1", "dx0", "dx+1", "dy-1", "dy0", "dy+1", "grip_open", "grip_closed"}) {
      add(t, TokenClass::action);
    }
    first_bin_ = size();
    for (int b = 0; b < action_bins; ++b) add("b" + std::to_string(b), TokenClass::action);
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int action_bins() const { return action_bins_; }
  const std::string& str(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  TokenClass token_class(TokenId id) const { return classes_.at(static_cast<std::size_t>(id)); }

  bool contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

  TokenId id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) {
      throw VocabularyError("word '" + std::string(word) + "' is not in the vocabulary");
    }
    return it->second;
  }

  TokenId bin_token(int b) const { return first_bin_ + b; }
  std::optional<int> bin_of(TokenId t) const {
    if (t >= first_bin_ && t < first_bin_ + action_bins_) return t - first_bin_;
    return std::nullopt;
  }

  TokenId object_token(const ObjectDef& o) const {
    return id(std::string(to_string(o.color)) + "_" + std::string(to_string(o.shape)));
  }

  // Whitespace-separated words to ids; lists every unknown word.
  Tokens encode_words(std::string_view text) const {
    Tokens out;
    std::vector<std::string> unknown;
    for (const auto& w : split_words(text)) {
      auto it = index_.find(w);
      if (it == index_.end()) {
        unknown.push_back(w);
      } else {
        out.push_back(it->second);
      }
    }
    if (!unknown.empty()) {
      std::string msg = "unknown word(s):";
      for (const auto& w : unknown) msg += " '" + w + "'";
      throw VocabularyError(msg);
    }
    return out;
  }

  std::vector<std::string> unknown_words(std::string_view text) const {
    std::vector<std::string> out;
    for (const auto& w : split_words(text)) {
      if (!contains(w)) out.push_back(w);
    }
    return out;
  }

  std::string decode(const Tokens& tokens) const {
    std::string out;
    for (TokenId t : tokens) {
      if (!out.empty()) out += ' ';
      out += (t >= 0 && t < size()) ? str(t) : "<invalid>";
    }
    return out;
  }

  // FNV-1a over the token table; stored in checkpoints.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
      for (unsigned char c : t) {
        h ^= c;
        h *= 1099511628211ULL;
      }
      h ^= 0xff;
      h *= 1099511628211ULL;
    }
    return h;
  }

  nlohmann::json manifest() const {
    return nlohmann::json{{"format", "hyt-vocabulary"},
                          {"version", 1},
                          {"action_bins", action_bins_},
                          {"hash", hash_hex()},
                          {"tokens", tokens_}};
  }

  std::string hash_hex() const {
    std::ostringstream os;
    os << std::hex << hash();
    return os.str();
  }

  static std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

 private:
  void add(std::string tok, TokenClass cls) {
    index_.emplace(tok, size());
    tokens_.push_back(std::move(tok));
    classes_.push_back(cls);
  }

  int action_bins_;
  TokenId first_bin_ = 0;
  std::vector<std::string> tokens_;
  std::vector<TokenClass> classes_;
  std::unordered_map<std::string, TokenId> index_;
};

// ---------------------------------------------------------------------------
// Actions.

inline Tokens encode_action(const Action& a, const Vocabulary& vocab, ActionEncoding enc) {
  if (enc == ActionEncoding::axis) {
    static const char* dx[] = {"dx-1", "dx0", "dx+1"};
    static const char* dy[] = {"dy-1", "dy0", "dy+1"};
    return {vocab.id(dx[a.dx + 1]), vocab.id(dy[a.dy + 1]),
            vocab.id(a.grip == Grip::open ? "grip_open" : "grip_closed")};
  }
  const int k = vocab.action_bins();
  return {vocab.bin_token(bin_action(a.dx, k)), vocab.bin_token(bin_action(a.dy, k)),
          vocab.bin_token(bin_action(a.grip == Grip::open ? -1.0 : 1.0, k))};
}

// Inverse of encode_action for exactly three tokens; nullopt when malformed.
inline std::optional<Action> decode_action(std::span<const TokenId> t, const Vocabulary& vocab,
                                           ActionEncoding enc) {
  if (t.size() != kActionTokens) return std::nullopt;
  if (enc == ActionEncoding::axis) {
    auto axis = [&](TokenId id, std::string_view prefix) -> std::optional<int> {
      if (id < 0 || id >= vocab.size()) return std::nullopt;
      const std::string& s = vocab.str(id);
      if (s.rfind(prefix, 0) != 0 || vocab.token_class(id) != TokenClass::action) return std::nullopt;
      const std::string rest = s.substr(prefix.size());
      if (rest == "-1") return -1;
      if (rest == "0") return 0;
      if (rest == "+1") return 1;
      return std::nullopt;
    };
    auto dx = axis(t[0], "dx");
    auto dy = axis(t[1], "dy");
    if (!dx || !dy) return std::nullopt;
    if (t[2] == vocab.id("grip_open")) return Action{*dx, *dy, Grip::open};
    if (t[2] == vocab.id("grip_closed")) return Action{*dx, *dy, Grip::closed};
    return std::nullopt;
  }
  auto bx = vocab.bin_of(t[0]);
  auto by = vocab.bin_of(t[1]);
  auto bg = vocab.bin_of(t[2]);
  if (!bx || !by || !bg) return std::nullopt;
  const int k = vocab.action_bins();
  auto round_axis = [&](int b) {
    return static_cast<int>(std::lround(std::clamp(unbin_action(b, k), -1.0, 1.0)));
  };
  return Action{round_axis(*bx), round_axis(*by),
                unbin_action(*bg, k) > 0.0 ? Grip::closed : Grip::open};
}

// ---------------------------------------------------------------------------
// Observation, prompt, thought.

// Per object in id order: shape, color, x, y, level; then gripper x, y,
// state and held object.
inline Tokens observe(const WorldState& s, const Vocabulary& vocab) {
  std::vector<const ObjectDef*> objs;
  for (const auto& o : s.objects) objs.push_back(&o);
  std::sort(objs.begin(), objs.end(), [](auto* a, auto* b) { return a->id < b->id; });
  Tokens out;
  out.reserve(objs.size() * 5 + 4);
  for (const ObjectDef* o : objs) {
    out.push_back(vocab.id(to_string(o->shape)));
    out.push_back(vocab.id(to_string(o->color)));
    auto loc = s.locate(o->id);
    const GridPos p = loc ? loc->first : s.gripper_pos;
    out.push_back(vocab.id("x" + std::to_string(p.x)));
    out.push_back(vocab.id("y" + std::to_string(p.y)));
    out.push_back(loc ? vocab.id("l" + std::to_string(loc->second)) : vocab.id("l_held"));
  }
  out.push_back(vocab.id("x" + std::to_string(s.gripper_pos.x)));
  out.push_back(vocab.id("y" + std::to_string(s.gripper_pos.y)));
  out.push_back(vocab.id(s.gripper_state == Grip::open ? "g_open" : "g_closed"));
  out.push_back(s.held ? vocab.object_token(s.object(*s.held)) : vocab.id("held_none"));
  return out;
}

inline std::string prompt_text(const TaskSpec& task) {
  return "What should the robot do to " + task.text + "?";
}

// Word tokens of the fixed prompt template around the task text.
inline Tokens render_prompt(const TaskSpec& task, const Vocabulary& vocab) {
  Tokens out = vocab.encode_words("what should the robot do to");
  Tokens body = vocab.encode_words(task.text);
  out.insert(out.end(), body.begin(), body.end());
  out.push_back(vocab.id("?"));
  return out;
}

inline std::string render_thought_text(const Thought& t, ThoughtFormat format) {
  std::string out;
  if (format == ThoughtFormat::extended && t.plan_text) out = "plan: " + *t.plan_text + " ; ";
  out += "subtask: " + t.subtask_text;
  if (t.move_label) out += " ; move: " + *t.move_label;
  return out;
}

inline Tokens render_thought(const Thought& t, ThoughtFormat format, const Vocabulary& vocab) {
  return vocab.encode_words(render_thought_text(t, format));
}

inline Thought parse_thought(std::string_view text) {
  const auto words = Vocabulary::split_words(text);
  std::size_t i = 0;
  auto read_field = [&](std::string_view what) {
    std::string value;
    const std::size_t start = i;
    while (i < words.size() && words[i] != ";") {
      if (words[i] == "subtask:" || words[i] == "move:" || words[i] == "plan:") {
        throw ParseError("unexpected '" + words[i] + "' inside " + std::string(what), i);
      }
      if (!value.empty()) value += ' ';
      value += words[i++];
    }
    if (i == start) throw ParseError("empty " + std::string(what), i);
    return value;
  };
  auto expect = [&](std::string_view w) {
    if (i >= words.size() || words[i] != w) {
      throw ParseError("expected '" + std::string(w) + "'", i);
    }
    ++i;
  };
  Thought t;
  if (i < words.size() && words[i] == "plan:") {
    ++i;
    t.plan_text = read_field("plan");
    expect(";");
  }
  expect("subtask:");
  t.subtask_text = read_field("subtask");
  if (i < words.size()) {
    expect(";");
    expect("move:");
    t.move_label = read_field("move label");
    if (i < words.size()) throw ParseError("trailing words after move label", i);
  }
  return t;
}

inline Thought parse_thought(const Tokens& tokens, const Vocabulary& vocab) {
  return parse_thought(vocab.decode(tokens));
}

// ---------------------------------------------------------------------------
// Sample assembly.

struct TokenSample {
  Tokens input;
  Tokens target;
  std::vector<std::uint8_t> loss_mask;  // one per target position
  Modality modality = Modality::act;
  friend bool operator==(const TokenSample&, const TokenSample&) = default;

  std::size_t length() const { return input.size() + target.size(); }
};

inline TokenId modality_token(Modality m) {
  switch (m) {
    case Modality::act: return Vocabulary::M_ACT;
    case Modality::think: return Vocabulary::M_THINK;
    case Modality::follow: return Vocabulary::M_FOLLOW;
  }
  return Vocabulary::M_ACT;
}

// Action tokens for steps [index, index + chunk), repeating the final action
// past the end of the episode.
inline Tokens chunk_tokens(const Demonstration& demo, std::size_t index, const ModalityConfig& cfg,
                           const Vocabulary& vocab) {
  Tokens out;
  for (int c = 0; c < cfg.chunk_size; ++c) {
    const std::size_t t = std::min(index + static_cast<std::size_t>(c), demo.steps.size() - 1);
    Tokens a = encode_action(demo.steps[t].action, vocab, cfg.action_encoding);
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

// Policy input for one modality: [BOS, observation, prompt | thought, M].
// Follow mode conditions on the thought and leaves the task prompt out.
inline Tokens policy_input(const WorldState& obs, const TaskSpec& task, Modality m,
                           const Tokens* thought_tokens, const Vocabulary& vocab) {
  Tokens in{Vocabulary::BOS};
  Tokens o = observe(obs, vocab);
  in.insert(in.end(), o.begin(), o.end());
  if (m == Modality::follow) {
    if (!thought_tokens) throw AnnotationMissingError("follow input needs a thought");
    in.insert(in.end(), thought_tokens->begin(), thought_tokens->end());
  } else {
    Tokens p = render_prompt(task, vocab);
    in.insert(in.end(), p.begin(), p.end());
  }
  in.push_back(modality_token(m));
  return in;
}

inline TokenSample assemble(const Demonstration& demo, std::size_t index, Modality m,
                            const ModalityConfig& cfg, const Vocabulary& vocab) {
  if (index >= demo.steps.size()) throw RangeError("step index outside the episode");
  const DemoStep& step = demo.steps[index];
  if (m != Modality::act && !step.thought) {
    throw AnnotationMissingError("step " + std::to_string(index) + " of episode seed " +
                                 std::to_string(demo.seed) + " has no thought for " +
                                 std::string(to_string(m)) + " mode");
  }
  TokenSample s;
  s.modality = m;
  Tokens thought;
  if (step.thought) thought = render_thought(*step.thought, cfg.thought_format, vocab);
  s.input = policy_input(step.observation, demo.task, m, &thought, vocab);
  if (m == Modality::think) {
    s.target = thought;
    s.target.push_back(Vocabulary::SEP);
  }
  Tokens actions = chunk_tokens(demo, index, cfg, vocab);
  s.target.insert(s.target.end(), actions.begin(), actions.end());
  s.target.push_back(Vocabulary::EOS);
  s.loss_mask.assign(s.target.size(), 1);
  return s;
}

}  // namespace hyt
