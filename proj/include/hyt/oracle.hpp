#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hyt/error.hpp"
#include "hyt/world.hpp"

namespace hyt {

struct OracleConfig {
  int close_distance = 1;     // Chebyshev cells; below this the label is "close"
  int keyframe_distance = 1;  // reach threshold for keyframe extraction
};

struct Thought {
  std::string subtask_text;
  std::optional<std::string> move_label;
  std::optional<std::string> plan_text;
  friend bool operator==(const Thought&, const Thought&) = default;
};

struct DemoStep {
  WorldState observation;
  Action action;
  std::optional<Thought> thought;
  int subtask_index = 0;
  friend bool operator==(const DemoStep&, const DemoStep&) = default;
};

struct Demonstration {
  TaskSpec task;
  std::vector<DemoStep> steps;
  bool success = false;
  std::uint64_t seed = 0;
  friend bool operator==(const Demonstration&, const Demonstration&) = default;

  bool annotated() const {
    return !steps.empty() && steps.front().thought.has_value();
  }
};

using Trajectory = std::vector<std::pair<WorldState, Action>>;

inline std::string render_subtask_text(const WorldState& s, const Subtask& sub) {
  const std::string subj = object_phrase(s.object(sub.subject));
  auto placement = [&](std::string_view on_prefix) {
    const std::string ref = object_phrase(s.object(*sub.reference));
    if (sub.relation) return std::string(relation_phrase(*sub.relation)) + " " + ref;
    return std::string(on_prefix) + ref;
  };
  switch (sub.kind) {
    case SubtaskKind::move_to: return "move to " + subj;
    case SubtaskKind::pick_up: return "pick up " + subj;
    case SubtaskKind::carry_to: return "carry " + subj + " to " + placement("top of ");
    case SubtaskKind::place: return "place " + subj + " " + placement("on top of ");
  }
  return {};
}

inline Subtask make_subtask(const WorldState& s, SubtaskKind kind, ObjectId subject,
                            std::optional<ObjectId> reference = std::nullopt,
                            std::optional<Relation> relation = std::nullopt) {
  Subtask sub{kind, subject, reference, relation, {}};
  sub.text = render_subtask_text(s, sub);
  return sub;
}

namespace detail {

inline void append_pick_and_place(const WorldState& s, std::vector<Subtask>& out,
                                  ObjectId subject, ObjectId reference,
                                  std::optional<Relation> relation) {
  out.push_back(make_subtask(s, SubtaskKind::move_to, subject));
  out.push_back(make_subtask(s, SubtaskKind::pick_up, subject));
  out.push_back(make_subtask(s, SubtaskKind::carry_to, subject, reference, relation));
  out.push_back(make_subtask(s, SubtaskKind::place, subject, reference, relation));
}

}  // namespace detail

inline std::vector<Subtask> plan(const TaskSpec& task, const WorldState& state) {
  std::vector<Subtask> out;
  switch (task.family) {
    case TaskFamily::PlaceAt: {
      if (!task.reference || !task.relation) {
        throw PlanningError("PlaceAt task without reference/relation");
      }
      const GridPos target = offset(state.position_of(*task.reference), *task.relation);
      const auto* occupant = state.stack_at(target);
      if (!state.in_bounds(target) ||
          (occupant && !(occupant->size() == 1 && occupant->front() == task.subject))) {
        throw PlanningError("no free target cell for PlaceAt");
      }
      detail::append_pick_and_place(state, out, task.subject, *task.reference,
                                    task.relation);
      break;
    }
    case TaskFamily::PlaceOnTop:
      if (!task.reference) throw PlanningError("PlaceOnTop task without reference");
      detail::append_pick_and_place(state, out, task.subject, *task.reference,
                                    std::nullopt);
      break;
    case TaskFamily::StackTower:
      if (task.object_order.size() < 2) {
        throw PlanningError("StackTower needs at least two objects");
      }
      for (std::size_t i = 1; i < task.object_order.size(); ++i) {
        detail::append_pick_and_place(state, out, task.object_order[i],
                                      task.object_order[i - 1], std::nullopt);
      }
      break;
  }
  return out;
}

inline int sign(int v) { return (v > 0) - (v < 0); }

// Greedy controller for one subtask; both axes move together.
inline Action act(const WorldState& state, const Subtask& sub) {
  switch (sub.kind) {
    case SubtaskKind::pick_up: return {0, 0, Grip::closed};
    case SubtaskKind::place: return {0, 0, Grip::open};
    case SubtaskKind::move_to:
    case SubtaskKind::carry_to: {
      const GridPos t = *remaining_target(state, sub);
      return {sign(t.x - state.gripper_pos.x), sign(t.y - state.gripper_pos.y),
              state.gripper_state};
    }
  }
  return {0, 0, state.gripper_state};
}

inline bool subtask_done(const WorldState& s, const Subtask& sub) {
  switch (sub.kind) {
    case SubtaskKind::move_to:
    case SubtaskKind::carry_to:
      return *remaining_target(s, sub) == s.gripper_pos;
    case SubtaskKind::pick_up:
      return s.held == sub.subject;
    case SubtaskKind::place:
      return s.held != sub.subject;
  }
  return false;
}

// Direction words for a remaining displacement; x word first, then y word.
inline std::string move_label(GridPos from, GridPos to, int close_distance) {
  if (chebyshev(from, to) <= close_distance) return "close";
  std::string label;
  const int dx = to.x - from.x;
  const int dy = to.y - from.y;
  if (dx > 0) label = "right";
  if (dx < 0) label = "left";
  if (dy != 0) {
    if (!label.empty()) label += " ";
    label += dy > 0 ? "backward" : "forward";
  }
  return label;
}

inline Thought make_thought(const WorldState& s, const std::vector<Subtask>& plan_steps,
                            std::size_t index, const OracleConfig& cfg = {}) {
  const Subtask& sub = plan_steps.at(index);
  Thought t;
  t.subtask_text = sub.text;
  if (is_moving(sub.kind)) {
    t.move_label = move_label(s.gripper_pos, *remaining_target(s, sub), cfg.close_distance);
  }
  t.plan_text = index + 1 < plan_steps.size() ? plan_steps[index + 1].text : "done";
  return t;
}

inline std::vector<Thought> annotate(const Trajectory& trajectory,
                                     const std::vector<Subtask>& plan_steps,
                                     const std::vector<int>& boundaries,
                                     const OracleConfig& cfg = {}) {
  if (boundaries.empty() || boundaries.front() != 0) {
    throw IntegrityError("subtask boundaries must start at 0");
  }
  if (boundaries.size() != plan_steps.size()) {
    throw IntegrityError("one boundary per subtask required");
  }
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] < boundaries[i - 1]) {
      throw IntegrityError("subtask boundaries must be non-decreasing");
    }
  }
  std::vector<Thought> out;
  out.reserve(trajectory.size());
  std::size_t k = 0;
  for (std::size_t t = 0; t < trajectory.size(); ++t) {
    while (k + 1 < boundaries.size() && boundaries[k + 1] <= static_cast<int>(t)) ++k;
    out.push_back(make_thought(trajectory[t].first, plan_steps, k, cfg));
  }
  return out;
}

inline int step_budget(const WorldState& s) {
  return 4 * s.grid_size * static_cast<int>(s.objects.size());
}

struct OracleRun {
  Trajectory trajectory;
  std::vector<Subtask> plan;
  std::vector<int> subtask_index;  // per step
  std::vector<int> boundaries;     // first step of each subtask
  WorldState final_state;
};

inline OracleRun run_oracle(const WorldState& initial) {
  OracleRun run;
  run.plan = plan(initial.task, initial);
  WorldState s = initial;
  std::size_t k = 0;
  const int budget = step_budget(initial);
  while (!check_success(s)) {
    if (static_cast<int>(run.trajectory.size()) >= budget) {
      throw OracleError("oracle exceeded its step budget of " + std::to_string(budget) +
                        " on task '" + initial.task.text + "'");
    }
    while (k + 1 < run.plan.size() && subtask_done(s, run.plan[k])) ++k;
    const Action a = act(s, run.plan[k]);
    run.trajectory.emplace_back(s, a);
    run.subtask_index.push_back(static_cast<int>(k));
    s = step(s, a);
  }
  run.boundaries.assign(run.plan.size(), static_cast<int>(run.trajectory.size()));
  for (int t = static_cast<int>(run.subtask_index.size()) - 1; t >= 0; --t) {
    run.boundaries[run.subtask_index[t]] = t;
  }
  // Subtasks never entered (none for oracle runs) inherit the next boundary.
  for (int i = static_cast<int>(run.boundaries.size()) - 2; i >= 0; --i) {
    run.boundaries[i] = std::min(run.boundaries[i], run.boundaries[i + 1]);
  }
  run.final_state = s;
  return run;
}

inline Demonstration demo(TaskFamily family, int n_objects, std::uint64_t seed,
                          bool with_thoughts, int grid_size = kDefaultGridSize,
                          const OracleConfig& cfg = {}) {
  const WorldState initial = reset(family, n_objects, seed, grid_size);
  OracleRun run = run_oracle(initial);
  Demonstration d;
  d.task = initial.task;
  d.seed = seed;
  d.success = check_success(run.final_state);
  std::vector<Thought> thoughts;
  if (with_thoughts) thoughts = annotate(run.trajectory, run.plan, run.boundaries, cfg);
  for (std::size_t t = 0; t < run.trajectory.size(); ++t) {
    DemoStep step;
    step.observation = run.trajectory[t].first;
    step.action = run.trajectory[t].second;
    if (with_thoughts) step.thought = thoughts[t];
    step.subtask_index = run.subtask_index[t];
    d.steps.push_back(std::move(step));
  }
  return d;
}

// Single-pick segmentation from gripper events: boundaries
// {0, reach grasp, grasp, reach release}.
inline std::vector<int> extract_keyframes(const Trajectory& trajectory,
                                          const OracleConfig& cfg = {}) {
  std::vector<int> grasps, releases;
  for (std::size_t t = 0; t < trajectory.size(); ++t) {
    const auto& [s, a] = trajectory[t];
    if (s.gripper_state == Grip::open && a.grip == Grip::closed) grasps.push_back(int(t));
    if (s.gripper_state == Grip::closed && a.grip == Grip::open) releases.push_back(int(t));
  }
  if (grasps.size() != 1 || releases.size() != 1) {
    throw SegmentationError("expected one grasp and one release, found " +
                            std::to_string(grasps.size()) + " grasp(s) and " +
                            std::to_string(releases.size()) + " release(s)");
  }
  const int grasp = grasps.front();
  const int release = releases.front();
  if (release < grasp) throw SegmentationError("release precedes grasp");
  auto cell_after = [&](int t) { return step(trajectory[t].first, trajectory[t].second).gripper_pos; };
  const GridPos grasp_pos = cell_after(grasp);
  const GridPos release_pos = cell_after(release);
  auto first_within = [&](int from, int to, GridPos p) {
    for (int t = from; t <= to; ++t) {
      if (chebyshev(trajectory[t].first.gripper_pos, p) <= cfg.keyframe_distance) return t;
    }
    return to;
  };
  return {0, first_within(0, grasp, grasp_pos), grasp,
          first_within(grasp + 1, release, release_pos)};
}

// Oracle's position in the task for an arbitrary live state, derived from
// scene progress rather than from a recorded plan. Throws PlanningError when
// the state has left the space the oracle can recover from.
struct LivePlan {
  Subtask current;
  std::optional<Subtask> next;
};

inline LivePlan live_plan(const WorldState& s) {
  const TaskSpec& task = s.task;
  ObjectId subject = task.subject;
  ObjectId reference = task.reference.value_or(-1);
  std::optional<Relation> relation = task.relation;
  std::optional<ObjectId> after;  // next tower object, if any
  if (task.family == TaskFamily::StackTower) {
    const auto& order = task.object_order;
    auto base = s.locate(order.front());
    if (!base || base->second != 0) throw PlanningError("tower base was moved");
    const auto& stack = *s.stack_at(base->first);
    std::size_t k = 0;
    while (k < stack.size() && k < order.size() && stack[k] == order[k]) ++k;
    if (k != stack.size()) throw PlanningError("tower contains a misplaced object");
    if (k == order.size()) throw PlanningError("tower already complete");
    subject = order[k];
    reference = order[k - 1];
    relation.reset();
    if (k + 1 < order.size()) after = order[k + 1];
  }
  if (s.held && *s.held != subject) throw PlanningError("holding the wrong object");
  auto block = [&](SubtaskKind kind) {
    if (kind == SubtaskKind::move_to || kind == SubtaskKind::pick_up) {
      return make_subtask(s, kind, subject);
    }
    return make_subtask(s, kind, subject, reference, relation);
  };
  SubtaskKind kind;
  if (s.held == subject) {
    kind = subtask_done(s, block(SubtaskKind::carry_to)) ? SubtaskKind::place
                                                          : SubtaskKind::carry_to;
  } else {
    auto loc = s.locate(subject);
    if (s.stack_at(loc->first)->back() != subject) {
      throw PlanningError("subject is buried under another object");
    }
    kind = s.gripper_pos == loc->first ? SubtaskKind::pick_up : SubtaskKind::move_to;
  }
  LivePlan out{block(kind), std::nullopt};
  if (kind != SubtaskKind::place) {
    out.next = block(static_cast<SubtaskKind>(static_cast<int>(kind) + 1));
  } else if (after) {
    out.next = make_subtask(s, SubtaskKind::move_to, *after);
  }
  return out;
}

inline Subtask live_subtask(const WorldState& s) { return live_plan(s).current; }

// The thought the oracle would annotate for a live state.
inline Thought live_thought(const WorldState& s, const OracleConfig& cfg = {}) {
  const LivePlan lp = live_plan(s);
  std::vector<Subtask> steps{lp.current};
  if (lp.next) steps.push_back(*lp.next);
  return make_thought(s, steps, 0, cfg);
}

inline Action oracle_policy(const WorldState& s) { return act(s, live_subtask(s)); }

}  // namespace hyt
