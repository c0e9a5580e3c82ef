#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hyt/error.hpp"
#include "hyt/random.hpp"

namespace hyt {

inline constexpr int kDefaultGridSize = 8;
inline constexpr int kMinGridSize = 5;
inline constexpr int kMaxGridSize = 16;
inline constexpr int kMaxObjects = 4;

enum class Shape : std::uint8_t { cube, sphere, triangle, star };
enum class Color : std::uint8_t { red, blue, green, yellow, purple };
enum class Grip : std::uint8_t { open, closed };
enum class TaskFamily : std::uint8_t { PlaceAt, PlaceOnTop, StackTower };
// in_front_of is toward the viewer (smaller y), behind is larger y.
enum class Relation : std::uint8_t { left_of, right_of, behind, in_front_of };

inline constexpr std::array<Shape, 4> kShapes{Shape::cube, Shape::sphere,
                                              Shape::triangle, Shape::star};
inline constexpr std::array<Color, 5> kColors{Color::red, Color::blue,
                                              Color::green, Color::yellow,
                                              Color::purple};
inline constexpr std::array<Relation, 4> kRelations{
    Relation::left_of, Relation::right_of, Relation::behind,
    Relation::in_front_of};
inline constexpr std::array<TaskFamily, 3> kFamilies{
    TaskFamily::PlaceAt, TaskFamily::PlaceOnTop, TaskFamily::StackTower};

inline std::string_view to_string(Shape s) {
  switch (s) {
    case Shape::cube: return "cube";
    case Shape::sphere: return "sphere";
    case Shape::triangle: return "triangle";
    case Shape::star: return "star";
  }
  return "?";
}

inline std::string_view to_string(Color c) {
  switch (c) {
    case Color::red: return "red";
    case Color::blue: return "blue";
    case Color::green: return "green";
    case Color::yellow: return "yellow";
    case Color::purple: return "purple";
  }
  return "?";
}

inline std::string_view to_string(Grip g) {
  return g == Grip::open ? "open" : "closed";
}

inline std::string_view to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::PlaceAt: return "PlaceAt";
    case TaskFamily::PlaceOnTop: return "PlaceOnTop";
    case TaskFamily::StackTower: return "StackTower";
  }
  return "?";
}

inline std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::left_of: return "left_of";
    case Relation::right_of: return "right_of";
    case Relation::behind: return "behind";
    case Relation::in_front_of: return "in_front_of";
  }
  return "?";
}

// Words used when a relation appears in task or subtask text.
inline std::string_view relation_phrase(Relation r) {
  switch (r) {
    case Relation::left_of: return "left of";
    case Relation::right_of: return "right of";
    case Relation::behind: return "behind";
    case Relation::in_front_of: return "in front of";
  }
  return "?";
}

template <typename Enum, std::size_t N>
Enum enum_from_string(std::string_view s, const std::array<Enum, N>& values,
                      std::string_view what) {
  for (Enum v : values) {
    if (to_string(v) == s) return v;
  }
  throw FormatError("unknown " + std::string(what) + " '" + std::string(s) +
                    "'");
}

inline TaskFamily family_from_string(std::string_view s) {
  return enum_from_string(s, kFamilies, "task family");
}
inline Relation relation_from_string(std::string_view s) {
  return enum_from_string(s, kRelations, "relation");
}
inline Grip grip_from_string(std::string_view s) {
  return enum_from_string(s, std::array{Grip::open, Grip::closed}, "grip");
}
inline Shape shape_from_string(std::string_view s) {
  return enum_from_string(s, kShapes, "shape");
}
inline Color color_from_string(std::string_view s) {
  return enum_from_string(s, kColors, "color");
}

struct GridPos {
  int x = 0;
  int y = 0;
  friend bool operator==(const GridPos&, const GridPos&) = default;
  friend auto operator<=>(const GridPos&, const GridPos&) = default;
};

inline int chebyshev(GridPos a, GridPos b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

inline GridPos offset(GridPos p, Relation r) {
  switch (r) {
    case Relation::left_of: return {p.x - 1, p.y};
    case Relation::right_of: return {p.x + 1, p.y};
    case Relation::in_front_of: return {p.x, p.y - 1};
    case Relation::behind: return {p.x, p.y + 1};
  }
  return p;
}

using ObjectId = int;

struct ObjectDef {
  ObjectId id = 0;
  Shape shape = Shape::cube;
  Color color = Color::red;
  friend bool operator==(const ObjectDef&, const ObjectDef&) = default;
};

inline std::string object_phrase(const ObjectDef& o) {
  return "the " + std::string(to_string(o.color)) + " " +
         std::string(to_string(o.shape));
}

struct TaskSpec {
  TaskFamily family = TaskFamily::PlaceAt;
  std::optional<Relation> relation;
  std::vector<ObjectId> object_order;  // StackTower, bottom first
  ObjectId subject = 0;
  std::optional<ObjectId> reference;
  int n_objects = 2;
  std::string text;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct Action {
  int dx = 0;
  int dy = 0;
  Grip grip = Grip::open;
  friend bool operator==(const Action&, const Action&) = default;
};

struct WorldState {
  int grid_size = kDefaultGridSize;
  // Only non-empty stacks are stored; bottom first.
  std::map<GridPos, std::vector<ObjectId>> grid;
  GridPos gripper_pos;
  Grip gripper_state = Grip::open;
  std::optional<ObjectId> held;
  std::vector<ObjectDef> objects;  // sorted by id
  TaskSpec task;
  int step_count = 0;

  friend bool operator==(const WorldState&, const WorldState&) = default;

  const ObjectDef& object(ObjectId id) const {
    for (const auto& o : objects) {
      if (o.id == id) return o;
    }
    throw IntegrityError("unknown object id " + std::to_string(id));
  }

  bool in_bounds(GridPos p) const {
    return p.x >= 0 && p.y >= 0 && p.x < grid_size && p.y < grid_size;
  }

  // Cell and stack level of an object resting on the grid; nullopt if held.
  std::optional<std::pair<GridPos, int>> locate(ObjectId id) const {
    for (const auto& [pos, stack] : grid) {
      for (std::size_t level = 0; level < stack.size(); ++level) {
        if (stack[level] == id) return std::pair{pos, static_cast<int>(level)};
      }
    }
    if (held == id) return std::nullopt;
    throw IntegrityError("object " + std::to_string(id) + " is not in the scene");
  }

  // Cell of an object; a held object is at the gripper.
  GridPos position_of(ObjectId id) const {
    auto loc = locate(id);
    return loc ? loc->first : gripper_pos;
  }

  const std::vector<ObjectId>* stack_at(GridPos p) const {
    auto it = grid.find(p);
    return it == grid.end() ? nullptr : &it->second;
  }
};

enum class SubtaskKind : std::uint8_t { move_to, pick_up, carry_to, place };

inline std::string_view to_string(SubtaskKind k) {
  switch (k) {
    case SubtaskKind::move_to: return "move_to";
    case SubtaskKind::pick_up: return "pick_up";
    case SubtaskKind::carry_to: return "carry_to";
    case SubtaskKind::place: return "place";
  }
  return "?";
}

inline bool is_moving(SubtaskKind k) {
  return k == SubtaskKind::move_to || k == SubtaskKind::carry_to;
}

// One step of the oracle's plan. A carry_to/place without a relation means
// "on top of the reference".
struct Subtask {
  SubtaskKind kind = SubtaskKind::move_to;
  ObjectId subject = 0;
  std::optional<ObjectId> reference;
  std::optional<Relation> relation;
  std::string text;
  friend bool operator==(const Subtask&, const Subtask&) = default;
};

namespace detail {

inline std::string placement_phrase(const WorldState& s, const TaskSpec& t) {
  const auto& ref = s.object(*t.reference);
  if (t.relation) {
    return std::string(relation_phrase(*t.relation)) + " " + object_phrase(ref);
  }
  return "on top of " + object_phrase(ref);
}

}  // namespace detail

inline std::string render_task_text(const WorldState& s, const TaskSpec& t) {
  switch (t.family) {
    case TaskFamily::PlaceAt:
    case TaskFamily::PlaceOnTop:
      return "place " + object_phrase(s.object(t.subject)) + " " +
             detail::placement_phrase(s, t);
    case TaskFamily::StackTower: {
      std::string text = "stack";
      for (std::size_t i = 0; i < t.object_order.size(); ++i) {
        if (i > 0) text += " then";
        text += " " + object_phrase(s.object(t.object_order[i]));
      }
      return text;
    }
  }
  return {};
}

// Checks the structural invariants of a state; throws IntegrityError.
inline void validate(const WorldState& s) {
  if (s.grid_size < kMinGridSize || s.grid_size > kMaxGridSize) {
    throw IntegrityError("grid size out of range");
  }
  if (!s.in_bounds(s.gripper_pos)) throw IntegrityError("gripper out of bounds");
  if (s.held && s.gripper_state != Grip::closed) {
    throw IntegrityError("holding an object with an open gripper");
  }
  std::vector<ObjectId> seen;
  for (const auto& [pos, stack] : s.grid) {
    if (!s.in_bounds(pos)) throw IntegrityError("stack out of bounds");
    if (stack.empty()) throw IntegrityError("empty stack stored");
    seen.insert(seen.end(), stack.begin(), stack.end());
  }
  if (s.held) seen.push_back(*s.held);
  std::sort(seen.begin(), seen.end());
  std::vector<ObjectId> ids;
  for (const auto& o : s.objects) ids.push_back(o.id);
  std::sort(ids.begin(), ids.end());
  if (seen != ids) throw IntegrityError("object conservation violated");
  if (s.step_count < 0) throw IntegrityError("negative step count");
}

// Fresh seeded scene with a solvable task. Identical arguments give a
// bit-identical state.
inline WorldState reset(TaskFamily family, int n_objects, std::uint64_t seed,
                        int grid_size = kDefaultGridSize) {
  if (n_objects < 2 || n_objects > kMaxObjects) {
    throw ConfigError("n_objects must be in {2,3,4}, got " +
                      std::to_string(n_objects));
  }
  if (grid_size < kMinGridSize || grid_size > kMaxGridSize) {
    throw ConfigError("grid size must be in [5,16], got " +
                      std::to_string(grid_size));
  }
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(family) * 16 +
                             static_cast<std::uint64_t>(n_objects)));
  const int cells = grid_size * grid_size;

  for (int attempt = 0;; ++attempt) {
    if (attempt > 1000) throw PlanningError("could not sample a solvable scene");
    WorldState s;
    s.grid_size = grid_size;

    std::vector<int> kinds(kShapes.size() * kColors.size());
    for (std::size_t i = 0; i < kinds.size(); ++i) kinds[i] = static_cast<int>(i);
    shuffle(kinds, rng);
    std::vector<int> cell_ids(cells);
    for (int i = 0; i < cells; ++i) cell_ids[i] = i;
    shuffle(cell_ids, rng);

    for (int i = 0; i < n_objects; ++i) {
      ObjectDef o;
      o.id = i;
      o.shape = kShapes[kinds[i] % kShapes.size()];
      o.color = kColors[kinds[i] / kShapes.size()];
      s.objects.push_back(o);
      GridPos p{cell_ids[i] % grid_size, cell_ids[i] / grid_size};
      s.grid[p] = {o.id};
    }
    // cell_ids[n_objects..] are free; pick one for the gripper.
    const int g = cell_ids[n_objects + uniform_index(rng, cells - n_objects)];
    s.gripper_pos = {g % grid_size, g / grid_size};

    TaskSpec t;
    t.family = family;
    t.n_objects = n_objects;
    std::vector<ObjectId> order(n_objects);
    for (int i = 0; i < n_objects; ++i) order[i] = i;
    shuffle(order, rng);
    switch (family) {
      case TaskFamily::PlaceAt: {
        t.subject = order[0];
        t.reference = order[1];
        t.relation = kRelations[uniform_index(rng, kRelations.size())];
        const GridPos target = offset(s.position_of(*t.reference), *t.relation);
        // Target must be on the grid and empty so success is reachable and
        // not already satisfied.
        if (!s.in_bounds(target) || s.stack_at(target) != nullptr) continue;
        break;
      }
      case TaskFamily::PlaceOnTop:
        t.subject = order[0];
        t.reference = order[1];
        break;
      case TaskFamily::StackTower:
        t.object_order = order;
        t.subject = order.back();
        t.reference = order.front();
        break;
    }
    t.text = render_task_text(s, t);
    s.task = std::move(t);
    return s;
  }
}

// Pure transition. Motion clamps at the edges; a grasp happens on an
// open->closed transition over a non-empty stack, a release on
// closed->open while holding.
inline WorldState step(const WorldState& state, const Action& action) {
  WorldState s = state;
  s.gripper_pos.x = std::clamp(s.gripper_pos.x + std::clamp(action.dx, -1, 1), 0,
                               s.grid_size - 1);
  s.gripper_pos.y = std::clamp(s.gripper_pos.y + std::clamp(action.dy, -1, 1), 0,
                               s.grid_size - 1);
  if (s.gripper_state == Grip::open && action.grip == Grip::closed) {
    auto it = s.grid.find(s.gripper_pos);
    if (it != s.grid.end()) {
      s.held = it->second.back();
      it->second.pop_back();
      if (it->second.empty()) s.grid.erase(it);
    }
  } else if (s.gripper_state == Grip::closed && action.grip == Grip::open) {
    if (s.held) {
      s.grid[s.gripper_pos].push_back(*s.held);
      s.held.reset();
    }
  }
  s.gripper_state = action.grip;
  ++s.step_count;
  return s;
}

inline bool check_success(const WorldState& s) {
  const TaskSpec& t = s.task;
  switch (t.family) {
    case TaskFamily::PlaceAt: {
      if (!t.relation || !t.reference) return false;
      auto subj = s.locate(t.subject);
      auto ref = s.locate(*t.reference);
      if (!subj || !ref) return false;
      return subj->first == offset(ref->first, *t.relation);
    }
    case TaskFamily::PlaceOnTop: {
      if (!t.reference) return false;
      auto subj = s.locate(t.subject);
      auto ref = s.locate(*t.reference);
      if (!subj || !ref) return false;
      return subj->first == ref->first && subj->second == ref->second + 1;
    }
    case TaskFamily::StackTower:
      for (const auto& [pos, stack] : s.grid) {
        if (stack == t.object_order) return true;
      }
      return false;
  }
  return false;
}

// Goal cell of a moving subtask, nullopt for grasp/release subtasks.
inline std::optional<GridPos> remaining_target(const WorldState& s,
                                               const Subtask& sub) {
  auto require = [&](ObjectId id) {
    for (const auto& o : s.objects) {
      if (o.id == id) return;
    }
    throw IntegrityError("subtask refers to missing object " + std::to_string(id));
  };
  require(sub.subject);
  if (sub.reference) require(*sub.reference);
  switch (sub.kind) {
    case SubtaskKind::move_to:
      return s.position_of(sub.subject);
    case SubtaskKind::carry_to: {
      if (!sub.reference) throw IntegrityError("carry_to without a reference");
      const GridPos ref = s.position_of(*sub.reference);
      return sub.relation ? offset(ref, *sub.relation) : ref;
    }
    case SubtaskKind::pick_up:
    case SubtaskKind::place:
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace hyt
