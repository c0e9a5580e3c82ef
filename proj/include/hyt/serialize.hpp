#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyt/error.hpp"
#include "hyt/oracle.hpp"
#include "hyt/world.hpp"

namespace hyt {

using Json = nlohmann::json;

enum class ThoughtFormat : std::uint8_t { short_form, extended };

inline std::string_view to_string(ThoughtFormat f) {
  return f == ThoughtFormat::short_form ? "short" : "extended";
}

inline ThoughtFormat thought_format_from_string(std::string_view s) {
  if (s == "short") return ThoughtFormat::short_form;
  if (s == "extended") return ThoughtFormat::extended;
  throw FormatError("unknown thought format '" + std::string(s) + "'");
}

template <typename T, typename F>
Json optional_to_json(const std::optional<T>& v, F&& f) {
  return v ? Json(f(*v)) : Json(nullptr);
}

inline Json to_json(const TaskSpec& t) {
  return Json{
      {"family", to_string(t.family)},
      {"relation", optional_to_json(t.relation, [](Relation r) { return to_string(r); })},
      {"object_order", t.object_order},
      {"subject", t.subject},
      {"reference", optional_to_json(t.reference, [](ObjectId i) { return i; })},
      {"n_objects", t.n_objects},
      {"text", t.text},
  };
}

inline TaskSpec task_from_json(const Json& j) {
  TaskSpec t;
  t.family = family_from_string(j.at("family").get<std::string>());
  if (!j.at("relation").is_null()) {
    t.relation = relation_from_string(j.at("relation").get<std::string>());
  }
  t.object_order = j.at("object_order").get<std::vector<ObjectId>>();
  t.subject = j.at("subject").get<ObjectId>();
  if (!j.at("reference").is_null()) t.reference = j.at("reference").get<ObjectId>();
  t.n_objects = j.at("n_objects").get<int>();
  t.text = j.at("text").get<std::string>();
  return t;
}

// Scene schema shared by the dataset file and the steering service.
inline Json to_json(const WorldState& s) {
  Json objects = Json::array();
  for (const auto& o : s.objects) {
    objects.push_back({{"id", o.id}, {"shape", to_string(o.shape)}, {"color", to_string(o.color)}});
  }
  Json stacks = Json::array();
  for (const auto& [pos, stack] : s.grid) {
    stacks.push_back({{"x", pos.x}, {"y", pos.y}, {"objects", stack}});
  }
  return Json{
      {"grid_size", s.grid_size},
      {"objects", std::move(objects)},
      {"stacks", std::move(stacks)},
      {"gripper",
       {{"x", s.gripper_pos.x},
        {"y", s.gripper_pos.y},
        {"state", to_string(s.gripper_state)},
        {"held", optional_to_json(s.held, [](ObjectId i) { return i; })}}},
      {"task", to_json(s.task)},
      {"step_count", s.step_count},
  };
}

inline WorldState state_from_json(const Json& j) {
  WorldState s;
  s.grid_size = j.at("grid_size").get<int>();
  for (const auto& o : j.at("objects")) {
    s.objects.push_back({o.at("id").get<ObjectId>(),
                         shape_from_string(o.at("shape").get<std::string>()),
                         color_from_string(o.at("color").get<std::string>())});
  }
  for (const auto& st : j.at("stacks")) {
    s.grid[{st.at("x").get<int>(), st.at("y").get<int>()}] =
        st.at("objects").get<std::vector<ObjectId>>();
  }
  const Json& g = j.at("gripper");
  s.gripper_pos = {g.at("x").get<int>(), g.at("y").get<int>()};
  s.gripper_state = grip_from_string(g.at("state").get<std::string>());
  if (!g.at("held").is_null()) s.held = g.at("held").get<ObjectId>();
  s.task = task_from_json(j.at("task"));
  s.step_count = j.at("step_count").get<int>();
  validate(s);
  return s;
}

inline Json to_json(const Action& a) {
  return Json{{"dx", a.dx}, {"dy", a.dy}, {"grip", to_string(a.grip)}};
}

inline Action action_from_json(const Json& j) {
  Action a{j.at("dx").get<int>(), j.at("dy").get<int>(),
           grip_from_string(j.at("grip").get<std::string>())};
  if (a.dx < -1 || a.dx > 1 || a.dy < -1 || a.dy > 1) {
    throw FormatError("action delta out of range");
  }
  return a;
}

inline Json to_json(const Thought& t) {
  auto str = [](const std::string& v) { return v; };
  return Json{{"subtask", t.subtask_text},
              {"move", optional_to_json(t.move_label, str)},
              {"plan", optional_to_json(t.plan_text, str)}};
}

inline Thought thought_from_json(const Json& j) {
  Thought t;
  t.subtask_text = j.at("subtask").get<std::string>();
  if (!j.at("move").is_null()) t.move_label = j.at("move").get<std::string>();
  if (!j.at("plan").is_null()) t.plan_text = j.at("plan").get<std::string>();
  return t;
}

inline Json to_json(const Demonstration& d) {
  Json steps = Json::array();
  for (const auto& s : d.steps) {
    steps.push_back({{"observation", to_json(s.observation)},
                     {"action", to_json(s.action)},
                     {"thought", s.thought ? to_json(*s.thought) : Json(nullptr)},
                     {"subtask_index", s.subtask_index}});
  }
  return Json{{"seed", d.seed}, {"success", d.success}, {"task", to_json(d.task)},
              {"steps", std::move(steps)}};
}

inline Demonstration demonstration_from_json(const Json& j) {
  Demonstration d;
  d.seed = j.at("seed").get<std::uint64_t>();
  d.success = j.at("success").get<bool>();
  d.task = task_from_json(j.at("task"));
  int last_index = 0;
  for (const auto& s : j.at("steps")) {
    DemoStep step;
    step.observation = state_from_json(s.at("observation"));
    step.action = action_from_json(s.at("action"));
    if (!s.at("thought").is_null()) step.thought = thought_from_json(s.at("thought"));
    step.subtask_index = s.at("subtask_index").get<int>();
    if (step.subtask_index < last_index) {
      throw FormatError("subtask_index must be non-decreasing");
    }
    last_index = step.subtask_index;
    d.steps.push_back(std::move(step));
  }
  return d;
}

inline constexpr std::string_view kDatasetFormat = "hyt-demonstrations";
inline constexpr int kDatasetVersion = 1;

struct Dataset {
  int grid_size = kDefaultGridSize;
  ThoughtFormat thought_format = ThoughtFormat::short_form;
  std::vector<Demonstration> episodes;

  std::size_t total_steps() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.steps.size();
    return n;
  }
  std::size_t annotated_steps() const {
    std::size_t n = 0;
    for (const auto& e : episodes) {
      for (const auto& s : e.steps) n += s.thought.has_value();
    }
    return n;
  }
};

inline Json dataset_header(const Dataset& ds) {
  return Json{{"format", kDatasetFormat},
              {"version", kDatasetVersion},
              {"grid_size", ds.grid_size},
              {"thought_format", to_string(ds.thought_format)},
              {"episodes", ds.episodes.size()}};
}

// JSON Lines: header record, then one demonstration per line.
inline std::string dataset_to_string(const Dataset& ds) {
  std::string out = dataset_header(ds).dump() + "\n";
  for (const auto& e : ds.episodes) out += to_json(e).dump() + "\n";
  return out;
}

inline Dataset dataset_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty dataset file");
  const Json header = Json::parse(line);
  if (header.value("format", "") != kDatasetFormat) {
    throw FormatError("not a demonstration dataset");
  }
  if (header.at("version").get<int>() != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + header.at("version").dump());
  }
  Dataset ds;
  ds.grid_size = header.at("grid_size").get<int>();
  ds.thought_format = thought_format_from_string(header.at("thought_format").get<std::string>());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ds.episodes.push_back(demonstration_from_json(Json::parse(line)));
  }
  if (ds.episodes.size() != header.at("episodes").get<std::size_t>()) {
    throw FormatError("episode count does not match header");
  }
  return ds;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path);
}

inline Dataset load_dataset(const std::string& path) {
  return dataset_from_string(read_file(path));
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  write_file(path, dataset_to_string(ds));
}

struct DatasetSpec {
  TaskFamily family = TaskFamily::PlaceAt;
  int total = 400;
  std::uint64_t seed_base = 0;
  double annotated_fraction = 1.0;
  ThoughtFormat thought_format = ThoughtFormat::short_form;
  int grid_size = kDefaultGridSize;
  int n_objects = 0;  // 0: 1:2:1 mix over 2/3/4 objects
};

// Per-variant episode counts in the 1:2:1 ratio over 2/3/4 objects.
inline std::array<int, 3> variant_counts(int total) {
  const int two = total / 4;
  const int three = total / 2;
  return {two, three, total - two - three};
}

// Oracle dataset for one task family. Episode i uses seed seed_base + i;
// annotated episodes are spread evenly at rate annotated_fraction.
inline Dataset generate_dataset(const DatasetSpec& spec) {
  if (spec.total < 0) throw ConfigError("dataset total must be >= 0");
  if (spec.n_objects != 0 && (spec.n_objects < 2 || spec.n_objects > 4)) {
    throw ConfigError("n_objects must be 0 (mix) or 2..4");
  }
  Dataset ds;
  ds.grid_size = spec.grid_size;
  ds.thought_format = spec.thought_format;
  std::array<int, 3> counts = variant_counts(spec.total);
  if (spec.n_objects != 0) {
    counts = {0, 0, 0};
    counts[spec.n_objects - 2] = spec.total;
  }
  auto annotated = [f = spec.annotated_fraction](int i) {
    return std::floor((i + 1) * f + 1e-9) > std::floor(i * f + 1e-9);
  };
  std::uint64_t seed = spec.seed_base;
  int index = 0;
  for (int v = 0; v < 3; ++v) {
    for (int i = 0; i < counts[v]; ++i, ++index, ++seed) {
      Demonstration d = demo(spec.family, v + 2, seed, annotated(index), spec.grid_size);
      if (spec.thought_format == ThoughtFormat::short_form) {
        for (auto& s : d.steps) {
          if (s.thought) s.thought->plan_text.reset();
        }
      }
      ds.episodes.push_back(std::move(d));
    }
  }
  return ds;
}

}  // namespace hyt
