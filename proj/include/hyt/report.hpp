#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyt/error.hpp"
#include "hyt/eval.hpp"
#include "hyt/serialize.hpp"
#include "hyt/train.hpp"

namespace hyt {

// ---------------------------------------------------------------------------
// Training paradigms of the data-scaling sweep.

enum class Paradigm : std::uint8_t { hyt, act_only, think_only, follow_only, hierarchical };

inline std::string_view to_string(Paradigm p) {
  static constexpr std::string_view names[] = {"hyt", "act-only", "think-only", "follow-only", "hierarchical"};
  return names[static_cast<int>(p)];
}

inline Paradigm paradigm_from_string(std::string_view s) {
  for (Paradigm p : {Paradigm::hyt, Paradigm::act_only, Paradigm::think_only, Paradigm::follow_only,
                     Paradigm::hierarchical}) {
    if (to_string(p) == s) return p;
  }
  throw ConfigError("unknown paradigm '" + std::string(s) + "'");
}

inline void apply_paradigm_weights(Paradigm p, ModalityConfig& m) {
  switch (p) {
    case Paradigm::hyt: m.w_act = 0.25, m.w_think = 0.5, m.w_follow = 0.25; break;
    case Paradigm::act_only: m.w_act = 1, m.w_think = 0, m.w_follow = 0; break;
    case Paradigm::think_only: m.w_act = 0, m.w_think = 1, m.w_follow = 0; break;
    case Paradigm::follow_only: m.w_act = 0, m.w_think = 0, m.w_follow = 1; break;
    case Paradigm::hierarchical: throw ConfigError("hierarchical is an evaluation of two trained paradigms");
  }
}

// Models each paradigm needs (hierarchical pairs a thought model with a
// follow model) and the mode it is evaluated in.
inline std::vector<Paradigm> trained_models(Paradigm p) {
  if (p == Paradigm::hierarchical) return {Paradigm::think_only, Paradigm::follow_only};
  return {p};
}

inline EvalMode eval_mode_for(Paradigm p) {
  switch (p) {
    case Paradigm::think_only: return EvalMode::think;
    case Paradigm::follow_only: return EvalMode::follow;
    case Paradigm::hierarchical: return EvalMode::hierarchical;
    default: return EvalMode::act;
  }
}

struct ScalingConfig {
  std::vector<int> sizes{100, 200, 400};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<Paradigm> paradigms{Paradigm::hyt, Paradigm::act_only, Paradigm::think_only, Paradigm::hierarchical};
  TrainConfig train;  // paths and weights are filled in per run
  std::string root = "scaling";
  std::uint64_t data_seed_base = 0;
  int data_n_objects = 0;  // 0: 1:2:1 mix over 2/3/4 objects
  int n_episodes = 100;
  std::uint64_t eval_seed_base = kDefaultEvalSeedBase;
  std::vector<TaskVariant> variants{{TaskFamily::PlaceAt, 2}};
  bool train_missing = true;
  int workers = 0;

  static ScalingConfig from_json(const nlohmann::json& j) {
    ScalingConfig c;
    c.sizes = j.value("sizes", c.sizes);
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("paradigms")) {
      c.paradigms.clear();
      for (const auto& p : j.at("paradigms")) c.paradigms.push_back(paradigm_from_string(p.get<std::string>()));
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    c.root = j.value("root", c.root);
    c.data_seed_base = j.value("data_seed_base", c.data_seed_base);
    c.data_n_objects = j.value("data_n_objects", c.data_n_objects);
    c.n_episodes = j.value("n_episodes", c.n_episodes);
    c.eval_seed_base = j.value("eval_seed_base", c.eval_seed_base);
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j.at("variants")) {
        c.variants.push_back({family_from_string(v.at("family").get<std::string>()), v.at("n_objects").get<int>()});
      }
    }
    c.train_missing = j.value("train_missing", c.train_missing);
    c.workers = j.value("workers", c.workers);
    if (c.sizes.empty() || c.seeds.empty() || c.paradigms.empty()) {
      throw ConfigError("scaling sweep needs sizes, seeds and paradigms");
    }
    return c;
  }
};

inline std::string dataset_path(const ScalingConfig& c, int size) {
  return (std::filesystem::path(c.root) / ("data_n" + std::to_string(size) + ".jsonl")).string();
}

inline std::string run_dir(const ScalingConfig& c, Paradigm p, int size, std::uint64_t seed) {
  return (std::filesystem::path(c.root) /
          (std::string(to_string(p)) + "_n" + std::to_string(size) + "_s" + std::to_string(seed)))
      .string();
}

inline std::string final_checkpoint(const ScalingConfig& c, Paradigm p, int size, std::uint64_t seed) {
  return (std::filesystem::path(run_dir(c, p, size, seed)) / ("epoch_" + std::to_string(c.train.epochs) + ".ckpt"))
      .string();
}

// Trains one run into run_dir unless its final checkpoint exists. The
// dataset file is generated from `data` on first use.
inline std::string train_if_missing(TrainConfig tc, const DatasetSpec& data, const std::string& data_path,
                                    const std::string& run_dir, std::uint64_t seed) {
  const std::string ckpt =
      (std::filesystem::path(run_dir) / ("epoch_" + std::to_string(tc.epochs) + ".ckpt")).string();
  if (std::filesystem::exists(ckpt)) return ckpt;
  if (!std::filesystem::exists(data_path)) {
    const auto parent = std::filesystem::path(data_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    save_dataset(generate_dataset(data), data_path);
  }
  tc.seed = seed;
  tc.net.seed = seed;
  tc.dataset_path = data_path;
  tc.output_dir = run_dir;
  tc.checkpoint_epochs = {tc.epochs};
  // Resume an interrupted run when its last checkpoint is present.
  const auto last = std::filesystem::path(run_dir) / "last.ckpt";
  tc.resume_from = std::filesystem::exists(last) ? last.string() : "";
  train(tc);
  return ckpt;
}

// Trains one cell of the sweep unless its final checkpoint already exists.
inline std::string ensure_trained(const ScalingConfig& c, Paradigm p, int size, std::uint64_t seed) {
  const std::string ckpt = final_checkpoint(c, p, size, seed);
  if (std::filesystem::exists(ckpt) || !c.train_missing) return ckpt;
  DatasetSpec spec;
  spec.family = c.variants.front().family;
  spec.total = size;
  spec.seed_base = c.data_seed_base;
  spec.n_objects = c.data_n_objects;
  spec.thought_format = c.train.modality.thought_format;
  TrainConfig tc = c.train;
  apply_paradigm_weights(p, tc.modality);
  return train_if_missing(tc, spec, dataset_path(c, size), run_dir(c, p, size, seed), seed);
}

struct ScalingRow {
  TaskVariant variant;
  int size = 0;
  Paradigm paradigm = Paradigm::hyt;
  int seeds_present = 0;
  int seeds_total = 0;
  int episodes = 0;
  double success = 0;  // seed average
  double stderr_ = 0;  // pooled over all episodes
  double tokens_per_step = 0;
  bool absent = true;
};

struct ScalingReport {
  std::vector<ScalingRow> rows;
  std::optional<bool> trend_holds;  // HyT >= act-only at the smallest size
  std::string trend_note;
};

inline constexpr std::string_view kScalingHeader =
    "family,n_objects,size,paradigm,mode,seeds_present,seeds_total,episodes,success,stderr,tokens_per_step,absent";

inline std::string scaling_csv(const ScalingReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << kScalingHeader << '\n';
  for (const auto& row : r.rows) {
    os << to_string(row.variant.family) << ',' << row.variant.n_objects << ',' << row.size << ','
       << to_string(row.paradigm) << ',' << to_string(eval_mode_for(row.paradigm)) << ',' << row.seeds_present << ','
       << row.seeds_total << ',' << row.episodes << ',';
    if (row.absent) {
      os << ",,,1\n";
    } else {
      os << row.success << ',' << row.stderr_ << ',' << row.tokens_per_step << ",0\n";
    }
  }
  return os.str();
}

// Whitespace-separated blocks, one per (variant, paradigm), for plotting
// success against dataset size.
inline std::string scaling_plot_data(const ScalingReport& r) {
  std::ostringstream os;
  os.precision(6);
  std::map<std::string, std::vector<const ScalingRow*>> blocks;
  for (const auto& row : r.rows) {
    blocks[std::string(to_string(row.variant.family)) + "-" + std::to_string(row.variant.n_objects) + " " +
           std::string(to_string(row.paradigm))]
        .push_back(&row);
  }
  for (const auto& [name, rows] : blocks) {
    os << "# " << name << "\n# size success stderr\n";
    for (const auto* row : rows) {
      if (row->absent) {
        os << row->size << " nan nan\n";
      } else {
        os << row->size << ' ' << row->success << ' ' << row->stderr_ << '\n';
      }
    }
    os << "\n\n";
  }
  return os.str();
}

inline std::optional<std::shared_ptr<const Policy>> try_load(const std::string& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  return load_policy(path);
}

// Trains missing cells (when enabled), evaluates every available cell and
// writes scaling.csv and scaling_plot.dat under the sweep root. Missing
// checkpoints leave their cell marked absent.
inline ScalingReport scaling_report(const ScalingConfig& c) {
  ScalingReport rep;
  for (const auto& v : c.variants) {
    for (int size : c.sizes) {
      for (Paradigm p : c.paradigms) {
        ScalingRow row;
        row.variant = v;
        row.size = size;
        row.paradigm = p;
        row.seeds_total = static_cast<int>(c.seeds.size());
        double rate_sum = 0, tokens = 0, steps = 0;
        int successes = 0;
        for (std::uint64_t seed : c.seeds) {
          std::vector<std::shared_ptr<const Policy>> models;
          for (Paradigm m : trained_models(p)) {
            const std::string ckpt = c.train_missing ? ensure_trained(c, m, size, seed) : final_checkpoint(c, m, size, seed);
            if (auto pol = try_load(ckpt)) models.push_back(*pol);
          }
          if (models.size() != trained_models(p).size()) continue;
          RolloutOptions opt;
          opt.mode = eval_mode_for(p);
          const auto eps = run_episodes(models, v, c.n_episodes, c.eval_seed_base, opt, kDefaultGridSize, c.workers);
          const EvalRow s = summarize(eps);
          ++row.seeds_present;
          rate_sum += s.success_rate;
          successes += s.successes;
          row.episodes += s.n;
          tokens += s.tokens_per_step * s.mean_steps * s.n;
          steps += s.mean_steps * s.n;
        }
        if (row.seeds_present > 0) {
          row.absent = false;
          row.success = rate_sum / row.seeds_present;
          row.stderr_ = success_stderr(double(successes) / std::max(1, row.episodes), row.episodes);
          row.tokens_per_step = steps > 0 ? tokens / steps : 0.0;
        }
        rep.rows.push_back(row);
      }
    }
  }
  const int smallest = *std::min_element(c.sizes.begin(), c.sizes.end());
  auto find = [&](Paradigm p) -> const ScalingRow* {
    for (const auto& r : rep.rows) {
      if (r.size == smallest && r.paradigm == p && r.variant == c.variants.front() && !r.absent) return &r;
    }
    return nullptr;
  };
  const ScalingRow* h = find(Paradigm::hyt);
  const ScalingRow* a = find(Paradigm::act_only);
  std::ostringstream note;
  if (h && a) {
    rep.trend_holds = h->success >= a->success;
    note << "smallest size " << smallest << ": hyt " << h->success << " vs act-only " << a->success
         << (*rep.trend_holds ? " (hyt >= act-only)" : " (FLAGGED: hyt below act-only)");
  } else {
    note << "smallest size " << smallest << ": trend not computable (hyt or act-only cell absent)";
  }
  rep.trend_note = note.str();
  std::filesystem::create_directories(c.root);
  write_file((std::filesystem::path(c.root) / "scaling.csv").string(), scaling_csv(rep));
  write_file((std::filesystem::path(c.root) / "scaling_plot.dat").string(), scaling_plot_data(rep));
  write_file((std::filesystem::path(c.root) / "scaling_trend.txt").string(), rep.trend_note + "\n");
  return rep;
}

// ---------------------------------------------------------------------------
// Summary of training metrics files under a directory.

struct RunSummary {
  std::string run;
  int epochs = 0;
  std::string last_row;
};

inline std::vector<RunSummary> summarize_metrics(const std::string& dir) {
  if (!std::filesystem::exists(dir)) throw ConfigError("metrics directory not found: " + dir);
  std::vector<RunSummary> out;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != "metrics.csv") continue;
    std::ifstream in(entry.path());
    std::string line, last;
    int rows = 0;
    std::getline(in, line);
    if (line != kMetricsHeader) throw FormatError("unexpected metrics header in " + entry.path().string());
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      last = line;
      ++rows;
    }
    out.push_back({std::filesystem::relative(entry.path().parent_path(), dir).string(), rows, last});
  }
  std::sort(out.begin(), out.end(), [](const RunSummary& a, const RunSummary& b) { return a.run < b.run; });
  return out;
}

inline std::string metrics_report(const std::string& dir) {
  std::ostringstream os;
  const auto runs = summarize_metrics(dir);
  os << "run,epochs," << kMetricsHeader << '\n';
  for (const auto& r : runs) os << r.run << ',' << r.epochs << ',' << r.last_row << '\n';
  const auto scaling = std::filesystem::path(dir) / "scaling.csv";
  if (std::filesystem::exists(scaling)) os << '\n' << read_file(scaling.string());
  const auto trend = std::filesystem::path(dir) / "scaling_trend.txt";
  if (std::filesystem::exists(trend)) os << '\n' << read_file(trend.string());
  return os.str();
}

}  // namespace hyt
