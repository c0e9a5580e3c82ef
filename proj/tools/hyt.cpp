// Command-line front end: dataset generation, training, evaluation,
// reporting and the steering service.

#include <csignal>
#include <cstdio>
#include <iostream>

#include "hyt/report.hpp"
#include "hyt/service.hpp"

#include "CLI11.hpp"

namespace {

using hyt::Json;

Json read_json_file(const std::string& path) {
  try {
    return Json::parse(hyt::read_file(path));
  } catch (const Json::parse_error& e) {
    throw hyt::ConfigError(path + ": " + e.what());
  }
}

int exit_code(const hyt::Error& e) {
  if (dynamic_cast<const hyt::ConfigError*>(&e) || dynamic_cast<const hyt::UsageError*>(&e)) return 2;
  if (dynamic_cast<const hyt::FormatError*>(&e)) return 3;
  if (dynamic_cast<const hyt::DivergenceError*>(&e)) return 4;
  return 1;
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid act/think/follow policy lab"};
  app.require_subcommand(1);

  // gen-data
  hyt::DatasetSpec spec;
  std::string family = "PlaceAt", thought_format = "short", data_out = "data.jsonl";
  auto* gen = app.add_subcommand("gen-data", "Generate oracle demonstrations as JSON lines");
  gen->add_option("--family", family, "PlaceAt | PlaceOnTop | StackTower")->capture_default_str();
  gen->add_option("--total", spec.total, "Episodes, split 1:2:1 over 2/3/4 objects")->capture_default_str();
  gen->add_option("--seed-base", spec.seed_base, "First episode seed")->capture_default_str();
  gen->add_option("--annotated-fraction", spec.annotated_fraction, "Fraction of episodes with thoughts")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  gen->add_option("--thought-format", thought_format, "short | long")->capture_default_str();
  gen->add_option("--grid", spec.grid_size, "Grid side length")->capture_default_str();
  gen->add_option("--n-objects", spec.n_objects, "Single variant (2..4); 0 keeps the 1:2:1 mix")->capture_default_str();
  gen->add_option("-o,--out", data_out, "Output file")->capture_default_str();

  // train
  std::string train_config, resume, train_out;
  auto* tr = app.add_subcommand("train", "Train a policy from a JSON config");
  tr->add_option("--config", train_config, "Training config file")->required();
  tr->add_option("--resume", resume, "Checkpoint to resume from");
  tr->add_option("--output-dir", train_out, "Override output_dir");

  // eval
  std::string eval_config;
  auto* ev = app.add_subcommand("eval", "Evaluate checkpoints from a JSON config");
  ev->add_option("--config", eval_config, "Evaluation config file")->required();

  // oracle-study
  std::string study_ckpt, study_out;
  int study_episodes = 100, study_workers = 0;
  auto* st = app.add_subcommand("oracle-study", "act / think / think+oracle / follow+oracle comparison");
  st->add_option("--checkpoint", study_ckpt, "Checkpoint")->required();
  st->add_option("--episodes", study_episodes, "Episodes per variant")->capture_default_str();
  st->add_option("--workers", study_workers, "Worker threads (0 = all cores)");
  st->add_option("-o,--out", study_out, "CSV output (default stdout)");

  // scaling
  std::string scaling_config;
  auto* sc = app.add_subcommand("scaling", "Train and evaluate the data-scaling sweep");
  sc->add_option("--config", scaling_config, "Sweep config file")->required();

  // report
  std::string metrics_dir;
  auto* rp = app.add_subcommand("report", "Summarize training metrics and sweep results");
  rp->add_option("--metrics", metrics_dir, "Directory searched for metrics.csv files")->required();

  // serve
  std::string host = "127.0.0.1", serve_ckpt;
  int port = 8080, ttl_minutes = 30;
  auto* sv = app.add_subcommand("serve", "Run the HTTP steering service");
  sv->add_option("--host", host, "Bind address")->capture_default_str();
  sv->add_option("--port", port, "Port")->capture_default_str();
  sv->add_option("--checkpoint", serve_ckpt, "Default checkpoint for new sessions")->required();
  sv->add_option("--ttl-minutes", ttl_minutes, "Idle session lifetime")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      spec.family = hyt::family_from_string(family);
      spec.thought_format = hyt::thought_format_from_string(thought_format);
      const hyt::Dataset ds = hyt::generate_dataset(spec);
      hyt::save_dataset(ds, data_out);
      std::cout << "wrote " << ds.episodes.size() << " episodes (" << ds.total_steps() << " steps) to " << data_out
                << '\n';
    } else if (*tr) {
      Json j = read_json_file(train_config);
      if (!resume.empty()) j["resume_from"] = resume;
      if (!train_out.empty()) j["output_dir"] = train_out;
      const hyt::TrainConfig cfg = hyt::TrainConfig::from_json(j);
      const hyt::TrainResult r = hyt::train(cfg);
      for (const auto& m : r.metrics) std::cout << hyt::metrics_row(m) << '\n';
      for (const auto& c : r.checkpoints) std::cout << "checkpoint " << c << '\n';
    } else if (*ev) {
      const hyt::EvalConfig cfg = hyt::EvalConfig::from_json(read_json_file(eval_config));
      const auto rows = hyt::evaluate(cfg);
      std::cout << hyt::kEvalHeader << '\n';
      for (const auto& r : rows) std::cout << hyt::eval_row_csv(r) << '\n';
    } else if (*st) {
      const auto model = hyt::load_policy(study_ckpt);
      std::vector<hyt::TaskVariant> variants;
      for (auto f : {hyt::TaskFamily::PlaceAt, hyt::TaskFamily::PlaceOnTop, hyt::TaskFamily::StackTower}) {
        for (int n = 2; n <= 4; ++n) variants.push_back({f, n});
      }
      const std::string csv = hyt::oracle_study_csv(
          hyt::oracle_follow_eval(model, variants, study_episodes, hyt::kDefaultEvalSeedBase, study_workers));
      if (study_out.empty()) {
        std::cout << csv;
      } else {
        hyt::write_file(study_out, csv);
      }
    } else if (*sc) {
      const auto rep = hyt::scaling_report(hyt::ScalingConfig::from_json(read_json_file(scaling_config)));
      std::cout << hyt::scaling_csv(rep) << rep.trend_note << '\n';
    } else if (*rp) {
      std::cout << hyt::metrics_report(metrics_dir);
    } else if (*sv) {
      hyt::SessionOptions opt;
      opt.default_checkpoint = serve_ckpt;
      opt.ttl = std::chrono::minutes(ttl_minutes);
      hyt::load_policy(serve_ckpt);  // fail fast on a bad checkpoint
      hyt::SessionManager sessions(opt);
      httplib::Server server;
      hyt::install_routes(server, sessions);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << host << ':' << port << '\n';
      if (!server.listen(host, port)) throw hyt::ConfigError("cannot bind " + host + ":" + std::to_string(port));
    }
  } catch (const hyt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
