#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyt/codec.hpp"
#include "hyt/error.hpp"
#include "hyt/net.hpp"
#include "hyt/random.hpp"
#include "hyt/serialize.hpp"

namespace hyt {

// ---------------------------------------------------------------------------
// Configuration.

struct TrainConfig {
  ModalityConfig modality;
  NetConfig net;  // vocab_size is filled in from the vocabulary
  int batch_size = 32;
  // Training from scratch; large pretrained backbones are usually tuned near 2e-5.
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  int epochs = 10;
  std::vector<int> checkpoint_epochs;  // empty means {epochs}
  int steps_per_epoch = 0;             // 0 means ceil(dataset steps / batch_size)
  std::uint64_t seed = 0;
  std::string dataset_path;
  std::string output_dir = "run";
  std::string resume_from;

  std::vector<int> effective_checkpoints() const {
    return checkpoint_epochs.empty() ? std::vector<int>{epochs} : checkpoint_epochs;
  }

  void validate() const {
    modality.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (steps_per_epoch < 0) throw ConfigError("steps_per_epoch must be >= 0");
    for (int e : checkpoint_epochs) {
      if (e < 1 || e > epochs) {
        throw ConfigError("checkpoint epoch " + std::to_string(e) + " outside [1, epochs]");
      }
    }
  }

  nlohmann::json to_json() const {
    return {{"modality",
             {{"w_act", modality.w_act},
              {"w_think", modality.w_think},
              {"w_follow", modality.w_follow},
              {"thought_format", to_string(modality.thought_format)},
              {"chunk_size", modality.chunk_size},
              {"action_bins", modality.action_bins},
              {"action_encoding", to_string(modality.action_encoding)}}},
            {"net", net.to_json()},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"beta1", beta1},
            {"beta2", beta2},
            {"eps", eps},
            {"grad_clip", grad_clip},
            {"epochs", epochs},
            {"checkpoint_epochs", checkpoint_epochs},
            {"steps_per_epoch", steps_per_epoch},
            {"seed", seed},
            {"dataset", dataset_path},
            {"output_dir", output_dir},
            {"resume_from", resume_from}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    if (j.contains("modality")) {
      const auto& m = j.at("modality");
      c.modality.w_act = m.value("w_act", c.modality.w_act);
      c.modality.w_think = m.value("w_think", c.modality.w_think);
      c.modality.w_follow = m.value("w_follow", c.modality.w_follow);
      c.modality.thought_format =
          thought_format_from_string(m.value("thought_format", std::string("short")));
      c.modality.chunk_size = m.value("chunk_size", c.modality.chunk_size);
      c.modality.action_bins = m.value("action_bins", c.modality.action_bins);
      c.modality.action_encoding =
          action_encoding_from_string(m.value("action_encoding", std::string("bins")));
    }
    if (j.contains("net")) c.net = NetConfig::from_json(j.at("net"));
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.epochs = j.value("epochs", c.epochs);
    c.checkpoint_epochs = j.value("checkpoint_epochs", c.checkpoint_epochs);
    c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
    c.seed = j.value("seed", c.seed);
    c.dataset_path = j.value("dataset", c.dataset_path);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.resume_from = j.value("resume_from", c.resume_from);
    c.validate();
    return c;
  }

  // Identifies settings that affect the parameter trajectory; paths and
  // the epoch schedule are excluded so a run can be extended.
  std::string digest() const {
    nlohmann::json j = to_json();
    j.erase("epochs");
    j.erase("checkpoint_epochs");
    j.erase("dataset");
    j.erase("output_dir");
    j.erase("resume_from");
    const std::string s = j.dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
  }
};

// ---------------------------------------------------------------------------
// Modality sampling and batch construction.

// Categorical draw over (act, think, follow). Exactly one uniform is
// consumed per call; steps without a thought always train act.
inline Modality sample_modality(const ModalityConfig& cfg, bool has_thought, Rng& rng) {
  const double u = uniform01(rng);
  if (!has_thought) return Modality::act;
  if (u < cfg.w_act) return Modality::act;
  if (u < cfg.w_act + cfg.w_think) return Modality::think;
  if (cfg.w_follow > 0.0) return Modality::follow;
  return cfg.w_think > 0.0 ? Modality::think : Modality::act;
}

struct StepRef {
  std::uint32_t episode = 0;
  std::uint32_t step = 0;
};

class StepIndex {
 public:
  explicit StepIndex(const Dataset& ds) {
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
      for (std::size_t s = 0; s < ds.episodes[e].steps.size(); ++s) {
        refs_.push_back({static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(s)});
        annotated_ += ds.episodes[e].steps[s].thought.has_value();
      }
    }
  }
  std::size_t size() const { return refs_.size(); }
  std::size_t annotated() const { return annotated_; }
  const StepRef& operator[](std::size_t i) const { return refs_[i]; }

 private:
  std::vector<StepRef> refs_;
  std::size_t annotated_ = 0;
};

// Two independent streams: one picks steps, one picks modalities, so a
// degenerate weight vector reproduces a single-modality batch stream.
struct BatchStreams {
  Rng steps;
  Rng modalities;

  explicit BatchStreams(std::uint64_t seed)
      : steps(mix_seed(seed, 0x5354)), modalities(mix_seed(seed, 0x4d4f)) {}
};

inline void check_satisfiable(const StepIndex& index, const ModalityConfig& cfg) {
  if (index.size() == 0) throw ConfigError("dataset has no steps");
  if (index.annotated() == 0 && cfg.w_act == 0.0) {
    throw ConfigError("dataset has no annotated steps but w_act = 0: nothing can be sampled");
  }
}

inline std::vector<TokenSample> make_batch(const Dataset& ds, const StepIndex& index,
                                           const TrainConfig& cfg, const Vocabulary& vocab,
                                           BatchStreams& rng) {
  check_satisfiable(index, cfg.modality);
  std::vector<TokenSample> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));
  for (int i = 0; i < cfg.batch_size; ++i) {
    const StepRef ref = index[uniform_index(rng.steps, index.size())];
    const Demonstration& ep = ds.episodes[ref.episode];
    const Modality m = sample_modality(cfg.modality, ep.steps[ref.step].thought.has_value(), rng.modalities);
    batch.push_back(assemble(ep, ref.step, m, cfg.modality, vocab));
  }
  return batch;
}

// Dedicated single-paradigm assembler (standard act-only or ECoT-style
// think-only training) that never touches the modality stream.
inline std::vector<TokenSample> make_single_modality_batch(const Dataset& ds, const StepIndex& index,
                                                           const TrainConfig& cfg,
                                                           const Vocabulary& vocab, Rng& steps,
                                                           Modality m) {
  std::vector<TokenSample> batch;
  for (int i = 0; i < cfg.batch_size; ++i) {
    const StepRef ref = index[uniform_index(steps, index.size())];
    const Demonstration& ep = ds.episodes[ref.episode];
    const Modality use = ep.steps[ref.step].thought ? m : Modality::act;
    batch.push_back(assemble(ep, ref.step, use, cfg.modality, vocab));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Optimizer and trainer state.

struct AdamState {
  AlignedVector<float> m, v;
  std::int64_t step = 0;
};

inline void adam_update(AlignedVector<float>& params, const AlignedVector<float>& grad, AdamState& st,
                        const TrainConfig& cfg) {
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0f);
    st.v.assign(params.size(), 0.0f);
  }
  double scale = 1.0;
  if (cfg.grad_clip > 0.0) {
    double sq = 0.0;
    for (float g : grad) sq += double(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) scale = cfg.grad_clip / norm;
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float lr_t = static_cast<float>(cfg.learning_rate * std::sqrt(bc2) / bc1);
  const float eps = static_cast<float>(cfg.eps * std::sqrt(bc2));
  const float gs = static_cast<float>(scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grad[i] * gs;
    st.m[i] = b1 * st.m[i] + (1.0f - b1) * g;
    st.v[i] = b2 * st.v[i] + (1.0f - b2) * g * g;
    params[i] -= lr_t * st.m[i] / (std::sqrt(st.v[i]) + eps);
  }
}

struct TrainerState {
  Parameters<float> params;
  AdamState adam;
  int epoch = 0;
  std::string rng_steps;
  std::string rng_modalities;
  std::string vocab_hash;
  std::string config_digest;
  nlohmann::json train_config;
};

// ---------------------------------------------------------------------------
// Checkpoint file: 8-byte magic, u32 format version, u32 header length,
// JSON header, then little-endian float32 blobs (parameters, and Adam
// moments when present).

inline constexpr char kCheckpointMagic[8] = {'H', 'Y', 'T', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw FormatError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

inline void put_floats(std::string& out, const AlignedVector<float>& v) {
  for (float f : v) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline AlignedVector<float> get_floats(const std::string& in, std::size_t& pos, std::size_t n) {
  if (pos + 4 * n > in.size()) throw FormatError("truncated checkpoint blob");
  AlignedVector<float> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(get_u32(in, pos));
  return v;
}

}  // namespace detail

inline std::string checkpoint_bytes(const TrainerState& st) {
  const bool with_opt = !st.adam.m.empty();
  nlohmann::json header{{"format", "hyt-checkpoint"},
                        {"net", st.params.cfg.to_json()},
                        {"vocab_hash", st.vocab_hash},
                        {"config_digest", st.config_digest},
                        {"train_config", st.train_config},
                        {"epoch", st.epoch},
                        {"adam_step", st.adam.step},
                        {"rng_steps", st.rng_steps},
                        {"rng_modalities", st.rng_modalities},
                        {"param_count", st.params.data.size()},
                        {"has_optimizer", with_opt}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  detail::put_floats(out, st.params.data);
  if (with_opt) {
    detail::put_floats(out, st.adam.m);
    detail::put_floats(out, st.adam.v);
  }
  return out;
}

// Parses a checkpoint; when expected_vocab_hash is given a mismatch is
// refused.
inline TrainerState checkpoint_from_bytes(const std::string& bytes,
                                          const std::optional<std::string>& expected_vocab_hash = {}) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError("not a checkpoint file");
  }
  std::size_t pos = 8;
  const std::uint32_t version = detail::get_u32(bytes, pos);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t hlen = detail::get_u32(bytes, pos);
  if (pos + hlen > bytes.size()) throw FormatError("truncated checkpoint header");
  const auto header = nlohmann::json::parse(bytes.substr(pos, hlen));
  pos += hlen;
  TrainerState st;
  st.vocab_hash = header.at("vocab_hash").get<std::string>();
  if (expected_vocab_hash && *expected_vocab_hash != st.vocab_hash) {
    throw FormatError("checkpoint vocabulary hash " + st.vocab_hash + " does not match expected " +
                      *expected_vocab_hash);
  }
  const NetConfig net = NetConfig::from_json(header.at("net"));
  net.validate();
  st.params = Parameters<float>(net);
  const std::size_t n = header.at("param_count").get<std::size_t>();
  if (n != st.params.data.size()) throw FormatError("parameter count does not match network config");
  st.params.data = detail::get_floats(bytes, pos, n);
  if (header.at("has_optimizer").get<bool>()) {
    st.adam.m = detail::get_floats(bytes, pos, n);
    st.adam.v = detail::get_floats(bytes, pos, n);
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes in checkpoint");
  st.adam.step = header.at("adam_step").get<std::int64_t>();
  st.epoch = header.at("epoch").get<int>();
  st.rng_steps = header.at("rng_steps").get<std::string>();
  st.rng_modalities = header.at("rng_modalities").get<std::string>();
  st.config_digest = header.at("config_digest").get<std::string>();
  st.train_config = header.at("train_config");
  return st;
}

inline void save_checkpoint(const TrainerState& st, const std::string& path) {
  write_file(path, checkpoint_bytes(st));
}

inline TrainerState load_checkpoint(const std::string& path,
                                    const std::optional<std::string>& expected_vocab_hash = {}) {
  return checkpoint_from_bytes(read_file(path), expected_vocab_hash);
}

// ---------------------------------------------------------------------------
// Training loop.

struct EpochMetrics {
  int epoch = 0;
  double loss[3] = {0, 0, 0};  // indexed by Modality
  std::size_t count[3] = {0, 0, 0};
  double mean_loss = 0;
  double wall_time_s = 0;
};

inline constexpr std::string_view kMetricsHeader =
    "epoch,loss_act,loss_think,loss_follow,n_act,n_think,n_follow,loss_mean,wall_time_s";

inline std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream os;
  os.precision(9);
  os << m.epoch;
  for (int k = 0; k < 3; ++k) {
    os << ',';
    if (m.count[k] > 0) os << m.loss[k];
  }
  for (int k = 0; k < 3; ++k) os << ',' << m.count[k];
  os << ',' << m.mean_loss << ',' << m.wall_time_s;
  return os.str();
}

struct TrainResult {
  std::vector<std::string> checkpoints;
  std::vector<EpochMetrics> metrics;
  TrainerState state;
};

using BatchHook = std::function<void(int epoch, int batch, const std::vector<TokenSample>&)>;

inline TrainerState fresh_state(const TrainConfig& cfg, const Vocabulary& vocab) {
  NetConfig net = cfg.net;
  net.vocab_size = vocab.size();
  TrainerState st;
  st.params = init<float>(net);
  BatchStreams streams(cfg.seed);
  st.rng_steps = rng_state(streams.steps);
  st.rng_modalities = rng_state(streams.modalities);
  st.vocab_hash = vocab.hash_hex();
  st.config_digest = cfg.digest();
  st.train_config = cfg.to_json();
  return st;
}

// Runs (or resumes) training over an in-memory dataset. Checkpoints and the
// append-only metrics CSV go to cfg.output_dir when it is non-empty.
inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, const BatchHook& hook = {}) {
  cfg.validate();
  const Vocabulary vocab(cfg.modality.action_bins);
  const StepIndex index(ds);
  check_satisfiable(index, cfg.modality);

  TrainResult result;
  TrainerState st;
  if (!cfg.resume_from.empty()) {
    st = load_checkpoint(cfg.resume_from, vocab.hash_hex());
    if (st.config_digest != cfg.digest()) {
      throw ConfigError("resume checkpoint was produced with a different training config");
    }
  } else {
    st = fresh_state(cfg, vocab);
  }
  BatchStreams streams(cfg.seed);
  set_rng_state(streams.steps, st.rng_steps);
  set_rng_state(streams.modalities, st.rng_modalities);

  const int steps_per_epoch =
      cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch
                              : static_cast<int>((index.size() + cfg.batch_size - 1) / cfg.batch_size);
  const auto checkpoints = cfg.effective_checkpoints();
  const bool write = !cfg.output_dir.empty();
  std::string metrics_path;
  if (write) {
    std::filesystem::create_directories(cfg.output_dir);
    metrics_path = (std::filesystem::path(cfg.output_dir) / "metrics.csv").string();
    if (!std::filesystem::exists(metrics_path)) {
      std::ofstream(metrics_path) << kMetricsHeader << '\n';
    }
    write_file((std::filesystem::path(cfg.output_dir) / "vocab.json").string(), vocab.manifest().dump(1));
  }
  const std::string last_good = write ? (std::filesystem::path(cfg.output_dir) / "last.ckpt").string() : "";

  for (int epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochMetrics em;
    em.epoch = epoch;
    double loss_sum = 0;
    for (int b = 0; b < steps_per_epoch; ++b) {
      const auto batch = make_batch(ds, index, cfg, vocab, streams);
      if (hook) hook(epoch, b, batch);
      const auto seqs = to_labeled(batch);
      LossResult<float> r;
      try {
        r = loss_and_grad<float>(st.params, seqs);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("training diverged in epoch ") + std::to_string(epoch) + ": " +
                              e.what() + (write ? "; last good checkpoint: " + last_good : ""));
      }
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const int k = static_cast<int>(batch[i].modality);
        em.loss[k] += r.per_sequence[i];
        ++em.count[k];
      }
      loss_sum += r.loss;
      adam_update(st.params.data, r.grad.data, st.adam, cfg);
      if (!st.params.all_finite()) {
        throw DivergenceError("parameters became non-finite in epoch " + std::to_string(epoch) +
                              (write ? "; last good checkpoint: " + last_good : ""));
      }
    }
    for (int k = 0; k < 3; ++k) {
      if (em.count[k] > 0) em.loss[k] /= static_cast<double>(em.count[k]);
    }
    em.mean_loss = loss_sum / steps_per_epoch;
    em.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    st.epoch = epoch;
    st.rng_steps = rng_state(streams.steps);
    st.rng_modalities = rng_state(streams.modalities);
    result.metrics.push_back(em);
    if (write) {
      std::ofstream(metrics_path, std::ios::app) << metrics_row(em) << '\n';
      save_checkpoint(st, last_good);
      if (std::find(checkpoints.begin(), checkpoints.end(), epoch) != checkpoints.end()) {
        const auto path = (std::filesystem::path(cfg.output_dir) / ("epoch_" + std::to_string(epoch) + ".ckpt")).string();
        save_checkpoint(st, path);
        result.checkpoints.push_back(path);
      }
    }
  }
  result.state = std::move(st);
  return result;
}

inline TrainResult train(const TrainConfig& cfg) {
  if (cfg.dataset_path.empty()) throw ConfigError("training config has no dataset path");
  return train(cfg, load_dataset(cfg.dataset_path));
}

}  // namespace hyt
