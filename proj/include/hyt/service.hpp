#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hyt/codec.hpp"
#include "hyt/error.hpp"
#include "hyt/eval.hpp"
#include "hyt/serialize.hpp"
#include "hyt/world.hpp"

// Must follow Eigen: <resolv.h> defines a `_res` macro that collides with
// parameter names in Eigen's product kernels.
#include "httplib.h"

namespace hyt {

// Request failure carrying an HTTP status and a JSON body.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& message, Json details = Json::object())
      : Error(message), status_(status), details_(std::move(details)) {}
  int status() const { return status_; }
  Json body() const {
    Json b = details_;
    b["error"] = what();
    return b;
  }

 private:
  int status_;
  Json details_;
};

struct SessionOptions {
  std::chrono::seconds ttl{30 * 60};
  std::string default_checkpoint;
  DecodeOptions decode;
};

class SessionManager {
 public:
  using Clock = std::chrono::steady_clock;
  using PolicyLoader = std::function<std::shared_ptr<const Policy>(const std::string&)>;

  explicit SessionManager(SessionOptions opt = {}, PolicyLoader loader = load_policy,
                          std::function<Clock::time_point()> now = Clock::now)
      : opt_(std::move(opt)), loader_(std::move(loader)), now_(std::move(now)), ids_(std::random_device{}()) {}

  // {task_family, n_objects, seed, mode, checkpoint?, grid_size?}
  Json create(const Json& req) {
    evict_expired();
    TaskFamily family;
    int n_objects, grid;
    std::uint64_t seed;
    Modality mode;
    std::string ckpt;
    try {
      family = family_from_string(req.value("task_family", std::string("PlaceAt")));
      n_objects = req.value("n_objects", 2);
      seed = req.value("seed", std::uint64_t{0});
      mode = modality_from_string(req.at("mode").get<std::string>());
      ckpt = req.value("checkpoint", opt_.default_checkpoint);
      grid = req.value("grid_size", kDefaultGridSize);
    } catch (const Json::exception& e) {
      throw ServiceError(400, std::string("malformed request: ") + e.what());
    } catch (const Error& e) {
      throw ServiceError(400, e.what());
    }
    if (ckpt.empty()) throw ServiceError(400, "no checkpoint given and the service has no default");
    std::shared_ptr<const Policy> policy;
    try {
      policy = policy_for(ckpt);
    } catch (const Error& e) {
      throw ServiceError(400, std::string("cannot load checkpoint: ") + e.what());
    }
    auto s = std::make_shared<Session>();
    try {
      s->state = reset(family, n_objects, seed, grid);
    } catch (const Error& e) {
      throw ServiceError(400, e.what());
    }
    s->mode = mode;
    s->policy = policy;
    s->checkpoint = ckpt;
    s->seed = seed;
    s->last_access = now_();
    std::lock_guard lock(mu_);
    s->id = new_id();
    sessions_[s->id] = s;
    return describe(*s);
  }

  // {thought?: string, mode?: string}
  Json step(const std::string& id, const Json& req) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->deleted) throw ServiceError(404, "unknown session " + id);
    s->last_access = now_();
    if (req.contains("mode")) {
      const auto m = req.at("mode");
      if (!m.is_string() || m.get<std::string>() != to_string(s->mode)) {
        throw ServiceError(409, "mode is fixed for the whole episode", {{"mode", to_string(s->mode)}});
      }
    }
    if (check_success(s->state)) throw ServiceError(409, "episode already succeeded");
    std::optional<std::string> thought;
    if (req.contains("thought") && !req.at("thought").is_null()) {
      if (!req.at("thought").is_string()) throw ServiceError(400, "thought must be a string");
      thought = req.at("thought").get<std::string>();
    }
    const Policy& p = *s->policy;
    Json rec;
    StepDecision d;
    switch (s->mode) {
      case Modality::act:
        if (thought) rec["warning"] = "thought ignored in act mode";
        d = decide_act(p, s->state, opt_.decode);
        break;
      case Modality::think:
        if (thought) rec["warning"] = "thought ignored in think mode";
        d = decide_think(p, s->state, opt_.decode);
        break;
      case Modality::follow:
        d = decide_follow(p, s->state, follow_tokens(p, thought), opt_.decode);
        d.thought_source = ThoughtSource::human;
        break;
    }
    Action a{0, 0, s->state.gripper_state};
    if (!d.malformed && !d.actions.empty()) a = d.actions.front();
    s->state = hyt::step(s->state, a);
    rec["step"] = static_cast<int>(s->history.size());
    rec["action"] = to_json(a);
    rec["malformed"] = d.malformed;
    rec["thought"] = d.thought_text ? Json(*d.thought_text) : Json(nullptr);
    rec["thought_source"] = d.thought_text ? Json(to_string(d.thought_source)) : Json(nullptr);
    rec["tokens_generated"] = d.tokens_generated;
    rec["decode_latency_s"] = d.decode_seconds;
    rec["success"] = check_success(s->state);
    s->history.push_back(rec);
    Json out = rec;
    out["scene"] = to_json(s->state);
    return out;
  }

  // Sessions accept no mutable settings; a mode change is always refused.
  Json update(const std::string& id, const Json& req) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->deleted) throw ServiceError(404, "unknown session " + id);
    if (req.contains("mode")) {
      throw ServiceError(409, "mode is fixed for the whole episode", {{"mode", to_string(s->mode)}});
    }
    throw ServiceError(400, "no updatable session fields");
  }

  Json get(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->deleted) throw ServiceError(404, "unknown session " + id);
    s->last_access = now_();
    Json out = describe(*s);
    out["history"] = s->history;
    return out;
  }

  void remove(const std::string& id) {
    std::shared_ptr<Session> s;
    {
      std::lock_guard lock(mu_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) throw ServiceError(404, "unknown session " + id);
      s = it->second;
      sessions_.erase(it);
    }
    std::lock_guard lock(s->mu);
    s->deleted = true;
  }

  Json vocabulary(const std::string& checkpoint) {
    const std::string ckpt = checkpoint.empty() ? opt_.default_checkpoint : checkpoint;
    if (ckpt.empty()) throw ServiceError(400, "no checkpoint given");
    try {
      return policy_for(ckpt)->vocab.manifest();
    } catch (const Error& e) {
      throw ServiceError(400, e.what());
    }
  }

  std::size_t size() {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

  std::size_t evict_expired() {
    const auto t = now_();
    std::lock_guard lock(mu_);
    std::size_t n = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      std::unique_lock slock(it->second->mu, std::try_to_lock);
      if (slock.owns_lock() && t - it->second->last_access > opt_.ttl) {
        it->second->deleted = true;
        slock.unlock();
        it = sessions_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    return n;
  }

 private:
  struct Session {
    std::mutex mu;
    std::string id;
    WorldState state;
    Modality mode = Modality::act;
    std::shared_ptr<const Policy> policy;
    std::string checkpoint;
    std::uint64_t seed = 0;
    std::vector<Json> history;
    Clock::time_point last_access;
    bool deleted = false;
  };

  static Json describe(const Session& s) {
    return {{"id", s.id},
            {"mode", to_string(s.mode)},
            {"task", s.state.task.text},
            {"seed", s.seed},
            {"checkpoint", s.checkpoint},
            {"scene", to_json(s.state)},
            {"success", check_success(s.state)},
            {"steps", s.history.size()}};
  }

  // Follow mode: a well-formed thought is re-rendered in the checkpoint's
  // format; otherwise the free text is tokenized word by word over the
  // closed vocabulary.
  static Tokens follow_tokens(const Policy& p, const std::optional<std::string>& thought) {
    if (!thought || Vocabulary::split_words(*thought).empty()) {
      throw ServiceError(400, "follow mode needs a thought");
    }
    const auto unknown = p.vocab.unknown_words(*thought);
    if (!unknown.empty()) throw ServiceError(400, "thought contains unknown words", {{"unknown_words", unknown}});
    try {
      const Thought t = parse_thought(*thought);
      return render_thought(t, p.modality.thought_format, p.vocab);
    } catch (const ParseError&) {
      return p.vocab.encode_words(*thought);
    }
  }

  std::shared_ptr<Session> find(const std::string& id) {
    evict_expired();
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "unknown session " + id);
    return it->second;
  }

  std::shared_ptr<const Policy> policy_for(const std::string& path) {
    std::lock_guard lock(policy_mu_);
    auto it = policies_.find(path);
    if (it != policies_.end()) return it->second;
    auto p = loader_(path);
    policies_[path] = p;
    return p;
  }

  std::string new_id() {
    std::ostringstream os;
    os << std::hex << ids_() << ids_();
    return os.str();
  }

  SessionOptions opt_;
  PolicyLoader loader_;
  std::function<Clock::time_point()> now_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex policy_mu_;
  std::map<std::string, std::shared_ptr<const Policy>> policies_;
  std::mt19937_64 ids_;
};

// ---------------------------------------------------------------------------
// HTTP routes.

inline void install_routes(httplib::Server& server, SessionManager& sessions) {
  auto reply = [](httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto guarded = [reply](auto&& fn) {
    return [fn, reply](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const ServiceError& e) {
        reply(res, e.status(), e.body());
      } catch (const Json::exception& e) {
        reply(res, 400, {{"error", std::string("malformed JSON: ") + e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    };
  };
  auto body_json = [](const httplib::Request& req) {
    return req.body.empty() ? Json::object() : Json::parse(req.body);
  };

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, PATCH, DELETE, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/health", [reply](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}});
  });
  server.Get("/vocabulary", guarded([&sessions, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, sessions.vocabulary(req.has_param("checkpoint") ? req.get_param_value("checkpoint") : ""));
  }));
  server.Post("/sessions", guarded([&sessions, reply, body_json](const httplib::Request& req, httplib::Response& res) {
    reply(res, 201, sessions.create(body_json(req)));
  }));
  server.Post(R"(/sessions/([^/]+)/step)",
              guarded([&sessions, reply, body_json](const httplib::Request& req, httplib::Response& res) {
                reply(res, 200, sessions.step(req.matches[1], body_json(req)));
              }));
  server.Get(R"(/sessions/([^/]+))", guarded([&sessions, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, 200, sessions.get(req.matches[1]));
  }));
  server.Patch(R"(/sessions/([^/]+))",
               guarded([&sessions, reply, body_json](const httplib::Request& req, httplib::Response& res) {
                 reply(res, 200, sessions.update(req.matches[1], body_json(req)));
               }));
  server.Delete(R"(/sessions/([^/]+))",
                guarded([&sessions, reply](const httplib::Request& req, httplib::Response& res) {
                  sessions.remove(req.matches[1]);
                  reply(res, 200, {{"deleted", std::string(req.matches[1])}});
                }));
}

}  // namespace hyt
