#pragma once

// JSON/HTTP facade over the session store. Handlers are plain functions of
// (path params, body) -> (status, json) so they can be exercised without a
// socket; `mount` wires them onto an httplib server.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "seqx/analysis.hpp"
#include "seqx/experiment.hpp"
#include "seqx/session.hpp"

namespace seqx {

struct ApiError {
  int http_status = 500;
  std::string machine_code;
  std::string human_message;

  nlohmann::json to_json() const { return {{"error", machine_code}, {"message", human_message}}; }
};

constexpr int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownPolicy: return 400;
    case ErrorCode::UnknownSession:
    case ErrorCode::EmptyArm: return 404;
    case ErrorCode::WrongPhase:
    case ErrorCode::ExplanationNotIssued: return 409;
    case ErrorCode::MalformedRequest:
    case ErrorCode::MissingGuess:
    case ErrorCode::UnknownImageId:
    case ErrorCode::OutOfRangeItem:
    case ErrorCode::InvalidArgument:
    case ErrorCode::SatWithoutExplanation: return 422;
    default: return 500;
  }
}

inline ApiError to_api_error(const Error& e) { return {http_status(e.code()), std::string(to_string(e.code())), e.what()}; }

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct ServiceConfig {
  std::uint64_t seed = 1;
  PolicyConfig policy;
  std::array<std::string, 2> class_names{"moon", "sun"};
  std::array<std::string, kSatisfactionItems> satisfaction_items{
      "The explanation helps me understand how the classifier works.",
      "The explanation is satisfying.",
      "The explanation is sufficiently detailed.",
      "The explanation is complete.",
      "The explanation tells me how to use the classifier.",
      "The explanation is useful to my goals.",
      "The explanation shows me how accurate the classifier is.",
      "The explanation lets me judge when I should trust the classifier."};
  std::string cors_origin = "*";
};

inline ServiceConfig service_config_from_json(const nlohmann::json& j, ServiceConfig base = {}) {
  if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("class_names")) base.class_names = j.at("class_names").get<std::array<std::string, 2>>();
  if (j.contains("satisfaction_items")) {
    base.satisfaction_items = j.at("satisfaction_items").get<std::array<std::string, kSatisfactionItems>>();
  }
  if (j.contains("cors_origin")) base.cors_origin = j.at("cors_origin").get<std::string>();
  return base;
}

namespace detail {

inline nlohmann::json grid(std::span<const float> v) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < kImageSide; ++r) {
    rows.push_back(std::vector<float>(v.begin() + static_cast<std::ptrdiff_t>(r * kImageSide),
                                      v.begin() + static_cast<std::ptrdiff_t>((r + 1) * kImageSide)));
  }
  return rows;
}

inline nlohmann::json grid(std::span<const double> v) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < kImageSide; ++r) {
    rows.push_back(std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(r * kImageSide),
                                       v.begin() + static_cast<std::ptrdiff_t>((r + 1) * kImageSide)));
  }
  return rows;
}

[[noreturn]] inline void malformed(const std::string& why) { throw Error(ErrorCode::MalformedRequest, why); }

inline SimulatabilityResponse parse_guesses(const nlohmann::json& body) {
  if (!body.contains("guesses") || !body["guesses"].is_array()) malformed("'guesses' must be an array");
  SimulatabilityResponse r;
  for (const auto& g : body["guesses"]) {
    if (!g.is_object() || !g.contains("image_id") || !g.contains("label") || !g["image_id"].is_number_unsigned() ||
        !g["label"].is_number_integer()) {
      malformed("each guess must be {image_id, label}");
    }
    const auto id = g["image_id"].get<std::uint32_t>();
    if (!r.guesses.emplace(id, g["label"].get<int>()).second) malformed("duplicate guess for image " + std::to_string(id));
  }
  if (r.guesses.size() != kTaskImages) {
    malformed("expected " + std::to_string(kTaskImages) + " guesses, got " + std::to_string(r.guesses.size()));
  }
  return r;
}

inline SatisfactionResponse parse_satisfaction(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != kSatisfactionItems) {
    malformed("'satisfaction' must be an array of " + std::to_string(kSatisfactionItems) + " ratings");
  }
  SatisfactionResponse s;
  for (std::size_t i = 0; i < kSatisfactionItems; ++i) {
    if (!j[i].is_number_integer()) malformed("satisfaction ratings must be integers");
    s.items[i] = j[i].get<int>();
  }
  return s;
}

}  // namespace detail

class Service {
 public:
  // `exp` must outlive the service.
  Service(const Experiment& exp, ServiceConfig config, std::optional<std::filesystem::path> log_path = std::nullopt)
      : exp_(exp), config_(std::move(config)), store_(std::move(log_path)) {
    exp_.catalog.require_complete();
  }

  SessionStore& store() { return store_; }
  const SessionStore& store() const { return store_; }

  ApiResponse create_session(const std::string& raw_body) {
    return guarded([&] {
      const auto body = parse(raw_body);
      if (!body.contains("policy") || !body["policy"].is_string()) detail::malformed("'policy' must be a string");
      const auto policy = policy_from_string(body["policy"].get<std::string>());
      SessionRecord rec;
      {
        std::lock_guard lock(create_mutex_);
        std::uint64_t n = store_.size();
        std::string id;
        do {
          id = session_id(n++);
        } while (store_.contains(id));
        rec = start_session(id, policy, mix_seed(config_.seed, n), exp_.cats, exp_.catalog, exp_.task, exp_.dataset);
        store_.insert(rec);
      }
      return ApiResponse{201,
                         {{"session_id", rec.session_id},
                          {"phase", rec.phase.name()},
                          {"baseline_examples", baseline_examples(rec)}}};
    });
  }

  ApiResponse step(const std::string& id) {
    return guarded([&] {
      auto rec = store_.snapshot(id);
      nlohmann::json out = {{"session_id", id}, {"phase", rec.phase.name()}, {"t", rec.phase.t}};
      switch (rec.phase.kind) {
        case PhaseKind::AwaitingBaseline:
          out["baseline_examples"] = baseline_examples(rec);
          out["task"] = task_images();
          break;
        case PhaseKind::AwaitingIteration: {
          const int eid = store_.update(id, [&](SessionRecord& r) {
            return current_explanation(r, exp_.catalog, config_.policy).id;
          });
          out["explanation"] = explanation_payload(exp_.catalog.by_id(eid));
          out["satisfaction_items"] = config_.satisfaction_items;
          out["task"] = task_images();
          break;
        }
        case PhaseKind::Complete: {
          std::vector<int> rewards;
          for (const auto& it : rec.iterations) rewards.push_back(it.reward);
          out["rewards"] = rewards;
          out["baseline_reward"] = rec.baseline.locals->resultant();
          break;
        }
      }
      return ApiResponse{200, out};
    });
  }

  ApiResponse submit(const std::string& id, const std::string& raw_body) {
    return guarded([&] {
      const auto body = parse(raw_body);
      auto rec = store_.update(id, [&](SessionRecord& r) {
        switch (r.phase.kind) {
          case PhaseKind::AwaitingBaseline:
            if (body.contains("satisfaction")) detail::malformed("the baseline iteration takes no satisfaction ratings");
            r = submit_baseline(r, exp_.task, detail::parse_guesses(body));
            break;
          case PhaseKind::AwaitingIteration:
            if (!body.contains("satisfaction")) detail::malformed("'satisfaction' is required");
            r = submit_iteration(r, exp_.task, detail::parse_satisfaction(body["satisfaction"]),
                                 detail::parse_guesses(body));
            break;
          case PhaseKind::Complete:
            throw Error(ErrorCode::WrongPhase, "session " + r.session_id + " is complete");
        }
        return r;
      });
      nlohmann::json out = {{"session_id", id},
                            {"phase", rec.phase.name()},
                            {"t", rec.phase.t},
                            {"completed_iterations", rec.iterations.size()},
                            {"total_iterations", kExperimentalIterations}};
      if (rec.phase.kind == PhaseKind::Complete) out["last_reward"] = rec.iterations.back().reward;
      return ApiResponse{200, out};
    });
  }

  ApiResponse summary() {
    return guarded([&] {
      std::vector<SessionRecord> done;
      for (auto& r : store_.all()) {
        if (r.phase.kind == PhaseKind::Complete) done.push_back(std::move(r));
      }
      if (done.empty()) throw Error(ErrorCode::EmptyArm, "no complete sessions");
      return ApiResponse{200, summary_to_json(summarize(done))};
    });
  }

  void mount(httplib::Server& server) {
    const std::string origin = config_.cors_origin;
    server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    auto send = [](httplib::Response& res, const ApiResponse& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Post("/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, create_session(req.body));
    });
    server.Get(R"(/sessions/([^/]+)/step)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, step(req.matches[1]));
    });
    server.Post(R"(/sessions/([^/]+)/responses)", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, submit(req.matches[1], req.body));
    });
    server.Get("/analysis/summary", [this, send](const httplib::Request&, httplib::Response& res) {
      send(res, summary());
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      res.set_content(ApiError{res.status, "not_found", "no such route"}.to_json().dump(), "application/json");
    });
  }

 private:
  template <typename Fn>
  static ApiResponse guarded(Fn&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      const auto err = to_api_error(e);
      return {err.http_status, err.to_json()};
    } catch (const std::exception& e) {
      return {500, ApiError{500, "internal", e.what()}.to_json()};
    }
  }

  static nlohmann::json parse(const std::string& raw) {
    auto j = nlohmann::json::parse(raw, nullptr, false);
    if (j.is_discarded() || !j.is_object()) detail::malformed("request body must be a JSON object");
    return j;
  }

  std::string session_id(std::uint64_t n) const {
    char buf[40];
    std::snprintf(buf, sizeof buf, "s%04llu-%08llx", static_cast<unsigned long long>(n),
                  static_cast<unsigned long long>(mix_seed(config_.seed, n) & 0xffffffffULL));
    return buf;
  }

  nlohmann::json image(std::uint32_t id) const {
    return {{"image_id", id}, {"pixels", detail::grid(exp_.data.pool.at(id).pixels)}};
  }

  nlohmann::json baseline_examples(const SessionRecord& rec) const {
    auto out = nlohmann::json::array();
    for (int label : {0, 1}) {
      auto img = image(rec.baseline.example_image_ids[static_cast<std::size_t>(label)]);
      img["label"] = label;
      img["label_name"] = config_.class_names[static_cast<std::size_t>(label)];
      out.push_back(std::move(img));
    }
    return out;
  }

  nlohmann::json task_images() const {
    auto out = nlohmann::json::array();
    for (const auto& item : exp_.task.items) out.push_back(image(item.image_id));
    return out;
  }

  // Participant view: no possibility name, no model predictions.
  nlohmann::json explanation_payload(const Explanation& e) const {
    nlohmann::json out = {{"explanation_id", e.id}, {"kind", to_string(e.kind)}};
    auto instances = nlohmann::json::array();
    for (std::size_t i = 0; i < e.instance_ids.size(); ++i) {
      auto img = image(e.instance_ids[i]);
      if (e.kind == ExplainerKind::Saliency) {
        img["relevance"] = detail::grid(e.saliency.at(i).relevance);
      } else {
        for (const auto& m : e.prototypes->members) {
          if (m.id == e.instance_ids[i]) img["weight"] = m.weight;
        }
      }
      instances.push_back(std::move(img));
    }
    out["instances"] = std::move(instances);
    return out;
  }

  const Experiment& exp_;
  ServiceConfig config_;
  SessionStore store_;
  std::mutex create_mutex_;
};

}  // namespace seqx
