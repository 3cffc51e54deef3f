#pragma once

// One participant's run through the protocol: a baseline iteration (example
// images + simulatability task, no explanation) followed by five
// experimental iterations (explanation, satisfaction task, simulatability
// task). Every transition is an event; live transitions and log replay go
// through the same apply_event, so a replayed record equals the live one.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqx/blackbox.hpp"
#include "seqx/error.hpp"
#include "seqx/explainers.hpp"
#include "seqx/mental_model.hpp"
#include "seqx/policies.hpp"
#include "seqx/rng.hpp"

namespace seqx {

inline constexpr int kExperimentalIterations = 5;

enum class PhaseKind { AwaitingBaseline, AwaitingIteration, Complete };

struct Phase {
  PhaseKind kind = PhaseKind::AwaitingBaseline;
  int t = 0;  // 1..5 while AwaitingIteration

  static Phase baseline() { return {PhaseKind::AwaitingBaseline, 0}; }
  static Phase iteration(int t) { return {PhaseKind::AwaitingIteration, t}; }
  static Phase complete() { return {PhaseKind::Complete, 0}; }

  std::string name() const {
    switch (kind) {
      case PhaseKind::AwaitingBaseline: return "awaiting_baseline";
      case PhaseKind::AwaitingIteration: return "awaiting_iteration";
      case PhaseKind::Complete: return "complete";
    }
    return "?";
  }

  bool operator==(const Phase&) const = default;
};

struct BaselineRecord {
  std::array<std::uint32_t, 2> example_image_ids{};  // [label 0, label 1]
  std::optional<LocalScores> locals;

  bool operator==(const BaselineRecord&) const = default;
};

struct IterationRecord {
  int t = 0;
  int shown_explanation_id = 0;
  ExplainerKind kind = ExplainerKind::Saliency;
  Possibility possibility = Possibility::TP;
  SatisfactionResponse satisfaction_items;
  double satisfaction = 0.0;
  LocalScores locals;
  int reward = 0;
  int relative_reward = 0;

  bool operator==(const IterationRecord&) const = default;
};

struct SessionEvent {
  std::string session_id;
  std::uint64_t seq = 0;
  std::string event_type;
  nlohmann::json payload;
  std::string timestamp;

  bool operator==(const SessionEvent&) const = default;
};

struct PendingExplanation {
  int explanation_id = 0;
  ExplainerKind kind = ExplainerKind::Saliency;
  Possibility possibility = Possibility::TP;

  bool operator==(const PendingExplanation&) const = default;
};

struct SessionRecord {
  std::string session_id;
  PolicyKind policy = PolicyKind::RandomCombined;
  std::uint64_t seed = 0;
  std::string dataset;  // which corpus the experiment ran on; fallback runs are tagged
  Phase phase;
  BaselineRecord baseline;
  std::vector<IterationRecord> iterations;
  MentalModelState state;
  std::optional<PendingExplanation> pending;  // memoized explanation of the current phase
  std::vector<SessionEvent> events;

  bool operator==(const SessionRecord&) const = default;
};

namespace detail {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

inline nlohmann::json guesses_to_json(const SimulatabilityResponse& r) {
  auto arr = nlohmann::json::array();
  for (const auto& [id, g] : r.guesses) arr.push_back({id, g});
  return arr;
}

inline SimulatabilityResponse guesses_from_json(const nlohmann::json& j) {
  SimulatabilityResponse r;
  for (const auto& pair : j) r.guesses[pair.at(0).get<std::uint32_t>()] = pair.at(1).get<int>();
  return r;
}

[[noreturn]] inline void replay_mismatch(const SessionEvent& e, const std::string& why) {
  throw Error(ErrorCode::CorruptLog, "event " + std::to_string(e.seq) + " (" + e.event_type + ") of session " +
                                         e.session_id + ": " + why);
}

}  // namespace detail

// Applies one event to a record. Live transitions validate before building
// the event, so any failure here means the log disagrees with the protocol.
inline SessionRecord apply_event(SessionRecord rec, const SessionEvent& e) {
  try {
    const auto& p = e.payload;
    if (e.event_type == "session_started") {
      if (!rec.events.empty()) detail::replay_mismatch(e, "session started twice");
      rec.session_id = e.session_id;
      rec.policy = policy_from_string(p.at("policy").get<std::string>());
      rec.seed = p.at("seed").get<std::uint64_t>();
      rec.dataset = p.value("dataset", "");
      p.at("example_image_ids").get_to(rec.baseline.example_image_ids);
      rec.phase = Phase::baseline();
    } else if (rec.events.empty()) {
      detail::replay_mismatch(e, "first event must be session_started");
    } else if (e.event_type == "baseline_submitted") {
      if (rec.phase.kind != PhaseKind::AwaitingBaseline) detail::replay_mismatch(e, "not awaiting baseline");
      const auto locals = p.at("locals").get<LocalScores>();
      rec.baseline.locals = locals;
      rec.state = update_state(rec.state, std::optional<ExplainerKind>{}, std::nullopt, locals);
      rec.phase = Phase::iteration(1);
    } else if (e.event_type == "explanation_issued") {
      if (rec.phase.kind != PhaseKind::AwaitingIteration || p.at("t").get<int>() != rec.phase.t) {
        detail::replay_mismatch(e, "explanation issued outside its iteration");
      }
      if (rec.pending) detail::replay_mismatch(e, "explanation already issued for this iteration");
      rec.pending = PendingExplanation{p.at("explanation_id").get<int>(),
                                       explainer_kind_from_string(p.at("kind").get<std::string>()),
                                       possibility_from_string(p.at("possibility").get<std::string>())};
    } else if (e.event_type == "iteration_submitted") {
      if (rec.phase.kind != PhaseKind::AwaitingIteration || p.at("t").get<int>() != rec.phase.t) {
        detail::replay_mismatch(e, "iteration submitted out of order");
      }
      if (!rec.pending) detail::replay_mismatch(e, "iteration submitted before its explanation");
      IterationRecord it;
      it.t = rec.phase.t;
      it.shown_explanation_id = rec.pending->explanation_id;
      it.kind = rec.pending->kind;
      it.possibility = rec.pending->possibility;
      p.at("satisfaction_items").get_to(it.satisfaction_items.items);
      it.satisfaction = p.at("satisfaction").get<double>();
      it.locals = p.at("locals").get<LocalScores>();
      it.reward = it.locals.resultant();
      it.relative_reward = it.reward - rec.baseline.locals.value().resultant();
      rec.iterations.push_back(it);
      rec.state = update_state(rec.state, it.kind, it.satisfaction, it.locals);
      rec.pending.reset();
      rec.phase = it.t == kExperimentalIterations ? Phase::complete() : Phase::iteration(it.t + 1);
    } else {
      detail::replay_mismatch(e, "unknown event type");
    }
  } catch (const nlohmann::json::exception& ex) {
    detail::replay_mismatch(e, std::string("malformed payload: ") + ex.what());
  }
  if (!rec.events.empty() && e.seq <= rec.events.back().seq) detail::replay_mismatch(e, "seq not increasing");
  rec.events.push_back(e);
  return rec;
}

namespace detail {

inline SessionEvent make_event(const SessionRecord& rec, std::string type, nlohmann::json payload) {
  const std::uint64_t seq = rec.events.empty() ? 1 : rec.events.back().seq + 1;
  return {rec.session_id, seq, std::move(type), std::move(payload), utc_timestamp()};
}

}  // namespace detail

// Opens a session. The two baseline example images are correctly classified
// instances (one per label) outside both the task and the catalog.
inline SessionRecord start_session(const std::string& session_id, PolicyKind policy, std::uint64_t session_seed,
                                   const CategorizedTestSet& cats, const ExplanationCatalog& catalog,
                                   const SimulatabilityTask& task, const std::string& dataset = "") {
  catalog.require_complete();
  auto excluded = catalog.display_ids();
  for (auto id : task.image_ids()) excluded.push_back(id);
  std::sort(excluded.begin(), excluded.end());

  Rng rng(mix_seed(session_seed, 0xBA5E));
  std::array<std::uint32_t, 2> examples{};
  for (int label : {0, 1}) {
    const auto& list = cats[label == 0 ? Possibility::TN : Possibility::TP];
    std::vector<std::uint32_t> eligible;
    for (const auto& e : list) {
      if (!std::binary_search(excluded.begin(), excluded.end(), e.id)) eligible.push_back(e.id);
    }
    if (eligible.empty()) {
      throw Error(ErrorCode::NoEligibleExampleImage, "no correctly classified example for label " + std::to_string(label));
    }
    examples[static_cast<std::size_t>(label)] = eligible[rng.index(eligible.size())];
  }
  SessionRecord rec;
  rec.session_id = session_id;
  nlohmann::json payload = {{"policy", to_string(policy)},
                            {"seed", session_seed},
                            {"example_image_ids", examples},
                            {"dataset", dataset}};
  auto event = detail::make_event(rec, "session_started", std::move(payload));
  return apply_event(std::move(rec), event);
}

inline SessionRecord submit_baseline(const SessionRecord& session, const SimulatabilityTask& task,
                                     const SimulatabilityResponse& response) {
  if (session.phase.kind != PhaseKind::AwaitingBaseline) {
    throw Error(ErrorCode::WrongPhase, "session " + session.session_id + " is " + session.phase.name());
  }
  const auto locals = score_simulatability(task, response);
  return apply_event(session, detail::make_event(session, "baseline_submitted",
                                                 {{"guesses", detail::guesses_to_json(response)}, {"locals", locals}}));
}

// The explanation for the current iteration; the first call runs the policy
// and records the choice, later calls in the same phase return it again.
inline const Explanation& current_explanation(SessionRecord& session, const ExplanationCatalog& catalog,
                                              const PolicyConfig& config = {}) {
  if (session.phase.kind != PhaseKind::AwaitingIteration) {
    throw Error(ErrorCode::WrongPhase, "session " + session.session_id + " is " + session.phase.name());
  }
  if (!session.pending) {
    Rng rng(mix_seed(session.seed ^ config.seed, static_cast<std::uint64_t>(session.phase.t)));
    const auto& chosen = select(session.policy, session.state, catalog, config, rng);
    session = apply_event(session, detail::make_event(session, "explanation_issued",
                                                      {{"t", session.phase.t},
                                                       {"explanation_id", chosen.id},
                                                       {"kind", to_string(chosen.kind)},
                                                       {"possibility", to_string(chosen.possibility)}}));
  }
  return catalog.by_id(session.pending->explanation_id);
}

inline SessionRecord submit_iteration(const SessionRecord& session, const SimulatabilityTask& task,
                                      const SatisfactionResponse& satisfaction,
                                      const SimulatabilityResponse& response) {
  if (session.phase.kind != PhaseKind::AwaitingIteration) {
    throw Error(ErrorCode::WrongPhase, "session " + session.session_id + " is " + session.phase.name());
  }
  if (!session.pending) {
    throw Error(ErrorCode::ExplanationNotIssued, "iteration " + std::to_string(session.phase.t) +
                                                     " has no explanation issued yet");
  }
  const double sat = score_satisfaction(satisfaction);
  const auto locals = score_simulatability(task, response);
  const int reward = locals.resultant();
  return apply_event(session, detail::make_event(session, "iteration_submitted",
                                                 {{"t", session.phase.t},
                                                  {"satisfaction_items", satisfaction.items},
                                                  {"satisfaction", sat},
                                                  {"guesses", detail::guesses_to_json(response)},
                                                  {"locals", locals},
                                                  {"reward", reward},
                                                  {"relative_reward", reward - session.baseline.locals->resultant()}}));
}

// ---------------------------------------------------------------------------
// JSON-lines event log

inline nlohmann::json event_to_json(const SessionEvent& e) {
  return {{"session_id", e.session_id},
          {"seq", e.seq},
          {"event_type", e.event_type},
          {"payload", e.payload},
          {"timestamp", e.timestamp}};
}

inline SessionEvent event_from_json(const nlohmann::json& j) {
  return {j.at("session_id").get<std::string>(), j.at("seq").get<std::uint64_t>(),
          j.at("event_type").get<std::string>(), j.at("payload"), j.at("timestamp").get<std::string>()};
}

// Appends events [from, end) of the record, one JSON object per line.
inline void append_events(const SessionRecord& session, const std::filesystem::path& log_path, std::size_t from = 0) {
  std::ofstream out(log_path, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + log_path.string() + " for append");
  for (std::size_t i = from; i < session.events.size(); ++i) out << event_to_json(session.events[i]).dump() << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "failed appending to " + log_path.string());
}

// Reads every event in file order. A line that does not parse (including a
// truncated final line) fails with its byte offset.
inline std::vector<SessionEvent> read_events(const std::filesystem::path& log_path) {
  std::ifstream in(log_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + log_path.string());
  std::vector<SessionEvent> events;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const bool terminated = !in.eof();
    if (!line.empty()) {
      try {
        if (!terminated) throw std::runtime_error("missing line terminator");
        events.push_back(event_from_json(nlohmann::json::parse(line)));
      } catch (const std::exception& ex) {
        throw Error(ErrorCode::CorruptLog, log_path.string() + ": bad event at byte offset " +
                                               std::to_string(offset) + " (" + ex.what() + ")");
      }
    }
    offset += line.size() + (terminated ? 1 : 0);
  }
  return events;
}

inline std::size_t persisted_event_count(const std::filesystem::path& log_path, const std::string& session_id) {
  if (!std::filesystem::exists(log_path)) return 0;
  std::size_t n = 0;
  for (const auto& e : read_events(log_path)) n += e.session_id == session_id;
  return n;
}

// Appends whatever part of the session's event stream the log lacks.
inline void persist(const SessionRecord& session, const std::filesystem::path& log_path) {
  append_events(session, log_path, persisted_event_count(log_path, session.session_id));
}

// Writes a fresh log holding every event of every record, session by session.
inline void write_log(std::span<const SessionRecord> sessions, const std::filesystem::path& log_path) {
  std::ofstream out(log_path, std::ios::trunc | std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + log_path.string());
  for (const auto& s : sessions) {
    for (const auto& e : s.events) out << event_to_json(e).dump() << '\n';
  }
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + log_path.string());
}

inline SessionRecord replay(const std::vector<SessionEvent>& events) {
  SessionRecord rec;
  for (const auto& e : events) rec = apply_event(std::move(rec), e);
  return rec;
}

inline SessionRecord load(const std::filesystem::path& log_path, const std::string& session_id) {
  std::vector<SessionEvent> mine;
  for (auto& e : read_events(log_path)) {
    if (e.session_id == session_id) mine.push_back(std::move(e));
  }
  if (mine.empty()) throw Error(ErrorCode::UnknownSession, "no session '" + session_id + "' in " + log_path.string());
  return replay(mine);
}

// Every session in the log, in order of first appearance.
inline std::vector<SessionRecord> load_all(const std::filesystem::path& log_path) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<SessionEvent>> by_id;
  for (auto& e : read_events(log_path)) {
    if (!by_id.contains(e.session_id)) order.push_back(e.session_id);
    by_id[e.session_id].push_back(std::move(e));
  }
  std::vector<SessionRecord> out;
  for (const auto& id : order) out.push_back(replay(by_id[id]));
  return out;
}

// Log files (*.jsonl) under a directory, sorted by name.
inline std::vector<SessionRecord> load_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SessionRecord> out;
  for (const auto& f : files) {
    auto part = load_all(f);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concurrent store: one writer per session, appends serialized on the log.

class SessionStore {
 public:
  explicit SessionStore(std::optional<std::filesystem::path> log_path = std::nullopt)
      : log_path_(std::move(log_path)) {
    if (log_path_ && std::filesystem::exists(*log_path_)) {
      for (auto& rec : load_all(*log_path_)) {
        auto entry = std::make_shared<Entry>();
        entry->persisted = rec.events.size();
        entry->record = std::move(rec);
        entries_.emplace(entry->record.session_id, std::move(entry));
      }
    }
  }

  void insert(SessionRecord record) {
    auto entry = std::make_shared<Entry>();
    entry->record = std::move(record);
    std::lock_guard entry_lock(entry->mutex);
    {
      std::lock_guard lock(mutex_);
      if (!entries_.emplace(entry->record.session_id, entry).second) {
        throw Error(ErrorCode::InvalidArgument, "duplicate session id " + entry->record.session_id);
      }
    }
    flush(*entry);
  }

  // Runs fn(record&) under the session's lock and persists new events. fn
  // works on a copy, so a throwing transition leaves the stored record as is.
  template <typename Fn>
  auto update(const std::string& id, Fn&& fn) {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    SessionRecord working = entry->record;
    if constexpr (std::is_void_v<decltype(fn(working))>) {
      fn(working);
      entry->record = std::move(working);
      flush(*entry);
    } else {
      auto result = fn(working);
      entry->record = std::move(working);
      flush(*entry);
      return result;
    }
  }

  SessionRecord snapshot(const std::string& id) const {
    auto entry = find(id);
    std::lock_guard lock(entry->mutex);
    return entry->record;
  }

  std::vector<SessionRecord> all() const {
    std::vector<std::shared_ptr<Entry>> entries;
    {
      std::lock_guard lock(mutex_);
      for (const auto& [id, e] : entries_) entries.push_back(e);
    }
    std::vector<SessionRecord> out;
    for (const auto& e : entries) {
      std::lock_guard lock(e->mutex);
      out.push_back(e->record);
    }
    return out;
  }

  bool contains(const std::string& id) const {
    std::lock_guard lock(mutex_);
    return entries_.contains(id);
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

 private:
  struct Entry {
    std::mutex mutex;
    SessionRecord record;
    std::size_t persisted = 0;
  };

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(id);
    if (it == entries_.end()) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
    return it->second;
  }

  // Caller holds entry.mutex.
  void flush(Entry& entry) {
    if (!log_path_ || entry.persisted == entry.record.events.size()) return;
    std::lock_guard lock(log_mutex_);
    append_events(entry.record, *log_path_, entry.persisted);
    entry.persisted = entry.record.events.size();
  }

  std::optional<std::filesystem::path> log_path_;
  mutable std::mutex mutex_;
  std::mutex log_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
};

}  // namespace seqx
