#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stungage/live.hpp"
#include "stungage/pipeline.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that collides with Eigen
// parameter names.
#include <httplib.h>

namespace stungage {

inline constexpr int kFeedSchema = 1;

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error("session-service", what) {}
};

inline std::int64_t wall_ms_now() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

inline Json slice_json(SegmentMode mode, int slice) { return mode == SegmentMode::manual ? Json(slice) : Json(nullptr); }

inline Json score_event_json(const SegmentResult& r, std::int64_t seq, std::int64_t wall_ms) {
  return Json{{"type", "score"},
              {"schema", kFeedSchema},
              {"seq", seq},
              {"wall_ms", wall_ms},
              {"segment", r.card.segment},
              {"mode", std::string(to_string(r.mode))},
              {"slice", slice_json(r.mode, r.slice_minutes)},
              {"scorecard", to_json(r.card)}};
}

namespace detail {

enum class Kind { integer, number, boolean, string, object, array };

struct FieldSpec {
  const char* name;
  Kind kind;
  bool nullable = false;
};

inline bool kind_ok(const Json& v, Kind k, bool nullable) {
  if (v.is_null()) return nullable;
  switch (k) {
    case Kind::integer: return v.is_number_integer();
    case Kind::number: return v.is_number();
    case Kind::boolean: return v.is_boolean();
    case Kind::string: return v.is_string();
    case Kind::object: return v.is_object();
    case Kind::array: return v.is_array();
  }
  return false;
}

inline void check_object(const Json& j, std::initializer_list<FieldSpec> fields, const std::string& where) {
  if (!j.is_object()) throw SchemaError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const FieldSpec* spec = nullptr;
    for (const auto& f : fields)
      if (it.key() == f.name) spec = &f;
    if (!spec) throw SchemaError("field '" + where + "." + it.key() + "' is not part of the feed schema");
    if (!kind_ok(it.value(), spec->kind, spec->nullable))
      throw SchemaError("field '" + where + "." + it.key() + "' has the wrong type");
  }
  for (const auto& f : fields)
    if (!j.contains(f.name)) throw SchemaError("field '" + where + "." + f.name + "' is missing");
}

}  // namespace detail

/// Whitelist validation of a score event. Only scores, counters, booleans,
/// distances and p-values may appear; anything else (pixels, landmarks,
/// projections) is rejected.
inline void validate_score_event(const Json& j) {
  using detail::Kind;
  detail::check_object(j,
                       {{"type", Kind::string}, {"schema", Kind::integer}, {"seq", Kind::integer},
                        {"wall_ms", Kind::integer}, {"segment", Kind::integer}, {"mode", Kind::string},
                        {"slice", Kind::integer, true}, {"scorecard", Kind::object}},
                       "event");
  if (j["type"] != "score") throw SchemaError("event.type must be 'score'");
  if (j["schema"] != kFeedSchema) throw SchemaError("unsupported schema version");
  if (j["mode"] != "automatic" && j["mode"] != "manual") throw SchemaError("event.mode is invalid");
  const auto& c = j["scorecard"];
  detail::check_object(c,
                       {{"segment", Kind::integer}, {"start", Kind::integer}, {"end", Kind::integer},
                        {"per_student", Kind::array}, {"aggregate", Kind::number, true}, {"Fi", Kind::integer},
                        {"fi", Kind::integer}, {"Ci", Kind::number, true}, {"overall", Kind::number, true}},
                       "scorecard");
  if (c["segment"] != j["segment"]) throw SchemaError("scorecard.segment differs from event.segment");
  for (const auto& s : c["per_student"]) {
    detail::check_object(s,
                         {{"id", Kind::string}, {"Fs", Kind::integer}, {"f", Kind::integer},
                          {"Cs", Kind::number, true}, {"verdicts", Kind::array}},
                         "per_student");
    for (const auto& v : s["verdicts"])
      detail::check_object(v,
                           {{"start", Kind::integer}, {"end", Kind::integer}, {"visual", Kind::boolean},
                            {"contextual", Kind::boolean, true}, {"cognitive", Kind::boolean, true},
                            {"counted", Kind::boolean}, {"distance", Kind::number, true}, {"p", Kind::number, true}},
                           "verdict");
  }
}

/// Parses `{mode, slice?}`. Throws SchemaError on anything malformed.
inline ModeCommand parse_command(const Json& j) {
  if (!j.is_object()) throw SchemaError("command must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "mode" && it.key() != "slice" && it.key() != "schema")
      throw SchemaError("unknown command field '" + it.key() + "'");
  if (j.contains("schema") && j["schema"] != kFeedSchema) throw SchemaError("unsupported schema version");
  if (!j.contains("mode") || !j["mode"].is_string()) throw SchemaError("command needs a string 'mode'");
  ModeCommand cmd;
  const auto mode = j["mode"].get<std::string>();
  if (mode == "automatic") cmd.mode = SegmentMode::automatic;
  else if (mode == "manual") cmd.mode = SegmentMode::manual;
  else throw SchemaError("mode must be 'automatic' or 'manual'");
  if (j.contains("slice") && !j["slice"].is_null()) {
    if (!j["slice"].is_number_integer()) throw SchemaError("slice must be an integer");
    const int slice = j["slice"].get<int>();
    if (!valid_slice_minutes(slice)) throw SchemaError("slice must be 3, 5 or 15 minutes");
    cmd.slice_minutes = slice;
  }
  if (cmd.mode == SegmentMode::manual && !cmd.slice_minutes) throw SchemaError("manual mode needs a slice");
  return cmd;
}

inline Json ack_json(const CommandAck& a) {
  if (!a.accepted) return Json{{"type", "reject"}, {"schema", kFeedSchema}, {"error", a.error}};
  return Json{{"type", "ack"},
              {"schema", kFeedSchema},
              {"mode", std::string(to_string(a.mode))},
              {"slice", slice_json(a.mode, a.slice_minutes)},
              {"changed", a.changed},
              {"applies", "next-tick"}};
}

/// Ordered, append-only log of feed lines shared by every subscriber.
class Broadcaster {
 public:
  /// Validates, numbers and stores the event; returns its sequence number.
  std::int64_t publish(const SegmentResult& r) {
    std::lock_guard lock(mu_);
    const auto seq = static_cast<std::int64_t>(lines_.size());
    const Json ev = score_event_json(r, seq, wall_ms_now());
    validate_score_event(ev);
    lines_.push_back(std::make_shared<const std::string>(ev.dump()));
    cv_.notify_all();
    return seq;
  }

  void finish() {
    std::lock_guard lock(mu_);
    finished_ = true;
    cv_.notify_all();
  }

  bool finished() const {
    std::lock_guard lock(mu_);
    return finished_;
  }

  std::int64_t size() const {
    std::lock_guard lock(mu_);
    return static_cast<std::int64_t>(lines_.size());
  }

  /// Lines with sequence number >= from.
  std::vector<std::shared_ptr<const std::string>> since(std::int64_t from) const {
    std::lock_guard lock(mu_);
    if (from < 0) from = 0;
    if (from >= static_cast<std::int64_t>(lines_.size())) return {};
    return {lines_.begin() + from, lines_.end()};
  }

  /// Blocks until more than `seen` lines exist, the feed finishes, or the
  /// timeout elapses.
  void wait(std::int64_t seen, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return static_cast<std::int64_t>(lines_.size()) > seen || finished_; });
  }

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<std::shared_ptr<const std::string>> lines_;
  bool finished_ = false;
};

struct FeedState {
  SegmentMode mode = SegmentMode::automatic;
  int slice_minutes = 5;
  bool running = true;
  std::int64_t ticks = 0;
  std::uint64_t screen_drops = 0;
  std::uint64_t face_drops = 0;
};

inline Json snapshot_json(const Broadcaster& b, const FeedState& s, std::int64_t since) {
  Json history = Json::array();
  for (const auto& line : b.since(since)) history.push_back(Json::parse(*line));
  return Json{{"type", "snapshot"},
              {"schema", kFeedSchema},
              {"next_seq", b.size()},
              {"mode", std::string(to_string(s.mode))},
              {"slice", slice_json(s.mode, s.slice_minutes)},
              {"running", s.running},
              {"ticks", s.ticks},
              {"drops", {{"screen", s.screen_drops}, {"face", s.face_drops}}},
              {"history", history}};
}

/// HTTP front end:
///   GET  /feed?since=K   chunked NDJSON: snapshot, score lines, end
///   POST /command        {mode, slice?} -> ack | reject (400)
///   GET  /state          snapshot without streaming
class FeedServer {
 public:
  using CommandHandler = std::function<CommandAck(const ModeCommand&)>;
  using StateProvider = std::function<FeedState()>;

  FeedServer(Broadcaster& feed, CommandHandler on_command, StateProvider state,
             std::chrono::milliseconds heartbeat = std::chrono::milliseconds(1000))
      : feed_(feed), on_command_(std::move(on_command)), state_(std::move(state)), heartbeat_(heartbeat) {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });
    server_.Get("/state", [this](const httplib::Request& req, httplib::Response& res) {
      res.set_content(snapshot_json(feed_, state_(), since_param(req)).dump() + "\n", "application/json");
    });
    server_.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
      CommandAck ack;
      try {
        ack = on_command_(parse_command(Json::parse(req.body)));
      } catch (const std::exception& e) {
        ack.accepted = false;
        ack.error = e.what();
      }
      res.status = ack.accepted ? 200 : 400;
      res.set_content(ack_json(ack).dump() + "\n", "application/json");
    });
    server_.Get("/feed", [this](const httplib::Request& req, httplib::Response& res) {
      auto next = std::make_shared<std::int64_t>(-1);
      const auto since = since_param(req);
      res.set_chunked_content_provider(
          "application/x-ndjson", [this, next, since](std::size_t, httplib::DataSink& sink) {
            auto write = [&](const std::string& line) {
              const std::string chunk = line + "\n";
              return sink.write(chunk.data(), chunk.size());
            };
            if (*next < 0) {
              const Json snap = snapshot_json(feed_, state_(), since);
              *next = snap["next_seq"].get<std::int64_t>();
              return write(snap.dump());
            }
            feed_.wait(*next, heartbeat_);
            const bool done = feed_.finished();
            const auto lines = feed_.since(*next);
            for (const auto& l : lines) {
              if (!write(*l)) return false;
              ++*next;
            }
            if (done && *next >= feed_.size()) {
              write(Json{{"type", "end"}, {"schema", kFeedSchema}, {"next_seq", *next}}.dump());
              sink.done();
              return true;
            }
            if (lines.empty()) return write(Json{{"type", "heartbeat"}, {"schema", kFeedSchema}, {"next_seq", *next}}.dump());
            return true;
          });
    });
  }

  ~FeedServer() { stop(); }

  /// Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error("session-service", "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

 private:
  static std::int64_t since_param(const httplib::Request& req) {
    if (!req.has_param("since")) return 0;
    try {
      return std::max<std::int64_t>(0, std::stoll(req.get_param_value("since")));
    } catch (const std::exception&) {
      return 0;
    }
  }

  Broadcaster& feed_;
  CommandHandler on_command_;
  StateProvider state_;
  std::chrono::milliseconds heartbeat_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace stungage
