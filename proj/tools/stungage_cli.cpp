#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "stungage/stungage.hpp"
#include "stungage/synth.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace stungage;

namespace {

class JsonlFile {
 public:
  explicit JsonlFile(const fs::path& path) : out_(path) {
    if (!out_) throw Error("session-service", "cannot write " + path.string());
  }
  void write(const Json& j) { out_ << j.dump() << '\n'; }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

Json scorecard_line(const SegmentResult& r) {
  return Json{{"segment", r.card.segment},
              {"mode", std::string(to_string(r.mode))},
              {"slice", slice_json(r.mode, r.slice_minutes)},
              {"scorecard", to_json(r.card)}};
}

/// scorecards.jsonl, predictions.jsonl, baseline.jsonl, appended per segment.
class ResultWriter {
 public:
  ResultWriter(const fs::path& dir, double threshold)
      : scorecards_((fs::create_directories(dir), dir / "scorecards.jsonl")),
        predictions_(dir / "predictions.jsonl"),
        baseline_(dir / "baseline.jsonl"),
        threshold_(threshold) {}

  void add(const SegmentResult& r) {
    scorecards_.write(scorecard_line(r));
    for (const auto& row : prediction_json(r, threshold_)) predictions_.write(row);
    for (const auto& row : baseline_json(r)) baseline_.write(row);
    scorecards_.flush();
  }

 private:
  JsonlFile scorecards_;
  JsonlFile predictions_;
  JsonlFile baseline_;
  double threshold_;
};

void export_debug(const fs::path& dir, const OfflineResult& res) {
  fs::create_directories(dir);
  const auto& cfg = res.config;
  const auto students = cfg.students();
  {
    std::ofstream out(dir / "config.json");
    out << to_json(cfg).dump(2) << '\n';
  }
  {
    JsonlFile f(dir / "segments.jsonl");
    for (std::size_t i = 0; i < res.tiling.size(); ++i)
      f.write(Json{{"segment", i}, {"start", res.tiling[i].start}, {"end", res.tiling[i].end},
                   {"significant", res.tiling[i].significant}});
  }
  {
    JsonlFile f(dir / "events.jsonl");
    for (const auto& e : res.instructor_events) f.write(event_json(e));
    for (const auto& evs : res.student_events)
      for (const auto& e : evs) f.write(event_json(e));
  }
  {
    JsonlFile f(dir / "outcomes.jsonl");
    JsonlFile energies(dir / "energies.jsonl");
    for (const auto& o : res.outcomes) {
      Json matched = Json::array();
      for (const auto& m : o.matched) matched.push_back(event_json(m));
      Json verdicts = Json::array();
      for (const auto& v : o.verdicts) verdicts.push_back(v ? to_json(*v) : Json(nullptr));
      f.write(Json{{"event", event_json(o.event)},
                   {"instructor_present", o.instructor.present},
                   {"instructor_distance", std::isfinite(o.instructor.min_distance) ? Json(o.instructor.min_distance)
                                                                                    : Json(nullptr)},
                   {"matched", matched},
                   {"verdicts", verdicts}});
      if (o.instructor_energy) energies.write(energy_json(cfg.instructor().pid.id, o.event, *o.instructor_energy));
      for (std::size_t s = 0; s < o.student_energy.size(); ++s)
        if (o.student_energy[s]) energies.write(energy_json(students[s]->pid.id, o.event, *o.student_energy[s]));
    }
  }
  {
    JsonlFile f(dir / "projections.jsonl");
    auto dump = [&](const std::string& id, const FaceTrack& track) {
      Json samples = Json::array();
      for (const auto& s : track.samples(0, res.ticks)) samples.push_back(Json::array({s.timestamp, s.x}));
      f.write(Json{{"participant", id}, {"samples", samples}});
    };
    dump(cfg.instructor().pid.id, res.instructor_face);
    for (std::size_t s = 0; s < students.size(); ++s) dump(students[s]->pid.id, res.student_faces[s]);
  }
  {
    JsonlFile f(dir / "counts.jsonl");
    for (const auto& scan : res.scans) {
      Json counts = Json::array();
      for (const auto& [ts, c] : scan.counts) counts.push_back(Json::array({ts, c}));
      f.write(Json{{"stream", scan.name}, {"width", scan.width}, {"height", scan.height}, {"counts", counts}});
    }
  }
}

std::optional<SegmentMode> parse_mode_flag(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "auto" || s == "automatic") return SegmentMode::automatic;
  if (s == "slice" || s == "manual") return SegmentMode::manual;
  throw CLI::ValidationError("--mode", "expected auto or slice");
}

struct RunArgs {
  std::string session;
  std::string mode;
  std::optional<int> slice;
  std::optional<int> serve;
  std::string host = "127.0.0.1";
  bool live = false;
  bool realtime = false;
  std::size_t queue_budget = 0;
  bool no_drops = false;
  std::string out = "out";
  std::string debug_export;
  std::string dump_masks;
  double linger = 0.0;
  bool sequential = false;
};

// Replays every scored screen stream through the foreground stage and writes
// one mask per frame as <dir>/<stream>/mask_<ts>.pbm.
void dump_masks(const fs::path& dir, const SessionSource& session, const SessionConfig& cfg) {
  auto dump = [&](ScreenSource& src, const std::string& name) {
    const auto sub = dir / name;
    fs::create_directories(sub);
    ForegroundCounter fg(cfg.foreground);
    while (auto r = src.next()) write_pbm((sub / ("mask_" + std::to_string(r->timestamp) + ".pbm")).string(), fg.mask(r->pixels));
  };
  dump(*session.open_presentation(), "presentation");
  for (const auto* s : cfg.students()) dump(*session.open_screen(s->pid.id), s->pid.id);
}

int cmd_run(const RunArgs& a) {
  DirectorySession session(a.session);
  RunOptions opts;
  opts.mode = parse_mode_flag(a.mode);
  opts.slice_minutes = a.slice;
  opts.parallel = !a.sequential;
  const auto cfg = apply_overrides(session.config(), opts);
  ResultWriter writer(a.out, cfg.scoring.engaged_threshold);

  Broadcaster feed;
  std::optional<FeedServer> server;
  std::atomic<bool> running{true};
  std::atomic<std::int64_t> ticks{0};
  std::atomic<std::uint64_t> screen_drops{0}, face_drops{0};
  std::function<CommandAck(const ModeCommand&)> on_command = [](const ModeCommand&) {
    CommandAck ack;
    ack.error = "mode commands need a live run";
    return ack;
  };
  std::function<std::pair<SegmentMode, int>()> current_mode = [&] {
    return std::pair{cfg.segments.mode, cfg.segments.slice_minutes};
  };
  auto state = [&] {
    FeedState s;
    std::tie(s.mode, s.slice_minutes) = current_mode();
    s.running = running;
    s.ticks = ticks;
    s.screen_drops = screen_drops;
    s.face_drops = face_drops;
    return s;
  };
  auto serve = [&] {
    if (!a.serve) return;
    server.emplace(feed, [&](const ModeCommand& c) { return on_command(c); }, state);
    const int port = server->start(a.host, *a.serve);
    std::cerr << "feed: http://" << a.host << ':' << port << "/feed\n";
  };

  if (a.live) {
    if (!a.debug_export.empty() || !a.dump_masks.empty())
      throw Error("session-service", "--debug-export and --dump-masks need the offline runner");
    LiveOptions lo;
    lo.realtime = a.realtime;
    lo.queue_budget = a.queue_budget;
    lo.allow_drops = !a.no_drops;
    LiveRunner runner(session, opts, lo, [&](const SegmentResult& r) {
      writer.add(r);
      feed.publish(r);
    });
    on_command = [&](const ModeCommand& c) { return runner.engine().post_command(c); };
    current_mode = [&] { return runner.engine().requested_mode(); };
    serve();
    std::atomic<bool> done{false};
    std::thread monitor([&] {
      while (!done) {
        ticks = runner.engine().ticks_processed();
        screen_drops = runner.drops().screen.load();
        face_drops = runner.drops().face.load();
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
    });
    LiveSummary summary;
    try {
      summary = runner.run();
    } catch (...) {
      done = true;
      monitor.join();
      throw;
    }
    done = true;
    monitor.join();
    ticks = summary.stats.ticks;
    screen_drops = summary.screen_drops;
    face_drops = summary.face_drops;
    std::cerr << "ticks " << summary.stats.ticks << ", mean " << summary.stats.mean_ms() << " ms, max "
              << summary.stats.max_ms << " ms, segments " << summary.stats.segments_emitted << ", dropped "
              << summary.screen_drops << " screen / " << summary.face_drops << " face frames\n";
  } else {
    serve();
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = run_offline(session, opts);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    ticks = res.ticks;
    for (const auto& r : res.segments) {
      writer.add(r);
      feed.publish(r);
    }
    if (!a.debug_export.empty()) export_debug(a.debug_export, res);
    if (!a.dump_masks.empty()) dump_masks(a.dump_masks, session, res.config);
    std::cerr << "ticks " << res.ticks << ", " << res.instructor_events.size() << " fixation events, "
              << res.segments.size() << " scored segments, " << ms << " ms\n";
  }
  running = false;
  feed.finish();
  if (server && a.linger > 0) std::this_thread::sleep_for(std::chrono::duration<double>(a.linger));
  return 0;
}

using LabeledKey = std::pair<std::int64_t, std::string>;

std::int64_t read_segment(const Json& row, const std::string& where) {
  if (!row.contains("segment") || !row["segment"].is_number_integer())
    throw Error("eval-harness", where + ": row needs an integer 'segment'");
  if (!row.contains("student") || !row["student"].is_string())
    throw Error("eval-harness", where + ": row needs a string 'student'");
  return row["segment"].get<std::int64_t>();
}

template <class F>
void for_each_row(const std::string& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw Error("eval-harness", "cannot open " + path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json row;
    try {
      row = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw Error("eval-harness", path + ":" + std::to_string(n) + ": " + e.what());
    }
    f(row, path + ":" + std::to_string(n));
  }
}

Json metrics_json(const ConfusionCounts& c) {
  return Json{{"tp", c.tp},
              {"fp", c.fp},
              {"tn", c.tn},
              {"fn", c.fn},
              {"na", c.not_available},
              {"specificity", optional_json(specificity(c))},
              {"npv", optional_json(npv(c))},
              {"f2", optional_json(f_beta(c, 2.0))}};
}

int cmd_evaluate(const std::string& pred_path, const std::string& label_path, std::optional<double> threshold,
                 const std::string& out_path) {
  Predictions pred;
  for_each_row(pred_path, [&](const Json& row, const std::string& where) {
    const auto seg = read_segment(row, where);
    std::optional<Label> label;
    if (threshold) {
      if (!row.contains("Cs")) throw Error("eval-harness", where + ": --threshold needs a 'Cs' column");
      if (!row["Cs"].is_null()) label = row["Cs"].get<double>() >= *threshold ? Label::engaged : Label::non_engaged;
    } else {
      const char* key = row.contains("prediction") ? "prediction" : "baseline";
      if (!row.contains(key)) throw Error("eval-harness", where + ": row needs 'prediction' or 'baseline'");
      if (!row[key].is_null()) label = parse_label(row[key].get<std::string>());
    }
    if (!pred.emplace(LabelKey{seg, row["student"]}, label).second)
      throw Error("eval-harness", where + ": duplicate prediction");
  });
  GroundTruth truth;
  for_each_row(label_path, [&](const Json& row, const std::string& where) {
    const auto seg = read_segment(row, where);
    if (!row.contains("label") || !row["label"].is_string()) throw Error("eval-harness", where + ": row needs 'label'");
    if (!truth.emplace(LabelKey{seg, row["student"]}, parse_label(row["label"].get<std::string>())).second)
      throw Error("eval-harness", where + ": duplicate label");
  });

  Json report{{"overall", metrics_json(confusion(pred, truth))}};
  std::map<std::string, std::pair<Predictions, GroundTruth>> by_student;
  for (const auto& [k, v] : truth) by_student[k.second].second.emplace(k, v);
  for (const auto& [k, v] : pred) by_student[k.second].first.emplace(k, v);
  Json per = Json::object();
  for (const auto& [id, pg] : by_student) per[id] = metrics_json(confusion(pg.first, pg.second));
  report["per_participant"] = per;
  std::cout << report.dump(2) << '\n';
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << report.dump(2) << '\n';
  }
  return 0;
}

int cmd_calibrate(const std::string& corpus, bool generate, int pairs, int bins) {
  if (generate) synth::write_calibration_corpus(corpus, pairs);
  auto distances = [&](const std::string& sub) {
    std::vector<double> out;
    const fs::path dir = fs::path(corpus) / sub;
    if (!fs::is_directory(dir)) throw Error("presence-analysis", "corpus has no " + sub + "/ directory");
    std::vector<fs::path> firsts;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.size() > 6 && name.ends_with("_a.pgm")) firsts.push_back(e.path());
    }
    std::sort(firsts.begin(), firsts.end());
    for (const auto& a : firsts) {
      auto b = a.string();
      b.replace(b.size() - 6, 6, "_b.pgm");
      out.push_back(chi_square_distance(build_scaled_histogram(read_pgm(a.string()), bins),
                                        build_scaled_histogram(read_pgm(b), bins)));
    }
    return out;
  };
  const auto same = distances("same");
  const auto diff = distances("diff");
  if (same.empty() || diff.empty()) throw Error("presence-analysis", "corpus needs pairs in same/ and diff/");
  const double max_same = *std::max_element(same.begin(), same.end());
  const double min_diff = *std::min_element(diff.begin(), diff.end());
  const double current = PresenceConfig{}.max_distance;
  int same_rejected = 0;
  int diff_accepted = 0;
  for (double d : same) same_rejected += d > current;
  for (double d : diff) diff_accepted += d <= current;
  const Json report{{"bins", bins},
                    {"same_pairs", same.size()},
                    {"diff_pairs", diff.size()},
                    {"max_same", max_same},
                    {"min_diff", min_diff},
                    {"separable", max_same < min_diff},
                    {"suggested_max_distance", max_same < min_diff ? Json((max_same + min_diff) / 2.0) : Json(nullptr)},
                    {"default_max_distance", current},
                    {"default_same_rejected", same_rejected},
                    {"default_diff_accepted", diff_accepted}};
  std::cout << report.dump(2) << '\n';
  return max_same < min_diff ? 0 : 3;
}

int cmd_bench(std::int64_t frames, int width, int height, int fps, bool realtime) {
  const auto spec = synth::bench_scenario(frames, width, height, fps);
  const auto session = synth::make_session(spec);
  const int participants = 1 + static_cast<int>(spec.students.size());
  EngineStats stats;
  std::uint64_t screen_drops = 0;
  std::uint64_t face_drops = 0;
  if (realtime) {
    LiveOptions lo;
    lo.realtime = true;
    lo.queue_budget = static_cast<std::size_t>(2 * participants * fps);
    LiveRunner runner(*session, {}, lo, nullptr);
    const auto s = runner.run();
    stats = s.stats;
    screen_drops = s.screen_drops;
    face_drops = s.face_drops;
  } else {
    LiveEngine engine(session->config(), session->has_presentation(), session->slide_template(), nullptr);
    TickReader reader(*session);
    while (auto tick = reader.next()) engine.process(*tick);
    engine.finish();
    stats = engine.stats();
  }
  const double budget = 1000.0 / fps;
  const Json report{{"frames", stats.ticks},     {"participants", participants},
                    {"width", width},            {"height", height},
                    {"fps", fps},                {"mean_ms", stats.mean_ms()},
                    {"max_ms", stats.max_ms},    {"budget_ms", budget},
                    {"within_budget", stats.mean_ms() <= budget},
                    {"screen_drops", screen_drops}, {"face_drops", face_drops}};
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_synth(const std::string& out, const std::string& scenario, std::int64_t frames, int fps, bool separate,
              std::uint64_t seed) {
  synth::ScenarioSpec spec;
  if (scenario == "four-behaviors") {
    spec = synth::four_behaviors(320, 180, fps);
  } else if (scenario == "ten-slide") {
    spec = synth::four_behaviors(320, 180, fps);
    spec.deck = synth::ten_slide_deck(320, 180, 8.0);
  } else if (scenario == "bench") {
    spec = synth::bench_scenario(frames, 640, 360, fps);
  } else if (scenario == "empty") {
    spec = synth::four_behaviors(320, 180, fps);
    for (auto& s : spec.deck.slides) s.events.clear();
  } else {
    throw CLI::ValidationError("--scenario", "unknown scenario '" + scenario + "'");
  }
  spec.fps = fps;
  spec.separate_presentation = separate;
  spec.seed = seed;
  const auto session = synth::make_session(spec);
  write_session(out, *session);
  JsonlFile labels(fs::path(out) / "labels.jsonl");
  const synth::Deck deck(spec.deck, spec.fps);
  const auto ids = deck.significant();
  for (std::size_t seg = 0; seg < ids.size(); ++seg) {
    if (!ids[seg]) continue;
    for (const auto& s : spec.students)
      labels.write(Json{{"segment", seg}, {"student", s.id}, {"label", std::string(to_string(synth::expected_label(s)))}});
  }
  std::cerr << "wrote " << out << " (" << deck.length() << " frames)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Engagement analytics engine"};
  app.require_subcommand(1);

  RunArgs ra;
  auto* run = app.add_subcommand("run", "score a recorded session");
  run->add_option("--session", ra.session, "session directory")->required()->check(CLI::ExistingDirectory);
  run->add_option("--mode", ra.mode, "auto | slice")->check(CLI::IsMember({"auto", "automatic", "slice", "manual"}));
  run->add_option("--slice", ra.slice, "slice length in minutes")->check(CLI::IsMember({3, 5, 15}));
  run->add_option("--serve", ra.serve, "serve the score feed on this port (0 = any)");
  run->add_option("--host", ra.host, "feed bind address");
  run->add_flag("--live", ra.live, "run the incremental engine");
  run->add_flag("--realtime", ra.realtime, "pace live input at the session fps");
  run->add_option("--queue-budget", ra.queue_budget, "live queue capacity in frames (0 = unbounded)");
  run->add_flag("--no-drops", ra.no_drops, "block the reader instead of dropping frames");
  run->add_option("--out", ra.out, "output directory");
  run->add_option("--debug-export", ra.debug_export, "directory for intermediate results");
  run->add_option("--dump-masks", ra.dump_masks, "directory for per-frame foreground masks (PBM)");
  run->add_option("--linger", ra.linger, "seconds to keep serving after the run");
  run->add_flag("--sequential", ra.sequential, "offline: process streams on one thread");

  std::string pred, labels, report_out;
  std::optional<double> threshold;
  auto* eval = app.add_subcommand("evaluate", "specificity, NPV and F2 against labels");
  eval->add_option("--pred", pred, "predictions.jsonl or baseline.jsonl")->required()->check(CLI::ExistingFile);
  eval->add_option("--labels", labels, "labels.jsonl")->required()->check(CLI::ExistingFile);
  eval->add_option("--threshold", threshold, "recompute predictions as Cs >= threshold")->check(CLI::Range(0.0, 100.0));
  eval->add_option("--out", report_out, "also write the report here");

  std::string corpus;
  bool generate = false;
  int pairs = 20;
  int bins = PresenceConfig{}.bins;
  auto* cal = app.add_subcommand("calibrate-dh", "histogram distance threshold from a labeled pair corpus");
  cal->add_option("--corpus", corpus, "directory with same/ and diff/ pairs")->required();
  cal->add_flag("--generate", generate, "write a synthetic corpus first");
  cal->add_option("--pairs", pairs, "pairs to generate")->check(CLI::PositiveNumber);
  cal->add_option("--bins", bins, "histogram bins");

  std::int64_t frames = 600;
  int width = 640, height = 360, fps = 30;
  bool realtime = false;
  auto* bench = app.add_subcommand("bench", "per-frame live engine time on a synthetic class");
  bench->add_option("--frames", frames, "ticks to process")->check(CLI::PositiveNumber);
  bench->add_option("--width", width)->check(CLI::Range(kMinSegmentationWidth, 4096));
  bench->add_option("--height", height)->check(CLI::Range(kMinSegmentationHeight, 4096));
  bench->add_option("--fps", fps)->check(CLI::Range(1, 240));
  bench->add_flag("--realtime", realtime, "paced input through the bounded queue; reports drops");

  std::string synth_out, scenario = "four-behaviors";
  std::int64_t synth_frames = 1800;
  int synth_fps = 10;
  bool separate = false;
  std::uint64_t seed = 7;
  auto* syn = app.add_subcommand("synth", "write a synthetic session directory");
  syn->add_option("--out", synth_out, "session directory to create")->required();
  syn->add_option("--scenario", scenario, "four-behaviors | ten-slide | bench | empty");
  syn->add_option("--frames", synth_frames, "length of the bench scenario")->check(CLI::PositiveNumber);
  syn->add_option("--fps", synth_fps)->check(CLI::Range(1, 240));
  syn->add_flag("--separate-presentation", separate, "record the presentation apart from the instructor screen");
  syn->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(ra);
    if (*eval) return cmd_evaluate(pred, labels, threshold, report_out);
    if (*cal) return cmd_calibrate(corpus, generate, pairs, bins);
    if (*bench) return cmd_bench(frames, width, height, fps, realtime);
    if (*syn) return cmd_synth(synth_out, scenario, synth_frames, synth_fps, separate, seed);
  } catch (const Error& e) {
    std::cerr << "error [" << e.module() << "]: " << e.what() << '\n';
    return 1;
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
