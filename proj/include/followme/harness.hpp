#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "followme/decision.hpp"
#include "followme/errors.hpp"
#include "followme/gesture.hpp"
#include "followme/metrics.hpp"
#include "followme/navsim.hpp"
#include "followme/reid.hpp"
#include "followme/rng.hpp"
#include "followme/scenario.hpp"
#include "followme/tracking.hpp"

namespace followme::harness {

// Body radius used for clearance accounting. Grid inflation should cover it
// plus half a cell plus margin (0.2 + 0.05 + 0.05 = 0.3, the default).
inline constexpr double kRobotBodyRadius = 0.2;

// ---------------------------------------------------------------------------
// Synthetic appearance features

// Stands in for a deep re-identification backbone: every identity is a fixed
// point on the unit hypersphere, observed through per-component Gaussian
// noise and an optional slow multiplicative drift.
class EmbeddingGenerator {
 public:
  EmbeddingGenerator(int dim, std::uint64_t centroid_seed,
                     std::uint64_t noise_seed, double noise_std,
                     double drift_amplitude = 0.0, double drift_period = 30.0)
      : noise_std_(noise_std),
        drift_amplitude_(drift_amplitude),
        drift_period_(drift_period),
        noise_rng_(noise_seed) {
    if (dim < 1) throw InvalidInputError("EmbeddingGenerator: dim must be >= 1");
    if (!(noise_std > 0.0)) {
      throw InvalidInputError("EmbeddingGenerator: noise_std must be positive");
    }
    if (drift_amplitude < 0.0 || !(drift_period > 0.0)) {
      throw InvalidInputError("EmbeddingGenerator: bad drift parameters");
    }
    Rng centroid_rng(centroid_seed);
    centroid_ = unit_centroid(dim, centroid_rng);
    drift_phase_ = centroid_rng.uniform(0.0, 2.0 * tracking::kPi);
  }

  static reid::FeatureVector unit_centroid(int dim, Rng& rng) {
    reid::FeatureVector c(dim);
    double norm_sq = 0.0;
    for (double& v : c) {
      v = rng.gaussian();
      norm_sq += v * v;
    }
    if (norm_sq <= 0.0) {
      c.assign(dim, 0.0);
      c[0] = 1.0;
      return c;
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& v : c) v *= inv;
    return c;
  }

  reid::FeatureVector sample(double t = 0.0) {
    const double factor =
        1.0 + drift_amplitude_ *
                  std::sin(2.0 * tracking::kPi * t / drift_period_ +
                           drift_phase_);
    reid::FeatureVector f(centroid_.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i] = centroid_[i] * factor + noise_std_ * noise_rng_.gaussian();
    }
    return f;
  }

  const reid::FeatureVector& centroid() const { return centroid_; }
  double noise_std() const { return noise_std_; }

 private:
  reid::FeatureVector centroid_;
  double noise_std_;
  double drift_amplitude_;
  double drift_period_;
  double drift_phase_ = 0.0;
  Rng noise_rng_;
};

// ---------------------------------------------------------------------------
// Synthetic hand landmarks

namespace detail {

inline constexpr std::array<double, 5> kFingerAngles = {-0.42, -0.21, 0.0,
                                                        0.21, 0.42};
inline constexpr std::array<double, 4> kOpenRadii = {0.35, 0.55, 0.75, 0.93};
// Curled finger joints as (radius in the palm plane, height out of it).
inline constexpr std::array<std::array<double, 2>, 4> kCurledJoints = {
    {{0.42, 0.0}, {0.45, 0.10}, {0.32, 0.16}, {0.18, 0.12}}};

inline void place_finger(gesture::LandmarkSet& lm, int finger,
                         bool extended) {
  const double s = std::sin(kFingerAngles[finger]);
  const double c = std::cos(kFingerAngles[finger]);
  for (int j = 0; j < 4; ++j) {
    double radius;
    double z;
    if (extended) {
      radius = kOpenRadii[j];
      z = 0.0;
    } else {
      radius = kCurledJoints[j][0];
      z = kCurledJoints[j][1];
    }
    lm.points[1 + 4 * finger + j] = {radius * s, radius * c, z};
  }
}

}  // namespace detail

// Canonical templates around the palm center: an open hand for Wait, a fist
// for Follow, and a randomized mixed pose for Other, plus Gaussian jitter.
// The result is scale-normalized like any real landmark input would be.
inline gesture::LandmarkSet gen_landmarks(gesture::GestureClass cls, Rng& rng,
                                          double jitter = 0.02) {
  if (jitter < 0.0) throw InvalidInputError("gen_landmarks: negative jitter");
  gesture::LandmarkSet lm;
  double rotation = 0.0;
  switch (cls) {
    case gesture::GestureClass::Wait:
      lm.points[0] = {0.0, -0.12, 0.0};
      for (int f = 0; f < 5; ++f) detail::place_finger(lm, f, true);
      break;
    case gesture::GestureClass::Follow:
      lm.points[0] = {0.0, -0.55, 0.0};
      for (int f = 0; f < 5; ++f) detail::place_finger(lm, f, false);
      break;
    case gesture::GestureClass::Other: {
      lm.points[0] = {0.0, -0.35, 0.0};
      std::array<bool, 5> extended{};
      bool all_same = true;
      do {
        for (bool& e : extended) e = rng.uniform() < 0.5;
        all_same = std::all_of(extended.begin(), extended.end(),
                               [&](bool e) { return e == extended[0]; });
      } while (all_same);
      for (int f = 0; f < 5; ++f) detail::place_finger(lm, f, extended[f]);
      rotation = rng.uniform(-0.7, 0.7);
      break;
    }
  }
  if (rotation != 0.0) {
    const double cr = std::cos(rotation);
    const double sr = std::sin(rotation);
    for (auto& p : lm.points) {
      const double x = p[0];
      const double y = p[1];
      p[0] = cr * x - sr * y;
      p[1] = sr * x + cr * y;
    }
  }
  if (jitter > 0.0) {
    for (auto& p : lm.points) {
      for (double& v : p) v += rng.gaussian(0.0, jitter);
    }
  }
  return gesture::scale_normalized(lm);
}

inline std::vector<gesture::LabeledLandmarks> make_gesture_corpus(
    int per_class, std::uint64_t seed, double jitter = 0.02) {
  if (per_class < 1) {
    throw InvalidInputError("make_gesture_corpus: per_class must be >= 1");
  }
  std::vector<gesture::LabeledLandmarks> corpus;
  corpus.reserve(3 * static_cast<std::size_t>(per_class));
  for (int c = 0; c < 3; ++c) {
    const auto cls = static_cast<gesture::GestureClass>(c);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    for (int i = 0; i < per_class; ++i) {
      corpus.push_back({gen_landmarks(cls, rng, jitter), cls});
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Re-identification benchmark and scoring

struct ReidFrame {
  bool target_present = false;
  int target_index = -1;  // position inside `features`, -1 when absent
  std::vector<reid::FeatureVector> features;
};

struct ReidBenchmarkOptions {
  int identities = 8;
  int dim = reid::kDefaultFeatureDim;
  int calibration_frames = 500;
  int test_frames = 1000;
  double separation_ratio = 8.0;  // centroid gap over noise magnitude
  double split = reid::kDefaultSplitFraction;
  int max_distractors = 3;
  double present_probability = 0.5;
};

struct ReidBenchmark {
  std::vector<std::string> tags;
  std::vector<reid::CalibrationProfile> profiles;
  std::vector<std::vector<ReidFrame>> frames;  // per subject
  double noise_std = 0.0;
};

inline ReidBenchmark make_reid_benchmark(std::uint64_t seed,
                                         const ReidBenchmarkOptions& opts =
                                             {}) {
  if (opts.identities < 2) {
    throw InvalidInputError("make_reid_benchmark: need >= 2 identities");
  }
  if (opts.dim < 2) {
    throw InvalidInputError("make_reid_benchmark: dim must be >= 2");
  }
  if (opts.test_frames < 1 || opts.calibration_frames < 6) {
    throw InvalidInputError("make_reid_benchmark: too few frames");
  }
  if (!(opts.separation_ratio > 0.0)) {
    throw InvalidInputError(
        "make_reid_benchmark: separation_ratio must be positive");
  }
  if (opts.max_distractors < 0 ||
      opts.max_distractors > opts.identities - 1) {
    throw InvalidInputError("make_reid_benchmark: bad max_distractors");
  }
  if (opts.present_probability < 0.0 || opts.present_probability > 1.0) {
    throw InvalidInputError(
        "make_reid_benchmark: present_probability must lie in [0, 1]");
  }

  ReidBenchmark bench;
  std::vector<reid::FeatureVector> centroids;
  Rng centroid_rng(derive_seed(seed, 1));
  for (int s = 0; s < opts.identities; ++s) {
    centroids.push_back(
        EmbeddingGenerator::unit_centroid(opts.dim, centroid_rng));
    bench.tags.push_back("s" + std::to_string(s));
  }

  double min_chord = std::numeric_limits<double>::infinity();
  for (int a = 0; a < opts.identities; ++a) {
    for (int b = a + 1; b < opts.identities; ++b) {
      double sq = 0.0;
      for (int i = 0; i < opts.dim; ++i) {
        const double d = centroids[a][i] - centroids[b][i];
        sq += d * d;
      }
      min_chord = std::min(min_chord, std::sqrt(sq));
    }
  }
  // Noise magnitude (std of the full-vector perturbation) is the centroid
  // gap divided by the separation ratio.
  bench.noise_std =
      min_chord / (opts.separation_ratio * std::sqrt(opts.dim));

  const auto draw = [&](int identity, Rng& rng) {
    reid::FeatureVector f(centroids[identity].size());
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i] = centroids[identity][i] + bench.noise_std * rng.gaussian();
    }
    return f;
  };

  for (int s = 0; s < opts.identities; ++s) {
    Rng calib_rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(s)));
    std::vector<reid::FeatureVector> samples;
    samples.reserve(opts.calibration_frames);
    for (int i = 0; i < opts.calibration_frames; ++i) {
      samples.push_back(draw(s, calib_rng));
    }
    bench.profiles.push_back(reid::calibrate(samples, opts.split));
  }

  for (int s = 0; s < opts.identities; ++s) {
    Rng rng(derive_seed(seed, 10000 + static_cast<std::uint64_t>(s)));
    std::vector<ReidFrame> subject_frames;
    subject_frames.reserve(opts.test_frames);
    for (int i = 0; i < opts.test_frames; ++i) {
      ReidFrame frame;
      frame.target_present = rng.uniform() < opts.present_probability;
      const int n_distractors = static_cast<int>(
          rng.uniform_index(static_cast<std::uint64_t>(opts.max_distractors) +
                            1));
      std::set<int> others;
      while (static_cast<int>(others.size()) < n_distractors) {
        const int id = static_cast<int>(
            rng.uniform_index(static_cast<std::uint64_t>(opts.identities)));
        if (id != s) others.insert(id);
      }
      std::vector<int> identities(others.begin(), others.end());
      if (frame.target_present) {
        frame.target_index = static_cast<int>(
            rng.uniform_index(identities.size() + 1));
        identities.insert(identities.begin() + frame.target_index, s);
      }
      for (int id : identities) frame.features.push_back(draw(id, rng));
      subject_frames.push_back(std::move(frame));
    }
    bench.frames.push_back(std::move(subject_frames));
  }
  return bench;
}

struct SubjectEvaluation {
  std::string tag;
  metrics::MetricsReport report;  // labels {target, no_target}
};

struct ReidEvaluation {
  std::vector<SubjectEvaluation> per_subject;
  double accuracy = 0.0;  // per-subject accuracies, averaged
  double target_precision = 0.0;
  double target_recall = 0.0;
  double target_f1 = 0.0;
  std::size_t total_frames = 0;
};

// Scores each frame with the two-rule protocol: a target-present frame is
// correct only when that exact person is re-identified, a target-absent
// frame only when nobody is; metrics are computed per subject and averaged.
inline ReidEvaluation eval_reid(
    const std::vector<reid::CalibrationProfile>& profiles,
    const std::vector<std::string>& tags,
    const std::vector<std::vector<ReidFrame>>& frames) {
  if (profiles.size() != tags.size() || profiles.size() != frames.size()) {
    throw InvalidInputError("eval_reid: profiles/tags/frames size mismatch");
  }
  if (profiles.empty()) {
    throw InvalidInputError("eval_reid: empty test set");
  }
  const std::vector<std::string> labels = {"target", "no_target"};
  ReidEvaluation ev;
  for (std::size_t s = 0; s < profiles.size(); ++s) {
    if (frames[s].empty()) {
      throw InvalidInputError("eval_reid: no frames for subject " + tags[s]);
    }
    std::vector<int> actual;
    std::vector<int> predicted;
    actual.reserve(frames[s].size());
    predicted.reserve(frames[s].size());
    for (const ReidFrame& frame : frames[s]) {
      const reid::IdentificationResult res =
          reid::identify(frame.features, profiles[s]);
      actual.push_back(frame.target_present ? 0 : 1);
      bool claimed;
      if (frame.target_present) {
        claimed = res.found() &&
                  static_cast<int>(*res.target_index) == frame.target_index;
      } else {
        claimed = res.found();
      }
      predicted.push_back(claimed ? 0 : 1);
    }
    SubjectEvaluation se;
    se.tag = tags[s];
    se.report = metrics::compute_metrics(labels, actual, predicted);
    ev.total_frames += frames[s].size();
    ev.accuracy += se.report.accuracy;
    ev.target_precision += se.report.per_class[0].precision;
    ev.target_recall += se.report.per_class[0].recall;
    ev.target_f1 += se.report.per_class[0].f1;
    ev.per_subject.push_back(std::move(se));
  }
  const double n = static_cast<double>(ev.per_subject.size());
  ev.accuracy /= n;
  ev.target_precision /= n;
  ev.target_recall /= n;
  ev.target_f1 /= n;
  return ev;
}

inline nlohmann::json reid_evaluation_to_json(const ReidEvaluation& ev) {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& se : ev.per_subject) {
    subjects.push_back(
        {{"tag", se.tag}, {"report", metrics::to_json(se.report)}});
  }
  return nlohmann::json{{"schema_version", 1},
                        {"subjects", subjects},
                        {"averaged",
                         {{"accuracy", ev.accuracy},
                          {"target_precision", ev.target_precision},
                          {"target_recall", ev.target_recall},
                          {"target_f1", ev.target_f1}}},
                        {"total_frames", ev.total_frames}};
}

// Frame log: one JSON object per line, grouped by subject on read in
// first-appearance order.
inline void write_reid_frames(std::ostream& out,
                              const std::vector<std::string>& tags,
                              const std::vector<std::vector<ReidFrame>>&
                                  frames) {
  for (std::size_t s = 0; s < tags.size(); ++s) {
    for (const ReidFrame& f : frames[s]) {
      nlohmann::json j{{"subject", tags[s]},
                       {"target_present", f.target_present},
                       {"features", f.features}};
      if (f.target_present) j["target_index"] = f.target_index;
      out << j.dump() << "\n";
    }
  }
}

struct ReidFrameSet {
  std::vector<std::string> tags;
  std::vector<std::vector<ReidFrame>> frames;
};

inline ReidFrameSet read_reid_frames(std::istream& in,
                                     const std::string& name) {
  ReidFrameSet set;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, std::string("invalid JSON: ") + e.what());
    }
    ReidFrame frame;
    std::string subject;
    try {
      subject = j.at("subject").get<std::string>();
      frame.target_present = j.at("target_present").get<bool>();
      frame.features =
          j.at("features").get<std::vector<reid::FeatureVector>>();
      if (frame.target_present) {
        frame.target_index = j.at("target_index").get<int>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where, std::string("bad frame record: ") + e.what());
    }
    if (frame.target_present &&
        (frame.target_index < 0 ||
         frame.target_index >= static_cast<int>(frame.features.size()))) {
      throw ParseError(where, "target_index out of range");
    }
    std::size_t s = 0;
    while (s < set.tags.size() && set.tags[s] != subject) ++s;
    if (s == set.tags.size()) {
      set.tags.push_back(subject);
      set.frames.emplace_back();
    }
    set.frames[s].push_back(std::move(frame));
  }
  return set;
}

inline void save_reid_frames(const std::string& path,
                             const std::vector<std::string>& tags,
                             const std::vector<std::vector<ReidFrame>>&
                                 frames) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open frames file for writing: " + path);
  write_reid_frames(out, tags, frames);
}

inline ReidFrameSet load_reid_frames(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open frames file: " + path);
  return read_reid_frames(in, path);
}

// ---------------------------------------------------------------------------
// Simulation trace

struct TraceRow {
  double t = 0.0;
  tracking::MapPose robot;  // pose after this tick's motion
  decision::RobotMode mode = decision::RobotMode::Steady;
  bool alpha = false;
  bool beta = false;
  std::optional<gesture::Command> gamma;
  std::optional<tracking::GoalPose> goal;  // goal_x, goal_y, theta columns
  std::optional<navsim::Vec2> target;      // ground-truth target position
  std::optional<double> min_clearance;
};

using Trace = std::vector<TraceRow>;

inline const char* trace_csv_header() {
  return "t,robot_x,robot_y,robot_yaw,mode,alpha,beta,gamma,goal_x,goal_y,"
         "theta,target_x,target_y,min_clearance";
}

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
  const auto fd = navsim::detail::format_double;
  out << trace_csv_header() << "\n";
  for (const TraceRow& r : trace) {
    out << fd(r.t) << "," << fd(r.robot.x) << "," << fd(r.robot.y) << ","
        << fd(r.robot.yaw) << "," << decision::to_string(r.mode) << ","
        << (r.alpha ? 1 : 0) << "," << (r.beta ? 1 : 0) << ",";
    if (r.gamma) out << gesture::to_string(*r.gamma);
    out << ",";
    if (r.goal) {
      out << fd(r.goal->x) << "," << fd(r.goal->y) << ","
          << fd(r.goal->heading);
    } else {
      out << ",,";
    }
    out << ",";
    if (r.target) {
      out << fd(r.target->x) << "," << fd(r.target->y);
    } else {
      out << ",";
    }
    out << ",";
    if (r.min_clearance && std::isfinite(*r.min_clearance)) {
      out << fd(*r.min_clearance);
    }
    out << "\n";
  }
}

inline void save_trace_csv(const std::string& path, const Trace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open trace file for writing: " + path);
  write_trace_csv(out, trace);
}

// ---------------------------------------------------------------------------
// Closed-loop simulation

struct SimSummary {
  std::size_t ticks = 0;
  double tick = 0.0;
  double duration = 0.0;
  std::size_t collision_ticks = 0;
  double min_clearance = std::numeric_limits<double>::infinity();
  std::array<std::size_t, 4> mode_ticks{};  // indexed by RobotMode
  std::vector<std::pair<double, gesture::Command>> commands;
  std::size_t plan_failures = 0;  // goal present but no usable path
  tracking::MapPose final_robot;
  std::optional<navsim::Vec2> final_target;
  std::optional<double> final_distance;
};

struct SimResult {
  Trace trace;
  SimSummary summary;
};

inline nlohmann::json summary_to_json(const SimSummary& s) {
  nlohmann::json commands = nlohmann::json::array();
  for (const auto& [t, cmd] : s.commands) {
    commands.push_back({{"t", t}, {"command", gesture::to_string(cmd)}});
  }
  nlohmann::json j{
      {"schema_version", 1},
      {"ticks", s.ticks},
      {"tick", s.tick},
      {"duration", s.duration},
      {"collision_ticks", s.collision_ticks},
      {"min_clearance", std::isfinite(s.min_clearance)
                            ? nlohmann::json(s.min_clearance)
                            : nlohmann::json(nullptr)},
      {"mode_ticks",
       {{"steady", s.mode_ticks[0]},
        {"follow", s.mode_ticks[1]},
        {"search", s.mode_ticks[2]},
        {"wait", s.mode_ticks[3]}}},
      {"commands", commands},
      {"plan_failures", s.plan_failures},
      {"final_robot",
       {{"x", s.final_robot.x},
        {"y", s.final_robot.y},
        {"yaw", s.final_robot.yaw}}}};
  j["final_target"] =
      s.final_target
          ? nlohmann::json({{"x", s.final_target->x},
                            {"y", s.final_target->y}})
          : nlohmann::json(nullptr);
  j["final_distance"] = s.final_distance ? nlohmann::json(*s.final_distance)
                                         : nlohmann::json(nullptr);
  return j;
}

inline navsim::Vec2 position_at(const std::vector<scenario::Waypoint>& wps,
                                double t) {
  if (wps.empty()) {
    throw InvalidInputError("position_at: empty waypoint list");
  }
  if (t <= wps.front().t) return {wps.front().x, wps.front().y};
  for (std::size_t i = 1; i < wps.size(); ++i) {
    if (t <= wps[i].t) {
      const auto& a = wps[i - 1];
      const auto& b = wps[i];
      const double s = (t - a.t) / (b.t - a.t);
      return {a.x + s * (b.x - a.x), a.y + s * (b.y - a.y)};
    }
  }
  return {wps.back().x, wps.back().y};
}

inline std::optional<gesture::GestureClass> active_gesture(
    const std::vector<scenario::GestureScriptEntry>& script, double t) {
  for (const auto& e : script) {
    if (t >= e.start && t < e.end) return e.cls;
  }
  return std::nullopt;
}

// Runs the closed loop: sense, identify, track, gesture, decide, plan, move.
// Everything stochastic derives from the scenario seed, so two runs of the
// same scenario produce byte-identical traces. `on_tick`, when set, observes
// each trace row as it is produced (progress reporting, instrumentation).
inline SimResult run_scenario(
    const scenario::Scenario& sc,
    const std::function<void(const TraceRow&)>& on_tick = {}) {
  const navsim::OccupancyGrid grid = scenario::load_map(sc.map, sc.base_dir);

  navsim::RobotModel robot;
  robot.pose = {sc.robot.x, sc.robot.y, tracking::wrap_angle(sc.robot.yaw)};
  robot.v_max = sc.robot.v_max;
  robot.omega_search = sc.robot.omega_search;
  robot.safety_radius = navsim::safety_distance(sc.robot.v_max,
                                                sc.robot.t_exp);

  int target_i = -1;
  for (std::size_t i = 0; i < sc.persons.size(); ++i) {
    if (sc.persons[i].is_target) target_i = static_cast<int>(i);
  }

  // Appearance: centroid depends only on the person's centroid_seed, noise
  // streams are per-person; calibration uses its own noise stream.
  const std::uint64_t reid_root = derive_seed(sc.seed, 1);
  std::vector<EmbeddingGenerator> generators;
  generators.reserve(sc.persons.size());
  for (std::size_t i = 0; i < sc.persons.size(); ++i) {
    const auto& p = sc.persons[i];
    generators.emplace_back(sc.reid.dim,
                            derive_seed(reid_root, p.centroid_seed),
                            derive_seed(reid_root, 1000 + i),
                            p.noise_std.value_or(sc.reid.noise_std),
                            sc.reid.drift_amplitude);
  }

  std::optional<reid::CalibrationProfile> profile;
  if (target_i >= 0) {
    const auto& p = sc.persons[target_i];
    EmbeddingGenerator calib_gen(sc.reid.dim,
                                 derive_seed(reid_root, p.centroid_seed),
                                 derive_seed(reid_root, 999),
                                 p.noise_std.value_or(sc.reid.noise_std),
                                 sc.reid.drift_amplitude);
    std::vector<reid::FeatureVector> samples;
    samples.reserve(sc.reid.calibration_frames);
    for (int i = 0; i < sc.reid.calibration_frames; ++i) {
      samples.push_back(calib_gen.sample(0.0));
    }
    profile = reid::calibrate(samples, sc.reid.split);
  }

  const bool any_gestures =
      std::any_of(sc.persons.begin(), sc.persons.end(),
                  [](const scenario::PersonSpec& p) {
                    return !p.gestures.empty();
                  });
  std::optional<gesture::GestureModel> gesture_model;
  if (any_gestures) {
    gesture_model = gesture::train(make_gesture_corpus(
        sc.gesture.train_per_class, derive_seed(sc.seed, 2),
        sc.gesture.jitter));
  }
  gesture::Debouncer debouncer(sc.gesture.debounce_count);

  tracking::KalmanParams kf_params;
  kf_params.q = sc.tracker.q;
  kf_params.r = sc.tracker.r;
  kf_params.t_exp = sc.robot.t_exp;
  tracking::TargetTracker tracker(kf_params);

  decision::DecisionMachine machine;

  Rng cluster_rng(derive_seed(sc.seed, 4));
  std::vector<Rng> landmark_rngs;
  for (std::size_t i = 0; i < sc.persons.size(); ++i) {
    landmark_rngs.emplace_back(derive_seed(derive_seed(sc.seed, 3), i));
  }

  std::optional<navsim::Vec2> last_target_map;

  SimResult result;
  result.summary.tick = sc.tick;
  result.summary.duration = sc.duration;
  const std::size_t n_ticks = static_cast<std::size_t>(
      std::max<long long>(0, std::llround(sc.duration / sc.tick)));
  result.trace.reserve(n_ticks);

  for (std::size_t n = 0; n < n_ticks; ++n) {
    const double t = static_cast<double>(n) * sc.tick;

    std::vector<navsim::Vec2> person_pos(sc.persons.size());
    std::vector<navsim::SensedPerson> sensed(sc.persons.size());
    for (std::size_t i = 0; i < sc.persons.size(); ++i) {
      const auto& p = sc.persons[i];
      person_pos[i] = position_at(p.waypoints, t);
      sensed[i].tag = p.tag;
      sensed[i].position = person_pos[i];
      sensed[i].feature = [&gen = generators[i], t] { return gen.sample(t); };
      const auto active = active_gesture(p.gestures, t);
      sensed[i].landmarks =
          [active, &rng = landmark_rngs[i], jitter = sc.gesture.jitter]()
          -> std::optional<gesture::LandmarkSet> {
        if (!active) return std::nullopt;
        return gen_landmarks(*active, rng, jitter);
      };
    }

    const std::vector<navsim::Observation> observations =
        navsim::sense(grid, robot.pose, sc.sensor, sensed, cluster_rng);

    const tracking::Transform3 cam_to_map = navsim::camera_to_map(robot.pose);
    const navsim::Observation* target_obs = nullptr;
    if (profile && !observations.empty()) {
      std::vector<reid::FeatureVector> features;
      features.reserve(observations.size());
      for (const auto& o : observations) features.push_back(o.feature);
      const reid::IdentificationResult res = reid::identify(features,
                                                            *profile);
      if (res.found()) target_obs = &observations[*res.target_index];
    }

    if (target_obs) {
      const auto z = tracking::centroid(target_obs->point_cluster);
      if (z) {
        tracker.observe(*z, t);
      } else {
        tracker.advance(t);
      }
    } else {
      tracker.advance(t);
    }

    const bool alpha = tracker.valid(t);
    std::optional<tracking::GoalPose> goal;
    if (alpha) {
      const tracking::Vec3 p_cam = *tracker.position(t);
      const tracking::Vec3 p_map = cam_to_map.apply(p_cam);
      goal = tracking::make_goal(p_map, p_cam);
      last_target_map = navsim::Vec2{p_map.x(), p_map.y()};
    }

    const bool beta =
        last_target_map &&
        navsim::inside_safety_circle(robot.pose, *last_target_map,
                                     robot.safety_radius);

    std::optional<gesture::Command> command;
    if (target_obs && target_obs->landmarks && gesture_model) {
      command = debouncer.step(
          gesture::classify(*gesture_model, *target_obs->landmarks));
      if (command) result.summary.commands.emplace_back(t, *command);
    }

    decision::EventFrame ev;
    ev.target_tracked = alpha;
    ev.target_inside_safety = beta;
    ev.command = command;
    if (last_target_map) {
      ev.last_seen_bearing = tracking::wrap_angle(
          std::atan2(last_target_map->y - robot.pose.y,
                     last_target_map->x - robot.pose.x));
    }

    const decision::Directive directive = machine.step(ev, goal);

    std::vector<navsim::Vec2> obstacles_now;
    for (std::size_t i = 0; i < sc.persons.size(); ++i) {
      if (static_cast<int>(i) != target_i) {
        obstacles_now.push_back(person_pos[i]);
      }
    }

    navsim::PlanResult plan_result;
    const std::vector<navsim::Vec2>* path = nullptr;
    if (directive.kind == decision::DirectiveKind::SendGoal) {
      std::vector<navsim::DynamicObstacle> dynamic;
      for (const auto& o : obstacles_now) {
        dynamic.push_back({o, navsim::kPersonObstacleRadius});
      }
      plan_result = navsim::plan(grid, {robot.pose.x, robot.pose.y},
                                 {directive.goal->x, directive.goal->y},
                                 dynamic);
      if (plan_result.status == navsim::PlanStatus::Found) {
        path = &plan_result.path;
      } else {
        result.summary.plan_failures++;
      }
    }

    decision::SearchProgress* sp =
        directive.kind == decision::DirectiveKind::RotateToward
            ? &machine.search()
            : nullptr;
    robot = navsim::step_robot(robot, directive, path, sc.tick, sp);

    // The camera moved with the robot: re-express the camera-frame filter
    // state in the new frame so ego-motion doesn't alias into target motion.
    if (tracker.initialized()) {
      tracker.rebase(tracking::compose(
          navsim::camera_to_map(robot.pose).inverse(), cam_to_map));
    }

    const double clearance = navsim::min_clearance(
        grid, {robot.pose.x, robot.pose.y}, obstacles_now, kRobotBodyRadius);

    TraceRow row;
    row.t = t;
    row.robot = robot.pose;
    row.mode = machine.mode();
    row.alpha = alpha;
    row.beta = beta;
    row.gamma = command;
    row.goal = goal;
    if (target_i >= 0) row.target = person_pos[target_i];
    if (std::isfinite(clearance)) row.min_clearance = clearance;
    result.trace.push_back(row);
    if (on_tick) on_tick(result.trace.back());

    result.summary.ticks++;
    result.summary.mode_ticks[static_cast<int>(machine.mode())]++;
    if (std::isfinite(clearance)) {
      result.summary.min_clearance =
          std::min(result.summary.min_clearance, clearance);
      if (clearance <= 0.0) result.summary.collision_ticks++;
    }
  }

  result.summary.final_robot = robot.pose;
  if (target_i >= 0 && n_ticks > 0) {
    const double t_last = static_cast<double>(n_ticks - 1) * sc.tick;
    result.summary.final_target =
        position_at(sc.persons[target_i].waypoints, t_last);
    result.summary.final_distance =
        navsim::distance({robot.pose.x, robot.pose.y},
                         *result.summary.final_target);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Built-in scenarios

namespace detail {

inline std::vector<std::string> empty_rows(int width, int height) {
  return std::vector<std::string>(height, std::string(width, '.'));
}

// Cell-coordinate block fill; y counts up from the bottom of the map.
inline void fill_cells(std::vector<std::string>& rows, int x0, int y0, int x1,
                       int y1) {
  const int h = static_cast<int>(rows.size());
  for (int cy = y0; cy <= y1; ++cy) {
    for (int cx = x0; cx <= x1; ++cx) {
      rows[h - 1 - cy][cx] = '#';
    }
  }
}

inline void add_border(std::vector<std::string>& rows) {
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.front().size());
  fill_cells(rows, 0, 0, w - 1, 0);
  fill_cells(rows, 0, h - 1, w - 1, h - 1);
  fill_cells(rows, 0, 0, 0, h - 1);
  fill_cells(rows, w - 1, 0, w - 1, h - 1);
}

inline scenario::MapSpec room_map(int width_cells, int height_cells) {
  scenario::MapSpec map;
  map.rows = empty_rows(width_cells, height_cells);
  add_border(map.rows);
  map.resolution = 0.1;
  map.inflation_radius = 0.3;
  return map;
}

}  // namespace detail

// Target walks a straight 10 m line after a Follow gesture.
inline scenario::Scenario make_straight_scenario() {
  scenario::Scenario sc;
  sc.seed = 7;
  sc.duration = 60.0;
  sc.tick = 0.1;
  sc.map = detail::room_map(160, 60);
  sc.robot = {2.2, 3.0, 0.0, 0.3, navsim::kDefaultOmegaSearch, 3.0};

  scenario::PersonSpec target;
  target.tag = "target";
  target.is_target = true;
  target.centroid_seed = 1;
  target.waypoints = {{0.0, 3.0, 3.0}, {2.0, 3.0, 3.0}, {42.0, 13.0, 3.0}};
  target.gestures = {{1.0, 2.0, gesture::GestureClass::Follow}};
  sc.persons.push_back(target);
  return sc;
}

// Follow, then a Wait gesture mid-walk; the target keeps going and the robot
// must stay put.
inline scenario::Scenario make_gesture_stop_scenario() {
  scenario::Scenario sc = make_straight_scenario();
  sc.seed = 9;
  sc.duration = 50.0;
  sc.persons[0].gestures = {{1.0, 2.0, gesture::GestureClass::Follow},
                            {20.0, 22.0, gesture::GestureClass::Wait}};
  return sc;
}

// The evaluation course: an L-shaped target path with two static obstacle
// blocks flanking the legs, a distractor that gestures Wait in full view of
// the robot (a misattributed command would halt the run), a second
// distractor crossing the robot's lane to force a detour, and a genuine Wait
// gesture from the target while the robot is still closing the gap.
inline scenario::Scenario make_lpath_scenario() {
  scenario::Scenario sc;
  sc.seed = 11;
  sc.duration = 120.0;
  sc.tick = 0.1;
  sc.map = detail::room_map(160, 120);
  detail::fill_cells(sc.map.rows, 58, 30, 61, 33);    // beside the first leg
  detail::fill_cells(sc.map.rows, 130, 58, 133, 61);  // beside the second
  sc.robot = {2.2, 2.5, 0.0, 0.3, navsim::kDefaultOmegaSearch, 3.0};

  scenario::PersonSpec target;
  target.tag = "target";
  target.is_target = true;
  target.centroid_seed = 1;
  target.waypoints = {{0.0, 3.0, 2.5},   {2.0, 3.0, 2.5},  {40.0, 12.5, 2.5},
                      {46.0, 12.5, 2.5}, {63.0, 12.5, 9.5}};
  target.gestures = {{1.0, 2.0, gesture::GestureClass::Follow},
                     {64.5, 66.5, gesture::GestureClass::Wait}};
  sc.persons.push_back(target);

  scenario::PersonSpec d1;
  d1.tag = "distractor1";
  d1.centroid_seed = 2;
  d1.waypoints = {{0.0, 10.5, 5.5},  {20.0, 10.5, 5.5}, {24.0, 10.5, 3.3},
                  {30.0, 10.5, 3.3}, {36.0, 10.5, 5.5}};
  d1.gestures = {{25.0, 29.0, gesture::GestureClass::Wait}};
  sc.persons.push_back(d1);

  scenario::PersonSpec d2;
  d2.tag = "distractor2";
  d2.centroid_seed = 3;
  d2.waypoints = {{0.0, 14.2, 7.0}, {52.0, 14.2, 7.0}, {64.0, 10.6, 7.0}};
  sc.persons.push_back(d2);
  return sc;
}

}  // namespace followme::harness
