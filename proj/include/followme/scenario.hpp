#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "followme/errors.hpp"
#include "followme/gesture.hpp"
#include "followme/navsim.hpp"
#include "followme/reid.hpp"

namespace followme::scenario {

inline constexpr int kScenarioSchemaVersion = 1;

struct Waypoint {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
};

struct GestureScriptEntry {
  double start = 0.0;
  double end = 0.0;
  gesture::GestureClass cls = gesture::GestureClass::Other;
};

struct PersonSpec {
  std::string tag;
  bool is_target = false;
  std::uint64_t centroid_seed = 0;
  std::optional<double> noise_std;  // overrides the scenario-wide value
  std::vector<Waypoint> waypoints;
  std::vector<GestureScriptEntry> gestures;
};

// Either a reference to a map file (resolved against the scenario file's
// directory) or an inline row description.
struct MapSpec {
  std::optional<std::string> file;
  std::vector<std::string> rows;
  double resolution = 0.1;
  navsim::Vec2 origin;
  double inflation_radius = 0.3;
};

struct RobotSpec {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double v_max = 0.3;
  double omega_search = navsim::kDefaultOmegaSearch;
  double t_exp = 3.0;
};

struct ReidSpec {
  int dim = reid::kDefaultFeatureDim;
  double noise_std = 0.05;
  double drift_amplitude = 0.0;
  int calibration_frames = 120;
  double split = reid::kDefaultSplitFraction;
};

struct GestureSpec {
  int debounce_count = gesture::kDefaultDebounceCount;
  int train_per_class = 150;
  double jitter = 0.02;
};

struct TrackerSpec {
  double q = 0.5;
  double r = 0.05;
};

struct Scenario {
  std::uint64_t seed = 0;
  double duration = 0.0;
  double tick = 0.1;
  MapSpec map;
  RobotSpec robot;
  navsim::SensorModel sensor;
  ReidSpec reid;
  GestureSpec gesture;
  TrackerSpec tracker;
  std::vector<PersonSpec> persons;
  std::string base_dir;  // directory of the scenario file, not serialized
};

namespace detail {

inline void require_object(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected a JSON object");
}

inline void check_keys(const nlohmann::json& obj, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ParseError(path.empty() ? key : path + "." + key,
                       "unknown field");
    }
  }
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline double get_number(const nlohmann::json& obj, const std::string& path,
                         const std::string& key) {
  if (!obj.contains(key)) throw ParseError(join(path, key), "missing field");
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ParseError(join(path, key), "expected a number");
  return v.get<double>();
}

inline double opt_number(const nlohmann::json& obj, const std::string& path,
                         const std::string& key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ParseError(join(path, key), "expected a number");
  return v.get<double>();
}

inline int opt_int(const nlohmann::json& obj, const std::string& path,
                   const std::string& key, int fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) {
    throw ParseError(join(path, key), "expected an integer");
  }
  return v.get<int>();
}

inline std::uint64_t opt_u64(const nlohmann::json& obj,
                             const std::string& path, const std::string& key,
                             std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_unsigned() && !v.is_number_integer()) {
    throw ParseError(join(path, key), "expected a non-negative integer");
  }
  if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
    throw ParseError(join(path, key), "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline bool opt_bool(const nlohmann::json& obj, const std::string& path,
                     const std::string& key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_boolean()) throw ParseError(join(path, key), "expected a boolean");
  return v.get<bool>();
}

inline std::string get_string(const nlohmann::json& obj,
                              const std::string& path,
                              const std::string& key) {
  if (!obj.contains(key)) throw ParseError(join(path, key), "missing field");
  const auto& v = obj.at(key);
  if (!v.is_string()) throw ParseError(join(path, key), "expected a string");
  return v.get<std::string>();
}

inline MapSpec parse_map(const nlohmann::json& j, const std::string& path) {
  require_object(j, path);
  check_keys(j, path, {"file", "rows", "resolution", "origin_x", "origin_y",
                       "inflation_radius"});
  MapSpec m;
  const bool has_file = j.contains("file");
  const bool has_rows = j.contains("rows");
  if (has_file == has_rows) {
    throw ParseError(path, "exactly one of 'file' or 'rows' is required");
  }
  if (has_file) {
    m.file = get_string(j, path, "file");
    for (const char* key : {"resolution", "origin_x", "origin_y",
                            "inflation_radius"}) {
      if (j.contains(key)) {
        throw ParseError(join(path, key),
                         "only valid with inline 'rows' (the map file's "
                         "sidecar carries it)");
      }
    }
    return m;
  }
  const auto& rows = j.at("rows");
  if (!rows.is_array() || rows.empty()) {
    throw ParseError(join(path, "rows"), "expected a non-empty array");
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].is_string()) {
      throw ParseError(join(path, "rows") + "[" + std::to_string(i) + "]",
                       "expected a string");
    }
    m.rows.push_back(rows[i].get<std::string>());
  }
  m.resolution = get_number(j, path, "resolution");
  if (!(m.resolution > 0.0)) {
    throw ParseError(join(path, "resolution"), "must be positive");
  }
  m.origin.x = opt_number(j, path, "origin_x", 0.0);
  m.origin.y = opt_number(j, path, "origin_y", 0.0);
  m.inflation_radius = opt_number(j, path, "inflation_radius", 0.3);
  if (m.inflation_radius < 0.0) {
    throw ParseError(join(path, "inflation_radius"), "must be non-negative");
  }
  return m;
}

inline PersonSpec parse_person(const nlohmann::json& j,
                               const std::string& path, std::size_t index) {
  require_object(j, path);
  check_keys(j, path, {"tag", "is_target", "centroid_seed", "noise_std",
                       "waypoints", "gestures"});
  PersonSpec p;
  p.tag = get_string(j, path, "tag");
  if (p.tag.empty()) throw ParseError(join(path, "tag"), "must be non-empty");
  p.is_target = opt_bool(j, path, "is_target", false);
  p.centroid_seed = opt_u64(j, path, "centroid_seed",
                            static_cast<std::uint64_t>(index) + 1);
  if (j.contains("noise_std")) {
    const double v = get_number(j, path, "noise_std");
    if (!(v > 0.0)) {
      throw ParseError(join(path, "noise_std"), "must be positive");
    }
    p.noise_std = v;
  }

  if (!j.contains("waypoints")) {
    throw ParseError(join(path, "waypoints"), "missing field");
  }
  const auto& wps = j.at("waypoints");
  if (!wps.is_array() || wps.empty()) {
    throw ParseError(join(path, "waypoints"), "expected a non-empty array");
  }
  for (std::size_t i = 0; i < wps.size(); ++i) {
    const std::string wpath =
        join(path, "waypoints") + "[" + std::to_string(i) + "]";
    require_object(wps[i], wpath);
    check_keys(wps[i], wpath, {"t", "x", "y"});
    Waypoint w;
    w.t = get_number(wps[i], wpath, "t");
    w.x = get_number(wps[i], wpath, "x");
    w.y = get_number(wps[i], wpath, "y");
    if (!p.waypoints.empty() && !(w.t > p.waypoints.back().t)) {
      throw ParseError(wpath + ".t", "timestamps must be strictly increasing");
    }
    p.waypoints.push_back(w);
  }

  if (j.contains("gestures")) {
    const auto& gs = j.at("gestures");
    if (!gs.is_array()) {
      throw ParseError(join(path, "gestures"), "expected an array");
    }
    for (std::size_t i = 0; i < gs.size(); ++i) {
      const std::string gpath =
          join(path, "gestures") + "[" + std::to_string(i) + "]";
      require_object(gs[i], gpath);
      check_keys(gs[i], gpath, {"start", "end", "class"});
      GestureScriptEntry e;
      e.start = get_number(gs[i], gpath, "start");
      e.end = get_number(gs[i], gpath, "end");
      if (!(e.end > e.start)) {
        throw ParseError(gpath + ".end", "must exceed 'start'");
      }
      const std::string cls = get_string(gs[i], gpath, "class");
      const auto parsed = gesture::gesture_class_from_string(cls);
      if (!parsed) {
        throw ParseError(gpath + ".class", "unknown gesture class '" + cls +
                                               "'");
      }
      e.cls = *parsed;
      if (!p.gestures.empty() && e.start < p.gestures.back().end) {
        throw ParseError(gpath + ".start",
                         "gesture intervals must be ordered and disjoint");
      }
      p.gestures.push_back(e);
    }
  }
  return p;
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& j,
                                   const std::string& base_dir = ".") {
  detail::require_object(j, "");
  detail::check_keys(j, "",
                     {"schema_version", "seed", "duration", "tick", "map",
                      "robot", "sensor", "reid", "gesture", "tracker",
                      "persons"});
  Scenario s;
  s.base_dir = base_dir;
  const int version = detail::opt_int(j, "", "schema_version",
                                      kScenarioSchemaVersion);
  if (version != kScenarioSchemaVersion) {
    throw ParseError("schema_version",
                     "unsupported version " + std::to_string(version));
  }
  s.seed = detail::opt_u64(j, "", "seed", 0);
  s.duration = detail::get_number(j, "", "duration");
  if (!(s.duration >= 0.0)) throw ParseError("duration", "must be >= 0");
  s.tick = detail::opt_number(j, "", "tick", 0.1);
  if (!(s.tick > 0.0)) throw ParseError("tick", "must be positive");

  if (!j.contains("map")) throw ParseError("map", "missing field");
  s.map = detail::parse_map(j.at("map"), "map");

  if (j.contains("robot")) {
    const auto& r = j.at("robot");
    detail::require_object(r, "robot");
    detail::check_keys(r, "robot",
                       {"x", "y", "yaw", "v_max", "omega_search", "t_exp"});
    s.robot.x = detail::get_number(r, "robot", "x");
    s.robot.y = detail::get_number(r, "robot", "y");
    s.robot.yaw = detail::opt_number(r, "robot", "yaw", 0.0);
    s.robot.v_max = detail::opt_number(r, "robot", "v_max", 0.3);
    s.robot.omega_search = detail::opt_number(r, "robot", "omega_search",
                                              navsim::kDefaultOmegaSearch);
    s.robot.t_exp = detail::opt_number(r, "robot", "t_exp", 3.0);
    if (!(s.robot.v_max > 0.0)) {
      throw ParseError("robot.v_max", "must be positive");
    }
    if (!(s.robot.omega_search > 0.0)) {
      throw ParseError("robot.omega_search", "must be positive");
    }
    if (!(s.robot.t_exp > 0.0)) {
      throw ParseError("robot.t_exp", "must be positive");
    }
  } else {
    throw ParseError("robot", "missing field");
  }

  if (j.contains("sensor")) {
    const auto& v = j.at("sensor");
    detail::require_object(v, "sensor");
    detail::check_keys(v, "sensor",
                       {"fov", "max_range", "frame_rate", "occlusion"});
    s.sensor.fov = detail::opt_number(v, "sensor", "fov", s.sensor.fov);
    s.sensor.max_range =
        detail::opt_number(v, "sensor", "max_range", s.sensor.max_range);
    s.sensor.frame_rate =
        detail::opt_number(v, "sensor", "frame_rate", s.sensor.frame_rate);
    s.sensor.occlusion =
        detail::opt_bool(v, "sensor", "occlusion", s.sensor.occlusion);
    if (!(s.sensor.fov > 0.0) ||
        s.sensor.fov > 2.0 * tracking::kPi + 1e-12) {
      throw ParseError("sensor.fov", "must lie in (0, 2*pi]");
    }
    if (!(s.sensor.max_range > 0.0)) {
      throw ParseError("sensor.max_range", "must be positive");
    }
    if (!(s.sensor.frame_rate > 0.0)) {
      throw ParseError("sensor.frame_rate", "must be positive");
    }
  }

  if (j.contains("reid")) {
    const auto& v = j.at("reid");
    detail::require_object(v, "reid");
    detail::check_keys(v, "reid",
                       {"dim", "noise_std", "drift_amplitude",
                        "calibration_frames", "split"});
    s.reid.dim = detail::opt_int(v, "reid", "dim", s.reid.dim);
    s.reid.noise_std =
        detail::opt_number(v, "reid", "noise_std", s.reid.noise_std);
    s.reid.drift_amplitude = detail::opt_number(v, "reid", "drift_amplitude",
                                                s.reid.drift_amplitude);
    s.reid.calibration_frames = detail::opt_int(v, "reid",
                                                "calibration_frames",
                                                s.reid.calibration_frames);
    s.reid.split = detail::opt_number(v, "reid", "split", s.reid.split);
    if (s.reid.dim < 1) throw ParseError("reid.dim", "must be >= 1");
    if (!(s.reid.noise_std > 0.0)) {
      throw ParseError("reid.noise_std", "must be positive");
    }
    if (s.reid.drift_amplitude < 0.0) {
      throw ParseError("reid.drift_amplitude", "must be non-negative");
    }
    if (!(s.reid.split > 0.0) || !(s.reid.split < 1.0)) {
      throw ParseError("reid.split", "must lie in (0, 1)");
    }
    const int n_cal = static_cast<int>(
        std::ceil(s.reid.split * s.reid.calibration_frames));
    if (n_cal < 3 || s.reid.calibration_frames - n_cal < 3) {
      throw ParseError("reid.calibration_frames",
                       "too few frames for the split (need >= 3 per part)");
    }
  }

  if (j.contains("gesture")) {
    const auto& v = j.at("gesture");
    detail::require_object(v, "gesture");
    detail::check_keys(v, "gesture",
                       {"debounce_count", "train_per_class", "jitter"});
    s.gesture.debounce_count = detail::opt_int(v, "gesture", "debounce_count",
                                               s.gesture.debounce_count);
    s.gesture.train_per_class = detail::opt_int(
        v, "gesture", "train_per_class", s.gesture.train_per_class);
    s.gesture.jitter =
        detail::opt_number(v, "gesture", "jitter", s.gesture.jitter);
    if (s.gesture.debounce_count < 1) {
      throw ParseError("gesture.debounce_count", "must be >= 1");
    }
    if (s.gesture.train_per_class < 1) {
      throw ParseError("gesture.train_per_class", "must be >= 1");
    }
    if (s.gesture.jitter < 0.0) {
      throw ParseError("gesture.jitter", "must be non-negative");
    }
  }

  if (j.contains("tracker")) {
    const auto& v = j.at("tracker");
    detail::require_object(v, "tracker");
    detail::check_keys(v, "tracker", {"q", "r"});
    s.tracker.q = detail::opt_number(v, "tracker", "q", s.tracker.q);
    s.tracker.r = detail::opt_number(v, "tracker", "r", s.tracker.r);
    if (s.tracker.q < 0.0) throw ParseError("tracker.q", "must be >= 0");
    if (!(s.tracker.r > 0.0)) {
      throw ParseError("tracker.r", "must be positive");
    }
  }

  if (j.contains("persons")) {
    const auto& ps = j.at("persons");
    if (!ps.is_array()) throw ParseError("persons", "expected an array");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      s.persons.push_back(detail::parse_person(
          ps[i], "persons[" + std::to_string(i) + "]", i));
    }
  }

  int targets = 0;
  for (std::size_t i = 0; i < s.persons.size(); ++i) {
    for (std::size_t k = i + 1; k < s.persons.size(); ++k) {
      if (s.persons[i].tag == s.persons[k].tag) {
        throw ParseError("persons[" + std::to_string(k) + "].tag",
                         "duplicate tag '" + s.persons[k].tag + "'");
      }
    }
    if (s.persons[i].is_target) ++targets;
  }
  if (!s.persons.empty() && targets != 1) {
    throw ParseError("persons", "exactly one person must set is_target");
  }
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open scenario file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path, std::string("invalid JSON: ") + e.what());
  }
  const std::size_t slash = path.find_last_of('/');
  const std::string base_dir =
      slash == std::string::npos ? std::string(".") : path.substr(0, slash);
  return scenario_from_json(j, base_dir);
}

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json map;
  if (s.map.file) {
    map = {{"file", *s.map.file}};
  } else {
    map = {{"rows", s.map.rows},
           {"resolution", s.map.resolution},
           {"origin_x", s.map.origin.x},
           {"origin_y", s.map.origin.y},
           {"inflation_radius", s.map.inflation_radius}};
  }
  nlohmann::json persons = nlohmann::json::array();
  for (const auto& p : s.persons) {
    nlohmann::json waypoints = nlohmann::json::array();
    for (const auto& w : p.waypoints) {
      waypoints.push_back({{"t", w.t}, {"x", w.x}, {"y", w.y}});
    }
    nlohmann::json gestures = nlohmann::json::array();
    for (const auto& g : p.gestures) {
      gestures.push_back({{"start", g.start},
                          {"end", g.end},
                          {"class", gesture::to_string(g.cls)}});
    }
    nlohmann::json pj{{"tag", p.tag},
                      {"is_target", p.is_target},
                      {"centroid_seed", p.centroid_seed},
                      {"waypoints", waypoints},
                      {"gestures", gestures}};
    if (p.noise_std) pj["noise_std"] = *p.noise_std;
    persons.push_back(std::move(pj));
  }
  return nlohmann::json{
      {"schema_version", kScenarioSchemaVersion},
      {"seed", s.seed},
      {"duration", s.duration},
      {"tick", s.tick},
      {"map", map},
      {"robot",
       {{"x", s.robot.x},
        {"y", s.robot.y},
        {"yaw", s.robot.yaw},
        {"v_max", s.robot.v_max},
        {"omega_search", s.robot.omega_search},
        {"t_exp", s.robot.t_exp}}},
      {"sensor",
       {{"fov", s.sensor.fov},
        {"max_range", s.sensor.max_range},
        {"frame_rate", s.sensor.frame_rate},
        {"occlusion", s.sensor.occlusion}}},
      {"reid",
       {{"dim", s.reid.dim},
        {"noise_std", s.reid.noise_std},
        {"drift_amplitude", s.reid.drift_amplitude},
        {"calibration_frames", s.reid.calibration_frames},
        {"split", s.reid.split}}},
      {"gesture",
       {{"debounce_count", s.gesture.debounce_count},
        {"train_per_class", s.gesture.train_per_class},
        {"jitter", s.gesture.jitter}}},
      {"tracker", {{"q", s.tracker.q}, {"r", s.tracker.r}}},
      {"persons", persons}};
}

inline void save_scenario(const std::string& path, const Scenario& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open scenario file for writing: " + path);
  out << scenario_to_json(s).dump(2) << "\n";
}

inline navsim::OccupancyGrid load_map(const MapSpec& spec,
                                      const std::string& base_dir) {
  if (spec.file) {
    const std::string& f = *spec.file;
    const bool absolute = !f.empty() && f.front() == '/';
    return navsim::load_grid(absolute ? f : base_dir + "/" + f);
  }
  return navsim::OccupancyGrid::from_rows(spec.rows, spec.resolution,
                                          spec.origin,
                                          spec.inflation_radius);
}

}  // namespace followme::scenario
