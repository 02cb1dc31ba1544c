#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <json.hpp>

#include "followme/errors.hpp"
#include "followme/navsim.hpp"
#include "followme/scenario.hpp"
#include "followme/tracking.hpp"

using Catch::Matchers::WithinAbs;
using nlohmann::json;
using namespace followme;

namespace {

json minimal() {
  return json{{"duration", 30.0},
              {"map", {{"rows", {"...", "..."}}, {"resolution", 0.5}}},
              {"robot", {{"x", 1.0}, {"y", 2.0}}}};
}

json one_person(bool is_target = true) {
  json p{{"tag", "p0"},
         {"waypoints", json::array({{{"t", 0.0}, {"x", 0.0}, {"y", 0.0}}})}};
  if (is_target) p["is_target"] = true;
  return p;
}

// Parses and returns the offending field path; fails the test when the
// document is accepted.
std::string rejected_field(const json& j) {
  try {
    scenario::scenario_from_json(j);
  } catch (const ParseError& e) {
    return e.field_path;
  }
  FAIL("expected a ParseError");
  return {};
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("minimal scenario parses with documented defaults", "[scenario]") {
  const auto s = scenario::scenario_from_json(minimal());

  CHECK(s.seed == 0);
  CHECK(s.duration == 30.0);
  CHECK(s.tick == 0.1);
  CHECK(s.base_dir == ".");

  REQUIRE_FALSE(s.map.file.has_value());
  CHECK(s.map.rows == std::vector<std::string>{"...", "..."});
  CHECK(s.map.resolution == 0.5);
  CHECK(s.map.origin.x == 0.0);
  CHECK(s.map.origin.y == 0.0);
  CHECK(s.map.inflation_radius == 0.3);

  CHECK(s.robot.x == 1.0);
  CHECK(s.robot.y == 2.0);
  CHECK(s.robot.yaw == 0.0);
  CHECK(s.robot.v_max == 0.3);
  CHECK(s.robot.omega_search == navsim::kDefaultOmegaSearch);
  CHECK(s.robot.t_exp == 3.0);

  CHECK(s.sensor.fov == tracking::kPi / 2.0);
  CHECK(s.sensor.max_range == 8.0);
  CHECK(s.sensor.frame_rate == 10.0);
  CHECK(s.sensor.occlusion);

  CHECK(s.reid.dim == 256);
  CHECK(s.reid.noise_std == 0.05);
  CHECK(s.reid.drift_amplitude == 0.0);
  CHECK(s.reid.calibration_frames == 120);
  CHECK_THAT(s.reid.split, WithinAbs(2.0 / 3.0, 1e-15));

  CHECK(s.gesture.debounce_count == 5);
  CHECK(s.gesture.train_per_class == 150);
  CHECK(s.gesture.jitter == 0.02);

  CHECK(s.tracker.q == 0.5);
  CHECK(s.tracker.r == 0.05);

  CHECK(s.persons.empty());

  const auto with_dir = scenario::scenario_from_json(minimal(), "/data/maps");
  CHECK(with_dir.base_dir == "/data/maps");
}

TEST_CASE("fully specified scenario parses every section", "[scenario]") {
  json j = minimal();
  j["schema_version"] = 1;
  j["seed"] = 42;
  j["tick"] = 0.05;
  j["map"] = {{"rows", {"#.", ".."}},
              {"resolution", 0.25},
              {"origin_x", -1.0},
              {"origin_y", 2.5},
              {"inflation_radius", 0.1}};
  j["robot"] = {{"x", 0.5},       {"y", 0.75},          {"yaw", 1.2},
                {"v_max", 0.6},   {"omega_search", 0.9}, {"t_exp", 2.0}};
  j["sensor"] = {{"fov", 1.0},
                 {"max_range", 5.0},
                 {"frame_rate", 15.0},
                 {"occlusion", false}};
  j["reid"] = {{"dim", 16},
               {"noise_std", 0.1},
               {"drift_amplitude", 0.2},
               {"calibration_frames", 60},
               {"split", 0.5}};
  j["gesture"] = {{"debounce_count", 3},
                  {"train_per_class", 25},
                  {"jitter", 0.01}};
  j["tracker"] = {{"q", 0.0}, {"r", 0.02}};
  json target = one_person();
  target["centroid_seed"] = 99;
  target["noise_std"] = 0.07;
  target["gestures"] = json::array(
      {{{"start", 1.0}, {"end", 2.0}, {"class", "follow"}},
       {{"start", 2.0}, {"end", 3.5}, {"class", "wait"}}});
  json bystander{{"tag", "extra"},
                 {"waypoints", json::array({{{"t", 0.0}, {"x", 4.0},
                                             {"y", 4.0}},
                                            {{"t", 9.0}, {"x", 5.0},
                                             {"y", 4.0}}})}};
  j["persons"] = json::array({target, bystander});

  const auto s = scenario::scenario_from_json(j);
  CHECK(s.seed == 42);
  CHECK(s.tick == 0.05);
  CHECK(s.map.origin.x == -1.0);
  CHECK(s.map.origin.y == 2.5);
  CHECK(s.map.inflation_radius == 0.1);
  CHECK(s.robot.yaw == 1.2);
  CHECK(s.robot.v_max == 0.6);
  CHECK(s.robot.omega_search == 0.9);
  CHECK(s.robot.t_exp == 2.0);
  CHECK(s.sensor.fov == 1.0);
  CHECK(s.sensor.max_range == 5.0);
  CHECK(s.sensor.frame_rate == 15.0);
  CHECK_FALSE(s.sensor.occlusion);
  CHECK(s.reid.dim == 16);
  CHECK(s.reid.calibration_frames == 60);
  CHECK(s.reid.split == 0.5);
  CHECK(s.gesture.debounce_count == 3);
  CHECK(s.tracker.q == 0.0);
  CHECK(s.tracker.r == 0.02);

  REQUIRE(s.persons.size() == 2);
  const auto& t = s.persons[0];
  CHECK(t.tag == "p0");
  CHECK(t.is_target);
  CHECK(t.centroid_seed == 99);
  REQUIRE(t.noise_std.has_value());
  CHECK(*t.noise_std == 0.07);
  REQUIRE(t.gestures.size() == 2);
  CHECK(t.gestures[0].cls == gesture::GestureClass::Follow);
  CHECK(t.gestures[1].cls == gesture::GestureClass::Wait);
  // Back-to-back intervals (end == next start) are allowed.
  CHECK(t.gestures[1].start == 2.0);

  const auto& b = s.persons[1];
  CHECK_FALSE(b.is_target);
  CHECK_FALSE(b.noise_std.has_value());
  CHECK(b.centroid_seed == 2);  // defaults to index + 1
  REQUIRE(b.waypoints.size() == 2);
  CHECK(b.waypoints[1].t == 9.0);
}

TEST_CASE("scenario parser rejects unknown fields by path", "[scenario]") {
  json j = minimal();
  j["mystery"] = 1;
  CHECK(rejected_field(j) == "mystery");

  j = minimal();
  j["robot"]["vmax"] = 0.5;
  CHECK(rejected_field(j) == "robot.vmax");

  j = minimal();
  j["map"]["res"] = 0.5;
  CHECK(rejected_field(j) == "map.res");

  j = minimal();
  j["sensor"] = {{"fov_deg", 90.0}};
  CHECK(rejected_field(j) == "sensor.fov_deg");

  j = minimal();
  j["reid"] = {{"dims", 4}};
  CHECK(rejected_field(j) == "reid.dims");

  j = minimal();
  j["gesture"] = {{"xi", 5}};
  CHECK(rejected_field(j) == "gesture.xi");

  j = minimal();
  j["tracker"] = {{"process_noise", 0.5}};
  CHECK(rejected_field(j) == "tracker.process_noise");

  j = minimal();
  json p = one_person();
  p["speed"] = 1.0;
  j["persons"] = json::array({p});
  CHECK(rejected_field(j) == "persons[0].speed");

  j = minimal();
  p = one_person();
  p["waypoints"][0]["z"] = 0.0;
  j["persons"] = json::array({p});
  CHECK(rejected_field(j) == "persons[0].waypoints[0].z");

  j = minimal();
  p = one_person();
  p["gestures"] = json::array(
      {{{"start", 0.0}, {"end", 1.0}, {"class", "wait"}, {"hand", "left"}}});
  j["persons"] = json::array({p});
  CHECK(rejected_field(j) == "persons[0].gestures[0].hand");
}

TEST_CASE("scenario parser validates the top-level shape", "[scenario]") {
  CHECK_THROWS_AS(scenario::scenario_from_json(json::array()), ParseError);
  CHECK_THROWS_AS(scenario::scenario_from_json(json(3)), ParseError);

  json j = minimal();
  j["schema_version"] = 2;
  CHECK(rejected_field(j) == "schema_version");
  j["schema_version"] = 1.5;
  CHECK(rejected_field(j) == "schema_version");

  j = minimal();
  j["seed"] = -1;
  CHECK(rejected_field(j) == "seed");

  j = minimal();
  j.erase("duration");
  CHECK(rejected_field(j) == "duration");
  j["duration"] = -1.0;
  CHECK(rejected_field(j) == "duration");
  j["duration"] = "long";
  CHECK(rejected_field(j) == "duration");

  j = minimal();
  j["tick"] = 0.0;
  CHECK(rejected_field(j) == "tick");

  // Zero duration is a valid (empty) run.
  j = minimal();
  j["duration"] = 0.0;
  CHECK(scenario::scenario_from_json(j).duration == 0.0);
}

TEST_CASE("map spec demands exactly one source", "[scenario]") {
  json j = minimal();
  j.erase("map");
  CHECK(rejected_field(j) == "map");

  j = minimal();
  j["map"] = {{"file", "a.pgm"}, {"rows", {".."}}, {"resolution", 0.5}};
  CHECK(rejected_field(j) == "map");

  j = minimal();
  j["map"] = json::object();
  CHECK(rejected_field(j) == "map");

  // File references delegate geometry to the map's own sidecar.
  j = minimal();
  j["map"] = {{"file", "a.pgm"}, {"resolution", 0.5}};
  CHECK(rejected_field(j) == "map.resolution");
  j["map"] = {{"file", "a.pgm"}, {"origin_x", 1.0}};
  CHECK(rejected_field(j) == "map.origin_x");
  j["map"] = {{"file", "a.pgm"}};
  CHECK(scenario::scenario_from_json(j).map.file == "a.pgm");

  j = minimal();
  j["map"] = {{"rows", json::array()}, {"resolution", 0.5}};
  CHECK(rejected_field(j) == "map.rows");
  j["map"] = {{"rows", "..."}, {"resolution", 0.5}};
  CHECK(rejected_field(j) == "map.rows");
  j["map"] = {{"rows", {"..", 7}}, {"resolution", 0.5}};
  CHECK(rejected_field(j) == "map.rows[1]");
  j["map"] = {{"rows", {".."}}};
  CHECK(rejected_field(j) == "map.resolution");
  j["map"] = {{"rows", {".."}}, {"resolution", 0.0}};
  CHECK(rejected_field(j) == "map.resolution");
  j["map"] = {{"rows", {".."}}, {"resolution", 0.5},
              {"inflation_radius", -0.1}};
  CHECK(rejected_field(j) == "map.inflation_radius");
}

TEST_CASE("robot, sensor, reid, gesture and tracker bounds", "[scenario]") {
  json j = minimal();
  j.erase("robot");
  CHECK(rejected_field(j) == "robot");

  j = minimal();
  j["robot"].erase("x");
  CHECK(rejected_field(j) == "robot.x");

  j = minimal();
  j["robot"]["v_max"] = 0.0;
  CHECK(rejected_field(j) == "robot.v_max");
  j["robot"]["v_max"] = 0.3;
  j["robot"]["omega_search"] = -0.5;
  CHECK(rejected_field(j) == "robot.omega_search");
  j["robot"]["omega_search"] = 0.5;
  j["robot"]["t_exp"] = 0.0;
  CHECK(rejected_field(j) == "robot.t_exp");

  j = minimal();
  j["sensor"] = {{"fov", 0.0}};
  CHECK(rejected_field(j) == "sensor.fov");
  j["sensor"] = {{"fov", 7.0}};
  CHECK(rejected_field(j) == "sensor.fov");
  j["sensor"] = {{"fov", 2.0 * tracking::kPi}};
  CHECK_NOTHROW(scenario::scenario_from_json(j));
  j["sensor"] = {{"max_range", 0.0}};
  CHECK(rejected_field(j) == "sensor.max_range");
  j["sensor"] = {{"frame_rate", 0.0}};
  CHECK(rejected_field(j) == "sensor.frame_rate");
  j["sensor"] = {{"occlusion", "yes"}};
  CHECK(rejected_field(j) == "sensor.occlusion");

  j = minimal();
  j["reid"] = {{"dim", 0}};
  CHECK(rejected_field(j) == "reid.dim");
  j["reid"] = {{"dim", 1.5}};
  CHECK(rejected_field(j) == "reid.dim");
  j["reid"] = {{"noise_std", 0.0}};
  CHECK(rejected_field(j) == "reid.noise_std");
  j["reid"] = {{"drift_amplitude", -0.1}};
  CHECK(rejected_field(j) == "reid.drift_amplitude");
  j["reid"] = {{"split", 1.0}};
  CHECK(rejected_field(j) == "reid.split");
  j["reid"] = {{"split", 0.0}};
  CHECK(rejected_field(j) == "reid.split");
  // ceil(2/3 * 5) = 4 leaves only one threshold frame.
  j["reid"] = {{"calibration_frames", 5}};
  CHECK(rejected_field(j) == "reid.calibration_frames");
  j["reid"] = {{"calibration_frames", 9}};
  CHECK(scenario::scenario_from_json(j).reid.calibration_frames == 9);

  j = minimal();
  j["gesture"] = {{"debounce_count", 0}};
  CHECK(rejected_field(j) == "gesture.debounce_count");
  j["gesture"] = {{"train_per_class", 0}};
  CHECK(rejected_field(j) == "gesture.train_per_class");
  j["gesture"] = {{"jitter", -0.01}};
  CHECK(rejected_field(j) == "gesture.jitter");

  j = minimal();
  j["tracker"] = {{"q", -0.1}};
  CHECK(rejected_field(j) == "tracker.q");
  j["tracker"] = {{"r", 0.0}};
  CHECK(rejected_field(j) == "tracker.r");
}

TEST_CASE("person specs are validated in depth", "[scenario]") {
  json j = minimal();
  j["persons"] = json::object();
  CHECK(rejected_field(j) == "persons");

  auto with_person = [](json p) {
    json j = minimal();
    j["persons"] = json::array({std::move(p)});
    return j;
  };

  CHECK(rejected_field(with_person(json(1))) == "persons[0]");

  json p = one_person();
  p.erase("tag");
  CHECK(rejected_field(with_person(p)) == "persons[0].tag");
  p["tag"] = "";
  CHECK(rejected_field(with_person(p)) == "persons[0].tag");

  p = one_person();
  p["is_target"] = "yes";
  CHECK(rejected_field(with_person(p)) == "persons[0].is_target");

  p = one_person();
  p["centroid_seed"] = -4;
  CHECK(rejected_field(with_person(p)) == "persons[0].centroid_seed");

  p = one_person();
  p["noise_std"] = 0.0;
  CHECK(rejected_field(with_person(p)) == "persons[0].noise_std");
  p["noise_std"] = -0.5;
  CHECK(rejected_field(with_person(p)) == "persons[0].noise_std");

  p = one_person();
  p.erase("waypoints");
  CHECK(rejected_field(with_person(p)) == "persons[0].waypoints");
  p["waypoints"] = json::array();
  CHECK(rejected_field(with_person(p)) == "persons[0].waypoints");
  p["waypoints"] = json::array({{{"x", 0.0}, {"y", 0.0}}});
  CHECK(rejected_field(with_person(p)) == "persons[0].waypoints[0].t");
  p["waypoints"] = json::array({{{"t", 0.0}, {"x", 0.0}, {"y", 0.0}},
                                {{"t", 0.0}, {"x", 1.0}, {"y", 0.0}}});
  CHECK(rejected_field(with_person(p)) == "persons[0].waypoints[1].t");
  p["waypoints"] = json::array({{{"t", 1.0}, {"x", 0.0}, {"y", 0.0}},
                                {{"t", 0.5}, {"x", 1.0}, {"y", 0.0}}});
  CHECK(rejected_field(with_person(p)) == "persons[0].waypoints[1].t");

  p = one_person();
  p["gestures"] = json::object();
  CHECK(rejected_field(with_person(p)) == "persons[0].gestures");
  p["gestures"] = json::array({{{"start", 1.0}, {"end", 1.0},
                                {"class", "wait"}}});
  CHECK(rejected_field(with_person(p)) == "persons[0].gestures[0].end");
  p["gestures"] = json::array({{{"start", 1.0}, {"end", 2.0},
                                {"class", "stop"}}});
  CHECK(rejected_field(with_person(p)) == "persons[0].gestures[0].class");
  p["gestures"] = json::array({{{"start", 1.0}, {"end", 2.0},
                                {"class", "wait"}},
                               {{"start", 1.5}, {"end", 3.0},
                                {"class", "follow"}}});
  CHECK(rejected_field(with_person(p)) == "persons[0].gestures[1].start");
}

TEST_CASE("persons must contain exactly one target and unique tags",
          "[scenario]") {
  json j = minimal();
  j["persons"] = json::array({one_person(false)});
  CHECK(rejected_field(j) == "persons");

  json second = one_person();
  second["tag"] = "p1";
  j["persons"] = json::array({one_person(), second});
  CHECK(rejected_field(j) == "persons");

  json duplicate = one_person(false);
  j["persons"] = json::array({one_person(), duplicate});
  CHECK(rejected_field(j) == "persons[1].tag");

  second["is_target"] = false;
  j["persons"] = json::array({one_person(), second});
  CHECK_NOTHROW(scenario::scenario_from_json(j));
}

TEST_CASE("scenario survives a serialization round trip", "[scenario]") {
  json j = minimal();
  j["seed"] = 2026;
  j["tick"] = 0.2;
  j["map"]["origin_x"] = 1.5;
  json target = one_person();
  target["noise_std"] = 0.08;
  target["gestures"] = json::array(
      {{{"start", 3.0}, {"end", 4.0}, {"class", "other"}}});
  json extra{{"tag", "walker"},
             {"waypoints", json::array({{{"t", 0.0}, {"x", 1.0}, {"y", 1.0}},
                                        {{"t", 5.0}, {"x", 2.0},
                                         {"y", 1.0}}})}};
  j["persons"] = json::array({target, extra});

  const auto s = scenario::scenario_from_json(j, "/some/dir");
  const json out = scenario::scenario_to_json(s);
  const auto s2 = scenario::scenario_from_json(out, "/some/dir");

  CHECK(out.at("schema_version") == scenario::kScenarioSchemaVersion);
  CHECK(s2.seed == s.seed);
  CHECK(s2.duration == s.duration);
  CHECK(s2.tick == s.tick);
  CHECK(s2.map.rows == s.map.rows);
  CHECK(s2.map.resolution == s.map.resolution);
  CHECK(s2.map.origin.x == s.map.origin.x);
  CHECK(s2.robot.x == s.robot.x);
  CHECK(s2.robot.v_max == s.robot.v_max);
  CHECK(s2.sensor.fov == s.sensor.fov);
  CHECK(s2.reid.dim == s.reid.dim);
  CHECK(s2.gesture.debounce_count == s.gesture.debounce_count);
  CHECK(s2.tracker.q == s.tracker.q);
  REQUIRE(s2.persons.size() == 2);
  CHECK(s2.persons[0].tag == "p0");
  CHECK(s2.persons[0].is_target);
  CHECK(s2.persons[0].noise_std == s.persons[0].noise_std);
  CHECK(s2.persons[0].gestures.size() == 1);
  CHECK(s2.persons[0].gestures[0].cls == gesture::GestureClass::Other);
  CHECK_FALSE(s2.persons[1].noise_std.has_value());
  CHECK(s2.persons[1].waypoints.size() == 2);

  // noise_std appears in the JSON only for the person that set it.
  CHECK(out.at("persons")[0].contains("noise_std"));
  CHECK_FALSE(out.at("persons")[1].contains("noise_std"));

  // A file-backed map serializes as just the reference.
  scenario::Scenario file_map = s;
  file_map.map = scenario::MapSpec{};
  file_map.map.file = "maps/office.pgm";
  const json fj = scenario::scenario_to_json(file_map);
  CHECK(fj.at("map") == json{{"file", "maps/office.pgm"}});
}

TEST_CASE("scenario files save and load with base_dir tracking",
          "[scenario]") {
  const std::string path = temp_path("fm_scenario_roundtrip.json");
  json j = minimal();
  j["persons"] = json::array({one_person()});
  const auto s = scenario::scenario_from_json(j);
  scenario::save_scenario(path, s);

  const auto loaded = scenario::load_scenario(path);
  CHECK(loaded.duration == s.duration);
  CHECK(loaded.persons.size() == 1);
  CHECK(loaded.base_dir ==
        std::filesystem::temp_directory_path().string());

  CHECK_THROWS_AS(scenario::load_scenario(temp_path("fm_missing_dir") +
                                          "/nope.json"),
                  Error);

  const std::string garbled = temp_path("fm_scenario_garbled.json");
  {
    std::ofstream out(garbled);
    out << "{ not json";
  }
  try {
    scenario::load_scenario(garbled);
    FAIL("expected a ParseError");
  } catch (const ParseError& e) {
    CHECK(e.field_path == garbled);
  }

  std::remove(path.c_str());
  std::remove(garbled.c_str());
}

TEST_CASE("load_map resolves inline rows and file references", "[scenario]") {
  scenario::MapSpec inline_spec;
  inline_spec.rows = {"#..", "..."};
  inline_spec.resolution = 0.2;
  inline_spec.origin = {1.0, -1.0};
  inline_spec.inflation_radius = 0.0;
  const auto inline_grid = scenario::load_map(inline_spec, "/unused");
  CHECK(inline_grid.width() == 3);
  CHECK(inline_grid.height() == 2);
  CHECK(inline_grid.resolution() == 0.2);
  CHECK(inline_grid.origin().x == 1.0);
  // The first row string is the top of the map.
  CHECK(inline_grid.occupied(0, 1));
  CHECK_FALSE(inline_grid.occupied(0, 0));

  const std::string dir = std::filesystem::temp_directory_path().string();
  const std::string map_path = dir + "/fm_load_map.pgm";
  navsim::save_grid(map_path, inline_grid);

  scenario::MapSpec rel;
  rel.file = "fm_load_map.pgm";
  const auto rel_grid = scenario::load_map(rel, dir);
  CHECK(rel_grid.width() == 3);
  CHECK(rel_grid.resolution() == 0.2);
  CHECK(rel_grid.occupied(0, 1));

  scenario::MapSpec abs;
  abs.file = map_path;
  const auto abs_grid = scenario::load_map(abs, "/definitely/not/here");
  CHECK(abs_grid.height() == 2);
  CHECK(abs_grid.origin().y == -1.0);

  std::remove(map_path.c_str());
  std::remove(navsim::sidecar_path(map_path).c_str());
}
