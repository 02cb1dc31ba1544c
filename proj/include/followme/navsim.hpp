#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "followme/decision.hpp"
#include "followme/errors.hpp"
#include "followme/gesture.hpp"
#include "followme/reid.hpp"
#include "followme/rng.hpp"
#include "followme/tracking.hpp"

namespace followme::navsim {

using tracking::MapPose;
using tracking::Vec3;
using tracking::wrap_angle;

inline constexpr double kSafetyMarginFactor = 1.4;
inline constexpr double kPersonObstacleRadius = 0.3;
inline constexpr double kPersonHeight = 1.7;
inline constexpr double kPersonClusterRadius = 0.15;
inline constexpr int kPersonClusterPoints = 120;
inline constexpr double kDefaultOmegaSearch = 0.5;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

// Required stopping distance with its 40% margin.
inline double safety_distance(double v_max, double t_exp) {
  if (!(v_max > 0.0) || !(t_exp > 0.0)) {
    throw InvalidInputError("safety_distance: inputs must be positive");
  }
  return kSafetyMarginFactor * v_max * t_exp;
}

// Strict inequality: parking exactly on the boundary is allowed.
inline bool inside_safety_circle(const MapPose& robot, const Vec2& target,
                                 double d_safe) {
  if (!std::isfinite(target.x) || !std::isfinite(target.y)) {
    throw InvalidInputError("inside_safety_circle: non-finite target");
  }
  return std::hypot(target.x - robot.x, target.y - robot.y) < d_safe;
}

inline tracking::Transform3 camera_to_map(const MapPose& pose) {
  return tracking::Transform3::planar(pose.x, pose.y, pose.yaw);
}

// ---------------------------------------------------------------------------
// Occupancy grid

// Axis-aligned grid of square cells. Cell (0,0) covers the square whose
// lower-left corner is the origin; `blocked` adds the inflation dilation.
class OccupancyGrid {
 public:
  OccupancyGrid(int width, int height, double resolution, Vec2 origin = {},
                double inflation_radius = 0.0)
      : width_(width),
        height_(height),
        resolution_(resolution),
        origin_(origin),
        inflation_radius_(inflation_radius),
        occupied_(checked_cell_count(width, height), 0),
        inflated_(occupied_.size(), 0) {
    if (!(resolution > 0.0)) {
      throw InvalidInputError("OccupancyGrid: resolution must be positive");
    }
    if (inflation_radius < 0.0) {
      throw InvalidInputError("OccupancyGrid: negative inflation radius");
    }
  }

  // `rows[0]` is the top row of the map (largest y), matching the raster
  // order of the map file. '#' marks an occupied cell, '.' a free one.
  static OccupancyGrid from_rows(const std::vector<std::string>& rows,
                                 double resolution, Vec2 origin = {},
                                 double inflation_radius = 0.0) {
    if (rows.empty() || rows.front().empty()) {
      throw InvalidInputError("OccupancyGrid: empty row description");
    }
    const int height = static_cast<int>(rows.size());
    const int width = static_cast<int>(rows.front().size());
    OccupancyGrid g(width, height, resolution, origin, inflation_radius);
    for (int ry = 0; ry < height; ++ry) {
      const std::string& row = rows[ry];
      if (static_cast<int>(row.size()) != width) {
        throw InvalidInputError("OccupancyGrid: ragged row description");
      }
      for (int cx = 0; cx < width; ++cx) {
        const char ch = row[cx];
        if (ch == '#') {
          g.set_occupied(cx, height - 1 - ry, true);
        } else if (ch != '.') {
          throw InvalidInputError(
              std::string("OccupancyGrid: unexpected character '") + ch +
              "' in row description");
        }
      }
    }
    return g;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }
  Vec2 origin() const { return origin_; }
  double inflation_radius() const { return inflation_radius_; }

  bool in_bounds(int cx, int cy) const {
    return cx >= 0 && cx < width_ && cy >= 0 && cy < height_;
  }

  void set_occupied(int cx, int cy, bool value = true) {
    check_bounds(cx, cy);
    occupied_[index(cx, cy)] = value ? 1 : 0;
    inflation_dirty_ = true;
  }

  bool occupied(int cx, int cy) const {
    check_bounds(cx, cy);
    return occupied_[index(cx, cy)] != 0;
  }

  // Occupied after dilation by the inflation radius (cell-center metric).
  bool blocked(int cx, int cy) const {
    check_bounds(cx, cy);
    refresh_inflation();
    return inflated_[index(cx, cy)] != 0;
  }

  std::optional<std::pair<int, int>> cell_at(double x, double y) const {
    const int cx = static_cast<int>(std::floor((x - origin_.x) / resolution_));
    const int cy = static_cast<int>(std::floor((y - origin_.y) / resolution_));
    if (!in_bounds(cx, cy)) return std::nullopt;
    return std::make_pair(cx, cy);
  }

  Vec2 cell_center(int cx, int cy) const {
    return Vec2{origin_.x + (cx + 0.5) * resolution_,
                origin_.y + (cy + 0.5) * resolution_};
  }

  const std::vector<std::pair<int, int>>& occupied_cells() const {
    refresh_inflation();
    return occupied_cells_;
  }

 private:
  // Validates before the storage vectors are sized, so bad dimensions fail
  // cleanly instead of requesting an absurd allocation.
  static std::size_t checked_cell_count(int width, int height) {
    if (width <= 0 || height <= 0) {
      throw InvalidInputError("OccupancyGrid: dimensions must be positive");
    }
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }

  std::size_t index(int cx, int cy) const {
    return static_cast<std::size_t>(cy) * width_ + cx;
  }

  void check_bounds(int cx, int cy) const {
    if (!in_bounds(cx, cy)) {
      throw InvalidInputError("OccupancyGrid: cell (" + std::to_string(cx) +
                              "," + std::to_string(cy) + ") out of bounds");
    }
  }

  void refresh_inflation() const {
    if (!inflation_dirty_) return;
    std::fill(inflated_.begin(), inflated_.end(), 0);
    occupied_cells_.clear();
    const int reach =
        static_cast<int>(std::ceil(inflation_radius_ / resolution_));
    const double limit_sq = inflation_radius_ * inflation_radius_;
    for (int cy = 0; cy < height_; ++cy) {
      for (int cx = 0; cx < width_; ++cx) {
        if (!occupied_[index(cx, cy)]) continue;
        occupied_cells_.emplace_back(cx, cy);
        for (int dy = -reach; dy <= reach; ++dy) {
          for (int dx = -reach; dx <= reach; ++dx) {
            const int nx = cx + dx;
            const int ny = cy + dy;
            if (!in_bounds(nx, ny)) continue;
            const double dist_sq = (dx * dx + dy * dy) *
                                   resolution_ * resolution_;
            if (dist_sq <= limit_sq + 1e-12) inflated_[index(nx, ny)] = 1;
          }
        }
      }
    }
    inflation_dirty_ = false;
  }

  int width_;
  int height_;
  double resolution_;
  Vec2 origin_;
  double inflation_radius_;
  std::vector<std::uint8_t> occupied_;
  mutable std::vector<std::uint8_t> inflated_;
  mutable std::vector<std::pair<int, int>> occupied_cells_;
  mutable bool inflation_dirty_ = true;
};

// ---------------------------------------------------------------------------
// Grid file I/O: plain-text PGM (P2, maxval 255, 0 = occupied, 255 = free,
// top row first) plus a sidecar with resolution/origin/inflation.

inline std::string sidecar_path(const std::string& map_path) {
  const std::size_t slash = map_path.find_last_of('/');
  const std::size_t dot = map_path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
    return map_path + ".yaml";
  }
  return map_path.substr(0, dot) + ".yaml";
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) return "0";
  return std::string(buf, end);
}

inline double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first != last && (*first == ' ' || *first == '\t')) ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw ParseError(where, "bad number '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline void save_grid(const std::string& map_path, const OccupancyGrid& g) {
  std::ofstream pgm(map_path);
  if (!pgm) throw Error("cannot open map file for writing: " + map_path);
  pgm << "P2\n" << g.width() << " " << g.height() << "\n255\n";
  for (int cy = g.height() - 1; cy >= 0; --cy) {
    for (int cx = 0; cx < g.width(); ++cx) {
      if (cx > 0) pgm << " ";
      pgm << (g.occupied(cx, cy) ? 0 : 255);
    }
    pgm << "\n";
  }
  const std::string side = sidecar_path(map_path);
  std::ofstream yaml(side);
  if (!yaml) throw Error("cannot open map sidecar for writing: " + side);
  yaml << "resolution: " << detail::format_double(g.resolution()) << "\n"
       << "origin_x: " << detail::format_double(g.origin().x) << "\n"
       << "origin_y: " << detail::format_double(g.origin().y) << "\n"
       << "inflation_radius: " << detail::format_double(g.inflation_radius())
       << "\n";
}

inline OccupancyGrid load_grid(const std::string& map_path) {
  std::ifstream pgm(map_path);
  if (!pgm) throw Error("cannot open map file: " + map_path);

  // Tokenize, skipping '#' comment lines as in the PGM format.
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(pgm, line)) {
    if (!line.empty() && line[0] == '#') continue;
    std::stringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
  }
  if (tokens.empty() || tokens[0] != "P2") {
    throw ParseError(map_path, "expected plain-text PGM magic 'P2'");
  }
  if (tokens.size() < 4) {
    throw ParseError(map_path, "truncated PGM header");
  }
  const auto parse_int = [&](const std::string& s, const char* what) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
      throw ParseError(map_path, std::string("bad ") + what + " '" + s + "'");
    }
    return v;
  };
  const int width = parse_int(tokens[1], "width");
  const int height = parse_int(tokens[2], "height");
  if (width <= 0 || height <= 0) {
    throw ParseError(map_path, "dimensions must be positive");
  }
  if (tokens[3] != "255") {
    throw ParseError(map_path, "expected maxval 255, got '" + tokens[3] + "'");
  }
  const std::size_t expected = static_cast<std::size_t>(width) * height;
  if (tokens.size() != 4 + expected) {
    throw ParseError(map_path,
                     "expected " + std::to_string(expected) + " cells, got " +
                         std::to_string(tokens.size() - 4));
  }

  const std::string side = sidecar_path(map_path);
  std::ifstream yaml(side);
  if (!yaml) throw Error("cannot open map sidecar: " + side);
  double resolution = 0.0;
  Vec2 origin;
  double inflation = 0.0;
  bool have_resolution = false;
  while (std::getline(yaml, line)) {
    if (line.empty()) continue;
    const std::size_t colon = line.find(':');
    if (colon == std::string::npos) {
      throw ParseError(side, "expected 'key: value' lines");
    }
    const std::string key = line.substr(0, colon);
    const std::string value = line.substr(colon + 1);
    if (key == "resolution") {
      resolution = detail::parse_double(value, side + ":resolution");
      have_resolution = true;
    } else if (key == "origin_x") {
      origin.x = detail::parse_double(value, side + ":origin_x");
    } else if (key == "origin_y") {
      origin.y = detail::parse_double(value, side + ":origin_y");
    } else if (key == "inflation_radius") {
      inflation = detail::parse_double(value, side + ":inflation_radius");
    } else {
      throw ParseError(side, "unknown key '" + key + "'");
    }
  }
  if (!have_resolution) throw ParseError(side, "missing 'resolution'");

  OccupancyGrid g(width, height, resolution, origin, inflation);
  for (std::size_t i = 0; i < expected; ++i) {
    const std::string& tok = tokens[4 + i];
    const int cx = static_cast<int>(i) % width;
    const int cy = height - 1 - static_cast<int>(i) / width;
    if (tok == "0") {
      g.set_occupied(cx, cy, true);
    } else if (tok != "255") {
      throw ParseError(map_path, "cell values must be 0 or 255, got '" + tok +
                                     "'");
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Planning

enum class PlanStatus { Found, Unreachable, StartBlocked };

inline const char* to_string(PlanStatus s) {
  switch (s) {
    case PlanStatus::Found: return "found";
    case PlanStatus::Unreachable: return "unreachable";
    case PlanStatus::StartBlocked: return "start_blocked";
  }
  return "?";
}

struct DynamicObstacle {
  Vec2 position;
  double radius = kPersonObstacleRadius;
};

struct PlanResult {
  PlanStatus status = PlanStatus::Unreachable;
  std::vector<Vec2> path;  // world waypoints: start, cell centers, goal
  double cost = std::numeric_limits<double>::infinity();  // grid metric
};

namespace detail {

// Cells covered by the dynamic obstacles, each dilated by the grid's
// inflation radius (same dilation the static map gets).
inline std::vector<std::uint8_t> rasterize_dynamic(
    const OccupancyGrid& grid, const std::vector<DynamicObstacle>& obstacles) {
  std::vector<std::uint8_t> mask(
      static_cast<std::size_t>(grid.width()) * grid.height(), 0);
  const double res = grid.resolution();
  for (const auto& obs : obstacles) {
    const double reach = obs.radius + grid.inflation_radius();
    if (!(reach > 0.0)) continue;
    const auto lo = grid.cell_at(obs.position.x - reach,
                                 obs.position.y - reach);
    const int cx0 = lo ? lo->first : 0;
    const int cy0 = lo ? lo->second : 0;
    const int cx1 = std::min(
        grid.width() - 1,
        static_cast<int>(std::floor(
            (obs.position.x + reach - grid.origin().x) / res)));
    const int cy1 = std::min(
        grid.height() - 1,
        static_cast<int>(std::floor(
            (obs.position.y + reach - grid.origin().y) / res)));
    for (int cy = std::max(0, cy0); cy <= cy1; ++cy) {
      for (int cx = std::max(0, cx0); cx <= cx1; ++cx) {
        const Vec2 c = grid.cell_center(cx, cy);
        if (std::hypot(c.x - obs.position.x, c.y - obs.position.y) <=
            reach + 1e-12) {
          mask[static_cast<std::size_t>(cy) * grid.width() + cx] = 1;
        }
      }
    }
  }
  return mask;
}

}  // namespace detail

// 8-connected A* over the inflated grid plus rasterized dynamic obstacles.
// Octile heuristic, no corner cutting, deterministic tie-breaks.
inline PlanResult plan(const OccupancyGrid& grid, const Vec2& from,
                       const Vec2& to,
                       const std::vector<DynamicObstacle>& dynamic = {}) {
  const auto start = grid.cell_at(from.x, from.y);
  const auto goal = grid.cell_at(to.x, to.y);
  if (!start || !goal) {
    throw InvalidInputError("plan: start and goal must lie within the grid");
  }
  const int w = grid.width();
  const int h = grid.height();
  const double res = grid.resolution();
  const std::vector<std::uint8_t> dyn = detail::rasterize_dynamic(grid,
                                                                  dynamic);
  const auto cell_blocked = [&](int cx, int cy) {
    return grid.blocked(cx, cy) ||
           dyn[static_cast<std::size_t>(cy) * w + cx] != 0;
  };

  PlanResult result;
  if (cell_blocked(start->first, start->second)) {
    result.status = PlanStatus::StartBlocked;
    return result;
  }
  if (cell_blocked(goal->first, goal->second)) {
    result.status = PlanStatus::Unreachable;
    return result;
  }

  const int start_idx = start->second * w + start->first;
  const int goal_idx = goal->second * w + goal->first;
  if (start_idx == goal_idx) {
    result.status = PlanStatus::Found;
    result.path = {from, to};
    result.cost = 0.0;
    return result;
  }

  const double kDiag = std::sqrt(2.0);
  const auto heuristic = [&](int cx, int cy) {
    const double dx = std::abs(cx - goal->first);
    const double dy = std::abs(cy - goal->second);
    return res * (std::max(dx, dy) + (kDiag - 1.0) * std::min(dx, dy));
  };

  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> g_cost(n, std::numeric_limits<double>::infinity());
  std::vector<int> parent(n, -1);
  std::vector<std::uint8_t> closed(n, 0);

  using Entry = std::tuple<double, double, int>;  // f, h, cell index
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> open;
  g_cost[start_idx] = 0.0;
  open.emplace(heuristic(start->first, start->second),
               heuristic(start->first, start->second), start_idx);

  constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};

  while (!open.empty()) {
    const auto [f, hh, idx] = open.top();
    open.pop();
    if (closed[idx]) continue;
    closed[idx] = 1;
    if (idx == goal_idx) break;
    const int cx = idx % w;
    const int cy = idx / w;
    for (int k = 0; k < 8; ++k) {
      const int nx = cx + kDx[k];
      const int ny = cy + kDy[k];
      if (!grid.in_bounds(nx, ny)) continue;
      if (cell_blocked(nx, ny)) continue;
      const bool diagonal = k >= 4;
      if (diagonal &&
          (cell_blocked(cx + kDx[k], cy) || cell_blocked(cx, cy + kDy[k]))) {
        continue;  // no corner cutting
      }
      const int nidx = ny * w + nx;
      if (closed[nidx]) continue;
      const double step = diagonal ? kDiag * res : res;
      const double cand = g_cost[idx] + step;
      if (cand < g_cost[nidx] - 1e-15) {
        g_cost[nidx] = cand;
        parent[nidx] = idx;
        const double nh = heuristic(nx, ny);
        open.emplace(cand + nh, nh, nidx);
      }
    }
  }

  if (!std::isfinite(g_cost[goal_idx]) || parent[goal_idx] < 0) {
    result.status = PlanStatus::Unreachable;
    return result;
  }
  result.status = PlanStatus::Found;
  result.cost = g_cost[goal_idx];
  std::vector<int> cells;
  for (int idx = goal_idx; idx >= 0; idx = parent[idx]) {
    cells.push_back(idx);
    if (idx == start_idx) break;
  }
  std::reverse(cells.begin(), cells.end());
  // The first and last cells are where `from` and `to` already sit, so their
  // centers would only add backtracking; keep the interior centers.
  result.path.reserve(cells.size());
  result.path.push_back(from);
  for (std::size_t i = 1; i + 1 < cells.size(); ++i) {
    result.path.push_back(grid.cell_center(cells[i] % w, cells[i] / w));
  }
  result.path.push_back(to);
  return result;
}

// ---------------------------------------------------------------------------
// Robot executor

struct RobotModel {
  MapPose pose;
  double v_max = 0.3;
  double omega_search = kDefaultOmegaSearch;
  double safety_radius = kSafetyMarginFactor * 0.3 * 3.0;
};

// Applies one directive for dt seconds. SendGoal walks the path polyline at
// most v_max*dt (holonomic base, yaw snaps to the motion direction).
// RotateToward turns at omega_search: clamped onto the bearing when no
// search progress is supplied, or as a committed full sweep (passing through
// the bearing and accumulating rotation) when it is.
inline RobotModel step_robot(const RobotModel& robot,
                             const decision::Directive& directive,
                             const std::vector<Vec2>* path, double dt,
                             decision::SearchProgress* search = nullptr) {
  if (!(dt > 0.0)) {
    throw InvalidInputError("step_robot: dt must be positive");
  }
  RobotModel out = robot;
  switch (directive.kind) {
    case decision::DirectiveKind::Idle:
    case decision::DirectiveKind::CancelGoalAndHold:
      break;

    case decision::DirectiveKind::RotateToward: {
      const double max_turn = robot.omega_search * dt;
      if (search) {
        if (search->direction == 0) {
          const double diff =
              wrap_angle(directive.bearing - robot.pose.yaw);
          search->direction = diff < 0.0 ? -1 : 1;
        }
        out.pose.yaw =
            wrap_angle(robot.pose.yaw + search->direction * max_turn);
        search->accumulated += max_turn;
      } else {
        const double diff = wrap_angle(directive.bearing - robot.pose.yaw);
        if (std::abs(diff) <= max_turn) {
          out.pose.yaw = wrap_angle(directive.bearing);
        } else {
          out.pose.yaw =
              wrap_angle(robot.pose.yaw + (diff < 0.0 ? -max_turn : max_turn));
        }
      }
      break;
    }

    case decision::DirectiveKind::SendGoal: {
      if (!path || path->size() < 2) break;  // no route: hold position
      double budget = robot.v_max * dt;
      Vec2 pos{robot.pose.x, robot.pose.y};
      double dir_x = 0.0;
      double dir_y = 0.0;
      bool moved = false;
      for (std::size_t i = 1; i < path->size() && budget > 1e-12; ++i) {
        const Vec2& next = (*path)[i];
        const double seg = distance(pos, next);
        if (seg < 1e-12) continue;
        const double ux = (next.x - pos.x) / seg;
        const double uy = (next.y - pos.y) / seg;
        const double advance = std::min(seg, budget);
        pos.x += ux * advance;
        pos.y += uy * advance;
        budget -= advance;
        dir_x = ux;
        dir_y = uy;
        moved = true;
      }
      out.pose.x = pos.x;
      out.pose.y = pos.y;
      if (moved) out.pose.yaw = wrap_angle(std::atan2(dir_y, dir_x));
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sensing

struct SensorModel {
  double fov = tracking::kPi / 2.0;
  double max_range = 8.0;
  double frame_rate = 10.0;
  bool occlusion = true;
};

struct Observation {
  std::string person_tag;
  tracking::PointCloud3 point_cluster;  // camera frame
  reid::FeatureVector feature;
  std::optional<gesture::LandmarkSet> landmarks;
};

// A person as the sensor sees them this tick: where they stand plus
// providers that synthesize their appearance feature and any hand landmarks.
struct SensedPerson {
  std::string tag;
  Vec2 position;
  std::function<reid::FeatureVector()> feature;
  std::function<std::optional<gesture::LandmarkSet>()> landmarks;
};

// True when no occupied cell (raw, uninflated) blocks the segment.
inline bool line_of_sight(const OccupancyGrid& grid, const Vec2& from,
                          const Vec2& to) {
  const double total = distance(from, to);
  const double step = grid.resolution() / 4.0;
  const int steps = std::max(1, static_cast<int>(std::ceil(total / step)));
  for (int i = 0; i <= steps; ++i) {
    const double s = static_cast<double>(i) / steps;
    const double x = from.x + s * (to.x - from.x);
    const double y = from.y + s * (to.y - from.y);
    if (const auto cell = grid.cell_at(x, y)) {
      if (grid.occupied(cell->first, cell->second)) return false;
    }
  }
  return true;
}

// Emits one observation per person inside the field of view, in range, and
// (when occlusion is on) not hidden behind an occupied cell. Cluster points
// sample the surface of a vertical capsule at the person's position.
inline std::vector<Observation> sense(const OccupancyGrid& grid,
                                      const MapPose& robot,
                                      const SensorModel& sensor,
                                      const std::vector<SensedPerson>& persons,
                                      Rng& rng) {
  if (!(sensor.fov > 0.0) || sensor.fov > 2.0 * tracking::kPi + 1e-12) {
    throw InvalidInputError("sense: fov must lie in (0, 2*pi]");
  }
  if (!(sensor.max_range > 0.0)) {
    throw InvalidInputError("sense: max_range must be positive");
  }
  std::vector<Observation> out;
  const tracking::Transform3 map_to_cam = camera_to_map(robot).inverse();
  for (const auto& person : persons) {
    const double dx = person.position.x - robot.x;
    const double dy = person.position.y - robot.y;
    const double range = std::hypot(dx, dy);
    if (range > sensor.max_range) continue;
    if (range > 1e-12) {
      const double rel = wrap_angle(std::atan2(dy, dx) - robot.yaw);
      if (std::abs(rel) > sensor.fov / 2.0) continue;
    }
    if (sensor.occlusion &&
        !line_of_sight(grid, Vec2{robot.x, robot.y}, person.position)) {
      continue;
    }
    Observation obs;
    obs.person_tag = person.tag;
    obs.point_cluster.reserve(kPersonClusterPoints);
    for (int i = 0; i < kPersonClusterPoints; ++i) {
      const double angle = 2.0 * tracking::kPi * rng.uniform();
      const double z = kPersonHeight * rng.uniform();
      const Vec3 p_map(person.position.x + kPersonClusterRadius *
                                               std::cos(angle),
                       person.position.y + kPersonClusterRadius *
                                               std::sin(angle),
                       z);
      obs.point_cluster.push_back(map_to_cam.apply(p_map));
    }
    if (person.feature) obs.feature = person.feature();
    if (person.landmarks) obs.landmarks = person.landmarks();
    out.push_back(std::move(obs));
  }
  return out;
}

// Smallest distance from the robot's edge to any obstacle edge: occupied
// cells (as discs of radius res/2) and person obstacles. Infinity when the
// world holds nothing to hit.
inline double min_clearance(const OccupancyGrid& grid, const Vec2& robot,
                            const std::vector<Vec2>& person_obstacles,
                            double robot_radius,
                            double person_radius = kPersonObstacleRadius) {
  double best = std::numeric_limits<double>::infinity();
  const double cell_radius = grid.resolution() / 2.0;
  for (const auto& [cx, cy] : grid.occupied_cells()) {
    const Vec2 c = grid.cell_center(cx, cy);
    best = std::min(best,
                    distance(robot, c) - cell_radius - robot_radius);
  }
  for (const auto& p : person_obstacles) {
    best = std::min(best, distance(robot, p) - person_radius - robot_radius);
  }
  return best;
}

}  // namespace followme::navsim
