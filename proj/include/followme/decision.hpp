#pragma once

#include <optional>

#include "followme/gesture.hpp"
#include "followme/tracking.hpp"

namespace followme::decision {

enum class RobotMode { Steady = 0, Follow = 1, Search = 2, Wait = 3 };

inline const char* to_string(RobotMode m) {
  switch (m) {
    case RobotMode::Steady: return "steady";
    case RobotMode::Follow: return "follow";
    case RobotMode::Search: return "search";
    case RobotMode::Wait: return "wait";
  }
  return "?";
}

inline std::optional<RobotMode> robot_mode_from_string(const std::string& s) {
  if (s == "steady") return RobotMode::Steady;
  if (s == "follow") return RobotMode::Follow;
  if (s == "search") return RobotMode::Search;
  if (s == "wait") return RobotMode::Wait;
  return std::nullopt;
}

// One tick's worth of inputs, already reduced to the three trigger families:
// target visibility, safety-circle occupancy, and a freshly debounced command.
struct EventFrame {
  bool target_tracked = false;                    // alpha
  bool target_inside_safety = false;              // beta
  std::optional<gesture::Command> command;        // gamma, fires one tick
  std::optional<double> last_seen_bearing;        // map-frame, radians
};

enum class DirectiveKind { SendGoal, CancelGoalAndHold, RotateToward, Idle };

struct Directive {
  DirectiveKind kind = DirectiveKind::Idle;
  std::optional<tracking::GoalPose> goal;  // set for SendGoal
  double bearing = 0.0;                    // set for RotateToward

  static Directive send_goal(const tracking::GoalPose& g) {
    Directive d;
    d.kind = DirectiveKind::SendGoal;
    d.goal = g;
    return d;
  }
  static Directive cancel_and_hold() {
    return Directive{DirectiveKind::CancelGoalAndHold, std::nullopt, 0.0};
  }
  static Directive rotate_toward(double bearing) {
    return Directive{DirectiveKind::RotateToward, std::nullopt, bearing};
  }
  static Directive idle() { return Directive{}; }
};

inline const char* to_string(DirectiveKind k) {
  switch (k) {
    case DirectiveKind::SendGoal: return "send_goal";
    case DirectiveKind::CancelGoalAndHold: return "cancel_and_hold";
    case DirectiveKind::RotateToward: return "rotate_toward";
    case DirectiveKind::Idle: return "idle";
  }
  return "?";
}

// Bookkeeping for the single-turn search sweep. `direction` is chosen by the
// executor on the first rotation tick and held for the rest of the sweep.
struct SearchProgress {
  double accumulated = 0.0;
  double limit = 2.0 * tracking::kPi;
  int direction = 0;  // -1, +1, or 0 before the sweep starts
};

struct StepResult {
  RobotMode mode = RobotMode::Steady;
  Directive directive;
  SearchProgress search;
};

namespace detail {

// The directive for any tick spent following: never drive into the safety
// circle, and do nothing if no goal could be formed this tick.
inline Directive follow_directive(
    const EventFrame& ev, const std::optional<tracking::GoalPose>& goal) {
  if (ev.target_inside_safety) return Directive::cancel_and_hold();
  if (goal) return Directive::send_goal(*goal);
  return Directive::idle();
}

inline Directive search_directive(const EventFrame& ev) {
  return Directive::rotate_toward(ev.last_seen_bearing.value_or(0.0));
}

}  // namespace detail

// One decision tick. Total over every (mode, event) combination; a Wait
// command from the operator overrides everything else.
inline StepResult step(RobotMode mode, const EventFrame& ev,
                       const SearchProgress& sp,
                       const std::optional<tracking::GoalPose>& goal) {
  StepResult r;
  r.search = sp;

  const bool commanded_wait = ev.command == gesture::Command::Wait;
  const bool commanded_follow = ev.command == gesture::Command::Follow;

  switch (mode) {
    case RobotMode::Steady:
      if (commanded_follow && ev.target_tracked) {
        r.mode = RobotMode::Follow;
        r.directive = detail::follow_directive(ev, goal);
      } else if (commanded_follow) {
        r.mode = RobotMode::Search;
        r.directive = detail::search_directive(ev);
      } else {
        r.mode = RobotMode::Steady;
        r.directive = Directive::idle();
      }
      break;

    case RobotMode::Follow:
      if (commanded_wait) {
        r.mode = RobotMode::Wait;
        r.directive = Directive::cancel_and_hold();
      } else if (!ev.target_tracked) {
        r.mode = RobotMode::Search;
        r.directive = detail::search_directive(ev);
      } else {
        r.mode = RobotMode::Follow;
        r.directive = detail::follow_directive(ev, goal);
      }
      break;

    case RobotMode::Search:
      if (commanded_wait) {
        r.mode = RobotMode::Wait;
        r.directive = Directive::cancel_and_hold();
      } else if (ev.target_tracked) {
        r.mode = RobotMode::Follow;
        r.directive = detail::follow_directive(ev, goal);
      } else if (sp.accumulated >= sp.limit) {
        r.mode = RobotMode::Steady;
        r.directive = Directive::idle();
      } else {
        r.mode = RobotMode::Search;
        r.directive = detail::search_directive(ev);
      }
      break;

    case RobotMode::Wait:
      if (commanded_follow) {
        if (ev.target_tracked) {
          r.mode = RobotMode::Follow;
          r.directive = detail::follow_directive(ev, goal);
        } else {
          r.mode = RobotMode::Search;
          r.directive = detail::search_directive(ev);
        }
      } else {
        r.mode = RobotMode::Wait;
        r.directive = Directive::idle();
      }
      break;
  }

  if (r.mode != RobotMode::Search) r.search = SearchProgress{};
  return r;
}

// Stateful wrapper used by the simulator loop.
class DecisionMachine {
 public:
  Directive step(const EventFrame& ev,
                 const std::optional<tracking::GoalPose>& goal) {
    StepResult r = decision::step(mode_, ev, search_, goal);
    mode_ = r.mode;
    search_ = r.search;
    return r.directive;
  }

  RobotMode mode() const { return mode_; }
  SearchProgress& search() { return search_; }
  const SearchProgress& search() const { return search_; }

 private:
  RobotMode mode_ = RobotMode::Steady;
  SearchProgress search_;
};

}  // namespace followme::decision
