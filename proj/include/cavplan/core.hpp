#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Core vocabulary for a single signalized-intersection approach: lane
// geometry, signal timing, vehicle state, and the lane-changing-gap (LCG)
// primitives shared by the behavior models, the strategy tree, and the
// trajectory optimizer.

namespace cavplan {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class SimError : public std::runtime_error {
 public:
  explicit SimError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Enums
// ---------------------------------------------------------------------------

enum class VehicleClass : std::uint8_t { kCav = 0, kChv = 1 };
enum class Movement : std::uint8_t { kLeft = 0, kThrough = 1, kRight = 2 };

inline const char* to_string(VehicleClass c) {
  return c == VehicleClass::kCav ? "CAV" : "CHV";
}
inline const char* to_string(Movement m) {
  switch (m) {
    case Movement::kLeft: return "left";
    case Movement::kThrough: return "through";
    default: return "right";
  }
}

// Sentinel ids for the virtual vehicles that bound the first and last gap of
// a lane. They sort below every real id, which keeps tie-breaking rules
// deterministic.
inline constexpr int kVirtualFrontId = -1;
inline constexpr int kVirtualBackId = -2;
inline constexpr int kNoVehicleId = -3;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct GeometryConfig {
  int lane_count = 4;
  // Movements allowed to cross from each lane, leftmost lane first.
  // Index 0 turns left, the middle lanes go through, the last turns right.
  std::vector<std::vector<Movement>> dedicated = {
      {Movement::kLeft},
      {Movement::kThrough},
      {Movement::kThrough},
      {Movement::kRight}};
  double control_len = 500.0;   // m from entry to stop bar
  double nochange_len = 30.0;   // m before the bar where lane changes are banned
  double conflict_len = 40.0;   // m of conflict zone past the bar
  double exit_len = 200.0;      // m of exit lane past the conflict zone
};

struct SignalConfig {
  double cycle = 60.0;        // s
  double green_start = 0.0;   // s within cycle, controlled lanes
  double green_end = 27.0;    // s within cycle
  double yellow = 3.0;        // s following green
  double cav_yellow_window = 1.0;  // leading seconds of yellow a CAV may use
  bool right_turn_uncontrolled = true;
};

struct DynamicsConfig {
  double dt = 1.0;            // s per step
  double speed_limit = 16.6;  // m/s on the approach
  double conflict_speed_limit = 10.0;  // m/s inside the conflict zone
  double accel_max = 2.0;     // m/s^2
  double decel_max = 4.0;     // m/s^2 (magnitude)
  double tau_cf = 1.0;        // s, car-following time shift
  double d_cf = 6.0;          // m, car-following spacing
  double tau_lc = 5.0;        // s, minimum time between lane changes
  double d_p = 5.0;           // m, clearance to a gap's leader when entering
  double d_f = 6.0;           // m, clearance to a gap's follower when entering
  double vehicle_len = 4.0;   // m
  double yield_decel = 2.0;   // m/s^2 CHVs shed when yielding to a turn signal
  double lc_gain_threshold = 1.0;  // m/s speed gain needed for a free change
};

struct WeightsConfig {
  double alpha1 = 1000.0;  // per step not yet across the bar
  double alpha2 = 10.0;    // per m/s^2 of pre-crossing |accel|
  double alpha3 = 1.0;     // per lane change
  double beta0 = 0.12;     // fuel surrogate: idle term, 1/s
  double beta1 = 0.02;     // fuel surrogate: speed term, 1/m
  double beta2 = 0.05;     // fuel surrogate: accel*speed term, s/m^2
};

struct SearchConfig {
  double big_m = 1e5;      // m, virtual-vehicle offset / relaxation constant
  double epsilon = 0.1;    // m, strict-crossing margin at the bar
  double tau_h = 5.0;      // s of horizon kept past the predicted crossing
  double c1 = 1e-4;        // reward: cost scale
  double c2 = 0.5;         // reward: exploration weight
  double lp_tol = 1e-7;    // feasibility tolerance of the embedded LP solver
  std::int64_t node_cap = 1000000;  // strategy-tree size guard
  int prediction_cycle_cap = 10;    // rollout give-up horizon, in signal cycles
  int opt_horizon_cap = 120;        // skip optimization when crossing is farther
};

struct Config {
  GeometryConfig geometry;
  SignalConfig signal;
  DynamicsConfig dynamics;
  WeightsConfig weights;
  SearchConfig search;

  double stop_bar() const { return geometry.control_len; }
  double crossed_threshold() const {
    return geometry.control_len + search.epsilon;
  }
  double nochange_start() const {
    return geometry.control_len - geometry.nochange_len;
  }
  double conflict_end() const {
    return geometry.control_len + geometry.conflict_len;
  }
  double retire_pos() const { return conflict_end() + geometry.exit_len; }
  int cf_shift() const {
    return static_cast<int>(std::lround(dynamics.tau_cf / dynamics.dt));
  }
  int lc_gap_steps() const {
    return static_cast<int>(std::lround(dynamics.tau_lc / dynamics.dt));
  }
  int tail_steps() const {
    return static_cast<int>(std::lround(search.tau_h / dynamics.dt));
  }
  int prediction_step_cap() const {
    return static_cast<int>(std::lround(
        signal.cycle * search.prediction_cycle_cap / dynamics.dt));
  }

  const std::vector<Movement>& lane_movements(int lane) const {
    return geometry.dedicated.at(static_cast<std::size_t>(lane));
  }
  bool lane_serves(int lane, Movement m) const {
    const auto& ms = lane_movements(lane);
    return std::find(ms.begin(), ms.end(), m) != ms.end();
  }
  // Lanes a vehicle with this movement may cross from.
  std::vector<int> dedicated_lanes(Movement m) const {
    std::vector<int> out;
    for (int k = 0; k < geometry.lane_count; ++k)
      if (lane_serves(k, m)) out.push_back(k);
    return out;
  }
  // True when the signal head applies to this lane at all.
  bool lane_controlled(int lane) const {
    if (!signal.right_turn_uncontrolled) return true;
    const auto& ms = lane_movements(lane);
    return !(ms.size() == 1 && ms[0] == Movement::kRight);
  }

  void validate() const;
};

inline void Config::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(dynamics.dt > 0.0, "dt must be positive");
  require(geometry.lane_count >= 1, "lane_count must be at least 1");
  require(static_cast<int>(geometry.dedicated.size()) == geometry.lane_count,
          "dedicated lane table must cover every lane");
  require(geometry.control_len > 0.0, "control_len must be positive");
  require(geometry.nochange_len > 0.0 &&
              geometry.nochange_len < geometry.control_len,
          "nochange_len must lie strictly inside the control zone");
  require(geometry.conflict_len > 0.0, "conflict_len must be positive");
  require(geometry.exit_len > 0.0, "exit_len must be positive");
  require(signal.cycle > 0.0, "cycle must be positive");
  require(signal.green_start >= 0.0 && signal.green_start < signal.cycle,
          "green_start must lie within the cycle");
  require(signal.green_end > signal.green_start &&
              signal.green_end <= signal.cycle,
          "green_end must follow green_start within the cycle");
  require(signal.yellow >= 0.0 &&
              signal.green_end + signal.yellow <= signal.cycle,
          "yellow must fit between green_end and the cycle end");
  require(signal.cav_yellow_window >= 0.0 &&
              signal.cav_yellow_window <= signal.yellow,
          "cav_yellow_window must fit inside yellow");
  require(dynamics.speed_limit > 0.0, "speed_limit must be positive");
  require(dynamics.conflict_speed_limit > 0.0 &&
              dynamics.conflict_speed_limit <= dynamics.speed_limit,
          "conflict_speed_limit must be positive and at most speed_limit");
  require(dynamics.accel_max > 0.0, "accel_max must be positive");
  require(dynamics.decel_max > 0.0, "decel_max must be positive");
  require(dynamics.tau_cf > 0.0, "tau_cf must be positive");
  const double shift = dynamics.tau_cf / dynamics.dt;
  require(std::abs(shift - std::lround(shift)) < 1e-9,
          "tau_cf must be an integer number of steps");
  require(dynamics.d_cf > 0.0, "d_cf must be positive");
  require(dynamics.tau_lc >= 0.0, "tau_lc must be non-negative");
  require(dynamics.d_p > 0.0 && dynamics.d_f > 0.0,
          "d_p and d_f must be positive");
  require(dynamics.vehicle_len > 0.0, "vehicle_len must be positive");
  require(weights.alpha1 > 0.0 && weights.alpha2 >= 0.0 && weights.alpha3 >= 0.0,
          "objective weights must be non-negative with alpha1 positive");
  require(search.big_m > geometry.control_len, "big_m must dominate positions");
  require(search.epsilon > 0.0, "epsilon must be positive");
  require(search.tau_h >= 0.0, "tau_h must be non-negative");
  require(search.lp_tol > 0.0, "lp_tol must be positive");
  require(search.node_cap > 0, "node_cap must be positive");
  require(search.prediction_cycle_cap > 0,
          "prediction_cycle_cap must be positive");
  require(search.opt_horizon_cap > 0, "opt_horizon_cap must be positive");
}

// ---------------------------------------------------------------------------
// Signal queries
// ---------------------------------------------------------------------------

// Red as seen by an observer class at a step. CHVs face true red (after the
// yellow). CAVs must also treat all but the leading cav_yellow_window seconds
// of yellow as red.
inline bool signal_red(const Config& cfg, int lane, int step,
                       VehicleClass observer) {
  if (!cfg.lane_controlled(lane)) return false;
  const double t = std::fmod(step * cfg.dynamics.dt, cfg.signal.cycle);
  const double green_s = cfg.signal.green_start;
  const double green_e = cfg.signal.green_end;
  const double red_from = observer == VehicleClass::kCav
                              ? green_e + cfg.signal.cav_yellow_window
                              : green_e + cfg.signal.yellow;
  if (t >= green_s && t < green_e) return false;
  if (t >= green_e && t < red_from) return false;  // usable yellow
  return true;
}

// Whether crossing the bar between steps t_c-1 and t_c is legal for this
// class. A CAV commits to the crossing step itself, so that step must not be
// red for it. A CHV decides while still upstream: it is legal as long as the
// step it left from was not red, even if the light turns during the move.
inline bool crossing_legal(const Config& cfg, VehicleClass cls, int lane,
                           int t_c) {
  if (cls == VehicleClass::kCav) return !signal_red(cfg, lane, t_c, cls);
  return !signal_red(cfg, lane, t_c - 1, cls);
}

// Seconds within [t_begin, t_end) during which signal_red holds, sampled on
// the step grid.
inline double red_seconds(const Config& cfg, int lane, double t_begin,
                          double t_end, VehicleClass observer) {
  double total = 0.0;
  const double dt = cfg.dynamics.dt;
  for (int s = static_cast<int>(std::ceil(t_begin / dt - 1e-9));
       s * dt < t_end - 1e-9; ++s)
    if (signal_red(cfg, lane, s, observer)) total += dt;
  return total;
}

// ---------------------------------------------------------------------------
// Position predicates
// ---------------------------------------------------------------------------

inline bool passed_stop_bar(const Config& cfg, double pos) {
  return pos > cfg.crossed_threshold();
}

inline bool in_no_changing_zone(const Config& cfg, double pos) {
  return pos > cfg.nochange_start();
}

inline bool in_conflict_zone(const Config& cfg, double pos) {
  return pos > cfg.crossed_threshold() && pos <= cfg.conflict_end();
}

// ---------------------------------------------------------------------------
// Vehicles and trajectories
// ---------------------------------------------------------------------------

struct VehicleState {
  int step = 0;
  int lane = 0;
  double pos = 0.0;    // m from the control-zone entry
  double speed = 0.0;  // m/s
  double accel = 0.0;  // m/s^2 applied over [step, step+1)
  bool lane_change = false;  // lane differs from the previous step
  bool passed = false;       // beyond the stop bar at this step
};

struct Trajectory {
  int t0 = 0;
  std::vector<VehicleState> states;  // states[i] is the state at step t0+i

  bool empty() const { return states.empty(); }
  int end_step() const { return t0 + static_cast<int>(states.size()) - 1; }
  bool covers(int step) const {
    return !states.empty() && step >= t0 && step <= end_step();
  }
  const VehicleState& at(int step) const {
    return states.at(static_cast<std::size_t>(step - t0));
  }
  VehicleState& at(int step) {
    return states.at(static_cast<std::size_t>(step - t0));
  }
  // First step whose state lies beyond the bar, if any.
  std::optional<int> crossing_step() const {
    for (const auto& s : states)
      if (s.passed) return s.step;
    return std::nullopt;
  }
  int change_count() const {
    int n = 0;
    for (const auto& s : states) n += s.lane_change ? 1 : 0;
    return n;
  }
};

// ---------------------------------------------------------------------------
// Lane-changing gaps
// ---------------------------------------------------------------------------

// A gap between two same-lane neighbors (either may be virtual) at one step.
struct Lcg {
  int step = 0;
  int lane = 0;
  int leader_id = kVirtualFrontId;
  int follower_id = kVirtualBackId;

  bool leader_virtual() const { return leader_id == kVirtualFrontId; }
  bool follower_virtual() const { return follower_id == kVirtualBackId; }
  bool operator==(const Lcg& o) const {
    return step == o.step && lane == o.lane && leader_id == o.leader_id &&
           follower_id == o.follower_id;
  }
};

// A gap plus the physical interval it spans at its step. Virtual bounds use
// +/- big_m so interval logic needs no special cases.
struct GapView {
  Lcg gap;
  double top = 0.0;     // leader position (or +big_m)
  double bottom = 0.0;  // follower position (or -big_m)

  double width() const { return top - bottom; }
  bool overlaps(const GapView& o) const {
    return std::max(bottom, o.bottom) < std::min(top, o.top);
  }
};

// Occupant of a lane used when enumerating gaps: id + position only.
struct LaneOccupant {
  int id = kNoVehicleId;
  double pos = 0.0;
};

// All gaps of one lane at one step given its occupants (any order). A lane
// with n occupants yields n+1 gaps; an empty lane yields the single
// virtual-to-virtual gap.
inline std::vector<GapView> enumerate_lcgs(const Config& cfg,
                                           std::vector<LaneOccupant> occupants,
                                           int lane, int step) {
  std::sort(occupants.begin(), occupants.end(),
            [](const LaneOccupant& a, const LaneOccupant& b) {
              if (a.pos != b.pos) return a.pos > b.pos;
              return a.id < b.id;
            });
  const double m = cfg.search.big_m;
  std::vector<GapView> gaps;
  gaps.reserve(occupants.size() + 1);
  int leader = kVirtualFrontId;
  double top = m;
  for (const auto& occ : occupants) {
    gaps.push_back(GapView{Lcg{step, lane, leader, occ.id}, top, occ.pos});
    leader = occ.id;
    top = occ.pos;
  }
  gaps.push_back(GapView{Lcg{step, lane, leader, kVirtualBackId}, top, -m});
  return gaps;
}

// Entry condition for a gap: wide enough for the entering clearances. Gaps
// with a virtual bound on either side always qualify.
inline bool gap_wide_enough(const Config& cfg, const GapView& g) {
  if (g.gap.leader_virtual() || g.gap.follower_virtual()) return true;
  return g.width() >= cfg.dynamics.d_p + cfg.dynamics.d_f;
}

}  // namespace cavplan
