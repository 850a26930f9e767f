#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cavplan/core.hpp"
#include "cavplan/lcst.hpp"
#include "cavplan/prediction.hpp"
#include "cavplan/simplex.hpp"

// Longitudinal acceleration program for one fixed lane-changing strategy.
// Given the per-step gap sequence and the fixed trajectories of everyone the
// subject may rely on, find the acceleration profile minimizing weighted
// time-to-bar plus pre-crossing accelerations, subject to kinematics, speed
// bounds, car-following caps, signal stops, merge clearances, the
// no-changing zone, and crossing completion. Solved exactly: the crossing
// step is enumerated (crossing is irreversible, so fixing it makes every
// remaining constraint linear), each candidate becomes a small linear
// program, and the cheapest feasible candidate wins with earliest-crossing
// tie-breaking.

namespace cavplan {

inline constexpr double kInfPos = std::numeric_limits<double>::infinity();
// Crossing must be strictly beyond the bar threshold; the nudge keeps the
// strict inequality true after solver tolerance (nudge >> lp_tol).
inline constexpr double kCrossNudge = 1e-6;

enum class P2Bind : std::uint8_t {
  kNone = 0,
  kSignal,    // red-light stop or conflict-zone speed cap cannot be met
  kLeader,    // a leader's following cap blocks the profile
  kFollower,  // a follower floor or merge clearance blocks the profile
  kHorizon,   // the bar cannot be reached/cleared within the horizon
};

inline const char* to_string(P2Bind b) {
  switch (b) {
    case P2Bind::kNone: return "none";
    case P2Bind::kSignal: return "signal";
    case P2Bind::kLeader: return "leader";
    case P2Bind::kFollower: return "follower";
    default: return "horizon";
  }
}

// ---------------------------------------------------------------------------
// Instance
// ---------------------------------------------------------------------------

// Everything solve_p2 needs, flattened per step i = 0..h (step t0+i).
// Position sentinels: +inf for "no leader bound", -inf for "no follower
// bound". lead_shift_pos / fol_shift_pos are already time-shifted by the
// car-following delay, so rows read them directly.
struct P2Instance {
  Config cfg;
  int t0 = 0;
  int h = 0;
  VehicleState init;            // subject state at t0
  std::vector<Lcg> strategy;    // h+1 gaps
  std::vector<char> change;     // h+1 flags; [0] is always 0

  std::vector<double> lead_shift_pos;  // leader pos at t-shift; +inf virtual
  std::vector<char> lead_virtual;      // gap leader is the virtual head
  std::vector<double> crossed_cap;     // min pos at t-shift over vehicles
                                       // already past the bar in this lane
  std::vector<char> red;               // signal red for the strategy lane

  std::vector<double> fol_pos;        // gap follower pos at t; -inf virtual
  std::vector<double> fol_speed;      // gap follower speed at t
  std::vector<double> fol_shift_pos;  // follower pos at t+shift; -inf when
                                      // virtual, protected only, or beyond h
  std::vector<char> fol_virtual;
  std::vector<char> fol_protected;  // follower was ahead at t0: its
                                    // trajectory is fixed and must be floored

  // A reactive follower that can no longer stop before the bar must not be
  // cut in front of; detected at build time.
  bool follower_commit_conflict = false;
  int commit_step = -1;
};

// ---------------------------------------------------------------------------
// Build
// ---------------------------------------------------------------------------

// Recorded positions over the steps just before the scene start (oldest
// first), per vehicle; consulted when the car-following shift reaches back
// before the prediction.
using PosHistory = std::unordered_map<int, std::vector<double>>;

namespace detail {

// Position of a vehicle at a step, with history for references before the
// scene start and linear back-extrapolation when no history was recorded.
inline double scene_pos_at(const PredictedScene& scene,
                           const PosHistory& history, int id, int step) {
  const auto it = scene.trajectories.find(id);
  if (it == scene.trajectories.end()) return kInfPos;
  const Trajectory& traj = it->second;
  if (traj.covers(step)) return traj.at(step).pos;
  if (step < traj.t0) {
    const auto hist = history.find(id);
    const int back = traj.t0 - step;  // >= 1
    if (hist != history.end() &&
        static_cast<int>(hist->second.size()) >= back)
      return hist->second[hist->second.size() -
                          static_cast<std::size_t>(back)];
    const VehicleState& s0 = traj.states.front();
    return s0.pos - back * s0.speed * 1.0;
  }
  return traj.states.back().pos;
}

}  // namespace detail

// Flatten a strategy against the predicted scene. `history` is consulted
// only when the car-following shift reaches before the scene start.
inline P2Instance build_p2(const Config& cfg, const PredictedScene& scene,
                           const std::vector<Lcg>& strategy,
                           const VehicleState& init,
                           const PosHistory& history = {}) {
  P2Instance inst;
  inst.cfg = cfg;
  inst.t0 = scene.t0;
  inst.h = static_cast<int>(strategy.size()) - 1;
  inst.init = init;
  inst.strategy = strategy;
  const int n = inst.h + 1;
  const int shift = cfg.cf_shift();
  const std::unordered_set<int> ahead(scene.predecessor_ids.begin(),
                                      scene.predecessor_ids.end());

  inst.change.assign(static_cast<std::size_t>(n), 0);
  inst.lead_shift_pos.assign(static_cast<std::size_t>(n), kInfPos);
  inst.lead_virtual.assign(static_cast<std::size_t>(n), 1);
  inst.crossed_cap.assign(static_cast<std::size_t>(n), kInfPos);
  inst.red.assign(static_cast<std::size_t>(n), 0);
  inst.fol_pos.assign(static_cast<std::size_t>(n), -kInfPos);
  inst.fol_speed.assign(static_cast<std::size_t>(n), 0.0);
  inst.fol_shift_pos.assign(static_cast<std::size_t>(n), -kInfPos);
  inst.fol_virtual.assign(static_cast<std::size_t>(n), 1);
  inst.fol_protected.assign(static_cast<std::size_t>(n), 0);

  for (int i = 0; i < n; ++i) {
    const Lcg& g = strategy[static_cast<std::size_t>(i)];
    const int t = inst.t0 + i;
    if (i > 0)
      inst.change[static_cast<std::size_t>(i)] =
          g.lane != strategy[static_cast<std::size_t>(i - 1)].lane ? 1 : 0;
    inst.red[static_cast<std::size_t>(i)] =
        signal_red(cfg, g.lane, t, VehicleClass::kCav) ? 1 : 0;

    if (!g.leader_virtual()) {
      inst.lead_virtual[static_cast<std::size_t>(i)] = 0;
      if (i >= 1)
        inst.lead_shift_pos[static_cast<std::size_t>(i)] =
            detail::scene_pos_at(scene, history, g.leader_id, t - shift);
    }

    // Vehicles that already crossed no longer bound any gap, but a crossed
    // predecessor still ahead in this lane's stream keeps its following cap.
    if (i >= 1) {
      double cap = kInfPos;
      for (const int id : scene.predecessor_ids) {
        const auto it = scene.trajectories.find(id);
        if (it == scene.trajectories.end() || !it->second.covers(t)) continue;
        const VehicleState& s = it->second.at(t);
        if (!s.passed || s.lane != g.lane) continue;
        cap = std::min(cap,
                       detail::scene_pos_at(scene, history, id, t - shift));
      }
      inst.crossed_cap[static_cast<std::size_t>(i)] = cap;
    }

    if (!g.follower_virtual()) {
      inst.fol_virtual[static_cast<std::size_t>(i)] = 0;
      const bool prot = ahead.count(g.follower_id) > 0;
      inst.fol_protected[static_cast<std::size_t>(i)] = prot ? 1 : 0;
      const auto it = scene.trajectories.find(g.follower_id);
      if (it != scene.trajectories.end() && it->second.covers(t)) {
        inst.fol_pos[static_cast<std::size_t>(i)] = it->second.at(t).pos;
        inst.fol_speed[static_cast<std::size_t>(i)] = it->second.at(t).speed;
      }
      if (prot && i + shift <= inst.h) {
        inst.fol_shift_pos[static_cast<std::size_t>(i)] =
            detail::scene_pos_at(scene, history, g.follower_id, t + shift);
      }
      // Cutting in at a change step forces this reactive follower to brake;
      // if it can no longer stop before the bar, no clearance keeps it safe.
      if (inst.change[static_cast<std::size_t>(i)] && !prot &&
          it != scene.trajectories.end() && it->second.covers(t)) {
        const double fp = it->second.at(t).pos;
        const double fv = it->second.at(t).speed;
        if (fp <= cfg.stop_bar() &&
            brake_distance(cfg, fv, 0.0) > cfg.stop_bar() - fp + 1e-9) {
          inst.follower_commit_conflict = true;
          if (inst.commit_step < 0) inst.commit_step = t;
        }
      }
    }
  }
  return inst;
}

// ---------------------------------------------------------------------------
// Per-candidate row set
// ---------------------------------------------------------------------------

namespace detail {

enum class RowFamily : std::uint8_t {
  kSpeedBand,   // 0 <= v <= v_limit
  kConflict,    // conflict-zone speed cap after crossing
  kLeaderCap,   // position caps from leaders (shifted) incl. crossed stream
  kRedCap,      // hold before the bar while the light is red
  kChangeCap,   // stay out of the no-changing zone at change steps
  kPreBarCap,   // not past the threshold before the crossing step
  kFolFloor,    // floors protecting fixed follower trajectories + formation
  kBrakeFloor,  // merge clearance vs a reactive follower's braking distance
  kCrossFloor,  // strictly past the threshold from the crossing step on
  kComplete,    // fully past the bar by the end of the horizon
};

struct StepBounds {
  double ub = kInfPos;
  RowFamily ub_family = RowFamily::kPreBarCap;
  double lb = -kInfPos;
  RowFamily lb_family = RowFamily::kCrossFloor;
  double vcap = kInfPos;  // speed cap beyond the global band
};

// Position/speed caps and floors per step for a fixed crossing offset n_c
// (subject counts as crossed from step t0+n_c on).
inline std::vector<StepBounds> collect_bounds(const P2Instance& inst,
                                              int n_c) {
  const Config& cfg = inst.cfg;
  const int n = inst.h + 1;
  std::vector<StepBounds> bounds(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    StepBounds& b = bounds[static_cast<std::size_t>(i)];
    auto cap = [&](double v, RowFamily f) {
      if (v < b.ub) {
        b.ub = v;
        b.ub_family = f;
      }
    };
    auto floor_at = [&](double v, RowFamily f) {
      if (v > b.lb) {
        b.lb = v;
        b.lb_family = f;
      }
    };
    if (i >= 1) {
      if (inst.lead_shift_pos[static_cast<std::size_t>(i)] < kInfPos)
        cap(inst.lead_shift_pos[static_cast<std::size_t>(i)] -
                cfg.dynamics.d_cf,
            RowFamily::kLeaderCap);
      if (inst.crossed_cap[static_cast<std::size_t>(i)] < kInfPos)
        cap(inst.crossed_cap[static_cast<std::size_t>(i)] -
                cfg.dynamics.d_cf,
            RowFamily::kLeaderCap);
    }
    // The signal can only hold a vehicle that has not crossed by i-1 and has
    // no real leader left between it and the bar.
    if (i >= 1 && i <= n_c && inst.red[static_cast<std::size_t>(i)] &&
        inst.lead_virtual[static_cast<std::size_t>(i)])
      cap(cfg.stop_bar(), RowFamily::kRedCap);
    if (inst.change[static_cast<std::size_t>(i)])
      cap(cfg.nochange_start(), RowFamily::kChangeCap);
    if (i < n_c) cap(cfg.crossed_threshold(), RowFamily::kPreBarCap);

    if (inst.fol_shift_pos[static_cast<std::size_t>(i)] > -kInfPos)
      floor_at(inst.fol_shift_pos[static_cast<std::size_t>(i)] +
                   cfg.dynamics.d_cf,
               RowFamily::kFolFloor);
    if (inst.change[static_cast<std::size_t>(i)] &&
        !inst.fol_virtual[static_cast<std::size_t>(i)] &&
        !inst.fol_protected[static_cast<std::size_t>(i)] &&
        inst.fol_pos[static_cast<std::size_t>(i)] > -kInfPos) {
      const double fv = inst.fol_speed[static_cast<std::size_t>(i)];
      floor_at(inst.fol_pos[static_cast<std::size_t>(i)] +
                   fv * fv / (2.0 * cfg.dynamics.decel_max),
               RowFamily::kBrakeFloor);
    }
    // Arriving next step in front of a real follower requires being clear of
    // its arrival-step position already, so the pair is safe the moment the
    // lanes merge.
    if (i + 1 < n &&
        inst.change[static_cast<std::size_t>(i + 1)] &&
        !inst.fol_virtual[static_cast<std::size_t>(i + 1)] &&
        inst.fol_pos[static_cast<std::size_t>(i + 1)] > -kInfPos)
      floor_at(inst.fol_pos[static_cast<std::size_t>(i + 1)] +
                   cfg.dynamics.d_cf,
               RowFamily::kFolFloor);
    // The nudge keeps strictness through solver tolerance; the fixed initial
    // state of an already-crossed subject needs no nudge.
    if (i >= n_c)
      floor_at(cfg.crossed_threshold() + (i == 0 ? 0.0 : kCrossNudge),
               RowFamily::kCrossFloor);
    if (i == inst.h)
      floor_at(cfg.stop_bar() + cfg.dynamics.vehicle_len + cfg.search.epsilon,
               RowFamily::kComplete);
  }
  return bounds;
}

// Reachability envelopes from the acceleration and speed bands alone; every
// feasible profile stays inside them, so rows slack against the envelope are
// provably redundant and get dropped.
struct Envelopes {
  std::vector<double> v_lo, v_hi, x_lo, x_hi;
};

inline Envelopes reach_envelopes(const Config& cfg, const VehicleState& init,
                                 int h) {
  Envelopes e;
  const double dt = cfg.dynamics.dt;
  e.v_lo.resize(static_cast<std::size_t>(h + 1));
  e.v_hi.resize(static_cast<std::size_t>(h + 1));
  e.x_lo.resize(static_cast<std::size_t>(h + 1));
  e.x_hi.resize(static_cast<std::size_t>(h + 1));
  e.v_lo[0] = e.v_hi[0] = init.speed;
  e.x_lo[0] = e.x_hi[0] = init.pos;
  for (int i = 1; i <= h; ++i) {
    e.v_lo[static_cast<std::size_t>(i)] =
        std::max(0.0, e.v_lo[static_cast<std::size_t>(i - 1)] -
                          cfg.dynamics.decel_max * dt);
    e.v_hi[static_cast<std::size_t>(i)] =
        std::min(cfg.dynamics.speed_limit,
                 e.v_hi[static_cast<std::size_t>(i - 1)] +
                     cfg.dynamics.accel_max * dt);
    e.x_lo[static_cast<std::size_t>(i)] =
        e.x_lo[static_cast<std::size_t>(i - 1)] +
        0.5 * dt *
            (e.v_lo[static_cast<std::size_t>(i - 1)] +
             e.v_lo[static_cast<std::size_t>(i)]);
    e.x_hi[static_cast<std::size_t>(i)] =
        e.x_hi[static_cast<std::size_t>(i - 1)] +
        0.5 * dt *
            (e.v_hi[static_cast<std::size_t>(i - 1)] +
             e.v_hi[static_cast<std::size_t>(i)]);
  }
  return e;
}

inline P2Bind classify(RowFamily f) {
  switch (f) {
    case RowFamily::kRedCap:
    case RowFamily::kConflict: return P2Bind::kSignal;
    case RowFamily::kLeaderCap: return P2Bind::kLeader;
    case RowFamily::kFolFloor:
    case RowFamily::kBrakeFloor: return P2Bind::kFollower;
    default: return P2Bind::kHorizon;
  }
}

struct FamilyMask {
  bool leader = true;
  bool follower = true;
  bool signal = true;

  bool keeps(RowFamily f) const {
    switch (classify(f)) {
      case P2Bind::kLeader: return leader;
      case P2Bind::kFollower: return follower;
      case P2Bind::kSignal: return signal;
      default: return true;
    }
  }
};

// Linear program over the split accelerations ap_i - am_i, i = 0..h-1.
// Variables interleaved: ap_i = 2i, am_i = 2i+1.
struct CandidateLp {
  lp::Problem prob;
  bool const_infeasible = false;
  P2Bind const_reason = P2Bind::kNone;
};

inline CandidateLp assemble(const P2Instance& inst, int n_c,
                            const Envelopes& env, const FamilyMask& mask) {
  const Config& cfg = inst.cfg;
  const double dt = cfg.dynamics.dt;
  const double v0 = inst.init.speed;
  const double x0 = inst.init.pos;
  CandidateLp out;
  lp::Problem& p = out.prob;
  for (int i = 0; i < inst.h; ++i) {
    const double w = i < n_c ? cfg.weights.alpha2 : 0.0;
    p.add_var(w, cfg.dynamics.accel_max);   // ap_i
    p.add_var(w, cfg.dynamics.decel_max);   // am_i
  }

  const auto bounds = collect_bounds(inst, n_c);
  auto fail_const = [&](RowFamily f) {
    out.const_infeasible = true;
    out.const_reason = classify(f);
  };

  // Speed rows: v(i) = v0 + dt * sum_{j<i} (ap_j - am_j).
  auto add_speed_row = [&](int i, double limit, bool upper) {
    lp::Row row;
    row.type = upper ? lp::RowType::kLe : lp::RowType::kGe;
    row.rhs = (limit - v0) / dt;
    for (int j = 0; j < i; ++j) {
      row.terms.push_back({2 * j, 1.0});
      row.terms.push_back({2 * j + 1, -1.0});
    }
    p.rows.push_back(std::move(row));
  };
  // Position rows: x(i) = x0 + i*dt*v0 + (dt^2/2) sum_{j<i} (2(i-j)-1) a_j.
  auto add_pos_row = [&](int i, double limit, bool upper) {
    lp::Row row;
    row.type = upper ? lp::RowType::kLe : lp::RowType::kGe;
    row.rhs = (limit - x0 - i * dt * v0) / (0.5 * dt * dt);
    for (int j = 0; j < i; ++j) {
      const double w = 2.0 * (i - j) - 1.0;
      row.terms.push_back({2 * j, w});
      row.terms.push_back({2 * j + 1, -w});
    }
    p.rows.push_back(std::move(row));
  };

  for (int i = 1; i <= inst.h; ++i) {
    const auto& b = bounds[static_cast<std::size_t>(i)];
    const double vlo = env.v_lo[static_cast<std::size_t>(i)];
    const double vhi_raw = v0 + cfg.dynamics.accel_max * i * dt;
    const double vlo_raw = v0 - cfg.dynamics.decel_max * i * dt;
    if (vhi_raw > cfg.dynamics.speed_limit)
      add_speed_row(i, cfg.dynamics.speed_limit, true);
    if (vlo_raw < 0.0) add_speed_row(i, 0.0, false);
    double vcap = b.vcap;
    if (i >= n_c) vcap = std::min(vcap, cfg.dynamics.conflict_speed_limit);
    if (vcap < kInfPos && mask.signal) {
      if (vlo > vcap) fail_const(RowFamily::kConflict);
      if (env.v_hi[static_cast<std::size_t>(i)] > vcap)
        add_speed_row(i, vcap, true);
    }
    const bool ub_on = b.ub < kInfPos && mask.keeps(b.ub_family);
    const bool lb_on = b.lb > -kInfPos && mask.keeps(b.lb_family);
    if (ub_on && lb_on && b.ub < b.lb - 1e-12)
      fail_const(classify(b.ub_family) != P2Bind::kHorizon ? b.ub_family
                                                           : b.lb_family);
    if (ub_on) {
      if (env.x_lo[static_cast<std::size_t>(i)] > b.ub)
        fail_const(b.ub_family);
      else if (env.x_hi[static_cast<std::size_t>(i)] > b.ub)
        add_pos_row(i, b.ub, true);
    }
    if (lb_on) {
      if (env.x_hi[static_cast<std::size_t>(i)] < b.lb)
        fail_const(b.lb_family);
      else if (env.x_lo[static_cast<std::size_t>(i)] < b.lb)
        add_pos_row(i, b.lb, false);
    }
  }
  // Step-0 state is fixed; reject if it already breaks a bound.
  const auto& b0 = bounds[0];
  if (b0.ub < kInfPos && x0 > b0.ub + 1e-9 && mask.keeps(b0.ub_family))
    fail_const(b0.ub_family);
  if (b0.lb > -kInfPos && x0 < b0.lb - 1e-9 && mask.keeps(b0.lb_family))
    fail_const(b0.lb_family);
  return out;
}

inline std::vector<double> profile_from(const lp::Solution& sol, int h) {
  std::vector<double> a(static_cast<std::size_t>(h), 0.0);
  for (int i = 0; i < h; ++i)
    a[static_cast<std::size_t>(i)] =
        sol.x[static_cast<std::size_t>(2 * i)] -
        sol.x[static_cast<std::size_t>(2 * i + 1)];
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Solution
// ---------------------------------------------------------------------------

struct P2Solution {
  bool feasible = false;
  P2Bind binding = P2Bind::kNone;  // why it failed, when infeasible
  std::vector<double> profile;     // accelerations over [t0, t0+h)
  Trajectory traj;
  int cross_step = -1;
  double time_cost = 0.0;    // alpha1-weighted steps before the bar
  double smooth_cost = 0.0;  // alpha2-weighted pre-crossing |a|
  double objective = kInfPos;
};

// Replay a profile through the kinematics, attaching lanes and change flags
// from the strategy.
inline Trajectory replay_profile(const P2Instance& inst,
                                 const std::vector<double>& profile) {
  const Config& cfg = inst.cfg;
  Trajectory traj;
  traj.t0 = inst.t0;
  double v = inst.init.speed;
  double x = inst.init.pos;
  for (int i = 0; i <= inst.h; ++i) {
    VehicleState s;
    s.step = inst.t0 + i;
    s.lane = inst.strategy[static_cast<std::size_t>(i)].lane;
    s.pos = x;
    s.speed = v;
    s.accel = i < inst.h ? profile[static_cast<std::size_t>(i)] : 0.0;
    s.lane_change = inst.change[static_cast<std::size_t>(i)] != 0;
    s.passed = passed_stop_bar(cfg, x);
    traj.states.push_back(s);
    if (i < inst.h) {
      const double nv = v + cfg.dynamics.dt * s.accel;
      x += 0.5 * cfg.dynamics.dt * (v + nv);
      v = nv;
    }
  }
  return traj;
}

// Every constraint of the instance, checked against a replayed trajectory.
// Returns human-readable violations; empty means clean. `tol` applies to the
// continuous rows.
inline std::vector<std::string> validate_p2(const P2Instance& inst,
                                            const P2Solution& sol,
                                            double tol = 1e-6) {
  std::vector<std::string> bad;
  const Config& cfg = inst.cfg;
  auto complain = [&](int i, const std::string& what) {
    bad.push_back("step +" + std::to_string(i) + ": " + what);
  };
  if (!sol.feasible) return bad;
  const Trajectory& tr = sol.traj;
  if (static_cast<int>(tr.states.size()) != inst.h + 1) {
    bad.push_back("trajectory does not span the horizon");
    return bad;
  }
  const int n_c = sol.cross_step - inst.t0;
  bool crossed = false;
  for (int i = 0; i <= inst.h; ++i) {
    const VehicleState& s = tr.states[static_cast<std::size_t>(i)];
    if (i < inst.h) {
      if (s.accel > cfg.dynamics.accel_max + tol ||
          s.accel < -cfg.dynamics.decel_max - tol)
        complain(i, "acceleration out of band");
    }
    // The step-0 state is the world's, not the plan's; only later speeds are
    // the solver's responsibility.
    if (i >= 1 &&
        (s.speed < -tol || s.speed > cfg.dynamics.speed_limit + tol))
      complain(i, "speed out of band");
    if (i >= std::max(n_c, 1) &&
        s.speed > cfg.dynamics.conflict_speed_limit + tol)
      complain(i, "conflict-zone speed cap violated");
    if (i >= 1 &&
        inst.lead_shift_pos[static_cast<std::size_t>(i)] < kInfPos &&
        s.pos > inst.lead_shift_pos[static_cast<std::size_t>(i)] -
                    cfg.dynamics.d_cf + tol)
      complain(i, "leader following cap violated");
    if (i >= 1 && inst.crossed_cap[static_cast<std::size_t>(i)] < kInfPos &&
        s.pos > inst.crossed_cap[static_cast<std::size_t>(i)] -
                    cfg.dynamics.d_cf + tol)
      complain(i, "crossed-stream following cap violated");
    if (i >= 1 && i <= n_c && inst.red[static_cast<std::size_t>(i)] &&
        inst.lead_virtual[static_cast<std::size_t>(i)] &&
        s.pos > cfg.stop_bar() + tol)
      complain(i, "red-light hold violated");
    if (inst.change[static_cast<std::size_t>(i)] &&
        s.pos > cfg.nochange_start() + tol)
      complain(i, "lane change inside the no-changing zone");
    if (i < n_c && s.pos > cfg.crossed_threshold() + tol)
      complain(i, "past the bar before the crossing step");
    if (i >= n_c && s.pos <= cfg.crossed_threshold())
      complain(i, "not strictly past the bar after the crossing step");
    if (inst.fol_shift_pos[static_cast<std::size_t>(i)] > -kInfPos &&
        s.pos < inst.fol_shift_pos[static_cast<std::size_t>(i)] +
                    cfg.dynamics.d_cf - tol)
      complain(i, "protected follower floor violated");
    if (inst.change[static_cast<std::size_t>(i)] &&
        !inst.fol_virtual[static_cast<std::size_t>(i)] &&
        !inst.fol_protected[static_cast<std::size_t>(i)] &&
        inst.fol_pos[static_cast<std::size_t>(i)] > -kInfPos) {
      const double fv = inst.fol_speed[static_cast<std::size_t>(i)];
      if (s.pos < inst.fol_pos[static_cast<std::size_t>(i)] +
                      fv * fv / (2.0 * cfg.dynamics.decel_max) - tol)
        complain(i, "merge braking clearance violated");
    }
    if (i + 1 <= inst.h && inst.change[static_cast<std::size_t>(i + 1)] &&
        !inst.fol_virtual[static_cast<std::size_t>(i + 1)] &&
        inst.fol_pos[static_cast<std::size_t>(i + 1)] > -kInfPos &&
        s.pos < inst.fol_pos[static_cast<std::size_t>(i + 1)] +
                    cfg.dynamics.d_cf - tol)
      complain(i, "merge formation floor violated");
    if (i == inst.h &&
        s.pos < cfg.stop_bar() + cfg.dynamics.vehicle_len +
                    cfg.search.epsilon - tol)
      complain(i, "bar not fully cleared by the end of the horizon");
    if (crossed && !s.passed) complain(i, "crossing went backwards");
    crossed = crossed || s.passed;
  }
  if (sol.cross_step >= 0) {
    const auto actual = tr.crossing_step();
    if (!actual || *actual != sol.cross_step)
      bad.push_back("declared crossing step does not match the replay");
  }
  return bad;
}

// Exact solve by crossing-step enumeration. Candidates run earliest-first;
// once the pure time cost of the next candidate cannot beat the incumbent,
// enumeration stops. The winner is re-solved lexicographically, minimizing
// total |a| (post-crossing included) with its objective pinned, so outputs
// are deterministic and roll smoothly after the bar.
inline P2Solution solve_p2(const P2Instance& inst) {
  const Config& cfg = inst.cfg;
  P2Solution out;
  if (inst.follower_commit_conflict) {
    out.binding = P2Bind::kFollower;
    return out;
  }
  const double dt = cfg.dynamics.dt;
  const auto env = detail::reach_envelopes(cfg, inst.init, inst.h);

  std::vector<int> candidates;
  if (inst.init.passed) {
    candidates.push_back(0);
  } else {
    for (int n_c = 1; n_c <= inst.h; ++n_c) {
      if (env.x_hi[static_cast<std::size_t>(n_c)] <=
          cfg.crossed_threshold() + kCrossNudge)
        continue;  // cannot be past the bar this early
      if (env.x_lo[static_cast<std::size_t>(n_c - 1)] >
          cfg.crossed_threshold())
        break;  // cannot still be before the bar this late
      candidates.push_back(n_c);
    }
  }
  if (candidates.empty()) {
    out.binding = P2Bind::kHorizon;
    return out;
  }

  int best_nc = -1;
  double best_obj = kInfPos;
  double best_smooth_sum = 0.0;
  P2Bind last_reason = P2Bind::kHorizon;
  int last_failed = -1;
  for (const int n_c : candidates) {
    if (best_nc >= 0 && cfg.weights.alpha1 * n_c * dt >= best_obj) break;
    auto cand = detail::assemble(inst, n_c, env, detail::FamilyMask{});
    if (cand.const_infeasible) {
      last_reason = cand.const_reason;
      last_failed = n_c;
      continue;
    }
    const auto sol = lp::solve(cand.prob, cfg.search.lp_tol);
    if (sol.status != lp::Status::kOptimal) {
      last_reason = P2Bind::kNone;  // resolved by the probe below
      last_failed = n_c;
      continue;
    }
    const auto profile = detail::profile_from(sol, inst.h);
    double smooth_sum = 0.0;
    for (int i = 0; i < n_c && i < inst.h; ++i)
      smooth_sum += std::abs(profile[static_cast<std::size_t>(i)]);
    const double obj =
        cfg.weights.alpha1 * n_c * dt + cfg.weights.alpha2 * smooth_sum;
    if (best_nc < 0 || obj < best_obj - 1e-9) {
      best_nc = n_c;
      best_obj = obj;
      best_smooth_sum = smooth_sum;
    }
  }

  if (best_nc < 0) {
    // All candidates failed; name the binding family by relaxation probes on
    // the last one tried.
    if (last_reason != P2Bind::kNone) {
      out.binding = last_reason;
      return out;
    }
    auto probe = [&](const detail::FamilyMask& mask) {
      auto cand = detail::assemble(inst, last_failed, env, mask);
      if (cand.const_infeasible) return false;
      return lp::solve(cand.prob, cfg.search.lp_tol).status ==
             lp::Status::kOptimal;
    };
    detail::FamilyMask no_fol;
    no_fol.follower = false;
    detail::FamilyMask no_lead;
    no_lead.leader = false;
    detail::FamilyMask no_sig;
    no_sig.signal = false;
    if (probe(no_fol)) out.binding = P2Bind::kFollower;
    else if (probe(no_lead)) out.binding = P2Bind::kLeader;
    else if (probe(no_sig)) out.binding = P2Bind::kSignal;
    else out.binding = P2Bind::kHorizon;
    return out;
  }

  // Lexicographic smoothing pass for the winner.
  auto cand = detail::assemble(inst, best_nc, env, detail::FamilyMask{});
  if (cfg.weights.alpha2 > 0.0) {
    lp::Row pin;
    pin.type = lp::RowType::kLe;
    pin.rhs = best_smooth_sum + 1e-9;
    for (int i = 0; i < best_nc && i < inst.h; ++i) {
      pin.terms.push_back({2 * i, 1.0});
      pin.terms.push_back({2 * i + 1, 1.0});
    }
    cand.prob.rows.push_back(std::move(pin));
  }
  for (int i = 0; i < inst.h; ++i) {
    cand.prob.c[static_cast<std::size_t>(2 * i)] = 1.0;
    cand.prob.c[static_cast<std::size_t>(2 * i + 1)] = 1.0;
  }
  const auto smooth_sol = lp::solve(cand.prob, cfg.search.lp_tol);
  if (smooth_sol.status != lp::Status::kOptimal)
    throw SimError("smoothing pass lost a feasible acceleration program");
  const auto profile = detail::profile_from(smooth_sol, inst.h);

  out.feasible = true;
  out.binding = P2Bind::kNone;
  out.profile = profile;
  out.cross_step = inst.t0 + best_nc;
  out.traj = replay_profile(inst, profile);
  double smooth_sum = 0.0;
  for (int i = 0; i < best_nc && i < inst.h; ++i)
    smooth_sum += std::abs(profile[static_cast<std::size_t>(i)]);
  out.time_cost = cfg.weights.alpha1 * best_nc * dt;
  out.smooth_cost = cfg.weights.alpha2 * smooth_sum;
  out.objective = out.time_cost + out.smooth_cost;
  const auto bad = validate_p2(inst, out);
  if (!bad.empty())
    throw SimError("acceleration program replay violated: " + bad.front());
  return out;
}

// Full strategy cost: the longitudinal objective plus the per-change weight
// over the whole horizon.
inline double total_cost(const P2Instance& inst, const P2Solution& sol) {
  int changes = 0;
  for (const char c : inst.change) changes += c ? 1 : 0;
  return sol.objective + inst.cfg.weights.alpha3 * changes;
}

// ---------------------------------------------------------------------------
// Instance dump (LP interchange text format, one candidate crossing step)
// ---------------------------------------------------------------------------

inline std::string dump_p2_lp(const P2Instance& inst, int n_c) {
  const auto env = detail::reach_envelopes(inst.cfg, inst.init, inst.h);
  const auto cand = detail::assemble(inst, n_c, env, detail::FamilyMask{});
  std::ostringstream out;
  out << "\\ acceleration program, crossing offset " << n_c << "\n";
  out << "Minimize\n obj:";
  bool any = false;
  for (int j = 0; j < cand.prob.n; ++j) {
    if (cand.prob.c[static_cast<std::size_t>(j)] == 0.0) continue;
    out << (any ? " + " : " ") << cand.prob.c[static_cast<std::size_t>(j)]
        << " " << (j % 2 == 0 ? "ap" : "am") << j / 2;
    any = true;
  }
  if (!any) out << " 0 ap0";
  out << "\nSubject To\n";
  for (std::size_t r = 0; r < cand.prob.rows.size(); ++r) {
    const auto& row = cand.prob.rows[r];
    out << " c" << r << ":";
    for (std::size_t k = 0; k < row.terms.size(); ++k) {
      const auto& [j, v] = row.terms[k];
      out << (k == 0 ? " " : v < 0 ? " - " : " + ")
          << (k == 0 ? v : std::abs(v)) << " " << (j % 2 == 0 ? "ap" : "am")
          << j / 2;
    }
    out << (row.type == lp::RowType::kLe
                ? " <= "
                : row.type == lp::RowType::kGe ? " >= " : " = ")
        << row.rhs << "\n";
  }
  out << "Bounds\n";
  for (int j = 0; j < cand.prob.n; ++j)
    out << " 0 <= " << (j % 2 == 0 ? "ap" : "am") << j / 2 << " <= "
        << cand.prob.upper[static_cast<std::size_t>(j)] << "\n";
  out << "End\n";
  return out.str();
}

}  // namespace cavplan
