#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>

#include "cavplan/core.hpp"

// Per-vehicle driving rules: Newell car-following, discrete-exact approach
// caps toward a stop or slow-down point, class-specific signal responses,
// and the lane-changing decision used for human-driven vehicles and for
// automated vehicles when they run without an optimized plan.

namespace cavplan {

// Distance covered while braking from speed u down to speed w at the steepest
// allowed rate on the step grid. Exact for trapezoidal kinematics; the
// continuous-time (u^2 - w^2) / (2 a) underestimates it between grid speeds.
inline double brake_distance(const Config& cfg, double u, double w) {
  const double dt = cfg.dynamics.dt;
  const double drop = cfg.dynamics.decel_max * dt;
  double d = 0.0;
  while (u > w + 1e-12) {
    const double next = std::max(w, u - drop);
    d += 0.5 * (u + next) * dt;
    u = next;
  }
  return d;
}

// Highest next-step speed v' such that, after advancing this step, the vehicle
// can still brake down to v_term by a point `dist` ahead of its current
// position. May exceed the speed limit (caller combines caps by min) or go
// negative when even a full-brake step cannot comply. Within the branch where
// n braking steps follow, the requirement
//   advance(now) + brake_distance(v', v_term) <= dist
// is linear in v', so the scan below is exact for the discrete kinematics.
inline double reach_speed_cap(const Config& cfg, double speed, double dist,
                              double v_term) {
  const double dt = cfg.dynamics.dt;
  const double drop = cfg.dynamics.decel_max * dt;
  for (int n = 1;; ++n) {
    const double cap = (dist - 0.5 * speed * dt - 0.5 * v_term * dt +
                        0.5 * cfg.dynamics.decel_max * dt * dt * n * (n - 1)) /
                       (n * dt);
    if (cap <= v_term + n * drop || n >= 64) return cap;
  }
}

// Newell car-following: the next position must stay d_cf behind the leader's
// position sampled tau_cf earlier, which bounds the next speed.
inline double newell_speed_cap(const Config& cfg, double pos, double speed,
                               double leader_pos_shifted) {
  const double dt = cfg.dynamics.dt;
  return 2.0 * (leader_pos_shifted - cfg.dynamics.d_cf - pos) / dt - speed;
}

// Distance covered while shedding all speed at the comfortable yield rate;
// sets how early a driver starts making room for an announced merge.
inline double gentle_stop_distance(const Config& cfg, double u) {
  const double dt = cfg.dynamics.dt;
  const double drop = cfg.dynamics.yield_decel * dt;
  double d = 0.0;
  while (u > 1e-12) {
    const double next = std::max(0.0, u - drop);
    d += 0.5 * (u + next) * dt;
    u = next;
  }
  return d;
}

struct LeaderSample {
  double pos = 0.0;    // leader position now (tau_cf-shifted sample)
  double speed = 0.0;  // leader speed now
};

// Anticipatory bound on the next speed behind a leader. The Newell bound alone
// is unsafe under a deceleration limit: it lets the follower accelerate into
// states whose successor bound would require braking harder than allowed. The
// next speed is safe when it either does not exceed the leader's current speed
// or keeps the follower's full-brake stopping envelope behind the leader's.
// Combined with the Newell bound (which covers the immediate step) this keeps
// the spacing invariant satisfiable forever, even if the leader later brakes
// as hard as physics permits: the hardest-brake reply stays compliant at every
// future step, so the deceleration limit never forces an overrun.
inline double safe_follow_cap(const Config& cfg, double pos, double speed,
                              const LeaderSample& leader) {
  const double headroom = leader.pos - cfg.dynamics.d_cf - pos;
  const double budget = headroom + brake_distance(cfg, leader.speed, 0.0);
  return std::max(leader.speed, reach_speed_cap(cfg, speed, budget, 0.0));
}

// First step strictly after `step` at which the observer class sees red.
inline int next_red_onset(const Config& cfg, int lane, int step,
                          VehicleClass observer) {
  const int per_cycle =
      static_cast<int>(std::lround(cfg.signal.cycle / cfg.dynamics.dt));
  for (int u = step + 1; u <= step + 2 * per_cycle + 1; ++u)
    if (signal_red(cfg, lane, u, observer)) return u;
  return step + 2 * per_cycle + 2;
}

struct Advance {
  double pos = 0.0;
  double speed = 0.0;
  double accel = 0.0;
};

// One kinematic step toward the desired speed with bounded acceleration.
inline Advance advance_state(const Config& cfg, double pos, double speed,
                             double v_target) {
  const auto& dyn = cfg.dynamics;
  double accel =
      std::clamp((v_target - speed) / dyn.dt, -dyn.decel_max, dyn.accel_max);
  const double next = std::max(0.0, speed + accel * dyn.dt);
  accel = (next - speed) / dyn.dt;
  return {pos + 0.5 * (speed + next) * dyn.dt, next, accel};
}

// Whether the vehicle must hold back for the signal when picking the speed for
// the next step.
//
// CHVs: red means stop. During yellow they stop only when a full stop before
// the bar is still possible; otherwise they clear during yellow, and entering
// the intersection before the red onset is lawful.
//
// CAVs: the step they cross on must not be effective red, and they must never
// lose the ability to stop. The released approach (speed limit, acceleration
// limit, conflict-zone slow-down, car-following behind a worst-case
// hard-braking leader) is simulated; the vehicle is released only when that
// approach crosses before the upcoming effective-red onset. The simulation
// reproduces the released dynamics exactly and the leader envelope is a lower
// bound on any real leader, so a granted release is never revoked later.
inline bool signal_requires_stop(const Config& cfg, int lane, int step,
                                 VehicleClass cls, double pos, double speed,
                                 const std::optional<LeaderSample>& leader) {
  if (!cfg.lane_controlled(lane)) return false;
  if (pos > cfg.crossed_threshold()) return false;  // already through
  const auto& dyn = cfg.dynamics;
  // A vehicle parked exactly on the bar may sit a rounding error beyond it;
  // it is still holdable, so never let the distance go negative.
  const double dist = std::max(0.0, cfg.stop_bar() - pos);
  if (cls == VehicleClass::kChv) {
    if (signal_red(cfg, lane, step, VehicleClass::kChv)) return true;
    const double phase = std::fmod(step * dyn.dt, cfg.signal.cycle);
    if (phase < cfg.signal.green_end) return false;  // green
    return brake_distance(cfg, speed, 0.0) <= dist + 1e-9;
  }
  const int onset = next_red_onset(cfg, lane, step, VehicleClass::kCav);
  double my_pos = pos, my_speed = speed;
  double l_pos = leader ? leader->pos : 0.0;
  double l_speed = leader ? leader->speed : 0.0;
  for (int u = step; u + 1 <= onset - 1; ++u) {
    double target =
        std::min(dyn.speed_limit,
                 std::max(reach_speed_cap(cfg, my_speed,
                                          cfg.stop_bar() - my_pos,
                                          dyn.conflict_speed_limit),
                          dyn.conflict_speed_limit));
    if (leader) {
      target =
          std::min(target, newell_speed_cap(cfg, my_pos, my_speed, l_pos));
      target = std::min(target, safe_follow_cap(cfg, my_pos, my_speed,
                                                LeaderSample{l_pos, l_speed}));
    }
    const Advance adv =
        advance_state(cfg, my_pos, my_speed, std::max(0.0, target));
    my_pos = adv.pos;
    my_speed = adv.speed;
    if (my_pos > cfg.crossed_threshold()) return false;
    const double l_next = std::max(0.0, l_speed - dyn.decel_max * dyn.dt);
    l_pos += 0.5 * (l_speed + l_next) * dyn.dt;
    l_speed = l_next;
  }
  return true;
}

struct BehaviorContext {
  int step = 0;
  VehicleClass cls = VehicleClass::kChv;
  Movement movement = Movement::kThrough;
  int lane = 0;
  double pos = 0.0;
  double speed = 0.0;
  bool passed = false;                 // beyond the stop bar
  std::optional<LeaderSample> leader;  // nearest vehicle ahead in this lane
  bool wrong_lane = false;  // lane does not serve the movement yet
  // Nearest vehicle ahead in the adjacent lane a pending mandatory change
  // targets. Pacing behind it keeps a merge slot reachable; without this cap
  // the vehicle overruns every gap and parks at the no-changing boundary
  // ahead of the whole target-lane queue, where no gap can ever open.
  std::optional<LeaderSample> merge_leader;
  // A vehicle signalling a merge into this lane just ahead; the follower
  // spaces itself behind it as if the merge had already happened.
  std::optional<LeaderSample> yield_to;
};

// Desired speed for the next step: the minimum of the speed limit, the
// car-following bound, the conflict-zone approach cap, the signal stop cap,
// the wrong-lane stop at the no-changing-zone boundary, the merge-slot
// pacing cap, and the yield cap.
inline double behavior_speed_target(const Config& cfg,
                                    const BehaviorContext& c) {
  const auto& dyn = cfg.dynamics;
  double target = dyn.speed_limit;
  const auto follow = [&](const LeaderSample& lead, double extra_gap) {
    const LeaderSample shifted{lead.pos - std::max(0.0, extra_gap), lead.speed};
    target = std::min(target,
                      newell_speed_cap(cfg, c.pos, c.speed, shifted.pos));
    target = std::min(target, safe_follow_cap(cfg, c.pos, c.speed, shifted));
  };
  if (c.leader) follow(*c.leader, 0.0);
  if (!c.passed) {
    const double dist = std::max(0.0, cfg.stop_bar() - c.pos);
    target = std::min(
        target, std::max(reach_speed_cap(cfg, c.speed, dist,
                                         dyn.conflict_speed_limit),
                         dyn.conflict_speed_limit));
    if (signal_requires_stop(cfg, c.lane, c.step, c.cls, c.pos, c.speed,
                             c.leader))
      target = std::min(target, reach_speed_cap(cfg, c.speed, dist, 0.0));
    if (c.wrong_lane) {
      target = std::min(
          target, reach_speed_cap(
                      cfg, c.speed,
                      std::max(0.0, cfg.nochange_start() - c.pos), 0.0));
      if (c.merge_leader) follow(*c.merge_leader, dyn.d_p - dyn.d_cf);
    }
    if (c.yield_to) follow(*c.yield_to, dyn.d_f - dyn.d_cf);
  } else if (c.pos <= cfg.conflict_end()) {
    target = std::min(target, dyn.conflict_speed_limit);
  }
  return std::max(0.0, target);
}

// ---------------------------------------------------------------------------
// Lane-changing decision
// ---------------------------------------------------------------------------

// Adjacent lane one step toward the nearest lane serving the movement, for a
// vehicle whose current lane does not serve it.
inline std::optional<int> mandatory_step_lane(const Config& cfg,
                                              Movement movement, int lane) {
  if (cfg.lane_serves(lane, movement)) return std::nullopt;
  int best_lane = -1, best_dist = 1 << 20;
  for (int k : cfg.dedicated_lanes(movement)) {
    const int d = std::abs(k - lane);
    if (d < best_dist) {
      best_dist = d;
      best_lane = k;
    }
  }
  if (best_lane < 0) return std::nullopt;
  return lane + (best_lane > lane ? 1 : -1);
}

// A vehicle still short of its required lane matches the target lane's pace
// (and obliges followers there to concede) only inside this window before
// the no-changing boundary. Farther upstream it runs free: holding position
// behind a distant queue would drag that queue's congestion all the way back
// to the entry. Zones shorter than the window keep the coupling everywhere.
inline constexpr double kMergeWindowM = 150.0;

inline double merge_activation_pos(const Config& cfg) {
  return cfg.nochange_start() - kMergeWindowM;
}

struct Neighbor {
  int id = kNoVehicleId;
  double pos = 0.0;
  double speed = 0.0;
  // The prospective new follower must not be forced to react: holders of a
  // registered plan and, inside rollouts, vehicles with fixed trajectories.
  bool protected_follower = false;
};

struct LaneNeighborhood {
  std::optional<Neighbor> leader;
  std::optional<Neighbor> follower;
};

// Spacing the pair (rear, front) needs so the Newell bound stays satisfiable
// on the very next step even under a full-brake choice by the rear vehicle,
// and the rear vehicle's full-brake stopping envelope fits behind the front
// vehicle's.
inline double follow_clearance(const Config& cfg, double rear_speed,
                               double front_speed) {
  const auto& dyn = cfg.dynamics;
  const double drop = dyn.decel_max * dyn.dt;
  const double min_adv =
      0.5 * (rear_speed + std::max(0.0, rear_speed - drop)) * dyn.dt;
  const double envelope = brake_distance(cfg, rear_speed, 0.0) -
                          brake_distance(cfg, front_speed, 0.0);
  return dyn.d_cf + std::max(min_adv, envelope);
}

// Both clearances are speed-aware via follow_clearance. Nobody may merge in
// front of a follower that can no longer stop before the bar: that follower
// is committed to crossing and must not be slowed into the intersection.
inline bool gap_acceptable(const Config& cfg, double pos, double speed,
                           const LaneNeighborhood& nb) {
  const auto& dyn = cfg.dynamics;
  if (nb.leader) {
    const double need =
        std::max(dyn.d_p, follow_clearance(cfg, speed, nb.leader->speed));
    if (nb.leader->pos - pos < need) return false;
  }
  if (nb.follower) {
    if (nb.follower->protected_follower) return false;
    const double need =
        std::max(dyn.d_f, follow_clearance(cfg, nb.follower->speed, speed));
    if (pos - nb.follower->pos < need) return false;
    const double f_dist = cfg.stop_bar() - nb.follower->pos;
    if (f_dist >= 0.0 &&
        brake_distance(cfg, nb.follower->speed, 0.0) > f_dist + 1e-9)
      return false;
  }
  return true;
}

// Lane choice for the next step. Mandatory moves step toward the nearest lane
// serving the movement; optional moves require a clear speed gain. Changes are
// suppressed once the worst-case advance could enter the no-changing zone and
// while the minimum spacing since the previous change has not elapsed.
inline std::optional<int> decide_lane_change(
    const Config& cfg, const BehaviorContext& c, int last_change_step,
    const std::function<LaneNeighborhood(int)>& neighbors) {
  const auto& dyn = cfg.dynamics;
  if (c.passed) return std::nullopt;
  if (c.step + 1 - last_change_step < cfg.lc_gap_steps()) return std::nullopt;
  const double worst_next =
      std::min(dyn.speed_limit, c.speed + dyn.accel_max * dyn.dt);
  if (c.pos + 0.5 * (c.speed + worst_next) * dyn.dt > cfg.nochange_start())
    return std::nullopt;

  if (c.wrong_lane) {
    const auto cand = mandatory_step_lane(cfg, c.movement, c.lane);
    if (!cand) return std::nullopt;
    if (gap_acceptable(cfg, c.pos, c.speed, neighbors(*cand))) return *cand;
    return std::nullopt;
  }

  auto anticipated = [&](int lane, const LaneNeighborhood& nb,
                         bool keep_yield) {
    BehaviorContext probe = c;
    probe.lane = lane;
    probe.wrong_lane = !cfg.lane_serves(lane, c.movement);
    probe.merge_leader.reset();
    if (!keep_yield) probe.yield_to.reset();
    probe.leader.reset();
    if (nb.leader) probe.leader = LeaderSample{nb.leader->pos, nb.leader->speed};
    return behavior_speed_target(cfg, probe);
  };
  const double here = anticipated(c.lane, neighbors(c.lane), true);
  std::optional<int> best;
  double best_gain = dyn.lc_gain_threshold - 1e-9;
  for (const int delta : {-1, +1}) {
    const int cand = c.lane + delta;
    if (cand < 0 || cand >= cfg.geometry.lane_count) continue;
    if (!cfg.lane_serves(cand, c.movement)) continue;
    const LaneNeighborhood nb = neighbors(cand);
    if (!gap_acceptable(cfg, c.pos, c.speed, nb)) continue;
    const double gain = anticipated(cand, nb, false) - here;
    if (gain > best_gain + 1e-12) {
      best_gain = gain;
      best = cand;
    }
  }
  return best;
}

}  // namespace cavplan
