#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cavplan/behavior.hpp"
#include "cavplan/core.hpp"
#include "cavplan/metrics.hpp"
#include "cavplan/pmcts.hpp"
#include "cavplan/prediction.hpp"

namespace cavplan {

struct DemandSpec {
  double through_vph = 0.0;
  double left_vph = 0.0;
  double right_vph = 0.0;
  double cav_penetration = 0.0;

  double rate(Movement m) const {
    switch (m) {
      case Movement::kLeft: return left_vph;
      case Movement::kThrough: return through_vph;
      default: return right_vph;
    }
  }
  void validate() const {
    if (through_vph < 0.0 || left_vph < 0.0 || right_vph < 0.0)
      throw ConfigError("demand rates must be nonnegative");
    if (cav_penetration < 0.0 || cav_penetration > 1.0)
      throw ConfigError("penetration must lie in [0, 1]");
  }
};

struct Arrival {
  int step = 0;  // scheduled entry step
  int id = kNoVehicleId;
  VehicleClass cls = VehicleClass::kChv;
  Movement movement = Movement::kThrough;
  int lane = 0;
};

// Poisson arrivals per movement (independent substreams, merged in time
// order), with vehicle class and entry lane drawn from a shared tag stream.
inline std::vector<Arrival> generate_arrivals(const Config& cfg,
                                              const DemandSpec& demand,
                                              double duration_s,
                                              unsigned seed) {
  demand.validate();
  const Movement moves[3] = {Movement::kThrough, Movement::kLeft,
                             Movement::kRight};
  std::vector<std::pair<double, int>> slots;  // (arrival time, movement slot)
  for (int m = 0; m < 3; ++m) {
    const double rate = demand.rate(moves[m]) / 3600.0;
    if (rate <= 0.0) continue;
    std::seed_seq seq{seed, static_cast<unsigned>(m) + 1u};
    std::mt19937 rng(seq);
    std::exponential_distribution<double> gap(rate);
    for (double t = gap(rng); t < duration_s; t += gap(rng))
      slots.emplace_back(t, m);
  }
  std::sort(slots.begin(), slots.end());
  std::seed_seq tag_seq{seed, 977u};
  std::mt19937 tag(tag_seq);
  std::bernoulli_distribution is_cav(demand.cav_penetration);
  std::uniform_int_distribution<int> lane(0, cfg.geometry.lane_count - 1);
  std::vector<Arrival> out;
  out.reserve(slots.size());
  int id = 1;
  for (const auto& [t, m] : slots) {
    Arrival a;
    a.step = static_cast<int>(std::floor(t / cfg.dynamics.dt));
    a.id = id++;
    a.cls = is_cav(tag) ? VehicleClass::kCav : VehicleClass::kChv;
    a.movement = moves[m];
    a.lane = lane(tag);
    out.push_back(a);
  }
  return out;
}

struct Vehicle {
  int id = kNoVehicleId;
  VehicleClass cls = VehicleClass::kChv;
  Movement movement = Movement::kThrough;
  int lane = 0;
  double pos = 0.0;
  double speed = 0.0;
  double accel = 0.0;  // applied over the interval arriving at this state
  bool lane_change = false;
  bool passed = false;
  int last_change_step = -1000000;
  int scheduled_step = 0;
  int entry_step = 0;
  int change_count = 0;
  double smooth_sum = 0.0;
  double fuel = 0.0;
  std::vector<double> recent_pos;  // positions at preceding steps, oldest first
};

// One line per planner invocation, for the per-plan diagnostics stream.
struct PlanDiag {
  int step = 0;
  int vehicle = kNoVehicleId;
  int h = 0;
  std::int64_t strategies = 0;
  std::int64_t paths = 0;
  std::int64_t infeasible = 0;
  double initial_cost = std::numeric_limits<double>::infinity();
  double best_cost = std::numeric_limits<double>::infinity();
  double wall_s = 0.0;
  int workers = 1;
  Fallback fallback = Fallback::kNone;
  bool adopted = false;
};

// Cost of the remainder of a plan as seen from step t: time to the crossing,
// accumulated |accel| until it, and lane changes still to come. Comparable
// with a fresh search's best cost, whose horizon also starts at t.
inline double suffix_cost(const Config& cfg, const Trajectory& plan, int t) {
  const auto tc = plan.crossing_step();
  if (!tc || *tc <= t) return std::numeric_limits<double>::infinity();
  const auto& w = cfg.weights;
  const double dt = cfg.dynamics.dt;
  double cost = w.alpha1 * (*tc - t) * dt;
  for (int u = t + 1; u <= *tc; ++u)
    cost += w.alpha2 * std::abs(plan.at(u).speed - plan.at(u - 1).speed) / dt;
  for (int u = t + 1; u <= plan.end_step(); ++u)
    if (plan.at(u).lane_change) cost += w.alpha3;
  return cost;
}

struct World {
  static constexpr int kRetryBackoffSteps = 5;
  static constexpr int kPosHistoryLen = 6;
  // Planning-time ceiling on the strategy-tree size: open-road scenes with no
  // gap pressure branch combinatorially, and a tree this large already holds
  // far more strategies than any per-step budget can visit. Hitting it aborts
  // that one plan, not the simulation.
  static constexpr std::int64_t kPlanNodeCap = 20000;

  Config cfg;
  Config plan_cfg;  // cfg with the prediction give-up tightened for planning
  bool benchmark = false;        // everyone drives and crosses as a human
  bool fairness_check = false;   // replay predecessors after each adoption
  int warmup_steps = 0;
  int clock = 0;

  std::vector<Vehicle> vehicles;
  std::deque<Arrival> pending;
  PlanMap plans;
  std::unordered_map<int, int> retry_after;
  std::vector<VehicleRecord> records;
  std::vector<PlanDiag> plan_diags;
  std::int64_t fairness_replays = 0;
  std::int64_t admitted = 0;
  // [class incl. all][movement incl. all] admission counts, for conservation
  // checks against retired + active populations.
  std::array<std::array<std::int64_t, 4>, 3> admitted_by{};

  World(Config c, std::vector<Arrival> arrivals, double warmup_s = 0.0)
      : cfg(std::move(c)) {
    cfg.validate();
    plan_cfg = cfg;
    const double cycle_steps = cfg.signal.cycle / cfg.dynamics.dt;
    const int need = cfg.search.opt_horizon_cap + cfg.tail_steps() + 2;
    const int cycles =
        static_cast<int>(std::ceil(static_cast<double>(need) / cycle_steps));
    plan_cfg.search.prediction_cycle_cap =
        std::min(cfg.search.prediction_cycle_cap, std::max(1, cycles));
    plan_cfg.search.node_cap = std::min(cfg.search.node_cap, kPlanNodeCap);
    warmup_steps =
        static_cast<int>(std::lround(warmup_s / cfg.dynamics.dt));
    std::sort(arrivals.begin(), arrivals.end(),
              [](const Arrival& a, const Arrival& b) {
                return a.step != b.step ? a.step < b.step : a.id < b.id;
              });
    pending.assign(arrivals.begin(), arrivals.end());
  }

  VehicleClass behave_class(const Vehicle& v) const {
    return benchmark ? VehicleClass::kChv : v.cls;
  }

  void step(const SearchBudget& budget = {}, bool planning = true) {
    const int t = clock;
    if (planning && !benchmark) plan_pass(t, budget);
    move_pass(t);
    check_safety(t + 1);
    retire_pass(t + 1);
    admit_pass(t + 1);
    clock = t + 1;
  }

  MetricsReport report(double duration_s, unsigned seed = 0) const {
    MetricsReport r = build_report(cfg, records, duration_s,
                                   warmup_steps * cfg.dynamics.dt);
    r.seed = seed;
    r.admitted = admitted;
    r.retired = static_cast<std::int64_t>(records.size());
    r.active_end = static_cast<std::int64_t>(vehicles.size());
    for (const Arrival& a : pending)
      if (a.step <= clock) ++r.queued_end;
    for (const PlanDiag& d : plan_diags) {
      ++r.plans.calls;
      if (d.adopted) ++r.plans.adopted;
      if (d.fallback != Fallback::kNone) ++r.plans.fallbacks;
      r.plans.wall_mean += d.wall_s;
      r.plans.wall_max = std::max(r.plans.wall_max, d.wall_s);
      r.plans.paths_mean += static_cast<double>(d.paths);
      r.plans.strategies_mean += static_cast<double>(d.strategies);
    }
    if (r.plans.calls > 0) {
      const double inv = 1.0 / static_cast<double>(r.plans.calls);
      r.plans.wall_mean *= inv;
      r.plans.paths_mean *= inv;
      r.plans.strategies_mean *= inv;
    }
    return r;
  }

 private:
  static bool ahead(const Vehicle& a, const Vehicle& b) {
    if (a.pos != b.pos) return a.pos > b.pos;
    return a.id < b.id;
  }

  std::vector<AgentState> snapshot() const {
    std::vector<AgentState> out;
    out.reserve(vehicles.size());
    for (const Vehicle& v : vehicles) {
      AgentState a;
      a.id = v.id;
      a.cls = behave_class(v);
      a.movement = v.movement;
      a.lane = v.lane;
      a.pos = v.pos;
      a.speed = v.speed;
      a.passed = v.passed;
      a.last_change_step = v.last_change_step;
      out.push_back(a);
    }
    return out;
  }

  PosHistory history() const {
    PosHistory h;
    for (const Vehicle& v : vehicles)
      if (!v.recent_pos.empty()) h.emplace(v.id, v.recent_pos);
    return h;
  }

  void plan_pass(int t, const SearchBudget& budget) {
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(vehicles.size()); ++i)
      if (vehicles[i].cls == VehicleClass::kCav && !vehicles[i].passed)
        order.push_back(i);
    if (order.empty()) return;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return ahead(vehicles[a], vehicles[b]);
    });
    const std::vector<AgentState> agents = snapshot();
    const PosHistory hist = history();
    for (int i : order) {
      Vehicle& v = vehicles[i];
      if (auto it = retry_after.find(v.id); it != retry_after.end()) {
        if (t < it->second) continue;
        retry_after.erase(it);
      }
      SceneInput in{t, agents, &plans};
      try {
        PlanResult r = plan_trajectory(plan_cfg, in, v.id, budget, hist);
        record_plan(v, std::move(r), t, agents, hist);
      } catch (const SimError&) {
        // Aborted plan (e.g. the strategy tree outgrew its cap). The vehicle
        // keeps any prior plan under the per-step gate, or drives live.
        PlanDiag d;
        d.step = t;
        d.vehicle = v.id;
        d.fallback = Fallback::kError;
        plan_diags.push_back(d);
        retry_after[v.id] = t + kRetryBackoffSteps;
      }
    }
  }

  void record_plan(Vehicle& v, PlanResult r, int t,
                   const std::vector<AgentState>& agents,
                   const PosHistory& hist) {
    PlanDiag d;
    d.step = t;
    d.vehicle = v.id;
    d.h = r.h;
    d.strategies = r.strategy_count;
    d.paths = r.stats.paths_evaluated;
    d.infeasible = r.stats.paths_infeasible;
    d.initial_cost = r.stats.initial_cost;
    d.best_cost = r.stats.best_cost;
    d.wall_s = r.stats.wall_time_s;
    d.workers = r.worker_count;
    d.fallback = r.fallback;

    const bool improved = r.fallback == Fallback::kNone &&
                          r.stats.best_cost < r.stats.initial_cost - 1e-9;
    const auto prev_it = plans.find(v.id);
    const bool prev_ok = prev_it != plans.end() &&
                         plan_consistent(prev_it->second, v, t) &&
                         plan_suffix_safe(prev_it->second, t, r.scene);
    const double prev_cost = prev_ok
                                 ? suffix_cost(cfg, prev_it->second, t)
                                 : std::numeric_limits<double>::infinity();

    if (improved && r.stats.best_cost < prev_cost - 1e-9) {
      if (fairness_check) verify_non_interference(v.id, t, r, agents, hist);
      plans[v.id] = std::move(r.trajectory);
      d.adopted = true;
    } else if (!prev_ok) {
      if (prev_it != plans.end()) plans.erase(v.id);
      if (r.fallback == Fallback::kOverflow ||
          r.fallback == Fallback::kHorizon)
        retry_after[v.id] = t + kRetryBackoffSteps;
    }
    plan_diags.push_back(d);
  }

  // Registering a plan must not change what its predecessors are predicted to
  // do: re-predict with the plan in place and compare their trajectories.
  void verify_non_interference(int subject, int t, const PlanResult& r,
                               const std::vector<AgentState>& agents,
                               const PosHistory& hist) {
    PlanMap with = plans;
    with[subject] = r.trajectory;
    SceneInput in{t, agents, &with};
    const PredictedScene replay = predict_scene(plan_cfg, in, subject);
    (void)hist;
    ++fairness_replays;
    for (int pid : r.scene.predecessor_ids) {
      const Trajectory& a = r.scene.trajectories.at(pid);
      const Trajectory& b = replay.trajectories.at(pid);
      bool same = a.t0 == b.t0 && a.states.size() == b.states.size();
      for (std::size_t k = 0; same && k < a.states.size(); ++k) {
        const VehicleState& x = a.states[k];
        const VehicleState& y = b.states[k];
        same = x.step == y.step && x.lane == y.lane && x.pos == y.pos &&
               x.speed == y.speed && x.passed == y.passed;
      }
      if (!same) {
        std::ostringstream os;
        os << "fairness: plan registration for vehicle " << subject
           << " at step " << t << " altered predecessor " << pid;
        throw SimError(os.str());
      }
    }
  }

  bool plan_consistent(const Trajectory& plan, const Vehicle& v,
                       int t) const {
    if (!plan.covers(t) || !plan.covers(t + 1)) return false;
    const VehicleState& s = plan.at(t);
    return s.lane == v.lane && std::abs(s.pos - v.pos) <= 1e-6 &&
           std::abs(s.speed - v.speed) <= 1e-6 && s.passed == v.passed;
  }

  // Replay the remaining plan against the freshly predicted predecessors:
  // crossings must stay legal and the following gap must hold behind any
  // predecessor predicted in the same lane.
  bool plan_suffix_safe(const Trajectory& plan, int t,
                        const PredictedScene& scene) const {
    const int end = std::min(plan.end_step(), scene.t0 + scene.h);
    for (int u = t + 1; u <= end; ++u) {
      const VehicleState& s = plan.at(u);
      if (!plan.at(u - 1).passed && s.passed &&
          !crossing_legal(cfg, VehicleClass::kCav, s.lane, u))
        return false;
      for (int pid : scene.predecessor_ids) {
        const auto it = scene.trajectories.find(pid);
        if (it == scene.trajectories.end()) continue;
        const Trajectory& tp = it->second;
        if (!tp.covers(u) || !tp.covers(u - 1)) continue;
        if (tp.at(u).lane != s.lane || tp.at(u).pos <= s.pos) continue;
        if (s.pos > tp.at(u - 1).pos - cfg.dynamics.d_cf + 1e-6) return false;
      }
    }
    return true;
  }

  // Gate for executing one planned step against the live road: the state must
  // match the plan, the next state must respect speed caps and signal law, the
  // following gap must hold behind the current occupant of the target lane,
  // and a lane change needs the live follower's acceptance.
  bool plan_step_ok(int i, const Trajectory& plan, int t) const {
    const Vehicle& v = vehicles[i];
    if (!plan_consistent(plan, v, t)) return false;
    const VehicleState& ns = plan.at(t + 1);
    const auto& dyn = cfg.dynamics;
    if (ns.speed < -1e-6 || ns.speed > dyn.speed_limit + 1e-6) return false;
    if (ns.pos > cfg.stop_bar() && ns.pos <= cfg.conflict_end() &&
        ns.speed > dyn.conflict_speed_limit + 1e-6)
      return false;
    if (!v.passed && ns.passed &&
        !crossing_legal(cfg, VehicleClass::kCav, ns.lane, t + 1))
      return false;

    std::optional<int> lead, fol;
    for (int j = 0; j < static_cast<int>(vehicles.size()); ++j) {
      if (j == i || vehicles[j].lane != ns.lane) continue;
      if (ahead(vehicles[j], v)) {
        if (!lead || vehicles[j].pos < vehicles[*lead].pos) lead = j;
      } else {
        if (!fol || vehicles[j].pos > vehicles[*fol].pos) fol = j;
      }
    }
    if (lead && ns.pos > vehicles[*lead].pos - dyn.d_cf + 1e-6) return false;
    if (ns.lane != v.lane) {
      LaneNeighborhood nb;
      if (lead)
        nb.leader = Neighbor{vehicles[*lead].id, vehicles[*lead].pos,
                             vehicles[*lead].speed, false};
      if (fol)
        nb.follower = Neighbor{vehicles[*fol].id, vehicles[*fol].pos,
                               vehicles[*fol].speed,
                               plans.count(vehicles[*fol].id) > 0};
      if (!gap_acceptable(cfg, v.pos, v.speed, nb)) return false;
    }
    return true;
  }

  void move_pass(int t) {
    const int n = static_cast<int>(vehicles.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return ahead(vehicles[a], vehicles[b]);
    });

    std::vector<int> lane_now(n);
    for (int i = 0; i < n; ++i) lane_now[i] = vehicles[i].lane;
    struct Next {
      int lane = 0;
      double pos = 0.0, speed = 0.0;
      bool passed = false, changed = false;
    };
    std::vector<Next> next(n);

    const std::vector<AgentState> snap = snapshot();
    std::vector<const AgentState*> snap_ptrs;
    snap_ptrs.reserve(snap.size());
    for (const auto& a : snap) snap_ptrs.push_back(&a);

    for (int i : order) {
      Vehicle& me = vehicles[i];
      const Trajectory* plan = nullptr;
      if (!benchmark) {
        auto it = plans.find(me.id);
        if (it != plans.end()) plan = &it->second;
      }
      if (plan && plan->covers(t + 1) && plan_step_ok(i, *plan, t)) {
        const VehicleState& ns = plan->at(t + 1);
        next[i] = {ns.lane, ns.pos, ns.speed, me.passed || ns.passed,
                   ns.lane != lane_now[i]};
        lane_now[i] = ns.lane;
        continue;
      }
      if (plan) plans.erase(me.id);  // stale or vetoed: drive live instead

      BehaviorContext c;
      c.step = t;
      c.cls = behave_class(me);
      c.movement = me.movement;
      c.lane = lane_now[i];
      c.pos = me.pos;
      c.speed = me.speed;
      c.passed = me.passed;
      c.wrong_lane = !me.passed && !cfg.lane_serves(c.lane, c.movement);

      auto neighbors = [&](int lane) {
        LaneNeighborhood nb;
        for (int j = 0; j < n; ++j) {
          if (j == i || lane_now[j] != lane) continue;
          const Vehicle& other = vehicles[j];
          Neighbor nbj{other.id, other.pos, other.speed,
                       plans.count(other.id) > 0};
          if (ahead(other, me)) {
            if (!nb.leader || nbj.pos < nb.leader->pos) nb.leader = nbj;
          } else {
            if (!nb.follower || nbj.pos > nb.follower->pos) nb.follower = nbj;
          }
        }
        return nb;
      };
      const auto lead_sample =
          [&](const LaneNeighborhood& nb) -> std::optional<LeaderSample> {
        if (!nb.leader) return std::nullopt;
        return LeaderSample{nb.leader->pos, nb.leader->speed};
      };

      c.yield_to =
          detail::merge_announced(cfg, t, snap[i], plans, kNoVehicleId,
                                  snap_ptrs, lead_sample(neighbors(c.lane)));

      bool changed = false;
      const auto target_lane =
          decide_lane_change(cfg, c, me.last_change_step, neighbors);
      if (target_lane) {
        changed = true;
        c.lane = *target_lane;
        c.wrong_lane = !me.passed && !cfg.lane_serves(c.lane, c.movement);
        lane_now[i] = *target_lane;
        AgentState moved = snap[i];
        moved.lane = c.lane;
        c.yield_to =
            detail::merge_announced(cfg, t, moved, plans, kNoVehicleId,
                                    snap_ptrs, lead_sample(neighbors(c.lane)));
      }

      const LaneNeighborhood around = neighbors(c.lane);
      if (around.leader)
        c.leader = LeaderSample{around.leader->pos, around.leader->speed};
      if (c.wrong_lane) {
        if (const auto hop = mandatory_step_lane(cfg, c.movement, c.lane)) {
          const LaneNeighborhood mnb = neighbors(*hop);
          if (mnb.leader)
            c.merge_leader = LeaderSample{mnb.leader->pos, mnb.leader->speed};
        }
      }
      const double target = behavior_speed_target(cfg, c);
      const Advance adv = advance_state(cfg, me.pos, me.speed, target);
      next[i] = {c.lane, adv.pos, adv.speed,
                 me.passed || adv.pos > cfg.crossed_threshold(), changed};
    }

    for (int i = 0; i < n; ++i) {
      Vehicle& v = vehicles[i];
      const double a = (next[i].speed - v.speed) / cfg.dynamics.dt;
      v.recent_pos.push_back(v.pos);
      if (static_cast<int>(v.recent_pos.size()) > kPosHistoryLen)
        v.recent_pos.erase(v.recent_pos.begin());
      const bool was_passed = v.passed;
      if (next[i].changed) {
        if (t + 1 - v.last_change_step < cfg.lc_gap_steps())
          throw SimError("safety: lane changes closer than the minimum "
                         "spacing for vehicle " +
                         std::to_string(v.id) + " at step " +
                         std::to_string(t + 1));
        v.last_change_step = t + 1;
        ++v.change_count;
      }
      v.lane = next[i].lane;
      v.pos = next[i].pos;
      v.speed = next[i].speed;
      v.accel = a;
      v.lane_change = next[i].changed;
      if (!was_passed && next[i].passed &&
          !crossing_legal(cfg, behave_class(v), v.lane, t + 1))
        throw SimError("safety: illegal crossing by vehicle " +
                       std::to_string(v.id) + " at step " +
                       std::to_string(t + 1));
      v.passed = next[i].passed;
      if (!was_passed) v.smooth_sum += std::abs(a);
      v.fuel += default_fuel_rate(cfg, v.speed, a) * cfg.dynamics.dt;
    }
  }

  void check_safety(int u) const {
    const auto& dyn = cfg.dynamics;
    for (const Vehicle& v : vehicles) {
      if (v.speed < -1e-6 || v.speed > dyn.speed_limit + 1e-6)
        throw SimError("safety: speed " + std::to_string(v.speed) +
                       " out of range for vehicle " + std::to_string(v.id) +
                       " at step " + std::to_string(u));
      if (v.pos > cfg.stop_bar() && v.pos <= cfg.conflict_end() &&
          v.speed > dyn.conflict_speed_limit + 1e-6)
        throw SimError("safety: conflict-zone speed " +
                       std::to_string(v.speed) + " for vehicle " +
                       std::to_string(v.id) + " at step " +
                       std::to_string(u));
      if (v.lane_change && v.pos > cfg.nochange_start() + 1e-6)
        throw SimError("safety: lane change inside the no-changing zone by "
                       "vehicle " +
                       std::to_string(v.id) + " at step " +
                       std::to_string(u));
    }
    for (int lane = 0; lane < cfg.geometry.lane_count; ++lane) {
      std::vector<const Vehicle*> in_lane;
      for (const Vehicle& v : vehicles)
        if (v.lane == lane) in_lane.push_back(&v);
      std::sort(in_lane.begin(), in_lane.end(),
                [](const Vehicle* a, const Vehicle* b) {
                  return ahead(*a, *b);
                });
      for (std::size_t k = 1; k < in_lane.size(); ++k) {
        const Vehicle& leader = *in_lane[k - 1];
        const Vehicle& fol = *in_lane[k];
        const double lead_prev =
            leader.recent_pos.empty() ? leader.pos : leader.recent_pos.back();
        if (fol.pos > lead_prev - dyn.d_cf + 1e-6) {
          std::ostringstream os;
          os << "safety: following gap violated in lane " << lane
             << " at step " << u << ": vehicle " << fol.id << " at "
             << fol.pos << " behind vehicle " << leader.id << " (was at "
             << lead_prev << ")";
          throw SimError(os.str());
        }
      }
    }
  }

  void retire_pass(int u) {
    std::erase_if(vehicles, [&](const Vehicle& v) {
      if (v.pos <= cfg.retire_pos()) return false;
      VehicleRecord r;
      r.id = v.id;
      r.cls = v.cls;
      r.movement = v.movement;
      r.scheduled_step = v.scheduled_step;
      r.entry_step = v.entry_step;
      r.retire_step = u;
      r.change_count = v.change_count;
      r.smooth_sum = v.smooth_sum;
      r.fuel = v.fuel;
      r.distance = v.pos;
      r.counted = v.scheduled_step >= warmup_steps;
      records.push_back(r);
      plans.erase(v.id);
      retry_after.erase(v.id);
      return true;
    });
  }

  // At most one vehicle enters per lane per step, in scheduled order per
  // lane. The entry cell must be free of the rearmost occupant for the whole
  // last step; the entrant then takes the fastest speed (up to the limit)
  // whose following clearance fits behind that occupant -- the same rule a
  // lane change into pos 0 would have to meet. Joining slow traffic at a
  // matched speed keeps the entry flowing instead of holding arrivals
  // outside until a free-flow gap opens.
  std::optional<double> entry_speed(int lane) const {
    const Vehicle* rear = nullptr;
    for (const Vehicle& v : vehicles)
      if (v.lane == lane && (!rear || v.pos < rear->pos)) rear = &v;
    const auto& dyn = cfg.dynamics;
    if (!rear) return dyn.speed_limit;
    const double prev =
        rear->recent_pos.empty() ? rear->pos : rear->recent_pos.back();
    if (prev < dyn.d_cf || rear->pos < dyn.d_cf) return std::nullopt;
    const auto fits = [&](double v) {
      return rear->pos + 1e-9 >= follow_clearance(cfg, v, rear->speed);
    };
    if (fits(dyn.speed_limit)) return dyn.speed_limit;
    if (!fits(0.0)) return std::nullopt;
    double lo = 0.0, hi = dyn.speed_limit;
    for (int i = 0; i < 48; ++i) {
      const double mid = 0.5 * (lo + hi);
      (fits(mid) ? lo : hi) = mid;
    }
    return lo;
  }

  void admit_pass(int u) {
    if (pending.empty()) return;
    for (int lane = 0; lane < cfg.geometry.lane_count; ++lane) {
      auto it = std::find_if(pending.begin(), pending.end(),
                             [&](const Arrival& a) {
                               return a.lane == lane && a.step <= u;
                             });
      if (it == pending.end()) continue;
      const auto speed = entry_speed(lane);
      if (!speed) continue;
      Vehicle v;
      v.id = it->id;
      v.cls = it->cls;
      v.movement = it->movement;
      v.lane = it->lane;
      v.pos = 0.0;
      v.speed = *speed;
      v.accel = 0.0;
      v.scheduled_step = it->step;
      v.entry_step = u;
      vehicles.push_back(v);
      ++admitted;
      for (int ci : {class_index(v.cls), kClassAll})
        for (int mi : {movement_index(v.movement), kMoveAll})
          ++admitted_by[ci][mi];
      pending.erase(it);
    }
  }
};

}  // namespace cavplan
