#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "cavplan/behavior.hpp"
#include "cavplan/core.hpp"

// Scene rollout used by the planner: vehicles ahead of the subject are
// advanced first and never react to anyone behind them, so their predicted
// motion is unaffected by whatever the subject later decides. Automated
// vehicles with a registered plan replay it verbatim; everyone else follows
// the behavior rules.

namespace cavplan {

struct AgentState {
  int id = kNoVehicleId;
  VehicleClass cls = VehicleClass::kChv;
  Movement movement = Movement::kThrough;
  int lane = 0;
  double pos = 0.0;
  double speed = 0.0;
  bool passed = false;
  int last_change_step = -1000000;
};

using PlanMap = std::unordered_map<int, Trajectory>;

struct SceneInput {
  int t0 = 0;
  std::vector<AgentState> agents;
  const PlanMap* plans = nullptr;
};

struct PredictedScene {
  int t0 = 0;
  int subject_id = kNoVehicleId;
  int h = 0;  // trajectories cover steps t0 .. t0 + h
  bool overflow = false;
  std::optional<int> subject_cross_step;
  std::vector<int> predecessor_ids;
  std::vector<int> follower_ids;
  std::unordered_map<int, Trajectory> trajectories;
};

// First step after `step` at which the plan switches lanes.
inline std::optional<int> first_pending_change(const Trajectory& plan,
                                               int step) {
  const int from = std::max(plan.t0 + 1, step + 1);
  for (int s = from; s <= plan.end_step(); ++s)
    if (plan.at(s).lane != plan.at(s - 1).lane) return s;
  return std::nullopt;
}

// Planning objective of a candidate trajectory: weighted time to the bar,
// pre-crossing acceleration magnitude, and lane-change count. Infinite when
// the bar is never crossed within the covered horizon.
inline double trajectory_cost(const Config& cfg, const Trajectory& traj) {
  const auto tc = traj.crossing_step();
  if (!tc) return std::numeric_limits<double>::infinity();
  double accel_sum = 0.0;
  for (const auto& s : traj.states) {
    if (s.step >= *tc) break;
    accel_sum += std::abs(s.accel);
  }
  return cfg.weights.alpha1 * (*tc - traj.t0) * cfg.dynamics.dt +
         cfg.weights.alpha2 * accel_sum +
         cfg.weights.alpha3 * traj.change_count();
}

// Approach-side lane occupancy at a step, read off predicted trajectories.
// Vehicles already past the bar no longer occupy an approach lane.
inline std::vector<std::vector<LaneOccupant>> lane_occupancy_at(
    const Config& cfg, const PredictedScene& scene, int step, int exclude_id) {
  std::vector<std::vector<LaneOccupant>> lanes(cfg.geometry.lane_count);
  for (const auto& [id, traj] : scene.trajectories) {
    if (id == exclude_id || !traj.covers(step)) continue;
    const VehicleState& s = traj.at(step);
    if (s.passed) continue;
    lanes[s.lane].push_back({id, s.pos});
  }
  return lanes;
}

namespace detail {

struct RolloutSlot {
  AgentState st;
  const Trajectory* plan = nullptr;
  bool predecessor = false;
  Trajectory out;
};

inline bool ahead_of(const AgentState& a, const AgentState& b) {
  if (a.pos != b.pos) return a.pos > b.pos;
  return a.id < b.id;
}

// The vehicle, if any, whose announced merge into `me`'s lane obliges `me`
// to make room. Two kinds of turn signal exist: a registered plan switching
// into this lane within the change-spacing window, and a vehicle held in a
// lane that cannot serve its movement whose next mandatory hop targets this
// lane. Only the nearest follower reacts (the announcer must sit between `me`
// and `me`'s own-lane leader), only inside a proximity horizon — beyond the
// comfortable-deceleration envelope and the clearance the merge itself needs,
// holding speed cannot close the slot yet — and, for a held vehicle, only
// once its leader-side slot is open or opening: conceding to a merge that
// cannot proceed anyway would plug the lane behind a hovering vehicle.
inline std::optional<LeaderSample> merge_announced(
    const Config& cfg, int step, const AgentState& me, const PlanMap& plans,
    int skip_plan_id, const std::vector<const AgentState*>& visible,
    const std::optional<LeaderSample>& own_leader) {
  if (me.passed) return std::nullopt;
  const auto& dyn = cfg.dynamics;
  const double lead_pos =
      own_leader ? own_leader->pos : std::numeric_limits<double>::infinity();
  const auto close_enough = [&](double w_pos, double w_speed) {
    const double need =
        std::max(dyn.d_f, follow_clearance(cfg, me.speed, w_speed));
    const double worst_adv =
        0.5 *
        (me.speed +
         std::min(dyn.speed_limit, me.speed + dyn.accel_max * dyn.dt)) *
        dyn.dt;
    const double comfort =
        dyn.d_cf + gentle_stop_distance(cfg, me.speed) + me.speed * dyn.dt;
    return w_pos - me.pos < std::max(need + worst_adv, comfort);
  };
  std::optional<LeaderSample> best;
  const auto offer = [&](double w_pos, double w_speed) {
    if (!close_enough(w_pos, w_speed)) return;
    if (!best || w_pos < best->pos) best = LeaderSample{w_pos, w_speed};
  };
  for (const auto& [id, plan] : plans) {
    if (id == me.id || id == skip_plan_id) continue;
    if (!plan.covers(step)) continue;
    const auto s = first_pending_change(plan, step);
    if (!s || *s - step > cfg.lc_gap_steps()) continue;
    if (plan.at(*s).lane != me.lane) continue;
    const VehicleState& cur = plan.at(step);
    if (cur.pos <= me.pos) continue;
    if (plan.at(*s).pos > lead_pos) continue;
    offer(cur.pos, cur.speed);
  }
  for (const AgentState* w : visible) {
    if (w->id == me.id || w->passed) continue;
    if (plans.count(w->id) && w->id != skip_plan_id) continue;
    const auto cand = mandatory_step_lane(cfg, w->movement, w->lane);
    if (!cand || *cand != me.lane) continue;
    if (!ahead_of(*w, me)) continue;
    if (w->pos > lead_pos) continue;
    if (own_leader) {
      const double slot_need =
          std::max(dyn.d_p, follow_clearance(cfg, w->speed, own_leader->speed));
      if (own_leader->pos - w->pos <
          slot_need - own_leader->speed * dyn.dt)
        continue;
    }
    offer(w->pos, w->speed);
  }
  return best;
}

}  // namespace detail

inline PredictedScene predict_scene(const Config& cfg, const SceneInput& in,
                                    int subject_id) {
  using detail::RolloutSlot;
  std::vector<RolloutSlot> slots;
  slots.reserve(in.agents.size());
  const AgentState* subject = nullptr;
  for (const auto& a : in.agents)
    if (a.id == subject_id) subject = &a;
  if (!subject) throw SimError("predict_scene: subject not in scene");

  static const PlanMap kNoPlans;
  const PlanMap& plans = in.plans ? *in.plans : kNoPlans;
  for (const auto& a : in.agents) {
    RolloutSlot s;
    s.st = a;
    s.predecessor = a.id != subject_id && a.pos >= subject->pos;
    if (a.id != subject_id) {
      auto it = plans.find(a.id);
      if (it != plans.end()) s.plan = &it->second;
    }
    s.out.t0 = in.t0;
    s.out.states.push_back(
        {in.t0, a.lane, a.pos, a.speed, 0.0, false, a.passed});
    slots.push_back(std::move(s));
  }

  auto order = [&](bool predecessors) {
    std::vector<int> idx;
    for (int i = 0; i < static_cast<int>(slots.size()); ++i)
      if (slots[i].predecessor == predecessors) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      return detail::ahead_of(slots[a].st, slots[b].st);
    });
    return idx;
  };

  const int sub =
      static_cast<int>(std::find_if(slots.begin(), slots.end(),
                                    [&](const RolloutSlot& s) {
                                      return s.st.id == subject_id;
                                    }) -
                       slots.begin());

  PredictedScene out;
  out.t0 = in.t0;
  out.subject_id = subject_id;
  for (const auto& s : slots) {
    if (s.st.id == subject_id) continue;
    (s.predecessor ? out.predecessor_ids : out.follower_ids)
        .push_back(s.st.id);
  }

  std::optional<int> cross;
  int horizon_end = in.t0;
  for (int t = in.t0;; ++t) {
    if (!cross && slots[sub].st.passed) cross = t;
    if (cross && t >= *cross + cfg.tail_steps()) {
      horizon_end = t;
      break;
    }
    if (!cross && t - in.t0 >= cfg.prediction_step_cap()) {
      out.overflow = true;
      horizon_end = t;
      break;
    }

    // Lane membership visible to later (rearward) deciders this step;
    // positions and speeds are always read at step t.
    std::vector<int> lane_now(slots.size());
    for (size_t i = 0; i < slots.size(); ++i) lane_now[i] = slots[i].st.lane;
    std::vector<AgentState> next(slots.size());
    for (size_t i = 0; i < slots.size(); ++i) next[i] = slots[i].st;

    auto advance_pass = [&](const std::vector<int>& members,
                            bool restrict_scope) {
      // Visibility scope: in the predecessor pass only predecessors exist.
      std::vector<int> scope;
      for (int i = 0; i < static_cast<int>(slots.size()); ++i)
        if (!restrict_scope || slots[i].predecessor) scope.push_back(i);
      std::vector<const AgentState*> scope_states;
      for (int i : scope) scope_states.push_back(&slots[i].st);

      for (int i : members) {
        RolloutSlot& me = slots[i];
        if (me.plan && me.plan->covers(t + 1)) {
          const VehicleState& ns = me.plan->at(t + 1);
          next[i].lane = ns.lane;
          next[i].pos = ns.pos;
          next[i].speed = ns.speed;
          next[i].passed = me.st.passed || ns.passed;
          if (ns.lane != lane_now[i]) next[i].last_change_step = t + 1;
          lane_now[i] = ns.lane;
          continue;
        }

        BehaviorContext c;
        c.step = t;
        c.cls = me.st.cls;
        c.movement = me.st.movement;
        c.lane = lane_now[i];
        c.pos = me.st.pos;
        c.speed = me.st.speed;
        c.passed = me.st.passed;
        c.wrong_lane =
            !me.st.passed && !cfg.lane_serves(c.lane, c.movement);

        auto neighbors = [&](int lane) {
          LaneNeighborhood nb;
          for (int j : scope) {
            if (j == i || lane_now[j] != lane) continue;
            const AgentState& other = slots[j].st;
            const bool ahead = detail::ahead_of(other, me.st);
            Neighbor n{other.id, other.pos, other.speed,
                       slots[j].plan != nullptr ||
                           (!restrict_scope && slots[j].predecessor)};
            if (ahead) {
              if (!nb.leader || n.pos < nb.leader->pos) nb.leader = n;
            } else {
              if (!nb.follower || n.pos > nb.follower->pos) nb.follower = n;
            }
          }
          return nb;
        };
        const auto lead_sample =
            [&](const LaneNeighborhood& nb) -> std::optional<LeaderSample> {
          if (!nb.leader) return std::nullopt;
          return LeaderSample{nb.leader->pos, nb.leader->speed};
        };

        c.yield_to = detail::merge_announced(cfg, t, me.st, plans, subject_id,
                                             scope_states,
                                             lead_sample(neighbors(c.lane)));

        const auto target_lane =
            decide_lane_change(cfg, c, me.st.last_change_step, neighbors);
        if (target_lane) {
          c.lane = *target_lane;
          c.wrong_lane =
              !me.st.passed && !cfg.lane_serves(c.lane, c.movement);
          lane_now[i] = *target_lane;
          next[i].last_change_step = t + 1;
          // The merge announcement was judged for the lane just left.
          AgentState moved = me.st;
          moved.lane = c.lane;
          c.yield_to = detail::merge_announced(cfg, t, moved, plans,
                                               subject_id, scope_states,
                                               lead_sample(neighbors(c.lane)));
        }
        next[i].lane = c.lane;

        const LaneNeighborhood around = neighbors(c.lane);
        if (around.leader)
          c.leader = LeaderSample{around.leader->pos, around.leader->speed};
        if (c.wrong_lane) {
          if (const auto hop = mandatory_step_lane(cfg, c.movement, c.lane)) {
            const LaneNeighborhood mnb = neighbors(*hop);
            if (mnb.leader)
              c.merge_leader =
                  LeaderSample{mnb.leader->pos, mnb.leader->speed};
          }
        }

        const double target = behavior_speed_target(cfg, c);
        const Advance adv =
            advance_state(cfg, me.st.pos, me.st.speed, target);
        next[i].pos = adv.pos;
        next[i].speed = adv.speed;
        next[i].passed =
            me.st.passed || adv.pos > cfg.crossed_threshold();
        me.out.states.back().accel = adv.accel;
      }
    };

    advance_pass(order(true), true);
    advance_pass(order(false), false);

    for (size_t i = 0; i < slots.size(); ++i) {
      const bool changed = next[i].lane != slots[i].st.lane;
      if (slots[i].plan && slots[i].plan->covers(t + 1))
        slots[i].out.states.back().accel =
            (next[i].speed - slots[i].st.speed) / cfg.dynamics.dt;
      slots[i].st = next[i];
      slots[i].out.states.push_back({t + 1, next[i].lane, next[i].pos,
                                     next[i].speed, 0.0, changed,
                                     next[i].passed});
    }
  }

  out.h = horizon_end - in.t0;
  out.subject_cross_step = cross;
  for (auto& s : slots) out.trajectories.emplace(s.st.id, std::move(s.out));
  return out;
}

}  // namespace cavplan
