#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "cavplan/core.hpp"
#include "cavplan/prediction.hpp"

namespace cavplan {

// Instantaneous consumption rate as a function of speed and acceleration.
using FuelRate = std::function<double(double v, double a)>;

inline double default_fuel_rate(const Config& cfg, double v, double a) {
  const auto& w = cfg.weights;
  return w.beta0 + w.beta1 * v + w.beta2 * std::max(a, 0.0) * v;
}

// Consumption over the executed steps of a trajectory. Each interval is billed
// at the rate of its arrival state, with the acceleration recovered from the
// speed difference so partially filled accel fields cannot skew the total.
inline double fuel_surrogate(const Config& cfg, const Trajectory& traj,
                             const FuelRate& rate = {}) {
  const double dt = cfg.dynamics.dt;
  double sum = 0.0;
  for (std::size_t i = 1; i < traj.states.size(); ++i) {
    const double v = traj.states[i].speed;
    const double a = (v - traj.states[i - 1].speed) / dt;
    sum += (rate ? rate(v, a) : default_fuel_rate(cfg, v, a)) * dt;
  }
  return sum;
}

// Sum of |accel| over intervals that start before the stop bar is crossed.
inline double smoothness(const Config& cfg, const Trajectory& traj) {
  const double dt = cfg.dynamics.dt;
  double sum = 0.0;
  for (std::size_t i = 1; i < traj.states.size(); ++i) {
    if (traj.states[i - 1].passed) break;
    sum += std::abs(traj.states[i].speed - traj.states[i - 1].speed) / dt;
  }
  return sum;
}

// Unimpeded travel time across the whole modelled stretch: approach at the
// speed limit, conflict zone at its cap, exit at the speed limit.
inline double free_flow_time(const Config& cfg) {
  const auto& g = cfg.geometry;
  const auto& d = cfg.dynamics;
  return g.control_len / d.speed_limit + g.conflict_len / d.conflict_speed_limit +
         g.exit_len / d.speed_limit;
}

// Delay counts from the scheduled arrival, so time spent blocked at the entry
// is charged to the vehicle that could not enter.
inline double vehicle_delay(const Config& cfg, int scheduled_step,
                            int retire_step) {
  return (retire_step - scheduled_step) * cfg.dynamics.dt - free_flow_time(cfg);
}

struct VehicleRecord {
  int id = kNoVehicleId;
  VehicleClass cls = VehicleClass::kChv;
  Movement movement = Movement::kThrough;
  int scheduled_step = 0;
  int entry_step = 0;
  int retire_step = 0;
  int change_count = 0;
  double smooth_sum = 0.0;
  double fuel = 0.0;
  double distance = 0.0;
  bool counted = true;  // scheduled outside the warm-up window
};

struct GroupMetrics {
  std::int64_t count = 0;
  double delay_mean = 0.0;
  double fuel_mean = 0.0;
  double fuel_economy_mean = 0.0;  // km per unit of consumption
  double smooth_mean = 0.0;
  double changes_mean = 0.0;
};

struct PlanSummary {
  std::int64_t calls = 0;
  std::int64_t adopted = 0;
  std::int64_t fallbacks = 0;
  double wall_mean = 0.0;
  double wall_max = 0.0;
  double paths_mean = 0.0;
  double strategies_mean = 0.0;
};

inline constexpr int kClassCav = 0;
inline constexpr int kClassChv = 1;
inline constexpr int kClassAll = 2;
inline constexpr int kMoveAll = 3;

inline int class_index(VehicleClass c) {
  return c == VehicleClass::kCav ? kClassCav : kClassChv;
}
inline int movement_index(Movement m) { return static_cast<int>(m); }

inline const char* class_label(int ci) {
  switch (ci) {
    case kClassCav: return "cav";
    case kClassChv: return "chv";
    default: return "all";
  }
}
inline const char* movement_label(int mi) {
  switch (mi) {
    case 0: return "left";
    case 1: return "through";
    case 2: return "right";
    default: return "all";
  }
}

struct MetricsReport {
  unsigned seed = 0;
  double duration_s = 0.0;
  double warmup_s = 0.0;
  // [class: cav, chv, all] x [movement: left, through, right, all]
  std::array<std::array<GroupMetrics, 4>, 3> groups{};
  double throughput_vph = 0.0;
  std::int64_t admitted = 0;
  std::int64_t retired = 0;
  std::int64_t active_end = 0;
  std::int64_t queued_end = 0;
  PlanSummary plans;

  const GroupMetrics& group(int cls, int move) const {
    return groups[cls][move];
  }
};

namespace detail {

struct GroupSums {
  std::int64_t n = 0;
  double delay = 0.0, fuel = 0.0, economy = 0.0, smooth = 0.0, changes = 0.0;

  void add(double d, double f, double e, double s, double c) {
    ++n;
    delay += d;
    fuel += f;
    economy += e;
    smooth += s;
    changes += c;
  }
  GroupMetrics finalize() const {
    GroupMetrics g;
    g.count = n;
    if (n > 0) {
      const double inv = 1.0 / static_cast<double>(n);
      g.delay_mean = delay * inv;
      g.fuel_mean = fuel * inv;
      g.fuel_economy_mean = economy * inv;
      g.smooth_mean = smooth * inv;
      g.changes_mean = changes * inv;
    }
    return g;
  }
};

}  // namespace detail

// Means over retired vehicles scheduled outside the warm-up window, broken out
// by class and movement with "all" margins.
inline MetricsReport build_report(const Config& cfg,
                                  const std::vector<VehicleRecord>& records,
                                  double duration_s, double warmup_s) {
  MetricsReport out;
  out.duration_s = duration_s;
  out.warmup_s = warmup_s;
  std::array<std::array<detail::GroupSums, 4>, 3> sums{};
  std::int64_t counted = 0;
  for (const auto& r : records) {
    if (!r.counted) continue;
    ++counted;
    const double delay = vehicle_delay(cfg, r.scheduled_step, r.retire_step);
    const double economy =
        r.fuel > 0.0 ? (r.distance / 1000.0) / r.fuel : 0.0;
    for (int ci : {class_index(r.cls), kClassAll})
      for (int mi : {movement_index(r.movement), kMoveAll})
        sums[ci][mi].add(delay, r.fuel, economy, r.smooth_sum,
                         static_cast<double>(r.change_count));
  }
  for (int ci = 0; ci < 3; ++ci)
    for (int mi = 0; mi < 4; ++mi) out.groups[ci][mi] = sums[ci][mi].finalize();
  const double measured_s = duration_s - warmup_s;
  if (measured_s > 0.0)
    out.throughput_vph = static_cast<double>(counted) * 3600.0 / measured_s;
  return out;
}

// Count-weighted pooling of per-seed reports into one aggregate.
inline MetricsReport merge_reports(const std::vector<MetricsReport>& seeds) {
  MetricsReport out;
  if (seeds.empty()) return out;
  out.duration_s = seeds.front().duration_s;
  out.warmup_s = seeds.front().warmup_s;
  for (int ci = 0; ci < 3; ++ci) {
    for (int mi = 0; mi < 4; ++mi) {
      detail::GroupSums s;
      for (const auto& r : seeds) {
        const GroupMetrics& g = r.groups[ci][mi];
        s.n += g.count;
        const double n = static_cast<double>(g.count);
        s.delay += g.delay_mean * n;
        s.fuel += g.fuel_mean * n;
        s.economy += g.fuel_economy_mean * n;
        s.smooth += g.smooth_mean * n;
        s.changes += g.changes_mean * n;
      }
      out.groups[ci][mi] = s.finalize();
    }
  }
  double wall_max = 0.0;
  for (const auto& r : seeds) {
    out.throughput_vph += r.throughput_vph / static_cast<double>(seeds.size());
    out.admitted += r.admitted;
    out.retired += r.retired;
    out.active_end += r.active_end;
    out.queued_end += r.queued_end;
    const PlanSummary& p = r.plans;
    out.plans.calls += p.calls;
    out.plans.adopted += p.adopted;
    out.plans.fallbacks += p.fallbacks;
    const double c = static_cast<double>(p.calls);
    out.plans.wall_mean += p.wall_mean * c;
    out.plans.paths_mean += p.paths_mean * c;
    out.plans.strategies_mean += p.strategies_mean * c;
    wall_max = std::max(wall_max, p.wall_max);
  }
  if (out.plans.calls > 0) {
    const double inv = 1.0 / static_cast<double>(out.plans.calls);
    out.plans.wall_mean *= inv;
    out.plans.paths_mean *= inv;
    out.plans.strategies_mean *= inv;
  }
  out.plans.wall_max = wall_max;
  return out;
}

}  // namespace cavplan
