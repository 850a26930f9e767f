#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "cavplan/world.hpp"
#include "json.hpp"

namespace cavplan {

// Demand per movement at the five load levels (veh/h): through, left, right.
inline constexpr double kDemandTable[5][3] = {{563.0, 253.0, 506.0},
                                              {1125.0, 506.0, 1012.0},
                                              {1688.0, 759.0, 1518.0},
                                              {2250.0, 1012.0, 2024.0},
                                              {2813.0, 1265.0, 2530.0}};

inline DemandSpec demand_level(int level, double penetration) {
  if (level < 1 || level > 5)
    throw ConfigError("demand level must lie in 1..5");
  DemandSpec d;
  d.through_vph = kDemandTable[level - 1][0];
  d.left_vph = kDemandTable[level - 1][1];
  d.right_vph = kDemandTable[level - 1][2];
  d.cav_penetration = penetration;
  d.validate();
  return d;
}

struct ExperimentSpec {
  Config cfg;
  DemandSpec demand;
  std::vector<unsigned> seeds = {1, 2, 3, 4, 5};
  SearchBudget budget;
  bool benchmark = false;
  bool fairness_check = false;
  double duration_s = 1800.0;
  double warmup_s = 150.0;
  std::string out_dir;  // when set, trajectory/plan/metrics files are written
  std::string label = "run";
};

struct SeedRun {
  unsigned seed = 0;
  MetricsReport metrics;
  std::int64_t fairness_replays = 0;
};

struct ExperimentResult {
  std::string label;
  bool benchmark = false;
  std::vector<SeedRun> seeds;
  MetricsReport aggregate;
};

inline void write_csv_header(std::ostream& os) {
  os << "step,time_s,vehicle_id,class,movement,lane,pos_m,speed_mps,"
        "accel_mps2,lane_change_flag,passed_flag\n";
}

// Rows for the state at the world's current clock, in vehicle-id order.
inline void append_csv_rows(std::ostream& os, const World& w) {
  std::vector<const Vehicle*> order;
  order.reserve(w.vehicles.size());
  for (const Vehicle& v : w.vehicles) order.push_back(&v);
  std::sort(order.begin(), order.end(),
            [](const Vehicle* a, const Vehicle* b) { return a->id < b->id; });
  const double t_s = w.clock * w.cfg.dynamics.dt;
  char buf[192];
  for (const Vehicle* v : order) {
    std::snprintf(buf, sizeof buf,
                  "%d,%.2f,%d,%s,%s,%d,%.4f,%.4f,%.4f,%d,%d\n", w.clock, t_s,
                  v->id, to_string(v->cls), to_string(v->movement), v->lane,
                  v->pos, v->speed, v->accel, v->lane_change ? 1 : 0,
                  v->passed ? 1 : 0);
    os << buf;
  }
}

inline void write_plan_log(std::ostream& os, const World& w) {
  for (const PlanDiag& d : w.plan_diags) {
    const nlohmann::json line = {{"step", d.step},
                                 {"vehicle", d.vehicle},
                                 {"h", d.h},
                                 {"strategies", d.strategies},
                                 {"paths", d.paths},
                                 {"infeasible", d.infeasible},
                                 {"initial_cost", d.initial_cost},
                                 {"best_cost", d.best_cost},
                                 {"wall_s", d.wall_s},
                                 {"workers", d.workers},
                                 {"fallback", to_string(d.fallback)},
                                 {"adopted", d.adopted}};
    os << line.dump() << "\n";
  }
}

inline nlohmann::json group_json(const GroupMetrics& g) {
  return {{"count", g.count},
          {"delay_s", g.delay_mean},
          {"fuel", g.fuel_mean},
          {"fuel_economy_km", g.fuel_economy_mean},
          {"smoothness", g.smooth_mean},
          {"lane_changes", g.changes_mean}};
}

inline nlohmann::json metrics_json(const MetricsReport& r) {
  nlohmann::json groups;
  for (int ci = 0; ci < 3; ++ci)
    for (int mi = 0; mi < 4; ++mi)
      groups[class_label(ci)][movement_label(mi)] = group_json(r.groups[ci][mi]);
  return {{"seed", r.seed},
          {"duration_s", r.duration_s},
          {"warmup_s", r.warmup_s},
          {"throughput_vph", r.throughput_vph},
          {"admitted", r.admitted},
          {"retired", r.retired},
          {"active_end", r.active_end},
          {"queued_end", r.queued_end},
          {"plans",
           {{"calls", r.plans.calls},
            {"adopted", r.plans.adopted},
            {"fallbacks", r.plans.fallbacks},
            {"wall_mean_s", r.plans.wall_mean},
            {"wall_max_s", r.plans.wall_max},
            {"paths_mean", r.plans.paths_mean},
            {"strategies_mean", r.plans.strategies_mean}}},
          {"groups", groups}};
}

// One full simulation; the trajectory stream, when given, receives rows after
// every step.
inline World run_world(const ExperimentSpec& spec, unsigned seed,
                       std::ostream* traj_csv = nullptr) {
  World w(spec.cfg,
          generate_arrivals(spec.cfg, spec.demand, spec.duration_s, seed),
          spec.warmup_s);
  w.benchmark = spec.benchmark;
  w.fairness_check = spec.fairness_check;
  const int steps =
      static_cast<int>(std::lround(spec.duration_s / spec.cfg.dynamics.dt));
  if (traj_csv) write_csv_header(*traj_csv);
  for (int s = 0; s < steps; ++s) {
    w.step(spec.budget);
    if (traj_csv) append_csv_rows(*traj_csv, w);
  }
  return w;
}

inline ExperimentResult run_experiment(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  ExperimentResult out;
  out.label = spec.label;
  out.benchmark = spec.benchmark;
  const bool files = !spec.out_dir.empty();
  if (files) fs::create_directories(spec.out_dir);
  std::vector<MetricsReport> reports;
  for (unsigned seed : spec.seeds) {
    const std::string stem = spec.label + "_seed" + std::to_string(seed);
    std::ofstream csv;
    if (files) {
      csv.open(fs::path(spec.out_dir) / (stem + "_trajectories.csv"));
      if (!csv) throw SimError("cannot write trajectories for " + stem);
    }
    World w = run_world(spec, seed, files ? &csv : nullptr);
    const MetricsReport r = w.report(spec.duration_s, seed);
    if (files && !spec.benchmark) {
      std::ofstream plan_os(fs::path(spec.out_dir) / (stem + "_plans.jsonl"));
      write_plan_log(plan_os, w);
    }
    reports.push_back(r);
    out.seeds.push_back({seed, r, w.fairness_replays});
  }
  out.aggregate = merge_reports(reports);
  if (files) {
    nlohmann::json doc = {{"label", spec.label},
                          {"benchmark", spec.benchmark},
                          {"duration_s", spec.duration_s},
                          {"warmup_s", spec.warmup_s},
                          {"demand",
                           {{"through_vph", spec.demand.through_vph},
                            {"left_vph", spec.demand.left_vph},
                            {"right_vph", spec.demand.right_vph},
                            {"cav_penetration", spec.demand.cav_penetration}}},
                          {"aggregate", metrics_json(out.aggregate)}};
    nlohmann::json seeds = nlohmann::json::array();
    for (const SeedRun& s : out.seeds) {
      nlohmann::json item = {{"seed", s.seed},
                             {"metrics", metrics_json(s.metrics)},
                             {"fairness_replays", s.fairness_replays}};
      seeds.push_back(item);
    }
    doc["seeds"] = seeds;
    std::ofstream os(fs::path(spec.out_dir) / (spec.label + "_metrics.json"));
    if (!os) throw SimError("cannot write metrics for " + spec.label);
    os << doc.dump(2) << "\n";
  }
  return out;
}

}  // namespace cavplan
