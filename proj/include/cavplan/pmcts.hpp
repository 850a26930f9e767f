#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include "cavplan/core.hpp"
#include "cavplan/lcst.hpp"
#include "cavplan/p2.hpp"
#include "cavplan/prediction.hpp"

namespace cavplan {

struct SearchBudget {
  // Wall-clock limit for the whole search; infinity runs until every
  // strategy in the tree has been evaluated.
  double wall_time_s = std::numeric_limits<double>::infinity();
  int workers = 1;
};

struct SearchStats {
  std::int64_t paths_evaluated = 0;
  std::int64_t paths_infeasible = 0;
  double initial_cost = std::numeric_limits<double>::infinity();
  double best_cost = std::numeric_limits<double>::infinity();
  double wall_time_s = 0.0;
};

// Node score balancing exploitation (cheapest known completion through this
// node) against exploration (visit count).
inline double node_reward(const Config& cfg, double best_cost,
                          std::int64_t visits) {
  return std::exp(-cfg.search.c1 * best_cost) +
         cfg.search.c2 * std::sqrt(1.0 / static_cast<double>(visits));
}

// Descend from the root picking the unpruned child with the highest reward
// (ties keep the first child, i.e. lowest lane then lowest leader id), then
// prune the reached leaf so no strategy is ever evaluated twice, marking
// ancestors whose children are all gone. Returns the leaf index, or nullopt
// once the tree is exhausted. The caller must hold the tree lock.
inline std::optional<int> select_and_prune(const Config& cfg, Lcst& tree) {
  if (tree.empty() || tree.root().pruned) return std::nullopt;
  int cur = 0;
  while (tree.nodes[static_cast<std::size_t>(cur)].layer < tree.t0 + tree.h) {
    const auto& node = tree.nodes[static_cast<std::size_t>(cur)];
    int pick = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (const int c : node.children) {
      const auto& child = tree.nodes[static_cast<std::size_t>(c)];
      if (child.pruned) continue;
      const double r = node_reward(cfg, child.best_cost, child.visits);
      if (r > best) {
        best = r;
        pick = c;
      }
    }
    if (pick < 0) return std::nullopt;
    cur = pick;
  }
  tree.nodes[static_cast<std::size_t>(cur)].pruned = true;
  for (int p = tree.nodes[static_cast<std::size_t>(cur)].parent; p >= 0;
       p = tree.nodes[static_cast<std::size_t>(p)].parent) {
    auto& node = tree.nodes[static_cast<std::size_t>(p)];
    const bool all_pruned =
        std::all_of(node.children.begin(), node.children.end(), [&](int c) {
          return tree.nodes[static_cast<std::size_t>(c)].pruned;
        });
    if (!all_pruned) break;
    node.pruned = true;
  }
  return cur;
}

// Fold one evaluation into every node on the leaf's path: visits always
// grow, costs only improve when the strategy produced a feasible profile.
inline void backpropagate(Lcst& tree, int leaf, std::optional<double> cost) {
  for (int i = leaf; i >= 0;
       i = tree.nodes[static_cast<std::size_t>(i)].parent) {
    auto& node = tree.nodes[static_cast<std::size_t>(i)];
    node.visits += 1;
    if (cost && *cost < node.best_cost) node.best_cost = *cost;
  }
}

// Evaluate strategies from the tree until the budget or the tree runs out.
// Every node starts from the predicted trajectory's cost so the first
// descents spread out instead of piling onto one branch. Workers share one
// tree lock: selection+pruning and backpropagation are serialized, the
// acceleration optimization in between runs unlocked. Returns the cheapest
// trajectory found (the predicted one when nothing beats it) and the run's
// statistics.
inline std::pair<Trajectory, SearchStats> search_strategies(
    const Config& cfg, Lcst& tree, const PredictedScene& scene,
    const VehicleState& init, const Trajectory& initial,
    const SearchBudget& budget, const PosHistory& history = {}) {
  SearchStats stats;
  stats.initial_cost = trajectory_cost(cfg, initial);
  stats.best_cost = stats.initial_cost;
  Trajectory best = initial;

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
  };

  if (!(budget.wall_time_s > 0.0) || tree.empty()) {
    stats.wall_time_s = elapsed();
    return {best, stats};
  }

  for (auto& node : tree.nodes) {
    node.best_cost = stats.initial_cost;
    node.visits = 1;
  }

  std::mutex tree_mutex;
  const auto worker = [&] {
    while (true) {
      int leaf = -1;
      {
        std::lock_guard<std::mutex> lock(tree_mutex);
        if (elapsed() >= budget.wall_time_s) return;
        const auto sel = select_and_prune(cfg, tree);
        if (!sel) return;
        leaf = *sel;
      }
      const std::vector<Lcg> strategy = path_gaps(tree, leaf);
      const P2Instance inst = build_p2(cfg, scene, strategy, init, history);
      const P2Solution sol = solve_p2(inst);
      {
        std::lock_guard<std::mutex> lock(tree_mutex);
        stats.paths_evaluated += 1;
        if (sol.feasible) {
          const double cost = total_cost(inst, sol);
          backpropagate(tree, leaf, cost);
          if (cost < stats.best_cost) {
            stats.best_cost = cost;
            best = sol.traj;
          }
        } else {
          stats.paths_infeasible += 1;
          backpropagate(tree, leaf, std::nullopt);
        }
      }
    }
  };

  if (budget.workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(budget.workers));
    for (int w = 0; w < budget.workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  stats.wall_time_s = elapsed();
  return {best, stats};
}

// Why a planning invocation returned the predicted trajectory unsearched.
enum class Fallback {
  kNone,          // the strategy search ran
  kOverflow,      // prediction gave up before the subject crossed
  kHorizon,       // predicted crossing beyond the optimization cap
  kPassed,        // subject already past the bar
  kNoRootGap,     // subject's current gap fails the entry filter
  kNoStrategies,  // tree built but no admissible strategy survived
  kError,         // planning aborted with a diagnostic; caller degraded
};

inline const char* to_string(Fallback f) {
  switch (f) {
    case Fallback::kNone: return "none";
    case Fallback::kOverflow: return "overflow";
    case Fallback::kHorizon: return "horizon";
    case Fallback::kPassed: return "passed";
    case Fallback::kNoRootGap: return "no_root_gap";
    case Fallback::kNoStrategies: return "no_strategies";
    case Fallback::kError: return "error";
  }
  return "?";
}

// One planning invocation, also the per-plan diagnostic record. Carries the
// predicted scene so callers can re-validate plans against it without
// predicting again.
struct PlanResult {
  int subject_id = kNoVehicleId;
  int t0 = 0;
  int h = 0;
  std::int64_t strategy_count = 0;
  int worker_count = 1;
  Fallback fallback = Fallback::kNone;
  SearchStats stats;
  Trajectory trajectory;
  PredictedScene scene;

  bool used_fallback() const { return fallback != Fallback::kNone; }
};

// Full planning pipeline for one vehicle: predict everyone, enumerate gap
// strategies, search them for the cheapest feasible trajectory. Falls back
// to the predicted trajectory whenever the strategy search cannot run.
inline PlanResult plan_trajectory(const Config& cfg, const SceneInput& in,
                                  int subject_id, const SearchBudget& budget,
                                  const PosHistory& history = {}) {
  const AgentState* subject = nullptr;
  for (const AgentState& a : in.agents)
    if (a.id == subject_id) subject = &a;
  if (subject == nullptr)
    throw SimError("plan_trajectory: subject is not in the scene");

  PlanResult out;
  out.subject_id = subject_id;
  out.worker_count = budget.workers;

  out.scene = predict_scene(cfg, in, subject_id);
  const PredictedScene& scene = out.scene;
  out.t0 = scene.t0;
  out.h = scene.h;
  const auto self = scene.trajectories.find(subject_id);
  if (self == scene.trajectories.end() || self->second.empty())
    throw SimError("plan_trajectory: prediction lost the subject");
  const Trajectory& initial = self->second;

  out.trajectory = initial;
  out.stats.initial_cost = trajectory_cost(cfg, initial);
  out.stats.best_cost = out.stats.initial_cost;
  if (scene.overflow) {
    out.fallback = Fallback::kOverflow;
    return out;
  }
  if (subject->passed) {
    out.fallback = Fallback::kPassed;
    return out;
  }
  if (scene.h > cfg.search.opt_horizon_cap) {
    out.fallback = Fallback::kHorizon;
    return out;
  }

  std::vector<std::vector<GapView>> gap_sets;
  gap_sets.reserve(static_cast<std::size_t>(scene.h) + 1);
  for (int i = 0; i <= scene.h; ++i)
    gap_sets.push_back(feasible_gaps(cfg, scene, scene.t0 + i));

  const Lcg* root = nullptr;
  for (const GapView& g : gap_sets.front()) {
    if (g.gap.lane != subject->lane) continue;
    if (g.bottom <= subject->pos && subject->pos <= g.top) {
      root = &g.gap;
      break;
    }
  }
  if (root == nullptr) {
    out.fallback = Fallback::kNoRootGap;
    return out;
  }

  Lcst tree = build_lcst(cfg, gap_sets, *root, scene.t0, scene.h,
                         cfg.dedicated_lanes(subject->movement),
                         subject->last_change_step);
  tree.subject = subject_id;
  out.strategy_count = count_strategies(tree);
  if (out.strategy_count == 0) {
    out.fallback = Fallback::kNoStrategies;
    return out;
  }

  VehicleState init;
  init.step = scene.t0;
  init.lane = subject->lane;
  init.pos = subject->pos;
  init.speed = subject->speed;
  init.accel = 0.0;
  init.lane_change = false;
  init.passed = subject->passed;

  auto [best, stats] =
      search_strategies(cfg, tree, scene, init, initial, budget, history);
  out.stats = stats;
  out.trajectory = std::move(best);
  return out;
}

}  // namespace cavplan
