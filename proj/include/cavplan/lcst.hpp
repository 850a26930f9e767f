#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cavplan/core.hpp"
#include "cavplan/prediction.hpp"

// Lane-changing strategy tree: the lateral search space handed to the
// Monte-Carlo planner. Layer t holds the gaps the subject could occupy at
// step t; every root-to-leaf path is one complete lane-changing strategy.
// Each node has exactly one parent, so per-node statistics (best cost seen,
// visit count) describe a unique path prefix.

namespace cavplan {

// Gaps the subject may plan into at `step`, across all lanes: wide enough
// for both entry clearances, and led either by the virtual lane head or by
// a vehicle that was ahead of the subject at plan time — only those have
// trajectories the subject may rely on, since vehicles behind it are free
// to react to whatever it decides. Sorted by lane then leader id so that
// downstream tree construction is deterministic.
inline std::vector<GapView> feasible_gaps(const Config& cfg,
                                          const PredictedScene& scene,
                                          int step) {
  const std::unordered_set<int> ahead(scene.predecessor_ids.begin(),
                                      scene.predecessor_ids.end());
  const auto lanes = lane_occupancy_at(cfg, scene, step, scene.subject_id);
  std::vector<GapView> out;
  for (int lane = 0; lane < cfg.geometry.lane_count; ++lane) {
    for (const GapView& g :
         enumerate_lcgs(cfg, lanes[static_cast<std::size_t>(lane)], lane,
                        step)) {
      if (!gap_wide_enough(cfg, g)) continue;
      if (!g.gap.leader_virtual() && ahead.count(g.gap.leader_id) == 0)
        continue;
      out.push_back(g);
    }
  }
  std::sort(out.begin(), out.end(), [](const GapView& a, const GapView& b) {
    if (a.gap.lane != b.gap.lane) return a.gap.lane < b.gap.lane;
    return a.gap.leader_id < b.gap.leader_id;
  });
  return out;
}

struct LcstNode {
  Lcg gap;
  int layer = 0;   // absolute step of this node
  int parent = -1; // index into Lcst::nodes, -1 for the root
  // Step of the most recent lane change on the path from the root, including
  // any change the subject made before planning started.
  int last_change_step = -1000000;
  double best_cost = std::numeric_limits<double>::infinity();
  std::int64_t visits = 1;
  bool pruned = false;
  std::vector<int> children;
};

struct Lcst {
  int subject = kNoVehicleId;
  int t0 = 0;
  int h = 0;  // layers cover steps t0 .. t0 + h
  std::vector<LcstNode> nodes;  // nodes[0] is the root when non-empty

  bool empty() const { return nodes.empty(); }
  const LcstNode& root() const { return nodes.front(); }
};

namespace detail {

// Position of every lane occupant at one layer, read off the gap bounds.
inline std::unordered_map<int, double> occupant_positions(
    const std::vector<GapView>& gaps) {
  std::unordered_map<int, double> pos;
  for (const GapView& g : gaps) {
    if (!g.gap.leader_virtual()) pos.emplace(g.gap.leader_id, g.top);
    if (!g.gap.follower_virtual()) pos.emplace(g.gap.follower_id, g.bottom);
  }
  return pos;
}

inline double bound_or(const std::unordered_map<int, double>& pos, int id,
                       double fallback) {
  const auto it = pos.find(id);
  return it == pos.end() ? fallback : it->second;
}

}  // namespace detail

// Layered breadth-first construction. An edge from a node at step t to a gap
// at step t+1 exists when the target lane is at most one lane away, a lane
// change respects the minimum spacing since the previous change on that
// path, and the old gap's interval — re-evaluated at t+1 from the occupants'
// new positions — still overlaps the target interval, so the subject never
// teleports past a bounding vehicle. Bounding vehicles that left the
// approach (or the lane) widen the old interval on that side. After the last
// layer, paths whose leaf lane cannot serve the subject's movement are
// removed, together with every node that no longer reaches a leaf.
//
// Returns an empty tree when the root gap is missing from the first layer or
// when no path survives the leaf filter; throws SimError when construction
// exceeds cfg.search.node_cap nodes.
inline Lcst build_lcst(const Config& cfg,
                       const std::vector<std::vector<GapView>>& gap_sets,
                       const Lcg& root_gap, int t0, int h,
                       const std::vector<int>& leaf_lanes,
                       int root_last_change_step) {
  if (static_cast<int>(gap_sets.size()) != h + 1)
    throw SimError("build_lcst: gap_sets must cover h+1 layers");
  Lcst tree;
  tree.t0 = t0;
  tree.h = h;

  const auto root_it =
      std::find_if(gap_sets[0].begin(), gap_sets[0].end(),
                   [&](const GapView& g) { return g.gap == root_gap; });
  if (root_it == gap_sets[0].end()) return tree;

  std::vector<LcstNode> nodes;
  LcstNode root;
  root.gap = root_gap;
  root.layer = t0;
  root.last_change_step = root_last_change_step;
  nodes.push_back(root);

  std::vector<int> frontier{0};
  const double m = cfg.search.big_m;
  for (int l = 0; l < h; ++l) {
    const auto pos_next =
        detail::occupant_positions(gap_sets[static_cast<std::size_t>(l + 1)]);
    std::vector<int> next_frontier;
    for (const int ni : frontier) {
      const Lcg held = nodes[static_cast<std::size_t>(ni)].gap;
      const int held_last_change =
          nodes[static_cast<std::size_t>(ni)].last_change_step;
      const double top_now =
          held.leader_virtual()
              ? m
              : detail::bound_or(pos_next, held.leader_id, m);
      const double bottom_now =
          held.follower_virtual()
              ? -m
              : detail::bound_or(pos_next, held.follower_id, -m);
      for (const GapView& cand : gap_sets[static_cast<std::size_t>(l + 1)]) {
        const int dlane = cand.gap.lane - held.lane;
        if (dlane < -1 || dlane > 1) continue;
        const bool change = dlane != 0;
        const int arrival = t0 + l + 1;
        if (change && arrival - held_last_change < cfg.lc_gap_steps())
          continue;
        if (std::max(bottom_now, cand.bottom) >=
            std::min(top_now, cand.top))
          continue;
        if (static_cast<std::int64_t>(nodes.size()) >= cfg.search.node_cap) {
          std::ostringstream msg;
          msg << "strategy tree exceeded the node cap of "
              << cfg.search.node_cap << " while expanding step " << arrival;
          throw SimError(msg.str());
        }
        LcstNode child;
        child.gap = cand.gap;
        child.layer = arrival;
        child.parent = ni;
        child.last_change_step = change ? arrival : held_last_change;
        const int ci = static_cast<int>(nodes.size());
        nodes.push_back(child);
        nodes[static_cast<std::size_t>(ni)].children.push_back(ci);
        next_frontier.push_back(ci);
      }
    }
    frontier = std::move(next_frontier);
    if (frontier.empty()) return tree;
  }

  // Leaf filter plus backward prune of everything that lost its leaves.
  std::vector<char> alive(nodes.size(), 0);
  for (std::size_t i = nodes.size(); i-- > 0;) {
    const LcstNode& n = nodes[i];
    if (n.layer == t0 + h) {
      alive[i] = std::find(leaf_lanes.begin(), leaf_lanes.end(),
                           n.gap.lane) != leaf_lanes.end();
    } else {
      for (const int c : n.children)
        if (alive[static_cast<std::size_t>(c)]) {
          alive[i] = 1;
          break;
        }
    }
  }
  if (!alive[0]) return tree;

  std::vector<int> remap(nodes.size(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!alive[i]) continue;
    remap[i] = static_cast<int>(tree.nodes.size());
    LcstNode kept = nodes[i];
    kept.children.clear();
    if (kept.parent >= 0)
      kept.parent = remap[static_cast<std::size_t>(kept.parent)];
    tree.nodes.push_back(std::move(kept));
  }
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!alive[i]) continue;
    auto& kept = tree.nodes[static_cast<std::size_t>(remap[i])];
    for (const int c : nodes[i].children)
      if (alive[static_cast<std::size_t>(c)])
        kept.children.push_back(remap[static_cast<std::size_t>(c)]);
  }
  return tree;
}

// Number of strategies still selectable: leaves are in one-to-one
// correspondence with root-to-leaf paths, and the planner marks a node
// pruned only once its whole subtree is exhausted, so unpruned leaves count
// the remaining paths.
inline std::int64_t count_strategies(const Lcst& tree) {
  std::int64_t n = 0;
  for (const LcstNode& node : tree.nodes)
    if (node.layer == tree.t0 + tree.h && !node.pruned) ++n;
  return n;
}

// Node indices from the root down to `leaf`, inclusive.
inline std::vector<int> path_nodes(const Lcst& tree, int leaf) {
  std::vector<int> rev;
  for (int i = leaf; i >= 0;
       i = tree.nodes[static_cast<std::size_t>(i)].parent)
    rev.push_back(i);
  return {rev.rbegin(), rev.rend()};
}

// The per-step gap sequence of the strategy ending at `leaf`.
inline std::vector<Lcg> path_gaps(const Lcst& tree, int leaf) {
  std::vector<Lcg> gaps;
  for (const int i : path_nodes(tree, leaf))
    gaps.push_back(tree.nodes[static_cast<std::size_t>(i)].gap);
  return gaps;
}

// Plain-text layered dump: one header line, then one line per node with its
// parent index, so the edge list is reconstructible by eye or by fixture
// parsers.
inline std::string dump_lcst(const Lcst& tree) {
  std::ostringstream out;
  out << "tree subject=" << tree.subject << " t0=" << tree.t0
      << " h=" << tree.h << " nodes=" << tree.nodes.size()
      << " strategies=" << count_strategies(tree) << "\n";
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const LcstNode& n = tree.nodes[i];
    out << "node " << i << " layer=" << n.layer << " lane=" << n.gap.lane
        << " leader=" << n.gap.leader_id << " follower=" << n.gap.follower_id
        << " parent=" << n.parent << " last_change=" << n.last_change_step
        << " f=" << n.best_cost << " N=" << n.visits
        << " pruned=" << (n.pruned ? 1 : 0) << "\n";
  }
  return out.str();
}

}  // namespace cavplan
