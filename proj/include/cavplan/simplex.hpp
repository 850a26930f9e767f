#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

// Small dense linear-program solver: two-phase primal simplex with implicit
// variable bounds 0 <= x_j <= upper_j (upper may be infinite). Built for the
// per-candidate acceleration programs, which are tiny after row filtering, so
// a dense tableau is the simplest exact tool. Deterministic pivoting with a
// Bland fallback keeps results reproducible and cycle-free.

namespace cavplan {
namespace lp {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class RowType { kLe, kGe, kEq };
enum class Status { kOptimal, kInfeasible, kUnbounded, kIterLimit };

struct Row {
  RowType type = RowType::kLe;
  std::vector<std::pair<int, double>> terms;  // (variable, coefficient)
  double rhs = 0.0;
};

struct Problem {
  int n = 0;                   // structural variable count
  std::vector<double> c;       // minimize c'x
  std::vector<double> upper;   // per-variable upper bound (kInf allowed)
  std::vector<Row> rows;

  int add_var(double cost, double ub) {
    c.push_back(cost);
    upper.push_back(ub);
    return n++;
  }
};

struct Solution {
  Status status = Status::kInfeasible;
  std::vector<double> x;
  double objective = 0.0;
  int iterations = 0;
};

namespace detail {

enum class VarState : char { kAtLower, kAtUpper, kBasic };

// Dense tableau that maintains B^{-1}A plus the *current point*: nonbasic
// variables rest at one of their bounds and beta_ holds the basic values at
// that point. A pivot first slides the point along the entering column, then
// relabels the basis, so beta_ needs no classical RHS elimination.
class Tableau {
 public:
  Tableau(const Problem& p, double tol) : tol_(tol), n_struct_(p.n) {
    const int m = static_cast<int>(p.rows.size());
    n_total_ = p.n;
    std::vector<int> slack_of(m, -1);
    for (int i = 0; i < m; ++i)
      if (p.rows[i].type != RowType::kEq) slack_of[i] = n_total_++;
    art_begin_ = n_total_;
    n_total_ += m;  // one artificial per row keeps the start basis trivial

    upper_.assign(n_total_, kInf);
    for (int j = 0; j < p.n; ++j) upper_[j] = p.upper[j];
    a_.assign(m, std::vector<double>(n_total_, 0.0));
    state_.assign(n_total_, VarState::kAtLower);
    basis_.assign(m, -1);
    beta_.assign(m, 0.0);

    for (int i = 0; i < m; ++i) {
      const Row& r = p.rows[i];
      // Normalize to rhs >= 0 so the artificial basis starts feasible at the
      // all-at-lower point.
      const double sign = r.rhs < 0.0 ? -1.0 : 1.0;
      for (const auto& [j, v] : r.terms) a_[i][j] += sign * v;
      if (slack_of[i] >= 0) {
        const bool le = (r.type == RowType::kLe);
        a_[i][slack_of[i]] = (le == (sign > 0.0)) ? 1.0 : -1.0;
      }
      const int art = art_begin_ + i;
      a_[i][art] = 1.0;
      basis_[i] = art;
      state_[art] = VarState::kBasic;
      beta_[i] = sign * r.rhs;
    }
  }

  Solution optimize(const Problem& p, int iter_cap) {
    Solution sol;
    std::vector<double> cost1(n_total_, 0.0);
    for (int j = art_begin_; j < n_total_; ++j) cost1[j] = 1.0;
    Status st = run(cost1, iter_cap, /*phase1=*/true);
    if (st == Status::kIterLimit) {
      sol.status = st;
      sol.iterations = iters_;
      return sol;
    }
    if (current_cost(cost1) > 1e3 * tol_) {
      sol.status = Status::kInfeasible;
      sol.iterations = iters_;
      return sol;
    }
    expel_artificials();
    for (int j = art_begin_; j < n_total_; ++j) upper_[j] = 0.0;
    std::vector<double> cost2(n_total_, 0.0);
    for (int j = 0; j < n_struct_; ++j) cost2[j] = p.c[j];
    st = run(cost2, iter_cap, /*phase1=*/false);
    sol.status = st;
    sol.iterations = iters_;
    if (st != Status::kOptimal) return sol;
    sol.x.assign(n_struct_, 0.0);
    for (int j = 0; j < n_struct_; ++j)
      if (state_[j] == VarState::kAtUpper) sol.x[j] = upper_[j];
    for (int i = 0; i < static_cast<int>(basis_.size()); ++i)
      if (basis_[i] < n_struct_) sol.x[basis_[i]] = beta_[i];
    sol.objective = 0.0;
    for (int j = 0; j < n_struct_; ++j) sol.objective += p.c[j] * sol.x[j];
    return sol;
  }

 private:
  double current_cost(const std::vector<double>& cost) const {
    double obj = 0.0;
    for (std::size_t i = 0; i < basis_.size(); ++i)
      obj += cost[basis_[i]] * beta_[i];
    for (int j = 0; j < n_total_; ++j)
      if (state_[j] == VarState::kAtUpper) obj += cost[j] * upper_[j];
    return obj;
  }

  std::vector<double> reduced_costs(const std::vector<double>& cost) const {
    const int m = static_cast<int>(basis_.size());
    std::vector<double> z(cost.begin(), cost.begin() + n_total_);
    for (int i = 0; i < m; ++i) {
      const double cb = cost[basis_[i]];
      if (cb == 0.0) continue;
      const auto& row = a_[i];
      for (int j = 0; j < n_total_; ++j) z[j] -= cb * row[j];
    }
    return z;
  }

  Status run(const std::vector<double>& cost, int iter_cap, bool phase1) {
    int stall = 0;
    while (true) {
      if (++iters_ > iter_cap) return Status::kIterLimit;
      const auto z = reduced_costs(cost);
      const bool bland = stall > 2 * (n_total_ + 8);
      int enter = -1;
      double best = -tol_;
      for (int j = 0; j < n_total_; ++j) {
        if (state_[j] == VarState::kBasic) continue;
        if (!phase1 && j >= art_begin_) continue;
        double rate;
        if (state_[j] == VarState::kAtLower && upper_[j] > 0.0)
          rate = z[j];   // increasing x_j improves when z < 0
        else if (state_[j] == VarState::kAtUpper)
          rate = -z[j];  // decreasing x_j improves when z > 0
        else
          continue;
        if (bland) {
          if (rate < -tol_) {
            enter = j;
            break;
          }
        } else if (rate < best - 1e-15) {
          best = rate;
          enter = j;
        }
      }
      if (enter == -1) return Status::kOptimal;

      const double dir = state_[enter] == VarState::kAtLower ? 1.0 : -1.0;
      double limit = upper_[enter];  // bound-flip distance (may be infinite)
      int leave_row = -1;
      bool leave_at_upper = false;
      const int m = static_cast<int>(basis_.size());
      for (int i = 0; i < m; ++i) {
        const double d = dir * a_[i][enter];
        double t;
        bool cand_upper;
        if (d > tol_) {  // basic value falls toward 0
          t = beta_[i] / d;
          cand_upper = false;
        } else if (d < -tol_ && upper_[basis_[i]] < kInf) {
          t = (upper_[basis_[i]] - beta_[i]) / (-d);  // rises toward its cap
          cand_upper = true;
        } else {
          continue;
        }
        if (t < 0.0) t = 0.0;  // degenerate round-off guard
        const bool strictly_less = t < limit - 1e-12;
        const bool tie = !strictly_less && t < limit + 1e-12 && leave_row >= 0;
        if (strictly_less || (tie && basis_[i] < basis_[leave_row])) {
          limit = std::min(limit, t);
          leave_row = i;
          leave_at_upper = cand_upper;
        }
      }
      if (limit == kInf) return Status::kUnbounded;
      if (limit < 1e-10) ++stall;
      else stall = 0;

      if (leave_row == -1) {
        // Pure bound flip: the entering variable crosses to its other bound.
        shift_point(enter, dir * limit);
        state_[enter] = state_[enter] == VarState::kAtLower
                            ? VarState::kAtUpper
                            : VarState::kAtLower;
        continue;
      }
      pivot(leave_row, enter, dir, limit, leave_at_upper);
    }
  }

  // Move nonbasic x_j by delta and track the induced basic-value changes.
  void shift_point(int j, double delta) {
    if (delta == 0.0) return;
    const int m = static_cast<int>(basis_.size());
    for (int i = 0; i < m; ++i) beta_[i] -= a_[i][j] * delta;
  }

  void pivot(int row, int enter, double dir, double step, bool leave_at_upper) {
    const int leave = basis_[row];
    const double enter_val =
        (state_[enter] == VarState::kAtUpper ? upper_[enter] : 0.0) +
        dir * step;
    shift_point(enter, dir * step);
    state_[leave] = leave_at_upper ? VarState::kAtUpper : VarState::kAtLower;
    basis_[row] = enter;
    state_[enter] = VarState::kBasic;

    const double inv = 1.0 / a_[row][enter];
    for (double& v : a_[row]) v *= inv;
    a_[row][enter] = 1.0;
    const int m = static_cast<int>(basis_.size());
    for (int i = 0; i < m; ++i) {
      if (i == row) continue;
      const double f = a_[i][enter];
      if (f == 0.0) continue;
      const auto& src = a_[row];
      auto& dst = a_[i];
      for (int j = 0; j < n_total_; ++j) dst[j] -= f * src[j];
      dst[enter] = 0.0;
    }
    // The point itself did not move during relabeling; the new basic variable
    // simply records its current value.
    beta_[row] = enter_val;
  }

  // After phase 1, swap still-basic artificials for real columns so phase 2
  // cannot move them; a row with no usable real column is redundant and keeps
  // its artificial pinned at zero.
  void expel_artificials() {
    const int m = static_cast<int>(basis_.size());
    for (int i = 0; i < m; ++i) {
      if (basis_[i] < art_begin_) continue;
      for (int j = 0; j < art_begin_; ++j) {
        if (state_[j] == VarState::kBasic) continue;
        if (std::abs(a_[i][j]) > 1e2 * tol_) {
          pivot(i, j, 1.0, 0.0, false);
          break;
        }
      }
    }
  }

  double tol_;
  int n_struct_;
  int n_total_ = 0;
  int art_begin_ = 0;
  int iters_ = 0;
  std::vector<std::vector<double>> a_;
  std::vector<double> beta_;
  std::vector<double> upper_;
  std::vector<VarState> state_;
  std::vector<int> basis_;
};

}  // namespace detail

inline Solution solve(const Problem& p, double tol = 1e-9) {
  detail::Tableau tab(p, tol);
  const int iter_cap = 400 + 60 * (p.n + static_cast<int>(p.rows.size()));
  return tab.optimize(p, iter_cap);
}

}  // namespace lp
}  // namespace cavplan
