#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <random>

#include "cavplan/simplex.hpp"

using namespace cavplan;

namespace {

bool satisfies(const lp::Problem& p, const std::vector<double>& x,
               double tol = 1e-7) {
  for (int j = 0; j < p.n; ++j)
    if (x[j] < -tol || x[j] > p.upper[j] + tol) return false;
  for (const auto& r : p.rows) {
    double lhs = 0.0;
    for (const auto& [j, v] : r.terms) lhs += v * x[j];
    switch (r.type) {
      case lp::RowType::kLe:
        if (lhs > r.rhs + tol) return false;
        break;
      case lp::RowType::kGe:
        if (lhs < r.rhs - tol) return false;
        break;
      case lp::RowType::kEq:
        if (std::abs(lhs - r.rhs) > tol) return false;
        break;
    }
  }
  return true;
}

// Exhaustive vertex oracle for 2-variable problems: intersect every pair of
// tight constraints (rows and bounds), keep feasible points, take the best.
double two_var_oracle(const lp::Problem& p, bool& feasible) {
  struct Line {
    double a, b, c;  // a*x + b*y = c
  };
  std::vector<Line> lines;
  for (const auto& r : p.rows) {
    double a = 0.0, b = 0.0;
    for (const auto& [j, v] : r.terms) (j == 0 ? a : b) += v;
    lines.push_back({a, b, r.rhs});
  }
  lines.push_back({1.0, 0.0, 0.0});
  lines.push_back({0.0, 1.0, 0.0});
  if (p.upper[0] < lp::kInf) lines.push_back({1.0, 0.0, p.upper[0]});
  if (p.upper[1] < lp::kInf) lines.push_back({0.0, 1.0, p.upper[1]});

  feasible = false;
  double best = lp::kInf;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      const double det = lines[i].a * lines[j].b - lines[j].a * lines[i].b;
      if (std::abs(det) < 1e-10) continue;
      const double x = (lines[i].c * lines[j].b - lines[j].c * lines[i].b) / det;
      const double y = (lines[i].a * lines[j].c - lines[j].a * lines[i].c) / det;
      if (!satisfies(p, {x, y}, 1e-6)) continue;
      feasible = true;
      best = std::min(best, p.c[0] * x + p.c[1] * y);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("simple bounded maximization") {
  lp::Problem p;
  p.add_var(-1.0, 1.0);
  p.add_var(-1.0, 1.0);
  p.rows.push_back({lp::RowType::kLe, {{0, 1.0}, {1, 1.0}}, 1.5});
  const auto s = lp::solve(p);
  REQUIRE(s.status == lp::Status::kOptimal);
  CHECK(s.objective == doctest::Approx(-1.5));
  CHECK(satisfies(p, s.x));
}

TEST_CASE("upper bound reached by pure flip") {
  lp::Problem p;
  p.add_var(-2.0, 3.0);
  p.rows.push_back({lp::RowType::kLe, {{0, 1.0}}, 100.0});
  const auto s = lp::solve(p);
  REQUIRE(s.status == lp::Status::kOptimal);
  CHECK(s.x[0] == doctest::Approx(3.0));
  CHECK(s.objective == doctest::Approx(-6.0));
}

TEST_CASE("equality rows") {
  lp::Problem p;
  p.add_var(1.0, lp::kInf);
  p.add_var(2.0, lp::kInf);
  p.rows.push_back({lp::RowType::kEq, {{0, 1.0}, {1, 1.0}}, 4.0});
  p.rows.push_back({lp::RowType::kGe, {{1, 1.0}}, 1.0});
  const auto s = lp::solve(p);
  REQUIRE(s.status == lp::Status::kOptimal);
  CHECK(s.x[0] == doctest::Approx(3.0));
  CHECK(s.x[1] == doctest::Approx(1.0));
  CHECK(s.objective == doctest::Approx(5.0));
}

TEST_CASE("infeasible system detected") {
  lp::Problem p;
  p.add_var(0.0, lp::kInf);
  p.rows.push_back({lp::RowType::kGe, {{0, 1.0}}, 2.0});
  p.rows.push_back({lp::RowType::kLe, {{0, 1.0}}, 1.0});
  CHECK(lp::solve(p).status == lp::Status::kInfeasible);
}

TEST_CASE("infeasible within bounds detected") {
  lp::Problem p;
  p.add_var(0.0, 1.0);
  p.add_var(0.0, 1.0);
  p.rows.push_back({lp::RowType::kGe, {{0, 1.0}, {1, 1.0}}, 3.0});
  CHECK(lp::solve(p).status == lp::Status::kInfeasible);
}

TEST_CASE("unbounded ray detected") {
  lp::Problem p;
  p.add_var(-1.0, lp::kInf);
  p.rows.push_back({lp::RowType::kGe, {{0, 1.0}}, 0.0});
  CHECK(lp::solve(p).status == lp::Status::kUnbounded);
}

TEST_CASE("degenerate overlapping rows still solve") {
  lp::Problem p;
  p.add_var(-1.0, 10.0);
  p.add_var(-1.0, 10.0);
  for (int k = 0; k < 6; ++k)
    p.rows.push_back({lp::RowType::kLe, {{0, 1.0}, {1, 1.0}}, 4.0});
  p.rows.push_back({lp::RowType::kLe, {{0, 1.0}}, 2.0});
  p.rows.push_back({lp::RowType::kGe, {{0, 1.0}}, 2.0});
  const auto s = lp::solve(p);
  REQUIRE(s.status == lp::Status::kOptimal);
  CHECK(s.objective == doctest::Approx(-4.0));
  CHECK(s.x[0] == doctest::Approx(2.0));
}

TEST_CASE("negative rhs rows normalize correctly") {
  lp::Problem p;
  p.add_var(1.0, lp::kInf);
  p.add_var(1.0, lp::kInf);
  // x - y <= -2  =>  y >= x + 2
  p.rows.push_back({lp::RowType::kLe, {{0, 1.0}, {1, -1.0}}, -2.0});
  const auto s = lp::solve(p);
  REQUIRE(s.status == lp::Status::kOptimal);
  CHECK(s.objective == doctest::Approx(2.0));
  CHECK(s.x[1] == doctest::Approx(2.0));
}

TEST_CASE("randomized two-variable problems match the vertex oracle") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> coef(-3.0, 3.0);
  std::uniform_real_distribution<double> rhs(-2.0, 6.0);
  std::uniform_real_distribution<double> ub(0.5, 8.0);
  int feasible_seen = 0, infeasible_seen = 0;
  for (int trial = 0; trial < 400; ++trial) {
    CAPTURE(trial);
    lp::Problem p;
    p.add_var(coef(rng), ub(rng));
    p.add_var(coef(rng), ub(rng));
    const int row_count = 1 + static_cast<int>(rng() % 5);
    for (int r = 0; r < row_count; ++r) {
      lp::Row row;
      row.type = (rng() % 3 == 0)   ? lp::RowType::kGe
                 : (rng() % 2 == 0) ? lp::RowType::kLe
                                    : lp::RowType::kEq;
      // Keep equalities rare and solvable.
      if (row.type == lp::RowType::kEq && rng() % 2) row.type = lp::RowType::kLe;
      row.terms = {{0, coef(rng)}, {1, coef(rng)}};
      row.rhs = rhs(rng);
      p.rows.push_back(row);
    }
    bool oracle_feasible = false;
    const double oracle_best = two_var_oracle(p, oracle_feasible);
    const auto s = lp::solve(p);
    if (oracle_feasible) {
      ++feasible_seen;
      REQUIRE(s.status == lp::Status::kOptimal);
      CHECK(satisfies(p, s.x));
      CHECK(s.objective == doctest::Approx(oracle_best).epsilon(1e-6));
    } else {
      ++infeasible_seen;
      CHECK(s.status == lp::Status::kInfeasible);
    }
  }
  // The generator must exercise both outcomes for the check to mean much.
  CHECK(feasible_seen > 50);
  CHECK(infeasible_seen > 20);
}

TEST_CASE("randomized feasible problems of moderate size") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> coef(-2.0, 2.0);
  std::uniform_real_distribution<double> point(0.0, 2.0);
  for (int trial = 0; trial < 120; ++trial) {
    CAPTURE(trial);
    lp::Problem p;
    const int n = 3 + static_cast<int>(rng() % 18);
    std::vector<double> x_star;
    for (int j = 0; j < n; ++j) {
      p.add_var(coef(rng), 2.0 + point(rng));
      x_star.push_back(point(rng));
    }
    const int m = 2 + static_cast<int>(rng() % 25);
    for (int i = 0; i < m; ++i) {
      lp::Row row;
      double lhs = 0.0;
      const int nz = 1 + static_cast<int>(rng() % 4);
      for (int k = 0; k < nz; ++k) {
        const int j = static_cast<int>(rng() % n);
        const double v = coef(rng);
        row.terms.push_back({j, v});
        lhs += v * x_star[static_cast<std::size_t>(j)];
      }
      // Built through a known interior point, so the system stays feasible.
      if (rng() % 2) {
        row.type = lp::RowType::kLe;
        row.rhs = lhs + 0.25;
      } else {
        row.type = lp::RowType::kGe;
        row.rhs = lhs - 0.25;
      }
      p.rows.push_back(row);
    }
    const auto s = lp::solve(p);
    REQUIRE(s.status == lp::Status::kOptimal);
    CHECK(satisfies(p, s.x));
    double at_star = 0.0;
    for (int j = 0; j < n; ++j) at_star += p.c[j] * x_star[j];
    CHECK(s.objective <= at_star + 1e-7);
  }
}
