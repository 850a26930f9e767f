#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cavplan/config_io.hpp"
#include "cavplan/experiment.hpp"
#include "json.hpp"

using namespace cavplan;
namespace fs = std::filesystem;

namespace {

void print_group_row(const char* tag, const char* cls, const GroupMetrics& g,
                     double throughput) {
  std::printf("%-10s %-4s %6lld %10.2f %12.3f %10.2f %8.2f %12.1f\n", tag,
              cls, static_cast<long long>(g.count), g.delay_mean,
              g.fuel_economy_mean, g.smooth_mean, g.changes_mean, throughput);
}

int run_command(const ExperimentSpec& spec) {
  const ExperimentResult res = run_experiment(spec);
  std::printf("%-10s %-4s %6s %10s %12s %10s %8s %12s\n", "run", "cls", "n",
              "delay_s", "fuel_econ", "smooth", "changes", "veh_per_h");
  for (const SeedRun& s : res.seeds) {
    const std::string tag = "seed " + std::to_string(s.seed);
    for (int ci : {kClassCav, kClassChv, kClassAll})
      print_group_row(tag.c_str(), class_label(ci),
                      s.metrics.group(ci, kMoveAll), s.metrics.throughput_vph);
  }
  for (int ci : {kClassCav, kClassChv, kClassAll})
    print_group_row("aggregate", class_label(ci),
                    res.aggregate.group(ci, kMoveAll),
                    res.aggregate.throughput_vph);
  if (!spec.benchmark) {
    const PlanSummary& p = res.aggregate.plans;
    std::printf("plans: %lld calls, %lld adopted, %lld fallbacks, "
                "wall mean %.4f ms, max %.2f ms\n",
                static_cast<long long>(p.calls),
                static_cast<long long>(p.adopted),
                static_cast<long long>(p.fallbacks), p.wall_mean * 1e3,
                p.wall_max * 1e3);
  }
  if (!spec.out_dir.empty())
    std::printf("artifacts written to %s\n", spec.out_dir.c_str());
  return 0;
}

void summary_rows(std::ostream& os, const std::string& label,
                  const std::string& seed, const nlohmann::json& m) {
  for (const char* cls : {"cav", "chv", "all"}) {
    for (const char* mv : {"left", "through", "right", "all"}) {
      const auto& g = m.at("groups").at(cls).at(mv);
      os << label << ',' << seed << ',' << cls << ',' << mv << ','
         << g.at("count") << ',' << g.at("delay_s") << ',' << g.at("fuel")
         << ',' << g.at("fuel_economy_km") << ',' << g.at("smoothness") << ','
         << g.at("lane_changes") << ',' << m.at("throughput_vph") << "\n";
    }
  }
}

void plan_row(std::ostream& os, const std::string& label,
              const std::string& seed, const nlohmann::json& m) {
  const auto& p = m.at("plans");
  os << label << ',' << seed << ',' << p.at("calls") << ','
     << p.at("adopted") << ',' << p.at("fallbacks") << ','
     << p.at("wall_mean_s") << ',' << p.at("wall_max_s") << ','
     << p.at("paths_mean") << ',' << p.at("strategies_mean") << "\n";
}

int plot_command(const std::vector<std::string>& in_dirs,
                 const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream summary(fs::path(out_dir) / "fig_summary.csv");
  summary << "label,seed,class,movement,count,delay_s,fuel,fuel_economy_km,"
             "smoothness,lane_changes,throughput_vph\n";
  std::ofstream plans(fs::path(out_dir) / "fig_plan_times.csv");
  plans << "label,seed,calls,adopted,fallbacks,wall_mean_s,wall_max_s,"
           "paths_mean,strategies_mean\n";

  constexpr double kBin = 20.0;
  // (label, bin) -> (sample count, speed sum) pooled over seeds
  std::map<std::pair<std::string, int>, std::pair<long long, double>> profile;

  int runs = 0;
  for (const std::string& dir : in_dirs) {
    if (!fs::is_directory(dir))
      throw ConfigError("not a run directory: " + dir);
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.size() < 13 ||
          name.compare(name.size() - 13, 13, "_metrics.json") != 0)
        continue;
      ++runs;
      std::ifstream is(entry.path());
      const auto doc = nlohmann::json::parse(is);
      const std::string label = doc.at("label").get<std::string>();
      summary_rows(summary, label, "aggregate", doc.at("aggregate"));
      plan_row(plans, label, "aggregate", doc.at("aggregate"));
      for (const auto& s : doc.at("seeds")) {
        const std::string seed = std::to_string(s.at("seed").get<long long>());
        summary_rows(summary, label, seed, s.at("metrics"));
        plan_row(plans, label, seed, s.at("metrics"));
      }
      // Pool the speed samples of this label's trajectory files.
      for (const auto& traj : fs::directory_iterator(dir)) {
        const std::string tn = traj.path().filename().string();
        if (tn.rfind(label + "_seed", 0) != 0 ||
            tn.size() < 17 ||
            tn.compare(tn.size() - 17, 17, "_trajectories.csv") != 0)
          continue;
        std::ifstream ts(traj.path());
        std::string line;
        std::getline(ts, line);  // header
        while (std::getline(ts, line)) {
          std::stringstream ss(line);
          std::string field;
          double pos = 0.0, speed = 0.0;
          for (int col = 0; std::getline(ss, field, ','); ++col) {
            if (col == 6) pos = std::stod(field);
            if (col == 7) speed = std::stod(field);
          }
          auto& cell = profile[{label, static_cast<int>(pos / kBin)}];
          ++cell.first;
          cell.second += speed;
        }
      }
    }
  }
  if (runs == 0) throw ConfigError("no metrics files found");

  std::ofstream prof(fs::path(out_dir) / "fig_speed_profile.csv");
  prof << "label,bin_start_m,samples,mean_speed_mps\n";
  for (const auto& [key, cell] : profile)
    prof << key.first << ',' << key.second * kBin << ',' << cell.first << ','
         << cell.second / static_cast<double>(cell.first) << "\n";
  std::printf("wrote figure data for %d runs to %s\n", runs, out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Signalized-approach traffic simulator with connected-vehicle "
               "trajectory planning"};
  app.require_subcommand(1);

  std::string scenario;
  std::string out_dir = "out";
  int demand = 2;
  double penetration = 0.0;
  int seed = 0;
  int seeds_n = 5;
  double duration = 1800.0;
  double warmup = 150.0;
  int threads = 1;
  double time_limit = 0.0;
  bool benchmark = false;

  CLI::App* run = app.add_subcommand(
      "run", "Simulate the approach and write trajectories and metrics");
  run->add_option("--scenario", scenario, "Scenario configuration (INI)");
  run->add_option("--demand-level", demand, "Demand level 1..5")
      ->check(CLI::Range(1, 5));
  run->add_option("--penetration", penetration,
                  "Connected-vehicle share in [0, 1]");
  CLI::Option* seed_opt =
      run->add_option("--seed", seed, "Run a single seed");
  CLI::Option* seeds_opt =
      run->add_option("--seeds", seeds_n, "Run seeds 1..N (default 5)");
  seed_opt->excludes(seeds_opt);
  run->add_option("--duration", duration, "Simulated seconds");
  run->add_option("--warmup", warmup,
                  "Warm-up seconds excluded from the metrics");
  run->add_option("--threads", threads, "Search workers per plan");
  run->add_option("--time-limit", time_limit,
                  "Per-plan search budget in seconds (0 = exhaust the tree)");
  run->add_flag("--benchmark", benchmark,
                "Everyone drives as a human; no planning");
  run->add_option("--out", out_dir, "Output directory");

  std::vector<std::string> in_dirs;
  std::string plot_out = "plots";
  CLI::App* plot = app.add_subcommand(
      "plot-data", "Reshape run outputs into per-figure CSV files");
  plot->add_option("--in", in_dirs, "Run output directories")->required();
  plot->add_option("--out", plot_out, "Directory for the figure CSVs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      ExperimentSpec spec;
      spec.cfg = scenario.empty() ? Config{} : load_config(scenario);
      spec.demand = demand_level(demand, penetration);
      if (seed_opt->count() > 0)
        spec.seeds = {static_cast<unsigned>(seed)};
      else {
        spec.seeds.clear();
        for (int s = 1; s <= seeds_n; ++s)
          spec.seeds.push_back(static_cast<unsigned>(s));
      }
      spec.budget.workers = threads;
      spec.budget.wall_time_s = time_limit > 0.0
                                    ? time_limit
                                    : std::numeric_limits<double>::infinity();
      spec.benchmark = benchmark;
      spec.duration_s = duration;
      spec.warmup_s = warmup;
      spec.out_dir = out_dir;
      spec.label = benchmark ? "benchmark" : "planned";
      return run_command(spec);
    }
    return plot_command(in_dirs, plot_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SimError& e) {
    std::cerr << "simulation error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
