#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "cavplan/core.hpp"

// Scenario files: INI-style sections whose keys mirror the Config field
// names. Unknown sections or keys are hard errors so a typo cannot silently
// fall back to a default.

namespace cavplan {
namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("invalid number for key '" + key + "': " + v);
  }
}

inline int parse_int(const std::string& key, const std::string& v) {
  const double x = parse_double(key, v);
  const int i = static_cast<int>(std::lround(x));
  if (std::abs(x - i) > 1e-9)
    throw ConfigError("key '" + key + "' expects an integer, got " + v);
  return i;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "' expects true/false, got " + v);
}

inline Movement parse_movement(const std::string& key, const std::string& v) {
  if (v == "left") return Movement::kLeft;
  if (v == "through") return Movement::kThrough;
  if (v == "right") return Movement::kRight;
  throw ConfigError("key '" + key + "' has unknown movement '" + v + "'");
}

// "left|through,right|..." -> one movement list per lane.
inline std::vector<std::vector<Movement>> parse_dedicated(
    const std::string& key, const std::string& v) {
  std::vector<std::vector<Movement>> lanes;
  std::stringstream lane_stream(v);
  std::string lane_part;
  while (std::getline(lane_stream, lane_part, '|')) {
    std::vector<Movement> ms;
    std::stringstream move_stream(trim(lane_part));
    std::string move_part;
    while (std::getline(move_stream, move_part, ','))
      ms.push_back(parse_movement(key, trim(move_part)));
    if (ms.empty()) throw ConfigError("key '" + key + "' has an empty lane");
    lanes.push_back(std::move(ms));
  }
  if (lanes.empty()) throw ConfigError("key '" + key + "' lists no lanes");
  return lanes;
}

}  // namespace detail

inline Config parse_config(std::istream& in, const std::string& origin) {
  Config cfg;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, std::map<std::string, Setter>> schema = {
      {"geometry",
       {
           {"lane_count", [&](const std::string& k, const std::string& v) {
              cfg.geometry.lane_count = detail::parse_int(k, v); }},
           {"dedicated", [&](const std::string& k, const std::string& v) {
              cfg.geometry.dedicated = detail::parse_dedicated(k, v); }},
           {"control_len", [&](const std::string& k, const std::string& v) {
              cfg.geometry.control_len = detail::parse_double(k, v); }},
           {"nochange_len", [&](const std::string& k, const std::string& v) {
              cfg.geometry.nochange_len = detail::parse_double(k, v); }},
           {"conflict_len", [&](const std::string& k, const std::string& v) {
              cfg.geometry.conflict_len = detail::parse_double(k, v); }},
           {"exit_len", [&](const std::string& k, const std::string& v) {
              cfg.geometry.exit_len = detail::parse_double(k, v); }},
       }},
      {"signal",
       {
           {"cycle", [&](const std::string& k, const std::string& v) {
              cfg.signal.cycle = detail::parse_double(k, v); }},
           {"green_start", [&](const std::string& k, const std::string& v) {
              cfg.signal.green_start = detail::parse_double(k, v); }},
           {"green_end", [&](const std::string& k, const std::string& v) {
              cfg.signal.green_end = detail::parse_double(k, v); }},
           {"yellow", [&](const std::string& k, const std::string& v) {
              cfg.signal.yellow = detail::parse_double(k, v); }},
           {"cav_yellow_window", [&](const std::string& k, const std::string& v) {
              cfg.signal.cav_yellow_window = detail::parse_double(k, v); }},
           {"right_turn_uncontrolled", [&](const std::string& k, const std::string& v) {
              cfg.signal.right_turn_uncontrolled = detail::parse_bool(k, v); }},
       }},
      {"dynamics",
       {
           {"dt", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.dt = detail::parse_double(k, v); }},
           {"speed_limit", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.speed_limit = detail::parse_double(k, v); }},
           {"conflict_speed_limit", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.conflict_speed_limit = detail::parse_double(k, v); }},
           {"accel_max", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.accel_max = detail::parse_double(k, v); }},
           {"decel_max", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.decel_max = detail::parse_double(k, v); }},
           {"tau_cf", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.tau_cf = detail::parse_double(k, v); }},
           {"d_cf", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.d_cf = detail::parse_double(k, v); }},
           {"tau_lc", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.tau_lc = detail::parse_double(k, v); }},
           {"d_p", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.d_p = detail::parse_double(k, v); }},
           {"d_f", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.d_f = detail::parse_double(k, v); }},
           {"vehicle_len", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.vehicle_len = detail::parse_double(k, v); }},
           {"yield_decel", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.yield_decel = detail::parse_double(k, v); }},
           {"lc_gain_threshold", [&](const std::string& k, const std::string& v) {
              cfg.dynamics.lc_gain_threshold = detail::parse_double(k, v); }},
       }},
      {"weights",
       {
           {"alpha1", [&](const std::string& k, const std::string& v) {
              cfg.weights.alpha1 = detail::parse_double(k, v); }},
           {"alpha2", [&](const std::string& k, const std::string& v) {
              cfg.weights.alpha2 = detail::parse_double(k, v); }},
           {"alpha3", [&](const std::string& k, const std::string& v) {
              cfg.weights.alpha3 = detail::parse_double(k, v); }},
           {"beta0", [&](const std::string& k, const std::string& v) {
              cfg.weights.beta0 = detail::parse_double(k, v); }},
           {"beta1", [&](const std::string& k, const std::string& v) {
              cfg.weights.beta1 = detail::parse_double(k, v); }},
           {"beta2", [&](const std::string& k, const std::string& v) {
              cfg.weights.beta2 = detail::parse_double(k, v); }},
       }},
      {"search",
       {
           {"big_m", [&](const std::string& k, const std::string& v) {
              cfg.search.big_m = detail::parse_double(k, v); }},
           {"epsilon", [&](const std::string& k, const std::string& v) {
              cfg.search.epsilon = detail::parse_double(k, v); }},
           {"tau_h", [&](const std::string& k, const std::string& v) {
              cfg.search.tau_h = detail::parse_double(k, v); }},
           {"c1", [&](const std::string& k, const std::string& v) {
              cfg.search.c1 = detail::parse_double(k, v); }},
           {"c2", [&](const std::string& k, const std::string& v) {
              cfg.search.c2 = detail::parse_double(k, v); }},
           {"lp_tol", [&](const std::string& k, const std::string& v) {
              cfg.search.lp_tol = detail::parse_double(k, v); }},
           {"node_cap", [&](const std::string& k, const std::string& v) {
              cfg.search.node_cap = detail::parse_int(k, v); }},
           {"prediction_cycle_cap", [&](const std::string& k, const std::string& v) {
              cfg.search.prediction_cycle_cap = detail::parse_int(k, v); }},
           {"opt_horizon_cap", [&](const std::string& k, const std::string& v) {
              cfg.search.opt_horizon_cap = detail::parse_int(k, v); }},
       }},
  };

  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where =
        origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(where + ": malformed section header '" + line + "'");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (schema.find(section) == schema.end())
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ": expected key = value, got '" + line + "'");
    if (section.empty())
      throw ConfigError(where + ": key before any section");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto& keys = schema.at(section);
    const auto it = keys.find(key);
    if (it == keys.end())
      throw ConfigError(where + ": unknown key '" + key + "' in [" + section +
                        "]");
    it->second(key, value);
  }
  cfg.validate();
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  return parse_config(in, path);
}

inline std::string config_to_ini(const Config& cfg) {
  std::ostringstream out;
  out << "[geometry]\n";
  out << "lane_count = " << cfg.geometry.lane_count << "\n";
  out << "dedicated = ";
  for (std::size_t k = 0; k < cfg.geometry.dedicated.size(); ++k) {
    if (k) out << " | ";
    const auto& ms = cfg.geometry.dedicated[k];
    for (std::size_t j = 0; j < ms.size(); ++j) {
      if (j) out << ", ";
      out << to_string(ms[j]);
    }
  }
  out << "\n";
  out << "control_len = " << cfg.geometry.control_len << "\n";
  out << "nochange_len = " << cfg.geometry.nochange_len << "\n";
  out << "conflict_len = " << cfg.geometry.conflict_len << "\n";
  out << "exit_len = " << cfg.geometry.exit_len << "\n";
  out << "\n[signal]\n";
  out << "cycle = " << cfg.signal.cycle << "\n";
  out << "green_start = " << cfg.signal.green_start << "\n";
  out << "green_end = " << cfg.signal.green_end << "\n";
  out << "yellow = " << cfg.signal.yellow << "\n";
  out << "cav_yellow_window = " << cfg.signal.cav_yellow_window << "\n";
  out << "right_turn_uncontrolled = "
      << (cfg.signal.right_turn_uncontrolled ? "true" : "false") << "\n";
  out << "\n[dynamics]\n";
  out << "dt = " << cfg.dynamics.dt << "\n";
  out << "speed_limit = " << cfg.dynamics.speed_limit << "\n";
  out << "conflict_speed_limit = " << cfg.dynamics.conflict_speed_limit << "\n";
  out << "accel_max = " << cfg.dynamics.accel_max << "\n";
  out << "decel_max = " << cfg.dynamics.decel_max << "\n";
  out << "tau_cf = " << cfg.dynamics.tau_cf << "\n";
  out << "d_cf = " << cfg.dynamics.d_cf << "\n";
  out << "tau_lc = " << cfg.dynamics.tau_lc << "\n";
  out << "d_p = " << cfg.dynamics.d_p << "\n";
  out << "d_f = " << cfg.dynamics.d_f << "\n";
  out << "vehicle_len = " << cfg.dynamics.vehicle_len << "\n";
  out << "yield_decel = " << cfg.dynamics.yield_decel << "\n";
  out << "lc_gain_threshold = " << cfg.dynamics.lc_gain_threshold << "\n";
  out << "\n[weights]\n";
  out << "alpha1 = " << cfg.weights.alpha1 << "\n";
  out << "alpha2 = " << cfg.weights.alpha2 << "\n";
  out << "alpha3 = " << cfg.weights.alpha3 << "\n";
  out << "beta0 = " << cfg.weights.beta0 << "\n";
  out << "beta1 = " << cfg.weights.beta1 << "\n";
  out << "beta2 = " << cfg.weights.beta2 << "\n";
  out << "\n[search]\n";
  out << "big_m = " << cfg.search.big_m << "\n";
  out << "epsilon = " << cfg.search.epsilon << "\n";
  out << "tau_h = " << cfg.search.tau_h << "\n";
  out << "c1 = " << cfg.search.c1 << "\n";
  out << "c2 = " << cfg.search.c2 << "\n";
  out << "lp_tol = " << cfg.search.lp_tol << "\n";
  out << "node_cap = " << cfg.search.node_cap << "\n";
  out << "prediction_cycle_cap = " << cfg.search.prediction_cycle_cap << "\n";
  out << "opt_horizon_cap = " << cfg.search.opt_horizon_cap << "\n";
  return out.str();
}

}  // namespace cavplan
