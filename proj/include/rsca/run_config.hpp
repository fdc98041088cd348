#pragma once

// key=value run configuration files.

#include <fstream>
#include <string>

#include "rsca/config.hpp"
#include "rsca/optimizer.hpp"

namespace rsca {

struct RunSettings {
  Fraction scale{};
  std::size_t window = 4;
  std::size_t heads = 8;
  double lr = 1e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::size_t epochs = 100;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  bool augment = true;

  ModelConfig model_config() const {
    ModelConfig c;
    c.scale = scale;
    c.window = window;
    c.heads = heads;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::uint64_t parse_unsigned(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ValidationError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !(out >= 0.0)) {
    throw ValidationError("config: '" + key + "' expects a non-negative number, got '" + v + "'");
  }
  return out;
}

}  // namespace detail

/// Applies one key to settings; unknown keys are rejected by name.
inline void apply_setting(RunSettings& s, const std::string& key, const std::string& value) {
  if (key == "scale") s.scale = Fraction::parse(value);
  else if (key == "window") s.window = detail::parse_unsigned(key, value);
  else if (key == "heads") s.heads = detail::parse_unsigned(key, value);
  else if (key == "lr") s.lr = detail::parse_double(key, value);
  else if (key == "optimizer") s.optimizer = parse_optimizer(value);
  else if (key == "epochs") s.epochs = detail::parse_unsigned(key, value);
  else if (key == "batch") s.batch = detail::parse_unsigned(key, value);
  else if (key == "seed") s.seed = detail::parse_unsigned(key, value);
  else if (key == "augment") {
    if (value == "true" || value == "1") s.augment = true;
    else if (value == "false" || value == "0") s.augment = false;
    else throw ValidationError("config: 'augment' expects true/false, got '" + value + "'");
  } else {
    throw ValidationError("config: unknown key '" + key + "'");
  }
}

/// Lines are `key = value`; `#` starts a comment; blank lines are skipped.
inline void parse_settings(RunSettings& s, std::istream& in, const std::string& source = "config") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    try {
      apply_setting(s, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void load_settings(RunSettings& s, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file " + path);
  parse_settings(s, in, path);
}

}  // namespace rsca
