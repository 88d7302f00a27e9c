#pragma once

// Experiment configuration: a small TOML subset (comments, [section]
// headers, key = number | "string" | true/false | [n, n, ...]) with a fixed
// key schema, plus byte-stable JSON and CSV emission.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "gibbspath/error.hpp"
#include "gibbspath/interactions.hpp"

namespace gibbspath {

using ConfigValue = std::variant<double, std::string, bool, std::vector<double>>;

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Allowed keys (section.key, or key at top level) and their kinds.
enum class KeyKind { Number, String, Bool, Array };

inline const std::map<std::string, KeyKind>& config_schema() {
  static const std::map<std::string, KeyKind> s = [] {
    std::map<std::string, KeyKind> m;
    auto num = [&](std::initializer_list<const char*> keys) {
      for (auto k : keys) m[k] = KeyKind::Number;
    };
    m["subcommand"] = KeyKind::String;
    m["kernel"] = KeyKind::String;
    m["kind"] = KeyKind::String;
    m["out"] = KeyKind::String;
    num({"seed", "threads"});
    // kernel parameters, accepted at top level or under [kernel]
    for (const char* k : {"beta", "theta", "omega0", "eta", "amplitude", "v_amplitude", "half_width", "p", "kappa",
                          "psi_half_width", "phi_radius", "d"}) {
      m[k] = KeyKind::Number;
      m[std::string("kernel.") + k] = KeyKind::Number;
    }
    m["kernel.preset"] = KeyKind::String;
    num({"grid.T", "grid.dt"});
    num({"mcmc.block_length", "mcmc.proposals_per_sweep", "mcmc.free_fraction", "mcmc.sweeps", "mcmc.burn_in",
         "mcmc.thin", "mcmc.chains", "mcmc.min_effective_samples"});
    m["mcmc.start_from_prior"] = KeyKind::Bool;
    for (const char* k : {"sweep.beta", "sweep.eps", "sweep.L", "sweep.T", "sweep.N"}) m[k] = KeyKind::Array;
    num({"transfer.L", "transfer.N", "transfer.particles", "transfer.replicates", "transfer.min_ess_fraction"});
    m["transfer.mode"] = KeyKind::String;
    m["transfer.stratify"] = KeyKind::Bool;
    m["transfer.free_energy_n"] = KeyKind::Array;
    num({"she.t", "she.dt", "she.width", "she.cap", "she.importance_samples", "she.beta_nodes", "she.gh_nodes"});
    m["she.x"] = KeyKind::Array;
    m["she.k"] = KeyKind::Array;
    m["she.u0"] = KeyKind::String;
    m["she.route"] = KeyKind::String;
    m["she.partition"] = KeyKind::Bool;
    num({"verify.a", "verify.n", "verify.c", "verify.q", "verify.x1", "verify.x2", "verify.kappa", "verify.eps",
         "verify.delta", "verify.alpha", "verify.radius", "verify.paths", "verify.pairs", "verify.m_points",
         "verify.nodes", "verify.dt", "verify.ratio_cap", "verify.L", "verify.N", "verify.bins", "verify.smoothing",
         "verify.bound_constant"});
    m["verify.h"] = KeyKind::Array;
    return m;
  }();
  return s;
}

/// Parsed key/value table with typed access.
class Config {
 public:
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, ConfigValue>& values() const { return values_; }

  void set(const std::string& key, ConfigValue v) {
    const auto& schema = config_schema();
    auto it = schema.find(key);
    if (it == schema.end()) throw ConfigError("unknown key '" + key + "'");
    check_kind(key, it->second, v);
    values_[key] = std::move(v);
  }

  double number(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::get<double>(it->second);
  }
  double number(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required key '" + key + "'");
    return std::get<double>(it->second);
  }
  std::string string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::get<std::string>(it->second);
  }
  bool boolean(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::get<bool>(it->second);
  }
  std::vector<double> array(const std::string& key, std::vector<double> fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::get<std::vector<double>>(it->second);
  }
  std::size_t count(const std::string& key, std::size_t fallback) const {
    const double v = number(key, static_cast<double>(fallback));
    if (v < 0 || v != std::floor(v)) throw ConfigError("key '" + key + "' must be a nonnegative integer");
    return static_cast<std::size_t>(v);
  }

  /// Kernel preset parameters: top-level keys overridden by [kernel].
  ParamMap kernel_params() const {
    ParamMap p;
    for (const auto& [k, v] : values_) {
      if (!std::holds_alternative<double>(v)) continue;
      if (k.rfind("kernel.", 0) == 0) continue;
      if (config_schema().count("kernel." + k)) p[k] = std::get<double>(v);
    }
    for (const auto& [k, v] : values_)
      if (k.rfind("kernel.", 0) == 0 && std::holds_alternative<double>(v)) p[k.substr(7)] = std::get<double>(v);
    return p;
  }

  std::string kernel_name() const {
    for (const char* k : {"kernel.preset", "kernel", "kind"})
      if (has(k)) return std::get<std::string>(values_.at(k));
    throw ConfigError("missing required key 'kernel'");
  }

  /// Builds the preset; admissibility failures surface as RejectedParameters.
  InteractionKernel make_kernel() const {
    const std::string name = kernel_name();
    if (!is_preset_name(name)) throw ConfigError("unknown kernel preset '" + name + "'");
    return make_preset(name, kernel_params());
  }

 private:
  static void check_kind(const std::string& key, KeyKind kind, const ConfigValue& v) {
    const bool ok = (kind == KeyKind::Number && std::holds_alternative<double>(v)) ||
                    (kind == KeyKind::String && std::holds_alternative<std::string>(v)) ||
                    (kind == KeyKind::Bool && std::holds_alternative<bool>(v)) ||
                    (kind == KeyKind::Array && std::holds_alternative<std::vector<double>>(v));
    if (!ok) throw ConfigError("key '" + key + "' has the wrong type");
  }
  std::map<std::string, ConfigValue> values_;
};

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& s) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("not a number: '" + s + "'");
  }
  if (pos != s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

inline std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

inline ConfigValue parse_value(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.empty()) throw ConfigError("missing value");
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw ConfigError("unterminated string");
    return s.substr(1, s.size() - 2);
  }
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.front() == '[') {
    if (s.back() != ']') throw ConfigError("unterminated array");
    std::vector<double> out;
    std::stringstream ss(s.substr(1, s.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      out.push_back(parse_number(item));
    }
    return out;
  }
  return parse_number(s);
}
}  // namespace detail

/// Parses config text; errors carry the line number and key.
inline Config parse_config(const std::string& text) {
  Config cfg;
  std::stringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = detail::trim(detail::strip_comment(line));
    if (s.empty()) continue;
    try {
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError("malformed section header");
        section = detail::trim(s.substr(1, s.size() - 2));
        static const std::vector<std::string> known{"kernel", "grid", "mcmc", "sweep", "transfer", "she", "verify"};
        if (std::find(known.begin(), known.end(), section) == known.end())
          throw ConfigError("unknown section '" + section + "'");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("expected key = value");
      const std::string key = detail::trim(s.substr(0, eq));
      if (key.empty()) throw ConfigError("empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.has(full)) throw ConfigError("duplicate key '" + full + "'");
      cfg.set(full, detail::parse_value(s.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  // validate the kernel early so inadmissible parameters surface at parse time
  if (cfg.has("kernel") || cfg.has("kind") || cfg.has("kernel.preset")) cfg.make_kernel();
  return cfg;
}

inline Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

/// Rounds to 12 significant digits so emitted files do not depend on the
/// last bits of a computation.
inline double round12(double v) {
  if (!std::isfinite(v)) return v;
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return std::strtod(buf, nullptr);
}

inline std::string format12(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Recursively rounds every float in a JSON document; non-finite numbers
/// become strings ("nan", "inf", "-inf") since JSON has no literal for them.
inline nlohmann::json rounded(const nlohmann::json& j) {
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return round12(v);
  }
  if (j.is_object()) {
    nlohmann::json o = nlohmann::json::object();
    for (auto it = j.begin(); it != j.end(); ++it) o[it.key()] = rounded(it.value());
    return o;
  }
  if (j.is_array()) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : j) a.push_back(rounded(x));
    return a;
  }
  return j;
}

/// Sorted keys (nlohmann objects are ordered maps), 2-space indent, floats at 12 digits.
inline std::string emit_json(const nlohmann::json& j) { return rounded(j).dump(2) + "\n"; }

inline nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : c.values())
    std::visit([&](const auto& x) { j[k] = x; }, v);
  return j;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {
    for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << columns_[i];
    out_ << "\n";
  }
  void row(const std::vector<double>& values) {
    if (values.size() != columns_.size())
      throw InvalidArgument("CsvWriter: row has " + std::to_string(values.size()) + " values, schema has " +
                            std::to_string(columns_.size()));
    for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format12(values[i]);
    out_ << "\n";
  }
  std::string str() const { return out_.str(); }
  std::size_t columns() const { return columns_.size(); }

 private:
  std::vector<std::string> columns_;
  std::ostringstream out_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path + "'");
  f << text;
  if (!f) throw Error("write failed for '" + path + "'");
}

}  // namespace gibbspath
