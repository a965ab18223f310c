#pragma once

// Scenario configuration: a TOML-syntax file with top-level `scenario` and
// `seed` keys and the sections [link], [protocol], [memory], [sim] and
// [diqkd]. Key names match the C++ field names. Unknown keys are errors and
// every module invariant is re-checked on load.
//
// Only the TOML subset the configs need is accepted: tables, `key = value`
// pairs, basic strings, integers, floats, booleans, flat numeric arrays and
// `#` comments.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include "ionlink/diqkd.hpp"
#include "ionlink/herald.hpp"
#include "ionlink/linkmodel.hpp"
#include "ionlink/memory.hpp"
#include "ionlink/netsim.hpp"

namespace ionlink {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimConfig {
  double two_pair_alpha = 0.17;
  std::uint64_t n_trials = 100'000;
  double dead_time_s = 0.0;
  double window_s = 0.45;
  double attempt_duration_s = 10'000.0;
  std::string attempt_mode = "continuous";
  double decay_t_max_s = 1.5;
  std::uint64_t decay_points = 151;
  std::vector<double> sweep_alpha{0.025, 0.05, 0.075, 0.1, 0.125, 0.15, 0.17};
  std::vector<double> sweep_lengths_km{10.0, 25.0, 50.0, 75.0, 100.0};

  AttemptMode mode() const {
    return attempt_mode == "discrete" ? AttemptMode::discrete : AttemptMode::continuous;
  }

  void validate() const {
    if (!(two_pair_alpha > 0.0 && two_pair_alpha <= 0.5)) throw std::invalid_argument("sim.two_pair_alpha must lie in (0, 0.5]");
    if (n_trials < 1) throw std::invalid_argument("sim.n_trials must be >= 1");
    if (!(dead_time_s >= 0.0)) throw std::invalid_argument("sim.dead_time_s must be >= 0");
    if (!(window_s > 0.0)) throw std::invalid_argument("sim.window_s must be > 0");
    if (!(attempt_duration_s > 0.0)) throw std::invalid_argument("sim.attempt_duration_s must be > 0");
    if (attempt_mode != "continuous" && attempt_mode != "discrete")
      throw std::invalid_argument("sim.attempt_mode must be \"continuous\" or \"discrete\"");
    if (!(decay_t_max_s > 0.0)) throw std::invalid_argument("sim.decay_t_max_s must be > 0");
    if (decay_points < 2) throw std::invalid_argument("sim.decay_points must be >= 2");
    for (double a : sweep_alpha)
      if (!(a >= 0.0 && a <= 0.5)) throw std::invalid_argument("sim.sweep_alpha entries must lie in [0, 0.5]");
    for (double l : sweep_lengths_km)
      if (!(l >= 0.0)) throw std::invalid_argument("sim.sweep_lengths_km entries must be >= 0");
  }

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

struct DiqkdConfig {
  KeyParams key;
  std::uint64_t n_rounds = anchors_default_rounds();
  double storage_delay_s = 0.0;
  // Measured CHSH / QBER to feed the key-rate stage instead of simulated ones.
  std::optional<double> chsh_s;
  std::optional<double> chsh_s_err;
  std::optional<double> qber;
  std::optional<double> qber_err;

  static constexpr std::uint64_t anchors_default_rounds() { return 405'145; }

  void validate() const {
    key.validate();
    if (n_rounds < 1) throw std::invalid_argument("diqkd.n_rounds must be >= 1");
    if (!(storage_delay_s >= 0.0)) throw std::invalid_argument("diqkd.storage_delay_s must be >= 0");
    if (chsh_s && !(*chsh_s >= -kTsirelson - 1e-9 && *chsh_s <= kTsirelson + 1e-9))
      throw std::invalid_argument("diqkd.chsh_s must satisfy |S| <= 2 sqrt(2)");
    if (qber && !(*qber >= 0.0 && *qber <= 1.0)) throw std::invalid_argument("diqkd.qber must lie in [0, 1]");
    if (chsh_s.has_value() != qber.has_value())
      throw std::invalid_argument("diqkd.chsh_s and diqkd.qber must be given together");
  }

  friend bool operator==(const DiqkdConfig&, const DiqkdConfig&) = default;
};

struct ScenarioConfig {
  std::string scenario = "scenario";
  std::uint64_t seed = 1;
  LinkBudget link;
  ProtocolParams protocol;
  MemoryModel memory;
  SimConfig sim;
  DiqkdConfig diqkd;

  void validate() const {
    if (scenario.empty()) throw std::invalid_argument("scenario must be a non-empty name");
    for (char c : scenario)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
        throw std::invalid_argument("scenario name may only contain [A-Za-z0-9_.-]");
    link.validate();
    protocol.validate();
    memory.validate();
    sim.validate();
    diqkd.validate();
  }

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

// ---- TOML subset -------------------------------------------------------------

namespace toml {

struct Integer {
  std::string text;  // kept verbatim so 64-bit unsigned values survive
};

using Value = std::variant<double, Integer, bool, std::string, std::vector<double>>;

struct Entry {
  std::string key;
  Value value;
  int line = 0;
};

struct Table {
  std::string name;  // empty for the root table
  std::vector<Entry> entries;
};

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";  // keep it a float token
  return s;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string_view strip_comment(std::string_view s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_string = !in_string;
    if (s[i] == '#' && !in_string) return s.substr(0, i);
  }
  return s;
}

inline bool is_bare_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

inline std::optional<double> parse_float(std::string_view t) {
  std::string cleaned;
  for (char c : t)
    if (c != '_') cleaned += c;
  if (cleaned == "inf" || cleaned == "+inf") return std::numeric_limits<double>::infinity();
  if (cleaned == "-inf") return -std::numeric_limits<double>::infinity();
  const char* b = cleaned.data();
  const char* e = b + cleaned.size();
  if (b != e && *b == '+') ++b;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || ptr != e) return std::nullopt;
  return v;
}

inline bool looks_integer(std::string_view t) {
  std::size_t i = (t.size() > 0 && (t[0] == '+' || t[0] == '-')) ? 1 : 0;
  if (i >= t.size()) return false;
  for (; i < t.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(t[i])) && t[i] != '_') return false;
  return true;
}

}  // namespace detail

inline Value parse_value(std::string_view raw, const std::string& where) {
  const auto t = detail::trim(raw);
  if (t.empty()) throw ConfigError(where + ": missing value");
  if (t.front() == '"') {
    if (t.size() < 2 || t.back() != '"') throw ConfigError(where + ": unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < t.size(); ++i) {
      if (t[i] == '\\' && i + 2 < t.size()) {
        const char n = t[++i];
        out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
      } else {
        out += t[i];
      }
    }
    return out;
  }
  if (t == "true") return true;
  if (t == "false") return false;
  if (t.front() == '[') {
    if (t.back() != ']') throw ConfigError(where + ": unterminated array");
    std::vector<double> out;
    auto body = detail::trim(t.substr(1, t.size() - 2));
    while (!body.empty()) {
      const auto comma = body.find(',');
      const auto item = detail::trim(body.substr(0, comma));
      if (!item.empty()) {
        auto v = detail::parse_float(item);
        if (!v) throw ConfigError(where + ": array entries must be numbers, got '" + std::string(item) + "'");
        out.push_back(*v);
      }
      if (comma == std::string_view::npos) break;
      body = detail::trim(body.substr(comma + 1));
    }
    return out;
  }
  if (detail::looks_integer(t)) {
    std::string s;
    for (char c : t)
      if (c != '_') s += c;
    return Integer{s};
  }
  if (auto v = detail::parse_float(t)) return *v;
  throw ConfigError(where + ": cannot parse value '" + std::string(t) + "'");
}

inline std::vector<Table> parse(std::istream& in, const std::string& source) {
  std::vector<Table> tables{Table{}};
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen_tables;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto t = detail::trim(detail::strip_comment(line));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed table header");
      const std::string name(detail::trim(t.substr(1, t.size() - 2)));
      if (!detail::is_bare_key(name)) throw ConfigError(where + ": unsupported table name '" + name + "'");
      if (seen_tables.count(name)) throw ConfigError(where + ": duplicate table [" + name + "]");
      seen_tables[name] = lineno;
      tables.push_back(Table{name, {}});
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(detail::trim(t.substr(0, eq)));
    if (!detail::is_bare_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    for (const auto& e : tables.back().entries)
      if (e.key == key) throw ConfigError(where + ": duplicate key '" + key + "'");
    tables.back().entries.push_back({key, parse_value(t.substr(eq + 1), where), lineno});
  }
  return tables;
}

}  // namespace toml

// ---- binding between config fields and TOML values ---------------------------

namespace detail {

struct FieldBinding {
  std::string key;
  std::function<void(const toml::Value&, const std::string& where)> set;
  std::function<std::optional<toml::Value>()> get;  // nullopt: omit on emit
};

inline double as_double(const toml::Value& v, const std::string& where) {
  if (auto d = std::get_if<double>(&v)) return *d;
  if (auto i = std::get_if<toml::Integer>(&v)) {
    auto d = toml::detail::parse_float(i->text);
    if (d) return *d;
  }
  throw ConfigError(where + ": expected a number");
}

inline std::uint64_t as_uint(const toml::Value& v, const std::string& where) {
  if (auto i = std::get_if<toml::Integer>(&v)) {
    std::uint64_t out = 0;
    const auto& s = i->text;
    const char* b = s.data();
    if (!s.empty() && s[0] == '+') ++b;
    auto [ptr, ec] = std::from_chars(b, s.data() + s.size(), out);
    if (ec == std::errc{} && ptr == s.data() + s.size()) return out;
  }
  throw ConfigError(where + ": expected a non-negative integer");
}

inline FieldBinding num(std::string key, double& ref) {
  return {key, [&ref](const toml::Value& v, const std::string& w) { ref = as_double(v, w); },
          [&ref] { return std::optional<toml::Value>(ref); }};
}

inline FieldBinding opt_num(std::string key, std::optional<double>& ref) {
  return {key, [&ref](const toml::Value& v, const std::string& w) { ref = as_double(v, w); },
          [&ref] { return ref ? std::optional<toml::Value>(*ref) : std::nullopt; }};
}

inline FieldBinding uint(std::string key, std::uint64_t& ref) {
  return {key, [&ref](const toml::Value& v, const std::string& w) { ref = as_uint(v, w); },
          [&ref] { return std::optional<toml::Value>(toml::Integer{std::to_string(ref)}); }};
}

inline FieldBinding str(std::string key, std::string& ref) {
  return {key,
          [&ref](const toml::Value& v, const std::string& w) {
            auto s = std::get_if<std::string>(&v);
            if (!s) throw ConfigError(w + ": expected a string");
            ref = *s;
          },
          [&ref] { return std::optional<toml::Value>(ref); }};
}

inline FieldBinding array(std::string key, std::vector<double>& ref) {
  return {key,
          [&ref](const toml::Value& v, const std::string& w) {
            auto a = std::get_if<std::vector<double>>(&v);
            if (!a) throw ConfigError(w + ": expected an array of numbers");
            ref = *a;
          },
          [&ref] { return std::optional<toml::Value>(ref); }};
}

template <std::size_t N>
FieldBinding fixed_array(std::string key, std::array<double, N>& ref) {
  return {key,
          [&ref](const toml::Value& v, const std::string& w) {
            auto a = std::get_if<std::vector<double>>(&v);
            if (!a || a->size() != N) throw ConfigError(w + ": expected an array of " + std::to_string(N) + " numbers");
            std::copy(a->begin(), a->end(), ref.begin());
          },
          [&ref] { return std::optional<toml::Value>(std::vector<double>(ref.begin(), ref.end())); }};
}

inline FieldBinding sign(std::string key, BellKind& ref) {
  return {key,
          [&ref](const toml::Value& v, const std::string& w) {
            auto s = std::get_if<std::string>(&v);
            if (!s) throw ConfigError(w + ": expected \"plus\" or \"minus\"");
            try {
              ref = bell_kind_from_string(*s);
            } catch (const std::invalid_argument& e) {
              throw ConfigError(w + ": " + e.what());
            }
          },
          [&ref] { return std::optional<toml::Value>(std::string(to_string(ref))); }};
}

using Schema = std::vector<std::pair<std::string, std::vector<FieldBinding>>>;

inline Schema schema(ScenarioConfig& c) {
  auto& l = c.link;
  auto& p = c.protocol;
  auto& m = c.memory;
  auto& s = c.sim;
  auto& d = c.diqkd;
  return {
      {"", {str("scenario", c.scenario), uint("seed", c.seed)}},
      {"link",
       {num("fibre_coupled_eff_a", l.fibre_coupled_eff_a), num("fibre_coupled_eff_b", l.fibre_coupled_eff_b),
        num("qfc_chain_eff", l.qfc_chain_eff), num("fibre_length_km", l.fibre_length_km),
        num("attenuation_db_per_km", l.attenuation_db_per_km), num("detector_eff", l.detector_eff),
        num("noise_cps", l.noise_cps), num("gate_window_s", l.gate_window_s),
        num("attempt_rate_hz", l.attempt_rate_hz), num("duty_cycle", l.duty_cycle), num("residual_a", l.residual_a),
        num("residual_b", l.residual_b)}},
      {"protocol",
       {num("alpha", p.alpha), num("dphi", p.dphi), sign("sign", p.sign), num("phase_contrast", p.phase_contrast),
        num("motional_visibility", p.motional_visibility), num("ion_depolarizing", p.ion_depolarizing),
        opt_num("false_herald_weight", p.false_herald_weight)}},
      {"memory",
       {num("tau_xx", m.tau_xx), num("xx0", m.xx0), num("zz0", m.zz0), num("zz_slope", m.zz_slope),
        num("kdd_interval", m.kdd_interval), num("gate_err_a", m.gate_err_a), num("gate_err_b", m.gate_err_b),
        num("d52_lifetime", m.d52_lifetime), num("pre_transfer_s", m.pre_transfer_s)}},
      {"sim",
       {num("two_pair_alpha", s.two_pair_alpha), uint("n_trials", s.n_trials), num("dead_time_s", s.dead_time_s),
        num("window_s", s.window_s), num("attempt_duration_s", s.attempt_duration_s),
        str("attempt_mode", s.attempt_mode), num("decay_t_max_s", s.decay_t_max_s),
        uint("decay_points", s.decay_points), array("sweep_alpha", s.sweep_alpha),
        array("sweep_lengths_km", s.sweep_lengths_km)}},
      {"diqkd",
       {num("recon_efficiency", d.key.recon_efficiency), num("epsilon", d.key.epsilon),
        num("finite_correction", d.key.finite_correction), fixed_array("basis", d.key.basis.p),
        uint("n_rounds", d.n_rounds), num("storage_delay_s", d.storage_delay_s), opt_num("chsh_s", d.chsh_s),
        opt_num("chsh_s_err", d.chsh_s_err), opt_num("qber", d.qber), opt_num("qber_err", d.qber_err)}},
  };
}

}  // namespace detail

/// Parses and validates a scenario from a stream. `source` names the input in
/// diagnostics.
inline ScenarioConfig parse_config(std::istream& in, const std::string& source) {
  ScenarioConfig cfg;
  auto sch = detail::schema(cfg);
  for (const auto& table : toml::parse(in, source)) {
    auto it = std::find_if(sch.begin(), sch.end(), [&](const auto& s) { return s.first == table.name; });
    if (it == sch.end()) throw ConfigError(source + ": unknown section [" + table.name + "]");
    for (const auto& e : table.entries) {
      const std::string dotted = table.name.empty() ? e.key : table.name + "." + e.key;
      const std::string where = source + ":" + std::to_string(e.line) + ": " + dotted;
      auto f = std::find_if(it->second.begin(), it->second.end(), [&](const auto& b) { return b.key == e.key; });
      if (f == it->second.end()) throw ConfigError(where + ": unknown key");
      f->set(e.value, where);
    }
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source + ": invalid value: " + e.what());
  }
  return cfg;
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  return parse_config(in, path);
}

/// Serialises a config in the same format. load(emit(c)) == c.
inline std::string emit_config(const ScenarioConfig& config) {
  ScenarioConfig copy = config;
  auto sch = detail::schema(copy);
  std::ostringstream out;
  auto write_value = [&](const toml::Value& v) {
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, double>) {
            out << toml::format_double(x);
          } else if constexpr (std::is_same_v<T, toml::Integer>) {
            out << x.text;
          } else if constexpr (std::is_same_v<T, bool>) {
            out << (x ? "true" : "false");
          } else if constexpr (std::is_same_v<T, std::string>) {
            out << '"';
            for (char c : x) {
              if (c == '"' || c == '\\') out << '\\';
              out << c;
            }
            out << '"';
          } else {
            out << '[';
            for (std::size_t i = 0; i < x.size(); ++i) out << (i ? ", " : "") << toml::format_double(x[i]);
            out << ']';
          }
        },
        v);
  };
  bool first = true;
  for (const auto& [section, fields] : sch) {
    if (!section.empty()) out << (first ? "" : "\n") << '[' << section << "]\n";
    first = false;
    for (const auto& f : fields) {
      auto v = f.get();
      if (!v) continue;
      out << f.key << " = ";
      write_value(*v);
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace ionlink
