#pragma once

// Scenario orchestration behind the `ionlink` command: one function per
// subcommand, each writing its artifacts into `<out>/<scenario>-<seed>`.
//
// Artifacts are deterministic functions of (config, seed): no timestamps, and
// parallel work items get fixed random streams and are collected by index.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ionlink/calibration.hpp"
#include "ionlink/config.hpp"
#include "ionlink/diqkd.hpp"
#include "ionlink/herald.hpp"
#include "ionlink/linkmodel.hpp"
#include "ionlink/memory.hpp"
#include "ionlink/netsim.hpp"
#include "ionlink/random.hpp"

namespace ionlink {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---- CSV ---------------------------------------------------------------------

/// Shortest round-trip decimal form; independent of the C locale.
inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

struct PlotPoint {
  std::string series;
  double x = 0.0;
  double y = 0.0;
};

/// Tidy CSV for external plotting: `series,x,y`, one row per point. An empty
/// result set gives a header-only file.
inline void emit_plotdata(const std::vector<PlotPoint>& points, const fs::path& path) {
  auto out = open_output(path);
  out << "series,x,y\n";
  for (const auto& p : points) out << p.series << ',' << format_number(p.x) << ',' << format_number(p.y) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void write_events_csv(const std::vector<EntanglementEvent>& events, const fs::path& path) {
  auto out = open_output(path);
  out << "time_s,sign,spurious\n";
  for (const auto& e : events)
    out << format_number(e.time) << ',' << to_string(e.herald_sign) << ',' << (e.spurious ? 1 : 0) << '\n';
}

inline void write_rounds_csv(const std::vector<RoundRecord>& records, std::ostream& out) {
  out << "t_s,x,y,a,b,sign\n";
  for (const auto& r : records)
    out << format_number(r.time) << ',' << r.x << ',' << r.y << ',' << r.a << ',' << r.b << ','
        << to_string(r.herald_sign) << '\n';
}

inline void write_rounds_csv(const std::vector<RoundRecord>& records, const fs::path& path) {
  auto out = open_output(path);
  write_rounds_csv(records, out);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(std::string(toml::detail::trim(cell)));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline int parse_small_int(const std::string& s, const std::string& where) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw std::runtime_error(where + ": bad integer '" + s + "'");
  return v;
}

}  // namespace detail

/// Reads the round-record CSV written by `write_rounds_csv`. The header is
/// required; every row is range-checked.
inline std::vector<RoundRecord> read_rounds_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(source + ": empty rounds file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t_s,x,y,a,b,sign") throw std::runtime_error(source + ": expected header 't_s,x,y,a,b,sign'");
  std::vector<RoundRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != 6) throw std::runtime_error(where + ": expected 6 columns");
    RoundRecord r;
    auto t = toml::detail::parse_float(cells[0]);
    if (!t) throw std::runtime_error(where + ": bad time '" + cells[0] + "'");
    r.time = *t;
    r.x = detail::parse_small_int(cells[1], where);
    r.y = detail::parse_small_int(cells[2], where);
    r.a = detail::parse_small_int(cells[3], where);
    r.b = detail::parse_small_int(cells[4], where);
    try {
      r.herald_sign = bell_kind_from_string(cells[5]);
      r.validate();
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<RoundRecord> read_rounds_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open rounds file " + path.string());
  return read_rounds_csv(in, path.string());
}

inline void write_json(const Json& j, const fs::path& path) {
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

// ---- worker pool -----------------------------------------------------------------

/// Pool size from IONLINK_THREADS (positive integer), else the hardware
/// concurrency, else 1.
inline unsigned worker_count() {
  if (const char* env = std::getenv("IONLINK_THREADS")) {
    unsigned v = 0;
    const std::string s(env);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec == std::errc{} && ptr == s.data() + s.size() && v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers and returns the
/// results in index order. The first exception thrown by any item is
/// rethrown after all workers stop.
template <typename Fn>
auto parallel_map(std::size_t n, Fn&& fn, unsigned threads) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<std::optional<R>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  const unsigned k = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, threads), std::max<std::size_t>(n, 1)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < k; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---- scenario runs -------------------------------------------------------------

enum class Subcommand { budget, decay, simulate, keyrate, sweep, calibrate };

inline const char* to_string(Subcommand s) {
  switch (s) {
    case Subcommand::budget: return "budget";
    case Subcommand::decay: return "decay";
    case Subcommand::simulate: return "simulate";
    case Subcommand::keyrate: return "keyrate";
    case Subcommand::sweep: return "sweep";
    case Subcommand::calibrate: return "calibrate";
  }
  return "?";
}

inline std::optional<Subcommand> subcommand_from_string(const std::string& s) {
  for (auto c : {Subcommand::budget, Subcommand::decay, Subcommand::simulate, Subcommand::keyrate, Subcommand::sweep,
                 Subcommand::calibrate})
    if (s == to_string(c)) return c;
  return std::nullopt;
}

struct RunOptions {
  fs::path out_root = "results";
  std::optional<std::uint64_t> seed;      // overrides config.seed
  std::optional<fs::path> rounds_csv;     // keyrate input
  unsigned threads = 0;                   // 0: worker_count()
};

struct RunResult {
  fs::path directory;
  std::vector<std::string> files;
  Json summary;  // main JSON document of the run, if any
};

namespace detail {

class RunContext {
 public:
  RunContext(const ScenarioConfig& cfg, const RunOptions& opt) : cfg_(cfg) {
    if (opt.seed) cfg_.seed = *opt.seed;
    result_.directory = opt.out_root / (cfg_.scenario + "-" + std::to_string(cfg_.seed));
    fs::create_directories(result_.directory);
    threads_ = opt.threads > 0 ? opt.threads : worker_count();
  }

  const ScenarioConfig& config() const { return cfg_; }
  unsigned threads() const { return threads_; }
  fs::path path(const std::string& name) {
    result_.files.push_back(name);
    return result_.directory / name;
  }
  RunResult finish(Json summary) {
    result_.summary = std::move(summary);
    return std::move(result_);
  }

 private:
  ScenarioConfig cfg_;
  RunResult result_;
  unsigned threads_ = 1;
};

inline Json error_budget_json(const ErrorBudget& eb) {
  return Json{{"protocol", eb.protocol},     {"ion", eb.ion},
              {"noise_herald", eb.noise_herald}, {"phase", eb.phase},
              {"motion", eb.motion},         {"total_infidelity", eb.total_infidelity},
              {"residual", eb.residual}};
}

inline Json chsh_json(const ChshEstimate& c) {
  return Json{{"S", c.S}, {"S_err", c.std_error}, {"correlators", c.correlators}};
}

inline Json qber_json(const QberEstimate& q) { return Json{{"Q", q.Q}, {"Q_err", q.std_error}, {"n", q.n}}; }

inline std::string km_label(double km) { return format_number(km) + "km"; }

/// Noisy heralded state at the config's link and protocol, optionally aged by
/// the storage delay (the state the key rounds measure).
inline TwoQubitDensity measured_state(const ScenarioConfig& c, BellKind sign) {
  ProtocolParams p = c.protocol;
  p.sign = sign;
  auto rho = noisy_heralded_state(p, c.link);
  if (c.diqkd.storage_delay_s > 0.0) rho = apply_storage(rho, c.memory, c.diqkd.storage_delay_s);
  return rho;
}

inline std::vector<RoundRecord> simulate_rounds(const ScenarioConfig& c, std::uint64_t n, std::uint64_t seed) {
  HeraldedSource source(c.link, c.protocol, &c.memory, c.diqkd.storage_delay_s);
  auto rng = make_rng(seed);
  return run_rounds(source, c.diqkd.key.basis, static_cast<std::size_t>(n), rng);
}

/// Analytic (infinite-sample) CHSH and QBER of the pooled simulated state.
inline Json analytic_round_stats(const ScenarioConfig& c) {
  OutcomeCounts counts;
  for (auto s : {BellKind::plus, BellKind::minus})
    counts += analytic_counts(measured_state(c, s), s, c.diqkd.key.basis, 0.5);
  return Json{{"S", estimate_chsh(counts).S}, {"Q", estimate_qber(counts).Q}};
}

/// CHSH / QBER estimates per herald sign and pooled.
inline Json round_statistics(const std::vector<RoundRecord>& records) {
  Json j;
  j["pooled"] = {{"chsh", chsh_json(estimate_chsh(records))}, {"qber", qber_json(estimate_qber(records))}};
  for (auto s : {BellKind::plus, BellKind::minus}) {
    try {
      j[to_string(s)] = {{"chsh", chsh_json(estimate_chsh(records, s))}, {"qber", qber_json(estimate_qber(records, s))}};
    } catch (const std::invalid_argument&) {
      j[to_string(s)] = nullptr;  // no rounds with this sign
    }
  }
  return j;
}

}  // namespace detail

/// Link budget, heralded-state fidelity and error budget at the configured
/// alpha; fidelity-vs-alpha and infidelity-vs-length plot data.
inline RunResult run_budget(const ScenarioConfig& cfg, const RunOptions& opt) {
  detail::RunContext ctx(cfg, opt);
  const auto& c = ctx.config();
  const double a = c.protocol.alpha;
  const double rate = expected_rate(c.link, a);
  const auto resolved = resolve_false_herald_weight(c.protocol, c.link);
  ProtocolParams minus = resolved;
  minus.sign = BellKind::minus;
  const auto qle = quantum_link_efficiency(c.memory, expected_rate(c.link, c.sim.two_pair_alpha));

  Json j;
  j["alpha"] = a;
  j["fibre_length_km"] = c.link.fibre_length_km;
  j["fibre_transmittance"] = fibre_transmittance(c.link);
  j["arm_efficiency"] = {{"A", arm_efficiency(c.link, Arm::A)}, {"B", arm_efficiency(c.link, Arm::B)}};
  j["herald_prob"] = herald_prob(c.link, a);
  j["false_herald_prob"] = false_herald_prob(c.link);
  j["snr_per_gate"] = snr(c.link, a);
  j["false_herald_weight"] = *resolved.false_herald_weight;
  j["expected_rate_hz"] = rate;
  j["mean_generation_time_s"] = rate > 0.0 ? Json(1.0 / rate) : Json(nullptr);
  j["heralded_fidelity"] = {{"plus", heralded_fidelity(resolved)}, {"minus", heralded_fidelity(minus)}};
  j["error_budget"] = detail::error_budget_json(error_budget(resolved));
  j["quantum_link_efficiency"] = {{"alpha", c.sim.two_pair_alpha},
                                  {"value", qle.value},
                                  {"threshold", kLinkEfficiencyThreshold},
                                  {"above_threshold", qle.above_threshold}};
  write_json(j, ctx.path("budget.json"));

  std::vector<PlotPoint> fid;
  for (double x : c.sim.sweep_alpha) {
    ProtocolParams p = c.protocol;
    p.alpha = x;
    for (auto s : {BellKind::plus, BellKind::minus}) {
      p.sign = s;
      fid.push_back({std::string("fidelity_") + to_string(s), x, heralded_fidelity(resolve_false_herald_weight(p, c.link))});
    }
    fid.push_back({"rate_hz", x, expected_rate(c.link, x)});
  }
  emit_plotdata(fid, ctx.path("fidelity_vs_alpha.csv"));

  std::vector<PlotPoint> inf;
  for (double km : c.sim.sweep_lengths_km) {
    LinkBudget l = c.link;
    l.fibre_length_km = km;
    const auto eb = error_budget(c.protocol, l);
    for (const auto& [name, v] : {std::pair<const char*, double>{"protocol", eb.protocol},
                                  {"ion", eb.ion},
                                  {"noise_herald", eb.noise_herald},
                                  {"phase", eb.phase},
                                  {"motion", eb.motion},
                                  {"total", eb.total_infidelity}})
      inf.push_back({name, km, v});
  }
  emit_plotdata(inf, ctx.path("infidelity_vs_length.csv"));
  return ctx.finish(j);
}

/// Memory decay curves (model and state-level), survival time, and the
/// probability-weighted fidelities at the two-pair alpha.
inline RunResult run_decay(const ScenarioConfig& cfg, const RunOptions& opt) {
  detail::RunContext ctx(cfg, opt);
  const auto& c = ctx.config();
  const auto& m = c.memory;
  const IntervalDistribution dist(mean_generation_time(c.link, c.sim.two_pair_alpha));

  Json j;
  j["tau_xx_s"] = m.tau_xx;
  j["decoherence_rate_hz"] = decoherence_rate(m);
  j["fidelity_at_mean_time"] = {{"t_s", dist.mean()}, {"fidelity", fidelity_at(m, dist.mean())}};
  try {
    j["survival_time_s"] = survival_time(m, 0.5);
  } catch (const std::exception&) {
    j["survival_time_s"] = nullptr;
  }
  j["zz_clamp_time_s"] = std::isfinite(zz_clamp_time(m)) ? Json(zz_clamp_time(m)) : Json(nullptr);
  j["naive_zz_slope_per_s"] = naive_zz_slope(m);
  j["weighted_average_fidelity"] = {{"window_s", c.sim.window_s},
                                    {"windowed", weighted_average_fidelity(m, dist, c.sim.window_s)},
                                    {"infinite", weighted_average_fidelity(m, dist, kInfiniteWindow)}};
  const auto qle = quantum_link_efficiency(m, dist.rate());
  j["quantum_link_efficiency"] = {{"value", qle.value}, {"above_threshold", qle.above_threshold}};
  write_json(j, ctx.path("decay.json"));

  std::vector<PlotPoint> pts;
  const auto initial = memory_initial_state(m);
  const auto target = bell_state(BellKind::plus);
  const auto n = c.sim.decay_points;
  for (std::uint64_t i = 0; i < n; ++i) {
    const double t = c.sim.decay_t_max_s * static_cast<double>(i) / static_cast<double>(n - 1);
    pts.push_back({"xx", t, xx_at(m, t)});
    pts.push_back({"zz", t, zz_at(m, t)});
    pts.push_back({"fidelity", t, fidelity_at(m, t)});
    pts.push_back({"fidelity_state", t, fidelity(apply_storage(initial, m, t), target)});
    pts.push_back({"interval_pdf", t, dist.pdf(t)});
  }
  emit_plotdata(pts, ctx.path("decay.csv"));
  return ctx.finish(j);
}

/// Event-level attempt loop, two-pair Monte Carlo against the quadrature
/// oracle, and simulated DI-QKD rounds.
inline RunResult run_simulate(const ScenarioConfig& cfg, const RunOptions& opt) {
  detail::RunContext ctx(cfg, opt);
  const auto& c = ctx.config();

  auto rng_events = make_rng(derive_seed(c.seed, 0));
  const auto events = run_attempt_loop(c.link, c.protocol.alpha, c.sim.attempt_duration_s, rng_events, c.sim.mode());
  write_events_csv(events, ctx.path("events.csv"));
  std::size_t spurious = 0;
  for (const auto& e : events) spurious += e.spurious ? 1 : 0;

  ProtocolParams tp = c.protocol;
  tp.alpha = c.sim.two_pair_alpha;
  auto rng_pairs = make_rng(derive_seed(c.seed, 1));
  TwoPairOptions topt;
  topt.dead_time_s = c.sim.dead_time_s;
  const auto stats = run_two_pair_experiment(c.link, tp, c.memory, c.sim.n_trials, rng_pairs, topt);
  const IntervalDistribution dist(mean_generation_time(c.link, tp.alpha));
  const bool oracle_applies = c.sim.dead_time_s == 0.0;
  const double quad = weighted_average_fidelity(c.memory, dist, kInfiniteWindow);
  double windowed_sum = 0.0;
  std::size_t windowed_n = 0;
  for (const auto& s : stats.samples)
    if (s.interval <= c.sim.window_s) {
      windowed_sum += s.fidelity;
      ++windowed_n;
    }

  // 10 ms interval histogram next to the exponential density.
  std::vector<PlotPoint> hist;
  const double bin = 0.01;
  const double t_max = c.sim.decay_t_max_s;
  const auto nbins = static_cast<std::size_t>(std::ceil(t_max / bin));
  std::vector<double> counts(nbins, 0.0);
  for (const auto& s : stats.samples) {
    const auto k = static_cast<std::size_t>(s.interval / bin);
    if (k < nbins) counts[k] += 1.0;
  }
  for (std::size_t k = 0; k < nbins; ++k) {
    const double mid = (static_cast<double>(k) + 0.5) * bin;
    hist.push_back({"interval_density_mc", mid, counts[k] / (static_cast<double>(stats.samples.size()) * bin)});
    hist.push_back({"interval_density_model", mid, dist.pdf(mid)});
  }
  emit_plotdata(hist, ctx.path("intervals.csv"));

  const auto records = detail::simulate_rounds(c, c.diqkd.n_rounds, derive_seed(c.seed, 2));
  write_rounds_csv(records, ctx.path("rounds.csv"));

  Json j;
  j["events"] = {{"alpha", c.protocol.alpha},
                 {"duration_s", c.sim.attempt_duration_s},
                 {"mode", c.sim.attempt_mode},
                 {"count", events.size()},
                 {"spurious", spurious},
                 {"expected_count", expected_rate(c.link, c.protocol.alpha) * c.sim.attempt_duration_s},
                 {"expected_spurious_fraction", spurious_fraction(c.link, c.protocol.alpha)}};
  j["two_pair"] = {{"alpha", tp.alpha},
                   {"n_trials", c.sim.n_trials},
                   {"dead_time_s", c.sim.dead_time_s},
                   {"mean_interval_s", dist.mean()},
                   {"mc_mean_fidelity", stats.mean_fidelity},
                   {"mc_std_error", stats.std_error},
                   {"quadrature_mean_fidelity", quad},
                   {"z_score", oracle_applies && stats.std_error > 0 ? Json((stats.mean_fidelity - quad) / stats.std_error)
                                                                      : Json(nullptr)},
                   {"window_s", c.sim.window_s},
                   {"mc_windowed_mean_fidelity", windowed_n ? Json(windowed_sum / double(windowed_n)) : Json(nullptr)},
                   {"quadrature_windowed_mean_fidelity", weighted_average_fidelity(c.memory, dist, c.sim.window_s)}};
  j["rounds"] = {{"n", records.size()},
                 {"storage_delay_s", c.diqkd.storage_delay_s},
                 {"analytic", detail::analytic_round_stats(c)},
                 {"estimates", detail::round_statistics(records)}};
  write_json(j, ctx.path("simulate.json"));
  return ctx.finish(j);
}

/// Key-rate accounting. Inputs, in priority order: the `--rounds` CSV, the
/// measured statistics in [diqkd], or freshly simulated rounds.
inline RunResult run_keyrate(const ScenarioConfig& cfg, const RunOptions& opt) {
  detail::RunContext ctx(cfg, opt);
  const auto& c = ctx.config();
  const auto& kp = c.diqkd.key;

  double S = 0, S_err = 0, Q = 0, Q_err = 0;
  std::uint64_t n = c.diqkd.n_rounds;
  std::string source;
  Json per_sign = nullptr;
  if (opt.rounds_csv || !c.diqkd.chsh_s) {
    std::vector<RoundRecord> records;
    if (opt.rounds_csv) {
      records = read_rounds_csv(*opt.rounds_csv);
      if (records.empty()) throw std::runtime_error("rounds file holds no records");
      source = "rounds_csv";
    } else {
      records = detail::simulate_rounds(c, n, derive_seed(c.seed, 2));
      write_rounds_csv(records, ctx.path("rounds.csv"));
      source = "simulated";
    }
    n = records.size();
    const auto chsh = estimate_chsh(records);
    const auto qber = estimate_qber(records);
    S = chsh.S;
    S_err = chsh.std_error;
    Q = qber.Q;
    Q_err = qber.std_error;
    per_sign = detail::round_statistics(records);
  } else {
    S = *c.diqkd.chsh_s;
    S_err = c.diqkd.chsh_s_err.value_or(0.0);
    Q = *c.diqkd.qber;
    Q_err = c.diqkd.qber_err.value_or(0.0);
    source = "config";
  }
  const auto k = finite_key_length(n, kp, S, Q);

  Json j;
  j["S"] = S;
  j["S_err"] = S_err;
  j["Q"] = Q;
  j["Q_err"] = Q_err;
  j["f"] = kp.recon_efficiency;
  j["epsilon"] = kp.epsilon;
  j["N"] = n;
  j["ell"] = k.ell;
  j["rate_per_round"] = k.rate_per_round;
  j["asymptotic_rate"] = k.asymptotic_rate;
  j["asymptotic_rate_f1"] = asymptotic_rate(S, Q, 1.0);
  j["p_key"] = k.p_key;
  j["finite_correction"] = kp.finite_correction;
  j["input"] = source;
  if (!per_sign.is_null()) j["estimates"] = per_sign;
  j["metadata"] = {
      {"rate_bound", "CHSH-based Devetak-Winter: 1 - h((1 + sqrt(S^2/4 - 1))/2) - f h(Q)"},
      {"finite_size_model", "surrogate: ell = floor(N p_key r - nu sqrt(N log2(1/epsilon))), nu calibrated"},
      {"security_proof", false}};
  write_json(j, ctx.path("key.json"));
  return ctx.finish(j);
}

/// Grid over fibre length x alpha: rates, fidelity, SNR and a two-pair Monte
/// Carlo per point, dispatched to the worker pool.
inline RunResult run_sweep(const ScenarioConfig& cfg, const RunOptions& opt) {
  detail::RunContext ctx(cfg, opt);
  const auto& c = ctx.config();
  struct Point {
    double km, alpha, herald, rate, fid, snr_gate, qle, mc_mean, mc_err;
  };
  const auto& alphas = c.sim.sweep_alpha;
  const auto& lengths = c.sim.sweep_lengths_km;
  const std::size_t total = alphas.size() * lengths.size();
  const std::uint64_t mc_trials = std::min<std::uint64_t>(c.sim.n_trials, 10'000);

  auto work = [&](std::size_t i) {
    const double km = lengths[i / alphas.size()];
    const double a = alphas[i % alphas.size()];
    LinkBudget l = c.link;
    l.fibre_length_km = km;
    ProtocolParams p = c.protocol;
    p.alpha = a;
    Point pt{km, a, herald_prob(l, a), expected_rate(l, a), 0, snr(l, a), 0, 0, 0};
    pt.fid = heralded_fidelity(resolve_false_herald_weight(p, l));
    pt.qle = quantum_link_efficiency(c.memory, pt.rate).value;
    if (pt.rate > 0.0) {
      auto rng = make_rng(derive_seed(c.seed, 100 + i));
      const auto st = run_two_pair_experiment(l, p, c.memory, mc_trials, rng, {c.sim.dead_time_s, kInfiniteWindow, false});
      pt.mc_mean = st.mean_fidelity;
      pt.mc_err = st.std_error;
    }
    return pt;
  };
  const auto points = parallel_map(total, work, ctx.threads());

  auto out = open_output(ctx.path("rate_curve.csv"));
  out << "fibre_length_km,alpha,herald_prob,rate_hz,fidelity_plus,snr_per_gate,quantum_link_efficiency,"
         "two_pair_mean_fidelity,two_pair_std_error\n";
  std::vector<PlotPoint> plot;
  for (const auto& p : points) {
    out << format_number(p.km) << ',' << format_number(p.alpha) << ',' << format_number(p.herald) << ','
        << format_number(p.rate) << ',' << format_number(p.fid) << ',' << format_number(p.snr_gate) << ','
        << format_number(p.qle) << ',' << format_number(p.mc_mean) << ',' << format_number(p.mc_err) << '\n';
    const std::string tag = "@" + detail::km_label(p.km);
    plot.push_back({"rate_hz" + tag, p.alpha, p.rate});
    plot.push_back({"fidelity_plus" + tag, p.alpha, p.fid});
    plot.push_back({"two_pair_fidelity" + tag, p.alpha, p.mc_mean});
  }
  out.close();
  emit_plotdata(plot, ctx.path("sweep_plot.csv"));

  bool monotone = true;
  for (std::size_t i = 1; i < points.size(); ++i)
    if (points[i].km == points[i - 1].km && points[i].alpha >= points[i - 1].alpha && points[i].rate < points[i - 1].rate)
      monotone = false;
  Json j{{"points", points.size()}, {"two_pair_trials_per_point", mc_trials}, {"rates_monotone_in_alpha", monotone}};
  return ctx.finish(j);
}

/// Re-runs every calibration routine from the config's uncalibrated knobs and
/// writes the resulting config plus the anchor residuals.
inline RunResult run_calibrate(const ScenarioConfig& cfg, const RunOptions& opt) {
  detail::RunContext ctx(cfg, opt);
  ScenarioConfig c = ctx.config();
  LinkBudget ref = c.link;
  ref.fibre_length_km = 10.0;  // anchors were measured on the 10 km link
  const LinkBudget cal = calibrate_link(ref);
  c.link.residual_a = cal.residual_a;
  c.link.residual_b = cal.residual_b;
  c.link.attempt_rate_hz = cal.attempt_rate_hz;
  const auto prot = calibrate_protocol(c.protocol, cal);
  c.protocol.motional_visibility = prot.motional_visibility;
  c.protocol.ion_depolarizing = prot.ion_depolarizing;
  c.memory = calibrate_memory(c.memory, cal);
  c.diqkd.key = calibrate_key_params(c.diqkd.key);

  {
    auto out = open_output(ctx.path("calibrated.toml"));
    out << emit_config(c);
  }
  const IntervalDistribution dist(mean_generation_time(cal, anchors::kRateAlpha));
  ProtocolParams p25 = prot;
  const auto r = memory_fit_residuals(c.memory, dist);
  Json j;
  j["link"] = {{"residual_a", cal.residual_a},
               {"residual_b", cal.residual_b},
               {"attempt_rate_hz", cal.attempt_rate_hz},
               {"arm_efficiency", arm_efficiency(cal, Arm::A)},
               {"rate_at_0.17", expected_rate(cal, anchors::kRateAlpha)}};
  j["protocol"] = {{"motional_visibility", prot.motional_visibility},
                   {"ion_depolarizing", prot.ion_depolarizing},
                   {"fidelity_plus", heralded_fidelity(resolve_false_herald_weight(p25, cal))}};
  j["memory"] = {{"xx0", c.memory.xx0},
                 {"zz0", c.memory.zz0},
                 {"zz_slope", c.memory.zz_slope},
                 {"normalised_residuals",
                  {{"fidelity_at_mean_time", r.fidelity_at_mean_time},
                   {"survival_time", r.survival_time},
                   {"windowed_average", r.windowed_average},
                   {"average", r.average}}}};
  j["diqkd"] = {{"finite_correction", c.diqkd.key.finite_correction}, {"p_key", c.diqkd.key.basis.p_key()}};
  write_json(j, ctx.path("calibration.json"));
  return ctx.finish(j);
}

inline RunResult run_scenario(const ScenarioConfig& cfg, Subcommand cmd, const RunOptions& opt = {}) {
  switch (cmd) {
    case Subcommand::budget: return run_budget(cfg, opt);
    case Subcommand::decay: return run_decay(cfg, opt);
    case Subcommand::simulate: return run_simulate(cfg, opt);
    case Subcommand::keyrate: return run_keyrate(cfg, opt);
    case Subcommand::sweep: return run_sweep(cfg, opt);
    case Subcommand::calibrate: return run_calibrate(cfg, opt);
  }
  throw std::logic_error("unknown subcommand");
}

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitRuntimeError = 2;

/// Loads the config and runs the subcommand, mapping failures to exit codes:
/// 1 for config problems, 2 for anything that fails while running.
inline int run_command(const std::string& subcommand, const fs::path& config_path, const RunOptions& opt,
                       std::ostream& log, std::ostream& err) {
  const auto cmd = subcommand_from_string(subcommand);
  if (!cmd) {
    err << "error: unknown subcommand '" << subcommand << "'\n";
    return kExitConfigError;
  }
  ScenarioConfig cfg;
  try {
    cfg = load_config(config_path.string());
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }
  try {
    const auto res = run_scenario(cfg, *cmd, opt);
    for (const auto& f : res.files) log << (res.directory / f).string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntimeError;
  }
}

}  // namespace ionlink
