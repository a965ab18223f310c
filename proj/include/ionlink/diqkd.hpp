#pragma once

// Device-independent QKD on top of the heralded link: round generation,
// CHSH / QBER estimation and key-rate accounting.
//
// Inputs: Alice x in {0, 1}, Bob y in {0, 1, 2}. (x, y) in {0,1}^2 are Bell
// rounds; (0, 2) are key rounds; (1, 2) is discarded.
//
// Outcome conventions, applied only in the estimators so records stay raw:
//  * key rounds flip Bob's bit, turning the Z-anticorrelation of psi+/- into
//    identical key bits;
//  * on minus heralds Alice's x = 1 bit is flipped, mapping psi- onto the
//    psi+ frame (psi- = (Z (x) I) psi+), so both herald signs can be pooled.
//
// The finite-size key length is a surrogate: the asymptotic rate minus a
// single sqrt(N) correction with a calibrated coefficient. It is not a
// security proof.

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ionlink/herald.hpp"
#include "ionlink/linkmodel.hpp"
#include "ionlink/memory.hpp"
#include "ionlink/qstate.hpp"
#include "ionlink/random.hpp"

namespace ionlink {

struct RoundRecord {
  int x = 0;
  int y = 0;
  int a = 0;
  int b = 0;
  double time = 0.0;
  BellKind herald_sign = BellKind::plus;

  bool is_key_round() const { return x == 0 && y == 2; }
  bool is_bell_round() const { return y < 2; }

  void validate() const {
    if ((x != 0 && x != 1) || y < 0 || y > 2 || (a != 0 && a != 1) || (b != 0 && b != 1))
      throw std::invalid_argument("round record field out of range");
  }

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

/// Probabilities of the six (x, y) input pairs, index 3x + y.
struct BasisDistribution {
  std::array<double, 6> p{1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6};

  static BasisDistribution uniform() { return {}; }
  static BasisDistribution bell_only() { return {{0.25, 0.25, 0.0, 0.25, 0.25, 0.0}}; }
  static BasisDistribution key_only() { return {{0.0, 0.0, 1.0, 0.0, 0.0, 0.0}}; }

  double prob(int x, int y) const { return p[static_cast<std::size_t>(3 * x + y)]; }
  double p_key() const { return p[2]; }

  void validate() const {
    double total = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw std::invalid_argument("diqkd.basis probabilities must be >= 0");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("diqkd.basis probabilities must sum to 1");
  }

  friend bool operator==(const BasisDistribution&, const BasisDistribution&) = default;
};

/// Fixed input-to-angle map: Alice 0 -> Z, 1 -> X; Bob 0 -> +pi/4,
/// 1 -> -pi/4, 2 -> Z (aligned with Alice's key basis).
inline std::pair<MeasurementSetting, MeasurementSetting> settings_for(int x, int y) {
  using std::numbers::pi;
  if (x != 0 && x != 1) throw std::invalid_argument("Alice input must be 0 or 1");
  static constexpr std::array<double, 3> bob{pi / 4, -pi / 4, 0.0};
  if (y < 0 || y > 2) throw std::invalid_argument("Bob input must be 0, 1 or 2");
  return {MeasurementSetting{x == 0 ? 0.0 : pi / 2}, MeasurementSetting{bob[static_cast<std::size_t>(y)]}};
}

inline ChshSettings protocol_chsh_settings() {
  return {settings_for(0, 0).first, settings_for(1, 0).first, settings_for(0, 0).second, settings_for(0, 1).second};
}

/// Outcome bits after the estimator conventions described at the top.
inline std::pair<int, int> remapped_outcomes(const RoundRecord& r) {
  const int a = (r.herald_sign == BellKind::minus && r.x == 1) ? 1 - r.a : r.a;
  const int b = r.is_key_round() ? 1 - r.b : r.b;
  return {a, b};
}

// ---- round generation ------------------------------------------------------

struct HeraldedState {
  const TwoQubitDensity* rho = nullptr;
  BellKind sign = BellKind::plus;
  double time = 0.0;
};

/// Fresh heralds of the noisy link state at the budget's generation rate,
/// with uniformly random herald sign. With `storage_delay_s > 0` each pair is
/// aged by the memory model before measurement.
class HeraldedSource {
 public:
  HeraldedSource(const LinkBudget& budget, ProtocolParams params, const MemoryModel* memory = nullptr,
                 double storage_delay_s = 0.0)
      : plus_(make(budget, params, BellKind::plus, memory, storage_delay_s)),
        minus_(make(budget, params, BellKind::minus, memory, storage_delay_s)),
        mean_interval_(mean_generation_time(budget, params.alpha)) {}

  HeraldedState operator()(Rng& rng) {
    if (std::isfinite(mean_interval_)) time_ += exponential(rng, mean_interval_);
    const bool minus = bernoulli(rng, 0.5);
    return {minus ? &minus_ : &plus_, minus ? BellKind::minus : BellKind::plus, time_};
  }

  const TwoQubitDensity& state(BellKind k) const { return k == BellKind::plus ? plus_ : minus_; }

 private:
  static TwoQubitDensity make(const LinkBudget& budget, ProtocolParams params, BellKind sign,
                              const MemoryModel* memory, double delay) {
    params.sign = sign;
    auto rho = noisy_heralded_state(params, budget);
    if (memory != nullptr && delay > 0.0) rho = apply_storage(rho, *memory, delay);
    return rho;
  }

  TwoQubitDensity plus_;
  TwoQubitDensity minus_;
  double mean_interval_;
  double time_ = 0.0;
};

/// A source that always returns the same state and sign, one round per second.
class FixedStateSource {
 public:
  explicit FixedStateSource(TwoQubitDensity rho, BellKind sign = BellKind::plus) : rho_(std::move(rho)), sign_(sign) {}
  HeraldedState operator()(Rng&) {
    time_ += 1.0;
    return {&rho_, sign_, time_};
  }

 private:
  TwoQubitDensity rho_;
  BellKind sign_;
  double time_ = 0.0;
};

template <typename Source>
std::vector<RoundRecord> run_rounds(Source&& source, const BasisDistribution& basis, std::size_t n_rounds,
                                    Rng& rng) {
  if (n_rounds < 1) throw std::invalid_argument("number of rounds must be >= 1");
  basis.validate();
  std::vector<RoundRecord> out;
  out.reserve(n_rounds);
  std::array<std::pair<MeasurementSetting, MeasurementSetting>, 6> settings;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 3; ++y) settings[static_cast<std::size_t>(3 * x + y)] = settings_for(x, y);
  for (std::size_t i = 0; i < n_rounds; ++i) {
    const HeraldedState h = source(rng);
    const auto xy = static_cast<int>(discrete(rng, basis.p));
    const auto& [sa, sb] = settings[static_cast<std::size_t>(xy)];
    const auto [a, b] = measure_pair(*h.rho, sa, sb, rng);
    out.push_back({xy / 3, xy % 3, a, b, h.time, h.sign});
  }
  return out;
}

// ---- estimation ------------------------------------------------------------

/// Outcome counts per (x, y, a, b) cell after remapping. Counts are doubles so
/// that exact Born probabilities can stand in for sampled data.
struct OutcomeCounts {
  std::array<double, 24> n{};

  static std::size_t index(int x, int y, int a, int b) {
    return static_cast<std::size_t>(((3 * x + y) * 2 + a) * 2 + b);
  }
  double& at(int x, int y, int a, int b) { return n[index(x, y, a, b)]; }
  double at(int x, int y, int a, int b) const { return n[index(x, y, a, b)]; }
  double cell_total(int x, int y) const {
    return at(x, y, 0, 0) + at(x, y, 0, 1) + at(x, y, 1, 0) + at(x, y, 1, 1);
  }

  OutcomeCounts& operator+=(const OutcomeCounts& o) {
    for (std::size_t i = 0; i < n.size(); ++i) n[i] += o.n[i];
    return *this;
  }
};

inline OutcomeCounts count_outcomes(const std::vector<RoundRecord>& records,
                                    std::optional<BellKind> only_sign = std::nullopt) {
  OutcomeCounts c;
  for (const auto& r : records) {
    if (only_sign && r.herald_sign != *only_sign) continue;
    const auto [a, b] = remapped_outcomes(r);
    c.at(r.x, r.y, a, b) += 1.0;
  }
  return c;
}

/// Infinite-sample counts: Born probabilities of the given state and herald
/// sign, weighted by the input distribution, after the same remapping.
inline OutcomeCounts analytic_counts(const TwoQubitDensity& rho, BellKind sign, const BasisDistribution& basis,
                                     double total = 1.0) {
  OutcomeCounts c;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 3; ++y) {
      const double w = basis.prob(x, y) * total;
      if (w == 0.0) continue;
      const auto [sa, sb] = settings_for(x, y);
      const auto p = joint_probabilities(rho, sa, sb);
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const RoundRecord raw{x, y, a, b, 0.0, sign};
          const auto [ra, rb] = remapped_outcomes(raw);
          c.at(x, y, ra, rb) += w * p[static_cast<std::size_t>(2 * a + b)];
        }
    }
  return c;
}

struct ChshEstimate {
  double S = 0.0;
  double std_error = 0.0;
  std::array<double, 4> correlators{};  // E00, E01, E10, E11
  OutcomeCounts counts;
};

/// Correlators E(x, y) = P(a = b) - P(a != b) on the Bell cells, combined into
/// the CHSH value. Per-cell variance 4 p (1 - p) / n with add-one smoothing of
/// p, summed in quadrature.
inline ChshEstimate estimate_chsh(const OutcomeCounts& c) {
  ChshEstimate est;
  est.counts = c;
  double var = 0.0;
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) {
      const double n = c.cell_total(x, y);
      if (!(n > 0.0))
        throw std::invalid_argument("CHSH estimate: no rounds in Bell cell (" + std::to_string(x) + "," +
                                    std::to_string(y) + ")");
      const double same = c.at(x, y, 0, 0) + c.at(x, y, 1, 1);
      est.correlators[static_cast<std::size_t>(2 * x + y)] = (2.0 * same - n) / n;
      const double p = (same + 1.0) / (n + 2.0);
      var += 4.0 * p * (1.0 - p) / n;
    }
  est.S = chsh_from_correlators(est.correlators);
  est.std_error = std::sqrt(var);
  return est;
}

inline ChshEstimate estimate_chsh(const std::vector<RoundRecord>& records,
                                  std::optional<BellKind> only_sign = std::nullopt) {
  return estimate_chsh(count_outcomes(records, only_sign));
}

struct QberEstimate {
  double Q = 0.0;
  double std_error = 0.0;
  double n = 0.0;
};

inline QberEstimate estimate_qber(const OutcomeCounts& c) {
  const double n = c.cell_total(0, 2);
  if (!(n > 0.0)) throw std::invalid_argument("QBER estimate: no key rounds");
  const double errors = c.at(0, 2, 0, 1) + c.at(0, 2, 1, 0);
  const double p = (errors + 1.0) / (n + 2.0);
  return {errors / n, std::sqrt(p * (1.0 - p) / n), n};
}

inline QberEstimate estimate_qber(const std::vector<RoundRecord>& records,
                                  std::optional<BellKind> only_sign = std::nullopt) {
  return estimate_qber(count_outcomes(records, only_sign));
}

// ---- key rates ---------------------------------------------------------------

inline double binary_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("binary entropy argument must lie in [0, 1]");
  if (p == 0.0 || p == 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

/// CHSH-based asymptotic rate per key round:
///   r = 1 - h((1 + sqrt(S^2 / 4 - 1)) / 2) - f h(Q), clamped at 0.
inline double asymptotic_rate(double S, double Q, double f = 1.0) {
  if (S > kTsirelson + 1e-9) throw std::invalid_argument("CHSH value above the Tsirelson bound");
  if (!(Q >= 0.0 && Q <= 1.0)) throw std::invalid_argument("QBER must lie in [0, 1]");
  if (!(f >= 1.0)) throw std::invalid_argument("reconciliation efficiency must be >= 1");
  double eve = 1.0;
  if (S > 2.0) {
    const double s = std::min(S, kTsirelson);
    eve = binary_entropy((1.0 + std::sqrt(std::max(0.0, s * s / 4.0 - 1.0))) / 2.0);
  }
  return std::max(0.0, 1.0 - eve - f * binary_entropy(Q));
}

struct KeyParams {
  double recon_efficiency = 1.122;
  double epsilon = 1e-5;
  double finite_correction = 0.0;  // nu
  BasisDistribution basis;

  void validate() const {
    if (!(recon_efficiency >= 1.0)) throw std::invalid_argument("diqkd.recon_efficiency must be >= 1");
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("diqkd.epsilon must lie in (0, 1)");
    if (!(finite_correction >= 0.0)) throw std::invalid_argument("diqkd.finite_correction must be >= 0");
    basis.validate();
  }

  friend bool operator==(const KeyParams&, const KeyParams&) = default;
};

struct KeyResult {
  double asymptotic_rate = 0.0;  // per key round
  double p_key = 0.0;
  std::uint64_t n_rounds = 0;
  std::uint64_t ell = 0;
  double rate_per_round = 0.0;   // ell / N
};

/// ell = max(0, floor(N p_key r - nu sqrt(N log2(1 / eps)))).
inline KeyResult finite_key_length(std::uint64_t n_rounds, const KeyParams& kp, double S, double Q) {
  if (n_rounds < 1) throw std::invalid_argument("number of rounds must be >= 1");
  kp.validate();
  KeyResult res;
  res.n_rounds = n_rounds;
  res.p_key = kp.basis.p_key();
  res.asymptotic_rate = asymptotic_rate(S, Q, kp.recon_efficiency);
  const double n = static_cast<double>(n_rounds);
  const double raw =
      n * res.p_key * res.asymptotic_rate - kp.finite_correction * std::sqrt(n * std::log2(1.0 / kp.epsilon));
  res.ell = raw > 0.0 ? static_cast<std::uint64_t>(std::floor(raw)) : 0;
  res.rate_per_round = static_cast<double>(res.ell) / n;
  return res;
}

/// Coefficient nu for which finite_key_length(N, S, Q) lands on `target_ell`
/// (centred within the floor).
inline double calibrate_finite_correction(std::uint64_t n_rounds, const KeyParams& kp, double S, double Q,
                                          double target_ell) {
  const double n = static_cast<double>(n_rounds);
  const double raw = n * kp.basis.p_key() * asymptotic_rate(S, Q, kp.recon_efficiency);
  const double nu = (raw - (target_ell + 0.5)) / std::sqrt(n * std::log2(1.0 / kp.epsilon));
  if (nu < 0.0) throw std::domain_error("target key length exceeds the asymptotic yield");
  return nu;
}

}  // namespace ionlink
