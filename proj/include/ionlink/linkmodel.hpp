#pragma once

// Photonic link budget for the two-arm single-photon heralding link.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ionlink {

enum class Arm { A, B };

struct LinkBudget {
  double fibre_coupled_eff_a = 0.026;   // single-photon efficiency into fibre, Alice
  double fibre_coupled_eff_b = 0.028;   // single-photon efficiency into fibre, Bob
  double qfc_chain_eff = 0.28;          // conversion + filtering transmission
  double fibre_length_km = 10.0;        // per arm
  double attenuation_db_per_km = 0.18;
  double detector_eff = 0.90;
  double noise_cps = 9.6;               // per detector
  double gate_window_s = 1.0e-7;
  double attempt_rate_hz = 0.0;         // calibration output
  double duty_cycle = 1.0;
  // Unmodelled per-arm factor closing the gap between the product of the
  // published sub-efficiencies and the measured link efficiency.
  double residual_a = 1.0;
  double residual_b = 1.0;

  void validate() const {
    auto prob = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument(std::string("link.") + name + " must lie in [0, 1]");
    };
    auto nonneg = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw std::invalid_argument(std::string("link.") + name + " must be finite and >= 0");
    };
    prob(fibre_coupled_eff_a, "fibre_coupled_eff_a");
    prob(fibre_coupled_eff_b, "fibre_coupled_eff_b");
    prob(qfc_chain_eff, "qfc_chain_eff");
    prob(detector_eff, "detector_eff");
    prob(duty_cycle, "duty_cycle");
    nonneg(fibre_length_km, "fibre_length_km");
    nonneg(attenuation_db_per_km, "attenuation_db_per_km");
    nonneg(noise_cps, "noise_cps");
    nonneg(attempt_rate_hz, "attempt_rate_hz");
    nonneg(residual_a, "residual_a");
    nonneg(residual_b, "residual_b");
    if (!(gate_window_s > 0.0 && gate_window_s < 1e-5))
      throw std::invalid_argument("link.gate_window_s must lie in (0, 1e-5)");
  }

  friend bool operator==(const LinkBudget&, const LinkBudget&) = default;
};

inline double fibre_transmittance(const LinkBudget& b) {
  return std::pow(10.0, -b.attenuation_db_per_km * b.fibre_length_km / 10.0);
}

/// Product of the arm's efficiencies, excluding the residual factor.
inline double arm_raw_efficiency(const LinkBudget& b, Arm arm) {
  const double coupled = arm == Arm::A ? b.fibre_coupled_eff_a : b.fibre_coupled_eff_b;
  return coupled * b.qfc_chain_eff * fibre_transmittance(b) * b.detector_eff;
}

inline double arm_efficiency(const LinkBudget& b, Arm arm) {
  const double residual = arm == Arm::A ? b.residual_a : b.residual_b;
  const double eta = arm_raw_efficiency(b, arm) * residual;
  if (eta > 1.0) throw std::domain_error("arm efficiency exceeds 1; check link.residual_*");
  return eta;
}

/// Per-attempt herald probability: alpha (eta_A + eta_B) (1 - alpha eta_mean / 2).
/// The bracket removes the double-emission events that do not herald a single
/// excitation; the expression is linear in alpha to first order.
inline double herald_prob(const LinkBudget& b, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
  const double sum = arm_efficiency(b, Arm::A) + arm_efficiency(b, Arm::B);
  return std::clamp(alpha * sum * (1.0 - alpha * sum / 4.0), 0.0, 1.0);
}

/// Heralded events per second.
inline double expected_rate(const LinkBudget& b, double alpha) {
  return b.attempt_rate_hz * b.duty_cycle * herald_prob(b, alpha);
}

inline double mean_generation_time(const LinkBudget& b, double alpha) {
  const double r = expected_rate(b, alpha);
  return r > 0.0 ? 1.0 / r : std::numeric_limits<double>::infinity();
}

/// Probability that an attempt produces a noise click in either detector
/// during its gate.
inline double false_herald_prob(const LinkBudget& b) {
  return std::clamp(2.0 * b.noise_cps * b.gate_window_s, 0.0, 1.0);
}

/// Per-gate signal-to-noise ratio. Infinite when there is no noise.
inline double snr(const LinkBudget& b, double alpha) {
  const double noise = false_herald_prob(b);
  const double signal = herald_prob(b, alpha);
  if (noise == 0.0) return signal == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return signal / noise;
}

/// Fraction of heralds that are spurious at this alpha. A noise click only
/// counts when the attempt did not already herald.
inline double spurious_fraction(const LinkBudget& b, double alpha) {
  const double signal = herald_prob(b, alpha);
  const double noise = false_herald_prob(b) * (1.0 - signal);
  if (noise + signal == 0.0) return 0.0;
  return noise / (signal + noise);
}

struct RateCurve {
  std::vector<double> alpha;
  std::vector<double> rate;
};

inline RateCurve rate_curve(const LinkBudget& b, const std::vector<double>& alphas) {
  RateCurve c;
  c.alpha = alphas;
  c.rate.reserve(alphas.size());
  for (double a : alphas) c.rate.push_back(expected_rate(b, a));
  return c;
}

// ---- calibration -----------------------------------------------------------

/// Sets residual_a / residual_b so that both arms reach `target_eff` at the
/// budget's current fibre length.
inline LinkBudget calibrate_residuals(LinkBudget b, double target_eff) {
  b.residual_a = target_eff / arm_raw_efficiency(b, Arm::A);
  b.residual_b = target_eff / arm_raw_efficiency(b, Arm::B);
  return b;
}

/// Solves attempt_rate_hz so that expected_rate(alpha) equals `target_rate`.
inline LinkBudget calibrate_attempt_rate(LinkBudget b, double alpha, double target_rate) {
  const double per_attempt = b.duty_cycle * herald_prob(b, alpha);
  if (per_attempt <= 0.0) throw std::domain_error("cannot calibrate attempt rate: zero herald probability");
  b.attempt_rate_hz = target_rate / per_attempt;
  return b;
}

}  // namespace ionlink
