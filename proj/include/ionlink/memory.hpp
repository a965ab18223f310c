#pragma once

// Storage-time evolution of a stored entangled pair.
//
// <XX> decays exponentially with the coherence time tau_xx; <ZZ> decays
// linearly (accumulated decoupling-pulse errors) and is clamped at zero.
// Fidelity to |psi+> is estimated from the two observables assuming
// <YY> = <XX>: F = (1 - <ZZ> + 2 <XX>) / 4.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ionlink/numeric.hpp"
#include "ionlink/qstate.hpp"

namespace ionlink {

inline constexpr double kLinkEfficiencyThreshold = 0.83;

class NoCrossing : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MemoryModel {
  double tau_xx = 0.550;          // s
  double xx0 = 1.0;
  double zz0 = -1.0;
  double zz_slope = 0.0;          // 1/s
  double kdd_interval = 5.0e-4;   // s
  double gate_err_a = 6.1e-4;
  double gate_err_b = 5.7e-4;
  double d52_lifetime = 1.16;     // s
  // Time spent in the optical qubit before the transfer to the ground-state
  // storage qubit. tau_xx already covers decay after the transfer.
  double pre_transfer_s = 0.0;

  void validate() const {
    if (!(tau_xx > 0.0)) throw std::invalid_argument("memory.tau_xx must be > 0");
    if (!(std::abs(xx0) <= 1.0)) throw std::invalid_argument("memory.xx0 must satisfy |xx0| <= 1");
    if (!(std::abs(zz0) <= 1.0)) throw std::invalid_argument("memory.zz0 must satisfy |zz0| <= 1");
    if (!(zz_slope >= 0.0)) throw std::invalid_argument("memory.zz_slope must be >= 0");
    if (!(kdd_interval > 0.0)) throw std::invalid_argument("memory.kdd_interval must be > 0");
    if (!(gate_err_a >= 0.0 && gate_err_a <= 1.0)) throw std::invalid_argument("memory.gate_err_a must lie in [0, 1]");
    if (!(gate_err_b >= 0.0 && gate_err_b <= 1.0)) throw std::invalid_argument("memory.gate_err_b must lie in [0, 1]");
    if (!(d52_lifetime > 0.0)) throw std::invalid_argument("memory.d52_lifetime must be > 0");
    if (!(pre_transfer_s >= 0.0)) throw std::invalid_argument("memory.pre_transfer_s must be >= 0");
  }

  friend bool operator==(const MemoryModel&, const MemoryModel&) = default;
};

namespace detail {

inline void require_nonnegative_time(double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("storage time must be >= 0, got " + std::to_string(t));
}

inline double pre_transfer_factor(const MemoryModel& m) {
  return m.pre_transfer_s > 0.0 ? std::exp(-m.pre_transfer_s / m.d52_lifetime) : 1.0;
}

}  // namespace detail

inline double decoherence_rate(const MemoryModel& m) { return 1.0 / m.tau_xx; }

inline double xx_at(const MemoryModel& m, double t) {
  detail::require_nonnegative_time(t);
  return m.xx0 * detail::pre_transfer_factor(m) * std::exp(-t / m.tau_xx);
}

inline double zz_at(const MemoryModel& m, double t) {
  detail::require_nonnegative_time(t);
  const double mag = std::max(0.0, std::abs(m.zz0) * detail::pre_transfer_factor(m) - m.zz_slope * t);
  return m.zz0 < 0.0 ? -mag : mag;
}

/// Time at which <ZZ> reaches zero; infinite without a slope.
inline double zz_clamp_time(const MemoryModel& m) {
  if (m.zz_slope <= 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(m.zz0) * detail::pre_transfer_factor(m) / m.zz_slope;
}

inline double fidelity_at(const MemoryModel& m, double t) {
  return std::clamp((1.0 - zz_at(m, t) + 2.0 * xx_at(m, t)) / 4.0, 0.0, 1.0);
}

/// <ZZ> slope predicted by independent bit flips at every decoupling pulse on
/// both ions. Much larger than any slope consistent with the measured
/// fidelities; kept for comparison only.
inline double naive_zz_slope(const MemoryModel& m) {
  return 2.0 * (m.gate_err_a + m.gate_err_b) / m.kdd_interval;
}

/// Smallest t with fidelity_at(t) == threshold, to 1e-6 s. Throws
/// `NoCrossing` if the fidelity never falls to the threshold.
inline double survival_time(const MemoryModel& m, double threshold) {
  const double f0 = fidelity_at(m, 0.0);
  if (f0 == threshold) return 0.0;
  if (f0 < threshold) throw std::invalid_argument("survival_time: initial fidelity is already below threshold");
  // Walk outwards in coarse steps so the first crossing is bracketed even if
  // the curve is not monotone.
  const double clamp = zz_clamp_time(m);
  const double horizon = (std::isfinite(clamp) ? clamp : 0.0) + 200.0 * m.tau_xx;
  const double step = std::max(std::min(m.tau_xx, clamp) / 64.0, horizon / 1e5);
  double lo = 0.0;
  for (double hi = step; hi <= horizon + step; lo = hi, hi += step) {
    if (fidelity_at(m, hi) <= threshold) {
      return numeric::find_root([&](double t) { return fidelity_at(m, t) - threshold; }, lo, hi, 1e-7);
    }
  }
  throw NoCrossing("fidelity never falls to " + std::to_string(threshold));
}

struct LinkEfficiency {
  double value = 0.0;
  bool above_threshold = false;
};

/// Generation rate times coherence time, compared against the threshold for
/// deterministic delivery.
inline LinkEfficiency quantum_link_efficiency(const MemoryModel& m, double rate) {
  if (!(rate >= 0.0)) throw std::invalid_argument("rate must be >= 0");
  const double v = rate * m.tau_xx;
  return {v, v > kLinkEfficiencyThreshold};
}

/// Bell-diagonal state with <XX> = <YY> = xx0 and <ZZ> = zz0: the stored
/// pair at the start of the decay model.
inline TwoQubitDensity memory_initial_state(const MemoryModel& m) {
  const double x = xx_at(m, 0.0), z = zz_at(m, 0.0);
  const Matrix4 id = Matrix4::Identity();
  const Matrix4 xx = kron(pauli_matrix(Pauli::X), pauli_matrix(Pauli::X));
  const Matrix4 yy = kron(pauli_matrix(Pauli::Y), pauli_matrix(Pauli::Y));
  const Matrix4 zz = kron(pauli_matrix(Pauli::Z), pauli_matrix(Pauli::Z));
  return TwoQubitDensity((id + x * (xx + yy) + z * zz) / 4.0);
}

/// Evolves rho through storage from `t_start` to `t_start + t`.
///
/// Pauli-diagonal map on Alice's qubit, rho -> sum_k w_k P_k rho P_k with
/// P in {I, X, Y, Z} (x) I, chosen so that X- and Y-type correlations shrink by
/// a = exp(-t / tau_xx) and Z-type correlations by b = |zz(t_start + t)| /
/// |zz(t_start)|. Eigenvalues multiply, so storage intervals compose exactly.
///
/// From t_start = 0 the weights are non-negative for every model whose
/// trajectory is physical (a <= (1 + b) / 2), i.e. a genuine channel. A short
/// increment just before the <ZZ> clamp needs a > (1 + b) / 2 and is then not
/// completely positive; it still maps trajectory states to valid states, and
/// any other input that would leave the state space raises `InvalidState`.
inline TwoQubitDensity apply_storage(const TwoQubitDensity& rho, const MemoryModel& m, double t,
                                     double t_start = 0.0) {
  detail::require_nonnegative_time(t);
  detail::require_nonnegative_time(t_start);
  if (t == 0.0) return rho;
  const double a = std::exp(-t / m.tau_xx);
  const double zz_before = std::abs(zz_at(m, t_start));
  const double b = zz_before > 0.0 ? std::abs(zz_at(m, t_start + t)) / zz_before : 1.0;

  const std::array<std::pair<Pauli, double>, 4> weights{{
      {Pauli::I, ((1.0 + b) / 2.0 + a) / 2.0},
      {Pauli::X, (1.0 - b) / 4.0},
      {Pauli::Y, (1.0 - b) / 4.0},
      {Pauli::Z, ((1.0 + b) / 2.0 - a) / 2.0},
  }};
  const Matrix2 id = Matrix2::Identity();
  Matrix4 out = Matrix4::Zero();
  for (const auto& [p, w] : weights) {
    if (w == 0.0) continue;
    const Matrix4 op = kron(pauli_matrix(p), id);
    out += w * op * rho.matrix() * op;
  }
  out = (out + out.adjoint().eval()) / 2.0;
  return TwoQubitDensity(out);
}

}  // namespace ionlink
