#pragma once

// Heralded two-node state with its error model, and the per-source
// infidelity budget.
//
// Sources: (1) double excitation inherent to the single-photon scheme,
// (2) ion operation/decoherence errors, (3) spurious heralds from conversion
// and detector noise, (4) residual optical phase fluctuations, (5) spin-motion
// entanglement from the emission recoil.

#include <optional>
#include <stdexcept>
#include <string>

#include "ionlink/linkmodel.hpp"
#include "ionlink/numeric.hpp"
#include "ionlink/qstate.hpp"

namespace ionlink {

struct ProtocolParams {
  double alpha = 0.025;
  double dphi = 0.0;
  BellKind sign = BellKind::plus;
  double phase_contrast = 0.986;
  double motional_visibility = 1.0;
  double ion_depolarizing = 0.0;
  // Probability that a herald was spurious. Unset means "derive from the link
  // budget".
  std::optional<double> false_herald_weight;

  void validate() const {
    auto unit = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument(std::string("protocol.") + name + " must lie in [0, 1]");
    };
    if (!(alpha >= 0.0 && alpha <= 0.5)) throw std::invalid_argument("protocol.alpha must lie in [0, 0.5]");
    if (!std::isfinite(dphi)) throw std::invalid_argument("protocol.dphi must be finite");
    unit(phase_contrast, "phase_contrast");
    unit(motional_visibility, "motional_visibility");
    unit(ion_depolarizing, "ion_depolarizing");
    if (false_herald_weight) unit(*false_herald_weight, "false_herald_weight");
  }

  friend bool operator==(const ProtocolParams&, const ProtocolParams&) = default;
};

/// (1 - alpha) |psi+-><psi+-| + alpha |dd><dd|.
inline TwoQubitDensity ideal_heralded_state(double alpha, double dphi, BellKind sign) {
  detail::require_unit_interval(alpha, "alpha");
  Matrix4 m = (1.0 - alpha) * bell_state(sign, dphi).matrix();
  m(0, 0) += alpha;
  return TwoQubitDensity(m);
}

/// State left behind by a noise click: no photon was consumed, so each ion
/// independently sits in |u> with probability 1 - alpha and |d> with alpha.
inline TwoQubitDensity false_herald_state(double alpha, double /*dphi*/ = 0.0) {
  detail::require_unit_interval(alpha, "alpha");
  Matrix2 single = Matrix2::Zero();
  single(0, 0) = alpha;
  single(1, 1) = 1.0 - alpha;
  return TwoQubitDensity::product(single, single);
}

inline double combined_visibility(const ProtocolParams& p) {
  return p.phase_contrast * p.motional_visibility;
}

/// Fixed composition order: ideal state -> dephasing (phase contrast x
/// motional visibility) -> depolarizing -> mixture with the false-herald
/// state. An unset false_herald_weight counts as zero.
inline TwoQubitDensity noisy_heralded_state(const ProtocolParams& p) {
  p.validate();
  auto rho = ideal_heralded_state(p.alpha, p.dphi, p.sign);
  rho = apply_dephasing(rho, combined_visibility(p));
  rho = apply_depolarizing(rho, p.ion_depolarizing);
  const double w = p.false_herald_weight.value_or(0.0);
  return mix(false_herald_state(p.alpha, p.dphi), rho, w);
}

/// Fills an unset false_herald_weight from the budget's spurious fraction.
inline ProtocolParams resolve_false_herald_weight(ProtocolParams p, const LinkBudget& b) {
  if (!p.false_herald_weight) p.false_herald_weight = spurious_fraction(b, p.alpha);
  return p;
}

inline TwoQubitDensity noisy_heralded_state(const ProtocolParams& p, const LinkBudget& b) {
  return noisy_heralded_state(resolve_false_herald_weight(p, b));
}

inline double heralded_fidelity(const ProtocolParams& p) {
  return fidelity(noisy_heralded_state(p), bell_state(p.sign, p.dphi));
}

struct ErrorBudget {
  double protocol = 0.0;
  double ion = 0.0;
  double noise_herald = 0.0;
  double phase = 0.0;
  double motion = 0.0;
  double total_infidelity = 0.0;
  // total_infidelity minus the sum of the five contributions (cross terms).
  double residual = 0.0;

  double sum() const { return protocol + ion + noise_herald + phase + motion; }
};

/// One-factor-at-a-time attribution: each source's contribution is the
/// infidelity it produces when it is the only one switched on. Cross terms
/// between sources land in `residual`.
inline ErrorBudget error_budget(const ProtocolParams& full) {
  const ProtocolParams resolved = [&] {
    ProtocolParams r = full;
    if (!r.false_herald_weight) r.false_herald_weight = 0.0;
    return r;
  }();
  ProtocolParams clean = resolved;
  clean.phase_contrast = 1.0;
  clean.motional_visibility = 1.0;
  clean.ion_depolarizing = 0.0;
  clean.false_herald_weight = 0.0;
  const auto target = bell_state(full.sign, full.dphi);

  // The protocol source is alpha in the ideal state; the false-herald state
  // keeps its own alpha dependence, so it is switched via the weight only.
  auto only = [&](auto&& enable) {
    ProtocolParams q = clean;
    q.alpha = 0.0;
    enable(q);
    auto rho = ideal_heralded_state(q.alpha, q.dphi, q.sign);
    rho = apply_dephasing(rho, combined_visibility(q));
    rho = apply_depolarizing(rho, q.ion_depolarizing);
    rho = mix(false_herald_state(resolved.alpha, q.dphi), rho, *q.false_herald_weight);
    return 1.0 - fidelity(rho, target);
  };

  ErrorBudget eb;
  eb.protocol = only([&](ProtocolParams& q) { q.alpha = resolved.alpha; });
  eb.ion = only([&](ProtocolParams& q) { q.ion_depolarizing = resolved.ion_depolarizing; });
  eb.noise_herald = only([&](ProtocolParams& q) { q.false_herald_weight = resolved.false_herald_weight; });
  eb.phase = only([&](ProtocolParams& q) { q.phase_contrast = resolved.phase_contrast; });
  eb.motion = only([&](ProtocolParams& q) { q.motional_visibility = resolved.motional_visibility; });
  eb.total_infidelity = 1.0 - heralded_fidelity(resolved);
  eb.residual = eb.total_infidelity - eb.sum();
  return eb;
}

inline ErrorBudget error_budget(const ProtocolParams& p, const LinkBudget& b) {
  return error_budget(resolve_false_herald_weight(p, b));
}

/// Solves motional_visibility and ion_depolarizing so that the heralded
/// fidelity at the given link budget equals `target_fidelity`.
///
/// The infidelity left after protocol, phase and noise-herald errors is split
/// between the two ion-related sources: `ion_share` of it goes to
/// depolarizing and the rest to motional visibility.
inline ProtocolParams calibrate_ion_errors(ProtocolParams p, const LinkBudget& b, double target_fidelity,
                                           double ion_share = 0.5) {
  detail::require_unit_interval(ion_share, "ion_share");
  const auto configured_weight = p.false_herald_weight;
  p = resolve_false_herald_weight(p, b);
  p.motional_visibility = 1.0;
  p.ion_depolarizing = 0.0;
  const double base = heralded_fidelity(p);
  const double gap = base - target_fidelity;
  if (gap < 0.0)
    throw std::domain_error("calibration target fidelity exceeds what protocol and photon errors allow");

  const double after_motion = base - (1.0 - ion_share) * gap;
  p.motional_visibility = numeric::find_root(
      [&](double m) {
        ProtocolParams q = p;
        q.motional_visibility = m;
        return heralded_fidelity(q) - after_motion;
      },
      0.0, 1.0);
  p.ion_depolarizing = numeric::find_root(
      [&](double dep) {
        ProtocolParams q = p;
        q.ion_depolarizing = dep;
        return heralded_fidelity(q) - target_fidelity;
      },
      0.0, 1.0);
  p.false_herald_weight = configured_weight;
  return p;
}

}  // namespace ionlink
