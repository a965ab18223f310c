#pragma once

// Two-qubit density-matrix algebra for a pair of remote memory qubits.
//
// Basis ordering, shared by every module:
//   index 0: |dd>   index 1: |du>   index 2: |ud>   index 3: |uu>
// with the first letter the Alice ion and the second the Bob ion. |d> is the
// +1 eigenstate of Z and maps to measurement outcome bit 0.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>

#include "ionlink/random.hpp"

namespace ionlink {

using Complex = std::complex<double>;
using Matrix4 = Eigen::Matrix4cd;
using Matrix2 = Eigen::Matrix2cd;

inline constexpr double kHermitianTol = 1e-12;
inline constexpr double kTraceTol = 1e-12;
inline constexpr double kPsdTol = 1e-10;
inline constexpr double kTsirelson = 2.0 * std::numbers::sqrt2;

class InvalidState : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class BellKind { plus, minus };

inline const char* to_string(BellKind k) { return k == BellKind::plus ? "plus" : "minus"; }

inline BellKind bell_kind_from_string(const std::string& s) {
  if (s == "plus" || s == "+") return BellKind::plus;
  if (s == "minus" || s == "-") return BellKind::minus;
  throw std::invalid_argument("unknown Bell kind '" + s + "' (expected plus|minus)");
}

/// Single-qubit observable cos(theta) Z + sin(theta) X. The angle is wrapped
/// into [-pi, pi).
class MeasurementSetting {
 public:
  constexpr MeasurementSetting() = default;
  explicit MeasurementSetting(double theta) : theta_(wrap(theta)) {}

  static MeasurementSetting z() { return MeasurementSetting{0.0}; }
  static MeasurementSetting x() { return MeasurementSetting{std::numbers::pi / 2}; }

  double angle() const { return theta_; }

  Matrix2 observable() const {
    Matrix2 m;
    const double c = std::cos(theta_), s = std::sin(theta_);
    m << c, s, s, -c;
    return m;
  }

  friend bool operator==(const MeasurementSetting&, const MeasurementSetting&) = default;

 private:
  static double wrap(double t) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double w = std::fmod(t + std::numbers::pi, two_pi);
    if (w < 0) w += two_pi;
    return w - std::numbers::pi;
  }

  double theta_ = 0.0;
};

enum class Pauli { I, X, Y, Z };

inline Matrix2 pauli_matrix(Pauli p) {
  Matrix2 m;
  switch (p) {
    case Pauli::I: m << 1, 0, 0, 1; break;
    case Pauli::X: m << 0, 1, 1, 0; break;
    case Pauli::Y: m << 0, Complex(0, -1), Complex(0, 1), 0; break;
    case Pauli::Z: m << 1, 0, 0, -1; break;
  }
  return m;
}

inline Matrix4 kron(const Matrix2& a, const Matrix2& b) {
  Matrix4 out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) out(2 * i + k, 2 * j + l) = a(i, j) * b(k, l);
  return out;
}

/// Hermitian, unit-trace, positive semidefinite 4x4 matrix. Every
/// constructor validates; an invalid matrix is an `InvalidState` error and is
/// never repaired.
class TwoQubitDensity {
 public:
  explicit TwoQubitDensity(const Matrix4& m) : m_(m) { validate(); }

  static TwoQubitDensity maximally_mixed() {
    return TwoQubitDensity(Matrix4::Identity() / 4.0);
  }

  /// Projector onto a computational basis state (index per the ordering above).
  static TwoQubitDensity basis(int index) {
    if (index < 0 || index > 3) throw std::out_of_range("basis index must be in [0, 3]");
    Matrix4 m = Matrix4::Zero();
    m(index, index) = 1.0;
    return TwoQubitDensity(m);
  }

  static TwoQubitDensity from_pure(const Eigen::Vector4cd& psi) {
    const double n = psi.squaredNorm();
    if (!(n > 0.0)) throw InvalidState("zero state vector");
    return TwoQubitDensity(psi * psi.adjoint() / n);
  }

  /// Product state rho_a (x) rho_b of two single-qubit density matrices.
  static TwoQubitDensity product(const Matrix2& rho_a, const Matrix2& rho_b) {
    return TwoQubitDensity(kron(rho_a, rho_b));
  }

  const Matrix4& matrix() const { return m_; }
  Complex entry(int i, int j) const { return m_(i, j); }
  Complex trace() const { return m_.trace(); }

  Eigen::Vector4d eigenvalues() const {
    Eigen::SelfAdjointEigenSolver<Matrix4> es(m_, Eigen::EigenvaluesOnly);
    return es.eigenvalues();
  }

  double purity() const { return (m_ * m_).trace().real(); }

 private:
  void validate() const {
    if (!m_.allFinite()) throw InvalidState("density matrix has non-finite entries");
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        if (std::abs(m_(i, j) - std::conj(m_(j, i))) > kHermitianTol)
          throw InvalidState("density matrix is not Hermitian");
    const Complex tr = m_.trace();
    if (std::abs(tr - Complex(1.0, 0.0)) > kTraceTol)
      throw InvalidState("density matrix trace is " + std::to_string(tr.real()) + ", expected 1");
    if (eigenvalues().minCoeff() < -kPsdTol)
      throw InvalidState("density matrix has a negative eigenvalue");
  }

  Matrix4 m_;
};

namespace detail {

inline void require_unit_interval(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0))
    throw std::invalid_argument(std::string(name) + " must lie in [0, 1], got " + std::to_string(v));
}

inline int alice_bit(int index) { return index >> 1; }

}  // namespace detail

/// Pure projector onto (|du> +/- e^{i dphi} |ud>) / sqrt(2).
inline TwoQubitDensity bell_state(BellKind kind, double dphi = 0.0) {
  Eigen::Vector4cd psi = Eigen::Vector4cd::Zero();
  const double sign = kind == BellKind::plus ? 1.0 : -1.0;
  psi(1) = 1.0 / std::numbers::sqrt2;
  psi(2) = sign * std::polar(1.0, dphi) / std::numbers::sqrt2;
  return TwoQubitDensity(psi * psi.adjoint());
}

/// Overlap Tr(rho * pure). The second argument must be a rank-1 projector.
inline double fidelity(const TwoQubitDensity& rho, const TwoQubitDensity& pure) {
  if (pure.eigenvalues().maxCoeff() < 1.0 - 1e-9)
    throw std::invalid_argument("fidelity target must be a pure (rank-1) state");
  return (rho.matrix() * pure.matrix()).trace().real();
}

inline double expectation(const TwoQubitDensity& rho, const Matrix4& op) {
  return (rho.matrix() * op).trace().real();
}

inline double pauli_expectation(const TwoQubitDensity& rho, Pauli a, Pauli b) {
  return expectation(rho, kron(pauli_matrix(a), pauli_matrix(b)));
}

inline double pauli_expectation(const TwoQubitDensity& rho, const MeasurementSetting& a,
                                const MeasurementSetting& b) {
  return expectation(rho, kron(a.observable(), b.observable()));
}

/// Random-phase channel on the Alice |u> component with mean phasor lambda.
/// Coherences between basis states that differ in the Alice qubit (among them
/// the |du>-|ud> coherence) are scaled by lambda; populations are untouched.
inline TwoQubitDensity apply_dephasing(const TwoQubitDensity& rho, double lambda) {
  detail::require_unit_interval(lambda, "dephasing lambda");
  Matrix4 m = rho.matrix();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if (detail::alice_bit(i) != detail::alice_bit(j)) m(i, j) *= lambda;
  return TwoQubitDensity(m);
}

inline TwoQubitDensity apply_depolarizing(const TwoQubitDensity& rho, double p) {
  detail::require_unit_interval(p, "depolarizing probability");
  return TwoQubitDensity((1.0 - p) * rho.matrix() + p * Matrix4::Identity() / 4.0);
}

/// w * rho1 + (1 - w) * rho2.
inline TwoQubitDensity mix(const TwoQubitDensity& rho1, const TwoQubitDensity& rho2, double w) {
  detail::require_unit_interval(w, "mixture weight");
  return TwoQubitDensity(w * rho1.matrix() + (1.0 - w) * rho2.matrix());
}

/// Weighted Pauli channel: rho -> sum_k w_k P_k rho P_k with P_k two-qubit
/// Pauli products and weights summing to one.
inline TwoQubitDensity apply_pauli_channel(
    const TwoQubitDensity& rho, std::span<const std::pair<std::array<Pauli, 2>, double>> terms) {
  Matrix4 out = Matrix4::Zero();
  double total = 0.0;
  for (const auto& [ops, w] : terms) {
    if (w < 0.0) throw std::invalid_argument("Pauli channel weight must be non-negative");
    const Matrix4 p = kron(pauli_matrix(ops[0]), pauli_matrix(ops[1]));
    out += w * p * rho.matrix() * p;
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("Pauli channel weights must sum to 1");
  return TwoQubitDensity(out);
}

/// Born-rule joint distribution of the outcome bits for the two settings,
/// indexed 2*a + b. Bit 0 is the +1 eigenvalue.
inline std::array<double, 4> joint_probabilities(const TwoQubitDensity& rho, const MeasurementSetting& a,
                                                 const MeasurementSetting& b) {
  const Matrix2 id = Matrix2::Identity();
  const Matrix2 oa = a.observable(), ob = b.observable();
  std::array<double, 4> p{};
  for (int bit_a = 0; bit_a < 2; ++bit_a) {
    const Matrix2 pa = (id + (bit_a == 0 ? 1.0 : -1.0) * oa) / 2.0;
    for (int bit_b = 0; bit_b < 2; ++bit_b) {
      const Matrix2 pb = (id + (bit_b == 0 ? 1.0 : -1.0) * ob) / 2.0;
      p[2 * bit_a + bit_b] = std::max(0.0, expectation(rho, kron(pa, pb)));
    }
  }
  return p;
}

struct OutcomePair {
  int a = 0;
  int b = 0;
};

inline OutcomePair measure_pair(const TwoQubitDensity& rho, const MeasurementSetting& a,
                                const MeasurementSetting& b, Rng& rng) {
  const auto p = joint_probabilities(rho, a, b);
  const auto k = static_cast<int>(discrete(rng, p));
  return {k >> 1, k & 1};
}

struct ChshSettings {
  MeasurementSetting a0, a1, b0, b1;

  /// a0 = Z, a1 = X, b0 = +pi/4, b1 = -pi/4.
  static ChshSettings textbook() {
    using std::numbers::pi;
    return {MeasurementSetting{0.0}, MeasurementSetting{pi / 2}, MeasurementSetting{pi / 4},
            MeasurementSetting{-pi / 4}};
  }
};

/// CHSH value from the four correlators {E00, E01, E10, E11}.
///
/// Takes the largest |.| over the four equivalent forms of the expression
/// (the minus sign placed on each correlator in turn). The fixed form
/// E00 + E01 + E10 - E11 vanishes for |psi+> at the textbook angles because
/// its correlations depend on theta_a + theta_b; the symmetric form reports
/// the violation for either herald sign without a frame convention.
inline double chsh_from_correlators(const std::array<double, 4>& e) {
  const double total = e[0] + e[1] + e[2] + e[3];
  double best = 0.0;
  for (double ek : e) best = std::max(best, std::abs(total - 2.0 * ek));
  return best;
}

inline std::array<double, 4> chsh_correlators(const TwoQubitDensity& rho, const ChshSettings& s) {
  return {pauli_expectation(rho, s.a0, s.b0), pauli_expectation(rho, s.a0, s.b1),
          pauli_expectation(rho, s.a1, s.b0), pauli_expectation(rho, s.a1, s.b1)};
}

inline double chsh_value(const TwoQubitDensity& rho, const ChshSettings& s) {
  return chsh_from_correlators(chsh_correlators(rho, s));
}

}  // namespace ionlink
