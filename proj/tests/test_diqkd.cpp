#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "ionlink/calibration.hpp"
#include "ionlink/diqkd.hpp"
#include "support/fixtures.hpp"
#include "support/random_states.hpp"
#include "support/stats.hpp"

using namespace ionlink;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
using std::numbers::pi;

namespace {

TwoQubitDensity calibrated_state(const ScenarioConfig& c, BellKind sign) {
  ProtocolParams p = c.protocol;
  p.sign = sign;
  return noisy_heralded_state(p, c.link);
}

/// Pooled infinite-sample statistics of a heralded source with random sign.
std::pair<double, double> analytic_pooled(const ScenarioConfig& c) {
  OutcomeCounts counts;
  for (auto s : {BellKind::plus, BellKind::minus})
    counts += analytic_counts(calibrated_state(c, s), s, c.diqkd.key.basis, 0.5);
  return {estimate_chsh(counts).S, estimate_qber(counts).Q};
}

}  // namespace

TEST_CASE("binary_entropy", "[diqkd]") {
  CHECK(binary_entropy(0.5) == 1.0);
  CHECK(binary_entropy(0.0) == 0.0);
  CHECK(binary_entropy(1.0) == 0.0);
  CHECK_THAT(binary_entropy(0.036), WithinAbs(0.2237, 1e-4));
  CHECK_THROWS_AS(binary_entropy(1.1), std::invalid_argument);
}

TEST_CASE("asymptotic_rate", "[diqkd]") {
  CHECK_THAT(asymptotic_rate(2.5758, 0.0360, 1.0), WithinAbs(0.326, 0.002));
  CHECK_THAT(asymptotic_rate(2.504, 0.069, 1.0), WithinAbs(0.099, 0.003));
  CHECK_THAT(asymptotic_rate(kTsirelson, 0.0, 1.0), WithinAbs(1.0, 1e-12));
  for (double q : {0.0, 0.05, 0.2}) CHECK(asymptotic_rate(2.0, q, 1.0) == 0.0);
  CHECK(asymptotic_rate(1.5, 0.0, 1.0) == 0.0);
  CHECK_THROWS_AS(asymptotic_rate(2.9, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(asymptotic_rate(2.5, 0.0, 0.9), std::invalid_argument);
}

TEST_CASE("asymptotic_rate monotonicity on grids", "[diqkd][property]") {
  for (double q = 0.0; q <= 0.1; q += 0.01) {
    double prev = -1.0;
    for (double s = 2.0; s <= kTsirelson; s += 0.01) {
      const double r = asymptotic_rate(s, q, 1.0);
      REQUIRE(r >= prev);
      prev = r;
    }
  }
  for (double s = 2.3; s <= 2.8; s += 0.05) {
    double prev = 2.0;
    for (double q = 0.0; q <= 0.2; q += 0.005) {
      const double r = asymptotic_rate(s, q, 1.0);
      REQUIRE(r <= prev);
      prev = r;
    }
    prev = 2.0;
    for (double f = 1.0; f <= 1.5; f += 0.02) {
      const double r = asymptotic_rate(s, 0.03, f);
      REQUIRE(r <= prev);
      prev = r;
    }
  }
}

TEST_CASE("settings_for", "[diqkd]") {
  const auto [ka, kb] = settings_for(0, 2);
  CHECK(ka == kb);
  const auto [a, b] = settings_for(0, 0);
  CHECK_THAT(std::abs(a.angle() - b.angle()), WithinAbs(pi / 4, 1e-15));
  CHECK_THAT(chsh_value(bell_state(BellKind::plus), protocol_chsh_settings()), WithinAbs(kTsirelson, 1e-12));
  CHECK_THROWS_AS(settings_for(2, 0), std::invalid_argument);
  CHECK_THROWS_AS(settings_for(0, 3), std::invalid_argument);
}

TEST_CASE("estimate_chsh: hand-computed 8-record fixture", "[diqkd]") {
  // Per cell: (0,0) both equal -> E = +1; (0,1) one equal -> 0;
  // (1,0) both equal -> +1; (1,1) none equal -> -1.
  // Sum = 1; symmetric CHSH = max(|1-2|, |1-0|, |1-2|, |1+2|) = 3.
  std::vector<RoundRecord> r{
      {0, 0, 0, 0}, {0, 0, 1, 1}, {0, 1, 0, 1}, {0, 1, 1, 1},
      {1, 0, 0, 0}, {1, 0, 0, 0}, {1, 1, 0, 1}, {1, 1, 1, 0},
  };
  const auto est = estimate_chsh(r);
  CHECK(est.correlators == std::array<double, 4>{1.0, 0.0, 1.0, -1.0});
  CHECK(est.S == 3.0);
  // Smoothed p = (same + 1) / (n + 2): 3/4, 1/2, 3/4, 1/4; var = sum 4 p (1-p) / 2.
  CHECK_THAT(est.std_error, WithinAbs(std::sqrt(0.375 + 0.5 + 0.375 + 0.375), 1e-15));
  CHECK(est.counts.at(1, 1, 0, 1) == 1.0);

  // Minus heralds flip Alice's x = 1 bit before counting.
  for (auto& rec : r) rec.herald_sign = BellKind::minus;
  const auto flipped = estimate_chsh(r);
  CHECK(flipped.correlators == std::array<double, 4>{1.0, 0.0, -1.0, 1.0});

  r.pop_back();
  r.pop_back();
  CHECK_THROWS_AS(estimate_chsh(r), std::invalid_argument);
}

TEST_CASE("estimate_chsh equals chsh_value on Born probabilities", "[diqkd][property]") {
  auto rng = make_rng(2);
  for (int i = 0; i < 500; ++i) {
    const auto rho = test::random_state(rng);
    const auto est = estimate_chsh(analytic_counts(rho, BellKind::plus, BasisDistribution::uniform()));
    REQUIRE_THAT(est.S, WithinAbs(chsh_value(rho, protocol_chsh_settings()), 1e-12));
    // Minus frame: same as the plus estimator on Z_A rho Z_A.
    const Matrix4 z = kron(pauli_matrix(Pauli::Z), Matrix2::Identity());
    const TwoQubitDensity rotated(z * rho.matrix() * z);
    const auto est_m = estimate_chsh(analytic_counts(rho, BellKind::minus, BasisDistribution::uniform()));
    REQUIRE_THAT(est_m.S, WithinAbs(chsh_value(rotated, protocol_chsh_settings()), 1e-12));
  }
}

TEST_CASE("run_rounds on a perfect psi+", "[diqkd][stochastic]") {
  auto rng = make_rng(10);
  FixedStateSource src(bell_state(BellKind::plus));
  const auto rec = run_rounds(src, BasisDistribution::bell_only(), 100'000, rng);
  REQUIRE(rec.size() == 100'000);
  for (const auto& r : rec) REQUIRE(r.is_bell_round());
  const auto est = estimate_chsh(rec);
  CHECK(std::abs(est.S - kTsirelson) <= 3 * est.std_error);
  CHECK(est.std_error > 0.0);

  FixedStateSource src_key(bell_state(BellKind::plus));
  const auto key = run_rounds(src_key, BasisDistribution::key_only(), 10'000, rng);
  CHECK(estimate_qber(key).Q == 0.0);
  FixedStateSource src_minus(bell_state(BellKind::minus), BellKind::minus);
  const auto key_m = run_rounds(src_minus, BasisDistribution::key_only(), 10'000, rng);
  CHECK(estimate_qber(key_m).Q == 0.0);
}

TEST_CASE("estimate_qber", "[diqkd][stochastic]") {
  auto rng = make_rng(12);
  FixedStateSource mixed(TwoQubitDensity::maximally_mixed());
  const auto rec = run_rounds(mixed, BasisDistribution::key_only(), 10'000, rng);
  const auto q = estimate_qber(rec);
  CHECK(std::abs(q.Q - 0.5) <= 3 * q.std_error);
  CHECK_THROWS_AS(estimate_qber(std::vector<RoundRecord>{{0, 0, 0, 0}}), std::invalid_argument);

  // Calibrated state, no storage: Q within 3 sigma of the Born-rule value.
  const auto& c = test::calibrated();
  const auto rho = calibrated_state(c, BellKind::plus);
  const double analytic = estimate_qber(analytic_counts(rho, BellKind::plus, BasisDistribution::key_only())).Q;
  FixedStateSource src(rho);
  auto rng_cal = make_rng(derive_seed(12, 1));
  const auto cal = estimate_qber(run_rounds(src, BasisDistribution::key_only(), 50'000, rng_cal));
  CHECK(std::abs(cal.Q - analytic) <= 3 * cal.std_error);
}

TEST_CASE("stderr scales as 1/sqrt(n) over nested subsamples", "[diqkd][stochastic][property]") {
  auto rng = make_rng(21);
  FixedStateSource src(mix(bell_state(BellKind::plus), TwoQubitDensity::maximally_mixed(), 0.85));
  const auto all = run_rounds(src, BasisDistribution::uniform(), 640'000, rng);
  double prev_s = 0.0, prev_q = 0.0;
  for (std::size_t n = 10'000; n <= all.size(); n *= 4) {
    const std::vector<RoundRecord> sub(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
    const double s = estimate_chsh(sub).std_error, q = estimate_qber(sub).std_error;
    if (prev_s > 0.0) {
      CHECK_THAT(prev_s / s, WithinRel(2.0, 0.05));
      CHECK_THAT(prev_q / q, WithinRel(2.0, 0.05));
    }
    prev_s = s;
    prev_q = q;
  }
}

TEST_CASE("finite_key_length", "[diqkd]") {
  const auto& kp = test::calibrated().diqkd.key;
  const auto k = finite_key_length(405'145, kp, 2.5758, 0.0360);
  CHECK_THAT(double(k.ell), WithinRel(1917.0, 0.10));
  CHECK(k.ell == 1917);
  CHECK(k.rate_per_round <= k.asymptotic_rate + 1e-9);
  CHECK(finite_key_length(1'000, kp, 2.5758, 0.0360).ell == 0);
  const auto big = finite_key_length(std::uint64_t{1} << 50, kp, 2.5758, 0.0360);
  CHECK_THAT(big.rate_per_round, WithinRel(kp.basis.p_key() * big.asymptotic_rate, 1e-4));
  CHECK_THROWS_AS(finite_key_length(0, kp, 2.5, 0.03), std::invalid_argument);
  KeyParams bad = kp;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(finite_key_length(100, bad, 2.5, 0.03), std::invalid_argument);
}

TEST_CASE("rate_per_round is non-decreasing in N and bounded by the asymptote", "[diqkd][property]") {
  const auto& kp = test::calibrated().diqkd.key;
  double prev = 0.0;
  std::uint64_t prev_ell = 0;
  for (double n = 1e3; n <= 1e12; n *= 1.3) {
    const auto k = finite_key_length(static_cast<std::uint64_t>(n), kp, 2.55, 0.04);
    REQUIRE(k.ell >= prev_ell);
    REQUIRE(k.rate_per_round >= prev - 1e-9);
    REQUIRE(k.rate_per_round <= kp.basis.p_key() * k.asymptotic_rate + 1e-12);
    prev = k.rate_per_round;
    prev_ell = k.ell;
  }
}

TEST_CASE("finite correction calibration reproduces the shipped value", "[diqkd][calibration]") {
  const auto kp = calibrate_key_params(KeyParams{});
  CHECK_THAT(kp.finite_correction, WithinAbs(test::calibrated().diqkd.key.finite_correction, 1e-12));
  CHECK_THAT(kp.basis.p_key(), WithinAbs(1.0 / 6.0, 1e-15));
}

TEST_CASE("end to end: 10 km simulated key run", "[diqkd][stochastic]") {
  const auto& c = test::calibrated();
  auto rng = make_rng(c.seed);
  HeraldedSource src(c.link, c.protocol);
  const auto rec = run_rounds(src, c.diqkd.key.basis, c.diqkd.n_rounds, rng);
  const auto chsh = estimate_chsh(rec);
  const auto qber = estimate_qber(rec);
  const auto [s_true, q_true] = analytic_pooled(c);
  CHECK(std::abs(chsh.S - s_true) <= 3 * chsh.std_error);
  CHECK(std::abs(qber.Q - q_true) <= 3 * qber.std_error);
  // The model sits slightly below the measured S, so only the asymptotic rate is asserted.
  CHECK(asymptotic_rate(chsh.S, qber.Q, 1.0) > 0.0);
  // Per-sign estimates are consistent with each other.
  const auto sp = estimate_chsh(rec, BellKind::plus), sm = estimate_chsh(rec, BellKind::minus);
  CHECK(std::abs(sp.S - sm.S) <= 3 * std::hypot(sp.std_error, sm.std_error));
  for (std::size_t i = 1; i < rec.size(); ++i) REQUIRE(rec[i].time >= rec[i - 1].time);
}

TEST_CASE("end to end: 101 km short run", "[diqkd][stochastic]") {
  const auto& c = test::shipped("default_101km");
  const auto [s_true, q_true] = analytic_pooled(c);
  CHECK(asymptotic_rate(s_true, q_true, 1.0) > 0.0);
  // Spread of S and Q over repeated N = 2,799 runs matches the reported stderr.
  std::vector<double> s_vals, q_vals;
  double s_err = 0.0, q_err = 0.0;
  for (std::uint64_t k = 0; k < 40; ++k) {
    auto rng = make_rng(derive_seed(c.seed, k));
    HeraldedSource src(c.link, c.protocol);
    const auto rec = run_rounds(src, c.diqkd.key.basis, c.diqkd.n_rounds, rng);
    const auto chsh = estimate_chsh(rec);
    const auto q = estimate_qber(rec);
    s_vals.push_back(chsh.S);
    q_vals.push_back(q.Q);
    s_err += chsh.std_error / 40;
    q_err += q.std_error / 40;
  }
  auto mean_sd = [](const std::vector<double>& v) {
    double m = 0, s = 0;
    for (double x : v) m += x;
    m /= double(v.size());
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, std::sqrt(s / double(v.size() - 1))};
  };
  const auto [sm, ssd] = mean_sd(s_vals);
  const auto [qm, qsd] = mean_sd(q_vals);
  CHECK(std::abs(sm - s_true) <= 3 * ssd / std::sqrt(40.0));
  CHECK(std::abs(qm - q_true) <= 3 * qsd / std::sqrt(40.0) + 1e-3);
  CHECK_THAT(ssd, WithinRel(s_err, 0.35));
  CHECK_THAT(qsd, WithinRel(q_err, 0.35));
}

TEST_CASE("round record and basis validation", "[diqkd]") {
  CHECK_THROWS_AS((RoundRecord{2, 0, 0, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((RoundRecord{0, 3, 0, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((RoundRecord{0, 0, 2, 0}.validate()), std::invalid_argument);
  CHECK((RoundRecord{0, 2, 0, 0}.is_key_round()));
  BasisDistribution b;
  b.p[0] = 0.5;
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
}
