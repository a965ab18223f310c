#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ionlink/netsim.hpp"
#include "support/fixtures.hpp"
#include "support/stats.hpp"

using namespace ionlink;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
const ScenarioConfig& cal() { return test::calibrated(); }

ProtocolParams two_pair_params() {
  ProtocolParams p = cal().protocol;
  p.alpha = cal().sim.two_pair_alpha;
  return p;
}

IntervalDistribution calibrated_intervals() { return IntervalDistribution(mean_generation_time(cal().link, 0.17)); }
}  // namespace

TEST_CASE("IntervalDistribution", "[netsim]") {
  CHECK_THROWS_AS(IntervalDistribution(0.0), std::invalid_argument);
  CHECK_THROWS_AS(IntervalDistribution(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(IntervalDistribution(std::numeric_limits<double>::infinity()), std::invalid_argument);
  const IntervalDistribution d(0.45);
  const double mass = numeric::integrate([&](double t) { return d.pdf(t); }, 0.0, 50 * d.mean(), 1e-9).value;
  CHECK_THAT(mass, WithinAbs(1.0, 1e-6));
  CHECK_THAT(d.median(), WithinAbs(0.312, 1e-3));
}

TEST_CASE("sample_interval: mean and median", "[netsim][stochastic]") {
  const IntervalDistribution d(0.45);
  auto rng = make_rng(5);
  const int n = 100'000;
  std::vector<double> xs(n);
  for (auto& x : xs) x = sample_interval(d, rng);
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  CHECK_THAT(mean, WithinRel(0.45, 0.02));
  std::nth_element(xs.begin(), xs.begin() + n / 2, xs.end());
  // Sample-median sd for the exponential: 1 / (2 f(m) sqrt(n)) = mean / sqrt(n).
  CHECK_THAT(xs[n / 2], WithinAbs(d.median(), 3 * 0.45 / std::sqrt(double(n))));
}

TEST_CASE("sample_interval passes a KS test against the exponential", "[netsim][stochastic][property]") {
  const IntervalDistribution d(0.45);
  auto rng = make_rng(1234);
  std::vector<double> xs(10'000);
  for (auto& x : xs) x = sample_interval(d, rng);
  CHECK(test::ks_test(xs, [&](double t) { return d.cdf(t); }).p_value > 0.01);
}

TEST_CASE("KS helper rejects a wrong distribution", "[netsim][stochastic]") {
  const IntervalDistribution d(0.45);
  const IntervalDistribution wrong(0.5);
  auto rng = make_rng(4321);
  std::vector<double> xs(10'000);
  for (auto& x : xs) x = sample_interval(d, rng);
  CHECK(test::ks_test(xs, [&](double t) { return wrong.cdf(t); }).p_value < 0.01);
}

TEST_CASE("weighted_average_fidelity: constant fidelity", "[netsim]") {
  MemoryModel flat;
  flat.tau_xx = std::numeric_limits<double>::infinity();
  flat.xx0 = 0.7;
  flat.zz0 = -0.9;
  const double c = fidelity_at(flat, 0.0);
  for (double w : {0.1, 0.45, 3.0, kInfiniteWindow})
    CHECK_THAT(weighted_average_fidelity(flat, IntervalDistribution(0.45), w), WithinAbs(c, 1e-9));
}

TEST_CASE("weighted_average_fidelity: calibrated anchors", "[netsim]") {
  const auto d = calibrated_intervals();
  const auto& m = cal().memory;
  CHECK_THAT(weighted_average_fidelity(m, d, 0.45), WithinAbs(0.668, 0.02));
  CHECK_THAT(weighted_average_fidelity(m, d, kInfiniteWindow), WithinAbs(0.578, 0.02));
  CHECK_THAT(weighted_average_fidelity(m, d, kInfiniteWindow), WithinAbs(weighted_average_fidelity_closed_form(m, d), 1e-6));
  CHECK_THROWS_AS(weighted_average_fidelity(m, d, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(weighted_average_fidelity(m, d, -1.0), std::invalid_argument);
}

TEST_CASE("weighted_average_fidelity is non-increasing in the window", "[netsim][property]") {
  const auto d = calibrated_intervals();
  double prev = 2.0;
  for (double w = 0.01; w < 6.0; w *= 1.25) {
    const double f = weighted_average_fidelity(cal().memory, d, w);
    REQUIRE(f <= prev + 1e-9);
    prev = f;
  }
  CHECK(weighted_average_fidelity(cal().memory, d, kInfiniteWindow) <= prev + 1e-9);
}

TEST_CASE("two-pair experiment: zero decay keeps the initial fidelity", "[netsim]") {
  MemoryModel frozen;
  frozen.tau_xx = std::numeric_limits<double>::infinity();
  frozen.xx0 = 0.8;
  frozen.zz0 = -0.9;
  auto rng = make_rng(3);
  const auto st = run_two_pair_experiment(cal().link, two_pair_params(), frozen, 1'000, rng);
  // Equal up to summation rounding over identical samples.
  CHECK_THAT(st.mean_fidelity, WithinAbs(fidelity_at(frozen, 0.0), 1e-14));
  CHECK(st.min_fidelity == st.max_fidelity);
}

TEST_CASE("two-pair experiment: calibrated Monte Carlo vs quadrature", "[netsim][stochastic]") {
  auto rng = make_rng(cal().seed);
  const auto st = run_two_pair_experiment(cal().link, two_pair_params(), cal().memory, 100'000, rng);
  const double quad = weighted_average_fidelity(cal().memory, calibrated_intervals(), kInfiniteWindow);
  CHECK_THAT(st.mean_fidelity, WithinAbs(0.578, 0.01));
  CHECK(std::abs(st.mean_fidelity - quad) <= 3 * st.std_error);
  CHECK(st.mean_fidelity >= st.min_fidelity);
  CHECK(st.mean_fidelity <= st.max_fidelity);
  for (const auto& s : st.samples) REQUIRE((s.fidelity >= 0.0 && s.fidelity <= 1.0));
}

TEST_CASE("MC agrees with quadrature within 3 sigma for >= 99% of seeds", "[netsim][stochastic][property]") {
  const double quad = weighted_average_fidelity(cal().memory, calibrated_intervals(), kInfiniteWindow);
  const double quad_w = weighted_average_fidelity(cal().memory, calibrated_intervals(), 0.45);
  int fail = 0, fail_w = 0;
  const int seeds = 100;
  for (int s = 0; s < seeds; ++s) {
    auto rng = make_rng(derive_seed(777, static_cast<std::uint64_t>(s)));
    const auto st = run_two_pair_experiment(cal().link, two_pair_params(), cal().memory, 10'000, rng);
    fail += std::abs(st.mean_fidelity - quad) > 3 * st.std_error;
    auto rng_w = make_rng(derive_seed(778, static_cast<std::uint64_t>(s)));
    const auto sw = run_two_pair_experiment(cal().link, two_pair_params(), cal().memory, 10'000, rng_w,
                                            {0.0, 0.45, false});
    fail_w += std::abs(sw.mean_fidelity - quad_w) > 3 * sw.std_error;
  }
  CHECK(fail <= 1);
  CHECK(fail_w <= 1);
}

TEST_CASE("two-pair experiment: faster attempts and dead time", "[netsim]") {
  const auto base_link = cal().link;
  LinkBudget faster = base_link;
  faster.attempt_rate_hz *= 2;
  auto r1 = make_rng(9), r2 = make_rng(9), r3 = make_rng(9);
  const auto base = run_two_pair_experiment(base_link, two_pair_params(), cal().memory, 20'000, r1);
  const auto quick = run_two_pair_experiment(faster, two_pair_params(), cal().memory, 20'000, r2);
  const auto slow = run_two_pair_experiment(base_link, two_pair_params(), cal().memory, 20'000, r3, {0.1});
  CHECK(quick.mean_fidelity > base.mean_fidelity);
  CHECK(slow.mean_fidelity < base.mean_fidelity);
  auto r4 = make_rng(1);
  CHECK_THROWS_AS(run_two_pair_experiment(base_link, two_pair_params(), cal().memory, 0, r4), std::invalid_argument);
}

TEST_CASE("attempt loop: event count within 3 sigma of Poisson", "[netsim][stochastic]") {
  auto rng = make_rng(42);
  const auto ev = run_attempt_loop(cal().link, 0.17, 1e4, rng);
  const double expected = (expected_rate(cal().link, 0.17) + cal().link.attempt_rate_hz * false_herald_prob(cal().link) *
                                                                   (1 - herald_prob(cal().link, 0.17))) * 1e4;
  CHECK_THAT(expected, WithinRel(22'260, 0.001));
  CHECK(std::abs(double(ev.size()) - expected) <= 3 * std::sqrt(expected));
  for (std::size_t i = 1; i < ev.size(); ++i) REQUIRE(ev[i].time > ev[i - 1].time);
  REQUIRE(ev.front().time >= 0.0);
}

TEST_CASE("attempt loop: zero alpha", "[netsim]") {
  LinkBudget quiet = cal().link;
  quiet.noise_cps = 0.0;
  auto rng = make_rng(1);
  CHECK(run_attempt_loop(quiet, 0.0, 1e4, rng).empty());
  const auto noisy = run_attempt_loop(cal().link, 0.0, 1e5, rng);
  CHECK(std::all_of(noisy.begin(), noisy.end(), [](const auto& e) { return e.spurious; }));
}

TEST_CASE("attempt loop: spurious fraction at false-herald odds", "[netsim][stochastic]") {
  LinkBudget noisy = cal().link;
  noisy.noise_cps = 2'000.0;  // boost noise so the fraction is measurable
  auto rng = make_rng(8);
  const auto ev = run_attempt_loop(noisy, 0.025, 1e5, rng);
  double spurious = 0;
  for (const auto& e : ev) spurious += e.spurious;
  const double n = double(ev.size());
  const double p = spurious_fraction(noisy, 0.025);
  CHECK_THAT(p, WithinRel(false_herald_prob(noisy) / herald_prob(noisy, 0.025), 0.1));
  CHECK(std::abs(spurious / n - p) <= 3 * test::binomial_sigma(p, n));
}

TEST_CASE("attempt loop: inter-arrival times pass KS at 0.01 for n = 10^4", "[netsim][stochastic][property]") {
  auto rng = make_rng(2718);
  const auto ev = run_attempt_loop(cal().link, 0.17, 5'000.0, rng);
  REQUIRE(ev.size() > 10'000);
  std::vector<double> gaps;
  double prev = 0.0;
  for (std::size_t i = 0; i < 10'000; ++i) {
    gaps.push_back(ev[i].time - prev);
    prev = ev[i].time;
  }
  const double rate = double(ev.size()) > 0 ? expected_rate(cal().link, 0.17) +
                                                  cal().link.attempt_rate_hz * false_herald_prob(cal().link) *
                                                      (1 - herald_prob(cal().link, 0.17))
                                            : 0.0;
  const IntervalDistribution d(1.0 / rate);
  CHECK(test::ks_test(gaps, [&](double t) { return d.cdf(t); }).p_value > 0.01);
}

TEST_CASE("discrete attempts converge to the exponential", "[netsim][stochastic]") {
  // Attempt period 1 ms, mean interval 0.45 s: geometric ~ exponential.
  auto rng = make_rng(66);
  const double p = 1e-3 / 0.45;
  std::vector<double> xs(10'000);
  for (auto& x : xs) x = sample_geometric_interval(1e-3, p, rng);
  const IntervalDistribution d(1e-3 / p);
  CHECK(test::ks_test(xs, [&](double t) { return d.cdf(t); }).p_value > 0.01);

  LinkBudget link = cal().link;
  link.noise_cps = 0.0;
  link.attempt_rate_hz *= 10;  // shorter period, same process
  auto r2 = make_rng(67);
  const auto ev = run_attempt_loop(link, 0.017, 2e4, r2, AttemptMode::discrete);
  const double expected = expected_rate(link, 0.017) * 2e4;
  CHECK(std::abs(double(ev.size()) - expected) <= 3 * std::sqrt(expected));
  CHECK_THROWS_AS(sample_geometric_interval(0.0, 0.5, r2), std::invalid_argument);
  CHECK(sample_geometric_interval(0.1, 1.0, r2) == 0.1);
}

TEST_CASE("determinism: same seed, same streams", "[netsim][property]") {
  auto a = make_rng(99), b = make_rng(99);
  CHECK(run_attempt_loop(cal().link, 0.1, 2e3, a) == run_attempt_loop(cal().link, 0.1, 2e3, b));
  auto c = make_rng(5), d = make_rng(5);
  const auto s1 = run_two_pair_experiment(cal().link, two_pair_params(), cal().memory, 5'000, c);
  const auto s2 = run_two_pair_experiment(cal().link, two_pair_params(), cal().memory, 5'000, d);
  CHECK(s1.mean_fidelity == s2.mean_fidelity);
  CHECK(s1.std_error == s2.std_error);
}
