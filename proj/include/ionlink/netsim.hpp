#pragma once

// Event-level simulation of heralding attempts and of the two-pair
// experiment (hold one pair while the next is generated), plus the
// probability-weighted fidelity of the stored pair.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ionlink/herald.hpp"
#include "ionlink/linkmodel.hpp"
#include "ionlink/memory.hpp"
#include "ionlink/numeric.hpp"
#include "ionlink/random.hpp"

namespace ionlink {

inline constexpr double kInfiniteWindow = std::numeric_limits<double>::infinity();

struct EntanglementEvent {
  double time = 0.0;
  BellKind herald_sign = BellKind::plus;
  bool spurious = false;

  friend bool operator==(const EntanglementEvent&, const EntanglementEvent&) = default;
};

/// Exponential waiting time between consecutive heralds: the continuous limit
/// of geometric attempts when the attempt period is much shorter than the
/// mean interval.
class IntervalDistribution {
 public:
  explicit IntervalDistribution(double mean_interval) : mean_(mean_interval) {
    if (!(mean_interval > 0.0) || !std::isfinite(mean_interval))
      throw std::invalid_argument("interval distribution mean must be finite and > 0");
  }

  double mean() const { return mean_; }
  double rate() const { return 1.0 / mean_; }
  double pdf(double t) const { return t < 0.0 ? 0.0 : std::exp(-t / mean_) / mean_; }
  double cdf(double t) const { return t <= 0.0 ? 0.0 : -std::expm1(-t / mean_); }
  double median() const { return mean_ * std::numbers::ln2; }

 private:
  double mean_;
};

inline double sample_interval(const IntervalDistribution& d, Rng& rng) { return exponential(rng, d.mean()); }

/// Discrete-attempt waiting time: attempts every `period` seconds, each
/// succeeding with probability `p`.
inline double sample_geometric_interval(double period, double p, Rng& rng) {
  if (!(period > 0.0) || !(p > 0.0 && p <= 1.0))
    throw std::invalid_argument("geometric interval needs period > 0 and p in (0, 1]");
  if (p == 1.0) return period;
  // Number of attempts up to and including the first success.
  const double k = std::ceil(std::log(uniform_open01(rng)) / std::log1p(-p));
  return std::max(1.0, k) * period;
}

namespace detail {

/// E[max(0, z - s t)] for t ~ Exp(rate).
inline double expected_clamped_linear(double z, double s, double rate) {
  if (z <= 0.0) return 0.0;
  if (s <= 0.0) return z;
  const double t0 = z / s;
  const double e = std::exp(-rate * t0);
  return z * (1.0 - e) - s * (1.0 - e * (1.0 + rate * t0)) / rate;
}

}  // namespace detail

/// Closed form of the W = infinity average for the exponential interval law.
/// Valid while the unclamped fidelity estimate stays inside [0, 1].
inline double weighted_average_fidelity_closed_form(const MemoryModel& m, const IntervalDistribution& d) {
  const double r = d.rate();
  const double x0 = xx_at(m, 0.0);
  const double zmag = std::abs(zz_at(m, 0.0));
  const double e_xx = x0 * r / (r + 1.0 / m.tau_xx);
  const double e_zz_mag = detail::expected_clamped_linear(zmag, m.zz_slope, r);
  const double e_zz = m.zz0 < 0.0 ? -e_zz_mag : e_zz_mag;
  return (1.0 - e_zz + 2.0 * e_xx) / 4.0;
}

/// Probability-weighted mean of fidelity_at over intervals in [0, W]:
///   int_0^W p(t) F(t) dt / int_0^W p(t) dt
/// by adaptive quadrature (absolute error <= 1e-6). W may be infinite.
inline double weighted_average_fidelity(const MemoryModel& m, const IntervalDistribution& d, double window) {
  if (!(window > 0.0)) throw std::invalid_argument("integration window must be > 0");
  auto integrand = [&](double t) { return d.pdf(t) * fidelity_at(m, t); };
  // Split at the <ZZ> clamp so each panel is smooth.
  const double kink = zz_clamp_time(m);
  double num = 0.0;
  if (kink < window) {
    num += numeric::integrate(integrand, 0.0, kink, 1e-7).value;
    num += numeric::integrate(integrand, kink, window, 1e-7).value;
  } else {
    num += numeric::integrate(integrand, 0.0, window, 1e-7).value;
  }
  const double den = std::isinf(window) ? 1.0 : d.cdf(window);
  return num / den;
}

struct TwoPairSample {
  double interval = 0.0;
  double fidelity = 0.0;
};

struct TwoPairStats {
  std::vector<TwoPairSample> samples;
  double mean_fidelity = 0.0;  // over samples inside the window
  double std_error = 0.0;
  double min_fidelity = 0.0;
  double max_fidelity = 0.0;
  double window = kInfiniteWindow;
  std::size_t in_window = 0;
};

struct TwoPairOptions {
  double dead_time_s = 0.0;
  double window = kInfiniteWindow;
  bool keep_samples = true;
};

/// Monte Carlo two-pair experiment: the first pair is stored from its herald
/// until the next herald, and its fidelity to |psi+> is recorded. Intervals
/// follow the budget's generation rate at params.alpha.
inline TwoPairStats run_two_pair_experiment(const LinkBudget& budget, const ProtocolParams& params,
                                            const MemoryModel& model, std::size_t n_trials, Rng& rng,
                                            const TwoPairOptions& opt = {}) {
  if (n_trials < 1) throw std::invalid_argument("n_trials must be >= 1");
  const IntervalDistribution dist(mean_generation_time(budget, params.alpha));
  const auto initial = memory_initial_state(model);
  const auto target = bell_state(BellKind::plus);

  TwoPairStats st;
  st.window = opt.window;
  if (opt.keep_samples) st.samples.reserve(n_trials);
  double sum = 0.0, sum_sq = 0.0;
  st.min_fidelity = std::numeric_limits<double>::infinity();
  st.max_fidelity = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_trials; ++i) {
    const double t = opt.dead_time_s + sample_interval(dist, rng);
    const double f = fidelity(apply_storage(initial, model, t), target);
    if (opt.keep_samples) st.samples.push_back({t, f});
    if (t > opt.window) continue;
    ++st.in_window;
    sum += f;
    sum_sq += f * f;
    st.min_fidelity = std::min(st.min_fidelity, f);
    st.max_fidelity = std::max(st.max_fidelity, f);
  }
  if (st.in_window > 0) {
    const double n = static_cast<double>(st.in_window);
    st.mean_fidelity = sum / n;
    const double var = st.in_window > 1 ? std::max(0.0, (sum_sq - n * st.mean_fidelity * st.mean_fidelity) / (n - 1.0)) : 0.0;
    st.std_error = std::sqrt(var / n);
  }
  return st;
}

enum class AttemptMode { continuous, discrete };

/// Heralds over `duration` seconds. True heralds arrive at expected_rate;
/// noise heralds at attempt_rate * duty_cycle * false_herald_prob and are
/// flagged spurious. The detector that clicked (herald sign) is uniform.
inline std::vector<EntanglementEvent> run_attempt_loop(const LinkBudget& budget, double alpha, double duration,
                                                       Rng& rng, AttemptMode mode = AttemptMode::continuous) {
  if (!(duration > 0.0)) throw std::invalid_argument("duration must be > 0");
  const double p_true = herald_prob(budget, alpha);
  const double p_noise = false_herald_prob(budget);
  const double attempts_per_s = budget.attempt_rate_hz * budget.duty_cycle;
  std::vector<EntanglementEvent> events;
  auto sign = [&] { return bernoulli(rng, 0.5) ? BellKind::minus : BellKind::plus; };

  if (mode == AttemptMode::continuous) {
    const double rate_true = attempts_per_s * p_true;
    const double rate_noise = attempts_per_s * p_noise * (1.0 - p_true);
    const double total = rate_true + rate_noise;
    if (total <= 0.0) return events;
    double t = 0.0;
    while (true) {
      t += exponential(rng, 1.0 / total);
      if (t > duration) break;
      const bool spurious = bernoulli(rng, rate_noise / total);
      events.push_back({t, sign(), spurious});
    }
    return events;
  }

  if (budget.attempt_rate_hz <= 0.0) return events;
  const double period = 1.0 / budget.attempt_rate_hz;
  const auto n_attempts = static_cast<std::uint64_t>(std::floor(duration / period));
  for (std::uint64_t k = 1; k <= n_attempts; ++k) {
    if (!bernoulli(rng, budget.duty_cycle)) continue;
    const double u = uniform01(rng);
    if (u < p_true) {
      events.push_back({static_cast<double>(k) * period, sign(), false});
    } else if (u < p_true + p_noise * (1.0 - p_true)) {
      events.push_back({static_cast<double>(k) * period, sign(), true});
    }
  }
  return events;
}

}  // namespace ionlink
