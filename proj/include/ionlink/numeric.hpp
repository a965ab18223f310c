#pragma once

// Small numerical helpers shared by the calibration and averaging code:
// bracketed root finding, capped adaptive quadrature, and a Nelder-Mead
// minimiser for the low-dimensional calibration fits.

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace ionlink::numeric {

class QuadratureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxQuadratureEvals = 1'000'000;

/// Root of f on [lo, hi] to absolute tolerance `tol` in x. f(lo) and f(hi)
/// must differ in sign (or one of them be zero).
template <typename F>
double find_root(F&& f, double lo, double hi, double tol = 1e-12) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0)) throw std::domain_error("find_root: interval does not bracket a root");
  std::uintmax_t max_iter = 200;
  auto stop = [tol](double a, double b) { return std::abs(b - a) <= tol; };
  auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, stop, max_iter);
  return 0.5 * (a + b);
}

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  std::size_t evaluations = 0;
};

/// Adaptive Gauss-Kronrod integral of f over [a, b] (b may be +inf). Throws
/// `QuadratureError` if the error estimate exceeds `abs_tol` or the
/// evaluation budget is exhausted.
template <typename F>
QuadratureResult integrate(F&& f, double a, double b, double abs_tol = 1e-9,
                           std::size_t max_evals = kMaxQuadratureEvals) {
  QuadratureResult out;
  if (a == b) return out;
  std::size_t count = 0;
  bool capped = false;
  auto counted = [&](double t) {
    if (++count > max_evals) {
      capped = true;
      return 0.0;
    }
    return f(t);
  };
  double err = 0.0;
  // Depth 14 keeps the worst case (61 nodes per panel) under the cap.
  out.value = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(counted, a, b, 14, 1e-11, &err);
  out.error = err;
  out.evaluations = count;
  if (capped) throw QuadratureError("quadrature exceeded " + std::to_string(max_evals) + " evaluations");
  if (!(err <= abs_tol))
    throw QuadratureError("quadrature error estimate " + std::to_string(err) + " above tolerance");
  return out;
}

template <std::size_t N>
struct MinimizeResult {
  std::array<double, N> x{};
  double value = 0.0;
  int iterations = 0;
};

/// Nelder-Mead simplex minimisation, deterministic for a given start.
template <std::size_t N, typename F>
MinimizeResult<N> nelder_mead(F&& f, std::array<double, N> start, std::array<double, N> step,
                              int max_iter = 4000, double ftol = 1e-12) {
  using Point = std::array<double, N>;
  std::array<Point, N + 1> pts;
  std::array<double, N + 1> vals;
  pts[0] = start;
  for (std::size_t i = 0; i < N; ++i) {
    pts[i + 1] = start;
    pts[i + 1][i] += step[i];
  }
  for (std::size_t i = 0; i <= N; ++i) vals[i] = f(pts[i]);

  auto affine = [](const Point& c, const Point& p, double t) {
    Point r;
    for (std::size_t i = 0; i < N; ++i) r[i] = c[i] + t * (p[i] - c[i]);
    return r;
  };

  int it = 0;
  for (; it < max_iter; ++it) {
    std::array<std::size_t, N + 1> order;
    for (std::size_t i = 0; i <= N; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    std::array<Point, N + 1> p2;
    std::array<double, N + 1> v2;
    for (std::size_t i = 0; i <= N; ++i) {
      p2[i] = pts[order[i]];
      v2[i] = vals[order[i]];
    }
    pts = p2;
    vals = v2;
    if (std::abs(vals[N] - vals[0]) <= ftol * (std::abs(vals[0]) + 1e-300) + 1e-15) break;

    Point centroid{};
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) centroid[j] += pts[i][j] / static_cast<double>(N);

    const Point refl = affine(centroid, pts[N], -1.0);
    const double fr = f(refl);
    if (fr < vals[0]) {
      const Point exp = affine(centroid, pts[N], -2.0);
      const double fe = f(exp);
      if (fe < fr) {
        pts[N] = exp;
        vals[N] = fe;
      } else {
        pts[N] = refl;
        vals[N] = fr;
      }
      continue;
    }
    if (fr < vals[N - 1]) {
      pts[N] = refl;
      vals[N] = fr;
      continue;
    }
    const bool outside = fr < vals[N];
    const Point con = affine(centroid, outside ? refl : pts[N], 0.5);
    const double fc = f(con);
    if (fc < (outside ? fr : vals[N])) {
      pts[N] = con;
      vals[N] = fc;
      continue;
    }
    for (std::size_t i = 1; i <= N; ++i) {
      pts[i] = affine(pts[0], pts[i], 0.5);
      vals[i] = f(pts[i]);
    }
  }
  std::size_t best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  return {pts[best], vals[best], it};
}

}  // namespace ionlink::numeric
