#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "adjfit/errors.hpp"

namespace adjfit::quad {

namespace detail {

// 21-point Kronrod extension of the 10-point Gauss rule (QUADPACK qk21).
inline constexpr std::array<double, 11> kronrod_nodes{
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0};
inline constexpr std::array<double, 11> kronrod_weights{
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077208626368899, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821};
// Gauss weights for the odd-indexed Kronrod nodes.
inline constexpr std::array<double, 5> gauss_weights{
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338};

struct Piece {
  double a, b, value, error;
  bool operator<(const Piece& o) const { return error < o.error; }
};

template <typename F>
Piece gauss_kronrod21(const F& f, double a, double b) {
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double kronrod = fc * kronrod_weights[10];
  double gauss = 0.0;
  for (std::size_t i = 0; i < 10; ++i) {
    const double dx = half * kronrod_nodes[i];
    const double pair = f(center - dx) + f(center + dx);
    kronrod += kronrod_weights[i] * pair;
    if (i % 2 == 1) gauss += gauss_weights[i / 2] * pair;
  }
  return {a, b, kronrod * half, std::abs((kronrod - gauss) * half)};
}

}  // namespace detail

struct Options {
  double abs_tol = 1e-10;
  double rel_tol = 1e-10;
  std::size_t max_pieces = 200000;
};

struct Result {
  double value = 0.0;
  double error = 0.0;
  std::size_t evaluations = 0;
};

/// Globally adaptive Gauss-Kronrod integration of f over [points.front(),
/// points.back()], with the integrand assumed smooth between consecutive points.
template <typename F>
Result integrate_piecewise(const F& f, std::span<const double> points, const Options& opt = {}) {
  if (points.size() < 2) throw InputError("quadrature needs at least two points");
  std::priority_queue<detail::Piece> queue;
  Result res;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    if (!(points[i + 1] > points[i])) {
      if (points[i + 1] == points[i]) continue;
      throw InputError("quadrature breakpoints must be increasing");
    }
    auto piece = detail::gauss_kronrod21(f, points[i], points[i + 1]);
    res.value += piece.value;
    res.error += piece.error;
    res.evaluations += 21;
    queue.push(piece);
  }
  std::vector<detail::Piece> frozen;
  while (!queue.empty() && res.error > std::max(opt.abs_tol, opt.rel_tol * std::abs(res.value))) {
    if (queue.size() + frozen.size() >= opt.max_pieces) {
      throw NumericalError("quadrature did not converge: error estimate " +
                           std::to_string(res.error) + " after " +
                           std::to_string(opt.max_pieces) + " pieces");
    }
    const auto worst = queue.top();
    queue.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b) || (worst.b - worst.a) < 1e-15) {
      frozen.push_back(worst);
      continue;
    }
    const auto left = detail::gauss_kronrod21(f, worst.a, mid);
    const auto right = detail::gauss_kronrod21(f, mid, worst.b);
    res.evaluations += 42;
    res.value += left.value + right.value - worst.value;
    res.error += left.error + right.error - worst.error;
    queue.push(left);
    queue.push(right);
  }
  if (!frozen.empty() && queue.empty() &&
      res.error > std::max(opt.abs_tol, opt.rel_tol * std::abs(res.value))) {
    throw NumericalError("quadrature stalled on unresolvable pieces; error estimate " +
                         std::to_string(res.error));
  }
  // Recompute the sum to shed accumulated cancellation from the running updates.
  double value = 0.0, error = 0.0;
  while (!queue.empty()) {
    value += queue.top().value;
    error += queue.top().error;
    queue.pop();
  }
  for (const auto& p : frozen) {
    value += p.value;
    error += p.error;
  }
  res.value = value;
  res.error = error;
  return res;
}

template <typename F>
Result integrate(const F& f, double a, double b, const Options& opt = {}) {
  const std::array<double, 2> pts{a, b};
  return integrate_piecewise(f, std::span<const double>(pts), opt);
}

/// Sorted, deduplicated breakpoints in [a, b] that always include both ends.
inline std::vector<double> merge_breakpoints(double a, double b, std::span<const double> interior) {
  std::vector<double> pts{a, b};
  for (double p : interior) {
    if (p > a && p < b) pts.push_back(p);
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

}  // namespace adjfit::quad
