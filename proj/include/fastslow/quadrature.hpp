#pragma once

#include <array>
#include <cmath>
#include <functional>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace fastslow::quad {

// Fixed 10-point Gauss-Legendre rule on [a, b].
template <class F>
double gauss_legendre10(F&& f, double a, double b) {
  using Rule = boost::math::quadrature::gauss<double, 10>;
  const auto& abscissa = Rule::abscissa();
  const auto& weights = Rule::weights();
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  // boost stores the non-negative half of the symmetric rule
  double sum = 0.0;
  for (std::size_t i = 0; i < abscissa.size(); ++i) {
    const double x = abscissa[i];
    if (x == 0.0) {
      sum += weights[i] * f(mid);
    } else {
      sum += weights[i] * (f(mid - half * x) + f(mid + half * x));
    }
  }
  return half * sum;
}

// Adaptive Gauss-Kronrod (31 points) with a relative tolerance.
template <class F>
double adaptive(F&& f, double a, double b, double tol = 1e-12, unsigned max_depth = 18) {
  if (a == b) return 0.0;
  double error = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(std::function<double(double)>(f), a, b,
                                                                       max_depth, tol, &error);
}

}  // namespace fastslow::quad
