#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>

#include <Eigen/Dense>

#include "taggant/dsp.hpp"

namespace oracles {

inline long double choose(int n, int r) {
  long double c = 1.0L;
  for (int i = 1; i <= r; ++i) c = c * (n - r + i) / i;
  return c;
}

/// Term-by-term tail sum in long double.
inline double binomial_tail(int t, int K, int k, int C) {
  const long double q = (long double)k / C;
  long double s = 0.0L;
  for (int z = t; z <= K; ++z) s += choose(K, z) * std::pow(q, (long double)z) * std::pow(1.0L - q, (long double)(K - z));
  return double(s);
}

/// Chi-square survival with 2m degrees of freedom by quadrature of the density.
inline double chi2_survival_quadrature(double x, int m) {
  const double log_norm = -m * std::log(2.0) - std::lgamma(double(m));
  auto density = [&](double u) {
    const double v = x + u;
    return v <= 0.0 ? (m == 1 ? std::exp(log_norm) : 0.0) : std::exp(log_norm + (m - 1) * std::log(v) - v / 2.0);
  };
  boost::math::quadrature::exp_sinh<double> integrator;
  return integrator.integrate(density, 0.0, std::numeric_limits<double>::infinity());
}

inline double fisher_quadrature(const std::vector<double>& ps) {
  double x = 0.0;
  for (double p : ps) x -= 2.0 * std::log(p);
  return chi2_survival_quadrature(x, int(ps.size()));
}

/// Per-pixel resize written straight from the half-pixel mapping.
inline Eigen::MatrixXd resize_reference(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                                        taggant::Interpolation mode) {
  Eigen::MatrixXd out(rows, cols);
  const auto src = [](Eigen::Index i, Eigen::Index in, Eigen::Index out_n) {
    return (double(i) + 0.5) * double(in) / double(out_n) - 0.5;
  };
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double sr = src(r, m.rows(), rows), sc = src(c, m.cols(), cols);
      if (mode == taggant::Interpolation::nearest) {
        // Ties round toward the lower index.
        auto pick = [](double s, Eigen::Index n) {
          Eigen::Index i = Eigen::Index(std::ceil(s - 0.5));
          return std::clamp<Eigen::Index>(i, 0, n - 1);
        };
        out(r, c) = m(pick(sr, m.rows()), pick(sc, m.cols()));
      } else {
        auto tap = [](double s, Eigen::Index n, Eigen::Index& i0, Eigen::Index& i1, double& w) {
          s = std::clamp(s, 0.0, double(n - 1));
          i0 = Eigen::Index(std::floor(s));
          i1 = std::min(i0 + 1, n - 1);
          w = s - double(i0);
        };
        Eigen::Index r0, r1, c0, c1;
        double wr, wc;
        tap(sr, m.rows(), r0, r1, wr);
        tap(sc, m.cols(), c0, c1, wc);
        out(r, c) = (1 - wr) * ((1 - wc) * m(r0, c0) + wc * m(r0, c1)) + wr * ((1 - wc) * m(r1, c0) + wc * m(r1, c1));
      }
    }
  }
  return out;
}

}  // namespace oracles
