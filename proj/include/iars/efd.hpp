#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "iars/contour.hpp"

namespace iars {

// Elliptic Fourier descriptor: N harmonics of 4 coefficients each, row n
// holding (A, B, C, D) so that with t in [0, 2pi)
//   x(t) = locus_x + sum_n A_n cos(nt) + B_n sin(nt)
//   y(t) = locus_y + sum_n C_n cos(nt) + D_n sin(nt)
// The DC locus is kept out of the (N, 4) coefficient block.
struct EfdDescriptor {
  int harmonics = 0;
  bool normalized = false;
  double locus_x = 0, locus_y = 0;
  std::vector<double> coeffs;  // 4 * harmonics, row-major

  double& at(int n, int k) { return coeffs[static_cast<std::size_t>(n) * 4 + k]; }
  double at(int n, int k) const { return coeffs[static_cast<std::size_t>(n) * 4 + k]; }
  // squared coefficient magnitude of harmonic row n
  double energy(int n) const {
    double e = 0;
    for (int k = 0; k < 4; ++k) e += at(n, k) * at(n, k);
    return e;
  }
  const std::vector<double>& flat() const { return coeffs; }
};

namespace detail {

struct ChainGeometry {
  std::vector<double> dx, dy, dt, t;  // per segment; t has K+1 entries, t[K] = T
  double T = 0;
};

inline ChainGeometry chain_geometry(const ContourChain& chain) {
  const std::size_t K = chain.points.size();
  ChainGeometry g;
  g.dx.resize(K);
  g.dy.resize(K);
  g.dt.resize(K);
  g.t.resize(K + 1);
  g.t[0] = 0;
  for (std::size_t i = 0; i < K; ++i) {
    const auto& a = chain.points[i];
    const auto& b = chain.points[(i + 1) % K];
    g.dx[i] = b.first - a.first;
    g.dy[i] = b.second - a.second;
    g.dt[i] = std::hypot(g.dx[i], g.dy[i]);
    if (g.dt[i] == 0) g.dt[i] = 1e-12;  // repeated point; keep sums finite
    g.t[i + 1] = g.t[i] + g.dt[i];
  }
  g.T = g.t[K];
  return g;
}

}  // namespace detail

inline EfdDescriptor efd_compute(const ContourChain& chain, int harmonics) {
  if (harmonics < 1) throw std::invalid_argument("efd_compute: harmonics must be >= 1");
  if (chain.points.size() < 4)
    throw std::invalid_argument("efd_compute: chain has " +
                                std::to_string(chain.points.size()) +
                                " points, need at least 4");
  const auto g = detail::chain_geometry(chain);
  const std::size_t K = chain.points.size();
  const double T = g.T;
  const double two_pi = 2.0 * std::numbers::pi;

  EfdDescriptor d;
  d.harmonics = harmonics;
  d.coeffs.assign(static_cast<std::size_t>(harmonics) * 4, 0.0);

  for (int n = 1; n <= harmonics; ++n) {
    const double w = two_pi * n / T;
    const double scale = T / (2.0 * n * n * std::numbers::pi * std::numbers::pi);
    double a = 0, b = 0, c = 0, dd = 0;
    for (std::size_t i = 0; i < K; ++i) {
      const double c0 = std::cos(w * g.t[i]), c1 = std::cos(w * g.t[i + 1]);
      const double s0 = std::sin(w * g.t[i]), s1 = std::sin(w * g.t[i + 1]);
      const double vx = g.dx[i] / g.dt[i], vy = g.dy[i] / g.dt[i];
      a += vx * (c1 - c0);
      b += vx * (s1 - s0);
      c += vy * (c1 - c0);
      dd += vy * (s1 - s0);
    }
    d.at(n - 1, 0) = scale * a;
    d.at(n - 1, 1) = scale * b;
    d.at(n - 1, 2) = scale * c;
    d.at(n - 1, 3) = scale * dd;
  }

  // DC locus: time average of the piecewise-linear curve
  double ax = 0, ay = 0;
  for (std::size_t i = 0; i < K; ++i) {
    const auto& p = chain.points[i];
    const auto& q = chain.points[(i + 1) % K];
    ax += g.dt[i] * (p.first + q.first) * 0.5;
    ay += g.dt[i] * (p.second + q.second) * 0.5;
  }
  d.locus_x = ax / T;
  d.locus_y = ay / T;
  return d;
}

namespace detail {

// row <- row * [[cos, -sin], [sin, cos]] applied to both (A,B) and (C,D)
inline void rotate_row_right(EfdDescriptor& d, int n, double ang) {
  const double cs = std::cos(ang), sn = std::sin(ang);
  const double a = d.at(n, 0), b = d.at(n, 1), c = d.at(n, 2), dd = d.at(n, 3);
  d.at(n, 0) = a * cs + b * sn;
  d.at(n, 1) = -a * sn + b * cs;
  d.at(n, 2) = c * cs + dd * sn;
  d.at(n, 3) = -c * sn + dd * cs;
}

// [[cos, sin], [-sin, cos]] * [[A, B], [C, D]] applied from the left
inline void rotate_row_left(EfdDescriptor& d, int n, double ang) {
  const double cs = std::cos(ang), sn = std::sin(ang);
  const double a = d.at(n, 0), b = d.at(n, 1), c = d.at(n, 2), dd = d.at(n, 3);
  d.at(n, 0) = cs * a + sn * c;
  d.at(n, 1) = cs * b + sn * dd;
  d.at(n, 2) = -sn * a + cs * c;
  d.at(n, 3) = -sn * b + cs * dd;
}

}  // namespace detail

// Standard first-harmonic normalization (start-phase rotation, spatial
// rotation, semi-major scaling) plus two gauge fixes that make the result a
// canonical form: traversal orientation is flipped if needed so D1 >= 0, and
// the residual half-period ambiguity is resolved by forcing the dominant
// coefficient of the first significant even harmonic positive.
inline EfdDescriptor efd_normalize(const EfdDescriptor& in) {
  if (in.harmonics < 1) throw std::invalid_argument("efd_normalize: empty descriptor");
  EfdDescriptor d = in;
  const double a1 = d.at(0, 0), b1 = d.at(0, 1), c1 = d.at(0, 2), d1 = d.at(0, 3);
  const double theta =
      0.5 * std::atan2(2.0 * (a1 * b1 + c1 * d1), a1 * a1 + c1 * c1 - b1 * b1 - d1 * d1);
  for (int n = 0; n < d.harmonics; ++n) detail::rotate_row_right(d, n, (n + 1) * theta);

  const double mag = std::hypot(d.at(0, 0), d.at(0, 2));
  if (mag < 1e-12) throw std::invalid_argument("efd_normalize: zero first harmonic");
  const double psi = std::atan2(d.at(0, 2), d.at(0, 0));
  for (int n = 0; n < d.harmonics; ++n) {
    detail::rotate_row_left(d, n, psi);
    for (int k = 0; k < 4; ++k) d.at(n, k) /= mag;
  }

  if (d.at(0, 3) < 0)  // flip traversal orientation: negate the sine columns
    for (int n = 0; n < d.harmonics; ++n) {
      d.at(n, 1) = -d.at(n, 1);
      d.at(n, 3) = -d.at(n, 3);
    }

  // half-period start-point gauge: a shift by half a period negates every
  // even harmonic row; pick the representative whose dominant even entry is
  // positive
  for (int n = 1; n < d.harmonics; n += 2) {
    int best = 0;
    for (int k = 1; k < 4; ++k)
      if (std::abs(d.at(n, k)) > std::abs(d.at(n, best))) best = k;
    if (std::abs(d.at(n, best)) <= 1e-7) continue;  // too weak to vote, try next even row
    if (d.at(n, best) < 0)
      for (int m = 1; m < d.harmonics; m += 2)
        for (int k = 0; k < 4; ++k) d.at(m, k) = -d.at(m, k);
    break;
  }

  d.normalized = true;
  d.locus_x = 0;
  d.locus_y = 0;
  return d;
}

// Evaluates the truncated series at num_points values of t uniform in
// [0, 2pi), using the first n_use harmonics.
inline std::vector<std::pair<double, double>> efd_reconstruct(const EfdDescriptor& d, int n_use,
                                                              int num_points) {
  if (n_use < 1 || n_use > d.harmonics)
    throw std::invalid_argument("efd_reconstruct: n_use out of range [1, " +
                                std::to_string(d.harmonics) + "]");
  if (num_points < 1) throw std::invalid_argument("efd_reconstruct: num_points must be >= 1");
  std::vector<std::pair<double, double>> pts;
  pts.reserve(static_cast<std::size_t>(num_points));
  const double two_pi = 2.0 * std::numbers::pi;
  for (int i = 0; i < num_points; ++i) {
    const double t = two_pi * i / num_points;
    double x = d.locus_x, y = d.locus_y;
    for (int n = 1; n <= n_use; ++n) {
      const double cs = std::cos(n * t), sn = std::sin(n * t);
      x += d.at(n - 1, 0) * cs + d.at(n - 1, 1) * sn;
      y += d.at(n - 1, 2) * cs + d.at(n - 1, 3) * sn;
    }
    pts.emplace_back(x, y);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Shrinkage covariance and Mahalanobis distance

struct CovarianceModel {
  int dim = 0;
  double lambda = 0.1;
  std::vector<double> sigma;      // dim x dim, shrunk covariance
  std::vector<double> inv_sigma;  // pseudo-inverse via eigen-decomposition
};

namespace detail {

// Cyclic Jacobi eigen-decomposition of a symmetric matrix. a is overwritten
// with a diagonal matrix whose entries are the eigenvalues; v accumulates
// the eigenvectors as columns.
inline void jacobi_eigen(std::vector<double>& a, std::vector<double>& v, int n) {
  v.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto A = [&](int r, int c) -> double& { return a[static_cast<std::size_t>(r) * n + c]; };
  auto V = [&](int r, int c) -> double& { return v[static_cast<std::size_t>(r) * n + c]; };

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += A(p, q) * A(p, q);
    if (off < 1e-22) return;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double diff = A(q, q) - A(p, p);
        double t;
        if (std::abs(apq) * 1e12 < std::abs(diff)) {
          t = apq / diff;  // small-angle shortcut
        } else {
          const double phi = diff / (2.0 * apq);
          t = 1.0 / (std::abs(phi) + std::sqrt(phi * phi + 1.0));
          if (phi < 0) t = -t;
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double tau = s / (1.0 + c);
        const double h = t * apq;
        A(p, p) -= h;
        A(q, q) += h;
        A(p, q) = 0;
        A(q, p) = 0;
        for (int i = 0; i < n; ++i) {
          if (i != p && i != q) {
            const double aip = A(i, p), aiq = A(i, q);
            A(i, p) = aip - s * (aiq + tau * aip);
            A(p, i) = A(i, p);
            A(i, q) = aiq + s * (aip - tau * aiq);
            A(q, i) = A(i, q);
          }
          const double vip = V(i, p), viq = V(i, q);
          V(i, p) = vip - s * (viq + tau * vip);
          V(i, q) = viq + s * (vip - tau * viq);
        }
      }
  }
}

}  // namespace detail

// Sample covariance (n-1 divisor) blended toward its own diagonal:
// (1 - lambda) * S + lambda * diag(S). The inverse is a pseudo-inverse,
// zeroing eigenvalue directions at or below the 1e-10 floor.
inline CovarianceModel fit_covariance(const std::vector<std::vector<double>>& vectors,
                                      double lambda = 0.1) {
  if (vectors.size() < 2)
    throw std::invalid_argument("fit_covariance: need at least 2 vectors");
  if (lambda < 0 || lambda > 1)
    throw std::invalid_argument("fit_covariance: lambda must be in [0,1]");
  const int d = static_cast<int>(vectors[0].size());
  for (const auto& v : vectors)
    if (static_cast<int>(v.size()) != d)
      throw std::invalid_argument("fit_covariance: vector dimensions differ");

  std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
  for (const auto& v : vectors)
    for (int i = 0; i < d; ++i) mean[static_cast<std::size_t>(i)] += v[static_cast<std::size_t>(i)];
  for (auto& m : mean) m /= static_cast<double>(vectors.size());

  CovarianceModel cm;
  cm.dim = d;
  cm.lambda = lambda;
  cm.sigma.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (const auto& v : vectors)
    for (int i = 0; i < d; ++i) {
      const double di = v[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)];
      for (int j = i; j < d; ++j)
        cm.sigma[static_cast<std::size_t>(i) * d + j] +=
            di * (v[static_cast<std::size_t>(j)] - mean[static_cast<std::size_t>(j)]);
    }
  const double div = static_cast<double>(vectors.size()) - 1.0;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      double s = cm.sigma[static_cast<std::size_t>(i) * d + j] / div;
      if (i != j) s *= 1.0 - lambda;  // off-diagonal shrinkage toward diag(S)
      cm.sigma[static_cast<std::size_t>(i) * d + j] = s;
      cm.sigma[static_cast<std::size_t>(j) * d + i] = s;
    }

  std::vector<double> work = cm.sigma, evec;
  detail::jacobi_eigen(work, evec, d);
  std::vector<double> inv_eval(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const double ev = work[static_cast<std::size_t>(i) * d + i];
    inv_eval[static_cast<std::size_t>(i)] = ev > 1e-10 ? 1.0 / ev : 0.0;
  }
  cm.inv_sigma.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      double s = 0;
      for (int k = 0; k < d; ++k)
        s += evec[static_cast<std::size_t>(i) * d + k] * inv_eval[static_cast<std::size_t>(k)] *
             evec[static_cast<std::size_t>(j) * d + k];
      cm.inv_sigma[static_cast<std::size_t>(i) * d + j] = s;
      cm.inv_sigma[static_cast<std::size_t>(j) * d + i] = s;
    }
  return cm;
}

inline double mahalanobis(const std::vector<double>& e, const std::vector<double>& e_hat,
                          const CovarianceModel& cov) {
  if (static_cast<int>(e.size()) != cov.dim || static_cast<int>(e_hat.size()) != cov.dim)
    throw std::invalid_argument("mahalanobis: dimension mismatch");
  std::vector<double> diff(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) diff[i] = e[i] - e_hat[i];
  double q = 0;
  for (int i = 0; i < cov.dim; ++i) {
    double row = 0;
    for (int j = 0; j < cov.dim; ++j)
      row += cov.inv_sigma[static_cast<std::size_t>(i) * cov.dim + j] *
             diff[static_cast<std::size_t>(j)];
    q += diff[static_cast<std::size_t>(i)] * row;
  }
  return std::sqrt(std::max(q, 0.0));
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("euclidean: dimension mismatch");
  double q = 0;
  for (std::size_t i = 0; i < a.size(); ++i) q += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(q);
}

}  // namespace iars
