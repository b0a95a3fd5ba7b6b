#pragma once

#include <qspace/types.hpp>

#include <array>
#include <span>

namespace qspace::kernel {

// Below this magnitude (1/mm) a point counts as the q-space origin and its
// direction cosine against any other point is taken as 1, which keeps the
// origin's covariance direction-independent.
inline constexpr double kDirEpsilon = 1e-9;

struct AngularCoefficients {
  std::array<double, 4> a{1.0, 0.0, 0.0, 0.0};  // Legendre orders 0, 2, 4, 6

  static AngularCoefficients from(const Hyperparameters& h) {
    return AngularCoefficients{{h.a0, h.a2, h.a4, h.a6}};
  }

  double sum() const { return a[0] + a[1] + a[2] + a[3]; }

  void validate() const {
    for (double v : a)
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("angular coefficients must be finite and >= 0");
  }
};

// Legendre polynomials of the even orders used by the angular covariance,
// by closed form. x is clamped to [-1,1] to absorb dot-product round-off.
inline double legendre(int n, double x) {
  if (x > 1.0) x = 1.0;
  if (x < -1.0) x = -1.0;
  const double x2 = x * x;
  switch (n) {
    case 0: return 1.0;
    case 2: return 0.5 * (3.0 * x2 - 1.0);
    case 4: return 0.125 * ((35.0 * x2 - 30.0) * x2 + 3.0);
    case 6: return 0.0625 * (((231.0 * x2 - 315.0) * x2 + 105.0) * x2 - 5.0);
    default:
      throw std::invalid_argument("legendre: unsupported order " + std::to_string(n));
  }
}

// Angular covariance C_theta(c) = sum_n a_n P_n(c) over n in {0,2,4,6}.
inline double angular_cov(double c, const AngularCoefficients& a) {
  return a.a[0] * legendre(0, c) + a.a[1] * legendre(2, c) + a.a[2] * legendre(4, c) +
         a.a[3] * legendre(6, c);
}

// Radial covariance: squared exponential in log(xi^2 + q^2) coordinates.
inline double radial_cov(double qi, double qj, double sigma_r, double xi) {
  const double xi2 = xi * xi;
  const double u = std::log((xi2 + qi * qi) / (xi2 + qj * qj));
  return std::exp(-u * u / (2.0 * sigma_r * sigma_r));
}

inline double direction_cosine(const QPoint& qi, const QPoint& qj) {
  const double mi = qi.magnitude();
  const double mj = qj.magnitude();
  if (mi < kDirEpsilon || mj < kDirEpsilon) return 1.0;
  double c = qi.dot(qj) / (mi * mj);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

// Full covariance: product of radial and angular parts.
inline double cov(const QPoint& qi, const QPoint& qj, const Hyperparameters& h) {
  return radial_cov(qi.magnitude(), qj.magnitude(), h.sigma_r, h.xi) *
         angular_cov(direction_cosine(qi, qj), AngularCoefficients::from(h));
}

inline Eigen::MatrixXd gram(std::span<const QPoint> points, const Hyperparameters& h) {
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  if (n == 0) throw std::invalid_argument("gram: empty point set");
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = cov(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)], h);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

inline Eigen::MatrixXd cross_gram(std::span<const QPoint> rows, std::span<const QPoint> cols,
                                  const Hyperparameters& h) {
  Eigen::MatrixXd k(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index i = 0; i < k.rows(); ++i)
    for (Eigen::Index j = 0; j < k.cols(); ++j)
      k(i, j) = cov(rows[static_cast<std::size_t>(i)], cols[static_cast<std::size_t>(j)], h);
  return k;
}

// Default origin regularizer: 1e-2 times the smallest nonzero measured |q|.
inline double default_xi(const AcquisitionScheme& scheme) {
  const double qmin = scheme.min_nonzero_q();
  if (qmin <= 0.0)
    throw std::invalid_argument("default_xi: scheme has no nonzero q-space samples");
  return 1e-2 * qmin;
}

// Pairwise quantities of one point set that do not depend on the optimized
// hyperparameters; training reuses them across iterations. u is the log radial
// ratio entering the radial covariance, pn are the angular Legendre values.
struct PairwiseCache {
  Eigen::MatrixXd u;
  Eigen::MatrixXd p0, p2, p4, p6;

  PairwiseCache(std::span<const QPoint> points, double xi) {
    const Eigen::Index n = static_cast<Eigen::Index>(points.size());
    u.resize(n, n);
    p0.resize(n, n);
    p2.resize(n, n);
    p4.resize(n, n);
    p6.resize(n, n);
    const double xi2 = xi * xi;
    std::vector<double> logr(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
      logr[static_cast<std::size_t>(i)] =
          std::log(xi2 + points[static_cast<std::size_t>(i)].squared_magnitude());
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double du = logr[static_cast<std::size_t>(i)] - logr[static_cast<std::size_t>(j)];
        u(i, j) = du;
        u(j, i) = -du;
        const double c =
            direction_cosine(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)]);
        p0(i, j) = p0(j, i) = 1.0;
        p2(i, j) = p2(j, i) = legendre(2, c);
        p4(i, j) = p4(j, i) = legendre(4, c);
        p6(i, j) = p6(j, i) = legendre(6, c);
      }
    }
  }

  Eigen::MatrixXd radial(double sigma_r) const {
    return (-u.array().square() / (2.0 * sigma_r * sigma_r)).exp().matrix();
  }

  Eigen::MatrixXd angular(const AngularCoefficients& a) const {
    return a.a[0] * p0 + a.a[1] * p2 + a.a[2] * p4 + a.a[3] * p6;
  }
};

}  // namespace qspace::kernel
