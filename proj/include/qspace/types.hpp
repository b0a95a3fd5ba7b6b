#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

// Unit conventions used throughout the library: q-space locations in 1/mm,
// b-values in s/mm^2, diffusion time t_d in s, displacements r in mm and
// propagator values in 1/mm^3. They are tied together by b = t_d * q^2.

namespace qspace {

struct QPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double squared_magnitude() const { return x * x + y * y + z * z; }
  double magnitude() const { return std::sqrt(squared_magnitude()); }
  double dot(const QPoint& o) const { return x * o.x + y * o.y + z * o.z; }
  QPoint operator-() const { return {-x, -y, -z}; }
  bool is_finite() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

inline QPoint operator*(double s, const QPoint& p) {
  return {s * p.x, s * p.y, s * p.z};
}

inline QPoint operator+(const QPoint& a, const QPoint& b) {
  return {a.x + b.x, a.y + b.y, a.z + b.z};
}

inline QPoint operator-(const QPoint& a, const QPoint& b) {
  return {a.x - b.x, a.y - b.y, a.z - b.z};
}

// Ordered q-space sample locations with per-point shell labels, shared by all
// voxels of a data set. Immutable after construction.
struct AcquisitionScheme {
  std::vector<QPoint> points;
  std::vector<int> shell_ids;     // one entry per point
  std::vector<double> b_values;   // one entry per shell, s/mm^2
  double t_d = 0.0;               // effective diffusion time, s

  std::size_t size() const { return points.size(); }
  int shell_count() const { return static_cast<int>(b_values.size()); }

  double max_q() const {
    double m = 0.0;
    for (const auto& p : points) m = std::max(m, p.magnitude());
    return m;
  }

  // Smallest nonzero |q|; 0 if every point sits at the origin.
  double min_nonzero_q() const {
    double m = 0.0;
    for (const auto& p : points) {
      const double r = p.magnitude();
      if (r > 0.0 && (m == 0.0 || r < m)) m = r;
    }
    return m;
  }

  void validate() const {
    if (points.empty()) throw std::invalid_argument("scheme: no sample points");
    if (shell_ids.size() != points.size())
      throw std::invalid_argument("scheme: shell label count does not match point count");
    if (!(t_d > 0.0) || !std::isfinite(t_d))
      throw std::invalid_argument("scheme: t_d must be a positive finite number of seconds");
    if (b_values.empty())
      throw std::invalid_argument("scheme: no shells defined");
    std::vector<char> used(b_values.size(), 0);
    for (double b : b_values) {
      if (!std::isfinite(b) || b < 0.0)
        throw std::invalid_argument("scheme: shell b-values must be finite and nonnegative");
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!points[i].is_finite())
        throw std::invalid_argument("scheme: point " + std::to_string(i) + " has non-finite coordinates");
      const int s = shell_ids[i];
      if (s < 0 || s >= shell_count())
        throw std::invalid_argument("scheme: point " + std::to_string(i) + " references undefined shell " +
                                    std::to_string(s));
      used[static_cast<std::size_t>(s)] = 1;
      const double b_from_q = t_d * points[i].squared_magnitude();
      const double b = b_values[static_cast<std::size_t>(s)];
      const double tol = 1e-6 * std::max(b, b_from_q) + 1e-12;
      if (std::abs(b_from_q - b) > tol)
        throw std::invalid_argument("scheme: point " + std::to_string(i) + " violates b = t_d*q^2 (shell b = " +
                                    std::to_string(b) + ", t_d*q^2 = " + std::to_string(b_from_q) + ")");
    }
    for (std::size_t s = 0; s < used.size(); ++s) {
      if (!used[s])
        throw std::invalid_argument("scheme: shell " + std::to_string(s) + " has no points");
    }
  }
};

// Per-voxel normalized signal measurements E = S/S(0), aligned to a scheme.
// Rows are voxels, columns are measurements.
struct SignalTable {
  std::shared_ptr<const AcquisitionScheme> scheme;
  Eigen::MatrixXd values;

  std::size_t voxel_count() const { return static_cast<std::size_t>(values.rows()); }

  void validate() const {
    if (!scheme) throw std::invalid_argument("signal table: missing scheme");
    if (static_cast<std::size_t>(values.cols()) != scheme->size())
      throw std::invalid_argument("signal table: column count " + std::to_string(values.cols()) +
                                  " does not match scheme size " + std::to_string(scheme->size()));
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
      for (Eigen::Index c = 0; c < values.cols(); ++c) {
        const double v = values(r, c);
        if (!std::isfinite(v))
          throw std::invalid_argument("signal table: non-finite value at row " + std::to_string(r) +
                                      ", column " + std::to_string(c));
        if (v < 0.0)
          throw std::invalid_argument("signal table: negative value at row " + std::to_string(r) +
                                      ", column " + std::to_string(c));
      }
    }
  }
};

// The six learned model parameters plus the fixed origin regularizer xi.
struct Hyperparameters {
  double a0 = 1.0;       // angular Legendre coefficients, order 0, 2, 4, 6
  double a2 = 0.0;
  double a4 = 0.0;
  double a6 = 0.0;
  double sigma_r = 1.0;  // length-scale of the log-radial covariance
  double sigma_n2 = 0.0; // noise variance
  double xi = 1.0;       // origin regularizer, fixed (never optimized)

  double angular_sum() const { return a0 + a2 + a4 + a6; }

  void validate() const {
    for (double a : {a0, a2, a4, a6}) {
      if (!std::isfinite(a) || a < 0.0)
        throw std::invalid_argument("hyperparameters: angular coefficients must be finite and >= 0");
    }
    if (!(angular_sum() > 0.0))
      throw std::invalid_argument("hyperparameters: angular coefficients must not all be zero");
    if (!std::isfinite(sigma_r) || !(sigma_r > 0.0))
      throw std::invalid_argument("hyperparameters: sigma_r must be positive");
    if (!std::isfinite(sigma_n2) || sigma_n2 < 0.0)
      throw std::invalid_argument("hyperparameters: sigma_n2 must be finite and >= 0");
    if (!std::isfinite(xi) || !(xi > 0.0))
      throw std::invalid_argument("hyperparameters: xi must be positive");
  }
};

// Posterior mean and variance aligned to a list of query points.
struct GpPrediction {
  Eigen::VectorXd mean;      // mu_*
  Eigen::VectorXd variance;  // sigma_*^2, clamped at zero
};

}  // namespace qspace
