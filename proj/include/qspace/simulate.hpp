#pragma once

#include <qspace/random.hpp>
#include <qspace/types.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <memory>
#include <numbers>
#include <span>
#include <vector>

namespace qspace::simulate {

inline Eigen::Matrix3d rotation_z(double phi) {
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  Eigen::Matrix3d r;
  r << c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0;
  return r;
}

// Two equal-magnitude Gaussian compartments with equal but rotated diffusion
// tensors: D1 = D0*diag(1, 0.1, 0.1), D2 = R(phi)^T D1 R(phi). Tensors are in
// mm^2/s so that t_d * q^T D q is dimensionless.
struct TensorPhantom {
  Eigen::Matrix3d d1 = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d d2 = Eigen::Matrix3d::Identity();
  double d0 = 2.5e-3;        // mm^2/s
  double phi = 0.0;          // crossing angle about z, radians
  double t_d = 0.0;          // s
  double noise_sigma = 0.0;  // Rician scale

  static TensorPhantom crossing(double d0, double phi, double t_d, double noise_sigma) {
    TensorPhantom p;
    p.d0 = d0;
    p.phi = phi;
    p.t_d = t_d;
    p.noise_sigma = noise_sigma;
    p.d1 = d0 * Eigen::Vector3d(1.0, 0.1, 0.1).asDiagonal();
    const Eigen::Matrix3d r = rotation_z(phi);
    p.d2 = r.transpose() * p.d1 * r;
    return p;
  }
};

inline double latent_signal(const QPoint& q, const TensorPhantom& p) {
  const Eigen::Vector3d v(q.x, q.y, q.z);
  const double e1 = std::exp(-p.t_d * v.dot(p.d1 * v));
  const double e2 = std::exp(-p.t_d * v.dot(p.d2 * v));
  return 0.5 * (e1 + e2);
}

// Rician corruption of a magnitude value: sqrt((v + e1)^2 + e2^2) with
// independent zero-mean Gaussians of standard deviation sigma.
inline double rician(double value, double sigma, std::mt19937_64& rng) {
  if (sigma == 0.0) return value;
  std::normal_distribution<double> gauss(0.0, sigma);
  const double re = value + gauss(rng);
  const double im = gauss(rng);
  return std::sqrt(re * re + im * im);
}

namespace detail {

inline Eigen::Vector3d tensor_eigenvalues(const Eigen::Matrix3d& d) {
  if ((d - d.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + d.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("tensor index: input tensor is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(d);
  return es.eigenvalues();
}

}  // namespace detail

// Fractional anisotropy from eigenvalues; 0 for isotropic tensors, 1 in the
// rank-deficient limit.
inline double fa(const Eigen::Matrix3d& d) {
  const Eigen::Vector3d lam = detail::tensor_eigenvalues(d);
  const double mean = lam.mean();
  const double num = (lam.array() - mean).square().sum();
  const double den = lam.squaredNorm();
  if (den == 0.0) return 0.0;
  return std::sqrt(1.5 * num / den);
}

// Mean diffusivity, trace/3, in the tensor's units (mm^2/s here).
inline double md(const Eigen::Matrix3d& d) {
  (void)detail::tensor_eigenvalues(d);  // symmetry check
  return d.trace() / 3.0;
}

// Deterministic, roughly uniform unit directions from a Fibonacci spiral.
inline std::vector<QPoint> fibonacci_directions(int count) {
  if (count < 1) throw std::invalid_argument("fibonacci_directions: count must be >= 1");
  std::vector<QPoint> out;
  out.reserve(static_cast<std::size_t>(count));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = (count == 1) ? 1.0 : 1.0 - 2.0 * (i + 0.5) / count;
    const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double th = golden * i;
    out.push_back({rad * std::cos(th), rad * std::sin(th), z});
  }
  return out;
}

namespace detail {

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::Quaterniond quat(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  quat.normalize();
  return quat.toRotationMatrix();
}

}  // namespace detail

// Multi-shell scheme with the given per-shell b-values and direction counts.
// Directions come from a Fibonacci spiral; by default each shell is rotated
// by a seeded random rotation so shells do not share orientations. With
// shared_directions the first shell's unrotated direction set is reused on
// every shell, which reproduces the radial-interpolation pathology of schemes
// that repeat gradient orientations across shells.
inline std::shared_ptr<AcquisitionScheme> make_shell_scheme(std::span<const double> b_values,
                                                            std::span<const int> dirs_per_shell,
                                                            double t_d,
                                                            bool shared_directions = false,
                                                            std::uint64_t seed = 0) {
  if (b_values.size() != dirs_per_shell.size() || b_values.empty())
    throw std::invalid_argument("make_shell_scheme: need matching, nonempty shell lists");
  if (!(t_d > 0.0)) throw std::invalid_argument("make_shell_scheme: t_d must be positive");
  auto scheme = std::make_shared<AcquisitionScheme>();
  scheme->t_d = t_d;
  for (std::size_t s = 0; s < b_values.size(); ++s) {
    const double b = b_values[s];
    if (!(b > 0.0)) throw std::invalid_argument("make_shell_scheme: b-values must be positive");
    scheme->b_values.push_back(b);
    const double qmag = std::sqrt(b / t_d);
    // shared mode drops the per-shell rotation, so equal-count shells carry
    // identical orientations (the sampling pattern that makes interpolation
    // predominantly radial)
    std::vector<QPoint> dirs = fibonacci_directions(dirs_per_shell[s]);
    if (!shared_directions) {
      auto rng = make_rng(seed, 0xd12ec7100aULL + s);
      const Eigen::Matrix3d rot = detail::random_rotation(rng);
      for (auto& d : dirs) {
        const Eigen::Vector3d v = rot * Eigen::Vector3d(d.x, d.y, d.z);
        d = {v.x(), v.y(), v.z()};
      }
    }
    for (const auto& d : dirs) {
      scheme->points.push_back(qmag * d);
      scheme->shell_ids.push_back(static_cast<int>(s));
    }
  }
  scheme->validate();
  return scheme;
}

// One voxel per crossing angle; both the Rician-corrupted and the latent
// signals are returned. Per-voxel generator streams are derived from the
// master seed, so the data set is reproducible under any parallel schedule.
struct PhantomDataset {
  SignalTable noisy;
  SignalTable latent;
  std::vector<double> angles;  // radians
};

inline PhantomDataset make_phantom_dataset(std::span<const double> angles,
                                           std::shared_ptr<const AcquisitionScheme> scheme,
                                           double d0, double noise_sigma, std::uint64_t seed) {
  if (!scheme) throw std::invalid_argument("make_phantom_dataset: missing scheme");
  if (angles.empty()) throw std::invalid_argument("make_phantom_dataset: no angles");
  const Eigen::Index n = static_cast<Eigen::Index>(scheme->size());
  PhantomDataset out;
  out.angles.assign(angles.begin(), angles.end());
  out.noisy.scheme = scheme;
  out.latent.scheme = scheme;
  out.noisy.values.resize(static_cast<Eigen::Index>(angles.size()), n);
  out.latent.values.resize(static_cast<Eigen::Index>(angles.size()), n);
  for (std::size_t v = 0; v < angles.size(); ++v) {
    const TensorPhantom phantom =
        TensorPhantom::crossing(d0, angles[v], scheme->t_d, noise_sigma);
    auto rng = make_rng(seed, 0xa7c3ULL + v);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = latent_signal(scheme->points[static_cast<std::size_t>(i)], phantom);
      out.latent.values(static_cast<Eigen::Index>(v), i) = e;
      out.noisy.values(static_cast<Eigen::Index>(v), i) = rician(e, noise_sigma, rng);
    }
  }
  out.noisy.validate();
  out.latent.validate();
  return out;
}

// Analytic ground truth: the Fourier pair of each Gaussian compartment is a
// zero-mean Gaussian propagator with covariance 2*t_d*D.
inline double analytic_eap(const QPoint& r, const TensorPhantom& p) {
  const Eigen::Vector3d v(r.x, r.y, r.z);
  const double twopi = 2.0 * std::numbers::pi;
  double total = 0.0;
  for (const Eigen::Matrix3d* d : {&p.d1, &p.d2}) {
    const Eigen::Matrix3d cov = 2.0 * p.t_d * (*d);
    const double det = cov.determinant();
    const double quad = v.dot(cov.inverse() * v);
    total += 0.5 * std::exp(-0.5 * quad) / std::sqrt(twopi * twopi * twopi * det);
  }
  return total;
}

inline double analytic_rtop(const TensorPhantom& p) {
  const double twopi = 2.0 * std::numbers::pi;
  double total = 0.0;
  for (const Eigen::Matrix3d* d : {&p.d1, &p.d2}) {
    const double det = (2.0 * p.t_d * (*d)).determinant();
    total += 0.5 / std::sqrt(twopi * twopi * twopi * det);
  }
  return total;
}

}  // namespace qspace::simulate
