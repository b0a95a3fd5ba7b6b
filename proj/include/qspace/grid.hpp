#pragma once

#include <qspace/types.hpp>

#include <complex>
#include <numbers>
#include <vector>

namespace qspace::eap {

// Symmetric, odd-sized Cartesian q-space grid with the paired displacement
// grid. Linear indexing runs x fastest: idx = ix + n*(iy + n*iz); axis
// coordinates are (i - (n-1)/2) * spacing, so the origin lies on the grid.
struct CartesianGrid {
  int n = 0;          // points per axis, odd
  double q_max = 0;   // 1/mm
  double dq = 0;      // 2*q_max/(n-1)
  double dr = 0;      // 2*pi/(n*dq), mm

  std::size_t size() const {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
  }

  int half() const { return (n - 1) / 2; }

  std::size_t origin_index() const {
    const std::size_t h = static_cast<std::size_t>(half());
    const std::size_t un = static_cast<std::size_t>(n);
    return h + un * (h + un * h);
  }

  std::array<int, 3> axis_indices(std::size_t idx) const {
    const int un = n;
    const int ix = static_cast<int>(idx % static_cast<std::size_t>(un));
    const int iy = static_cast<int>((idx / static_cast<std::size_t>(un)) % static_cast<std::size_t>(un));
    const int iz = static_cast<int>(idx / (static_cast<std::size_t>(un) * static_cast<std::size_t>(un)));
    return {ix, iy, iz};
  }

  QPoint q_point(std::size_t idx) const {
    const auto [ix, iy, iz] = axis_indices(idx);
    return {(ix - half()) * dq, (iy - half()) * dq, (iz - half()) * dq};
  }

  QPoint r_point(std::size_t idx) const {
    const auto [ix, iy, iz] = axis_indices(idx);
    return {(ix - half()) * dr, (iy - half()) * dr, (iz - half()) * dr};
  }

  std::size_t negate_index(std::size_t idx) const {
    const auto [ix, iy, iz] = axis_indices(idx);
    const std::size_t un = static_cast<std::size_t>(n);
    return static_cast<std::size_t>(n - 1 - ix) + un * (static_cast<std::size_t>(n - 1 - iy) +
                                                        un * static_cast<std::size_t>(n - 1 - iz));
  }

  std::vector<QPoint> q_points() const {
    std::vector<QPoint> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = q_point(i);
    return out;
  }
};

inline CartesianGrid make_grid(int n, double q_max) {
  if (n < 3 || n % 2 == 0)
    throw std::invalid_argument("make_grid: n must be an odd integer >= 3");
  if (!(q_max > 0.0) || !std::isfinite(q_max))
    throw std::invalid_argument("make_grid: q_max must be positive");
  CartesianGrid g;
  g.n = n;
  g.q_max = q_max;
  g.dq = 2.0 * q_max / (n - 1);
  g.dr = 2.0 * std::numbers::pi / (n * g.dq);
  return g;
}

inline double idft_scale(const CartesianGrid& g) {
  const double twopi = 2.0 * std::numbers::pi;
  return (g.dq * g.dq * g.dq) / (twopi * twopi * twopi);
}

// Dense inverse-DFT operator: F[m,k] = cos(q_k . r_m) * dq^3/(2*pi)^3. The
// real cosine form is exact for the symmetric signal estimates produced by
// the even kernel. Only sensible for desk-scale grids (n^3 x n^3 entries).
inline Eigen::MatrixXd idft_matrix(const CartesianGrid& g) {
  const std::size_t nn = g.size();
  if (g.n > 15)
    throw std::invalid_argument("idft_matrix: dense operator limited to n <= 15; use idft_apply");
  const double c = idft_scale(g);
  Eigen::MatrixXd f(static_cast<Eigen::Index>(nn), static_cast<Eigen::Index>(nn));
  std::vector<QPoint> qs(nn), rs(nn);
  for (std::size_t i = 0; i < nn; ++i) {
    qs[i] = g.q_point(i);
    rs[i] = g.r_point(i);
  }
  for (std::size_t m = 0; m < nn; ++m)
    for (std::size_t k = 0; k < nn; ++k)
      f(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) = c * std::cos(qs[k].dot(rs[m]));
  return f;
}

// Applies the inverse-DFT operator without materializing it, via separable
// 1-D transforms; identical to idft_matrix(g) * f up to round-off.
inline Eigen::VectorXd idft_apply(const CartesianGrid& g, const Eigen::VectorXd& f) {
  const std::size_t nn = g.size();
  if (static_cast<std::size_t>(f.size()) != nn)
    throw std::invalid_argument("idft_apply: vector length does not match grid");
  const int n = g.n;
  const int h = g.half();
  using Cplx = std::complex<double>;

  Eigen::MatrixXcd t(n, n);  // t(m,k) = exp(i*2*pi*(k-h)*(m-h)/n)
  for (int m = 0; m < n; ++m)
    for (int k = 0; k < n; ++k) {
      const double phase = 2.0 * std::numbers::pi * (k - h) * (m - h) / n;
      t(m, k) = Cplx(std::cos(phase), std::sin(phase));
    }

  Eigen::VectorXcd buf = f.cast<Cplx>();
  Eigen::VectorXcd line(n), transformed(n);
  const std::size_t strides[3] = {1, static_cast<std::size_t>(n),
                                  static_cast<std::size_t>(n) * static_cast<std::size_t>(n)};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t stride = strides[axis];
    const std::size_t outer_a = strides[(axis + 1) % 3];
    const std::size_t outer_b = strides[(axis + 2) % 3];
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        const std::size_t base = outer_a * static_cast<std::size_t>(a) +
                                 outer_b * static_cast<std::size_t>(b);
        for (int k = 0; k < n; ++k) line[k] = buf[base + stride * static_cast<std::size_t>(k)];
        transformed.noalias() = t * line;
        for (int k = 0; k < n; ++k) buf[base + stride * static_cast<std::size_t>(k)] = transformed[k];
      }
    }
  }

  const double c = idft_scale(g);
  Eigen::VectorXd out(static_cast<Eigen::Index>(nn));
  for (std::size_t i = 0; i < nn; ++i) out[static_cast<Eigen::Index>(i)] = c * buf[i].real();
  return out;
}

// Orbits of the negation map q -> -q on grid indices. The origin is its own
// orbit; every other orbit pairs an index with its mirror. Symmetric signals
// are fully determined by one value per orbit, which the QP reconstruction
// exploits.
struct EvenOrbits {
  std::vector<std::size_t> representative;  // orbit -> smallest member index
  std::vector<std::size_t> orbit_of;        // full index -> orbit
  std::vector<int> multiplicity;            // 1 for the origin, else 2
  std::size_t origin_orbit = 0;

  std::size_t count() const { return representative.size(); }
};

inline EvenOrbits even_orbits(const CartesianGrid& g) {
  const std::size_t nn = g.size();
  EvenOrbits o;
  o.orbit_of.assign(nn, static_cast<std::size_t>(-1));
  for (std::size_t i = 0; i < nn; ++i) {
    if (o.orbit_of[i] != static_cast<std::size_t>(-1)) continue;
    const std::size_t j = g.negate_index(i);
    const std::size_t orbit = o.representative.size();
    o.representative.push_back(i);
    o.multiplicity.push_back(i == j ? 1 : 2);
    o.orbit_of[i] = orbit;
    o.orbit_of[j] = orbit;
    if (i == g.origin_index()) o.origin_orbit = orbit;
  }
  return o;
}

// Reduced inverse-DFT: rows are r-orbit representatives, columns sum the
// cosine kernel over each q-orbit. Acting on orbit values it reproduces the
// full transform of the expanded symmetric vector.
inline Eigen::MatrixXd reduced_idft(const CartesianGrid& g, const EvenOrbits& o) {
  const std::size_t r = o.count();
  const double c = idft_scale(g);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r));
  for (std::size_t mo = 0; mo < r; ++mo) {
    const QPoint rm = g.r_point(o.representative[mo]);
    for (std::size_t ko = 0; ko < r; ++ko) {
      const QPoint qk = g.q_point(o.representative[ko]);
      double v = std::cos(qk.dot(rm));
      if (o.multiplicity[ko] == 2) v *= 2.0;  // mirrored point contributes the same cosine
      m(static_cast<Eigen::Index>(mo), static_cast<Eigen::Index>(ko)) = c * v;
    }
  }
  return m;
}

// Average a full-grid vector over negation orbits (exact no-op for symmetric
// input) and the inverse expansion.
inline Eigen::VectorXd reduce_symmetric(const CartesianGrid& g, const EvenOrbits& o,
                                        const Eigen::VectorXd& full) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(o.count()));
  for (std::size_t j = 0; j < o.count(); ++j) {
    const std::size_t i = o.representative[j];
    const std::size_t k = g.negate_index(i);
    out[static_cast<Eigen::Index>(j)] =
        (o.multiplicity[j] == 1)
            ? full[static_cast<Eigen::Index>(i)]
            : 0.5 * (full[static_cast<Eigen::Index>(i)] + full[static_cast<Eigen::Index>(k)]);
  }
  return out;
}

inline Eigen::VectorXd expand_symmetric(const CartesianGrid& g, const EvenOrbits& o,
                                        const Eigen::VectorXd& reduced) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = reduced[static_cast<Eigen::Index>(o.orbit_of[i])];
  return out;
}

}  // namespace qspace::eap
