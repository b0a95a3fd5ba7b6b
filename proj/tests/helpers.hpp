#pragma once

// Shared test-side oracles, independent of the library's production paths.

#include <qspace/grid.hpp>
#include <qspace/random.hpp>
#include <qspace/types.hpp>

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace testing_oracles {

// Random signal that is feasible for the propagator QP by construction:
// the center-shifted sequence is a circular autocorrelation of a nonnegative
// sequence, so its spectrum (hence F f) is nonnegative, f itself is
// nonnegative, and it is normalized to f(origin) = 1.
inline Eigen::VectorXd random_feasible_signal(const qspace::eap::CartesianGrid& g,
                                              std::mt19937_64& rng) {
  const int n = g.n;
  const int h = g.half();
  const std::size_t nn = g.size();
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> u(nn);
  for (auto& v : u) v = uni(rng);

  auto wrap = [n](int a) { return ((a % n) + n) % n; };
  auto at = [&](int x, int y, int z) -> double {
    return u[static_cast<std::size_t>(wrap(x)) + static_cast<std::size_t>(n) *
             (static_cast<std::size_t>(wrap(y)) + static_cast<std::size_t>(n) *
              static_cast<std::size_t>(wrap(z)))];
  };

  Eigen::VectorXd f(static_cast<Eigen::Index>(nn));
  for (int kz = 0; kz < n; ++kz)
    for (int ky = 0; ky < n; ++ky)
      for (int kx = 0; kx < n; ++kx) {
        // shifted lag: the grid center maps to lag zero
        const int lx = kx - h, ly = ky - h, lz = kz - h;
        double acc = 0.0;
        for (int jz = 0; jz < n; ++jz)
          for (int jy = 0; jy < n; ++jy)
            for (int jx = 0; jx < n; ++jx)
              acc += at(jx, jy, jz) * at(jx + lx, jy + ly, jz + lz);
        f[static_cast<Eigen::Index>(kx) +
          static_cast<Eigen::Index>(n) * (ky + static_cast<Eigen::Index>(n) * kz)] = acc;
      }
  return f / f[static_cast<Eigen::Index>(g.origin_index())];
}

// Exhaustive active-set QP oracle for the propagator problem on small grids:
// minimize sum w2_k (f_k - mu_k)^2 subject to F f >= 0, f >= 0, f(0) = 1.
// Enumerates candidate active sets by increasing size and returns the first
// KKT-certified solution, which convexity makes the global optimum.
struct ActiveSetResult {
  Eigen::VectorXd f;
  double objective = 0.0;
  int active_size = 0;
};

inline std::optional<ActiveSetResult> active_set_oracle(const Eigen::MatrixXd& fmat,
                                                        const Eigen::VectorXd& mu,
                                                        const Eigen::VectorXd& w2,
                                                        std::size_t origin, int max_active = 3) {
  const Eigen::Index nn = mu.size();
  const Eigen::Index mrows = 2 * nn;  // F rows then bound rows
  const double scale = 1.0 + mu.cwiseAbs().maxCoeff();

  auto constraint_row = [&](Eigen::Index c) -> Eigen::VectorXd {
    if (c < nn) return fmat.row(c).transpose();
    Eigen::VectorXd e = Eigen::VectorXd::Zero(nn);
    e[c - nn] = 1.0;
    return e;
  };

  const Eigen::VectorXd dinv = w2.cwiseInverse();

  // Solve the equality-restricted problem via the dual Schur complement:
  // f = mu + 0.5 * D^-1 A^T theta with A theta-rows = active rows + origin.
  auto try_subset = [&](const std::vector<Eigen::Index>& subset) -> std::optional<ActiveSetResult> {
    const int k = static_cast<int>(subset.size());
    Eigen::MatrixXd rows(k + 1, nn);
    Eigen::VectorXd rhs(k + 1);
    for (int i = 0; i < k; ++i) {
      rows.row(i) = constraint_row(subset[static_cast<std::size_t>(i)]).transpose();
      rhs[i] = 0.0;
    }
    rows.row(k).setZero();
    rows(k, static_cast<Eigen::Index>(origin)) = 1.0;
    rhs[k] = 1.0;

    const Eigen::MatrixXd schur =
        0.5 * rows * dinv.asDiagonal() * rows.transpose();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(schur);
    if (!lu.isInvertible()) return std::nullopt;
    const Eigen::VectorXd theta = lu.solve(rhs - rows * mu);
    // dual feasibility of the active inequalities
    for (int i = 0; i < k; ++i)
      if (theta[i] < -1e-9) return std::nullopt;
    const Eigen::VectorXd f = mu + 0.5 * dinv.cwiseProduct(rows.transpose() * theta);
    // primal feasibility of everything
    if ((fmat * f).minCoeff() < -1e-9 * scale) return std::nullopt;
    if (f.minCoeff() < -1e-9 * scale) return std::nullopt;
    ActiveSetResult out;
    out.f = f;
    out.objective = w2.cwiseProduct(f - mu).dot(f - mu);
    out.active_size = k;
    return out;
  };

  std::vector<Eigen::Index> subset;
  if (auto r = try_subset(subset)) return r;
  for (Eigen::Index a = 0; a < mrows && max_active >= 1; ++a) {
    if (a - nn == static_cast<Eigen::Index>(origin)) continue;
    if (auto r = try_subset({a})) return r;
  }
  for (Eigen::Index a = 0; a < mrows && max_active >= 2; ++a) {
    if (a - nn == static_cast<Eigen::Index>(origin)) continue;
    for (Eigen::Index b = a + 1; b < mrows; ++b) {
      if (b - nn == static_cast<Eigen::Index>(origin)) continue;
      if (auto r = try_subset({a, b})) return r;
    }
  }
  for (Eigen::Index a = 0; a < mrows && max_active >= 3; ++a) {
    if (a - nn == static_cast<Eigen::Index>(origin)) continue;
    for (Eigen::Index b = a + 1; b < mrows; ++b) {
      if (b - nn == static_cast<Eigen::Index>(origin)) continue;
      for (Eigen::Index c = b + 1; c < mrows; ++c) {
        if (c - nn == static_cast<Eigen::Index>(origin)) continue;
        if (auto r = try_subset({a, b, c})) return r;
      }
    }
  }
  return std::nullopt;
}

}  // namespace testing_oracles
