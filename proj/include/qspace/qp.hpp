#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <vector>

namespace qspace::qp {

struct Options {
  double tolerance = 1e-8;   // relative KKT residual and complementarity target
  int max_iterations = 200;
};

struct Solution {
  Eigen::VectorXd x;
  Eigen::VectorXd z;  // multipliers of G x >= h
  Eigen::VectorXd w;  // multipliers of x >= lb
  // active-set guess from the final iterate (multiplier dominates slack),
  // in the solver's equilibrated units; input to solution polishing
  std::vector<char> active_ineq;
  std::vector<char> active_bound;  // indexed like x; false for unbounded coords
  int iterations = 0;
  bool converged = false;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double gap = 0.0;
};

namespace detail {

inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  return alpha;
}

}  // namespace detail

// Minimize 0.5 x'Px + q'x subject to G x >= h and x >= lb, with P symmetric
// positive semidefinite. Mehrotra predictor-corrector primal-dual interior
// point with dense factorizations. Inequality rows are equilibrated to unit
// infinity norm internally; multipliers are reported for the original rows.
// lb entries may be -inf to leave a coordinate unbounded.
inline Solution solve_qp(const Eigen::MatrixXd& p_in, const Eigen::VectorXd& q_in,
                         const Eigen::MatrixXd& g_in, const Eigen::VectorXd& h_in,
                         const Eigen::VectorXd& lb, const Options& opt = {},
                         const Eigen::VectorXd* x_hint = nullptr) {
  const Eigen::Index n = p_in.rows();
  const Eigen::Index m = g_in.rows();
  if (p_in.cols() != n || q_in.size() != n || (m > 0 && g_in.cols() != n) || h_in.size() != m ||
      lb.size() != n)
    throw std::invalid_argument("solve_qp: inconsistent dimensions");

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> bounded;
  for (Eigen::Index i = 0; i < n; ++i)
    if (lb[i] > -inf) bounded.push_back(i);
  const Eigen::Index nb = static_cast<Eigen::Index>(bounded.size());

  // row equilibration of the general inequalities
  Eigen::VectorXd rowscale = Eigen::VectorXd::Ones(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double s = g_in.row(i).cwiseAbs().maxCoeff();
    if (s > 0.0) rowscale[i] = s;
  }
  Eigen::MatrixXd g = rowscale.cwiseInverse().asDiagonal() * g_in;
  Eigen::VectorXd h = h_in.cwiseQuotient(rowscale);

  const Eigen::MatrixXd& p = p_in;
  const Eigen::VectorXd& q = q_in;

  Solution sol;
  Eigen::VectorXd x = x_hint ? *x_hint : Eigen::VectorXd::Zero(n);

  // infeasible start: slacks floored away from the boundary, residuals absorb
  // the mismatch
  Eigen::VectorXd s = (m > 0) ? (g * x - h).cwiseMax(1.0).eval() : Eigen::VectorXd();
  Eigen::VectorXd z = Eigen::VectorXd::Ones(m);
  Eigen::VectorXd t(nb), w(nb);
  for (Eigen::Index k = 0; k < nb; ++k) t[k] = std::max(x[bounded[k]] - lb[bounded[k]], 1.0);
  w.setOnes();

  const double total_pairs = static_cast<double>(m + nb);
  if (total_pairs == 0.0) {
    // unconstrained: direct solve
    sol.x = p.ldlt().solve(-q);
    sol.converged = true;
    return sol;
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  for (int it = 0; it < opt.max_iterations; ++it) {
    // residuals
    Eigen::VectorXd rd = p * x + q;
    if (m > 0) rd.noalias() -= g.transpose() * z;
    for (Eigen::Index k = 0; k < nb; ++k) rd[bounded[k]] -= w[k];
    Eigen::VectorXd rp1 = (m > 0) ? (g * x - s - h).eval() : Eigen::VectorXd();
    Eigen::VectorXd rp2(nb);
    for (Eigen::Index k = 0; k < nb; ++k) rp2[k] = x[bounded[k]] - t[k] - lb[bounded[k]];

    const double total_gap = ((m > 0) ? s.dot(z) : 0.0) + ((nb > 0) ? t.dot(w) : 0.0);
    const double mu = total_gap / total_pairs;

    const double pres = std::max((m > 0) ? rp1.cwiseAbs().maxCoeff() : 0.0,
                                 (nb > 0) ? rp2.cwiseAbs().maxCoeff() : 0.0);
    const double dres = rd.cwiseAbs().maxCoeff();
    const double pscale = 1.0 + std::max({(m > 0) ? h.cwiseAbs().maxCoeff() : 0.0,
                                          (m > 0) ? (g * x).cwiseAbs().maxCoeff() : 0.0,
                                          x.cwiseAbs().maxCoeff()});
    const Eigen::VectorXd px = p * x;
    double dscale = 1.0 + std::max(px.cwiseAbs().maxCoeff(), q.cwiseAbs().maxCoeff());
    if (m > 0) dscale = std::max(dscale, (g.transpose() * z).cwiseAbs().maxCoeff());
    // the total complementarity gap bounds the objective suboptimality, so it
    // is measured relative to the objective value itself
    const double objscale = 1.0 + std::abs(0.5 * x.dot(px) + q.dot(x));

    sol.primal_residual = pres / pscale;
    sol.dual_residual = dres / dscale;
    sol.gap = total_gap / objscale;
    sol.iterations = it;
    if (sol.primal_residual <= opt.tolerance && sol.dual_residual <= opt.tolerance &&
        sol.gap <= opt.tolerance) {
      sol.converged = true;
      break;
    }

    // normal-equations matrix
    Eigen::MatrixXd hmat = p;
    if (m > 0) {
      const Eigen::VectorXd d1 = z.cwiseQuotient(s);
      hmat.noalias() += g.transpose() * d1.asDiagonal() * g;
    }
    for (Eigen::Index k = 0; k < nb; ++k) hmat(bounded[k], bounded[k]) += w[k] / t[k];

    double reg = 0.0;
    for (int attempt = 0; attempt < 4; ++attempt) {
      ldlt.compute(hmat);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) break;
      const double add = (reg == 0.0) ? 1e-12 * (1.0 + hmat.diagonal().maxCoeff()) : reg * 100.0;
      hmat.diagonal().array() += add;
      reg += add;
    }

    auto solve_direction = [&](const Eigen::VectorXd& rc1, const Eigen::VectorXd& rc2,
                               Eigen::VectorXd& dx, Eigen::VectorXd& ds, Eigen::VectorXd& dz,
                               Eigen::VectorXd& dt, Eigen::VectorXd& dw) {
      Eigen::VectorXd rhs = -rd;
      if (m > 0) rhs.noalias() -= g.transpose() * ((rc1 + z.cwiseProduct(rp1)).cwiseQuotient(s));
      for (Eigen::Index k = 0; k < nb; ++k)
        rhs[bounded[k]] -= (rc2[k] + w[k] * rp2[k]) / t[k];
      dx = ldlt.solve(rhs);
      if (m > 0) {
        ds = g * dx + rp1;
        dz = -(rc1 + z.cwiseProduct(ds)).cwiseQuotient(s);
      }
      dt.resize(nb);
      dw.resize(nb);
      for (Eigen::Index k = 0; k < nb; ++k) {
        dt[k] = dx[bounded[k]] + rp2[k];
        dw[k] = -(rc2[k] + w[k] * dt[k]) / t[k];
      }
    };

    // predictor
    Eigen::VectorXd dx, ds, dz, dt, dw;
    Eigen::VectorXd rc1 = (m > 0) ? s.cwiseProduct(z).eval() : Eigen::VectorXd();
    Eigen::VectorXd rc2 = t.cwiseProduct(w);
    solve_direction(rc1, rc2, dx, ds, dz, dt, dw);

    double ap = 1.0, ad = 1.0;
    if (m > 0) {
      ap = std::min(ap, detail::max_step(s, ds));
      ad = std::min(ad, detail::max_step(z, dz));
    }
    if (nb > 0) {
      ap = std::min(ap, detail::max_step(t, dt));
      ad = std::min(ad, detail::max_step(w, dw));
    }
    double mu_aff = 0.0;
    if (m > 0) mu_aff += (s + ap * ds).dot(z + ad * dz);
    if (nb > 0) mu_aff += (t + ap * dt).dot(w + ad * dw);
    mu_aff /= total_pairs;
    const double ratio = std::min(1.0, std::max(0.0, mu_aff / std::max(mu, 1e-300)));
    const double sigma = ratio * ratio * ratio;

    // corrector
    if (m > 0) rc1 = s.cwiseProduct(z) + ds.cwiseProduct(dz) - Eigen::VectorXd::Constant(m, sigma * mu);
    rc2 = t.cwiseProduct(w) + dt.cwiseProduct(dw) - Eigen::VectorXd::Constant(nb, sigma * mu);
    solve_direction(rc1, rc2, dx, ds, dz, dt, dw);

    const double tau = std::max(0.99, 1.0 - mu);
    ap = 1.0;
    ad = 1.0;
    if (m > 0) {
      ap = std::min(ap, tau * detail::max_step(s, ds));
      ad = std::min(ad, tau * detail::max_step(z, dz));
    }
    if (nb > 0) {
      ap = std::min(ap, tau * detail::max_step(t, dt));
      ad = std::min(ad, tau * detail::max_step(w, dw));
    }
    ap = std::min(ap, 1.0);
    ad = std::min(ad, 1.0);
    if (ap < 1e-13 && ad < 1e-13) break;  // stalled

    x += ap * dx;
    if (m > 0) {
      s += ap * ds;
      z += ad * dz;
    }
    t += ap * dt;
    w += ad * dw;
  }

  sol.x = x;
  sol.z = (m > 0) ? z.cwiseQuotient(rowscale).eval() : Eigen::VectorXd();
  sol.w = w;
  sol.active_ineq.assign(static_cast<std::size_t>(m), 0);
  for (Eigen::Index i = 0; i < m; ++i)
    if (z[i] > s[i]) sol.active_ineq[static_cast<std::size_t>(i)] = 1;
  sol.active_bound.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index k = 0; k < nb; ++k)
    if (w[k] > t[k]) sol.active_bound[static_cast<std::size_t>(bounded[k])] = 1;
  return sol;
}

}  // namespace qspace::qp
