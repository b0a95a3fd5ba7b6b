#pragma once

#include <qspace/grid.hpp>
#include <qspace/qp.hpp>
#include <qspace/types.hpp>

#include <fstream>
#include <ostream>
#include <string>

namespace qspace::eap {

// Propagator values on the displacement grid, 1/mm^3.
struct EapVolume {
  Eigen::VectorXd values;
  double dr = 0.0;
  double total_mass = 0.0;  // sum(values) * dr^3

  static EapVolume from_values(Eigen::VectorXd v, const CartesianGrid& g) {
    EapVolume out;
    out.dr = g.dr;
    out.total_mass = v.sum() * g.dr * g.dr * g.dr;
    out.values = std::move(v);
    return out;
  }
};

// Return-to-origin probability: the r = 0 row of the inverse transform.
inline double rtop(const Eigen::VectorXd& f, const CartesianGrid& g) {
  if (static_cast<std::size_t>(f.size()) != g.size())
    throw std::invalid_argument("rtop: vector length does not match grid");
  return idft_scale(g) * f.sum();
}

// Clip-and-renormalize reconstruction: P = F*mean, negatives set to zero,
// rescaled to unit mass.
inline EapVolume reconstruct_naive(const Eigen::VectorXd& mean, const CartesianGrid& g) {
  Eigen::VectorXd p = idft_apply(g, mean).cwiseMax(0.0);
  const double mass = p.sum() * g.dr * g.dr * g.dr;
  if (!(mass > 0.0))
    throw std::runtime_error("reconstruct_naive: propagator is identically zero");
  p /= mass;
  return EapVolume::from_values(std::move(p), g);
}

struct QpSettings {
  double tolerance = 1e-8;
  int max_iterations = 200;
  double variance_floor_rel = 1e-6;  // sigma_* floored at this fraction of max(sigma_*)
};

struct QpReconstruction {
  Eigen::VectorXd adjusted_signal;  // f*, full grid
  Eigen::VectorXd weights;          // diagonal of W = diag(1/sigma_*) actually used
  EapVolume eap;
  double objective = 0.0;           // ||W (f* - mean)||^2
  int iterations = 0;
  bool converged = false;
};

// Objective of the constrained weighted least-squares problem.
inline double qp_objective(const Eigen::VectorXd& f, const Eigen::VectorXd& mean,
                           const Eigen::VectorXd& weights) {
  return weights.cwiseProduct(f - mean).squaredNorm();
}

// Readjust the predicted signal so that the reconstructed propagator is
// nonnegative and integrates to one: minimize ||W(f - mean)||^2 subject to
// F f >= 0, f(0) = 1 and f >= 0. The unique optimum of this strictly convex
// problem inherits the antipodal symmetry of the predictions, so the solve
// runs over negation-orbit representatives; the origin value is substituted
// out, which enforces f(0) = 1 exactly. Inputs are symmetrized on entry
// (a no-op for kernel-based predictions, which are symmetric by construction).
inline QpReconstruction reconstruct_qp(const GpPrediction& pred, const CartesianGrid& g,
                                       const QpSettings& settings = {}) {
  const std::size_t nn = g.size();
  if (static_cast<std::size_t>(pred.mean.size()) != nn ||
      static_cast<std::size_t>(pred.variance.size()) != nn)
    throw std::invalid_argument("reconstruct_qp: prediction length does not match grid");

  // weights from floored predictive standard deviations
  Eigen::VectorXd sigma = pred.variance.cwiseMax(0.0).cwiseSqrt();
  const double smax = sigma.maxCoeff();
  if (smax > 0.0)
    sigma = sigma.cwiseMax(settings.variance_floor_rel * smax);
  else
    sigma.setOnes();

  const EvenOrbits orbits = even_orbits(g);
  const Eigen::Index r = static_cast<Eigen::Index>(orbits.count());
  const Eigen::Index o = static_cast<Eigen::Index>(orbits.origin_orbit);

  const Eigen::VectorXd mu_r = reduce_symmetric(g, orbits, pred.mean);
  Eigen::VectorXd sig_r(r);
  for (Eigen::Index j = 0; j < r; ++j) {
    const std::size_t i = orbits.representative[static_cast<std::size_t>(j)];
    const std::size_t k = g.negate_index(i);
    sig_r[j] = (orbits.multiplicity[static_cast<std::size_t>(j)] == 1)
                   ? sigma[static_cast<Eigen::Index>(i)]
                   : 0.5 * (sigma[static_cast<Eigen::Index>(i)] + sigma[static_cast<Eigen::Index>(k)]);
  }

  // diagonal objective: sum_j mult_j * w_j^2 (g_j - mu_j)^2, normalized to a
  // unit leading weight so the solver sees O(1) data; the reported objective
  // is scaled back to the true units
  Eigen::VectorXd d(r);
  for (Eigen::Index j = 0; j < r; ++j)
    d[j] = orbits.multiplicity[static_cast<std::size_t>(j)] / (sig_r[j] * sig_r[j]);
  const double d_scale = d.maxCoeff();
  d /= d_scale;

  const Eigen::MatrixXd gmat = reduced_idft(g, orbits);
  // a point mass at the origin is feasible, so the problem never is infeasible
  if (!(gmat.col(o).minCoeff() > 0.0))
    throw std::logic_error("reconstruct_qp: origin transform column must be positive");

  // substitute the equality f(0) = 1: variables are the non-origin orbits
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(r - 1));
  for (Eigen::Index j = 0; j < r; ++j)
    if (j != o) keep.push_back(j);

  const Eigen::Index nv = r - 1;
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nv, nv);
  Eigen::VectorXd q(nv);
  Eigen::MatrixXd gi(r, nv);
  for (Eigen::Index c = 0; c < nv; ++c) {
    const Eigen::Index j = keep[static_cast<std::size_t>(c)];
    p(c, c) = 2.0 * d[j];
    q[c] = -2.0 * d[j] * mu_r[j];
    gi.col(c) = gmat.col(j);
  }
  const Eigen::VectorXd h = -gmat.col(o);
  const Eigen::VectorXd lb = Eigen::VectorXd::Zero(nv);

  Eigen::VectorXd hint(nv);
  for (Eigen::Index c = 0; c < nv; ++c) hint[c] = std::max(mu_r[keep[static_cast<std::size_t>(c)]], 0.0);

  qp::Options qopt;
  qopt.tolerance = settings.tolerance;
  qopt.max_iterations = settings.max_iterations;
  const qp::Solution qsol = solve_qp(p, q, gi, h, lb, qopt, &hint);
  if (!qsol.converged)
    throw std::runtime_error("reconstruct_qp: interior-point solver did not converge (residuals " +
                             std::to_string(qsol.primal_residual) + "/" +
                             std::to_string(qsol.dual_residual) + ")");

  // polish: re-solve on the identified active set through the exact KKT
  // system and keep the result when it certifies as optimal
  Eigen::VectorXd x_best = qsol.x;
  {
    const Eigen::VectorXd slack = gi * qsol.x - h;
    const double slack_scale = 1.0 + h.cwiseAbs().maxCoeff();
    const double x_scale = 1.0 + qsol.x.cwiseAbs().maxCoeff();
    std::vector<Eigen::Index> act_rows, act_bounds;
    for (Eigen::Index i = 0; i < gi.rows(); ++i)
      if (qsol.active_ineq[static_cast<std::size_t>(i)] && slack[i] < 1e-5 * slack_scale)
        act_rows.push_back(i);
    for (Eigen::Index j = 0; j < nv; ++j)
      if (qsol.active_bound[static_cast<std::size_t>(j)] && qsol.x[j] < 1e-5 * x_scale)
        act_bounds.push_back(j);

    const Eigen::Index na = static_cast<Eigen::Index>(act_rows.size() + act_bounds.size());
    Eigen::VectorXd mu_v(nv), dinv(nv);
    for (Eigen::Index c = 0; c < nv; ++c) {
      mu_v[c] = mu_r[keep[static_cast<std::size_t>(c)]];
      dinv[c] = 1.0 / d[keep[static_cast<std::size_t>(c)]];
    }
    Eigen::MatrixXd a(na, nv);
    Eigen::VectorXd b(na);
    for (std::size_t i = 0; i < act_rows.size(); ++i) {
      a.row(static_cast<Eigen::Index>(i)) = gi.row(act_rows[i]);
      b[static_cast<Eigen::Index>(i)] = h[act_rows[i]];
    }
    for (std::size_t j = 0; j < act_bounds.size(); ++j) {
      const Eigen::Index row = static_cast<Eigen::Index>(act_rows.size() + j);
      a.row(row).setZero();
      a(row, act_bounds[j]) = 1.0;
      b[row] = 0.0;
    }

    Eigen::VectorXd x_pol;
    if (na == 0) {
      x_pol = mu_v;
    } else {
      const Eigen::MatrixXd schur = 0.5 * a * dinv.asDiagonal() * a.transpose();
      const Eigen::VectorXd theta =
          schur.completeOrthogonalDecomposition().solve(b - a * mu_v);
      if (theta.minCoeff() >= -1e-8 * (1.0 + theta.cwiseAbs().maxCoeff()))
        x_pol = mu_v + 0.5 * dinv.cwiseProduct(a.transpose() * theta);
    }
    if (x_pol.size() == nv) {
      const double hscale = 1.0 + h.cwiseAbs().maxCoeff();
      const double xscale = 1.0 + mu_v.cwiseAbs().maxCoeff();
      if ((gi * x_pol - h).minCoeff() >= -1e-9 * hscale && x_pol.minCoeff() >= -1e-9 * xscale)
        x_best = x_pol;
    }
  }

  Eigen::VectorXd g_full(r);
  g_full[o] = 1.0;
  for (Eigen::Index c = 0; c < nv; ++c)
    g_full[keep[static_cast<std::size_t>(c)]] = std::max(x_best[c], 0.0);

  QpReconstruction out;
  out.adjusted_signal = expand_symmetric(g, orbits, g_full);
  out.weights = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nn));
  for (std::size_t i = 0; i < nn; ++i)
    out.weights[static_cast<Eigen::Index>(i)] =
        1.0 / sig_r[static_cast<Eigen::Index>(orbits.orbit_of[i])];
  const Eigen::VectorXd p_orbit = gmat * g_full;
  out.eap = EapVolume::from_values(expand_symmetric(g, orbits, p_orbit), g);
  out.objective = qp_objective(out.adjusted_signal, pred.mean, out.weights);
  out.iterations = qsol.iterations;
  out.converged = qsol.converged;
  return out;
}

// CSV exports (External interfaces): signal grid rows qx,qy,qz,mean,std and
// EAP rows rx,ry,rz,P; the slice export emits the z = 0 plane for contouring.
inline void write_grid_signal_csv(std::ostream& out, const CartesianGrid& g,
                                  const Eigen::VectorXd& mean, const Eigen::VectorXd& stddev) {
  out << "qx,qy,qz,mean,std\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    const QPoint p = g.q_point(i);
    out << p.x << "," << p.y << "," << p.z << "," << mean[static_cast<Eigen::Index>(i)] << ","
        << stddev[static_cast<Eigen::Index>(i)] << "\n";
  }
}

inline void write_eap_csv(std::ostream& out, const CartesianGrid& g, const EapVolume& eap) {
  out << "rx,ry,rz,P\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    const QPoint p = g.r_point(i);
    out << p.x << "," << p.y << "," << p.z << "," << eap.values[static_cast<Eigen::Index>(i)]
        << "\n";
  }
}

inline void write_eap_slice_csv(std::ostream& out, const CartesianGrid& g, const EapVolume& eap) {
  out << "rx,ry,P\n";
  const int h = g.half();
  for (int iy = 0; iy < g.n; ++iy)
    for (int ix = 0; ix < g.n; ++ix) {
      const std::size_t idx = static_cast<std::size_t>(ix) +
                              static_cast<std::size_t>(g.n) * (static_cast<std::size_t>(iy) +
                                                               static_cast<std::size_t>(g.n) *
                                                                   static_cast<std::size_t>(h));
      const QPoint p = g.r_point(idx);
      out << p.x << "," << p.y << "," << eap.values[static_cast<Eigen::Index>(idx)] << "\n";
    }
}

}  // namespace qspace::eap
