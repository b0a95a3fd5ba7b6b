#pragma once

#include <qspace/kernel.hpp>
#include <qspace/random.hpp>
#include <qspace/types.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace qspace::gp {

using Vector6d = Eigen::Matrix<double, 6, 1>;

struct CholeskyFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Factorize K + sigma_n2*I, adding diagonal jitter of 1e-10 * angular_sum and
// retrying with tenfold increases (three attempts) if the factorization fails.
struct JitteredCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};

inline JitteredCholesky cholesky_with_jitter(Eigen::MatrixXd ktilde, double angular_sum) {
  JitteredCholesky out;
  double jitter = 0.0;
  for (int attempt = 0; attempt < 4; ++attempt) {
    if (attempt > 0) {
      const double add = (attempt == 1) ? 1e-10 * angular_sum : jitter * 9.0;
      ktilde.diagonal().array() += add;
      jitter += add;
    }
    out.llt.compute(ktilde);
    if (out.llt.info() == Eigen::Success) {
      out.jitter = jitter;
      return out;
    }
  }
  throw CholeskyFailure("covariance matrix is not positive definite after jitter retries");
}

struct TrainedModel {
  Hyperparameters h;
  std::shared_ptr<const AcquisitionScheme> scheme;
  Eigen::LLT<Eigen::MatrixXd> llt;  // factor of K + sigma_n2*I
  double jitter = 0.0;
  double log_marginal = std::numeric_limits<double>::quiet_NaN();
  bool converged = true;
  int iterations = 0;
};

// Build a model from fixed hyperparameters (no optimization): forms the Gram
// matrix of the scheme and caches its Cholesky factor.
inline TrainedModel make_model(std::shared_ptr<const AcquisitionScheme> scheme,
                               const Hyperparameters& h) {
  if (!scheme) throw std::invalid_argument("make_model: missing scheme");
  h.validate();
  TrainedModel m;
  m.h = h;
  m.scheme = std::move(scheme);
  Eigen::MatrixXd ktilde = kernel::gram(m.scheme->points, h);
  ktilde.diagonal().array() += h.sigma_n2;
  auto chol = cholesky_with_jitter(std::move(ktilde), h.angular_sum());
  m.llt = std::move(chol.llt);
  m.jitter = chol.jitter;
  return m;
}

// Posterior mean and variance from a cached factorization; the low-level
// entry point shared by predict() and the batch prediction path.
inline GpPrediction posterior(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& kstar, const Eigen::VectorXd& kdiag) {
  GpPrediction out;
  const Eigen::VectorXd alpha = llt.solve(y);
  out.mean = kstar.transpose() * alpha;
  Eigen::MatrixXd v = kstar;
  llt.matrixL().solveInPlace(v);
  out.variance = (kdiag - v.colwise().squaredNorm().transpose()).cwiseMax(0.0);
  return out;
}

inline GpPrediction predict(const TrainedModel& model, const Eigen::VectorXd& y,
                            std::span<const QPoint> queries) {
  if (static_cast<std::size_t>(y.size()) != model.scheme->size())
    throw std::invalid_argument("predict: signal length does not match scheme");
  for (const auto& q : queries)
    if (!q.is_finite()) throw std::invalid_argument("predict: non-finite query point");
  const Eigen::MatrixXd kstar = kernel::cross_gram(model.scheme->points, queries, model.h);
  const Eigen::VectorXd kdiag =
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(queries.size()), model.h.angular_sum());
  return posterior(model.llt, y, kstar, kdiag);
}

// Prediction of many voxels at a fixed query set. The cross-covariances and
// the variance vector are computed once; only the mean depends on y.
class BatchPredictor {
 public:
  BatchPredictor(const TrainedModel& model, std::span<const QPoint> queries)
      : model_(&model), kstar_(kernel::cross_gram(model.scheme->points, queries, model.h)) {
    Eigen::MatrixXd v = kstar_;
    model.llt.matrixL().solveInPlace(v);
    variance_ = (Eigen::VectorXd::Constant(kstar_.cols(), model.h.angular_sum()) -
                 v.colwise().squaredNorm().transpose().matrix())
                    .cwiseMax(0.0);
  }

  Eigen::VectorXd mean(const Eigen::VectorXd& y) const {
    return kstar_.transpose() * model_->llt.solve(y);
  }

  // voxels are rows of y_rows; result rows align with them
  Eigen::MatrixXd means(const Eigen::MatrixXd& y_rows) const {
    return model_->llt.solve(y_rows.transpose()).transpose() * kstar_;
  }

  const Eigen::VectorXd& variance() const { return variance_; }

  GpPrediction predict(const Eigen::VectorXd& y) const { return {mean(y), variance_}; }

 private:
  const TrainedModel* model_;
  Eigen::MatrixXd kstar_;
  Eigen::VectorXd variance_;
};

namespace detail {

// Assemble K + sigma_n2*I from cached pairwise pieces.
inline Eigen::MatrixXd ktilde_from_cache(const kernel::PairwiseCache& cache,
                                         const Hyperparameters& h) {
  Eigen::MatrixXd k =
      cache.radial(h.sigma_r).cwiseProduct(cache.angular(kernel::AngularCoefficients::from(h)));
  k.diagonal().array() += h.sigma_n2;
  return k;
}

inline Hyperparameters from_log(const Vector6d& logp, double xi) {
  Hyperparameters h;
  h.a0 = std::exp(logp[0]);
  h.a2 = std::exp(logp[1]);
  h.a4 = std::exp(logp[2]);
  h.a6 = std::exp(logp[3]);
  h.sigma_r = std::exp(logp[4]);
  h.sigma_n2 = std::exp(logp[5]);
  h.xi = xi;
  return h;
}

inline Vector6d to_log(const Hyperparameters& h) {
  auto safe_log = [](double v) { return std::log(std::max(v, 1e-12)); };
  Vector6d l;
  l << safe_log(h.a0), safe_log(h.a2), safe_log(h.a4), safe_log(h.a6), safe_log(h.sigma_r),
      safe_log(h.sigma_n2);
  return l;
}

// Log marginal likelihood (2*pi constant dropped) of all voxels at once and,
// optionally, its gradient in the six log-domain parameters. Returns nullopt
// when the covariance cannot be factorized at these parameters.
struct MarginalEvaluator {
  const kernel::PairwiseCache& cache;
  Eigen::MatrixXd yt;  // n x V, one column per voxel
  double xi;

  MarginalEvaluator(const kernel::PairwiseCache& c, const Eigen::MatrixXd& voxel_rows, double xi_)
      : cache(c), yt(voxel_rows.transpose()), xi(xi_) {}

  std::optional<double> value(const Vector6d& logp, Vector6d* grad) const {
    return value_at(from_log(logp, xi), grad);
  }

  std::optional<double> value_at(const Hyperparameters& h, Vector6d* grad) const {
    const double nvox = static_cast<double>(yt.cols());
    const Eigen::MatrixXd radial = cache.radial(h.sigma_r);
    const Eigen::MatrixXd angular = cache.angular(kernel::AngularCoefficients::from(h));
    Eigen::MatrixXd ktilde = radial.cwiseProduct(angular);
    ktilde.diagonal().array() += h.sigma_n2;

    JitteredCholesky chol;
    try {
      chol = cholesky_with_jitter(std::move(ktilde), h.angular_sum());
    } catch (const CholeskyFailure&) {
      return std::nullopt;
    }

    const Eigen::MatrixXd& lmat = chol.llt.matrixLLT();
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < lmat.rows(); ++i) logdet += 2.0 * std::log(lmat(i, i));

    const Eigen::MatrixXd alpha = chol.llt.solve(yt);
    const double quad = (yt.array() * alpha.array()).sum();
    const double value = -0.5 * (quad + nvox * logdet);

    if (grad) {
      const Eigen::Index n = yt.rows();
      const Eigen::MatrixXd kinv =
          chol.llt.solve(Eigen::MatrixXd::Identity(n, n));
      // d logp / d theta = 0.5 * <alpha alpha^T - V*Kinv, dK/dtheta>
      const Eigen::MatrixXd m = alpha * alpha.transpose() - nvox * kinv;
      const Eigen::ArrayXXd base = (radial.array() * m.array());
      (*grad)[0] = 0.5 * h.a0 * (base * cache.p0.array()).sum();
      (*grad)[1] = 0.5 * h.a2 * (base * cache.p2.array()).sum();
      (*grad)[2] = 0.5 * h.a4 * (base * cache.p4.array()).sum();
      (*grad)[3] = 0.5 * h.a6 * (base * cache.p6.array()).sum();
      const Eigen::ArrayXXd du =
          cache.u.array().square() / (h.sigma_r * h.sigma_r);
      (*grad)[4] =
          0.5 * (base * angular.array() * du).sum();
      (*grad)[5] = 0.5 * h.sigma_n2 * m.trace();
    }
    return value;
  }
};

}  // namespace detail

inline double log_marginal(const AcquisitionScheme& scheme, const Eigen::MatrixXd& voxel_rows,
                           const Hyperparameters& h) {
  if (voxel_rows.rows() < 1) throw std::invalid_argument("log_marginal: need at least one voxel");
  if (static_cast<std::size_t>(voxel_rows.cols()) != scheme.size())
    throw std::invalid_argument("log_marginal: signal width does not match scheme");
  const kernel::PairwiseCache cache(scheme.points, h.xi);
  const detail::MarginalEvaluator eval(cache, voxel_rows, h.xi);
  const auto v = eval.value_at(h, nullptr);
  if (!v) throw CholeskyFailure("log_marginal: covariance not positive definite");
  return *v;
}

inline double log_marginal(const SignalTable& signals, const Hyperparameters& h) {
  return log_marginal(*signals.scheme, signals.values, h);
}

// Gradient of the log marginal likelihood in the six log-domain parameters
// (log a0, log a2, log a4, log a6, log sigma_r, log sigma_n2).
inline Vector6d grad_log_marginal(const AcquisitionScheme& scheme,
                                  const Eigen::MatrixXd& voxel_rows, const Hyperparameters& h) {
  if (voxel_rows.rows() < 1)
    throw std::invalid_argument("grad_log_marginal: need at least one voxel");
  const kernel::PairwiseCache cache(scheme.points, h.xi);
  const detail::MarginalEvaluator eval(cache, voxel_rows, h.xi);
  Vector6d g;
  const auto v = eval.value_at(h, &g);
  if (!v) throw CholeskyFailure("grad_log_marginal: covariance not positive definite");
  return g;
}

struct TrainConfig {
  int max_iterations = 500;
  double grad_tolerance = 1e-6;
  int starts = 3;
  std::uint64_t seed = 0;
  std::size_t max_voxels = 100000;  // uniform random subset beyond this
};

// Start points for multi-start optimization: the given initialization plus
// seeded spreads around it in log-space.
inline std::vector<Vector6d> train_start_points(const Hyperparameters& init, int starts,
                                                std::uint64_t seed) {
  std::vector<Vector6d> out;
  out.push_back(detail::to_log(init));
  for (int s = 1; s < starts; ++s) {
    auto rng = make_rng(seed, 0xabcdULL + static_cast<std::uint64_t>(s));
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Vector6d p = out[0];
    for (int i = 0; i < 6; ++i) p[i] += u(rng);
    out.push_back(p);
  }
  return out;
}

namespace detail {

struct BfgsOutcome {
  Vector6d x;
  double value = -std::numeric_limits<double>::infinity();
  bool converged = false;
  int iterations = 0;
};

// Quasi-Newton ascent on the log marginal likelihood: BFGS on the negated
// objective with backtracking line search. Parameters live in log space, so
// positivity is automatic; steps are clamped to a wide box to avoid overflow.
inline BfgsOutcome maximize_bfgs(const MarginalEvaluator& eval, Vector6d x0, int max_iterations,
                                 double grad_tolerance) {
  constexpr double kBox = 25.0;
  auto clamp = [&](Vector6d v) {
    for (int i = 0; i < 6; ++i) v[i] = std::min(kBox, std::max(-kBox, v[i]));
    return v;
  };

  BfgsOutcome out;
  out.x = clamp(x0);
  Vector6d g;
  auto f0 = eval.value(out.x, &g);
  if (!f0) return out;  // unusable start
  out.value = *f0;

  // initial inverse Hessian scaled so the first trial step has unit length
  Eigen::Matrix<double, 6, 6> hinv =
      Eigen::Matrix<double, 6, 6>::Identity() / std::max(1.0, g.norm());
  bool scaled = false;
  for (int it = 0; it < max_iterations; ++it) {
    if (g.norm() <= grad_tolerance) {
      out.converged = true;
      return out;
    }
    Vector6d dir = hinv * g;  // ascent direction
    if (dir.dot(g) <= 0.0) {
      hinv = Eigen::Matrix<double, 6, 6>::Identity() / std::max(1.0, g.norm());
      scaled = false;
      dir = g / std::max(1.0, g.norm());
    }

    const double slope = dir.dot(g);
    if (slope <= 1e-13 * (1.0 + std::abs(out.value))) return out;  // flat to machine precision
    double step = 1.0;
    Vector6d xn;
    double fn = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      xn = clamp(out.x + step * dir);
      const auto fv = eval.value(xn, nullptr);
      if (fv && *fv >= out.value + 1e-4 * step * slope) {
        fn = *fv;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    out.iterations = it + 1;
    if (!accepted) return out;  // line search stalled; report best so far

    Vector6d gn;
    const auto fv = eval.value(xn, &gn);
    if (!fv) return out;
    const Vector6d s = xn - out.x;
    const Vector6d yv = -(gn - g);  // gradient change of the minimized objective
    out.x = xn;
    out.value = fn;
    g = gn;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (!scaled) {
        // standard rescale before the first update
        hinv = Eigen::Matrix<double, 6, 6>::Identity() * (sy / yv.squaredNorm());
        scaled = true;
      }
      const Eigen::Matrix<double, 6, 6> eye = Eigen::Matrix<double, 6, 6>::Identity();
      const Eigen::Matrix<double, 6, 6> v = eye - (s * yv.transpose()) / sy;
      hinv = v * hinv * v.transpose() + (s * s.transpose()) / sy;
    }
  }
  out.converged = g.norm() <= grad_tolerance;
  return out;
}

}  // namespace detail

// Hyperparameter estimation by maximizing the factorized marginal likelihood
// over all voxels (empirical Bayes). xi is taken from init and kept fixed.
inline TrainedModel train(std::shared_ptr<const AcquisitionScheme> scheme,
                          const SignalTable& signals, const Hyperparameters& init,
                          const TrainConfig& config = {}) {
  if (!scheme) throw std::invalid_argument("train: missing scheme");
  init.validate();
  if (signals.voxel_count() < 1) throw std::invalid_argument("train: need at least one voxel");
  if (static_cast<std::size_t>(signals.values.cols()) != scheme->size())
    throw std::invalid_argument("train: signal width does not match scheme");

  Eigen::MatrixXd rows = signals.values;
  if (signals.voxel_count() > config.max_voxels) {
    std::vector<std::size_t> idx(signals.voxel_count());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    auto rng = make_rng(config.seed, 0x5e1ec7ULL);
    std::shuffle(idx.begin(), idx.end(), rng);
    rows.resize(static_cast<Eigen::Index>(config.max_voxels), signals.values.cols());
    for (std::size_t i = 0; i < config.max_voxels; ++i)
      rows.row(static_cast<Eigen::Index>(i)) = signals.values.row(static_cast<Eigen::Index>(idx[i]));
  }

  const kernel::PairwiseCache cache(scheme->points, init.xi);
  const detail::MarginalEvaluator eval(cache, rows, init.xi);

  detail::BfgsOutcome best;
  int total_iterations = 0;
  bool any = false;
  for (const Vector6d& start :
       train_start_points(init, std::max(1, config.starts), config.seed)) {
    auto outcome =
        detail::maximize_bfgs(eval, start, config.max_iterations, config.grad_tolerance);
    total_iterations += outcome.iterations;
    if (!std::isfinite(outcome.value)) continue;
    if (!any || outcome.value > best.value ||
        (outcome.value == best.value && !best.converged && outcome.converged)) {
      best = outcome;
      any = true;
    }
  }
  if (!any)
    throw CholeskyFailure("train: covariance not positive definite at any start point");

  // keep the caller's exact values when the optimizer never left the start
  const Hyperparameters h_best = ((best.x - detail::to_log(init)).cwiseAbs().maxCoeff() == 0.0)
                                     ? init
                                     : detail::from_log(best.x, init.xi);
  TrainedModel model = make_model(scheme, h_best);
  model.log_marginal = best.value;
  model.converged = best.converged;
  model.iterations = total_iterations;
  return model;
}

}  // namespace qspace::gp
