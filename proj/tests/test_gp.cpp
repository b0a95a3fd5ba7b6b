#include <qspace/gp.hpp>
#include <qspace/random.hpp>
#include <qspace/simulate.hpp>

#include <catch2/catch.hpp>

#include <Eigen/Geometry>

using namespace qspace;

namespace {

std::shared_ptr<AcquisitionScheme> small_scheme(int points_per_shell, std::uint64_t seed,
                                                std::vector<double> bs = {1000.0, 3000.0}) {
  std::vector<int> counts(bs.size(), points_per_shell);
  return simulate::make_shell_scheme(bs, counts, 0.025, false, seed);
}

Hyperparameters plain_hyper(double qmin) {
  Hyperparameters h;
  h.a0 = 0.4;
  h.a2 = 0.3;
  h.a4 = 0.2;
  h.a6 = 0.1;
  h.sigma_r = 1.2;
  h.sigma_n2 = 1e-3;
  h.xi = 1e-2 * qmin;
  return h;
}

}  // namespace

TEST_CASE("posterior on hand-built matrices matches the 2x2 oracle", "[gp]") {
  Eigen::MatrixXd ktilde(2, 2);
  ktilde << 1.0, 0.5, 0.5, 1.0;
  Eigen::LLT<Eigen::MatrixXd> llt(ktilde);
  Eigen::VectorXd y(2);
  y << 1.0, 0.0;
  Eigen::MatrixXd kstar(2, 1);
  kstar << 0.5, 0.25;
  Eigen::VectorXd kdiag(1);
  kdiag << 1.0;
  const auto pred = gp::posterior(llt, y, kstar, kdiag);
  CHECK(pred.mean[0] == Approx(0.5).epsilon(1e-12));
  CHECK(pred.variance[0] == Approx(0.75).epsilon(1e-12));
}

TEST_CASE("noiseless prediction interpolates the data", "[gp]") {
  auto scheme = small_scheme(6, 21);
  Hyperparameters h = plain_hyper(scheme->min_nonzero_q());
  h.sigma_n2 = 0.0;
  const auto model = gp::make_model(scheme, h);

  auto rng = make_rng(1, 1);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Eigen::VectorXd y(static_cast<Eigen::Index>(scheme->size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = u(rng);

  const auto pred = gp::predict(model, y, scheme->points);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    CHECK(pred.mean[i] == Approx(y[i]).margin(1e-8));
    CHECK(pred.variance[i] >= 0.0);
    CHECK(pred.variance[i] <= 1e-6);
  }
}

TEST_CASE("prediction at an uncorrelated query recovers the prior", "[gp]") {
  // one training point with k(x,x)=1 and a mock query via tiny radial overlap
  auto scheme = std::make_shared<AcquisitionScheme>();
  scheme->t_d = 0.025;
  scheme->b_values = {1000.0};
  scheme->points = {QPoint{200.0, 0.0, 0.0}};
  scheme->shell_ids = {0};
  Hyperparameters h;
  h.a0 = 1.0;
  h.sigma_r = 0.05;  // overlap decays fast in log-radius
  h.sigma_n2 = 0.0;
  h.xi = 1e-4;
  const auto model = gp::make_model(scheme, h);
  Eigen::VectorXd y(1);
  y << 0.8;

  SECTION("training point reproduces the value with zero variance") {
    const auto pred = gp::predict(model, y, scheme->points);
    CHECK(pred.mean[0] == Approx(0.8).epsilon(1e-10));
    CHECK(pred.variance[0] == Approx(0.0).margin(1e-10));
  }
  SECTION("distant radius is essentially prior") {
    const std::vector<QPoint> far{{0.0, 0.0, 1e6}};
    const auto pred = gp::predict(model, y, far);
    CHECK(std::abs(pred.mean[0]) < 1e-6);
    CHECK(pred.variance[0] == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("log marginal likelihood scalar case", "[gp]") {
  auto scheme = std::make_shared<AcquisitionScheme>();
  scheme->t_d = 0.025;
  scheme->b_values = {1000.0};
  scheme->points = {QPoint{200.0, 0.0, 0.0}};
  scheme->shell_ids = {0};
  Hyperparameters h;
  h.a0 = 1.0;  // k = 1
  h.sigma_r = 1.0;
  h.sigma_n2 = 0.25;
  h.xi = 2.0;
  Eigen::MatrixXd y(1, 1);
  y << 0.5;
  // -0.5*(0.25/1.25 + ln 1.25)
  CHECK(gp::log_marginal(*scheme, y, h) == Approx(-0.21157).margin(1e-5));

  SECTION("two identical voxels double the value") {
    Eigen::MatrixXd y2(2, 1);
    y2 << 0.5, 0.5;
    CHECK(gp::log_marginal(*scheme, y2, h) ==
          Approx(2.0 * gp::log_marginal(*scheme, y, h)).epsilon(1e-12));
  }
  SECTION("zero signal leaves only the determinant term") {
    Eigen::MatrixXd y0(1, 1);
    y0 << 0.0;
    CHECK(gp::log_marginal(*scheme, y0, h) == Approx(-0.5 * std::log(1.25)).epsilon(1e-12));
  }
}

TEST_CASE("gradient matches central finite differences", "[gp]") {
  auto scheme = small_scheme(5, 33);
  auto rng = make_rng(17, 4);
  std::uniform_real_distribution<double> u(0.2, 1.0);

  Eigen::MatrixXd rows(3, static_cast<Eigen::Index>(scheme->size()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (Eigen::Index c = 0; c < rows.cols(); ++c) rows(r, c) = u(rng);

  for (int trial = 0; trial < 10; ++trial) {
    Hyperparameters h;
    h.a0 = 0.1 + u(rng);
    h.a2 = 0.1 + u(rng);
    h.a4 = 0.1 + u(rng);
    h.a6 = 0.1 + u(rng);
    h.sigma_r = 0.5 + u(rng);
    h.sigma_n2 = 0.05 + 0.2 * u(rng);
    h.xi = 1e-2 * scheme->min_nonzero_q();

    const auto grad = gp::grad_log_marginal(*scheme, rows, h);

    const double step = 1e-5;
    Eigen::Matrix<double, 6, 1> logp;
    logp << std::log(h.a0), std::log(h.a2), std::log(h.a4), std::log(h.a6), std::log(h.sigma_r),
        std::log(h.sigma_n2);
    for (int k = 0; k < 6; ++k) {
      auto eval_at = [&](double delta) {
        Eigen::Matrix<double, 6, 1> lp = logp;
        lp[k] += delta;
        Hyperparameters hh = h;
        hh.a0 = std::exp(lp[0]);
        hh.a2 = std::exp(lp[1]);
        hh.a4 = std::exp(lp[2]);
        hh.a6 = std::exp(lp[3]);
        hh.sigma_r = std::exp(lp[4]);
        hh.sigma_n2 = std::exp(lp[5]);
        return gp::log_marginal(*scheme, rows, hh);
      };
      const double fd = (eval_at(step) - eval_at(-step)) / (2.0 * step);
      CHECK(grad[k] == Approx(fd).epsilon(1e-5).margin(1e-7));
    }
  }
}

TEST_CASE("gradient is additive over voxels", "[gp]") {
  auto scheme = small_scheme(4, 8);
  auto rng = make_rng(3, 14);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Eigen::MatrixXd rows(2, static_cast<Eigen::Index>(scheme->size()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (Eigen::Index c = 0; c < rows.cols(); ++c) rows(r, c) = u(rng);
  Eigen::MatrixXd doubled(4, rows.cols());
  doubled << rows, rows;

  const Hyperparameters h = plain_hyper(scheme->min_nonzero_q());
  const auto g1 = gp::grad_log_marginal(*scheme, rows, h);
  const auto g2 = gp::grad_log_marginal(*scheme, doubled, h);
  CHECK((g2 - 2.0 * g1).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + g1.cwiseAbs().maxCoeff()));
}

TEST_CASE("brute-force inversion oracle equivalence for small n", "[gp]") {
  auto rng = make_rng(99, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (int n = 1; n <= 5; ++n) {
    auto scheme = std::make_shared<AcquisitionScheme>();
    scheme->t_d = 0.025;
    scheme->b_values.clear();
    for (int i = 0; i < n; ++i) {
      QPoint d{gauss(rng), gauss(rng), gauss(rng)};
      const double r = 100.0 + 500.0 * u(rng);
      d = (r / d.magnitude()) * d;
      scheme->points.push_back(d);
      scheme->b_values.push_back(scheme->t_d * d.squared_magnitude());
      scheme->shell_ids.push_back(i);
    }
    Hyperparameters h = plain_hyper(scheme->min_nonzero_q());
    h.sigma_n2 = 0.01;
    const auto model = gp::make_model(scheme, h);

    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) y[i] = u(rng);
    std::vector<QPoint> queries;
    for (int i = 0; i < 4; ++i) {
      QPoint d{gauss(rng), gauss(rng), gauss(rng)};
      queries.push_back((100.0 + 600.0 * u(rng)) / d.magnitude() * d);
    }
    const auto pred = gp::predict(model, y, queries);

    // independent path: explicit inverse
    Eigen::MatrixXd ktilde = kernel::gram(scheme->points, h);
    ktilde.diagonal().array() += h.sigma_n2;
    const Eigen::MatrixXd kinv = ktilde.inverse();
    const Eigen::MatrixXd kstar = kernel::cross_gram(scheme->points, queries, h);
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const Eigen::VectorXd ks = kstar.col(static_cast<Eigen::Index>(qi));
      const double mu = ks.dot(kinv * y);
      const double var = h.angular_sum() - ks.dot(kinv * ks);
      CHECK(pred.mean[static_cast<Eigen::Index>(qi)] == Approx(mu).margin(1e-10));
      CHECK(pred.variance[static_cast<Eigen::Index>(qi)] == Approx(std::max(var, 0.0)).margin(1e-10));
    }
  }
}

TEST_CASE("predictive variance lies in [0, prior]", "[gp]") {
  auto scheme = small_scheme(8, 77);
  const Hyperparameters h = plain_hyper(scheme->min_nonzero_q());
  const auto model = gp::make_model(scheme, h);
  auto rng = make_rng(31, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd y = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(scheme->size()));
  std::vector<QPoint> queries;
  for (int i = 0; i < 64; ++i) {
    QPoint d{gauss(rng), gauss(rng), gauss(rng)};
    queries.push_back((800.0 * u(rng) / d.magnitude()) * d);
  }
  const auto pred = gp::predict(model, y, queries);
  for (Eigen::Index i = 0; i < pred.variance.size(); ++i) {
    CHECK(pred.variance[i] >= 0.0);
    CHECK(pred.variance[i] <= h.angular_sum() + 1e-12);
  }
}

TEST_CASE("rotation equivariance of predictions", "[gp]") {
  auto scheme = small_scheme(6, 55);
  const Hyperparameters h = plain_hyper(scheme->min_nonzero_q());
  auto rng = make_rng(6, 6);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd y(static_cast<Eigen::Index>(scheme->size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = u(rng);

  Eigen::Quaterniond quat(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  quat.normalize();
  const Eigen::Matrix3d rot = quat.toRotationMatrix();

  std::vector<QPoint> queries;
  for (int i = 0; i < 10; ++i) {
    QPoint d{gauss(rng), gauss(rng), gauss(rng)};
    queries.push_back((300.0 * u(rng) / d.magnitude()) * d);
  }

  const auto model = gp::make_model(scheme, h);
  const auto base = gp::predict(model, y, queries);

  auto rotated = std::make_shared<AcquisitionScheme>(*scheme);
  for (auto& p : rotated->points) {
    const Eigen::Vector3d v = rot * Eigen::Vector3d(p.x, p.y, p.z);
    p = {v.x(), v.y(), v.z()};
  }
  std::vector<QPoint> rotated_queries;
  for (const auto& p : queries) {
    const Eigen::Vector3d v = rot * Eigen::Vector3d(p.x, p.y, p.z);
    rotated_queries.push_back({v.x(), v.y(), v.z()});
  }
  const auto model_rot = gp::make_model(rotated, h);
  const auto pred_rot = gp::predict(model_rot, y, rotated_queries);

  for (Eigen::Index i = 0; i < base.mean.size(); ++i) {
    CHECK(pred_rot.mean[i] == Approx(base.mean[i]).margin(1e-10));
    CHECK(pred_rot.variance[i] == Approx(base.variance[i]).margin(1e-10));
  }
}

TEST_CASE("joint and per-voxel processing agree", "[gp]") {
  auto scheme = small_scheme(6, 13);
  const Hyperparameters h = plain_hyper(scheme->min_nonzero_q());
  const auto model = gp::make_model(scheme, h);
  auto rng = make_rng(8, 1);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Eigen::MatrixXd rows(5, static_cast<Eigen::Index>(scheme->size()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (Eigen::Index c = 0; c < rows.cols(); ++c) rows(r, c) = u(rng);

  std::vector<QPoint> queries{scheme->points[0], {50.0, 10.0, 0.0}, {0.0, 300.0, 100.0}};
  const gp::BatchPredictor batch(model, queries);
  const Eigen::MatrixXd joint = batch.means(rows);
  for (Eigen::Index v = 0; v < rows.rows(); ++v) {
    const auto single = gp::predict(model, rows.row(v), queries);
    for (Eigen::Index qi = 0; qi < single.mean.size(); ++qi) {
      CHECK(joint(v, qi) == Approx(single.mean[qi]).margin(1e-12));
      CHECK(batch.variance()[qi] == Approx(single.variance[qi]).margin(1e-12));
    }
  }
}

TEST_CASE("cached factor reproduces the covariance", "[gp]") {
  auto scheme = small_scheme(6, 99);
  const Hyperparameters h = plain_hyper(scheme->min_nonzero_q());
  const auto model = gp::make_model(scheme, h);
  Eigen::MatrixXd ktilde = kernel::gram(scheme->points, h);
  ktilde.diagonal().array() += h.sigma_n2;
  const Eigen::MatrixXd l = model.llt.matrixL();
  const double err = (l * l.transpose() - ktilde).norm() / ktilde.norm();
  CHECK(err < 1e-8);
}

TEST_CASE("training improves the marginal likelihood", "[gp][train]") {
  auto scheme = small_scheme(10, 5);
  // isotropic Gaussian signal with noise
  const double true_sigma = 0.02;
  auto rng = make_rng(2024, 3);
  std::normal_distribution<double> gauss(0.0, true_sigma);
  SignalTable table;
  table.scheme = scheme;
  table.values.resize(200, static_cast<Eigen::Index>(scheme->size()));
  for (Eigen::Index v = 0; v < table.values.rows(); ++v) {
    for (std::size_t i = 0; i < scheme->size(); ++i) {
      const double b = scheme->t_d * scheme->points[i].squared_magnitude();
      const double e = std::exp(-b * 7e-4);
      table.values(v, static_cast<Eigen::Index>(i)) = std::max(0.0, e + gauss(rng));
    }
  }

  Hyperparameters init;
  init.a0 = init.a2 = init.a4 = init.a6 = 0.05;
  init.sigma_r = 1.0;
  init.sigma_n2 = 1e-2;
  init.xi = kernel::default_xi(*scheme);

  gp::TrainConfig config;
  config.starts = 2;
  config.max_iterations = 200;
  config.seed = 7;
  const auto model = gp::train(scheme, table, init, config);

  const double init_lm = gp::log_marginal(*scheme, table.values, init);
  CHECK(model.log_marginal >= init_lm);
  // recovered noise scale within a factor of two
  CHECK(std::sqrt(model.h.sigma_n2) > true_sigma / 2.0);
  CHECK(std::sqrt(model.h.sigma_n2) < true_sigma * 2.0);

  SECTION("gradient is small at the optimum when converged") {
    if (model.converged) {
      const auto g = gp::grad_log_marginal(*scheme, table.values, model.h);
      CHECK(g.norm() <= 10.0 * config.grad_tolerance);
    }
  }

  SECTION("multi-start returns the best single start") {
    gp::TrainConfig single = config;
    single.starts = 1;
    double best = -1e300;
    for (const auto& start : gp::train_start_points(init, config.starts, config.seed)) {
      Hyperparameters h0;
      h0.a0 = std::exp(start[0]);
      h0.a2 = std::exp(start[1]);
      h0.a4 = std::exp(start[2]);
      h0.a6 = std::exp(start[3]);
      h0.sigma_r = std::exp(start[4]);
      h0.sigma_n2 = std::exp(start[5]);
      h0.xi = init.xi;
      best = std::max(best, gp::train(scheme, table, h0, single).log_marginal);
    }
    CHECK(model.log_marginal >= best - 1e-9 * std::abs(best));
  }
}

TEST_CASE("training subsets voxels beyond the cap deterministically", "[gp][train]") {
  auto scheme = small_scheme(5, 19);
  auto rng = make_rng(12, 0);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  SignalTable table;
  table.scheme = scheme;
  table.values.resize(12, static_cast<Eigen::Index>(scheme->size()));
  for (Eigen::Index r = 0; r < table.values.rows(); ++r)
    for (Eigen::Index c = 0; c < table.values.cols(); ++c) table.values(r, c) = u(rng);

  Hyperparameters init = plain_hyper(scheme->min_nonzero_q());
  gp::TrainConfig config;
  config.starts = 1;
  config.max_iterations = 15;
  config.max_voxels = 5;
  config.seed = 3;
  const auto a = gp::train(scheme, table, init, config);
  const auto b = gp::train(scheme, table, init, config);
  CHECK(a.h.a0 == b.h.a0);
  CHECK(a.log_marginal == b.log_marginal);
}

TEST_CASE("zero-iteration training returns the initialization verbatim", "[gp][train]") {
  auto scheme = small_scheme(4, 61);
  SignalTable table;
  table.scheme = scheme;
  table.values = Eigen::MatrixXd::Ones(2, static_cast<Eigen::Index>(scheme->size()));
  Hyperparameters init = plain_hyper(scheme->min_nonzero_q());
  gp::TrainConfig config;
  config.starts = 1;
  config.max_iterations = 0;
  const auto model = gp::train(scheme, table, init, config);
  CHECK(model.h.a0 == init.a0);
  CHECK(model.h.a2 == init.a2);
  CHECK(model.h.a4 == init.a4);
  CHECK(model.h.a6 == init.a6);
  CHECK(model.h.sigma_r == init.sigma_r);
  CHECK(model.h.sigma_n2 == init.sigma_n2);
  CHECK(model.h.xi == init.xi);
}
