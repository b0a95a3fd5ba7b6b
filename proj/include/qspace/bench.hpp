#pragma once

#include <qspace/augment.hpp>
#include <qspace/baseline.hpp>
#include <qspace/eap.hpp>
#include <qspace/gp.hpp>
#include <qspace/parallel.hpp>
#include <qspace/random.hpp>
#include <qspace/simulate.hpp>
#include <qspace/types.hpp>

#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace qspace::bench {

// A method predicts held-out signal values for every voxel at once: rows of
// the result align with the rows of retained_rows, columns with the queries.
using MethodFn = std::function<Eigen::MatrixXd(std::shared_ptr<const AcquisitionScheme> retained,
                                               const Eigen::MatrixXd& retained_rows,
                                               std::span<const QPoint> queries)>;

inline std::shared_ptr<AcquisitionScheme> subset_scheme(const AcquisitionScheme& scheme,
                                                        std::span<const std::size_t> indices) {
  auto out = std::make_shared<AcquisitionScheme>();
  out->t_d = scheme.t_d;
  out->b_values = scheme.b_values;
  for (std::size_t i : indices) {
    out->points.push_back(scheme.points[i]);
    out->shell_ids.push_back(scheme.shell_ids[i]);
  }
  out->validate();
  return out;
}

struct AugmentOptions {
  double q_cut_multiplier = 1.25;
  int zero_direction_count = 40;  // 0 keeps only the origin anchor
  // variance assigned to the zeroed estimates beyond the cutoff; they are
  // assertions of the method, so they get a firm anchor rather than the GP's
  // extrapolation variance
  double cutoff_anchor_variance = 1e-6;

  std::vector<QPoint> directions() const {
    if (zero_direction_count <= 20) {
      auto dirs = augment::dodecahedron_directions();
      dirs.resize(static_cast<std::size_t>(std::max(0, zero_direction_count)));
      return dirs;
    }
    return simulate::fibonacci_directions(zero_direction_count);
  }
};

// GP method: augment the retained scheme, factorize once, predict all voxels.
inline MethodFn gp_method(const Hyperparameters& h, AugmentOptions options = {}) {
  return [h, options](std::shared_ptr<const AcquisitionScheme> retained,
                      const Eigen::MatrixXd& retained_rows, std::span<const QPoint> queries) {
    const double q_cut = augment::default_q_cut(*retained, options.q_cut_multiplier);
    const auto dirs = options.directions();
    const auto aug = augment::augment_scheme(*retained, q_cut, dirs);
    const gp::TrainedModel model = gp::make_model(aug, h);
    const gp::BatchPredictor predictor(model, queries);
    Eigen::MatrixXd rows(retained_rows.rows(), aug->size());
    for (Eigen::Index v = 0; v < retained_rows.rows(); ++v)
      rows.row(v) = augment::augment_signal(retained_rows.row(v), dirs.size()).transpose();
    return predictor.means(rows);
  };
}

// Linear-interpolation method over the augmented retained samples.
inline MethodFn linear_method(AugmentOptions options = {}) {
  return [options](std::shared_ptr<const AcquisitionScheme> retained,
                   const Eigen::MatrixXd& retained_rows, std::span<const QPoint> queries) {
    const double q_cut = augment::default_q_cut(*retained, options.q_cut_multiplier);
    const auto dirs = options.directions();
    const auto aug = augment::augment_scheme(*retained, q_cut, dirs);
    const baseline::LinearInterpolator interp(aug);
    const auto locations = interp.locate_all(queries);
    Eigen::MatrixXd out(retained_rows.rows(), static_cast<Eigen::Index>(queries.size()));
    for (Eigen::Index v = 0; v < retained_rows.rows(); ++v) {
      const Eigen::VectorXd y = augment::augment_signal(retained_rows.row(v), dirs.size());
      for (std::size_t c = 0; c < locations.size(); ++c)
        out(v, static_cast<Eigen::Index>(c)) = baseline::LinearInterpolator::apply(locations[c], y);
    }
    return out;
  };
}

struct SubsampleConfig {
  std::vector<double> fractions_removed;  // each in (0,1)
  int repeats = 10;
  std::uint64_t seed = 0;
};

struct SubsampleReport {
  std::vector<double> fractions_removed;
  std::vector<std::string> methods;
  int realizations = 0;
  // error[method][fraction][shell]: mean |measured - estimated| scaled by the
  // global mean of the shell, averaged over realizations
  std::vector<std::vector<std::vector<double>>> error;
};

// Removes an equal fraction of measurements from each shell, estimates the
// removed values from the retained ones, and reports per-shell scaled mean
// absolute differences averaged over realizations.
inline SubsampleReport subsample_experiment(
    const SignalTable& signals, const std::vector<std::pair<std::string, MethodFn>>& methods,
    const SubsampleConfig& config) {
  signals.validate();
  if (signals.voxel_count() == 0)
    throw std::invalid_argument("subsample_experiment: no voxels");
  if (config.repeats < 1) throw std::invalid_argument("subsample_experiment: repeats must be >= 1");
  if (config.fractions_removed.empty())
    throw std::invalid_argument("subsample_experiment: no fractions");
  for (double f : config.fractions_removed)
    if (!(f > 0.0 && f < 1.0))
      throw std::invalid_argument("subsample_experiment: fractions must lie strictly in (0,1)");
  if (methods.empty()) throw std::invalid_argument("subsample_experiment: no methods");

  const AcquisitionScheme& scheme = *signals.scheme;
  const int shells = scheme.shell_count();
  std::vector<std::vector<std::size_t>> shell_points(static_cast<std::size_t>(shells));
  for (std::size_t i = 0; i < scheme.size(); ++i)
    shell_points[static_cast<std::size_t>(scheme.shell_ids[i])].push_back(i);

  // fixed scaling denominators: global per-shell means over the whole table
  std::vector<double> shell_mean(static_cast<std::size_t>(shells), 0.0);
  for (int s = 0; s < shells; ++s) {
    double acc = 0.0;
    for (std::size_t i : shell_points[static_cast<std::size_t>(s)])
      acc += signals.values.col(static_cast<Eigen::Index>(i)).sum();
    const double count = static_cast<double>(shell_points[static_cast<std::size_t>(s)].size()) *
                         static_cast<double>(signals.voxel_count());
    shell_mean[static_cast<std::size_t>(s)] = acc / count;
    if (!(shell_mean[static_cast<std::size_t>(s)] > 0.0))
      throw std::invalid_argument("subsample_experiment: shell " + std::to_string(s) +
                                  " has zero mean signal");
  }

  SubsampleReport report;
  report.fractions_removed = config.fractions_removed;
  report.realizations = config.repeats;
  for (const auto& m : methods) report.methods.push_back(m.first);
  report.error.assign(methods.size(),
                      std::vector<std::vector<double>>(
                          config.fractions_removed.size(),
                          std::vector<double>(static_cast<std::size_t>(shells), 0.0)));

  for (std::size_t fi = 0; fi < config.fractions_removed.size(); ++fi) {
    const double fraction = config.fractions_removed[fi];
    for (int rep = 0; rep < config.repeats; ++rep) {
      auto rng = make_rng(config.seed, 0xf00dULL + fi * 1000003ULL + static_cast<std::uint64_t>(rep));

      std::vector<std::size_t> removed, retained;
      for (int s = 0; s < shells; ++s) {
        auto idx = shell_points[static_cast<std::size_t>(s)];
        std::shuffle(idx.begin(), idx.end(), rng);
        const std::size_t size = idx.size();
        std::size_t count = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(size)));
        count = std::max<std::size_t>(count, 1);
        if (count >= size)
          throw std::invalid_argument("subsample_experiment: fraction " + std::to_string(fraction) +
                                      " removes all of shell " + std::to_string(s));
        removed.insert(removed.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
        retained.insert(retained.end(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end());
      }
      std::sort(removed.begin(), removed.end());
      std::sort(retained.begin(), retained.end());

      const auto retained_scheme = subset_scheme(scheme, retained);
      Eigen::MatrixXd retained_rows(signals.values.rows(), static_cast<Eigen::Index>(retained.size()));
      Eigen::MatrixXd removed_values(signals.values.rows(), static_cast<Eigen::Index>(removed.size()));
      std::vector<QPoint> queries(removed.size());
      for (std::size_t c = 0; c < retained.size(); ++c)
        retained_rows.col(static_cast<Eigen::Index>(c)) =
            signals.values.col(static_cast<Eigen::Index>(retained[c]));
      for (std::size_t c = 0; c < removed.size(); ++c) {
        removed_values.col(static_cast<Eigen::Index>(c)) =
            signals.values.col(static_cast<Eigen::Index>(removed[c]));
        queries[c] = scheme.points[removed[c]];
      }

      for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        const Eigen::MatrixXd estimated = methods[mi].second(retained_scheme, retained_rows, queries);
        if (estimated.rows() != removed_values.rows() || estimated.cols() != removed_values.cols())
          throw std::runtime_error("subsample_experiment: method '" + methods[mi].first +
                                   "' returned wrong shape");
        std::vector<double> abs_sum(static_cast<std::size_t>(shells), 0.0);
        std::vector<double> counts(static_cast<std::size_t>(shells), 0.0);
        for (std::size_t c = 0; c < removed.size(); ++c) {
          const std::size_t s = static_cast<std::size_t>(scheme.shell_ids[removed[c]]);
          abs_sum[s] += (removed_values.col(static_cast<Eigen::Index>(c)) -
                         estimated.col(static_cast<Eigen::Index>(c)))
                            .cwiseAbs()
                            .sum();
          counts[s] += static_cast<double>(signals.voxel_count());
        }
        for (int s = 0; s < shells; ++s)
          report.error[mi][fi][static_cast<std::size_t>(s)] +=
              abs_sum[static_cast<std::size_t>(s)] /
              (counts[static_cast<std::size_t>(s)] * shell_mean[static_cast<std::size_t>(s)] *
               config.repeats);
      }
    }
  }
  return report;
}

struct RtopConfig {
  std::vector<double> angles_deg = {30.0, 60.0, 90.0};
  double noise_sigma = 0.01;
  int repeats = 10;
  std::uint64_t seed = 0;
  double d0 = 2.5e-3;  // mm^2/s
  int grid_n = 11;
  AugmentOptions augment;
  int train_voxels = 100;  // mixtures for hyperparameter training when hyper is unset
  std::optional<Hyperparameters> hyper;
  gp::TrainConfig train;
  eap::QpSettings qp;
  int threads = 1;
};

struct RtopReport {
  std::vector<double> angles_deg;
  std::vector<std::string> methods{"gp", "linear"};
  std::vector<std::vector<double>> rel_error;  // [method][angle]
  Hyperparameters hyper_used;
  int repeats = 0;
};

// Relative return-to-origin-probability errors of the GP + QP pipeline and of
// linear interpolation on crossing-fiber phantoms, against the analytic
// mixture ground truth, averaged over noise realizations.
inline RtopReport rtop_experiment(std::shared_ptr<const AcquisitionScheme> scheme,
                                  const RtopConfig& config) {
  if (!scheme) throw std::invalid_argument("rtop_experiment: missing scheme");
  scheme->validate();
  if (config.repeats < 1) throw std::invalid_argument("rtop_experiment: repeats must be >= 1");

  Hyperparameters hyper;
  if (config.hyper) {
    hyper = *config.hyper;
  } else {
    // train on random crossing angles drawn uniformly from [0, 90] degrees
    auto rng = make_rng(config.seed, 0x7a41ULL);
    std::uniform_real_distribution<double> u(0.0, std::numbers::pi / 2.0);
    std::vector<double> angles(static_cast<std::size_t>(config.train_voxels));
    for (auto& a : angles) a = u(rng);
    const auto data = simulate::make_phantom_dataset(angles, scheme, config.d0,
                                                     config.noise_sigma, derive_seed(config.seed, 1));
    Hyperparameters init;
    init.a0 = init.a2 = init.a4 = init.a6 = 0.05;
    init.sigma_r = 1.0;
    init.sigma_n2 = 1e-3;
    init.xi = kernel::default_xi(*scheme);
    gp::TrainConfig tc = config.train;
    tc.seed = derive_seed(config.seed, 2);
    hyper = gp::train(scheme, data.noisy, init, tc).h;
  }

  const double q_cut = augment::default_q_cut(*scheme, config.augment.q_cut_multiplier);
  const auto dirs = config.augment.directions();
  const auto aug_scheme = augment::augment_scheme(*scheme, q_cut, dirs);
  const gp::TrainedModel model = gp::make_model(aug_scheme, hyper);
  const eap::CartesianGrid grid = eap::make_grid(config.grid_n, q_cut);
  const auto grid_points = grid.q_points();
  const gp::BatchPredictor predictor(model, grid_points);
  const baseline::LinearInterpolator interp(aug_scheme);
  const auto locations = interp.locate_all(grid_points);

  RtopReport report;
  report.angles_deg = config.angles_deg;
  report.hyper_used = hyper;
  report.repeats = config.repeats;
  report.rel_error.assign(2, std::vector<double>(config.angles_deg.size(), 0.0));

  struct Cell {
    double gp = 0.0;
    double lin = 0.0;
  };
  std::vector<Cell> cells(config.angles_deg.size() * static_cast<std::size_t>(config.repeats));

  parallel_for(cells.size(), config.threads, [&](std::size_t job) {
    const std::size_t ai = job % config.angles_deg.size();
    const double phi = config.angles_deg[ai] * std::numbers::pi / 180.0;
    const auto phantom =
        simulate::TensorPhantom::crossing(config.d0, phi, scheme->t_d, config.noise_sigma);
    auto rng = make_rng(config.seed, 0xbe2cULL + job);
    Eigen::VectorXd y(static_cast<Eigen::Index>(scheme->size()));
    for (std::size_t i = 0; i < scheme->size(); ++i)
      y[static_cast<Eigen::Index>(i)] =
          simulate::rician(simulate::latent_signal(scheme->points[i], phantom),
                           config.noise_sigma, rng);
    const double truth = simulate::analytic_rtop(phantom);

    // GP route: predict on the grid, cut off, readjust through the QP
    const Eigen::VectorXd y_aug = augment::augment_signal(y, dirs.size());
    GpPrediction pred{predictor.mean(y_aug), predictor.variance()};
    pred = augment::apply_cutoff(std::move(pred), grid_points, q_cut);
    pred = augment::anchor_cutoff_variance(std::move(pred), grid_points, q_cut,
                                           config.augment.cutoff_anchor_variance);
    const auto rec = eap::reconstruct_qp(pred, grid, config.qp);
    const double rtop_gp = eap::rtop(rec.adjusted_signal, grid);

    // linear route: interpolate onto the grid and read the r = 0 row
    Eigen::VectorXd f_lin(static_cast<Eigen::Index>(grid_points.size()));
    for (std::size_t c = 0; c < locations.size(); ++c)
      f_lin[static_cast<Eigen::Index>(c)] = baseline::LinearInterpolator::apply(locations[c], y_aug);
    const double rtop_lin = eap::rtop(f_lin, grid);

    cells[job].gp = std::abs(rtop_gp - truth) / truth;
    cells[job].lin = std::abs(rtop_lin - truth) / truth;
  });

  for (std::size_t ai = 0; ai < config.angles_deg.size(); ++ai) {
    for (int rep = 0; rep < config.repeats; ++rep) {
      const auto& cell = cells[static_cast<std::size_t>(rep) * config.angles_deg.size() + ai];
      report.rel_error[0][ai] += cell.gp / config.repeats;
      report.rel_error[1][ai] += cell.lin / config.repeats;
    }
  }
  return report;
}

struct VoxelSplit {
  SignalTable train;
  SignalTable test;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
};

inline VoxelSplit split_voxels(const SignalTable& table, std::size_t n_train, std::size_t n_test,
                               std::uint64_t seed) {
  if (n_train + n_test > table.voxel_count())
    throw std::invalid_argument("split_voxels: not enough voxels for the requested split");
  std::vector<std::size_t> idx(table.voxel_count());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto rng = make_rng(seed, 0x5911ULL);
  std::shuffle(idx.begin(), idx.end(), rng);

  VoxelSplit out;
  out.train_indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.test_indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                          idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_test));
  out.train.scheme = table.scheme;
  out.test.scheme = table.scheme;
  out.train.values.resize(static_cast<Eigen::Index>(n_train), table.values.cols());
  out.test.values.resize(static_cast<Eigen::Index>(n_test), table.values.cols());
  for (std::size_t i = 0; i < n_train; ++i)
    out.train.values.row(static_cast<Eigen::Index>(i)) =
        table.values.row(static_cast<Eigen::Index>(out.train_indices[i]));
  for (std::size_t i = 0; i < n_test; ++i)
    out.test.values.row(static_cast<Eigen::Index>(i)) =
        table.values.row(static_cast<Eigen::Index>(out.test_indices[i]));
  return out;
}

}  // namespace qspace::bench
