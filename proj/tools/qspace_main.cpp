// Command-line pipeline: simulate -> train -> reconstruct -> bench.
// All outputs are plain text/CSV; every command is deterministic given --seed.

#include <qspace/augment.hpp>
#include <qspace/baseline.hpp>
#include <qspace/bench.hpp>
#include <qspace/eap.hpp>
#include <qspace/gp.hpp>
#include <qspace/io.hpp>
#include <qspace/parallel.hpp>
#include <qspace/simulate.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>

namespace {

using namespace qspace;

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stod(cell));
  }
  return out;
}

// "b:count,b:count,..."
void parse_shell_spec(const std::string& text, std::vector<double>& bs, std::vector<int>& counts) {
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto colon = cell.find(':');
    if (colon == std::string::npos)
      throw CLI::ValidationError("--shells", "expected 'b:count' entries");
    bs.push_back(std::stod(cell.substr(0, colon)));
    counts.push_back(std::stoi(cell.substr(colon + 1)));
  }
  if (bs.empty()) throw CLI::ValidationError("--shells", "no shells given");
}

// "start:stop:step"
std::vector<double> parse_fraction_range(const std::string& text) {
  std::vector<double> parts = parse_number_list(text);
  if (parts.size() == 3 && text.find(':') != std::string::npos) parts.clear();
  if (text.find(':') != std::string::npos) {
    std::stringstream ss(text);
    std::string cell;
    std::vector<double> spec;
    while (std::getline(ss, cell, ':')) spec.push_back(std::stod(cell));
    if (spec.size() != 3) throw CLI::ValidationError("--fractions", "expected start:stop:step");
    std::vector<double> out;
    for (double f = spec[0]; f <= spec[1] + 1e-12; f += spec[2]) out.push_back(f);
    return out;
  }
  return parts;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

struct SimulateArgs {
  std::string out_scheme, out_signals, out_latent;
  std::string angles = "30,60,90";
  std::string shells = "1000:64,3000:64,5000:128,10000:256";
  double noise = 0.01;
  double t_d = 0.025;
  double d0 = 2.5e-3;
  std::uint64_t seed = 0;
  bool shared_directions = false;
};

int run_simulate(const SimulateArgs& args) {
  std::vector<double> bs;
  std::vector<int> counts;
  parse_shell_spec(args.shells, bs, counts);
  const auto scheme = simulate::make_shell_scheme(bs, counts, args.t_d, args.shared_directions,
                                                  args.seed);
  std::vector<double> angles_deg = parse_number_list(args.angles);
  std::vector<double> angles_rad;
  for (double a : angles_deg) angles_rad.push_back(a * std::numbers::pi / 180.0);
  const auto data =
      simulate::make_phantom_dataset(angles_rad, scheme, args.d0, args.noise, args.seed);

  io::write_scheme(args.out_scheme, *scheme);
  io::write_signals(args.out_signals, data.noisy.values);
  if (!args.out_latent.empty()) io::write_signals(args.out_latent, data.latent.values);

  std::cout << "simulated " << data.noisy.voxel_count() << " voxels on " << scheme->size()
            << " points (" << scheme->shell_count() << " shells), noise sigma " << args.noise
            << ", seed " << args.seed << "\n";
  return 0;
}

struct TrainArgs {
  std::string scheme_path, signals_path, out_path;
  std::size_t voxels = 100000;
  int starts = 3;
  int max_iter = 500;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  double xi = 0.0;  // 0: scheme-adaptive default
};

int run_train(const TrainArgs& args) {
  const auto scheme = std::make_shared<AcquisitionScheme>(io::read_scheme(args.scheme_path));
  const SignalTable table = io::read_signals(args.signals_path, scheme);
  if (table.voxel_count() == 0) throw std::runtime_error("train: signal file has no voxels");

  Hyperparameters init;
  init.a0 = init.a2 = init.a4 = init.a6 = 0.05;
  init.sigma_r = 1.0;
  init.sigma_n2 = 1e-3;
  init.xi = (args.xi > 0.0) ? args.xi : kernel::default_xi(*scheme);

  gp::TrainConfig config;
  config.max_iterations = args.max_iter;
  config.grad_tolerance = args.tol;
  config.starts = args.starts;
  config.seed = args.seed;
  config.max_voxels = args.voxels;

  const auto model = gp::train(scheme, table, init, config);
  io::write_hyperparameters(args.out_path, model.h);
  std::cout << "log marginal likelihood: " << model.log_marginal << "\n";
  std::cout << "iterations: " << model.iterations << "\n";
  if (!model.converged)
    std::cout << "warning: optimizer did not reach the gradient tolerance; "
                 "best parameters so far were written\n";
  return 0;
}

struct ReconstructArgs {
  std::string scheme_path, signals_path, hyper_path, out_dir;
  std::string method = "qp";
  int grid_n = 11;
  double q_cut_mult = 1.25;
  int zero_dirs = 40;
  std::string voxel = "all";
  std::string slice;
  int threads = 0;
};

int run_reconstruct(const ReconstructArgs& args) {
  const auto scheme = std::make_shared<AcquisitionScheme>(io::read_scheme(args.scheme_path));
  const SignalTable table = io::read_signals(args.signals_path, scheme);
  const Hyperparameters hyper = io::read_hyperparameters(args.hyper_path);
  if (args.method != "qp" && args.method != "naive" && args.method != "linear")
    throw CLI::ValidationError("--method", "must be qp, naive or linear");
  if (!args.slice.empty() && args.slice != "z=0")
    throw CLI::ValidationError("--slice", "only the z=0 plane is supported");
  const bool slice_z0 = args.slice == "z=0";

  std::vector<std::size_t> voxels;
  if (args.voxel == "all") {
    for (std::size_t v = 0; v < table.voxel_count(); ++v) voxels.push_back(v);
  } else {
    voxels.push_back(std::stoul(args.voxel));
    if (voxels[0] >= table.voxel_count()) throw std::runtime_error("reconstruct: voxel out of range");
  }

  std::filesystem::create_directories(args.out_dir);
  const double q_cut = augment::default_q_cut(*scheme, args.q_cut_mult);
  bench::AugmentOptions aug_options;
  aug_options.q_cut_multiplier = args.q_cut_mult;
  aug_options.zero_direction_count = std::max(0, args.zero_dirs);
  const auto dirs = aug_options.directions();
  const auto aug_scheme = augment::augment_scheme(*scheme, q_cut, dirs);
  const auto grid = eap::make_grid(args.grid_n, q_cut);
  const auto grid_points = grid.q_points();

  const gp::TrainedModel model = gp::make_model(aug_scheme, hyper);
  const gp::BatchPredictor predictor(model, grid_points);

  std::optional<baseline::LinearInterpolator> interp;
  std::vector<delaunay::Tetrahedralization::Location> locations;
  if (args.method == "linear") {
    interp.emplace(aug_scheme);
    locations = interp->locate_all(grid_points);
  }

  const int threads = args.threads > 0 ? args.threads : default_thread_count();
  std::vector<std::string> failures(voxels.size());
  std::vector<double> rtops(voxels.size(), std::numeric_limits<double>::quiet_NaN());

  parallel_for(voxels.size(), threads, [&](std::size_t job) {
    const std::size_t v = voxels[job];
    const Eigen::VectorXd y_aug =
        augment::augment_signal(table.values.row(static_cast<Eigen::Index>(v)), dirs.size());
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.size()));
    try {
      eap::EapVolume volume;
      Eigen::VectorXd fstar;
      if (args.method == "linear") {
        mean.resize(static_cast<Eigen::Index>(grid.size()));
        for (std::size_t c = 0; c < locations.size(); ++c)
          mean[static_cast<Eigen::Index>(c)] =
              baseline::LinearInterpolator::apply(locations[c], y_aug);
        fstar = mean;
        volume = eap::reconstruct_naive(mean, grid);
      } else {
        GpPrediction pred{predictor.mean(y_aug), predictor.variance()};
        pred = augment::apply_cutoff(std::move(pred), grid_points, q_cut);
        pred = augment::anchor_cutoff_variance(std::move(pred), grid_points, q_cut,
                                               aug_options.cutoff_anchor_variance);
        mean = pred.mean;
        stddev = pred.variance.cwiseSqrt();
        if (args.method == "naive") {
          fstar = mean;
          volume = eap::reconstruct_naive(mean, grid);
        } else {
          auto rec = eap::reconstruct_qp(pred, grid);
          fstar = rec.adjusted_signal;
          volume = std::move(rec.eap);
        }
      }
      rtops[job] = eap::rtop(fstar, grid);

      const std::string base = args.out_dir + "/voxel" + std::to_string(v);
      auto sig = open_out(base + "_signal.csv");
      eap::write_grid_signal_csv(sig, grid, mean, stddev);
      auto vol_out = open_out(base + "_eap.csv");
      eap::write_eap_csv(vol_out, grid, volume);
      if (slice_z0) {
        auto slice = open_out(base + "_eap_z0.csv");
        eap::write_eap_slice_csv(slice, grid, volume);
      }
    } catch (const std::exception& e) {
      failures[job] = e.what();
    }
  });

  int failed = 0;
  for (std::size_t job = 0; job < voxels.size(); ++job) {
    if (!failures[job].empty()) {
      ++failed;
      std::cerr << "voxel " << voxels[job] << " failed: " << failures[job] << "\n";
      continue;
    }
    std::cout << "voxel " << voxels[job] << ": rtop " << rtops[job] << " 1/mm^3\n";
  }
  std::cout << "reconstructed " << (voxels.size() - static_cast<std::size_t>(failed)) << "/"
            << voxels.size() << " voxels with method " << args.method << " (grid n=" << args.grid_n
            << ", q_cut=" << q_cut << ")\n";
  return 0;
}

struct BenchRtopArgs {
  std::string out_path;
  std::string angles = "30,60,90";
  std::string shells = "1000:64,3000:64,5000:128,10000:256";
  std::string hyper_path;
  double t_d = 0.025;
  double noise = 0.01;
  double d0 = 2.5e-3;
  int repeats = 10;
  int grid_n = 11;
  int train_voxels = 100;
  std::uint64_t seed = 0;
  int threads = 0;
};

int run_bench_rtop(const BenchRtopArgs& args) {
  std::vector<double> bs;
  std::vector<int> counts;
  parse_shell_spec(args.shells, bs, counts);
  const auto scheme = simulate::make_shell_scheme(bs, counts, args.t_d, false, args.seed);

  bench::RtopConfig config;
  config.angles_deg = parse_number_list(args.angles);
  config.noise_sigma = args.noise;
  config.repeats = args.repeats;
  config.seed = args.seed;
  config.d0 = args.d0;
  config.grid_n = args.grid_n;
  config.train_voxels = args.train_voxels;
  config.threads = args.threads > 0 ? args.threads : default_thread_count();
  if (!args.hyper_path.empty()) config.hyper = io::read_hyperparameters(args.hyper_path);

  const auto report = bench::rtop_experiment(scheme, config);

  auto out = open_out(args.out_path);
  out << "angle,method,rel_error\n";
  for (std::size_t m = 0; m < report.methods.size(); ++m)
    for (std::size_t a = 0; a < report.angles_deg.size(); ++a)
      out << report.angles_deg[a] << "," << report.methods[m] << "," << report.rel_error[m][a]
          << "\n";

  std::cout << "angle  gp       linear\n";
  for (std::size_t a = 0; a < report.angles_deg.size(); ++a) {
    std::printf("%-6g %-8.4f %-8.4f\n", report.angles_deg[a], report.rel_error[0][a],
                report.rel_error[1][a]);
  }
  return 0;
}

struct BenchSubsampleArgs {
  std::string scheme_path, signals_path, hyper_path, out_path;
  std::string fractions = "0.05:0.95:0.10";
  std::string methods = "gp,linear";
  int repeats = 10;
  std::uint64_t seed = 0;
};

int run_bench_subsample(const BenchSubsampleArgs& args) {
  const auto scheme = std::make_shared<AcquisitionScheme>(io::read_scheme(args.scheme_path));
  const SignalTable table = io::read_signals(args.signals_path, scheme);
  const Hyperparameters hyper = io::read_hyperparameters(args.hyper_path);

  bench::SubsampleConfig config;
  config.fractions_removed = parse_fraction_range(args.fractions);
  config.repeats = args.repeats;
  config.seed = args.seed;

  std::vector<std::pair<std::string, bench::MethodFn>> methods;
  std::stringstream ss(args.methods);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name == "gp")
      methods.emplace_back("gp", bench::gp_method(hyper));
    else if (name == "linear")
      methods.emplace_back("linear", bench::linear_method());
    else
      throw CLI::ValidationError("--methods", "unknown method '" + name + "'");
  }

  const auto report = bench::subsample_experiment(table, methods, config);

  auto out = open_out(args.out_path);
  out << "# fraction = fraction of measurements removed per shell\n";
  out << "fraction,shell,method,error\n";
  for (std::size_t m = 0; m < report.methods.size(); ++m)
    for (std::size_t f = 0; f < report.fractions_removed.size(); ++f)
      for (std::size_t s = 0; s < report.error[m][f].size(); ++s)
        out << report.fractions_removed[f] << "," << s << "," << report.methods[m] << ","
            << report.error[m][f][s] << "\n";

  std::cout << "wrote " << args.out_path << " (" << report.methods.size() << " methods, "
            << report.fractions_removed.size() << " fractions, " << report.realizations
            << " realizations)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-process q-space signal estimation and EAP reconstruction"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "generate a crossing-fiber phantom data set");
  c_sim->add_option("--out-scheme", sim.out_scheme, "scheme output file")->required();
  c_sim->add_option("--out-signals", sim.out_signals, "signal CSV output file")->required();
  c_sim->add_option("--out-latent", sim.out_latent, "optional noise-free signal CSV");
  c_sim->add_option("--angles", sim.angles, "crossing angles in degrees, comma separated");
  c_sim->add_option("--shells", sim.shells, "shell spec b:count,...");
  c_sim->add_option("--noise", sim.noise, "Rician noise scale");
  c_sim->add_option("--t-d", sim.t_d, "diffusion time in seconds");
  c_sim->add_option("--d0", sim.d0, "leading tensor eigenvalue, mm^2/s");
  c_sim->add_option("--seed", sim.seed, "random seed");
  c_sim->add_flag("--shared-directions", sim.shared_directions,
                  "reuse the same gradient directions on every shell");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "fit hyperparameters by empirical Bayes");
  c_train->add_option("--scheme", train.scheme_path)->required();
  c_train->add_option("--signals", train.signals_path)->required();
  c_train->add_option("--out", train.out_path, "hyperparameter output file")->required();
  c_train->add_option("--voxels", train.voxels, "training voxel cap");
  c_train->add_option("--starts", train.starts, "optimizer restarts");
  c_train->add_option("--max-iter", train.max_iter);
  c_train->add_option("--tol", train.tol, "gradient norm tolerance");
  c_train->add_option("--seed", train.seed);
  c_train->add_option("--xi", train.xi, "origin regularizer (default: 1e-2 * min nonzero |q|)");

  ReconstructArgs rec;
  auto* c_rec = app.add_subcommand("reconstruct", "predict the signal on a grid and rebuild the EAP");
  c_rec->add_option("--scheme", rec.scheme_path)->required();
  c_rec->add_option("--signals", rec.signals_path)->required();
  c_rec->add_option("--hyper", rec.hyper_path)->required();
  c_rec->add_option("--out-dir", rec.out_dir)->required();
  c_rec->add_option("--method", rec.method, "qp | naive | linear");
  c_rec->add_option("--grid-n", rec.grid_n, "grid points per axis (odd)");
  c_rec->add_option("--q-cut-mult", rec.q_cut_mult, "cutoff radius multiplier");
  c_rec->add_option("--zero-dirs", rec.zero_dirs, "zero-shell direction count (0..20)");
  c_rec->add_option("--voxel", rec.voxel, "voxel index or 'all'");
  c_rec->add_option("--slice", rec.slice, "also write an EAP plane; 'z=0' for the x-y plane");
  c_rec->add_option("--threads", rec.threads, "worker threads (default: all cores)");

  auto* c_bench = app.add_subcommand("bench", "undersampling and RTOP experiments");
  c_bench->require_subcommand(1);

  BenchRtopArgs brt;
  auto* c_rtop = c_bench->add_subcommand("rtop", "return-to-origin probability errors");
  c_rtop->add_option("--out", brt.out_path)->required();
  c_rtop->add_option("--angles", brt.angles);
  c_rtop->add_option("--shells", brt.shells);
  c_rtop->add_option("--hyper", brt.hyper_path, "reuse trained hyperparameters");
  c_rtop->add_option("--t-d", brt.t_d);
  c_rtop->add_option("--noise", brt.noise);
  c_rtop->add_option("--d0", brt.d0);
  c_rtop->add_option("--repeats", brt.repeats);
  c_rtop->add_option("--grid-n", brt.grid_n);
  c_rtop->add_option("--train-voxels", brt.train_voxels);
  c_rtop->add_option("--seed", brt.seed);
  c_rtop->add_option("--threads", brt.threads);

  BenchSubsampleArgs bss;
  auto* c_sub = c_bench->add_subcommand("subsample", "undersampling error curves");
  c_sub->add_option("--scheme", bss.scheme_path)->required();
  c_sub->add_option("--signals", bss.signals_path)->required();
  c_sub->add_option("--hyper", bss.hyper_path)->required();
  c_sub->add_option("--out", bss.out_path)->required();
  c_sub->add_option("--fractions", bss.fractions, "list or start:stop:step (fraction removed)");
  c_sub->add_option("--methods", bss.methods);
  c_sub->add_option("--repeats", bss.repeats);
  c_sub->add_option("--seed", bss.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*c_sim) return run_simulate(sim);
    if (*c_train) return run_train(train);
    if (*c_rec) return run_reconstruct(rec);
    if (*c_rtop) return run_bench_rtop(brt);
    if (*c_sub) return run_bench_subsample(bss);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
