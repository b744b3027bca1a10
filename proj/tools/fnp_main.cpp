// fnp: command-line front end of the assimilation toolkit.
// Exit codes: 0 success, 2 configuration/input error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "fnp/checkpoint.hpp"
#include "fnp/error.hpp"
#include "fnp/harness.hpp"
#include "fnp/io.hpp"
#include "fnp/var.hpp"

namespace fs = std::filesystem;
using namespace fnp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

void print_report(const MetricsReport& r) {
  std::printf("%-40s %-12s MSE %.6g MAE %.6g", r.experiment_id.c_str(), r.variant.c_str(), r.mse, r.mae);
  for (std::size_t c = 0; c < r.channel_names.size(); ++c)
    std::printf("  %s %.6g", r.channel_names[c].c_str(), r.rmse_per_channel[c]);
  std::printf("\n");
}

void print_evaluation(const Evaluation& e) {
  print_report(e.analysis);
  print_report(e.background);
  print_report(e.climatology);
}

fs::path required_file(const std::string& p) {
  const fs::path path = resolve_data_path(p);
  if (!fs::exists(path)) throw ConfigError("file '" + path.string() + "' does not exist");
  return path;
}

int cmd_generate(const std::string& config_path) {
  const ExperimentConfig cfg = load_config(config_path);
  generate_data(cfg, &std::cout);
  return 0;
}

int cmd_train(const std::string& config_path) {
  const ExperimentConfig cfg = load_config(config_path);
  const Dataset train_set = load_split(cfg, Split::Train, cfg.lead_time_h);
  const Dataset val_set = load_split(cfg, Split::Val, cfg.lead_time_h);
  const Checkpoint ck = train(cfg, train_set, val_set, nullptr, &std::cout);
  fs::create_directories(cfg.checkpoint_path().parent_path());
  save_checkpoint(ck, cfg.checkpoint_path());
  std::cout << "best epoch " << ck.best_epoch << ", checkpoint " << cfg.checkpoint_path().string() << "\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& config_path) {
  const ExperimentConfig cfg = load_config(config_path);
  const Checkpoint ck = load_checkpoint(required_file(ckpt_path));
  const Dataset test_set = load_split(cfg, Split::Test, cfg.lead_time_h);
  std::vector<Evaluation> evals;
  if (cfg.eval_obs_grids.empty() && !cfg.fine_tune) {
    evals.push_back(evaluate(ck, cfg, test_set));
  } else {
    Dataset train_set, val_set;
    if (cfg.fine_tune) {
      train_set = load_split(cfg, Split::Train, cfg.lead_time_h);
      val_set = load_split(cfg, Split::Val, cfg.lead_time_h);
    }
    evals = cross_resolution_eval(ck, cfg, train_set, val_set, test_set, &std::cout);
  }
  for (const auto& e : evals) {
    print_evaluation(e);
    save_evaluation(e, cfg.output_dir);
  }
  return 0;
}

void write_analysis(const ExampleFields& ex, const fs::path& out) {
  write_field(ex.analysis, out);
  fs::path var = out;
  var.replace_extension(".variance" + out.extension().string());
  write_field(ex.variance, var);
  std::cout << "wrote " << out.string() << " and " << var.string() << "\n";
}

int cmd_assimilate(const std::string& ckpt_path, const std::string& bg_path, const std::string& obs_path,
                   const std::string& out) {
  const Checkpoint ck = load_checkpoint(required_file(ckpt_path));
  const Field bg = read_field(required_file(bg_path));
  const ObservationSet obs = read_obs(required_file(obs_path));
  write_analysis(assimilate(ck, bg.grid, &bg, obs), resolve_data_path(out));
  return 0;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& obs_path, const std::string& out,
                    const std::string& grid) {
  const Checkpoint ck = load_checkpoint(required_file(ckpt_path));
  const ObservationSet obs = read_obs(required_file(obs_path));
  LatLonGrid target = make_equiangular_grid(ck.model.grid_lat, ck.model.grid_lon);
  if (!grid.empty()) {
    const ExperimentConfig parsed = parse_config("background_grid = " + grid);
    target = parsed.background_lat_lon();
  }
  write_analysis(assimilate(ck, target, nullptr, obs), resolve_data_path(out));
  return 0;
}

int cmd_ablate(const std::string& config_path) {
  const ExperimentConfig cfg = load_config(config_path);
  const std::vector<Evaluation> evals = ablate(cfg, &std::cout);
  for (const auto& e : evals) {
    print_evaluation(e);
    save_evaluation(e, cfg.output_dir);
  }
  build_report(cfg.output_dir, cfg.output_dir / "report", cfg.plot_channels);
  return 0;
}

int cmd_varsolve(const std::string& problem, const std::string& out) {
  const VarProblem p = read_var_problem(required_file(problem));
  const Eigen::VectorXd x_a = analytic_analysis(p);
  write_var_solution(p, x_a, resolve_data_path(out));
  std::printf("J(x_b) %.12g  J(x_a) %.12g\n", cost(p.x_b, p), cost(x_a, p));
  return 0;
}

int cmd_report(const std::string& in, const std::string& out, const std::vector<std::size_t>& channels) {
  build_report(resolve_data_path(in), resolve_data_path(out), channels);
  std::cout << "wrote " << (resolve_data_path(out) / "metrics.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fourier neural process data assimilation toolkit"};
  app.require_subcommand(1);

  std::string config, ckpt, background, obs, out, problem, in_dir, grid;
  std::vector<std::size_t> plot_channels{0};

  auto* gen = app.add_subcommand("generate-data", "Write the synthetic dataset described by a config");
  gen->add_option("--config", config, "Experiment config file")->required();
  auto* tr = app.add_subcommand("train", "Train a model and save the best-validation checkpoint");
  tr->add_option("--config", config, "Experiment config file")->required();
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  ev->add_option("--config", config, "Experiment config file")->required();
  auto* as = app.add_subcommand("assimilate", "Analysis from one background and observation file");
  as->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  as->add_option("--background", background, "Background field (FNPGRID1)")->required();
  as->add_option("--obs", obs, "Observations (FNPOBS01)")->required();
  as->add_option("--out", out, "Output analysis field")->required();
  auto* rc = app.add_subcommand("reconstruct", "Full field from observations alone");
  rc->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  rc->add_option("--obs", obs, "Observations (FNPOBS01)")->required();
  rc->add_option("--out", out, "Output field")->required();
  rc->add_option("--grid", grid, "Target grid HxW (default: the model grid)");
  auto* ab = app.add_subcommand("ablate", "Variant and settings sweep");
  ab->add_option("--config", config, "Experiment config file")->required();
  auto* vs = app.add_subcommand("varsolve", "Closed-form variational analysis of a problem file");
  vs->add_option("--problem", problem, "Problem JSON (x_b, y, B, R, H)")->required();
  vs->add_option("--out", out, "Output JSON")->required();
  auto* rp = app.add_subcommand("report", "Metrics CSV, summary and plots from saved evaluations");
  rp->add_option("--in", in_dir, "Directory of saved evaluations")->required();
  rp->add_option("--out", out, "Output directory")->required();
  rp->add_option("--plot-channels", plot_channels, "Channel indices to plot")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_generate(config);
    if (*tr) return cmd_train(config);
    if (*ev) return cmd_evaluate(ckpt, config);
    if (*as) return cmd_assimilate(ckpt, background, obs, out);
    if (*rc) return cmd_reconstruct(ckpt, obs, out, grid);
    if (*ab) return cmd_ablate(config);
    if (*vs) return cmd_varsolve(problem, out);
    if (*rp) return cmd_report(in_dir, out, plot_channels);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
