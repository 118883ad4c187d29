// Command-line driver: runs the experiment described in a TOML config file.
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "feinn/experiments.hpp"

using namespace feinn;

namespace {

struct CommonOpts {
  std::string config;
  std::string out;
  long long seed = -1;
  int threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config, "TOML experiment config")->required();
  cmd->add_option("--seed", opts.seed, "override the config's seed list with one seed");
  cmd->add_option("--out", opts.out, "override the output directory");
  cmd->add_option("--threads", opts.threads, "seed-level worker threads");
}

ExperimentConfig load(const CommonOpts& opts, const std::string& expected_kind) {
  ExperimentConfig cfg = load_config(opts.config);
  if (cfg.kind.empty()) cfg.kind = expected_kind;
  if (cfg.kind != expected_kind)
    throw std::runtime_error("config kind '" + cfg.kind + "' does not match subcommand '" +
                             expected_kind + "'");
  if (opts.seed >= 0) cfg.seeds = {static_cast<unsigned long long>(opts.seed)};
  if (!opts.out.empty()) cfg.out_dir = opts.out;
  cfg.threads = opts.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compatible finite element interpolated neural networks"};
  app.require_subcommand(1);

  CommonOpts fem_opts, fwd_opts, darcy_opts, inv_opts, ind_opts;
  CLI::App* fem = app.add_subcommand("fem-convergence", "FEM convergence baseline study");
  add_common(fem, fem_opts);
  CLI::App* fwd = app.add_subcommand("forward-maxwell", "forward curl-curl training study");
  add_common(fwd, fwd_opts);
  CLI::App* darcy =
      app.add_subcommand("forward-darcy-sphere", "mixed Darcy training on the unit sphere");
  add_common(darcy, darcy_opts);
  CLI::App* inv = app.add_subcommand("inverse-maxwell", "coefficient identification study");
  add_common(inv, inv_opts);
  CLI::App* ind = app.add_subcommand("indicators", "per-cell error indicator study");
  add_common(ind, ind_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (fem->parsed()) {
      ConvergenceResult r = run_fem_convergence(load(fem_opts, "fem-convergence"));
      std::printf("fitted slopes: L2 %.3f, energy %.3f\n", r.slope_l2, r.slope_d);
    } else if (fwd->parsed()) {
      ForwardResult r = run_forward_feinn(load(fwd_opts, "forward-maxwell"));
      std::vector<double> e;
      for (const auto& s : r.seeds) e.push_back(s.final.e_l2_feinn);
      std::printf("fem e_l2 %.6e | median feinn e_l2 %.6e over %zu seeds\n", r.fem_e_l2,
                  median(e), r.seeds.size());
    } else if (darcy->parsed()) {
      DarcyResult r = run_darcy_sphere(load(darcy_opts, "forward-darcy-sphere"));
      std::vector<double> e;
      for (const auto& s : r.seeds) e.push_back(s.flux_l2);
      std::printf("fem flux e_l2 %.6e | median feinn flux e_l2 %.6e over %zu seeds\n",
                  r.fem_flux_l2, median(e), r.seeds.size());
    } else if (inv->parsed()) {
      InverseResult r = run_inverse_maxwell(load(inv_opts, "inverse-maxwell"));
      std::vector<double> ek, eu;
      for (const auto& s : r.seeds) {
        ek.push_back(s.final.eps_l2_k);
        eu.push_back(s.final.eps_l2_u);
      }
      std::printf("median eps_l2(kappa) %.4f | median eps_l2(u) %.4f over %zu seeds\n",
                  median(ek), median(eu), r.seeds.size());
    } else if (ind->parsed()) {
      IndicatorResult r = run_indicators(load(ind_opts, "indicators"));
      std::printf("indicators written; %zu cells marked per kind\n", r.marked_real.size());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
