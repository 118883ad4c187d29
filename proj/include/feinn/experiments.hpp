#pragma once

#include <optional>
#include <string>
#include <vector>

#include "feinn/manufactured.hpp"
#include "feinn/optimize.hpp"
#include "feinn/toml.hpp"

namespace feinn {

/// Declarative description of one experiment run. Populated from a TOML file
/// with tables [problem], [mesh], [loss], [schedule], [observations],
/// [output]; unknown keys are rejected.
struct ExperimentConfig {
  // [problem]
  std::string kind;  // fem-convergence | forward-maxwell | forward-darcy-sphere |
                     // inverse-maxwell | indicators
  std::string case_id;
  int order = 1;        // trial order k_U; test spaces are always linearised
  int mesh_stages = 1;  // mesh-sequence driver: train, refine, warm-start

  // [mesh]
  int nx = 8, ny = 8;
  int ne = 4;
  Rect bounds{0, 0, 1, 1};
  std::vector<int> sizes;  // fem-convergence: cells per axis (flat) or per panel edge

  // [loss]
  LossSpec loss;

  // [schedule]
  std::vector<Stage> stages;
  std::vector<unsigned long long> seeds{0};
  std::string optimizer = "bfgs";  // bfgs | lbfgs
  int nn_depth = 3, nn_width = 40;
  std::string nn_activation = "tanh";
  int coeff_depth = 2, coeff_width = 20;

  // [observations]
  int obs_per_side = 30;
  std::string obs_components = "xy";  // "x" | "xy"
  double noise_sigma = 0.0;
  unsigned long long noise_seed = 1;
  std::string obs_mode = "interior";  // interior | boundary

  // [output]
  std::string out_dir = "out";
  int history_cadence = 1;
  int nn_error_cadence = 10;
  bool vtk = false;
  int error_quad_extra = 4;  // error quadrature points per axis = order + this
  int fine_order = 2;        // sphere re-interpolation space
  int fine_factor = 4;

  int threads = 1;  // seed-level parallelism (each run is single-threaded)

  int error_quad() const { return order + error_quad_extra; }
};

ExperimentConfig config_from_toml(const TomlDoc& doc);
ExperimentConfig load_config(const std::string& path);

/// Fast repeated FE error norms against a fixed exact field (geometry, shape
/// tables and exact samples precomputed).
class FEErrorEvaluator {
 public:
  FEErrorEvaluator(SpacePtr space, const Field& exact, const Field* exact_deriv, int quad_n);
  ErrorNorms eval(const VecX& dofs_full) const;
  ErrorNorms exact_norms() const { return exact_norms_; }

 private:
  SpacePtr space_;
  std::vector<MatX> values_;
  std::vector<VecX> derivs_;
  struct PointData {
    double w;
    Eigen::Matrix<double, 3, 2> T;
    double dscale;
  };
  std::vector<PointData> pts_;
  MatX exact_;
  VecX exact_d_;
  int nq_ = 0;
  bool with_deriv_ = false;
  ErrorNorms exact_norms_;
};

/// Raw-network error norms against the exact field by quadrature; the curl of
/// the network comes from forward-mode input derivatives (flat meshes).
class NNErrorEvaluator {
 public:
  NNErrorEvaluator(const Mesh& mesh, const Field& exact, const Field* exact_curl, int quad_n);
  ErrorNorms eval(const MLPArch& arch, const VecX& theta) const;

 private:
  MatX X_;
  VecX w_;
  MatX exact_;
  VecX exact_d_;
  bool with_curl_ = false;
  int ambient_ = 2;
};

/// FEM reference solve of a flat curl-curl case with linearised test spaces.
struct MaxwellFem {
  SpacePtr full, trial, test;
  VecX offset;
  AssembledSystem sys;
  VecX solution_full;  // including the Dirichlet offset
  ErrorNorms errors;
  ErrorNorms exact_norms;
};
MaxwellFem solve_maxwell_fem(const ManufacturedCase& mc, MeshPtr mesh, int order, int err_quad);

struct DarcyFem {
  SpacePtr flux, pressure;
  DarcySystem sys;
  VecX x;
  ErrorNorms flux_errors, pressure_errors;
};
DarcyFem solve_darcy_fem(const ManufacturedCase& mc, MeshPtr mesh, int err_quad);

struct ConvergenceRow {
  double h;
  int order;
  double e_l2, e_d;       // L2 and H(curl)/H(div) errors
  double rate_l2, rate_d; // pairwise rates (nan on the first row)
};
struct ConvergenceResult {
  std::vector<ConvergenceRow> rows;
  double slope_l2 = 0.0, slope_d = 0.0;  // fitted log-log slopes
};
ConvergenceResult run_fem_convergence(const ExperimentConfig& cfg);

struct ErrorHistoryRow {
  int iter = 0;
  double loss = 0.0;  // objective value (squared norm for residual losses)
  double e_l2_feinn = 0.0, e_l2_nn = 0.0, e_hcurl_feinn = 0.0, e_hcurl_nn = 0.0;
};
struct ForwardSeedResult {
  unsigned long long seed = 0;
  VecX theta;
  MLPArch arch;
  std::vector<ErrorHistoryRow> history;
  ErrorHistoryRow final;
};
struct ForwardResult {
  std::vector<ForwardSeedResult> seeds;
  double fem_e_l2 = 0.0, fem_e_hcurl = 0.0;
  MeshPtr mesh;  // final-stage mesh
};
ForwardResult run_forward_feinn(const ExperimentConfig& cfg);

struct DarcySeedResult {
  unsigned long long seed = 0;
  VecX theta;
  std::vector<ErrorHistoryRow> history;  // flux errors; e_hcurl columns hold H(div)
  double flux_l2 = 0.0, flux_hdiv = 0.0, pressure_l2 = 0.0;
  double nn_flux_l2 = 0.0;                       // raw network by quadrature
  double fine_flux_l2 = 0.0, fine_flux_hdiv = 0.0;  // fine-space re-interpolation
  double pressure_mean = 0.0;
};
struct DarcyResult {
  std::vector<DarcySeedResult> seeds;
  double fem_flux_l2 = 0.0, fem_flux_hdiv = 0.0, fem_pressure_l2 = 0.0;
};
DarcyResult run_darcy_sphere(const ExperimentConfig& cfg);

struct InverseHistoryRow {
  int iter = 0;
  double loss = 0.0;
  double eps_l2_u = 0.0, eps_hcurl_u = 0.0, eps_l2_k = 0.0;
  double eps_l2_u_nn = 0.0, eps_hcurl_u_nn = 0.0, eps_l2_k_nn = 0.0;
};
struct InverseSeedResult {
  unsigned long long seed = 0;
  std::vector<InverseHistoryRow> history;
  InverseHistoryRow final;
};
struct InverseResult {
  std::vector<InverseSeedResult> seeds;
};
InverseResult run_inverse_maxwell(const ExperimentConfig& cfg);

enum class IndicatorKind { Real, Integration, Network };

/// Per-cell refinement indicators of a trained state: true error of the
/// interpolated network, network-vs-interpolant gap, or strong-form residual
/// of the raw network (nested forward-mode input derivatives).
VecX compute_error_indicators(IndicatorKind kind, const FESpace& space, const VecX& feinn_full,
                              const MLPArch& arch, const VecX& theta, const ManufacturedCase& mc,
                              int quad_n);

/// Ids of the ceil(fraction * ncells) largest-indicator cells, ties broken by
/// lowest cell id.
std::vector<int> mark_cells(const VecX& indicator, double fraction);

struct IndicatorResult {
  MeshPtr mesh;
  MLPArch arch;
  VecX theta;
  VecX real, integration, network;
  std::vector<int> marked_real, marked_integration, marked_network;
};
IndicatorResult run_indicators(const ExperimentConfig& cfg);

/// Median of a list (copy by value).
double median(std::vector<double> v);

}  // namespace feinn
