#include "feinn/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "feinn/quadrature.hpp"
#include "feinn/vtkout.hpp"

namespace feinn {

namespace {

constexpr unsigned long long kSeedMix = 0x9e3779b97f4a7c15ULL;

double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }

// ---------------------------------------------------------------------------
// config handling

const std::set<std::string>& known_keys(const std::string& table) {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"problem", {"kind", "case", "order", "mesh_stages"}},
      {"mesh", {"nx", "ny", "ne", "sizes", "x0", "y0", "x1", "y1"}},
      {"loss", {"kind", "dual_norm"}},
      {"schedule",
       {"stages", "seeds", "optimizer", "nn_depth", "nn_width", "nn_activation", "coeff_depth",
        "coeff_width"}},
      {"observations", {"per_side", "components", "noise_sigma", "noise_seed", "mode"}},
      {"output",
       {"dir", "history_cadence", "nn_error_cadence", "vtk", "error_quad_extra", "fine_order",
        "fine_factor"}},
  };
  auto it = schema.find(table);
  require(it != schema.end(), "config: unknown table [" + table + "]");
  return it->second;
}

void validate_keys(const TomlDoc& doc) {
  for (const auto& [table, entries] : doc.tables) {
    const auto& known = known_keys(table);
    for (const auto& [key, value] : entries)
      require(known.count(key) > 0, "config: unknown key '" + key + "' in table [" + table + "]");
  }
}

const TomlValue* find(const TomlDoc& doc, const std::string& table, const std::string& key) {
  auto t = doc.tables.find(table);
  if (t == doc.tables.end()) return nullptr;
  auto k = t->second.find(key);
  return k == t->second.end() ? nullptr : &k->second;
}

}  // namespace

ExperimentConfig config_from_toml(const TomlDoc& doc) {
  validate_keys(doc);
  ExperimentConfig cfg;
  auto str = [&](const char* t, const char* k, std::string& dst) {
    if (const TomlValue* v = find(doc, t, k)) dst = v->as_string();
  };
  auto num = [&](const char* t, const char* k, auto& dst) {
    if (const TomlValue* v = find(doc, t, k)) dst = static_cast<std::decay_t<decltype(dst)>>(v->as_number());
  };
  auto integer = [&](const char* t, const char* k, auto& dst) {
    if (const TomlValue* v = find(doc, t, k)) dst = static_cast<std::decay_t<decltype(dst)>>(v->as_integer());
  };
  str("problem", "kind", cfg.kind);
  str("problem", "case", cfg.case_id);
  integer("problem", "order", cfg.order);
  integer("problem", "mesh_stages", cfg.mesh_stages);
  integer("mesh", "nx", cfg.nx);
  integer("mesh", "ny", cfg.ny);
  integer("mesh", "ne", cfg.ne);
  num("mesh", "x0", cfg.bounds.x0);
  num("mesh", "y0", cfg.bounds.y0);
  num("mesh", "x1", cfg.bounds.x1);
  num("mesh", "y1", cfg.bounds.y1);
  if (const TomlValue* v = find(doc, "mesh", "sizes")) {
    cfg.sizes.clear();
    for (const auto& item : v->array) cfg.sizes.push_back(static_cast<int>(item.as_integer()));
  }
  if (const TomlValue* v = find(doc, "loss", "kind")) {
    const std::string& s = v->as_string();
    if (s == "residual-l2") cfg.loss.kind = LossKind::ResidualL2;
    else if (s == "preconditioned") cfg.loss.kind = LossKind::Preconditioned;
    else require(false, "config: loss kind must be residual-l2 or preconditioned");
  }
  if (const TomlValue* v = find(doc, "loss", "dual_norm")) {
    const std::string& s = v->as_string();
    if (s == "unorm") cfg.loss.norm = DualNorm::Unorm;
    else if (s == "l2") cfg.loss.norm = DualNorm::L2;
    else require(false, "config: dual_norm must be unorm or l2");
  }
  if (const TomlValue* v = find(doc, "schedule", "stages")) {
    cfg.stages.clear();
    for (const auto& item : v->array) cfg.stages.push_back(parse_stage(item.as_string()));
  }
  if (const TomlValue* v = find(doc, "schedule", "seeds")) {
    cfg.seeds.clear();
    for (const auto& item : v->array)
      cfg.seeds.push_back(static_cast<unsigned long long>(item.as_integer()));
    require(!cfg.seeds.empty(), "config: seeds must not be empty");
  }
  str("schedule", "optimizer", cfg.optimizer);
  require(cfg.optimizer == "bfgs" || cfg.optimizer == "lbfgs",
          "config: optimizer must be bfgs or lbfgs");
  integer("schedule", "nn_depth", cfg.nn_depth);
  integer("schedule", "nn_width", cfg.nn_width);
  str("schedule", "nn_activation", cfg.nn_activation);
  require(cfg.nn_activation == "tanh" || cfg.nn_activation == "softplus",
          "config: nn_activation must be tanh or softplus");
  integer("schedule", "coeff_depth", cfg.coeff_depth);
  integer("schedule", "coeff_width", cfg.coeff_width);
  integer("observations", "per_side", cfg.obs_per_side);
  str("observations", "components", cfg.obs_components);
  require(cfg.obs_components == "x" || cfg.obs_components == "xy",
          "config: observation components must be x or xy");
  num("observations", "noise_sigma", cfg.noise_sigma);
  integer("observations", "noise_seed", cfg.noise_seed);
  str("observations", "mode", cfg.obs_mode);
  require(cfg.obs_mode == "interior" || cfg.obs_mode == "boundary",
          "config: observation mode must be interior or boundary");
  str("output", "dir", cfg.out_dir);
  integer("output", "history_cadence", cfg.history_cadence);
  integer("output", "nn_error_cadence", cfg.nn_error_cadence);
  if (const TomlValue* v = find(doc, "output", "vtk")) cfg.vtk = v->as_bool();
  integer("output", "error_quad_extra", cfg.error_quad_extra);
  integer("output", "fine_order", cfg.fine_order);
  integer("output", "fine_factor", cfg.fine_factor);
  require(!cfg.kind.empty(), "config: [problem] kind is required");
  require(cfg.order >= 1 && cfg.order <= 4, "config: order must be in 1..4");
  require(cfg.history_cadence >= 1 && cfg.nn_error_cadence >= 1, "config: cadences must be >= 1");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  return config_from_toml(parse_toml_file(path));
}

namespace {

// ---------------------------------------------------------------------------
// csv output

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class Csv {
 public:
  Csv(const std::string& path, const std::vector<std::string>& header) : f_(path) {
    require(f_.good(), "cannot open output file: " + path);
    for (size_t i = 0; i < header.size(); ++i) f_ << (i ? "," : "") << header[i];
    f_ << "\n";
  }
  void row(const std::vector<double>& values) {
    for (size_t i = 0; i < values.size(); ++i) f_ << (i ? "," : "") << fmt(values[i]);
    f_ << "\n";
  }

 private:
  std::ofstream f_;
};

double fitted_slope(const std::vector<double>& h, const std::vector<double>& e) {
  const size_t n = h.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double x = std::log(h[i]), y = std::log(e[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

Activation parse_activation(const std::string& s) {
  return s == "softplus" ? Activation::Softplus : Activation::Tanh;
}

template <typename Result, typename Worker>
std::vector<Result> run_seeds(const std::vector<unsigned long long>& seeds, int threads,
                              const Worker& worker) {
  std::vector<Result> out(seeds.size());
  std::atomic<size_t> next{0};
  auto loop = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= seeds.size()) break;
      out[i] = worker(seeds[i]);
    }
  };
  const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(seeds.size())));
  if (nthreads == 1) {
    loop();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads - 1; ++t) pool.emplace_back(loop);
    loop();
    for (auto& th : pool) th.join();
  }
  return out;
}

}  // namespace

double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty list");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// error evaluators

FEErrorEvaluator::FEErrorEvaluator(SpacePtr space, const Field& exact, const Field* exact_deriv,
                                   int quad_n)
    : space_(std::move(space)) {
  const ElementDef& el = *space_->elem;
  QuadRule quad = tensor_rule(quad_n);
  nq_ = static_cast<int>(quad.points.size());
  ShapeTable tab = shape_table(el, quad.points);
  values_ = tab.values;
  if (el.ncomp == 2) derivs_ = tab.curls_or_divs;
  with_deriv_ = (exact_deriv != nullptr) && el.ncomp == 2;
  const int ncomp = space_->field_ncomp();
  const Mesh& mesh = *space_->mesh;
  pts_.resize(static_cast<size_t>(mesh.num_cells()) * nq_);
  exact_.resize(static_cast<long>(pts_.size()), ncomp);
  exact_d_ = VecX::Zero(static_cast<long>(pts_.size()));
  VecX ev(ncomp);
  double l2sq = 0.0, dsq = 0.0;
  for (int c = 0; c < mesh.num_cells(); ++c) {
    for (int q = 0; q < nq_; ++q) {
      const CellGeometry g = mesh.cell_geometry(c, quad.points[q]);
      PointData& pd = pts_[static_cast<size_t>(c) * nq_ + q];
      pd.w = quad.weights[q] * g.detJ;
      pd.dscale = 1.0 / g.detJ;
      if (el.ncomp == 2) {
        if (el.family == Family::Nedelec) {
          pd.T.setZero();
          pd.T.topLeftCorner<2, 2>() = g.J.topLeftCorner<2, 2>().inverse().transpose();
        } else {
          pd.T = g.J / g.detJ;
        }
      }
      exact.eval(g.x, ev.data());
      exact_.row(static_cast<long>(c) * nq_ + q) = ev.transpose();
      l2sq += pd.w * ev.squaredNorm();
      if (with_deriv_) {
        const double d = exact_deriv->scalar(g.x);
        exact_d_[static_cast<long>(c) * nq_ + q] = d;
        dsq += pd.w * d * d;
      }
    }
  }
  exact_norms_ = {std::sqrt(l2sq), std::sqrt(dsq)};
}

ErrorNorms FEErrorEvaluator::eval(const VecX& dofs_full) const {
  const ElementDef& el = *space_->elem;
  const int ncomp = space_->field_ncomp();
  double l2 = 0.0, dsq = 0.0;
  for (int c = 0; c < space_->mesh->num_cells(); ++c) {
    VecX coef = space_->local_coeffs(c, dofs_full);
    for (int q = 0; q < nq_; ++q) {
      const PointData& pd = pts_[static_cast<size_t>(c) * nq_ + q];
      const long row = static_cast<long>(c) * nq_ + q;
      if (el.ncomp == 1) {
        const double v = values_[q].col(0).dot(coef) - exact_(row, 0);
        l2 += pd.w * v * v;
        continue;
      }
      const Vec2 uhat = values_[q].transpose() * coef;
      const Vec3 u = pd.T * uhat;
      double d2 = 0.0;
      for (int cc = 0; cc < ncomp; ++cc) {
        const double dv = u[cc] - exact_(row, cc);
        d2 += dv * dv;
      }
      l2 += pd.w * d2;
      if (with_deriv_) {
        const double dv = derivs_[q].dot(coef) * pd.dscale - exact_d_[row];
        dsq += pd.w * dv * dv;
      }
    }
  }
  return {std::sqrt(l2), std::sqrt(dsq)};
}

NNErrorEvaluator::NNErrorEvaluator(const Mesh& mesh, const Field& exact, const Field* exact_curl,
                                   int quad_n) {
  QuadRule quad = tensor_rule(quad_n);
  const long n = static_cast<long>(mesh.num_cells()) * quad.points.size();
  ambient_ = mesh.ambient_dim;
  with_curl_ = exact_curl != nullptr && !mesh.surface;
  X_.resize(n, ambient_);
  w_.resize(n);
  exact_.resize(n, exact.ncomp);
  exact_d_ = VecX::Zero(n);
  VecX ev(exact.ncomp);
  long row = 0;
  for (int c = 0; c < mesh.num_cells(); ++c)
    for (size_t q = 0; q < quad.points.size(); ++q) {
      const CellGeometry g = mesh.cell_geometry(c, quad.points[q]);
      X_.row(row) = g.x.head(ambient_).transpose();
      w_[row] = quad.weights[q] * g.detJ;
      exact.eval(g.x, ev.data());
      exact_.row(row) = ev.transpose();
      if (with_curl_) exact_d_[row] = exact_curl->scalar(g.x);
      ++row;
    }
}

ErrorNorms NNErrorEvaluator::eval(const MLPArch& arch, const VecX& theta) const {
  double l2 = 0.0, dsq = 0.0;
  if (with_curl_ && arch.output_dim() == 2) {
    MatX Y;
    std::vector<MatX> dY;
    forward_jet1(arch, theta, X_, Y, dY);
    for (long r = 0; r < X_.rows(); ++r) {
      const double curl = dY[0](r, 1) - dY[1](r, 0);
      double d2 = 0.0;
      for (int c = 0; c < Y.cols(); ++c) {
        const double dv = Y(r, c) - exact_(r, c);
        d2 += dv * dv;
      }
      l2 += w_[r] * d2;
      const double dc = curl - exact_d_[r];
      dsq += w_[r] * dc * dc;
    }
  } else {
    MatX Y = forward(arch, theta, X_);
    for (long r = 0; r < X_.rows(); ++r) {
      double d2 = 0.0;
      for (int c = 0; c < Y.cols(); ++c) {
        const double dv = Y(r, c) - exact_(r, c);
        d2 += dv * dv;
      }
      l2 += w_[r] * d2;
    }
  }
  return {std::sqrt(l2), std::sqrt(dsq)};
}

// ---------------------------------------------------------------------------
// reference solves

MaxwellFem solve_maxwell_fem(const ManufacturedCase& mc, MeshPtr mesh, int order, int err_quad) {
  MaxwellFem fem;
  fem.full = build_space(mesh, nedelec_quad(order));
  fem.trial = zero_trace_subspace(fem.full);
  fem.test = linearized_test_space(fem.trial);
  fem.offset = dirichlet_offset(*fem.full, mc.u);
  MaxwellProblem prob{fem.trial, fem.test, Coefficient::function(mc.kappa), mc.f, fem.offset, 0};
  fem.sys = assemble_maxwell(prob);
  VecX u_free = solve_sparse(fem.sys.A, fem.sys.b);
  fem.solution_full = fem.trial->extend_free(u_free) + fem.offset;
  fem.errors = fe_error_norms(*fem.full, fem.solution_full, mc.u, &mc.deriv, err_quad);
  fem.exact_norms = field_norms(*mesh, mc.u, &mc.deriv, err_quad);
  return fem;
}

DarcyFem solve_darcy_fem(const ManufacturedCase& mc, MeshPtr mesh, int err_quad) {
  DarcyFem fem;
  fem.flux = build_space(mesh, raviart_thomas_quad(1));
  fem.pressure = build_space(mesh, lagrange_quad(0, Continuity::DG));
  DarcySphereProblem prob{fem.flux, fem.pressure, mc.f, 0};
  fem.sys = assemble_darcy_sphere(prob);
  fem.x = solve_sparse(fem.sys.A, fem.sys.b);
  fem.flux_errors = fe_error_norms(*fem.flux, fem.x.head(fem.sys.nu), mc.u, &mc.deriv, err_quad);
  fem.pressure_errors =
      fe_error_norms(*fem.pressure, fem.x.segment(fem.sys.nu, fem.sys.np), mc.p, nullptr, err_quad);
  return fem;
}

// ---------------------------------------------------------------------------
// fem convergence

ConvergenceResult run_fem_convergence(const ExperimentConfig& cfg) {
  const ManufacturedCase& mc = manufactured_case(cfg.case_id);
  verify_case(mc, 5, 2024, 1e-4);
  std::filesystem::create_directories(cfg.out_dir);
  ConvergenceResult result;
  std::vector<double> hs, e_l2, e_d;
  require(!cfg.sizes.empty(), "fem-convergence: [mesh] sizes must be set");
  for (int n : cfg.sizes) {
    double h;
    ErrorNorms err;
    if (mc.surface) {
      DarcyFem fem = solve_darcy_fem(mc, build_cubed_sphere(n), cfg.error_quad());
      err = fem.flux_errors;
      h = 2.0 / n;
    } else {
      MaxwellFem fem = solve_maxwell_fem(mc, build_cartesian(n, n, cfg.bounds), cfg.order,
                                         cfg.error_quad());
      err = fem.errors;
      h = (cfg.bounds.x1 - cfg.bounds.x0) / n;
    }
    ConvergenceRow row{h, cfg.order, err.l2, err.full(), nan_value(), nan_value()};
    if (!hs.empty()) {
      row.rate_l2 = std::log(e_l2.back() / row.e_l2) / std::log(hs.back() / h);
      row.rate_d = std::log(e_d.back() / row.e_d) / std::log(hs.back() / h);
    }
    hs.push_back(h);
    e_l2.push_back(row.e_l2);
    e_d.push_back(row.e_d);
    result.rows.push_back(row);
  }
  result.slope_l2 = fitted_slope(hs, e_l2);
  result.slope_d = fitted_slope(hs, e_d);
  Csv csv(cfg.out_dir + "/convergence.csv", {"h", "order", "e_l2", "e_d", "rate_l2", "rate_d"});
  for (const auto& r : result.rows)
    csv.row({r.h, static_cast<double>(r.order), r.e_l2, r.e_d, r.rate_l2, r.rate_d});
  return result;
}

// ---------------------------------------------------------------------------
// forward maxwell

namespace {

BFGSConfig optimizer_config(const ExperimentConfig& cfg) {
  BFGSConfig bcfg;
  bcfg.lbfgs_memory = (cfg.optimizer == "lbfgs") ? 20 : 0;
  return bcfg;
}

ForwardSeedResult forward_maxwell_worker(const ExperimentConfig& cfg, const ManufacturedCase& mc,
                                         unsigned long long seed) {
  MLPArch arch = make_arch(2, cfg.nn_depth, cfg.nn_width, 2, parse_activation(cfg.nn_activation));
  ForwardSeedResult res;
  res.seed = seed;
  res.arch = arch;
  VecX theta = glorot_init(arch, seed);
  MeshPtr mesh = build_cartesian(cfg.nx, cfg.ny, cfg.bounds);
  int iter_offset = 0;
  int total_iters = 0;
  for (const Stage& st : cfg.stages) total_iters += st.iters;

  for (int ms = 0; ms < cfg.mesh_stages; ++ms) {
    MaxwellFem fem = solve_maxwell_fem(mc, mesh, cfg.order, cfg.error_quad());
    InterpolationPlan plan = interpolation_plan(*fem.trial);
    MaxwellProblem prob{fem.trial, fem.test, Coefficient::function(mc.kappa), mc.f, fem.offset, 0};
    MaxwellFeinnLoss loss(prob, plan, arch, cfg.loss);
    MatX targets;
    eval_fe_function(*fem.full, fem.solution_full, plan.points, targets);
    MatX Xplan = plan.point_matrix(2);
    DataFitLoss fit(Xplan, targets, arch);
    Objective fit_obj = fit.objective();
    FEErrorEvaluator fe_eval(fem.full, mc.u, &mc.deriv, cfg.error_quad());
    NNErrorEvaluator nn_eval(*mesh, mc.u, &mc.deriv, cfg.error_quad());

    auto errors_at = [&](const VecX& th, bool with_nn, double lossval) {
      ErrorHistoryRow row;
      row.loss = lossval;
      MatX Y = forward(arch, th, Xplan);
      VecX dofs = plan.apply(flatten_rows(Y)) + fem.offset;
      ErrorNorms en = fe_eval.eval(dofs);
      row.e_l2_feinn = en.l2;
      row.e_hcurl_feinn = en.full();
      if (with_nn) {
        ErrorNorms nn = nn_eval.eval(arch, th);
        row.e_l2_nn = nn.l2;
        row.e_hcurl_nn = nn.full();
      } else {
        row.e_l2_nn = row.e_hcurl_nn = nan_value();
      }
      return row;
    };

    BFGSConfig bcfg = optimizer_config(cfg);
    bcfg.callback = [&](int giter, const VecX& th, double v, double) {
      if (giter % cfg.history_cadence != 0) return;
      ErrorHistoryRow row = errors_at(th, giter % cfg.nn_error_cadence == 0, v);
      row.iter = iter_offset + giter;
      res.history.push_back(row);
    };
    TrainResult tr = train_forward(cfg.stages, loss.objective(), &fit_obj, theta, bcfg);
    theta = tr.theta;
    iter_offset += total_iters;

    if (ms + 1 == cfg.mesh_stages) {
      res.final = errors_at(theta, true, tr.history.rows.back().value);
      res.final.iter = iter_offset;
    } else {
      mesh = uniform_refine(mesh, 1);
    }
  }
  res.theta = theta;
  return res;
}

}  // namespace

ForwardResult run_forward_feinn(const ExperimentConfig& cfg) {
  const ManufacturedCase& mc = manufactured_case(cfg.case_id);
  require(!mc.surface, "forward-maxwell: flat cases only");
  verify_case(mc, 5, 2024, 1e-4);
  std::filesystem::create_directories(cfg.out_dir);

  ForwardResult result;
  MeshPtr final_mesh = build_cartesian(cfg.nx, cfg.ny, cfg.bounds);
  for (int ms = 1; ms < cfg.mesh_stages; ++ms) final_mesh = uniform_refine(final_mesh, 1);
  result.mesh = final_mesh;
  MaxwellFem fem = solve_maxwell_fem(mc, final_mesh, cfg.order, cfg.error_quad());
  result.fem_e_l2 = fem.errors.l2;
  result.fem_e_hcurl = fem.errors.full();

  result.seeds = run_seeds<ForwardSeedResult>(cfg.seeds, cfg.threads, [&](unsigned long long s) {
    return forward_maxwell_worker(cfg, mc, s);
  });

  for (const auto& sr : result.seeds) {
    Csv csv(cfg.out_dir + "/history_seed" + std::to_string(sr.seed) + ".csv",
            {"iter", "loss", "e_l2_feinn", "e_l2_nn", "e_hcurl_feinn", "e_hcurl_nn"});
    for (const auto& r : sr.history)
      csv.row({static_cast<double>(r.iter), reported_norm(r.loss), r.e_l2_feinn, r.e_l2_nn,
               r.e_hcurl_feinn, r.e_hcurl_nn});
  }
  Csv sum(cfg.out_dir + "/summary.csv",
          {"seed", "e_l2_feinn", "e_l2_nn", "e_hcurl_feinn", "e_hcurl_nn", "fem_e_l2",
           "fem_e_hcurl"});
  for (const auto& sr : result.seeds)
    sum.row({static_cast<double>(sr.seed), sr.final.e_l2_feinn, sr.final.e_l2_nn,
             sr.final.e_hcurl_feinn, sr.final.e_hcurl_nn, result.fem_e_l2, result.fem_e_hcurl});
  return result;
}

// ---------------------------------------------------------------------------
// darcy on the sphere

namespace {

DarcySeedResult darcy_worker(const ExperimentConfig& cfg, const ManufacturedCase& mc,
                             unsigned long long seed) {
  MeshPtr mesh = build_cubed_sphere(cfg.ne);
  DarcyFem fem = solve_darcy_fem(mc, mesh, cfg.error_quad());
  InterpolationPlan uplan = interpolation_plan(*fem.flux);
  InterpolationPlan pplan = interpolation_plan(*fem.pressure);
  const Activation act = parse_activation(cfg.nn_activation);
  MLPArch ua = make_arch(3, cfg.nn_depth, cfg.nn_width, 3, act);
  MLPArch pa = make_arch(3, cfg.nn_depth, cfg.nn_width, 1, act);
  DarcySphereProblem prob{fem.flux, fem.pressure, mc.f, 0};
  DarcyFeinnLoss loss(prob, uplan, pplan, ua, pa, cfg.loss);

  DarcySeedResult res;
  res.seed = seed;
  VecX theta = VecX::Zero(loss.total_params());
  theta.head(param_count(ua)) = glorot_init(ua, seed);
  theta.segment(param_count(ua), param_count(pa)) = glorot_init(pa, seed ^ kSeedMix);

  FEErrorEvaluator flux_eval(fem.flux, mc.u, &mc.deriv, cfg.error_quad());
  FEErrorEvaluator pres_eval(fem.pressure, mc.p, nullptr, cfg.error_quad());
  NNErrorEvaluator nn_eval(*mesh, mc.u, nullptr, cfg.error_quad());

  BFGSConfig bcfg = optimizer_config(cfg);
  bcfg.callback = [&](int giter, const VecX& th, double v, double) {
    if (giter % cfg.history_cadence != 0) return;
    ErrorHistoryRow row;
    row.iter = giter;
    row.loss = v;
    VecX x = loss.interpolated(th);
    ErrorNorms fe = flux_eval.eval(x.head(loss.system().nu));
    row.e_l2_feinn = fe.l2;
    row.e_hcurl_feinn = fe.full();  // H(div) norm of the flux
    if (giter % cfg.nn_error_cadence == 0)
      row.e_l2_nn = nn_eval.eval(ua, th.head(param_count(ua))).l2;
    else
      row.e_l2_nn = nan_value();
    row.e_hcurl_nn = pres_eval.eval(x.segment(loss.system().nu, loss.system().np)).l2;
    res.history.push_back(row);
  };
  TrainResult tr = train_forward(cfg.stages, loss.objective(), nullptr, theta, bcfg);
  res.theta = tr.theta;

  VecX x = loss.interpolated(res.theta);
  ErrorNorms fe = flux_eval.eval(x.head(loss.system().nu));
  res.flux_l2 = fe.l2;
  res.flux_hdiv = fe.full();
  res.pressure_l2 = pres_eval.eval(x.segment(loss.system().nu, loss.system().np)).l2;
  res.nn_flux_l2 = nn_eval.eval(ua, res.theta.head(param_count(ua))).l2;

  // weighted pressure mean (the multiplier row enforces it to vanish)
  {
    QuadRule q = tensor_rule(cfg.error_quad());
    double mean = 0.0;
    for (int c = 0; c < mesh->num_cells(); ++c) {
      double area = 0.0;
      for (size_t i = 0; i < q.points.size(); ++i)
        area += q.weights[i] * mesh->cell_geometry(c, q.points[i]).sqrt_detG;
      mean += area * x[loss.system().nu + c];
    }
    res.pressure_mean = mean;
  }

  // super-resolution: interpolate the trained flux network on a finer,
  // higher-order space
  {
    MeshPtr fine_mesh = build_cubed_sphere(cfg.ne * cfg.fine_factor);
    auto fine_space = build_space(fine_mesh, raviart_thomas_quad(cfg.fine_order));
    InterpolationPlan fine_plan = interpolation_plan(*fine_space);
    MatX Y = forward(ua, res.theta.head(param_count(ua)), fine_plan.point_matrix(3));
    VecX fine_dofs = fine_plan.apply(flatten_rows(Y));
    ErrorNorms fine =
        fe_error_norms(*fine_space, fine_dofs, mc.u, &mc.deriv, cfg.fine_order + 4);
    res.fine_flux_l2 = fine.l2;
    res.fine_flux_hdiv = fine.full();
  }
  return res;
}

}  // namespace

DarcyResult run_darcy_sphere(const ExperimentConfig& cfg) {
  const ManufacturedCase& mc = manufactured_case(cfg.case_id);
  require(mc.surface, "forward-darcy-sphere: surface cases only");
  verify_case(mc, 5, 2024, 1e-4);
  std::filesystem::create_directories(cfg.out_dir);
  DarcyResult result;
  DarcyFem fem = solve_darcy_fem(mc, build_cubed_sphere(cfg.ne), cfg.error_quad());
  result.fem_flux_l2 = fem.flux_errors.l2;
  result.fem_flux_hdiv = fem.flux_errors.full();
  result.fem_pressure_l2 = fem.pressure_errors.l2;

  result.seeds = run_seeds<DarcySeedResult>(cfg.seeds, cfg.threads, [&](unsigned long long s) {
    return darcy_worker(cfg, mc, s);
  });
  for (const auto& sr : result.seeds) {
    Csv csv(cfg.out_dir + "/history_seed" + std::to_string(sr.seed) + ".csv",
            {"iter", "loss", "e_l2_flux_feinn", "e_l2_flux_nn", "e_hdiv_flux_feinn", "e_l2_p_feinn"});
    for (const auto& r : sr.history)
      csv.row({static_cast<double>(r.iter), reported_norm(r.loss), r.e_l2_feinn, r.e_l2_nn,
               r.e_hcurl_feinn, r.e_hcurl_nn});
  }
  Csv sum(cfg.out_dir + "/summary.csv",
          {"seed", "flux_l2", "flux_hdiv", "pressure_l2", "nn_flux_l2", "fine_flux_l2",
           "fine_flux_hdiv", "pressure_mean", "fem_flux_l2", "fem_flux_hdiv", "fem_pressure_l2"});
  for (const auto& sr : result.seeds)
    sum.row({static_cast<double>(sr.seed), sr.flux_l2, sr.flux_hdiv, sr.pressure_l2, sr.nn_flux_l2,
             sr.fine_flux_l2, sr.fine_flux_hdiv, sr.pressure_mean, result.fem_flux_l2,
             result.fem_flux_hdiv, result.fem_pressure_l2});
  return result;
}

// ---------------------------------------------------------------------------
// inverse maxwell

namespace {

std::vector<Vec3> observation_locations(const ExperimentConfig& cfg) {
  std::vector<Vec3> locs;
  const int n = cfg.obs_per_side;
  require(n >= 2, "observations: per_side must be at least 2");
  const double lo = 0.005, hi = 0.995;
  if (cfg.obs_mode == "interior") {
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        locs.emplace_back(lo + (hi - lo) * i / (n - 1), lo + (hi - lo) * j / (n - 1), 0.0);
  } else {
    for (int i = 0; i < n; ++i) {
      const double t = lo + (hi - lo) * i / (n - 1);
      locs.emplace_back(t, lo, 0.0);
      locs.emplace_back(t, hi, 0.0);
      locs.emplace_back(lo, t, 0.0);
      locs.emplace_back(hi, t, 0.0);
    }
  }
  return locs;
}

struct InverseContext {
  SpacePtr full, trial, test, cg;
  VecX offset;
  MaxwellProblem prob;
  ObservationSet obs;
  bool boundary_mode = false;
};

InverseContext inverse_context(const ExperimentConfig& cfg, const ManufacturedCase& mc,
                               MeshPtr mesh) {
  InverseContext ctx;
  ctx.boundary_mode = (cfg.obs_mode == "boundary");
  ctx.full = build_space(mesh, nedelec_quad(cfg.order));
  ctx.cg = build_space(mesh, lagrange_quad(1, Continuity::CG));
  if (ctx.boundary_mode) {
    ctx.trial = ctx.full;
    ctx.test = linearized_test_space(ctx.trial);
    ctx.offset = VecX();
  } else {
    ctx.trial = zero_trace_subspace(ctx.full);
    ctx.test = linearized_test_space(ctx.trial);
    ctx.offset = dirichlet_offset(*ctx.full, mc.u);
  }
  ctx.prob = MaxwellProblem{ctx.trial,  ctx.test, Coefficient::fe(ctx.cg, VecX::Zero(ctx.cg->ndofs)),
                            mc.f,       ctx.offset, 0};
  std::vector<int> comps = cfg.obs_components == "x" ? std::vector<int>{0} : std::vector<int>{0, 1};
  ctx.obs = make_observations(mc.u, observation_locations(cfg), comps, cfg.noise_sigma,
                              cfg.noise_seed);
  return ctx;
}

InverseSeedResult inverse_worker(const ExperimentConfig& cfg, const ManufacturedCase& mc,
                                 unsigned long long seed) {
  MeshPtr mesh = build_cartesian(cfg.nx, cfg.ny, cfg.bounds);
  InverseContext ctx = inverse_context(cfg, mc, mesh);
  InterpolationPlan uplan = interpolation_plan(*ctx.trial);
  InterpolationPlan kplan = interpolation_plan(*ctx.cg);
  const Activation act = parse_activation(cfg.nn_activation);
  MLPArch ua = make_arch(2, cfg.nn_depth, cfg.nn_width, 2, act);
  MLPArch ka = make_arch(2, cfg.coeff_depth, cfg.coeff_width, 1, Activation::Softplus, true);

  LossSpec pde_spec = cfg.loss;
  InverseLoss loss(ctx.prob, uplan, kplan, ua, ka, ctx.obs, pde_spec, ctx.boundary_mode);

  FEErrorEvaluator u_eval(ctx.full, mc.u, &mc.deriv, cfg.error_quad());
  FEErrorEvaluator k_eval(ctx.cg, mc.kappa, nullptr, cfg.error_quad());
  NNErrorEvaluator u_nn_eval(*mesh, mc.u, &mc.deriv, cfg.error_quad());
  NNErrorEvaluator k_nn_eval(*mesh, mc.kappa, nullptr, cfg.error_quad());
  const ErrorNorms u_norm = u_eval.exact_norms();
  const ErrorNorms k_norm = k_eval.exact_norms();
  const double u_hcurl_norm =
      std::sqrt(u_norm.l2 * u_norm.l2 + u_norm.dseminorm * u_norm.dseminorm);

  InverseSeedResult res;
  res.seed = seed;
  VecX theta(loss.state_params() + loss.coeff_params());
  theta.head(loss.state_params()) = glorot_init(ua, seed);
  theta.tail(loss.coeff_params()) = glorot_init(ka, seed ^ kSeedMix);

  auto errors_at = [&](const VecX& th, bool with_nn, double lossval, int iter) {
    InverseHistoryRow row;
    row.iter = iter;
    row.loss = lossval;
    ErrorNorms ue = u_eval.eval(loss.state_dofs(th));
    row.eps_l2_u = ue.l2 / u_norm.l2;
    row.eps_hcurl_u = ue.full() / u_hcurl_norm;
    row.eps_l2_k = k_eval.eval(loss.coeff_dofs(th)).l2 / k_norm.l2;
    if (with_nn) {
      ErrorNorms un = u_nn_eval.eval(ua, th.head(loss.state_params()));
      row.eps_l2_u_nn = un.l2 / u_norm.l2;
      row.eps_hcurl_u_nn = un.full() / u_hcurl_norm;
      row.eps_l2_k_nn = k_nn_eval.eval(ka, th.tail(loss.coeff_params())).l2 / k_norm.l2;
    } else {
      row.eps_l2_u_nn = row.eps_hcurl_u_nn = row.eps_l2_k_nn = nan_value();
    }
    return row;
  };

  BFGSConfig bcfg = optimizer_config(cfg);
  bcfg.callback = [&](int giter, const VecX& th, double v, double) {
    if (giter % cfg.history_cadence != 0) return;
    res.history.push_back(errors_at(th, giter % cfg.nn_error_cadence == 0, v, giter));
  };
  TrainResult tr = train_inverse(loss, cfg.stages, theta, bcfg);
  res.final = errors_at(tr.theta, true, tr.history.rows.back().value,
                        tr.history.rows.back().iter);
  return res;
}

}  // namespace

InverseResult run_inverse_maxwell(const ExperimentConfig& cfg) {
  const ManufacturedCase& mc = manufactured_case(cfg.case_id);
  require(!mc.surface, "inverse-maxwell: flat cases only");
  verify_case(mc, 5, 2024, 1e-4);
  std::filesystem::create_directories(cfg.out_dir);
  InverseResult result;
  result.seeds = run_seeds<InverseSeedResult>(cfg.seeds, cfg.threads, [&](unsigned long long s) {
    return inverse_worker(cfg, mc, s);
  });
  for (const auto& sr : result.seeds) {
    Csv csv(cfg.out_dir + "/history_seed" + std::to_string(sr.seed) + ".csv",
            {"iter", "loss", "eps_l2_u", "eps_hcurl_u", "eps_l2_kappa", "eps_l2_u_nn",
             "eps_hcurl_u_nn", "eps_l2_kappa_nn"});
    for (const auto& r : sr.history)
      csv.row({static_cast<double>(r.iter), r.loss, r.eps_l2_u, r.eps_hcurl_u, r.eps_l2_k,
               r.eps_l2_u_nn, r.eps_hcurl_u_nn, r.eps_l2_k_nn});
  }
  Csv sum(cfg.out_dir + "/summary.csv",
          {"seed", "eps_l2_u", "eps_hcurl_u", "eps_l2_kappa", "eps_l2_u_nn", "eps_hcurl_u_nn",
           "eps_l2_kappa_nn"});
  for (const auto& sr : result.seeds)
    sum.row({static_cast<double>(sr.seed), sr.final.eps_l2_u, sr.final.eps_hcurl_u,
             sr.final.eps_l2_k, sr.final.eps_l2_u_nn, sr.final.eps_hcurl_u_nn,
             sr.final.eps_l2_k_nn});
  return result;
}

// ---------------------------------------------------------------------------
// error indicators

VecX compute_error_indicators(IndicatorKind kind, const FESpace& space, const VecX& feinn_full,
                              const MLPArch& arch, const VecX& theta, const ManufacturedCase& mc,
                              int quad_n) {
  const Mesh& mesh = *space.mesh;
  QuadRule quad = tensor_rule(quad_n);
  const int nq = static_cast<int>(quad.points.size());
  ShapeTable tab = shape_table(*space.elem, quad.points);
  VecX out = VecX::Zero(mesh.num_cells());
  require(!mesh.surface, "indicators: flat meshes only");

  // batched network evaluation at every quadrature point when needed
  MatX Y;
  std::vector<MatX> dY, d2Y;
  MatX X(static_cast<long>(mesh.num_cells()) * nq, 2);
  std::vector<double> meas(static_cast<size_t>(mesh.num_cells()) * nq);
  std::vector<Vec3> phys(static_cast<size_t>(mesh.num_cells()) * nq);
  for (int c = 0; c < mesh.num_cells(); ++c)
    for (int q = 0; q < nq; ++q) {
      CellGeometry g = mesh.cell_geometry(c, quad.points[q]);
      const long row = static_cast<long>(c) * nq + q;
      X.row(row) = g.x.head(2).transpose();
      meas[row] = quad.weights[q] * g.detJ;
      phys[row] = g.x;
    }
  if (kind == IndicatorKind::Integration) {
    Y = forward(arch, theta, X);
  } else if (kind == IndicatorKind::Network) {
    forward_jet2(arch, theta, X, Y, dY, d2Y);
  }

  VecX ev(2);
  for (int c = 0; c < mesh.num_cells(); ++c) {
    CellGeometry g0 = mesh.cell_geometry(c, Vec2(0, 0));
    const Mat2 JinvT = g0.J.topLeftCorner<2, 2>().inverse().transpose();
    VecX coef = space.local_coeffs(c, feinn_full);
    double acc = 0.0;
    for (int q = 0; q < nq; ++q) {
      const long row = static_cast<long>(c) * nq + q;
      const Vec2 uh = JinvT * (tab.values[q].transpose() * coef);
      switch (kind) {
        case IndicatorKind::Real: {
          mc.u.eval(phys[row], ev.data());
          acc += meas[row] * (uh - Vec2(ev[0], ev[1])).squaredNorm();
          break;
        }
        case IndicatorKind::Integration: {
          const Vec2 un(Y(row, 0), Y(row, 1));
          acc += meas[row] * (un - uh).squaredNorm();
          break;
        }
        case IndicatorKind::Network: {
          // curl curl u_N + kappa u_N - f at the point, from second input jets
          const double ccx = d2Y[jet2_index(0, 1, 2)](row, 1) - d2Y[jet2_index(1, 1, 2)](row, 0);
          const double ccy = -d2Y[jet2_index(0, 0, 2)](row, 1) + d2Y[jet2_index(0, 1, 2)](row, 0);
          const double kap = mc.kappa.scalar(phys[row]);
          double fv[2];
          mc.f.eval(phys[row], fv);
          const double rx = ccx + kap * Y(row, 0) - fv[0];
          const double ry = ccy + kap * Y(row, 1) - fv[1];
          acc += meas[row] * (rx * rx + ry * ry);
          break;
        }
      }
    }
    out[c] = std::sqrt(acc);
  }
  return out;
}

std::vector<int> mark_cells(const VecX& indicator, double fraction) {
  require(indicator.size() > 0, "mark_cells: empty indicator");
  require(fraction > 0.0 && fraction <= 1.0, "mark_cells: fraction must be in (0, 1]");
  const int n = static_cast<int>(indicator.size());
  const int count = static_cast<int>(std::ceil(fraction * n));
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (indicator[a] != indicator[b]) return indicator[a] > indicator[b];
    return a < b;
  });
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

IndicatorResult run_indicators(const ExperimentConfig& cfg) {
  const ManufacturedCase& mc = manufactured_case(cfg.case_id);
  verify_case(mc, 5, 2024, 1e-4);
  std::filesystem::create_directories(cfg.out_dir);
  ExperimentConfig fwd = cfg;
  fwd.seeds = {cfg.seeds.front()};
  fwd.threads = 1;
  const ManufacturedCase& mcc = mc;

  // train on the configured mesh, then evaluate the three indicators
  MeshPtr mesh = build_cartesian(cfg.nx, cfg.ny, cfg.bounds);
  ForwardSeedResult seed_res;
  {
    ForwardResult fr = run_forward_feinn(fwd);
    seed_res = fr.seeds.front();
    mesh = fr.mesh;
  }
  MaxwellFem fem = solve_maxwell_fem(mcc, mesh, cfg.order, cfg.error_quad());
  InterpolationPlan plan = interpolation_plan(*fem.trial);
  MatX Y = forward(seed_res.arch, seed_res.theta, plan.point_matrix(2));
  VecX feinn_full = plan.apply(flatten_rows(Y)) + fem.offset;

  IndicatorResult res;
  res.mesh = mesh;
  res.arch = seed_res.arch;
  res.theta = seed_res.theta;
  const int quad_n = cfg.error_quad();
  res.real = compute_error_indicators(IndicatorKind::Real, *fem.full, feinn_full, seed_res.arch,
                                      seed_res.theta, mcc, quad_n);
  res.integration = compute_error_indicators(IndicatorKind::Integration, *fem.full, feinn_full,
                                             seed_res.arch, seed_res.theta, mcc, quad_n);
  res.network = compute_error_indicators(IndicatorKind::Network, *fem.full, feinn_full,
                                         seed_res.arch, seed_res.theta, mcc, quad_n);
  res.marked_real = mark_cells(res.real, 0.10);
  res.marked_integration = mark_cells(res.integration, 0.10);
  res.marked_network = mark_cells(res.network, 0.10);

  auto marked_flags = [&](const std::vector<int>& ids) {
    VecX flags = VecX::Zero(mesh->num_cells());
    for (int id : ids) flags[id] = 1.0;
    return flags;
  };
  Csv csv(cfg.out_dir + "/indicators.csv",
          {"cell", "x", "y", "real", "integration", "network", "marked_real",
           "marked_integration", "marked_network"});
  VecX fr = marked_flags(res.marked_real), fi = marked_flags(res.marked_integration),
       fn = marked_flags(res.marked_network);
  for (int c = 0; c < mesh->num_cells(); ++c) {
    CellGeometry g = mesh->cell_geometry(c, Vec2(0, 0));
    csv.row({static_cast<double>(c), g.x.x(), g.x.y(), res.real[c], res.integration[c],
             res.network[c], fr[c], fi[c], fn[c]});
  }
  if (cfg.vtk) {
    write_vtk(*mesh, cfg.out_dir + "/indicators.vtk",
              {{"real", res.real},
               {"integration", res.integration},
               {"network", res.network},
               {"marked_real", fr},
               {"marked_integration", fi},
               {"marked_network", fn}});
  }
  return res;
}

}  // namespace feinn
