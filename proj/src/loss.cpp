#include "feinn/loss.hpp"

#include <cmath>
#include <random>

namespace feinn {

namespace {

// objective and d(objective)/dr for the configured residual norm
double norm_objective(const LossSpec& spec, const GramSolver* gram, const SpMat& l2_gram,
                      const VecX& r, VecX* grad_r) {
  if (spec.kind == LossKind::ResidualL2) {
    if (grad_r) *grad_r = 2.0 * r;
    return r.squaredNorm();
  }
  require(gram != nullptr, "preconditioned loss: missing factorised Gram matrix");
  VecX z = gram->solve(r);
  if (spec.norm == DualNorm::Unorm) {
    if (grad_r) *grad_r = 2.0 * z;
    return r.dot(z);
  }
  VecX Mz = l2_gram * z;
  if (grad_r) *grad_r = 2.0 * gram->solve(Mz);
  return z.dot(Mz);
}

InnerProduct natural_inner(Family fam) {
  return fam == Family::Nedelec ? InnerProduct::Hcurl : InnerProduct::Hdiv;
}

}  // namespace

GramSolver::GramSolver(const SpMat& B) : B_(B) {
  SpMatC Bc(B);
  Bc.makeCompressed();
  llt_.compute(Bc);
  require(llt_.info() == Eigen::Success, "GramSolver: Cholesky factorisation failed");
}

VecX GramSolver::solve(const VecX& r) const { return llt_.solve(r); }

MaxwellFeinnLoss::MaxwellFeinnLoss(const MaxwellProblem& prob, const InterpolationPlan& plan,
                                   MLPArch arch, LossSpec spec)
    : prob_(&prob), plan_(&plan), arch_(std::move(arch)), spec_(spec) {
  require(arch_.output_dim() == plan.ncomp, "MaxwellFeinnLoss: network output dim mismatch");
  sys_ = assemble_maxwell(prob);
  if (spec_.kind == LossKind::Preconditioned) {
    gram_ = std::make_shared<GramSolver>(
        gram_matrix(*prob.test, natural_inner(prob.test->elem->family)));
    if (spec_.norm == DualNorm::L2) l2_gram_ = gram_matrix(*prob.test, InnerProduct::L2);
  }
  Xplan_ = plan.point_matrix(prob.trial->mesh->ambient_dim);
}

double MaxwellFeinnLoss::eval(const VecX& theta, VecX* grad) const {
  MatX Y = forward(arch_, theta, Xplan_);
  VecX u_full = plan_->apply(flatten_rows(Y));
  VecX u_free = prob_->trial->restrict_free(u_full);
  VecX r = sys_.A * u_free - sys_.b;
  VecX grad_r;
  const double obj = norm_objective(spec_, gram_.get(), l2_gram_, r, grad ? &grad_r : nullptr);
  if (grad) {
    VecX gu_full = prob_->trial->extend_free(sys_.A.transpose() * grad_r);
    MatX cot = unflatten_rows(plan_->apply_transpose(gu_full), Y.rows(), Y.cols());
    *grad = vjp_params(arch_, theta, Xplan_, cot);
  }
  return obj;
}

Objective MaxwellFeinnLoss::objective() const {
  return [this](const VecX& th, VecX& g) { return eval(th, &g); };
}

DataFitLoss::DataFitLoss(MatX X, MatX targets, MLPArch arch)
    : X_(std::move(X)), targets_(std::move(targets)), arch_(std::move(arch)) {
  require(X_.rows() == targets_.rows(), "DataFitLoss: sample count mismatch");
  require(targets_.cols() == arch_.output_dim(), "DataFitLoss: target dim mismatch");
}

double DataFitLoss::eval(const VecX& theta, VecX* grad) const {
  MatX D = forward(arch_, theta, X_) - targets_;
  if (grad) *grad = vjp_params(arch_, theta, X_, MatX(2.0 * D));
  return D.squaredNorm();
}

Objective DataFitLoss::objective() const {
  return [this](const VecX& th, VecX& g) { return eval(th, &g); };
}

DarcyFeinnLoss::DarcyFeinnLoss(const DarcySphereProblem& prob, const InterpolationPlan& flux_plan,
                               const InterpolationPlan& pressure_plan, MLPArch flux_arch,
                               MLPArch pressure_arch, LossSpec spec)
    : flux_plan_(&flux_plan),
      pressure_plan_(&pressure_plan),
      flux_arch_(std::move(flux_arch)),
      pressure_arch_(std::move(pressure_arch)),
      spec_(spec) {
  require(flux_arch_.output_dim() == 3, "DarcyFeinnLoss: flux network needs 3 outputs");
  require(pressure_arch_.output_dim() == 1, "DarcyFeinnLoss: pressure network needs 1 output");
  require(spec_.kind == LossKind::ResidualL2 || spec_.norm == DualNorm::Unorm,
          "DarcyFeinnLoss: preconditioned variant supports the U-norm only");
  sys_ = assemble_darcy_sphere(prob);
  if (spec_.kind == LossKind::Preconditioned) {
    // Block-diagonal Gram: H(div) on the flux space, L2 on the pressure space,
    // unit weight on the multiplier row.
    SpMat Bu = gram_matrix(*prob.flux, InnerProduct::Hdiv);
    SpMat Bp = gram_matrix(*prob.pressure, InnerProduct::L2);
    std::vector<Eigen::Triplet<double>> trips;
    for (int k = 0; k < Bu.outerSize(); ++k)
      for (SpMat::InnerIterator it(Bu, k); it; ++it)
        trips.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < Bp.outerSize(); ++k)
      for (SpMat::InnerIterator it(Bp, k); it; ++it)
        trips.emplace_back(sys_.nu + it.row(), sys_.nu + it.col(), it.value());
    trips.emplace_back(sys_.nu + sys_.np, sys_.nu + sys_.np, 1.0);
    SpMat B(sys_.nu + sys_.np + 1, sys_.nu + sys_.np + 1);
    B.setFromTriplets(trips.begin(), trips.end());
    gram_ = std::make_shared<GramSolver>(B);
  }
  Xu_ = flux_plan.point_matrix(3);
  Xp_ = pressure_plan.point_matrix(3);
}

VecX DarcyFeinnLoss::interpolated(const VecX& theta) const {
  const long nu_p = flux_params(), np_p = pressure_params();
  MatX Yu = forward(flux_arch_, theta.head(nu_p), Xu_);
  MatX Yp = forward(pressure_arch_, theta.segment(nu_p, np_p), Xp_);
  VecX x(sys_.nu + sys_.np + 1);
  x.head(sys_.nu) = flux_plan_->apply(flatten_rows(Yu));
  x.segment(sys_.nu, sys_.np) = pressure_plan_->apply(flatten_rows(Yp));
  x[sys_.nu + sys_.np] = theta[nu_p + np_p];
  return x;
}

double DarcyFeinnLoss::eval(const VecX& theta, VecX* grad) const {
  require(theta.size() == total_params(), "DarcyFeinnLoss: parameter size mismatch");
  const long nu_p = flux_params(), np_p = pressure_params();
  MatX Yu = forward(flux_arch_, theta.head(nu_p), Xu_);
  MatX Yp = forward(pressure_arch_, theta.segment(nu_p, np_p), Xp_);
  VecX x(sys_.nu + sys_.np + 1);
  x.head(sys_.nu) = flux_plan_->apply(flatten_rows(Yu));
  x.segment(sys_.nu, sys_.np) = pressure_plan_->apply(flatten_rows(Yp));
  x[sys_.nu + sys_.np] = theta[nu_p + np_p];
  VecX r = sys_.A * x - sys_.b;
  VecX grad_r;
  const double obj = norm_objective(spec_, gram_.get(), SpMat(), r, grad ? &grad_r : nullptr);
  if (grad) {
    grad->resize(theta.size());
    VecX g_all = sys_.A.transpose() * grad_r;
    MatX cot_u = unflatten_rows(flux_plan_->apply_transpose(g_all.head(sys_.nu)), Yu.rows(), 3);
    MatX cot_p =
        unflatten_rows(pressure_plan_->apply_transpose(g_all.segment(sys_.nu, sys_.np)),
                       Yp.rows(), 1);
    grad->head(nu_p) = vjp_params(flux_arch_, theta.head(nu_p), Xu_, cot_u);
    grad->segment(nu_p, np_p) = vjp_params(pressure_arch_, theta.segment(nu_p, np_p), Xp_, cot_p);
    (*grad)[nu_p + np_p] = g_all[sys_.nu + sys_.np];
  }
  return obj;
}

Objective DarcyFeinnLoss::objective() const {
  return [this](const VecX& th, VecX& g) { return eval(th, &g); };
}

ObservationSet make_observations(const Field& state, const std::vector<Vec3>& locations,
                                 const std::vector<int>& components, double noise_sigma,
                                 unsigned long long noise_seed) {
  ObservationSet obs;
  obs.locations = locations;
  obs.components = components;
  obs.values.resize(static_cast<long>(locations.size()) * components.size());
  std::mt19937_64 rng(noise_seed);
  auto uniform01 = [&rng]() { return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53; };
  auto normal = [&]() {
    const double u1 = uniform01(), u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  };
  VecX uv(state.ncomp);
  long row = 0;
  for (const auto& x : locations) {
    state.eval(x, uv.data());
    for (int c : components) {
      double eps = (noise_sigma > 0.0) ? noise_sigma * normal() : 0.0;
      obs.values[row++] = (1.0 + eps) * uv[c];
    }
  }
  return obs;
}

InverseLoss::InverseLoss(const MaxwellProblem& prob, const InterpolationPlan& state_plan,
                         const InterpolationPlan& coeff_plan, MLPArch state_arch,
                         MLPArch coeff_arch, const ObservationSet& obs, LossSpec pde_spec,
                         bool boundary_mode)
    : base_(&prob),
      state_plan_(&state_plan),
      coeff_plan_(&coeff_plan),
      state_arch_(std::move(state_arch)),
      coeff_arch_(std::move(coeff_arch)),
      obs_(obs),
      spec_(pde_spec),
      boundary_mode_(boundary_mode) {
  require(prob.kappa.is_fe(), "InverseLoss: problem must carry a FE coefficient slot");
  require(coeff_arch_.rectified_output, "InverseLoss: coefficient network must be rectified");
  require(spec_.kind == LossKind::ResidualL2 || spec_.norm == DualNorm::Unorm,
          "InverseLoss: preconditioned variant supports the U-norm only");
  obs_matrix_ = observation_matrix(*prob.trial, obs_.locations, obs_.components);
  if (boundary_mode_) {
    require(!prob.trial->zero_trace && !prob.test->zero_trace,
            "InverseLoss: boundary mode requires full spaces");
    boundary_matrix_ = assemble_boundary_curl_matrix(prob);
  }
  if (spec_.kind == LossKind::Preconditioned)
    gram_ = std::make_shared<GramSolver>(gram_matrix(*prob.test, InnerProduct::Hcurl));
  Xu_ = state_plan.point_matrix(2);
  Xk_ = coeff_plan.point_matrix(2);
}

void InverseLoss::set_alpha(double alpha) {
  require(alpha >= 0.0, "InverseLoss: alpha must be non-negative");
  alpha_ = alpha;
}

VecX InverseLoss::state_dofs(const VecX& theta) const {
  MatX Yu = forward(state_arch_, theta.head(state_params()), Xu_);
  VecX u_full = state_plan_->apply(flatten_rows(Yu));
  if (base_->offset.size()) u_full += base_->offset;
  return u_full;
}

VecX InverseLoss::coeff_dofs(const VecX& theta) const {
  MatX Yk = forward(coeff_arch_, theta.segment(state_params(), coeff_params()), Xk_);
  return coeff_plan_->apply(flatten_rows(Yk));
}

double InverseLoss::eval(const VecX& theta, VecX* grad) const {
  require(theta.size() == state_params() + coeff_params(), "InverseLoss: parameter size mismatch");
  const bool with_misfit = terms_ != 2;
  const bool with_pde = terms_ != 1 && (terms_ == 2 || alpha_ > 0.0);
  const double pde_weight = terms_ == 2 ? 1.0 : alpha_;

  const VecX theta_u = theta.head(state_params());
  const VecX theta_k = theta.segment(state_params(), coeff_params());
  MatX Yu = forward(state_arch_, theta_u, Xu_);
  VecX u_interp = state_plan_->apply(flatten_rows(Yu));
  VecX state_full = u_interp;
  if (base_->offset.size()) state_full += base_->offset;

  double obj = 0.0;
  VecX gu_full = VecX::Zero(base_->trial->ndofs);
  VecX gk_dofs;

  if (with_misfit) {
    VecX m = obs_.values - obs_matrix_ * state_full;
    obj += m.squaredNorm();
    if (grad) gu_full -= 2.0 * (obs_matrix_.transpose() * m);
  }

  if (with_pde) {
    MatX Yk = forward(coeff_arch_, theta_k, Xk_);
    VecX k_dofs = coeff_plan_->apply(flatten_rows(Yk));
    MaxwellProblem p = *base_;
    p.kappa = Coefficient::fe(base_->kappa.fe_space, k_dofs);
    AssembledSystem sys = assemble_maxwell(p);
    VecX u_free = p.trial->restrict_free(u_interp);
    VecX r = sys.A * u_free - sys.b;
    if (boundary_mode_) r -= boundary_matrix_ * state_full;
    VecX grad_r;
    obj += pde_weight * norm_objective(spec_, gram_.get(), SpMat(), r, grad ? &grad_r : nullptr);
    if (grad) {
      VecX w = pde_weight * grad_r;
      gu_full += p.trial->extend_free(sys.A.transpose() * w);
      if (boundary_mode_) gu_full -= boundary_matrix_.transpose() * w;
      gk_dofs = kappa_gradient(p, state_full, w);
    }
  }

  if (grad) {
    grad->setZero(theta.size());
    MatX cot_u = unflatten_rows(state_plan_->apply_transpose(gu_full), Yu.rows(), Yu.cols());
    grad->head(state_params()) = vjp_params(state_arch_, theta_u, Xu_, cot_u);
    if (with_pde) {
      MatX cot_k = unflatten_rows(coeff_plan_->apply_transpose(gk_dofs), Xk_.rows(), 1);
      grad->segment(state_params(), coeff_params()) = vjp_params(coeff_arch_, theta_k, Xk_, cot_k);
    }
  }
  return obj;
}

Objective InverseLoss::objective() const {
  return [this](const VecX& th, VecX& g) { return eval(th, &g); };
}

}  // namespace feinn
