#pragma once

#include <memory>

#include "feinn/assembly.hpp"
#include "feinn/neural.hpp"

namespace feinn {

enum class LossKind { ResidualL2, Preconditioned };
enum class DualNorm { Unorm, L2 };

/// Residual norm choice. The squared norm is minimised; reported values are
/// the norm itself.
struct LossSpec {
  LossKind kind = LossKind::ResidualL2;
  DualNorm norm = DualNorm::Unorm;
};

/// Factorised SPD Gram matrix (the discrete Riesz map).
class GramSolver {
 public:
  explicit GramSolver(const SpMat& B);
  VecX solve(const VecX& r) const;
  const SpMat& matrix() const { return B_; }

 private:
  SpMat B_;
  Eigen::SimplicialLLT<SpMatC> llt_;
};

/// theta -> (objective, gradient) callable.
using Objective = std::function<double(const VecX&, VecX&)>;

inline double reported_norm(double squared_objective) {
  return std::sqrt(std::max(0.0, squared_objective));
}

/// Weak-residual loss of the interpolated network for the curl-curl problem:
/// squared residual-vector norm, or the Gram-preconditioned dual norm.
class MaxwellFeinnLoss {
 public:
  MaxwellFeinnLoss(const MaxwellProblem& prob, const InterpolationPlan& plan, MLPArch arch,
                   LossSpec spec);

  double eval(const VecX& theta, VecX* grad) const;
  Objective objective() const;

  const AssembledSystem& system() const { return sys_; }
  const GramSolver* gram() const { return gram_.get(); }

 private:
  const MaxwellProblem* prob_;
  const InterpolationPlan* plan_;
  MLPArch arch_;
  LossSpec spec_;
  AssembledSystem sys_;
  std::shared_ptr<GramSolver> gram_;
  SpMat l2_gram_;
  MatX Xplan_;
};

/// Plain pointwise misfit sum |N(x_i) - y_i|^2 (network initialisation stage).
class DataFitLoss {
 public:
  DataFitLoss(MatX X, MatX targets, MLPArch arch);
  double eval(const VecX& theta, VecX* grad) const;
  Objective objective() const;

 private:
  MatX X_, targets_;
  MLPArch arch_;
};

/// Mixed Darcy loss on the sphere. Parameter layout: [theta_flux; theta_pressure;
/// lambda], the Lagrange multiplier being a directly trained scalar.
class DarcyFeinnLoss {
 public:
  DarcyFeinnLoss(const DarcySphereProblem& prob, const InterpolationPlan& flux_plan,
                 const InterpolationPlan& pressure_plan, MLPArch flux_arch, MLPArch pressure_arch,
                 LossSpec spec);

  double eval(const VecX& theta, VecX* grad) const;
  Objective objective() const;

  long flux_params() const { return param_count(flux_arch_); }
  long pressure_params() const { return param_count(pressure_arch_); }
  long total_params() const { return flux_params() + pressure_params() + 1; }
  const DarcySystem& system() const { return sys_; }
  /// (flux dofs, pressure dofs, lambda) of the interpolated networks.
  VecX interpolated(const VecX& theta) const;

 private:
  const InterpolationPlan *flux_plan_, *pressure_plan_;
  MLPArch flux_arch_, pressure_arch_;
  LossSpec spec_;
  DarcySystem sys_;
  std::shared_ptr<GramSolver> gram_;
  MatX Xu_, Xp_;
};

/// Observations for inverse problems: locations, observed components
/// (e.g. {0} for x-only) and stacked values in location-major order.
struct ObservationSet {
  std::vector<Vec3> locations;
  std::vector<int> components;
  VecX values;
};

/// Generate observations of an analytic state; multiplicative Gaussian noise
/// u_obs = (1 + eps) u with eps ~ N(0, sigma^2) drawn per point and component.
ObservationSet make_observations(const Field& state, const std::vector<Vec3>& locations,
                                 const std::vector<int>& components, double noise_sigma,
                                 unsigned long long noise_seed);

/// Composite inverse loss: squared data misfit of the interpolated state plus
/// alpha times the squared PDE residual term, with the coefficient entering
/// through its nodal interpolant. Parameter layout: [theta_state; theta_coeff].
class InverseLoss {
 public:
  InverseLoss(const MaxwellProblem& prob, const InterpolationPlan& state_plan,
              const InterpolationPlan& coeff_plan, MLPArch state_arch, MLPArch coeff_arch,
              const ObservationSet& obs, LossSpec pde_spec, bool boundary_mode);

  void set_alpha(double alpha);
  /// which == 0: misfit + alpha * pde; 1: misfit only; 2: pde only.
  void set_terms(int which) { terms_ = which; }

  double eval(const VecX& theta, VecX* grad) const;
  Objective objective() const;

  long state_params() const { return param_count(state_arch_); }
  long coeff_params() const { return param_count(coeff_arch_); }
  VecX state_dofs(const VecX& theta) const;  // full, incl. offset
  VecX coeff_dofs(const VecX& theta) const;

 private:
  const MaxwellProblem* base_;
  const InterpolationPlan *state_plan_, *coeff_plan_;
  MLPArch state_arch_, coeff_arch_;
  ObservationSet obs_;
  LossSpec spec_;
  bool boundary_mode_ = false;
  double alpha_ = 0.0;
  int terms_ = 0;
  SpMat obs_matrix_;
  SpMat boundary_matrix_;
  std::shared_ptr<GramSolver> gram_;
  MatX Xu_, Xk_;
};

}  // namespace feinn
