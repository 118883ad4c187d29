#pragma once

#include <functional>
#include <vector>

#include "feinn/loss.hpp"

namespace feinn {

/// BFGS with a strong-Wolfe line search. lbfgs_memory = 0 selects the full
/// dense inverse-Hessian update; positive values select L-BFGS with that
/// history length.
struct BFGSConfig {
  int max_iters = 1000;
  double grad_tol = 0.0;  // terminate on |grad|_inf < grad_tol
  double c1 = 1e-4;
  double c2 = 0.9;
  int lbfgs_memory = 0;
  /// Called after the initial evaluation (iter 0) and every accepted step.
  std::function<void(int iter, const VecX& theta, double value, double gnorm)> callback;
  /// Zero out these gradient components (parameter freezing).
  std::vector<int> frozen;
};

struct HistoryRow {
  int iter = 0;
  double value = 0.0;
  double gnorm = 0.0;
};

struct History {
  std::vector<HistoryRow> rows;
  int line_search_failures = 0;
  int skipped_updates = 0;  // curvature condition violations
  std::string termination;
};

VecX bfgs_minimize(const Objective& objective, VecX theta0, const BFGSConfig& config,
                   History* history = nullptr);

/// One stage of a training schedule.
struct Stage {
  enum Kind { DataFit, PDE, ObsFit, Coeff, Joint } kind = PDE;
  int iters = 0;
  double alpha = 0.0;  // Joint stages only
};

/// Parse stage descriptors of the form "pde:N", "datafit:N", "obsfit:N",
/// "coeff:N", "joint:N:ALPHA".
Stage parse_stage(const std::string& text);

struct TrainResult {
  VecX theta;
  History history;  // global iteration numbering across stages
};

/// Sequentially chained forward training: DataFit stages minimise the given
/// misfit objective, PDE stages the weak-residual objective. A fresh BFGS
/// state is used per stage; parameters carry over.
TrainResult train_forward(const std::vector<Stage>& schedule, const Objective& pde_objective,
                          const Objective* datafit_objective, VecX theta0, BFGSConfig config);

/// Three-step inverse training: (1) fit the state network to the observations,
/// (2) freeze it and train the coefficient network on the PDE term only,
/// (3) joint composite stages with non-decreasing penalty alpha.
TrainResult train_inverse(InverseLoss& loss, const std::vector<Stage>& schedule, VecX theta0,
                          BFGSConfig config);

}  // namespace feinn
