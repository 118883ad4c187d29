#include "feinn/optimize.hpp"

#include <cmath>
#include <deque>

namespace feinn {

namespace {

void apply_mask(VecX& g, const std::vector<int>& frozen) {
  for (int i : frozen) g[i] = 0.0;
}

struct ProbeResult {
  double alpha = 0.0;
  double f = 0.0;
  VecX g;
  bool ok = false;
};

struct LineSearchEnv {
  const Objective& obj;
  const VecX& x;
  const VecX& d;
  const std::vector<int>& frozen;
  double f0, dphi0, c1, c2;
  int evals = 0;

  // f at x + a d; NaN/Inf maps to +inf so the bracket shrinks away from it.
  void probe(double a, double& f, VecX& g, double& dphi) {
    VecX xt = x + a * d;
    f = obj(xt, g);
    apply_mask(g, frozen);
    ++evals;
    if (!std::isfinite(f)) f = std::numeric_limits<double>::infinity();
    dphi = g.dot(d);
  }
};

ProbeResult zoom(LineSearchEnv& env, double alo, double ahi, double flo) {
  ProbeResult out;
  double f, dphi;
  VecX g;
  for (int j = 0; j < 40; ++j) {
    const double a = 0.5 * (alo + ahi);
    env.probe(a, f, g, dphi);
    if (f > env.f0 + env.c1 * a * env.dphi0 || f >= flo) {
      ahi = a;
    } else {
      if (std::abs(dphi) <= -env.c2 * env.dphi0) {
        out = {a, f, std::move(g), true};
        return out;
      }
      if (dphi * (ahi - alo) >= 0.0) ahi = alo;
      alo = a;
      flo = f;
    }
    if (std::abs(ahi - alo) < 1e-16 * std::max(1.0, std::abs(alo))) break;
  }
  // The low end satisfies Armijo whenever it moved; accept it as a weak step.
  if (alo > 0.0) {
    env.probe(alo, f, g, dphi);
    out = {alo, f, std::move(g), true};
  }
  return out;
}

ProbeResult strong_wolfe(LineSearchEnv& env, double a_init) {
  double a_prev = 0.0, f_prev = env.f0;
  double a = a_init;
  double f, dphi;
  VecX g;
  for (int i = 0; i < 25; ++i) {
    env.probe(a, f, g, dphi);
    if (f > env.f0 + env.c1 * a * env.dphi0 || (i > 0 && f >= f_prev))
      return zoom(env, a_prev, a, f_prev);
    if (std::abs(dphi) <= -env.c2 * env.dphi0) return {a, f, std::move(g), true};
    if (dphi >= 0.0) return zoom(env, a, a_prev, f);
    a_prev = a;
    f_prev = f;
    a = std::min(2.0 * a, 1e6);
  }
  return {};
}

}  // namespace

VecX bfgs_minimize(const Objective& objective, VecX theta, const BFGSConfig& config,
                   History* history) {
  const long n = theta.size();
  const bool dense = config.lbfgs_memory <= 0;
  MatX H;
  if (dense) H = MatX::Identity(n, n);
  std::deque<std::pair<VecX, VecX>> memory;  // (s, y)

  History local;
  History& hist = history ? *history : local;

  VecX g(n);
  double f = objective(theta, g);
  require(std::isfinite(f), "bfgs_minimize: objective not finite at the initial point");
  apply_mask(g, config.frozen);
  double gnorm = g.lpNorm<Eigen::Infinity>();
  hist.rows.push_back({0, f, gnorm});
  if (config.callback) config.callback(0, theta, f, gnorm);

  bool first_update = true;
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    if (gnorm <= config.grad_tol) {
      hist.termination = "gradient tolerance";
      break;
    }
    VecX d;
    if (dense) {
      d = -(H * g);
    } else {
      // two-loop recursion
      d = -g;
      std::vector<double> alpha_mem(memory.size());
      for (int i = static_cast<int>(memory.size()) - 1; i >= 0; --i) {
        const auto& [s, y] = memory[i];
        alpha_mem[i] = s.dot(d) / s.dot(y);
        d -= alpha_mem[i] * y;
      }
      if (!memory.empty()) {
        const auto& [s, y] = memory.back();
        d *= s.dot(y) / y.squaredNorm();
      }
      for (size_t i = 0; i < memory.size(); ++i) {
        const auto& [s, y] = memory[i];
        const double beta = y.dot(d) / s.dot(y);
        d += (alpha_mem[i] - beta) * s;
      }
    }
    double dphi0 = g.dot(d);
    if (!(dphi0 < 0.0)) {
      // not a descent direction: reset curvature information
      if (dense) H.setIdentity();
      memory.clear();
      d = -g;
      dphi0 = -g.squaredNorm();
      first_update = true;
    }

    LineSearchEnv env{objective, theta, d, config.frozen, f, dphi0, config.c1, config.c2, 0};
    ProbeResult step = strong_wolfe(env, 1.0);
    if (!step.ok || !(step.f < f)) {
      // safeguarded steepest-descent fallback with backtracking
      hist.line_search_failures++;
      d = -g;
      dphi0 = -g.squaredNorm();
      double a = 1.0;
      bool found = false;
      VecX gt(n);
      for (int t = 0; t < 60; ++t) {
        VecX xt = theta + a * d;
        double ft = objective(xt, gt);
        if (std::isfinite(ft) && ft <= f + config.c1 * a * dphi0) {
          apply_mask(gt, config.frozen);
          step = {a, ft, gt, true};
          found = true;
          break;
        }
        a *= 0.5;
      }
      if (!found) {
        hist.termination = "line search failed";
        break;
      }
      if (dense) H.setIdentity();
      memory.clear();
      first_update = true;
    }

    VecX s = step.alpha * d;
    VecX y = step.g - g;
    theta += s;
    f = step.f;
    g = std::move(step.g);
    gnorm = g.lpNorm<Eigen::Infinity>();

    const double sy = s.dot(y);
    if (sy > 1e-14 * s.norm() * y.norm() && sy > 0.0) {
      if (dense) {
        if (first_update) {
          H *= sy / y.squaredNorm();  // Barzilai-Borwein style scaling
          first_update = false;
        }
        const double rho = 1.0 / sy;
        VecX Hy = H * y;
        const double yHy = y.dot(Hy);
        H.noalias() -= rho * (Hy * s.transpose());
        H.noalias() -= rho * (s * Hy.transpose());
        H.noalias() += (rho * rho * yHy + rho) * (s * s.transpose());
      } else {
        memory.emplace_back(std::move(s), std::move(y));
        if (static_cast<int>(memory.size()) > config.lbfgs_memory) memory.pop_front();
      }
    } else {
      hist.skipped_updates++;
    }

    hist.rows.push_back({iter, f, gnorm});
    if (config.callback) config.callback(iter, theta, f, gnorm);
    if (!std::isfinite(f)) {
      hist.termination = "objective became non-finite";
      break;
    }
  }
  if (hist.termination.empty()) hist.termination = "iteration budget";
  return theta;
}

Stage parse_stage(const std::string& text) {
  auto fail = [&]() { require(false, "invalid stage descriptor: " + text); };
  std::vector<std::string> parts;
  size_t start = 0;
  while (true) {
    size_t pos = text.find(':', start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (parts.size() < 2) fail();
  Stage st;
  if (parts[0] == "pde") st.kind = Stage::PDE;
  else if (parts[0] == "datafit") st.kind = Stage::DataFit;
  else if (parts[0] == "obsfit") st.kind = Stage::ObsFit;
  else if (parts[0] == "coeff") st.kind = Stage::Coeff;
  else if (parts[0] == "joint") st.kind = Stage::Joint;
  else fail();
  st.iters = std::stoi(parts[1]);
  require(st.iters > 0, "stage iteration budget must be positive: " + text);
  if (st.kind == Stage::Joint) {
    if (parts.size() != 3) fail();
    st.alpha = std::stod(parts[2]);
    require(st.alpha >= 0.0, "stage penalty must be non-negative: " + text);
  } else if (parts.size() != 2) {
    fail();
  }
  return st;
}

TrainResult train_forward(const std::vector<Stage>& schedule, const Objective& pde_objective,
                          const Objective* datafit_objective, VecX theta0, BFGSConfig config) {
  TrainResult result;
  result.theta = std::move(theta0);
  int offset = 0;
  const auto user_cb = config.callback;
  for (const Stage& st : schedule) {
    require(st.kind == Stage::PDE || st.kind == Stage::DataFit,
            "train_forward: schedule stages must be pde or datafit");
    const Objective* obj = (st.kind == Stage::PDE) ? &pde_objective : datafit_objective;
    require(obj != nullptr, "train_forward: datafit stage without datafit targets");
    BFGSConfig cfg = config;
    cfg.max_iters = st.iters;
    cfg.callback = [&, offset](int iter, const VecX& th, double v, double gn) {
      if (user_cb && (offset == 0 || iter > 0)) user_cb(offset + iter, th, v, gn);
    };
    History stage_hist;
    result.theta = bfgs_minimize(*obj, std::move(result.theta), cfg, &stage_hist);
    for (const auto& row : stage_hist.rows) {
      if (offset > 0 && row.iter == 0) continue;
      result.history.rows.push_back({offset + row.iter, row.value, row.gnorm});
    }
    result.history.line_search_failures += stage_hist.line_search_failures;
    result.history.skipped_updates += stage_hist.skipped_updates;
    result.history.termination = stage_hist.termination;
    offset += st.iters;
  }
  return result;
}

TrainResult train_inverse(InverseLoss& loss, const std::vector<Stage>& schedule, VecX theta0,
                          BFGSConfig config) {
  // validate: obsfit / coeff stages first, joint alphas non-decreasing
  double last_alpha = 0.0;
  for (const Stage& st : schedule) {
    require(st.kind == Stage::ObsFit || st.kind == Stage::Coeff || st.kind == Stage::Joint,
            "train_inverse: schedule stages must be obsfit, coeff or joint");
    if (st.kind == Stage::Joint) {
      require(st.alpha >= last_alpha, "train_inverse: penalty must be non-decreasing");
      last_alpha = st.alpha;
    }
  }
  TrainResult result;
  result.theta = std::move(theta0);
  const long nu = loss.state_params();
  const long nk = loss.coeff_params();
  int offset = 0;
  const auto user_cb = config.callback;
  for (const Stage& st : schedule) {
    BFGSConfig cfg = config;
    cfg.max_iters = st.iters;
    cfg.frozen.clear();
    switch (st.kind) {
      case Stage::ObsFit:
        loss.set_terms(1);
        for (long i = 0; i < nk; ++i) cfg.frozen.push_back(static_cast<int>(nu + i));
        break;
      case Stage::Coeff:
        loss.set_terms(2);
        for (long i = 0; i < nu; ++i) cfg.frozen.push_back(static_cast<int>(i));
        break;
      case Stage::Joint:
        loss.set_terms(0);
        loss.set_alpha(st.alpha);
        break;
      default: break;
    }
    cfg.callback = [&, offset](int iter, const VecX& th, double v, double gn) {
      if (user_cb && (offset == 0 || iter > 0)) user_cb(offset + iter, th, v, gn);
    };
    History stage_hist;
    result.theta = bfgs_minimize(loss.objective(), std::move(result.theta), cfg, &stage_hist);
    for (const auto& row : stage_hist.rows) {
      if (offset > 0 && row.iter == 0) continue;
      result.history.rows.push_back({offset + row.iter, row.value, row.gnorm});
    }
    result.history.line_search_failures += stage_hist.line_search_failures;
    result.history.skipped_updates += stage_hist.skipped_updates;
    result.history.termination = stage_hist.termination;
    offset += st.iters;
  }
  loss.set_terms(0);
  return result;
}

}  // namespace feinn
