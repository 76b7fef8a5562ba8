#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mfgsink/error.hpp"
#include "mfgsink/functionals.hpp"
#include "mfgsink/grid.hpp"
#include "mfgsink/kernel.hpp"

namespace mfgsink {

struct SolverConfig {
  int max_sweeps = 20000;
  /// Stops when constrained-marginal residuals and the sup-change of log scalings fall below this.
  double marginal_tolerance = 1e-8;
  /// Outer semi-implicit loop: sup-change of the linearized interaction potential.
  double fixed_point_tolerance = 1e-6;
  Stabilization stabilization = Stabilization::Auto;
  int outer_max_iters = 200;
  /// Relaxation of the interaction potential between outer iterations, in (0, 1].
  double damping = 1.0;

  void validate() const {
    if (max_sweeps < 1) throw Error(ErrorKind::ValidationError, "max_sweeps must be positive");
    if (!(marginal_tolerance > 0.0)) throw Error(ErrorKind::ValidationError, "marginal_tolerance must be positive");
    if (!(fixed_point_tolerance > 0.0)) throw Error(ErrorKind::ValidationError, "fixed_point_tolerance must be positive");
    if (outer_max_iters < 1) throw Error(ErrorKind::ValidationError, "outer_max_iters must be positive");
    if (!(damping > 0.0 && damping <= 1.0)) throw Error(ErrorKind::ValidationError, "damping must lie in (0, 1]");
  }
};

/**
 * Log scalings u_k = log a_k and the chain messages
 *   alpha_0 = 1,  alpha_k = K (a_{k-1} alpha_{k-1}),
 *   beta_N  = 1,  beta_k  = K (a_{k+1} beta_{k+1}),
 * all stored as logs. The marginal at k is a_k alpha_k beta_k.
 */
struct SolverState {
  std::vector<Field> log_scaling;
  std::vector<Field> log_forward;
  std::vector<Field> log_backward;
  bool forward_valid = false;
  bool backward_valid = false;

  SolverState() = default;
  SolverState(const GridSpec& grid, int steps)
      : log_scaling(static_cast<std::size_t>(steps) + 1, Field(grid, 0.0)),
        log_forward(static_cast<std::size_t>(steps) + 1, Field(grid, 0.0)),
        log_backward(static_cast<std::size_t>(steps) + 1, Field(grid, 0.0)) {}

  int steps() const { return static_cast<int>(log_scaling.size()) - 1; }
  const GridSpec& grid() const { return log_scaling.front().grid; }
  bool messages_valid() const { return forward_valid && backward_valid; }

  void set_log_scaling(int k, Field u) {
    log_scaling[k] = std::move(u);
    forward_valid = backward_valid = false;
  }
};

struct ConvergenceReport {
  bool converged = false;
  int sweeps = 0;
  int outer_iterations = 0;
  bool log_domain = false;
  /// (index, residual) for every constrained index at the final state.
  std::vector<std::pair<int, double>> marginal_residuals;
  double max_marginal_residual = 0.0;
  double last_potential_change = 0.0;
  std::vector<double> dual_trace;
  std::vector<int> inner_sweeps;
  std::vector<double> fixed_point_trace;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double duality_gap = 0.0;
};

namespace detail {

inline Field add(const Field& a, const Field& b) {
  Field out(a.grid);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Field exp_field(const Field& f) {
  Field out(f.grid);
  for (std::size_t i = 0; i < f.size(); ++i) out[i] = std::exp(f[i]);
  return out;
}

inline void require_valid(const SolverState& s) {
  if (!s.messages_valid()) throw Error(ErrorKind::StaleMessages, "chain messages are stale; refresh before reading marginals");
}

}  // namespace detail

inline void refresh_forward(SolverState& s, const SeparableKernel& K, Stabilization mode = Stabilization::Auto) {
  const int N = s.steps();
  s.log_forward[0] = Field(s.grid(), 0.0);
  for (int k = 1; k <= N; ++k) {
    s.log_forward[k] = apply_kernel_log(K, detail::add(s.log_scaling[k - 1], s.log_forward[k - 1]), mode);
  }
  s.forward_valid = true;
}

inline void refresh_backward(SolverState& s, const SeparableKernel& K, Stabilization mode = Stabilization::Auto) {
  const int N = s.steps();
  s.log_backward[N] = Field(s.grid(), 0.0);
  for (int k = N - 1; k >= 0; --k) {
    s.log_backward[k] = apply_kernel_log(K, detail::add(s.log_scaling[k + 1], s.log_backward[k + 1]), mode);
  }
  s.backward_valid = true;
}

inline void refresh_messages(SolverState& s, const SeparableKernel& K, Stabilization mode = Stabilization::Auto) {
  refresh_forward(s, K, mode);
  refresh_backward(s, K, mode);
}

/**
 * One Gauss-Seidel pass k = 0..N over the dual blocks.
 *
 * Backward messages come from the previous pass (refreshed lazily if stale),
 * forward messages are rebuilt left to right from the freshly updated scalings.
 * The pass ends with a backward refresh so all messages are consistent.
 */
inline void sweep(SolverState& s, const CostSchedule& schedule, const SeparableKernel& K,
                  Stabilization mode = Stabilization::Auto) {
  const int N = s.steps();
  if (schedule.steps() != N) throw Error(ErrorKind::ValidationError, "schedule and state disagree on the number of steps");
  if (!s.backward_valid) refresh_backward(s, K, mode);
  s.log_forward[0] = Field(s.grid(), 0.0);
  for (int k = 0; k <= N; ++k) {
    if (k > 0) s.log_forward[k] = apply_kernel_log(K, detail::add(s.log_scaling[k - 1], s.log_forward[k - 1]), mode);
    const Field log_c = detail::add(s.log_forward[k], s.log_backward[k]);
    s.log_scaling[k] = prox_update_log(schedule[k], log_c, schedule.weight(k));
  }
  s.forward_valid = true;
  refresh_backward(s, K, mode);
}

inline Field log_marginal_at(const SolverState& s, int k) {
  detail::require_valid(s);
  Field out(s.grid());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = s.log_scaling[k][i] + s.log_forward[k][i] + s.log_backward[k][i];
  }
  return out;
}

inline Field marginal_at(const SolverState& s, int k) { return detail::exp_field(log_marginal_at(s, k)); }

/// Density of the (k, k+1) pair marginal as a row-major M x M array.
inline std::vector<double> pair_marginal_at(const SolverState& s, const SeparableKernel& K, int k) {
  detail::require_valid(s);
  const std::size_t M = s.grid().size();
  std::vector<double> out(M * M);
  for (std::size_t x = 0; x < M; ++x) {
    const double left = s.log_scaling[k][x] + s.log_forward[k][x];
    for (std::size_t y = 0; y < M; ++y) {
      const double right = s.log_scaling[k + 1][y] + s.log_backward[k + 1][y];
      out[x * M + y] = std::exp(left + K.dense_log_entry(x, y) + right);
    }
  }
  return out;
}

/// Total mass of the plan exp(+u) R^N, read off the last index.
inline double plan_mass(const SolverState& s) {
  detail::require_valid(s);
  const int N = s.steps();
  double acc = 0.0;
  for (std::size_t i = 0; i < s.grid().size(); ++i) acc += std::exp(s.log_scaling[N][i] + s.log_forward[N][i]);
  return acc * s.grid().cell_volume();
}

/// H(gamma | R^N) of the product-form plan: sum_k <u_k, mu_k>, skipping cells with mu_k = 0.
inline double plan_entropy(const SolverState& s) {
  detail::require_valid(s);
  const double vol = s.grid().cell_volume();
  double total = 0.0;
  for (int k = 0; k <= s.steps(); ++k) {
    const Field mu = marginal_at(s, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      if (mu[i] > 0.0) acc += s.log_scaling[k][i] * mu[i];
    }
    total += acc * vol;
  }
  return total;
}

inline double plan_entropy(const SolverState& s, const CostSchedule&) { return plan_entropy(s); }

/// Dual value  sum_k -(w_k F_k)^*(-u_k) - (int exp(+u) dR^N - 1).
inline double dual_objective(const SolverState& s, const CostSchedule& schedule) {
  detail::require_valid(s);
  double value = 0.0;
  for (int k = 0; k <= s.steps(); ++k) value += conjugate_term(schedule[k], s.log_scaling[k], schedule.weight(k));
  return value - (plan_mass(s) - 1.0);
}

/// Primal value  H(gamma|R^N) - mass + 1 + sum_k w_k F_k(mu_k), indicator parts excluded.
inline double primal_objective(const SolverState& s, const CostSchedule& schedule) {
  double value = plan_entropy(s) - plan_mass(s) + 1.0;
  for (int k = 0; k <= s.steps(); ++k) value += cost_value(schedule[k], marginal_at(s, k), schedule.weight(k));
  return value;
}

inline double relative_gap(double primal, double dual) {
  return std::abs(primal - dual) / std::max(1.0, std::abs(primal));
}

struct SolveResult {
  SolverState state;
  ConvergenceReport report;
  std::vector<Field> frames;
  /// Schedule actually used for the final inner solve (nonlocal entries linearized).
  CostSchedule effective_schedule;
};

/// Raised when a loop hits its iteration cap; carries everything computed so far.
class MaxIterationsError : public Error {
 public:
  MaxIterationsError(const std::string& what, SolveResult result)
      : Error(ErrorKind::MaxIterations, what), result_(std::move(result)) {}
  const SolveResult& result() const { return result_; }

 private:
  SolveResult result_;
};

namespace detail {

inline double sup_change(const std::vector<Field>& before, const std::vector<Field>& after) {
  double change = 0.0;
  for (std::size_t k = 0; k < before.size(); ++k) {
    for (std::size_t i = 0; i < before[k].size(); ++i) {
      const double a = before[k][i];
      const double b = after[k][i];
      if (a == b) continue;  // also covers matching -inf
      change = std::max(change, std::abs(a - b));
    }
  }
  return change;
}

inline void fill_residuals(const SolverState& s, const CostSchedule& schedule, ConvergenceReport& report) {
  report.marginal_residuals.clear();
  report.max_marginal_residual = 0.0;
  for (int k = 0; k <= s.steps(); ++k) {
    if (!is_constrained(schedule[k])) continue;
    const double r = constraint_residual(schedule[k], marginal_at(s, k));
    report.marginal_residuals.emplace_back(k, r);
    report.max_marginal_residual = std::max(report.max_marginal_residual, r);
  }
}

// Sweeps until the joint stopping rule holds; returns whether it did.
inline bool run_inner(SolverState& s, const CostSchedule& schedule, const SeparableKernel& K, const SolverConfig& cfg,
                      ConvergenceReport& report, int& budget) {
  int used = 0;
  bool done = false;
  while (budget > 0) {
    const std::vector<Field> before = s.log_scaling;
    sweep(s, schedule, K, cfg.stabilization);
    --budget;
    ++used;
    ++report.sweeps;
    report.last_potential_change = sup_change(before, s.log_scaling);
    report.dual_trace.push_back(dual_objective(s, schedule));
    fill_residuals(s, schedule, report);
    if (report.max_marginal_residual <= cfg.marginal_tolerance && report.last_potential_change <= cfg.marginal_tolerance) {
      done = true;
      break;
    }
  }
  report.inner_sweeps.push_back(used);
  return done;
}

}  // namespace detail

/**
 * Multi-marginal Sinkhorn solve of the schedule under the heat-kernel chain with viscosity eps.
 *
 * Nonlocal entries are handled by an outer loop that freezes the interaction
 * potential at the current marginals, solves, and repeats until the potential
 * stops moving. Throws MaxIterationsError (carrying the partial result) when
 * either loop runs out of iterations.
 */
inline SolveResult solve(const CostSchedule& schedule, double eps, const SolverConfig& config = {}) {
  config.validate();
  schedule.validate();
  const GridSpec& grid = schedule.grid();
  const int N = schedule.steps();
  const SeparableKernel K = build_heat_kernel(grid, schedule.time().dt(), eps, config.stabilization);

  SolveResult result;
  result.state = SolverState(grid, N);
  result.effective_schedule = schedule;
  ConvergenceReport& report = result.report;
  report.log_domain = config.stabilization == Stabilization::Log ||
                      (config.stabilization == Stabilization::Auto && K.needs_log_domain());

  int budget = config.max_sweeps;
  bool converged = false;

  if (!schedule.has_nonlocal()) {
    converged = detail::run_inner(result.state, schedule, K, config, report, budget);
  } else {
    CostSchedule& eff = result.effective_schedule;
    std::vector<Field> f2(static_cast<std::size_t>(N) + 1);
    auto install = [&](int k, const Nonlocal& nl, const Field& potential) {
      if (nl.cap) eff.at(k) = CongestionPlusPotential{*nl.cap, potential};
      else eff.at(k) = Potential{potential};
    };
    // First linearization: every marginal frozen at the initial density.
    const Field& rho0 = schedule.initial_density();
    for (int k = 0; k <= N; ++k) {
      if (const auto* nl = std::get_if<Nonlocal>(&schedule[k])) {
        f2[k] = *potential_of(linearize_nonlocal(*nl, rho0));
        install(k, *nl, f2[k]);
      }
    }
    bool inner_ok = false;
    for (int outer = 0; outer < config.outer_max_iters; ++outer) {
      ++report.outer_iterations;
      inner_ok = detail::run_inner(result.state, eff, K, config, report, budget);
      if (!inner_ok) break;
      double residual = 0.0;
      std::vector<Field> next(f2.size());
      for (int k = 0; k <= N; ++k) {
        const auto* nl = std::get_if<Nonlocal>(&schedule[k]);
        if (!nl) continue;
        next[k] = *potential_of(linearize_nonlocal(*nl, normalize_to_probability(marginal_at(result.state, k))));
        for (std::size_t i = 0; i < next[k].size(); ++i) residual = std::max(residual, std::abs(next[k][i] - f2[k][i]));
      }
      report.fixed_point_trace.push_back(residual);
      if (residual < config.fixed_point_tolerance) {
        converged = true;
        break;
      }
      for (int k = 0; k <= N; ++k) {
        const auto* nl = std::get_if<Nonlocal>(&schedule[k]);
        if (!nl) continue;
        for (std::size_t i = 0; i < f2[k].size(); ++i) f2[k][i] += config.damping * (next[k][i] - f2[k][i]);
        install(k, *nl, f2[k]);
      }
    }
  }

  const CostSchedule& used = result.effective_schedule;
  report.converged = converged;
  if (result.state.messages_valid()) {
    report.dual_objective = dual_objective(result.state, used);
    report.primal_objective = primal_objective(result.state, used);
    report.duality_gap = relative_gap(report.primal_objective, report.dual_objective);
    for (int k = 0; k <= N; ++k) result.frames.push_back(marginal_at(result.state, k));
  }
  if (!converged) {
    throw MaxIterationsError("solver stopped after " + std::to_string(report.sweeps) + " sweeps and " +
                                 std::to_string(report.outer_iterations) + " outer iterations without converging",
                             std::move(result));
  }
  return result;
}

}  // namespace mfgsink
