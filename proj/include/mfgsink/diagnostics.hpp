#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mfgsink/functionals.hpp"
#include "mfgsink/grid.hpp"
#include "mfgsink/sinkhorn.hpp"

namespace mfgsink {

/// Ent(f) = sum f log f * cell_volume, with 0 log 0 = 0.
inline double entropy(const Field& f) {
  double acc = 0.0;
  for (double v : f.values) {
    if (v > 0.0) acc += v * std::log(v);
  }
  return acc * f.grid.cell_volume();
}

struct FisherInformation {
  double value = 0.0;
  /// Set when the density vanishes somewhere, so the value is taken over its support only.
  bool degenerate_support = false;
};

/**
 * Discrete Fisher information 4 sum |grad sqrt f|^2 * cell_volume.
 *
 * Centered differences with periodic wrap; on a truncated box the two boundary
 * cells of each line use one-sided differences.
 */
inline FisherInformation fisher_information(const Field& f) {
  const GridSpec& g = f.grid;
  const int m = g.points_per_dim();
  const double h = g.cell_width();
  std::vector<double> root(f.size());
  FisherInformation out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!(f[i] > 0.0)) out.degenerate_support = true;
    root[i] = std::sqrt(std::max(f[i], 0.0));
  }
  if (m < 2) return out;
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto idx = g.unravel(i);
    for (int dim = 0; dim < g.dims(); ++dim) {
      auto lo = idx, hi = idx;
      double span = 2.0 * h;
      if (g.boundary() == Boundary::Periodic) {
        lo[dim] = g.wrap(idx[dim] - 1L);
        hi[dim] = g.wrap(idx[dim] + 1L);
      } else {
        lo[dim] = std::max(idx[dim] - 1, 0);
        hi[dim] = std::min(idx[dim] + 1, m - 1);
        span = (hi[dim] - lo[dim]) * h;
      }
      const double grad = (root[g.ravel(hi)] - root[g.ravel(lo)]) / span;
      acc += grad * grad;
    }
  }
  out.value = 4.0 * acc * g.cell_volume();
  return out;
}

/// Discrete kinetic energy E^N = H(gamma | R^N) - Ent(mu_0).
inline double kinetic_energy_estimate(const SolverState& s) { return plan_entropy(s) - entropy(marginal_at(s, 0)); }

inline double kinetic_energy_estimate(const SolverState& s, const CostSchedule&) { return kinetic_energy_estimate(s); }

struct RunMetrics {
  std::vector<double> entropy;
  std::vector<double> fisher_information;
  std::vector<bool> fisher_degenerate;
  double plan_entropy = 0.0;
  double kinetic_energy = 0.0;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double duality_gap = 0.0;
  /// max over k of (max density - cap), 0 when no cap applies.
  double congestion_violation = 0.0;
  /// max over k of the mass sitting on obstacle cells.
  double obstacle_mass = 0.0;
};

inline RunMetrics compute_metrics(const SolverState& s, const CostSchedule& schedule) {
  RunMetrics m;
  const double vol = s.grid().cell_volume();
  for (int k = 0; k <= s.steps(); ++k) {
    const Field mu = marginal_at(s, k);
    m.entropy.push_back(entropy(mu));
    const auto fi = fisher_information(mu);
    m.fisher_information.push_back(fi.value);
    m.fisher_degenerate.push_back(fi.degenerate_support);
    if (const auto cap = congestion_cap(schedule[k])) {
      for (double v : mu.values) m.congestion_violation = std::max(m.congestion_violation, v - *cap);
    }
    if (const Field* V = potential_of(schedule[k])) {
      double mass = 0.0;
      for (std::size_t i = 0; i < mu.size(); ++i) {
        if (is_obstacle((*V)[i])) mass += mu[i];
      }
      m.obstacle_mass = std::max(m.obstacle_mass, mass * vol);
    }
  }
  m.plan_entropy = plan_entropy(s);
  m.kinetic_energy = m.plan_entropy - m.entropy.front();
  m.primal_objective = primal_objective(s, schedule);
  m.dual_objective = dual_objective(s, schedule);
  m.duality_gap = relative_gap(m.primal_objective, m.dual_objective);
  return m;
}

}  // namespace mfgsink
