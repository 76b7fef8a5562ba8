#pragma once

// Brute-force references for tiny instances. Nothing here touches the kernel or
// Sinkhorn modules: the heat matrix is assembled directly in d dimensions and
// every integral is an explicit sum over the full coupling tensor.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mfgsink/error.hpp"
#include "mfgsink/functionals.hpp"
#include "mfgsink/grid.hpp"

namespace mfgsink::oracle {

inline constexpr std::size_t kMaxCells = 16;
inline constexpr int kMaxSteps = 3;

/// M x M heat matrix P(x, y) of the given variance, columns normalized to unit mass.
inline std::vector<double> dense_heat_matrix(const GridSpec& grid, double variance) {
  if (grid.boundary() != Boundary::Periodic) throw Error(ErrorKind::ValidationError, "oracle supports periodic grids only");
  const std::size_t M = grid.size();
  const double h = grid.cell_width();
  const double L = grid.side_length();
  const long window = static_cast<long>(std::ceil(std::sqrt(2.0 * variance * 45.0) / L)) + 2;
  std::vector<double> P(M * M);
  for (std::size_t x = 0; x < M; ++x) {
    const auto xi = grid.unravel(x);
    for (std::size_t y = 0; y < M; ++y) {
      const auto yi = grid.unravel(y);
      double p = 1.0;
      for (int j = 0; j < grid.dims(); ++j) {
        const double delta = (xi[j] - yi[j]) * h;
        double g = 0.0;
        for (long w = -window; w <= window; ++w) {
          const double z = delta + static_cast<double>(w) * L;
          g += std::exp(-z * z / (2.0 * variance));
        }
        p *= g;
      }
      P[x * M + y] = p;
    }
  }
  const double vol = grid.cell_volume();
  for (std::size_t y = 0; y < M; ++y) {
    double col = 0.0;
    for (std::size_t x = 0; x < M; ++x) col += P[x * M + y];
    for (std::size_t x = 0; x < M; ++x) P[x * M + y] /= col * vol;
  }
  return P;
}

/// Full coupling over (M cells)^(N+1), stored as densities w.r.t. the product of cell measures.
struct DensePlan {
  GridSpec grid;
  int steps = 0;
  std::vector<double> plan;
  std::vector<double> reference;
  std::vector<Field> scalings;
  int sweeps = 0;

  std::size_t cells() const { return grid.size(); }

  int coordinate(std::size_t t, int k) const {
    std::size_t div = 1;
    for (int i = k + 1; i <= steps; ++i) div *= cells();
    return static_cast<int>((t / div) % cells());
  }

  Field marginal(int k) const {
    Field out(grid, 0.0);
    for (std::size_t t = 0; t < plan.size(); ++t) out[coordinate(t, k)] += plan[t];
    const double w = std::pow(grid.cell_volume(), steps);
    for (double& v : out.values) v *= w;
    return out;
  }

  /// Density of the (k, l) pair marginal, row-major M x M.
  std::vector<double> pair_marginal(int k, int l) const {
    const std::size_t M = cells();
    std::vector<double> out(M * M, 0.0);
    for (std::size_t t = 0; t < plan.size(); ++t) out[coordinate(t, k) * M + coordinate(t, l)] += plan[t];
    const double w = std::pow(grid.cell_volume(), steps - 1);
    for (double& v : out) v *= w;
    return out;
  }

  double mass() const {
    double acc = 0.0;
    for (double v : plan) acc += v;
    return acc * std::pow(grid.cell_volume(), steps + 1);
  }

  /// H(gamma | R^N) by direct summation.
  double relative_entropy() const {
    double acc = 0.0;
    for (std::size_t t = 0; t < plan.size(); ++t) {
      if (plan[t] > 0.0) acc += plan[t] * std::log(plan[t] / reference[t]);
    }
    return acc * std::pow(grid.cell_volume(), steps + 1);
  }
};

/**
 * Gauss-Seidel scaling on the explicit tensor: for each k, sum the plan over all
 * other coordinates to get c_k, then apply the same closed-form update as the
 * factorized solver. Stops when constrained residuals and the sup-change of
 * log scalings are both <= tol.
 */
inline DensePlan dense_solve(const CostSchedule& schedule, double eps, double tol = 1e-13, int max_sweeps = 200000) {
  const GridSpec& grid = schedule.grid();
  const int N = schedule.steps();
  if (grid.size() > kMaxCells || N > kMaxSteps) {
    throw Error(ErrorKind::SizeExceeded, "dense oracle limited to " + std::to_string(kMaxCells) + " cells and " +
                                             std::to_string(kMaxSteps) + " steps");
  }
  const std::size_t M = grid.size();
  const std::vector<double> P = dense_heat_matrix(grid, eps * schedule.time().dt());

  DensePlan out;
  out.grid = grid;
  out.steps = N;
  std::size_t total = 1;
  for (int k = 0; k <= N; ++k) total *= M;
  out.reference.assign(total, 1.0);
  for (std::size_t t = 0; t < total; ++t) {
    double r = 1.0;
    for (int k = 1; k <= N; ++k) r *= P[static_cast<std::size_t>(out.coordinate(t, k)) * M + out.coordinate(t, k - 1)];
    out.reference[t] = r;
  }
  out.scalings.assign(static_cast<std::size_t>(N) + 1, Field(grid, 1.0));

  const double w_other = std::pow(grid.cell_volume(), N);
  auto message = [&](int k) {
    Field c(grid, 0.0);
    for (std::size_t t = 0; t < total; ++t) {
      double v = out.reference[t];
      for (int i = 0; i <= N; ++i) {
        if (i != k) v *= out.scalings[i][out.coordinate(t, i)];
      }
      c[out.coordinate(t, k)] += v;
    }
    for (double& v : c.values) v *= w_other;
    return c;
  };

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double change = 0.0;
    for (int k = 0; k <= N; ++k) {
      const Field c = message(k);
      const Field a = prox_update(schedule[k], c, schedule.weight(k));
      for (std::size_t i = 0; i < M; ++i) {
        const double before = out.scalings[k][i];
        if (before == a[i]) continue;
        change = std::max(change, (before > 0.0 && a[i] > 0.0) ? std::abs(std::log(a[i]) - std::log(before))
                                                              : std::numeric_limits<double>::infinity());
      }
      out.scalings[k] = a;
    }
    out.sweeps = sweep + 1;
    double residual = 0.0;
    for (int k = 0; k <= N; ++k) {
      if (!is_constrained(schedule[k])) continue;
      residual = std::max(residual, constraint_residual(schedule[k], hadamard(out.scalings[k], message(k))));
    }
    if (residual <= tol && change <= tol) break;
  }

  out.plan.resize(total);
  for (std::size_t t = 0; t < total; ++t) {
    double v = out.reference[t];
    for (int k = 0; k <= N; ++k) v *= out.scalings[k][out.coordinate(t, k)];
    out.plan[t] = v;
  }
  return out;
}

/// Two-marginal entropic bridge between mu and nu over a time step h.
inline DensePlan dense_bridge(const Field& mu, const Field& nu, double eps, double h, double tol = 1e-13) {
  const CostSchedule schedule(mu.grid, TimeAxis(h, 1), {FixedMarginal{mu}, FixedMarginal{nu}});
  return dense_solve(schedule, eps, tol);
}

inline double dense_entropy(const Field& f) {
  double acc = 0.0;
  for (double v : f.values) {
    if (v > 0.0) acc += v * std::log(v);
  }
  return acc * f.grid.cell_volume();
}

/// sum_k S_dt(mu_k, mu_{k+1}) - sum_{k=1}^{N-1} Ent(mu_k), each S from an independent bridge.
inline double pairwise_bridge_objective(const std::vector<Field>& marginals, double eps, double dt, double tol = 1e-13) {
  if (marginals.size() < 2) throw Error(ErrorKind::ValidationError, "need at least two marginals");
  if (marginals.front().grid.size() > kMaxCells) throw Error(ErrorKind::SizeExceeded, "dense oracle limited to 16 cells");
  double value = 0.0;
  for (std::size_t k = 0; k + 1 < marginals.size(); ++k) {
    value += dense_bridge(marginals[k], marginals[k + 1], eps, dt, tol).relative_entropy();
  }
  for (std::size_t k = 1; k + 1 < marginals.size(); ++k) value -= dense_entropy(marginals[k]);
  return value;
}

}  // namespace mfgsink::oracle
