#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "mfgsink/error.hpp"
#include "mfgsink/grid.hpp"

namespace mfgsink {

/// No cost on this marginal.
struct Free {};

/// Marginal pinned to a probability density.
struct FixedMarginal {
  Field target;
};

/// Hard cap: density <= cap everywhere.
struct Congestion {
  double cap = 1.0;
};

/// Linear cost  w * sum V rho;  V may contain kObstacle cells.
struct Potential {
  Field potential;
};

struct CongestionPlusPotential {
  double cap = 1.0;
  Field potential;
};

/// Interaction  -1/2 sum sum K(x - y) rho(y) rho(x); `kernel` is indexed by displacement.
struct Nonlocal {
  Field kernel;
  bool symmetric = false;
  std::optional<double> cap;
};

using CostSpec = std::variant<Free, FixedMarginal, Congestion, Potential, CongestionPlusPotential, Nonlocal>;

inline std::string cost_name(const CostSpec& c) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Free>) return "free";
        else if constexpr (std::is_same_v<T, FixedMarginal>) return "fixed_marginal";
        else if constexpr (std::is_same_v<T, Congestion>) return "congestion";
        else if constexpr (std::is_same_v<T, Potential>) return "potential";
        else if constexpr (std::is_same_v<T, CongestionPlusPotential>) return "congestion_plus_potential";
        else return "nonlocal";
      },
      c);
}

inline std::optional<double> congestion_cap(const CostSpec& c) {
  if (const auto* s = std::get_if<Congestion>(&c)) return s->cap;
  if (const auto* s = std::get_if<CongestionPlusPotential>(&c)) return s->cap;
  if (const auto* s = std::get_if<Nonlocal>(&c)) return s->cap;
  return std::nullopt;
}

inline const Field* potential_of(const CostSpec& c) {
  if (const auto* s = std::get_if<Potential>(&c)) return &s->potential;
  if (const auto* s = std::get_if<CongestionPlusPotential>(&c)) return &s->potential;
  return nullptr;
}

/**
 * Cost descriptor per marginal index k = 0..N.
 *
 * Index 0 always pins the initial density. Interior running costs carry the
 * weight T/N, the terminal cost (and the initial constraint) weight 1.
 */
class CostSchedule {
 public:
  CostSchedule() = default;

  CostSchedule(const GridSpec& grid, const TimeAxis& time, std::vector<CostSpec> costs)
      : grid_(grid), time_(time), costs_(std::move(costs)) {
    validate();
  }

  const GridSpec& grid() const { return grid_; }
  const TimeAxis& time() const { return time_; }
  int steps() const { return time_.steps(); }
  std::size_t size() const { return costs_.size(); }
  const CostSpec& operator[](std::size_t k) const { return costs_[k]; }
  CostSpec& at(std::size_t k) { return costs_[k]; }
  const std::vector<CostSpec>& costs() const { return costs_; }

  double weight(int k) const { return (k == 0 || k == steps()) ? 1.0 : time_.dt(); }

  bool has_nonlocal() const {
    return std::any_of(costs_.begin(), costs_.end(), [](const CostSpec& c) { return std::holds_alternative<Nonlocal>(c); });
  }

  const Field& initial_density() const { return std::get<FixedMarginal>(costs_[0]).target; }

  void validate() const {
    if (costs_.size() != static_cast<std::size_t>(time_.steps()) + 1) {
      throw Error(ErrorKind::ValidationError, "schedule needs N+1 = " + std::to_string(time_.steps() + 1) +
                                                  " cost entries, got " + std::to_string(costs_.size()));
    }
    if (!std::holds_alternative<FixedMarginal>(costs_[0])) {
      throw Error(ErrorKind::ValidationError, "index 0 must be a fixed marginal");
    }
    for (std::size_t k = 0; k < costs_.size(); ++k) {
      const std::string where = "cost at index " + std::to_string(k);
      if (const auto* fm = std::get_if<FixedMarginal>(&costs_[k])) {
        require_same_grid(grid_, fm->target.grid, where.c_str());
        if (!is_probability(fm->target, 1e-10)) {
          throw Error(ErrorKind::ValidationError, where + ": fixed marginal target is not a probability density");
        }
      }
      if (const auto cap = congestion_cap(costs_[k])) {
        if (!(*cap > 0.0) || *cap * grid_.domain_volume() < 1.0 - 1e-12) {
          throw Error(ErrorKind::ValidationError, where + ": congestion cap times domain volume must be >= 1");
        }
      }
      if (const Field* V = potential_of(costs_[k])) require_same_grid(grid_, V->grid, where.c_str());
      if (const auto* nl = std::get_if<Nonlocal>(&costs_[k])) {
        require_same_grid(grid_, nl->kernel.grid, where.c_str());
        if (grid_.boundary() != Boundary::Periodic) {
          throw Error(ErrorKind::ValidationError, where + ": nonlocal interactions need a periodic grid");
        }
      }
    }
  }

 private:
  GridSpec grid_;
  TimeAxis time_;
  std::vector<CostSpec> costs_;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] inline void throw_infeasible(std::size_t cell) {
  throw Error(ErrorKind::Infeasible,
              "fixed marginal has mass at cell " + std::to_string(cell) + " which the reference chain cannot reach");
}

[[noreturn]] inline void throw_nonlocal_direct() {
  throw Error(ErrorKind::NonConvexDirect, "nonlocal costs must be linearized before the scaling update");
}

}  // namespace detail

/**
 * Scaling a = exp(u) maximizing  -(wF)^*(-u) - sum c e^u  cell by cell.
 *
 * `c` is the product of forward and backward chain messages at this index, so
 * that a * c is the resulting marginal. `weight` is T/N for interior indices
 * and 1 at the endpoints.
 */
inline Field prox_update(const CostSpec& cost, const Field& c, double weight) {
  Field a(c.grid, 1.0);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Free>) {
        } else if constexpr (std::is_same_v<T, FixedMarginal>) {
          require_same_grid(c.grid, s.target.grid, "prox_update");
          for (std::size_t i = 0; i < c.size(); ++i) {
            if (s.target[i] > 0.0) {
              if (!(c[i] > 0.0)) detail::throw_infeasible(i);
              a[i] = s.target[i] / c[i];
            } else {
              a[i] = 0.0;
            }
          }
        } else if constexpr (std::is_same_v<T, Congestion>) {
          for (std::size_t i = 0; i < c.size(); ++i) a[i] = c[i] > 0.0 ? std::min(1.0, s.cap / c[i]) : 1.0;
        } else if constexpr (std::is_same_v<T, Potential>) {
          require_same_grid(c.grid, s.potential.grid, "prox_update");
          for (std::size_t i = 0; i < c.size(); ++i) a[i] = is_obstacle(s.potential[i]) ? 0.0 : std::exp(-weight * s.potential[i]);
        } else if constexpr (std::is_same_v<T, CongestionPlusPotential>) {
          require_same_grid(c.grid, s.potential.grid, "prox_update");
          for (std::size_t i = 0; i < c.size(); ++i) {
            const double pot = is_obstacle(s.potential[i]) ? 0.0 : std::exp(-weight * s.potential[i]);
            a[i] = c[i] > 0.0 ? std::min(pot, s.cap / c[i]) : pot;
          }
        } else {
          detail::throw_nonlocal_direct();
        }
      },
      cost);
  return a;
}

/// Same update on log quantities: returns u = log a given log c (-inf marks zeros).
inline Field prox_update_log(const CostSpec& cost, const Field& log_c, double weight) {
  constexpr double kNegInf = -detail::kInf;
  Field u(log_c.grid, 0.0);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Free>) {
        } else if constexpr (std::is_same_v<T, FixedMarginal>) {
          for (std::size_t i = 0; i < log_c.size(); ++i) {
            if (s.target[i] > 0.0) {
              if (log_c[i] == kNegInf) detail::throw_infeasible(i);
              u[i] = std::log(s.target[i]) - log_c[i];
            } else {
              u[i] = kNegInf;
            }
          }
        } else if constexpr (std::is_same_v<T, Congestion>) {
          const double log_cap = std::log(s.cap);
          for (std::size_t i = 0; i < log_c.size(); ++i) u[i] = std::min(0.0, log_cap - log_c[i]);
        } else if constexpr (std::is_same_v<T, Potential>) {
          for (std::size_t i = 0; i < log_c.size(); ++i) u[i] = is_obstacle(s.potential[i]) ? kNegInf : -weight * s.potential[i];
        } else if constexpr (std::is_same_v<T, CongestionPlusPotential>) {
          const double log_cap = std::log(s.cap);
          for (std::size_t i = 0; i < log_c.size(); ++i) {
            const double pot = is_obstacle(s.potential[i]) ? kNegInf : -weight * s.potential[i];
            u[i] = std::min(pot, log_cap - log_c[i]);
          }
        } else {
          detail::throw_nonlocal_direct();
        }
      },
      cost);
  return u;
}

/**
 * Dual contribution -(wF)^*(-u) summed over cells, with u = log of the scaling.
 *
 * Free and Potential costs are only finite on u >= -wV; outside that set the
 * value is -inf.
 */
inline double conjugate_term(const CostSpec& cost, const Field& u, double weight) {
  const double vol = u.grid.cell_volume();
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        double acc = 0.0;
        if constexpr (std::is_same_v<T, Free>) {
          for (double v : u.values) {
            if (v < 0.0) return -detail::kInf;
          }
          return 0.0;
        } else if constexpr (std::is_same_v<T, FixedMarginal>) {
          for (std::size_t i = 0; i < u.size(); ++i) {
            if (s.target[i] > 0.0) acc += u[i] * s.target[i];
          }
          return acc * vol;
        } else if constexpr (std::is_same_v<T, Congestion>) {
          for (double v : u.values) acc += std::max(-v, 0.0);
          return -s.cap * acc * vol;
        } else if constexpr (std::is_same_v<T, Potential>) {
          for (std::size_t i = 0; i < u.size(); ++i) {
            if (is_obstacle(s.potential[i])) continue;
            const double floor = -weight * s.potential[i];
            if (u[i] < floor - 1e-12 * std::max(1.0, std::abs(floor))) return -detail::kInf;
          }
          return 0.0;
        } else if constexpr (std::is_same_v<T, CongestionPlusPotential>) {
          for (std::size_t i = 0; i < u.size(); ++i) {
            if (is_obstacle(s.potential[i])) continue;
            acc += std::max(-u[i] - weight * s.potential[i], 0.0);
          }
          return -s.cap * acc * vol;
        } else {
          detail::throw_nonlocal_direct();
        }
      },
      cost);
}

/// Primal cost w * F(mu); indicator parts are reported through constraint_residual instead.
inline double cost_value(const CostSpec& cost, const Field& mu, double weight) {
  const Field* V = potential_of(cost);
  if (!V) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu[i] > 0.0 && !is_obstacle((*V)[i])) acc += (*V)[i] * mu[i];
  }
  return weight * acc * mu.grid.cell_volume();
}

inline bool is_constrained(const CostSpec& cost) {
  return std::holds_alternative<FixedMarginal>(cost) || congestion_cap(cost).has_value();
}

/// L1 distance to a fixed target, or the largest density excess over a congestion cap.
inline double constraint_residual(const CostSpec& cost, const Field& mu) {
  if (const auto* fm = std::get_if<FixedMarginal>(&cost)) {
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) acc += std::abs(mu[i] - fm->target[i]);
    return acc * mu.grid.cell_volume();
  }
  if (const auto cap = congestion_cap(cost)) {
    double excess = 0.0;
    for (double v : mu.values) excess = std::max(excess, v - *cap);
    return excess;
  }
  return 0.0;
}

/// Periodic convolution out(x) = sum_y K(x - y) rho(y) * cell_volume, K indexed by displacement.
inline Field periodic_convolve(const Field& kernel, const Field& rho) {
  require_same_grid(kernel.grid, rho.grid, "periodic_convolve");
  const GridSpec& g = rho.grid;
  const int m = g.points_per_dim();
  const int d = g.dims();
  const std::size_t rows = g.size() / static_cast<std::size_t>(m);
  Field out(g, 0.0);
  for (std::size_t z = 0; z < g.size(); ++z) {
    const double kz = kernel[z];
    if (kz == 0.0) continue;
    const auto zi = g.unravel(z);
    const int zl = zi[d - 1];
    for (std::size_t r = 0; r < rows; ++r) {
      // Leading indices of x (all but the last dimension) and the matching y row.
      const auto xi = g.unravel(r * static_cast<std::size_t>(m));
      std::array<int, GridSpec::kMaxDims> yi{};
      for (int j = 0; j < d - 1; ++j) yi[j] = g.wrap(static_cast<long>(xi[j]) - zi[j]);
      const std::size_t yrow = g.ravel(yi);
      double* o = out.values.data() + r * static_cast<std::size_t>(m);
      const double* src = rho.values.data() + yrow;
      for (int x = 0; x < zl; ++x) o[x] += kz * src[x - zl + m];
      for (int x = zl; x < m; ++x) o[x] += kz * src[x - zl];
    }
  }
  const double vol = g.cell_volume();
  for (double& v : out.values) v *= vol;
  return out;
}

/// Freezes the interaction at rho: potential f2 = -K * rho, plus the optional cap.
inline CostSpec linearize_nonlocal(const Nonlocal& spec, const Field& rho) {
  Field f2 = periodic_convolve(spec.kernel, rho);
  for (double& v : f2.values) v = -v;
  if (spec.cap) return CongestionPlusPotential{*spec.cap, std::move(f2)};
  return Potential{std::move(f2)};
}

}  // namespace mfgsink
