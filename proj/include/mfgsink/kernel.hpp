#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mfgsink/error.hpp"
#include "mfgsink/grid.hpp"

namespace mfgsink {

/// How kernel products are evaluated: plain exponentials, log-sum-exp, or chosen from the kernel.
enum class Stabilization { Linear, Log, Auto };

inline std::string to_string(Stabilization s) {
  switch (s) {
    case Stabilization::Linear: return "linear";
    case Stabilization::Log: return "log";
    case Stabilization::Auto: return "auto";
  }
  return "auto";
}

/// Auto mode switches to log-sum-exp when the smallest kernel entry drops below this.
inline constexpr double kLogDomainThreshold = 1e-300;

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Terms further than this below the running maximum are below double resolution
// of the sum and are skipped in the log-sum-exp path.
inline constexpr double kLogPruneGap = 60.0;

// Shifted products drop kernel entries and inputs below kPruneFloor, so every
// product is a normal double; outputs below kRecomputeBelow are redone in log space.
inline constexpr double kPruneFloor = 1e-150;
inline constexpr double kRecomputeBelow = 1e-120;

struct KernelMatrix {
  int m = 0;
  std::vector<double> linear;  // row-major m x m
  std::vector<double> log;     // row-major m x m
  std::vector<double> pruned;  // linear with entries below kPruneFloor zeroed

  void finish() {
    pruned = linear;
    for (double& v : pruned) {
      if (v < kPruneFloor) v = 0.0;
    }
  }

  double lin(int i, int j) const { return linear[static_cast<std::size_t>(i) * m + j]; }
  double lg(int i, int j) const { return log[static_cast<std::size_t>(i) * m + j]; }
};

inline double log_sum_exp(std::span<const double> t) {
  double mx = kNegInf;
  for (double v : t) mx = std::max(mx, v);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : t) s += std::exp(v - mx);
  return mx + std::log(s);
}

// Periodic 1-D kernel: image sum over the torus, circulant and exactly symmetric.
inline KernelMatrix periodic_kernel(int m, double side, double variance) {
  const double h = side / m;
  std::vector<double> log_g(m);
  for (int k = 0; k < m; ++k) {
    const double dist = std::min(k, m - k) * h;
    auto exponent = [&](long w) {
      const double z = dist + static_cast<double>(w) * side;
      return -(z * z) / (2.0 * variance);
    };
    const double t0 = exponent(0);
    double sum = 1.0;
    for (long n = 1; n < 100000000L; ++n) {
      const double a = std::exp(exponent(n) - t0);
      const double b = std::exp(exponent(-n) - t0);
      sum += a + b;
      if (std::max(a, b) < 1e-18 * sum) break;
    }
    log_g[k] = t0 + std::log(sum);
  }
  const double log_norm = log_sum_exp(log_g) + std::log(h);

  KernelMatrix K;
  K.m = m;
  K.linear.resize(static_cast<std::size_t>(m) * m);
  K.log.resize(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const int k = ((i - j) % m + m) % m;
      const double lp = log_g[k] - log_norm;
      K.log[static_cast<std::size_t>(i) * m + j] = lp;
      K.linear[static_cast<std::size_t>(i) * m + j] = std::exp(lp);
    }
  }
  K.finish();
  return K;
}

// Truncated 1-D kernel: Gaussian restricted to the box, then balanced symmetrically
// (p_ij = d_i g_ij d_j) so that rows and columns both carry unit mass.
inline KernelMatrix truncated_kernel(int m, double side, double variance) {
  const double h = side / m;
  const double log_h = std::log(h);
  std::vector<double> log_g(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const double z = (i - j) * h;
      log_g[static_cast<std::size_t>(i) * m + j] = -(z * z) / (2.0 * variance);
    }
  }
  std::vector<double> log_d(m, 0.0);
  std::vector<double> row(m);
  for (int iter = 0; iter < 100000; ++iter) {
    double change = 0.0;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) row[j] = log_g[static_cast<std::size_t>(i) * m + j] + log_d[j];
      const double updated = 0.5 * (log_d[i] - (log_sum_exp(row) + log_h));
      change = std::max(change, std::abs(updated - log_d[i]));
      log_d[i] = updated;
    }
    if (change < 1e-15) break;
  }

  KernelMatrix K;
  K.m = m;
  K.linear.resize(static_cast<std::size_t>(m) * m);
  K.log.resize(static_cast<std::size_t>(m) * m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const std::size_t ij = static_cast<std::size_t>(i) * m + j;
      const double lp = (log_d[i] + log_d[j]) + log_g[ij];
      K.log[ij] = lp;
      K.linear[ij] = std::exp(lp);
    }
  }
  K.finish();
  return K;
}

}  // namespace detail

/**
 * Discrete heat kernel P_{eps * tau} on a grid, stored as one m x m matrix per dimension.
 *
 * Entries are densities: applying the kernel to f gives
 *   (K f)(x) = sum_y P(x, y) f(y) * cell_volume,
 * and every column carries unit mass, so integrate(K f) == integrate(f).
 */
class SeparableKernel {
 public:
  const GridSpec& grid() const { return grid_; }
  double time_step() const { return tau_; }
  double viscosity() const { return eps_; }
  double variance() const { return eps_ * tau_; }
  Boundary boundary() const { return grid_.boundary(); }

  /// Smallest linear-domain entry (0 when some entry underflows).
  double min_entry() const { return min_entry_; }
  bool needs_log_domain() const { return min_entry_ < kLogDomainThreshold; }

  double entry(int dim, int i, int j) const { return per_dim_[dim].lin(i, j); }
  double log_entry(int dim, int i, int j) const { return per_dim_[dim].lg(i, j); }

  /// Full d-dimensional kernel value P(x, y) for flat cell indices.
  double dense_entry(std::size_t x, std::size_t y) const {
    const auto xi = grid_.unravel(x);
    const auto yi = grid_.unravel(y);
    double p = 1.0;
    for (int j = 0; j < grid_.dims(); ++j) p *= per_dim_[j].lin(xi[j], yi[j]);
    return p;
  }

  double dense_log_entry(std::size_t x, std::size_t y) const {
    const auto xi = grid_.unravel(x);
    const auto yi = grid_.unravel(y);
    double lp = 0.0;
    for (int j = 0; j < grid_.dims(); ++j) lp += per_dim_[j].lg(xi[j], yi[j]);
    return lp;
  }

  const detail::KernelMatrix& matrix(int dim) const { return per_dim_[dim]; }

  friend SeparableKernel build_heat_kernel(const GridSpec&, double, double, Stabilization);

 private:
  GridSpec grid_;
  double tau_ = 0.0;
  double eps_ = 0.0;
  double min_entry_ = 0.0;
  std::vector<detail::KernelMatrix> per_dim_;
};

/// Heat kernel of variance eps * tau (Brownian motion with variance eps over a step tau).
inline SeparableKernel build_heat_kernel(const GridSpec& grid, double tau, double eps,
                                         Stabilization mode = Stabilization::Auto) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error(ErrorKind::ValidationError, "kernel time step must be positive");
  if (!(eps > 0.0) || !std::isfinite(eps)) throw Error(ErrorKind::ValidationError, "viscosity must be positive");

  const int m = grid.points_per_dim();
  const double variance = eps * tau;
  detail::KernelMatrix base = grid.boundary() == Boundary::Periodic
                                  ? detail::periodic_kernel(m, grid.side_length(), variance)
                                  : detail::truncated_kernel(m, grid.side_length(), variance);

  SeparableKernel K;
  K.grid_ = grid;
  K.tau_ = tau;
  K.eps_ = eps;
  K.min_entry_ = *std::min_element(base.linear.begin(), base.linear.end());

  if (mode == Stabilization::Linear && m > 1) {
    bool any_off_diagonal = false;
    for (int i = 0; i < m && !any_off_diagonal; ++i) {
      for (int j = 0; j < m; ++j) {
        if (i != j && base.lin(i, j) > 0.0) {
          any_off_diagonal = true;
          break;
        }
      }
    }
    if (!any_off_diagonal) {
      throw Error(ErrorKind::DegenerateKernel, "all off-diagonal kernel entries underflow for eps*tau = " +
                                                   std::to_string(variance) + "; use log-domain application");
    }
  }
  K.per_dim_.assign(static_cast<std::size_t>(grid.dims()), base);
  return K;
}

namespace detail {

// Visits every 1-D line along `dim`: fn(first_index, stride).
template <typename Fn>
void for_each_line(const GridSpec& g, int dim, Fn&& fn) {
  const std::size_t m = static_cast<std::size_t>(g.points_per_dim());
  const std::size_t stride = g.stride(dim);
  const std::size_t block = m * stride;
  for (std::size_t base = 0; base < g.size(); base += block) {
    for (std::size_t off = 0; off < stride; ++off) fn(base + off, stride);
  }
}

// One dimension of the product viewed as a small matrix product. Along `dim` the
// data splits into blocks of m slabs of `stride` contiguous values; K is symmetric,
// so the innermost loop always runs over contiguous memory.
inline void matmul_dim(const std::vector<double>& matrix, std::size_t m, const GridSpec& g, int dim,
                       const std::vector<double>& in, std::vector<double>& out) {
  const std::size_t stride = g.stride(dim);
  std::fill(out.begin(), out.end(), 0.0);
  if (stride == 1) {
    for (std::size_t base = 0; base < in.size(); base += m) {
      const double* x = in.data() + base;
      double* y = out.data() + base;
      for (std::size_t j = 0; j < m; ++j) {
        const double xj = x[j];
        if (xj == 0.0) continue;
        const double* row = matrix.data() + j * m;
        for (std::size_t i = 0; i < m; ++i) y[i] += xj * row[i];
      }
    }
    return;
  }
  const std::size_t block = m * stride;
  for (std::size_t base = 0; base < in.size(); base += block) {
    for (std::size_t i = 0; i < m; ++i) {
      double* y = out.data() + base + i * stride;
      const double* row = matrix.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        const double kij = row[j];
        const double* x = in.data() + base + j * stride;
        for (std::size_t s = 0; s < stride; ++s) y[s] += kij * x[s];
      }
    }
  }
}

inline void apply_dim_linear(const KernelMatrix& K, double h, const GridSpec& g, int dim, std::vector<double>& data) {
  std::vector<double> out(data.size());
  matmul_dim(K.linear, static_cast<std::size_t>(K.m), g, dim, data, out);
  for (std::size_t i = 0; i < out.size(); ++i) data[i] = out[i] * h;
}

// log sum_j K_ij exp(v_j) over one line of `log_in` starting at `first`.
inline double lse_line(const KernelMatrix& K, int i, const std::vector<double>& log_in, std::size_t first,
                       std::size_t stride) {
  const int m = K.m;
  const double* row = K.log.data() + static_cast<std::size_t>(i) * m;
  double mx = kNegInf;
  for (int j = 0; j < m; ++j) mx = std::max(mx, row[j] + log_in[first + j * stride]);
  if (mx == kNegInf) return kNegInf;
  const double floor = mx - kLogPruneGap;
  double s = 0.0;
  for (int j = 0; j < m; ++j) {
    const double t = row[j] + log_in[first + j * stride];
    if (t >= floor) s += std::exp(t - mx);
  }
  return mx + std::log(s);
}

// Per-line max shift, then the pruned linear product; small outputs fall back to log-sum-exp.
inline void apply_dim_shifted(const KernelMatrix& K, double h, const GridSpec& g, int dim, std::vector<double>& data) {
  const std::size_t m = static_cast<std::size_t>(K.m);
  const std::size_t stride = g.stride(dim);
  const std::size_t block = m * stride;
  const double log_h = std::log(h);
  std::vector<double> shift(data.size() / m, kNegInf), in(data.size()), out(data.size());
  for (std::size_t base = 0, line0 = 0; base < data.size(); base += block, line0 += stride) {
    for (std::size_t j = 0; j < m; ++j) {
      const double* v = data.data() + base + j * stride;
      for (std::size_t s = 0; s < stride; ++s) shift[line0 + s] = std::max(shift[line0 + s], v[s]);
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t s = 0; s < stride; ++s) {
        const std::size_t idx = base + j * stride + s;
        const double sh = shift[line0 + s];
        const double e = sh == kNegInf ? 0.0 : std::exp(data[idx] - sh);
        in[idx] = e < kPruneFloor ? 0.0 : e;
      }
    }
  }
  matmul_dim(K.pruned, m, g, dim, in, out);
  for (std::size_t base = 0, line0 = 0; base < data.size(); base += block, line0 += stride) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t s = 0; s < stride; ++s) {
        const std::size_t idx = base + i * stride + s;
        const double sh = shift[line0 + s];
        if (sh == kNegInf) {
          out[idx] = kNegInf;
        } else if (out[idx] > kRecomputeBelow) {
          out[idx] = std::log(out[idx]) + sh + log_h;
        } else {
          out[idx] = lse_line(K, static_cast<int>(i), data, base + s, stride) + log_h;
        }
      }
    }
  }
  data.swap(out);
}

// Full log-sum-exp with the maximum taken per output cell.
inline void apply_dim_lse(const KernelMatrix& K, double h, const GridSpec& g, int dim, std::vector<double>& data) {
  const int m = K.m;
  const double log_h = std::log(h);
  std::vector<double> in(m), out(m), terms(m);
  for_each_line(g, dim, [&](std::size_t first, std::size_t stride) {
    for (int j = 0; j < m; ++j) in[j] = data[first + j * stride];
    for (int i = 0; i < m; ++i) {
      const double* row = K.log.data() + static_cast<std::size_t>(i) * m;
      double mx = kNegInf;
      for (int j = 0; j < m; ++j) {
        terms[j] = row[j] + in[j];
        mx = std::max(mx, terms[j]);
      }
      if (mx == kNegInf) {
        out[i] = kNegInf;
        continue;
      }
      const double floor = mx - kLogPruneGap;
      double s = 0.0;
      for (int j = 0; j < m; ++j) {
        if (terms[j] >= floor) s += std::exp(terms[j] - mx);
      }
      out[i] = mx + std::log(s) + log_h;
    }
    for (int i = 0; i < m; ++i) data[first + i * stride] = out[i];
  });
}

inline std::vector<int> default_order(int dims) {
  std::vector<int> order(dims);
  for (int j = 0; j < dims; ++j) order[j] = j;
  return order;
}

}  // namespace detail

/// Linear-domain application, one dimension at a time in `dim_order` (default 0..d-1).
inline Field apply_kernel(const SeparableKernel& K, const Field& f, std::span<const int> dim_order = {}) {
  require_same_grid(K.grid(), f.grid, "apply_kernel");
  const GridSpec& g = f.grid;
  const auto order = dim_order.empty() ? detail::default_order(g.dims()) : std::vector<int>(dim_order.begin(), dim_order.end());
  Field out = f;
  for (int dim : order) detail::apply_dim_linear(K.matrix(dim), g.cell_width(), g, dim, out.values);
  return out;
}

/// Returns log(K exp(log_f)); -inf entries encode zeros. Auto picks log-sum-exp only when needed.
inline Field apply_kernel_log(const SeparableKernel& K, const Field& log_f, Stabilization mode = Stabilization::Auto,
                              std::span<const int> dim_order = {}) {
  require_same_grid(K.grid(), log_f.grid, "apply_kernel_log");
  const GridSpec& g = log_f.grid;
  const bool use_lse = mode == Stabilization::Log || (mode == Stabilization::Auto && K.needs_log_domain());
  const auto order = dim_order.empty() ? detail::default_order(g.dims()) : std::vector<int>(dim_order.begin(), dim_order.end());
  Field out = log_f;
  for (int dim : order) {
    if (use_lse) {
      detail::apply_dim_lse(K.matrix(dim), g.cell_width(), g, dim, out.values);
    } else {
      detail::apply_dim_shifted(K.matrix(dim), g.cell_width(), g, dim, out.values);
    }
  }
  return out;
}

}  // namespace mfgsink
