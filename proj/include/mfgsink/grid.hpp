#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mfgsink/error.hpp"

namespace mfgsink {

enum class Boundary { Periodic, Truncated };

inline std::string to_string(Boundary b) { return b == Boundary::Periodic ? "periodic" : "truncated"; }

/// Obstacle marker for potential fields. exp(-w * kObstacle) is exactly zero.
inline constexpr double kObstacle = std::numeric_limits<double>::infinity();

inline bool is_obstacle(double v) { return v == kObstacle; }

/**
 * Uniform Cartesian discretization of [0, L)^d, either a torus or a truncated box.
 *
 * Cells are indexed row-major with the last dimension fastest. Cell i along a
 * dimension has its center at (i + 1/2) * h, h = L / m.
 */
class GridSpec {
 public:
  static constexpr int kMaxDims = 3;

  GridSpec() = default;

  GridSpec(int dims, int points_per_dim, double side_length = 1.0, Boundary boundary = Boundary::Periodic)
      : dims_(dims), points_(points_per_dim), side_(side_length), boundary_(boundary) {
    if (dims < 1 || dims > kMaxDims) {
      throw Error(ErrorKind::ValidationError, "grid dimension must be 1, 2 or 3, got " + std::to_string(dims));
    }
    if (points_per_dim < 1) {
      throw Error(ErrorKind::ValidationError, "points per dimension must be positive");
    }
    if (!(side_length > 0.0) || !std::isfinite(side_length)) {
      throw Error(ErrorKind::ValidationError, "side length must be a positive real");
    }
    size_ = 1;
    for (int j = 0; j < dims; ++j) size_ *= static_cast<std::size_t>(points_per_dim);
  }

  int dims() const { return dims_; }
  int points_per_dim() const { return points_; }
  double side_length() const { return side_; }
  Boundary boundary() const { return boundary_; }
  std::size_t size() const { return size_; }

  double cell_width() const { return side_ / points_; }
  double cell_volume() const { return std::pow(cell_width(), dims_); }
  double domain_volume() const { return std::pow(side_, dims_); }
  double center(int i) const { return (i + 0.5) * cell_width(); }

  /// Distance between stride-adjacent cells along `dim` in the flat layout.
  std::size_t stride(int dim) const {
    std::size_t s = 1;
    for (int j = dim + 1; j < dims_; ++j) s *= static_cast<std::size_t>(points_);
    return s;
  }

  std::array<int, kMaxDims> unravel(std::size_t flat) const {
    std::array<int, kMaxDims> idx{};
    for (int j = dims_ - 1; j >= 0; --j) {
      idx[j] = static_cast<int>(flat % static_cast<std::size_t>(points_));
      flat /= static_cast<std::size_t>(points_);
    }
    return idx;
  }

  std::size_t ravel(const std::array<int, kMaxDims>& idx) const {
    std::size_t flat = 0;
    for (int j = 0; j < dims_; ++j) flat = flat * static_cast<std::size_t>(points_) + static_cast<std::size_t>(idx[j]);
    return flat;
  }

  /// Index arithmetic modulo m (periodic wrap).
  int wrap(long i) const {
    const long m = points_;
    long r = i % m;
    return static_cast<int>(r < 0 ? r + m : r);
  }

  friend bool operator==(const GridSpec& a, const GridSpec& b) {
    return a.dims_ == b.dims_ && a.points_ == b.points_ && a.side_ == b.side_ && a.boundary_ == b.boundary_;
  }

 private:
  int dims_ = 1;
  int points_ = 1;
  double side_ = 1.0;
  Boundary boundary_ = Boundary::Periodic;
  std::size_t size_ = 1;
};

/// Discrete horizon [0, T] split into N steps; marginals live at k = 0..N.
class TimeAxis {
 public:
  TimeAxis() = default;
  TimeAxis(double horizon, int steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw Error(ErrorKind::ValidationError, "time horizon must be positive");
    if (steps < 1) throw Error(ErrorKind::ValidationError, "number of time steps must be positive");
  }

  double horizon() const { return horizon_; }
  int steps() const { return steps_; }
  double dt() const { return horizon_ / steps_; }
  double time_at(int k) const { return horizon_ * k / steps_; }

 private:
  double horizon_ = 1.0;
  int steps_ = 1;
};

/// Values on a grid: densities (nonnegative) or potentials (signed, possibly kObstacle).
struct Field {
  GridSpec grid;
  std::vector<double> values;

  Field() = default;
  explicit Field(const GridSpec& g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
  Field(const GridSpec& g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.size()) {
      throw Error(ErrorKind::GridMismatch, "field has " + std::to_string(values.size()) + " values, grid has " +
                                               std::to_string(grid.size()) + " cells");
    }
  }

  std::size_t size() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
  std::span<const double> span() const { return values; }
  std::span<double> span() { return values; }
};

inline void require_same_grid(const GridSpec& a, const GridSpec& b, const char* context) {
  if (!(a == b)) throw Error(ErrorKind::GridMismatch, std::string(context) + ": fields live on different grids");
}

/// cell_volume * sum of values.
inline double integrate(const Field& f) {
  double s = 0.0;
  for (double v : f.values) s += v;
  return s * f.grid.cell_volume();
}

inline Field normalize_to_probability(const Field& f) {
  const double mass = integrate(f);
  if (mass == 0.0) throw Error(ErrorKind::ZeroMass, "cannot normalize a field with zero mass");
  if (!(mass > 0.0) || !std::isfinite(mass)) {
    throw Error(ErrorKind::ValidationError, "field mass must be positive and finite to normalize");
  }
  Field out = f;
  for (double& v : out.values) v /= mass;
  return out;
}

inline Field hadamard(const Field& a, const Field& b) {
  require_same_grid(a.grid, b.grid, "hadamard");
  Field out(a.grid);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

/// Cyclic shift: out(x) = f(x - offset * e_dim).
inline Field shift(const Field& f, int dim, long offset) {
  const GridSpec& g = f.grid;
  Field out(g);
  for (std::size_t i = 0; i < f.size(); ++i) {
    auto idx = g.unravel(i);
    idx[dim] = g.wrap(static_cast<long>(idx[dim]) + offset);
    out[g.ravel(idx)] = f[i];
  }
  return out;
}

inline bool is_probability(const Field& f, double tol = 1e-12) {
  for (double v : f.values) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
  }
  return std::abs(integrate(f) - 1.0) <= tol;
}

}  // namespace mfgsink
