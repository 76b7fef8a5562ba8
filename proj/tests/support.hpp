#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mfgsink/grid.hpp"

namespace testing_support {

using mfgsink::Field;
using mfgsink::GridSpec;

/// Seeded generator for property tests; every test picks its own seed.
struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  template <typename T>
  const T& pick(const std::vector<T>& v) { return v[static_cast<std::size_t>(integer(0, static_cast<int>(v.size()) - 1))]; }

  Field field(const GridSpec& g, double lo = 0.0, double hi = 1.0) {
    Field f(g);
    for (double& v : f.values) v = uniform(lo, hi);
    return f;
  }

  Field probability(const GridSpec& g, double floor = 0.05) {
    Field f = field(g, floor, 1.0);
    return mfgsink::normalize_to_probability(f);
  }

  /// Sum of a few random periodic Fourier modes, shifted positive.
  Field smooth_probability(const GridSpec& g, double contrast = 0.8) {
    Field f(g, 1.0);
    const double L = g.side_length();
    for (int mode = 0; mode < 3; ++mode) {
      const double amp = uniform(-1.0, 1.0) * contrast / 3.0;
      std::vector<double> freq(g.dims()), phase(g.dims());
      for (int j = 0; j < g.dims(); ++j) {
        freq[j] = integer(0, 2);
        phase[j] = uniform(0.0, 2.0 * M_PI);
      }
      for (std::size_t i = 0; i < f.size(); ++i) {
        const auto idx = g.unravel(i);
        double arg = 0.0;
        for (int j = 0; j < g.dims(); ++j) arg += 2.0 * M_PI * freq[j] * g.center(idx[j]) / L + phase[j];
        f[i] += amp * std::cos(arg);
      }
    }
    return mfgsink::normalize_to_probability(f);
  }
};

/// Periodic Gaussian bump (image-summed), normalized.
inline Field bump(const GridSpec& g, const std::vector<double>& center, double sigma) {
  Field f(g);
  const double L = g.side_length();
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto idx = g.unravel(i);
    double v = 1.0;
    for (int j = 0; j < g.dims(); ++j) {
      double s = 0.0;
      for (int w = -3; w <= 3; ++w) {
        const double z = g.center(idx[j]) - center[j] + w * L;
        s += std::exp(-z * z / (2.0 * sigma * sigma));
      }
      v *= s;
    }
    f[i] = v;
  }
  return mfgsink::normalize_to_probability(f);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline double max_abs(const std::vector<double>& a) {
  double d = 0.0;
  for (double v : a) d = std::max(d, std::abs(v));
  return d;
}

}  // namespace testing_support
