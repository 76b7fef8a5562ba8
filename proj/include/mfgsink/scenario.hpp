#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "json.hpp"
#include "mfgsink/error.hpp"
#include "mfgsink/functionals.hpp"
#include "mfgsink/grid.hpp"
#include "mfgsink/sinkhorn.hpp"

namespace mfgsink {

struct DensitySpec {
  enum class Shape { Gaussian, Uniform, Box, Disk, File };
  Shape shape = Shape::Uniform;
  std::vector<double> center;
  double sigma = 0.0;
  std::vector<double> lower, upper;
  double radius = 0.0;
  std::string path;
};

/// A disk whose center follows evenly spaced waypoints over [0, T], linearly interpolated.
struct ObstacleSpec {
  double radius = 0.0;
  std::vector<std::vector<double>> waypoints;
};

/// Interaction kernel: Gaussian in radius times Gaussian in direction, or read from a frame file.
struct InteractionKernelSpec {
  enum class Type { PolarGaussian, File };
  Type type = Type::PolarGaussian;
  double amplitude = 1.0;
  double radial_mean = 0.0;
  double radial_sigma = 0.1;
  double angular_sigma_deg = 30.0;
  double direction_deg = 45.0;
  bool symmetric = false;
  std::string path;
};

struct RunningCostSpec {
  enum class Type { None, Congestion, Potential, Nonlocal };
  Type type = Type::None;
  std::optional<double> cap;
};

enum class FrameFormat { Csv, Pgm, Both };

struct ScenarioConfig {
  std::string name = "scenario";
  int dims = 2;
  int points = 64;
  double side_length = 1.0;
  Boundary boundary = Boundary::Periodic;
  double horizon = 1.0;
  int steps = 31;
  double viscosity = 1.0;
  DensitySpec initial;
  bool terminal_fixed = false;
  DensitySpec terminal;
  RunningCostSpec running;
  std::vector<ObstacleSpec> obstacles;
  std::optional<InteractionKernelSpec> kernel;
  SolverConfig solver;
  FrameFormat format = FrameFormat::Csv;
  std::filesystem::path base_dir;

  GridSpec grid() const { return GridSpec(dims, points, side_length, boundary); }
  TimeAxis time() const { return TimeAxis(horizon, steps); }
};

inline std::string to_string(FrameFormat f) {
  switch (f) {
    case FrameFormat::Csv: return "csv";
    case FrameFormat::Pgm: return "pgm";
    case FrameFormat::Both: return "both";
  }
  return "csv";
}

inline FrameFormat parse_frame_format(const std::string& s) {
  if (s == "csv") return FrameFormat::Csv;
  if (s == "pgm") return FrameFormat::Pgm;
  if (s == "both") return FrameFormat::Both;
  throw Error(ErrorKind::ValidationError, "unknown frame format '" + s + "' (expected csv, pgm or both)");
}

inline Stabilization parse_stabilization(const std::string& s) {
  if (s == "auto") return Stabilization::Auto;
  if (s == "on" || s == "log") return Stabilization::Log;
  if (s == "off" || s == "linear") return Stabilization::Linear;
  throw Error(ErrorKind::ValidationError, "unknown stabilization '" + s + "' (expected auto, on or off)");
}

namespace detail {

inline std::string where(const YAML::Node& node, const std::string& key) {
  const auto mark = node.Mark();
  if (mark.is_null()) return "key '" + key + "'";
  return "line " + std::to_string(mark.line + 1) + ", key '" + key + "'";
}

template <typename T>
T read_scalar(const YAML::Node& node, const std::string& key) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw Error(ErrorKind::ParseError, where(node, key) + ": cannot read value '" +
                                           (node.IsScalar() ? node.Scalar() : std::string("<non-scalar>")) + "'");
  }
}

template <typename T>
void read_opt(const YAML::Node& parent, const char* name, const std::string& prefix, T& out) {
  if (const YAML::Node n = parent[name]) out = read_scalar<T>(n, prefix + name);
}

inline void check_keys(const YAML::Node& node, const std::string& prefix, std::initializer_list<const char*> allowed) {
  if (!node) return;
  if (!node.IsMap()) throw Error(ErrorKind::ParseError, where(node, prefix) + ": expected a table");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!ok.count(key)) throw Error(ErrorKind::ParseError, where(kv.first, prefix + key) + ": unknown key");
  }
}

inline std::vector<double> read_vector(const YAML::Node& node, const std::string& key) {
  if (!node.IsSequence()) throw Error(ErrorKind::ParseError, where(node, key) + ": expected a list of numbers");
  std::vector<double> out;
  for (const auto& v : node) out.push_back(read_scalar<double>(v, key));
  return out;
}

inline DensitySpec read_density(const YAML::Node& node, const std::string& key) {
  check_keys(node, key + ".", {"shape", "center", "sigma", "lower", "upper", "radius", "path"});
  DensitySpec d;
  const auto shape = node["shape"] ? read_scalar<std::string>(node["shape"], key + ".shape") : std::string("uniform");
  if (shape == "gaussian") d.shape = DensitySpec::Shape::Gaussian;
  else if (shape == "uniform") d.shape = DensitySpec::Shape::Uniform;
  else if (shape == "box") d.shape = DensitySpec::Shape::Box;
  else if (shape == "disk") d.shape = DensitySpec::Shape::Disk;
  else if (shape == "file") d.shape = DensitySpec::Shape::File;
  else throw Error(ErrorKind::ParseError, where(node["shape"], key + ".shape") + ": unknown shape '" + shape + "'");
  if (node["center"]) d.center = read_vector(node["center"], key + ".center");
  if (node["lower"]) d.lower = read_vector(node["lower"], key + ".lower");
  if (node["upper"]) d.upper = read_vector(node["upper"], key + ".upper");
  read_opt(node, "sigma", key + ".", d.sigma);
  read_opt(node, "radius", key + ".", d.radius);
  read_opt(node, "path", key + ".", d.path);
  return d;
}

inline void validate_density(const DensitySpec& d, int dims, const std::string& key) {
  auto need_dims = [&](const std::vector<double>& v, const char* what) {
    if (static_cast<int>(v.size()) != dims) {
      throw Error(ErrorKind::ValidationError, key + "." + what + " must have " + std::to_string(dims) + " entries");
    }
  };
  switch (d.shape) {
    case DensitySpec::Shape::Gaussian:
      need_dims(d.center, "center");
      if (!(d.sigma > 0.0)) throw Error(ErrorKind::ValidationError, key + ".sigma must be positive");
      break;
    case DensitySpec::Shape::Box:
      need_dims(d.lower, "lower");
      need_dims(d.upper, "upper");
      break;
    case DensitySpec::Shape::Disk:
      need_dims(d.center, "center");
      if (!(d.radius > 0.0)) throw Error(ErrorKind::ValidationError, key + ".radius must be positive");
      break;
    case DensitySpec::Shape::File:
      if (d.path.empty()) throw Error(ErrorKind::ValidationError, key + ".path is required for file densities");
      break;
    case DensitySpec::Shape::Uniform: break;
  }
}

}  // namespace detail

/**
 * Reads a YAML scenario document. Missing keys take the defaults of
 * ScenarioConfig / SolverConfig; unknown keys are rejected.
 */
inline ScenarioConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorKind::ParseError, "line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (!root.IsMap()) throw Error(ErrorKind::ParseError, "scenario document must be a table");
  check_keys(root, "", {"name", "grid", "time", "viscosity", "initial", "terminal", "running_cost", "obstacles",
                        "interaction_kernel", "solver", "output"});

  ScenarioConfig cfg;
  cfg.base_dir = base_dir;
  read_opt(root, "name", "", cfg.name);

  if (const auto g = root["grid"]) {
    check_keys(g, "grid.", {"dims", "points", "side_length", "boundary"});
    read_opt(g, "dims", "grid.", cfg.dims);
    read_opt(g, "points", "grid.", cfg.points);
    read_opt(g, "side_length", "grid.", cfg.side_length);
    if (g["boundary"]) {
      const auto b = read_scalar<std::string>(g["boundary"], "grid.boundary");
      if (b == "periodic") cfg.boundary = Boundary::Periodic;
      else if (b == "truncated") cfg.boundary = Boundary::Truncated;
      else throw Error(ErrorKind::ParseError, where(g["boundary"], "grid.boundary") + ": expected periodic or truncated");
    }
  }
  if (const auto t = root["time"]) {
    check_keys(t, "time.", {"horizon", "steps"});
    read_opt(t, "horizon", "time.", cfg.horizon);
    read_opt(t, "steps", "time.", cfg.steps);
  }
  read_opt(root, "viscosity", "", cfg.viscosity);

  if (!root["initial"]) throw Error(ErrorKind::ParseError, "missing required table 'initial'");
  cfg.initial = read_density(root["initial"], "initial");

  if (const auto term = root["terminal"]) {
    if (term.IsScalar()) {
      const auto v = read_scalar<std::string>(term, "terminal");
      if (v != "free") throw Error(ErrorKind::ParseError, where(term, "terminal") + ": expected 'free' or a density table");
    } else {
      cfg.terminal_fixed = true;
      cfg.terminal = read_density(term, "terminal");
    }
  }

  if (const auto rc = root["running_cost"]) {
    check_keys(rc, "running_cost.", {"type", "cap"});
    const auto type = rc["type"] ? read_scalar<std::string>(rc["type"], "running_cost.type") : std::string("none");
    if (type == "none") cfg.running.type = RunningCostSpec::Type::None;
    else if (type == "congestion") cfg.running.type = RunningCostSpec::Type::Congestion;
    else if (type == "potential") cfg.running.type = RunningCostSpec::Type::Potential;
    else if (type == "nonlocal") cfg.running.type = RunningCostSpec::Type::Nonlocal;
    else throw Error(ErrorKind::ParseError, where(rc["type"], "running_cost.type") + ": unknown type '" + type + "'");
    if (rc["cap"]) cfg.running.cap = read_scalar<double>(rc["cap"], "running_cost.cap");
  }

  if (const auto obs = root["obstacles"]) {
    if (!obs.IsSequence()) throw Error(ErrorKind::ParseError, where(obs, "obstacles") + ": expected a list");
    for (const auto& o : obs) {
      check_keys(o, "obstacles[].", {"radius", "waypoints"});
      ObstacleSpec spec;
      read_opt(o, "radius", "obstacles[].", spec.radius);
      if (!o["waypoints"] || !o["waypoints"].IsSequence()) {
        throw Error(ErrorKind::ParseError, where(o, "obstacles[].waypoints") + ": expected a list of points");
      }
      for (const auto& w : o["waypoints"]) spec.waypoints.push_back(read_vector(w, "obstacles[].waypoints"));
      cfg.obstacles.push_back(std::move(spec));
    }
  }

  if (const auto k = root["interaction_kernel"]) {
    check_keys(k, "interaction_kernel.", {"type", "amplitude", "radial_mean", "radial_sigma", "angular_sigma_deg",
                                          "direction_deg", "symmetric", "path"});
    InteractionKernelSpec spec;
    const auto type = k["type"] ? read_scalar<std::string>(k["type"], "interaction_kernel.type") : std::string("polar_gaussian");
    if (type == "polar_gaussian") spec.type = InteractionKernelSpec::Type::PolarGaussian;
    else if (type == "file") spec.type = InteractionKernelSpec::Type::File;
    else throw Error(ErrorKind::ParseError, where(k["type"], "interaction_kernel.type") + ": unknown type '" + type + "'");
    read_opt(k, "amplitude", "interaction_kernel.", spec.amplitude);
    read_opt(k, "radial_mean", "interaction_kernel.", spec.radial_mean);
    read_opt(k, "radial_sigma", "interaction_kernel.", spec.radial_sigma);
    read_opt(k, "angular_sigma_deg", "interaction_kernel.", spec.angular_sigma_deg);
    read_opt(k, "direction_deg", "interaction_kernel.", spec.direction_deg);
    read_opt(k, "symmetric", "interaction_kernel.", spec.symmetric);
    read_opt(k, "path", "interaction_kernel.", spec.path);
    cfg.kernel = spec;
  }

  if (const auto s = root["solver"]) {
    check_keys(s, "solver.", {"max_sweeps", "marginal_tolerance", "fixed_point_tolerance", "stabilization",
                              "outer_max_iters", "damping"});
    read_opt(s, "max_sweeps", "solver.", cfg.solver.max_sweeps);
    read_opt(s, "marginal_tolerance", "solver.", cfg.solver.marginal_tolerance);
    read_opt(s, "fixed_point_tolerance", "solver.", cfg.solver.fixed_point_tolerance);
    read_opt(s, "outer_max_iters", "solver.", cfg.solver.outer_max_iters);
    read_opt(s, "damping", "solver.", cfg.solver.damping);
    if (s["stabilization"]) cfg.solver.stabilization = parse_stabilization(read_scalar<std::string>(s["stabilization"], "solver.stabilization"));
  }
  if (const auto o = root["output"]) {
    check_keys(o, "output.", {"format"});
    if (o["format"]) cfg.format = parse_frame_format(read_scalar<std::string>(o["format"], "output.format"));
  }

  // Validation of the resolved document.
  const GridSpec grid = cfg.grid();
  const TimeAxis time = cfg.time();
  (void)time;
  if (!(cfg.viscosity > 0.0) || !std::isfinite(cfg.viscosity)) throw Error(ErrorKind::ValidationError, "viscosity must be positive");
  validate_density(cfg.initial, cfg.dims, "initial");
  if (cfg.terminal_fixed) validate_density(cfg.terminal, cfg.dims, "terminal");
  cfg.solver.validate();

  const double L = cfg.side_length;
  for (const auto& o : cfg.obstacles) {
    if (!(o.radius > 0.0)) throw Error(ErrorKind::ValidationError, "obstacle radius must be positive");
    if (2.0 * o.radius >= L) throw Error(ErrorKind::ValidationError, "obstacle radius larger than the domain allows");
    if (o.waypoints.empty()) throw Error(ErrorKind::ValidationError, "obstacle needs at least one waypoint");
    for (const auto& w : o.waypoints) {
      if (static_cast<int>(w.size()) != cfg.dims) throw Error(ErrorKind::ValidationError, "obstacle waypoint dimension mismatch");
    }
  }
  const auto type = cfg.running.type;
  if (type == RunningCostSpec::Type::Congestion && !cfg.running.cap) {
    throw Error(ErrorKind::ValidationError, "congestion running cost needs a cap");
  }
  if (cfg.running.cap && (!(*cfg.running.cap > 0.0) || *cfg.running.cap * grid.domain_volume() < 1.0)) {
    throw Error(ErrorKind::ValidationError, "congestion cap times domain volume must be at least 1 (infeasible otherwise)");
  }
  if (type == RunningCostSpec::Type::Nonlocal) {
    if (!cfg.kernel) throw Error(ErrorKind::ValidationError, "nonlocal running cost needs an interaction_kernel table");
    if (!cfg.obstacles.empty()) throw Error(ErrorKind::ValidationError, "obstacles cannot be combined with a nonlocal cost");
    if (cfg.boundary != Boundary::Periodic) throw Error(ErrorKind::ValidationError, "nonlocal cost needs a periodic grid");
    if (cfg.kernel->type == InteractionKernelSpec::Type::PolarGaussian) {
      if (cfg.dims != 2) throw Error(ErrorKind::ValidationError, "polar Gaussian kernel is defined in two dimensions");
      if (!(cfg.kernel->radial_sigma > 0.0) || !(cfg.kernel->angular_sigma_deg > 0.0)) {
        throw Error(ErrorKind::ValidationError, "polar Gaussian kernel widths must be positive");
      }
    }
  }
  return cfg;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

/// Reads a frame written as CSV (comma-separated values, any line layout) onto `grid`.
inline Field read_frame_csv(const std::filesystem::path& path, const GridSpec& grid) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open frame " + path.string());
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      if (cell.empty()) continue;
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorKind::ParseError, path.string() + ": bad number '" + cell + "'");
      }
    }
  }
  if (values.size() != grid.size()) {
    throw Error(ErrorKind::ValidationError, path.string() + ": expected " + std::to_string(grid.size()) + " values, found " +
                                                std::to_string(values.size()));
  }
  return Field(grid, std::move(values));
}

namespace detail {

// Signed periodic offset in (-L/2, L/2].
inline double wrap_offset(double delta, double L) {
  double r = std::fmod(delta, L);
  if (r > 0.5 * L) r -= L;
  if (r <= -0.5 * L) r += L;
  return r;
}

inline double squared_distance(const GridSpec& g, const std::array<int, GridSpec::kMaxDims>& idx, const std::vector<double>& c) {
  double d2 = 0.0;
  for (int j = 0; j < g.dims(); ++j) {
    double delta = g.center(idx[j]) - c[j];
    if (g.boundary() == Boundary::Periodic) delta = wrap_offset(delta, g.side_length());
    d2 += delta * delta;
  }
  return d2;
}

inline Field raw_density(const DensitySpec& d, const GridSpec& g, const std::filesystem::path& base) {
  Field f(g, 0.0);
  const double L = g.side_length();
  switch (d.shape) {
    case DensitySpec::Shape::Uniform:
      for (double& v : f.values) v = 1.0;
      break;
    case DensitySpec::Shape::Gaussian: {
      const int images = g.boundary() == Boundary::Periodic ? 3 : 0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        const auto idx = g.unravel(i);
        double value = 1.0;
        for (int j = 0; j < g.dims(); ++j) {
          double s = 0.0;
          for (int w = -images; w <= images; ++w) {
            const double z = g.center(idx[j]) - d.center[j] + w * L;
            s += std::exp(-z * z / (2.0 * d.sigma * d.sigma));
          }
          value *= s;
        }
        f[i] = value;
      }
      break;
    }
    case DensitySpec::Shape::Box:
      for (std::size_t i = 0; i < f.size(); ++i) {
        const auto idx = g.unravel(i);
        bool inside = true;
        for (int j = 0; j < g.dims(); ++j) {
          const double x = g.center(idx[j]);
          inside = inside && x >= d.lower[j] && x < d.upper[j];
        }
        f[i] = inside ? 1.0 : 0.0;
      }
      break;
    case DensitySpec::Shape::Disk:
      for (std::size_t i = 0; i < f.size(); ++i) f[i] = squared_distance(g, g.unravel(i), d.center) < d.radius * d.radius ? 1.0 : 0.0;
      break;
    case DensitySpec::Shape::File: {
      const std::filesystem::path p = std::filesystem::path(d.path).is_absolute() ? std::filesystem::path(d.path) : base / d.path;
      f = read_frame_csv(p, g);
      for (double v : f.values) {
        if (!(v >= 0.0)) throw Error(ErrorKind::ValidationError, p.string() + ": densities must be nonnegative");
      }
      break;
    }
  }
  return f;
}

}  // namespace detail

/// Obstacle potential at time t: kObstacle on cells whose center lies strictly inside a disk, else 0.
inline Field obstacle_potential(const std::vector<ObstacleSpec>& obstacles, const GridSpec& g, double t, double horizon) {
  Field V(g, 0.0);
  for (const auto& o : obstacles) {
    std::vector<double> c = o.waypoints.front();
    if (o.waypoints.size() > 1) {
      const double s = std::clamp(t / horizon, 0.0, 1.0) * static_cast<double>(o.waypoints.size() - 1);
      const std::size_t i = std::min(static_cast<std::size_t>(s), o.waypoints.size() - 2);
      const double frac = s - static_cast<double>(i);
      for (std::size_t j = 0; j < c.size(); ++j) c[j] = (1.0 - frac) * o.waypoints[i][j] + frac * o.waypoints[i + 1][j];
    }
    for (std::size_t i = 0; i < V.size(); ++i) {
      if (detail::squared_distance(g, g.unravel(i), c) < o.radius * o.radius) V[i] = kObstacle;
    }
  }
  return V;
}

/// Interaction kernel sampled on the displacement grid (index i <-> offset i*h wrapped to (-L/2, L/2]).
inline Field rasterize_interaction_kernel(const InteractionKernelSpec& spec, const GridSpec& g,
                                          const std::filesystem::path& base = {}) {
  if (spec.type == InteractionKernelSpec::Type::File) {
    const std::filesystem::path p = std::filesystem::path(spec.path).is_absolute() ? std::filesystem::path(spec.path) : base / spec.path;
    Field K = read_frame_csv(p, g);
    if (!spec.symmetric) return K;
    Field S(g);
    for (std::size_t i = 0; i < K.size(); ++i) {
      auto idx = g.unravel(i);
      for (int j = 0; j < g.dims(); ++j) idx[j] = g.wrap(-static_cast<long>(idx[j]));
      S[i] = 0.5 * (K[i] + K[g.ravel(idx)]);
    }
    return S;
  }
  const int m = g.points_per_dim();
  const double h = g.cell_width();
  const double theta0 = spec.direction_deg * std::numbers::pi / 180.0;
  const double sig_t = spec.angular_sigma_deg * std::numbers::pi / 180.0;
  auto offset = [&](int i) { return (i <= m / 2 ? i : i - m) * h; };
  auto polar = [&](double zx, double zy) {
    const double r = std::hypot(zx, zy);
    const double dr = r - spec.radial_mean;
    double value = spec.amplitude * std::exp(-dr * dr / (2.0 * spec.radial_sigma * spec.radial_sigma));
    if (r > 0.0) {
      const double dtheta = std::remainder(std::atan2(zy, zx) - theta0, 2.0 * std::numbers::pi);
      value *= std::exp(-dtheta * dtheta / (2.0 * sig_t * sig_t));
    }
    return value;
  };
  Field K(g);
  for (std::size_t i = 0; i < K.size(); ++i) {
    const auto idx = g.unravel(i);
    const double value = polar(offset(idx[0]), offset(idx[1]));
    if (spec.symmetric) {
      const double mirrored = polar(offset(g.wrap(-static_cast<long>(idx[0]))), offset(g.wrap(-static_cast<long>(idx[1]))));
      K[i] = 0.5 * (value + mirrored);
    } else {
      K[i] = value;
    }
  }
  return K;
}

struct BuiltScenario {
  CostSchedule schedule;
  /// Obstacle potentials sampled at t = kT/N, k = 0..N (empty without obstacles).
  std::vector<Field> obstacle_track;
  std::optional<Field> interaction_kernel;
  double viscosity = 1.0;
  SolverConfig solver;
};

/**
 * Resolves densities, samples the obstacle track and rasterizes the interaction
 * kernel. Prescribed endpoint densities are cut to zero inside the obstacles
 * present at their time and renormalized.
 */
inline BuiltScenario build_scenario(const ScenarioConfig& cfg) {
  const GridSpec g = cfg.grid();
  const TimeAxis time = cfg.time();
  const int N = time.steps();

  BuiltScenario out;
  out.viscosity = cfg.viscosity;
  out.solver = cfg.solver;
  if (!cfg.obstacles.empty()) {
    for (int k = 0; k <= N; ++k) out.obstacle_track.push_back(obstacle_potential(cfg.obstacles, g, time.time_at(k), time.horizon()));
  }
  auto endpoint = [&](const DensitySpec& spec, int k, const char* what) {
    Field f = detail::raw_density(spec, g, cfg.base_dir);
    if (!out.obstacle_track.empty()) {
      for (std::size_t i = 0; i < f.size(); ++i) {
        if (is_obstacle(out.obstacle_track[k][i])) f[i] = 0.0;
      }
    }
    if (integrate(f) <= 0.0) throw Error(ErrorKind::ValidationError, std::string(what) + " density has no mass on the grid");
    return normalize_to_probability(f);
  };

  std::vector<CostSpec> costs;
  costs.reserve(static_cast<std::size_t>(N) + 1);
  costs.emplace_back(FixedMarginal{endpoint(cfg.initial, 0, "initial")});

  if (cfg.running.type == RunningCostSpec::Type::Nonlocal) {
    out.interaction_kernel = rasterize_interaction_kernel(*cfg.kernel, g, cfg.base_dir);
  }
  auto running = [&](int k) -> CostSpec {
    const bool has_obstacles = !out.obstacle_track.empty();
    switch (cfg.running.type) {
      case RunningCostSpec::Type::Nonlocal:
        return Nonlocal{*out.interaction_kernel, cfg.kernel->symmetric, cfg.running.cap};
      case RunningCostSpec::Type::Congestion:
        if (has_obstacles) return CongestionPlusPotential{*cfg.running.cap, out.obstacle_track[k]};
        return Congestion{*cfg.running.cap};
      case RunningCostSpec::Type::Potential:
      case RunningCostSpec::Type::None:
        if (cfg.running.cap && has_obstacles) return CongestionPlusPotential{*cfg.running.cap, out.obstacle_track[k]};
        if (cfg.running.cap) return Congestion{*cfg.running.cap};
        if (has_obstacles) return Potential{out.obstacle_track[k]};
        return Free{};
    }
    return Free{};
  };
  for (int k = 1; k < N; ++k) costs.push_back(running(k));
  if (N >= 1) {
    if (cfg.terminal_fixed) {
      costs.emplace_back(FixedMarginal{endpoint(cfg.terminal, N, "terminal")});
    } else if (!out.obstacle_track.empty()) {
      costs.emplace_back(Potential{out.obstacle_track[N]});
    } else {
      costs.emplace_back(Free{});
    }
  }
  out.schedule = CostSchedule(g, time, std::move(costs));
  return out;
}

namespace detail {

inline nlohmann::ordered_json density_json(const DensitySpec& d) {
  nlohmann::ordered_json j;
  switch (d.shape) {
    case DensitySpec::Shape::Gaussian: j = {{"shape", "gaussian"}, {"center", d.center}, {"sigma", d.sigma}}; break;
    case DensitySpec::Shape::Uniform: j = {{"shape", "uniform"}}; break;
    case DensitySpec::Shape::Box: j = {{"shape", "box"}, {"lower", d.lower}, {"upper", d.upper}}; break;
    case DensitySpec::Shape::Disk: j = {{"shape", "disk"}, {"center", d.center}, {"radius", d.radius}}; break;
    case DensitySpec::Shape::File: j = {{"shape", "file"}, {"path", d.path}}; break;
  }
  return j;
}

}  // namespace detail

/// Fully resolved configuration, defaults included, for the run manifest.
inline nlohmann::ordered_json config_to_json(const ScenarioConfig& cfg) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["name"] = cfg.name;
  j["grid"] = {{"dims", cfg.dims}, {"points", cfg.points}, {"side_length", cfg.side_length}, {"boundary", to_string(cfg.boundary)}};
  j["time"] = {{"horizon", cfg.horizon}, {"steps", cfg.steps}};
  j["viscosity"] = cfg.viscosity;
  j["initial"] = detail::density_json(cfg.initial);
  j["terminal"] = cfg.terminal_fixed ? detail::density_json(cfg.terminal) : ordered_json("free");
  static const char* kTypes[] = {"none", "congestion", "potential", "nonlocal"};
  j["running_cost"] = {{"type", kTypes[static_cast<int>(cfg.running.type)]}};
  if (cfg.running.cap) j["running_cost"]["cap"] = *cfg.running.cap;
  ordered_json obs = ordered_json::array();
  for (const auto& o : cfg.obstacles) obs.push_back({{"radius", o.radius}, {"waypoints", o.waypoints}});
  j["obstacles"] = obs;
  if (cfg.kernel) {
    const auto& k = *cfg.kernel;
    if (k.type == InteractionKernelSpec::Type::PolarGaussian) {
      j["interaction_kernel"] = {{"type", "polar_gaussian"},      {"amplitude", k.amplitude},
                                 {"radial_mean", k.radial_mean},  {"radial_sigma", k.radial_sigma},
                                 {"angular_sigma_deg", k.angular_sigma_deg}, {"direction_deg", k.direction_deg},
                                 {"symmetric", k.symmetric}};
    } else {
      j["interaction_kernel"] = {{"type", "file"}, {"path", k.path}, {"symmetric", k.symmetric}};
    }
    j["interaction_convention"] = "potential f2 = -K * rho (no 1/2 factor), linearized semi-implicitly";
  }
  j["solver"] = {{"max_sweeps", cfg.solver.max_sweeps},
                 {"marginal_tolerance", cfg.solver.marginal_tolerance},
                 {"fixed_point_tolerance", cfg.solver.fixed_point_tolerance},
                 {"stabilization", to_string(cfg.solver.stabilization)},
                 {"outer_max_iters", cfg.solver.outer_max_iters},
                 {"damping", cfg.solver.damping},
                 {"initialization", "u_k = 0"},
                 {"update_order", "k = 0..N (Gauss-Seidel)"}};
  j["output"] = {{"format", to_string(cfg.format)}};
  return j;
}

}  // namespace mfgsink
