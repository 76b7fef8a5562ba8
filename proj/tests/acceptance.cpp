// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mfgsink/mfgsink.hpp"
#include "mfgsink/oracle.hpp"

using namespace mfgsink;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = MFGSINK_SCENARIO_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t seed) : eng(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(eng); }
};

class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

// Positive smooth probability density from a few random Fourier modes.
Field smooth_density(Rng& rng, const GridSpec& g) {
  Field f(g, 1.0);
  for (int mode = 1; mode <= 3; ++mode) {
    const double amp = rng.uniform(-0.25, 0.25), phase = rng.uniform(0.0, 2 * M_PI);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto idx = g.unravel(i);
      double x = 0.0;
      for (int j = 0; j < g.dims(); ++j) x += g.center(idx[j]) / g.side_length();
      f[i] += amp * std::cos(2 * M_PI * mode * x + phase);
    }
  }
  return normalize_to_probability(f);
}

struct Run {
  std::string name;
  SolveResult result;
  double seconds = 0.0;
  std::string error;
};

Run run_shipped(const std::string& name) {
  Run run{name, {}, 0.0, {}};
  Stopwatch clock;
  try {
    const BuiltScenario built = build_scenario(load_config(kScenarios / (name + ".yaml")));
    run.result = solve(built.schedule, built.viscosity, built.solver);
  } catch (const MaxIterationsError& e) {
    run.result = e.result();
    run.error = e.what();
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  run.seconds = clock.seconds();
  std::printf("  ran %s in %.1fs%s\n", name.c_str(), run.seconds, run.error.empty() ? "" : " (did not converge)");
  std::fflush(stdout);
  return run;
}

double max_density(const SolveResult& r) {
  double top = 0.0;
  for (const auto& f : r.frames) top = std::max(top, *std::max_element(f.values.begin(), f.values.end()));
  return top;
}

Outcome kernel_mass() {
  Rng rng(1001);
  Stopwatch clock;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const GridSpec g(rng.integer(1, 2), rng.integer(0, 1) ? 64 : 16);
    const double tau = rng.log_uniform(1e-4, 10.0);
    const auto K = build_heat_kernel(g, tau, 1.0);
    Field f(g);
    for (double& v : f.values) v = rng.uniform(0.0, 1.0);
    const double before = integrate(f);
    worst = std::max(worst, std::abs(integrate(apply_kernel(K, f)) - before) / before);
  }
  const double t = clock.seconds();
  return {worst <= 1e-12 && t < 5.0, fmt("max relative drift %.2e over 100 fields, %.2fs", worst, t)};
}

Outcome two_marginal_oracle() {
  Rng rng(1002);
  Stopwatch clock;
  const GridSpec g(1, 16);
  const double eps = 0.05;
  const Field r0 = smooth_density(rng, g), r1 = smooth_density(rng, g);
  const CostSchedule s(g, TimeAxis(1.0, 1), {FixedMarginal{r0}, FixedMarginal{r1}});
  SolverConfig cfg;
  cfg.marginal_tolerance = 1e-14;
  const auto r = solve(s, eps, cfg);
  const auto dense = oracle::dense_solve(s, eps, 1e-14);

  double marg = 0.0, pair = 0.0;
  for (int k = 0; k <= 1; ++k) {
    const Field a = r.frames[k], b = dense.marginal(k);
    for (std::size_t i = 0; i < g.size(); ++i) marg = std::max(marg, std::abs(a[i] - b[i]));
  }
  const auto pa = pair_marginal_at(r.state, build_heat_kernel(g, 1.0, eps), 0);
  const auto pb = dense.pair_marginal(0, 1);
  for (std::size_t i = 0; i < pa.size(); ++i) pair = std::max(pair, std::abs(pa[i] - pb[i]));

  // Oracle objectives: primal is H(plan | R), dual is sum_k <log a_k, rho_k> - (mass - 1).
  const double oracle_primal = dense.relative_entropy() - dense.mass() + 1.0;
  double oracle_dual = -(dense.mass() - 1.0);
  const Field* targets[] = {&r0, &r1};
  for (int k = 0; k <= 1; ++k) {
    for (std::size_t i = 0; i < g.size(); ++i) oracle_dual += std::log(dense.scalings[k][i]) * (*targets[k])[i] * g.cell_volume();
  }
  const double dp = std::abs(r.report.primal_objective - oracle_primal);
  const double dd = std::abs(r.report.dual_objective - oracle_dual);
  const double t = clock.seconds();
  return {marg <= 1e-10 && pair <= 1e-10 && dp <= 1e-8 && dd <= 1e-8 && t < 5.0,
          fmt("marginals %.1e, plan %.1e, primal %.1e, dual %.1e, %.2fs", marg, pair, dp, dd, t)};
}

Outcome markov_identity() {
  Rng rng(1003);
  Stopwatch clock;
  const GridSpec g(1, 16);
  const int N = 4;
  const double eps = 0.1;
  std::vector<Field> mus;
  std::vector<CostSpec> costs;
  for (int k = 0; k <= N; ++k) {
    mus.push_back(smooth_density(rng, g));
    costs.emplace_back(FixedMarginal{mus.back()});
  }
  const CostSchedule s(g, TimeAxis(1.0, N), costs);
  SolverConfig cfg;
  cfg.marginal_tolerance = 1e-13;
  const auto r = solve(s, eps, cfg);
  const double dt = s.time().dt();
  const double joint = plan_entropy(r.state);
  const double glued = oracle::pairwise_bridge_objective(mus, eps, dt, 1e-14);
  const double rel = std::abs(joint - glued) / std::abs(glued);
  const auto K = build_heat_kernel(g, dt, eps);
  double pair = 0.0;
  for (int k = 0; k < N; ++k) {
    const auto pa = pair_marginal_at(r.state, K, k);
    const auto pb = oracle::dense_bridge(mus[k], mus[k + 1], eps, dt, 1e-14).pair_marginal(0, 1);
    for (std::size_t i = 0; i < pa.size(); ++i) pair = std::max(pair, std::abs(pa[i] - pb[i]));
  }
  const double t = clock.seconds();
  return {rel <= 1e-6 && pair <= 1e-8 && t < 30.0,
          fmt("entropy relative diff %.1e, pair marginals %.1e, %.2fs", rel, pair, t)};
}

Outcome uniform_invariance() {
  Stopwatch clock;
  const GridSpec g(2, 32);
  const Field u(g, 1.0);
  std::vector<CostSpec> costs{FixedMarginal{u}};
  for (int k = 1; k < 10; ++k) costs.emplace_back(Free{});
  costs.emplace_back(FixedMarginal{u});
  const auto r = solve(CostSchedule(g, TimeAxis(1.0, 10), costs), 0.1);
  double dev = 0.0;
  for (const auto& f : r.frames) {
    for (double v : f.values) dev = std::max(dev, std::abs(v - 1.0));
  }
  const double energy = kinetic_energy_estimate(r.state);
  const double t = clock.seconds();
  return {dev <= 1e-10 && energy <= 1e-10 && t < 5.0, fmt("max deviation %.1e, energy %.1e, %.2fs", dev, energy, t)};
}

Outcome congestion_cap(const SolveResult& directional, const SolveResult& symmetric) {
  // A convex congested crossing on top of the shipped nonlocal runs.
  ScenarioConfig cfg = load_config(kScenarios / "planning_eps01.yaml");
  cfg.running.type = RunningCostSpec::Type::Congestion;
  cfg.running.cap = 5.0;
  const BuiltScenario built = build_scenario(cfg);
  const auto r = solve(built.schedule, built.viscosity, built.solver);
  double excess = 0.0;
  for (int k = 1; k < cfg.steps; ++k) {
    for (double v : r.frames[k].values) excess = std::max(excess, v - 5.0);
  }
  const double top_d = max_density(directional), top_s = max_density(symmetric);
  return {excess <= 1e-8 && top_d <= 1.0 + 1e-8 && top_s <= 1.0 + 1e-8,
          fmt("crossing excess %.1e over cap 5; nonlocal max densities %.9f / %.9f (cap 1)", excess, top_d, top_s)};
}

Outcome obstacle_exclusion(const SolveResult& r, const ScenarioConfig& cfg) {
  const GridSpec g = cfg.grid();
  double worst = 0.0;
  for (int k = 0; k <= cfg.steps; ++k) {
    const double t = cfg.horizon * k / cfg.steps;
    for (const auto& o : cfg.obstacles) {
      const double s = t / cfg.horizon * static_cast<double>(o.waypoints.size() - 1);
      const std::size_t seg = std::min<std::size_t>(static_cast<std::size_t>(s), o.waypoints.size() - 2);
      const double cx = o.waypoints[seg][0] + (s - seg) * (o.waypoints[seg + 1][0] - o.waypoints[seg][0]);
      const double cy = o.waypoints[seg][1] + (s - seg) * (o.waypoints[seg + 1][1] - o.waypoints[seg][1]);
      double mass = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const auto idx = g.unravel(i);
        const double dx = g.center(idx[0]) - cx, dy = g.center(idx[1]) - cy;
        if (dx * dx + dy * dy < o.radius * o.radius) mass += r.frames[k][i] * g.cell_volume();
      }
      worst = std::max(worst, mass);
    }
  }
  return {worst <= 1e-12, fmt("max mass inside a disk %.1e over %d time indices", worst, cfg.steps + 1)};
}

Outcome duality(const std::vector<const SolveResult*>& runs) {
  double worst_gap = 0.0, worst_drop = 0.0;
  for (const SolveResult* r : runs) {
    const double gap = relative_gap(r->report.primal_objective, r->report.dual_objective);
    worst_gap = std::max(worst_gap, gap);
    const auto& trace = r->report.dual_trace;
    for (std::size_t i = 1; i < trace.size(); ++i) worst_drop = std::max(worst_drop, trace[i - 1] - trace[i]);
  }
  return {worst_gap <= 1e-6 && worst_drop <= 1e-10,
          fmt("max relative gap %.1e, largest dual decrease %.1e over %zu scenarios", worst_gap, worst_drop, runs.size())};
}

Outcome viscosity_monotonicity(const std::vector<Run>& runs) {
  std::vector<double> ent, energy, seconds;
  for (const auto& run : runs) {
    const SolveResult& r = run.result;
    seconds.push_back(run.seconds);
    const int mid = r.state.steps() / 2;
    ent.push_back(-entropy(r.frames[mid]));
    energy.push_back(kinetic_energy_estimate(r.state));
  }
  // Order: eps = 1, 0.1, 0.01.
  const bool ent_ok = ent[0] > ent[1] && ent[1] > ent[2];
  const bool energy_ok = energy[0] < energy[1] && energy[1] < energy[2];
  const double slowest = *std::max_element(seconds.begin(), seconds.end());
  return {ent_ok && energy_ok && slowest < 180.0,
          fmt("-Ent(mid) %.4f > %.4f > %.4f; energy %.4f < %.4f < %.4f; slowest run %.1fs", ent[0], ent[1], ent[2], energy[0],
              energy[1], energy[2], slowest)};
}

Outcome fixed_point(const SolveResult& directional, const SolveResult& symmetric) {
  const double res_d = directional.report.fixed_point_trace.empty() ? INFINITY : directional.report.fixed_point_trace.back();
  const double res_s = symmetric.report.fixed_point_trace.empty() ? INFINITY : symmetric.report.fixed_point_trace.back();
  // Point reflection through the initial center, which sits on cell (32, 32).
  const GridSpec g = symmetric.frames.front().grid;
  const int m = g.points_per_dim();
  double asym = 0.0;
  for (const auto& f : symmetric.frames) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto idx = g.unravel(i);
      const std::size_t j = g.ravel({(m - idx[0]) % m, (m - idx[1]) % m, 0});
      asym = std::max(asym, std::abs(f[i] - f[j]));
    }
  }
  const double top = std::max(max_density(directional), max_density(symmetric));
  return {res_d < 1e-6 && res_s < 1e-6 && asym <= 1e-6 && top <= 1.0 + 1e-8,
          fmt("outer residuals %.1e / %.1e (%d / %d iterations), reflection asymmetry %.1e, max density %.9f", res_d, res_s,
              directional.report.outer_iterations, symmetric.report.outer_iterations, asym, top)};
}

// Restricted dual of one cell, written from the definition of each cost.
double cell_dual(int which, double u, double c, double rho, double cap, double V, double w) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  double conj = 0.0;
  switch (which) {
    case 0:
      if (u < 0.0) return kNegInf;
      break;
    case 1: conj = u * rho; break;
    case 2: conj = -cap * std::max(-u, 0.0); break;
    case 3:
      if (u < -w * V) return kNegInf;
      break;
    default: conj = -cap * std::max(-u - w * V, 0.0);
  }
  return conj - c * std::exp(u);
}

Outcome prox_scan() {
  Rng rng(1010);
  Stopwatch clock;
  const GridSpec g(1, 1);
  double worst = 0.0, mismatch = 0.0;
  int checked = 0;
  for (int which = 0; which < 5; ++which) {
    for (int trial = 0; trial < 1000; ++trial) {
      const double c = rng.log_uniform(1e-3, 1e3), rho = rng.log_uniform(1e-3, 10.0);
      const double cap = rng.log_uniform(1.0, 10.0), V = rng.uniform(-5.0, 5.0), w = rng.log_uniform(1e-3, 1.0);
      CostSpec cost;
      switch (which) {
        case 0: cost = Free{}; break;
        case 1: cost = FixedMarginal{Field(g, rho)}; break;
        case 2: cost = Congestion{cap}; break;
        case 3: cost = Potential{Field(g, V)}; break;
        default: cost = CongestionPlusPotential{cap, Field(g, V)};
      }
      const double u = prox_update_log(cost, Field(g, std::log(c)), w)[0];
      const double a = prox_update(cost, Field(g, c), w)[0];
      mismatch = std::max(mismatch, std::abs(std::exp(u) - a) / a);
      const double at = cell_dual(which, u, c, rho, cap, V, w);
      double scan = -std::numeric_limits<double>::infinity();
      for (int s = 0; s <= 40000; ++s) scan = std::max(scan, cell_dual(which, -25.0 + 1.25e-3 * s, c, rho, cap, V, w));
      worst = std::max(worst, scan - at);
      ++checked;
    }
  }
  const double t = clock.seconds();
  return {worst <= 1e-9 && mismatch <= 1e-12 && t < 10.0,
          fmt("%d tuples, worst scan advantage %.1e, log/linear mismatch %.1e, %.2fs", checked, worst, mismatch, t)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* title, const std::function<Outcome()>& run) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, title, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "kernel mass conservation", kernel_mass);
  report(2, "two-marginal oracle equivalence", two_marginal_oracle);
  report(3, "pairwise bridge identity", markov_identity);
  report(4, "uniform invariance", uniform_invariance);

  // Shipped scenario runs shared by the remaining criteria.
  std::vector<Run> planning, obstacles;
  for (const char* eps : {"1", "01", "001"}) planning.push_back(run_shipped(std::string("planning_eps") + eps));
  for (const char* eps : {"1", "01", "001"}) obstacles.push_back(run_shipped(std::string("obstacles_eps") + eps));
  const Run directional = run_shipped("nonlocal_directional");
  const Run symmetric = run_shipped("nonlocal_symmetric");
  auto guarded = [](std::vector<const Run*> runs, std::function<Outcome()> run) {
    return [runs, run]() -> Outcome {
      for (const Run* r : runs) {
        if (!r->error.empty()) return {false, r->name + ": " + r->error};
      }
      return run();
    };
  };
  std::vector<const Run*> all_planning{&planning[0], &planning[1], &planning[2]};
  std::vector<const Run*> convex = all_planning;
  for (const auto& r : obstacles) convex.push_back(&r);

  report(5, "congestion cap", guarded({&directional, &symmetric}, [&] { return congestion_cap(directional.result, symmetric.result); }));
  report(6, "obstacle exclusion", guarded({&obstacles[0]}, [&] {
           return obstacle_exclusion(obstacles[0].result, load_config(kScenarios / "obstacles_eps1.yaml"));
         }));
  report(7, "duality gap", guarded(convex, [&] {
           std::vector<const SolveResult*> rs;
           for (const Run* r : convex) rs.push_back(&r->result);
           return duality(rs);
         }));
  report(8, "viscosity monotonicity", guarded(all_planning, [&] { return viscosity_monotonicity(planning); }));
  report(9, "nonlocal fixed point", guarded({&directional, &symmetric}, [&] { return fixed_point(directional.result, symmetric.result); }));
  report(10, "prox optimality", prox_scan);

  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
