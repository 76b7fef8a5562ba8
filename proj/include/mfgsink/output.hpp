#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "json.hpp"
#include "mfgsink/diagnostics.hpp"
#include "mfgsink/error.hpp"
#include "mfgsink/grid.hpp"
#include "mfgsink/scenario.hpp"
#include "mfgsink/sinkhorn.hpp"

namespace mfgsink {

inline constexpr const char* kVersion = "0.1.0";

struct FrameEntry {
  int index = 0;
  std::string file;
  std::uint32_t crc32 = 0;
};

struct RunManifest {
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json residuals = nlohmann::ordered_json::object();
  nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
  std::vector<FrameEntry> frames;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["versions"] = {{"mfgsink", kVersion}};
    j["config"] = config;
    j["residuals"] = residuals;
    j["metrics"] = metrics;
    auto list = nlohmann::ordered_json::array();
    for (const auto& f : frames) list.push_back({{"k", f.index}, {"file", f.file}, {"crc32", f.crc32}});
    j["frames"] = list;
    return j;
  }
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::uint32_t write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline std::string frame_name(int k, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%04d.%s", k, ext);
  return buf;
}

// One line per run of the last dimension.
inline std::string csv_bytes(const Field& f) {
  const int m = f.grid.points_per_dim();
  std::string s;
  s.reserve(f.size() * 24);
  for (std::size_t i = 0; i < f.size(); ++i) {
    s += format_double(f[i]);
    s += (i + 1) % static_cast<std::size_t>(m) == 0 ? '\n' : ',';
  }
  return s;
}

// 16-bit binary PGM, big-endian samples, width = points per dimension.
inline std::string pgm_bytes(const Field& f, double scale_max) {
  const std::size_t width = static_cast<std::size_t>(f.grid.points_per_dim());
  const std::size_t height = f.size() / width;
  std::string s = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n65535\n";
  for (double v : f.values) {
    const double t = scale_max > 0.0 ? std::clamp(v / scale_max, 0.0, 1.0) : 0.0;
    const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
    s += static_cast<char>(q >> 8);
    s += static_cast<char>(q & 0xff);
  }
  return s;
}

}  // namespace detail

/**
 * Writes one file per time index into `dir` (created if needed) and returns a
 * manifest listing them with CRC-32 checksums. PGM frames share one intensity
 * scale, the largest density over all frames.
 */
inline RunManifest write_frames(const std::vector<Field>& marginals, const std::filesystem::path& dir, FrameFormat format) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
  double scale_max = 0.0;
  for (const auto& f : marginals) {
    for (double v : f.values) scale_max = std::max(scale_max, v);
  }
  RunManifest manifest;
  for (std::size_t k = 0; k < marginals.size(); ++k) {
    const int idx = static_cast<int>(k);
    if (format == FrameFormat::Csv || format == FrameFormat::Both) {
      const auto name = detail::frame_name(idx, "csv");
      manifest.frames.push_back({idx, name, detail::write_bytes(dir / name, detail::csv_bytes(marginals[k]))});
    }
    if (format == FrameFormat::Pgm || format == FrameFormat::Both) {
      const auto name = detail::frame_name(idx, "pgm");
      manifest.frames.push_back({idx, name, detail::write_bytes(dir / name, detail::pgm_bytes(marginals[k], scale_max))});
    }
  }
  return manifest;
}

inline void write_manifest(const RunManifest& manifest, const std::filesystem::path& dir) {
  detail::write_bytes(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
}

inline std::uint32_t file_crc32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline nlohmann::ordered_json residuals_json(const ConvergenceReport& r) {
  nlohmann::ordered_json j;
  j["converged"] = r.converged;
  j["sweeps"] = r.sweeps;
  j["outer_iterations"] = r.outer_iterations;
  j["log_domain"] = r.log_domain;
  auto per_index = nlohmann::ordered_json::array();
  for (const auto& [k, v] : r.marginal_residuals) per_index.push_back({{"k", k}, {"residual", v}});
  j["marginal"] = per_index;
  j["max_marginal"] = r.max_marginal_residual;
  j["last_potential_change"] = r.last_potential_change;
  j["fixed_point"] = r.fixed_point_trace;
  j["inner_sweeps"] = r.inner_sweeps;
  return j;
}

inline nlohmann::ordered_json metrics_json(const RunMetrics& m) {
  nlohmann::ordered_json j;
  j["entropy"] = m.entropy;
  j["fisher_information"] = m.fisher_information;
  j["fisher_degenerate"] = m.fisher_degenerate;
  j["plan_entropy"] = m.plan_entropy;
  j["kinetic_energy"] = m.kinetic_energy;
  j["primal_objective"] = m.primal_objective;
  j["dual_objective"] = m.dual_objective;
  j["duality_gap"] = m.duality_gap;
  j["congestion_violation"] = m.congestion_violation;
  j["obstacle_mass"] = m.obstacle_mass;
  return j;
}

struct RunOutcome {
  SolveResult result;
  RunMetrics metrics;
  RunManifest manifest;
  bool converged = false;
  std::string message;
};

/**
 * Builds, solves and writes a scenario. A run that hits an iteration cap still
 * writes its frames and manifest; `converged` tells the two cases apart.
 */
inline RunOutcome run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out_dir) {
  const BuiltScenario built = build_scenario(cfg);
  RunOutcome out;
  try {
    out.result = solve(built.schedule, built.viscosity, built.solver);
    out.converged = true;
  } catch (const MaxIterationsError& e) {
    out.result = e.result();
    out.message = e.what();
  }
  if (!out.result.state.messages_valid()) throw Error(ErrorKind::MaxIterations, "solver produced no usable state");
  out.metrics = compute_metrics(out.result.state, out.result.effective_schedule);
  out.manifest = write_frames(out.result.frames, out_dir, cfg.format);
  out.manifest.config = config_to_json(cfg);
  out.manifest.residuals = residuals_json(out.result.report);
  out.manifest.metrics = metrics_json(out.metrics);
  write_manifest(out.manifest, out_dir);
  return out;
}

}  // namespace mfgsink
