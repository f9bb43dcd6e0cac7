// SPDX-License-Identifier: Apache-2.0
//
// Anisotropic nonlinear heat diffusion dT/dt = div(C(T) grad T) on tetrahedral
// meshes, discretised with the volume-weighted D~ and explicit sub-stepping.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "core/dataset.hpp"
#include "core/training.hpp"

namespace isogcn {

/// C(T) = C(-1) * (1 - (T + 1) / 4), uniform over a sample.
struct ConductivityModel {
  std::array<double, 9> base{};  // C(-1), row-major

  std::array<double, 9> at(double temperature) const;
  /// dC/dT = -C(-1) / 4.
  std::array<double, 9> slope() const;
  static double factor(double temperature) { return 1.0 - (temperature + 1.0) / 4.0; }
};

/// C(-1) = Q diag(lambda) Q^T with Q random orthogonal and lambda uniform in
/// [0, max_eigenvalue].
ConductivityModel random_conductivity(std::uint64_t seed, double max_eigenvalue = 0.02);

/// D~ with volume-ratio weights, the spatial operator of the reference solver.
IsoAM heat_operator(const Mesh& mesh);

/// div(C(T) grad T) at every vertex.
std::vector<double> heat_rhs(const IsoAM& dt, std::span<const double> temperature, const ConductivityModel& c);

/// T + dt * div(C(T) grad T).
std::vector<double> heat_step(const IsoAM& op, std::span<const double> temperature, const ConductivityModel& c,
                              double dt);

/// safety * 2 / rho, rho the spectral radius of T -> div(C grad T) estimated by
/// power iteration with C = C(T_min), T_min = -max|T0|.
double stable_time_step(const IsoAM& op, const ConductivityModel& c, double max_abs_temperature,
                        double safety = 0.5, int iterations = 200, std::uint64_t seed = 0);

struct SimulationOptions {
  double t_end = 1.0;
  int n_snapshots = 5;
  /// Upper bound on the sub-step; the stability bound may lower it further.
  double max_dt = 5e-4;
  double safety = 0.5;
};

struct SimulationResult {
  /// One vector per snapshot at t_end * k / n_snapshots, k = 1..n_snapshots.
  std::vector<std::vector<double>> snapshots;
  std::vector<double> times;
  double dt = 0.0;
  std::size_t steps = 0;
};

/// Errors with a Numeric code when max|T| grows beyond 10x its initial value.
SimulationResult simulate(const IsoAM& op, std::span<const double> t0, const ConductivityModel& c,
                          const SimulationOptions& options = {});

/// RMS difference of the final snapshot between dt and dt / 2.
double self_convergence(const IsoAM& op, std::span<const double> t0, const ConductivityModel& c,
                        const SimulationOptions& options = {});

struct HeatDatasetOptions {
  std::size_t n_shapes = 10;
  /// Base cell counts; each shape is meshed once per entry (at most 3).
  std::vector<int> resolutions{5};
  std::size_t n_conditions = 3;
  double jitter = 0.2;
  int max_order = 10;
  /// Shape-level split fractions; the remainder goes to "test".
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  SimulationOptions simulation;
};

/// Rank-0 T0, V_eff, V_mean and rank-2 C inputs; target T holds the five
/// snapshots as features.
Dataset make_heat_dataset(std::uint64_t seed, const HeatDatasetOptions& options = {});

struct BenchOptions {
  int repetitions = 3;
  /// Sizes whose estimated footprint exceeds this are reported as "oom".
  std::size_t memory_limit_bytes = std::size_t{4} << 30;
  std::uint64_t seed = 0;
};

struct BenchEntry {
  std::size_t vertices = 0;
  std::size_t nnz = 0;
  double preprocess_s = 0.0;
  double inference_s = 0.0;
  std::string status = "ok";
  std::string message;
};

nlohmann::json bench_entry_to_json(const BenchEntry& e);
BenchEntry bench_entry_from_json(const nlohmann::json& j);

/// Structured tetrahedral boxes with about `vertices` vertices each; the
/// fastest of the repetitions is reported. Runs single-threaded.
std::vector<BenchEntry> benchmark_inference(const Surrogate& s, const std::vector<std::size_t>& sizes,
                                            const BenchOptions& options = {});

}  // namespace isogcn
