// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "core/dataset.hpp"
#include "core/mesh.hpp"
#include "core/tensor_field.hpp"

namespace isogcn {

// Discrete differential operators expressed with D~.
TensorField gradient(const IsoAM& dt, const TensorField& h0);
TensorField divergence(const IsoAM& dt, const TensorField& h1);
TensorField laplacian(const IsoAM& dt, const TensorField& h0);
TensorField jacobian(const IsoAM& dt, const TensorField& h1);
TensorField hessian(const IsoAM& dt, const TensorField& h0);

/// One cosine mode a * cos(k . (x - origin) + phase).
struct FourierMode {
  double amplitude = 0.0;
  std::array<double, 3> wavevector{0, 0, 0};
  double phase = 0.0;
};

/// Truncated Fourier series with closed-form derivatives.
class AnalyticField {
 public:
  AnalyticField() = default;
  AnalyticField(std::vector<FourierMode> modes, std::array<double, 3> origin);

  double value(std::span<const double> x) const;
  std::array<double, 3> gradient(std::span<const double> x) const;
  /// Row-major 3x3.
  std::array<double, 9> hessian(std::span<const double> x) const;
  double laplacian(std::span<const double> x) const;

  const std::vector<FourierMode>& modes() const noexcept { return modes_; }

 private:
  std::vector<FourierMode> modes_;
  std::array<double, 3> origin_{0, 0, 0};
};

struct AnalyticFieldOptions {
  /// Zero the z wavenumber (pseudo-2D grids have a single cell layer in z).
  bool planar = false;
  /// Modes drawn per order.
  int modes_per_order = 1;
};

/// Orders 2..max_order; an order-n mode has integer half-wave counts with
/// max(|p|,|q|,|r|) = n across the box, amplitude ~ Normal(0, 1/n^2), phase
/// uniform in [0, 2 pi).
AnalyticField make_analytic_field(const BoundingBox& box, int max_order, std::uint64_t seed,
                                  const AnalyticFieldOptions& options = {});

enum class DiffTask { ScalarToGradient, ScalarToHessian, GradientToLaplacian, GradientToHessian };

const char* diff_task_name(DiffTask task) noexcept;  // "0->1", ...
DiffTask diff_task_from_name(const std::string& name);
/// Input / target field names and ranks for a task.
struct TaskSignature {
  std::string input;
  int input_rank;
  std::string target;
  int target_rank;
};
TaskSignature task_signature(DiffTask task);

struct DiffopDatasetOptions {
  int max_order = 3;
  int m_hops = 1;
  GridMeshOptions grid;
};

/// Fresh grid mesh and analytic field per sample; D~ (w = 1) attached.
std::vector<Sample> make_diffop_samples(DiffTask task, std::size_t n_samples,
                                        std::pair<int, int> grid_range, std::uint64_t seed,
                                        const DiffopDatasetOptions& options = {});

/// One sample list per split; split k draws from seed + k * 1000003.
Dataset make_diffop_dataset(DiffTask task, const std::vector<std::pair<std::string, std::size_t>>& splits,
                            std::pair<int, int> grid_range, std::uint64_t seed,
                            const DiffopDatasetOptions& options = {});

/// Vertices whose neighbourhood within `hops` graph hops contains no vertex on
/// the bounding-box surface.
std::vector<std::uint8_t> interior_mask(const Mesh& mesh, const AdjacencyMatrix& a, int hops);

}  // namespace isogcn
