// SPDX-License-Identifier: Apache-2.0
//
// Mesh-derived IsoAM instances: the least-squares gradient stencil D and its
// row-sum-free counterpart D~ = D - diag(row sums).
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "core/mesh.hpp"
#include "core/tensor_field.hpp"

namespace isogcn {

enum class WeightKind { ConstantOne, VolumeRatio };

const char* weight_kind_name(WeightKind kind) noexcept;
WeightKind weight_kind_from_name(const std::string& name);

/// Untrainable edge weight w_ij. VolumeRatio uses V_eff[j] / V_eff[i].
struct WeightScheme {
  WeightKind kind = WeightKind::ConstantOne;
  std::vector<double> vertex_volume;

  static WeightScheme constant_one() { return {}; }
  static WeightScheme volume_ratio(std::vector<double> effective_volumes);

  double operator()(std::size_t i, std::size_t j) const {
    return kind == WeightKind::ConstantOne ? 1.0 : vertex_volume[j] / vertex_volume[i];
  }
};

/// Per-vertex moment matrices M_i and their (pseudo-)inverses, dim x dim
/// row-major blocks.
struct MomentMatrixSet {
  int dim = 3;
  std::vector<double> matrices;
  std::vector<double> inverses;
  std::vector<std::uint8_t> pseudo_inverse;
  std::vector<double> condition;

  std::size_t size() const noexcept { return pseudo_inverse.size(); }
  double m(std::size_t i, int r, int c) const { return matrices[(i * dim + r) * dim + c]; }
  double inv(std::size_t i, int r, int c) const { return inverses[(i * dim + r) * dim + c]; }
};

inline constexpr double kDefaultRcond = 1e-8;

/// positions: flat |V| x dim array.
MomentMatrixSet moment_matrices(std::span<const double> positions, int dim,
                                const AdjacencyMatrix& a_m, const WeightScheme& w,
                                double rcond = kDefaultRcond);

IsoAM build_D(std::span<const double> positions, int dim, const AdjacencyMatrix& a_m,
              const WeightScheme& w, const MomentMatrixSet& moments);

/// D~ with explicit diagonal entries; pattern = pattern(D) + diagonal.
IsoAM build_D_tilde(const IsoAM& d);

/// sqrt(mean over samples and vertices of |D~_ii|^2).
double scaling_factor(std::span<const IsoAM> samples);
double scaling_factor(std::span<const IsoAM* const> samples);
/// Every component divided by factor.
IsoAM scale_isoam(const IsoAM& g, double factor);

struct IsoAMOptions {
  int m_hops = 1;
  WeightKind weights = WeightKind::ConstantOne;
  double rcond = kDefaultRcond;
};

/// Adjacency, moment matrices, D and D~ in one call. Returns unscaled D~.
IsoAM build_isoam(const Mesh& mesh, const IsoAMOptions& options);

/// Binary IsoAM file: one JSON header line, then little-endian arrays
/// row[nnz] (int64), col[nnz] (int64), values[nnz * dim] (float64).
void save_isoam(const IsoAM& g, double factor, const std::filesystem::path& path);
struct LoadedIsoAM {
  IsoAM isoam;
  double factor = 1.0;
};
LoadedIsoAM load_isoam(const std::filesystem::path& path);

}  // namespace isogcn
