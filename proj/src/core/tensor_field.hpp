// SPDX-License-Identifier: Apache-2.0
//
// Geometric tensor fields over graph vertices and the equivariant algebra
// driven by an isometric adjacency matrix (IsoAM).
//
// Layout conventions used throughout:
//   * TensorField data is row-major [vertex][feature][k1]...[kp], so the
//     spatial block of one (vertex, feature) pair holds dim^p contiguous values.
//   * Operations that raise the rank prepend the new spatial index.
//   * contract() consumes the leading spatial index of the field.
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "core/common.hpp"

namespace isogcn {

class TensorField {
 public:
  TensorField() = default;
  TensorField(int rank, std::size_t n_vertices, std::size_t n_features, int dim = 3);
  TensorField(int rank, std::size_t n_vertices, std::size_t n_features, int dim,
              std::vector<double> data);

  int rank() const noexcept { return rank_; }
  int dim() const noexcept { return dim_; }
  std::size_t n_vertices() const noexcept { return n_vertices_; }
  std::size_t n_features() const noexcept { return n_features_; }
  /// Number of spatial components per (vertex, feature): dim^rank.
  std::size_t components() const noexcept { return components_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  double& at(std::size_t i, std::size_t g, std::size_t c) {
    return data_[(i * n_features_ + g) * components_ + c];
  }
  double at(std::size_t i, std::size_t g, std::size_t c) const {
    return data_[(i * n_features_ + g) * components_ + c];
  }

  bool same_shape(const TensorField& other) const noexcept {
    return rank_ == other.rank_ && dim_ == other.dim_ && n_vertices_ == other.n_vertices_ &&
           n_features_ == other.n_features_;
  }

 private:
  int rank_ = 0;
  int dim_ = 3;
  std::size_t n_vertices_ = 0;
  std::size_t n_features_ = 0;
  std::size_t components_ = 1;
  std::vector<double> data_;
};

/// Sparse |V|x|V|xd adjacency tensor. The d spatial components share one
/// compressed-row pattern; values are interleaved per entry (entry e,
/// component k lives at values[e * dim + k]).
class IsoAM {
 public:
  IsoAM() = default;
  IsoAM(std::size_t n_vertices, int dim, std::vector<std::size_t> row_ptr,
        std::vector<std::uint32_t> col_index, std::vector<double> values);

  std::size_t n_vertices() const noexcept { return n_vertices_; }
  int dim() const noexcept { return dim_; }
  std::size_t nnz() const noexcept { return col_index_.size(); }

  std::span<const std::size_t> row_ptr() const noexcept { return row_ptr_; }
  std::span<const std::uint32_t> col_index() const noexcept { return col_index_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double value(std::size_t entry, int k) const { return values_[entry * dim_ + k]; }

  /// Value at (i, j, k) or 0 when (i, j) is outside the pattern.
  double coeff(std::size_t i, std::size_t j, int k) const;

  IsoAM transposed() const;

 private:
  std::size_t n_vertices_ = 0;
  int dim_ = 3;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::uint32_t> col_index_;
  std::vector<double> values_;
};

/// Plain CSR matrix, the result of contracting an IsoAM with itself.
struct SparseMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_index;
  std::vector<double> values;

  double coeff(std::size_t i, std::size_t j) const;
  /// y = L x applied feature-wise to a rank-0 field.
  TensorField apply(const TensorField& x) const;
};

/// x -> U x + t with U orthogonal (rotations and reflections).
struct Isometry {
  int dim = 3;
  std::vector<double> rotation;     // dim x dim, row-major
  std::vector<double> translation;  // dim

  Isometry() = default;
  Isometry(int dim, std::vector<double> rotation, std::vector<double> translation);

  static Isometry identity(int dim = 3);
  /// U from the QR factorisation of a Gaussian matrix, t uniform in
  /// [-translation_range, translation_range]^dim.
  static Isometry random(std::mt19937_64& rng, int dim = 3, double translation_range = 10.0);

  double u(int row, int col) const { return rotation[row * dim + col]; }
  void apply_point(std::span<const double> x, std::span<double> out) const;
  std::vector<double> transform_positions(std::span<const double> positions) const;
};

enum class FieldKind { PositionLike, TensorLike };

TensorField convolve(const IsoAM& g, const TensorField& h0);
TensorField contract(const IsoAM& g, const TensorField& h);
TensorField tensor_prod(const IsoAM& g, const TensorField& h);
SparseMatrix self_contract(const IsoAM& g);

/// Upper bound on |V| * f * d^p for power_apply / power_contract outputs.
inline constexpr std::size_t kDefaultPowerCap = std::size_t{1} << 31;

/// (G^{(x)p}) * H0 evaluated right to left; the dense tensor power is never
/// formed.
TensorField power_apply(const IsoAM& g, int p, const TensorField& h0,
                        std::size_t cap = kDefaultPowerCap);

/// (G^{(x)p}) . H of rank |p - q|. The innermost IsoAM factor pairs with the
/// leading index of H; for p >= q the remaining p - q factors contribute the
/// free indices of the result.
TensorField power_contract(const IsoAM& g, int p, const TensorField& h,
                           std::size_t cap = kDefaultPowerCap);

TensorField transform_field(const Isometry& t, const TensorField& h, FieldKind kind);

}  // namespace isogcn
