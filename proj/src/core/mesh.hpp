// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "core/tensor_field.hpp"

namespace isogcn {

enum class CellKind : std::uint8_t { Tetrahedron, Hexahedron };

/// Node count of a cell kind (4 or 8).
std::size_t cell_size(CellKind kind) noexcept;
const char* cell_kind_name(CellKind kind) noexcept;

struct CellView {
  CellKind kind;
  std::span<const std::uint32_t> nodes;
};

/// Vertex positions plus tetrahedral / hexahedral cells. Hexahedra use the
/// VTK node ordering. Cells are stored flat so million-vertex meshes stay
/// compact.
class Mesh {
 public:
  Mesh() = default;
  Mesh(std::vector<double> positions, std::vector<CellKind> kinds,
       std::vector<std::uint32_t> nodes);

  static constexpr int dim() noexcept { return 3; }
  std::size_t n_vertices() const noexcept { return positions_.size() / 3; }
  std::size_t n_cells() const noexcept { return kinds_.size(); }

  std::span<const double> positions() const noexcept { return positions_; }
  std::span<const double> position(std::size_t i) const {
    return std::span<const double>(positions_).subspan(i * 3, 3);
  }
  CellView cell(std::size_t c) const {
    return {kinds_[c], std::span<const std::uint32_t>(nodes_).subspan(offsets_[c], offsets_[c + 1] - offsets_[c])};
  }
  std::span<const CellKind> kinds() const noexcept { return kinds_; }

  /// Same connectivity, new vertex positions (validated again).
  Mesh with_positions(std::vector<double> positions) const;

  /// Per-cell volume; hexahedra are split into six tetrahedra.
  std::vector<double> cell_volumes() const;
  double total_volume() const;

 private:
  std::vector<double> positions_;
  std::vector<CellKind> kinds_;
  std::vector<std::uint32_t> nodes_;
  std::vector<std::size_t> offsets_{0};
};

double tet_signed_volume(std::span<const double> a, std::span<const double> b,
                         std::span<const double> c, std::span<const double> d);

/// Boolean sparse pattern, symmetric with an empty diagonal. Columns are
/// sorted within each row.
struct AdjacencyMatrix {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_index;

  std::size_t nnz() const noexcept { return col_index.size(); }
  std::size_t degree(std::size_t i) const { return row_ptr[i + 1] - row_ptr[i]; }
  bool contains(std::size_t i, std::size_t j) const;
};

/// Axis-aligned hexahedral grid with nx*ny*nz cells of edge length spacing.
Mesh generate_hex_box(int nx, int ny, int nz, double spacing = 1.0);

struct GridMeshOptions {
  double min_spacing = 0.5;
  double max_spacing = 1.5;
};

/// Pseudo-2D grid: nx*ny hexahedra, one cell in z, with a per-sample uniform
/// random edge length.
Mesh generate_grid_mesh(int nx, int ny, std::uint64_t seed, const GridMeshOptions& options = {});

struct TetMeshOptions {
  double spacing = 1.0;
  /// Fraction of cubes removed from one corner block (0 keeps the full box).
  std::array<double, 3> notch{0.0, 0.0, 0.0};
  int max_retries = 32;
};

/// Structured box where every cube is split into six tetrahedra sharing the
/// cube diagonal. Interior vertices are perturbed by
/// jitter * spacing * uniform(-1, 1)^3.
Mesh generate_tet_mesh(int nx, int ny, int nz, double jitter, std::uint64_t seed,
                       const TetMeshOptions& options = {});

AdjacencyMatrix adjacency(const Mesh& mesh);
AdjacencyMatrix m_hop_adjacency(const AdjacencyMatrix& a, int m);

/// Vertex -> incident cells in compressed form.
struct VertexCells {
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> cells;
};
VertexCells vertex_cells(const Mesh& mesh);

/// Sum of V_e / 4 over incident tetrahedra (V_e / 8 for hexahedra).
std::vector<double> effective_volume(const Mesh& mesh);
/// Mean volume of incident cells.
std::vector<double> mean_volume(const Mesh& mesh);

/// Shifts and uniformly rescales the mesh so it fits the unit cube with its
/// longest edge equal to one.
Mesh rescale_to_unit_cube(const Mesh& mesh);

struct BoundingBox {
  std::array<double, 3> lo{0, 0, 0};
  std::array<double, 3> hi{0, 0, 0};
};
BoundingBox bounding_box(const Mesh& mesh);

Mesh load_mesh(const std::filesystem::path& path);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh mesh_from_json_text(const std::string& text);
std::string mesh_to_json_text(const Mesh& mesh);

/// Legacy ASCII VTK with one point-data array per feature.
void export_vtk(const Mesh& mesh, const std::map<std::string, TensorField>& fields,
                const std::filesystem::path& path);

}  // namespace isogcn
