// SPDX-License-Identifier: Apache-2.0
#include "core/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace isogcn {

namespace {

constexpr double kMinCellVolume = 1e-14;

// Six tetrahedra around the 0-6 diagonal of a VTK-ordered hexahedron. The
// split is conforming between neighbouring cubes of a structured grid.
constexpr std::array<std::array<int, 4>, 6> kHexTets{{
    {0, 1, 2, 6}, {0, 2, 3, 6}, {0, 3, 7, 6}, {0, 7, 4, 6}, {0, 4, 5, 6}, {0, 5, 1, 6},
}};

double hex_volume(const Mesh& mesh, std::span<const std::uint32_t> n) {
  double v = 0.0;
  for (const auto& t : kHexTets) {
    v += tet_signed_volume(mesh.position(n[t[0]]), mesh.position(n[t[1]]),
                           mesh.position(n[t[2]]), mesh.position(n[t[3]]));
  }
  return v;
}

}  // namespace

std::size_t cell_size(CellKind kind) noexcept { return kind == CellKind::Tetrahedron ? 4 : 8; }

const char* cell_kind_name(CellKind kind) noexcept {
  return kind == CellKind::Tetrahedron ? "tet" : "hex";
}

double tet_signed_volume(std::span<const double> a, std::span<const double> b,
                         std::span<const double> c, std::span<const double> d) {
  const double u0 = b[0] - a[0], u1 = b[1] - a[1], u2 = b[2] - a[2];
  const double v0 = c[0] - a[0], v1 = c[1] - a[1], v2 = c[2] - a[2];
  const double w0 = d[0] - a[0], w1 = d[1] - a[1], w2 = d[2] - a[2];
  const double det = u0 * (v1 * w2 - v2 * w1) - u1 * (v0 * w2 - v2 * w0) + u2 * (v0 * w1 - v1 * w0);
  return det / 6.0;
}

Mesh::Mesh(std::vector<double> positions, std::vector<CellKind> kinds,
           std::vector<std::uint32_t> nodes)
    : positions_(std::move(positions)), kinds_(std::move(kinds)), nodes_(std::move(nodes)) {
  require(positions_.size() % 3 == 0, ErrorCode::Shape, "mesh positions must be triples");
  for (double x : positions_) {
    require(std::isfinite(x), ErrorCode::InvalidArgument, "mesh positions must be finite");
  }
  offsets_.reserve(kinds_.size() + 1);
  for (auto k : kinds_) offsets_.push_back(offsets_.back() + cell_size(k));
  require(offsets_.back() == nodes_.size(), ErrorCode::Shape,
          "mesh cell node array does not match the cell kinds");
  const std::size_t n = n_vertices();
  for (auto v : nodes_) {
    require(v < n, ErrorCode::Shape, "mesh cell references vertex " + std::to_string(v) +
                                         " but the mesh has " + std::to_string(n));
  }
  const auto vols = cell_volumes();
  for (std::size_t c = 0; c < vols.size(); ++c) {
    require(std::abs(vols[c]) > kMinCellVolume, ErrorCode::InvalidArgument,
            "mesh cell " + std::to_string(c) + " is degenerate");
  }
}

Mesh Mesh::with_positions(std::vector<double> positions) const {
  return Mesh(std::move(positions), kinds_, nodes_);
}

std::vector<double> Mesh::cell_volumes() const {
  std::vector<double> out(n_cells());
  for (std::size_t c = 0; c < n_cells(); ++c) {
    const auto cv = cell(c);
    out[c] = cv.kind == CellKind::Tetrahedron
                 ? tet_signed_volume(position(cv.nodes[0]), position(cv.nodes[1]),
                                     position(cv.nodes[2]), position(cv.nodes[3]))
                 : hex_volume(*this, cv.nodes);
    out[c] = std::abs(out[c]);
  }
  return out;
}

double Mesh::total_volume() const {
  double s = 0.0;
  for (double v : cell_volumes()) s += v;
  return s;
}

bool AdjacencyMatrix::contains(std::size_t i, std::size_t j) const {
  const auto begin = col_index.begin() + static_cast<std::ptrdiff_t>(row_ptr[i]);
  const auto end = col_index.begin() + static_cast<std::ptrdiff_t>(row_ptr[i + 1]);
  return std::binary_search(begin, end, static_cast<std::uint32_t>(j));
}

Mesh generate_hex_box(int nx, int ny, int nz, double spacing) {
  require(nx >= 1 && ny >= 1 && nz >= 1, ErrorCode::InvalidArgument,
          "grid needs at least one cell per axis");
  require(spacing > 0.0, ErrorCode::InvalidArgument, "grid spacing must be positive");
  const auto vx = static_cast<std::size_t>(nx + 1);
  const auto vy = static_cast<std::size_t>(ny + 1);
  const auto vz = static_cast<std::size_t>(nz + 1);
  std::vector<double> pos;
  pos.reserve(vx * vy * vz * 3);
  for (std::size_t iz = 0; iz < vz; ++iz)
    for (std::size_t iy = 0; iy < vy; ++iy)
      for (std::size_t ix = 0; ix < vx; ++ix) {
        pos.push_back(static_cast<double>(ix) * spacing);
        pos.push_back(static_cast<double>(iy) * spacing);
        pos.push_back(static_cast<double>(iz) * spacing);
      }
  auto vid = [&](std::size_t ix, std::size_t iy, std::size_t iz) {
    return static_cast<std::uint32_t>(ix + vx * (iy + vy * iz));
  };
  std::vector<CellKind> kinds;
  std::vector<std::uint32_t> nodes;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const std::size_t X = x, Y = y, Z = z;
        kinds.push_back(CellKind::Hexahedron);
        for (auto v : {vid(X, Y, Z), vid(X + 1, Y, Z), vid(X + 1, Y + 1, Z), vid(X, Y + 1, Z),
                       vid(X, Y, Z + 1), vid(X + 1, Y, Z + 1), vid(X + 1, Y + 1, Z + 1),
                       vid(X, Y + 1, Z + 1)}) {
          nodes.push_back(v);
        }
      }
  return Mesh(std::move(pos), std::move(kinds), std::move(nodes));
}

Mesh generate_grid_mesh(int nx, int ny, std::uint64_t seed, const GridMeshOptions& options) {
  require(nx >= 1 && nx <= 200 && ny >= 1 && ny <= 200, ErrorCode::InvalidArgument,
          "grid mesh size must be within 1..200 cells per axis");
  require(options.min_spacing > 0.0 && options.max_spacing >= options.min_spacing,
          ErrorCode::InvalidArgument, "invalid grid spacing range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> spacing(options.min_spacing, options.max_spacing);
  return generate_hex_box(nx, ny, 1, spacing(rng));
}

Mesh generate_tet_mesh(int nx, int ny, int nz, double jitter, std::uint64_t seed,
                       const TetMeshOptions& options) {
  require(nx >= 1 && ny >= 1 && nz >= 1, ErrorCode::InvalidArgument,
          "tet mesh needs at least one cube per axis");
  require(jitter >= 0.0 && jitter < 0.3, ErrorCode::InvalidArgument,
          "tet mesh jitter must lie in [0, 0.3)");
  const double h = options.spacing;
  require(h > 0.0, ErrorCode::InvalidArgument, "tet mesh spacing must be positive");
  const std::size_t vx = nx + 1, vy = ny + 1, vz = nz + 1;

  const std::array<int, 3> n_cubes{nx, ny, nz};
  std::array<int, 3> notch_start{};
  bool notched = true;
  for (int a = 0; a < 3; ++a) {
    const double frac = options.notch[a];
    require(frac >= 0.0 && frac < 1.0, ErrorCode::InvalidArgument, "notch fraction must be in [0,1)");
    const int removed = static_cast<int>(std::floor(frac * n_cubes[a] + 1e-9));
    notch_start[a] = n_cubes[a] - removed;
    if (removed == 0) notched = false;
  }
  auto cube_kept = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return false;
    if (!notched) return true;
    return !(x >= notch_start[0] && y >= notch_start[1] && z >= notch_start[2]);
  };

  auto grid_id = [&](std::size_t ix, std::size_t iy, std::size_t iz) {
    return ix + vx * (iy + vy * iz);
  };
  const std::size_t n_grid = vx * vy * vz;
  std::vector<std::uint8_t> used(n_grid, 0);
  std::vector<std::uint8_t> interior(n_grid, 0);
  for (std::size_t iz = 0; iz < vz; ++iz)
    for (std::size_t iy = 0; iy < vy; ++iy)
      for (std::size_t ix = 0; ix < vx; ++ix) {
        int around = 0;
        for (int dz = -1; dz <= 0; ++dz)
          for (int dy = -1; dy <= 0; ++dy)
            for (int dx = -1; dx <= 0; ++dx)
              around += cube_kept(static_cast<int>(ix) + dx, static_cast<int>(iy) + dy,
                                  static_cast<int>(iz) + dz);
        used[grid_id(ix, iy, iz)] = around > 0;
        interior[grid_id(ix, iy, iz)] = around == 8;
      }

  std::vector<std::uint32_t> remap(n_grid, std::numeric_limits<std::uint32_t>::max());
  std::vector<double> pos;
  std::vector<std::uint8_t> movable;
  for (std::size_t iz = 0; iz < vz; ++iz)
    for (std::size_t iy = 0; iy < vy; ++iy)
      for (std::size_t ix = 0; ix < vx; ++ix) {
        const std::size_t g = grid_id(ix, iy, iz);
        if (!used[g]) continue;
        remap[g] = static_cast<std::uint32_t>(pos.size() / 3);
        pos.push_back(static_cast<double>(ix) * h);
        pos.push_back(static_cast<double>(iy) * h);
        pos.push_back(static_cast<double>(iz) * h);
        movable.push_back(interior[g]);
      }

  std::vector<std::uint32_t> nodes;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        if (!cube_kept(x, y, z)) continue;
        const std::size_t X = x, Y = y, Z = z;
        const std::array<std::uint32_t, 8> hex{
            remap[grid_id(X, Y, Z)],         remap[grid_id(X + 1, Y, Z)],
            remap[grid_id(X + 1, Y + 1, Z)], remap[grid_id(X, Y + 1, Z)],
            remap[grid_id(X, Y, Z + 1)],     remap[grid_id(X + 1, Y, Z + 1)],
            remap[grid_id(X + 1, Y + 1, Z + 1)], remap[grid_id(X, Y + 1, Z + 1)]};
        for (const auto& t : kHexTets)
          for (int k : t) nodes.push_back(hex[k]);
      }
  const std::size_t n_tets = nodes.size() / 4;
  std::vector<CellKind> kinds(n_tets, CellKind::Tetrahedron);

  if (jitter > 0.0) {
    const std::size_t n = pos.size() / 3;
    std::vector<std::size_t> offs(n + 1, 0);
    for (auto v : nodes) ++offs[v + 1];
    for (std::size_t i = 0; i < n; ++i) offs[i + 1] += offs[i];
    std::vector<std::uint32_t> incident(nodes.size());
    std::vector<std::size_t> cur(offs.begin(), offs.end() - 1);
    for (std::size_t t = 0; t < n_tets; ++t)
      for (int k = 0; k < 4; ++k) incident[cur[nodes[t * 4 + k]]++] = static_cast<std::uint32_t>(t);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double min_volume = 1e-3 * h * h * h;
    auto p = [&](std::uint32_t v) { return std::span<const double>(pos).subspan(v * 3, 3); };
    for (std::size_t v = 0; v < n; ++v) {
      if (!movable[v]) continue;
      const std::array<double, 3> origin{pos[v * 3], pos[v * 3 + 1], pos[v * 3 + 2]};
      bool accepted = false;
      for (int attempt = 0; attempt < options.max_retries && !accepted; ++attempt) {
        for (int a = 0; a < 3; ++a) pos[v * 3 + a] = origin[a] + jitter * h * unit(rng);
        accepted = true;
        for (std::size_t e = offs[v]; e < offs[v + 1] && accepted; ++e) {
          const std::size_t t = incident[e];
          accepted = tet_signed_volume(p(nodes[t * 4]), p(nodes[t * 4 + 1]), p(nodes[t * 4 + 2]),
                                       p(nodes[t * 4 + 3])) > min_volume;
        }
      }
      if (!accepted) {
        fail(ErrorCode::Construction, "tet mesh jitter: vertex " + std::to_string(v) +
                                          " produced degenerate cells after " +
                                          std::to_string(options.max_retries) + " retries");
      }
    }
  }
  return Mesh(std::move(pos), std::move(kinds), std::move(nodes));
}

VertexCells vertex_cells(const Mesh& mesh) {
  const std::size_t n = mesh.n_vertices();
  VertexCells vc;
  vc.offsets.assign(n + 1, 0);
  for (std::size_t c = 0; c < mesh.n_cells(); ++c)
    for (auto v : mesh.cell(c).nodes) ++vc.offsets[v + 1];
  for (std::size_t i = 0; i < n; ++i) vc.offsets[i + 1] += vc.offsets[i];
  vc.cells.resize(vc.offsets.back());
  std::vector<std::size_t> cur(vc.offsets.begin(), vc.offsets.end() - 1);
  for (std::size_t c = 0; c < mesh.n_cells(); ++c)
    for (auto v : mesh.cell(c).nodes) vc.cells[cur[v]++] = static_cast<std::uint32_t>(c);
  return vc;
}

AdjacencyMatrix adjacency(const Mesh& mesh) {
  const std::size_t n = mesh.n_vertices();
  const VertexCells vc = vertex_cells(mesh);
  AdjacencyMatrix a;
  a.n = n;
  a.row_ptr.assign(1, 0);
  a.col_index.reserve(n * 16);
  std::vector<std::uint32_t> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    for (std::size_t e = vc.offsets[i]; e < vc.offsets[i + 1]; ++e) {
      for (auto v : mesh.cell(vc.cells[e]).nodes) {
        if (v != i) row.push_back(v);
      }
    }
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    a.col_index.insert(a.col_index.end(), row.begin(), row.end());
    a.row_ptr.push_back(a.col_index.size());
  }
  return a;
}

AdjacencyMatrix m_hop_adjacency(const AdjacencyMatrix& a, int m) {
  require(m >= 1 && m <= 10, ErrorCode::InvalidArgument, "hop count must be within 1..10");
  if (m == 1) return a;
  const std::size_t n = a.n;
  AdjacencyMatrix out;
  out.n = n;
  out.row_ptr.assign(1, 0);
  std::vector<std::size_t> stamp(n, std::numeric_limits<std::size_t>::max());
  std::vector<std::uint32_t> frontier;
  std::vector<std::uint32_t> next;
  std::vector<std::uint32_t> row;
  for (std::size_t i = 0; i < n; ++i) {
    row.clear();
    frontier.assign(1, static_cast<std::uint32_t>(i));
    stamp[i] = i;
    for (int hop = 0; hop < m && !frontier.empty(); ++hop) {
      next.clear();
      for (auto u : frontier) {
        for (std::size_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
          const auto v = a.col_index[e];
          if (stamp[v] == i) continue;
          stamp[v] = i;
          next.push_back(v);
          row.push_back(v);
        }
      }
      frontier.swap(next);
    }
    std::sort(row.begin(), row.end());
    out.col_index.insert(out.col_index.end(), row.begin(), row.end());
    out.row_ptr.push_back(out.col_index.size());
  }
  return out;
}

std::vector<double> effective_volume(const Mesh& mesh) {
  const auto vols = mesh.cell_volumes();
  std::vector<double> out(mesh.n_vertices(), 0.0);
  for (std::size_t c = 0; c < mesh.n_cells(); ++c) {
    const auto cv = mesh.cell(c);
    const double share = vols[c] / static_cast<double>(cv.nodes.size());
    for (auto v : cv.nodes) out[v] += share;
  }
  return out;
}

std::vector<double> mean_volume(const Mesh& mesh) {
  const auto vols = mesh.cell_volumes();
  std::vector<double> sum(mesh.n_vertices(), 0.0);
  std::vector<std::size_t> count(mesh.n_vertices(), 0);
  for (std::size_t c = 0; c < mesh.n_cells(); ++c) {
    for (auto v : mesh.cell(c).nodes) {
      sum[v] += vols[c];
      ++count[v];
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    if (count[i] > 0) sum[i] /= static_cast<double>(count[i]);
  }
  return sum;
}

BoundingBox bounding_box(const Mesh& mesh) {
  BoundingBox box;
  if (mesh.n_vertices() == 0) return box;
  const auto p = mesh.positions();
  for (int a = 0; a < 3; ++a) {
    box.lo[a] = box.hi[a] = p[a];
  }
  for (std::size_t i = 0; i < mesh.n_vertices(); ++i)
    for (int a = 0; a < 3; ++a) {
      box.lo[a] = std::min(box.lo[a], p[i * 3 + a]);
      box.hi[a] = std::max(box.hi[a], p[i * 3 + a]);
    }
  return box;
}

Mesh rescale_to_unit_cube(const Mesh& mesh) {
  const auto box = bounding_box(mesh);
  double extent = 0.0;
  for (int a = 0; a < 3; ++a) extent = std::max(extent, box.hi[a] - box.lo[a]);
  require(extent > 0.0, ErrorCode::InvalidArgument, "cannot rescale a mesh with zero extent");
  std::vector<double> pos(mesh.positions().begin(), mesh.positions().end());
  for (std::size_t i = 0; i < mesh.n_vertices(); ++i)
    for (int a = 0; a < 3; ++a) pos[i * 3 + a] = (pos[i * 3 + a] - box.lo[a]) / extent;
  return mesh.with_positions(std::move(pos));
}

std::string mesh_to_json_text(const Mesh& mesh) {
  nlohmann::json j;
  j["d"] = 3;
  auto& positions = j["positions"] = nlohmann::json::array();
  for (std::size_t i = 0; i < mesh.n_vertices(); ++i) {
    const auto p = mesh.position(i);
    positions.push_back({p[0], p[1], p[2]});
  }
  auto& cells = j["cells"] = nlohmann::json::array();
  for (std::size_t c = 0; c < mesh.n_cells(); ++c) {
    const auto cv = mesh.cell(c);
    cells.push_back({{"kind", cell_kind_name(cv.kind)},
                     {"idx", std::vector<std::uint32_t>(cv.nodes.begin(), cv.nodes.end())}});
  }
  return j.dump();
}

namespace {

std::size_t line_of_byte(const std::string& text, std::size_t byte) {
  const std::size_t end = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(end), '\n'));
}

}  // namespace

Mesh mesh_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Parse, "mesh JSON parse error at line " +
                               std::to_string(line_of_byte(text, e.byte)) + ": " + e.what());
  }
  try {
    require(j.is_object(), ErrorCode::Parse, "mesh JSON must be an object");
    require(j.value("d", 0) == 3, ErrorCode::Parse, "mesh JSON: only d = 3 meshes are supported");
    std::vector<double> pos;
    for (const auto& p : j.at("positions")) {
      require(p.is_array() && p.size() == 3, ErrorCode::Parse, "mesh JSON: positions must be triples");
      for (const auto& x : p) pos.push_back(x.get<double>());
    }
    std::vector<CellKind> kinds;
    std::vector<std::uint32_t> nodes;
    std::size_t index = 0;
    for (const auto& c : j.at("cells")) {
      const auto kind = c.at("kind").get<std::string>();
      CellKind k;
      if (kind == "tet") {
        k = CellKind::Tetrahedron;
      } else if (kind == "hex") {
        k = CellKind::Hexahedron;
      } else {
        fail(ErrorCode::Parse, "mesh JSON: cell " + std::to_string(index) +
                                   " has unknown kind '" + kind + "'");
      }
      const auto idx = c.at("idx").get<std::vector<std::uint32_t>>();
      require(idx.size() == cell_size(k), ErrorCode::Parse,
              "mesh JSON: cell " + std::to_string(index) + " has the wrong node count");
      kinds.push_back(k);
      nodes.insert(nodes.end(), idx.begin(), idx.end());
      ++index;
    }
    return Mesh(std::move(pos), std::move(kinds), std::move(nodes));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("mesh JSON schema error: ") + e.what());
  }
}

Mesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::NotFound, "cannot open mesh file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return mesh_from_json_text(ss.str());
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write mesh file " + path.string());
  out << mesh_to_json_text(mesh) << '\n';
  require(static_cast<bool>(out), ErrorCode::Io, "failed writing mesh file " + path.string());
}

void export_vtk(const Mesh& mesh, const std::map<std::string, TensorField>& fields,
                const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write VTK file " + path.string());
  const std::size_t n = mesh.n_vertices();
  out << "# vtk DataFile Version 3.0\nisogcn mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << std::setprecision(17);
  out << "POINTS " << n << " double\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = mesh.position(i);
    out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
  }
  std::size_t total = 0;
  for (std::size_t c = 0; c < mesh.n_cells(); ++c) total += 1 + mesh.cell(c).nodes.size();
  out << "CELLS " << mesh.n_cells() << ' ' << total << '\n';
  for (std::size_t c = 0; c < mesh.n_cells(); ++c) {
    const auto cv = mesh.cell(c);
    out << cv.nodes.size();
    for (auto v : cv.nodes) out << ' ' << v;
    out << '\n';
  }
  out << "CELL_TYPES " << mesh.n_cells() << '\n';
  for (std::size_t c = 0; c < mesh.n_cells(); ++c) {
    out << (mesh.cell(c).kind == CellKind::Tetrahedron ? 10 : 12) << '\n';
  }
  if (fields.empty()) return;
  out << "POINT_DATA " << n << '\n';
  for (const auto& [name, field] : fields) {
    require(field.n_vertices() == n, ErrorCode::Shape, "VTK export: field '" + name + "' size mismatch");
    require(field.dim() == 3 && field.rank() <= 2, ErrorCode::InvalidArgument,
            "VTK export supports rank 0-2 fields in 3D only");
    for (std::size_t g = 0; g < field.n_features(); ++g) {
      const std::string label = field.n_features() == 1 ? name : name + "_" + std::to_string(g);
      if (field.rank() == 0) {
        out << "SCALARS " << label << " double 1\nLOOKUP_TABLE default\n";
      } else if (field.rank() == 1) {
        out << "VECTORS " << label << " double\n";
      } else {
        out << "TENSORS " << label << " double\n";
      }
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < field.components(); ++c) {
          out << field.at(i, g, c) << ((c + 1 == field.components()) ? '\n' : ' ');
        }
      }
    }
  }
}

}  // namespace isogcn
