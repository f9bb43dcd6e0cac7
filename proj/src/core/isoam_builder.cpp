// SPDX-License-Identifier: Apache-2.0
#include "core/isoam_builder.hpp"

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "core/parallel.hpp"

namespace isogcn {

static_assert(std::endian::native == std::endian::little,
              "binary IsoAM files assume a little-endian host");

const char* weight_kind_name(WeightKind kind) noexcept {
  return kind == WeightKind::ConstantOne ? "constant_one" : "volume_ratio";
}

WeightKind weight_kind_from_name(const std::string& name) {
  if (name == "constant_one") return WeightKind::ConstantOne;
  if (name == "volume_ratio") return WeightKind::VolumeRatio;
  fail(ErrorCode::InvalidArgument, "unknown weight scheme '" + name + "'");
}

WeightScheme WeightScheme::volume_ratio(std::vector<double> effective_volumes) {
  for (double v : effective_volumes) {
    require(std::isfinite(v) && v > 0.0, ErrorCode::InvalidArgument,
            "volume-ratio weights need positive effective volumes");
  }
  WeightScheme w;
  w.kind = WeightKind::VolumeRatio;
  w.vertex_volume = std::move(effective_volumes);
  return w;
}

namespace {

template <int D>
void fill_moment(std::span<const double> x, const AdjacencyMatrix& a, const WeightScheme& w,
                 double rcond, MomentMatrixSet& out) {
  using Mat = Eigen::Matrix<double, D, D>;
  using Vec = Eigen::Matrix<double, D, 1>;
  const std::size_t n = a.n;
  parallel_for(n, [&](std::size_t i) {
    require(a.degree(i) > 0, ErrorCode::Construction,
            "moment matrix: vertex " + std::to_string(i) + " has no neighbours");
    const Eigen::Map<const Vec> xi(x.data() + i * D);
    Mat m = Mat::Zero();
    for (std::size_t e = a.row_ptr[i]; e < a.row_ptr[i + 1]; ++e) {
      const std::size_t l = a.col_index[e];
      Vec r = Eigen::Map<const Vec>(x.data() + l * D) - xi;
      const double len = r.norm();
      require(len >= 1e-12, ErrorCode::Construction,
              "moment matrix: vertices " + std::to_string(i) + " and " + std::to_string(l) +
                  " coincide");
      r /= len;
      m.noalias() += w(i, l) * (r * r.transpose());
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(m);
    const Vec lambda = eig.eigenvalues();
    const double lmax = lambda.maxCoeff();
    Vec inv_lambda;
    bool pseudo = false;
    double lmin_kept = lmax;
    for (int k = 0; k < D; ++k) {
      if (lambda(k) > rcond * lmax) {
        inv_lambda(k) = 1.0 / lambda(k);
        lmin_kept = std::min(lmin_kept, lambda(k));
      } else {
        inv_lambda(k) = 0.0;
        pseudo = true;
      }
    }
    const Mat inv = eig.eigenvectors() * inv_lambda.asDiagonal() * eig.eigenvectors().transpose();
    for (int r = 0; r < D; ++r)
      for (int c = 0; c < D; ++c) {
        out.matrices[(i * D + r) * D + c] = m(r, c);
        out.inverses[(i * D + r) * D + c] = inv(r, c);
      }
    out.pseudo_inverse[i] = pseudo ? 1 : 0;
    out.condition[i] = pseudo ? std::numeric_limits<double>::infinity() : lmax / lmin_kept;
  });
}

}  // namespace

MomentMatrixSet moment_matrices(std::span<const double> positions, int dim,
                                const AdjacencyMatrix& a_m, const WeightScheme& w, double rcond) {
  require(dim == 2 || dim == 3, ErrorCode::InvalidArgument, "moment matrices need dim 2 or 3");
  require(positions.size() == a_m.n * static_cast<std::size_t>(dim), ErrorCode::Shape,
          "moment matrices: positions do not match the adjacency size");
  if (w.kind == WeightKind::VolumeRatio) {
    require(w.vertex_volume.size() == a_m.n, ErrorCode::Shape,
            "volume-ratio weights: one volume per vertex required");
  }
  MomentMatrixSet out;
  out.dim = dim;
  out.matrices.assign(a_m.n * dim * dim, 0.0);
  out.inverses.assign(a_m.n * dim * dim, 0.0);
  out.pseudo_inverse.assign(a_m.n, 0);
  out.condition.assign(a_m.n, 1.0);
  if (dim == 3) {
    fill_moment<3>(positions, a_m, w, rcond, out);
  } else {
    fill_moment<2>(positions, a_m, w, rcond, out);
  }
  return out;
}

IsoAM build_D(std::span<const double> positions, int dim, const AdjacencyMatrix& a_m,
              const WeightScheme& w, const MomentMatrixSet& moments) {
  require(moments.size() == a_m.n && moments.dim == dim, ErrorCode::Shape,
          "build_D: moment matrices do not match the adjacency");
  const std::size_t n = a_m.n;
  std::vector<double> values(a_m.nnz() * dim, 0.0);
  parallel_for(n, [&](std::size_t i) {
    const double* xi = positions.data() + i * dim;
    double r[3];
    for (std::size_t e = a_m.row_ptr[i]; e < a_m.row_ptr[i + 1]; ++e) {
      const std::size_t j = a_m.col_index[e];
      const double* xj = positions.data() + j * dim;
      double len2 = 0.0;
      for (int k = 0; k < dim; ++k) {
        r[k] = xj[k] - xi[k];
        len2 += r[k] * r[k];
      }
      require(len2 >= 1e-24, ErrorCode::Construction,
              "build_D: adjacent vertices " + std::to_string(i) + " and " + std::to_string(j) +
                  " coincide");
      const double scale = w(i, j) / len2;
      for (int a = 0; a < dim; ++a) {
        double s = 0.0;
        for (int b = 0; b < dim; ++b) s += moments.inv(i, a, b) * r[b];
        values[e * dim + a] = s * scale;
      }
    }
  });
  return IsoAM(n, dim, a_m.row_ptr, a_m.col_index, std::move(values));
}

IsoAM build_D_tilde(const IsoAM& d) {
  const std::size_t n = d.n_vertices();
  const int dim = d.dim();
  const auto rows = d.row_ptr();
  const auto cols = d.col_index();
  const auto vals = d.values();
  std::vector<std::size_t> row_ptr(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool has_diag = false;
    for (std::size_t e = rows[i]; e < rows[i + 1]; ++e) has_diag |= cols[e] == i;
    row_ptr[i + 1] = row_ptr[i] + (rows[i + 1] - rows[i]) + (has_diag ? 0 : 1);
  }
  std::vector<std::uint32_t> out_cols(row_ptr.back());
  std::vector<double> out_vals(row_ptr.back() * dim, 0.0);
  parallel_for(n, [&](std::size_t i) {
    double row_sum[3] = {0.0, 0.0, 0.0};
    for (std::size_t e = rows[i]; e < rows[i + 1]; ++e)
      for (int k = 0; k < dim; ++k) row_sum[k] += vals[e * dim + k];
    std::size_t dst = row_ptr[i];
    std::size_t diag = 0;
    bool placed = false;
    for (std::size_t e = rows[i]; e < rows[i + 1]; ++e) {
      if (!placed && cols[e] >= i) {
        if (cols[e] != i) {
          out_cols[dst] = static_cast<std::uint32_t>(i);
          diag = dst++;
        }
        placed = true;
      }
      out_cols[dst] = cols[e];
      for (int k = 0; k < dim; ++k) out_vals[dst * dim + k] = vals[e * dim + k];
      if (cols[e] == i) diag = dst;
      ++dst;
    }
    if (!placed) {
      out_cols[dst] = static_cast<std::uint32_t>(i);
      diag = dst;
    }
    for (int k = 0; k < dim; ++k) out_vals[diag * dim + k] -= row_sum[k];
  });
  return IsoAM(n, dim, std::move(row_ptr), std::move(out_cols), std::move(out_vals));
}

double scaling_factor(std::span<const IsoAM* const> samples) {
  require(!samples.empty(), ErrorCode::InvalidArgument, "scaling factor needs at least one sample");
  double sum = 0.0;
  std::size_t count = 0;
  for (const IsoAM* g : samples) {
    const auto rows = g->row_ptr();
    const auto cols = g->col_index();
    for (std::size_t i = 0; i < g->n_vertices(); ++i) {
      for (std::size_t e = rows[i]; e < rows[i + 1]; ++e) {
        if (cols[e] != i) continue;
        for (int k = 0; k < g->dim(); ++k) sum += g->value(e, k) * g->value(e, k);
      }
      ++count;
    }
  }
  require(count > 0, ErrorCode::InvalidArgument, "scaling factor: samples have no vertices");
  const double factor = std::sqrt(sum / static_cast<double>(count));
  require(factor >= 1e-14, ErrorCode::Numeric, "scaling factor is degenerate (< 1e-14)");
  return factor;
}

double scaling_factor(std::span<const IsoAM> samples) {
  std::vector<const IsoAM*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return scaling_factor(std::span<const IsoAM* const>(ptrs));
}

IsoAM scale_isoam(const IsoAM& g, double factor) {
  require(factor > 0.0 && std::isfinite(factor), ErrorCode::InvalidArgument,
          "IsoAM scaling factor must be positive");
  std::vector<double> vals(g.values().begin(), g.values().end());
  for (double& v : vals) v /= factor;
  return IsoAM(g.n_vertices(), g.dim(),
               std::vector<std::size_t>(g.row_ptr().begin(), g.row_ptr().end()),
               std::vector<std::uint32_t>(g.col_index().begin(), g.col_index().end()),
               std::move(vals));
}

IsoAM build_isoam(const Mesh& mesh, const IsoAMOptions& options) {
  const AdjacencyMatrix a = m_hop_adjacency(adjacency(mesh), options.m_hops);
  const WeightScheme w = options.weights == WeightKind::ConstantOne
                             ? WeightScheme::constant_one()
                             : WeightScheme::volume_ratio(effective_volume(mesh));
  const auto moments = moment_matrices(mesh.positions(), 3, a, w, options.rcond);
  return build_D_tilde(build_D(mesh.positions(), 3, a, w, moments));
}

void save_isoam(const IsoAM& g, double factor, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write IsoAM file " + path.string());
  nlohmann::json header{{"format", "isogcn-isoam"},
                        {"version", 1},
                        {"n_vertices", g.n_vertices()},
                        {"nnz", g.nnz()},
                        {"dim", g.dim()},
                        {"factor", factor}};
  out << header.dump() << '\n';
  std::vector<std::int64_t> rows(g.nnz());
  std::vector<std::int64_t> cols(g.nnz());
  for (std::size_t i = 0; i < g.n_vertices(); ++i)
    for (std::size_t e = g.row_ptr()[i]; e < g.row_ptr()[i + 1]; ++e) {
      rows[e] = static_cast<std::int64_t>(i);
      cols[e] = g.col_index()[e];
    }
  out.write(reinterpret_cast<const char*>(rows.data()), static_cast<std::streamsize>(rows.size() * 8));
  out.write(reinterpret_cast<const char*>(cols.data()), static_cast<std::streamsize>(cols.size() * 8));
  out.write(reinterpret_cast<const char*>(g.values().data()),
            static_cast<std::streamsize>(g.values().size() * 8));
  require(static_cast<bool>(out), ErrorCode::Io, "failed writing IsoAM file " + path.string());
}

LoadedIsoAM load_isoam(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::NotFound, "cannot open IsoAM file " + path.string());
  std::string line;
  std::getline(in, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::Parse, "IsoAM header (line 1) is not valid JSON: " + std::string(e.what()));
  }
  require(header.value("format", "") == "isogcn-isoam", ErrorCode::Parse,
          "file is not an isogcn IsoAM: " + path.string());
  const auto n = header.at("n_vertices").get<std::size_t>();
  const auto nnz = header.at("nnz").get<std::size_t>();
  const int dim = header.at("dim").get<int>();
  std::vector<std::int64_t> rows(nnz), cols(nnz);
  std::vector<double> vals(nnz * dim);
  in.read(reinterpret_cast<char*>(rows.data()), static_cast<std::streamsize>(nnz * 8));
  in.read(reinterpret_cast<char*>(cols.data()), static_cast<std::streamsize>(nnz * 8));
  in.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(vals.size() * 8));
  require(static_cast<bool>(in), ErrorCode::Parse, "IsoAM file is truncated: " + path.string());
  std::vector<std::size_t> row_ptr(n + 1, 0);
  std::vector<std::uint32_t> col32(nnz);
  for (std::size_t e = 0; e < nnz; ++e) {
    require(rows[e] >= 0 && static_cast<std::size_t>(rows[e]) < n && cols[e] >= 0 &&
                static_cast<std::size_t>(cols[e]) < n,
            ErrorCode::Parse, "IsoAM triplet index out of range");
    require(e == 0 || rows[e] >= rows[e - 1], ErrorCode::Parse, "IsoAM triplets are not row-sorted");
    ++row_ptr[static_cast<std::size_t>(rows[e]) + 1];
    col32[e] = static_cast<std::uint32_t>(cols[e]);
  }
  for (std::size_t i = 0; i < n; ++i) row_ptr[i + 1] += row_ptr[i];
  return {IsoAM(n, dim, std::move(row_ptr), std::move(col32), std::move(vals)),
          header.value("factor", 1.0)};
}

}  // namespace isogcn
