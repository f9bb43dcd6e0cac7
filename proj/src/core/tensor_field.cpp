// SPDX-License-Identifier: Apache-2.0
#include "core/tensor_field.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "core/parallel.hpp"

namespace isogcn {

TensorField::TensorField(int rank, std::size_t n_vertices, std::size_t n_features, int dim)
    : rank_(rank), dim_(dim), n_vertices_(n_vertices), n_features_(n_features) {
  require(rank >= 0, ErrorCode::Rank, "tensor rank must be non-negative");
  require(dim == 2 || dim == 3, ErrorCode::InvalidArgument, "spatial dimension must be 2 or 3");
  require(n_features >= 1, ErrorCode::Shape, "tensor field needs at least one feature");
  components_ = ipow(static_cast<std::size_t>(dim), rank);
  data_.assign(n_vertices * n_features * components_, 0.0);
}

TensorField::TensorField(int rank, std::size_t n_vertices, std::size_t n_features, int dim,
                         std::vector<double> data)
    : TensorField(rank, n_vertices, n_features, dim) {
  require(data.size() == data_.size(), ErrorCode::Shape,
          "tensor field data has " + std::to_string(data.size()) + " values, expected " +
              std::to_string(data_.size()));
  data_ = std::move(data);
}

IsoAM::IsoAM(std::size_t n_vertices, int dim, std::vector<std::size_t> row_ptr,
             std::vector<std::uint32_t> col_index, std::vector<double> values)
    : n_vertices_(n_vertices),
      dim_(dim),
      row_ptr_(std::move(row_ptr)),
      col_index_(std::move(col_index)),
      values_(std::move(values)) {
  require(dim == 2 || dim == 3, ErrorCode::InvalidArgument, "IsoAM dimension must be 2 or 3");
  require(row_ptr_.size() == n_vertices + 1, ErrorCode::Shape, "IsoAM row_ptr length mismatch");
  require(row_ptr_.front() == 0 && row_ptr_.back() == col_index_.size(), ErrorCode::Shape,
          "IsoAM row_ptr does not cover the column index array");
  require(values_.size() == col_index_.size() * static_cast<std::size_t>(dim), ErrorCode::Shape,
          "IsoAM values must hold dim entries per nonzero");
  for (std::size_t i = 0; i < n_vertices; ++i) {
    require(row_ptr_[i] <= row_ptr_[i + 1], ErrorCode::Shape, "IsoAM row_ptr is not monotone");
  }
  for (auto c : col_index_) {
    require(c < n_vertices, ErrorCode::Shape, "IsoAM column index out of range");
  }
}

double IsoAM::coeff(std::size_t i, std::size_t j, int k) const {
  const auto begin = col_index_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i]);
  const auto end = col_index_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i + 1]);
  for (auto it = begin; it != end; ++it) {
    if (*it == j) return values_[static_cast<std::size_t>(it - col_index_.begin()) * dim_ + k];
  }
  return 0.0;
}

IsoAM IsoAM::transposed() const {
  const std::size_t n = n_vertices_;
  std::vector<std::size_t> counts(n + 1, 0);
  for (auto c : col_index_) ++counts[c + 1];
  std::partial_sum(counts.begin(), counts.end(), counts.begin());
  std::vector<std::size_t> cursor(counts.begin(), counts.end() - 1);
  std::vector<std::uint32_t> cols(nnz());
  std::vector<double> vals(values_.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t e = row_ptr_[i]; e < row_ptr_[i + 1]; ++e) {
      const std::size_t dst = cursor[col_index_[e]]++;
      cols[dst] = static_cast<std::uint32_t>(i);
      for (int k = 0; k < dim_; ++k) vals[dst * dim_ + k] = values_[e * dim_ + k];
    }
  }
  return IsoAM(n, dim_, std::move(counts), std::move(cols), std::move(vals));
}

double SparseMatrix::coeff(std::size_t i, std::size_t j) const {
  for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) {
    if (col_index[e] == j) return values[e];
  }
  return 0.0;
}

TensorField SparseMatrix::apply(const TensorField& x) const {
  require(x.rank() == 0, ErrorCode::Rank, "sparse matrix apply expects a rank-0 field");
  require(x.n_vertices() == n, ErrorCode::Shape, "sparse matrix apply: vertex count mismatch");
  const std::size_t f = x.n_features();
  TensorField out(0, n, f, x.dim());
  auto in = x.data();
  auto o = out.data();
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t e = row_ptr[i]; e < row_ptr[i + 1]; ++e) {
      const double a = values[e];
      const double* xj = in.data() + col_index[e] * f;
      for (std::size_t g = 0; g < f; ++g) o[i * f + g] += a * xj[g];
    }
  });
  return out;
}

Isometry::Isometry(int d, std::vector<double> rot, std::vector<double> t)
    : dim(d), rotation(std::move(rot)), translation(std::move(t)) {
  require(d == 2 || d == 3, ErrorCode::InvalidArgument, "isometry dimension must be 2 or 3");
  require(rotation.size() == static_cast<std::size_t>(d * d) &&
              translation.size() == static_cast<std::size_t>(d),
          ErrorCode::Shape, "isometry rotation/translation size mismatch");
  for (int a = 0; a < d; ++a) {
    for (int b = 0; b < d; ++b) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += u(k, a) * u(k, b);
      require(std::abs(s - (a == b ? 1.0 : 0.0)) <= 1e-12, ErrorCode::InvalidArgument,
              "isometry rotation is not orthogonal");
    }
  }
}

Isometry Isometry::identity(int d) {
  std::vector<double> u(static_cast<std::size_t>(d * d), 0.0);
  for (int k = 0; k < d; ++k) u[k * d + k] = 1.0;
  return Isometry(d, std::move(u), std::vector<double>(static_cast<std::size_t>(d), 0.0));
}

Isometry Isometry::random(std::mt19937_64& rng, int d, double translation_range) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-translation_range, translation_range);
  Eigen::MatrixXd a(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) a(r, c) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
  // Sign fix against R's diagonal makes Q Haar-distributed over O(d).
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < d; ++c) {
    if (r(c, c) < 0) q.col(c) *= -1.0;
  }
  std::vector<double> u(static_cast<std::size_t>(d * d));
  for (int row = 0; row < d; ++row)
    for (int col = 0; col < d; ++col) u[row * d + col] = q(row, col);
  std::vector<double> t(static_cast<std::size_t>(d));
  for (auto& v : t) v = uniform(rng);
  return Isometry(d, std::move(u), std::move(t));
}

void Isometry::apply_point(std::span<const double> x, std::span<double> out) const {
  for (int r = 0; r < dim; ++r) {
    double s = translation[r];
    for (int c = 0; c < dim; ++c) s += u(r, c) * x[c];
    out[r] = s;
  }
}

std::vector<double> Isometry::transform_positions(std::span<const double> positions) const {
  require(positions.size() % static_cast<std::size_t>(dim) == 0, ErrorCode::Shape,
          "position array length is not a multiple of the dimension");
  std::vector<double> out(positions.size());
  for (std::size_t i = 0; i < positions.size(); i += dim) {
    apply_point(positions.subspan(i, dim), std::span<double>(out).subspan(i, dim));
  }
  return out;
}

namespace {

void check_vertices(const IsoAM& g, const TensorField& h, const char* op) {
  require(g.n_vertices() == h.n_vertices(), ErrorCode::Shape,
          std::string(op) + ": IsoAM has " + std::to_string(g.n_vertices()) +
              " vertices, field has " + std::to_string(h.n_vertices()));
  require(g.dim() == h.dim(), ErrorCode::Shape, std::string(op) + ": spatial dimension mismatch");
}

}  // namespace

TensorField tensor_prod(const IsoAM& g, const TensorField& h) {
  check_vertices(g, h, "tensor_prod");
  const std::size_t n = h.n_vertices();
  const std::size_t f = h.n_features();
  const int d = g.dim();
  const std::size_t c_in = h.components();
  const std::size_t c_out = c_in * d;
  TensorField out(h.rank() + 1, n, f, d);
  const auto rows = g.row_ptr();
  const auto cols = g.col_index();
  const auto vals = g.values();
  const auto in = h.data();
  auto o = out.data();
  parallel_for(n, [&](std::size_t i) {
    double* oi = o.data() + i * f * c_out;
    for (std::size_t e = rows[i]; e < rows[i + 1]; ++e) {
      const double* gv = vals.data() + e * d;
      const double* hj = in.data() + cols[e] * f * c_in;
      for (std::size_t feat = 0; feat < f; ++feat) {
        const double* src = hj + feat * c_in;
        double* dst = oi + feat * c_out;
        for (int k = 0; k < d; ++k) {
          const double gk = gv[k];
          double* dk = dst + k * c_in;
          for (std::size_t c = 0; c < c_in; ++c) dk[c] += gk * src[c];
        }
      }
    }
  });
  return out;
}

TensorField convolve(const IsoAM& g, const TensorField& h0) {
  require(h0.rank() == 0, ErrorCode::Rank, "convolve expects a rank-0 field");
  return tensor_prod(g, h0);
}

TensorField contract(const IsoAM& g, const TensorField& h) {
  check_vertices(g, h, "contract");
  require(h.rank() >= 1, ErrorCode::Rank, "contract needs a field of rank >= 1");
  const std::size_t n = h.n_vertices();
  const std::size_t f = h.n_features();
  const int d = g.dim();
  const std::size_t c_in = h.components();
  const std::size_t c_out = c_in / d;
  TensorField out(h.rank() - 1, n, f, d);
  const auto rows = g.row_ptr();
  const auto cols = g.col_index();
  const auto vals = g.values();
  const auto in = h.data();
  auto o = out.data();
  parallel_for(n, [&](std::size_t i) {
    double* oi = o.data() + i * f * c_out;
    for (std::size_t e = rows[i]; e < rows[i + 1]; ++e) {
      const double* gv = vals.data() + e * d;
      const double* hj = in.data() + cols[e] * f * c_in;
      for (std::size_t feat = 0; feat < f; ++feat) {
        const double* src = hj + feat * c_in;
        double* dst = oi + feat * c_out;
        for (int k = 0; k < d; ++k) {
          const double gk = gv[k];
          const double* sk = src + k * c_out;
          for (std::size_t c = 0; c < c_out; ++c) dst[c] += gk * sk[c];
        }
      }
    }
  });
  return out;
}

SparseMatrix self_contract(const IsoAM& g) {
  const std::size_t n = g.n_vertices();
  const int d = g.dim();
  const auto rows = g.row_ptr();
  const auto cols = g.col_index();
  const auto vals = g.values();

  SparseMatrix l;
  l.n = n;
  l.row_ptr.assign(1, 0);
  std::vector<double> acc(n, 0.0);
  std::vector<std::size_t> seen(n, std::numeric_limits<std::size_t>::max());
  std::vector<std::uint32_t> touched;
  for (std::size_t i = 0; i < n; ++i) {
    touched.clear();
    for (std::size_t e = rows[i]; e < rows[i + 1]; ++e) {
      const std::size_t j = cols[e];
      const double* gij = vals.data() + e * d;
      for (std::size_t e2 = rows[j]; e2 < rows[j + 1]; ++e2) {
        const std::uint32_t col = cols[e2];
        const double* gjl = vals.data() + e2 * d;
        double dot = 0.0;
        for (int k = 0; k < d; ++k) dot += gij[k] * gjl[k];
        if (seen[col] != i) {
          seen[col] = i;
          acc[col] = 0.0;
          touched.push_back(col);
        }
        acc[col] += dot;
      }
    }
    std::sort(touched.begin(), touched.end());
    for (auto col : touched) {
      l.col_index.push_back(col);
      l.values.push_back(acc[col]);
    }
    l.row_ptr.push_back(l.col_index.size());
  }
  return l;
}

namespace {

void check_power_cap(std::size_t n, std::size_t f, int d, int rank, std::size_t cap) {
  // Compare in floating point so huge ranks cannot overflow.
  const double size = static_cast<double>(n) * static_cast<double>(f) *
                      std::pow(static_cast<double>(d), rank);
  require(size <= static_cast<double>(cap), ErrorCode::Resource,
          "tensor power output of rank " + std::to_string(rank) + " exceeds the configured cap of " +
              std::to_string(cap) + " values");
}

}  // namespace

TensorField power_apply(const IsoAM& g, int p, const TensorField& h0, std::size_t cap) {
  require(p >= 1, ErrorCode::InvalidArgument, "power_apply needs p >= 1");
  require(h0.rank() == 0, ErrorCode::Rank, "power_apply expects a rank-0 field");
  check_vertices(g, h0, "power_apply");
  check_power_cap(h0.n_vertices(), h0.n_features(), g.dim(), p, cap);
  TensorField out = convolve(g, h0);
  for (int k = 1; k < p; ++k) out = tensor_prod(g, out);
  return out;
}

TensorField power_contract(const IsoAM& g, int p, const TensorField& h, std::size_t cap) {
  require(p >= 1, ErrorCode::InvalidArgument, "power_contract needs p >= 1");
  require(h.rank() >= 1, ErrorCode::Rank, "power_contract needs a field of rank >= 1");
  check_vertices(g, h, "power_contract");
  const int q = h.rank();
  check_power_cap(h.n_vertices(), h.n_features(), g.dim(), std::abs(p - q), cap);
  const int n_contract = std::min(p, q);
  TensorField out = contract(g, h);
  for (int k = 1; k < n_contract; ++k) out = contract(g, out);
  for (int k = 0; k < p - q; ++k) out = tensor_prod(g, out);
  return out;
}

TensorField transform_field(const Isometry& t, const TensorField& h, FieldKind kind) {
  require(t.dim == h.dim(), ErrorCode::Shape, "transform_field: dimension mismatch");
  const int d = h.dim();
  const int p = h.rank();
  if (kind == FieldKind::PositionLike) {
    require(p == 1, ErrorCode::Rank, "position-like transform applies to rank-1 fields only");
  }
  TensorField out = h;
  if (p == 0) return out;
  const std::size_t c_total = h.components();
  std::vector<double> block(c_total);
  std::vector<double> next(c_total);
  auto data = out.data();
  for (std::size_t base = 0; base < data.size(); base += c_total) {
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(base), c_total, block.begin());
    for (int axis = 0; axis < p; ++axis) {
      const std::size_t stride = ipow(static_cast<std::size_t>(d), p - 1 - axis);
      const std::size_t outer = c_total / (stride * d);
      for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t s = 0; s < stride; ++s) {
          const std::size_t off = a * stride * d + s;
          for (int r = 0; r < d; ++r) {
            double acc = 0.0;
            for (int c = 0; c < d; ++c) acc += t.u(r, c) * block[off + c * stride];
            next[off + r * stride] = acc;
          }
        }
      }
      block.swap(next);
    }
    if (kind == FieldKind::PositionLike) {
      for (int r = 0; r < d; ++r) block[r] += t.translation[r];
    }
    std::copy(block.begin(), block.end(), data.begin() + static_cast<std::ptrdiff_t>(base));
  }
  return out;
}

}  // namespace isogcn
