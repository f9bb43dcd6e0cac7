// SPDX-License-Identifier: Apache-2.0
#include "oracle/dense_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace oracle {

namespace {

std::size_t power_of(int d, int p) {
  std::size_t r = 1;
  for (int i = 0; i < p; ++i) r *= static_cast<std::size_t>(d);
  return r;
}

// Splits a flat component index into p digits in base d, most significant first.
std::vector<int> digits(std::size_t c, int d, int p) {
  std::vector<int> out(p);
  for (int t = p - 1; t >= 0; --t) {
    out[t] = static_cast<int>(c % d);
    c /= d;
  }
  return out;
}

std::size_t flat(const std::vector<int>& idx, int d) {
  std::size_t c = 0;
  for (int k : idx) c = c * d + k;
  return c;
}

}  // namespace

Field::Field(int rank, std::size_t n, std::size_t f, int d) : rank(rank), n(n), f(f), d(d) {
  v.assign(n * f * comps(), 0.0);
}

std::size_t Field::comps() const { return power_of(d, rank); }

std::size_t DensePower::comps() const { return power_of(d, p); }

Field convolve(const DenseG& g, const Field& h0) {
  if (h0.rank != 0) throw std::invalid_argument("convolve needs rank 0");
  Field out(1, g.n, h0.f, g.d);
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < g.n; ++j)
      for (std::size_t gg = 0; gg < h0.f; ++gg)
        for (int k = 0; k < g.d; ++k) out.at(i, gg, k) += g(i, j, k) * h0.at(j, gg, 0);
  return out;
}

Field contract(const DenseG& g, const Field& h) {
  if (h.rank < 1) throw std::invalid_argument("contract needs rank >= 1");
  Field out(h.rank - 1, g.n, h.f, g.d);
  const std::size_t rest = out.comps();
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < g.n; ++j)
      for (std::size_t gg = 0; gg < h.f; ++gg)
        for (std::size_t m = 0; m < rest; ++m)
          for (int k = 0; k < g.d; ++k) out.at(i, gg, m) += g(i, j, k) * h.at(j, gg, k * rest + m);
  return out;
}

Field tensor_prod(const DenseG& g, const Field& h) {
  Field out(h.rank + 1, g.n, h.f, g.d);
  const std::size_t rest = h.comps();
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t j = 0; j < g.n; ++j)
      for (std::size_t gg = 0; gg < h.f; ++gg)
        for (int k = 0; k < g.d; ++k)
          for (std::size_t m = 0; m < rest; ++m) out.at(i, gg, k * rest + m) += g(i, j, k) * h.at(j, gg, m);
  return out;
}

std::vector<double> self_contract(const DenseG& g) {
  std::vector<double> l(g.n * g.n, 0.0);
  for (std::size_t i = 0; i < g.n; ++i)
    for (std::size_t m = 0; m < g.n; ++m)
      for (std::size_t j = 0; j < g.n; ++j)
        for (int k = 0; k < g.d; ++k) l[i * g.n + m] += g(i, j, k) * g(j, m, k);
  return l;
}

DensePower tensor_power(const DenseG& g, int p) {
  if (p < 1) throw std::invalid_argument("tensor_power needs p >= 1");
  DensePower out{g.n, g.d, 1, g.v};
  for (int q = 2; q <= p; ++q) {
    DensePower next{g.n, g.d, q, {}};
    next.v.assign(g.n * g.n * next.comps(), 0.0);
    const std::size_t prev_c = out.comps();
    // (G^q)(i, l, k1, rest) = sum_j G(i, j, k1) (G^(q-1))(j, l, rest)
    for (std::size_t i = 0; i < g.n; ++i)
      for (std::size_t j = 0; j < g.n; ++j)
        for (int k = 0; k < g.d; ++k) {
          const double a = g(i, j, k);
          if (a == 0.0) continue;
          for (std::size_t l = 0; l < g.n; ++l)
            for (std::size_t c = 0; c < prev_c; ++c)
              next.v[(i * g.n + l) * next.comps() + k * prev_c + c] += a * out(j, l, c);
        }
    out = std::move(next);
  }
  return out;
}

Field power_apply(const DensePower& gp, const Field& h0) {
  if (h0.rank != 0) throw std::invalid_argument("power_apply needs rank 0");
  Field out(gp.p, gp.n, h0.f, gp.d);
  for (std::size_t i = 0; i < gp.n; ++i)
    for (std::size_t l = 0; l < gp.n; ++l)
      for (std::size_t gg = 0; gg < h0.f; ++gg)
        for (std::size_t c = 0; c < gp.comps(); ++c) out.at(i, gg, c) += gp(i, l, c) * h0.at(l, gg, 0);
  return out;
}

Field power_contract(const DensePower& gp, const Field& h) {
  const int p = gp.p;
  const int q = h.rank;
  const int d = gp.d;
  const int paired = std::min(p, q);
  Field out(std::abs(p - q), gp.n, h.f, d);
  for (std::size_t i = 0; i < gp.n; ++i)
    for (std::size_t l = 0; l < gp.n; ++l)
      for (std::size_t gg = 0; gg < h.f; ++gg)
        for (std::size_t c = 0; c < gp.comps(); ++c) {
          const double a = gp(i, l, c);
          if (a == 0.0) continue;
          const auto k = digits(c, d, p);
          // h index: leading entries k_p, k_(p-1), ... then the free tail.
          std::vector<int> hk(q);
          for (int t = 0; t < paired; ++t) hk[t] = k[p - 1 - t];
          if (p >= q) {
            std::vector<int> free(k.begin(), k.begin() + (p - q));
            out.at(i, gg, flat(free, d)) += a * h.at(l, gg, flat(hk, d));
          } else {
            const std::size_t tail = power_of(d, q - p);
            for (std::size_t m = 0; m < tail; ++m) {
              const auto mt = digits(m, d, q - p);
              for (int t = 0; t < q - p; ++t) hk[p + t] = mt[t];
              out.at(i, gg, m) += a * h.at(l, gg, flat(hk, d));
            }
          }
        }
  return out;
}

std::vector<char> adjacency(std::size_t n, const std::vector<std::vector<std::size_t>>& cells, int m_hops) {
  std::vector<char> a(n * n, 0);
  for (const auto& cell : cells)
    for (auto i : cell)
      for (auto j : cell)
        if (i != j) a[i * n + j] = 1;
  std::vector<char> acc = a;
  std::vector<char> power = a;
  for (int m = 2; m <= m_hops; ++m) {
    std::vector<char> next(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (power[i * n + j])
          for (std::size_t l = 0; l < n; ++l)
            if (a[j * n + l]) next[i * n + l] = 1;
    power = next;
    for (std::size_t e = 0; e < n * n; ++e) acc[e] = acc[e] || power[e];
  }
  for (std::size_t i = 0; i < n; ++i) acc[i * n + i] = 0;
  return acc;
}

DenseG d_tilde(const std::vector<double>& positions, std::size_t n,
               const std::vector<std::vector<std::size_t>>& cells, int m_hops, const Weights& w, double rcond) {
  const int d = 3;
  const auto a = adjacency(n, cells, m_hops);
  DenseG g(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d xi(positions[3 * i], positions[3 * i + 1], positions[3 * i + 2]);
    Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
    for (std::size_t j = 0; j < n; ++j) {
      if (!a[i * n + j]) continue;
      const Eigen::Vector3d r = Eigen::Vector3d(positions[3 * j], positions[3 * j + 1], positions[3 * j + 2]) - xi;
      const Eigen::Vector3d u = r / r.norm();
      m += w(i, j) * u * u.transpose();
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& s = svd.singularValues();
    Eigen::Vector3d inv_s = Eigen::Vector3d::Zero();
    for (int k = 0; k < 3; ++k)
      if (s(k) > rcond * s(0)) inv_s(k) = 1.0 / s(k);
    const Eigen::Matrix3d pinv = svd.matrixV() * inv_s.asDiagonal() * svd.matrixU().transpose();
    for (std::size_t j = 0; j < n; ++j) {
      if (!a[i * n + j]) continue;
      const Eigen::Vector3d r = Eigen::Vector3d(positions[3 * j], positions[3 * j + 1], positions[3 * j + 2]) - xi;
      const Eigen::Vector3d e = pinv * r * (w(i, j) / r.squaredNorm());
      for (int k = 0; k < 3; ++k) {
        g(i, j, k) += e(k);
        g(i, i, k) -= e(k);
      }
    }
  }
  return g;
}

double tet_volume(const double* a, const double* b, const double* c, const double* e) {
  Eigen::Matrix3d m;
  for (int k = 0; k < 3; ++k) {
    m(0, k) = b[k] - a[k];
    m(1, k) = c[k] - a[k];
    m(2, k) = e[k] - a[k];
  }
  return m.determinant() / 6.0;
}

Field rotate(const std::vector<double>& u, const Field& h) {
  Field cur = h;
  const int d = h.d;
  const std::size_t nc = h.comps();
  for (int axis = 0; axis < h.rank; ++axis) {
    Field next = cur;
    std::fill(next.v.begin(), next.v.end(), 0.0);
    for (std::size_t i = 0; i < h.n; ++i)
      for (std::size_t g = 0; g < h.f; ++g)
        for (std::size_t c = 0; c < nc; ++c) {
          auto k = digits(c, d, h.rank);
          const int old = k[axis];
          for (int r = 0; r < d; ++r) {
            k[axis] = r;
            next.at(i, g, flat(k, d)) += u[r * d + old] * cur.at(i, g, c);
          }
        }
    cur = std::move(next);
  }
  return cur;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("size mismatch");
  double m = 0.0;
  for (std::size_t e = 0; e < a.size(); ++e) m = std::max(m, std::abs(a[e] - b[e]));
  return m;
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double den = 0.0;
  for (double x : b) den = std::max(den, std::abs(x));
  return max_abs_diff(a, b) / std::max(den, 1e-300);
}

}  // namespace oracle
