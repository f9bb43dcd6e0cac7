// SPDX-License-Identifier: Apache-2.0
#include "core/diffop.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "core/isoam_builder.hpp"

namespace isogcn {

TensorField gradient(const IsoAM& dt, const TensorField& h0) {
  require(h0.rank() == 0, ErrorCode::Rank, "gradient expects a rank-0 field");
  return convolve(dt, h0);
}

TensorField divergence(const IsoAM& dt, const TensorField& h1) {
  require(h1.rank() == 1, ErrorCode::Rank, "divergence expects a rank-1 field");
  return contract(dt, h1);
}

TensorField laplacian(const IsoAM& dt, const TensorField& h0) {
  require(h0.rank() == 0, ErrorCode::Rank, "laplacian expects a rank-0 field");
  return self_contract(dt).apply(h0);
}

TensorField jacobian(const IsoAM& dt, const TensorField& h1) {
  require(h1.rank() == 1, ErrorCode::Rank, "jacobian expects a rank-1 field");
  return tensor_prod(dt, h1);
}

TensorField hessian(const IsoAM& dt, const TensorField& h0) {
  require(h0.rank() == 0, ErrorCode::Rank, "hessian expects a rank-0 field");
  return tensor_prod(dt, convolve(dt, h0));
}

AnalyticField::AnalyticField(std::vector<FourierMode> modes, std::array<double, 3> origin)
    : modes_(std::move(modes)), origin_(origin) {}

namespace {

double phase_of(const FourierMode& m, std::span<const double> x, const std::array<double, 3>& o) {
  double t = m.phase;
  for (int a = 0; a < 3; ++a) t += m.wavevector[a] * (x[a] - o[a]);
  return t;
}

}  // namespace

double AnalyticField::value(std::span<const double> x) const {
  double v = 0.0;
  for (const auto& m : modes_) v += m.amplitude * std::cos(phase_of(m, x, origin_));
  return v;
}

std::array<double, 3> AnalyticField::gradient(std::span<const double> x) const {
  std::array<double, 3> g{0, 0, 0};
  for (const auto& m : modes_) {
    const double s = -m.amplitude * std::sin(phase_of(m, x, origin_));
    for (int a = 0; a < 3; ++a) g[a] += s * m.wavevector[a];
  }
  return g;
}

std::array<double, 9> AnalyticField::hessian(std::span<const double> x) const {
  std::array<double, 9> h{};
  for (const auto& m : modes_) {
    const double c = -m.amplitude * std::cos(phase_of(m, x, origin_));
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) h[a * 3 + b] += c * m.wavevector[a] * m.wavevector[b];
  }
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < a; ++b) h[a * 3 + b] = h[b * 3 + a];
  return h;
}

double AnalyticField::laplacian(std::span<const double> x) const {
  const auto h = hessian(x);
  return h[0] + h[4] + h[8];
}

AnalyticField make_analytic_field(const BoundingBox& box, int max_order, std::uint64_t seed,
                                  const AnalyticFieldOptions& options) {
  require(max_order >= 2 && max_order <= 10, ErrorCode::InvalidArgument,
          "analytic field order must be within 2..10");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const int active_axes = options.planar ? 2 : 3;
  std::vector<FourierMode> modes;
  for (int order = 2; order <= max_order; ++order) {
    std::normal_distribution<double> amp(0.0, 1.0 / order);
    std::uniform_int_distribution<int> count(-order, order);
    std::uniform_int_distribution<int> axis(0, active_axes - 1);
    std::uniform_int_distribution<int> sign(0, 1);
    for (int k = 0; k < options.modes_per_order; ++k) {
      std::array<int, 3> waves{0, 0, 0};
      for (int a = 0; a < active_axes; ++a) waves[a] = count(rng);
      waves[axis(rng)] = sign(rng) ? order : -order;
      FourierMode m;
      m.amplitude = amp(rng);
      m.phase = phase(rng);
      for (int a = 0; a < 3; ++a) {
        const double extent = box.hi[a] - box.lo[a];
        m.wavevector[a] = extent > 0.0 ? std::numbers::pi * waves[a] / extent : 0.0;
      }
      modes.push_back(m);
    }
  }
  return AnalyticField(std::move(modes), box.lo);
}

const char* diff_task_name(DiffTask task) noexcept {
  switch (task) {
    case DiffTask::ScalarToGradient: return "0->1";
    case DiffTask::ScalarToHessian: return "0->2";
    case DiffTask::GradientToLaplacian: return "1->0";
    case DiffTask::GradientToHessian: return "1->2";
  }
  return "?";
}

DiffTask diff_task_from_name(const std::string& name) {
  if (name == "0->1" || name == "01") return DiffTask::ScalarToGradient;
  if (name == "0->2" || name == "02") return DiffTask::ScalarToHessian;
  if (name == "1->0" || name == "10") return DiffTask::GradientToLaplacian;
  if (name == "1->2" || name == "12") return DiffTask::GradientToHessian;
  fail(ErrorCode::InvalidArgument, "unknown differential-operator task '" + name + "'");
}

TaskSignature task_signature(DiffTask task) {
  switch (task) {
    case DiffTask::ScalarToGradient: return {"phi", 0, "grad", 1};
    case DiffTask::ScalarToHessian: return {"phi", 0, "hessian", 2};
    case DiffTask::GradientToLaplacian: return {"grad", 1, "laplacian", 0};
    case DiffTask::GradientToHessian: return {"grad", 1, "hessian", 2};
  }
  fail(ErrorCode::InvalidArgument, "unknown task");
}

namespace {

TensorField sample_field(const Mesh& mesh, const AnalyticField& field, int rank) {
  const std::size_t n = mesh.n_vertices();
  TensorField out(rank, n, 1, 3);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = mesh.position(i);
    if (rank == 0) {
      out.at(i, 0, 0) = field.value(x);
    } else if (rank == 1) {
      const auto g = field.gradient(x);
      for (int a = 0; a < 3; ++a) out.at(i, 0, a) = g[a];
    } else {
      const auto h = field.hessian(x);
      for (int a = 0; a < 9; ++a) out.at(i, 0, a) = h[a];
    }
  }
  return out;
}

TensorField sample_laplacian(const Mesh& mesh, const AnalyticField& field) {
  TensorField out(0, mesh.n_vertices(), 1, 3);
  for (std::size_t i = 0; i < mesh.n_vertices(); ++i) out.at(i, 0, 0) = field.laplacian(mesh.position(i));
  return out;
}

}  // namespace

std::vector<Sample> make_diffop_samples(DiffTask task, std::size_t n_samples,
                                        std::pair<int, int> grid_range, std::uint64_t seed,
                                        const DiffopDatasetOptions& options) {
  require(grid_range.first >= 1 && grid_range.second >= grid_range.first &&
              grid_range.second <= 200,
          ErrorCode::InvalidArgument, "grid range must satisfy 1 <= min <= max <= 200");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cells(grid_range.first, grid_range.second);
  const auto sig = task_signature(task);
  const IsoAMOptions iso{options.m_hops, WeightKind::ConstantOne, kDefaultRcond};
  std::vector<Sample> out;
  out.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    const int nx = cells(rng);
    const int ny = cells(rng);
    const std::uint64_t mesh_seed = rng();
    const std::uint64_t field_seed = rng();
    Sample sample;
    sample.id = "sample_" + std::to_string(s);
    sample.group = mesh_seed;
    sample.mesh = generate_grid_mesh(nx, ny, mesh_seed, options.grid);
    const auto field = make_analytic_field(bounding_box(sample.mesh), options.max_order, field_seed,
                                           {.planar = true});
    sample.inputs.emplace(sig.input, sample_field(sample.mesh, field, sig.input_rank));
    if (task == DiffTask::GradientToLaplacian) {
      sample.targets.emplace(sig.target, sample_laplacian(sample.mesh, field));
    } else {
      sample.targets.emplace(sig.target, sample_field(sample.mesh, field, sig.target_rank));
    }
    sample.meta = {{"task", diff_task_name(task)}, {"nx", nx}, {"ny", ny}, {"m_hops", options.m_hops}};
    sample.isoam = build_isoam(sample.mesh, iso);
    out.push_back(std::move(sample));
  }
  return out;
}

Dataset make_diffop_dataset(DiffTask task,
                            const std::vector<std::pair<std::string, std::size_t>>& splits,
                            std::pair<int, int> grid_range, std::uint64_t seed,
                            const DiffopDatasetOptions& options) {
  Dataset ds;
  ds.kind = "diffop";
  ds.task = diff_task_name(task);
  ds.config = {{"grid_range", {grid_range.first, grid_range.second}},
               {"seed", seed},
               {"max_order", options.max_order},
               {"isoam", {{"m_hops", options.m_hops}, {"weights", "constant_one"}}}};
  std::uint64_t k = 0;
  for (const auto& [name, count] : splits) {
    ds.splits[name] = make_diffop_samples(task, count, grid_range, seed + k * 1000003ULL, options);
    ++k;
  }
  return ds;
}

std::vector<std::uint8_t> interior_mask(const Mesh& mesh, const AdjacencyMatrix& a, int hops) {
  const std::size_t n = mesh.n_vertices();
  const auto box = bounding_box(mesh);
  double extent = 0.0;
  for (int k = 0; k < 3; ++k) extent = std::max(extent, box.hi[k] - box.lo[k]);
  const double tol = 1e-9 * std::max(extent, 1.0);
  constexpr auto kFar = std::numeric_limits<int>::max();
  std::vector<int> dist(n, kFar);
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = mesh.position(i);
    bool on_surface = false;
    for (int k = 0; k < 3; ++k) {
      on_surface |= std::abs(x[k] - box.lo[k]) <= tol || std::abs(x[k] - box.hi[k]) <= tol;
    }
    if (on_surface) {
      dist[i] = 0;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const auto u = queue.front();
    queue.pop_front();
    for (std::size_t e = a.row_ptr[u]; e < a.row_ptr[u + 1]; ++e) {
      const auto v = a.col_index[e];
      if (dist[v] == kFar) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) mask[i] = dist[i] > hops;
  return mask;
}

}  // namespace isogcn
