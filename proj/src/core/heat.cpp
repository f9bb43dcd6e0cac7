// SPDX-License-Identifier: Apache-2.0
#include "core/heat.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <new>
#include <random>

#include "core/diffop.hpp"

namespace isogcn {

std::array<double, 9> ConductivityModel::at(double temperature) const {
  std::array<double, 9> out = base;
  const double f = factor(temperature);
  for (auto& v : out) v *= f;
  return out;
}

std::array<double, 9> ConductivityModel::slope() const {
  std::array<double, 9> out = base;
  for (auto& v : out) v *= -0.25;
  return out;
}

ConductivityModel random_conductivity(std::uint64_t seed, double max_eigenvalue) {
  require(max_eigenvalue >= 0.0, ErrorCode::InvalidArgument, "maximum eigenvalue must be non-negative");
  std::mt19937_64 rng(seed);
  const auto q = Isometry::random(rng, 3, 0.0);
  std::uniform_real_distribution<double> eig(0.0, max_eigenvalue);
  const std::array<double, 3> lambda{eig(rng), eig(rng), eig(rng)};
  ConductivityModel c;
  for (int r = 0; r < 3; ++r)
    for (int s = 0; s < 3; ++s) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += q.u(r, k) * lambda[k] * q.u(s, k);
      c.base[r * 3 + s] = acc;
    }
  for (int r = 0; r < 3; ++r)
    for (int s = r + 1; s < 3; ++s) c.base[s * 3 + r] = c.base[r * 3 + s];
  return c;
}

IsoAM heat_operator(const Mesh& mesh) {
  return build_isoam(mesh, {1, WeightKind::VolumeRatio, kDefaultRcond});
}

namespace {

// div(f(T) C grad T); with `linear` the factor is frozen to `fixed`.
std::vector<double> apply_operator(const IsoAM& op, std::span<const double> t, const ConductivityModel& c,
                                   bool linear, double fixed) {
  const std::size_t n = op.n_vertices();
  require(t.size() == n, ErrorCode::Shape, "temperature field does not match the operator");
  const TensorField temp(0, n, 1, 3, std::vector<double>(t.begin(), t.end()));
  TensorField flux = convolve(op, temp);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = linear ? fixed : ConductivityModel::factor(t[i]);
    const double g[3] = {flux.at(i, 0, 0), flux.at(i, 0, 1), flux.at(i, 0, 2)};
    for (int r = 0; r < 3; ++r) {
      flux.at(i, 0, r) = f * (c.base[r * 3] * g[0] + c.base[r * 3 + 1] * g[1] + c.base[r * 3 + 2] * g[2]);
    }
  }
  const TensorField div = contract(op, flux);
  return {div.data().begin(), div.data().end()};
}

double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

std::vector<double> heat_rhs(const IsoAM& op, std::span<const double> t, const ConductivityModel& c) {
  return apply_operator(op, t, c, false, 1.0);
}

std::vector<double> heat_step(const IsoAM& op, std::span<const double> t, const ConductivityModel& c, double dt) {
  require(dt >= 0.0, ErrorCode::InvalidArgument, "time step must be non-negative");
  auto r = heat_rhs(op, t, c);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = t[i] + dt * r[i];
  return r;
}

double stable_time_step(const IsoAM& op, const ConductivityModel& c, double max_abs_temperature, double safety,
                        int iterations, std::uint64_t seed) {
  const std::size_t n = op.n_vertices();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(rng);
  const double f = ConductivityModel::factor(-std::max(max_abs_temperature, 1.0));
  double rho = 0.0;
  for (int it = 0; it < iterations; ++it) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    for (auto& x : v) x /= norm;
    v = apply_operator(op, v, c, true, f);
    double next = 0.0;
    for (double x : v) next += x * x;
    rho = std::sqrt(next);
  }
  if (!(rho > 0.0)) return std::numeric_limits<double>::infinity();
  return safety * 2.0 / rho;
}

SimulationResult simulate(const IsoAM& op, std::span<const double> t0, const ConductivityModel& c,
                          const SimulationOptions& options) {
  require(options.t_end > 0.0 && options.n_snapshots >= 1 && options.max_dt > 0.0, ErrorCode::InvalidArgument,
          "simulation needs t_end > 0, n_snapshots >= 1 and max_dt > 0");
  const double m0 = max_abs(t0);
  const double interval = options.t_end / options.n_snapshots;
  const double limit = std::min(options.max_dt, stable_time_step(op, c, m0, options.safety));
  const auto sub = static_cast<std::size_t>(std::ceil(interval / limit - 1e-9));
  SimulationResult res;
  res.dt = interval / static_cast<double>(sub);
  std::vector<double> t(t0.begin(), t0.end());
  for (int k = 1; k <= options.n_snapshots; ++k) {
    for (std::size_t s = 0; s < sub; ++s) {
      t = heat_step(op, t, c, res.dt);
      ++res.steps;
    }
    const double m = max_abs(t);
    if (!std::isfinite(m) || m > 10.0 * std::max(m0, 1e-300)) {
      fail(ErrorCode::Numeric, "explicit heat solver became unstable (max |T| grew from " + std::to_string(m0) +
                                   " to " + std::to_string(m) + ")");
    }
    res.snapshots.push_back(t);
    res.times.push_back(interval * k);
  }
  return res;
}

double self_convergence(const IsoAM& op, std::span<const double> t0, const ConductivityModel& c,
                        const SimulationOptions& options) {
  const auto coarse = simulate(op, t0, c, options);
  SimulationOptions fine = options;
  fine.max_dt = coarse.dt / 2.0;
  const auto refined = simulate(op, t0, c, fine);
  const auto& a = coarse.snapshots.back();
  const auto& b = refined.snapshots.back();
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(ss / static_cast<double>(a.size()));
}

namespace {

TensorField scalar_field(const std::vector<double>& v) {
  return TensorField(0, v.size(), 1, 3, v);
}

struct Shape {
  std::array<double, 3> aspect;
  std::array<double, 3> notch;
  std::uint64_t mesh_seed;
};

Shape random_shape(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> aspect(0.6, 1.4);
  std::uniform_real_distribution<double> notch(0.3, 0.5);
  std::bernoulli_distribution notched(0.5);
  Shape s;
  for (auto& a : s.aspect) a = aspect(rng);
  const bool has_notch = notched(rng);
  for (auto& n : s.notch) n = has_notch ? notch(rng) : 0.0;
  s.mesh_seed = rng();
  return s;
}

}  // namespace

Dataset make_heat_dataset(std::uint64_t seed, const HeatDatasetOptions& options) {
  require(options.n_shapes >= 1, ErrorCode::InvalidArgument, "need at least one shape");
  require(!options.resolutions.empty() && options.resolutions.size() <= 3, ErrorCode::InvalidArgument,
          "between one and three resolutions per shape");
  require(options.n_conditions >= 1, ErrorCode::InvalidArgument, "need at least one initial condition");
  require(options.jitter >= 0.0 && options.jitter < 0.3, ErrorCode::InvalidArgument, "jitter must be in [0, 0.3)");
  require(options.train_fraction >= 0.0 && options.val_fraction >= 0.0 &&
              options.train_fraction + options.val_fraction <= 1.0,
          ErrorCode::InvalidArgument, "split fractions must be non-negative and sum to at most 1");
  std::mt19937_64 rng(seed);
  std::vector<Shape> shapes;
  for (std::size_t k = 0; k < options.n_shapes; ++k) shapes.push_back(random_shape(rng));
  std::vector<std::size_t> order(options.n_shapes);
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(options.train_fraction * options.n_shapes));
  const auto n_val = std::min(options.n_shapes - n_train,
                              static_cast<std::size_t>(std::llround(options.val_fraction * options.n_shapes)));
  std::vector<std::string> split_of(options.n_shapes);
  for (std::size_t k = 0; k < order.size(); ++k) {
    split_of[order[k]] = k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
  }

  Dataset ds;
  ds.kind = "heat";
  ds.task = "heat";
  ds.config = {{"seed", seed},
               {"n_shapes", options.n_shapes},
               {"resolutions", options.resolutions},
               {"n_conditions", options.n_conditions},
               {"jitter", options.jitter},
               {"max_order", options.max_order},
               {"isoam", {{"m_hops", 1}, {"weights", "volume_ratio"}}},
               {"simulation", {{"t_end", options.simulation.t_end},
                               {"n_snapshots", options.simulation.n_snapshots},
                               {"max_dt", options.simulation.max_dt}}}};
  for (const char* split : {"train", "val", "test"}) ds.splits[split];
  for (std::size_t k = 0; k < options.n_shapes; ++k) {
    const auto& shape = shapes[k];
    std::mt19937_64 shape_rng(shape.mesh_seed);
    for (std::size_t r = 0; r < options.resolutions.size(); ++r) {
      const int res = options.resolutions[r];
      require(res >= 1 && res <= 100, ErrorCode::InvalidArgument, "resolution must be within 1..100");
      std::array<int, 3> cells{};
      for (int a = 0; a < 3; ++a) cells[a] = std::max(2, static_cast<int>(std::lround(res * shape.aspect[a])));
      TetMeshOptions tet;
      tet.notch = shape.notch;
      const Mesh mesh =
          rescale_to_unit_cube(generate_tet_mesh(cells[0], cells[1], cells[2], options.jitter, shape_rng(), tet));
      const IsoAM op = heat_operator(mesh);
      const auto conductivity = random_conductivity(shape_rng());
      const auto v_eff = effective_volume(mesh);
      const auto v_mean = mean_volume(mesh);
      TensorField c_field(2, mesh.n_vertices(), 1, 3);
      for (std::size_t i = 0; i < mesh.n_vertices(); ++i)
        for (int e = 0; e < 9; ++e) c_field.at(i, 0, e) = conductivity.base[e];
      for (std::size_t cond = 0; cond < options.n_conditions; ++cond) {
        const auto field = make_analytic_field(bounding_box(mesh), options.max_order, shape_rng());
        std::vector<double> t0(mesh.n_vertices());
        for (std::size_t i = 0; i < t0.size(); ++i) t0[i] = field.value(mesh.position(i));
        const double m = max_abs(t0);
        if (m > 0.0)
          for (auto& v : t0) v /= m;
        const auto sim = simulate(op, t0, conductivity, options.simulation);
        Sample s;
        s.id = "shape" + std::to_string(k) + "_res" + std::to_string(res) + "_ic" + std::to_string(cond);
        s.group = k;
        s.mesh = mesh;
        s.inputs.emplace("T0", scalar_field(t0));
        s.inputs.emplace("V_eff", scalar_field(v_eff));
        s.inputs.emplace("V_mean", scalar_field(v_mean));
        s.inputs.emplace("C", c_field);
        TensorField target(0, mesh.n_vertices(), sim.snapshots.size(), 3);
        for (std::size_t i = 0; i < mesh.n_vertices(); ++i)
          for (std::size_t q = 0; q < sim.snapshots.size(); ++q) target.at(i, q, 0) = sim.snapshots[q][i];
        s.targets.emplace(kHeatTarget, std::move(target));
        s.meta = {{"shape", k},
                  {"resolution", res},
                  {"condition", cond},
                  {"times", sim.times},
                  {"dt", sim.dt},
                  {"steps", sim.steps},
                  {"conductivity", conductivity.base}};
        s.isoam = op;
        ds.splits[split_of[k]].push_back(std::move(s));
      }
    }
  }
  return ds;
}

nlohmann::json bench_entry_to_json(const BenchEntry& e) {
  nlohmann::json j{{"vertices", e.vertices},
                   {"nnz", e.nnz},
                   {"preprocess_s", e.preprocess_s},
                   {"inference_s", e.inference_s},
                   {"status", e.status}};
  if (!e.message.empty()) j["message"] = e.message;
  return j;
}

BenchEntry bench_entry_from_json(const nlohmann::json& j) {
  BenchEntry e;
  e.vertices = j.at("vertices").get<std::size_t>();
  e.nnz = j.at("nnz").get<std::size_t>();
  e.preprocess_s = j.at("preprocess_s").get<double>();
  e.inference_s = j.at("inference_s").get<double>();
  e.status = j.value("status", std::string("ok"));
  e.message = j.value("message", std::string());
  return e;
}

namespace {

// Vertices, CSR pattern of D and D~, moment matrices and the widest model
// activations all alive at once.
std::size_t estimate_bytes(const Surrogate& s, std::size_t vertices) {
  const std::size_t nnz = 16 * vertices;
  std::size_t per_vertex = 24 + 6 * 16 + 3 * 9 * 8;
  std::size_t values = 0;
  for (const auto& sig : s.model.spec().inputs) values += sig.features * ipow(3, sig.rank);
  for (const auto& l : s.model.spec().layers) {
    const auto& sig = s.model.signature(l.name);
    values += sig.features * ipow(3, sig.rank);
  }
  per_vertex += values * 8;
  return vertices * per_vertex + nnz * (4 + 2 * (4 + 24));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class ThreadGuard {
 public:
  ThreadGuard() : saved_(num_threads()) { set_num_threads(1); }
  ~ThreadGuard() { set_num_threads(saved_); }
  ThreadGuard(const ThreadGuard&) = delete;
  ThreadGuard& operator=(const ThreadGuard&) = delete;

 private:
  int saved_;
};

}  // namespace

std::vector<BenchEntry> benchmark_inference(const Surrogate& s, const std::vector<std::size_t>& sizes,
                                            const BenchOptions& options) {
  require(options.repetitions >= 1, ErrorCode::InvalidArgument, "repetitions must be >= 1");
  ThreadGuard single_thread;
  std::vector<BenchEntry> out;
  std::mt19937_64 rng(options.seed);
  for (const auto target : sizes) {
    require(target >= 8, ErrorCode::InvalidArgument, "benchmark sizes must be >= 8 vertices");
    const int n = std::max(1, static_cast<int>(std::lround(std::cbrt(static_cast<double>(target)))) - 1);
    BenchEntry e;
    e.vertices = static_cast<std::size_t>(n + 1) * (n + 1) * (n + 1);
    const std::size_t need = estimate_bytes(s, e.vertices);
    if (need > options.memory_limit_bytes) {
      e.status = "oom";
      e.message = "estimated " + std::to_string(need >> 20) + " MiB exceeds the limit of " +
                  std::to_string(options.memory_limit_bytes >> 20) + " MiB";
      out.push_back(e);
      continue;
    }
    try {
      const Mesh mesh = generate_tet_mesh(n, n, n, 0.1, rng());
      std::normal_distribution<double> nd;
      e.preprocess_s = std::numeric_limits<double>::infinity();
      e.inference_s = std::numeric_limits<double>::infinity();
      for (int rep = 0; rep < options.repetitions; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        IsoAM g = scale_isoam(build_isoam(mesh, s.isoam_options), s.isoam_factor);
        e.preprocess_s = std::min(e.preprocess_s, seconds_since(t0));
        e.nnz = g.nnz();
        FieldMap inputs;
        for (const auto& sig : s.model.spec().inputs) {
          if (sig.rank == 0 && sig.features == 1 && (sig.name == "V_eff" || sig.name == "V_mean")) {
            const auto v = sig.name == "V_eff" ? effective_volume(mesh) : mean_volume(mesh);
            inputs.emplace(sig.name, s.input_norm.apply(sig.name, TensorField(0, v.size(), 1, 3, v)));
          } else {
            TensorField f(sig.rank, mesh.n_vertices(), sig.features, 3);
            for (auto& x : f.data()) x = nd(rng);
            inputs.emplace(sig.name, std::move(f));
          }
        }
        const auto t1 = std::chrono::steady_clock::now();
        const auto pred = s.model.forward(inputs, {&g, nullptr, mesh.positions()});
        e.inference_s = std::min(e.inference_s, seconds_since(t1));
      }
    } catch (const std::bad_alloc&) {
      e.status = "oom";
      e.message = "allocation failed";
      e.preprocess_s = 0.0;
      e.inference_s = 0.0;
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace isogcn
