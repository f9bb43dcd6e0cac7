// SPDX-License-Identifier: Apache-2.0
#include "core/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "core/dataset.hpp"
#include "core/diffop.hpp"
#include "core/heat.hpp"
#include "core/training.hpp"

namespace isogcn {

namespace fs = std::filesystem;
using nlohmann::json;

const char* config_type_name(ConfigType t) noexcept {
  switch (t) {
    case ConfigType::String: return "string";
    case ConfigType::Integer: return "integer";
    case ConfigType::Number: return "number";
    case ConfigType::Boolean: return "boolean";
    case ConfigType::IntegerList: return "integer-list";
  }
  return "?";
}

namespace {

using T = ConfigType;

ConfigKey req(std::string name, T type, std::string help) { return {std::move(name), type, std::move(help), nullptr, true}; }
ConfigKey opt(std::string name, T type, json def, std::string help) {
  return {std::move(name), type, std::move(help), std::move(def), false};
}

std::vector<ConfigKey> with_common(std::vector<ConfigKey> keys) {
  keys.push_back(opt("threads", T::Integer, 1, "worker threads for row-parallel kernels"));
  keys.push_back(opt("deterministic", T::Boolean, true, "force one thread and a fixed reduction order"));
  return keys;
}

struct Command {
  std::string description;
  std::vector<ConfigKey> keys;
};

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table = [] {
    std::map<std::string, Command> m;
    m["gen-diffop"] = {
        "generate a differential-operator dataset on random pseudo-2D grids",
        with_common({req("out", T::String, "output dataset directory"),
                     opt("task", T::String, "0->1", "task: 0->1, 0->2, 1->0 or 1->2"),
                     opt("n_train", T::Integer, 100, "training samples"),
                     opt("n_val", T::Integer, 0, "validation samples"),
                     opt("n_test", T::Integer, 20, "test samples"),
                     opt("grid_min", T::Integer, 10, "minimum cells along x and y"),
                     opt("grid_max", T::Integer, 30, "maximum cells along x and y"),
                     opt("min_spacing", T::Number, 0.5, "smallest random cell edge"),
                     opt("max_spacing", T::Number, 1.5, "largest random cell edge"),
                     opt("max_order", T::Integer, 3, "highest Fourier order of the scalar fields (2..10)"),
                     opt("m_hops", T::Integer, 1, "adjacency hops of the cached D~"),
                     opt("seed", T::Integer, 0, "random seed")})};
    m["gen-heat"] = {
        "generate the anisotropic nonlinear heat dataset with the reference solver",
        with_common({req("out", T::String, "output dataset directory"),
                     opt("n_shapes", T::Integer, 10, "number of random shapes"),
                     opt("resolutions", T::IntegerList, json::array({5}), "base cell counts per shape (1 to 3 values)"),
                     opt("n_conditions", T::Integer, 3, "initial conditions per mesh"),
                     opt("jitter", T::Number, 0.2, "interior vertex jitter as a fraction of the spacing"),
                     opt("max_order", T::Integer, 10, "highest Fourier order of the initial conditions"),
                     opt("train_fraction", T::Number, 0.6, "fraction of shapes in the train split"),
                     opt("val_fraction", T::Number, 0.2, "fraction of shapes in the val split"),
                     opt("max_dt", T::Number, 5e-4, "largest explicit sub-step"),
                     opt("seed", T::Integer, 0, "random seed")})};
    m["preprocess"] = {
        "build and cache D~ for every sample and the training-split scaling factor",
        with_common({req("dataset", T::String, "dataset directory"),
                     opt("m_hops", T::Integer, nullptr, "adjacency hops (default: dataset setting)"),
                     opt("weights", T::String, nullptr, "constant_one or volume_ratio (default: dataset setting)"),
                     opt("cache_dir", T::String, "", "cache root (default: $ISOGCN_CACHE_DIR or <dataset>/cache)")})};
    m["train"] = {
        "train a task model and write a checkpoint with metrics.json",
        with_common({req("dataset", T::String, "dataset directory"),
                     req("out", T::String, "checkpoint directory"),
                     opt("task", T::String, nullptr, "task (default: dataset task)"),
                     opt("width", T::Integer, 16, "hidden feature width"),
                     opt("blocks", T::Integer, 2, "propagation blocks of the heat model"),
                     opt("epochs", T::Integer, 100, "training epochs"),
                     opt("batch_size", T::Integer, 4, "samples per update"),
                     opt("lr", T::Number, 1e-3, "Adam learning rate"),
                     opt("patience", T::Integer, 0, "early-stop patience in epochs (0 disables)"),
                     opt("seed", T::Integer, 0, "initialisation and shuffling seed"),
                     opt("train_split", T::String, "train", "split used for fitting"),
                     opt("val_split", T::String, "val", "split used for model selection when present"),
                     opt("eval_split", T::String, "test", "split scored into metrics.json"),
                     opt("m_hops", T::Integer, nullptr, "adjacency hops (default: dataset setting)"),
                     opt("weights", T::String, nullptr, "constant_one or volume_ratio (default: dataset setting)"),
                     opt("cache_dir", T::String, "", "IsoAM cache root")})};
    m["eval"] = {"score a checkpoint on a dataset split in the original scale",
                 with_common({req("checkpoint", T::String, "checkpoint directory"),
                              req("dataset", T::String, "dataset directory"),
                              opt("split", T::String, "test", "split to score"),
                              opt("out", T::String, "", "optional metrics.json path"),
                              opt("cache_dir", T::String, "", "IsoAM cache root")})};
    m["equivariance"] = {
        "audit invariance and equivariance of a model under random isometries",
        with_common({opt("checkpoint", T::String, "", "checkpoint directory (otherwise an untrained task model)"),
                     req("dataset", T::String, "dataset directory"),
                     opt("split", T::String, "test", "split supplying the audited samples"),
                     opt("task", T::String, nullptr, "task of the untrained model (default: dataset task)"),
                     opt("width", T::Integer, 16, "hidden width of the untrained model"),
                     opt("blocks", T::Integer, 2, "propagation blocks of the untrained heat model"),
                     opt("n_samples", T::Integer, 1, "number of audited samples"),
                     opt("trials", T::Integer, 20, "random isometries per sample"),
                     opt("tol", T::Number, 1e-6, "maximum allowed relative deviation"),
                     opt("negative_control", T::String, "none", "none, rank1_bias or componentwise_norm"),
                     opt("seed", T::Integer, 0, "seed for isometries and untrained weights")})};
    m["bench"] = {"time preprocessing and inference on structured tetrahedral boxes (single thread)",
                  with_common({opt("checkpoint", T::String, "", "checkpoint directory (otherwise an untrained model)"),
                               opt("task", T::String, "heat", "task of the untrained model"),
                               opt("width", T::Integer, 8, "hidden width of the untrained model"),
                               opt("blocks", T::Integer, 2, "propagation blocks of the untrained heat model"),
                               opt("sizes", T::IntegerList, json::array({10000, 100000}), "approximate vertex counts"),
                               opt("repetitions", T::Integer, 3, "timed repetitions (minimum is reported)"),
                               opt("memory_limit_mb", T::Integer, 4096, "estimated footprint above which a size is reported as oom"),
                               opt("out", T::String, "", "optional report path"),
                               opt("seed", T::Integer, 0, "random seed")})};
    m["infer"] = {"predict target fields for one sample directory or a mesh plus input fields",
                  with_common({req("checkpoint", T::String, "checkpoint directory"),
                               opt("sample", T::String, "", "sample directory (mesh.json + fields.json)"),
                               opt("mesh", T::String, "", "mesh JSON file"),
                               opt("inputs", T::String, "", "fields JSON file holding the model inputs"),
                               req("out", T::String, "output fields JSON"),
                               opt("vtk", T::String, "", "optional VTK export of the prediction")})};
    m["export-vtk"] = {"write a mesh and its fields as legacy ASCII VTK",
                       with_common({opt("sample", T::String, "", "sample directory"),
                                    opt("mesh", T::String, "", "mesh JSON file"),
                                    opt("fields", T::String, "", "fields JSON file"),
                                    req("out", T::String, "output .vtk path")})};
    return m;
  }();
  return table;
}

const Command& command(const std::string& name) {
  auto it = commands().find(name);
  require(it != commands().end(), ErrorCode::InvalidArgument, "unknown command '" + name + "'");
  return it->second;
}

bool type_matches(ConfigType t, const json& v) {
  switch (t) {
    case T::String: return v.is_string();
    case T::Integer: return v.is_number_integer();
    case T::Number: return v.is_number();
    case T::Boolean: return v.is_boolean();
    case T::IntegerList:
      if (!v.is_array()) return false;
      for (const auto& e : v)
        if (!e.is_number_integer()) return false;
      return true;
  }
  return false;
}

std::string text(const json& c, const char* key) { return c.at(key).get<std::string>(); }

void write_json_file(const json& j, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
  out << j.dump(1) << '\n';
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::NotFound, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, "invalid JSON in " + path.string() + ": " + e.what());
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

void require_dataset(const fs::path& root) {
  require(fs::exists(root / "dataset.json"), ErrorCode::NotFound, "dataset not found: " + root.string());
}

IsoAMOptions dataset_isoam_options(const json& manifest) {
  IsoAMOptions o;
  const auto iso = manifest.value("config", json::object()).value("isoam", json::object());
  o.m_hops = iso.value("m_hops", 1);
  o.weights = weight_kind_from_name(iso.value("weights", std::string("constant_one")));
  return o;
}

IsoAMOptions requested_isoam_options(const json& c, const json& manifest) {
  IsoAMOptions o = dataset_isoam_options(manifest);
  if (!c.at("m_hops").is_null()) o.m_hops = c.at("m_hops").get<int>();
  if (!c.at("weights").is_null()) o.weights = weight_kind_from_name(text(c, "weights"));
  require(o.m_hops >= 1 && o.m_hops <= 10, ErrorCode::InvalidArgument, "m_hops must be within 1..10");
  return o;
}

std::string cache_key(const IsoAMOptions& o) {
  return "m" + std::to_string(o.m_hops) + "_" + weight_kind_name(o.weights);
}

bool same_options(const IsoAMOptions& a, const IsoAMOptions& b) {
  return a.m_hops == b.m_hops && a.weights == b.weights;
}

std::vector<Sample> load_with_isoams(const fs::path& root, const std::string& split, const IsoAMOptions& opts,
                                     const std::string& cache_dir) {
  const auto manifest = load_dataset_manifest(root);
  auto samples = load_split(root, split);
  if (same_options(opts, dataset_isoam_options(manifest))) {
    ensure_isoams(samples, opts);
    return samples;
  }
  const fs::path cache = fs::path(resolve_cache_dir(cache_dir, root.string())) / cache_key(opts) / split;
  for (auto& s : samples) {
    const auto file = cache / (s.id + ".bin");
    s.isoam = fs::exists(file) ? load_isoam(file).isoam : build_isoam(s.mesh, opts);
  }
  return samples;
}

void apply_threads(const json& c) {
  const int threads = c.at("threads").get<int>();
  require(threads >= 1, ErrorCode::InvalidArgument, "threads must be >= 1");
  set_num_threads(c.at("deterministic").get<bool>() ? 1 : threads);
}

json metrics_json(const std::string& task, const std::string& split, const EvalResult& r, std::uint64_t seed,
                  double wall) {
  return {{"task", task}, {"split", split}, {"mse", r.mse}, {"sem", r.sem},
          {"n_samples", r.n_samples}, {"seed", seed}, {"wall_s", wall}};
}

EvalOptions eval_options(const std::string& task) {
  EvalOptions o;
  if (task == "heat") o.feature = 4;
  return o;
}

Normalizer identity_normalizer(const nn::ModelSpec& spec) {
  Normalizer n;
  for (const auto& sig : spec.inputs) {
    FieldNorm fn;
    fn.rank = sig.rank;
    if (sig.rank == 0) {
      fn.mean.assign(sig.features, 0.0);
      fn.scale.assign(sig.features, 1.0);
    } else {
      fn.scale = {1.0};
    }
    n.fields.emplace(sig.name, fn);
  }
  return n;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Routes the first rank >= 1 layer through an Mlp with identity weights and a
// non-zero bias. Only meaningful with rank rules disabled.
nn::ModelSpec inject_rank1_bias(nn::ModelSpec spec, const nn::Model& reference) {
  for (std::size_t li = 0; li < spec.layers.size(); ++li) {
    const auto& sig = reference.signature(spec.layers[li].name);
    if (sig.rank < 1) continue;
    const std::string src = spec.layers[li].name;
    nn::LayerSpec bias;
    bias.name = "injected_bias";
    bias.kind = nn::LayerKind::Mlp;
    bias.inputs = {src};
    bias.units = {sig.features};
    bias.activations = {nn::Activation::Identity};
    for (std::size_t k = li + 1; k < spec.layers.size(); ++k)
      for (auto& in : spec.layers[k].inputs)
        if (in == src) in = bias.name;
    for (auto& [target, layer] : spec.outputs)
      if (layer == src) layer = bias.name;
    spec.layers.insert(spec.layers.begin() + static_cast<std::ptrdiff_t>(li + 1), bias);
    return spec;
  }
  fail(ErrorCode::InvalidArgument, "model has no rank >= 1 layer to inject a bias into");
}

}  // namespace

std::vector<std::string> command_names() {
  std::vector<std::string> out;
  for (const auto& [name, cmd] : commands()) out.push_back(name);
  return out;
}

const std::vector<ConfigKey>& command_schema(const std::string& name) { return command(name).keys; }

std::string command_description(const std::string& name) { return command(name).description; }

json validate_config(const std::string& name, const json& config) {
  const auto& cmd = command(name);
  require(config.is_object(), ErrorCode::InvalidArgument, "config must be a JSON object");
  json out = json::object();
  for (auto it = config.begin(); it != config.end(); ++it) {
    bool known = false;
    for (const auto& k : cmd.keys) known |= k.name == it.key();
    require(known, ErrorCode::InvalidArgument, "unknown config key '" + it.key() + "' for command " + name);
  }
  for (const auto& k : cmd.keys) {
    if (config.contains(k.name) && !config.at(k.name).is_null()) {
      const auto& v = config.at(k.name);
      require(type_matches(k.type, v), ErrorCode::InvalidArgument,
              "config key '" + k.name + "' must be of type " + config_type_name(k.type));
      out[k.name] = v;
    } else {
      require(!k.required, ErrorCode::InvalidArgument, "missing required config key '" + k.name + "'");
      out[k.name] = k.default_value;
    }
  }
  return out;
}

std::string resolve_cache_dir(const std::string& configured, const std::string& dataset) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("ISOGCN_CACHE_DIR"); env && *env) return env;
  return (fs::path(dataset) / "cache").string();
}

namespace {

json cmd_gen_diffop(const json& c) {
  const auto task = diff_task_from_name(text(c, "task"));
  DiffopDatasetOptions o;
  o.max_order = c.at("max_order").get<int>();
  o.m_hops = c.at("m_hops").get<int>();
  o.grid.min_spacing = c.at("min_spacing").get<double>();
  o.grid.max_spacing = c.at("max_spacing").get<double>();
  require(o.grid.min_spacing > 0.0 && o.grid.max_spacing >= o.grid.min_spacing, ErrorCode::InvalidArgument,
          "spacing range must satisfy 0 < min_spacing <= max_spacing");
  std::vector<std::pair<std::string, std::size_t>> splits;
  for (const char* s : {"train", "val", "test"}) {
    const auto n = c.at(std::string("n_") + s).get<std::int64_t>();
    require(n >= 0, ErrorCode::InvalidArgument, "sample counts must be non-negative");
    if (n > 0) splits.emplace_back(s, static_cast<std::size_t>(n));
  }
  const auto seed = c.at("seed").get<std::uint64_t>();
  const auto ds = make_diffop_dataset(task, splits, {c.at("grid_min").get<int>(), c.at("grid_max").get<int>()},
                                      seed, o);
  save_dataset(ds, text(c, "out"));
  json counts = json::object();
  for (const auto& [name, samples] : ds.splits) counts[name] = samples.size();
  return {{"dataset", text(c, "out")},
          {"task", ds.task},
          {"splits", counts},
          {"summary", "wrote " + std::to_string(ds.total_samples()) + " " + ds.task + " samples to " + text(c, "out")}};
}

json cmd_gen_heat(const json& c) {
  HeatDatasetOptions o;
  o.n_shapes = c.at("n_shapes").get<std::size_t>();
  o.resolutions = c.at("resolutions").get<std::vector<int>>();
  o.n_conditions = c.at("n_conditions").get<std::size_t>();
  o.jitter = c.at("jitter").get<double>();
  o.max_order = c.at("max_order").get<int>();
  o.train_fraction = c.at("train_fraction").get<double>();
  o.val_fraction = c.at("val_fraction").get<double>();
  o.simulation.max_dt = c.at("max_dt").get<double>();
  const auto ds = make_heat_dataset(c.at("seed").get<std::uint64_t>(), o);
  save_dataset(ds, text(c, "out"));
  json counts = json::object();
  for (const auto& [name, samples] : ds.splits) counts[name] = samples.size();
  return {{"dataset", text(c, "out")},
          {"task", "heat"},
          {"splits", counts},
          {"summary", "wrote " + std::to_string(ds.total_samples()) + " heat samples to " + text(c, "out")}};
}

json cmd_preprocess(const json& c) {
  const fs::path root = text(c, "dataset");
  require_dataset(root);
  const auto manifest = load_dataset_manifest(root);
  const auto opts = requested_isoam_options(c, manifest);
  const fs::path cache = fs::path(resolve_cache_dir(text(c, "cache_dir"), root.string())) / cache_key(opts);
  std::map<std::string, std::vector<IsoAM>> built;
  std::size_t n = 0;
  for (auto it = manifest.at("splits").begin(); it != manifest.at("splits").end(); ++it) {
    const std::string split = it.key();
    fs::create_directories(cache / split);
    for (const auto& id : it.value()) {
      const Mesh mesh = load_mesh(root / split / id.get<std::string>() / "mesh.json");
      IsoAM g = build_isoam(mesh, opts);
      save_isoam(g, 1.0, cache / split / (id.get<std::string>() + ".bin"));
      if (split == "train") built[split].push_back(std::move(g));
      ++n;
    }
  }
  json result{{"cache", cache.string()}, {"n_samples", n}, {"m_hops", opts.m_hops},
              {"weights", weight_kind_name(opts.weights)}};
  if (!built["train"].empty()) {
    result["factor"] = scaling_factor(std::span<const IsoAM>(built["train"]));
  } else {
    result["factor"] = nullptr;
  }
  write_json_file(result, cache / "preprocess.json");
  result["summary"] = "cached " + std::to_string(n) + " IsoAMs in " + cache.string() +
                      (result["factor"].is_null() ? "" : ", scaling factor " + fmt(result["factor"].get<double>()));
  return result;
}

json cmd_train(const json& c) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path root = text(c, "dataset");
  require_dataset(root);
  const auto manifest = load_dataset_manifest(root);
  const std::string task = c.at("task").is_null() ? manifest.at("task").get<std::string>() : text(c, "task");
  const auto opts = requested_isoam_options(c, manifest);
  const std::string cache = text(c, "cache_dir");
  const auto& splits = manifest.at("splits");
  const auto seed = c.at("seed").get<std::uint64_t>();

  auto train_samples = load_with_isoams(root, text(c, "train_split"), opts, cache);
  Surrogate s;
  s.task = task;
  s.seed = seed;
  s.isoam_options = opts;
  TaskModelOptions mo;
  mo.width = c.at("width").get<std::size_t>();
  mo.blocks = c.at("blocks").get<int>();
  s.model = nn::Model(build_task_model(task, mo), seed);
  fit_preprocessing(s, train_samples);

  std::vector<PreparedSample> train_p, val_p;
  for (const auto& smp : train_samples) train_p.push_back(prepare(s, smp));
  const std::string val_split = text(c, "val_split");
  const bool has_val = splits.contains(val_split) && !splits.at(val_split).empty();
  if (has_val) {
    for (const auto& smp : load_with_isoams(root, val_split, opts, cache)) val_p.push_back(prepare(s, smp));
  }
  TrainConfig tc;
  tc.learning_rate = c.at("lr").get<double>();
  tc.batch_size = c.at("batch_size").get<std::size_t>();
  tc.epochs = c.at("epochs").get<std::size_t>();
  tc.patience = c.at("patience").get<std::size_t>();
  tc.seed = seed;
  const auto history = train(s, train_p, has_val ? &val_p : nullptr, tc);

  const fs::path out = text(c, "out");
  save_checkpoint(s, out);
  json hist{{"train_loss", history.train_loss}, {"val_loss", history.val_loss},
            {"best_epoch", history.best_epoch}, {"stopped_early", history.stopped_early}};
  write_json_file(hist, out / "history.json");

  const std::string eval_split = text(c, "eval_split");
  json result{{"checkpoint", out.string()}, {"history", hist}};
  std::string summary = "trained " + task + " for " + std::to_string(history.train_loss.size() - 1) +
                        " epochs, loss " + fmt(history.train_loss.front()) + " -> " + fmt(history.train_loss.back());
  if (splits.contains(eval_split) && !splits.at(eval_split).empty()) {
    const auto eval_samples = load_with_isoams(root, eval_split, opts, cache);
    const auto eo = eval_options(task);
    const auto r = evaluate(s, eval_samples, eo);
    const auto metrics = metrics_json(task, eval_split, r, seed, seconds_since(start));
    write_json_file(metrics, out / "metrics.json");
    result["metrics"] = metrics;
    result["constant_mse"] = constant_predictor_mse(eval_samples, eo);
    summary += "; " + eval_split + " mse " + fmt(r.mse) + " +/- " + fmt(r.sem);
  }
  result["summary"] = summary;
  return result;
}

json cmd_eval(const json& c) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path ckpt = text(c, "checkpoint");
  const auto s = load_checkpoint(ckpt);
  const fs::path root = text(c, "dataset");
  require_dataset(root);
  const std::string split = text(c, "split");
  const auto samples = load_with_isoams(root, split, s.isoam_options, text(c, "cache_dir"));
  const auto r = evaluate(s, samples, eval_options(s.task));
  auto metrics = metrics_json(s.task, split, r, s.seed, seconds_since(start));
  if (!text(c, "out").empty()) write_json_file(metrics, text(c, "out"));
  json result = metrics;
  result["summary"] = s.task + " " + split + ": mse " + fmt(r.mse) + " +/- " + fmt(r.sem) + " over " +
                      std::to_string(r.n_samples) + " samples";
  return result;
}

json cmd_equivariance(const json& c) {
  const fs::path root = text(c, "dataset");
  require_dataset(root);
  const auto manifest = load_dataset_manifest(root);
  const std::string control = text(c, "negative_control");
  require(control == "none" || control == "rank1_bias" || control == "componentwise_norm",
          ErrorCode::InvalidArgument, "negative_control must be none, rank1_bias or componentwise_norm");
  const auto seed = c.at("seed").get<std::uint64_t>();
  Surrogate s;
  if (!text(c, "checkpoint").empty()) {
    require(control == "none", ErrorCode::InvalidArgument, "negative controls apply to untrained models only");
    s = load_checkpoint(text(c, "checkpoint"));
  } else {
    s.task = c.at("task").is_null() ? manifest.at("task").get<std::string>() : text(c, "task");
    s.seed = seed;
    s.isoam_options = dataset_isoam_options(manifest);
    TaskModelOptions mo;
    mo.width = c.at("width").get<std::size_t>();
    mo.blocks = c.at("blocks").get<int>();
    auto spec = build_task_model(s.task, mo);
    NormalizerOptions norm;
    if (control == "rank1_bias") {
      const nn::Model reference(spec, seed);
      nn::BuildOptions bo;
      bo.enforce_rank_rules = false;
      s.model = nn::Model(inject_rank1_bias(spec, reference), seed, bo);
      for (auto& p : s.model.parameters()) {
        if (p.name == "injected_bias.b0") std::fill(p.values.begin(), p.values.end(), 0.5);
        if (p.name == "injected_bias.W0")
          for (std::size_t r = 0; r < p.rows; ++r)
            for (std::size_t q = 0; q < p.cols; ++q) p.values[r * p.cols + q] = r == q ? 1.0 : 0.0;
      }
    } else {
      s.model = nn::Model(spec, seed);
    }
    const auto& splits = manifest.at("splits");
    const std::string fit_split = splits.contains("train") && !splits.at("train").empty() ? "train" : text(c, "split");
    auto fit = load_with_isoams(root, fit_split, s.isoam_options, "");
    if (control == "componentwise_norm") {
      for (const auto* m : {&fit.front().inputs, &fit.front().targets})
        for (const auto& [name, f] : *m)
          if (f.rank() >= 1) norm.componentwise_fields.insert(name);
    }
    fit_preprocessing(s, fit, norm);
  }
  auto samples = load_with_isoams(root, text(c, "split"), s.isoam_options, "");
  const auto n = std::min<std::size_t>(samples.size(), c.at("n_samples").get<std::size_t>());
  require(n >= 1, ErrorCode::InvalidArgument, "no samples to audit");
  const double tol = c.at("tol").get<double>();
  json per_sample = json::array();
  double worst = 0.0;
  std::map<std::string, double> per_output;
  for (std::size_t k = 0; k < n; ++k) {
    const auto rep = check_equivariance(s, samples[k], c.at("trials").get<std::size_t>(), tol, seed + k);
    worst = std::max(worst, rep.max_deviation);
    for (const auto& [name, v] : rep.per_output) per_output[name] = std::max(per_output[name], v);
    per_sample.push_back({{"sample", samples[k].id}, {"max_deviation", rep.max_deviation}});
  }
  const bool passed = worst <= tol;
  json result{{"passed", passed},
          {"max_deviation", worst},
          {"tolerance", tol},
          {"trials", c.at("trials")},
          {"negative_control", control},
          {"per_output", per_output},
          {"samples", per_sample},
          {"summary", std::string(passed ? "PASS" : "FAIL") + ": max relative deviation " + fmt(worst) +
                          " (tolerance " + fmt(tol) + ")"}};
  if (s.task == "heat") {
    double drift = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      for (const double v : {-0.5, 0.0, 0.5}) drift = std::max(drift, constant_input_drift(s, samples[k], "T0", v));
    result["constant_drift"] = drift;
    result["summary"] = result["summary"].get<std::string>() + "; constant-input drift " + fmt(drift);
  }
  return result;
}

json cmd_bench(const json& c) {
  Surrogate s;
  if (!text(c, "checkpoint").empty()) {
    s = load_checkpoint(text(c, "checkpoint"));
  } else {
    s.task = text(c, "task");
    TaskModelOptions mo;
    mo.width = c.at("width").get<std::size_t>();
    mo.blocks = c.at("blocks").get<int>();
    s.model = nn::Model(build_task_model(s.task, mo), c.at("seed").get<std::uint64_t>());
    s.input_norm = identity_normalizer(s.model.spec());
    s.isoam_options.weights = s.task == "heat" ? WeightKind::VolumeRatio : WeightKind::ConstantOne;
  }
  BenchOptions bo;
  bo.repetitions = c.at("repetitions").get<int>();
  const auto limit_mb = c.at("memory_limit_mb").get<std::int64_t>();
  require(limit_mb > 0, ErrorCode::InvalidArgument, "memory_limit_mb must be positive");
  bo.memory_limit_bytes = static_cast<std::size_t>(limit_mb) << 20;
  bo.seed = c.at("seed").get<std::uint64_t>();
  std::vector<std::size_t> sizes;
  for (auto v : c.at("sizes").get<std::vector<std::int64_t>>()) {
    require(v >= 8, ErrorCode::InvalidArgument, "benchmark sizes must be >= 8");
    sizes.push_back(static_cast<std::size_t>(v));
  }
  const auto entries = benchmark_inference(s, sizes, bo);
  json arr = json::array();
  std::string summary;
  for (const auto& e : entries) {
    arr.push_back(bench_entry_to_json(e));
    summary += (summary.empty() ? "" : "\n") + std::to_string(e.vertices) + " vertices, nnz " + std::to_string(e.nnz) +
               ": " + (e.status == "ok" ? "preprocess " + fmt(e.preprocess_s) + " s, inference " + fmt(e.inference_s) + " s"
                                        : e.status + " (" + e.message + ")");
  }
  json result{{"task", s.task}, {"entries", arr}};
  if (!text(c, "out").empty()) write_json_file(result, text(c, "out"));
  result["summary"] = summary;
  return result;
}

struct MeshAndFields {
  Mesh mesh;
  FieldMap fields;
};

MeshAndFields load_mesh_and_fields(const json& c, const char* fields_key, bool targets_too) {
  MeshAndFields mf;
  if (!text(c, "sample").empty()) {
    const fs::path dir = text(c, "sample");
    mf.mesh = load_mesh(dir / "mesh.json");
    const auto j = read_json_file(dir / "fields.json");
    mf.fields = fields_from_json(j.at("inputs"));
    if (targets_too)
      for (auto& [name, f] : fields_from_json(j.at("targets"))) mf.fields.emplace(name, std::move(f));
    return mf;
  }
  require(!text(c, "mesh").empty(), ErrorCode::InvalidArgument, "give either 'sample' or 'mesh'");
  mf.mesh = load_mesh(text(c, "mesh"));
  if (!text(c, fields_key).empty()) {
    auto j = read_json_file(text(c, fields_key));
    if (j.contains("inputs") && j.at("inputs").is_object()) {
      auto all = fields_from_json(j.at("inputs"));
      if (targets_too && j.contains("targets"))
        for (auto& [name, f] : fields_from_json(j.at("targets"))) all.emplace(name, std::move(f));
      mf.fields = std::move(all);
    } else {
      mf.fields = fields_from_json(j);
    }
  }
  for (const auto& [name, f] : mf.fields) {
    require(f.n_vertices() == mf.mesh.n_vertices(), ErrorCode::Shape,
            "field '" + name + "' does not match the mesh vertex count");
  }
  return mf;
}

json cmd_infer(const json& c) {
  const auto s = load_checkpoint(text(c, "checkpoint"));
  const auto mf = load_mesh_and_fields(c, "inputs", false);
  const auto pred = predict(s, mf.mesh, mf.fields, build_isoam(mf.mesh, s.isoam_options));
  write_json_file(fields_to_json(pred), text(c, "out"));
  if (!text(c, "vtk").empty()) export_vtk(mf.mesh, pred, text(c, "vtk"));
  json names = json::array();
  for (const auto& [name, f] : pred) names.push_back(name);
  return {{"out", text(c, "out")}, {"fields", names}, {"n_vertices", mf.mesh.n_vertices()},
          {"summary", "predicted " + std::to_string(pred.size()) + " field(s) on " +
                          std::to_string(mf.mesh.n_vertices()) + " vertices"}};
}

json cmd_export_vtk(const json& c) {
  const auto mf = load_mesh_and_fields(c, "fields", true);
  FieldMap exportable;
  for (const auto& [name, f] : mf.fields)
    if (f.rank() <= 2) exportable.emplace(name, f);
  export_vtk(mf.mesh, exportable, text(c, "out"));
  return {{"out", text(c, "out")}, {"n_fields", exportable.size()},
          {"summary", "wrote " + text(c, "out")}};
}

}  // namespace

json run_command(const std::string& name, const json& config) {
  const json c = validate_config(name, config);
  apply_threads(c);
  if (name == "gen-diffop") return cmd_gen_diffop(c);
  if (name == "gen-heat") return cmd_gen_heat(c);
  if (name == "preprocess") return cmd_preprocess(c);
  if (name == "train") return cmd_train(c);
  if (name == "eval") return cmd_eval(c);
  if (name == "equivariance") return cmd_equivariance(c);
  if (name == "bench") return cmd_bench(c);
  if (name == "infer") return cmd_infer(c);
  if (name == "export-vtk") return cmd_export_vtk(c);
  fail(ErrorCode::InvalidArgument, "unknown command '" + name + "'");
}

}  // namespace isogcn
