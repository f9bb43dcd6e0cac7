// SPDX-License-Identifier: Apache-2.0
#include "core/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace isogcn {

namespace {

constexpr double kTiny = 1e-300;

}  // namespace

Normalizer Normalizer::fit(const std::vector<const FieldMap*>& maps, const NormalizerOptions& options) {
  Normalizer out;
  std::map<std::string, std::vector<const TensorField*>> by_name;
  for (const auto* m : maps)
    for (const auto& [name, f] : *m) by_name[name].push_back(&f);
  for (const auto& [name, fields] : by_name) {
    const auto& first = *fields.front();
    FieldNorm fn;
    fn.rank = first.rank();
    for (const auto* f : fields) {
      require(f->rank() == first.rank() && f->n_features() == first.n_features(), ErrorCode::Shape,
              "field '" + name + "' changes shape between samples");
    }
    const std::size_t nf = first.n_features();
    const std::size_t nc = first.components();
    if (fn.rank == 0 || options.componentwise_fields.count(name) != 0) {
      fn.componentwise = fn.rank > 0;
      const std::size_t slots = fn.rank == 0 ? nf : nf * nc;
      std::vector<double> s1(slots, 0.0), s2(slots, 0.0);
      double count = 0.0;
      for (const auto* f : fields) {
        for (std::size_t i = 0; i < f->n_vertices(); ++i)
          for (std::size_t g = 0; g < nf; ++g)
            for (std::size_t c = 0; c < nc; ++c) {
              const double v = f->at(i, g, c);
              const std::size_t k = fn.rank == 0 ? g : g * nc + c;
              s1[k] += v;
              s2[k] += v * v;
            }
        count += static_cast<double>(f->n_vertices());
      }
      fn.mean.resize(slots);
      fn.scale.resize(slots);
      for (std::size_t k = 0; k < slots; ++k) {
        fn.mean[k] = s1[k] / count;
        const double var = std::max(s2[k] / count - fn.mean[k] * fn.mean[k], 0.0);
        fn.scale[k] = std::sqrt(var);
        if (!(fn.scale[k] > 1e-12 * std::max(1.0, std::abs(fn.mean[k])))) {
          out.warnings.push_back("field '" + name + "' slot " + std::to_string(k) +
                                 " has zero standard deviation; left unscaled");
          fn.scale[k] = 1.0;
        }
      }
    } else {
      double s1 = 0.0, s2 = 0.0, count = 0.0;
      for (const auto* f : fields) {
        for (double v : f->data()) {
          s1 += v;
          s2 += v * v;
        }
        count += static_cast<double>(f->size());
      }
      const double mean = s1 / count;
      double sd = std::sqrt(std::max(s2 / count - mean * mean, 0.0));
      if (!(sd > 0.0)) {
        out.warnings.push_back("field '" + name + "' has zero standard deviation; left unscaled");
        sd = 1.0;
      }
      fn.scale = {sd};
    }
    out.fields.emplace(name, std::move(fn));
  }
  return out;
}

namespace {

template <class Op>
TensorField map_field(const FieldNorm& fn, const TensorField& field, Op op) {
  TensorField out = field;
  const std::size_t nc = out.components();
  for (std::size_t i = 0; i < out.n_vertices(); ++i)
    for (std::size_t g = 0; g < out.n_features(); ++g)
      for (std::size_t c = 0; c < nc; ++c) {
        double& v = out.at(i, g, c);
        if (fn.rank == 0) {
          v = op(v, fn.mean[g], fn.scale[g]);
        } else if (fn.componentwise) {
          v = op(v, fn.mean[g * nc + c], fn.scale[g * nc + c]);
        } else {
          v = op(v, 0.0, fn.scale[0]);
        }
      }
  return out;
}

}  // namespace

TensorField Normalizer::apply(const std::string& name, const TensorField& field) const {
  auto it = fields.find(name);
  require(it != fields.end(), ErrorCode::NotFound, "no normalisation constants for field '" + name + "'");
  require(it->second.rank == field.rank(), ErrorCode::Rank, "normaliser rank mismatch for '" + name + "'");
  return map_field(it->second, field, [](double v, double m, double s) { return (v - m) / s; });
}

TensorField Normalizer::invert(const std::string& name, const TensorField& field) const {
  auto it = fields.find(name);
  require(it != fields.end(), ErrorCode::NotFound, "no normalisation constants for field '" + name + "'");
  require(it->second.rank == field.rank(), ErrorCode::Rank, "normaliser rank mismatch for '" + name + "'");
  return map_field(it->second, field, [](double v, double m, double s) { return v * s + m; });
}

FieldMap Normalizer::apply(const FieldMap& in) const {
  FieldMap out;
  for (const auto& [name, f] : in) out.emplace(name, apply(name, f));
  return out;
}

FieldMap Normalizer::invert(const FieldMap& in) const {
  FieldMap out;
  for (const auto& [name, f] : in) out.emplace(name, invert(name, f));
  return out;
}

nlohmann::json Normalizer::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, fn] : fields) {
    j[name] = {{"rank", fn.rank}, {"componentwise", fn.componentwise}, {"mean", fn.mean}, {"scale", fn.scale}};
  }
  return j;
}

Normalizer Normalizer::from_json(const nlohmann::json& j) {
  Normalizer n;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      FieldNorm fn;
      fn.rank = it.value().at("rank").get<int>();
      fn.componentwise = it.value().value("componentwise", false);
      fn.mean = it.value().at("mean").get<std::vector<double>>();
      fn.scale = it.value().at("scale").get<std::vector<double>>();
      n.fields.emplace(it.key(), std::move(fn));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("normaliser JSON: ") + e.what());
  }
  return n;
}

nn::ModelSpec build_task_model(const std::string& task, const TaskModelOptions& options) {
  using nn::Activation;
  using nn::LayerKind;
  using nn::LayerSpec;
  const std::size_t w = options.width;
  require(w >= 1, ErrorCode::InvalidArgument, "model width must be >= 1");
  auto mlp = [](std::string name, std::string in, std::vector<std::size_t> units) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = LayerKind::Mlp;
    l.inputs = {std::move(in)};
    l.activations.assign(units.size(), Activation::Tanh);
    l.activations.back() = Activation::Identity;
    l.units = std::move(units);
    return l;
  };
  auto layer = [](std::string name, LayerKind kind, std::vector<std::string> in, int power = 1,
                  std::vector<std::size_t> units = {}) {
    LayerSpec l;
    l.name = std::move(name);
    l.kind = kind;
    l.inputs = std::move(in);
    l.power = power;
    l.units = std::move(units);
    return l;
  };
  nn::ModelSpec spec;
  if (task == "0->1" || task == "0->2") {
    const int p = task == "0->1" ? 1 : 2;
    spec.inputs = {{"phi", 0, 1}};
    spec.layers = {mlp("encoder", "phi", {w, w}), layer("conv", LayerKind::IsoConv, {"encoder"}, p),
                   layer("decoder", LayerKind::LinearFeature, {"conv"}, 1, {1})};
    spec.outputs = {{p == 1 ? "grad" : "hessian", "decoder"}};
  } else if (task == "1->0") {
    spec.inputs = {{"grad", 1, 1}};
    spec.layers = {layer("encoder", LayerKind::LinearFeature, {"grad"}, 1, {w}),
                   layer("contract", LayerKind::IsoContract, {"encoder"}, 1), mlp("decoder", "contract", {w, 1})};
    spec.outputs = {{"laplacian", "decoder"}};
  } else if (task == "1->2") {
    spec.inputs = {{"grad", 1, 1}};
    spec.layers = {layer("encoder", LayerKind::LinearFeature, {"grad"}, 1, {w}),
                   layer("invariant", LayerKind::IsoContract, {"encoder"}, 1),
                   mlp("gate", "invariant", {w, w}),
                   layer("product", LayerKind::IsoTensorProd, {"encoder"}),
                   layer("gated", LayerKind::GateMultiply, {"gate", "product"}),
                   layer("decoder", LayerKind::LinearFeature, {"gated"}, 1, {1})};
    spec.outputs = {{"hessian", "decoder"}};
  } else if (task == "heat") {
    require(options.blocks >= 1, ErrorCode::InvalidArgument, "heat model needs >= 1 propagation block");
    spec.inputs = {{"T0", 0, 1}, {"V_eff", 0, 1}, {"V_mean", 0, 1}, {"C", 2, 1}};
    spec.layers.push_back(mlp("encoder", "T0", {w, w}));
    std::string h = "encoder";
    for (int b = 0; b < options.blocks; ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      spec.layers.push_back(layer(p + "grad", LayerKind::IsoConv, {h}, 1));
      spec.layers.push_back(layer(p + "features", LayerKind::Concat, {h, "V_eff", "V_mean"}));
      spec.layers.push_back(mlp(p + "gate", p + "features", {w, w}));
      spec.layers.push_back(layer(p + "gated", LayerKind::GateMultiply, {p + "gate", p + "grad"}));
      spec.layers.push_back(layer(p + "flux", LayerKind::PointwiseContract, {"C", p + "gated"}));
      spec.layers.push_back(layer(p + "div", LayerKind::IsoContract, {p + "flux"}, 1));
      spec.layers.push_back(layer(p + "mix", LayerKind::LinearFeature, {p + "div"}, 1, {w}));
      spec.layers.push_back(layer(p + "out", LayerKind::ResidualAdd, {h, p + "mix"}));
      h = p + "out";
    }
    spec.layers.push_back(mlp("decoder", h, {w, 5}));
    spec.outputs = {{kHeatTarget, "decoder"}};
  } else {
    fail(ErrorCode::InvalidArgument, "unknown task '" + task + "' (0->1, 0->2, 1->0, 1->2, heat)");
  }
  return spec;
}

void fit_preprocessing(Surrogate& s, std::vector<Sample>& train, const NormalizerOptions& norm) {
  require(!train.empty(), ErrorCode::InvalidArgument, "training split is empty");
  ensure_isoams(train, s.isoam_options);
  std::vector<const IsoAM*> gs;
  std::vector<const FieldMap*> ins, tgs;
  for (const auto& smp : train) {
    gs.push_back(&*smp.isoam);
    ins.push_back(&smp.inputs);
    tgs.push_back(&smp.targets);
  }
  s.isoam_factor = scaling_factor(std::span<const IsoAM* const>(gs));
  s.input_norm = Normalizer::fit(ins, norm);
  s.target_norm = Normalizer::fit(tgs, norm);
}

PreparedSample prepare(const Surrogate& s, const Sample& sample, bool with_targets) {
  PreparedSample p;
  for (const auto& sig : s.model.spec().inputs) {
    auto it = sample.inputs.find(sig.name);
    require(it != sample.inputs.end(), ErrorCode::NotFound,
            "sample '" + sample.id + "' lacks input field '" + sig.name + "'");
    p.inputs.emplace(sig.name, s.input_norm.apply(sig.name, it->second));
  }
  if (with_targets) {
    for (const auto& [target, layer] : s.model.spec().outputs) {
      auto it = sample.targets.find(target);
      require(it != sample.targets.end(), ErrorCode::NotFound,
              "sample '" + sample.id + "' lacks target field '" + target + "'");
      p.targets.emplace(target, s.target_norm.apply(target, it->second));
    }
  }
  const IsoAM raw = sample.isoam ? *sample.isoam : build_isoam(sample.mesh, s.isoam_options);
  p.isoam = scale_isoam(raw, s.isoam_factor);
  p.isoam_t = p.isoam.transposed();
  p.positions.assign(sample.mesh.positions().begin(), sample.mesh.positions().end());
  return p;
}

FieldMap predict(const Surrogate& s, const Mesh& mesh, const FieldMap& raw_inputs, const IsoAM& unscaled) {
  FieldMap inputs;
  for (const auto& sig : s.model.spec().inputs) {
    auto it = raw_inputs.find(sig.name);
    require(it != raw_inputs.end(), ErrorCode::NotFound, "missing input field '" + sig.name + "'");
    inputs.emplace(sig.name, s.input_norm.apply(sig.name, it->second));
  }
  const IsoAM g = scale_isoam(unscaled, s.isoam_factor);
  nn::GraphContext ctx{&g, nullptr, mesh.positions()};
  return s.target_norm.invert(s.model.forward(inputs, ctx));
}

FieldMap predict(const Surrogate& s, const Sample& sample) {
  if (sample.isoam) return predict(s, sample.mesh, sample.inputs, *sample.isoam);
  return predict(s, sample.mesh, sample.inputs, build_isoam(sample.mesh, s.isoam_options));
}

double mse_loss(const FieldMap& prediction, const FieldMap& target, FieldMap* grad) {
  require(!target.empty(), ErrorCode::InvalidArgument, "loss needs at least one target");
  if (grad) grad->clear();
  const double nt = static_cast<double>(target.size());
  double loss = 0.0;
  for (const auto& [name, t] : target) {
    auto it = prediction.find(name);
    require(it != prediction.end(), ErrorCode::NotFound, "prediction lacks target '" + name + "'");
    const auto& p = it->second;
    require(p.same_shape(t), ErrorCode::Shape, "prediction and target '" + name + "' differ in shape");
    const double n = static_cast<double>(t.size());
    double acc = 0.0;
    TensorField g;
    if (grad) g = TensorField(p.rank(), p.n_vertices(), p.n_features(), p.dim());
    auto pd = p.data();
    auto td = t.data();
    for (std::size_t e = 0; e < td.size(); ++e) {
      const double d = pd[e] - td[e];
      acc += d * d;
      if (grad) g.data()[e] = 2.0 * d / (n * nt);
    }
    loss += acc / (n * nt);
    if (grad) grad->emplace(name, std::move(g));
  }
  return loss;
}

double dataset_loss(const Surrogate& s, const std::vector<PreparedSample>& samples) {
  require(!samples.empty(), ErrorCode::InvalidArgument, "empty sample set");
  double total = 0.0;
  for (const auto& p : samples) total += mse_loss(s.model.forward(p.inputs, p.context()), p.targets);
  return total / static_cast<double>(samples.size());
}

TrainHistory train(Surrogate& s, const std::vector<PreparedSample>& train_set,
                   const std::vector<PreparedSample>* val_set, const TrainConfig& config) {
  require(!train_set.empty(), ErrorCode::InvalidArgument, "training split is empty");
  require(config.learning_rate > 0.0 && config.batch_size >= 1, ErrorCode::InvalidArgument,
          "learning rate and batch size must be positive");
  const bool use_val = val_set && !val_set->empty();
  TrainHistory h;
  auto check = [&](double loss, std::size_t epoch) {
    if (!std::isfinite(loss) || loss > config.divergence_threshold) {
      fail(ErrorCode::Numeric, "training diverged at epoch " + std::to_string(epoch) + " (loss " +
                                   std::to_string(loss) + ")");
    }
  };
  h.train_loss.push_back(dataset_loss(s, train_set));
  check(h.train_loss.back(), 0);
  double best = h.train_loss.back();
  std::vector<nn::Parameter> best_params = s.model.parameters();
  if (use_val) {
    h.val_loss.push_back(dataset_loss(s, *val_set));
    best = h.val_loss.back();
  }
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      nn::Gradients acc = s.model.zero_gradients();
      for (std::size_t b = start; b < stop; ++b) {
        const auto& p = train_set[order[b]];
        const auto ctx = p.context();
        nn::Tape tape;
        const auto pred = s.model.forward(p.inputs, ctx, &tape);
        FieldMap dpred;
        epoch_loss += mse_loss(pred, p.targets, &dpred);
        const auto g = s.model.backward(tape, ctx, dpred);
        for (std::size_t k = 0; k < acc.size(); ++k)
          for (std::size_t e = 0; e < acc[k].size(); ++e) acc[k][e] += g[k][e];
      }
      const double inv = 1.0 / static_cast<double>(stop - start);
      for (auto& a : acc)
        for (auto& v : a) v *= inv;
      nn::adam_step(s.model.parameters(), acc, s.adam, config.learning_rate);
    }
    h.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    check(h.train_loss.back(), epoch);
    const double monitored = use_val ? dataset_loss(s, *val_set) : h.train_loss.back();
    if (use_val) h.val_loss.push_back(monitored);
    if (monitored < best) {
      best = monitored;
      h.best_epoch = epoch;
      since_best = 0;
      if (use_val) best_params = s.model.parameters();
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      h.stopped_early = true;
      break;
    }
  }
  if (use_val) s.model.parameters() = std::move(best_params);
  return h;
}

namespace {

TensorField select_feature(const TensorField& f, std::optional<std::size_t> feature) {
  if (!feature) return f;
  require(*feature < f.n_features(), ErrorCode::InvalidArgument,
          "feature index " + std::to_string(*feature) + " out of range");
  TensorField out(f.rank(), f.n_vertices(), 1, f.dim());
  for (std::size_t i = 0; i < f.n_vertices(); ++i)
    for (std::size_t c = 0; c < f.components(); ++c) out.at(i, 0, c) = f.at(i, *feature, c);
  return out;
}

}  // namespace

EvalResult evaluate_predictions(const std::vector<FieldMap>& predictions, const std::vector<Sample>& samples,
                                const EvalOptions& options) {
  require(predictions.size() == samples.size(), ErrorCode::Shape, "prediction count mismatch");
  require(!samples.empty(), ErrorCode::InvalidArgument, "no samples to evaluate");
  std::vector<double> sq;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    for (const auto& [name, t_raw] : samples[k].targets) {
      auto it = predictions[k].find(name);
      if (it == predictions[k].end()) continue;
      const auto t = select_feature(t_raw, options.feature);
      const auto p = select_feature(it->second, options.feature);
      require(p.same_shape(t), ErrorCode::Shape, "prediction and target '" + name + "' differ in shape");
      for (std::size_t e = 0; e < t.size(); ++e) {
        const double d = p.data()[e] - t.data()[e];
        sq.push_back(d * d);
      }
    }
  }
  require(!sq.empty(), ErrorCode::InvalidArgument, "no predicted target matched the samples");
  EvalResult r;
  r.n_samples = samples.size();
  r.n_entries = sq.size();
  const double n = static_cast<double>(sq.size());
  r.mse = std::accumulate(sq.begin(), sq.end(), 0.0) / n;
  if (sq.size() > 1) {
    double ss = 0.0;
    for (double v : sq) ss += (v - r.mse) * (v - r.mse);
    r.sem = std::sqrt(ss / (n - 1.0) / n);
  }
  return r;
}

EvalResult evaluate(const Surrogate& s, const std::vector<Sample>& samples, const EvalOptions& options) {
  std::vector<FieldMap> preds;
  preds.reserve(samples.size());
  for (const auto& smp : samples) preds.push_back(predict(s, smp));
  return evaluate_predictions(preds, samples, options);
}

double constant_predictor_mse(const std::vector<Sample>& samples, const EvalOptions& options) {
  double s1 = 0.0, s2 = 0.0, n = 0.0;
  for (const auto& smp : samples)
    for (const auto& [name, t_raw] : smp.targets) {
      const auto t = select_feature(t_raw, options.feature);
      for (double v : t.data()) {
        s1 += v;
        s2 += v * v;
      }
      n += static_cast<double>(t.size());
    }
  require(n > 0.0, ErrorCode::InvalidArgument, "no target entries");
  const double mean = s1 / n;
  return std::max(s2 / n - mean * mean, 0.0);
}

double relative_deviation(const TensorField& a, const TensorField& b) {
  require(a.size() == b.size(), ErrorCode::Shape, "relative_deviation: size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t e = 0; e < a.size(); ++e) {
    num = std::max(num, std::abs(a.data()[e] - b.data()[e]));
    den = std::max(den, std::abs(b.data()[e]));
  }
  return num / std::max(den, kTiny);
}

EquivarianceReport check_equivariance(const Surrogate& s, const Sample& sample, std::size_t n_trials,
                                      double tolerance, std::uint64_t seed) {
  EquivarianceReport rep;
  rep.trials = n_trials;
  rep.tolerance = tolerance;
  const auto base = predict(s, sample);
  std::map<std::string, FieldKind> kinds;
  for (const auto& [target, layer] : s.model.spec().outputs) {
    FieldKind k = FieldKind::TensorLike;
    for (const auto& l : s.model.spec().layers)
      if (l.name == layer && l.kind == nn::LayerKind::ReferencePositionAdd) k = FieldKind::PositionLike;
    kinds[target] = k;
    rep.per_output[target] = 0.0;
  }
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < n_trials; ++t) {
    const auto iso = Isometry::random(rng);
    const Mesh moved = sample.mesh.with_positions(iso.transform_positions(sample.mesh.positions()));
    FieldMap inputs;
    for (const auto& [name, f] : sample.inputs) inputs.emplace(name, transform_field(iso, f, FieldKind::TensorLike));
    const auto pred = predict(s, moved, inputs, build_isoam(moved, s.isoam_options));
    for (const auto& [name, f] : base) {
      const auto expected = transform_field(iso, f, kinds[name]);
      const double dev = relative_deviation(pred.at(name), expected);
      rep.per_output[name] = std::max(rep.per_output[name], dev);
      rep.max_deviation = std::max(rep.max_deviation, dev);
    }
  }
  rep.passed = rep.max_deviation <= tolerance;
  return rep;
}

double constant_input_drift(const Surrogate& s, const Sample& sample, const std::string& field, double value) {
  auto it = sample.inputs.find(field);
  require(it != sample.inputs.end(), ErrorCode::NotFound, "missing input field '" + field + "'");
  require(it->second.rank() == 0, ErrorCode::InvalidArgument, "constant_input_drift needs a rank-0 field");
  FieldMap inputs = sample.inputs;
  auto& f = inputs.at(field);
  std::fill(f.data().begin(), f.data().end(), value);
  const auto pred = sample.isoam ? predict(s, sample.mesh, inputs, *sample.isoam)
                                 : predict(s, sample.mesh, inputs, build_isoam(sample.mesh, s.isoam_options));
  double drift = 0.0;
  for (const auto& [name, p] : pred) {
    const std::size_t per_vertex = p.n_features() * p.components();
    for (std::size_t c = 0; c < per_vertex; ++c) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i = 0; i < p.n_vertices(); ++i) {
        lo = std::min(lo, p.data()[i * per_vertex + c]);
        hi = std::max(hi, p.data()[i * per_vertex + c]);
      }
      drift = std::max(drift, hi - lo);
    }
  }
  return drift;
}

}  // namespace isogcn
