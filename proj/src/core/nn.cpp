// SPDX-License-Identifier: Apache-2.0
#include "core/nn.hpp"

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <random>
#include <set>

namespace isogcn::nn {

const char* layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Mlp: return "mlp";
    case LayerKind::LinearFeature: return "linear_feature";
    case LayerKind::IsoConv: return "iso_conv";
    case LayerKind::IsoContract: return "iso_contract";
    case LayerKind::IsoTensorProd: return "iso_tensor_prod";
    case LayerKind::GateMultiply: return "gate_multiply";
    case LayerKind::ResidualAdd: return "residual_add";
    case LayerKind::Concat: return "concat";
    case LayerKind::PointwiseContract: return "pointwise_contract";
    case LayerKind::ReferencePositionAdd: return "reference_position_add";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  for (auto k : {LayerKind::Mlp, LayerKind::LinearFeature, LayerKind::IsoConv,
                 LayerKind::IsoContract, LayerKind::IsoTensorProd, LayerKind::GateMultiply,
                 LayerKind::ResidualAdd, LayerKind::Concat, LayerKind::PointwiseContract,
                 LayerKind::ReferencePositionAdd}) {
    if (name == layer_kind_name(k)) return k;
  }
  fail(ErrorCode::Parse, "unknown layer kind '" + name + "'");
}

const char* activation_name(Activation a) noexcept {
  return a == Activation::Tanh ? "tanh" : "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  fail(ErrorCode::Parse, "unknown activation '" + name + "' (tanh or identity)");
}

nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["inputs"] = nlohmann::json::array();
  for (const auto& s : spec.inputs) {
    j["inputs"].push_back({{"name", s.name}, {"rank", s.rank}, {"features", s.features}});
  }
  j["layers"] = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json lj{{"name", l.name}, {"kind", layer_kind_name(l.kind)}, {"inputs", l.inputs}};
    if (!l.units.empty()) lj["units"] = l.units;
    if (!l.activations.empty()) {
      auto& acts = lj["activations"] = nlohmann::json::array();
      for (auto a : l.activations) acts.push_back(activation_name(a));
    }
    if (l.kind == LayerKind::IsoConv || l.kind == LayerKind::IsoContract) lj["power"] = l.power;
    if (l.kind == LayerKind::Mlp) lj["bias"] = l.bias;
    j["layers"].push_back(std::move(lj));
  }
  j["outputs"] = nlohmann::json::object();
  for (const auto& [target, layer] : spec.outputs) j["outputs"][target] = layer;
  return j;
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec;
    for (const auto& s : j.at("inputs")) {
      spec.inputs.push_back({s.at("name").get<std::string>(), s.at("rank").get<int>(),
                             s.at("features").get<std::size_t>()});
    }
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.name = lj.at("name").get<std::string>();
      l.kind = layer_kind_from_name(lj.at("kind").get<std::string>());
      l.inputs = lj.at("inputs").get<std::vector<std::string>>();
      l.units = lj.value("units", std::vector<std::size_t>{});
      for (const auto& a : lj.value("activations", nlohmann::json::array())) {
        l.activations.push_back(activation_from_name(a.get<std::string>()));
      }
      l.power = lj.value("power", 1);
      l.bias = lj.value("bias", true);
      spec.layers.push_back(std::move(l));
    }
    for (auto it = j.at("outputs").begin(); it != j.at("outputs").end(); ++it) {
      spec.outputs.emplace_back(it.key(), it.value().get<std::string>());
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("model spec JSON: ") + e.what());
  }
}

namespace {

[[noreturn]] void bad_layer(const LayerSpec& l, const std::string& msg) {
  fail(ErrorCode::Construction, "layer '" + l.name + "' (" + layer_kind_name(l.kind) + "): " + msg);
}

// y[i,h,c] = act(sum_g x[i,g,c] W[g,h] + b[h])
TensorField dense(const TensorField& x, const Parameter& w, const Parameter* b, Activation act) {
  const std::size_t n = x.n_vertices();
  const std::size_t fi = w.rows;
  const std::size_t fo = w.cols;
  const std::size_t nc = x.components();
  TensorField y(x.rank(), n, fo, x.dim());
  const double* W = w.values.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < fo; ++h) {
      for (std::size_t c = 0; c < nc; ++c) {
        double acc = b ? b->values[h] : 0.0;
        for (std::size_t g = 0; g < fi; ++g) acc += x.at(i, g, c) * W[g * fo + h];
        y.at(i, h, c) = act == Activation::Tanh ? std::tanh(acc) : acc;
      }
    }
  }
  return y;
}

// Given dL/dy for y = dense(x), accumulate dW, db and return dL/dx.
TensorField dense_backward(const TensorField& x, const TensorField& y, const TensorField& dy,
                           const Parameter& w, Activation act, std::vector<double>& dw,
                           std::vector<double>* db) {
  const std::size_t n = x.n_vertices();
  const std::size_t fi = w.rows;
  const std::size_t fo = w.cols;
  const std::size_t nc = x.components();
  TensorField dz = dy;
  if (act == Activation::Tanh) {
    auto z = dz.data();
    auto yy = y.data();
    for (std::size_t e = 0; e < z.size(); ++e) z[e] *= 1.0 - yy[e] * yy[e];
  }
  TensorField dx(x.rank(), n, fi, x.dim());
  const double* W = w.values.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < nc; ++c) {
      for (std::size_t h = 0; h < fo; ++h) {
        const double gz = dz.at(i, h, c);
        if (gz == 0.0) continue;
        if (db) (*db)[h] += gz;
        for (std::size_t g = 0; g < fi; ++g) {
          dw[g * fo + h] += x.at(i, g, c) * gz;
          dx.at(i, g, c) += W[g * fo + h] * gz;
        }
      }
    }
  }
  return dx;
}

void add_into(TensorField& acc, const TensorField& v) {
  if (acc.size() == 0) {
    acc = v;
    return;
  }
  auto a = acc.data();
  auto b = v.data();
  for (std::size_t e = 0; e < a.size(); ++e) a[e] += b[e];
}

std::size_t gate_feature(std::size_t gate_features, std::size_t g) {
  return gate_features == 1 ? 0 : g;
}

// out[i,g,alpha,beta] = sum_l A[i,ga,alpha,l] B[i,g,l,beta]
TensorField pointwise_contract(const TensorField& a, const TensorField& b) {
  const std::size_t d = static_cast<std::size_t>(b.dim());
  const std::size_t na = a.components() / d;
  const std::size_t nb = b.components() / d;
  TensorField out(a.rank() + b.rank() - 2, b.n_vertices(), b.n_features(), b.dim());
  for (std::size_t i = 0; i < b.n_vertices(); ++i) {
    for (std::size_t g = 0; g < b.n_features(); ++g) {
      const std::size_t ga = gate_feature(a.n_features(), g);
      for (std::size_t al = 0; al < na; ++al) {
        for (std::size_t be = 0; be < nb; ++be) {
          double acc = 0.0;
          for (std::size_t l = 0; l < d; ++l) acc += a.at(i, ga, al * d + l) * b.at(i, g, l * nb + be);
          out.at(i, g, al * nb + be) = acc;
        }
      }
    }
  }
  return out;
}

std::vector<double> centroid(std::span<const double> positions, int dim) {
  std::vector<double> c(dim, 0.0);
  const std::size_t n = positions.size() / dim;
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < dim; ++k) c[k] += positions[i * dim + k];
  for (auto& v : c) v /= static_cast<double>(n);
  return c;
}

const IsoAM& need(const IsoAM* g, const char* what) {
  require(g != nullptr, ErrorCode::InvalidArgument, std::string("graph context lacks ") + what);
  return *g;
}

}  // namespace

Model::Model(ModelSpec spec, std::uint64_t seed, BuildOptions options)
    : spec_(std::move(spec)), options_(options) {
  resolve();
  initialize(seed);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.values.size();
  return n;
}

const FieldSignature& Model::signature(const std::string& node) const {
  auto it = node_index_.find(node);
  require(it != node_index_.end(), ErrorCode::NotFound, "no node named '" + node + "'");
  return nodes_[it->second];
}

void Model::resolve() {
  nodes_.clear();
  node_index_.clear();
  layers_.clear();
  params_.clear();
  auto add_node = [&](const FieldSignature& s) {
    require(!s.name.empty(), ErrorCode::Construction, "empty node name");
    require(node_index_.emplace(s.name, nodes_.size()).second, ErrorCode::Construction,
            "duplicate node name '" + s.name + "'");
    nodes_.push_back(s);
  };
  for (const auto& in : spec_.inputs) {
    require(in.rank >= 0 && in.rank <= 4, ErrorCode::Construction, "input '" + in.name + "' has unsupported rank");
    require(in.features >= 1, ErrorCode::Construction, "input '" + in.name + "' needs >= 1 feature");
    add_node(in);
  }
  auto add_param = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    params_.push_back({name, rows, cols, std::vector<double>(rows * cols, 0.0)});
    return params_.size() - 1;
  };
  for (const auto& l : spec_.layers) {
    Resolved r;
    for (const auto& name : l.inputs) {
      auto it = node_index_.find(name);
      if (it == node_index_.end()) bad_layer(l, "unknown or later input '" + name + "'");
      r.inputs.push_back(it->second);
    }
    auto arity = [&](std::size_t n) {
      if (r.inputs.size() != n) bad_layer(l, "expects " + std::to_string(n) + " input(s)");
    };
    auto in = [&](std::size_t k) -> const FieldSignature& { return nodes_[r.inputs[k]]; };
    r.out.name = l.name;
    switch (l.kind) {
      case LayerKind::Mlp: {
        arity(1);
        if (l.units.empty()) bad_layer(l, "needs at least one dense layer");
        if (l.activations.size() != l.units.size()) bad_layer(l, "needs one activation per dense layer");
        if (options_.enforce_rank_rules && in(0).rank != 0) {
          bad_layer(l, "bias and nonlinear activation are only allowed on rank-0 fields (input has rank " +
                           std::to_string(in(0).rank) + ")");
        }
        std::size_t fi = in(0).features;
        for (std::size_t k = 0; k < l.units.size(); ++k) {
          if (l.units[k] == 0) bad_layer(l, "zero-width dense layer");
          r.weights.push_back(add_param(l.name + ".W" + std::to_string(k), fi, l.units[k]));
          if (l.bias) r.biases.push_back(add_param(l.name + ".b" + std::to_string(k), 1, l.units[k]));
          fi = l.units[k];
        }
        r.out.rank = in(0).rank;
        r.out.features = fi;
        break;
      }
      case LayerKind::LinearFeature: {
        arity(1);
        if (l.units.size() != 1 || l.units[0] == 0) bad_layer(l, "needs units = {f_out}");
        r.weights.push_back(add_param(l.name + ".W", in(0).features, l.units[0]));
        r.out.rank = in(0).rank;
        r.out.features = l.units[0];
        break;
      }
      case LayerKind::IsoConv:
        arity(1);
        if (in(0).rank != 0) bad_layer(l, "needs a rank-0 input");
        if (l.power < 1 || l.power > 4) bad_layer(l, "power must be within 1..4");
        r.out.rank = l.power;
        r.out.features = in(0).features;
        break;
      case LayerKind::IsoContract:
        arity(1);
        if (in(0).rank < 1) bad_layer(l, "needs an input of rank >= 1");
        if (l.power < 1 || l.power > 4) bad_layer(l, "power must be within 1..4");
        r.out.rank = std::abs(l.power - in(0).rank);
        r.out.features = in(0).features;
        break;
      case LayerKind::IsoTensorProd:
        arity(1);
        if (in(0).rank > 3) bad_layer(l, "output rank would exceed 4");
        r.out.rank = in(0).rank + 1;
        r.out.features = in(0).features;
        break;
      case LayerKind::GateMultiply:
        arity(2);
        if (in(0).rank != 0) bad_layer(l, "gate (first input) must be rank 0");
        if (in(0).features != 1 && in(0).features != in(1).features)
          bad_layer(l, "gate features must be 1 or match the gated field");
        r.out = in(1);
        r.out.name = l.name;
        break;
      case LayerKind::ResidualAdd:
        if (r.inputs.size() < 2) bad_layer(l, "needs at least two inputs");
        for (std::size_t k = 1; k < r.inputs.size(); ++k) {
          if (in(k).rank != in(0).rank || in(k).features != in(0).features)
            bad_layer(l, "inputs must share rank and feature count");
        }
        r.out = in(0);
        r.out.name = l.name;
        break;
      case LayerKind::Concat: {
        if (r.inputs.empty()) bad_layer(l, "needs at least one input");
        std::size_t f = 0;
        for (std::size_t k = 0; k < r.inputs.size(); ++k) {
          if (in(k).rank != in(0).rank) bad_layer(l, "inputs must share rank");
          f += in(k).features;
        }
        r.out.rank = in(0).rank;
        r.out.features = f;
        break;
      }
      case LayerKind::PointwiseContract:
        arity(2);
        if (in(0).rank < 1 || in(1).rank < 1) bad_layer(l, "both inputs need rank >= 1");
        if (in(0).features != 1 && in(0).features != in(1).features)
          bad_layer(l, "first input features must be 1 or match the second");
        r.out.rank = in(0).rank + in(1).rank - 2;
        r.out.features = in(1).features;
        break;
      case LayerKind::ReferencePositionAdd:
        arity(1);
        if (in(0).rank != 1) bad_layer(l, "needs a rank-1 input");
        r.out = in(0);
        r.out.name = l.name;
        break;
    }
    add_node(r.out);
    layers_.push_back(std::move(r));
  }
  std::set<std::string> targets;
  for (const auto& [target, layer] : spec_.outputs) {
    require(targets.insert(target).second, ErrorCode::Construction, "duplicate output '" + target + "'");
    require(node_index_.count(layer) != 0, ErrorCode::Construction,
            "output '" + target + "' refers to unknown node '" + layer + "'");
  }
  require(!spec_.outputs.empty(), ErrorCode::Construction, "model has no outputs");
  last_use_.assign(nodes_.size(), 0);
  for (std::size_t li = 0; li < layers_.size(); ++li)
    for (auto k : layers_[li].inputs) last_use_[k] = li;
  for (const auto& [target, layer] : spec_.outputs) last_use_[node_index_.at(layer)] = SIZE_MAX;
}

void Model::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& r : layers_) {
    for (auto k : r.weights) {
      auto& p = params_[k];
      const double limit = std::sqrt(6.0 / static_cast<double>(p.rows + p.cols));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (auto& v : p.values) v = u(rng);
    }
  }
}

Gradients Model::zero_gradients() const {
  Gradients g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p.values.size(), 0.0);
  return g;
}

FieldMap Model::forward(const FieldMap& inputs, const GraphContext& ctx, Tape* tape) const {
  std::vector<TensorField> values(nodes_.size());
  std::size_t n_vertices = 0;
  for (std::size_t k = 0; k < spec_.inputs.size(); ++k) {
    const auto& sig = spec_.inputs[k];
    auto it = inputs.find(sig.name);
    require(it != inputs.end(), ErrorCode::InvalidArgument, "missing model input '" + sig.name + "'");
    const auto& f = it->second;
    require(f.rank() == sig.rank, ErrorCode::Rank,
            "input '" + sig.name + "' has rank " + std::to_string(f.rank()) + ", expected " +
                std::to_string(sig.rank));
    require(f.n_features() == sig.features, ErrorCode::Shape,
            "input '" + sig.name + "' has " + std::to_string(f.n_features()) + " features, expected " +
                std::to_string(sig.features));
    if (k == 0) n_vertices = f.n_vertices();
    require(f.n_vertices() == n_vertices, ErrorCode::Shape, "inputs disagree on vertex count");
    values[k] = f;
  }
  if (tape) tape->mlp_outputs.assign(layers_.size(), {});
  const std::size_t base = spec_.inputs.size();
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const auto& l = spec_.layers[li];
    const auto& r = layers_[li];
    auto x = [&](std::size_t k) -> const TensorField& { return values[r.inputs[k]]; };
    TensorField out;
    switch (l.kind) {
      case LayerKind::Mlp: {
        TensorField cur = x(0);
        for (std::size_t k = 0; k < l.units.size(); ++k) {
          cur = dense(cur, params_[r.weights[k]], l.bias ? &params_[r.biases[k]] : nullptr, l.activations[k]);
          if (tape) tape->mlp_outputs[li].push_back(cur);
        }
        out = std::move(cur);
        break;
      }
      case LayerKind::LinearFeature:
        out = dense(x(0), params_[r.weights[0]], nullptr, Activation::Identity);
        break;
      case LayerKind::IsoConv:
        out = power_apply(need(ctx.isoam, "an IsoAM"), l.power, x(0));
        break;
      case LayerKind::IsoContract:
        out = power_contract(need(ctx.isoam, "an IsoAM"), l.power, x(0));
        break;
      case LayerKind::IsoTensorProd:
        out = tensor_prod(need(ctx.isoam, "an IsoAM"), x(0));
        break;
      case LayerKind::GateMultiply: {
        const auto& gate = x(0);
        out = x(1);
        const std::size_t nc = out.components();
        for (std::size_t i = 0; i < out.n_vertices(); ++i)
          for (std::size_t g = 0; g < out.n_features(); ++g) {
            const double s = gate.at(i, gate_feature(gate.n_features(), g), 0);
            for (std::size_t c = 0; c < nc; ++c) out.at(i, g, c) *= s;
          }
        break;
      }
      case LayerKind::ResidualAdd:
        out = x(0);
        for (std::size_t k = 1; k < r.inputs.size(); ++k) add_into(out, x(k));
        break;
      case LayerKind::Concat: {
        out = TensorField(r.out.rank, x(0).n_vertices(), r.out.features, x(0).dim());
        const std::size_t nc = out.components();
        for (std::size_t i = 0; i < out.n_vertices(); ++i) {
          std::size_t g0 = 0;
          for (std::size_t k = 0; k < r.inputs.size(); ++k) {
            const auto& src = x(k);
            for (std::size_t g = 0; g < src.n_features(); ++g)
              for (std::size_t c = 0; c < nc; ++c) out.at(i, g0 + g, c) = src.at(i, g, c);
            g0 += src.n_features();
          }
        }
        break;
      }
      case LayerKind::PointwiseContract:
        out = pointwise_contract(x(0), x(1));
        break;
      case LayerKind::ReferencePositionAdd: {
        out = x(0);
        const int d = out.dim();
        require(ctx.positions.size() == out.n_vertices() * static_cast<std::size_t>(d),
                ErrorCode::InvalidArgument, "reference_position_add needs vertex positions");
        const auto ref = centroid(ctx.positions, d);
        for (std::size_t i = 0; i < out.n_vertices(); ++i)
          for (std::size_t g = 0; g < out.n_features(); ++g)
            for (int k = 0; k < d; ++k) out.at(i, g, k) += ref[k];
        break;
      }
    }
    values[base + li] = std::move(out);
    if (!tape) {
      for (auto k : r.inputs)
        if (last_use_[k] == li) values[k] = TensorField();
    }
  }
  FieldMap result;
  for (const auto& [target, layer] : spec_.outputs) result.emplace(target, values[node_index_.at(layer)]);
  if (tape) tape->values = std::move(values);
  return result;
}

Gradients Model::backward(const Tape& tape, const GraphContext& ctx, const FieldMap& output_grads,
                          FieldMap* input_grads) const {
  require(tape.values.size() == nodes_.size(), ErrorCode::InvalidArgument,
          "backward needs a tape recorded by forward()");
  Gradients grads = zero_gradients();
  std::vector<TensorField> adj(nodes_.size());
  for (const auto& [target, layer] : spec_.outputs) {
    auto it = output_grads.find(target);
    if (it == output_grads.end()) continue;
    const auto idx = node_index_.at(layer);
    require(it->second.same_shape(tape.values[idx]), ErrorCode::Shape,
            "upstream gradient for '" + target + "' has the wrong shape");
    add_into(adj[idx], it->second);
  }
  const std::size_t base = spec_.inputs.size();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& l = spec_.layers[li];
    const auto& r = layers_[li];
    const TensorField& dy = adj[base + li];
    if (dy.size() == 0) continue;
    auto x = [&](std::size_t k) -> const TensorField& { return tape.values[r.inputs[k]]; };
    auto push = [&](std::size_t k, const TensorField& g) { add_into(adj[r.inputs[k]], g); };
    switch (l.kind) {
      case LayerKind::Mlp: {
        const auto& outs = tape.mlp_outputs[li];
        TensorField d = dy;
        for (std::size_t k = l.units.size(); k-- > 0;) {
          const TensorField& xin = k == 0 ? x(0) : outs[k - 1];
          d = dense_backward(xin, outs[k], d, params_[r.weights[k]], l.activations[k], grads[r.weights[k]],
                             l.bias ? &grads[r.biases[k]] : nullptr);
        }
        push(0, d);
        break;
      }
      case LayerKind::LinearFeature:
        push(0, dense_backward(x(0), tape.values[base + li], dy, params_[r.weights[0]], Activation::Identity,
                               grads[r.weights[0]], nullptr));
        break;
      case LayerKind::IsoConv: {
        const auto& gt = need(ctx.isoam_t, "a transposed IsoAM");
        TensorField d = dy;
        for (int k = 0; k < l.power; ++k) d = contract(gt, d);
        push(0, d);
        break;
      }
      case LayerKind::IsoContract: {
        const auto& gt = need(ctx.isoam_t, "a transposed IsoAM");
        const int q = x(0).rank();
        TensorField d = dy;
        for (int k = 0; k < l.power - q; ++k) d = contract(gt, d);
        for (int k = 0; k < std::min(l.power, q); ++k) d = tensor_prod(gt, d);
        push(0, d);
        break;
      }
      case LayerKind::IsoTensorProd:
        push(0, contract(need(ctx.isoam_t, "a transposed IsoAM"), dy));
        break;
      case LayerKind::GateMultiply: {
        const auto& gate = x(0);
        const auto& field = x(1);
        TensorField dgate(0, gate.n_vertices(), gate.n_features(), gate.dim());
        TensorField dfield = dy;
        const std::size_t nc = field.components();
        for (std::size_t i = 0; i < field.n_vertices(); ++i)
          for (std::size_t g = 0; g < field.n_features(); ++g) {
            const std::size_t gg = gate_feature(gate.n_features(), g);
            const double s = gate.at(i, gg, 0);
            double acc = 0.0;
            for (std::size_t c = 0; c < nc; ++c) {
              acc += dy.at(i, g, c) * field.at(i, g, c);
              dfield.at(i, g, c) *= s;
            }
            dgate.at(i, gg, 0) += acc;
          }
        push(0, dgate);
        push(1, dfield);
        break;
      }
      case LayerKind::ResidualAdd:
        for (std::size_t k = 0; k < r.inputs.size(); ++k) push(k, dy);
        break;
      case LayerKind::Concat: {
        const std::size_t nc = dy.components();
        std::size_t g0 = 0;
        for (std::size_t k = 0; k < r.inputs.size(); ++k) {
          const auto& src = x(k);
          TensorField d(src.rank(), src.n_vertices(), src.n_features(), src.dim());
          for (std::size_t i = 0; i < d.n_vertices(); ++i)
            for (std::size_t g = 0; g < d.n_features(); ++g)
              for (std::size_t c = 0; c < nc; ++c) d.at(i, g, c) = dy.at(i, g0 + g, c);
          g0 += src.n_features();
          push(k, d);
        }
        break;
      }
      case LayerKind::PointwiseContract: {
        const auto& a = x(0);
        const auto& b = x(1);
        const std::size_t d = static_cast<std::size_t>(b.dim());
        const std::size_t na = a.components() / d;
        const std::size_t nb = b.components() / d;
        TensorField da(a.rank(), a.n_vertices(), a.n_features(), a.dim());
        TensorField db(b.rank(), b.n_vertices(), b.n_features(), b.dim());
        for (std::size_t i = 0; i < b.n_vertices(); ++i)
          for (std::size_t g = 0; g < b.n_features(); ++g) {
            const std::size_t ga = gate_feature(a.n_features(), g);
            for (std::size_t al = 0; al < na; ++al)
              for (std::size_t be = 0; be < nb; ++be) {
                const double gy = dy.at(i, g, al * nb + be);
                if (gy == 0.0) continue;
                for (std::size_t l2 = 0; l2 < d; ++l2) {
                  da.at(i, ga, al * d + l2) += gy * b.at(i, g, l2 * nb + be);
                  db.at(i, g, l2 * nb + be) += gy * a.at(i, ga, al * d + l2);
                }
              }
          }
        push(0, da);
        push(1, db);
        break;
      }
      case LayerKind::ReferencePositionAdd:
        push(0, dy);
        break;
    }
  }
  for (std::size_t k = 0; k < grads.size(); ++k) {
    for (double v : grads[k]) {
      require(std::isfinite(v), ErrorCode::Numeric, "non-finite gradient for parameter '" + params_[k].name + "'");
    }
  }
  if (input_grads) {
    input_grads->clear();
    for (std::size_t k = 0; k < spec_.inputs.size(); ++k) {
      TensorField g = adj[k];
      if (g.size() == 0) {
        const auto& v = tape.values[k];
        g = TensorField(v.rank(), v.n_vertices(), v.n_features(), v.dim());
      }
      input_grads->emplace(spec_.inputs[k].name, std::move(g));
    }
  }
  return grads;
}

void adam_step(std::vector<Parameter>& params, const Gradients& grads, AdamState& state, double lr) {
  require(grads.size() == params.size(), ErrorCode::Shape, "gradient count does not match parameters");
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.values.size(), 0.0);
      state.v.emplace_back(p.values.size(), 0.0);
    }
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k].values;
    const auto& g = grads[k];
    require(g.size() == w.size(), ErrorCode::Shape, "gradient size mismatch for '" + params[k].name + "'");
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t e = 0; e < w.size(); ++e) {
      m[e] = state.beta1 * m[e] + (1.0 - state.beta1) * g[e];
      v[e] = state.beta2 * v[e] + (1.0 - state.beta2) * g[e] * g[e];
      const double mh = m[e] / c1;
      const double vh = v[e] / c2;
      w[e] -= lr * mh / (std::sqrt(vh) + state.eps);
    }
  }
}

}  // namespace isogcn::nn
