// SPDX-License-Identifier: Apache-2.0
//
// A small layer graph over tensor fields with hand-written reverse mode.
//
// Nodes 0..n_inputs-1 are the model inputs; every layer appends one node and
// may read any earlier node by name. IsoAM layers are linear in the field, so
// their adjoints are the same kernels applied with the transposed IsoAM.
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "core/dataset.hpp"
#include "core/tensor_field.hpp"

namespace isogcn::nn {

enum class Activation { Identity, Tanh };

enum class LayerKind {
  Mlp,
  LinearFeature,
  IsoConv,
  IsoContract,
  IsoTensorProd,
  GateMultiply,
  ResidualAdd,
  Concat,
  PointwiseContract,
  ReferencePositionAdd,
};

const char* layer_kind_name(LayerKind kind) noexcept;
LayerKind layer_kind_from_name(const std::string& name);
const char* activation_name(Activation a) noexcept;
Activation activation_from_name(const std::string& name);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::LinearFeature;
  std::vector<std::string> inputs;
  /// Mlp: width of every dense layer. LinearFeature: {f_out}.
  std::vector<std::size_t> units;
  /// Mlp: one activation per dense layer.
  std::vector<Activation> activations;
  /// IsoConv / IsoContract power.
  int power = 1;
  /// Mlp only.
  bool bias = true;
};

struct FieldSignature {
  std::string name;
  int rank = 0;
  std::size_t features = 1;

  bool operator==(const FieldSignature&) const = default;
};

struct ModelSpec {
  std::vector<FieldSignature> inputs;
  std::vector<LayerSpec> layers;
  /// (target field name, producing layer name).
  std::vector<std::pair<std::string, std::string>> outputs;
};

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

struct BuildOptions {
  /// When false, Mlp layers accept rank >= 1 inputs and apply bias and
  /// activation per component. Only the audit negative controls use this.
  bool enforce_rank_rules = true;
};

struct Parameter {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

using Gradients = std::vector<std::vector<double>>;

struct GraphContext {
  const IsoAM* isoam = nullptr;
  /// Transposed IsoAM, required by backward() for IsoAM layers.
  const IsoAM* isoam_t = nullptr;
  /// |V| x dim vertex positions; only ReferencePositionAdd reads them.
  std::span<const double> positions;
};

struct Tape {
  std::vector<TensorField> values;
  /// Per Mlp layer: outputs of each dense sub-layer.
  std::vector<std::vector<TensorField>> mlp_outputs;
};

class Model {
 public:
  Model() = default;
  Model(ModelSpec spec, std::uint64_t seed, BuildOptions options = {});

  const ModelSpec& spec() const noexcept { return spec_; }
  const BuildOptions& options() const noexcept { return options_; }
  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;

  /// Output signature of a layer (or input) by name.
  const FieldSignature& signature(const std::string& node) const;

  FieldMap forward(const FieldMap& inputs, const GraphContext& ctx, Tape* tape = nullptr) const;

  /// Gradients for every parameter given dLoss/dOutput. Missing outputs are
  /// treated as zero upstream gradient.
  Gradients backward(const Tape& tape, const GraphContext& ctx, const FieldMap& output_grads,
                     FieldMap* input_grads = nullptr) const;

  Gradients zero_gradients() const;

 private:
  struct Resolved {
    std::vector<std::size_t> inputs;  // node indices
    FieldSignature out;
    std::vector<std::size_t> weights;  // parameter indices
    std::vector<std::size_t> biases;
  };

  void resolve();
  void initialize(std::uint64_t seed);

  ModelSpec spec_;
  BuildOptions options_;
  std::vector<Parameter> params_;
  std::vector<FieldSignature> nodes_;
  std::map<std::string, std::size_t> node_index_;
  std::vector<Resolved> layers_;
  /// Last layer reading each node; outputs are never released.
  std::vector<std::size_t> last_use_;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  Gradients m;
  Gradients v;
};

/// One bias-corrected Adam update.
void adam_step(std::vector<Parameter>& params, const Gradients& grads, AdamState& state, double lr);

}  // namespace isogcn::nn
