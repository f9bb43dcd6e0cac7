// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "core/diffop.hpp"
#include "core/nn.hpp"
#include "core/training.hpp"
#include "support/bridge.hpp"
#include "support/gradcheck.hpp"

using namespace isogcn;
using namespace isogcn::nn;
using testing_support::values;

namespace {

IsoAM chain_d_tilde() {
  return IsoAM(2, 3, {0, 2, 4}, {0, 1, 0, 1}, {-1, 0, 0, 1, 0, 0, -1, 0, 0, 1, 0, 0});
}

LayerSpec make_layer(std::string name, LayerKind kind, std::vector<std::string> in, std::vector<std::size_t> units = {},
                     std::vector<Activation> acts = {}, int power = 1, bool bias = true) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.inputs = std::move(in);
  l.units = std::move(units);
  l.activations = std::move(acts);
  l.power = power;
  l.bias = bias;
  return l;
}

Parameter& param(Model& m, const std::string& name) {
  for (auto& p : m.parameters())
    if (p.name == name) return p;
  throw std::runtime_error("no parameter " + name);
}

void set_identity(Parameter& p) {
  for (std::size_t r = 0; r < p.rows; ++r)
    for (std::size_t c = 0; c < p.cols; ++c) p.values[r * p.cols + c] = r == c ? 1.0 : 0.0;
}

ErrorCode construction_code(const ModelSpec& spec, BuildOptions opts = {}) {
  try {
    Model m(spec, 0, opts);
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<ErrorCode>(0);
}

}  // namespace

class LayerGradient : public ::testing::TestWithParam<LayerKind> {};

TEST_P(LayerGradient, MatchesCentralDifferencesOnTenConfigurations) {
  const auto kind = GetParam();
  for (int config = 0; config < 10; ++config) {
    std::mt19937_64 rng(1000 + config);
    const auto graph = testing_support::make_graph(config, 1 + config % 2);
    Model model(testing_support::layer_probe_spec(kind, config), config);
    const auto inputs = testing_support::random_inputs(model.spec(), graph.mesh.n_vertices(), rng);
    const auto r = testing_support::grad_check(model, inputs, graph.ctx(), rng);
    EXPECT_LT(r.param_rel_err, 1e-4) << layer_kind_name(kind) << " config " << config;
    EXPECT_LT(r.input_rel_err, 1e-4) << layer_kind_name(kind) << " config " << config;
    if (kind != LayerKind::LinearFeature || config % 3 == 0) {
      EXPECT_GT(r.input_norm, 0.0);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(AllKinds, LayerGradient, ::testing::ValuesIn(testing_support::all_layer_kinds()),
                         [](const auto& info) {
                           std::string n = layer_kind_name(info.param);
                           for (auto& c : n)
                             if (c == '_') c = 'X';
                           return n;
                         });

TEST(TaskModelGradient, EveryTaskModelPassesFiniteDifferences) {
  for (const std::string task : {"0->1", "0->2", "1->0", "1->2", "heat"}) {
    std::mt19937_64 rng(7);
    const auto graph = testing_support::make_graph(3);
    Model model(build_task_model(task, {4, 1}), 11);
    const auto inputs = testing_support::random_inputs(model.spec(), graph.mesh.n_vertices(), rng);
    const auto r = testing_support::grad_check(model, inputs, graph.ctx(), rng);
    EXPECT_LT(r.param_rel_err, 1e-4) << task;
    EXPECT_LT(r.input_rel_err, 1e-4) << task;
  }
}

TEST(Forward, IdentityMlpPassesRankZeroThrough) {
  ModelSpec s;
  s.inputs = {{"x", 0, 3}};
  s.layers = {make_layer("m", LayerKind::Mlp, {"x"}, {3}, {Activation::Identity})};
  s.outputs = {{"y", "m"}};
  Model m(s, 1);
  set_identity(param(m, "m.W0"));
  std::fill(param(m, "m.b0").values.begin(), param(m, "m.b0").values.end(), 0.0);
  std::mt19937_64 rng(2);
  const auto x = testing_support::random_field(0, 4, 3, 3, rng);
  const auto out = m.forward({{"x", x}}, {});
  EXPECT_EQ(values(out.at("y")), values(x));
}

TEST(Forward, UnitGateIsPassthrough) {
  ModelSpec s;
  s.inputs = {{"g", 0, 1}, {"x", 2, 2}};
  s.layers = {make_layer("mul", LayerKind::GateMultiply, {"g", "x"})};
  s.outputs = {{"y", "mul"}};
  Model m(s, 1);
  std::mt19937_64 rng(3);
  const auto x = testing_support::random_field(2, 5, 2, 3, rng);
  TensorField g(0, 5, 1);
  std::fill(g.data().begin(), g.data().end(), 1.0);
  EXPECT_EQ(values(m.forward({{"g", g}, {"x", x}}, {}).at("y")), values(x));
}

TEST(Forward, ScalarToGradientOnTwoVertexChain) {
  ModelSpec s;
  s.inputs = {{"phi", 0, 1}};
  s.layers = {make_layer("enc", LayerKind::Mlp, {"phi"}, {1}, {Activation::Identity}),
              make_layer("conv", LayerKind::IsoConv, {"enc"}), make_layer("dec", LayerKind::LinearFeature, {"conv"}, {1})};
  s.outputs = {{"grad", "dec"}};
  Model m(s, 1);
  set_identity(param(m, "enc.W0"));
  param(m, "enc.b0").values = {0.0};
  set_identity(param(m, "dec.W"));
  const auto g = chain_d_tilde();
  const auto out = m.forward({{"phi", TensorField(0, 2, 1, 3, {0.0, 2.0})}}, {&g, nullptr, {}});
  EXPECT_DOUBLE_EQ(out.at("grad").at(0, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.at("grad").at(0, 0, 1), 0.0);
  EXPECT_DOUBLE_EQ(out.at("grad").at(0, 0, 2), 0.0);
}

TEST(Forward, MissingIsoAMIsReported) {
  ModelSpec s;
  s.inputs = {{"phi", 0, 1}};
  s.layers = {make_layer("conv", LayerKind::IsoConv, {"phi"})};
  s.outputs = {{"grad", "conv"}};
  Model m(s, 1);
  EXPECT_THROW(m.forward({{"phi", TensorField(0, 2, 1)}}, {}), Error);
}

TEST(Forward, InputRankAndShapeAreChecked) {
  Model m(build_task_model("0->1"), 0);
  try {
    m.forward({{"phi", TensorField(1, 3, 1)}}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Rank);
  }
  try {
    m.forward({{"phi", TensorField(0, 3, 2)}}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Shape);
  }
}

TEST(Backward, SingleLinearLayerClosedForm) {
  ModelSpec s;
  s.inputs = {{"x", 0, 3}};
  s.layers = {make_layer("lin", LayerKind::LinearFeature, {"x"}, {2})};
  s.outputs = {{"y", "lin"}};
  Model m(s, 4);
  const TensorField x(0, 1, 3, 3, {0.5, -1.0, 2.0});
  const std::vector<double> y{0.3, -0.7};
  Tape tape;
  const auto out = m.forward({{"x", x}}, {}, &tape);
  TensorField resid = out.at("y");
  for (std::size_t h = 0; h < 2; ++h) resid.data()[h] -= y[h];
  const auto grads = m.backward(tape, {}, {{"y", resid}});
  for (std::size_t g = 0; g < 3; ++g)
    for (std::size_t h = 0; h < 2; ++h) EXPECT_NEAR(grads[0][g * 2 + h], x.data()[g] * resid.data()[h], 1e-15);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const auto graph = testing_support::make_graph(1);
  Model m(build_task_model("heat", {4, 2}), 2);
  std::mt19937_64 rng(5);
  const auto inputs = testing_support::random_inputs(m.spec(), graph.mesh.n_vertices(), rng);
  Tape tape;
  const auto out = m.forward(inputs, graph.ctx(), &tape);
  FieldMap zero;
  for (const auto& [name, f] : out) zero.emplace(name, TensorField(f.rank(), f.n_vertices(), f.n_features()));
  for (const auto& g : m.backward(tape, graph.ctx(), zero))
    for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(Backward, NonFiniteGradientIsNumericError) {
  const auto graph = testing_support::make_graph(1);
  Model m(build_task_model("0->1", {4, 1}), 2);
  m.parameters()[0].values[0] = std::numeric_limits<double>::quiet_NaN();
  std::mt19937_64 rng(6);
  const auto inputs = testing_support::random_inputs(m.spec(), graph.mesh.n_vertices(), rng);
  Tape tape;
  const auto out = m.forward(inputs, graph.ctx(), &tape);
  try {
    m.backward(tape, graph.ctx(), out);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Numeric);
  }
}

TEST(Adam, FirstStepMovesBySignedLearningRate) {
  std::vector<Parameter> p{{"w", 1, 3, {1.0, 2.0, 3.0}}};
  AdamState st;
  adam_step(p, {{4.0, -0.5, 1e3}}, st, 0.01);
  EXPECT_NEAR(p[0].values[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p[0].values[1], 2.0 + 0.01, 1e-9);
  EXPECT_NEAR(p[0].values[2], 3.0 - 0.01, 1e-9);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<Parameter> p{{"w", 1, 2, {1.0, -2.0}}};
  AdamState st;
  adam_step(p, {{0.0, 0.0}}, st, 0.1);
  EXPECT_EQ(p[0].values, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, TwoConstantStepsMatchHandRecurrence) {
  const double g = 0.2, lr = 0.05;
  std::vector<Parameter> p{{"w", 1, 1, {0.0}}};
  AdamState st;
  adam_step(p, {{g}}, st, lr);
  adam_step(p, {{g}}, st, lr);
  EXPECT_EQ(st.step, 2);
  EXPECT_NEAR(st.m[0][0], 0.19 * g, 1e-15);
  EXPECT_NEAR(st.v[0][0], 0.001999 * g * g, 1e-15);
  // Bias-corrected moments equal g and g^2 at every step for constant g.
  const double per_step = lr * g / (std::abs(g) + 1e-8);
  EXPECT_NEAR(p[0].values[0], -2.0 * per_step, 1e-14);
}

TEST(RankRules, BiasOnRankOneIsAConstructionError) {
  ModelSpec s;
  s.inputs = {{"v", 1, 2}};
  s.layers = {make_layer("m", LayerKind::Mlp, {"v"}, {2}, {Activation::Identity})};
  s.outputs = {{"y", "m"}};
  EXPECT_EQ(construction_code(s), ErrorCode::Construction);
  BuildOptions relaxed;
  relaxed.enforce_rank_rules = false;
  EXPECT_EQ(construction_code(s, relaxed), static_cast<ErrorCode>(0));
}

TEST(RankRules, StructuralErrors) {
  ModelSpec s;
  s.inputs = {{"x", 0, 1}};
  s.layers = {make_layer("c", LayerKind::IsoContract, {"x"})};
  s.outputs = {{"y", "c"}};
  EXPECT_EQ(construction_code(s), ErrorCode::Construction);
  s.layers = {make_layer("c", LayerKind::IsoConv, {"later"})};
  EXPECT_EQ(construction_code(s), ErrorCode::Construction);
  s.layers = {make_layer("x", LayerKind::LinearFeature, {"x"}, {1})};
  EXPECT_EQ(construction_code(s), ErrorCode::Construction);
  s.layers = {make_layer("g", LayerKind::GateMultiply, {"x", "x"})};
  s.inputs = {{"x", 1, 1}};
  EXPECT_EQ(construction_code(s), ErrorCode::Construction);
}

TEST(TaskModels, AllPassValidation) {
  for (const std::string task : {"0->1", "0->2", "1->0", "1->2", "heat"}) EXPECT_NO_THROW(Model(build_task_model(task), 0));
  EXPECT_THROW(build_task_model("2->0"), Error);
}

TEST(TaskModels, ScalarToGradientParameterCount) {
  for (std::size_t w : {4u, 16u}) {
    TaskModelOptions o;
    o.width = w;
    // encoder 1 -> w -> w with biases, decoder w -> 1 without.
    EXPECT_EQ(Model(build_task_model("0->1", o), 0).parameter_count(), (1 * w + w) + (w * w + w) + w);
  }
}

TEST(TaskModels, HeatBlockWithUnitGateIsAnExplicitEulerStep) {
  const double dt = 0.013;
  ModelSpec s;
  s.inputs = {{"T", 0, 1}, {"C", 2, 1}};
  s.layers = {make_layer("grad", LayerKind::IsoConv, {"T"}),
              make_layer("gate", LayerKind::Mlp, {"T"}, {1}, {Activation::Identity}),
              make_layer("gated", LayerKind::GateMultiply, {"gate", "grad"}),
              make_layer("flux", LayerKind::PointwiseContract, {"C", "gated"}),
              make_layer("div", LayerKind::IsoContract, {"flux"}),
              make_layer("mix", LayerKind::LinearFeature, {"div"}, {1}),
              make_layer("out", LayerKind::ResidualAdd, {"T", "mix"})};
  s.outputs = {{"T1", "out"}};
  Model m(s, 3);
  param(m, "gate.W0").values = {0.0};
  param(m, "gate.b0").values = {1.0};
  param(m, "mix.W").values = {dt};

  const auto mesh = generate_tet_mesh(3, 2, 2, 0.2, 4);
  const auto g = build_isoam(mesh, {1, WeightKind::VolumeRatio});
  std::mt19937_64 rng(8);
  const auto t = testing_support::random_field(0, mesh.n_vertices(), 1, 3, rng);
  TensorField c(2, mesh.n_vertices(), 1);
  const double cm[9] = {0.02, 0.003, 0.0, 0.003, 0.01, -0.002, 0.0, -0.002, 0.015};
  for (std::size_t i = 0; i < mesh.n_vertices(); ++i)
    for (int k = 0; k < 9; ++k) c.at(i, 0, k) = cm[k];
  const auto out = m.forward({{"T", t}, {"C", c}}, {&g, nullptr, {}}).at("T1");

  const auto dense = testing_support::to_dense(g);
  auto grad = oracle::convolve(dense, testing_support::to_oracle(t));
  oracle::Field flux(1, mesh.n_vertices(), 1, 3);
  for (std::size_t i = 0; i < mesh.n_vertices(); ++i)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) flux.at(i, 0, a) += cm[a * 3 + b] * grad.at(i, 0, b);
  const auto div = oracle::contract(dense, flux);
  std::vector<double> expected(mesh.n_vertices());
  for (std::size_t i = 0; i < mesh.n_vertices(); ++i) expected[i] = t.at(i, 0, 0) + dt * div.at(i, 0, 0);
  EXPECT_LE(oracle::max_abs_diff(values(out), expected), 1e-12);
}

TEST(Spec, JsonRoundTrip) {
  for (const std::string task : {"0->1", "0->2", "1->0", "1->2", "heat"}) {
    const auto spec = build_task_model(task, {8, 3});
    const auto j = spec_to_json(spec);
    EXPECT_EQ(spec_to_json(spec_from_json(j)), j) << task;
  }
  for (auto k : testing_support::all_layer_kinds()) EXPECT_EQ(layer_kind_from_name(layer_kind_name(k)), k);
  EXPECT_THROW(layer_kind_from_name("attention"), Error);
}

TEST(Determinism, SameSeedSameParametersAndOutputs) {
  const auto graph = testing_support::make_graph(2);
  Model a(build_task_model("heat"), 42), b(build_task_model("heat"), 42), c(build_task_model("heat"), 43);
  for (std::size_t p = 0; p < a.parameters().size(); ++p) EXPECT_EQ(a.parameters()[p].values, b.parameters()[p].values);
  EXPECT_NE(a.parameters()[0].values, c.parameters()[0].values);
  std::mt19937_64 rng(1);
  const auto inputs = testing_support::random_inputs(a.spec(), graph.mesh.n_vertices(), rng);
  EXPECT_EQ(values(a.forward(inputs, graph.ctx()).at("T")), values(b.forward(inputs, graph.ctx()).at("T")));
}

TEST(Init, BiasesStartAtZero) {
  Model m(build_task_model("heat"), 5);
  for (const auto& p : m.parameters()) {
    if (p.name[p.name.rfind('.') + 1] != 'b') continue;
    for (double v : p.values) EXPECT_EQ(v, 0.0) << p.name;
  }
}
