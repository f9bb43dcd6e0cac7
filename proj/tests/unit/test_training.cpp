// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "core/diffop.hpp"
#include "core/heat.hpp"
#include "core/training.hpp"
#include "support/bridge.hpp"

using namespace isogcn;
using testing_support::values;

namespace {

std::vector<Sample> small_samples(DiffTask task, std::size_t n, std::uint64_t seed, std::pair<int, int> grid = {3, 5}) {
  return make_diffop_samples(task, n, grid, seed);
}

Surrogate fitted(const std::string& task, std::vector<Sample>& fit, std::uint64_t seed = 0,
                 const NormalizerOptions& norm = {}) {
  Surrogate s;
  s.task = task;
  s.seed = seed;
  if (task == "heat") s.isoam_options.weights = WeightKind::VolumeRatio;
  s.model = nn::Model(build_task_model(task, {8, 2}), seed);
  fit_preprocessing(s, fit, norm);
  return s;
}

Dataset tiny_heat(std::uint64_t seed) {
  HeatDatasetOptions o;
  o.n_shapes = 2;
  o.resolutions = {2};
  o.n_conditions = 1;
  o.max_order = 3;
  o.simulation.t_end = 0.05;
  return make_heat_dataset(seed, o);
}

}  // namespace

TEST(Normalizer, RankOneUsesOneGlobalScaleAndNoShift) {
  std::mt19937_64 rng(1);
  FieldMap a{{"v", testing_support::random_field(1, 40, 2, 3, rng)}};
  for (auto& x : a.at("v").data()) x = 3.0 * x + 1.0;
  const auto n = Normalizer::fit({&a});
  const auto& fn = n.fields.at("v");
  ASSERT_EQ(fn.scale.size(), 1u);
  const auto out = n.apply("v", a.at("v"));
  double s2 = 0.0;
  for (double x : out.data()) s2 += x * x;
  // Global scale divides by the std about the global mean; applying it alone
  // leaves the mean in place.
  double mean = 0.0;
  for (double x : a.at("v").data()) mean += x;
  mean /= static_cast<double>(a.at("v").size());
  for (std::size_t e = 0; e < out.size(); ++e) EXPECT_NEAR(out.data()[e] * fn.scale[0], a.at("v").data()[e], 1e-12);
  EXPECT_NEAR(s2 / static_cast<double>(out.size()), 1.0 + mean * mean / (fn.scale[0] * fn.scale[0]), 1e-9);
}

TEST(Normalizer, TensorScalingCommutesWithRotation) {
  std::mt19937_64 rng(2);
  FieldMap a{{"h", testing_support::random_field(2, 30, 3, 3, rng)}};
  const auto n = Normalizer::fit({&a});
  for (int t = 0; t < 5; ++t) {
    const auto iso = Isometry::random(rng);
    const auto lhs = n.apply("h", transform_field(iso, a.at("h"), FieldKind::TensorLike));
    const auto rhs = transform_field(iso, n.apply("h", a.at("h")), FieldKind::TensorLike);
    EXPECT_LE(oracle::max_abs_diff(values(lhs), values(rhs)), 1e-12);
  }
}

TEST(Normalizer, ScalarsStandardisedPerFeature) {
  std::mt19937_64 rng(3);
  FieldMap a{{"s", testing_support::random_field(0, 50, 2, 3, rng)}};
  FieldMap b{{"s", testing_support::random_field(0, 30, 2, 3, rng)}};
  for (auto* m : {&a, &b})
    for (std::size_t i = 0; i < m->at("s").n_vertices(); ++i) m->at("s").at(i, 1, 0) = 5.0 + 4.0 * m->at("s").at(i, 1, 0);
  const auto n = Normalizer::fit({&a, &b});
  for (std::size_t g = 0; g < 2; ++g) {
    double s1 = 0.0, s2 = 0.0, cnt = 0.0;
    for (const auto* m : {&a, &b}) {
      const auto z = n.apply("s", m->at("s"));
      for (std::size_t i = 0; i < z.n_vertices(); ++i) {
        s1 += z.at(i, g, 0);
        s2 += z.at(i, g, 0) * z.at(i, g, 0);
        ++cnt;
      }
    }
    EXPECT_NEAR(s1 / cnt, 0.0, 1e-12);
    EXPECT_NEAR(s2 / cnt, 1.0, 1e-12);
  }
  EXPECT_LE(oracle::max_abs_diff(values(n.invert("s", n.apply("s", a.at("s")))), values(a.at("s"))), 1e-12);
}

TEST(Normalizer, ZeroSpreadWarnsAndLeavesScaleAtOne) {
  FieldMap a{{"c", TensorField(0, 10, 1)}};
  for (auto& x : a.at("c").data()) x = 2.5;
  const auto n = Normalizer::fit({&a});
  ASSERT_EQ(n.warnings.size(), 1u);
  EXPECT_EQ(n.fields.at("c").scale[0], 1.0);
  EXPECT_NEAR(n.apply("c", a.at("c")).data()[0], 0.0, 1e-15);
}

TEST(Normalizer, JsonRoundTrip) {
  std::mt19937_64 rng(4);
  FieldMap a{{"s", testing_support::random_field(0, 20, 2, 3, rng)}, {"v", testing_support::random_field(1, 20, 1, 3, rng)}};
  NormalizerOptions o;
  o.componentwise_fields = {"v"};
  const auto n = Normalizer::fit({&a}, o);
  const auto back = Normalizer::from_json(n.to_json());
  EXPECT_EQ(back.to_json(), n.to_json());
  EXPECT_TRUE(back.fields.at("v").componentwise);
}

TEST(Loss, PerfectPredictionIsZeroAndGradientMatches) {
  std::mt19937_64 rng(5);
  FieldMap t{{"y", testing_support::random_field(1, 6, 1, 3, rng)}};
  EXPECT_EQ(mse_loss(t, t), 0.0);
  FieldMap p = t;
  p.at("y").data()[4] += 0.3;
  FieldMap g;
  const double l = mse_loss(p, t, &g);
  EXPECT_NEAR(l, 0.09 / static_cast<double>(t.at("y").size()), 1e-15);
  EXPECT_NEAR(g.at("y").data()[4], 0.6 / static_cast<double>(t.at("y").size()), 1e-15);
}

TEST(Metrics, ConstantPredictorEqualsPooledVariance) {
  auto samples = small_samples(DiffTask::GradientToLaplacian, 4, 6);
  double s1 = 0.0, s2 = 0.0, n = 0.0;
  for (const auto& smp : samples)
    for (double x : smp.targets.at("laplacian").data()) {
      s1 += x;
      s2 += x * x;
      ++n;
    }
  const double var = s2 / n - (s1 / n) * (s1 / n);
  EXPECT_NEAR(constant_predictor_mse(samples), var, 1e-12 * std::max(1.0, var));
  std::vector<FieldMap> perfect;
  for (const auto& smp : samples) perfect.push_back(smp.targets);
  const auto r = evaluate_predictions(perfect, samples);
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.sem, 0.0);
  EXPECT_EQ(r.n_samples, 4u);
}

TEST(Training, ReducesValidationLossFivefold) {
  auto train_s = small_samples(DiffTask::ScalarToGradient, 20, 10, {10, 14});
  auto val_s = small_samples(DiffTask::ScalarToGradient, 5, 11, {10, 14});
  auto s = fitted("0->1", train_s, 3);
  ensure_isoams(val_s, s.isoam_options);
  std::vector<PreparedSample> tp, vp;
  for (const auto& x : train_s) tp.push_back(prepare(s, x));
  for (const auto& x : val_s) vp.push_back(prepare(s, x));
  const double before = dataset_loss(s, vp);
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.epochs = 40;
  const auto h = train(s, tp, &vp, tc);
  EXPECT_EQ(h.train_loss.size(), 41u);
  EXPECT_LE(dataset_loss(s, vp), before / 5.0);
  EXPECT_NEAR(dataset_loss(s, vp), h.val_loss[h.best_epoch], 1e-12);
}

TEST(Training, DivergenceIsANumericError) {
  auto train_s = small_samples(DiffTask::ScalarToGradient, 4, 12);
  auto s = fitted("0->1", train_s);
  std::vector<PreparedSample> tp;
  for (const auto& x : train_s) tp.push_back(prepare(s, x));
  TrainConfig tc;
  tc.learning_rate = 1e9;
  tc.epochs = 20;
  tc.divergence_threshold = 1e3;
  try {
    train(s, tp, nullptr, tc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Numeric);
  }
}

TEST(Equivariance, UntrainedModelsAreEquivariant) {
  const std::pair<const char*, DiffTask> tasks[] = {{"0->1", DiffTask::ScalarToGradient},
                                                    {"0->2", DiffTask::ScalarToHessian},
                                                    {"1->0", DiffTask::GradientToLaplacian},
                                                    {"1->2", DiffTask::GradientToHessian}};
  for (const auto& [name, task] : tasks) {
    auto fit = small_samples(task, 2, 20);
    const auto s = fitted(name, fit, 5);
    const auto rep = check_equivariance(s, fit[0], 20, 1e-6, 9);
    EXPECT_TRUE(rep.passed) << name << " " << rep.max_deviation;
    EXPECT_LT(rep.max_deviation, 1e-6) << name;
  }
  auto heat = tiny_heat(1);
  auto& all = heat.splits.begin()->second;
  const auto s = fitted("heat", all, 5);
  EXPECT_LT(check_equivariance(s, all[0], 20, 1e-6, 9).max_deviation, 1e-6);
  EXPECT_LT(constant_input_drift(s, all[0], "T0", 0.3), 1e-10);
}

TEST(Equivariance, IdentityIsometryGivesZeroDeviation) {
  auto fit = small_samples(DiffTask::ScalarToHessian, 1, 21);
  const auto s = fitted("0->2", fit);
  const auto a = predict(s, fit[0]);
  Sample same = fit[0];
  same.isoam.reset();
  const auto b = predict(s, same);
  EXPECT_EQ(relative_deviation(a.at("hessian"), b.at("hessian")), 0.0);
}

TEST(Equivariance, NegativeControlsAreDetected) {
  auto fit = small_samples(DiffTask::ScalarToGradient, 2, 22);
  NormalizerOptions cw;
  cw.componentwise_fields = {"grad"};
  const auto s = fitted("0->1", fit, 1, cw);
  EXPECT_GT(check_equivariance(s, fit[0], 10, 1e-6, 3).max_deviation, 1e-3);

  auto spec = build_task_model("0->1", {8, 1});
  nn::LayerSpec bias;
  bias.name = "bias";
  bias.kind = nn::LayerKind::Mlp;
  bias.inputs = {"conv"};
  bias.units = {8};
  bias.activations = {nn::Activation::Identity};
  spec.layers.insert(spec.layers.begin() + 2, bias);
  spec.layers.back().inputs = {"bias"};
  nn::BuildOptions bo;
  bo.enforce_rank_rules = false;
  Surrogate b = fitted("0->1", fit, 1);
  b.model = nn::Model(spec, 1, bo);
  for (auto& p : b.model.parameters())
    if (p.name == "bias.b0") std::fill(p.values.begin(), p.values.end(), 0.5);
  EXPECT_GT(check_equivariance(b, fit[0], 10, 1e-6, 3).max_deviation, 1e-3);
}

TEST(Checkpoint, RoundTripReproducesPredictions) {
  auto fit = small_samples(DiffTask::GradientToHessian, 2, 30);
  auto s = fitted("1->2", fit, 7);
  std::vector<PreparedSample> tp;
  for (const auto& x : fit) tp.push_back(prepare(s, x));
  TrainConfig tc;
  tc.epochs = 2;
  train(s, tp, nullptr, tc);
  const auto dir = std::filesystem::temp_directory_path() / "isogcn_test_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(s, dir);
  const auto back = load_checkpoint(dir);
  EXPECT_EQ(back.task, "1->2");
  EXPECT_EQ(back.isoam_factor, s.isoam_factor);
  EXPECT_EQ(values(predict(back, fit[1]).at("hessian")), values(predict(s, fit[1]).at("hessian")));
  std::filesystem::remove_all(dir);
  try {
    load_checkpoint(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotFound);
  }
}

TEST(Prepare, ScaledIsoAMUsesTrainingFactor) {
  auto fit = small_samples(DiffTask::ScalarToGradient, 3, 40);
  const auto s = fitted("0->1", fit);
  std::vector<IsoAM> gs;
  for (const auto& x : fit) gs.push_back(*x.isoam);
  EXPECT_DOUBLE_EQ(s.isoam_factor, scaling_factor(std::span<const IsoAM>(gs)));
  const auto p = prepare(s, fit[0]);
  for (std::size_t e = 0; e < p.isoam.values().size(); ++e)
    EXPECT_NEAR(p.isoam.values()[e] * s.isoam_factor, fit[0].isoam->values()[e], 1e-12);
}
