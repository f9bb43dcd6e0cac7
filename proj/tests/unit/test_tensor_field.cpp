// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "core/isoam_builder.hpp"
#include "core/tensor_field.hpp"
#include "support/bridge.hpp"

using namespace isogcn;
using testing_support::random_field;
using testing_support::random_isoam;
using testing_support::to_dense;
using testing_support::to_oracle;
using testing_support::values;

namespace {

// D~ of the chain x0 = (0,0,0), x1 = (1,0,0) with w = 1.
IsoAM chain_d_tilde() {
  return IsoAM(2, 3, {0, 2, 4}, {0, 1, 0, 1}, {-1, 0, 0, 1, 0, 0, -1, 0, 0, 1, 0, 0});
}

TensorField scalar(std::vector<double> v) {
  const auto n = v.size();
  return TensorField(0, n, 1, 3, std::move(v));
}

void expect_error(ErrorCode code, auto&& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected error " << error_code_name(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace

TEST(TensorField, ConstructorChecksDataLength) {
  EXPECT_EQ(TensorField(2, 4, 3).size(), 4u * 3u * 9u);
  expect_error(ErrorCode::Shape, [] { TensorField(1, 2, 1, 3, std::vector<double>(5)); });
}

TEST(Convolve, ZeroFieldGivesZero) {
  std::mt19937_64 rng(1);
  const auto g = random_isoam(5, 3, 0.5, rng);
  const auto out = convolve(g, TensorField(0, 5, 2));
  EXPECT_EQ(out.rank(), 1);
  for (double x : out.data()) EXPECT_EQ(x, 0.0);
}

TEST(Convolve, ConstantFieldUnderDTildeIsExactlyZero) {
  const auto out = convolve(chain_d_tilde(), scalar({3.5, 3.5}));
  for (double x : out.data()) EXPECT_EQ(x, 0.0);
}

TEST(Convolve, TwoVertexChain) {
  const auto out = convolve(chain_d_tilde(), scalar({0.0, 2.0}));
  EXPECT_DOUBLE_EQ(out.at(0, 0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 1), 0.0);
  EXPECT_DOUBLE_EQ(out.at(0, 0, 2), 0.0);
}

TEST(Convolve, ShapeAndRankErrors) {
  expect_error(ErrorCode::Shape, [] { convolve(chain_d_tilde(), TensorField(0, 3, 1)); });
  expect_error(ErrorCode::Rank, [] { convolve(chain_d_tilde(), TensorField(1, 2, 1)); });
}

TEST(Contract, ConstantVectorFieldHasZeroDivergence) {
  TensorField h(1, 2, 1);
  h.at(0, 0, 0) = h.at(1, 0, 0) = 1.0;
  const auto out = contract(chain_d_tilde(), h);
  EXPECT_EQ(out.rank(), 0);
  EXPECT_EQ(out.at(0, 0, 0), 0.0);
}

TEST(Contract, RankZeroInputIsRejected) {
  expect_error(ErrorCode::Rank, [] { contract(chain_d_tilde(), TensorField(0, 2, 1)); });
}

TEST(Contract, RandomSixVertexRankTwoMatchesOracle) {
  std::mt19937_64 rng(2);
  const auto g = random_isoam(6, 3, 0.5, rng);
  const auto h = random_field(2, 6, 2, 3, rng);
  const auto expected = oracle::contract(to_dense(g), to_oracle(h));
  EXPECT_LE(oracle::max_abs_diff(values(contract(g, h)), expected.v), 1e-12);
}

TEST(TensorProd, RankZeroEqualsConvolve) {
  std::mt19937_64 rng(3);
  const auto g = random_isoam(5, 3, 0.6, rng);
  const auto h = random_field(0, 5, 3, 3, rng);
  EXPECT_EQ(values(tensor_prod(g, h)), values(convolve(g, h)));
}

TEST(TensorProd, RandomFiveVertexMatchesOracle) {
  std::mt19937_64 rng(4);
  const auto g = random_isoam(5, 3, 0.5, rng);
  const auto h = random_field(1, 5, 2, 3, rng);
  const auto expected = oracle::tensor_prod(to_dense(g), to_oracle(h));
  EXPECT_LE(oracle::max_abs_diff(values(tensor_prod(g, h)), expected.v), 1e-12);
}

TEST(SelfContract, TwoByTwoHandExample) {
  const IsoAM g(2, 3, {0, 1, 2}, {1, 0}, {1, 0, 0, -1, 0, 0});
  const auto l = self_contract(g);
  EXPECT_DOUBLE_EQ(l.coeff(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(l.coeff(1, 1), -1.0);
  EXPECT_DOUBLE_EQ(l.coeff(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(l.coeff(1, 0), 0.0);
}

TEST(SelfContract, ZeroIsoAMGivesZero) {
  const IsoAM g(3, 3, {0, 1, 2, 3}, {0, 1, 2}, std::vector<double>(9, 0.0));
  const auto l = self_contract(g);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(l.coeff(i, j), 0.0);
}

TEST(SelfContract, RandomMatchesOracle) {
  std::mt19937_64 rng(5);
  const auto g = random_isoam(7, 3, 0.4, rng);
  const auto l = self_contract(g);
  const auto expected = oracle::self_contract(to_dense(g));
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(l.coeff(i, j), expected[i * 7 + j], 1e-12);
}

TEST(PowerApply, PowerOneIsConvolve) {
  std::mt19937_64 rng(6);
  const auto g = random_isoam(6, 3, 0.5, rng);
  const auto h = random_field(0, 6, 2, 3, rng);
  EXPECT_EQ(values(power_apply(g, 1, h)), values(convolve(g, h)));
}

TEST(PowerApply, ChainPowerTwoMatchesDenseEvaluation) {
  const auto g = chain_d_tilde();
  const auto h = scalar({0.0, 2.0});
  const auto expected = oracle::power_apply(oracle::tensor_power(to_dense(g), 2), to_oracle(h));
  const auto got = power_apply(g, 2, h);
  EXPECT_LE(oracle::max_abs_diff(values(got), expected.v), 1e-15);
  // D~ (x) (D~ * H0) at vertex 0: the xx component is -2 + 2 = 0 for this chain.
  EXPECT_DOUBLE_EQ(got.at(0, 0, 0), 0.0);
}

TEST(PowerApply, AssociativityAgainstDenseTensorPower) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = random_isoam(6, 3, 0.5, rng);
    const auto h = random_field(0, 6, 2, 3, rng);
    const auto expected = oracle::power_apply(oracle::tensor_power(to_dense(g), 2), to_oracle(h));
    EXPECT_LE(oracle::rel_diff(values(power_apply(g, 2, h)), expected.v), 1e-12);
  }
}

TEST(PowerApply, CapRaisesResourceError) {
  std::mt19937_64 rng(8);
  const auto g = random_isoam(4, 3, 0.5, rng);
  expect_error(ErrorCode::Resource, [&] { power_apply(g, 3, TensorField(0, 4, 1), 50); });
}

TEST(PowerContract, PowerOneOnRankOneIsContract) {
  std::mt19937_64 rng(9);
  const auto g = random_isoam(6, 3, 0.5, rng);
  const auto h = random_field(1, 6, 2, 3, rng);
  EXPECT_EQ(values(power_contract(g, 1, h)), values(contract(g, h)));
}

TEST(PowerContract, MatchesOracleForAllRankPairs) {
  std::mt19937_64 rng(10);
  for (int p = 1; p <= 3; ++p)
    for (int q = 1; q <= 3; ++q) {
      const auto g = random_isoam(5, 3, 0.5, rng);
      const auto h = random_field(q, 5, 2, 3, rng);
      const auto expected = oracle::power_contract(oracle::tensor_power(to_dense(g), p), to_oracle(h));
      const auto got = power_contract(g, p, h);
      EXPECT_EQ(got.rank(), std::abs(p - q));
      EXPECT_LE(oracle::rel_diff(values(got), expected.v), 1e-12) << "p=" << p << " q=" << q;
    }
}

TEST(Algebra, DimensionTwoMatchesOracle) {
  std::mt19937_64 rng(11);
  const auto g = random_isoam(6, 2, 0.5, rng);
  const auto dg = to_dense(g);
  const auto h0 = random_field(0, 6, 2, 2, rng);
  const auto h2 = random_field(2, 6, 2, 2, rng);
  EXPECT_LE(oracle::max_abs_diff(values(convolve(g, h0)), oracle::convolve(dg, to_oracle(h0)).v), 1e-12);
  EXPECT_LE(oracle::max_abs_diff(values(contract(g, h2)), oracle::contract(dg, to_oracle(h2)).v), 1e-12);
  EXPECT_LE(oracle::max_abs_diff(values(tensor_prod(g, h2)), oracle::tensor_prod(dg, to_oracle(h2)).v), 1e-12);
}

TEST(Algebra, Linearity) {
  std::mt19937_64 rng(12);
  const auto g = random_isoam(7, 3, 0.5, rng);
  const double a = 1.7, b = -0.3;
  for (int rank = 0; rank <= 2; ++rank) {
    const auto h1 = random_field(rank, 7, 2, 3, rng);
    const auto h2 = random_field(rank, 7, 2, 3, rng);
    TensorField mix = h1;
    for (std::size_t e = 0; e < mix.size(); ++e) mix.data()[e] = a * h1.data()[e] + b * h2.data()[e];
    auto check = [&](auto op) {
      const auto lhs = op(mix);
      const auto r1 = op(h1);
      const auto r2 = op(h2);
      for (std::size_t e = 0; e < lhs.size(); ++e)
        EXPECT_NEAR(lhs.data()[e], a * r1.data()[e] + b * r2.data()[e], 1e-12);
    };
    check([&](const TensorField& h) { return tensor_prod(g, h); });
    if (rank == 0) check([&](const TensorField& h) { return power_apply(g, 2, h); });
    if (rank >= 1) check([&](const TensorField& h) { return contract(g, h); });
  }
}

TEST(Isometry, RandomIsOrthogonal) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    const auto iso = Isometry::random(rng);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += iso.u(k, r) * iso.u(k, c);
        EXPECT_NEAR(dot, r == c ? 1.0 : 0.0, 1e-12);
      }
    for (double x : iso.translation) EXPECT_LE(std::abs(x), 10.0);
  }
}

TEST(TransformField, IdentityLeavesFieldUnchanged) {
  std::mt19937_64 rng(14);
  const auto h = random_field(2, 4, 2, 3, rng);
  EXPECT_EQ(values(transform_field(Isometry::identity(), h, FieldKind::TensorLike)), values(h));
}

TEST(TransformField, TranslationDoesNotAffectTensorLikeFields) {
  std::mt19937_64 rng(15);
  const auto h = random_field(2, 4, 2, 3, rng);
  const Isometry t(3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {1, 2, 3});
  EXPECT_EQ(values(transform_field(t, h, FieldKind::TensorLike)), values(h));
}

TEST(TransformField, QuarterTurnAboutZ) {
  const double c = std::cos(std::numbers::pi / 2), s = std::sin(std::numbers::pi / 2);
  const Isometry t(3, {c, -s, 0, s, c, 0, 0, 0, 1}, {0, 0, 0});
  TensorField h(1, 1, 1);
  h.at(0, 0, 0) = 1.0;
  const auto out = transform_field(t, h, FieldKind::TensorLike);
  EXPECT_NEAR(out.at(0, 0, 0), 0.0, 1e-15);
  EXPECT_NEAR(out.at(0, 0, 1), 1.0, 1e-15);
  EXPECT_NEAR(out.at(0, 0, 2), 0.0, 1e-15);
}

TEST(TransformField, PositionLikeAddsTranslationAndRejectsOtherRanks) {
  const Isometry t(3, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {1, 2, 3});
  TensorField h(1, 1, 1);
  const auto out = transform_field(t, h, FieldKind::PositionLike);
  EXPECT_EQ(values(out), (std::vector<double>{1, 2, 3}));
  expect_error(ErrorCode::Rank, [&] { transform_field(t, TensorField(2, 1, 1), FieldKind::PositionLike); });
}

TEST(TransformField, MatchesOracleRotation) {
  std::mt19937_64 rng(16);
  const auto iso = Isometry::random(rng);
  for (int rank = 1; rank <= 3; ++rank) {
    const auto h = random_field(rank, 3, 2, 3, rng);
    const auto expected = oracle::rotate(iso.rotation, to_oracle(h));
    EXPECT_LE(oracle::max_abs_diff(values(transform_field(iso, h, FieldKind::TensorLike)), expected.v), 1e-12);
  }
}

TEST(Equivariance, OperationsCommuteWithRebuiltIsoAM) {
  std::mt19937_64 rng(17);
  const Mesh mesh = generate_tet_mesh(2, 2, 2, 0.2, 3);
  const IsoAMOptions opts;
  const auto g = build_isoam(mesh, opts);
  const auto h0 = random_field(0, mesh.n_vertices(), 2, 3, rng);
  const auto h1 = random_field(1, mesh.n_vertices(), 2, 3, rng);
  const auto h2 = random_field(2, mesh.n_vertices(), 2, 3, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const auto iso = Isometry::random(rng);
    const auto gt = build_isoam(mesh.with_positions(iso.transform_positions(mesh.positions())), opts);
    auto tf = [&](const TensorField& f) { return transform_field(iso, f, FieldKind::TensorLike); };
    auto near = [](const TensorField& a, const TensorField& b) {
      return oracle::rel_diff(values(a), values(b));
    };
    EXPECT_LE(near(convolve(gt, h0), tf(convolve(g, h0))), 1e-10);
    EXPECT_LE(near(contract(gt, tf(h1)), contract(g, h1)), 1e-10);
    EXPECT_LE(near(contract(gt, tf(h2)), tf(contract(g, h2))), 1e-10);
    EXPECT_LE(near(tensor_prod(gt, tf(h1)), tf(tensor_prod(g, h1))), 1e-10);
    EXPECT_LE(near(power_apply(gt, 3, h0), tf(power_apply(g, 3, h0))), 1e-10);
    EXPECT_LE(near(power_contract(gt, 3, tf(h1)), tf(power_contract(g, 3, h1))), 1e-10);
  }
}

TEST(IsoAM, TransposeSwapsIndices) {
  std::mt19937_64 rng(18);
  const auto g = random_isoam(6, 3, 0.4, rng);
  const auto gt = g.transposed();
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j)
      for (int k = 0; k < 3; ++k) EXPECT_EQ(gt.coeff(i, j, k), g.coeff(j, i, k));
}
