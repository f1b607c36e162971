#include <gtest/gtest.h>

#include <cmath>

#include "eened/eened.hpp"
#include "oracles.hpp"

using eened::Rng;
using eened::Shape;
using Td = eened::Tensor<double>;

namespace {

const eened::EncoderSettings kEval{7, 0.0, 1e-5};

Td random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(s.size());
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Td(s, std::move(v));
}

template <typename Params>
void randomize(Params& p, Rng rng) {
  p.visit("", [&](const std::string& name, Td& t) {
    const bool gamma = name.ends_with("gamma");
    t = random_tensor(t.shape(), rng, gamma ? 0.7 : -0.5, gamma ? 1.3 : 0.5);
  });
}

Td permute_rows(const Td& x, const std::vector<std::size_t>& perm) {
  std::vector<double> v;
  for (auto r : perm)
    for (std::size_t c = 0; c < x.cols(); ++c) v.push_back(x(r, c));
  return Td(x.shape(), v);
}

double max_diff(const Td& a, const Td& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

eened::MhsaParams<double> random_mhsa(std::size_t d, std::size_t h, std::uint64_t seed) {
  auto p = eened::MhsaParams<double>::init(d, h, d / h, Rng(seed));
  randomize(p, Rng(seed).split("values"));
  return p;
}

eened::ConvModuleParams<double> random_conv(std::size_t d, std::size_t k, std::uint64_t seed) {
  auto p = eened::ConvModuleParams<double>::init(d, k, Rng(seed));
  randomize(p, Rng(seed).split("values"));
  return p;
}

}  // namespace

// ---- PWFF ----

TEST(Pwff, ZeroWeightsPassInputThrough) {
  Rng rng(1);
  auto x = random_tensor(Shape{5, 4}, rng);
  eened::PwffParams<double> p{Td::zeros(Shape{4, 8}), Td::zeros(Shape{8}), Td::zeros(Shape{8, 4}),
                              Td::zeros(Shape{4}),    Td::full(Shape{4}, 1.0), Td::zeros(Shape{4})};
  auto y = eened::pwff_forward(x, p, kEval, {});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Pwff, HandComputedSingleStep) {
  // x = [3, 1]: LN gives [s, -s] with s = 1 / sqrt(1 + eps).
  const double eps = 1e-5;
  const double s = 1.0 / std::sqrt(1.0 + eps);
  auto sw = [](double v) { return v / (1.0 + std::exp(-v)); };
  eened::PwffParams<double> p{Td::matrix({{0.5, -1.0}, {1.0, 2.0}}), Td::vector({0.1, 0.0}),
                              Td::matrix({{1.0, 0.0}, {0.0, -1.0}}), Td::vector({0.0, 0.2}),
                              Td::vector({1.0, 1.0}),                Td::vector({0.0, 0.0})};
  auto y = eened::pwff_forward(Td::matrix({{3.0, 1.0}}), p, {7, 0.0, eps}, {});
  const double h0 = 0.5 * s - s + 0.1, h1 = -s - 2.0 * s;
  EXPECT_NEAR(y[0], 3.0 + 0.5 * sw(h0), 1e-15);
  EXPECT_NEAR(y[1], 1.0 + 0.5 * (-sw(h1) + 0.2), 1e-15);
}

TEST(Pwff, MatchesOracleAndKeepsShape) {
  Rng rng(2);
  auto p = eened::PwffParams<double>::init(8, 32, Rng(3));
  randomize(p, Rng(4));
  for (std::size_t t : {1u, 5u, 17u}) {
    auto x = random_tensor(Shape{t, 8}, rng);
    auto y = eened::pwff_forward(x, p, kEval, {});
    ASSERT_EQ(y.shape(), x.shape());
    auto want = oracle::pwff_branch(oracle::to_mat(x), p, kEval.ln_eps);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(y(i, j), x(i, j) + 0.5 * want[i][j], 1e-12);
  }
}

// ---- MHSA ----

TEST(Mhsa, SingleStepAttendsToItself) {
  Rng rng(5);
  auto p = random_mhsa(8, 2, 6);
  auto x = random_tensor(Shape{1, 8}, rng);
  for (const auto& a : eened::mhsa_attention(x, p, kEval)) {
    ASSERT_EQ(a.shape(), Shape({1, 1}));
    EXPECT_EQ(a[0], 1.0);
  }
  // (x̄V_1 ‖ x̄V_2) O for the normalized row x̄.
  const auto xbar = oracle::layer_norm(oracle::to_mat(x), oracle::to_vec(p.ln_gamma), oracle::to_vec(p.ln_beta), 1e-5);
  oracle::Mat concat(1);
  for (std::size_t h = 0; h < 2; ++h) {
    auto part = oracle::matmul(xbar, oracle::to_mat(p.v[h]));
    concat[0].insert(concat[0].end(), part[0].begin(), part[0].end());
  }
  const auto want = oracle::matmul(concat, oracle::to_mat(p.o));
  EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(eened::mhsa_forward(x, p, kEval, {})), want), 1e-14);
}

TEST(Mhsa, ZeroValuesGiveZeroOutput) {
  Rng rng(7);
  auto p = random_mhsa(8, 2, 8);
  for (auto& v : p.v) v = Td::zeros(v.shape());
  auto y = eened::mhsa_forward(random_tensor(Shape{5, 8}, rng), p, kEval, {});
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(Mhsa, HandSetWeightsMatchDenseEvaluation) {
  eened::MhsaParams<double> p;
  p.q = {Td::matrix({{1, 0}, {0, 1}, {0.5, 0}, {0, -0.5}}), Td::matrix({{0, 1}, {1, 0}, {0, 0}, {0.25, 0.25}})};
  p.k = {Td::matrix({{0.5, 0}, {0, 0.5}, {1, 0}, {0, 1}}), Td::matrix({{1, 1}, {0, 0}, {-1, 0}, {0, 1}})};
  p.v = {Td::matrix({{1, 0}, {0, 1}, {1, 1}, {0, 0}}), Td::matrix({{0, 2}, {1, 0}, {0, 0}, {1, -1}})};
  p.o = Td::matrix({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0.5}, {0.5, 0, 0, 1}});
  p.ln_gamma = Td::vector({1, 1, 1, 1});
  p.ln_beta = Td::vector({0, 0, 0, 0});
  auto x = Td::matrix({{1, 2, 3, 4}, {-1, 0, 2, 1}, {0.5, -0.5, 1.5, 0}});
  auto got = eened::mhsa_forward(x, p, kEval, {});
  EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(got), oracle::mhsa_branch(oracle::to_mat(x), p, 1e-5)), 1e-10);
}

TEST(Mhsa, RandomInputsMatchDenseEvaluation) {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = random_mhsa(8, 2, 100 + static_cast<std::uint64_t>(trial));
    auto x = random_tensor(Shape{1 + rng.below(9), 8}, rng, -2, 2);
    auto got = eened::mhsa_forward(x, p, kEval, {});
    EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(got), oracle::mhsa_branch(oracle::to_mat(x), p, 1e-5)), 1e-10);
  }
}

TEST(Mhsa, AttentionRowsSumToOne) {
  Rng rng(10);
  auto p = random_mhsa(16, 4, 11);
  for (const auto& a : eened::mhsa_attention(random_tensor(Shape{9, 16}, rng, -3, 3), p, kEval)) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Mhsa, HeadsMustTileModelWidth) {
  auto p = random_mhsa(8, 2, 12);
  p.q.pop_back();
  p.k.pop_back();
  p.v.pop_back();
  EXPECT_THROW(eened::mhsa_forward(Td::zeros(Shape{3, 8}), p, kEval, {}), eened::ConfigError);
}

TEST(Mhsa, PermutationEquivariant) {
  Rng rng(13);
  auto p = random_mhsa(8, 2, 14);
  auto x = random_tensor(Shape{6, 8}, rng);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  auto lhs = eened::mhsa_forward(permute_rows(x, perm), p, kEval, {});
  auto rhs = permute_rows(eened::mhsa_forward(x, p, kEval, {}), perm);
  EXPECT_LT(max_diff(lhs, rhs), 1e-12);
}

TEST(Mhsa, ConstantShiftInvariant) {
  Rng rng(15);
  auto p = random_mhsa(8, 2, 16);
  auto x = random_tensor(Shape{5, 8}, rng);
  std::vector<double> shifted(x.data().begin(), x.data().end());
  for (auto& v : shifted) v += 3.7;
  EXPECT_LT(max_diff(eened::mhsa_forward(x, p, kEval, {}), eened::mhsa_forward(Td(x.shape(), shifted), p, kEval, {})),
            1e-12);
}

// ---- Convolution module ----

TEST(ConvModule, ZeroProjectionPassesInputThrough) {
  Rng rng(17);
  auto p = random_conv(8, 15, 18);
  p.proj_w = Td::zeros(p.proj_w.shape());
  p.proj_b = Td::zeros(p.proj_b.shape());
  auto x = random_tensor(Shape{6, 8}, rng);
  auto y = eened::conv_module_forward(x, p, kEval, {});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(ConvModule, ClosedGateHalvesTheLinearPath) {
  Rng rng(19);
  auto p = random_conv(4, 3, 20);
  p.glu_w2 = Td::zeros(p.glu_w2.shape());
  p.glu_b2 = Td::zeros(p.glu_b2.shape());
  std::vector<double> delta(4 * 3, 0.0);
  for (std::size_t c = 0; c < 4; ++c) delta[c * 3 + 1] = 1.0;
  p.dw_kernel = Td(Shape{4, 3}, delta);
  p.dw_bias = Td::zeros(Shape{4});
  auto x = random_tensor(Shape{5, 4}, rng);
  // With a delta kernel the module is x + Swish(0.5 (F W1 + b1)) W_proj + b_proj.
  const auto f = oracle::layer_norm(oracle::to_mat(x), oracle::to_vec(p.ln_gamma), oracle::to_vec(p.ln_beta), 1e-5);
  auto e = oracle::add_row(oracle::matmul(f, oracle::to_mat(p.pw1_w)), oracle::to_vec(p.pw1_b));
  oracle::Mat first(5, oracle::Vec(4));
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 4; ++c) first[t][c] = e[t][c];
  auto glu = oracle::add_row(oracle::matmul(first, oracle::to_mat(p.glu_w1)), oracle::to_vec(p.glu_b1));
  for (auto& row : glu)
    for (auto& v : row) v = oracle::swish(0.5 * v);
  auto want = oracle::add_row(oracle::matmul(glu, oracle::to_mat(p.proj_w)), oracle::to_vec(p.proj_b));
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 4; ++c) want[t][c] += x(t, c);
  EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(eened::conv_module_forward(x, p, {1, 0.0, 1e-5}, {})), want), 1e-14);
}

TEST(ConvModule, HandSetDeltaKernelMatchesManualEvaluation) {
  eened::ConvModuleParams<double> p;
  p.pw1_w = Td::matrix({{1, 0, 0.5, 0}, {0, 1, 0, -0.5}});
  p.pw1_b = Td::vector({0, 0.1, 0, 0.2});
  p.glu_w1 = Td::matrix({{1, 0.5}, {0, 1}});
  p.glu_b1 = Td::vector({0.1, -0.1});
  p.glu_w2 = Td::matrix({{2, 0}, {0, 1}});
  p.glu_b2 = Td::vector({0, 0.3});
  p.dw_kernel = Td::matrix({{0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0}});
  p.dw_bias = Td::vector({0, 0});
  p.proj_w = Td::matrix({{1, -1}, {0.5, 1}});
  p.proj_b = Td::vector({0.05, 0});
  p.ln_gamma = Td::vector({1, 1});
  p.ln_beta = Td::vector({0, 0});
  auto x = Td::matrix({{1, 3}, {2, -1}, {0, 0.5}, {-2, -3}});
  auto got = eened::conv_module_forward(x, p, kEval, {});
  EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(got), oracle::conv_module(oracle::to_mat(x), p, 1e-5, 7)), 1e-10);

  // Written out for the first timestep: LN([1,3]) = [-s, s] with s = 1/sqrt(1+eps).
  const double s = 1.0 / std::sqrt(1.0 + 1e-5);
  const double e0 = -s, e1 = s + 0.1, e2 = -0.5 * s, e3 = -0.5 * s + 0.2;
  const double a0 = e0 + 0.1, a1 = 0.5 * e0 + e1 - 0.1;
  const double g0 = 2 * e2, g1 = e3 + 0.3;
  const double u0 = oracle::swish(a0 * oracle::sigmoid(g0)), u1 = oracle::swish(a1 * oracle::sigmoid(g1));
  EXPECT_NEAR(got(0, 0), 1 + u0 + 0.5 * u1 + 0.05, 1e-14);
  EXPECT_NEAR(got(0, 1), 3 - u0 + u1, 1e-14);
}

TEST(ConvModule, RandomInputsMatchDenseEvaluation) {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = random_conv(8, 15, 200 + static_cast<std::uint64_t>(trial));
    auto x = random_tensor(Shape{1 + rng.below(20), 8}, rng, -2, 2);
    auto got = eened::conv_module_forward(x, p, kEval, {});
    EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(got), oracle::conv_module(oracle::to_mat(x), p, 1e-5, 7)), 1e-10);
  }
}

TEST(ConvModule, NotPermutationEquivariant) {
  Rng rng(22);
  auto p = random_conv(8, 15, 23);
  auto x = random_tensor(Shape{6, 8}, rng);
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  auto lhs = eened::conv_module_forward(permute_rows(x, perm), p, kEval, {});
  auto rhs = permute_rows(eened::conv_module_forward(x, p, kEval, {}), perm);
  EXPECT_GT(max_diff(lhs, rhs), 1e-3);
}

// ---- Encoder block ----

TEST(EncoderBlock, ZeroBranchOutputsReduceToFinalLayerNorm) {
  Rng rng(24);
  auto p = eened::EncoderBlockParams<double>::init(8, 2, 4, 32, 15, Rng(25));
  randomize(p, Rng(26));
  for (auto* ff : {&p.pwff_a, &p.pwff_b}) {
    ff->w2 = Td::zeros(ff->w2.shape());
    ff->b2 = Td::zeros(ff->b2.shape());
  }
  p.mhsa.o = Td::zeros(p.mhsa.o.shape());
  p.conv.proj_w = Td::zeros(p.conv.proj_w.shape());
  p.conv.proj_b = Td::zeros(p.conv.proj_b.shape());
  auto x = random_tensor(Shape{5, 8}, rng);
  auto got = eened::encoder_block_forward(x, p, kEval, {});
  auto want = eened::layer_norm(x, p.final_ln_gamma, p.final_ln_beta, 1e-5);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(got[i], want[i]);
}

TEST(EncoderBlock, MatchesComposedOracle) {
  Rng rng(27);
  auto p = eened::EncoderBlockParams<double>::init(8, 2, 4, 32, 15, Rng(28));
  randomize(p, Rng(29));
  auto x = random_tensor(Shape{7, 8}, rng);
  auto m = oracle::to_mat(x);
  auto add_half = [](oracle::Mat a, const oracle::Mat& b, double w) {
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += w * b[i][j];
    return a;
  };
  auto f1 = add_half(m, oracle::pwff_branch(m, p.pwff_a, 1e-5), 0.5);
  auto f2 = add_half(f1, oracle::mhsa_branch(f1, p.mhsa, 1e-5), 1.0);
  auto f3 = oracle::conv_module(f2, p.conv, 1e-5, 7);
  auto f4 = add_half(f3, oracle::pwff_branch(f3, p.pwff_b, 1e-5), 0.5);
  auto want = oracle::layer_norm(f4, oracle::to_vec(p.final_ln_gamma), oracle::to_vec(p.final_ln_beta), 1e-5);
  EXPECT_LT(oracle::max_abs_diff(oracle::to_mat(eened::encoder_block_forward(x, p, kEval, {})), want), 1e-10);
}

TEST(EncoderBlock, PreservesShape) {
  Rng rng(30);
  for (std::size_t d : {8u, 16u}) {
    auto p = eened::EncoderBlockParams<double>::init(d, 2, d / 2, 2 * d, 15, Rng(d));
    for (std::size_t t : {1u, 5u, 17u}) {
      auto x = random_tensor(Shape{t, d}, rng);
      EXPECT_EQ(eened::encoder_block_forward(x, p, kEval, {}).shape(), x.shape());
    }
  }
}

TEST(EncoderBlock, TrainingModeDropoutIsSeeded) {
  Rng rng(31);
  auto p = eened::EncoderBlockParams<double>::init(8, 2, 4, 32, 15, Rng(32));
  auto x = random_tensor(Shape{5, 8}, rng);
  const eened::EncoderSettings train_settings{7, 0.3, 1e-5};
  Rng a(9), b(9), c(10);
  auto ya = eened::encoder_block_forward(x, p, train_settings, {true, &a});
  auto yb = eened::encoder_block_forward(x, p, train_settings, {true, &b});
  auto yc = eened::encoder_block_forward(x, p, train_settings, {true, &c});
  EXPECT_EQ(max_diff(ya, yb), 0.0);
  EXPECT_GT(max_diff(ya, yc), 0.0);
}
