#include <gtest/gtest.h>

#include <chrono>

#include "eened/eened.hpp"

namespace {

const eened::GradcheckResult* find(const std::vector<eened::GradcheckResult>& rs, std::string_view name) {
  for (const auto& r : rs)
    if (r.check == name) return &r;
  return nullptr;
}

}  // namespace

TEST(Gradcheck, EveryModuleAndTheToyModelPass) {
  const auto start = std::chrono::steady_clock::now();
  const auto results = eened::run_gradcheck_suite("all", {});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& r : results) EXPECT_TRUE(r.pass) << r.check << " max_rel_err=" << r.max_rel_err;
  for (auto name : {"pwff", "mhsa", "conv", "block", "model"}) EXPECT_NE(find(results, name), nullptr) << name;
  EXPECT_LT(seconds, 120.0);
}

TEST(Gradcheck, ModuleFilter) {
  const auto results = eened::run_gradcheck_suite("mhsa", {});
  ASSERT_EQ(results.size(), 1u);
  EXPECT_EQ(results[0].check, "mhsa");
  EXPECT_TRUE(results[0].pass);
  EXPECT_THROW(eened::run_gradcheck_suite("attention", {}), eened::ConfigError);
}

TEST(Gradcheck, CoversEveryParameterOfTheToyModel) {
  const auto results = eened::run_gradcheck_suite("model", {});
  ASSERT_EQ(results.size(), 1u);
  const auto model = eened::model_init<double>(eened::gradcheck_model_config());
  std::size_t tensors = 0;
  model.visit("", [&](const std::string&, const eened::Tensor<double>&) { ++tensors; });
  EXPECT_GE(results[0].tensors.size(), tensors);
}

TEST(Gradcheck, SignFlipInOneOpIsCaught) {
  for (auto op : {eened::OpKind::matmul, eened::OpKind::softmax_rows, eened::OpKind::layer_norm,
                  eened::OpKind::conv1d_depthwise, eened::OpKind::swish, eened::OpKind::sigmoid}) {
    eened::GradcheckOptions opts;
    opts.fault = op;
    const auto results = eened::run_gradcheck_suite("tensor", opts);
    const auto* own = find(results, eened::op_name(op));
    ASSERT_NE(own, nullptr) << eened::op_name(op);
    EXPECT_FALSE(own->pass) << eened::op_name(op);
    const auto* untouched = find(results, op == eened::OpKind::transpose ? "add" : "transpose");
    ASSERT_NE(untouched, nullptr);
    EXPECT_TRUE(untouched->pass) << "fault in " << eened::op_name(op) << " leaked into transpose";
  }
  eened::GradcheckOptions opts;
  opts.fault = eened::OpKind::softmax_rows;
  EXPECT_FALSE(eened::run_gradcheck_suite("mhsa", opts)[0].pass);
  EXPECT_TRUE(eened::run_gradcheck_suite("pwff", opts)[0].pass);
}

TEST(Gradcheck, ToleranceBelowRoundoffFails) {
  eened::GradcheckOptions opts;
  opts.tolerance = 1e-12;
  bool any_fail = false;
  for (const auto& r : eened::run_gradcheck_suite("block", opts)) any_fail |= !r.pass;
  EXPECT_TRUE(any_fail);
}
