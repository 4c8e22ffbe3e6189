#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "ksac/checkpoint.hpp"
#include "ksac/errors.hpp"
#include "ksac/param_ledger.hpp"

using namespace ksac;

TEST(CountParams, HeadThreeByThreeAtFullWidth) {
  KsacHead ksac(256, 256, {6, 12, 18}, 0);
  AsppHead aspp(256, 256, {6, 12, 18}, 0);
  const ParamReport k = count_params(ksac);
  const ParamReport a = count_params(aspp);
  EXPECT_EQ(k.head_3x3(), 589824);
  EXPECT_EQ(a.head_3x3(), 1769472);
  EXPECT_EQ(a.head_3x3(), 3 * k.head_3x3());
  EXPECT_TRUE(k.formula_check());
  EXPECT_TRUE(a.formula_check());
  EXPECT_EQ(k.complexity(), "O(1)");
  EXPECT_EQ(a.complexity(), "O(N)");
  EXPECT_EQ(k.head_1x1(), 2 * 256 * 256);
}

TEST(CountParams, KsacInvariantUnderRateListSize) {
  std::vector<std::int64_t> rates;
  std::int64_t first = -1;
  for (std::int64_t r = 1; r <= 8; ++r) {
    rates.push_back(r * 3);
    const ParamReport rep = count_params(KsacHead(16, 24, rates, 0));
    if (first < 0) first = rep.head_3x3();
    EXPECT_EQ(rep.head_3x3(), first);
    EXPECT_EQ(rep.head_3x3(), 9 * 16 * 24);
  }
}

TEST(CountParams, AsppLinearInRateListSize) {
  std::vector<std::int64_t> rates;
  for (std::int64_t n = 1; n <= 8; ++n) {
    rates.push_back(n * 2);
    EXPECT_EQ(count_params(AsppHead(16, 24, rates, 0)).head_3x3(), n * 9 * 16 * 24);
  }
}

TEST(CountParams, RateWideningKeepsNonBnHeadTotal) {
  const ParamReport a = count_params(KsacHead(256, 256, {6, 12, 18}, 0));
  const ParamReport b = count_params(KsacHead(256, 256, {1, 6, 12, 18, 24}, 0));
  EXPECT_EQ(a.head_non_bn_total(), b.head_non_bn_total());
  EXPECT_EQ(a.formula_view_total(), b.formula_view_total());
  EXPECT_EQ(b.bn_total() - a.bn_total(), 2 * 2 * 256);
  const ParamReport c = count_params(AsppHead(256, 256, {6, 12, 18}, 0));
  const ParamReport d = count_params(AsppHead(256, 256, {1, 6, 12, 18, 24}, 0));
  EXPECT_EQ(d.formula_view_total() - c.formula_view_total(), 2 * 9 * 256 * 256);
}

TEST(CountParams, TotalsHaveNoDoubleCounting) {
  ModelConfig cfg{.head = HeadKind::aspp, .rates = {1, 2, 3}, .c_in = 8, .c_out = 12, .decoder = true};
  auto model = build_model(cfg);
  const ParamReport r = count_params(*model);
  std::int64_t sum = 0;
  std::set<std::string> names;
  for (const ParamEntry& e : r.entries) {
    sum += e.count;
    EXPECT_TRUE(names.insert(e.name).second);
  }
  EXPECT_EQ(r.total(), sum);
  EXPECT_EQ(r.total(), r.trainable_total() + r.buffer_total());
  std::int64_t groups = 0;
  for (ParamGroup g : {ParamGroup::backbone, ParamGroup::head_3x3, ParamGroup::head_1x1, ParamGroup::head_projection,
                       ParamGroup::batch_norm, ParamGroup::decoder, ParamGroup::classifier})
    groups += r.group_total(g);
  EXPECT_EQ(groups, r.trainable_total());
  // Every BN contributes two buffers matching its two trainables.
  EXPECT_EQ(r.buffer_total(), r.bn_total());
}

TEST(CountParams, MatchesCheckpointValueCount) {
  auto model = build_model({.rates = {6, 12}, .c_in = 8, .c_out = 8, .decoder = true});
  std::stringstream buf;
  write_checkpoint(buf, model->state_dict());
  std::int64_t values = 0;
  for (const NamedTensor& t : read_checkpoint(buf)) values += t.tensor.numel();
  EXPECT_EQ(count_params(*model).total(), values);
}

TEST(CountParams, ReportsContainKeyLines) {
  const ParamReport r = count_params(KsacHead(256, 256, {6, 12, 18}, 0));
  const std::string table = r.to_table();
  EXPECT_NE(table.find("589,824"), std::string::npos);
  EXPECT_NE(table.find("[formula check OK]"), std::string::npos);
  const std::string machine = r.to_machine();
  EXPECT_NE(machine.find("head_3x3=589824\n"), std::string::npos);
  EXPECT_NE(machine.find("complexity=O(1)\n"), std::string::npos);
  EXPECT_NE(machine.find("head.shared_kernel,256,256,3,3,589824,1,head_3x3\n"), std::string::npos);
}

TEST(Savings, ClosedForms) {
  EXPECT_NEAR(savings_report(256, 256, 3, MConvention::two_layers), 1.0 - 11.0 / 29.0, 1e-15);
  EXPECT_NEAR(savings_report(256, 256, 3, MConvention::one_layer), 1.0 - 10.0 / 28.0, 1e-15);
  EXPECT_GT(savings_report(64, 64, 3), 0.620);
  EXPECT_LT(savings_report(64, 64, 3), 0.621);
  EXPECT_NEAR(savings_report(256, 256, 3), 0.6207, 0.00005);
  EXPECT_NEAR(savings_report(256, 256, 3, MConvention::one_layer), 0.6429, 0.00005);
  EXPECT_EQ(savings_report(32, 48, 1, MConvention::one_layer), 0.0);
  EXPECT_EQ(savings_report(32, 48, 1, MConvention::two_layers), 0.0);
  EXPECT_THROW(savings_report(0, 1, 3), ConfigError);
}

TEST(Savings, IndependentOfWidthWhenSquare) {
  for (std::int64_t c : {1, 7, 64, 256, 2048}) EXPECT_NEAR(savings_report(c, c, 3), 18.0 / 29.0, 1e-14);
}

TEST(Flops, PointwiseConvClosedForm) {
  KsacHead head(2, 3, {1}, 0);
  const FlopsReport r = flops_estimate(head, {1, 2, 4, 4});
  ASSERT_EQ(r.layers.front().name, "head.conv1x1");
  EXPECT_EQ(r.layers.front().macs, 96);
}

TEST(Flops, HeadLayersMatchShapeArithmetic) {
  KsacHead head(8, 4, {1, 2, 3}, 0);
  const FlopsReport r = flops_estimate(head, {2, 8, 5, 6});
  const std::int64_t grid = 2 * 5 * 6;
  const std::int64_t want = grid * 4 * 8        // conv1x1
                            + grid * 8          // pooling
                            + 2 * 4 * 8         // image-level 1x1 on the pooled map
                            + 3 * grid * 4 * 8 * 9  // three rates
                            + grid * 4 * 12;    // projection
  EXPECT_EQ(r.head_total(), want);
  EXPECT_EQ(r.head_spatial_total(), want - 2 * 4 * 8);
}

TEST(Flops, OutputStrideEightQuadruplesHeadCost) {
  for (HeadKind kind : {HeadKind::ksac, HeadKind::aspp}) {
    ModelConfig cfg{.head = kind, .rates = {6, 12, 18}, .c_in = 64, .c_out = 64};
    auto os16 = build_model(cfg);
    cfg.output_stride = 8;
    auto os8 = build_model(cfg);
    for (std::int64_t side : {64, 512}) {
      const FlopsReport a = flops_estimate(*os8, {1, 3, side, side});
      const FlopsReport b = flops_estimate(*os16, {1, 3, side, side});
      EXPECT_EQ(a.head_spatial_total(), 4 * b.head_spatial_total());
      EXPECT_GT(static_cast<double>(a.head_total()) / static_cast<double>(b.head_total()), 3.99);
    }
  }
}

TEST(Flops, ZeroChannelModelsRejectedBeforeEstimation) {
  EXPECT_THROW(build_model({.c_in = 0}), ConfigError);
}
