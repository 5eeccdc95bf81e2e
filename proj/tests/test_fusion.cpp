#include <gtest/gtest.h>
#include <torch/torch.h>

#include "sdpsf/fusion.hpp"
#include "testing_util.hpp"

using namespace sdpsf;
namespace tt = sdpsf_test;

TEST(GatedFuse, SaturatedEndpointsAreExact) {
  torch::manual_seed(0);
  GatedFuse fuse(6);
  auto cur = torch::randn({2, 6, 4, 4});
  auto prev = torch::randn({2, 6, 4, 4});

  tt::saturate_gate(fuse->conv2, 1000.0);  // G = 1 exactly
  EXPECT_TRUE(torch::equal(fuse(cur, prev), cur));

  tt::saturate_gate(fuse->conv2, -1000.0);  // G = 0 exactly
  EXPECT_TRUE(torch::equal(fuse(cur, prev), prev));
}

TEST(GatedFuse, EqualInputsPassThroughBitExact) {
  for (int seed = 0; seed < 5; ++seed) {
    torch::manual_seed(seed);
    GatedFuse fuse(5);
    auto f = torch::randn({1, 5, 3, 3});
    EXPECT_TRUE(torch::equal(fuse(f, f), f)) << "seed " << seed;
  }
}

TEST(GatedFuse, OutputWithinElementwiseEnvelope) {
  torch::manual_seed(1);
  for (int trial = 0; trial < 100; ++trial) {
    GatedFuse fuse(4);
    auto cur = torch::randn({1, 4, 5, 5}) * (trial % 7 + 1);
    auto prev = torch::randn({1, 4, 5, 5}) * (trial % 5 + 1);
    auto out = fuse(cur, prev);
    auto lo = torch::minimum(cur, prev);
    auto hi = torch::maximum(cur, prev);
    EXPECT_TRUE((out >= lo).all().item<bool>()) << "trial " << trial;
    EXPECT_TRUE((out <= hi).all().item<bool>()) << "trial " << trial;
  }
}

TEST(GatedFuse, GateValuesWithinUnitInterval) {
  torch::manual_seed(2);
  GatedFuse fuse(8);
  for (int i = 0; i < 20; ++i) {
    auto g = fuse->gate(torch::randn({2, 8, 4, 4}) * 20.0,
                        torch::randn({2, 8, 4, 4}) * 20.0);
    EXPECT_GE(g.min().item<double>(), 0.0);
    EXPECT_LE(g.max().item<double>(), 1.0);
    EXPECT_TRUE(g.sizes() == torch::IntArrayRef({2, 8, 1, 1}));
  }
}

TEST(GatedFuse, RejectsShapeMismatch) {
  GatedFuse fuse(4);
  EXPECT_ANY_THROW(fuse(torch::randn({1, 4, 4, 4}), torch::randn({1, 4, 8, 8})));
}

TEST(GatedFuse, BypassPassesCurrentThrough) {
  torch::manual_seed(3);
  GatedFuse fuse(4);
  fuse->bypass = true;
  auto cur = torch::randn({1, 4, 4, 4});
  auto prev = torch::randn({1, 4, 4, 4});
  EXPECT_TRUE(torch::equal(fuse(cur, prev), cur));
}

TEST(GatedFuse, GradientsMatchFiniteDifferences) {
  torch::manual_seed(4);
  GatedFuse fuse(2);
  fuse->to(torch::kFloat64);
  auto probe = torch::randn({1, 2, 3, 3}, torch::kFloat64);
  auto cur = torch::randn({1, 2, 3, 3}, torch::kFloat64).set_requires_grad(true);
  auto prev = torch::randn({1, 2, 3, 3}, torch::kFloat64).set_requires_grad(true);
  std::vector<torch::Tensor> leaves = {cur, prev};
  for (auto& p : fuse->parameters()) leaves.push_back(p);
  auto fn = [&]() { return (fuse(cur, prev) * probe).sum(); };
  EXPECT_LT(tt::max_grad_rel_err(fn, leaves), 1e-3);
}

TEST(ShallowFeatures, WithoutHistoryIsPlainConvCab) {
  torch::manual_seed(5);
  ShallowFeatures shallow(8, 0, 3, 4);
  auto img = torch::rand({2, 3, 8, 8});
  auto expected = shallow->cab(shallow->conv(img));
  EXPECT_TRUE(torch::equal(shallow(img), expected));
}

TEST(ShallowFeatures, HistoryEqualToFeaturesLeavesThemUnchanged) {
  torch::manual_seed(6);
  ShallowFeatures shallow(8, 8, 3, 4);
  auto img = torch::rand({1, 3, 8, 8});
  auto base = shallow->cab(shallow->conv(img));
  EXPECT_TRUE(torch::equal(shallow(img, base), base));
}

TEST(ShallowFeatures, ProjectsMismatchedHistoryWidth) {
  torch::manual_seed(7);
  ShallowFeatures shallow(12, 8, 3, 4);  // history arrives at width 8
  ASSERT_TRUE(shallow->h_proj);
  auto out = shallow(torch::rand({1, 3, 8, 8}), torch::randn({1, 8, 8, 8}));
  EXPECT_TRUE(out.sizes() == torch::IntArrayRef({1, 12, 8, 8}));
}

TEST(ShallowFeatures, DefaultStageWidth) {
  ShallowFeatures shallow(40, 0, 3, 4);
  EXPECT_EQ(shallow(torch::rand({1, 3, 16, 16})).size(1), 40);
}

TEST(EnhancedCsff, ThreeScalesInThreeScalesOut) {
  torch::manual_seed(8);
  EnhancedCsff csff(std::vector<int>{8, 12, 16}, true);
  std::vector<torch::Tensor> enc = {torch::randn({1, 8, 16, 16}),
                                    torch::randn({1, 12, 8, 8}),
                                    torch::randn({1, 16, 4, 4})};
  std::vector<torch::Tensor> dec = {torch::randn({1, 8, 16, 16}),
                                    torch::randn({1, 12, 8, 8}),
                                    torch::randn({1, 16, 4, 4})};
  std::vector<torch::Tensor> hist = {torch::randn({1, 8, 16, 16}),
                                     torch::randn({1, 12, 8, 8}),
                                     torch::randn({1, 16, 4, 4})};
  auto out = csff(enc, dec, hist);
  ASSERT_EQ(out.size(), 3u);
  for (size_t s = 0; s < 3; ++s) EXPECT_TRUE(out[s].sizes() == enc[s].sizes());
}

TEST(EnhancedCsff, NoHistoryTakesSingleGatePath) {
  torch::manual_seed(9);
  EnhancedCsff csff(std::vector<int>{4}, false);
  auto enc = torch::randn({1, 4, 8, 8});
  auto dec = torch::randn({1, 4, 8, 8});
  auto out = csff(std::vector<torch::Tensor>{enc}, std::vector<torch::Tensor>{dec});
  auto g1 = csff->gates_in[0]->as<GatedFuseImpl>()->forward(enc, dec);
  auto expected = csff->convs_b[0]->as<torch::nn::Conv2dImpl>()->forward(
      csff->convs_a[0]->as<torch::nn::Conv2dImpl>()->forward(g1));
  EXPECT_TRUE(torch::equal(out[0], expected));
  EXPECT_FALSE(csff->gates_hist);
}

TEST(EnhancedCsff, EqualEncDecReducesToConvConv) {
  torch::manual_seed(10);
  EnhancedCsff csff(std::vector<int>{4}, false);
  auto f = torch::randn({1, 4, 8, 8});
  auto out = csff(std::vector<torch::Tensor>{f}, std::vector<torch::Tensor>{f});
  auto expected = csff->convs_b[0]->as<torch::nn::Conv2dImpl>()->forward(
      csff->convs_a[0]->as<torch::nn::Conv2dImpl>()->forward(f));
  EXPECT_TRUE(torch::equal(out[0], expected));
}

TEST(EnhancedCsff, RejectsScaleCountMismatch) {
  EnhancedCsff csff(std::vector<int>{4, 8}, false);
  std::vector<torch::Tensor> one = {torch::randn({1, 4, 8, 8})};
  std::vector<torch::Tensor> two = {torch::randn({1, 4, 8, 8}),
                                    torch::randn({1, 8, 4, 4})};
  EXPECT_ANY_THROW(csff(one, two));
}
