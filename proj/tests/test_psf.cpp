#include <gtest/gtest.h>
#include <torch/torch.h>

#include "sdpsf/psf.hpp"
#include "testing_util.hpp"

using namespace sdpsf;
namespace tt = sdpsf_test;

namespace {

void expect_valid_psf(const torch::Tensor& psf, double tol = 1e-5) {
  ASSERT_EQ(psf.dim(), 4);
  EXPECT_GE(psf.min().item<double>(), 0.0);
  auto sums = psf.sum({-2, -1});
  EXPECT_LE((sums - 1.0).abs().max().item<double>(), tol);
}

}  // namespace

TEST(SingleScalePsfHead, ZeroWeightsGiveUniform) {
  torch::manual_seed(0);
  SingleScalePsfHead head(6, 3);
  {
    torch::NoGradGuard ng;
    head->proj->weight.zero_();
    head->proj->bias.zero_();
  }
  auto out = head(torch::randn({2, 6, 8, 8}));
  ASSERT_TRUE(out.sizes() == torch::IntArrayRef({2, 9, 1, 1}));
  EXPECT_TRUE(torch::allclose(out, torch::full({2, 9, 1, 1}, 1.0 / 9.0), 1e-6, 1e-9));
}

TEST(SingleScalePsfHead, HandComputedSoftmax) {
  // logits [0, ln2, 0, ..., 0]: exp = [1, 2, 1 x7], sum 10
  SingleScalePsfHead head(4, 3);
  head->to(torch::kFloat64);
  {
    torch::NoGradGuard ng;
    head->proj->weight.zero_();
    head->proj->bias.zero_();
    head->proj->bias[1] = std::log(2.0);
  }
  auto out = head(torch::randn({1, 4, 5, 5}, torch::kFloat64)).view(-1);
  EXPECT_NEAR(out[1].item<double>(), 0.2, 1e-12);
  for (int i = 0; i < 9; ++i)
    if (i != 1) EXPECT_NEAR(out[i].item<double>(), 0.1, 1e-12);
}

TEST(SingleScalePsfHead, ShapeContractAndSumToOne) {
  torch::manual_seed(1);
  SingleScalePsfHead head(40, 7);
  auto out = head(torch::randn({2, 40, 16, 16}));
  ASSERT_TRUE(out.sizes() == torch::IntArrayRef({2, 49, 1, 1}));
  EXPECT_GT(out.min().item<double>(), 0.0);
  auto sums = out.sum(1).view(-1);
  EXPECT_LE((sums - 1.0).abs().max().item<double>(), 1e-6);
}

TEST(SingleScalePsfHead, ChannelMismatchThrows) {
  SingleScalePsfHead head(8, 3);
  EXPECT_ANY_THROW(head(torch::randn({1, 5, 8, 8})));
}

TEST(SpatialNormalize, UniformFromOnes) {
  auto out = spatial_normalize(torch::ones({1, 1, 3, 3}, torch::kFloat64));
  EXPECT_TRUE(torch::allclose(out, torch::full({1, 1, 3, 3}, 1.0 / 9.0,
                                               torch::kFloat64)));
}

TEST(SpatialNormalize, ZeroSliceFallsBackToUniform) {
  auto out = spatial_normalize(torch::zeros({2, 3, 3, 3}, torch::kFloat64));
  EXPECT_TRUE(torch::allclose(out, torch::full({2, 3, 3, 3}, 1.0 / 9.0,
                                               torch::kFloat64)));
}

TEST(SpatialNormalize, SinglePositiveEntryIsScaleInvariant) {
  for (double v : {1e-3, 1.0, 1e3}) {
    auto raw = torch::zeros({1, 1, 3, 3}, torch::kFloat64);
    raw[0][0][0][0] = v;
    auto out = spatial_normalize(raw, 1e-8);
    EXPECT_DOUBLE_EQ(out[0][0][0][0].item<double>(), 1.0) << "v=" << v;
    EXPECT_DOUBLE_EQ(out.sum().item<double>(), 1.0);
    EXPECT_DOUBLE_EQ(out.view(-1).slice(0, 1).abs().max().item<double>(), 0.0);
  }
}

TEST(SpatialNormalize, GradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  // entries bounded away from zero so the relu clamp is locally smooth
  auto raw = (torch::rand({2, 2, 3, 3}, torch::kFloat64) + 0.05)
                 .set_requires_grad(true);
  auto probe = torch::randn({2, 2, 3, 3}, torch::kFloat64);
  auto fn = [&]() { return (spatial_normalize(raw) * probe).sum(); };
  EXPECT_LT(tt::max_grad_rel_err(fn, {raw}), 1e-3);
}

TEST(MultiScalePsfHead, DefaultShapeAndNormalization) {
  torch::manual_seed(4);
  MultiScalePsfHead head(std::vector<int>{40, 60, 80}, std::vector<int>{3, 5, 7}, 40, 7);
  std::vector<torch::Tensor> feats = {torch::randn({1, 40, 32, 32}),
                                      torch::randn({1, 60, 16, 16}),
                                      torch::randn({1, 80, 8, 8})};
  auto psf = head(feats);
  ASSERT_TRUE(psf.sizes() == torch::IntArrayRef({1, 40, 7, 7}));
  expect_valid_psf(psf);
}

TEST(MultiScalePsfHead, SingleChannelConfiguration) {
  torch::manual_seed(5);
  MultiScalePsfHead head(std::vector<int>{8, 12, 16}, std::vector<int>{3, 5, 7}, 1, 7);
  std::vector<torch::Tensor> feats = {torch::randn({2, 8, 16, 16}),
                                      torch::randn({2, 12, 8, 8}),
                                      torch::randn({2, 16, 4, 4})};
  auto psf = head(feats);
  ASSERT_TRUE(psf.sizes() == torch::IntArrayRef({2, 1, 7, 7}));
  expect_valid_psf(psf);
}

TEST(MultiScalePsfHead, EqualProjectionGivesUniformKernels) {
  MultiScalePsfHead head(std::vector<int>{4, 6}, std::vector<int>{3, 5}, 3, 5);
  {
    torch::NoGradGuard ng;
    head->proj->weight.zero_();
    head->proj->bias.zero_();
  }
  std::vector<torch::Tensor> feats = {torch::randn({1, 4, 8, 8}),
                                      torch::randn({1, 6, 4, 4})};
  auto psf = head(feats);
  EXPECT_TRUE(torch::allclose(psf, torch::full_like(psf, 1.0 / 25.0), 1e-6, 1e-8));
}

TEST(MultiScalePsfHead, FuseRejectsBatchMismatch) {
  MultiScalePsfHead head(std::vector<int>{4, 6}, std::vector<int>{3, 5}, 2, 5);
  std::vector<torch::Tensor> flats = {torch::rand({1, 9, 1, 1}),
                                      torch::rand({2, 25, 1, 1})};
  EXPECT_ANY_THROW(head->fuse(flats));
}

TEST(MultiScalePsfHead, FuseRejectsWrongHeadSet) {
  MultiScalePsfHead head(std::vector<int>{4, 6}, std::vector<int>{3, 5}, 2, 5);
  EXPECT_ANY_THROW(head->fuse({torch::rand({1, 9, 1, 1})}));
  std::vector<torch::Tensor> swapped = {torch::rand({1, 25, 1, 1}),
                                        torch::rand({1, 9, 1, 1})};
  EXPECT_ANY_THROW(head->fuse(swapped));
}

TEST(MultiScalePsfHead, FuseGradientMatchesFiniteDifferences) {
  torch::manual_seed(6);
  MultiScalePsfHead head(std::vector<int>{4, 6}, std::vector<int>{3, 5}, 2, 3);
  head->to(torch::kFloat64);
  auto f3 = torch::softmax(torch::randn({1, 9, 1, 1}, torch::kFloat64), 1)
                .detach()
                .set_requires_grad(true);
  auto f5 = torch::softmax(torch::randn({1, 25, 1, 1}, torch::kFloat64), 1)
                .detach()
                .set_requires_grad(true);
  auto probe = torch::randn({1, 2, 3, 3}, torch::kFloat64);
  auto fn = [&]() { return (head->fuse({f3, f5}) * probe).sum(); };
  EXPECT_LT(tt::max_grad_rel_err(fn, {f3, f5}), 1e-3);
}

TEST(PsfChannelReducer, TwoStepPathForStrongReduction) {
  torch::manual_seed(7);
  PsfChannelReducer reducer(40, 1);
  EXPECT_TRUE(reducer->two_step());
  ASSERT_TRUE(reducer->compress);
  EXPECT_EQ(reducer->compress->weight.size(0), 10);  // quarter of 40
  auto psf = spatial_normalize(torch::rand({2, 40, 7, 7}));
  auto out = reducer(psf);
  ASSERT_TRUE(out.sizes() == torch::IntArrayRef({2, 1, 7, 7}));
  expect_valid_psf(out);
}

TEST(PsfChannelReducer, DirectPathForMildReduction) {
  PsfChannelReducer reducer(40, 20);  // 20 >= 40/4 -> direct mapping
  EXPECT_FALSE(reducer->two_step());
  ASSERT_TRUE(reducer->direct);
  auto out = reducer(spatial_normalize(torch::rand({1, 40, 5, 5})));
  ASSERT_TRUE(out.sizes() == torch::IntArrayRef({1, 20, 5, 5}));
  expect_valid_psf(out);
}

TEST(PsfChannelReducer, IdentityInitializedOneToOne) {
  PsfChannelReducer reducer(1, 1);
  reducer->to(torch::kFloat64);
  {
    torch::NoGradGuard ng;
    reducer->direct->weight.fill_(1.0);
    reducer->direct->bias.zero_();
  }
  auto psf = spatial_normalize(torch::rand({2, 1, 5, 5}, torch::kFloat64));
  EXPECT_TRUE(torch::allclose(reducer(psf), psf, 1e-12, 1e-12));
}

TEST(PsfChannelReducer, RejectsBadTarget) {
  EXPECT_THROW(PsfChannelReducer(8, 0), std::invalid_argument);
}

TEST(SynthesizeDegradation, DeltaKernelIsIdentity) {
  torch::manual_seed(8);
  auto kernels = torch::zeros({1, 3, 3}, torch::kFloat64);
  kernels[0][1][1] = 1.0;
  PsfDictionary dict{kernels, torch::ones({2, 1, 6, 6}, torch::kFloat64)};
  auto img = torch::rand({2, 3, 6, 6}, torch::kFloat64);
  EXPECT_TRUE(torch::allclose(synthesize_degradation(img, dict), img, 1e-12, 1e-12));
}

TEST(SynthesizeDegradation, SumOneKernelPreservesConstants) {
  auto kernels = torch::full({1, 3, 3}, 1.0 / 9.0, torch::kFloat64);
  PsfDictionary dict{kernels, torch::ones({1, 1, 5, 5}, torch::kFloat64)};
  auto img = torch::full({1, 3, 5, 5}, 0.37, torch::kFloat64);
  auto out = synthesize_degradation(img, dict);
  EXPECT_TRUE(torch::allclose(out, img, 1e-12, 1e-12));
}

TEST(SynthesizeDegradation, MatchesBruteForceOracle) {
  for (int trial = 0; trial < 5; ++trial) {
    torch::manual_seed(100 + trial);
    int kc = 3, k = 5;
    auto kernels = spatial_normalize(torch::rand({1, kc, k, k}, torch::kFloat64))
                       .squeeze(0);
    auto weights = torch::softmax(torch::randn({1, kc, 8, 8}, torch::kFloat64), 1);
    auto img = torch::rand({1, 3, 8, 8}, torch::kFloat64);
    PsfDictionary dict{kernels, weights};
    auto fast = synthesize_degradation(img, dict);
    auto slow = tt::degrade_bruteforce(img, kernels, weights);
    EXPECT_LT((fast - slow).abs().max().item<double>(), 1e-6);
  }
}

TEST(SynthesizeDegradation, RejectsSpatialMismatch) {
  auto kernels = torch::full({1, 3, 3}, 1.0 / 9.0, torch::kFloat64);
  PsfDictionary dict{kernels, torch::ones({1, 1, 4, 4}, torch::kFloat64)};
  EXPECT_ANY_THROW(
      synthesize_degradation(torch::rand({1, 3, 6, 6}, torch::kFloat64), dict));
}

TEST(PsfValidityProperty, RandomInputsAcrossProducingOps) {
  torch::manual_seed(9);
  MultiScalePsfHead head(std::vector<int>{6, 8}, std::vector<int>{3, 5}, 4, 5);
  PsfChannelReducer reducer(4, 1);
  for (int i = 0; i < 50; ++i) {
    std::vector<torch::Tensor> feats = {torch::randn({1, 6, 8, 8}) * 3.0,
                                        torch::randn({1, 8, 4, 4}) * 3.0};
    auto psf = head(feats);
    expect_valid_psf(psf);
    expect_valid_psf(reducer(psf));
    expect_valid_psf(spatial_normalize(torch::randn({1, 3, 5, 5})));
  }
}

TEST(SyntheticHelpers, StreakKernelsAndSmoothFieldAreValid) {
  auto kernels = make_streak_kernels(4, 5, 42);
  expect_valid_psf(kernels.unsqueeze(0));
  auto field = make_smooth_weight_field(2, 4, 32, 32, 7);
  EXPECT_GE(field.min().item<double>(), 0.0);
  auto sums = field.sum(1);
  EXPECT_LE((sums - 1.0).abs().max().item<double>(), 1e-6);
}
