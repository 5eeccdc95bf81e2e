#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "sdpsf/cab.hpp"

namespace sdpsf {

// Clamps a raw kernel stack [B, Kc, K, K] to nonnegative values and rescales
// every (b, c) slice to unit mass. Slices whose mass falls below `epsilon`
// become the uniform kernel 1/K^2.
inline torch::Tensor spatial_normalize(const torch::Tensor& raw,
                                       double epsilon = 1e-8) {
  TORCH_CHECK(raw.dim() == 4, "spatial_normalize expects [B, Kc, K, K]");
  auto nonneg = torch::relu(raw);
  auto mass = nonneg.sum({-2, -1}, /*keepdim=*/true);
  auto area = static_cast<double>(raw.size(-2) * raw.size(-1));
  auto uniform = torch::full_like(nonneg, 1.0 / area);
  auto normed = nonneg / mass.clamp_min(epsilon);
  return torch::where(mass < epsilon, uniform, normed);
}

// Predicts one flattened PSF weight vector per batch element: pool the
// feature map to 1x1, project channels to k^2 logits, softmax over them.
struct SingleScalePsfHeadImpl : torch::nn::Module {
  SingleScalePsfHeadImpl(int in_channels, int kernel_size)
      : kernel_size_(kernel_size) {
    TORCH_CHECK(kernel_size % 2 == 1, "head kernel size must be odd");
    pool = register_module("pool", torch::nn::AdaptiveAvgPool2d(1));
    proj = register_module("proj",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(
            in_channels, kernel_size * kernel_size, 1)));
  }

  // [B, C, H, W] -> [B, k^2, 1, 1], entries > 0, summing to 1 per element.
  torch::Tensor forward(const torch::Tensor& features) {
    return torch::softmax(proj(pool(features)), /*dim=*/1);
  }

  int kernel_size() const { return kernel_size_; }

  torch::nn::AdaptiveAvgPool2d pool{nullptr};
  torch::nn::Conv2d proj{nullptr};
  int kernel_size_;
};
TORCH_MODULE(SingleScalePsfHead);

// Multi-scale PSF head: one prediction head per encoder scale, channel-wise
// concatenation, CAB fusion, 1x1 projection to Kc*K*K, reshape, softplus and
// spatial normalization.
struct MultiScalePsfHeadImpl : torch::nn::Module {
  MultiScalePsfHeadImpl(std::vector<int> feature_widths, std::vector<int> head_sizes,
                        int psf_channels, int psf_kernel, int cab_reduction = 16)
      : psf_channels_(psf_channels), psf_kernel_(psf_kernel) {
    TORCH_CHECK(feature_widths.size() == head_sizes.size(),
                "one head per encoder scale required");
    TORCH_CHECK(psf_kernel % 2 == 1, "output PSF size must be odd");
    heads = register_module("heads", torch::nn::ModuleList());
    concat_width_ = 0;
    for (size_t i = 0; i < head_sizes.size(); ++i) {
      heads->push_back(SingleScalePsfHead(feature_widths[i], head_sizes[i]));
      concat_width_ += head_sizes[i] * head_sizes[i];
    }
    fuse_cab = register_module(
        "fuse_cab", ChannelAttentionBlock(concat_width_, /*kernel_size=*/1,
                                          cab_reduction));
    proj = register_module("proj",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(
            concat_width_, psf_channels * psf_kernel * psf_kernel, 1)));
  }

  // Fuses per-scale flat PSFs [B, k_i^2, 1, 1] into one [B, Kc, K, K] stack.
  torch::Tensor fuse(const std::vector<torch::Tensor>& flat_psfs) {
    TORCH_CHECK(flat_psfs.size() == heads->size(),
                "expected ", heads->size(), " flat PSFs, got ", flat_psfs.size());
    auto batch = flat_psfs.front().size(0);
    for (size_t i = 0; i < flat_psfs.size(); ++i) {
      TORCH_CHECK(flat_psfs[i].size(0) == batch,
                  "flat PSF batch sizes disagree");
      auto expected = heads[i]->as<SingleScalePsfHeadImpl>()->kernel_size();
      TORCH_CHECK(flat_psfs[i].size(1) == expected * expected,
                  "flat PSF channel count does not match its head");
    }
    auto cat = torch::cat(flat_psfs, /*dim=*/1);
    auto fused = fuse_cab(cat);
    auto refined = proj(fused);
    auto raw = refined.view({batch, psf_channels_, psf_kernel_, psf_kernel_});
    return spatial_normalize(torch::softplus(raw));
  }

  // [B, Kc, K, K] from one feature map per encoder scale.
  torch::Tensor forward(const std::vector<torch::Tensor>& encoder_features) {
    TORCH_CHECK(encoder_features.size() == heads->size(),
                "expected one feature map per head");
    std::vector<torch::Tensor> flats;
    flats.reserve(encoder_features.size());
    for (size_t i = 0; i < encoder_features.size(); ++i)
      flats.push_back(
          heads[i]->as<SingleScalePsfHeadImpl>()->forward(encoder_features[i]));
    return fuse(flats);
  }

  int psf_channels() const { return psf_channels_; }
  int psf_kernel() const { return psf_kernel_; }

  torch::nn::ModuleList heads{nullptr};
  ChannelAttentionBlock fuse_cab{nullptr};
  torch::nn::Conv2d proj{nullptr};
  int psf_channels_, psf_kernel_, concat_width_;
};
TORCH_MODULE(MultiScalePsfHead);

// Compresses a multi-channel PSF to `out_channels`. Strong reductions
// (target below a quarter of the input) route through an intermediate
// quarter-width mapping; mild ones map directly. Output is renormalized.
struct PsfChannelReducerImpl : torch::nn::Module {
  PsfChannelReducerImpl(int in_channels, int out_channels)
      : in_channels_(in_channels), out_channels_(out_channels) {
    if (out_channels < 1)
      throw std::invalid_argument("PSF reducer target must be >= 1");
    two_step_ = out_channels * 4 < in_channels;
    if (two_step_) {
      int mid = std::max(1, in_channels / 4);
      compress = register_module("compress",
          torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, mid, 1)));
      expand = register_module("expand",
          torch::nn::Conv2d(torch::nn::Conv2dOptions(mid, out_channels, 1)));
    } else {
      direct = register_module("direct",
          torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1)));
    }
  }

  torch::Tensor forward(const torch::Tensor& psf) {
    auto raw = two_step_ ? expand(compress(psf)) : direct(psf);
    return spatial_normalize(raw);
  }

  bool two_step() const { return two_step_; }

  torch::nn::Conv2d compress{nullptr}, expand{nullptr}, direct{nullptr};
  int in_channels_, out_channels_;
  bool two_step_;
};
TORCH_MODULE(PsfChannelReducer);

// Learned degradation pattern dictionary: Kc kernels plus a per-pixel simplex
// weight field selecting their local mixture.
struct PsfDictionary {
  torch::Tensor kernels;       // [Kc, K, K]
  torch::Tensor weight_field;  // [B, Kc, H, W], nonnegative, sums to 1 over Kc

  void check() const {
    TORCH_CHECK(kernels.dim() == 3 && kernels.size(-1) == kernels.size(-2),
                "dictionary kernels must be [Kc, K, K]");
    TORCH_CHECK(weight_field.dim() == 4 && weight_field.size(1) == kernels.size(0),
                "weight field must be [B, Kc, H, W] with Kc matching the kernels");
  }
};

// Applies the spatially varying degradation K(x,y) = sum_j w_j(x,y) k_j with
// reflection boundary handling. Serves as the synthetic-data generator and
// the reference degradation model; it is not part of the network forward.
inline torch::Tensor synthesize_degradation(const torch::Tensor& image,
                                            const PsfDictionary& dict) {
  dict.check();
  TORCH_CHECK(image.dim() == 4, "image must be [B, C, H, W]");
  TORCH_CHECK(image.size(2) == dict.weight_field.size(2) &&
                  image.size(3) == dict.weight_field.size(3),
              "weight field spatial size must match the image");
  TORCH_CHECK(image.size(0) == dict.weight_field.size(0),
              "weight field batch must match the image");
  auto channels = image.size(1);
  auto kc = dict.kernels.size(0);
  auto k = dict.kernels.size(-1);
  auto pad = k / 2;
  namespace F = torch::nn::functional;
  auto padded = F::pad(image, F::PadFuncOptions({pad, pad, pad, pad})
                                  .mode(torch::kReflect));
  auto out = torch::zeros_like(image);
  for (int64_t j = 0; j < kc; ++j) {
    auto kj = dict.kernels[j]
                  .to(image.dtype())
                  .view({1, 1, k, k})
                  .expand({channels, 1, k, k});
    auto conv = F::conv2d(padded, kj, F::Conv2dFuncOptions().groups(channels));
    out = out + dict.weight_field.narrow(1, j, 1).to(image.dtype()) * conv;
  }
  return out;
}

// --- Synthetic dictionary helpers (used by the synth CLI and the tests) ---

// Oriented line kernels resembling streak blurs, one orientation per channel,
// each normalized to unit mass.
inline torch::Tensor make_streak_kernels(int count, int size, std::uint64_t seed) {
  TORCH_CHECK(size % 2 == 1, "kernel size must be odd");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, M_PI);
  auto kernels = torch::zeros({count, size, size}, torch::kFloat64);
  auto acc = kernels.accessor<double, 3>();
  auto center = (size - 1) / 2.0;
  for (int j = 0; j < count; ++j) {
    double theta = angle(rng);
    double dx = std::cos(theta), dy = std::sin(theta);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        // distance of the cell center from the oriented line through the middle
        double px = x - center, py = y - center;
        double dist = std::abs(px * dy - py * dx);
        double along = px * dx + py * dy;
        if (dist < 0.75 && std::abs(along) <= center + 0.25) acc[j][y][x] = 1.0;
      }
  }
  return spatial_normalize(kernels.unsqueeze(0)).squeeze(0);
}

// Smooth per-pixel simplex field: low-resolution Gaussian noise, bilinear
// upsampling, softmax over the channel axis.
inline torch::Tensor make_smooth_weight_field(int batch, int channels, int height,
                                              int width, std::uint64_t seed,
                                              double sharpness = 2.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  int gh = std::max(2, height / 16), gw = std::max(2, width / 16);
  auto coarse = torch::empty({batch, channels, gh, gw}, torch::kFloat64);
  auto acc = coarse.accessor<double, 4>();
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) acc[b][c][y][x] = normal(rng);
  namespace F = torch::nn::functional;
  auto fine = F::interpolate(coarse, F::InterpolateFuncOptions()
                                         .size(std::vector<int64_t>{height, width})
                                         .mode(torch::kBilinear)
                                         .align_corners(false));
  return torch::softmax(fine * sharpness, /*dim=*/1);
}

}  // namespace sdpsf
