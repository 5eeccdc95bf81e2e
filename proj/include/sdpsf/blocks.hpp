#pragma once

#include <torch/torch.h>

#include <algorithm>

#include "sdpsf/cab.hpp"
#include "sdpsf/psf.hpp"

namespace sdpsf {

// Compresses a PSF kernel stack into a compact feature vector: two convs over
// the K x K grid, adaptive pooling, flatten to [B, D].
struct PsfEncoderImpl : torch::nn::Module {
  PsfEncoderImpl(int in_channels, int embed_dim) : embed_dim_(embed_dim) {
    conv1 = register_module("conv1",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, embed_dim, 3)
                              .padding(1)));
    act1 = register_module("act1", torch::nn::PReLU());
    conv2 = register_module("conv2",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(embed_dim, embed_dim, 3)
                              .padding(1)));
    act2 = register_module("act2", torch::nn::PReLU());
    pool = register_module("pool", torch::nn::AdaptiveAvgPool2d(1));
  }

  torch::Tensor forward(const torch::Tensor& psf) {
    auto f = act2(conv2(act1(conv1(psf))));
    return pool(f).flatten(1);
  }

  int embed_dim() const { return embed_dim_; }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::PReLU act1{nullptr}, act2{nullptr};
  torch::nn::AdaptiveAvgPool2d pool{nullptr};
  int embed_dim_;
};
TORCH_MODULE(PsfEncoder);

// Dual-path PSF conditioning: channel modulation (gamma, beta from the PSF
// embedding) followed by spatial attention over the modulated features
// concatenated with the upsampled single-channel PSF.
struct PsfAwareAttentionImpl : torch::nn::Module {
  PsfAwareAttentionImpl(int channels, int psf_channels, int embed_dim = 64)
      : channels_(channels) {
    reducer = register_module("reducer", PsfChannelReducer(psf_channels, 1));
    encoder = register_module("encoder", PsfEncoder(1, embed_dim));
    fc1 = register_module("fc1", torch::nn::Linear(embed_dim, 2 * embed_dim));
    fc_act = register_module("fc_act", torch::nn::PReLU());
    fc2 = register_module("fc2", torch::nn::Linear(2 * embed_dim, 2 * channels));
    spatial = register_module("spatial",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels + 1, 1, 7).padding(3)));
    // identity modulation at init: gamma starts at 1, beta at 0
    torch::NoGradGuard ng;
    fc2->bias.narrow(0, 0, channels).fill_(1.0);
    fc2->bias.narrow(0, channels, channels).zero_();
  }

  // The pure combination step; forward() feeds it with predicted parameters.
  static torch::Tensor apply_modulation(const torch::Tensor& x,
                                        const torch::Tensor& gamma,
                                        const torch::Tensor& beta,
                                        const torch::Tensor& attention) {
    return (x * gamma + beta) * attention;
  }

  torch::Tensor attention_map(const torch::Tensor& x_mod,
                              const torch::Tensor& psf_single) {
    namespace F = torch::nn::functional;
    auto up = F::interpolate(psf_single,
                             F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{x_mod.size(2), x_mod.size(3)})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
    return torch::sigmoid(spatial(torch::cat({x_mod, up}, 1)));
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& psf) {
    TORCH_CHECK(x.size(0) == psf.size(0),
                "feature and PSF batch sizes disagree");
    auto single = reducer(psf);
    auto feat = encoder(single);
    auto params = fc2(fc_act(fc1(feat)));
    auto gamma = params.narrow(1, 0, channels_).view({-1, channels_, 1, 1});
    auto beta = params.narrow(1, channels_, channels_).view({-1, channels_, 1, 1});
    auto x_mod = x * gamma + beta;
    return x_mod * attention_map(x_mod, single);
  }

  PsfChannelReducer reducer{nullptr};
  PsfEncoder encoder{nullptr};
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
  torch::nn::PReLU fc_act{nullptr};
  torch::nn::Conv2d spatial{nullptr};
  int channels_;
};
TORCH_MODULE(PsfAwareAttention);

// Residual block whose body output is reweighted by PSF-aware attention:
// out = x + PSFA(conv-act-conv(x), psf).
struct PsfBlockImpl : torch::nn::Module {
  PsfBlockImpl(int channels, int psf_channels, int kernel_size = 3,
               int embed_dim = 64) {
    int pad = kernel_size / 2;
    conv1 = register_module("conv1",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, kernel_size)
                              .padding(pad)));
    act = register_module("act", torch::nn::PReLU());
    conv2 = register_module("conv2",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, kernel_size)
                              .padding(pad)));
    psfa = register_module("psfa",
        PsfAwareAttention(channels, psf_channels, embed_dim));
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& psf) {
    return x + psfa(conv2(act(conv1(x))), psf);
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::PReLU act{nullptr};
  PsfAwareAttention psfa{nullptr};
};
TORCH_MODULE(PsfBlock);

// Stage exit: emits the stage's restored image (a residual over the stage
// input) and attention-reweighted features for the next stage.
struct SupervisedAttentionImpl : torch::nn::Module {
  SupervisedAttentionImpl(int n_feat, int kernel_size = 3) {
    int pad = kernel_size / 2;
    conv1 = register_module("conv1",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(n_feat, n_feat, kernel_size)
                              .padding(pad)));
    conv2 = register_module("conv2",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(n_feat, 3, kernel_size)
                              .padding(pad)));
    conv3 = register_module("conv3",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(3, n_feat, kernel_size)
                              .padding(pad)));
  }

  // -> {attended features, restored image}
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& features,
                                                  const torch::Tensor& img_in) {
    TORCH_CHECK(features.size(2) == img_in.size(2) &&
                    features.size(3) == img_in.size(3),
                "features and image must be spatially aligned");
    auto x1 = conv1(features);
    auto restored = conv2(features) + img_in;
    auto mask = torch::sigmoid(conv3(restored));
    auto attended = x1 * mask + features;
    return {attended, restored};
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
};
TORCH_MODULE(SupervisedAttention);

// Original-resolution block: side information added at the input, a CAB chain
// plus a tail conv, residual connection around the chain.
struct OriginalResolutionBlockImpl : torch::nn::Module {
  OriginalResolutionBlockImpl(int channels, int num_cab, int kernel_size = 3,
                              int reduction = 4) {
    cabs = register_module("cabs", torch::nn::ModuleList());
    for (int i = 0; i < num_cab; ++i)
      cabs->push_back(ChannelAttentionBlock(channels, kernel_size, reduction));
    tail = register_module("tail",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, kernel_size)
                              .padding(kernel_size / 2)));
  }

  // side_info must already be projected to this block's width; pass an
  // undefined tensor to skip the injection.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& side_info) {
    auto h = side_info.defined() ? x + side_info : x;
    auto body = h;
    for (auto& cab : *cabs) body = cab->as<ChannelAttentionBlockImpl>()->forward(body);
    return h + tail(body);
  }

  torch::nn::ModuleList cabs{nullptr};
  torch::nn::Conv2d tail{nullptr};
};
TORCH_MODULE(OriginalResolutionBlock);

}  // namespace sdpsf
