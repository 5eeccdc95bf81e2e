#pragma once

#include <torch/torch.h>

#include <algorithm>

namespace sdpsf {

// Squeeze-excite channel gate: global pool -> bottleneck -> sigmoid, applied
// multiplicatively per channel.
struct ChannelAttentionImpl : torch::nn::Module {
  ChannelAttentionImpl(int channels, int reduction) {
    int mid = std::max(1, channels / reduction);
    pool = register_module("pool", torch::nn::AdaptiveAvgPool2d(1));
    down = register_module(
        "down", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, mid, 1)));
    act = register_module("act", torch::nn::PReLU());
    up = register_module(
        "up", torch::nn::Conv2d(torch::nn::Conv2dOptions(mid, channels, 1)));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto g = torch::sigmoid(up(act(down(pool(x)))));
    return x * g;
  }

  torch::nn::AdaptiveAvgPool2d pool{nullptr};
  torch::nn::Conv2d down{nullptr}, up{nullptr};
  torch::nn::PReLU act{nullptr};
};
TORCH_MODULE(ChannelAttention);

// Residual channel attention block: conv-act-conv, channel gate, plus input.
struct ChannelAttentionBlockImpl : torch::nn::Module {
  ChannelAttentionBlockImpl(int channels, int kernel_size = 3, int reduction = 4) {
    int pad = kernel_size / 2;
    conv1 = register_module("conv1",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, kernel_size)
                              .padding(pad)));
    act = register_module("act", torch::nn::PReLU());
    conv2 = register_module("conv2",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, kernel_size)
                              .padding(pad)));
    ca = register_module("ca", ChannelAttention(channels, reduction));
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto res = ca(conv2(act(conv1(x))));
    return x + res;
  }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::PReLU act{nullptr};
  ChannelAttention ca{nullptr};
};
TORCH_MODULE(ChannelAttentionBlock);

}  // namespace sdpsf
