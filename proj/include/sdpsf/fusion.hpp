#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <vector>

#include "sdpsf/cab.hpp"

namespace sdpsf {

// Convex gated fusion of a current and a historical feature map. The gate is
// a per-channel scalar in [0, 1] derived from the pooled concatenation:
// out = G (*) current + (1 - G) (*) previous.
struct GatedFuseImpl : torch::nn::Module {
  explicit GatedFuseImpl(int channels) {
    int mid = std::max(1, channels / 4);
    conv1 = register_module("conv1",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * channels, mid, 1)));
    act = register_module("act", torch::nn::PReLU());
    conv2 = register_module("conv2",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(mid, channels, 1)));
  }

  torch::Tensor gate(const torch::Tensor& f_current, const torch::Tensor& f_prev) {
    auto pooled = torch::adaptive_avg_pool2d(torch::cat({f_current, f_prev}, 1), {1, 1});
    return torch::sigmoid(conv2(act(conv1(pooled))));
  }

  torch::Tensor forward(const torch::Tensor& f_current, const torch::Tensor& f_prev) {
    TORCH_CHECK(f_current.sizes() == f_prev.sizes(),
                "gated fusion requires equal shapes; project beforehand");
    if (bypass) return f_current;
    auto g = gate(f_current, f_prev);
    // lerp keeps the endpoints and the equal-input case exact
    return torch::lerp(f_prev, f_current, g);
  }

  // Pathway-disable switch: pass f_current through untouched.
  bool bypass = false;

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::PReLU act{nullptr};
};
TORCH_MODULE(GatedFuse);

// Shallow feature extraction: conv + CAB over the stage input image, with the
// previous stage's feature map gated in when history is wired.
struct ShallowFeaturesImpl : torch::nn::Module {
  ShallowFeaturesImpl(int width, int history_width = 0, int kernel_size = 3,
                      int reduction = 4) {
    conv = register_module("conv",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(3, width, kernel_size)
                              .padding(kernel_size / 2)));
    cab = register_module("cab", ChannelAttentionBlock(width, kernel_size, reduction));
    if (history_width > 0) {
      if (history_width != width)
        h_proj = register_module("h_proj",
            torch::nn::Conv2d(torch::nn::Conv2dOptions(history_width, width, 1)));
      fuse = register_module("fuse", GatedFuse(width));
    }
  }

  torch::Tensor forward(const torch::Tensor& img_in,
                        const torch::Tensor& h_prev = {}) {
    auto s = cab(conv(img_in));
    if (!h_prev.defined() || !fuse) return s;
    auto h = h_proj ? h_proj(h_prev) : h_prev;
    return fuse(s, h);
  }

  torch::nn::Conv2d conv{nullptr}, h_proj{nullptr};
  ChannelAttentionBlock cab{nullptr};
  GatedFuse fuse{nullptr};
};
TORCH_MODULE(ShallowFeatures);

// Dual-gated cross-stage feature fusion. Per scale: gate the encoder and
// decoder features, convolve, optionally gate in the previous stage's
// cross-stage features, convolve again.
struct EnhancedCsffImpl : torch::nn::Module {
  EnhancedCsffImpl(std::vector<int> widths, bool with_history, int kernel_size = 3)
      : widths_(std::move(widths)), with_history_(with_history) {
    gates_in = register_module("gates_in", torch::nn::ModuleList());
    convs_a = register_module("convs_a", torch::nn::ModuleList());
    convs_b = register_module("convs_b", torch::nn::ModuleList());
    if (with_history_)
      gates_hist = register_module("gates_hist", torch::nn::ModuleList());
    int pad = kernel_size / 2;
    for (int w : widths_) {
      gates_in->push_back(GatedFuse(w));
      convs_a->push_back(torch::nn::Conv2d(
          torch::nn::Conv2dOptions(w, w, kernel_size).padding(pad)));
      convs_b->push_back(torch::nn::Conv2d(
          torch::nn::Conv2dOptions(w, w, kernel_size).padding(pad)));
      if (with_history_) gates_hist->push_back(GatedFuse(w));
    }
  }

  std::vector<torch::Tensor> forward(const std::vector<torch::Tensor>& enc_feats,
                                     const std::vector<torch::Tensor>& dec_feats,
                                     const std::vector<torch::Tensor>& o_prev = {}) {
    TORCH_CHECK(enc_feats.size() == widths_.size() &&
                    dec_feats.size() == widths_.size(),
                "scale count mismatch in cross-stage fusion");
    TORCH_CHECK(o_prev.empty() || o_prev.size() == widths_.size(),
                "history scale count mismatch in cross-stage fusion");
    std::vector<torch::Tensor> out;
    out.reserve(widths_.size());
    for (size_t s = 0; s < widths_.size(); ++s) {
      auto g1 = gates_in[s]->as<GatedFuseImpl>()->forward(enc_feats[s], dec_feats[s]);
      auto c = convs_a[s]->as<torch::nn::Conv2dImpl>()->forward(g1);
      auto g2 = c;
      if (with_history_ && !o_prev.empty())
        g2 = gates_hist[s]->as<GatedFuseImpl>()->forward(c, o_prev[s]);
      out.push_back(convs_b[s]->as<torch::nn::Conv2dImpl>()->forward(g2));
    }
    return out;
  }

  void set_bypass(bool value) {
    for (auto& g : *gates_in) g->as<GatedFuseImpl>()->bypass = value;
    if (gates_hist)
      for (auto& g : *gates_hist) g->as<GatedFuseImpl>()->bypass = value;
  }

  std::vector<int> widths_;
  bool with_history_;
  torch::nn::ModuleList gates_in{nullptr}, gates_hist{nullptr};
  torch::nn::ModuleList convs_a{nullptr}, convs_b{nullptr};
};
TORCH_MODULE(EnhancedCsff);

}  // namespace sdpsf
