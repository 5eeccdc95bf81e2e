#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <string>
#include <vector>

#include "sdpsf/blocks.hpp"
#include "sdpsf/cab.hpp"
#include "sdpsf/config.hpp"
#include "sdpsf/fusion.hpp"
#include "sdpsf/psf.hpp"

namespace sdpsf {

// Antialiased stride-2 downsampling: bilinear halving followed by a 1x1 conv
// that widens the channel count.
struct DownSampleImpl : torch::nn::Module {
  DownSampleImpl(int in_width, int out_width) {
    conv = register_module("conv",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_width, out_width, 1)));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    namespace F = torch::nn::functional;
    auto half = F::interpolate(x, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{0.5, 0.5})
                                      .mode(torch::kBilinear)
                                      .align_corners(false)
                                      .recompute_scale_factor(false));
    return conv(half);
  }
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(DownSample);

// Bilinear x2 upsampling followed by a 1x1 conv that narrows the channels.
struct UpSampleImpl : torch::nn::Module {
  UpSampleImpl(int in_width, int out_width) {
    conv = register_module("conv",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_width, out_width, 1)));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    namespace F = torch::nn::functional;
    auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                    .scale_factor(std::vector<double>{2.0, 2.0})
                                    .mode(torch::kBilinear)
                                    .align_corners(false)
                                    .recompute_scale_factor(false));
    return conv(up);
  }
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(UpSample);

// Three-scale UNet encoder, three CABs per level, with optional gated history
// injection of the previous stage's cross-stage features at each level.
struct StageEncoderImpl : torch::nn::Module {
  StageEncoderImpl(const ModelConfig& cfg, bool with_history)
      : widths_(cfg.encoder_widths()) {
    levels = register_module("levels", torch::nn::ModuleList());
    for (int w : widths_) {
      auto blocks = torch::nn::ModuleList();
      for (int i = 0; i < 3; ++i)
        blocks->push_back(ChannelAttentionBlock(w, 3, cfg.cab_reduction));
      levels->push_back(blocks);
    }
    down12 = register_module("down12", DownSample(widths_[0], widths_[1]));
    down23 = register_module("down23", DownSample(widths_[1], widths_[2]));
    if (with_history && cfg.use_h_updates) {
      gates = register_module("gates", torch::nn::ModuleList());
      for (int w : widths_) gates->push_back(GatedFuse(w));
    }
  }

  std::vector<torch::Tensor> forward(const torch::Tensor& x,
                                     const std::vector<torch::Tensor>& o_prev = {}) {
    std::vector<torch::Tensor> enc;
    auto cur = x;
    for (size_t s = 0; s < widths_.size(); ++s) {
      if (s == 1) cur = down12(enc[0]);
      if (s == 2) cur = down23(enc[1]);
      for (auto& blk : *levels[s]->as<torch::nn::ModuleListImpl>())
        cur = blk->as<ChannelAttentionBlockImpl>()->forward(cur);
      if (gates && !o_prev.empty())
        cur = gates[s]->as<GatedFuseImpl>()->forward(cur, o_prev[s]);
      enc.push_back(cur);
    }
    return enc;
  }

  void set_gate_bypass(bool value) {
    if (!gates) return;
    for (auto& g : *gates) g->as<GatedFuseImpl>()->bypass = value;
  }

  std::vector<int> widths_;
  torch::nn::ModuleList levels{nullptr}, gates{nullptr};
  DownSample down12{nullptr}, down23{nullptr};
};
TORCH_MODULE(StageEncoder);

// Three-scale UNet decoder with CAB-refined skip connections. Decoder blocks
// are PSF blocks conditioned on the shared stage PSF; without a PSF they fall
// back to plain CABs.
struct StageDecoderImpl : torch::nn::Module {
  StageDecoderImpl(const ModelConfig& cfg) : widths_(cfg.encoder_widths()) {
    bool use_psf = cfg.psf_enabled();
    int kc = cfg.effective_psf_channels();
    levels = register_module("levels", torch::nn::ModuleList());
    for (int w : widths_) {
      auto blocks = torch::nn::ModuleList();
      for (int i = 0; i < 2; ++i) {
        if (use_psf)
          blocks->push_back(PsfBlock(w, kc, 3, cfg.psf_embed));
        else
          blocks->push_back(ChannelAttentionBlock(w, 3, cfg.cab_reduction));
      }
      levels->push_back(blocks);
    }
    skip1 = register_module("skip1",
        ChannelAttentionBlock(widths_[0], 3, cfg.cab_reduction));
    skip2 = register_module("skip2",
        ChannelAttentionBlock(widths_[1], 3, cfg.cab_reduction));
    up21 = register_module("up21", UpSample(widths_[1], widths_[0]));
    up32 = register_module("up32", UpSample(widths_[2], widths_[1]));
  }

  torch::Tensor run_level(size_t s, torch::Tensor x, const torch::Tensor& psf) {
    for (auto& blk : *levels[s]->as<torch::nn::ModuleListImpl>()) {
      if (auto* pb = blk->as<PsfBlockImpl>())
        x = pb->forward(x, psf);
      else
        x = blk->as<ChannelAttentionBlockImpl>()->forward(x);
    }
    return x;
  }

  // enc = {finest, mid, coarsest}; returns decoder features per scale in the
  // same order.
  std::vector<torch::Tensor> forward(const std::vector<torch::Tensor>& enc,
                                     const torch::Tensor& psf = {}) {
    TORCH_CHECK(enc.size() == 3, "decoder expects three encoder scales");
    auto d3 = run_level(2, enc[2], psf);
    auto d2 = run_level(1, up32(d3) + skip2(enc[1]), psf);
    auto d1 = run_level(0, up21(d2) + skip1(enc[0]), psf);
    return {d1, d2, d3};
  }

  std::vector<int> widths_;
  torch::nn::ModuleList levels{nullptr};
  ChannelAttentionBlock skip1{nullptr}, skip2{nullptr};
  UpSample up21{nullptr}, up32{nullptr};
};
TORCH_MODULE(StageDecoder);

// One stage's outputs: the restored image, the feature map handed to the next
// stage's shallow extractor, the per-scale cross-stage features, and (when
// PSF prediction is on) the stage PSF for diagnostics.
struct StageOutput {
  torch::Tensor restored;
  torch::Tensor h;
  std::vector<torch::Tensor> o;
  torch::Tensor psf;
};

// Encoder-decoder stage: shallow features, UNet encoder, multi-scale PSF
// head, PSFB decoder, cross-stage fusion, and the supervised-attention exit.
struct EncDecStageImpl : torch::nn::Module {
  EncDecStageImpl(const ModelConfig& cfg, bool with_history)
      : with_history_(with_history) {
    auto widths = cfg.encoder_widths();
    shallow = register_module("shallow",
        ShallowFeatures(cfg.n_feat,
                        with_history && cfg.use_gate ? cfg.n_feat : 0, 3,
                        cfg.cab_reduction));
    encoder = register_module("encoder", StageEncoder(cfg, with_history));
    if (cfg.psf_enabled()) {
      std::vector<int> head_widths;
      head_scales_.clear();
      for (size_t i = 0; i < cfg.head_sizes.size(); ++i) {
        size_t scale = std::min(i, widths.size() - 1);
        head_scales_.push_back(scale);
        head_widths.push_back(widths[scale]);
      }
      psf_head = register_module("psf_head",
          MultiScalePsfHead(head_widths, cfg.head_sizes,
                            cfg.effective_psf_channels(), cfg.psf_kernel,
                            cfg.head_reduction));
    }
    decoder = register_module("decoder", StageDecoder(cfg));
    csff = register_module("csff",
        EnhancedCsff(widths, with_history && cfg.use_enhanced_csff));
    sam = register_module("sam", SupervisedAttention(cfg.n_feat));
  }

  StageOutput forward(const torch::Tensor& img,
                      const torch::Tensor& h_prev = {},
                      const std::vector<torch::Tensor>& o_prev = {}) {
    auto s = shallow(img, with_history_ ? h_prev : torch::Tensor{});
    auto enc = encoder(s, o_prev);
    torch::Tensor psf;
    if (psf_head) {
      std::vector<torch::Tensor> head_in;
      for (size_t scale : head_scales_) head_in.push_back(enc[scale]);
      psf = psf_head(head_in);
    }
    auto dec = decoder(enc, psf);
    auto o = csff(enc, dec, o_prev);
    auto [h, restored] = sam(dec[0], img);
    return {restored, h, std::move(o), psf};
  }

  bool with_history_;
  std::vector<size_t> head_scales_;
  ShallowFeatures shallow{nullptr};
  StageEncoder encoder{nullptr};
  MultiScalePsfHead psf_head{nullptr};
  StageDecoder decoder{nullptr};
  EnhancedCsff csff{nullptr};
  SupervisedAttention sam{nullptr};
};
TORCH_MODULE(EncDecStage);

// Final original-resolution stage: shallow features fused with the last
// stage's H, three ORBs fed with projected cross-stage side information, and
// a residual conv back to image space.
struct OrStageImpl : torch::nn::Module {
  OrStageImpl(const ModelConfig& cfg) {
    int width = cfg.ors_width();
    auto widths = cfg.encoder_widths();
    shallow = register_module("shallow",
        ShallowFeatures(width, cfg.use_gate ? cfg.n_feat : 0, 3,
                        cfg.cab_reduction));
    orbs = register_module("orbs", torch::nn::ModuleList());
    side_projs = register_module("side_projs", torch::nn::ModuleList());
    for (int s = 0; s < 3; ++s) {
      orbs->push_back(
          OriginalResolutionBlock(width, cfg.num_cab, 3, cfg.cab_reduction));
      side_projs->push_back(torch::nn::Conv2d(
          torch::nn::Conv2dOptions(widths[s], width, 1)));
    }
    tail = register_module("tail",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 3, 3).padding(1)));
  }

  torch::Tensor forward(const torch::Tensor& img, const torch::Tensor& h_mid,
                        const std::vector<torch::Tensor>& o_mid) {
    namespace F = torch::nn::functional;
    auto x = shallow(img, h_mid);
    for (size_t s = 0; s < orbs->size(); ++s) {
      torch::Tensor side;
      if (!side_disabled && s < o_mid.size()) {
        side = side_projs[s]->as<torch::nn::Conv2dImpl>()->forward(o_mid[s]);
        if (side.size(2) != img.size(2) || side.size(3) != img.size(3))
          side = F::interpolate(side,
                                F::InterpolateFuncOptions()
                                    .size(std::vector<int64_t>{img.size(2), img.size(3)})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
      }
      x = orbs[s]->as<OriginalResolutionBlockImpl>()->forward(x, side);
    }
    return img + tail(x);
  }

  bool side_disabled = false;
  ShallowFeatures shallow{nullptr};
  torch::nn::ModuleList orbs{nullptr}, side_projs{nullptr};
  torch::nn::Conv2d tail{nullptr};
};
TORCH_MODULE(OrStage);

// Full pipeline: Stage In, tau middle stages, ORStage. Returns the final
// restoration plus each stage's intermediate result for deep supervision.
struct SDPSFNetImpl : torch::nn::Module {
  explicit SDPSFNetImpl(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    stage_in = register_module("stage_in", EncDecStage(cfg_, false));
    mids = register_module("mids", torch::nn::ModuleList());
    for (int i = 0; i < cfg_.tau; ++i) mids->push_back(EncDecStage(cfg_, true));
    ors = register_module("ors", OrStage(cfg_));
    for (const auto& site : cfg_.disabled_pathways) apply_pathway_disable(site);
  }

  struct Result {
    torch::Tensor final;
    std::vector<torch::Tensor> intermediates;  // I_1 .. I_{tau+1}
    std::vector<StageOutput> stages;
  };

  Result forward_stages(const torch::Tensor& img) {
    TORCH_CHECK(img.dim() == 4 && img.size(1) == 3,
                "input must be [B, 3, H, W]");
    TORCH_CHECK(img.size(2) % 4 == 0 && img.size(3) % 4 == 0,
                "H and W must be divisible by 4; reflect-pad the input first");
    Result r;
    auto so = stage_in->forward(img);
    r.intermediates.push_back(so.restored);
    r.stages.push_back(so);
    for (auto& mid : *mids) {
      so = mid->as<EncDecStageImpl>()->forward(img, so.h, so.o);
      r.intermediates.push_back(so.restored);
      r.stages.push_back(so);
    }
    r.final = ors(img, so.h, so.o);
    return r;
  }

  std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(
      const torch::Tensor& img) {
    auto r = forward_stages(img);
    return {r.final, std::move(r.intermediates)};
  }

  // Zeroes the convs that produce image residuals so every supervised output
  // equals the input exactly. Useful as an identity-start initialization.
  void zero_restoration_tails() {
    torch::NoGradGuard ng;
    auto zero_conv = [](torch::nn::Conv2d& c) {
      c->weight.zero_();
      if (c->bias.defined()) c->bias.zero_();
    };
    zero_conv(stage_in->sam->conv2);
    for (auto& mid : *mids) zero_conv(mid->as<EncDecStageImpl>()->sam->conv2);
    zero_conv(ors->tail);
  }

  int64_t parameter_count() const {
    int64_t total = 0;
    for (const auto& p : parameters()) total += p.numel();
    return total;
  }

  void apply_pathway_disable(const std::string& site) {
    auto dot = site.find('.');
    if (dot == std::string::npos)
      throw std::invalid_argument("bad pathway site: " + site);
    auto where = site.substr(0, dot);
    auto what = site.substr(dot + 1);
    if (where == "ors") {
      if (what == "shallow") {
        if (ors->shallow->fuse) ors->shallow->fuse->bypass = true;
      } else if (what == "side") {
        ors->side_disabled = true;
      } else {
        throw std::invalid_argument("unknown ORStage pathway: " + site);
      }
      return;
    }
    if (where.rfind("stage", 0) != 0)
      throw std::invalid_argument("unknown pathway site: " + site);
    int idx = std::stoi(where.substr(5));
    if (idx < 0 || idx > cfg_.tau)
      throw std::invalid_argument("pathway stage out of range: " + site);
    EncDecStageImpl* stage = idx == 0 ? stage_in.get()
                                      : mids[idx - 1]->as<EncDecStageImpl>();
    if (what == "csff")
      stage->csff->set_bypass(true);
    else if (what == "shallow") {
      if (stage->shallow->fuse) stage->shallow->fuse->bypass = true;
    } else if (what == "encoder")
      stage->encoder->set_gate_bypass(true);
    else
      throw std::invalid_argument("unknown stage pathway: " + site);
  }

  ModelConfig cfg_;
  EncDecStage stage_in{nullptr};
  torch::nn::ModuleList mids{nullptr};
  OrStage ors{nullptr};
};
TORCH_MODULE(SDPSFNet);

// Total learnable scalar count of the assembled model.
inline int64_t count_parameters(const ModelConfig& cfg) {
  torch::NoGradGuard ng;
  SDPSFNet net(cfg);
  return net->parameter_count();
}

}  // namespace sdpsf
