#pragma once

#include <torch/torch.h>

#include <vector>

namespace sdpsf {

struct LossWeights {
  double alpha_edge = 0.05;
  double alpha_freq = 0.01;
  double charbonnier_eps = 1e-3;
};

inline torch::Tensor charbonnier(const torch::Tensor& pred,
                                 const torch::Tensor& target, double eps = 1e-3) {
  TORCH_CHECK(pred.sizes() == target.sizes(),
              "charbonnier: shape mismatch");
  auto diff = pred - target;
  return torch::sqrt(diff * diff + eps * eps).mean();
}

// 3x3 Laplacian per channel with reflection padding.
inline torch::Tensor laplacian(const torch::Tensor& x) {
  TORCH_CHECK(x.dim() == 4, "laplacian expects [B, C, H, W]");
  namespace F = torch::nn::functional;
  auto channels = x.size(1);
  auto kernel = torch::tensor({{0.0, 1.0, 0.0}, {1.0, -4.0, 1.0}, {0.0, 1.0, 0.0}},
                              torch::TensorOptions().dtype(x.dtype()).device(x.device()))
                    .view({1, 1, 3, 3})
                    .expand({channels, 1, 3, 3});
  auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReflect));
  return F::conv2d(padded, kernel, F::Conv2dFuncOptions().groups(channels));
}

inline torch::Tensor edge_loss(const torch::Tensor& pred,
                               const torch::Tensor& target, double eps = 1e-3) {
  TORCH_CHECK(pred.sizes() == target.sizes(), "edge_loss: shape mismatch");
  return charbonnier(laplacian(pred), laplacian(target), eps);
}

// L1 distance between 2-D DFT magnitudes, averaged over every bin. Magnitude
// spectra are invariant under circular shifts, so the loss compares energy
// distribution rather than phase.
inline torch::Tensor freq_loss(const torch::Tensor& pred,
                               const torch::Tensor& target) {
  TORCH_CHECK(pred.sizes() == target.sizes(), "freq_loss: shape mismatch");
  auto mag_p = torch::abs(torch::fft::fft2(pred));
  auto mag_t = torch::abs(torch::fft::fft2(target));
  return torch::abs(mag_p - mag_t).mean();
}

struct LossBreakdown {
  torch::Tensor total;
  torch::Tensor char_sum, edge_sum, freq_sum;
  int64_t supervised_outputs = 0;
};

// Deep-supervision hybrid loss: every supervised restoration contributes
// charbonnier + alpha_edge * edge + alpha_freq * freq against the target.
// `include_final` controls whether the ORStage output joins the sum.
inline LossBreakdown total_loss(const std::vector<torch::Tensor>& intermediates,
                                const torch::Tensor& final,
                                const torch::Tensor& target,
                                const LossWeights& w = {},
                                bool include_final = true) {
  std::vector<torch::Tensor> outputs = intermediates;
  if (include_final) outputs.push_back(final);
  TORCH_CHECK(!outputs.empty(), "total_loss: no supervised outputs");
  LossBreakdown b;
  b.supervised_outputs = static_cast<int64_t>(outputs.size());
  auto opts = torch::TensorOptions().dtype(target.dtype()).device(target.device());
  b.char_sum = torch::zeros({}, opts);
  b.edge_sum = torch::zeros({}, opts);
  b.freq_sum = torch::zeros({}, opts);
  for (const auto& out : outputs) {
    TORCH_CHECK(out.sizes() == target.sizes(),
                "total_loss: output/target shape mismatch");
    b.char_sum = b.char_sum + charbonnier(out, target, w.charbonnier_eps);
    b.edge_sum = b.edge_sum + edge_loss(out, target, w.charbonnier_eps);
    b.freq_sum = b.freq_sum + freq_loss(out, target);
  }
  b.total = b.char_sum + w.alpha_edge * b.edge_sum + w.alpha_freq * b.freq_sum;
  return b;
}

}  // namespace sdpsf
