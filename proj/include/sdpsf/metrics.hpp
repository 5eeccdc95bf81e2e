#pragma once

#include <torch/torch.h>

#include <cmath>
#include <iostream>
#include <ostream>
#include <string>
#include <vector>

namespace sdpsf {

constexpr double kPsnrCap = 100.0;  // sentinel for identical images

enum class PsnrMode { Y, RGB };

// ITU-R BT.601 luma from an RGB tensor [..., 3, H, W].
inline torch::Tensor rgb_to_luma(const torch::Tensor& rgb) {
  TORCH_CHECK(rgb.size(-3) == 3, "expected an RGB tensor");
  auto r = rgb.select(-3, 0), g = rgb.select(-3, 1), b = rgb.select(-3, 2);
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

namespace detail {
inline torch::Tensor check_range_and_clamp(const torch::Tensor& img,
                                           const char* what) {
  auto lo = img.min().item<double>();
  auto hi = img.max().item<double>();
  if (lo < -1e-6 || hi > 1.0 + 1e-6) {
    std::cerr << "warning: " << what << " values outside [0,1] (min " << lo
              << ", max " << hi << "); clamping\n";
    return img.clamp(0.0, 1.0);
  }
  return img;
}
}  // namespace detail

// PSNR in dB against a unit data range. Identical images report the 100 dB
// sentinel; every value is capped there.
inline double psnr(const torch::Tensor& pred, const torch::Tensor& target,
                   PsnrMode mode = PsnrMode::RGB, double data_range = 1.0) {
  TORCH_CHECK(pred.sizes() == target.sizes(), "psnr: shape mismatch");
  auto p = detail::check_range_and_clamp(pred, "psnr pred");
  auto t = detail::check_range_and_clamp(target, "psnr target");
  if (mode == PsnrMode::Y) {
    p = rgb_to_luma(p);
    t = rgb_to_luma(t);
  }
  double mse = (p - t).pow(2).mean().item<double>();
  if (mse <= 0.0) return kPsnrCap;
  double value = 10.0 * std::log10(data_range * data_range / mse);
  return std::min(value, kPsnrCap);
}

// Gaussian-windowed SSIM (11x11, sigma 1.5), averaged over channels and the
// valid spatial region. Windows shrink (with a warning) for tiny images.
inline double ssim(const torch::Tensor& pred, const torch::Tensor& target) {
  TORCH_CHECK(pred.sizes() == target.sizes(), "ssim: shape mismatch");
  TORCH_CHECK(pred.dim() == 4, "ssim expects [B, C, H, W]");
  auto p = detail::check_range_and_clamp(pred, "ssim pred");
  auto t = detail::check_range_and_clamp(target, "ssim target");
  namespace F = torch::nn::functional;

  int64_t h = p.size(2), w = p.size(3), c = p.size(1);
  int64_t win = std::min<int64_t>(11, std::min(h, w));
  if (win % 2 == 0) win -= 1;
  if (win < 11)
    std::cerr << "warning: image smaller than the 11x11 SSIM window; using "
              << win << "x" << win << "\n";
  TORCH_CHECK(win >= 1, "ssim: empty image");

  auto opts = torch::TensorOptions().dtype(p.dtype()).device(p.device());
  auto coords = torch::arange(win, opts) - (win - 1) / 2.0;
  auto g = torch::exp(-coords.pow(2) / (2.0 * 1.5 * 1.5));
  g = g / g.sum();
  auto window = torch::outer(g, g).view({1, 1, win, win}).expand({c, 1, win, win});

  auto filt = [&](const torch::Tensor& x) {
    return F::conv2d(x, window, F::Conv2dFuncOptions().groups(c));
  };
  auto mu_p = filt(p), mu_t = filt(t);
  auto sigma_p = filt(p * p) - mu_p * mu_p;
  auto sigma_t = filt(t * t) - mu_t * mu_t;
  auto sigma_pt = filt(p * t) - mu_p * mu_t;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto num = (2.0 * mu_p * mu_t + c1) * (2.0 * sigma_pt + c2);
  auto den = (mu_p * mu_p + mu_t * mu_t + c1) * (sigma_p + sigma_t + c2);
  return (num / den).mean().item<double>();
}

struct MetricsRow {
  std::string id;
  double psnr_y = 0.0;
  double psnr_rgb = 0.0;
  double ssim_rgb = 0.0;
};

struct MetricsReport {
  std::vector<MetricsRow> rows;

  MetricsRow means() const {
    MetricsRow m{"mean", 0.0, 0.0, 0.0};
    if (rows.empty()) return m;
    for (const auto& r : rows) {
      m.psnr_y += r.psnr_y;
      m.psnr_rgb += r.psnr_rgb;
      m.ssim_rgb += r.ssim_rgb;
    }
    auto n = static_cast<double>(rows.size());
    m.psnr_y /= n;
    m.psnr_rgb /= n;
    m.ssim_rgb /= n;
    return m;
  }

  void write_csv(std::ostream& os) const {
    os << "image_id,psnr_y,psnr_rgb,ssim_rgb\n";
    auto emit = [&](const MetricsRow& r) {
      os << r.id << "," << r.psnr_y << "," << r.psnr_rgb << "," << r.ssim_rgb
         << "\n";
    };
    for (const auto& r : rows) emit(r);
    emit(means());
  }
};

}  // namespace sdpsf
