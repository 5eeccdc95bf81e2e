#pragma once

#include <torch/torch.h>

#include <complex>
#include <functional>
#include <random>
#include <set>
#include <vector>

#include "sdpsf/config.hpp"

namespace sdpsf_test {

inline double rel_err(double a, double b, double floor = 1e-8) {
  double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

struct GradCheckOptions {
  double step = 1e-4;
  int64_t total_coords = -1;  // -1 = every coordinate of every leaf
  std::uint64_t seed = 0;
  double floor = 1e-8;  // coords where |analytic| and |fd| both fall below
                        // the floor count as matching
  // Central differences are only a derivative oracle where the function is
  // smooth at the probe scale. Coordinates whose FD estimates at h and h/2
  // disagree beyond this bound straddle a kink (relu/prelu) and are skipped;
  // at most max_skip_fraction of the probes may be discarded this way.
  double smoothness_tol = 1e-2;
  double max_skip_fraction = 0.2;
};

// Central finite-difference check of `scalar_fn` (which must rebuild the
// graph from the current leaf values every call) against autograd. Returns
// the max relative error over the sampled coordinates.
inline double max_grad_rel_err(const std::function<torch::Tensor()>& scalar_fn,
                               const std::vector<torch::Tensor>& leaves,
                               GradCheckOptions opt = {}) {
  for (const auto& leaf : leaves) {
    TORCH_CHECK(leaf.is_contiguous(), "gradcheck leaves must be contiguous");
    TORCH_CHECK(leaf.dtype() == torch::kFloat64,
                "gradcheck requires double precision");
    TORCH_CHECK(leaf.requires_grad(), "gradcheck leaves must require grad");
    if (leaf.grad().defined()) leaf.mutable_grad().reset();
  }
  auto scalar = scalar_fn();
  scalar.backward();

  // collect coordinates: (leaf index, flat offset)
  std::vector<std::pair<size_t, int64_t>> coords;
  int64_t total = 0;
  for (const auto& leaf : leaves) total += leaf.numel();
  if (opt.total_coords < 0 || opt.total_coords >= total) {
    for (size_t li = 0; li < leaves.size(); ++li)
      for (int64_t i = 0; i < leaves[li].numel(); ++i) coords.emplace_back(li, i);
  } else {
    std::mt19937_64 rng(opt.seed);
    std::uniform_int_distribution<int64_t> pick(0, total - 1);
    std::set<int64_t> chosen;
    while (static_cast<int64_t>(chosen.size()) < opt.total_coords)
      chosen.insert(pick(rng));
    for (auto flat : chosen) {
      size_t li = 0;
      while (flat >= leaves[li].numel()) flat -= leaves[li++].numel();
      coords.emplace_back(li, flat);
    }
  }

  double worst = 0.0;
  int64_t skipped = 0;
  torch::NoGradGuard ng;
  for (auto [li, i] : coords) {
    auto& leaf = const_cast<torch::Tensor&>(leaves[li]);
    double* data = leaf.data_ptr<double>();
    double original = data[i];
    auto probe = [&](double h) {
      data[i] = original + h;
      double plus = scalar_fn().item<double>();
      data[i] = original - h;
      double minus = scalar_fn().item<double>();
      data[i] = original;
      return (plus - minus) / (2.0 * h);
    };
    double fd_h = probe(opt.step);
    double fd_h2 = probe(opt.step / 2.0);
    double analytic = 0.0;
    if (leaf.grad().defined())
      analytic = leaf.grad().view(-1)[i].item<double>();
    if (std::abs(fd_h2) < opt.floor && std::abs(analytic) < opt.floor) continue;
    if (rel_err(fd_h, fd_h2, opt.floor) > opt.smoothness_tol) {
      ++skipped;  // kink inside the probe interval; FD is not an oracle here
      continue;
    }
    worst = std::max(worst, rel_err(analytic, fd_h2, opt.floor));
  }
  TORCH_CHECK(skipped <= opt.max_skip_fraction * coords.size(),
              "too many non-smooth probe points (", skipped, " of ",
              coords.size(), ")");
  return worst;
}

// Independent per-pixel spatially varying convolution oracle: assembles the
// local kernel K(x,y) = sum_j w_j(x,y) k_j at every pixel and applies it with
// reflect-101 indexing, all in plain loops.
inline torch::Tensor degrade_bruteforce(const torch::Tensor& image,
                                        const torch::Tensor& kernels,
                                        const torch::Tensor& weights) {
  auto img = image.to(torch::kFloat64).contiguous();
  auto kern = kernels.to(torch::kFloat64).contiguous();
  auto w = weights.to(torch::kFloat64).contiguous();
  int64_t B = img.size(0), C = img.size(1), H = img.size(2), W = img.size(3);
  int64_t Kc = kern.size(0), K = kern.size(1);
  int64_t pad = K / 2;
  auto reflect = [](int64_t i, int64_t n) {
    if (n == 1) return static_cast<int64_t>(0);
    while (i < 0 || i >= n) {
      if (i < 0) i = -i;
      if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
  };
  auto out = torch::zeros_like(img);
  auto ia = img.accessor<double, 4>();
  auto ka = kern.accessor<double, 3>();
  auto wa = w.accessor<double, 4>();
  auto oa = out.accessor<double, 4>();
  std::vector<double> local(K * K);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        for (int64_t u = 0; u < K; ++u)
          for (int64_t v = 0; v < K; ++v) {
            double acc = 0.0;
            for (int64_t j = 0; j < Kc; ++j)
              acc += wa[b][j][y][x] * ka[j][u][v];
            local[u * K + v] = acc;
          }
        for (int64_t c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int64_t u = 0; u < K; ++u)
            for (int64_t v = 0; v < K; ++v)
              acc += local[u * K + v] * ia[b][c][reflect(y + u - pad, H)]
                                          [reflect(x + v - pad, W)];
          oa[b][c][y][x] = acc;
        }
      }
  return out;
}

// O(N^4) discrete Fourier transform magnitudes of a 2-D array.
inline torch::Tensor dft2_magnitude_bruteforce(const torch::Tensor& img2d) {
  auto img = img2d.to(torch::kFloat64).contiguous();
  int64_t H = img.size(0), W = img.size(1);
  auto ia = img.accessor<double, 2>();
  auto out = torch::zeros({H, W}, torch::kFloat64);
  auto oa = out.accessor<double, 2>();
  for (int64_t ky = 0; ky < H; ++ky)
    for (int64_t kx = 0; kx < W; ++kx) {
      std::complex<double> acc(0.0, 0.0);
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          double phase = -2.0 * M_PI *
                         (static_cast<double>(ky * y) / H +
                          static_cast<double>(kx * x) / W);
          acc += ia[y][x] * std::complex<double>(std::cos(phase), std::sin(phase));
        }
      oa[ky][kx] = std::abs(acc);
    }
  return out;
}

// Small architecture for gradient checks and fast end-to-end runs.
inline sdpsf::ModelConfig tiny_model_config(int tau = 1, int psf_channels = 2) {
  sdpsf::ModelConfig cfg;
  cfg.tau = tau;
  cfg.psf_channels = psf_channels;
  cfg.psf_kernel = 5;
  cfg.n_feat = 8;
  cfg.scale_unet = 4;
  cfg.scale_ors = 4;
  cfg.num_cab = 2;
  cfg.head_sizes = {3, 5};
  cfg.psf_embed = 16;
  return cfg;
}

// Forces a sigmoid-gated conv to saturate: zero weights, huge bias.
inline void saturate_gate(torch::nn::Conv2d& conv, double bias_value) {
  torch::NoGradGuard ng;
  conv->weight.zero_();
  conv->bias.fill_(bias_value);
}

}  // namespace sdpsf_test
