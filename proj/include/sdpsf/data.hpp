#pragma once

#include <torch/torch.h>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdpsf {

inline constexpr std::array<double, 3> kImagenetMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImagenetStd = {0.229, 0.224, 0.225};

// 8-bit RGB image pair sharing an id (the filename stem).
struct ImagePair {
  cv::Mat rainy;  // CV_8UC3, RGB order
  cv::Mat clean;
  std::string id;
};

// [1, 3, H, W] in [0, 1] from an 8-bit RGB mat.
inline torch::Tensor to_tensor(const cv::Mat& rgb8,
                               torch::Dtype dtype = torch::kFloat32) {
  TORCH_CHECK(rgb8.type() == CV_8UC3, "expected an 8-bit RGB image");
  auto t = torch::from_blob(const_cast<uint8_t*>(rgb8.ptr<uint8_t>()),
                            {rgb8.rows, rgb8.cols, 3}, torch::kUInt8)
               .clone()
               .permute({2, 0, 1})
               .unsqueeze(0)
               .to(dtype) /
           255.0;
  return t;
}

// 8-bit RGB mat from a [*, 3, H, W] tensor in [0, 1].
inline cv::Mat to_mat8(torch::Tensor t01) {
  if (t01.dim() == 4) t01 = t01.squeeze(0);
  TORCH_CHECK(t01.dim() == 3 && t01.size(0) == 3, "expected [3, H, W]");
  auto bytes = (t01.clamp(0, 1) * 255.0)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  cv::Mat rgb(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)),
              CV_8UC3);
  std::memcpy(rgb.data, bytes.data_ptr<uint8_t>(), bytes.numel());
  return rgb;
}

inline cv::Mat read_rgb8(const std::filesystem::path& path) {
  auto bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) return {};
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return rgb;
}

inline void write_rgb8(const std::filesystem::path& path, const cv::Mat& rgb) {
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr))
    throw std::runtime_error("failed to write image: " + path.string());
}

inline torch::Tensor normalize_imagenet(const torch::Tensor& t01) {
  auto opts = torch::TensorOptions().dtype(t01.dtype()).device(t01.device());
  auto mean = torch::tensor({kImagenetMean[0], kImagenetMean[1], kImagenetMean[2]},
                            opts)
                  .view({1, 3, 1, 1});
  auto stdv = torch::tensor({kImagenetStd[0], kImagenetStd[1], kImagenetStd[2]},
                            opts)
                  .view({1, 3, 1, 1});
  return (t01 - mean) / stdv;
}

inline torch::Tensor denormalize_imagenet(const torch::Tensor& t) {
  auto opts = torch::TensorOptions().dtype(t.dtype()).device(t.device());
  auto mean = torch::tensor({kImagenetMean[0], kImagenetMean[1], kImagenetMean[2]},
                            opts)
                  .view({1, 3, 1, 1});
  auto stdv = torch::tensor({kImagenetStd[0], kImagenetStd[1], kImagenetStd[2]},
                            opts)
                  .view({1, 3, 1, 1});
  return t * stdv + mean;
}

// Reflection padding on the right/bottom that tolerates pads larger than the
// image (iterated reflection; width-1 axes replicate).
inline torch::Tensor reflect_pad_rb(torch::Tensor x, int64_t right,
                                    int64_t bottom) {
  namespace F = torch::nn::functional;
  while (right > 0) {
    auto w = x.size(3);
    if (w == 1) {
      x = F::pad(x, F::PadFuncOptions({0, right, 0, 0}).mode(torch::kReplicate));
      right = 0;
    } else {
      auto step = std::min<int64_t>(right, w - 1);
      x = F::pad(x, F::PadFuncOptions({0, step, 0, 0}).mode(torch::kReflect));
      right -= step;
    }
  }
  while (bottom > 0) {
    auto h = x.size(2);
    if (h == 1) {
      x = F::pad(x, F::PadFuncOptions({0, 0, 0, bottom}).mode(torch::kReplicate));
      bottom = 0;
    } else {
      auto step = std::min<int64_t>(bottom, h - 1);
      x = F::pad(x, F::PadFuncOptions({0, 0, 0, step}).mode(torch::kReflect));
      bottom -= step;
    }
  }
  return x;
}

struct CropBox {
  int64_t height = 0, width = 0;
  torch::Tensor apply(const torch::Tensor& t) const {
    return t.slice(2, 0, height).slice(3, 0, width);
  }
};

// Pads right/bottom by reflection to the next multiple; the returned crop box
// restores the original frame after inference.
inline std::pair<torch::Tensor, CropBox> reflect_pad_for_inference(
    const torch::Tensor& image, int64_t multiple = 4) {
  TORCH_CHECK(image.dim() == 4, "expected [B, C, H, W]");
  auto h = image.size(2), w = image.size(3);
  auto ph = (multiple - h % multiple) % multiple;
  auto pw = (multiple - w % multiple) % multiple;
  return {reflect_pad_rb(image, pw, ph), CropBox{h, w}};
}

// ---- paired dataset -------------------------------------------------------

struct PairRecord {
  std::string id;
  std::filesystem::path rainy, clean;
  int width = 0, height = 0;
};

// Paired rainy/clean dataset rooted at <root>/input and <root>/gt with
// matching filename stems. An optional <root>/manifest.txt (one stem per
// line) restricts the pair list.
class PairDataset {
 public:
  static PairDataset load(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    auto input_dir = root / "input";
    auto gt_dir = root / "gt";
    if (!fs::is_directory(input_dir) || !fs::is_directory(gt_dir))
      throw std::runtime_error("dataset root must contain input/ and gt/: " +
                               root.string());

    auto list_stems = [](const fs::path& dir) {
      std::map<std::string, fs::path> stems;
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
        stems[entry.path().stem().string()] = entry.path();
      }
      return stems;
    };
    auto inputs = list_stems(input_dir);
    auto gts = list_stems(gt_dir);

    std::vector<std::string> wanted;
    auto manifest = root / "manifest.txt";
    if (fs::exists(manifest)) {
      std::ifstream in(manifest);
      std::string line;
      while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
          line.pop_back();
        if (!line.empty()) wanted.push_back(line);
      }
    } else {
      for (const auto& [stem, _] : inputs) wanted.push_back(stem);
      for (const auto& [stem, _] : gts)
        if (!inputs.count(stem)) wanted.push_back(stem);
      std::sort(wanted.begin(), wanted.end());
    }

    PairDataset ds;
    for (const auto& stem : wanted) {
      auto it_in = inputs.find(stem);
      auto it_gt = gts.find(stem);
      if (it_in == inputs.end() || it_gt == gts.end()) {
        std::cerr << "warning: skipping '" << stem
                  << "': present in only one of input/ and gt/\n";
        ++ds.skipped_;
        continue;
      }
      auto rainy = read_rgb8(it_in->second);
      auto clean = read_rgb8(it_gt->second);
      if (rainy.empty() || clean.empty()) {
        std::cerr << "warning: skipping '" << stem << "': unreadable image\n";
        ++ds.skipped_;
        continue;
      }
      if (rainy.size() != clean.size()) {
        std::cerr << "warning: skipping '" << stem
                  << "': rainy/clean dimensions differ\n";
        ++ds.skipped_;
        continue;
      }
      ds.records_.push_back(
          {stem, it_in->second, it_gt->second, rainy.cols, rainy.rows});
    }
    if (ds.records_.empty())
      throw std::runtime_error("no usable pairs under " + root.string());
    std::cerr << "loaded " << ds.records_.size() << " pairs ("
              << ds.skipped_ << " skipped)\n";
    return ds;
  }

  size_t size() const { return records_.size(); }
  const std::vector<PairRecord>& records() const { return records_; }
  int skipped() const { return skipped_; }

  ImagePair get(size_t index) const {
    const auto& rec = records_.at(index);
    auto rainy = read_rgb8(rec.rainy);
    auto clean = read_rgb8(rec.clean);
    if (rainy.empty() || clean.empty())
      throw std::runtime_error("failed to re-read pair " + rec.id);
    return {std::move(rainy), std::move(clean), rec.id};
  }

 private:
  std::vector<PairRecord> records_;
  int skipped_ = 0;
};

// ---- training patches -----------------------------------------------------

struct AugDraw {
  int64_t x0 = 0, y0 = 0;
  bool hflip = false, vflip = false;
  int rot90 = 0;  // quarter turns
};

inline AugDraw sample_aug(std::mt19937_64& rng, int64_t height, int64_t width,
                          int64_t patch) {
  AugDraw d;
  auto span_y = std::max<int64_t>(0, height - patch);
  auto span_x = std::max<int64_t>(0, width - patch);
  d.y0 = span_y ? std::uniform_int_distribution<int64_t>(0, span_y)(rng) : 0;
  d.x0 = span_x ? std::uniform_int_distribution<int64_t>(0, span_x)(rng) : 0;
  d.hflip = std::uniform_int_distribution<int>(0, 1)(rng) != 0;
  d.vflip = std::uniform_int_distribution<int>(0, 1)(rng) != 0;
  d.rot90 = std::uniform_int_distribution<int>(0, 3)(rng);
  return d;
}

inline torch::Tensor apply_aug(const torch::Tensor& img01, const AugDraw& d,
                               int64_t patch) {
  auto t = img01;
  if (t.size(2) < patch || t.size(3) < patch)
    t = reflect_pad_rb(t, std::max<int64_t>(0, patch - t.size(3)),
                       std::max<int64_t>(0, patch - t.size(2)));
  t = t.slice(2, d.y0, d.y0 + patch).slice(3, d.x0, d.x0 + patch);
  if (d.hflip) t = t.flip(3);
  if (d.vflip) t = t.flip(2);
  if (d.rot90) t = torch::rot90(t, d.rot90, {2, 3});
  return t.contiguous();
}

struct PatchSample {
  torch::Tensor x, y;  // [1, 3, P, P], ImageNet-normalized
};

// Identical crop and geometric augmentation on both halves of the pair,
// scaled to [0, 1] and ImageNet-normalized.
inline PatchSample make_training_patch(const ImagePair& pair,
                                       std::mt19937_64& rng, int64_t patch = 128,
                                       torch::Dtype dtype = torch::kFloat32) {
  auto rainy = to_tensor(pair.rainy, dtype);
  auto clean = to_tensor(pair.clean, dtype);
  auto h = std::max<int64_t>(rainy.size(2), patch);
  auto w = std::max<int64_t>(rainy.size(3), patch);
  auto draw = sample_aug(rng, h, w, patch);
  return {normalize_imagenet(apply_aug(rainy, draw, patch)),
          normalize_imagenet(apply_aug(clean, draw, patch))};
}

// Deterministic per-sample stream: mixes (seed, epoch, index) into one RNG.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t epoch,
                                  std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (epoch + 1) +
                    0xbf58476d1ce4e5b9ULL * (index + 1);
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return std::mt19937_64(z);
}

}  // namespace sdpsf
