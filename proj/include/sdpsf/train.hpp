#pragma once

#include <torch/torch.h>

#include <ATen/autocast_mode.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdpsf/config.hpp"
#include "sdpsf/data.hpp"
#include "sdpsf/losses.hpp"
#include "sdpsf/metrics.hpp"
#include "sdpsf/network.hpp"

namespace sdpsf {

// Linear warmup from 0 to lr_init over the warmup epochs, then cosine
// annealing down to lr_final over the remaining steps.
inline double lr_schedule(int64_t step, int64_t steps_per_epoch,
                          const TrainConfig& cfg) {
  auto warm = static_cast<int64_t>(cfg.warmup_epochs) * steps_per_epoch;
  auto total = static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
  if (step >= total) return cfg.lr_final;
  if (warm > 0 && step < warm)
    return cfg.lr_init * static_cast<double>(step) / static_cast<double>(warm);
  if (step == warm) return cfg.lr_init;
  double t = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return cfg.lr_final +
         0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + std::cos(M_PI * t));
}

inline torch::Device select_device() {
  const char* env = std::getenv("SDPSF_DEVICE");
  if (env && *env) return torch::Device(env);
  return torch::Device(torch::kCPU);
}

// ---- checkpointing --------------------------------------------------------

// A checkpoint is a directory holding model.pt (parameters), optim.pt
// (optimizer state) and meta.json (config snapshot + epoch counter).
inline void save_checkpoint(const std::filesystem::path& dir, SDPSFNet& model,
                            torch::optim::AdamW* optimizer,
                            const TrainConfig& cfg, int epoch) {
  std::filesystem::create_directories(dir);
  torch::save(model, (dir / "model.pt").string());
  if (optimizer) torch::save(*optimizer, (dir / "optim.pt").string());
  nlohmann::json meta;
  meta["format"] = 1;
  meta["epoch"] = epoch;
  meta["config"] = serialize_train_config(cfg);
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
}

struct Checkpoint {
  TrainConfig cfg;
  SDPSFNet model{nullptr};
  int epoch = 0;
  std::filesystem::path dir;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw std::runtime_error("not a checkpoint (missing meta.json): " +
                                    dir.string());
  nlohmann::json meta = nlohmann::json::parse(in);
  Checkpoint ck;
  std::istringstream cfg_text(meta.at("config").get<std::string>());
  ck.cfg = parse_train_config(cfg_text);
  ck.epoch = meta.at("epoch").get<int>();
  ck.dir = dir;
  ck.model = SDPSFNet(ck.cfg.model);
  torch::load(ck.model, (dir / "model.pt").string());
  return ck;
}

// ---- training -------------------------------------------------------------

// Halts on a non-finite loss after writing a diagnostic snapshot next to the
// checkpoints.
inline void halt_on_nonfinite(double loss_value, const nlohmann::json& snapshot,
                              const std::filesystem::path& out_dir) {
  if (std::isfinite(loss_value)) return;
  std::filesystem::create_directories(out_dir);
  auto path = out_dir / "diagnostic_snapshot.json";
  std::ofstream(path) << snapshot.dump(2) << "\n";
  throw std::runtime_error("non-finite training loss; snapshot written to " +
                           path.string());
}

namespace detail {

struct AutocastGuard {
  AutocastGuard(bool enable, torch::DeviceType dev) : enabled_(enable), dev_(dev) {
    if (enabled_) at::autocast::set_autocast_enabled(dev_, true);
  }
  ~AutocastGuard() {
    if (enabled_) {
      at::autocast::clear_cache();
      at::autocast::set_autocast_enabled(dev_, false);
    }
  }
  bool enabled_;
  torch::DeviceType dev_;
};

}  // namespace detail

struct TrainResult {
  std::filesystem::path checkpoint_dir;
  std::vector<double> loss_history;  // one entry per optimization step
  std::vector<double> val_psnr_y;
};

// Runs the optimization recipe: per-step warmup+cosine learning rate, AdamW
// with decoupled weight decay, global-norm gradient clipping, deep
// supervision over every stage output. `max_steps` (when > 0) caps the run
// regardless of the epoch budget.
inline TrainResult train(const TrainConfig& cfg, const PairDataset& data,
                         const std::filesystem::path& out_dir,
                         const std::filesystem::path& resume = {},
                         std::ostream& log = std::cout, int64_t max_steps = -1) {
  cfg.validate();
  torch::manual_seed(cfg.seed);
  auto device = select_device();

  SDPSFNet model(cfg.model);
  int start_epoch = 0;
  if (!resume.empty()) {
    auto ck = load_checkpoint(resume);
    model = ck.model;
    start_epoch = ck.epoch;
    log << "resumed from " << resume << " at epoch " << start_epoch << "\n";
  }
  model->to(device);
  torch::optim::AdamW optimizer(
      model->parameters(),
      torch::optim::AdamWOptions(cfg.lr_init).weight_decay(cfg.weight_decay));
  if (!resume.empty()) {
    auto optim_path = resume / "optim.pt";
    if (std::filesystem::exists(optim_path))
      torch::load(optimizer, optim_path.string());
  }

  LossWeights lw{cfg.alpha_edge, cfg.alpha_freq, cfg.charbonnier_eps};
  auto n = static_cast<int64_t>(data.size());
  auto steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  bool mixed = cfg.precision == "mixed";

  TrainResult result;
  result.checkpoint_dir = out_dir;
  int64_t global_step = static_cast<int64_t>(start_epoch) * steps_per_epoch;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    model->train();
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<torch::Tensor> xs, ys;
      for (int64_t k = b * cfg.batch_size;
           k < std::min<int64_t>(n, (b + 1) * cfg.batch_size); ++k) {
        auto rng = sample_rng(cfg.seed, epoch, k);
        auto sample =
            make_training_patch(data.get(order[k]), rng, cfg.patch_size);
        xs.push_back(sample.x);
        ys.push_back(sample.y);
      }
      auto x = torch::cat(xs, 0).to(device);
      auto y = torch::cat(ys, 0).to(device);

      double lr = lr_schedule(global_step, steps_per_epoch, cfg);
      for (auto& group : optimizer.param_groups())
        static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);

      optimizer.zero_grad();
      torch::Tensor total;
      LossBreakdown breakdown;
      {
        detail::AutocastGuard guard(mixed, device.type());
        auto [final, intermediates] = model->forward(x);
        breakdown = total_loss(intermediates, final, y, lw,
                               cfg.model.supervise_final);
        total = breakdown.total;
      }
      double loss_value = total.item<double>();
      halt_on_nonfinite(loss_value,
                        {{"epoch", epoch},
                         {"step", global_step},
                         {"lr", lr},
                         {"loss", loss_value},
                         {"char", breakdown.char_sum.item<double>()},
                         {"edge", breakdown.edge_sum.item<double>()},
                         {"freq", breakdown.freq_sum.item<double>()}},
                        out_dir);
      total.backward();
      torch::nn::utils::clip_grad_norm_(model->parameters(), cfg.clip_norm);
      optimizer.step();
      result.loss_history.push_back(loss_value);
      ++global_step;
      if (max_steps > 0 && global_step >= max_steps) break;
    }

    if ((epoch + 1) % std::max(1, cfg.ckpt_interval) == 0 ||
        epoch + 1 == cfg.epochs)
      save_checkpoint(out_dir, model, &optimizer, cfg, epoch + 1);

    if (cfg.val_interval > 0 && (epoch + 1) % cfg.val_interval == 0) {
      model->eval();
      torch::NoGradGuard ng;
      double acc = 0.0;
      auto count = std::min<size_t>(data.size(), 8);
      for (size_t i = 0; i < count; ++i) {
        auto pair = data.get(i);
        auto x01 = to_tensor(pair.rainy);
        auto clean01 = to_tensor(pair.clean);
        auto [padded, box] = reflect_pad_for_inference(normalize_imagenet(x01));
        auto out = model->forward(padded.to(device)).first.to(torch::kCPU);
        auto pred01 = denormalize_imagenet(box.apply(out)).clamp(0, 1);
        acc += psnr(pred01, clean01, PsnrMode::Y);
      }
      result.val_psnr_y.push_back(acc / static_cast<double>(count));
      log << "epoch " << epoch + 1 << " val psnr_y "
          << result.val_psnr_y.back() << "\n";
    }
    if (max_steps > 0 && global_step >= max_steps) break;
  }

  save_checkpoint(out_dir, model, &optimizer, cfg, cfg.epochs);
  return result;
}

// ---- evaluation -----------------------------------------------------------

inline MetricsReport evaluate(SDPSFNet& model, const PairDataset& data,
                              std::ostream* log = nullptr) {
  TORCH_CHECK(data.size() > 0, "evaluate: empty dataset");
  auto device = select_device();
  model->to(device);
  model->eval();
  torch::NoGradGuard ng;
  MetricsReport report;
  for (size_t i = 0; i < data.size(); ++i) {
    auto pair = data.get(i);
    auto rainy01 = to_tensor(pair.rainy);
    auto clean01 = to_tensor(pair.clean);
    auto [padded, box] = reflect_pad_for_inference(normalize_imagenet(rainy01));
    auto out = model->forward(padded.to(device)).first.to(torch::kCPU);
    auto pred01 = denormalize_imagenet(box.apply(out)).clamp(0, 1);
    MetricsRow row;
    row.id = pair.id;
    row.psnr_y = psnr(pred01, clean01, PsnrMode::Y);
    row.psnr_rgb = psnr(pred01, clean01, PsnrMode::RGB);
    row.ssim_rgb = ssim(pred01, clean01);
    report.rows.push_back(row);
    if (log)
      *log << row.id << " psnr_y " << row.psnr_y << " psnr_rgb " << row.psnr_rgb
           << " ssim " << row.ssim_rgb << "\n";
  }
  if (log) {
    auto m = report.means();
    *log << "mean psnr_y " << m.psnr_y << " psnr_rgb " << m.psnr_rgb << " ssim "
         << m.ssim_rgb << "\n";
  }
  return report;
}

inline MetricsReport evaluate(const std::filesystem::path& checkpoint,
                              const PairDataset& data,
                              std::ostream* log = nullptr) {
  auto ck = load_checkpoint(checkpoint);
  return evaluate(ck.model, data, log);
}

// ---- diagnostics ----------------------------------------------------------

// Mean-value trace of the cross-stage tensors: one H mean per stage and one
// mean per (stage, scale) for the O features.
struct DiagnosticsDump {
  std::vector<double> h_means;                // tau + 1 entries
  std::vector<std::vector<double>> o_means;   // per stage, per scale
  int epoch = -1;
};

inline DiagnosticsDump dump_diagnostics(SDPSFNet& model,
                                        const torch::Tensor& batch,
                                        int epoch = -1) {
  torch::NoGradGuard ng;
  model->eval();
  auto r = model->forward_stages(batch);
  DiagnosticsDump d;
  d.epoch = epoch;
  for (const auto& stage : r.stages) {
    d.h_means.push_back(stage.h.mean().item<double>());
    std::vector<double> scales;
    for (const auto& o : stage.o) scales.push_back(o.mean().item<double>());
    d.o_means.push_back(std::move(scales));
  }
  return d;
}

// ---- ablation -------------------------------------------------------------

struct AblationRow {
  std::string name;
  int64_t params = 0;
  bool forward_ok = false;
  double psnr_y = std::numeric_limits<double>::quiet_NaN();
  double ssim_rgb = std::numeric_limits<double>::quiet_NaN();
};

// Toggle grammar: use_gate=on|off, use_h_updates=on|off,
// use_enhanced_csff=on|off, psf=off|single|multi, tau=N,
// disable=<stage.site>. Unknown toggles are rejected.
inline ModelConfig apply_toggle(ModelConfig cfg, const std::string& toggle) {
  auto eq = toggle.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("bad toggle (want key=value): " + toggle);
  auto key = toggle.substr(0, eq);
  auto value = toggle.substr(eq + 1);
  auto on_off = [&](const std::string& v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw std::invalid_argument("bad toggle value: " + toggle);
  };
  if (key == "use_gate") cfg.use_gate = on_off(value);
  else if (key == "use_h_updates") cfg.use_h_updates = on_off(value);
  else if (key == "use_enhanced_csff") cfg.use_enhanced_csff = on_off(value);
  else if (key == "psf") {
    if (value != "off" && value != "single" && value != "multi")
      throw std::invalid_argument("bad psf toggle value: " + toggle);
    cfg.psf_mode = value;
  } else if (key == "tau") cfg.tau = std::stoi(value);
  else if (key == "disable") cfg.disabled_pathways.insert(value);
  else throw std::invalid_argument("unknown toggle: " + toggle);
  return cfg;
}

// Builds each variant (base plus one toggle), counts parameters, verifies a
// forward pass, and optionally runs a short train/eval round when a dataset
// is supplied.
inline std::vector<AblationRow> run_ablation(
    const TrainConfig& base, const std::vector<std::string>& toggles,
    const PairDataset* data = nullptr, int quick_epochs = 0,
    const std::filesystem::path& work_dir = "ablation_runs") {
  std::vector<std::pair<std::string, ModelConfig>> variants;
  variants.emplace_back("base", base.model);
  for (const auto& t : toggles)
    variants.emplace_back(t, apply_toggle(base.model, t));

  std::vector<AblationRow> rows;
  for (auto& [name, mcfg] : variants) {
    AblationRow row;
    row.name = name;
    torch::manual_seed(base.seed);
    SDPSFNet net(mcfg);
    row.params = net->parameter_count();
    {
      torch::NoGradGuard ng;
      auto probe = torch::rand({1, 3, 64, 64});
      auto [final, inter] = net->forward(probe);
      row.forward_ok = final.sizes() == probe.sizes() &&
                       static_cast<int>(inter.size()) == mcfg.tau + 1;
    }
    if (data && quick_epochs > 0) {
      TrainConfig tcfg = base;
      tcfg.model = mcfg;
      tcfg.epochs = std::max(quick_epochs, tcfg.warmup_epochs + 1);
      auto dir = work_dir / name;
      train(tcfg, *data, dir, {}, std::cerr);
      auto report = evaluate(dir, *data);
      auto m = report.means();
      row.psnr_y = m.psnr_y;
      row.ssim_rgb = m.ssim_rgb;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sdpsf
