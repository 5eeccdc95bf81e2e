#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <json.hpp>

#include "sdpsf/data.hpp"
#include "sdpsf/network.hpp"
#include "sdpsf/psf.hpp"
#include "sdpsf/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Dictionary file schema (JSON): either explicit kernels
//   {"kernels": [[[...K x K...], ...] x Kc]}
// or a generator spec
//   {"generator": {"type": "streaks"|"random", "count": Kc, "size": K, "seed": S}}
// plus an optional weight-field spec
//   {"weight_field": {"type": "smooth"|"uniform", "seed": S, "sharpness": X}}
struct DictSpec {
  torch::Tensor kernels;
  std::string field_type = "smooth";
  std::uint64_t field_seed = 0;
  double sharpness = 2.0;
};

DictSpec load_dict_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dictionary file: " + path.string());
  json j = json::parse(in);
  DictSpec spec;
  if (j.contains("kernels")) {
    auto arr = j.at("kernels");
    int kc = static_cast<int>(arr.size());
    int k = static_cast<int>(arr.at(0).size());
    auto kernels = torch::zeros({kc, k, k}, torch::kFloat64);
    auto acc = kernels.accessor<double, 3>();
    for (int c = 0; c < kc; ++c)
      for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x)
          acc[c][y][x] = arr.at(c).at(y).at(x).get<double>();
    spec.kernels = sdpsf::spatial_normalize(kernels.unsqueeze(0)).squeeze(0);
  } else if (j.contains("generator")) {
    auto g = j.at("generator");
    auto type = g.value("type", "streaks");
    int count = g.value("count", 4);
    int size = g.value("size", 5);
    std::uint64_t seed = g.value("seed", 0);
    if (type == "streaks") {
      spec.kernels = sdpsf::make_streak_kernels(count, size, seed);
    } else if (type == "random") {
      torch::manual_seed(seed);
      spec.kernels =
          sdpsf::spatial_normalize(torch::rand({1, count, size, size}, torch::kFloat64))
              .squeeze(0);
    } else {
      throw std::runtime_error("unknown kernel generator type: " + type);
    }
  } else {
    throw std::runtime_error("dictionary file needs 'kernels' or 'generator'");
  }
  if (j.contains("weight_field")) {
    auto w = j.at("weight_field");
    spec.field_type = w.value("type", "smooth");
    spec.field_seed = w.value("seed", 0);
    spec.sharpness = w.value("sharpness", 2.0);
    if (spec.field_type != "smooth" && spec.field_type != "uniform")
      throw std::runtime_error("unknown weight field type: " + spec.field_type);
  }
  return spec;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& resume) {
  auto cfg = sdpsf::load_train_config(config_path);
  auto data = sdpsf::PairDataset::load(data_dir);
  auto result = sdpsf::train(cfg, data, out_dir, resume);
  std::cout << "checkpoint: " << result.checkpoint_dir.string() << "\n";
  if (!result.loss_history.empty())
    std::cout << "final loss: " << result.loss_history.back() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir,
             const std::string& out_csv) {
  auto data = sdpsf::PairDataset::load(data_dir);
  auto report = sdpsf::evaluate(fs::path(ckpt), data, &std::cout);
  std::ofstream os(out_csv);
  if (!os) throw std::runtime_error("cannot write " + out_csv);
  report.write_csv(os);
  std::cout << "wrote " << out_csv << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path,
               const std::vector<std::string>& toggles,
               const std::string& data_dir, int quick_epochs,
               const std::string& out_path) {
  auto cfg = sdpsf::load_train_config(config_path);
  std::optional<sdpsf::PairDataset> data;
  if (!data_dir.empty()) data = sdpsf::PairDataset::load(data_dir);
  auto rows = sdpsf::run_ablation(cfg, toggles, data ? &*data : nullptr,
                                  quick_epochs);
  std::ostringstream table;
  table << std::left << std::setw(28) << "variant" << std::setw(12) << "params(M)"
        << std::setw(10) << "forward" << std::setw(10) << "psnr_y"
        << std::setw(10) << "ssim" << "\n";
  for (const auto& r : rows) {
    table << std::left << std::setw(28) << r.name << std::setw(12)
          << std::fixed << std::setprecision(3) << r.params / 1e6
          << std::setw(10) << (r.forward_ok ? "ok" : "FAILED");
    if (std::isnan(r.psnr_y))
      table << std::setw(10) << "-" << std::setw(10) << "-";
    else
      table << std::setw(10) << std::setprecision(2) << r.psnr_y
            << std::setw(10) << std::setprecision(4) << r.ssim_rgb;
    table << "\n";
  }
  std::cout << table.str();
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    os << table.str();
  }
  for (const auto& r : rows)
    if (!r.forward_ok) return 1;
  return 0;
}

int cmd_synth(const std::string& dict_path, const std::string& in_dir,
              const std::string& out_dir) {
  auto spec = load_dict_spec(dict_path);
  fs::create_directories(fs::path(out_dir) / "input");
  fs::create_directories(fs::path(out_dir) / "gt");
  int count = 0;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in_dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    auto rgb = sdpsf::read_rgb8(file);
    if (rgb.empty()) {
      std::cerr << "warning: skipping unreadable " << file << "\n";
      continue;
    }
    auto clean = sdpsf::to_tensor(rgb, torch::kFloat64);
    auto kc = spec.kernels.size(0);
    torch::Tensor field;
    if (spec.field_type == "uniform")
      field = torch::full({1, kc, clean.size(2), clean.size(3)}, 1.0 / kc,
                          torch::kFloat64);
    else
      field = sdpsf::make_smooth_weight_field(
          1, static_cast<int>(kc), static_cast<int>(clean.size(2)),
          static_cast<int>(clean.size(3)), spec.field_seed + count,
          spec.sharpness);
    sdpsf::PsfDictionary dict{spec.kernels, field};
    auto degraded = sdpsf::synthesize_degradation(clean, dict).clamp(0, 1);
    auto stem = file.stem().string() + ".png";
    sdpsf::write_rgb8(fs::path(out_dir) / "input" / stem, sdpsf::to_mat8(degraded));
    sdpsf::write_rgb8(fs::path(out_dir) / "gt" / stem, rgb);
    ++count;
  }
  if (count == 0) throw std::runtime_error("no readable images in " + in_dir);
  std::cout << "wrote " << count << " degraded/clean pairs to " << out_dir << "\n";
  return 0;
}

int cmd_diag(const std::string& ckpt, const std::string& image_path,
             const std::string& out_json) {
  auto ck = sdpsf::load_checkpoint(ckpt);
  auto rgb = sdpsf::read_rgb8(image_path);
  if (rgb.empty()) throw std::runtime_error("cannot read image: " + image_path);
  auto x01 = sdpsf::to_tensor(rgb);
  auto [padded, box] = sdpsf::reflect_pad_for_inference(sdpsf::normalize_imagenet(x01));
  auto dump = sdpsf::dump_diagnostics(ck.model, padded, ck.epoch);
  std::cout << "stage  H.mean      O.means (fine -> coarse)\n";
  for (size_t s = 0; s < dump.h_means.size(); ++s) {
    std::cout << std::setw(5) << s << "  " << std::setw(10) << std::scientific
              << std::setprecision(3) << dump.h_means[s] << "  ";
    for (double v : dump.o_means[s]) std::cout << std::setw(11) << v;
    std::cout << "\n";
  }
  if (!out_json.empty()) {
    json j;
    j["epoch"] = dump.epoch;
    j["h_means"] = dump.h_means;
    j["o_means"] = dump.o_means;
    std::ofstream(out_json) << j.dump(2) << "\n";
    std::cout << "wrote " << out_json << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SD-PSFNet: sequential dynamic-PSF image deraining"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir = "runs/default", resume;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config_path, "flat key=value config file")
      ->required();
  train_cmd->add_option("--data", data_dir, "dataset root (input/ + gt/)")
      ->required();
  train_cmd->add_option("--out", out_dir, "checkpoint directory");
  train_cmd->add_option("--resume", resume, "checkpoint directory to resume from");

  std::string ckpt, metrics_csv = "metrics.csv";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--data", data_dir, "dataset root")->required();
  eval_cmd->add_option("--out", metrics_csv, "metrics CSV path");

  std::vector<std::string> toggles;
  std::string ablate_data, table_out;
  int quick_epochs = 0;
  auto* ablate_cmd = app.add_subcommand("ablate", "build and compare variants");
  ablate_cmd->add_option("--config", config_path, "flat key=value config file")
      ->required();
  ablate_cmd->add_option("--toggle", toggles,
                         "variant toggles, e.g. use_gate=off psf=single tau=0 "
                         "disable=ors.shallow");
  ablate_cmd->add_option("--data", ablate_data,
                         "dataset root for quick train/eval rounds");
  ablate_cmd->add_option("--epochs", quick_epochs,
                         "epochs for the quick train rounds");
  ablate_cmd->add_option("--out", table_out, "write the table to this file");

  std::string dict_path, in_dir, synth_out;
  auto* synth_cmd = app.add_subcommand("synth",
                                       "degrade clean images with a PSF dictionary");
  synth_cmd->add_option("--dict", dict_path, "dictionary JSON file")->required();
  synth_cmd->add_option("--in", in_dir, "directory of clean images")->required();
  synth_cmd->add_option("--out", synth_out, "output dataset root")->required();

  std::string diag_image, diag_json;
  auto* diag_cmd = app.add_subcommand("diag", "dump cross-stage feature means");
  diag_cmd->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  diag_cmd->add_option("--image", diag_image, "input image")->required();
  diag_cmd->add_option("--json", diag_json, "also write a JSON dump");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(config_path, data_dir, out_dir, resume);
    if (*eval_cmd) return cmd_eval(ckpt, data_dir, metrics_csv);
    if (*ablate_cmd)
      return cmd_ablate(config_path, toggles, ablate_data, quick_epochs, table_out);
    if (*synth_cmd) return cmd_synth(dict_path, in_dir, synth_out);
    if (*diag_cmd) return cmd_diag(ckpt, diag_image, diag_json);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
