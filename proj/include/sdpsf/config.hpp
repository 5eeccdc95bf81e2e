#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdpsf {

// Architectural hyperparameters. Defaults are the deraining configuration
// (tau=3, 40-channel 7x7 PSF, 40/60/80 UNet widths).
struct ModelConfig {
  int tau = 3;            // number of middle stages
  int psf_channels = 40;  // K_c, PSF dictionary size
  int psf_kernel = 7;     // K, spatial size of the predicted PSF (odd)
  int n_feat = 40;
  int scale_unet = 20;
  int scale_ors = 16;
  int num_cab = 8;  // CABs per original-resolution block
  std::vector<int> head_sizes = {3, 5, 7};
  int psf_embed = 64;      // width of the compact PSF feature vector
  int cab_reduction = 4;   // channel-attention bottleneck ratio
  int head_reduction = 16; // CAB ratio inside the multi-scale PSF head
  bool use_gate = true;            // gated history fusion at stage inputs
  bool use_h_updates = true;       // gated history fusion at encoder levels
  bool use_enhanced_csff = true;   // second (history) gate in the CSFF
  std::string psf_mode = "multi";  // off | single | multi
  // Fusion sites forced to pass-through, e.g. "stage0.csff", "stage1.shallow",
  // "stage1.encoder", "ors.shallow". Stage 0 is Stage In, stages 1..tau the
  // middle stages.
  std::set<std::string> disabled_pathways;
  bool supervise_final = true;  // include the ORStage output in the loss sum

  int effective_psf_channels() const { return psf_mode == "single" ? 1 : psf_channels; }
  bool psf_enabled() const { return psf_mode != "off"; }

  std::vector<int> encoder_widths() const {
    return {n_feat, n_feat + scale_unet, n_feat + 2 * scale_unet};
  }
  int ors_width() const { return n_feat + scale_ors; }

  bool pathway_disabled(const std::string& site) const {
    return disabled_pathways.count(site) > 0;
  }

  void validate() const {
    if (tau < 0) throw std::invalid_argument("tau must be >= 0");
    if (psf_channels < 1) throw std::invalid_argument("psf_channels must be >= 1");
    if (psf_kernel < 1 || psf_kernel % 2 == 0)
      throw std::invalid_argument("psf_kernel must be odd and >= 1");
    if (n_feat <= 0) throw std::invalid_argument("n_feat must be > 0");
    if (scale_unet < 0 || scale_ors < 0)
      throw std::invalid_argument("width increments must be >= 0");
    if (num_cab < 1) throw std::invalid_argument("num_cab must be >= 1");
    if (head_sizes.empty()) throw std::invalid_argument("head_sizes must be nonempty");
    for (int k : head_sizes)
      if (k < 1 || k % 2 == 0)
        throw std::invalid_argument("head sizes must be odd and >= 1");
    if (psf_mode != "off" && psf_mode != "single" && psf_mode != "multi")
      throw std::invalid_argument("psf_mode must be off|single|multi");
    if (psf_embed < 2) throw std::invalid_argument("psf_embed must be >= 2");
  }
};

// Optimization recipe plus the model it trains.
struct TrainConfig {
  double lr_init = 1e-4;
  double lr_final = 1e-6;
  int warmup_epochs = 3;
  int epochs = 100;
  double clip_norm = 2.0;
  int batch_size = 4;
  int patch_size = 128;
  std::uint64_t seed = 0;
  std::string precision = "full";  // full | mixed
  double alpha_edge = 0.05;
  double alpha_freq = 0.01;
  double charbonnier_eps = 1e-3;
  double weight_decay = 1e-4;
  int val_interval = 10;   // epochs between validation passes (0 = never)
  int ckpt_interval = 10;  // epochs between checkpoints (always saves the last)
  ModelConfig model;

  void validate() const {
    if (lr_final > lr_init) throw std::invalid_argument("lr_final must be <= lr_init");
    if (warmup_epochs < 0) throw std::invalid_argument("warmup_epochs must be >= 0");
    if (epochs <= warmup_epochs)
      throw std::invalid_argument("epochs must exceed warmup_epochs");
    if (clip_norm <= 0) throw std::invalid_argument("clip_norm must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (patch_size < 4 || patch_size % 4 != 0)
      throw std::invalid_argument("patch_size must be a positive multiple of 4");
    if (precision != "full" && precision != "mixed")
      throw std::invalid_argument("precision must be full|mixed");
    if (alpha_edge < 0 || alpha_freq < 0 || charbonnier_eps < 0)
      throw std::invalid_argument("loss weights must be >= 0");
    model.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean for '" + key + "': " + v);
}

inline std::vector<std::string> split_csv(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

// Applies a single `key = value` pair. Unknown keys are rejected.
inline void apply_config_entry(TrainConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_bool;
  using detail::split_csv;
  ModelConfig& m = cfg.model;
  if (key == "tau") m.tau = std::stoi(value);
  else if (key == "psf_channels") m.psf_channels = std::stoi(value);
  else if (key == "psf_kernel") m.psf_kernel = std::stoi(value);
  else if (key == "n_feat") m.n_feat = std::stoi(value);
  else if (key == "scale_unet") m.scale_unet = std::stoi(value);
  else if (key == "scale_ors") m.scale_ors = std::stoi(value);
  else if (key == "num_cab") m.num_cab = std::stoi(value);
  else if (key == "head_sizes") {
    m.head_sizes.clear();
    for (const auto& t : split_csv(value)) m.head_sizes.push_back(std::stoi(t));
  } else if (key == "psf_embed") m.psf_embed = std::stoi(value);
  else if (key == "cab_reduction") m.cab_reduction = std::stoi(value);
  else if (key == "head_reduction") m.head_reduction = std::stoi(value);
  else if (key == "use_gate") m.use_gate = parse_bool(value, key);
  else if (key == "use_h_updates") m.use_h_updates = parse_bool(value, key);
  else if (key == "use_enhanced_csff") m.use_enhanced_csff = parse_bool(value, key);
  else if (key == "psf_mode") m.psf_mode = value;
  else if (key == "disabled_pathways") {
    m.disabled_pathways.clear();
    for (const auto& t : split_csv(value)) m.disabled_pathways.insert(t);
  } else if (key == "supervise_final") m.supervise_final = parse_bool(value, key);
  else if (key == "lr_init") cfg.lr_init = std::stod(value);
  else if (key == "lr_final") cfg.lr_final = std::stod(value);
  else if (key == "warmup_epochs") cfg.warmup_epochs = std::stoi(value);
  else if (key == "epochs") cfg.epochs = std::stoi(value);
  else if (key == "clip_norm") cfg.clip_norm = std::stod(value);
  else if (key == "batch_size") cfg.batch_size = std::stoi(value);
  else if (key == "patch_size") cfg.patch_size = std::stoi(value);
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "precision") cfg.precision = value;
  else if (key == "alpha_edge") cfg.alpha_edge = std::stod(value);
  else if (key == "alpha_freq") cfg.alpha_freq = std::stod(value);
  else if (key == "charbonnier_eps") cfg.charbonnier_eps = std::stod(value);
  else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
  else if (key == "val_interval") cfg.val_interval = std::stoi(value);
  else if (key == "ckpt_interval") cfg.ckpt_interval = std::stoi(value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

// Flat key-value text: one `key = value` per line, '#' starts a comment.
inline TrainConfig parse_train_config(std::istream& in) {
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not 'key = value'");
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    apply_config_entry(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return parse_train_config(in);
}

inline std::string serialize_train_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  const ModelConfig& m = cfg.model;
  os << "tau = " << m.tau << "\n"
     << "psf_channels = " << m.psf_channels << "\n"
     << "psf_kernel = " << m.psf_kernel << "\n"
     << "n_feat = " << m.n_feat << "\n"
     << "scale_unet = " << m.scale_unet << "\n"
     << "scale_ors = " << m.scale_ors << "\n"
     << "num_cab = " << m.num_cab << "\n";
  os << "head_sizes = ";
  for (size_t i = 0; i < m.head_sizes.size(); ++i)
    os << (i ? "," : "") << m.head_sizes[i];
  os << "\n"
     << "psf_embed = " << m.psf_embed << "\n"
     << "cab_reduction = " << m.cab_reduction << "\n"
     << "head_reduction = " << m.head_reduction << "\n"
     << "use_gate = " << (m.use_gate ? "true" : "false") << "\n"
     << "use_h_updates = " << (m.use_h_updates ? "true" : "false") << "\n"
     << "use_enhanced_csff = " << (m.use_enhanced_csff ? "true" : "false") << "\n"
     << "psf_mode = " << m.psf_mode << "\n";
  os << "disabled_pathways = ";
  {
    size_t i = 0;
    for (const auto& p : m.disabled_pathways) os << (i++ ? "," : "") << p;
  }
  os << "\n"
     << "supervise_final = " << (m.supervise_final ? "true" : "false") << "\n"
     << "lr_init = " << cfg.lr_init << "\n"
     << "lr_final = " << cfg.lr_final << "\n"
     << "warmup_epochs = " << cfg.warmup_epochs << "\n"
     << "epochs = " << cfg.epochs << "\n"
     << "clip_norm = " << cfg.clip_norm << "\n"
     << "batch_size = " << cfg.batch_size << "\n"
     << "patch_size = " << cfg.patch_size << "\n"
     << "seed = " << cfg.seed << "\n"
     << "precision = " << cfg.precision << "\n"
     << "alpha_edge = " << cfg.alpha_edge << "\n"
     << "alpha_freq = " << cfg.alpha_freq << "\n"
     << "charbonnier_eps = " << cfg.charbonnier_eps << "\n"
     << "weight_decay = " << cfg.weight_decay << "\n"
     << "val_interval = " << cfg.val_interval << "\n"
     << "ckpt_interval = " << cfg.ckpt_interval << "\n";
  return os.str();
}

}  // namespace sdpsf
