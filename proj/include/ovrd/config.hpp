#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ovrd {

/// Flat key=value configuration. Every hyperparameter has a default; a config
/// file only needs the keys it overrides. Lines are `key = value`, blank, or
/// `#` comments.
class Config {
 public:
  static Config defaults() {
    Config c;
    auto& kv = c.kv_;
    kv["seed"] = "0";
    // dimensions
    kv["d_tok"] = "128";        // class-token dimension
    kv["embed_dim"] = "256";    // d: text/visual embedding dimension
    kv["hidden"] = "768";       // MLP hidden width
    kv["prompt_len"] = "10";    // L: learnable context tokens per prompt
    // thresholds and weights
    kv["gamma"] = "-0.3";           // GIoU threshold for motion patterns
    kv["lambda_distill"] = "5.0";   // distillation weight
    kv["iou_threshold"] = "0.5";    // tracklet label assignment vIoU
    kv["pair_iou_threshold"] = "0.5";
    kv["merge_viou"] = "0.5";       // greedy association gate
    kv["eval_viou"] = "0.5";        // evaluation match threshold
    kv["align_weight"] = "1.0";     // l1 alignment weight (joint variant)
    // optimization
    kv["lr"] = "1e-4";
    kv["tau_init"] = "0.1";
    kv["batch_size"] = "16";
    kv["steps_tracklet"] = "500";
    kv["steps_stage1"] = "600";
    kv["steps_stage2"] = "600";
    kv["eval_every"] = "0";     // 0 disables early stopping
    kv["patience"] = "5";
    kv["use_bg_embedding"] = "0";
    kv["ablation_mode"] = "repro";  // single|comp|ens|rand|repro|repro_dagger
    kv["max_neg_pairs_per_video"] = "12";  // seeded negative-pair cap
    // segments and detection
    kv["l_seg"] = "30";
    kv["seg_stride"] = "15";
    kv["top_k"] = "20";
    // fixed seeds for the deterministic text side
    kv["vocab_seed"] = "11";
    kv["encoder_seed"] = "12";
    kv["template_seed"] = "13";
    // synthetic data generator
    kv["synth_videos"] = "200";
    kv["synth_test_fraction"] = "0.2";
    kv["synth_frames"] = "60";
    kv["synth_base_objects"] = "6";
    kv["synth_novel_objects"] = "3";
    kv["synth_base_predicates"] = "8";
    kv["synth_novel_predicates"] = "4";
    kv["synth_relations_per_video"] = "2";
    kv["synth_distractors_per_video"] = "2";
    kv["synth_sigma_feat"] = "0.02";
    kv["synth_sigma_embed"] = "0.02";
    kv["synth_multi_label_prob"] = "0.25";
    kv["synth_token_corr"] = "0.3";
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    Config c = defaults();
    std::ifstream f(path);
    if (!f) throw std::runtime_error("Config::load: cannot open " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                                 ": expected key = value");
      c.kv_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return c;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  const std::string& get_s(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::runtime_error("Config: unknown key " + key);
    return it->second;
  }

  double get_f(const std::string& key) const {
    const std::string& s = get_s(key);
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("Config: key " + key + " is not a number: " + s);
    }
  }

  std::int64_t get_i(const std::string& key) const {
    const std::string& s = get_s(key);
    try {
      std::size_t pos = 0;
      long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw std::runtime_error("Config: key " + key + " is not an integer: " + s);
    }
  }

  std::uint64_t get_u(const std::string& key) const {
    return static_cast<std::uint64_t>(get_i(key));
  }

  const std::map<std::string, std::string>& items() const { return kv_; }

 private:
  static std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r");
    auto b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace ovrd
