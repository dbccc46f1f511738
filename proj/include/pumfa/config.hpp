#pragma once

#include "pumfa/geometry.hpp"
#include "pumfa/network.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pumfa {

/// Flat `key = value` text with `[section]` headers. Keys are returned as
/// "section.key"; keys before any header have no prefix. `#` and `;` start
/// comments.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> load_key_values(const std::filesystem::path& path);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  double alpha_start = 0.1;
  double alpha_end = 1.0;
  std::string checkpoint = "model.ckpt";
  std::string log;  // empty: stdout only
  bool resume = false;
};

struct DataConfig {
  std::vector<std::string> meshes{"sphere", "torus", "box", "cylinder"};
  std::size_t pairs_per_mesh = 200;
  std::size_t dense_points = 8192;
  std::string dataset = "dataset.bin";
};

struct EvalConfig {
  std::vector<std::string> meshes{"sphere", "torus", "box", "cylinder"};
  std::size_t input_points = 2048;
  std::vector<double> noise_levels{0.0, 0.001, 0.005, 0.01, 0.015, 0.02};
  std::uint64_t seed = 7;
  std::string table = "metrics.txt";
  std::string csv = "metrics.csv";
};

struct AttentionConfig {
  std::size_t top_k = 30;
  std::vector<std::size_t> heads{0, 1, 2};
  std::string output = "attention";
};

/// Everything a CLI run needs, resolved from profile defaults, a config file
/// and flag overrides, in that order.
struct PipelineConfig {
  std::string profile = "paper";
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  AugmentConfig augment = AugmentConfig::training_defaults();
  double coverage_factor = 3.0;
  EvalConfig eval;
  AttentionConfig attention;

  /// Paper-scale hyperparameters.
  static PipelineConfig paper();
  /// Laptop-scale profile: reduced widths, 128 pairs, short runs.
  static PipelineConfig desk();
  static PipelineConfig for_profile(const std::string& name);

  /// Applies "section.key" overrides; unknown keys throw std::invalid_argument.
  void apply(const std::map<std::string, std::string>& values);
  /// Every key with its resolved value, in file syntax.
  std::string to_text() const;
  void validate() const;
};

/// Profile named in the file (key "profile"), else `fallback`, then the file's
/// remaining keys.
PipelineConfig load_pipeline_config(const std::filesystem::path& path, const std::string& profile_override = "");

}  // namespace pumfa
