#pragma once

#include "pumfa/checkpoint.hpp"
#include "pumfa/geometry.hpp"
#include "pumfa/layers.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace pumfa {

/// Architecture hyperparameters.
///
/// `channels`/`expansion` size the multi-scale extractor and the refiner
/// (C, K); `coarse_channels`/`coarse_expansion` size the coarse generator and
/// the self-attention block (C', K').
struct ModelConfig {
  std::size_t points = 256;        // N
  std::size_t ratio = 4;           // r
  std::size_t depth = 4;           // H
  std::size_t channels = 16;       // C
  std::size_t expansion = 4;       // K
  std::size_t coarse_channels = 32;  // C'
  std::size_t coarse_expansion = 8;  // K'
  std::size_t heads = 8;
  std::size_t patch_size = 20;     // KNN k inside every PT layer
  std::size_t sab_depth = 1;
  bool zero_init_residual = true;

  static ModelConfig paper();
  static ModelConfig desk();

  /// Throws std::invalid_argument describing the first violated rule.
  void validate() const;

  /// Width of F_h (h is 1-based).
  std::size_t feature_width(std::size_t h) const;
  /// Width of the GCRA output RGC_j (j is 1-based, j = H − h + 1).
  std::size_t refined_width(std::size_t j) const;
  std::size_t global_width() const { return coarse_channels * coarse_expansion; }
  /// CPG channel plan, input first: 3 → C' → K'C' → K'C'/4 → 3r.
  std::vector<std::size_t> coarse_plan() const;

  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& values);
};

/// All learned weights plus batch-norm running statistics.
struct ModelParams {
  ModelConfig config;
  std::vector<PTLayerParams> extractor;  // H layers
  std::vector<PTLayerParams> coarse;     // 4 layers
  Linear sab_lift;                       // 3r → K'C'
  std::vector<AttentionParams> sab;      // sab_depth self-attention blocks
  std::vector<GcraParams> refiner;       // refiner[j-1] emits RGC_j and queries F_{H-j+1}
  Linear refiner_out;                    // 3r → 3r before the shuffle

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;

  /// Weights, running statistics and the config block.
  Checkpoint to_checkpoint() const;
  static ModelParams from_checkpoint(const Checkpoint& ckpt);
};

/// A batch of equally sized input patches with their shared KNN structure.
struct PointBatch {
  std::size_t batch = 0;
  std::size_t points = 0;
  Tensor coords;  // (batch·points)×3
  Neighborhood neighborhood;
};

PointBatch make_point_batch(std::span<const PointCloud> clouds, std::size_t patch_size);

/// duplicate(S, r): row r·i + j equals row i of `coords`.
Tensor duplicate_points(const Tensor& coords, std::size_t r);

/// F_1..F_H.
std::vector<Tensor> mfe_forward(const ModelParams& params, const PointBatch& batch);

struct CoarseOutput {
  Tensor coarse;   // Q'
  Tensor offsets;  // S'^Δ
};
CoarseOutput cpg_forward(const ModelParams& params, const PointBatch& batch);

/// GFs of shape (batch·N)×K'C'. `attention`, if given, receives one entry per block.
Tensor sab_forward(const ModelParams& params, const Tensor& coarse, std::size_t groups,
                   std::vector<AttentionScores>* attention = nullptr);

struct RefinerOutput {
  Tensor offsets;               // Q'^Δ
  std::vector<Tensor> refined;  // RGC_1..RGC_H
  std::vector<AttentionScores> attention;
};
RefinerOutput gcr_forward(ModelParams& params, const std::vector<Tensor>& features, const Tensor& global_features,
                          NormMode mode, std::size_t groups, bool capture = false);

struct ForwardOptions {
  NormMode mode = NormMode::train;
  bool capture_attention = false;
};

struct ForwardResult {
  Tensor dense;     // Q
  Tensor coarse;    // Q'
  Tensor refinement;  // Q'^Δ
  std::vector<Tensor> features;  // MFs
  Tensor global_features;        // GFs
  std::vector<Tensor> refined;   // RGC chain
  std::vector<AttentionScores> gcra_attention;  // one per GCRA when captured
};

/// Q = Q' + Q'^Δ for every patch of the batch (rows stacked per patch).
ForwardResult pumfa_forward(ModelParams& params, std::span<const PointCloud> inputs, const ForwardOptions& options = {});

Tensor cloud_to_tensor(const PointCloud& cloud);
Tensor clouds_to_tensor(std::span<const PointCloud> clouds);
PointCloud tensor_to_cloud(const Tensor& t, std::size_t first_row = 0, std::size_t rows = 0);

}  // namespace pumfa
