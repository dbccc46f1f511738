#pragma once

#include "pumfa/checkpoint.hpp"
#include "pumfa/config.hpp"
#include "pumfa/geometry.hpp"
#include "pumfa/losses.hpp"
#include "pumfa/network.hpp"
#include "pumfa/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

namespace pumfa {

/// Deterministic generator for a (seed, tag...) tuple.
Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags);

/// A built-in shape name or a path to an .off/.ply mesh.
TriangleMesh resolve_mesh(const std::string& name);

// ---------------------------------------------------------------------------
// Data

/// Poisson-samples `data.dense_points` points per mesh and cuts
/// `data.pairs_per_mesh` patch pairs from each, in mesh order.
std::vector<PatchPair> generate_dataset(const PipelineConfig& config);

void save_dataset(const std::filesystem::path& path, const std::vector<PatchPair>& pairs);
std::vector<PatchPair> load_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Training

struct StepStats {
  std::int64_t step = 0;  // index of the step just taken
  std::size_t epoch = 0;
  double alpha = 0.0;
  double loss = 0.0;
  double cd = 0.0;   // CD(Q', D)
  double dcd = 0.0;  // DCD(Q, D)
};

/// Dense-output quality on a set of pairs without touching any state.
struct FitStats {
  double cd_dense = 0.0;   // CD(Q, D)
  double dcd_dense = 0.0;  // DCD(Q, D)
  double cd_coarse = 0.0;  // CD(Q', D)
};

/// Adam over the scheduled total loss. Step s draws its batch from the epoch's
/// shuffle and its augmentation from (seed, s) alone, so a restored trainer
/// continues exactly where the saved one stopped.
class Trainer {
 public:
  Trainer(const PipelineConfig& config, std::vector<PatchPair> data);

  const PipelineConfig& config() const { return config_; }
  ModelParams& model() { return model_; }
  const ModelParams& model() const { return model_; }
  const AdamState& optimizer() const { return adam_; }
  const std::vector<PatchPair>& data() const { return data_; }

  std::int64_t step() const { return step_; }
  std::int64_t total_steps() const { return total_steps_; }
  std::size_t steps_per_epoch() const { return steps_per_epoch_; }
  bool done() const { return step_ >= total_steps_; }
  double alpha_at(std::int64_t step) const;
  /// Pair indices used by step s.
  std::vector<std::size_t> batch_indices(std::int64_t step) const;

  /// One optimisation step. Throws std::runtime_error on a non-finite loss,
  /// before any parameter changes.
  StepStats train_step();

  /// Runs the remaining steps, logging one line per epoch and checkpointing at
  /// every epoch end when `checkpoint` is non-empty.
  void run(std::ostream& log, const std::filesystem::path& checkpoint = {});

  /// Batch-statistics forward without gradients or running-stat updates.
  FitStats measure(const std::vector<std::size_t>& indices);

  Checkpoint to_checkpoint() const;
  /// Restores weights, optimiser moments and the step counter.
  void restore(const Checkpoint& ckpt);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  PipelineConfig config_;
  std::vector<PatchPair> data_;
  ModelParams model_;
  std::vector<Tensor> params_;
  AdamState adam_;
  LossSchedule schedule_;
  std::int64_t step_ = 0;
  std::int64_t total_steps_ = 0;
  std::size_t steps_per_epoch_ = 0;
};

/// Reads the model block of a trainer or model checkpoint.
ModelParams load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Inference

struct PatchPlan {
  std::vector<std::size_t> seeds;
  std::vector<std::vector<std::size_t>> patches;  // N cloud indices per seed
};

/// ceil(coverage_factor·|cloud|/N) FPS seeds, then extra seeds at any point no
/// patch reached yet, so every point lies in at least one patch.
PatchPlan plan_patches(const PointCloud& cloud, std::size_t n, double coverage_factor);

/// One model pass: r·|cloud| points. Throws when |cloud| < N.
PointCloud upsample_cloud(ModelParams& params, const PointCloud& cloud, double coverage_factor = 3.0);

/// `ratio` must be a power of the model ratio; applies that many passes.
PointCloud upsample_chain(ModelParams& params, const PointCloud& cloud, std::size_t ratio,
                          double coverage_factor = 3.0);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  std::vector<MetricRow> rows;
  std::string note;  // normalisation applied before measuring
};

/// For each mesh and noise level: Poisson GT of r·M points, Poisson input of M
/// points, Gaussian noise on the input, upsample, CD/HD/P2F against GT and mesh.
EvalReport evaluate(ModelParams& params, const PipelineConfig& config);

// ---------------------------------------------------------------------------
// Attention diagnostics

struct HeadAttention {
  std::size_t head = 0;
  std::vector<real> scores;      // N×N row-major softmax matrix
  std::vector<double> ranking;   // per key point: mean score over query rows
  std::vector<std::size_t> top;  // by descending ranking, ties to the lower index
};

struct LayerAttention {
  std::size_t layer = 0;  // 1-based GCRA index
  std::vector<HeadAttention> heads;
};

struct AttentionReport {
  std::vector<LayerAttention> layers;
  PointCloud points;  // S in its original frame
};

/// Captures every GCRA's score matrices for a single N-point cloud. Throws
/// std::out_of_range for a head index ≥ the model's head count.
AttentionReport dump_attention(ModelParams& params, const PointCloud& cloud, const std::vector<std::size_t>& heads,
                               std::size_t top_k = 30);

/// One PLY per layer ("layer_<j>.ply") with a head_<h> flag per selected head.
std::vector<std::filesystem::path> write_attention_overlays(const AttentionReport& report,
                                                            const std::filesystem::path& directory);

}  // namespace pumfa
