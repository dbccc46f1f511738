#include "pumfa/pipeline.hpp"

#include "pumfa/cloud_io.hpp"
#include "pumfa/parallel.hpp"
#include "pumfa/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace pumfa {

Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

TriangleMesh resolve_mesh(const std::string& name) {
  if (is_builtin_mesh(name)) return builtin_mesh(name);
  return read_mesh(name);
}

// ---------------------------------------------------------------------------
// Data

std::vector<PatchPair> generate_dataset(const PipelineConfig& config) {
  const auto& data = config.data;
  const std::size_t n = config.model.points;
  const std::size_t r = config.model.ratio;
  if (data.meshes.empty()) throw std::invalid_argument("generate_dataset: no meshes given");
  if (data.dense_points < r * n) {
    throw std::invalid_argument("generate_dataset: " + std::to_string(data.dense_points) +
                                " dense points cannot hold a " + std::to_string(r * n) + "-point target patch");
  }
  std::vector<std::vector<PatchPair>> per_mesh(data.meshes.size());
  parallel_for(data.meshes.size(), [&](std::size_t m) {
    TriangleMesh mesh = resolve_mesh(data.meshes[m]);
    if (mesh.faces.empty() || !(mesh.total_area() > 0.0)) {
      throw std::runtime_error("generate_dataset: mesh '" + data.meshes[m] + "' has no usable surface");
    }
    Rng rng = derive_rng(config.train.seed, {0xDA7A, m});
    const PointCloud dense = sample_mesh(mesh, data.dense_points, SamplingMode::poisson, rng);
    if (dense.size() < r * n) {
      throw std::runtime_error("generate_dataset: mesh '" + data.meshes[m] + "' is too coarse for " +
                               std::to_string(data.dense_points) + " points");
    }
    per_mesh[m] = extract_patch_pairs(dense, data.pairs_per_mesh, n, r, rng);
  });
  std::vector<PatchPair> out;
  for (auto& v : per_mesh) std::move(v.begin(), v.end(), std::back_inserter(out));
  return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<PatchPair>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("save_dataset: no pairs");
  const std::size_t n = pairs.front().input.size();
  const std::size_t dense = pairs.front().target.size();
  Buffer inputs, targets, norms;
  for (const auto& p : pairs) {
    if (p.input.size() != n || p.target.size() != dense) throw std::invalid_argument("save_dataset: ragged pairs");
    for (const auto& q : p.input.points) inputs.insert(inputs.end(), {real(q.x()), real(q.y()), real(q.z())});
    for (const auto& q : p.target.points) targets.insert(targets.end(), {real(q.x()), real(q.y()), real(q.z())});
    norms.insert(norms.end(), {real(p.norm.centroid.x()), real(p.norm.centroid.y()), real(p.norm.centroid.z()),
                               real(p.norm.scale)});
  }
  Checkpoint ckpt;
  ckpt.meta["kind"] = "dataset";
  ckpt.add("inputs", Tensor::from({pairs.size(), n, 3}, std::move(inputs)));
  ckpt.add("targets", Tensor::from({pairs.size(), dense, 3}, std::move(targets)));
  ckpt.add("norms", Tensor::from({pairs.size(), 4}, std::move(norms)));
  write_checkpoint(path, ckpt);
}

std::vector<PatchPair> load_dataset(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.meta_or("kind", "") != "dataset") throw std::runtime_error(path.string() + " is not a dataset file");
  const Tensor inputs = ckpt.get("inputs");
  const Tensor targets = ckpt.get("targets");
  const Tensor norms = ckpt.get("norms");
  if (inputs.rank() != 3 || targets.rank() != 3 || norms.rank() != 2 || inputs.dim(0) != targets.dim(0) ||
      norms.dim(0) != inputs.dim(0) || norms.dim(1) != 4 || inputs.dim(2) != 3 || targets.dim(2) != 3) {
    throw std::runtime_error(path.string() + ": inconsistent dataset tensors");
  }
  const std::size_t count = inputs.dim(0), n = inputs.dim(1), dense = targets.dim(1);
  auto in = inputs.data();
  auto tg = targets.data();
  auto nm = norms.data();
  std::vector<PatchPair> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& p = out[i];
    for (std::size_t j = 0; j < n; ++j) {
      const real* q = &in[(i * n + j) * 3];
      p.input.points.emplace_back(q[0], q[1], q[2]);
    }
    for (std::size_t j = 0; j < dense; ++j) {
      const real* q = &tg[(i * dense + j) * 3];
      p.target.points.emplace_back(q[0], q[1], q[2]);
    }
    p.norm.centroid = Vec3(nm[4 * i], nm[4 * i + 1], nm[4 * i + 2]);
    p.norm.scale = nm[4 * i + 3];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<PointCloud> inputs_of(const std::vector<PatchPair>& pairs) {
  std::vector<PointCloud> out;
  for (const auto& p : pairs) out.push_back(p.input);
  return out;
}

std::vector<PointCloud> targets_of(const std::vector<PatchPair>& pairs) {
  std::vector<PointCloud> out;
  for (const auto& p : pairs) out.push_back(p.target);
  return out;
}

}  // namespace

Trainer::Trainer(const PipelineConfig& config, std::vector<PatchPair> data)
    : config_(config), data_(std::move(data)) {
  config_.validate();
  if (data_.empty()) throw std::invalid_argument("Trainer: empty dataset");
  const std::size_t n = config_.model.points, dense = n * config_.model.ratio;
  for (const auto& p : data_) {
    if (p.input.size() != n || p.target.size() != dense) {
      throw std::invalid_argument("Trainer: dataset pairs are " + std::to_string(p.input.size()) + "→" +
                                  std::to_string(p.target.size()) + ", model expects " + std::to_string(n) + "→" +
                                  std::to_string(dense));
    }
  }
  model_ = ModelParams::init(config_.model, config_.train.seed);
  params_ = model_.parameters();
  adam_ = AdamState(params_, AdamOptions{static_cast<real>(config_.train.lr)});
  steps_per_epoch_ = (data_.size() + config_.train.batch_size - 1) / config_.train.batch_size;
  total_steps_ = static_cast<std::int64_t>(steps_per_epoch_ * config_.train.epochs);
  schedule_ = LossSchedule{config_.train.alpha_start, config_.train.alpha_end, std::max<std::int64_t>(1, total_steps_ - 1)};
}

double Trainer::alpha_at(std::int64_t step) const { return schedule_.alpha(step); }

std::vector<std::size_t> Trainer::batch_indices(std::int64_t step) const {
  const auto epoch = static_cast<std::size_t>(step) / steps_per_epoch_;
  const auto slot = static_cast<std::size_t>(step) % steps_per_epoch_;
  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_rng(config_.train.seed, {0x5EED, epoch});
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t bs = config_.train.batch_size;
  const std::size_t first = slot * bs, last = std::min(order.size(), first + bs);
  return {order.begin() + static_cast<std::ptrdiff_t>(first), order.begin() + static_cast<std::ptrdiff_t>(last)};
}

StepStats Trainer::train_step() {
  if (done()) throw std::logic_error("Trainer: all steps already taken");
  StepStats s;
  s.step = step_;
  s.epoch = static_cast<std::size_t>(step_) / steps_per_epoch_;
  s.alpha = alpha_at(step_);

  std::vector<PatchPair> batch;
  Rng rng = derive_rng(config_.train.seed, {0xA0C, static_cast<std::uint64_t>(step_)});
  for (std::size_t i : batch_indices(step_)) {
    batch.push_back(config_.augment.is_identity() ? data_[i] : augment(data_[i], rng, config_.augment));
  }
  const auto inputs = inputs_of(batch);
  const auto targets = targets_of(batch);

  zero_grads(params_);
  ForwardResult fwd = pumfa_forward(model_, inputs, {NormMode::train, false});
  LossTerms terms = batched_total_loss(fwd.coarse, fwd.dense, clouds_to_tensor(targets), batch.size(), s.alpha);
  s.loss = terms.total.item();
  s.cd = terms.cd.item();
  s.dcd = terms.dcd.item();
  if (!std::isfinite(s.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step_ << " (cd " << s.cd << ", dcd " << s.dcd << ", alpha " << s.alpha
        << ")";
    throw std::runtime_error(msg.str());
  }
  terms.total.backward();
  adam_step(params_, adam_);
  ++step_;
  return s;
}

void Trainer::run(std::ostream& log, const std::filesystem::path& checkpoint) {
  while (!done()) {
    double loss = 0.0, cd = 0.0, dcd = 0.0, alpha = 0.0;
    std::size_t count = 0, epoch = 0;
    do {
      const StepStats s = train_step();
      loss += s.loss;
      cd += s.cd;
      dcd += s.dcd;
      alpha = s.alpha;
      epoch = s.epoch;
      ++count;
    } while (!done() && static_cast<std::size_t>(step_) % steps_per_epoch_ != 0);
    const double k = static_cast<double>(count);
    log << "epoch " << epoch + 1 << " step " << step_ << " alpha " << std::fixed << std::setprecision(4) << alpha
        << " loss " << std::setprecision(6) << loss / k << " cd " << cd / k << " dcd " << dcd / k << std::defaultfloat
        << '\n';
    log.flush();
    if (!checkpoint.empty()) save(checkpoint);
  }
}

FitStats Trainer::measure(const std::vector<std::size_t>& indices) {
  NoGradGuard no_grad;
  std::vector<PatchPair> batch;
  for (std::size_t i : indices) batch.push_back(data_.at(i));
  const auto inputs = inputs_of(batch);
  ForwardResult fwd = pumfa_forward(model_, inputs, {NormMode::batch, false});
  FitStats f;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t rows = batch[b].target.size();
    const PointCloud dense = tensor_to_cloud(fwd.dense, b * rows, rows);
    const PointCloud coarse = tensor_to_cloud(fwd.coarse, b * rows, rows);
    f.cd_dense += chamfer_distance(dense, batch[b].target);
    f.dcd_dense += density_aware_chamfer(dense, batch[b].target);
    f.cd_coarse += chamfer_distance(coarse, batch[b].target);
  }
  const double k = static_cast<double>(batch.size());
  f.cd_dense /= k;
  f.dcd_dense /= k;
  f.cd_coarse /= k;
  return f;
}

Checkpoint Trainer::to_checkpoint() const {
  Checkpoint ckpt = model_.to_checkpoint();
  ckpt.meta["train.step"] = std::to_string(step_);
  ckpt.meta["train.total_steps"] = std::to_string(total_steps_);
  ckpt.meta["adam.step"] = std::to_string(adam_.step);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ckpt.add("adam.m." + std::to_string(i), Tensor::from(params_[i].shape(), Buffer(adam_.m[i].begin(), adam_.m[i].end())));
    ckpt.add("adam.v." + std::to_string(i), Tensor::from(params_[i].shape(), Buffer(adam_.v[i].begin(), adam_.v[i].end())));
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  ModelParams loaded = ModelParams::from_checkpoint(ckpt);
  if (loaded.config.to_map() != config_.model.to_map()) {
    throw std::runtime_error("checkpoint model config does not match the training config");
  }
  const auto total = std::stoll(ckpt.meta_or("train.total_steps", "-1"));
  if (total != total_steps_) {
    throw std::runtime_error("checkpoint was written for " + std::to_string(total) + " steps, this run has " +
                             std::to_string(total_steps_));
  }
  model_ = std::move(loaded);
  params_ = model_.parameters();
  adam_ = AdamState(params_, AdamOptions{static_cast<real>(config_.train.lr)});
  adam_.step = std::stoll(ckpt.meta_or("adam.step", "0"));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor m = ckpt.get("adam.m." + std::to_string(i));
    const Tensor v = ckpt.get("adam.v." + std::to_string(i));
    if (m.numel() != adam_.m[i].size() || v.numel() != adam_.v[i].size()) {
      throw DimensionError("checkpoint optimiser state " + std::to_string(i) + " has the wrong size");
    }
    adam_.m[i].assign(m.data().begin(), m.data().end());
    adam_.v[i].assign(v.data().begin(), v.data().end());
  }
  step_ = std::stoll(ckpt.meta_or("train.step", "0"));
}

void Trainer::save(const std::filesystem::path& path) const { write_checkpoint(path, to_checkpoint()); }

void Trainer::load(const std::filesystem::path& path) { restore(read_checkpoint(path)); }

ModelParams load_model(const std::filesystem::path& path) { return ModelParams::from_checkpoint(read_checkpoint(path)); }

// ---------------------------------------------------------------------------
// Inference

PatchPlan plan_patches(const PointCloud& cloud, std::size_t n, double coverage_factor) {
  if (cloud.size() < n) {
    throw std::invalid_argument("cloud has " + std::to_string(cloud.size()) + " points, fewer than the patch size " +
                                std::to_string(n));
  }
  const auto wanted = static_cast<std::size_t>(std::ceil(coverage_factor * static_cast<double>(cloud.size()) /
                                                         static_cast<double>(n)));
  PatchPlan plan;
  plan.seeds = farthest_point_sample(cloud, std::clamp<std::size_t>(wanted, 1, cloud.size()), 0);
  std::vector<char> covered(cloud.size(), 0);
  auto add_patch = [&](std::size_t seed) {
    plan.patches.push_back(knn(cloud, cloud[seed], n));
    for (std::size_t i : plan.patches.back()) covered[i] = 1;
  };
  for (std::size_t s : plan.seeds) add_patch(s);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!covered[i]) {
      plan.seeds.push_back(i);
      add_patch(i);
    }
  }
  return plan;
}

PointCloud upsample_cloud(ModelParams& params, const PointCloud& cloud, double coverage_factor) {
  validate(cloud);
  const std::size_t n = params.config.points, r = params.config.ratio;
  const PatchPlan plan = plan_patches(cloud, n, coverage_factor);
  std::vector<NormalizedPatch> outputs(plan.patches.size());
  parallel_for(plan.patches.size(), [&](std::size_t p) {
    NoGradGuard no_grad;
    const PointCloud patch = select(cloud, plan.patches[p]);
    outputs[p].norm = Normalization::fit(patch);
    const PointCloud input = outputs[p].norm.apply(patch);
    ForwardResult fwd = pumfa_forward(params, std::span<const PointCloud>(&input, 1), {NormMode::eval, false});
    outputs[p].points = tensor_to_cloud(fwd.dense);
  });
  return merge_patches(outputs, r * cloud.size());
}

PointCloud upsample_chain(ModelParams& params, const PointCloud& cloud, std::size_t ratio, double coverage_factor) {
  const std::size_t r = params.config.ratio;
  std::size_t passes = 0;
  for (std::size_t acc = 1; acc < ratio; acc *= r) ++passes;
  std::size_t check = 1;
  for (std::size_t i = 0; i < passes; ++i) check *= r;
  if (ratio < r || check != ratio) {
    throw std::invalid_argument("ratio " + std::to_string(ratio) + " is not a power of the model ratio " +
                                std::to_string(r));
  }
  PointCloud out = cloud;
  for (std::size_t i = 0; i < passes; ++i) out = upsample_cloud(params, out, coverage_factor);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate(ModelParams& params, const PipelineConfig& config) {
  const auto& ev = config.eval;
  const std::size_t r = params.config.ratio;
  EvalReport report;
  report.note = "each shape scaled to its ground truth's unit sphere (centroid 0, max radius 1); values x1e-3";
  for (std::size_t m = 0; m < ev.meshes.size(); ++m) {
    TriangleMesh mesh = resolve_mesh(ev.meshes[m]);
    Rng rng = derive_rng(ev.seed, {0xE7A1, m});
    PointCloud gt = sample_mesh(mesh, r * ev.input_points, SamplingMode::poisson, rng);
    PointCloud input = sample_mesh(mesh, ev.input_points, SamplingMode::poisson, rng);
    const Normalization norm = Normalization::fit(gt);
    gt = norm.apply(gt);
    input = norm.apply(input);
    for (auto& v : mesh.vertices) v = (v - norm.centroid) / norm.scale;
    const std::string shape = std::filesystem::path(ev.meshes[m]).stem().string();
    for (std::size_t l = 0; l < ev.noise_levels.size(); ++l) {
      Rng noise_rng = derive_rng(ev.seed, {0x9015E, m, l});
      const PointCloud noisy = add_gaussian_noise(input, ev.noise_levels[l], noise_rng);
      const PointCloud dense = upsample_cloud(params, noisy, config.coverage_factor);
      MetricRow row;
      row.shape = shape;
      row.noise = ev.noise_levels[l];
      row.cd = chamfer_distance(dense, gt);
      row.hd = hausdorff_distance(dense, gt);
      row.p2f = point_to_surface(dense, mesh);
      report.rows.push_back(row);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Attention diagnostics

AttentionReport dump_attention(ModelParams& params, const PointCloud& cloud, const std::vector<std::size_t>& heads,
                               std::size_t top_k) {
  validate(cloud);
  const std::size_t n = params.config.points;
  if (cloud.size() != n) {
    throw std::invalid_argument("attention dump needs exactly " + std::to_string(n) + " points, got " +
                                std::to_string(cloud.size()));
  }
  if (heads.empty()) throw std::invalid_argument("no attention heads selected");
  for (std::size_t h : heads) {
    if (h >= params.config.heads) {
      throw std::out_of_range("head " + std::to_string(h) + " out of range (model has " +
                              std::to_string(params.config.heads) + ")");
    }
  }
  if (top_k == 0) throw std::invalid_argument("top-k must be positive");

  NoGradGuard no_grad;
  const PointCloud input = Normalization::fit(cloud).apply(cloud);
  ForwardResult fwd = pumfa_forward(params, std::span<const PointCloud>(&input, 1), {NormMode::eval, true});

  AttentionReport report;
  report.points = cloud;
  const std::size_t k = std::min(top_k, n);
  for (std::size_t j = 0; j < fwd.gcra_attention.size(); ++j) {
    const AttentionScores& sc = fwd.gcra_attention[j];
    LayerAttention layer;
    layer.layer = j + 1;
    for (std::size_t h : heads) {
      HeadAttention ha;
      ha.head = h;
      ha.scores.reserve(sc.query_rows * sc.key_rows);
      ha.ranking.assign(sc.key_rows, 0.0);
      for (std::size_t i = 0; i < sc.query_rows; ++i) {
        const auto row = sc.row(0, h, i);
        ha.scores.insert(ha.scores.end(), row.begin(), row.end());
        for (std::size_t c = 0; c < sc.key_rows; ++c) ha.ranking[c] += row[c];
      }
      for (double& v : ha.ranking) v /= static_cast<double>(sc.query_rows);
      std::vector<std::size_t> order(sc.key_rows);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return ha.ranking[a] > ha.ranking[b]; });
      ha.top.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(k, order.size())));
      layer.heads.push_back(std::move(ha));
    }
    report.layers.push_back(std::move(layer));
  }
  return report;
}

std::vector<std::filesystem::path> write_attention_overlays(const AttentionReport& report,
                                                            const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  std::vector<std::filesystem::path> written;
  for (const auto& layer : report.layers) {
    std::vector<VertexFlag> flags;
    for (const auto& h : layer.heads) {
      VertexFlag f{"head_" + std::to_string(h.head), std::vector<unsigned char>(report.points.size(), 0)};
      for (std::size_t i : h.top) f.values.at(i) = 1;
      flags.push_back(std::move(f));
    }
    const auto path = directory / ("layer_" + std::to_string(layer.layer) + ".ply");
    write_ply_cloud(path, report.points, flags);
    written.push_back(path);
  }
  return written;
}

}  // namespace pumfa
