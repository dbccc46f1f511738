#include "pumfa/network.hpp"

#include <stdexcept>
#include <string>

namespace pumfa {

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.channels = 8;
  c.expansion = 2;
  c.coarse_channels = 16;
  c.coarse_expansion = 4;
  c.heads = 4;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (points == 0 || ratio == 0 || depth == 0 || channels == 0 || expansion == 0 || coarse_channels == 0 ||
      coarse_expansion == 0 || heads == 0 || patch_size == 0 || sab_depth == 0) {
    fail("all sizes must be positive");
  }
  if (patch_size > points) fail("patch_size " + std::to_string(patch_size) + " exceeds points " + std::to_string(points));
  if (global_width() % heads != 0) fail("K'C' must be divisible by heads");
  if (depth > 1 && channels % heads != 0) fail("C must be divisible by heads");
  if (global_width() % 4 != 0) fail("K'C' must be divisible by 4");
}

std::size_t ModelConfig::feature_width(std::size_t h) const {
  std::size_t w = channels;
  for (std::size_t i = 1; i < h; ++i) w *= expansion;
  return w;
}

std::size_t ModelConfig::refined_width(std::size_t j) const {
  if (j == depth) return 3 * ratio;
  // RGC_j is emitted when querying F_h with h = H − j + 1 and has width K^{h−2}·C.
  const std::size_t h = depth - j + 1;
  return feature_width(h - 1);
}

std::vector<std::size_t> ModelConfig::coarse_plan() const {
  return {3, coarse_channels, global_width(), global_width() / 4, 3 * ratio};
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {{"points", std::to_string(points)},
          {"ratio", std::to_string(ratio)},
          {"depth", std::to_string(depth)},
          {"channels", std::to_string(channels)},
          {"expansion", std::to_string(expansion)},
          {"coarse_channels", std::to_string(coarse_channels)},
          {"coarse_expansion", std::to_string(coarse_expansion)},
          {"heads", std::to_string(heads)},
          {"patch_size", std::to_string(patch_size)},
          {"sab_depth", std::to_string(sab_depth)},
          {"zero_init_residual", zero_init_residual ? "1" : "0"}};
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& values) {
  ModelConfig c;
  auto get = [&](const char* key, std::size_t& field) {
    auto it = values.find(key);
    if (it != values.end()) field = std::stoul(it->second);
  };
  get("points", c.points);
  get("ratio", c.ratio);
  get("depth", c.depth);
  get("channels", c.channels);
  get("expansion", c.expansion);
  get("coarse_channels", c.coarse_channels);
  get("coarse_expansion", c.coarse_expansion);
  get("heads", c.heads);
  get("patch_size", c.patch_size);
  get("sab_depth", c.sab_depth);
  if (auto it = values.find("zero_init_residual"); it != values.end()) c.zero_init_residual = it->second != "0";
  return c;
}

// ---------------------------------------------------------------------------
// ModelParams

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams p;
  p.config = config;
  for (std::size_t h = 1; h <= config.depth; ++h) {
    const std::size_t in = h == 1 ? 3 : config.feature_width(h - 1);
    p.extractor.push_back(make_pt_layer(in, config.feature_width(h), rng));
  }
  const auto plan = config.coarse_plan();
  for (std::size_t l = 0; l + 1 < plan.size(); ++l) {
    const bool last = l + 2 == plan.size();
    p.coarse.push_back(make_pt_layer(plan[l], plan[l + 1], rng, last && config.zero_init_residual));
  }
  p.sab_lift = make_linear(3 * config.ratio, config.global_width(), rng);
  for (std::size_t b = 0; b < config.sab_depth; ++b) {
    p.sab.push_back(make_attention(config.global_width(), config.global_width(), config.heads, rng));
  }
  std::size_t pool = config.global_width();
  for (std::size_t j = 1; j <= config.depth; ++j) {
    const std::size_t h = config.depth - j + 1;
    const std::size_t out = config.refined_width(j);
    p.refiner.push_back(make_gcra(config.feature_width(h), pool, out, config.heads, rng));
    pool = out;
  }
  p.refiner_out = make_linear(3 * config.ratio, 3 * config.ratio, rng, config.zero_init_residual);
  return p;
}

namespace {

void name_linear(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const Linear& l) {
  out.emplace_back(prefix + ".weight", l.weight);
  out.emplace_back(prefix + ".bias", l.bias);
}

void name_perceptron(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const Perceptron& p) {
  name_linear(out, prefix + ".0", p.first);
  name_linear(out, prefix + ".1", p.second);
}

void name_pt(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix, const PTLayerParams& p) {
  name_linear(out, prefix + ".phi", p.phi);
  name_linear(out, prefix + ".psi", p.psi);
  name_linear(out, prefix + ".alpha", p.alpha);
  name_perceptron(out, prefix + ".gamma", p.gamma);
  name_perceptron(out, prefix + ".theta", p.theta);
}

void name_attention(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                    const AttentionParams& a) {
  name_linear(out, prefix + ".query", a.query);
  name_linear(out, prefix + ".key", a.key);
  name_linear(out, prefix + ".value", a.value);
  name_linear(out, prefix + ".output", a.output);
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t i = 0; i < extractor.size(); ++i) name_pt(out, "mfe." + std::to_string(i), extractor[i]);
  for (std::size_t i = 0; i < coarse.size(); ++i) name_pt(out, "cpg." + std::to_string(i), coarse[i]);
  name_linear(out, "sab.lift", sab_lift);
  for (std::size_t i = 0; i < sab.size(); ++i) name_attention(out, "sab." + std::to_string(i), sab[i]);
  for (std::size_t i = 0; i < refiner.size(); ++i) {
    const std::string prefix = "gcr." + std::to_string(i);
    name_attention(out, prefix + ".attn", refiner[i].attention);
    out.emplace_back(prefix + ".bn.gamma", refiner[i].bn_gamma);
    out.emplace_back(prefix + ".bn.beta", refiner[i].bn_beta);
    name_perceptron(out, prefix + ".ff", refiner[i].feed_forward);
  }
  name_linear(out, "gcr.out", refiner_out);
  return out;
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

Checkpoint ModelParams::to_checkpoint() const {
  Checkpoint ckpt;
  for (const auto& [k, v] : config.to_map()) ckpt.meta["model." + k] = v;
  for (const auto& [name, t] : named_parameters()) ckpt.add(name, t);
  for (std::size_t i = 0; i < refiner.size(); ++i) {
    const std::string prefix = "gcr." + std::to_string(i) + ".bn.";
    const auto& s = refiner[i].bn_stats;
    ckpt.add(prefix + "running_mean", Tensor::from({s.mean.size()}, Buffer(s.mean.begin(), s.mean.end())));
    ckpt.add(prefix + "running_var", Tensor::from({s.var.size()}, Buffer(s.var.begin(), s.var.end())));
    ckpt.meta[prefix + "initialized"] = s.initialized ? "1" : "0";
  }
  return ckpt;
}

ModelParams ModelParams::from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> values;
  for (const auto& [k, v] : ckpt.meta) {
    if (k.rfind("model.", 0) == 0) values[k.substr(6)] = v;
  }
  if (values.empty()) throw std::runtime_error("checkpoint carries no model config block");
  ModelParams p = init(ModelConfig::from_map(values), 0);
  for (auto& [name, t] : p.named_parameters()) {
    const Tensor stored = ckpt.get(name);
    if (stored.shape() != t.shape()) {
      throw DimensionError("checkpoint tensor '" + name + "' has shape " + shape_str(stored.shape()) + ", expected " +
                           shape_str(t.shape()));
    }
    Tensor target = t;
    auto dst = target.mutable_data();
    std::copy(stored.data().begin(), stored.data().end(), dst.begin());
  }
  for (std::size_t i = 0; i < p.refiner.size(); ++i) {
    const std::string prefix = "gcr." + std::to_string(i) + ".bn.";
    auto& s = p.refiner[i].bn_stats;
    const Tensor m = ckpt.get(prefix + "running_mean");
    const Tensor v = ckpt.get(prefix + "running_var");
    if (m.numel() != s.mean.size() || v.numel() != s.var.size()) {
      throw DimensionError("checkpoint running statistics for '" + prefix + "' have the wrong size");
    }
    s.mean.assign(m.data().begin(), m.data().end());
    s.var.assign(v.data().begin(), v.data().end());
    s.initialized = ckpt.meta_or(prefix + "initialized", "1") == "1";
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward

Tensor cloud_to_tensor(const PointCloud& cloud) { return clouds_to_tensor(std::span<const PointCloud>(&cloud, 1)); }

Tensor clouds_to_tensor(std::span<const PointCloud> clouds) {
  Buffer v;
  for (const auto& c : clouds) {
    for (const auto& p : c.points) {
      v.push_back(static_cast<real>(p.x()));
      v.push_back(static_cast<real>(p.y()));
      v.push_back(static_cast<real>(p.z()));
    }
  }
  const std::size_t rows = v.size() / 3;
  return Tensor::from({rows, 3}, std::move(v));
}

PointCloud tensor_to_cloud(const Tensor& t, std::size_t first_row, std::size_t rows) {
  if (t.rank() != 2 || t.dim(1) != 3) throw DimensionError("tensor_to_cloud: expected R×3, got " + shape_str(t.shape()));
  if (rows == 0) rows = t.dim(0) - first_row;
  if (first_row + rows > t.dim(0)) throw DimensionError("tensor_to_cloud: row range out of bounds");
  PointCloud c;
  c.points.reserve(rows);
  auto d = t.data();
  for (std::size_t i = first_row; i < first_row + rows; ++i) c.points.emplace_back(d[3 * i], d[3 * i + 1], d[3 * i + 2]);
  return c;
}

PointBatch make_point_batch(std::span<const PointCloud> clouds, std::size_t patch_size) {
  if (clouds.empty()) throw std::invalid_argument("empty batch");
  PointBatch b;
  b.batch = clouds.size();
  b.points = clouds.front().size();
  for (const auto& c : clouds) validate(c);
  b.neighborhood = build_neighborhood(clouds, patch_size);
  b.coords = clouds_to_tensor(clouds);
  return b;
}

Tensor duplicate_points(const Tensor& coords, std::size_t r) {
  std::vector<std::size_t> rows;
  rows.reserve(coords.dim(0) * r);
  for (std::size_t i = 0; i < coords.dim(0); ++i) {
    for (std::size_t j = 0; j < r; ++j) rows.push_back(i);
  }
  return gather_rows(coords, rows);
}

std::vector<Tensor> mfe_forward(const ModelParams& params, const PointBatch& batch) {
  std::vector<Tensor> features;
  Tensor x = batch.coords;
  for (const auto& layer : params.extractor) {
    x = pt_layer(x, batch.neighborhood, layer);
    features.push_back(x);
  }
  return features;
}

CoarseOutput cpg_forward(const ModelParams& params, const PointBatch& batch) {
  Tensor x = batch.coords;
  for (const auto& layer : params.coarse) x = pt_layer(x, batch.neighborhood, layer);
  CoarseOutput out;
  out.offsets = pixel_shuffle(x, params.config.ratio);
  out.coarse = add(duplicate_points(batch.coords, params.config.ratio), out.offsets);
  return out;
}

Tensor sab_forward(const ModelParams& params, const Tensor& coarse, std::size_t groups,
                   std::vector<AttentionScores>* attention) {
  if (coarse.rank() != 2 || coarse.dim(1) != 3 || coarse.dim(0) % params.config.ratio != 0) {
    throw DimensionError("sab_forward: " + shape_str(coarse.shape()) + " is not (r·N)×3 for r=" +
                         std::to_string(params.config.ratio));
  }
  Tensor x = linear(pixel_unshuffle(coarse, params.config.ratio), params.sab_lift);
  for (const auto& block : params.sab) {
    AttentionScores scores;
    x = multihead_attention(x, x, block, groups, attention ? &scores : nullptr);
    if (attention) attention->push_back(std::move(scores));
  }
  return x;
}

RefinerOutput gcr_forward(ModelParams& params, const std::vector<Tensor>& features, const Tensor& global_features,
                          NormMode mode, std::size_t groups, bool capture) {
  const std::size_t depth = params.config.depth;
  if (features.size() != depth) {
    throw DimensionError("gcr_forward: pyramid has " + std::to_string(features.size()) + " levels, expected " +
                         std::to_string(depth));
  }
  if (global_features.rank() != 2 || global_features.dim(1) != params.config.global_width()) {
    throw DimensionError("gcr_forward: GFs " + shape_str(global_features.shape()) + " do not have width K'C'");
  }
  RefinerOutput out;
  Tensor pool = global_features;
  for (std::size_t j = 1; j <= depth; ++j) {
    const Tensor& query = features[depth - j];
    AttentionScores scores;
    pool = gcra(query, pool, params.refiner[j - 1], mode, groups, capture ? &scores : nullptr);
    out.refined.push_back(pool);
    if (capture) out.attention.push_back(std::move(scores));
  }
  out.offsets = pixel_shuffle(linear(pool, params.refiner_out), params.config.ratio);
  return out;
}

ForwardResult pumfa_forward(ModelParams& params, std::span<const PointCloud> inputs, const ForwardOptions& options) {
  for (const auto& c : inputs) {
    if (c.size() != params.config.points) {
      throw DimensionError("pumfa_forward: patch has " + std::to_string(c.size()) + " points, model expects " +
                           std::to_string(params.config.points));
    }
  }
  const PointBatch batch = make_point_batch(inputs, params.config.patch_size);
  ForwardResult r;
  r.features = mfe_forward(params, batch);
  CoarseOutput coarse = cpg_forward(params, batch);
  r.coarse = coarse.coarse;
  r.global_features = sab_forward(params, r.coarse, batch.batch);
  RefinerOutput refined =
      gcr_forward(params, r.features, r.global_features, options.mode, batch.batch, options.capture_attention);
  r.refinement = refined.offsets;
  r.refined = std::move(refined.refined);
  r.gcra_attention = std::move(refined.attention);
  r.dense = add(r.coarse, r.refinement);
  return r;
}

}  // namespace pumfa
