#include "pumfa/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pumfa {

namespace {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Strided = Eigen::OuterStride<>;
using ConstBlock = Eigen::Map<const RowMat, 0, Strided>;
using Block = Eigen::Map<RowMat, 0, Strided>;

}  // namespace

Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool zero) {
  Buffer w(in * out, 0.0);
  if (!zero) {
    const real bound = std::sqrt(3.0 / static_cast<real>(in));
    std::uniform_real_distribution<real> dist(-bound, bound);
    for (real& v : w) v = dist(rng);
  }
  return Linear{Tensor::from({in, out}, std::move(w), true), Tensor::zeros({out}, true)};
}

Tensor linear(const Tensor& x, const Linear& layer) {
  if (x.rank() != 2 || x.dim(1) != layer.in()) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(layer.weight.shape()));
  }
  return add_row_bias(matmul(x, layer.weight), layer.bias);
}

Perceptron make_perceptron(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, bool zero_output) {
  Perceptron p;
  p.first = make_linear(in, hidden, rng);
  p.second = make_linear(hidden, out, rng, zero_output);
  return p;
}

Tensor perceptron(const Tensor& x, const Perceptron& p) { return linear(relu(linear(x, p.first)), p.second); }

FeedForwardParams make_feed_forward(std::size_t in, std::size_t out, Rng& rng) {
  return make_perceptron(in, std::max(in, out), out, rng);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& params) { return perceptron(x, params); }

// ---------------------------------------------------------------------------
// Point transformer

PTLayerParams make_pt_layer(std::size_t in, std::size_t out, Rng& rng, bool zero_output) {
  PTLayerParams p;
  p.phi = make_linear(in, out, rng);
  p.psi = make_linear(in, out, rng);
  p.alpha = make_linear(in, out, rng, zero_output);
  p.gamma = make_perceptron(out, out, out, rng);
  p.theta = make_perceptron(3, out, out, rng, zero_output);
  return p;
}

Neighborhood build_neighborhood(std::span<const PointCloud> clouds, std::size_t k) {
  if (clouds.empty()) throw std::invalid_argument("build_neighborhood: empty batch");
  const std::size_t n = clouds.front().size();
  Neighborhood nb;
  nb.k = k;
  nb.rows = n * clouds.size();
  nb.center.reserve(nb.rows * k);
  nb.index.reserve(nb.rows * k);
  Buffer offsets;
  offsets.reserve(nb.rows * k * 3);
  for (std::size_t b = 0; b < clouds.size(); ++b) {
    const auto& cloud = clouds[b];
    if (cloud.size() != n) throw DimensionError("build_neighborhood: clouds in a batch must have equal size");
    if (k == 0 || k > n) {
      throw DimensionError("build_neighborhood: patch size " + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
    }
    const auto table = knn_table(cloud, k);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t nbr = table[i * k + j];
        nb.center.push_back(b * n + i);
        nb.index.push_back(b * n + nbr);
        const Vec3 d = cloud[i] - cloud[nbr];
        offsets.push_back(static_cast<real>(d.x()));
        offsets.push_back(static_cast<real>(d.y()));
        offsets.push_back(static_cast<real>(d.z()));
      }
    }
  }
  nb.offsets = Tensor::from({nb.rows * k, 3}, std::move(offsets));
  return nb;
}

Tensor pt_layer(const Tensor& features, const Neighborhood& nbhd, const PTLayerParams& params) {
  if (features.rank() != 2 || features.dim(0) != nbhd.rows) {
    throw DimensionError("pt_layer: features " + shape_str(features.shape()) + " for " + std::to_string(nbhd.rows) +
                         " points");
  }
  const std::size_t rows = nbhd.rows, k = nbhd.k, out = params.out();
  const Tensor query = linear(features, params.phi);
  const Tensor key = linear(features, params.psi);
  const Tensor value = linear(features, params.alpha);
  const Tensor position = perceptron(nbhd.offsets, params.theta);

  const Tensor relation = add(sub(gather_rows(query, nbhd.center), gather_rows(key, nbhd.index)), position);
  const Tensor logits = reshape(perceptron(relation, params.gamma), {rows, k, out});
  const Tensor weights = softmax(logits, 1);
  const Tensor values = reshape(add(gather_rows(value, nbhd.index), position), {rows, k, out});
  return sum_axis(mul(weights, values), 1);
}

Tensor pt_layer(const Tensor& features, const PointCloud& positions, const PTLayerParams& params, std::size_t k) {
  const PointCloud* one = &positions;
  return pt_layer(features, build_neighborhood(std::span<const PointCloud>(one, 1), k), params);
}

// ---------------------------------------------------------------------------
// Attention

AttentionParams make_attention(std::size_t query_dim, std::size_t pool_dim, std::size_t heads, Rng& rng,
                               bool zero_output) {
  if (heads == 0 || pool_dim % heads != 0) {
    throw DimensionError("attention: pool width " + std::to_string(pool_dim) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.query = make_linear(query_dim, pool_dim, rng);
  p.key = make_linear(pool_dim, pool_dim, rng);
  p.value = make_linear(pool_dim, pool_dim, rng);
  p.output = make_linear(pool_dim, pool_dim, rng, zero_output);
  p.heads = heads;
  return p;
}

real AttentionScores::at(std::size_t g, std::size_t h, std::size_t i, std::size_t j) const {
  return values.at(((g * heads + h) * query_rows + i) * key_rows + j);
}

std::span<const real> AttentionScores::row(std::size_t g, std::size_t h, std::size_t i) const {
  const std::size_t offset = ((g * heads + h) * query_rows + i) * key_rows;
  return std::span<const real>(values).subspan(offset, key_rows);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, std::size_t groups,
                            AttentionScores* capture) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.shape() != v.shape() || q.dim(1) != k.dim(1)) {
    throw DimensionError("attention: incompatible q/k/v " + shape_str(q.shape()) + " " + shape_str(k.shape()) + " " +
                         shape_str(v.shape()));
  }
  const std::size_t width = q.dim(1);
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (groups == 0 || q.dim(0) % groups != 0 || k.dim(0) % groups != 0) {
    throw DimensionError("attention: rows not divisible into " + std::to_string(groups) + " groups");
  }
  const auto d = static_cast<Eigen::Index>(width / heads);
  const auto nq = static_cast<Eigen::Index>(q.dim(0) / groups);
  const auto nk = static_cast<Eigen::Index>(k.dim(0) / groups);
  const auto stride = static_cast<Eigen::Index>(width);
  const real inv_scale = 1.0 / std::sqrt(static_cast<real>(d));

  Buffer out(q.numel(), 0.0);
  Buffer probs(groups * heads * static_cast<std::size_t>(nq * nk));
  auto block_offset = [&](std::size_t g, std::size_t h, Eigen::Index rows) {
    return static_cast<std::size_t>(g) * static_cast<std::size_t>(rows) * width + h * static_cast<std::size_t>(d);
  };
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t h = 0; h < heads; ++h) {
      ConstBlock qh(q.data().data() + block_offset(g, h, nq), nq, d, Strided(stride));
      ConstBlock kh(k.data().data() + block_offset(g, h, nk), nk, d, Strided(stride));
      ConstBlock vh(v.data().data() + block_offset(g, h, nk), nk, d, Strided(stride));
      Eigen::Map<RowMat> p(probs.data() + (g * heads + h) * static_cast<std::size_t>(nq * nk), nq, nk);
      p.noalias() = (qh * kh.transpose()) * inv_scale;
      for (Eigen::Index i = 0; i < nq; ++i) {
        const real mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
      }
      Block oh(out.data() + block_offset(g, h, nq), nq, d, Strided(stride));
      oh.noalias() = p * vh;
    }
  }
  if (capture) {
    capture->groups = groups;
    capture->heads = heads;
    capture->query_rows = static_cast<std::size_t>(nq);
    capture->key_rows = static_cast<std::size_t>(nk);
    capture->values.assign(probs.begin(), probs.end());
  }
  if (!grad_enabled() || !(q.requires_grad() || k.requires_grad() || v.requires_grad())) {
    return Tensor::from(q.shape(), std::move(out));
  }
  return Tensor::make_result(
      q.shape(), std::move(out), {q, k, v},
      [q, k, v, heads, groups, d, nq, nk, stride, width, inv_scale, probs = std::move(probs)](std::span<const real> g_out) {
        auto offset = [&](std::size_t g, std::size_t h, Eigen::Index rows) {
          return g * static_cast<std::size_t>(rows) * width + h * static_cast<std::size_t>(d);
        };
        RowMat dp(nq, nk), ds(nq, nk);
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t h = 0; h < heads; ++h) {
            Eigen::Map<const RowMat> p(probs.data() + (g * heads + h) * static_cast<std::size_t>(nq * nk), nq, nk);
            ConstBlock go(g_out.data() + offset(g, h, nq), nq, d, Strided(stride));
            ConstBlock qh(q.data().data() + offset(g, h, nq), nq, d, Strided(stride));
            ConstBlock kh(k.data().data() + offset(g, h, nk), nk, d, Strided(stride));
            ConstBlock vh(v.data().data() + offset(g, h, nk), nk, d, Strided(stride));
            if (v.requires_grad()) {
              Block gv(v.grad_buffer().data() + offset(g, h, nk), nk, d, Strided(stride));
              gv.noalias() += p.transpose() * go;
            }
            if (!q.requires_grad() && !k.requires_grad()) continue;
            dp.noalias() = go * vh.transpose();
            for (Eigen::Index i = 0; i < nq; ++i) {
              const real dot = dp.row(i).dot(p.row(i));
              ds.row(i) = p.row(i).array() * (dp.row(i).array() - dot);
            }
            ds *= inv_scale;
            if (q.requires_grad()) {
              Block gq(q.grad_buffer().data() + offset(g, h, nq), nq, d, Strided(stride));
              gq.noalias() += ds * kh;
            }
            if (k.requires_grad()) {
              Block gk(k.grad_buffer().data() + offset(g, h, nk), nk, d, Strided(stride));
              gk.noalias() += ds.transpose() * qh;
            }
          }
        }
      });
}

Tensor multihead_attention(const Tensor& query, const Tensor& pool, const AttentionParams& params, std::size_t groups,
                           AttentionScores* capture) {
  const Tensor q = linear(query, params.query);
  const Tensor k = linear(pool, params.key);
  const Tensor v = linear(pool, params.value);
  return linear(scaled_dot_attention(q, k, v, params.heads, groups, capture), params.output);
}

// ---------------------------------------------------------------------------
// GCRA

GcraParams make_gcra(std::size_t query_dim, std::size_t pool_dim, std::size_t out_dim, std::size_t heads, Rng& rng) {
  GcraParams p;
  p.attention = make_attention(query_dim, pool_dim, heads, rng);
  p.bn_gamma = Tensor::full({pool_dim}, 1.0, true);
  p.bn_beta = Tensor::zeros({pool_dim}, true);
  p.bn_stats = RunningStats::identity(pool_dim);
  p.feed_forward = make_feed_forward(pool_dim, out_dim, rng);
  return p;
}

Tensor gcra(const Tensor& query, const Tensor& pool, GcraParams& params, NormMode mode, std::size_t groups,
            AttentionScores* capture, Tensor* normalized) {
  const Tensor attended = multihead_attention(query, pool, params.attention, groups, capture);
  const Tensor bn = batch_norm(add(pool, attended), params.bn_gamma, params.bn_beta, params.bn_stats, mode);
  if (normalized) *normalized = bn;
  return feed_forward(bn, params.feed_forward);
}

// ---------------------------------------------------------------------------
// Layout

Tensor pixel_shuffle(const Tensor& x, std::size_t r) {
  if (x.rank() != 2 || r == 0 || x.dim(1) % r != 0) {
    throw DimensionError("pixel_shuffle: " + shape_str(x.shape()) + " channels not divisible by " + std::to_string(r));
  }
  return reshape(x, {x.dim(0) * r, x.dim(1) / r});
}

Tensor pixel_unshuffle(const Tensor& x, std::size_t r) {
  if (x.rank() != 2 || r == 0 || x.dim(0) % r != 0) {
    throw DimensionError("pixel_unshuffle: " + shape_str(x.shape()) + " rows not divisible by " + std::to_string(r));
  }
  return reshape(x, {x.dim(0) / r, x.dim(1) * r});
}

}  // namespace pumfa
