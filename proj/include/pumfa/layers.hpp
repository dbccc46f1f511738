#pragma once

#include "pumfa/geometry.hpp"
#include "pumfa/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace pumfa {

/// y = x·W + b with W stored [in×out].
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
};

/// Uniform fan-in initialisation U(-√(3/in), √(3/in)), zero bias. `zero` gives
/// an all-zero map.
Linear make_linear(std::size_t in, std::size_t out, Rng& rng, bool zero = false);
Tensor linear(const Tensor& x, const Linear& layer);

/// Two linear maps with a ReLU between them.
struct Perceptron {
  Linear first;
  Linear second;
};

Perceptron make_perceptron(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, bool zero_output = false);
Tensor perceptron(const Tensor& x, const Perceptron& p);

/// Feed-forward block; hidden width is max(in, out).
using FeedForwardParams = Perceptron;
FeedForwardParams make_feed_forward(std::size_t in, std::size_t out, Rng& rng);
Tensor feed_forward(const Tensor& x, const FeedForwardParams& params);

// ---------------------------------------------------------------------------
// Point transformer

/// Vector self-attention weights for one point-transformer layer.
///
/// phi/psi/alpha project features, gamma maps relations to per-channel
/// attention logits and theta encodes relative positions.
struct PTLayerParams {
  Linear phi;
  Linear psi;
  Linear alpha;
  Perceptron gamma;
  Perceptron theta;

  std::size_t in() const { return phi.in(); }
  std::size_t out() const { return phi.out(); }
};

/// `zero_output` zeroes alpha and theta's last map so the layer emits zeros.
PTLayerParams make_pt_layer(std::size_t in, std::size_t out, Rng& rng, bool zero_output = false);

/// KNN neighbourhoods of a batch of equally sized clouds stacked row-wise.
struct Neighborhood {
  std::size_t rows = 0;             // total points (batch × points per cloud)
  std::size_t k = 0;
  std::vector<std::size_t> center;  // rows·k, row i repeated k times
  std::vector<std::size_t> index;   // rows·k, global row of each neighbour
  Tensor offsets;                   // (rows·k)×3, p_i − p_j
};

Neighborhood build_neighborhood(std::span<const PointCloud> clouds, std::size_t k);

/// out_i = Σ_j softmax_j(γ(φ(f_i) − ψ(f_j) + θ(p_i − p_j))) ⊙ (α(f_j) + θ(p_i − p_j)),
/// the softmax taken per channel over the k neighbours of i.
Tensor pt_layer(const Tensor& features, const Neighborhood& nbhd, const PTLayerParams& params);
Tensor pt_layer(const Tensor& features, const PointCloud& positions, const PTLayerParams& params, std::size_t k);

// ---------------------------------------------------------------------------
// Attention

struct AttentionParams {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;
};

/// Projects queries of width `query_dim` and pools of width `pool_dim` into
/// `pool_dim` channels split over `heads`. `zero_output` zeroes the output map.
AttentionParams make_attention(std::size_t query_dim, std::size_t pool_dim, std::size_t heads, Rng& rng,
                               bool zero_output = false);

/// Softmax score matrices captured from an attention call, laid out
/// [group][head][query row][key row].
struct AttentionScores {
  std::size_t groups = 0;
  std::size_t heads = 0;
  std::size_t query_rows = 0;
  std::size_t key_rows = 0;
  std::vector<real> values;

  real at(std::size_t g, std::size_t h, std::size_t i, std::size_t j) const;
  std::span<const real> row(std::size_t g, std::size_t h, std::size_t i) const;
};

/// softmax(QKᵀ/√d) V per head, over `groups` independent row blocks.
/// q is (groups·Nq)×D, k and v are (groups·Nk)×D.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                            std::size_t groups, AttentionScores* capture = nullptr);

/// Multihead attention of `query` rows over `pool` rows; output width equals
/// the pool width. Self-attention passes the same tensor twice.
Tensor multihead_attention(const Tensor& query, const Tensor& pool, const AttentionParams& params,
                           std::size_t groups = 1, AttentionScores* capture = nullptr);

// ---------------------------------------------------------------------------
// Global context refining attention

struct GcraParams {
  AttentionParams attention;
  Tensor bn_gamma;
  Tensor bn_beta;
  RunningStats bn_stats;
  FeedForwardParams feed_forward;
};

GcraParams make_gcra(std::size_t query_dim, std::size_t pool_dim, std::size_t out_dim, std::size_t heads, Rng& rng);

/// feed_forward(batch_norm(pool + attention(query, pool))). `normalized`, when
/// given, receives the batch-norm output.
Tensor gcra(const Tensor& query, const Tensor& pool, GcraParams& params, NormMode mode, std::size_t groups = 1,
            AttentionScores* capture = nullptr, Tensor* normalized = nullptr);

// ---------------------------------------------------------------------------
// Layout helpers

/// N×(r·C) → (r·N)×C with out[r·i + j, c] = in[i, j·C + c].
Tensor pixel_shuffle(const Tensor& x, std::size_t r);
/// Inverse of pixel_shuffle: (r·N)×C → N×(r·C).
Tensor pixel_unshuffle(const Tensor& x, std::size_t r);

}  // namespace pumfa
