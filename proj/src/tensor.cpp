#include "pumfa/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace pumfa {

namespace detail {

struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  Tensor::BackwardFn backward;
};

}  // namespace detail

namespace {

thread_local bool t_grad_enabled = true;

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) counts.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i < axis) s.outer *= shape[i];
    else if (i == axis) s.extent = shape[i];
    else s.inner *= shape[i];
  }
  return s;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::from(Shape shape, Buffer values, bool requires_grad) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  Buffer values(shape_numel(shape), value);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(real value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::make_result(Shape shape, Buffer values, std::vector<Tensor> parents,
                           BackwardFn backward) {
  Tensor out = from(std::move(shape), std::move(values), false);
  if (!t_grad_enabled) return out;
  bool any = std::any_of(parents.begin(), parents.end(),
                         [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->leaf = false;
  for (auto& p : parents) {
    if (p.defined() && p.requires_grad()) out.node_->parents.push_back(p.node_);
  }
  out.node_->backward = std::move(backward);
  return out;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const real> Tensor::data() const { return node_->data; }
std::span<real> Tensor::mutable_data() { return node_->data; }

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const real> Tensor::grad() const { return node_->grad; }

std::span<real> Tensor::grad_buffer() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

real Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape()));
  return node_->data[0];
}

real Tensor::at(std::size_t i) const { return node_->data.at(i); }

real Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2 || i >= dim(0) || j >= dim(1)) throw DimensionError("index out of range");
  return node_->data[i * dim(1) + j];
}

void Tensor::backward() const {
  if (numel() != 1) throw DimensionError("backward() needs a scalar loss, got " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) {
    if (!n->leaf) n->grad.assign(n->data.size(), 0.0);
  }
  if (node_->grad.empty()) node_->grad.assign(1, 0.0);
  node_->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->grad);
  }
}

Tensor Tensor::detach() const {
  return from(node_->shape, node_->data, false);
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const real> g) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto tg = t->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) tg[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const real> g) {
    if (a.requires_grad()) {
      auto ag = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i];
    }
    if (b.requires_grad()) {
      auto bg = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) bg[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b](std::span<const real> g) {
    auto ad = a.data(), bd = b.data();
    if (a.requires_grad()) {
      auto ag = a.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto bg = b.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) bg[i] += g[i] * ad[i];
    }
  });
}

Tensor scale(const Tensor& x, real factor) {
  Buffer out(x.data().begin(), x.data().end());
  for (real& v : out) v *= factor;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, factor](std::span<const real> g) {
    auto xg = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += factor * g[i];
  });
}

Tensor add_scalar(const Tensor& x, real value) {
  Buffer out(x.data().begin(), x.data().end());
  for (real& v : out) v += value;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x](std::span<const real> g) {
    auto xg = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
  });
}

Tensor relu(const Tensor& x) {
  Buffer out(x.data().begin(), x.data().end());
  for (real& v : out) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x](std::span<const real> g) {
    auto xd = x.data();
    auto xg = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xd[i] > 0.0) xg[i] += g[i];
    }
  });
}

Tensor exp(const Tensor& x) {
  Buffer out(x.data().begin(), x.data().end());
  for (real& v : out) v = std::exp(v);
  if (!grad_enabled() || !x.requires_grad()) return Tensor::from(x.shape(), std::move(out));
  Buffer saved = out;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, y = std::move(saved)](std::span<const real> g) {
    auto xg = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * y[i];
  });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (bias.numel() != cols) {
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " vs input " + shape_str(x.shape()));
  }
  Buffer out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bd[c];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, bias},
                             [x, bias, rows, cols](std::span<const real> g) {
                               if (x.requires_grad()) {
                                 auto xg = x.grad_buffer();
                                 for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
                               }
                               if (bias.requires_grad()) {
                                 auto bg = bias.grad_buffer();
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t c = 0; c < cols; ++c) bg[c] += g[r * cols + c];
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  Buffer out(static_cast<std::size_t>(m * n));
  MapMat(out.data(), m, n).noalias() = ConstMapMat(a.data().data(), m, k) * ConstMapMat(b.data().data(), k, n);
  return Tensor::make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b},
                             [a, b, m, k, n](std::span<const real> g) {
                               ConstMapMat gm(g.data(), m, n);
                               if (a.requires_grad()) {
                                 MapMat(a.grad_buffer().data(), m, k).noalias() +=
                                     gm * ConstMapMat(b.data().data(), k, n).transpose();
                               }
                               if (b.requires_grad()) {
                                 MapMat(b.grad_buffer().data(), k, n).noalias() +=
                                     ConstMapMat(a.data().data(), m, k).transpose() * gm;
                               }
                             });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (real v : x.data()) acc += v;
  return Tensor::make_result({1}, {static_cast<real>(acc)}, {x}, [x](std::span<const real> g) {
    auto xg = x.grad_buffer();
    for (real& v : xg) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (real v : x.data()) acc += v;
  const real inv = 1.0 / static_cast<real>(x.numel());
  return Tensor::make_result({1}, {static_cast<real>(acc / static_cast<double>(x.numel()))}, {x},
                             [x, inv](std::span<const real> g) {
                               auto xg = x.grad_buffer();
                               for (real& v : xg) v += g[0] * inv;
                             });
}

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("sum_axis: axis out of range for " + shape_str(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  Buffer out(s.outer * s.inner, 0.0);
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const real* src = xd.data() + (o * s.extent + e) * s.inner;
      real* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [x, s](std::span<const real> g) {
    auto xg = x.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        real* dst = xg.data() + (o * s.extent + e) * s.inner;
        const real* src = g.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  Buffer out(x.numel());
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      real mx = xd[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, xd[base + e * s.inner]);
      real total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        real v = std::exp(xd[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      const real inv = 1.0 / total;
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] *= inv;
    }
  }
  if (!grad_enabled() || !x.requires_grad()) return Tensor::from(x.shape(), std::move(out));
  Buffer saved = out;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, s, y = std::move(saved)](std::span<const real> g) {
    auto xg = x.grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        real dot = 0.0;
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t idx = base + e * s.inner;
          xg[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Buffer out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [x](std::span<const real> g) {
    auto xg = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t n = x.dim(0), cols = x.dim(1);
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  Buffer out(rows.size() * cols);
  auto xd = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(xd.data() + rows[i] * cols, cols, out.data() + i * cols);
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return Tensor::make_result({rows.size(), cols}, std::move(out), {x},
                             [x, cols, index = std::move(index)](std::span<const real> g) {
                               auto xg = x.grad_buffer();
                               for (std::size_t i = 0; i < index.size(); ++i) {
                                 real* dst = xg.data() + index[i] * cols;
                                 const real* src = g.data() + i * cols;
                                 for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                               }
                             });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    offsets.push_back(total);
    total += p.dim(1);
  }
  Buffer out(rows * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].dim(1);
    auto pd = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(pd.data() + r * w, w, out.data() + r * total + offsets[k]);
  }
  return Tensor::make_result({rows, total}, std::move(out), parts,
                             [parts, offsets, rows, total](std::span<const real> g) {
                               for (std::size_t k = 0; k < parts.size(); ++k) {
                                 if (!parts[k].requires_grad()) continue;
                                 const std::size_t w = parts[k].dim(1);
                                 auto pg = parts[k].grad_buffer();
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   for (std::size_t c = 0; c < w; ++c) pg[r * w + c] += g[r * total + offsets[k] + c];
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Batch normalisation

RunningStats RunningStats::identity(std::size_t channels) {
  RunningStats s;
  s.mean.assign(channels, 0.0);
  s.var.assign(channels, 1.0);
  s.initialized = true;
  return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                  NormMode mode) {
  if (x.rank() < 2) throw DimensionError("batch_norm: need rank >= 2, got " + shape_str(x.shape()));
  const std::size_t features = x.shape().back();
  const std::size_t rows = x.numel() / features;
  if (gamma.numel() != features || beta.numel() != features) {
    throw DimensionError("batch_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " vs features of " + shape_str(x.shape()));
  }
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<real> mu(features, 0.0), inv_std(features, 0.0);

  if (mode == NormMode::eval) {
    if (!stats.initialized) throw std::logic_error("batch_norm: eval mode requested before running statistics exist");
    if (stats.mean.size() != features || stats.var.size() != features) {
      throw DimensionError("batch_norm: running statistics have the wrong channel count");
    }
    for (std::size_t f = 0; f < features; ++f) {
      mu[f] = stats.mean[f];
      inv_std[f] = 1.0 / std::sqrt(stats.var[f] + stats.eps);
    }
  } else {
    if (rows < 2) throw std::invalid_argument("batch_norm: training needs at least two rows per channel");
    std::vector<double> acc(features, 0.0), acc2(features, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < features; ++f) acc[f] += xd[r * features + f];
    }
    for (std::size_t f = 0; f < features; ++f) acc[f] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < features; ++f) {
        const double d = xd[r * features + f] - acc[f];
        acc2[f] += d * d;
      }
    }
    const bool update = mode == NormMode::train;
    if (update && stats.mean.size() != features) {
      stats = RunningStats{std::vector<real>(features, 0.0), std::vector<real>(features, 1.0), false,
                           stats.momentum, stats.eps};
    }
    for (std::size_t f = 0; f < features; ++f) {
      const double var = acc2[f] / static_cast<double>(rows);
      const double unbiased = acc2[f] / static_cast<double>(rows - 1);
      mu[f] = static_cast<real>(acc[f]);
      inv_std[f] = static_cast<real>(1.0 / std::sqrt(var + stats.eps));
      if (!update) continue;
      if (stats.initialized) {
        stats.mean[f] = (1.0 - stats.momentum) * stats.mean[f] + stats.momentum * mu[f];
        stats.var[f] = (1.0 - stats.momentum) * stats.var[f] + stats.momentum * static_cast<real>(unbiased);
      } else {
        stats.mean[f] = mu[f];
        stats.var[f] = static_cast<real>(unbiased);
      }
    }
    if (update) stats.initialized = true;
  }

  Buffer xhat(x.numel()), out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t i = r * features + f;
      xhat[i] = (xd[i] - mu[f]) * inv_std[f];
      out[i] = gd[f] * xhat[i] + bd[f];
    }
  }
  if (!grad_enabled() || !(x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    return Tensor::from(x.shape(), std::move(out));
  }
  const bool batch_stats = mode != NormMode::eval;
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, features, batch_stats, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](std::span<const real> g) {
        auto gd = gamma.data();
        std::vector<double> sum_g(features, 0.0), sum_gx(features, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t f = 0; f < features; ++f) {
            const std::size_t i = r * features + f;
            sum_g[f] += g[i];
            sum_gx[f] += g[i] * xhat[i];
          }
        }
        if (gamma.requires_grad()) {
          auto gg = gamma.grad_buffer();
          for (std::size_t f = 0; f < features; ++f) gg[f] += static_cast<real>(sum_gx[f]);
        }
        if (beta.requires_grad()) {
          auto bg = beta.grad_buffer();
          for (std::size_t f = 0; f < features; ++f) bg[f] += static_cast<real>(sum_g[f]);
        }
        if (!x.requires_grad()) return;
        auto xg = x.grad_buffer();
        const double inv_rows = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t f = 0; f < features; ++f) {
            const std::size_t i = r * features + f;
            double d = g[i];
            if (batch_stats) d -= sum_g[f] * inv_rows + xhat[i] * sum_gx[f] * inv_rows;
            xg[i] += static_cast<real>(gd[f] * inv_std[f] * d);
          }
        }
      });
}

}  // namespace pumfa
