#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pumfa {

/// Element type of every tensor. Files store float32 regardless.
using real = double;

/// Tensor storage. Over-aligned so that vectorised kernels see the same
/// alignment on every run and reductions stay bit-reproducible.
using Buffer = std::vector<real, Eigen::aligned_allocator<real>>;

using Shape = std::vector<std::size_t>;

/// Raised when operand extents are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense row-major tensor with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies refer to the same node. Operations
/// build a graph on the fly whenever an operand requires gradients and
/// gradient recording is enabled on the calling thread.
class Tensor {
 public:
  /// Receives the gradient of the output and pushes it to the operands.
  using BackwardFn = std::function<void(std::span<const real> out_grad)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, Buffer values, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  /// Creates the result of a differentiable op. `backward` is dropped when no
  /// parent requires gradients or recording is disabled.
  static Tensor make_result(Shape shape, Buffer values,
                            std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const real> data() const;
  /// Direct write access; meant for leaves (initialisation, optimiser updates).
  std::span<real> mutable_data();

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const real> grad() const;
  /// Gradient buffer, allocated (zeroed) on first access.
  std::span<real> grad_buffer() const;
  void zero_grad();

  real item() const;
  real at(std::size_t i) const;
  real at(std::size_t i, std::size_t j) const;

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
  /// interior gradients are reset at the start of every sweep.
  void backward() const;

  /// Same values, no graph attachment, no gradient requirement.
  Tensor detach() const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Elementwise (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, real factor);
Tensor add_scalar(const Tensor& x, real value);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);

/// x[R×F] + bias[F], bias broadcast over rows.
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// a[m×k] · b[k×n].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces `axis` away.
Tensor sum_axis(const Tensor& x, std::size_t axis);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Same data under a new shape with equal element count.
Tensor reshape(const Tensor& x, Shape shape);

/// out[i] = x[rows[i]] for a 2-D x; gradients scatter-add back.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Concatenates 2-D tensors with equal row count along columns.
Tensor concat_cols(const std::vector<Tensor>& parts);

/// train: batch statistics, running stats updated. batch: batch statistics,
/// running stats untouched. eval: running stats only.
enum class NormMode { train, batch, eval };

/// Per-channel running statistics for batch_norm.
struct RunningStats {
  std::vector<real> mean;
  std::vector<real> var;
  bool initialized = false;
  real momentum = 0.1;
  real eps = 1e-5;

  /// Stats holding mean 0 and variance 1 for `channels` features.
  static RunningStats identity(std::size_t channels);
};

/// Normalises x (last axis = features) over all leading axes. Train mode uses
/// batch statistics and updates `stats`; eval mode reads `stats` only.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  RunningStats& stats, NormMode mode);

}  // namespace pumfa
