#pragma once

// Dense 2-D tensors with tape-free reverse-mode differentiation.
//
// Every op returns a Var whose node remembers its inputs and a backward rule
// whenever any input requires a gradient. backward() walks the nodes reachable
// from a scalar loss in reverse topological order. Values are checked after
// every forward op and every gradient before it is propagated; a NaN or Inf
// raises NumericFault naming the op.

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace interloc::tensor {

/// Cache-line aligned storage. Vectorized kernels pick their code path from the buffer
/// alignment, so a fixed alignment keeps results bitwise reproducible across runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<T> data);

  static Tensor scalar(T v) { return Tensor(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::array<std::size_t, 2> shape() const noexcept { return {rows_, cols_}; }
  bool empty() const noexcept { return data_.empty(); }

  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  T item() const;

  bool all_finite() const noexcept;
  void fill(T v);

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T, AlignedAllocator<T>> data_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until first written
  bool requires_grad = false;
  bool is_leaf = true;
  std::string_view op = "leaf";
  std::string name;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var leaf(Tensor<T> value, bool requires_grad = false, std::string name = {});
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  /// Gradient buffer; empty tensor when nothing has been accumulated.
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad();
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const std::string& name() const { return node_->name; }
  std::string_view op() const { return node_->op; }

  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  T item() const { return node_->value.item(); }

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const noexcept { return node_; }
  explicit operator bool() const noexcept { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a gradient.
/// `leaves`, when given, must all be reachable; DisconnectedGraph otherwise.
template <typename T>
void backward(const Var<T>& loss, std::span<const Var<T>> leaves = {});

// --- forward ops -----------------------------------------------------------

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x * w + b with b a 1 x out row broadcast over rows.
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b);
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
/// Adds a 1 x c row to every row of a.
template <typename T> Var<T> add_row(const Var<T>& a, const Var<T>& row);
template <typename T> Var<T> scale(const Var<T>& a, T s);
/// alpha * x + beta with 1 x 1 alpha and beta.
template <typename T> Var<T> affine(const Var<T>& x, const Var<T>& alpha, const Var<T>& beta);
/// c0 + c1 * x with constant coefficients.
template <typename T> Var<T> affine_const(const Var<T>& x, T c1, T c0);
template <typename T> Var<T> clamp(const Var<T>& x, T lo, T hi);
/// Multiplies row i of x (n x c) by s(i) where s is n x 1.
template <typename T> Var<T> row_scale(const Var<T>& x, const Var<T>& s);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T> Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end);
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
/// Elementwise mean of equally-shaped tensors, summed in the given order.
template <typename T> Var<T> mean_of(std::span<const Var<T>> parts);
template <typename T> Var<T> transpose(const Var<T>& x);
template <typename T> Var<T> softmax_rows(const Var<T>& x);
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> softplus(const Var<T>& x);

/// softmax(Q K^T / sqrt(d_k) + mask) V, computed independently per head over column blocks.
/// `mask`, when given, is an additive rows(Q) x rows(K) constant.
template <typename T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                            std::size_t heads = 1, const Tensor<T>* mask = nullptr);

// --- losses (targets and masks are constants) --------------------------------

inline constexpr double kBceClamp = 1e-7;

/// Masked mean binary cross-entropy; pred is clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var<T> bce_loss(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask);
template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask);
template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask);

/// Standard sinusoidal encodings for the given positions (rows) and width.
template <typename T>
Tensor<T> sinusoidal_encoding(std::span<const double> positions, std::size_t dim);

}  // namespace interloc::tensor
