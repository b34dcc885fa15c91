#include "interloc/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "interloc/error.hpp"

namespace interloc::tensor {

namespace {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
Eigen::Map<EMat<T>> emap(Tensor<T>& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

template <typename T>
Eigen::Map<const EMat<T>> emap(const Tensor<T>& t) {
  return {t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

std::string shape_str(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

template <typename T>
void require_same_shape(std::string_view op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.rows(), a.cols()) + " vs " +
                        shape_str(b.rows(), b.cols()));
}

template <typename T>
Tensor<T>& grad_of(Node<T>& n) {
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
using Backward = std::function<void(Node<T>&)>;

template <typename T>
Var<T> make_result(std::string_view op, Tensor<T> value,
                   std::initializer_list<std::reference_wrapper<const Var<T>>> inputs,
                   Backward<T> fn) {
  if (!value.all_finite())
    throw NumericFault("non-finite value produced by op '" + std::string(op) + "'");
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  for (const Var<T>& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  if (node->requires_grad) {
    for (const Var<T>& in : inputs) node->inputs.push_back(in.shared());
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_result_n(std::string_view op, Tensor<T> value, std::span<const Var<T>> inputs,
                     Backward<T> fn) {
  if (!value.all_finite())
    throw NumericFault("non-finite value produced by op '" + std::string(op) + "'");
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  for (const auto& in : inputs) node->requires_grad = node->requires_grad || in.requires_grad();
  if (node->requires_grad) {
    for (const auto& in : inputs) node->inputs.push_back(in.shared());
    node->backward = std::move(fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
bool wants(const Node<T>& n, std::size_t i) {
  return n.inputs[i]->requires_grad;
}

}  // namespace

// --- Tensor ------------------------------------------------------------------

template <typename T>
Tensor<T>::Tensor(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
  if (data_.size() != rows_ * cols_)
    throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) + " does not match " +
                        shape_str(rows_, cols_));
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeMismatch("item() on " + shape_str(rows_, cols_));
  return data_[0];
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

// --- Var ---------------------------------------------------------------------

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value, bool requires_grad, std::string name) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->name = std::move(name);
  return Var<T>(std::move(node));
}

template <typename T>
Tensor<T>& Var<T>::mutable_grad() {
  return grad_of(*node_);
}

template <typename T>
void Var<T>::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(T(0));
}

// --- backward ----------------------------------------------------------------

template <typename T>
void backward(const Var<T>& loss, std::span<const Var<T>> leaves) {
  if (loss.value().size() != 1)
    throw ShapeMismatch("backward() needs a scalar loss, got " +
                        shape_str(loss.rows(), loss.cols()));
  if (!loss.requires_grad()) throw DisconnectedGraph("loss does not depend on any trainable leaf");

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (const auto& leaf : leaves) {
    if (!visited.count(leaf.node()))
      throw DisconnectedGraph("leaf '" + leaf.name() + "' is not reachable from the loss");
  }

  for (Node<T>* n : order)
    if (!n->is_leaf) n->grad = Tensor<T>(n->value.rows(), n->value.cols());
  grad_of(*loss.node()).data()[0] += T(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf || !n->backward) continue;
    if (!n->grad.all_finite())
      throw NumericFault("non-finite gradient flowing into op '" + std::string(n->op) + "'");
    n->backward(*n);
  }
  for (Node<T>* n : order)
    if (n->is_leaf && !n->grad.all_finite())
      throw NumericFault("non-finite gradient on leaf '" + n->name + "'");
}

// --- ops -----------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows())
    throw ShapeMismatch("matmul: " + shape_str(a.rows(), a.cols()) + " * " +
                        shape_str(b.rows(), b.cols()));
  Tensor<T> out(a.rows(), b.cols());
  emap(out).noalias() = emap(a.value()) * emap(b.value());
  return make_result<T>("matmul", std::move(out), {a, b}, [](Node<T>& n) {
    auto& A = *n.inputs[0];
    auto& B = *n.inputs[1];
    if (A.requires_grad) emap(grad_of(A)).noalias() += emap(n.grad) * emap(B.value).transpose();
    if (B.requires_grad) emap(grad_of(B)).noalias() += emap(A.value).transpose() * emap(n.grad);
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
    throw ShapeMismatch("linear: x " + shape_str(x.rows(), x.cols()) + ", w " +
                        shape_str(w.rows(), w.cols()) + ", b " + shape_str(b.rows(), b.cols()));
  Tensor<T> out(x.rows(), w.cols());
  auto o = emap(out);
  o.noalias() = emap(x.value()) * emap(w.value());
  o.rowwise() += emap(b.value()).row(0);
  return make_result<T>("linear", std::move(out), {x, w, b}, [](Node<T>& n) {
    auto& X = *n.inputs[0];
    auto& W = *n.inputs[1];
    auto& B = *n.inputs[2];
    auto g = emap(n.grad);
    if (X.requires_grad) emap(grad_of(X)).noalias() += g * emap(W.value).transpose();
    if (W.requires_grad) emap(grad_of(W)).noalias() += emap(X.value).transpose() * g;
    if (B.requires_grad) emap(grad_of(B)).row(0) += g.colwise().sum();
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape("add", a.value(), b.value());
  Tensor<T> out(a.rows(), a.cols());
  emap(out) = emap(a.value()) + emap(b.value());
  return make_result<T>("add", std::move(out), {a, b}, [](Node<T>& n) {
    for (auto& in : n.inputs)
      if (in->requires_grad) emap(grad_of(*in)) += emap(n.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor<T> out(a.rows(), a.cols());
  emap(out) = emap(a.value()) - emap(b.value());
  return make_result<T>("sub", std::move(out), {a, b}, [](Node<T>& n) {
    if (wants(n, 0)) emap(grad_of(*n.inputs[0])) += emap(n.grad);
    if (wants(n, 1)) emap(grad_of(*n.inputs[1])) -= emap(n.grad);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor<T> out(a.rows(), a.cols());
  emap(out) = emap(a.value()).cwiseProduct(emap(b.value()));
  return make_result<T>("mul", std::move(out), {a, b}, [](Node<T>& n) {
    auto& A = *n.inputs[0];
    auto& B = *n.inputs[1];
    if (A.requires_grad) emap(grad_of(A)) += emap(n.grad).cwiseProduct(emap(B.value));
    if (B.requires_grad) emap(grad_of(B)) += emap(n.grad).cwiseProduct(emap(A.value));
  });
}

template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw ShapeMismatch("add_row: " + shape_str(a.rows(), a.cols()) + " + " +
                        shape_str(row.rows(), row.cols()));
  Tensor<T> out(a.rows(), a.cols());
  emap(out) = emap(a.value());
  emap(out).rowwise() += emap(row.value()).row(0);
  return make_result<T>("add_row", std::move(out), {a, row}, [](Node<T>& n) {
    if (wants(n, 0)) emap(grad_of(*n.inputs[0])) += emap(n.grad);
    if (wants(n, 1)) emap(grad_of(*n.inputs[1])).row(0) += emap(n.grad).colwise().sum();
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out(a.rows(), a.cols());
  emap(out) = emap(a.value()) * s;
  return make_result<T>("scale", std::move(out), {a}, [s](Node<T>& n) {
    emap(grad_of(*n.inputs[0])) += emap(n.grad) * s;
  });
}

template <typename T>
Var<T> affine(const Var<T>& x, const Var<T>& alpha, const Var<T>& beta) {
  if (alpha.value().size() != 1 || beta.value().size() != 1)
    throw ShapeMismatch("affine: alpha and beta must be 1x1");
  const T a = alpha.item(), b = beta.item();
  Tensor<T> out(x.rows(), x.cols());
  emap(out) = (emap(x.value()).array() * a + b).matrix();
  return make_result<T>("affine", std::move(out), {x, alpha, beta}, [a](Node<T>& n) {
    auto g = emap(n.grad);
    if (wants(n, 0)) emap(grad_of(*n.inputs[0])) += g * a;
    if (wants(n, 1))
      grad_of(*n.inputs[1]).data()[0] += g.cwiseProduct(emap(n.inputs[0]->value)).sum();
    if (wants(n, 2)) grad_of(*n.inputs[2]).data()[0] += g.sum();
  });
}

template <typename T>
Var<T> affine_const(const Var<T>& x, T c1, T c0) {
  Tensor<T> out(x.rows(), x.cols());
  emap(out) = (emap(x.value()).array() * c1 + c0).matrix();
  return make_result<T>("affine_const", std::move(out), {x}, [c1](Node<T>& n) {
    emap(grad_of(*n.inputs[0])) += emap(n.grad) * c1;
  });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Tensor<T> out(x.rows(), x.cols());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) out.data()[i] = std::clamp(in[i], lo, hi);
  return make_result<T>("clamp", std::move(out), {x}, [lo, hi](Node<T>& n) {
    auto& g = grad_of(*n.inputs[0]);
    const auto in = n.inputs[0]->value.data();
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] >= lo && in[i] <= hi) g.data()[i] += n.grad.data()[i];
  });
}

template <typename T>
Var<T> row_scale(const Var<T>& x, const Var<T>& s) {
  if (s.rows() != x.rows() || s.cols() != 1)
    throw ShapeMismatch("row_scale: " + shape_str(x.rows(), x.cols()) + " by " +
                        shape_str(s.rows(), s.cols()));
  Tensor<T> out(x.rows(), x.cols());
  emap(out) = emap(s.value()).col(0).asDiagonal() * emap(x.value());
  return make_result<T>("row_scale", std::move(out), {x, s}, [](Node<T>& n) {
    auto& X = *n.inputs[0];
    auto& S = *n.inputs[1];
    if (X.requires_grad) emap(grad_of(X)) += emap(S.value).col(0).asDiagonal() * emap(n.grad);
    if (S.requires_grad)
      emap(grad_of(S)).col(0) += emap(n.grad).cwiseProduct(emap(X.value)).rowwise().sum();
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  std::size_t rows = 0;
  const std::size_t cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
    rows += p.rows();
  }
  Tensor<T> out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.raw() + offset * cols);
    offset += p.rows();
  }
  return make_result_n<T>("concat_rows", std::move(out), parts, [](Node<T>& n) {
    std::size_t offset = 0;
    const std::size_t cols = n.value.cols();
    for (auto& in : n.inputs) {
      const std::size_t len = in->value.size();
      if (in->requires_grad) {
        auto& g = grad_of(*in);
        const T* src = n.grad.raw() + offset * cols;
        for (std::size_t i = 0; i < len; ++i) g.data()[i] += src[i];
      }
      offset += in->value.rows();
    }
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.rows())
    throw ShapeMismatch("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") of " + std::to_string(x.rows()) + " rows");
  const std::size_t cols = x.cols();
  Tensor<T> out(end - begin, cols);
  std::copy(x.value().raw() + begin * cols, x.value().raw() + end * cols, out.raw());
  return make_result<T>("slice_rows", std::move(out), {x}, [begin, cols](Node<T>& n) {
    T* dst = grad_of(*n.inputs[0]).raw() + begin * cols;
    for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad.data()[i];
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& x, std::size_t begin, std::size_t end) {
  if (begin >= end || end > x.cols())
    throw ShapeMismatch("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") of " + std::to_string(x.cols()) + " cols");
  const auto width = static_cast<Eigen::Index>(end - begin);
  const auto b = static_cast<Eigen::Index>(begin);
  Tensor<T> out(x.rows(), end - begin);
  emap(out) = emap(x.value()).middleCols(b, width);
  return make_result<T>("slice_cols", std::move(out), {x}, [b, width](Node<T>& n) {
    emap(grad_of(*n.inputs[0])).middleCols(b, width) += emap(n.grad);
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  return make_result<T>("sum", Tensor<T>::scalar(emap(x.value()).sum()), {x}, [](Node<T>& n) {
    emap(grad_of(*n.inputs[0])).array() += n.grad.data()[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.value().empty()) throw ShapeMismatch("mean of an empty tensor");
  const T inv = T(1) / static_cast<T>(x.value().size());
  return make_result<T>("mean", Tensor<T>::scalar(emap(x.value()).sum() * inv), {x},
                        [inv](Node<T>& n) {
                          emap(grad_of(*n.inputs[0])).array() += n.grad.data()[0] * inv;
                        });
}

template <typename T>
Var<T> mean_of(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeMismatch("mean_of: no inputs");
  Tensor<T> out = parts.front().value();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    require_same_shape("mean_of", out, parts[i].value());
    emap(out) += emap(parts[i].value());
  }
  const T n_parts = static_cast<T>(parts.size());
  emap(out) /= n_parts;
  return make_result_n<T>("mean_of", std::move(out), parts, [n_parts](Node<T>& n) {
    for (auto& in : n.inputs)
      if (in->requires_grad) emap(grad_of(*in)) += emap(n.grad) / n_parts;
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  Tensor<T> out(x.cols(), x.rows());
  emap(out) = emap(x.value()).transpose();
  return make_result<T>("transpose", std::move(out), {x}, [](Node<T>& n) {
    emap(grad_of(*n.inputs[0])) += emap(n.grad).transpose();
  });
}

namespace {

template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const auto mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
  }
}

// dS = A .* (dA - rowsum(dA .* A))
template <typename T>
EMat<T> softmax_backward(const EMat<T>& a, const EMat<T>& da) {
  EMat<T> out = da;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const T dot = a.row(r).dot(da.row(r));
    out.row(r) = a.row(r).cwiseProduct((da.row(r).array() - dot).matrix());
  }
  return out;
}

}  // namespace

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  Tensor<T> out = x.value();
  auto m = emap(out);
  softmax_rows_inplace(m);
  return make_result<T>("softmax_rows", std::move(out), {x}, [](Node<T>& n) {
    EMat<T> a = emap(n.value);
    EMat<T> g = emap(n.grad);
    emap(grad_of(*n.inputs[0])) += softmax_backward<T>(a, g);
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols || beta.rows() != 1 || beta.cols() != cols)
    throw ShapeMismatch("layer_norm: gain/bias must be 1x" + std::to_string(cols));
  auto xhat = std::make_shared<Tensor<T>>(rows, cols);
  auto rstd = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(rows, cols);
  const auto X = emap(x.value());
  auto Xh = emap(*xhat);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto ri = static_cast<Eigen::Index>(r);
    const T mu = X.row(ri).mean();
    const T var = (X.row(ri).array() - mu).square().mean();
    (*rstd)[r] = T(1) / std::sqrt(var + eps);
    Xh.row(ri) = ((X.row(ri).array() - mu) * (*rstd)[r]).matrix();
  }
  emap(out) = (Xh.array().rowwise() * emap(gamma.value()).row(0).array()).matrix();
  emap(out).rowwise() += emap(beta.value()).row(0);
  return make_result<T>(
      "layer_norm", std::move(out), {x, gamma, beta}, [xhat, rstd](Node<T>& n) {
        const auto g = emap(n.grad);
        const auto Xh = emap(*xhat);
        if (wants(n, 1)) emap(grad_of(*n.inputs[1])).row(0) += g.cwiseProduct(Xh).colwise().sum();
        if (wants(n, 2)) emap(grad_of(*n.inputs[2])).row(0) += g.colwise().sum();
        if (!wants(n, 0)) return;
        const auto gam = emap(n.inputs[1]->value).row(0).array();
        auto dx = emap(grad_of(*n.inputs[0]));
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          auto dxh = (g.row(r).array() * gam).eval();
          const T m1 = dxh.mean();
          const T m2 = (dxh * Xh.row(r).array()).mean();
          dx.row(r) += ((dxh - m1 - Xh.row(r).array() * m2) * (*rstd)[static_cast<std::size_t>(r)])
                           .matrix();
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  emap(out) = emap(x.value()).cwiseMax(T(0));
  return make_result<T>("relu", std::move(out), {x}, [](Node<T>& n) {
    auto& g = grad_of(*n.inputs[0]);
    const auto in = n.inputs[0]->value.data();
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > T(0)) g.data()[i] += n.grad.data()[i];
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T kC = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T kA = static_cast<T>(0.044715);
  Tensor<T> out(x.rows(), x.cols());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T v = in[i];
    out.data()[i] = T(0.5) * v * (T(1) + std::tanh(kC * (v + kA * v * v * v)));
  }
  return make_result<T>("gelu", std::move(out), {x}, [](Node<T>& n) {
    auto& g = grad_of(*n.inputs[0]);
    const auto in = n.inputs[0]->value.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const T v = in[i];
      const T t = std::tanh(kC * (v + kA * v * v * v));
      const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kA * v * v);
      g.data()[i] += n.grad.data()[i] * d;
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T v = in[i];
    out.data()[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return make_result<T>("sigmoid", std::move(out), {x}, [](Node<T>& n) {
    auto& g = grad_of(*n.inputs[0]);
    for (std::size_t i = 0; i < n.value.size(); ++i) {
      const T s = n.value.data()[i];
      g.data()[i] += n.grad.data()[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  const auto in = x.value().data();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T v = in[i];
    out.data()[i] = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
  }
  return make_result<T>("softplus", std::move(out), {x}, [](Node<T>& n) {
    auto& g = grad_of(*n.inputs[0]);
    const auto in = n.inputs[0]->value.data();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const T v = in[i];
      const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
      g.data()[i] += n.grad.data()[i] * s;
    }
  });
}

template <typename T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                            const Tensor<T>* mask) {
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows())
    throw ShapeMismatch("attention: q " + shape_str(q.rows(), d) + ", k " +
                        shape_str(k.rows(), k.cols()) + ", v " + shape_str(v.rows(), v.cols()));
  if (heads == 0 || d % heads != 0)
    throw ShapeMismatch("attention: width " + std::to_string(d) + " not divisible by " +
                        std::to_string(heads) + " heads");
  if (mask && (mask->rows() != q.rows() || mask->cols() != k.rows()))
    throw ShapeMismatch("attention: mask must be " + shape_str(q.rows(), k.rows()));
  const auto dh = static_cast<Eigen::Index>(d / heads);
  const T scale_factor = T(1) / std::sqrt(static_cast<T>(dh));

  auto probs = std::make_shared<std::vector<EMat<T>>>(heads);
  Tensor<T> out(q.rows(), d);
  const auto Q = emap(q.value());
  const auto K = emap(k.value());
  const auto V = emap(v.value());
  auto O = emap(out);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h) * dh;
    EMat<T> s = (Q.middleCols(c0, dh) * K.middleCols(c0, dh).transpose()) * scale_factor;
    if (mask) s += emap(*mask);
    softmax_rows_inplace(s);
    O.middleCols(c0, dh).noalias() = s * V.middleCols(c0, dh);
    (*probs)[h] = std::move(s);
  }
  return make_result<T>(
      "scaled_dot_attention", std::move(out), {q, k, v}, [probs, dh, scale_factor](Node<T>& n) {
        const auto G = emap(n.grad);
        const auto Q = emap(n.inputs[0]->value);
        const auto K = emap(n.inputs[1]->value);
        const auto V = emap(n.inputs[2]->value);
        const bool gq = wants(n, 0), gk = wants(n, 1), gv = wants(n, 2);
        for (std::size_t h = 0; h < probs->size(); ++h) {
          const auto c0 = static_cast<Eigen::Index>(h) * dh;
          const EMat<T>& a = (*probs)[h];
          const auto gh = G.middleCols(c0, dh);
          if (gv) emap(grad_of(*n.inputs[2])).middleCols(c0, dh).noalias() += a.transpose() * gh;
          if (!gq && !gk) continue;
          EMat<T> da = gh * V.middleCols(c0, dh).transpose();
          EMat<T> ds = softmax_backward<T>(a, da) * scale_factor;
          if (gq) emap(grad_of(*n.inputs[0])).middleCols(c0, dh).noalias() += ds * K.middleCols(c0, dh);
          if (gk)
            emap(grad_of(*n.inputs[1])).middleCols(c0, dh).noalias() +=
                ds.transpose() * Q.middleCols(c0, dh);
        }
      });
}

namespace {

template <typename T>
T mask_total(std::string_view op, const Tensor<T>& pred, const Tensor<T>& target,
             const Tensor<T>& mask) {
  require_same_shape(op, pred, target);
  require_same_shape(op, pred, mask);
  return emap(mask).sum();
}

}  // namespace

template <typename T>
Var<T> bce_loss(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  const T total = mask_total("bce_loss", pred.value(), target, mask);
  if (total <= T(0)) return Var<T>::constant(Tensor<T>::scalar(T(0)));
  const T lo = static_cast<T>(kBceClamp), hi = T(1) - static_cast<T>(kBceClamp);
  T acc = 0;
  const auto p = pred.value().data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask.data()[i] == T(0)) continue;
    const T pc = std::clamp(p[i], lo, hi);
    const T t = target.data()[i];
    acc -= mask.data()[i] * (t * std::log(pc) + (T(1) - t) * std::log(T(1) - pc));
  }
  return make_result<T>("bce_loss", Tensor<T>::scalar(acc / total), {pred},
                        [target, mask, total, lo, hi](Node<T>& n) {
                          const T up = n.grad.data()[0] / total;
                          auto& g = grad_of(*n.inputs[0]);
                          const auto p = n.inputs[0]->value.data();
                          for (std::size_t i = 0; i < p.size(); ++i) {
                            if (mask.data()[i] == T(0) || p[i] < lo || p[i] > hi) continue;
                            const T t = target.data()[i];
                            g.data()[i] +=
                                up * mask.data()[i] * (-t / p[i] + (T(1) - t) / (T(1) - p[i]));
                          }
                        });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  const T total = mask_total("mse_loss", pred.value(), target, mask);
  if (total <= T(0)) return Var<T>::constant(Tensor<T>::scalar(T(0)));
  const auto diff = (emap(pred.value()) - emap(target)).eval();
  const T acc = diff.cwiseProduct(diff).cwiseProduct(emap(mask)).sum();
  return make_result<T>("mse_loss", Tensor<T>::scalar(acc / total), {pred},
                        [target, mask, total](Node<T>& n) {
                          const T up = T(2) * n.grad.data()[0] / total;
                          emap(grad_of(*n.inputs[0])) +=
                              ((emap(n.inputs[0]->value) - emap(target)).cwiseProduct(emap(mask))) * up;
                        });
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target, const Tensor<T>& mask) {
  const T total = mask_total("l1_loss", pred.value(), target, mask);
  if (total <= T(0)) return Var<T>::constant(Tensor<T>::scalar(T(0)));
  const T acc = (emap(pred.value()) - emap(target)).cwiseAbs().cwiseProduct(emap(mask)).sum();
  return make_result<T>("l1_loss", Tensor<T>::scalar(acc / total), {pred},
                        [target, mask, total](Node<T>& n) {
                          const T up = n.grad.data()[0] / total;
                          auto& g = grad_of(*n.inputs[0]);
                          const auto p = n.inputs[0]->value.data();
                          for (std::size_t i = 0; i < p.size(); ++i) {
                            const T d = p[i] - target.data()[i];
                            const T sign = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                            g.data()[i] += up * mask.data()[i] * sign;
                          }
                        });
}

template <typename T>
Tensor<T> sinusoidal_encoding(std::span<const double> positions, std::size_t dim) {
  Tensor<T> out(positions.size(), dim);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = positions[r] * freq;
      out(r, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return out;
}

#define INTERLOC_INSTANTIATE(T)                                                              \
  template class Tensor<T>;                                                                  \
  template class Var<T>;                                                                     \
  template void backward<T>(const Var<T>&, std::span<const Var<T>>);                         \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                                   \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                      \
  template Var<T> add_row<T>(const Var<T>&, const Var<T>&);                                  \
  template Var<T> scale<T>(const Var<T>&, T);                                                \
  template Var<T> affine<T>(const Var<T>&, const Var<T>&, const Var<T>&);                    \
  template Var<T> affine_const<T>(const Var<T>&, T, T);                                      \
  template Var<T> clamp<T>(const Var<T>&, T, T);                                             \
  template Var<T> row_scale<T>(const Var<T>&, const Var<T>&);                                \
  template Var<T> concat_rows<T>(std::span<const Var<T>>);                                   \
  template Var<T> slice_rows<T>(const Var<T>&, std::size_t, std::size_t);                    \
  template Var<T> slice_cols<T>(const Var<T>&, std::size_t, std::size_t);                    \
  template Var<T> sum<T>(const Var<T>&);                                                     \
  template Var<T> mean<T>(const Var<T>&);                                                    \
  template Var<T> mean_of<T>(std::span<const Var<T>>);                                       \
  template Var<T> transpose<T>(const Var<T>&);                                               \
  template Var<T> softmax_rows<T>(const Var<T>&);                                            \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);             \
  template Var<T> relu<T>(const Var<T>&);                                                    \
  template Var<T> gelu<T>(const Var<T>&);                                                    \
  template Var<T> sigmoid<T>(const Var<T>&);                                                 \
  template Var<T> softplus<T>(const Var<T>&);                                                \
  template Var<T> scaled_dot_attention<T>(const Var<T>&, const Var<T>&, const Var<T>&,       \
                                          std::size_t, const Tensor<T>*);                    \
  template Var<T> bce_loss<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Var<T> mse_loss<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Var<T> l1_loss<T>(const Var<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> sinusoidal_encoding<T>(std::span<const double>, std::size_t);

INTERLOC_INSTANTIATE(float)
INTERLOC_INSTANTIATE(double)

#undef INTERLOC_INSTANTIATE

}  // namespace interloc::tensor
