#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "interloc/error.hpp"
#include "interloc/rng.hpp"
#include "interloc/tensor.hpp"

namespace interloc::nn {

using tensor::Tensor;
using tensor::Var;

/// Named trainable leaves in registration order.
template <typename T>
class ParameterStore {
 public:
  Var<T> add(std::string name, Tensor<T> init) {
    for (const auto& p : params_)
      if (p.name() == name) throw ConfigError("duplicate parameter name '" + name + "'");
    params_.push_back(Var<T>::leaf(std::move(init), true, std::move(name)));
    return params_.back();
  }

  const std::vector<Var<T>>& params() const noexcept { return params_; }
  std::size_t count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value().size();
    return n;
  }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  void set_trainable(bool on) {
    for (auto& p : params_) p.set_requires_grad(on);
  }

  /// Copies values from `other` (same names and shapes, any precision).
  template <typename U>
  void copy_from(const ParameterStore<U>& other) {
    if (other.params().size() != params_.size())
      throw ShapeMismatch("parameter count mismatch while copying");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto& src = other.params()[i];
      auto& dst = params_[i];
      if (src.name() != dst.name() || src.rows() != dst.rows() || src.cols() != dst.cols())
        throw ShapeMismatch("parameter '" + dst.name() + "' does not match '" + src.name() + "'");
      dst.mutable_value() = src.value().template cast<T>();
    }
  }

 private:
  std::vector<Var<T>> params_;
};

/// Xavier-uniform weights, zero bias.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
         Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Tensor<T> w(in, out);
    for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    w_ = store.add(name + ".w", std::move(w));
    b_ = store.add(name + ".b", Tensor<T>(1, out));
  }

  Var<T> operator()(const Var<T>& x) const { return tensor::linear(x, w_, b_); }
  std::size_t in_features() const { return w_.rows(); }
  std::size_t out_features() const { return w_.cols(); }

 private:
  Var<T> w_, b_;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, std::size_t dim) {
    gamma_ = store.add(name + ".gamma", Tensor<T>(1, dim, T(1)));
    beta_ = store.add(name + ".beta", Tensor<T>(1, dim));
  }
  Var<T> operator()(const Var<T>& x) const { return tensor::layer_norm(x, gamma_, beta_); }

 private:
  Var<T> gamma_, beta_;
};

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& store, const std::string& name, std::size_t dim,
                     std::size_t heads, Rng& rng)
      : heads_(heads),
        q_(store, name + ".q", dim, dim, rng),
        k_(store, name + ".k", dim, dim, rng),
        v_(store, name + ".v", dim, dim, rng),
        o_(store, name + ".o", dim, dim, rng) {
    if (heads == 0 || dim % heads != 0)
      throw ConfigError("model width " + std::to_string(dim) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }

  Var<T> operator()(const Var<T>& queries, const Var<T>& memory) const {
    return o_(tensor::scaled_dot_attention(q_(queries), k_(memory), v_(memory), heads_));
  }

 private:
  std::size_t heads_ = 1;
  Linear<T> q_, k_, v_, o_;
};

template <typename T>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParameterStore<T>& store, const std::string& name, std::size_t dim,
              std::size_t hidden, Rng& rng)
      : up_(store, name + ".up", dim, hidden, rng), down_(store, name + ".down", hidden, dim, rng) {}
  Var<T> operator()(const Var<T>& x) const { return down_(tensor::gelu(up_(x))); }

 private:
  Linear<T> up_, down_;
};

/// Pre-norm self-attention block.
template <typename T>
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParameterStore<T>& store, const std::string& name, std::size_t dim,
               std::size_t heads, std::size_t hidden, Rng& rng)
      : ln1_(store, name + ".ln1", dim),
        attn_(store, name + ".attn", dim, heads, rng),
        ln2_(store, name + ".ln2", dim),
        ff_(store, name + ".ff", dim, hidden, rng) {}

  Var<T> operator()(const Var<T>& x) const {
    auto h = ln1_(x);
    auto y = tensor::add(x, attn_(h, h));
    return tensor::add(y, ff_(ln2_(y)));
  }

 private:
  LayerNorm<T> ln1_;
  MultiHeadAttention<T> attn_;
  LayerNorm<T> ln2_;
  FeedForward<T> ff_;
};

/// Pre-norm self-attention, cross-attention to `memory`, feed-forward.
template <typename T>
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParameterStore<T>& store, const std::string& name, std::size_t dim,
               std::size_t heads, std::size_t hidden, Rng& rng)
      : ln1_(store, name + ".ln1", dim),
        self_(store, name + ".self", dim, heads, rng),
        ln2_(store, name + ".ln2", dim),
        cross_(store, name + ".cross", dim, heads, rng),
        ln3_(store, name + ".ln3", dim),
        ff_(store, name + ".ff", dim, hidden, rng) {}

  Var<T> operator()(const Var<T>& x, const Var<T>& memory) const {
    auto h = ln1_(x);
    auto y = tensor::add(x, self_(h, h));
    y = tensor::add(y, cross_(ln2_(y), memory));
    return tensor::add(y, ff_(ln3_(y)));
  }

 private:
  LayerNorm<T> ln1_;
  MultiHeadAttention<T> self_;
  LayerNorm<T> ln2_;
  MultiHeadAttention<T> cross_;
  LayerNorm<T> ln3_;
  FeedForward<T> ff_;
};

/// Two-layer MLP ending in a single sigmoid squashed into [eps, 1 - eps].
template <typename T>
class SigmoidHead {
 public:
  static constexpr double kEdge = 1e-6;

  SigmoidHead() = default;
  SigmoidHead(ParameterStore<T>& store, const std::string& name, std::size_t dim,
              std::size_t hidden, Rng& rng)
      : l1_(store, name + ".l1", dim, hidden, rng), l2_(store, name + ".l2", hidden, 1, rng) {}

  Var<T> operator()(const Var<T>& x) const {
    auto s = tensor::sigmoid(l2_(tensor::gelu(l1_(x))));
    return tensor::affine_const(s, static_cast<T>(1.0 - 2.0 * kEdge), static_cast<T>(kEdge));
  }

 private:
  Linear<T> l1_, l2_;
};

}  // namespace interloc::nn
