#include "interloc/localizer.hpp"

#include <algorithm>
#include <numeric>

#include "interloc/error.hpp"
#include "interloc/rng.hpp"

namespace interloc::localizer {

using tensor::Tensor;
using tensor::Var;

void HostConfig::validate() const {
  if (input_dim == 0 || d_model == 0) throw ConfigError("host widths must be positive");
  if (heads == 0 || d_model % heads != 0)
    throw ConfigError("host d_model " + std::to_string(d_model) + " not divisible by heads " +
                      std::to_string(heads));
  if (top_k == 0) throw ConfigError("host top_k must be positive");
  if (nms_threshold <= 0.0 || nms_threshold > 1.0)
    throw ConfigError("host nms_threshold must lie in (0, 1]");
  if (offset_scale <= 0.0 || min_offset <= 0.0 || positive_weight <= 0.0 || offset_weight < 0.0)
    throw ConfigError("host offset/loss settings must be positive");
}

template <typename T>
HostModel<T>::HostModel(const HostConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg.seed, {hash_string("host")}));
  const auto d = cfg.d_model;
  video_proj_ = nn::Linear<T>(store_, "host.video_proj", cfg.input_dim, d, rng);
  query_proj_ = nn::Linear<T>(store_, "host.query_proj", cfg.input_dim, d, rng);
  match_proj_ = nn::Linear<T>(store_, "host.match_proj", cfg.input_dim, d, rng);
  auto type_init = [&](const std::string& name) {
    Tensor<T> t(1, d);
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, 0.02));
    return store_.add(name, std::move(t));
  };
  type_v_ = type_init("host.type_v");
  type_q_ = type_init("host.type_q");
  for (std::size_t i = 0; i < cfg.layers; ++i)
    layers_.emplace_back(store_, "host.enc" + std::to_string(i), d, cfg.heads, cfg.ffn_hidden, rng);
  final_ln_ = nn::LayerNorm<T>(store_, "host.ln", d);
  score_up_ = nn::Linear<T>(store_, "host.score_up", d, cfg.head_hidden, rng);
  score_out_ = nn::Linear<T>(store_, "host.score_out", cfg.head_hidden, 1, rng);
  offset_up_ = nn::Linear<T>(store_, "host.offset_up", d, cfg.head_hidden, rng);
  offset_out_ = nn::Linear<T>(store_, "host.offset_out", cfg.head_hidden, 2, rng);
}

template <typename T>
Var<T> HostModel<T>::encode(const Tensor<T>& e_v, const Tensor<T>& e_q, const V* p_hat) const {
  if (e_v.cols() != cfg_.input_dim || e_q.cols() != cfg_.input_dim || e_v.rows() == 0 ||
      e_q.rows() == 0)
    throw ShapeMismatch("host inputs must be non-empty with width " +
                        std::to_string(cfg_.input_dim));
  const std::size_t m = e_v.rows();
  V video = V::constant(e_v);
  if (p_hat) {
    if (p_hat->rows() != m || p_hat->cols() != 1)
      throw ShapeMismatch("p_hat has " + std::to_string(p_hat->rows()) + " entries for " +
                          std::to_string(m) + " clips");
    video = tensor::row_scale(video, *p_hat);
  }
  std::vector<double> pos(m);
  std::iota(pos.begin(), pos.end(), 0.0);
  // Clip features times the mean query token: a direct per-clip match signal.
  Tensor<T> q_diag(cfg_.input_dim, cfg_.input_dim);
  for (std::size_t j = 0; j < cfg_.input_dim; ++j) {
    T acc = 0;
    for (std::size_t r = 0; r < e_q.rows(); ++r) acc += e_q(r, j);
    q_diag(j, j) = acc / static_cast<T>(e_q.rows());
  }
  V match = tensor::matmul(video, V::constant(std::move(q_diag)));
  V xv = tensor::add(tensor::add(tensor::add_row(video_proj_(video), type_v_), match_proj_(match)),
                     V::constant(tensor::sinusoidal_encoding<T>(pos, cfg_.d_model)));
  V xq = tensor::add_row(query_proj_(V::constant(e_q)), type_q_);
  const std::vector<V> parts{xv, xq};
  V x = tensor::concat_rows<T>(parts);
  for (const auto& layer : layers_) x = layer(x);
  return final_ln_(tensor::slice_rows(x, 0, m));
}

template <typename T>
typename HostModel<T>::Heads HostModel<T>::decode(const V& fused) const {
  Heads h;
  h.logit = score_out_(tensor::gelu(score_up_(fused)));
  V off = tensor::softplus(offset_out_(tensor::gelu(offset_up_(fused))));
  off = tensor::affine_const(off, static_cast<T>(cfg_.offset_scale), static_cast<T>(cfg_.min_offset));
  h.left = tensor::slice_cols(off, 0, 1);
  h.right = tensor::slice_cols(off, 1, 2);
  return h;
}

template <typename T>
Var<T> HostModel<T>::loss(const Heads& heads, const Span& gt) const {
  const std::size_t m = heads.logit.rows();
  require_valid(gt, m);
  Tensor<T> fg(m, 1), weight(m, 1, T(1)), off_mask(m, 1), left_t(m, 1), right_t(m, 1);
  for (auto i : clips_in_span(gt, m)) {
    const double center = static_cast<double>(i) + 0.5;
    fg(i, 0) = T(1);
    weight(i, 0) = static_cast<T>(cfg_.positive_weight);
    off_mask(i, 0) = T(1);
    left_t(i, 0) = static_cast<T>(center - gt.start);
    right_t(i, 0) = static_cast<T>(gt.end - center);
  }
  V loss = tensor::bce_loss(tensor::sigmoid(heads.logit), fg, weight);
  const T w = static_cast<T>(cfg_.offset_weight);
  loss = tensor::add(loss, tensor::scale(tensor::l1_loss(heads.left, left_t, off_mask), w));
  loss = tensor::add(loss, tensor::scale(tensor::l1_loss(heads.right, right_t, off_mask), w));
  return loss;
}

template class HostModel<float>;
template class HostModel<double>;

SpanPrediction decode_spans(std::span<const double> logits, std::span<const double> left,
                            std::span<const double> right, std::size_t clip_count,
                            double nms_threshold, std::size_t top_k) {
  const std::size_t m = logits.size();
  if (left.size() != m || right.size() != m || m != clip_count)
    throw ShapeMismatch("decode_spans: inconsistent head lengths");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  const double limit = static_cast<double>(clip_count);
  SpanPrediction out;
  for (auto i : order) {
    const double center = static_cast<double>(i) + 0.5;
    Span s{std::max(0.0, center - left[i]), std::min(limit, center + right[i])};
    if (!(s.start < s.end)) continue;
    bool keep = true;
    for (const auto& kept : out)
      if (tiou(kept.span, s) > nms_threshold) {
        keep = false;
        break;
      }
    if (!keep) continue;
    out.push_back({s, 1.0 / (1.0 + std::exp(-logits[i]))});
    if (out.size() == top_k) break;
  }
  return out;
}

std::vector<double> adapter_apply(const EmAdapter& ad, std::span<const double> p) {
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::clamp(ad.alpha * p[i] + ad.beta, 0.0, 1.0);
  return out;
}

namespace {

std::vector<double> col0(const Tensor<float>& t) {
  std::vector<double> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) out[i] = t(i, 0);
  return out;
}

}  // namespace

SpanPrediction decode_fused(const HostF& host, const Tensor<float>& fused) {
  auto heads = host.decode(HostF::V::constant(fused));
  const auto& cfg = host.config();
  return decode_spans(col0(heads.logit.value()), col0(heads.left.value()),
                      col0(heads.right.value()), fused.rows(), cfg.nms_threshold, cfg.top_k);
}

HostOutput host_forward(const HostF& host, const Matrix& e_v, const Matrix& e_q,
                        const std::vector<double>* p_hat) {
  HostF::V scale;
  if (p_hat) {
    Tensor<float> s(p_hat->size(), 1);
    for (std::size_t i = 0; i < p_hat->size(); ++i) s(i, 0) = static_cast<float>((*p_hat)[i]);
    scale = HostF::V::constant(std::move(s));
  }
  auto fused = host.encode(to_tensor<float>(e_v), to_tensor<float>(e_q), p_hat ? &scale : nullptr);
  HostOutput out{fused.value(), {}};
  out.prediction = decode_fused(host, out.fused);
  return out;
}

std::vector<double> feedback_weights(const FalmF& falm_model, const EmAdapter& adapter,
                                     const EpisodeRecord& ep, const QueryRecord& query,
                                     const FeedbackSample& feedback) {
  return adapter_apply(adapter, falm::falm_forward(falm_model, ep, query, feedback).p);
}

Tensor<float> turn_features(const HostF& host, const FalmF& falm_model, const EmAdapter& adapter,
                            const EpisodeRecord& ep, const QueryRecord& query,
                            const FeedbackSample* feedback) {
  if (!feedback) return host_forward(host, ep.features, query.embedding_tokens).fused;
  const auto p_hat = feedback_weights(falm_model, adapter, ep, query, *feedback);
  return host_forward(host, ep.features, query.embedding_tokens, &p_hat).fused;
}

SpanPrediction fuse_and_decode(const HostF& host, std::vector<Tensor<float>> fused) {
  if (fused.empty()) throw EmptyFeedbackList("no fused features to decode");
  std::sort(fused.begin(), fused.end(), [](const Tensor<float>& a, const Tensor<float>& b) {
    return std::lexicographical_compare(a.data().begin(), a.data().end(), b.data().begin(),
                                        b.data().end());
  });
  std::vector<HostF::V> parts;
  parts.reserve(fused.size());
  for (auto& f : fused) parts.push_back(HostF::V::constant(std::move(f)));
  return decode_fused(host, tensor::mean_of<float>(parts).value());
}

SpanPrediction feedback_predict(const HostF& host, const FalmF& falm_model,
                                const EmAdapter& adapter, const EpisodeRecord& ep,
                                const QueryRecord& query, const FeedbackSample* feedback) {
  return decode_fused(host, turn_features(host, falm_model, adapter, ep, query, feedback));
}

SpanPrediction feedback_predict_multi(const HostF& host, const FalmF& falm_model,
                                      const EmAdapter& adapter, const EpisodeRecord& ep,
                                      const QueryRecord& query,
                                      std::span<const FeedbackSample> feedbacks) {
  if (feedbacks.empty())
    throw EmptyFeedbackList("query " + query.id + " has an empty feedback list");
  std::vector<Tensor<float>> fused;
  fused.reserve(feedbacks.size());
  for (const auto& f : feedbacks)
    fused.push_back(turn_features(host, falm_model, adapter, ep, query, &f));
  return fuse_and_decode(host, std::move(fused));
}

}  // namespace interloc::localizer
