#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "interloc/core.hpp"
#include "interloc/falm.hpp"
#include "interloc/nn.hpp"
#include "interloc/tensor.hpp"

namespace interloc::localizer {

struct HostConfig {
  std::size_t input_dim = 32;
  std::size_t d_model = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_hidden = 64;
  std::size_t head_hidden = 32;
  double offset_scale = 4.0;   // clips per unit of softplus output
  double min_offset = 0.25;    // keeps every decoded span non-degenerate
  double positive_weight = 4.0;  // BCE weight on foreground clips
  double offset_weight = 0.5;
  double nms_threshold = 0.5;
  std::size_t top_k = 5;
  std::uint64_t seed = 31;

  void validate() const;
};

/// Cross-modal encoder over [clip tokens; query tokens] and a per-clip span decoder.
template <typename T>
class HostModel {
 public:
  using V = tensor::Var<T>;

  struct Heads {
    V logit;  // m x 1 foreground logit
    V left;   // m x 1 distance from clip center to span start
    V right;  // m x 1 distance from clip center to span end
  };

  explicit HostModel(const HostConfig& cfg);

  /// Fused clip features (m x d_model). `p_hat` (m x 1), when given, scales clip i by p_hat(i)
  /// before encoding.
  V encode(const tensor::Tensor<T>& e_v, const tensor::Tensor<T>& e_q,
           const V* p_hat = nullptr) const;
  Heads decode(const V& fused) const;
  /// Weighted BCE on foreground clips plus L1 on their offsets.
  V loss(const Heads& heads, const Span& gt) const;

  const HostConfig& config() const noexcept { return cfg_; }
  nn::ParameterStore<T>& params() noexcept { return store_; }
  const nn::ParameterStore<T>& params() const noexcept { return store_; }

 private:
  HostConfig cfg_;
  nn::ParameterStore<T> store_;
  nn::Linear<T> video_proj_, query_proj_, match_proj_;
  V type_v_, type_q_;
  std::vector<nn::EncoderLayer<T>> layers_;
  nn::LayerNorm<T> final_ln_;
  nn::Linear<T> score_up_, score_out_, offset_up_, offset_out_;
};

/// Greedy NMS over per-clip candidates; suppresses tIoU above the threshold, keeps top_k.
SpanPrediction decode_spans(std::span<const double> logits, std::span<const double> left,
                            std::span<const double> right, std::size_t clip_count,
                            double nms_threshold, std::size_t top_k);

struct EmAdapter {
  double alpha = 1.0;
  double beta = 0.0;
  bool operator==(const EmAdapter&) const = default;
};

/// clamp(alpha * p + beta, 0, 1) elementwise.
std::vector<double> adapter_apply(const EmAdapter& ad, std::span<const double> p);

using HostF = HostModel<float>;
using FalmF = falm::AlignmentModel<float>;

struct HostOutput {
  tensor::Tensor<float> fused;
  SpanPrediction prediction;
};

/// Host pass; `p_hat` absent means the clip features are used unchanged.
HostOutput host_forward(const HostF& host, const Matrix& e_v, const Matrix& e_q,
                        const std::vector<double>* p_hat = nullptr);

/// Span decoding of an already fused clip matrix.
SpanPrediction decode_fused(const HostF& host, const tensor::Tensor<float>& fused);

/// Reweighting vector for one feedback: FALM scores passed through the adapter.
std::vector<double> feedback_weights(const FalmF& falm_model, const EmAdapter& adapter,
                                     const EpisodeRecord& ep, const QueryRecord& query,
                                     const FeedbackSample& feedback);

/// Fused clip features for one turn; no feedback means no reweighting.
tensor::Tensor<float> turn_features(const HostF& host, const FalmF& falm_model,
                                    const EmAdapter& adapter, const EpisodeRecord& ep,
                                    const QueryRecord& query, const FeedbackSample* feedback);

/// Averages fused matrices in a canonical (content-sorted) order, so the result does not
/// depend on the order of the list, then decodes once.
SpanPrediction fuse_and_decode(const HostF& host, std::vector<tensor::Tensor<float>> fused);

SpanPrediction feedback_predict(const HostF& host, const FalmF& falm_model,
                                const EmAdapter& adapter, const EpisodeRecord& ep,
                                const QueryRecord& query,
                                const FeedbackSample* feedback = nullptr);

/// Late fusion over independent feedback turns. Throws EmptyFeedbackList.
SpanPrediction feedback_predict_multi(const HostF& host, const FalmF& falm_model,
                                      const EmAdapter& adapter, const EpisodeRecord& ep,
                                      const QueryRecord& query,
                                      std::span<const FeedbackSample> feedbacks);

}  // namespace interloc::localizer
