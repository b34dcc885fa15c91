#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "interloc/core.hpp"
#include "interloc/falm.hpp"
#include "interloc/feedbackgen.hpp"
#include "interloc/labelgen.hpp"
#include "interloc/localizer.hpp"
#include "interloc/synthworld.hpp"

namespace interloc::trainer {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  bool mixed_sampling = true;
  double temporal_aug_rate = 0.20;
  bool falm_frozen = true;
  /// Feedback samples drawn per fine-tuning epoch; 0 means one pass over the feedback set.
  std::size_t samples_per_epoch = 0;

  void validate() const;
};

/// Mean training loss per epoch.
struct LossCurve {
  std::string split = "train";
  std::vector<double> epoch_loss;
};

/// CSV with header "epoch,split,loss".
std::string loss_curve_csv(std::span<const LossCurve> curves);

/// Feedback samples with their alignment labels, over a set of episodes.
struct LabeledFeedback {
  std::span<const EpisodeRecord> episodes;
  std::span<const FeedbackSample> samples;
  std::span<const labelgen::AlignmentLabels> labels;
};

LossCurve pretrain_falm(falm::AlignmentModel<float>& model, const TrainConfig& cfg,
                        const LabeledFeedback& data);

LossCurve pretrain_host(localizer::HostModel<float>& host, const TrainConfig& cfg,
                        std::span<const EpisodeRecord> episodes);

struct FinetuneCounters {
  std::size_t query_only = 0;
  std::size_t with_feedback = 0;
  std::size_t temporal_augmented = 0;
  std::size_t augmentation_skipped = 0;  // reference overlapped the ground truth
  std::size_t batches = 0;
  /// Query-only samples in each batch, in order.
  std::vector<std::size_t> batch_query_only;
};

struct FinetuneResult {
  LossCurve curve;
  localizer::EmAdapter adapter;
  FinetuneCounters counters;
};

/// Resources used to regenerate feedback as simple temporal feedback.
struct AugmentContext {
  const synthworld::Embedder* embedder = nullptr;
  const feedbackgen::FeedbackTemplateBank* bank = nullptr;
};

/// Joint fine-tuning of adapter and host with FALM plugged in. FALM stays untouched unless
/// cfg.falm_frozen is false.
FinetuneResult finetune_with_feedback(localizer::HostModel<float>& host,
                                      falm::AlignmentModel<float>& falm_model,
                                      localizer::EmAdapter adapter, const TrainConfig& cfg,
                                      std::span<const EpisodeRecord> episodes,
                                      std::span<const FeedbackSample> feedback,
                                      const AugmentContext& augment);

}  // namespace interloc::trainer
