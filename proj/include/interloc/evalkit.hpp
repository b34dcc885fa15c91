#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "interloc/core.hpp"
#include "interloc/feedbackgen.hpp"
#include "interloc/localizer.hpp"
#include "interloc/synthworld.hpp"

namespace interloc::evalkit {

/// 1 iff one of the top-min(k, |preds|) spans reaches tiou_thresh. Throws EmptyPredictions.
int recall_at_k(const SpanPrediction& preds, const Span& gt, std::size_t k, double tiou_thresh);

/// The four reported metrics, in this order: R1@0.3, R1@0.5, R5@0.3, R5@0.5.
struct MetricSpec {
  std::size_t k;
  double tiou;
  const char* name;
};
inline constexpr std::array<MetricSpec, 4> kMetrics{{
    {1, 0.3, "R1@0.3"}, {1, 0.5, "R1@0.5"}, {5, 0.3, "R5@0.3"}, {5, 0.5, "R5@0.5"}}};

/// Running means of the four metrics.
struct Recall {
  std::array<double, 4> sum{};
  double weight = 0.0;

  void add(const SpanPrediction& preds, const Span& gt, double w = 1.0);
  void add(const std::array<double, 4>& values, double w = 1.0);
  std::array<double, 4> mean() const;
};

std::array<double, 4> recall_values(const SpanPrediction& preds, const Span& gt);

/// Predicts spans for a query given zero or more feedback turns.
class Runner {
 public:
  virtual ~Runner() = default;
  virtual SpanPrediction predict(const EpisodeRecord& ep, const QueryRecord& query,
                                 std::span<const FeedbackSample* const> feedbacks) const = 0;
};

/// Runner over the host with FALM plugged in. Per-turn fused features are cached by
/// (episode, query, reference span, feedback text).
class FeedbackRunner : public Runner {
 public:
  FeedbackRunner(const localizer::HostF& host, const localizer::FalmF& falm_model,
                 localizer::EmAdapter adapter)
      : host_(host), falm_(falm_model), adapter_(adapter) {}

  SpanPrediction predict(const EpisodeRecord& ep, const QueryRecord& query,
                         std::span<const FeedbackSample* const> feedbacks) const override;

 private:
  const tensor::Tensor<float>& turn(const EpisodeRecord& ep, const QueryRecord& query,
                                    const FeedbackSample* fb) const;

  const localizer::HostF& host_;
  const localizer::FalmF& falm_;
  localizer::EmAdapter adapter_;
  mutable std::unordered_map<std::string, tensor::Tensor<float>> cache_;
};

/// Episodes plus the feedback samples attached to their queries.
struct EvalDataset {
  std::span<const EpisodeRecord> episodes;
  std::span<const FeedbackSample> feedback;
};

enum class Mode { QueryOnly, WithFeedback };

struct QueryScore {
  std::string query_id;
  std::array<double, 4> values{};
};

/// Means over queries that have feedback; per-kind groups weight each feedback instance once.
struct SplitResult {
  Mode mode = Mode::QueryOnly;
  Recall overall;
  std::map<std::string, Recall> by_kind;
  std::vector<QueryScore> per_query;
};

SplitResult evaluate_split(const Runner& runner, const EvalDataset& data, Mode mode);

struct TableRow {
  std::string group;
  std::size_t count = 0;
  std::array<double, 4> query_only{};
  std::array<double, 4> feedback{};
  std::array<double, 4> delta{};
};

/// Rows "all" followed by the per-kind groups; values in percent.
std::vector<TableRow> compare(const SplitResult& query_only, const SplitResult& with_feedback);
std::string table_csv(const std::vector<TableRow>& rows);

struct CurvePoint {
  std::size_t n = 0;
  std::array<double, 4> mean{};    // percent
  std::array<double, 4> stddev{};  // over samplings, percent
};

struct MultiTurnConfig {
  std::size_t n_max = 5;
  std::size_t samplings = 5;
  std::uint64_t seed = 17;
  /// Skip queries with fewer than n_max feedbacks instead of failing.
  bool skip_insufficient = false;
};

struct MultiTurnResult {
  std::vector<CurvePoint> curve;
  std::size_t queries = 0;
  std::size_t skipped = 0;
};

/// Throws InsufficientFeedback unless skip_insufficient is set.
MultiTurnResult multi_turn_eval(const Runner& runner, const EvalDataset& data,
                                const MultiTurnConfig& cfg);
std::string curve_csv(const std::vector<CurvePoint>& curve);

struct NoisyConfig {
  std::uint64_t seed = 19;
  std::size_t correct_turns = 3;
  bool flip = true;
};

struct NoisyResult {
  std::array<double, 4> query_only{};
  /// turns[t] uses [first, c_1 .. c_t]; first is the flipped temporal feedback when flip is on.
  std::vector<std::array<double, 4>> turns;
  /// clean[t] uses [c_1 .. c_{t+1}] for the same sampled correct feedbacks.
  std::vector<std::array<double, 4>> clean;
  std::size_t queries = 0;
};

/// Queries need one simple temporal feedback plus correct_turns other feedbacks.
NoisyResult noisy_recovery_eval(const Runner& runner, const EvalDataset& data,
                                const feedbackgen::FeedbackTemplateBank& bank,
                                const synthworld::Embedder& emb, const NoisyConfig& cfg);

/// Per-clip ranking AUC of scores against binary labels (ties count one half).
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

}  // namespace interloc::evalkit
