#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "interloc/core.hpp"
#include "interloc/refsample.hpp"
#include "interloc/synthworld.hpp"

namespace interloc::feedbackgen {

/// Phrase templates. "{}" is replaced by the clause terms (or by before/after for temporal).
struct FeedbackTemplateBank {
  std::vector<std::string> contains_templates;
  std::vector<std::string> not_contains_templates;
  std::vector<std::string> temporal_templates;
  /// Orderings of the component slots: C = contains, N = not-contains, T = temporal.
  std::vector<std::string> combo_templates;
  std::vector<std::string> simple_before_pool;
  std::vector<std::string> simple_after_pool;

  static FeedbackTemplateBank standard();
  void validate() const;
};

/// Probabilities of the terse-user subset drops applied at render time.
struct DropProbabilities {
  double keep_all = 0.4;
  double drop_contrastive = 0.2;  // removes not-contains
  double drop_contains = 0.2;
  double temporal_only = 0.2;
};

struct RenderedFeedback {
  std::string text;
  ClauseSet clauses;
};

/// Sorted union of event and attribute tokens over the span's clips.
std::vector<std::string> caption_span(const EpisodeRecord& ep, const Span& s);

/// Query terms plus the answer token; used only to keep feedback from giving the answer away.
std::vector<std::string> explain_query(const QueryRecord& q);

Temporal relative_order(const Span& gt, const Span& ref);

/// Throws NoSignal when every component would be empty.
ClauseSet compose_clauses(const Span& gt, const Span& ref, std::span<const std::string> d_q,
                          std::span<const std::string> d_f,
                          std::span<const std::string> explanation);

RenderedFeedback render_feedback(const ClauseSet& clauses, const FeedbackTemplateBank& bank,
                                 std::uint64_t seed, const DropProbabilities& drops = {});

/// Inverse of render_feedback for template-rendered text.
ClauseSet extract_clauses(const std::string& text, const FeedbackTemplateBank& bank);

/// Feedback token rows: contains terms, negated not-contains terms, then a direction token.
Matrix feedback_embedding(const synthworld::Embedder& emb, const ClauseSet& clauses);

/// Throws OverlapError if gt and ref intersect.
FeedbackSample make_simple_temporal(const EpisodeRecord& ep, const QueryRecord& q, const Span& ref,
                                    const FeedbackTemplateBank& bank,
                                    const synthworld::Embedder& emb, std::uint64_t seed);

/// The same simple temporal feedback pointing the other way.
FeedbackSample flip_direction(const FeedbackSample& sample, const FeedbackTemplateBank& bank,
                              const synthworld::Embedder& emb, std::uint64_t seed);

/// Swap point for the caption / explain / feedback stages.
class SynthesizerBackend {
 public:
  virtual ~SynthesizerBackend() = default;
  virtual std::vector<std::string> caption(const EpisodeRecord& ep, const Span& s) const = 0;
  virtual std::vector<std::string> explain(const QueryRecord& q, const Span& gt) const = 0;
  virtual RenderedFeedback feedback(std::span<const std::string> d_q,
                                    std::span<const std::string> d_f,
                                    std::span<const std::string> e_q, const Span& gt,
                                    const Span& ref, std::uint64_t seed) const = 0;
  virtual ClauseSet extract(const std::string& text) const = 0;
};

class TemplateBackend : public SynthesizerBackend {
 public:
  explicit TemplateBackend(FeedbackTemplateBank bank = FeedbackTemplateBank::standard(),
                           DropProbabilities drops = {});

  std::vector<std::string> caption(const EpisodeRecord& ep, const Span& s) const override;
  std::vector<std::string> explain(const QueryRecord& q, const Span& gt) const override;
  RenderedFeedback feedback(std::span<const std::string> d_q, std::span<const std::string> d_f,
                            std::span<const std::string> e_q, const Span& gt, const Span& ref,
                            std::uint64_t seed) const override;
  ClauseSet extract(const std::string& text) const override;

  const FeedbackTemplateBank& bank() const noexcept { return bank_; }

 private:
  FeedbackTemplateBank bank_;
  DropProbabilities drops_;
};

struct QnfConfig {
  std::uint64_t seed = 13;
  bool eval_split = false;
  // Train-split counts per query.
  std::size_t train_relevant = 1;
  std::size_t train_irrelevant = 2;
  std::size_t train_simple_temporal = 0;
  // Eval-split quota per query.
  std::size_t eval_relevant = 2;
  std::size_t eval_irrelevant = 2;
  std::size_t eval_simple_temporal = 1;
};

struct QnfDataset {
  std::vector<FeedbackSample> samples;
  std::vector<std::string> errors;  // per-query problems, "query_id: message"
};

QnfDataset build_qnf_dataset(std::span<const EpisodeRecord> episodes,
                             std::span<const refsample::QueryReferences> references,
                             const SynthesizerBackend& backend, const FeedbackTemplateBank& bank,
                             const synthworld::Embedder& emb, const QnfConfig& cfg);

}  // namespace interloc::feedbackgen
