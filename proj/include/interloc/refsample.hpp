#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "interloc/core.hpp"

namespace interloc::refsample {

/// Beta prior over min-max normalized span durations.
struct BetaParams {
  double a = 1.0;
  double b = 1.0;
  double dur_min = 0.0;
  double dur_max = 1.0;
};

/// Method-of-moments fit; throws DegenerateDurations.
BetaParams fit_beta(std::span<const double> durations);

inline constexpr int kMaxRejections = 100;

/// Random span disjoint from `gt`; throws SamplingExhausted after kMaxRejections tries.
Span sample_random_span(const EpisodeRecord& ep, const Span& gt, const BetaParams& beta,
                        std::uint64_t seed);

/// Window of gt's length, stride max(1, floor(|gt|/4)), most cosine-similar to gt among
/// windows disjoint from gt. Throws NoCandidate.
Span sample_similar_span(const EpisodeRecord& ep, const Span& gt);

/// Start positions of the strided sliding-window candidates used by sample_similar_span.
std::vector<Span> similar_span_candidates(const EpisodeRecord& ep, const Span& gt);

enum class FailureMode {
  Recall5,  // all top-5 below 0.3 tIoU
  Top1,     // top-1 below 0.3 tIoU
};

inline constexpr double kFailureTiou = 0.3;

/// Top-1 spans of queries the model failed on, keyed by query id.
std::map<std::string, Span> collect_failure_spans(const std::map<std::string, SpanPrediction>& preds,
                                                  const std::map<std::string, Span>& gts,
                                                  FailureMode mode);

/// Ground-truth spans of the episode's other queries that do not intersect q's.
std::vector<Span> other_query_spans(const EpisodeRecord& ep, const QueryRecord& q);

}  // namespace interloc::refsample

namespace interloc::refsample {

struct ReferenceSpan {
  RefKind kind = RefKind::RandomSpan;
  Span span;
  bool operator==(const ReferenceSpan&) const = default;
};

/// Candidate reference spans of every kind for one query.
struct QueryReferences {
  std::string episode_id;
  std::string query_id;
  std::vector<ReferenceSpan> spans;
  std::vector<std::string> errors;  // sampling failures, recorded and skipped
  bool operator==(const QueryReferences&) const = default;
};

struct ReferenceConfig {
  std::uint64_t seed = 11;
  std::size_t random_per_query = 3;
};

/// Samples the four reference kinds for every query. `failures` supplies ModelFailure spans.
std::vector<QueryReferences> sample_references(std::span<const EpisodeRecord> episodes,
                                               const BetaParams& beta,
                                               const std::map<std::string, Span>& failures,
                                               const ReferenceConfig& cfg);

/// Ground-truth durations of every query, for fit_beta.
std::vector<double> gt_durations(std::span<const EpisodeRecord> episodes);

}  // namespace interloc::refsample
