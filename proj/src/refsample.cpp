#include "interloc/refsample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "interloc/error.hpp"
#include "interloc/rng.hpp"
#include "interloc/synthworld.hpp"

namespace interloc::refsample {

BetaParams fit_beta(std::span<const double> durations) {
  std::set<double> distinct(durations.begin(), durations.end());
  if (distinct.size() < 3) throw DegenerateDurations("need at least 3 distinct durations");
  const double lo = *distinct.begin();
  const double hi = *distinct.rbegin();
  constexpr double kNudge = 1e-6;

  const auto n = static_cast<double>(durations.size());
  std::vector<double> x(durations.size());
  std::transform(durations.begin(), durations.end(), x.begin(), [&](double d) {
    double u = (d - lo) / (hi - lo);
    return std::clamp(u, kNudge, 1.0 - kNudge);
  });
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= n;
  if (var <= 0.0) throw DegenerateDurations("zero variance");
  const double common = mu * (1.0 - mu) / var - 1.0;
  BetaParams p{mu * common, (1.0 - mu) * common, lo, hi};
  if (!(p.a > 0.0) || !(p.b > 0.0) || !std::isfinite(p.a) || !std::isfinite(p.b))
    throw DegenerateDurations("moments yield non-positive beta parameters");
  return p;
}

Span sample_random_span(const EpisodeRecord& ep, const Span& gt, const BetaParams& beta,
                        std::uint64_t seed) {
  Rng rng(seed);
  const auto m = static_cast<double>(ep.clip_count);
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    double duration = beta.dur_min + rng.beta(beta.a, beta.b) * (beta.dur_max - beta.dur_min);
    double center = rng.uniform(0.0, m);
    Span s{std::max(0.0, center - duration / 2.0), std::min(m, center + duration / 2.0)};
    if (!is_valid(s, ep.clip_count)) continue;
    if (clips_in_span(s, ep.clip_count).empty()) continue;
    if (tiou(s, gt) == 0.0) return s;
  }
  throw SamplingExhausted("no span disjoint from the ground truth after " +
                          std::to_string(kMaxRejections) + " attempts");
}

std::vector<Span> similar_span_candidates(const EpisodeRecord& ep, const Span& gt) {
  const double len = span_duration(gt);
  const double stride = std::max(1.0, std::floor(len / 4.0));
  std::vector<Span> out;
  for (double start = 0.0; start + len <= static_cast<double>(ep.clip_count) + 1e-9;
       start += stride)
    out.push_back(Span{start, start + len});
  return out;
}

Span sample_similar_span(const EpisodeRecord& ep, const Span& gt) {
  const auto target = synthworld::span_embedding(ep, gt);
  std::optional<Span> best;
  double best_cos = -2.0;
  for (const Span& cand : similar_span_candidates(ep, gt)) {
    if (tiou(cand, gt) != 0.0) continue;
    double c = synthworld::cosine(synthworld::span_embedding(ep, cand), target);
    if (c > best_cos) {
      best_cos = c;
      best = cand;
    }
  }
  if (!best) throw NoCandidate("every sliding window overlaps the ground truth");
  return *best;
}

std::map<std::string, Span> collect_failure_spans(const std::map<std::string, SpanPrediction>& preds,
                                                  const std::map<std::string, Span>& gts,
                                                  FailureMode mode) {
  std::map<std::string, Span> out;
  for (const auto& [qid, pred] : preds) {
    auto gt = gts.find(qid);
    if (gt == gts.end() || pred.empty()) continue;
    std::size_t depth = mode == FailureMode::Recall5 ? std::min<std::size_t>(5, pred.size()) : 1;
    bool failed = std::all_of(pred.begin(), pred.begin() + static_cast<long>(depth),
                              [&](const ScoredSpan& s) { return tiou(s.span, gt->second) < kFailureTiou; });
    if (failed) out.emplace(qid, pred.front().span);
  }
  return out;
}

std::vector<Span> other_query_spans(const EpisodeRecord& ep, const QueryRecord& q) {
  std::vector<Span> out;
  for (const auto& other : ep.queries) {
    if (other.id == q.id) continue;
    if (tiou(other.gt_span, q.gt_span) == 0.0) out.push_back(other.gt_span);
  }
  return out;
}

}  // namespace interloc::refsample

namespace interloc::refsample {

std::vector<QueryReferences> sample_references(std::span<const EpisodeRecord> episodes,
                                               const BetaParams& beta,
                                               const std::map<std::string, Span>& failures,
                                               const ReferenceConfig& cfg) {
  std::vector<QueryReferences> out;
  for (const auto& ep : episodes) {
    for (const auto& q : ep.queries) {
      QueryReferences refs{ep.id, q.id, {}, {}};
      if (auto it = failures.find(q.id); it != failures.end())
        refs.spans.push_back({RefKind::ModelFailure, it->second});
      try {
        refs.spans.push_back({RefKind::SimilarSpan, sample_similar_span(ep, q.gt_span)});
      } catch (const NoCandidate& e) {
        refs.errors.emplace_back(e.what());
      }
      for (const Span& s : other_query_spans(ep, q))
        refs.spans.push_back({RefKind::OtherQuerySpan, s});
      for (std::size_t r = 0; r < cfg.random_per_query; ++r) {
        try {
          auto seed = derive_seed(cfg.seed, {hash_string(q.id), r});
          refs.spans.push_back({RefKind::RandomSpan, sample_random_span(ep, q.gt_span, beta, seed)});
        } catch (const SamplingExhausted& e) {
          refs.errors.emplace_back(e.what());
        }
      }
      out.push_back(std::move(refs));
    }
  }
  return out;
}

std::vector<double> gt_durations(std::span<const EpisodeRecord> episodes) {
  std::vector<double> out;
  for (const auto& ep : episodes)
    for (const auto& q : ep.queries) out.push_back(span_duration(q.gt_span));
  return out;
}

}  // namespace interloc::refsample
