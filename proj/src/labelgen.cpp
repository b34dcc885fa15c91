#include "interloc/labelgen.hpp"

#include <algorithm>
#include <cmath>

#include "interloc/error.hpp"

namespace interloc::labelgen {

std::vector<double> clause_similarity(const synthworld::Embedder& emb,
                                      std::span<const std::string> clause_terms,
                                      const EpisodeRecord& ep) {
  if (clause_terms.empty()) throw DataError("clause has no terms");
  std::vector<std::span<const double>> terms;
  for (const auto& t : clause_terms) terms.push_back(emb.embedding(t));
  std::vector<double> out(ep.clip_count, 0.0);
  for (std::size_t i = 0; i < ep.clip_count; ++i) {
    double acc = 0.0;
    for (const auto& t : terms) acc += synthworld::cosine(ep.features.row(i), t);
    out[i] = (acc / static_cast<double>(terms.size()) + 1.0) / 2.0;
  }
  return out;
}

namespace {

// Half-sample symmetric reflection: ... b a | a b c | c b ...
std::size_t reflect_index(long i, long n) {
  const long period = 2 * n;
  long r = ((i % period) + period) % period;
  return static_cast<std::size_t>(r < n ? r : period - 1 - r);
}

}  // namespace

std::vector<double> smooth_and_normalize(std::span<const double> scores, double sigma) {
  const auto n = static_cast<long>(scores.size());
  std::vector<double> smoothed(scores.begin(), scores.end());
  if (sigma > 0.0 && n > 0) {
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (long k = -radius; k <= radius; ++k) {
      double w = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
      kernel[static_cast<std::size_t>(k + radius)] = w;
      total += w;
    }
    for (auto& w : kernel) w /= total;
    for (long i = 0; i < n; ++i) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] * scores[reflect_index(i + k, n)];
      smoothed[static_cast<std::size_t>(i)] = acc;
    }
  }
  if (smoothed.empty()) return smoothed;
  auto [lo_it, hi_it] = std::minmax_element(smoothed.begin(), smoothed.end());
  const double lo = *lo_it, hi = *hi_it;
  for (auto& v : smoothed) v = hi > lo ? (v - lo) / (hi - lo) : 0.5;
  return smoothed;
}

std::vector<double> invert_not_contains(std::span<const double> s_n) {
  std::vector<double> out(s_n.size());
  std::transform(s_n.begin(), s_n.end(), out.begin(), [](double v) { return 1.0 - v; });
  return out;
}

Threshold gt_threshold(std::span<const double> scores, const Span& gt) {
  auto clips = clips_in_span_checked(gt, scores.size());
  Threshold t;
  for (auto i : clips) t.mean += scores[i];
  t.mean /= static_cast<double>(clips.size());
  double var = 0.0;
  for (auto i : clips) var += (scores[i] - t.mean) * (scores[i] - t.mean);
  t.stddev = std::sqrt(var / static_cast<double>(clips.size()));
  t.delta = t.mean - 3.0 * t.stddev;
  return t;
}

std::vector<std::uint8_t> binarize(std::span<const double> scores, const Span& gt) {
  const double delta = gt_threshold(scores, gt).delta;
  std::vector<std::uint8_t> out(scores.size());
  std::transform(scores.begin(), scores.end(), out.begin(),
                 [&](double v) { return static_cast<std::uint8_t>(v >= delta); });
  return out;
}

std::vector<std::uint8_t> temporal_labels(const Span& ref, Temporal direction, std::size_t m) {
  std::vector<std::uint8_t> out(m, 1);
  if (direction == Temporal::None) return out;
  for (std::size_t i = 0; i < m; ++i) {
    const auto lo = static_cast<double>(i);
    out[i] = direction == Temporal::Before ? (lo + 1.0 <= ref.start) : (lo >= ref.end);
  }
  return out;
}

std::vector<std::uint8_t> logical_and(std::span<const std::uint8_t> a,
                                      std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ShapeMismatch("label vectors differ in length");
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && b[i];
  return out;
}

AlignmentLabels make_labels(const FeedbackSample& sample, const QueryRecord& query,
                            const EpisodeRecord& ep, const synthworld::Embedder& emb,
                            const LabelConfig& cfg) {
  const std::size_t m = ep.clip_count;
  require_valid(sample.ref_span, m);
  AlignmentLabels out;
  out.has_contains = sample.clauses.has_contains();
  out.has_not_contains = sample.clauses.has_not_contains();
  out.has_temporal = sample.clauses.has_temporal();

  // Absent components are neutral: 0.5 scores, all-ones labels.
  out.s_c.assign(m, 0.5);
  out.s_k.assign(m, 0.5);
  out.l_c.assign(m, 1);
  out.l_k.assign(m, 1);
  if (out.has_contains) {
    out.s_c = smooth_and_normalize(clause_similarity(emb, sample.clauses.contains, ep),
                                   cfg.smoothing_sigma);
    out.l_c = binarize(out.s_c, query.gt_span);
  }
  if (out.has_not_contains) {
    auto s_n = smooth_and_normalize(clause_similarity(emb, sample.clauses.not_contains, ep),
                                    cfg.smoothing_sigma);
    out.s_k = invert_not_contains(s_n);
    out.l_k = binarize(out.s_k, query.gt_span);
  }
  out.l_t = temporal_labels(sample.ref_span, sample.clauses.temporal, m);
  out.l = logical_and(logical_and(out.l_c, out.l_k), out.l_t);
  return out;
}

}  // namespace interloc::labelgen
