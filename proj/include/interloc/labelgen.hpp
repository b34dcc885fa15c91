#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "interloc/core.hpp"
#include "interloc/synthworld.hpp"

namespace interloc::labelgen {

/// Per-clip supervision for the alignment model.
struct AlignmentLabels {
  std::vector<double> s_c;  // contains scores
  std::vector<double> s_k;  // inverted not-contains scores
  std::vector<std::uint8_t> l_c, l_k, l_t, l;
  bool has_contains = false;
  bool has_not_contains = false;
  bool has_temporal = false;

  std::size_t size() const noexcept { return l.size(); }
  bool operator==(const AlignmentLabels&) const = default;
};

struct LabelConfig {
  double smoothing_sigma = 2.0;  // clips
};

/// Mean cosine to the clause terms per clip, mapped to [0,1].
std::vector<double> clause_similarity(const synthworld::Embedder& emb,
                                      std::span<const std::string> clause_terms,
                                      const EpisodeRecord& ep);

/// Gaussian smoothing (reflect padding, radius ceil(3 sigma)) then min-max normalization.
std::vector<double> smooth_and_normalize(std::span<const double> scores, double sigma);

std::vector<double> invert_not_contains(std::span<const double> s_n);

struct Threshold {
  double mean = 0.0;
  double stddev = 0.0;  // population
  double delta = 0.0;
};

/// Statistics over the ground-truth clips; throws DegenerateSpan.
Threshold gt_threshold(std::span<const double> scores, const Span& gt);

/// 1 where score >= mean - 3 * stddev of the scores inside gt.
std::vector<std::uint8_t> binarize(std::span<const double> scores, const Span& gt);

std::vector<std::uint8_t> temporal_labels(const Span& ref, Temporal direction, std::size_t m);

std::vector<std::uint8_t> logical_and(std::span<const std::uint8_t> a,
                                      std::span<const std::uint8_t> b);

AlignmentLabels make_labels(const FeedbackSample& sample, const QueryRecord& query,
                            const EpisodeRecord& ep, const synthworld::Embedder& emb,
                            const LabelConfig& cfg = {});

}  // namespace interloc::labelgen
