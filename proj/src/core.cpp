#include "interloc/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "interloc/error.hpp"

namespace interloc {

bool is_valid(const Span& s) noexcept {
  return std::isfinite(s.start) && std::isfinite(s.end) && s.start >= 0.0 && s.start < s.end;
}

bool is_valid(const Span& s, std::size_t clip_count) noexcept {
  return is_valid(s) && s.end <= static_cast<double>(clip_count);
}

void require_valid(const Span& s, std::optional<std::size_t> clip_count) {
  bool ok = clip_count ? is_valid(s, *clip_count) : is_valid(s);
  if (!ok) {
    std::ostringstream os;
    os << "invalid span [" << s.start << ", " << s.end << ")";
    if (clip_count) os << " for " << *clip_count << " clips";
    throw DegenerateSpan(os.str());
  }
}

double span_duration(const Span& s) { return s.end - s.start; }

double intersection(const Span& a, const Span& b) {
  return std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
}

double tiou(const Span& a, const Span& b) {
  double inter = intersection(a, b);
  double uni = span_duration(a) + span_duration(b) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<std::size_t> clips_in_span(const Span& s, std::size_t clip_count) {
  std::vector<std::size_t> out;
  if (!is_valid(s)) return out;
  auto first = static_cast<std::size_t>(std::max(0.0, std::floor(s.start)));
  auto last = std::min(clip_count, static_cast<std::size_t>(std::ceil(s.end)));
  for (std::size_t i = first; i < last; ++i) {
    Span clip{static_cast<double>(i), static_cast<double>(i + 1)};
    if (intersection(clip, s) > 0.5) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> clips_in_span_checked(const Span& s, std::size_t clip_count) {
  auto clips = clips_in_span(s, clip_count);
  if (clips.empty()) {
    std::ostringstream os;
    os << "span [" << s.start << ", " << s.end << ") covers no clip";
    throw DegenerateSpan(os.str());
  }
  return clips;
}

const QueryRecord* EpisodeRecord::find_query(std::string_view query_id) const {
  for (const auto& q : queries)
    if (q.id == query_id) return &q;
  return nullptr;
}

EpisodeIndex::EpisodeIndex(std::span<const EpisodeRecord> episodes) {
  for (const auto& ep : episodes) by_id_.emplace(ep.id, &ep);
}

const EpisodeRecord& EpisodeIndex::episode(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) throw DataError("unknown episode '" + std::string(id) + "'");
  return *it->second;
}

const QueryRecord& EpisodeIndex::query(std::string_view episode_id,
                                       std::string_view query_id) const {
  const auto* q = episode(episode_id).find_query(query_id);
  if (!q)
    throw DataError("episode '" + std::string(episode_id) + "' has no query '" +
                    std::string(query_id) + "'");
  return *q;
}

bool is_query_relevant(RefKind kind) noexcept {
  return kind == RefKind::ModelFailure || kind == RefKind::SimilarSpan;
}

std::string_view to_string(Temporal t) {
  switch (t) {
    case Temporal::Before: return "before";
    case Temporal::After: return "after";
    case Temporal::None: break;
  }
  return "none";
}

std::string_view to_string(RefKind k) {
  switch (k) {
    case RefKind::RandomSpan: return "random";
    case RefKind::SimilarSpan: return "similar";
    case RefKind::ModelFailure: return "model_failure";
    case RefKind::OtherQuerySpan: return "other_query";
    case RefKind::SimpleTemporal: return "simple_temporal";
  }
  return "random";
}

std::string_view to_string(QueryKind k) { return k == QueryKind::What ? "what" : "where"; }

Temporal temporal_from_string(std::string_view s) {
  if (s == "before") return Temporal::Before;
  if (s == "after") return Temporal::After;
  if (s == "none") return Temporal::None;
  throw DataError("unknown temporal direction '" + std::string(s) + "'");
}

RefKind ref_kind_from_string(std::string_view s) {
  for (auto k : {RefKind::RandomSpan, RefKind::SimilarSpan, RefKind::ModelFailure,
                 RefKind::OtherQuerySpan, RefKind::SimpleTemporal})
    if (to_string(k) == s) return k;
  throw DataError("unknown reference kind '" + std::string(s) + "'");
}

QueryKind query_kind_from_string(std::string_view s) {
  if (s == "what") return QueryKind::What;
  if (s == "where") return QueryKind::Where;
  throw DataError("unknown query kind '" + std::string(s) + "'");
}

}  // namespace interloc
