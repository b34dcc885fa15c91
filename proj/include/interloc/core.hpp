#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace interloc {

/// Dense row-major float matrix used for stored features and token embeddings.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<float>& data() noexcept { return data_; }
  const std::vector<float>& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// Half-open interval [start, end) in clip units.
struct Span {
  double start = 0.0;
  double end = 0.0;

  bool operator==(const Span&) const = default;
};

bool is_valid(const Span& s) noexcept;
bool is_valid(const Span& s, std::size_t clip_count) noexcept;

/// Throws DegenerateSpan unless `s` is valid (and inside [0, clip_count] when given).
void require_valid(const Span& s, std::optional<std::size_t> clip_count = std::nullopt);

double span_duration(const Span& s);
double intersection(const Span& a, const Span& b);
double tiou(const Span& a, const Span& b);

/// Clip indices whose interval [i, i+1) overlaps `s` by more than half a clip.
std::vector<std::size_t> clips_in_span(const Span& s, std::size_t clip_count);

/// Same as clips_in_span but throws DegenerateSpan on an empty result.
std::vector<std::size_t> clips_in_span_checked(const Span& s, std::size_t clip_count);

enum class QueryKind { Where, What };

struct QueryRecord {
  std::string id;
  std::vector<std::string> terms;
  Matrix embedding_tokens;  // one row per term
  Span gt_span;
  QueryKind kind = QueryKind::Where;
  std::string answer_token;  // empty for Where queries

  bool operator==(const QueryRecord&) const = default;
};

struct EpisodeRecord {
  std::string id;
  std::size_t clip_count = 0;
  std::vector<std::vector<std::string>> clip_events;  // event token first, then attributes
  Matrix features;                                    // clip_count x d, unit rows
  std::vector<QueryRecord> queries;

  const QueryRecord* find_query(std::string_view query_id) const;
  bool operator==(const EpisodeRecord&) const = default;
};

enum class Temporal { None, Before, After };

struct ClauseSet {
  std::vector<std::string> contains;
  std::vector<std::string> not_contains;
  Temporal temporal = Temporal::None;

  bool has_contains() const noexcept { return !contains.empty(); }
  bool has_not_contains() const noexcept { return !not_contains.empty(); }
  bool has_temporal() const noexcept { return temporal != Temporal::None; }
  bool degenerate() const noexcept {
    return !has_contains() && !has_not_contains() && !has_temporal();
  }
  bool operator==(const ClauseSet&) const = default;
};

enum class RefKind { RandomSpan, SimilarSpan, ModelFailure, OtherQuerySpan, SimpleTemporal };

/// Query-relevant kinds carry information related to the query itself.
bool is_query_relevant(RefKind kind) noexcept;

struct FeedbackSample {
  std::string episode_id;
  std::string query_id;
  Span ref_span;
  ClauseSet clauses;
  std::string text;
  Matrix embedding_tokens;  // f_t x d
  RefKind ref_kind = RefKind::RandomSpan;

  bool operator==(const FeedbackSample&) const = default;
};

struct ScoredSpan {
  Span span;
  double score = 0.0;
  bool operator==(const ScoredSpan&) const = default;
};

/// Ranked spans, descending by score.
using SpanPrediction = std::vector<ScoredSpan>;

/// Non-owning lookup of episodes by id; the episodes must outlive the index.
class EpisodeIndex {
 public:
  EpisodeIndex() = default;
  explicit EpisodeIndex(std::span<const EpisodeRecord> episodes);
  /// Throws DataError for an unknown id.
  const EpisodeRecord& episode(std::string_view id) const;
  /// Throws DataError for an unknown episode or query.
  const QueryRecord& query(std::string_view episode_id, std::string_view query_id) const;

 private:
  std::unordered_map<std::string, const EpisodeRecord*> by_id_;
};

std::string_view to_string(Temporal t);
std::string_view to_string(RefKind k);
std::string_view to_string(QueryKind k);
Temporal temporal_from_string(std::string_view s);
RefKind ref_kind_from_string(std::string_view s);
QueryKind query_kind_from_string(std::string_view s);

}  // namespace interloc
