#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "interloc/core.hpp"

namespace interloc::synthworld {

struct WorldConfig {
  std::uint64_t seed = 7;
  std::size_t vocab_size = 256;
  std::size_t embed_dim = 32;
  std::size_t event_types = 64;  // global event vocabulary; the rest are attributes
  std::size_t episodes = 500;
  std::size_t clips_min = 40;
  std::size_t clips_max = 80;
  std::size_t events_min = 4;  // distinct event types used inside one episode
  std::size_t events_max = 8;
  std::size_t run_min = 3;  // clips per contiguous event run
  std::size_t run_max = 10;
  std::size_t queries_min = 2;
  std::size_t queries_max = 4;
  std::size_t distractors_min = 1;  // same-event runs planted per ambiguous query
  std::size_t distractors_max = 2;
  double ambiguity_rate = 0.8;
  double what_rate = 0.5;
  double noise_sigma = 0.1;  // expected L2 norm of the per-clip noise vector
  std::string split = "train";

  /// Throws ConfigError on infeasible settings.
  void validate() const;
};

inline constexpr std::string_view kBeforeToken = "<before>";
inline constexpr std::string_view kAfterToken = "<after>";

/// Token names: two reserved direction tokens, then events, then attributes.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::size_t vocab_size, std::size_t event_types);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t event_count() const noexcept { return event_count_; }
  std::size_t attribute_count() const noexcept { return size() - 2 - event_count_; }
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  const std::string& event(std::size_t i) const { return tokens_.at(2 + i); }
  const std::string& attribute(std::size_t i) const { return tokens_.at(2 + event_count_ + i); }
  bool contains(std::string_view token) const;
  bool is_event(std::string_view token) const;
  /// Throws UnknownToken.
  std::size_t index(std::string_view token) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t event_count_ = 0;
};

/// Fixed unit-norm token table standing in for the pretrained video/text encoders.
class Embedder {
 public:
  Embedder() = default;
  Embedder(std::uint64_t seed, std::size_t vocab_size, std::size_t dim, std::size_t event_types);
  static Embedder from_config(const WorldConfig& cfg);

  std::size_t dim() const noexcept { return dim_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  std::span<const double> embedding(std::string_view token) const;
  std::span<const double> row(std::size_t index) const {
    return {table_.data() + index * dim_, dim_};
  }

 private:
  Vocabulary vocab_;
  std::size_t dim_ = 0;
  std::vector<double> table_;
};

/// t x d matrix with row i the embedding of terms[i]; throws UnknownToken.
Matrix embed_terms(const Embedder& emb, std::span<const std::string> terms);

std::vector<EpisodeRecord> generate_world(const WorldConfig& cfg, const Embedder& emb);
std::vector<EpisodeRecord> generate_world(const WorldConfig& cfg);

/// Mean clip feature over clips_in_span(s); throws DegenerateSpan.
std::vector<double> span_embedding(const EpisodeRecord& ep, const Span& s);

double cosine(std::span<const double> a, std::span<const double> b);
double cosine(std::span<const float> a, std::span<const double> b);

}  // namespace interloc::synthworld
