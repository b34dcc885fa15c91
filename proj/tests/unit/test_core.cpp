#include <random>

#include "doctest.h"
#include "interloc/core.hpp"
#include "interloc/error.hpp"

using namespace interloc;

TEST_CASE("tiou examples") {
  CHECK(tiou({3, 7}, {3, 7}) == doctest::Approx(1.0));
  CHECK(tiou({0, 5}, {5, 9}) == 0.0);
  CHECK(tiou({0, 10}, {5, 15}) == doctest::Approx(5.0 / 15.0).epsilon(1e-12));
}

TEST_CASE("span_duration examples") {
  CHECK(span_duration({2, 6}) == 4.0);
  CHECK(span_duration({0, 1}) == 1.0);
  CHECK(span_duration({1.5, 2.75}) == 1.25);
}

TEST_CASE("clips_in_span examples") {
  CHECK(clips_in_span({2, 5}, 10) == std::vector<std::size_t>{2, 3, 4});
  CHECK(clips_in_span({0, 1}, 4) == std::vector<std::size_t>{0});
  CHECK(clips_in_span({2.6, 4.4}, 10) == std::vector<std::size_t>{3});
  CHECK(clips_in_span({2.2, 2.6}, 10).empty());
  CHECK_THROWS_AS(clips_in_span_checked({2.2, 2.6}, 10), DegenerateSpan);
}

TEST_CASE("clips_in_span never empty for unit-or-longer spans") {
  std::mt19937_64 g(5);
  std::uniform_real_distribution<double> u(0.0, 30.0), d(1.0, 8.0);
  for (int i = 0; i < 500; ++i) {
    const double s = u(g);
    const Span sp{s, s + d(g)};
    CHECK_FALSE(clips_in_span(sp, 40).empty());
  }
}

TEST_CASE("span validity") {
  CHECK(is_valid(Span{0, 1}));
  CHECK_FALSE(is_valid(Span{2, 2}));
  CHECK_FALSE(is_valid(Span{-1, 2}));
  CHECK_FALSE(is_valid(Span{3, 11}, 10));
  CHECK_THROWS_AS(require_valid(Span{5, 3}), DegenerateSpan);
}

TEST_CASE("tiou properties on random spans") {
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(0.0, 50.0), d(0.1, 20.0);
  for (int i = 0; i < 1000; ++i) {
    const double s1 = u(g), s2 = u(g);
    const Span a{s1, s1 + d(g)}, b{s2, s2 + d(g)};
    const double t = tiou(a, b);
    CHECK(t == tiou(b, a));
    CHECK(t >= 0.0);
    CHECK(t <= 1.0);
    CHECK((t == 0.0) == (intersection(a, b) == 0.0));
    // Nesting: a ⊆ b ⊆ c implies tiou(b, c) >= tiou(a, c).
    const Span c{std::min(a.start, b.start) - 1.0, std::max(a.end, b.end) + 1.0};
    const Span inner{a.start, a.end};
    const Span mid{std::min(a.start, b.start), std::max(a.end, b.end)};
    CHECK(tiou(mid, c) >= tiou(inner, c));
  }
}

TEST_CASE("enum string round trips") {
  for (auto k : {RefKind::RandomSpan, RefKind::SimilarSpan, RefKind::ModelFailure,
                 RefKind::OtherQuerySpan, RefKind::SimpleTemporal})
    CHECK(ref_kind_from_string(to_string(k)) == k);
  for (auto t : {Temporal::None, Temporal::Before, Temporal::After})
    CHECK(temporal_from_string(to_string(t)) == t);
  CHECK_THROWS(ref_kind_from_string("bogus"));
  CHECK(is_query_relevant(RefKind::ModelFailure));
  CHECK(is_query_relevant(RefKind::SimilarSpan));
  CHECK_FALSE(is_query_relevant(RefKind::RandomSpan));
  CHECK_FALSE(is_query_relevant(RefKind::OtherQuerySpan));
}

TEST_CASE("EpisodeIndex lookups") {
  std::vector<EpisodeRecord> eps(2);
  eps[0].id = "a";
  eps[1].id = "b";
  eps[1].queries.push_back({});
  eps[1].queries[0].id = "b-q0";
  EpisodeIndex idx(eps);
  CHECK(&idx.episode("b") == &eps[1]);
  CHECK(idx.query("b", "b-q0").id == "b-q0");
  CHECK_THROWS_AS(idx.episode("zz"), DataError);
  CHECK_THROWS_AS(idx.query("a", "b-q0"), DataError);
}
