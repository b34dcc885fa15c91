#include <cmath>
#include <numeric>

#include "doctest.h"
#include "interloc/error.hpp"
#include "interloc/refsample.hpp"
#include "interloc/rng.hpp"
#include "interloc/synthworld.hpp"

using namespace interloc;
using namespace interloc::refsample;

namespace {

EpisodeRecord flat_episode(std::size_t m, std::size_t d = 4) {
  EpisodeRecord ep;
  ep.id = "e";
  ep.clip_count = m;
  ep.features = Matrix(m, d);
  for (std::size_t i = 0; i < m; ++i) ep.features(i, i % d) = 1.0f;
  ep.clip_events.assign(m, {"ev00"});
  return ep;
}

// Independent method-of-moments computation.
std::pair<double, double> moments_oracle(std::vector<double> d) {
  const double lo = *std::min_element(d.begin(), d.end());
  const double hi = *std::max_element(d.begin(), d.end());
  for (auto& v : d) v = std::min(std::max((v - lo) / (hi - lo), 1e-6), 1 - 1e-6);
  double mu = 0;
  for (double v : d) mu += v;
  mu /= d.size();
  double var = 0;
  for (double v : d) var += (v - mu) * (v - mu);
  var /= d.size();
  const double k = mu * (1 - mu) / var - 1;
  return {mu * k, (1 - mu) * k};
}

}  // namespace

TEST_CASE("fit_beta matches a hand method-of-moments oracle") {
  const std::vector<double> d{2, 4, 4, 6, 8, 10};
  const auto p = fit_beta(d);
  const auto [a, b] = moments_oracle(d);
  CHECK(p.a == doctest::Approx(a).epsilon(1e-9));
  CHECK(p.b == doctest::Approx(b).epsilon(1e-9));
  CHECK(p.dur_min == 2.0);
  CHECK(p.dur_max == 10.0);
}

TEST_CASE("fit_beta is scale invariant and symmetric") {
  const std::vector<double> d{2, 4, 4, 6, 8, 10};
  std::vector<double> scaled;
  for (double v : d) scaled.push_back(3.5 * v);
  const auto p = fit_beta(d), q = fit_beta(scaled);
  CHECK(q.a == doctest::Approx(p.a).epsilon(1e-9));
  CHECK(q.b == doctest::Approx(p.b).epsilon(1e-9));
  CHECK(q.dur_min == doctest::Approx(3.5 * p.dur_min));
  CHECK(q.dur_max == doctest::Approx(3.5 * p.dur_max));
  const std::vector<double> sym{1, 2, 3, 4, 5, 3, 2, 4};
  const auto s = fit_beta(sym);
  CHECK(std::abs(s.a - s.b) < 1e-9);
}

TEST_CASE("fit_beta errors") {
  CHECK_THROWS_AS(fit_beta(std::vector<double>{1, 1, 2}), DegenerateDurations);
  CHECK_THROWS_AS(fit_beta(std::vector<double>{}), DegenerateDurations);
}

TEST_CASE("fit_beta round trip preserves the first two moments") {
  Rng rng(99);
  std::vector<double> d;
  for (int i = 0; i < 10000; ++i) d.push_back(2.0 + 10.0 * rng.beta(2.0, 5.0));
  const auto p = fit_beta(d);
  auto moments = [](const std::vector<double>& v) {
    double m = 0, q = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) q += (x - m) * (x - m);
    return std::pair{m, q / static_cast<double>(v.size())};
  };
  Rng draw(100);
  std::vector<double> r;
  for (int i = 0; i < 10000; ++i) r.push_back(p.dur_min + (p.dur_max - p.dur_min) * draw.beta(p.a, p.b));
  const auto [m0, v0] = moments(d);
  const auto [m1, v1] = moments(r);
  CHECK(std::abs(m1 - m0) / m0 < 0.02);
  CHECK(std::abs(v1 - v0) / v0 < 0.05);
  // Shape stays right-skewed like the source.
  CHECK(p.a < p.b);
}

TEST_CASE("fit_beta round trip recovers shapes whose samples reach the support ends") {
  // Normalizing by the sample range only matches the true support when the density is
  // non-negligible near both ends; peaked shapes such as Beta(4, 6) are biased low.
  const double shapes[][2] = {{0.8, 0.8}, {1.0, 1.0}, {2.0, 2.0}, {1.5, 3.0}};
  for (const auto& s : shapes) {
    Rng rng(99);
    std::vector<double> d;
    for (int i = 0; i < 10000; ++i) d.push_back(rng.beta(s[0], s[1]));
    const auto p = fit_beta(d);
    INFO("Beta(" << s[0] << ", " << s[1] << ") -> (" << p.a << ", " << p.b << ")");
    CHECK(std::abs(p.a / s[0] - 1.0) < 0.15);
    CHECK(std::abs(p.b / s[1] - 1.0) < 0.15);
  }
}

TEST_CASE("sample_random_span") {
  const auto ep = flat_episode(80);
  const BetaParams beta{2.0, 3.0, 2.0, 12.0};
  const Span gt{10, 14};
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Span r = sample_random_span(ep, gt, beta, s);
    CHECK(tiou(r, gt) == 0.0);
    CHECK(r.start >= 0.0);
    CHECK(r.end <= 80.0);
    CHECK(r.start < r.end);
  }
  CHECK(sample_random_span(ep, gt, beta, 5) == sample_random_span(ep, gt, beta, 5));
  CHECK_THROWS_AS(sample_random_span(ep, {0, 80}, beta, 1), SamplingExhausted);
}

TEST_CASE("sample_similar_span finds the duplicated run") {
  // Event A on [4,8) and [20,24); everything else orthogonal filler.
  auto ep = flat_episode(32, 8);
  for (std::size_t i = 0; i < 32; ++i) {
    for (std::size_t k = 0; k < 8; ++k) ep.features(i, k) = 0.0f;
    ep.features(i, 1 + i % 3) = 1.0f;
  }
  for (std::size_t i : {4u, 5u, 6u, 7u, 20u, 21u, 22u, 23u}) {
    for (std::size_t k = 0; k < 8; ++k) ep.features(i, k) = 0.0f;
    ep.features(i, 0) = 1.0f;
  }
  const Span s = sample_similar_span(ep, {4, 8});
  CHECK(intersection(s, Span{20, 24}) > 0.0);
  CHECK(tiou(s, Span{4, 8}) == 0.0);
}

TEST_CASE("sample_similar_span equals the strided brute-force argmax") {
  synthworld::WorldConfig cfg;
  cfg.episodes = 5;
  const auto world = synthworld::generate_world(cfg);
  for (const auto& ep : world)
    for (const auto& q : ep.queries) {
      const auto cands = similar_span_candidates(ep, q.gt_span);
      const double len = span_duration(q.gt_span);
      const double stride = std::max(1.0, std::floor(len / 4));
      for (std::size_t i = 0; i < cands.size(); ++i) CHECK(cands[i].start == doctest::Approx(i * stride));
      const auto target = synthworld::span_embedding(ep, q.gt_span);
      double best = -2;
      Span arg{};
      for (const auto& c : cands) {
        if (tiou(c, q.gt_span) != 0.0) continue;
        const double v = synthworld::cosine(synthworld::span_embedding(ep, c), target);
        if (v > best) {
          best = v;
          arg = c;
        }
      }
      CHECK(sample_similar_span(ep, q.gt_span) == arg);
    }
}

TEST_CASE("sample_similar_span without room raises NoCandidate") {
  const auto ep = flat_episode(20);
  CHECK_THROWS_AS(sample_similar_span(ep, {2, 19}), NoCandidate);
}

TEST_CASE("collect_failure_spans") {
  const Span gt{10, 20};
  auto at = [&](double t) {  // span with the requested tIoU against gt, sharing its start
    return ScoredSpan{{10.0, 10.0 + 10.0 * t}, 1.0};
  };
  std::map<std::string, Span> gts{{"perfect", gt}, {"bad", gt}, {"top5", gt}};
  std::map<std::string, SpanPrediction> preds;
  preds["perfect"] = {{gt, 1.0}};
  preds["bad"] = {at(0.1), {{30, 31}, 0.9}, at(0.2), {{40, 41}, 0.5}, at(0.1)};
  preds["top5"] = {at(0.1), at(0.6)};
  auto r5 = collect_failure_spans(preds, gts, FailureMode::Recall5);
  auto t1 = collect_failure_spans(preds, gts, FailureMode::Top1);
  CHECK(r5.size() == 1);
  CHECK(r5.count("bad"));
  CHECK(r5["bad"] == preds["bad"][0].span);
  CHECK(t1.size() == 2);
  CHECK(t1.count("bad"));
  CHECK(t1.count("top5"));

  std::map<std::string, SpanPrediction> perfect{{"perfect", {{gt, 1.0}}}};
  CHECK(collect_failure_spans(perfect, gts, FailureMode::Top1).empty());
}

TEST_CASE("collect_failure_spans matches a brute-force recall oracle") {
  Rng rng(4);
  std::map<std::string, Span> gts;
  std::map<std::string, SpanPrediction> preds;
  for (int q = 0; q < 200; ++q) {
    const std::string id = "q" + std::to_string(q);
    const double s = rng.uniform(0, 40);
    gts[id] = {s, s + rng.uniform(1, 10)};
    SpanPrediction p;
    for (int k = 0; k < 5; ++k) {
      const double a = rng.uniform(0, 45);
      p.push_back({{a, a + rng.uniform(1, 10)}, 1.0 - 0.1 * k});
    }
    preds[id] = p;
  }
  for (auto mode : {FailureMode::Recall5, FailureMode::Top1}) {
    const auto got = collect_failure_spans(preds, gts, mode);
    for (const auto& [id, p] : preds) {
      const std::size_t depth = mode == FailureMode::Recall5 ? 5 : 1;
      bool hit = false;
      for (std::size_t k = 0; k < depth; ++k) hit |= tiou(p[k].span, gts[id]) >= 0.3;
      CHECK(got.count(id) == (hit ? 0u : 1u));
    }
  }
}

TEST_CASE("other_query_spans") {
  auto ep = flat_episode(40);
  QueryRecord a, b;
  a.id = "a";
  a.gt_span = {2, 6};
  b.id = "b";
  b.gt_span = {10, 14};
  ep.queries = {a};
  CHECK(other_query_spans(ep, a).empty());
  ep.queries = {a, b};
  CHECK(other_query_spans(ep, a) == std::vector<Span>{b.gt_span});
  CHECK(other_query_spans(ep, b) == std::vector<Span>{a.gt_span});
  ep.queries[1].gt_span = {5, 9};
  CHECK(other_query_spans(ep, a).empty());
}

TEST_CASE("sampled references are disjoint from gt except model failures") {
  synthworld::WorldConfig cfg;
  cfg.episodes = 20;
  const auto world = synthworld::generate_world(cfg);
  const auto beta = fit_beta(gt_durations(world));
  std::map<std::string, Span> failures{{world[0].queries[0].id, world[0].queries[0].gt_span}};
  const auto refs = sample_references(world, beta, failures, {});
  std::size_t n = 0;
  const EpisodeIndex idx(world);
  for (const auto& qr : refs) {
    const auto& q = idx.query(qr.episode_id, qr.query_id);
    for (const auto& r : qr.spans) {
      ++n;
      CHECK(is_valid(r.span, idx.episode(qr.episode_id).clip_count));
      if (r.kind != RefKind::ModelFailure) CHECK(tiou(r.span, q.gt_span) == 0.0);
    }
  }
  CHECK(n > 100);
  CHECK(refs == sample_references(world, beta, failures, {}));
}
