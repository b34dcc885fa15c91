#include <cmath>
#include <set>

#include "doctest.h"
#include "interloc/error.hpp"
#include "interloc/synthworld.hpp"

using namespace interloc;
using namespace interloc::synthworld;

namespace {

WorldConfig small_world(std::size_t episodes = 20) {
  WorldConfig c;
  c.episodes = episodes;
  return c;
}

// Maximal runs of clips whose event token equals `event`.
std::vector<Span> runs_of(const EpisodeRecord& ep, const std::string& event) {
  std::vector<Span> out;
  for (std::size_t i = 0; i < ep.clip_count; ++i) {
    if (ep.clip_events[i][0] != event) continue;
    if (!out.empty() && out.back().end == static_cast<double>(i))
      out.back().end += 1.0;
    else
      out.push_back({static_cast<double>(i), static_cast<double>(i + 1)});
  }
  return out;
}

}  // namespace

TEST_CASE("embedder rows are unit norm and seed-determined") {
  const Embedder a(3, 256, 32, 64), b(3, 256, 32, 64), c(4, 256, 32, 64);
  for (std::size_t i = 0; i < 256; ++i) {
    double n = 0;
    for (double v : a.row(i)) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(std::equal(a.row(10).begin(), a.row(10).end(), b.row(10).begin()));
  CHECK_FALSE(std::equal(a.row(10).begin(), a.row(10).end(), c.row(10).begin()));
}

TEST_CASE("embed_terms examples") {
  const auto emb = Embedder::from_config(small_world());
  CHECK(embed_terms(emb, std::vector<std::string>{}).rows() == 0);
  const std::vector<std::string> t1{"ev03", "ev03"};
  auto m = embed_terms(emb, t1);
  CHECK(std::equal(m.row(0).begin(), m.row(0).end(), m.row(1).begin()));
  const std::vector<std::string> t2{"ev03", "at010"};
  m = embed_terms(emb, t2);
  for (std::size_t k = 0; k < emb.dim(); ++k) {
    CHECK(m(0, k) == static_cast<float>(emb.embedding("ev03")[k]));
    CHECK(m(1, k) == static_cast<float>(emb.embedding("at010")[k]));
  }
  const std::vector<std::string> bad{"nope"};
  CHECK_THROWS_AS(embed_terms(emb, bad), UnknownToken);
}

TEST_CASE("generate_world is deterministic") {
  const auto cfg = small_world(10);
  CHECK(generate_world(cfg) == generate_world(cfg));
  auto other = cfg;
  other.seed = 8;
  CHECK_FALSE(generate_world(cfg) == generate_world(other));
}

TEST_CASE("generated structure: seed 7, 50 episodes, clips 40-80") {
  WorldConfig cfg;
  cfg.seed = 7;
  cfg.episodes = 50;
  const auto world = generate_world(cfg);
  REQUIRE(world.size() == 50);
  const auto emb = Embedder::from_config(cfg);
  for (const auto& ep : world) {
    CHECK(ep.clip_count >= 40);
    CHECK(ep.clip_count <= 80);
    REQUIRE(ep.features.rows() == ep.clip_count);
    for (std::size_t i = 0; i < ep.clip_count; ++i) {
      double n = 0;
      for (float v : ep.features.row(i)) {
        CHECK(std::isfinite(v));
        n += double(v) * v;
      }
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
      const auto& toks = ep.clip_events[i];
      CHECK(toks.size() >= 1);
      CHECK(toks.size() <= 3);
      CHECK(emb.vocabulary().is_event(toks[0]));
      for (const auto& t : toks) CHECK(emb.vocabulary().contains(t));
    }
    for (const auto& q : ep.queries) {
      REQUIRE(is_valid(q.gt_span, ep.clip_count));
      CHECK(q.embedding_tokens.rows() == q.terms.size());
      for (auto c : clips_in_span(q.gt_span, ep.clip_count))
        CHECK(ep.clip_events[c][0] == q.terms[0]);
      if (q.kind == QueryKind::What) {
        const auto& toks = ep.clip_events[static_cast<std::size_t>(q.gt_span.start)];
        CHECK(std::find(toks.begin() + 1, toks.end(), q.answer_token) != toks.end());
      }
    }
  }
}

TEST_CASE("ambiguity_rate 1 plants a same-event run elsewhere with different attributes") {
  auto cfg = small_world(30);
  cfg.ambiguity_rate = 1.0;
  const auto world = generate_world(cfg);
  std::size_t queries = 0;
  for (const auto& ep : world)
    for (const auto& q : ep.queries) {
      ++queries;
      const auto runs = runs_of(ep, q.terms[0]);
      CHECK(runs.size() >= 2);
      const auto& gt_toks = ep.clip_events[static_cast<std::size_t>(q.gt_span.start)];
      const std::set<std::string> gt_attrs(gt_toks.begin() + 1, gt_toks.end());
      CHECK_FALSE(gt_attrs.empty());
      for (const auto& r : runs) {
        if (r == q.gt_span) continue;
        CHECK(tiou(r, q.gt_span) == 0.0);
        const auto& toks = ep.clip_events[static_cast<std::size_t>(r.start)];
        for (auto it = toks.begin() + 1; it != toks.end(); ++it) CHECK_FALSE(gt_attrs.count(*it));
      }
    }
  CHECK(queries > 30);
}

TEST_CASE("separability floor at noise 0.1") {
  const auto cfg = small_world(20);
  const auto emb = Embedder::from_config(cfg);
  const auto world = generate_world(cfg, emb);
  std::size_t ok = 0, total = 0;
  for (const auto& ep : world)
    for (std::size_t i = 0; i < ep.clip_count; ++i) {
      const auto& toks = ep.clip_events[i];
      const double own = cosine(ep.features.row(i), emb.embedding(toks[0]));
      bool separated = true;
      for (std::size_t t = 0; t < emb.vocabulary().size(); ++t) {
        const auto& name = emb.vocabulary().token(t);
        if (std::find(toks.begin(), toks.end(), name) != toks.end()) continue;
        if (cosine(ep.features.row(i), emb.row(t)) >= own) separated = false;
      }
      ok += separated;
      ++total;
    }
  CHECK(double(ok) / double(total) >= 0.95);
}

TEST_CASE("span_embedding") {
  const auto world = generate_world(small_world(2));
  const auto& ep = world[0];
  auto one = span_embedding(ep, {3, 4});
  for (std::size_t k = 0; k < one.size(); ++k) CHECK(one[k] == doctest::Approx(ep.features(3, k)));
  auto two = span_embedding(ep, {3, 5});
  for (std::size_t k = 0; k < two.size(); ++k)
    CHECK(two[k] == doctest::Approx((double(ep.features(3, k)) + ep.features(4, k)) / 2).epsilon(1e-12));
  auto four = span_embedding(ep, {0, 4});
  for (std::size_t k = 0; k < four.size(); ++k) {
    double s = 0;
    for (std::size_t i = 0; i < 4; ++i) s += ep.features(i, k);
    CHECK(four[k] == doctest::Approx(s / 4).epsilon(1e-12));
  }
  CHECK_THROWS_AS(span_embedding(ep, {3.2, 3.6}), DegenerateSpan);
}

TEST_CASE("world config validation") {
  auto cfg = small_world();
  cfg.run_min = 30;
  cfg.run_max = 30;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_world();
  cfg.embed_dim = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_world();
  cfg.vocab_size = 100;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_world();
  cfg.distractors_min = 3;
  cfg.distractors_max = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
