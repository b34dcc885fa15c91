#include "interloc/synthworld.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "interloc/error.hpp"
#include "interloc/rng.hpp"

namespace interloc::synthworld {

namespace {

constexpr std::size_t kReservedTokens = 2;
constexpr int kRepulsionIterations = 200;
constexpr double kRepulsionStep = 0.05;

std::string numbered(std::string_view prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*s%0*zu", static_cast<int>(prefix.size()), prefix.data(),
                width, i);
  return buf;
}

}  // namespace

void WorldConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (embed_dim < 8) fail("embed_dim must be >= 8");
  if (event_types < 2) fail("event_types must be >= 2");
  if (vocab_size < 2 * event_types + kReservedTokens)
    fail("vocab_size must be >= 2 * event_types + 2");
  if (clips_min == 0 || clips_min > clips_max) fail("clips range is empty");
  if (events_min < 2 || events_min > events_max) fail("events range must satisfy 2 <= min <= max");
  if (events_max > event_types) fail("events_max exceeds event_types");
  if (run_min == 0 || run_min > run_max) fail("run length range is empty");
  if (2 * run_min > clips_min) fail("event runs do not fit: need clips_min >= 2 * run_min");
  if (queries_min == 0 || queries_min > queries_max) fail("queries range is empty");
  if (ambiguity_rate < 0.0 || ambiguity_rate > 1.0) fail("ambiguity_rate must be in [0,1]");
  if (what_rate < 0.0 || what_rate > 1.0) fail("what_rate must be in [0,1]");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (distractors_min == 0 || distractors_min > distractors_max)
    fail("distractors range must satisfy 1 <= min <= max");
}

Vocabulary::Vocabulary(std::size_t vocab_size, std::size_t event_types)
    : event_count_(event_types) {
  tokens_.reserve(vocab_size);
  tokens_.emplace_back(kBeforeToken);
  tokens_.emplace_back(kAfterToken);
  for (std::size_t i = 0; i < event_types; ++i) tokens_.push_back(numbered("ev", i, 2));
  for (std::size_t i = 0; tokens_.size() < vocab_size; ++i)
    tokens_.push_back(numbered("at", i, 3));
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

bool Vocabulary::is_event(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it != index_.end() && it->second >= kReservedTokens &&
         it->second < kReservedTokens + event_count_;
}

std::size_t Vocabulary::index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw UnknownToken("'" + std::string(token) + "' is not in the vocabulary");
  return it->second;
}

Embedder::Embedder(std::uint64_t seed, std::size_t vocab_size, std::size_t dim,
                   std::size_t event_types)
    : vocab_(vocab_size, event_types), dim_(dim) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Rng rng(derive_seed(seed, {hash_string("embedder")}));
  Mat t(vocab_size, dim);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  t.rowwise().normalize();
  // Spread the rows apart so that distinct tokens stay distinguishable in few dimensions.
  for (int it = 0; it < kRepulsionIterations; ++it) {
    Mat gram = t * t.transpose();
    gram.diagonal().setZero();
    Mat push = gram.array().cube().matrix() * t;
    t -= kRepulsionStep * push;
    t.rowwise().normalize();
  }
  table_.assign(t.data(), t.data() + t.size());
}

Embedder Embedder::from_config(const WorldConfig& cfg) {
  cfg.validate();
  return Embedder(cfg.seed, cfg.vocab_size, cfg.embed_dim, cfg.event_types);
}

std::span<const double> Embedder::embedding(std::string_view token) const {
  return row(vocab_.index(token));
}

Matrix embed_terms(const Embedder& emb, std::span<const std::string> terms) {
  Matrix out(terms.size(), emb.dim());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    auto e = emb.embedding(terms[i]);
    std::transform(e.begin(), e.end(), out.row(i).begin(),
                   [](double v) { return static_cast<float>(v); });
  }
  return out;
}

namespace {

struct Run {
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t event = 0;
  std::vector<std::size_t> attributes;
};

class EpisodeBuilder {
 public:
  EpisodeBuilder(const WorldConfig& cfg, const Embedder& emb, std::size_t index)
      : cfg_(cfg),
        emb_(emb),
        rng_(derive_seed(cfg.seed, {hash_string(cfg.split), index})),
        index_(index) {}

  EpisodeRecord build() {
    auto m = static_cast<std::size_t>(
        rng_.uniform_int(static_cast<long>(cfg_.clips_min), static_cast<long>(cfg_.clips_max)));
    draw_pool();
    draw_runs(m);
    locked_.assign(runs_.size(), false);

    EpisodeRecord ep;
    char id[64];
    std::snprintf(id, sizeof id, "%s-%04zu", cfg_.split.c_str(), index_);
    ep.id = id;
    ep.clip_count = m;

    auto n_queries = static_cast<std::size_t>(rng_.uniform_int(
        static_cast<long>(cfg_.queries_min), static_cast<long>(cfg_.queries_max)));
    std::vector<std::size_t> order(runs_.size());
    std::iota(order.begin(), order.end(), 0);
    rng_.shuffle(order);
    for (std::size_t target : order) {
      if (ep.queries.size() == n_queries) break;
      if (locked_[target]) continue;
      bool ambiguous = rng_.bernoulli(cfg_.ambiguity_rate);
      if (!plant_query(target, ambiguous)) continue;
      ep.queries.push_back(make_query(ep.id, ep.queries.size(), target));
    }

    fill_clips(ep);
    return ep;
  }

 private:
  void draw_pool() {
    auto n = static_cast<std::size_t>(
        rng_.uniform_int(static_cast<long>(cfg_.events_min), static_cast<long>(cfg_.events_max)));
    std::vector<std::size_t> all(cfg_.event_types);
    std::iota(all.begin(), all.end(), 0);
    rng_.shuffle(all);
    pool_.assign(all.begin(), all.begin() + static_cast<long>(n));
  }

  std::vector<std::size_t> draw_attributes(std::size_t min_count) {
    static const std::vector<double> kCountWeights{0.25, 0.5, 0.25};
    std::size_t count = std::max(min_count, rng_.categorical(kCountWeights));
    std::vector<std::size_t> out;
    while (out.size() < count) {
      auto a = static_cast<std::size_t>(
          rng_.uniform_int(0, static_cast<long>(emb_.vocabulary().attribute_count()) - 1));
      if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  void draw_runs(std::size_t m) {
    std::size_t pos = 0;
    std::size_t prev = cfg_.event_types;
    while (pos < m) {
      auto len = static_cast<std::size_t>(
          rng_.uniform_int(static_cast<long>(cfg_.run_min), static_cast<long>(cfg_.run_max)));
      if (m - pos < len + cfg_.run_min) len = m - pos;
      std::size_t event;
      do {
        event = pool_[static_cast<std::size_t>(
            rng_.uniform_int(0, static_cast<long>(pool_.size()) - 1))];
      } while (event == prev);
      runs_.push_back(Run{pos, len, event, draw_attributes(0)});
      prev = event;
      pos += len;
    }
  }

  bool neighbour_has(std::size_t r, std::size_t event) const {
    return (r > 0 && runs_[r - 1].event == event) ||
           (r + 1 < runs_.size() && runs_[r + 1].event == event);
  }

  // Moves run `r` to an event that keeps neighbours distinct and avoids `banned`.
  bool reassign(std::size_t r, const std::set<std::size_t>& banned) {
    std::vector<std::size_t> options;
    auto consider = [&](std::size_t e) {
      if (!banned.count(e) && !neighbour_has(r, e) && e != runs_[r].event) options.push_back(e);
    };
    for (auto e : pool_) consider(e);
    if (options.empty())
      for (std::size_t e = 0; e < cfg_.event_types; ++e) consider(e);
    if (options.empty()) return false;
    runs_[r].event =
        options[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<long>(options.size()) - 1))];
    return true;
  }

  bool plant_query(std::size_t target, bool ambiguous) {
    const std::size_t event = runs_[target].event;
    std::set<std::size_t> locked_events;
    for (std::size_t r = 0; r < runs_.size(); ++r)
      if (locked_[r]) locked_events.insert(runs_[r].event);
    if (locked_events.count(event)) return false;

    std::vector<std::size_t> distractors;
    if (ambiguous) {
      std::vector<std::size_t> candidates;
      for (std::size_t r = 0; r < runs_.size(); ++r) {
        if (locked_[r] || r + 1 == target || r == target || r == target + 1) continue;
        candidates.push_back(r);
      }
      rng_.shuffle(candidates);
      auto want = static_cast<std::size_t>(
          rng_.uniform_int(static_cast<long>(cfg_.distractors_min),
                           static_cast<long>(cfg_.distractors_max)));
      for (auto r : candidates) {
        if (distractors.size() == want) break;
        bool adjacent = std::any_of(distractors.begin(), distractors.end(), [&](std::size_t d) {
          return d + 1 == r || r + 1 == d;
        });
        if (adjacent || neighbour_has(r, event)) continue;
        distractors.push_back(r);
      }
      if (distractors.empty()) return false;
    }

    auto snapshot = runs_;
    std::set<std::size_t> banned = locked_events;
    banned.insert(event);
    for (std::size_t r = 0; r < runs_.size(); ++r) {
      if (r == target || runs_[r].event != event) continue;
      if (std::find(distractors.begin(), distractors.end(), r) != distractors.end()) continue;
      if (locked_[r] || !reassign(r, banned)) {
        runs_ = snapshot;
        return false;
      }
    }

    Run& t = runs_[target];
    if (t.attributes.empty()) t.attributes = draw_attributes(1);
    for (auto d : distractors) {
      runs_[d].event = event;
      std::vector<std::size_t> attrs;
      do {
        attrs = draw_attributes(1);
      } while (std::any_of(attrs.begin(), attrs.end(), [&](std::size_t a) {
        return std::find(t.attributes.begin(), t.attributes.end(), a) != t.attributes.end();
      }));
      runs_[d].attributes = std::move(attrs);
      locked_[d] = true;
    }
    locked_[target] = true;
    return true;
  }

  QueryRecord make_query(const std::string& episode_id, std::size_t qi, std::size_t target) {
    const Run& t = runs_[target];
    const auto& vocab = emb_.vocabulary();
    QueryRecord q;
    char id[96];
    std::snprintf(id, sizeof id, "%s-q%zu", episode_id.c_str(), qi);
    q.id = id;
    q.terms = {vocab.event(t.event)};
    q.gt_span = Span{static_cast<double>(t.start), static_cast<double>(t.start + t.length)};
    if (rng_.bernoulli(cfg_.what_rate)) {
      q.kind = QueryKind::What;
      q.answer_token = vocab.attribute(
          t.attributes[static_cast<std::size_t>(
              rng_.uniform_int(0, static_cast<long>(t.attributes.size()) - 1))]);
    }
    // Embeddings are attached after runs are final.
    return q;
  }

  void fill_clips(EpisodeRecord& ep) {
    const auto& vocab = emb_.vocabulary();
    const std::size_t d = emb_.dim();
    const double noise_sd = cfg_.noise_sigma / std::sqrt(static_cast<double>(d));
    ep.clip_events.resize(ep.clip_count);
    ep.features = Matrix(ep.clip_count, d);
    std::vector<double> acc(d);
    for (const Run& run : runs_) {
      std::vector<std::string> tokens{vocab.event(run.event)};
      for (auto a : run.attributes) tokens.push_back(vocab.attribute(a));
      for (std::size_t i = run.start; i < run.start + run.length; ++i) {
        ep.clip_events[i] = tokens;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (const auto& tok : tokens) {
          auto e = emb_.embedding(tok);
          for (std::size_t k = 0; k < d; ++k) acc[k] += e[k] / static_cast<double>(tokens.size());
        }
        for (auto& v : acc) v += rng_.normal(0.0, noise_sd);
        double norm = std::sqrt(std::inner_product(acc.begin(), acc.end(), acc.begin(), 0.0));
        auto row = ep.features.row(i);
        for (std::size_t k = 0; k < d; ++k) row[k] = static_cast<float>(acc[k] / norm);
      }
    }
    for (auto& q : ep.queries) q.embedding_tokens = embed_terms(emb_, q.terms);
  }

  const WorldConfig& cfg_;
  const Embedder& emb_;
  Rng rng_;
  std::size_t index_;
  std::vector<std::size_t> pool_;
  std::vector<Run> runs_;
  std::vector<bool> locked_;
};

}  // namespace

std::vector<EpisodeRecord> generate_world(const WorldConfig& cfg, const Embedder& emb) {
  cfg.validate();
  if (emb.dim() != cfg.embed_dim || emb.vocabulary().size() != cfg.vocab_size)
    throw ConfigError("embedder does not match the world config");
  std::vector<EpisodeRecord> out;
  out.reserve(cfg.episodes);
  for (std::size_t i = 0; i < cfg.episodes; ++i) out.push_back(EpisodeBuilder(cfg, emb, i).build());
  return out;
}

std::vector<EpisodeRecord> generate_world(const WorldConfig& cfg) {
  return generate_world(cfg, Embedder::from_config(cfg));
}

std::vector<double> span_embedding(const EpisodeRecord& ep, const Span& s) {
  auto clips = clips_in_span_checked(s, ep.clip_count);
  std::vector<double> out(ep.features.cols(), 0.0);
  for (auto i : clips) {
    auto row = ep.features.row(i);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += row[k];
  }
  for (auto& v : out) v /= static_cast<double>(clips.size());
  return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

double cosine(std::span<const float> a, std::span<const double> b) {
  std::vector<double> ad(a.begin(), a.end());
  return cosine(std::span<const double>(ad), b);
}

}  // namespace interloc::synthworld
