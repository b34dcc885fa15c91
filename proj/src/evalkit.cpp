#include "interloc/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "interloc/error.hpp"
#include "interloc/rng.hpp"

namespace interloc::evalkit {

int recall_at_k(const SpanPrediction& preds, const Span& gt, std::size_t k, double tiou_thresh) {
  if (preds.empty()) throw EmptyPredictions("recall_at_k needs at least one prediction");
  const std::size_t top = std::min(k, preds.size());
  for (std::size_t i = 0; i < top; ++i)
    if (tiou(preds[i].span, gt) >= tiou_thresh) return 1;
  return 0;
}

std::array<double, 4> recall_values(const SpanPrediction& preds, const Span& gt) {
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < kMetrics.size(); ++i)
    out[i] = recall_at_k(preds, gt, kMetrics[i].k, kMetrics[i].tiou);
  return out;
}

void Recall::add(const SpanPrediction& preds, const Span& gt, double w) {
  add(recall_values(preds, gt), w);
}

void Recall::add(const std::array<double, 4>& values, double w) {
  for (std::size_t i = 0; i < values.size(); ++i) sum[i] += w * values[i];
  weight += w;
}

std::array<double, 4> Recall::mean() const {
  std::array<double, 4> out{};
  if (weight <= 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sum[i] / weight;
  return out;
}

namespace {

std::string turn_key(const EpisodeRecord& ep, const QueryRecord& q, const FeedbackSample* fb) {
  std::ostringstream key;
  key.precision(17);
  key << ep.id << '|' << q.id;
  if (!fb) return key.str() + "|-";
  key << '|' << fb->ref_span.start << '|' << fb->ref_span.end << '|' << fb->text;
  return key.str();
}


struct QueryGroup {
  const EpisodeRecord* ep;
  const QueryRecord* q;
  std::vector<const FeedbackSample*> feedback;
};

/// Queries with at least one feedback, in episode order, feedback in dataset order.
std::vector<QueryGroup> group_by_query(const EvalDataset& data) {
  const EpisodeIndex index(data.episodes);
  std::map<std::pair<std::string, std::string>, std::vector<const FeedbackSample*>> by_query;
  for (const auto& f : data.feedback) {
    index.query(f.episode_id, f.query_id);  // validates the reference
    by_query[{f.episode_id, f.query_id}].push_back(&f);
  }
  std::vector<QueryGroup> out;
  for (const auto& ep : data.episodes)
    for (const auto& q : ep.queries) {
      auto it = by_query.find({ep.id, q.id});
      if (it != by_query.end()) out.push_back({&ep, &q, it->second});
    }
  return out;
}

std::array<double, 4> percent(const std::array<double, 4>& v) {
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = 100.0 * v[i];
  return out;
}

}  // namespace

const tensor::Tensor<float>& FeedbackRunner::turn(const EpisodeRecord& ep, const QueryRecord& query,
                                                  const FeedbackSample* fb) const {
  auto key = turn_key(ep, query, fb);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto fused = localizer::turn_features(host_, falm_, adapter_, ep, query, fb);
  return cache_.emplace(std::move(key), std::move(fused)).first->second;
}

SpanPrediction FeedbackRunner::predict(const EpisodeRecord& ep, const QueryRecord& query,
                                       std::span<const FeedbackSample* const> feedbacks) const {
  if (feedbacks.empty()) return localizer::decode_fused(host_, turn(ep, query, nullptr));
  std::vector<tensor::Tensor<float>> fused;
  fused.reserve(feedbacks.size());
  for (const auto* f : feedbacks) fused.push_back(turn(ep, query, f));
  return localizer::fuse_and_decode(host_, std::move(fused));
}

SplitResult evaluate_split(const Runner& runner, const EvalDataset& data, Mode mode) {
  SplitResult out;
  out.mode = mode;
  for (const auto& g : group_by_query(data)) {
    Recall per_query;
    std::array<double, 4> query_only{};
    if (mode == Mode::QueryOnly) {
      query_only = recall_values(runner.predict(*g.ep, *g.q, {}), g.q->gt_span);
      per_query.add(query_only);
    }
    for (const auto* f : g.feedback) {
      std::array<double, 4> v = query_only;
      if (mode == Mode::WithFeedback) {
        const FeedbackSample* turns[] = {f};
        v = recall_values(runner.predict(*g.ep, *g.q, turns), g.q->gt_span);
        per_query.add(v);
      }
      out.by_kind[std::string(to_string(f->ref_kind))].add(v);
      if (f->ref_kind != RefKind::SimpleTemporal)
        out.by_kind[is_query_relevant(f->ref_kind) ? "query_relevant" : "query_irrelevant"].add(v);
    }
    out.overall.add(per_query.mean());
    out.per_query.push_back({g.q->id, per_query.mean()});
  }
  return out;
}

std::vector<TableRow> compare(const SplitResult& query_only, const SplitResult& with_feedback) {
  auto row = [](std::string group, const Recall& qo, const Recall& fb) {
    TableRow r;
    r.group = std::move(group);
    r.count = static_cast<std::size_t>(std::llround(fb.weight));
    r.query_only = percent(qo.mean());
    r.feedback = percent(fb.mean());
    for (std::size_t i = 0; i < 4; ++i) r.delta[i] = r.feedback[i] - r.query_only[i];
    return r;
  };
  std::vector<TableRow> rows{row("all", query_only.overall, with_feedback.overall)};
  for (const auto& [kind, fb] : with_feedback.by_kind) {
    auto it = query_only.by_kind.find(kind);
    rows.push_back(row(kind, it == query_only.by_kind.end() ? Recall{} : it->second, fb));
  }
  return rows;
}

std::string table_csv(const std::vector<TableRow>& rows) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(2);
  out << "group,count";
  for (const char* prefix : {"query_only", "feedback", "delta"})
    for (const auto& m : kMetrics) out << ',' << prefix << ' ' << m.name;
  out << '\n';
  for (const auto& r : rows) {
    out << r.group << ',' << r.count;
    for (const auto* v : {&r.query_only, &r.feedback, &r.delta})
      for (double x : *v) out << ',' << x;
    out << '\n';
  }
  return out.str();
}

MultiTurnResult multi_turn_eval(const Runner& runner, const EvalDataset& data,
                                const MultiTurnConfig& cfg) {
  if (cfg.n_max == 0 || cfg.samplings == 0) throw ConfigError("multi-turn needs n_max, samplings > 0");
  MultiTurnResult out;
  std::vector<QueryGroup> groups;
  for (auto& g : group_by_query(data)) {
    if (g.feedback.size() >= cfg.n_max) {
      groups.push_back(std::move(g));
    } else if (cfg.skip_insufficient) {
      ++out.skipped;
    } else {
      throw InsufficientFeedback("query " + g.q->id + " has " + std::to_string(g.feedback.size()) +
                                 " feedbacks, " + std::to_string(cfg.n_max) + " needed");
    }
  }
  out.queries = groups.size();
  if (groups.empty()) return out;
  for (std::size_t n = 1; n <= cfg.n_max; ++n) {
    std::vector<std::array<double, 4>> per_sampling;
    for (std::size_t s = 0; s < cfg.samplings; ++s) {
      Recall r;
      for (const auto& g : groups) {
        auto pool = g.feedback;
        Rng rng(derive_seed(cfg.seed, {hash_string(g.ep->id), hash_string(g.q->id), n, s}));
        rng.shuffle(pool);
        pool.resize(n);
        r.add(runner.predict(*g.ep, *g.q, pool), g.q->gt_span);
      }
      per_sampling.push_back(percent(r.mean()));
    }
    CurvePoint pt;
    pt.n = n;
    for (std::size_t i = 0; i < 4; ++i) {
      double mean = 0.0, var = 0.0;
      for (const auto& v : per_sampling) mean += v[i];
      mean /= static_cast<double>(per_sampling.size());
      for (const auto& v : per_sampling) var += (v[i] - mean) * (v[i] - mean);
      pt.mean[i] = mean;
      pt.stddev[i] = std::sqrt(var / static_cast<double>(per_sampling.size()));
    }
    out.curve.push_back(pt);
  }
  return out;
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "n,metric,mean,stddev\n";
  for (const auto& p : curve)
    for (std::size_t i = 0; i < kMetrics.size(); ++i)
      out << p.n << ',' << kMetrics[i].name << ',' << p.mean[i] << ',' << p.stddev[i] << '\n';
  return out.str();
}

NoisyResult noisy_recovery_eval(const Runner& runner, const EvalDataset& data,
                                const feedbackgen::FeedbackTemplateBank& bank,
                                const synthworld::Embedder& emb, const NoisyConfig& cfg) {
  NoisyResult out;
  Recall qo;
  std::vector<Recall> turns(cfg.correct_turns + 1), clean(cfg.correct_turns);
  for (const auto& g : group_by_query(data)) {
    const FeedbackSample* temporal = nullptr;
    std::vector<const FeedbackSample*> others;
    for (const auto* f : g.feedback) {
      if (f->ref_kind == RefKind::SimpleTemporal && !temporal)
        temporal = f;
      else
        others.push_back(f);
    }
    if (!temporal || others.size() < cfg.correct_turns) continue;
    const auto seed = derive_seed(cfg.seed, {hash_string(g.ep->id), hash_string(g.q->id)});
    Rng rng(seed);
    rng.shuffle(others);
    others.resize(cfg.correct_turns);
    const FeedbackSample first =
        cfg.flip ? feedbackgen::flip_direction(*temporal, bank, emb, seed) : *temporal;

    qo.add(runner.predict(*g.ep, *g.q, {}), g.q->gt_span);
    std::vector<const FeedbackSample*> noisy{&first};
    turns[0].add(runner.predict(*g.ep, *g.q, noisy), g.q->gt_span);
    for (std::size_t t = 0; t < cfg.correct_turns; ++t) {
      noisy.push_back(others[t]);
      turns[t + 1].add(runner.predict(*g.ep, *g.q, noisy), g.q->gt_span);
      std::span<const FeedbackSample* const> prefix(others.data(), t + 1);
      clean[t].add(runner.predict(*g.ep, *g.q, prefix), g.q->gt_span);
    }
    ++out.queries;
  }
  out.query_only = percent(qo.mean());
  for (const auto& r : turns) out.turns.push_back(percent(r.mean()));
  for (const auto& r : clean) out.clean.push_back(percent(r.mean()));
  return out;
}

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ShapeMismatch("auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Mann-Whitney U with average ranks for ties.
  double rank_sum = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]]) rank_sum += avg_rank;
    i = j;
  }
  for (auto l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0) throw DataError("auc needs both positive and negative labels");
  return (rank_sum - static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0) /
         (static_cast<double>(pos) * static_cast<double>(neg));
}

}  // namespace interloc::evalkit
