#include "interloc/feedbackgen.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>

#include "interloc/error.hpp"
#include "interloc/rng.hpp"

namespace interloc::feedbackgen {

namespace {

constexpr std::string_view kSlot = "{}";

std::string join_terms(std::span<const std::string> terms) {
  std::string out;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) out += " and ";
    out += terms[i];
  }
  return out;
}

std::vector<std::string> split_terms(std::string_view s) {
  std::vector<std::string> out;
  constexpr std::string_view kSep = " and ";
  while (true) {
    auto pos = s.find(kSep);
    out.emplace_back(s.substr(0, pos));
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + kSep.size());
  }
  return out;
}

std::string fill(const std::string& tmpl, std::string_view value) {
  std::string out = tmpl;
  auto pos = out.find(kSlot);
  if (pos != std::string::npos) out.replace(pos, kSlot.size(), value);
  return out;
}

/// Returns the slot value if `sentence` matches `tmpl`.
std::optional<std::string> match(std::string_view tmpl, std::string_view sentence) {
  auto pos = tmpl.find(kSlot);
  if (pos == std::string_view::npos) return std::nullopt;
  auto prefix = tmpl.substr(0, pos);
  auto suffix = tmpl.substr(pos + kSlot.size());
  if (sentence.size() <= prefix.size() + suffix.size()) return std::nullopt;
  if (!sentence.starts_with(prefix) || !sentence.ends_with(suffix)) return std::nullopt;
  return std::string(sentence.substr(prefix.size(), sentence.size() - prefix.size() - suffix.size()));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '.')) s.remove_suffix(1);
  return s;
}

template <typename T>
const T& pick(const std::vector<T>& pool, Rng& rng) {
  return pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(pool.size()) - 1))];
}

std::vector<std::string> set_difference(std::span<const std::string> a,
                                        std::span<const std::string> b) {
  std::set<std::string> exclude(b.begin(), b.end());
  std::set<std::string> out;
  for (const auto& t : a)
    if (!exclude.count(t)) out.insert(t);
  return {out.begin(), out.end()};
}

}  // namespace

FeedbackTemplateBank FeedbackTemplateBank::standard() {
  FeedbackTemplateBank bank;
  bank.contains_templates = {"It should show {}.", "I'm looking for the one with {}.",
                             "There should be {} in it."};
  bank.not_contains_templates = {"Not the one with {}.", "It shouldn't have {}.",
                                 "There is no {} in the moment I mean."};
  bank.temporal_templates = {"It happened {} that.", "Search {} this span.",
                             "No, I meant {} this moment."};
  bank.combo_templates = {"TCN", "CNT", "NCT", "TNC", "CTN"};
  bank.simple_before_pool = {"I think it was before this", "look before this",
                             "Before this moment", "It was earlier than this"};
  bank.simple_after_pool = {"After this moment", "I think it was after this", "look after this",
                            "It was later than this"};
  return bank;
}

void FeedbackTemplateBank::validate() const {
  for (const auto* pool : {&contains_templates, &not_contains_templates, &temporal_templates,
                           &combo_templates, &simple_before_pool, &simple_after_pool})
    if (pool->empty()) throw ConfigError("feedback template pools must be nonempty");
}

std::vector<std::string> caption_span(const EpisodeRecord& ep, const Span& s) {
  std::set<std::string> tokens;
  for (auto i : clips_in_span_checked(s, ep.clip_count))
    tokens.insert(ep.clip_events[i].begin(), ep.clip_events[i].end());
  return {tokens.begin(), tokens.end()};
}

std::vector<std::string> explain_query(const QueryRecord& q) {
  std::set<std::string> terms(q.terms.begin(), q.terms.end());
  if (!q.answer_token.empty()) terms.insert(q.answer_token);
  return {terms.begin(), terms.end()};
}

Temporal relative_order(const Span& gt, const Span& ref) {
  if (gt.end <= ref.start) return Temporal::Before;
  if (gt.start >= ref.end) return Temporal::After;
  return Temporal::None;
}

ClauseSet compose_clauses(const Span& gt, const Span& ref, std::span<const std::string> d_q,
                          std::span<const std::string> d_f,
                          std::span<const std::string> explanation) {
  if (gt == ref) throw NoSignal("reference span equals the ground truth");
  ClauseSet c;
  c.contains = set_difference(d_q, explanation);
  c.not_contains = set_difference(d_f, d_q);
  c.temporal = relative_order(gt, ref);
  if (c.degenerate()) throw NoSignal("no disambiguating, contrastive or temporal cue");
  return c;
}

RenderedFeedback render_feedback(const ClauseSet& clauses, const FeedbackTemplateBank& bank,
                                 std::uint64_t seed, const DropProbabilities& drops) {
  Rng rng(seed);
  ClauseSet kept = clauses;
  switch (rng.categorical(
      {drops.keep_all, drops.drop_contrastive, drops.drop_contains, drops.temporal_only})) {
    case 1: kept.not_contains.clear(); break;
    case 2: kept.contains.clear(); break;
    case 3:
      kept.contains.clear();
      kept.not_contains.clear();
      break;
    default: break;
  }
  if (kept.degenerate()) kept = clauses;

  const std::string& order = pick(bank.combo_templates, rng);
  std::string text;
  auto append = [&](std::string phrase) {
    if (!text.empty()) text += ' ';
    text += phrase;
  };
  for (char slot : order) {
    if (slot == 'C' && kept.has_contains())
      append(fill(pick(bank.contains_templates, rng), join_terms(kept.contains)));
    else if (slot == 'N' && kept.has_not_contains())
      append(fill(pick(bank.not_contains_templates, rng), join_terms(kept.not_contains)));
    else if (slot == 'T' && kept.has_temporal())
      append(fill(pick(bank.temporal_templates, rng), to_string(kept.temporal)));
  }
  return {text, kept};
}

ClauseSet extract_clauses(const std::string& text, const FeedbackTemplateBank& bank) {
  ClauseSet out;
  std::string_view whole = trim(text);
  for (const auto& s : bank.simple_before_pool)
    if (whole == s) out.temporal = Temporal::Before;
  for (const auto& s : bank.simple_after_pool)
    if (whole == s) out.temporal = Temporal::After;
  if (out.has_temporal()) return out;

  std::string_view rest = text;
  while (!rest.empty()) {
    auto dot = rest.find('.');
    std::string_view sentence = trim(rest.substr(0, dot));
    rest = dot == std::string_view::npos ? std::string_view{} : rest.substr(dot + 1);
    if (sentence.empty()) continue;
    bool matched = false;
    auto try_pool = [&](const std::vector<std::string>& pool, auto&& apply) {
      for (const auto& tmpl : pool) {
        if (matched) return;
        if (auto v = match(trim(tmpl), sentence)) {
          apply(*v);
          matched = true;
        }
      }
    };
    try_pool(bank.contains_templates, [&](const std::string& v) { out.contains = split_terms(v); });
    try_pool(bank.not_contains_templates,
             [&](const std::string& v) { out.not_contains = split_terms(v); });
    try_pool(bank.temporal_templates,
             [&](const std::string& v) { out.temporal = temporal_from_string(v); });
    if (!matched) throw DataError("unrecognised feedback sentence '" + std::string(sentence) + "'");
  }
  return out;
}

Matrix feedback_embedding(const synthworld::Embedder& emb, const ClauseSet& clauses) {
  std::size_t rows = clauses.contains.size() + clauses.not_contains.size() +
                     (clauses.has_temporal() ? 1 : 0);
  Matrix out(rows, emb.dim());
  std::size_t r = 0;
  auto put = [&](std::string_view token, double sign) {
    auto e = emb.embedding(token);
    auto row = out.row(r++);
    for (std::size_t k = 0; k < e.size(); ++k) row[k] = static_cast<float>(sign * e[k]);
  };
  for (const auto& t : clauses.contains) put(t, 1.0);
  for (const auto& t : clauses.not_contains) put(t, -1.0);
  if (clauses.temporal == Temporal::Before) put(synthworld::kBeforeToken, 1.0);
  if (clauses.temporal == Temporal::After) put(synthworld::kAfterToken, 1.0);
  return out;
}

namespace {

FeedbackSample simple_temporal_sample(const std::string& episode_id, const std::string& query_id,
                                      const Span& ref, Temporal direction,
                                      const FeedbackTemplateBank& bank,
                                      const synthworld::Embedder& emb, std::uint64_t seed) {
  Rng rng(seed);
  FeedbackSample s;
  s.episode_id = episode_id;
  s.query_id = query_id;
  s.ref_span = ref;
  s.clauses.temporal = direction;
  s.text = pick(direction == Temporal::Before ? bank.simple_before_pool : bank.simple_after_pool, rng);
  s.embedding_tokens = feedback_embedding(emb, s.clauses);
  s.ref_kind = RefKind::SimpleTemporal;
  return s;
}

}  // namespace

FeedbackSample make_simple_temporal(const EpisodeRecord& ep, const QueryRecord& q, const Span& ref,
                                    const FeedbackTemplateBank& bank,
                                    const synthworld::Embedder& emb, std::uint64_t seed) {
  Temporal dir = relative_order(q.gt_span, ref);
  if (dir == Temporal::None) throw OverlapError("reference span overlaps the ground truth");
  return simple_temporal_sample(ep.id, q.id, ref, dir, bank, emb, seed);
}

FeedbackSample flip_direction(const FeedbackSample& sample, const FeedbackTemplateBank& bank,
                              const synthworld::Embedder& emb, std::uint64_t seed) {
  if (!sample.clauses.has_temporal()) throw DataError("feedback has no temporal clause to flip");
  Temporal flipped =
      sample.clauses.temporal == Temporal::Before ? Temporal::After : Temporal::Before;
  return simple_temporal_sample(sample.episode_id, sample.query_id, sample.ref_span, flipped, bank,
                                emb, seed);
}

TemplateBackend::TemplateBackend(FeedbackTemplateBank bank, DropProbabilities drops)
    : bank_(std::move(bank)), drops_(drops) {
  bank_.validate();
}

std::vector<std::string> TemplateBackend::caption(const EpisodeRecord& ep, const Span& s) const {
  return caption_span(ep, s);
}

std::vector<std::string> TemplateBackend::explain(const QueryRecord& q, const Span&) const {
  return explain_query(q);
}

RenderedFeedback TemplateBackend::feedback(std::span<const std::string> d_q,
                                           std::span<const std::string> d_f,
                                           std::span<const std::string> e_q, const Span& gt,
                                           const Span& ref, std::uint64_t seed) const {
  return render_feedback(compose_clauses(gt, ref, d_q, d_f, e_q), bank_, seed, drops_);
}

ClauseSet TemplateBackend::extract(const std::string& text) const {
  return extract_clauses(text, bank_);
}

QnfDataset build_qnf_dataset(std::span<const EpisodeRecord> episodes,
                             std::span<const refsample::QueryReferences> references,
                             const SynthesizerBackend& backend, const FeedbackTemplateBank& bank,
                             const synthworld::Embedder& emb, const QnfConfig& cfg) {
  QnfDataset out;
  std::map<std::string, const EpisodeRecord*> by_id;
  for (const auto& ep : episodes) by_id.emplace(ep.id, &ep);

  const std::size_t want_rel = cfg.eval_split ? cfg.eval_relevant : cfg.train_relevant;
  const std::size_t want_irr = cfg.eval_split ? cfg.eval_irrelevant : cfg.train_irrelevant;
  const std::size_t want_simple =
      cfg.eval_split ? cfg.eval_simple_temporal : cfg.train_simple_temporal;

  for (const auto& refs : references) {
    auto ep_it = by_id.find(refs.episode_id);
    if (ep_it == by_id.end()) {
      out.errors.push_back(refs.query_id + ": unknown episode " + refs.episode_id);
      continue;
    }
    const EpisodeRecord& ep = *ep_it->second;
    const QueryRecord* q = ep.find_query(refs.query_id);
    if (!q) {
      out.errors.push_back(refs.query_id + ": unknown query");
      continue;
    }
    Rng rng(derive_seed(cfg.seed, {hash_string(q->id)}));
    std::vector<refsample::ReferenceSpan> relevant, irrelevant;
    for (const auto& r : refs.spans)
      (is_query_relevant(r.kind) ? relevant : irrelevant).push_back(r);
    rng.shuffle(irrelevant);

    const auto d_q = backend.caption(ep, q->gt_span);
    const auto e_q = backend.explain(*q, q->gt_span);
    std::size_t turn = 0;
    auto try_make = [&](const refsample::ReferenceSpan& r) -> bool {
      auto seed = derive_seed(cfg.seed, {hash_string(q->id), 1000 + turn++});
      try {
        auto d_f = backend.caption(ep, r.span);
        auto rendered = backend.feedback(d_q, d_f, e_q, q->gt_span, r.span, seed);
        FeedbackSample s;
        s.episode_id = ep.id;
        s.query_id = q->id;
        s.ref_span = r.span;
        s.clauses = std::move(rendered.clauses);
        s.text = std::move(rendered.text);
        s.embedding_tokens = feedback_embedding(emb, s.clauses);
        s.ref_kind = r.kind;
        out.samples.push_back(std::move(s));
        return true;
      } catch (const NoSignal& e) {
        out.errors.push_back(q->id + ": " + e.what());
      } catch (const DegenerateSpan& e) {
        out.errors.push_back(q->id + ": " + e.what());
      }
      return false;
    };

    std::size_t used_rel = 0;
    for (const auto& r : relevant)
      if (used_rel < want_rel && try_make(r)) ++used_rel;
    // Missing relevant feedback is made up from the irrelevant pool.
    std::size_t want_total = want_irr + (want_rel - used_rel);
    std::size_t used_irr = 0;
    std::size_t next_irr = 0;
    for (; next_irr < irrelevant.size() && used_irr < want_total; ++next_irr)
      if (try_make(irrelevant[next_irr])) ++used_irr;

    std::size_t used_simple = 0;
    for (std::size_t i = 0; i < irrelevant.size() && used_simple < want_simple; ++i) {
      // Prefer a reference span not already used for clause feedback.
      const auto& r = irrelevant[(next_irr + i) % irrelevant.size()];
      if (relative_order(q->gt_span, r.span) == Temporal::None) continue;
      auto seed = derive_seed(cfg.seed, {hash_string(q->id), 2000 + used_simple});
      out.samples.push_back(make_simple_temporal(ep, *q, r.span, bank, emb, seed));
      ++used_simple;
    }
    if (used_rel + used_irr + used_simple < want_rel + want_irr + want_simple)
      out.errors.push_back(q->id + ": feedback quota not met");
  }
  return out;
}

}  // namespace interloc::feedbackgen
