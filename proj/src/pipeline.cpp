#include "interloc/pipeline.hpp"

#include <cstdio>
#include <set>
#include <sstream>

#include "json.hpp"

#include "interloc/error.hpp"
#include "interloc/fileio.hpp"
#include "interloc/rng.hpp"

namespace interloc::pipeline {

using nlohmann::json;

PipelineConfig::PipelineConfig() {
  world.distractors_min = 3;
  world.distractors_max = 6;
  world.run_min = 2;
  world.run_max = 6;
  falm_train.epochs = 12;
  falm_train.lr = 1e-3;
  host_train.epochs = 8;
  host_train.lr = 1e-3;
  finetune.epochs = 3;
  finetune.lr = 1e-4;
  multi_turn.skip_insufficient = true;
}

void PipelineConfig::validate() const {
  auto r = resolved();
  r.world.validate();
  if (train_episodes == 0 || test_episodes == 0) throw ConfigError("train and test splits must be non-empty");
  if (falm_train_episodes == 0 || falm_train_episodes > train_episodes)
    throw ConfigError("falm_train_episodes must lie in [1, train_episodes]");
  r.falm.validate();
  r.host.validate();
  r.falm_train.validate();
  r.host_train.validate();
  r.finetune.validate();
  if (labels.smoothing_sigma <= 0.0) throw ConfigError("smoothing_sigma must be positive");
}

PipelineConfig PipelineConfig::resolved() const {
  PipelineConfig r = *this;
  auto sub = [&](const char* name) { return derive_seed(seed, {hash_string(name)}); };
  r.world.seed = seed;
  r.refs.seed = sub("refs");
  r.qnf.seed = sub("qnf");
  r.falm.seed = sub("falm");
  r.falm.input_dim = world.embed_dim;
  r.host.seed = sub("host");
  r.host.input_dim = world.embed_dim;
  r.falm_train.seed = sub("falm_train");
  r.host_train.seed = sub("host_train");
  r.finetune.seed = sub("finetune");
  r.multi_turn.seed = sub("multi_turn");
  r.noisy.seed = sub("noisy");
  return r;
}

namespace {

// Field binders shared by the JSON writer and reader.
template <typename F> void bind(F& f, synthworld::WorldConfig& w) {
  f("vocab_size", w.vocab_size);
  f("embed_dim", w.embed_dim);
  f("event_types", w.event_types);
  f("clips_min", w.clips_min);
  f("clips_max", w.clips_max);
  f("events_min", w.events_min);
  f("events_max", w.events_max);
  f("run_min", w.run_min);
  f("run_max", w.run_max);
  f("queries_min", w.queries_min);
  f("queries_max", w.queries_max);
  f("distractors_min", w.distractors_min);
  f("distractors_max", w.distractors_max);
  f("ambiguity_rate", w.ambiguity_rate);
  f("what_rate", w.what_rate);
  f("noise_sigma", w.noise_sigma);
}

template <typename F> void bind(F& f, falm::FalmConfig& c) {
  f("d_model", c.d_model);
  f("heads", c.heads);
  f("t_q_layers", c.t_q_layers);
  f("t_v_layers", c.t_v_layers);
  f("t_m_layers", c.t_m_layers);
  f("ffn_hidden", c.ffn_hidden);
  f("head_hidden", c.head_hidden);
  f("lambda", c.lambda);
  f("lambda_t", c.lambda_t);
  f("lambda_c", c.lambda_c);
  f("lambda_n", c.lambda_n);
  f("use_positional", c.use_positional);
  f("reference_positions", c.reference_positions);
}

template <typename F> void bind(F& f, localizer::HostConfig& c) {
  f("d_model", c.d_model);
  f("heads", c.heads);
  f("layers", c.layers);
  f("ffn_hidden", c.ffn_hidden);
  f("head_hidden", c.head_hidden);
  f("offset_scale", c.offset_scale);
  f("min_offset", c.min_offset);
  f("positive_weight", c.positive_weight);
  f("offset_weight", c.offset_weight);
  f("nms_threshold", c.nms_threshold);
  f("top_k", c.top_k);
}

template <typename F> void bind(F& f, trainer::TrainConfig& c) {
  f("epochs", c.epochs);
  f("batch_size", c.batch_size);
  f("lr", c.lr);
  f("mixed_sampling", c.mixed_sampling);
  f("temporal_aug_rate", c.temporal_aug_rate);
  f("falm_frozen", c.falm_frozen);
  f("samples_per_epoch", c.samples_per_epoch);
}

template <typename F> void bind(F& f, feedbackgen::QnfConfig& c) {
  f("train_relevant", c.train_relevant);
  f("train_irrelevant", c.train_irrelevant);
  f("train_simple_temporal", c.train_simple_temporal);
  f("eval_relevant", c.eval_relevant);
  f("eval_irrelevant", c.eval_irrelevant);
  f("eval_simple_temporal", c.eval_simple_temporal);
}

template <typename F> void bind(F& f, PipelineConfig& c) {
  f("seed", c.seed);
  f.section("world", c.world);
  f.section("splits", [&](auto& g) {
    g("train_episodes", c.train_episodes);
    g("val_episodes", c.val_episodes);
    g("test_episodes", c.test_episodes);
    g("falm_train_episodes", c.falm_train_episodes);
  });
  f.section("refs", [&](auto& g) {
    g("random_per_query", c.refs.random_per_query);
    g("failure_mode", c.failure_mode);
  });
  f.section("qnf", c.qnf);
  f.section("labels", [&](auto& g) { g("smoothing_sigma", c.labels.smoothing_sigma); });
  f.section("falm", c.falm);
  f.section("host", c.host);
  f.section("falm_train", c.falm_train);
  f.section("host_train", c.host_train);
  f.section("finetune", c.finetune);
  f.section("multi_turn", [&](auto& g) {
    g("n_max", c.multi_turn.n_max);
    g("samplings", c.multi_turn.samplings);
    g("skip_insufficient", c.multi_turn.skip_insufficient);
  });
  f.section("noisy", [&](auto& g) {
    g("correct_turns", c.noisy.correct_turns);
    g("flip", c.noisy.flip);
  });
}

std::string failure_mode_name(refsample::FailureMode m) {
  return m == refsample::FailureMode::Top1 ? "top1" : "recall5";
}

refsample::FailureMode failure_mode_from(const std::string& s) {
  if (s == "top1") return refsample::FailureMode::Top1;
  if (s == "recall5") return refsample::FailureMode::Recall5;
  throw ConfigError("unknown failure_mode '" + s + "'");
}

struct JsonWriter {
  json& j;
  template <typename T> void operator()(const char* key, T& v) { j[key] = v; }
  void operator()(const char* key, refsample::FailureMode& m) { j[key] = failure_mode_name(m); }
  template <typename S> void section(const char* key, S&& s) {
    json sub = json::object();
    JsonWriter w{sub};
    if constexpr (std::is_invocable_v<S, JsonWriter&>)
      s(w);
    else
      bind(w, s);
    j[key] = std::move(sub);
  }
};

struct JsonReader {
  const json& j;
  std::string path;
  void check_keys(const std::set<std::string>& known) const {
    if (!j.is_object()) throw ConfigError(path + " must be an object");
    for (const auto& [k, _] : j.items())
      if (!known.count(k)) throw ConfigError("unknown config key '" + path + k + "'");
  }
  std::set<std::string> seen;
  template <typename T> void operator()(const char* key, T& v) {
    seen.insert(key);
    if (!j.contains(key)) return;
    try {
      v = j.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + path + key + "' has the wrong type");
    }
  }
  void operator()(const char* key, refsample::FailureMode& m) {
    seen.insert(key);
    if (j.contains(key)) m = failure_mode_from(j.at(key).get<std::string>());
  }
  template <typename S> void section(const char* key, S&& s) {
    seen.insert(key);
    if (!j.contains(key)) return;
    JsonReader r{j.at(key), path + key + ".", {}};
    if constexpr (std::is_invocable_v<S, JsonReader&>)
      s(r);
    else
      bind(r, s);
    r.check_keys(r.seen);
  }
};

json config_json(const PipelineConfig& cfg) {
  json j = json::object();
  JsonWriter w{j};
  auto copy = cfg;
  bind(w, copy);
  return j;
}

json falm_config_json(falm::FalmConfig c) {
  json j = json::object();
  JsonWriter w{j};
  bind(w, c);
  j["input_dim"] = c.input_dim;
  j["seed"] = c.seed;
  return j;
}

json host_config_json(localizer::HostConfig c) {
  json j = json::object();
  JsonWriter w{j};
  bind(w, c);
  j["input_dim"] = c.input_dim;
  j["seed"] = c.seed;
  return j;
}

template <typename C>
C config_from_meta(const json& j) {
  C c;
  JsonReader r{j, "model.", {}};
  bind(r, c);
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string config_to_json(const PipelineConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

PipelineConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig cfg;
  JsonReader r{j, "", {}};
  bind(r, cfg);
  r.check_keys(r.seen);
  cfg.validate();
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  try {
    return config_from_json(fileio::read_all(path));
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

std::string config_hash(const PipelineConfig& cfg) {
  return hex64(hash_string(config_json(cfg).dump()));
}

serialize::Header make_header(const PipelineConfig& cfg, std::string kind) {
  return {std::move(kind), config_hash(cfg), cfg.seed};
}

synthworld::Embedder make_embedder(const PipelineConfig& cfg) {
  return synthworld::Embedder::from_config(cfg.resolved().world);
}

std::vector<EpisodeRecord> generate_split(const PipelineConfig& cfg,
                                          const synthworld::Embedder& emb,
                                          const std::string& split) {
  auto w = cfg.resolved().world;
  w.split = split;
  if (split == "train")
    w.episodes = cfg.train_episodes;
  else if (split == "val")
    w.episodes = cfg.val_episodes;
  else if (split == "test")
    w.episodes = cfg.test_episodes;
  else
    throw UsageError("unknown split '" + split + "'");
  return synthworld::generate_world(w, emb);
}

std::map<std::string, Span> failure_spans(const localizer::HostF& host,
                                          std::span<const EpisodeRecord> episodes,
                                          refsample::FailureMode mode) {
  std::map<std::string, SpanPrediction> preds;
  std::map<std::string, Span> gts;
  for (const auto& ep : episodes)
    for (const auto& q : ep.queries) {
      preds[q.id] = localizer::host_forward(host, ep.features, q.embedding_tokens).prediction;
      gts[q.id] = q.gt_span;
    }
  return refsample::collect_failure_spans(preds, gts, mode);
}

std::vector<refsample::QueryReferences> sample_refs(const PipelineConfig& cfg,
                                                    std::span<const EpisodeRecord> episodes,
                                                    const std::map<std::string, Span>& failures,
                                                    const std::string& split) {
  auto r = cfg.resolved();
  // Durations come from the split itself: ground truth is what the feedback author sees.
  const auto beta = refsample::fit_beta(refsample::gt_durations(episodes));
  auto refs_cfg = r.refs;
  refs_cfg.seed = derive_seed(refs_cfg.seed, {hash_string(split)});
  return refsample::sample_references(episodes, beta, failures, refs_cfg);
}

feedbackgen::QnfDataset make_feedback(const PipelineConfig& cfg,
                                      std::span<const EpisodeRecord> episodes,
                                      std::span<const refsample::QueryReferences> refs,
                                      const synthworld::Embedder& emb, bool eval_split) {
  auto qnf = cfg.resolved().qnf;
  qnf.eval_split = eval_split;
  qnf.seed = derive_seed(qnf.seed, {eval_split ? 1u : 0u});
  const feedbackgen::TemplateBackend backend;
  return feedbackgen::build_qnf_dataset(episodes, refs, backend, backend.bank(), emb, qnf);
}

std::vector<labelgen::AlignmentLabels> make_labels(const PipelineConfig& cfg,
                                                   std::span<const EpisodeRecord> episodes,
                                                   std::span<const FeedbackSample> samples,
                                                   const synthworld::Embedder& emb) {
  const EpisodeIndex index(episodes);
  std::vector<labelgen::AlignmentLabels> out;
  out.reserve(samples.size());
  for (const auto& s : samples)
    out.push_back(labelgen::make_labels(s, index.query(s.episode_id, s.query_id),
                                        index.episode(s.episode_id), emb, cfg.labels));
  return out;
}

double falm_auc(const localizer::FalmF& model, std::span<const EpisodeRecord> episodes,
                std::span<const FeedbackSample> samples,
                std::span<const labelgen::AlignmentLabels> labels) {
  if (samples.size() != labels.size()) throw DataError("falm_auc: samples and labels differ");
  const EpisodeIndex index(episodes);
  std::vector<double> scores;
  std::vector<std::uint8_t> truth;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto out = falm::falm_forward(model, index.episode(s.episode_id),
                                  index.query(s.episode_id, s.query_id), s);
    scores.insert(scores.end(), out.p.begin(), out.p.end());
    truth.insert(truth.end(), labels[i].l.begin(), labels[i].l.end());
  }
  return evalkit::auc(scores, truth);
}

std::array<double, 4> random_baseline(const PipelineConfig& cfg,
                                      std::span<const EpisodeRecord> episodes) {
  const auto beta = refsample::fit_beta(refsample::gt_durations(episodes));
  Rng rng(derive_seed(cfg.seed, {hash_string("random-baseline")}));
  evalkit::Recall r;
  for (const auto& ep : episodes)
    for (const auto& q : ep.queries) {
      const double m = static_cast<double>(ep.clip_count);
      const double dur = std::clamp(
          beta.dur_min + rng.beta(beta.a, beta.b) * (beta.dur_max - beta.dur_min), 1.0, m);
      const double start = rng.uniform(0.0, m - dur);
      r.add(SpanPrediction{{Span{start, start + dur}, 1.0}}, q.gt_span);
    }
  return r.mean();
}

std::array<double, 4> host_recall(const localizer::HostF& host,
                                  std::span<const EpisodeRecord> episodes) {
  evalkit::Recall r;
  for (const auto& ep : episodes)
    for (const auto& q : ep.queries)
      r.add(localizer::host_forward(host, ep.features, q.embedding_tokens).prediction, q.gt_span);
  return r.mean();
}

checkpoint::Checkpoint falm_checkpoint(const PipelineConfig& cfg, const localizer::FalmF& model) {
  checkpoint::Checkpoint ck;
  ck.metadata = json{{"kind", "falm"},
                     {"config_hash", config_hash(cfg)},
                     {"seed", cfg.seed},
                     {"model", falm_config_json(model.config())}}
                    .dump();
  checkpoint::append(ck, model.params());
  return ck;
}

checkpoint::Checkpoint host_checkpoint(const PipelineConfig& cfg, const localizer::HostF& host,
                                       const std::optional<localizer::EmAdapter>& adapter) {
  checkpoint::Checkpoint ck;
  ck.metadata = json{{"kind", adapter ? "host+adapter" : "host"},
                     {"config_hash", config_hash(cfg)},
                     {"seed", cfg.seed},
                     {"model", host_config_json(host.config())}}
                    .dump();
  checkpoint::append(ck, host.params());
  if (adapter) {
    ck.arrays.push_back({"adapter.alpha", 1, 1, {static_cast<float>(adapter->alpha)}});
    ck.arrays.push_back({"adapter.beta", 1, 1, {static_cast<float>(adapter->beta)}});
  }
  return ck;
}

namespace {

json checkpoint_meta(const checkpoint::Checkpoint& ck) {
  try {
    return json::parse(ck.metadata);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
}

}  // namespace

localizer::FalmF load_falm(const checkpoint::Checkpoint& ckpt) {
  const auto meta = checkpoint_meta(ckpt);
  if (meta.value("kind", "") != "falm") throw DataError("checkpoint does not hold an alignment model");
  localizer::FalmF model(config_from_meta<falm::FalmConfig>(meta.at("model")));
  checkpoint::restore(ckpt, model.params());
  return model;
}

localizer::HostF load_host(const checkpoint::Checkpoint& ckpt, localizer::EmAdapter* adapter) {
  const auto meta = checkpoint_meta(ckpt);
  const auto kind = meta.value("kind", "");
  if (kind != "host" && kind != "host+adapter") throw DataError("checkpoint does not hold a host model");
  localizer::HostF host(config_from_meta<localizer::HostConfig>(meta.at("model")));
  checkpoint::restore(ckpt, host.params());
  if (adapter) {
    *adapter = {};
    for (const auto& a : ckpt.arrays) {
      if (a.name == "adapter.alpha") adapter->alpha = a.data.at(0);
      if (a.name == "adapter.beta") adapter->beta = a.data.at(0);
    }
  }
  return host;
}

// --- on-disk stages ---------------------------------------------------------

namespace {

std::string fmt(double v, int precision = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

json metrics_json(const std::array<double, 4>& v) {
  json j = json::object();
  for (std::size_t i = 0; i < evalkit::kMetrics.size(); ++i) j[evalkit::kMetrics[i].name] = v[i];
  return j;
}

/// Fractions in [0, 1] reported as percentages, matching the comparison tables.
json percent_json(const std::array<double, 4>& v) {
  std::array<double, 4> p{};
  for (std::size_t i = 0; i < v.size(); ++i) p[i] = 100.0 * v[i];
  return metrics_json(p);
}

void write_json(const fs::path& path, const json& j) { fileio::write_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(fileio::read_all(path));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Loads a split and checks that it was produced under the same configuration.
struct Loaded {
  synthworld::Embedder emb;
  std::vector<EpisodeRecord> episodes;
};

void check_hash(const PipelineConfig& cfg, const serialize::Header& h, const fs::path& path) {
  if (h.config_hash != config_hash(cfg))
    throw DataError(path.string() + ": produced under config " + h.config_hash + ", current is " +
                    config_hash(cfg));
}

std::vector<EpisodeRecord> load_split(const PipelineConfig& cfg, const Layout& io,
                                      const synthworld::Embedder& emb, const std::string& split) {
  serialize::Header h;
  auto eps = serialize::read_world(io.world(split), emb, &h);
  check_hash(cfg, h, io.world(split) / "episodes.jsonl");
  return eps;
}

std::vector<FeedbackSample> load_feedback(const PipelineConfig& cfg, const Layout& io,
                                          const synthworld::Embedder& emb,
                                          const std::string& split) {
  serialize::Header h;
  auto fb = serialize::read_feedback(io.feedback(split), emb, &h);
  check_hash(cfg, h, io.feedback(split));
  return fb;
}

std::vector<labelgen::AlignmentLabels> load_labels(const PipelineConfig& cfg, const Layout& io,
                                                   const std::string& split) {
  serialize::Header h;
  auto l = serialize::read_labels(io.labels(split), &h);
  check_hash(cfg, h, io.labels(split));
  return l;
}

std::vector<EpisodeRecord> falm_subset(const PipelineConfig& cfg, std::vector<EpisodeRecord> train) {
  if (train.size() > cfg.falm_train_episodes) train.resize(cfg.falm_train_episodes);
  return train;
}

std::vector<FeedbackSample> train_feedback(const PipelineConfig& cfg, const Layout& io,
                                           const synthworld::Embedder& emb) {
  return load_feedback(cfg, io, emb, "train");
}

}  // namespace

PipelineConfig read_workdir_config(const Layout& io) { return load_config(io.config()); }

std::string stage_gen(const PipelineConfig& cfg, const Layout& io) {
  cfg.validate();
  fs::create_directories(io.root);
  fileio::write_atomic(io.config(), config_to_json(cfg));
  const auto emb = make_embedder(cfg);
  std::ostringstream msg;
  for (const std::string split : {"train", "val", "test"}) {
    auto eps = generate_split(cfg, emb, split);
    std::size_t queries = 0;
    for (const auto& e : eps) queries += e.queries.size();
    serialize::write_world(io.world(split), eps, make_header(cfg));
    msg << split << ": " << eps.size() << " episodes, " << queries << " queries\n";
  }
  return msg.str();
}

std::string stage_train_host(const PipelineConfig& cfg, const Layout& io) {
  const auto r = cfg.resolved();
  const auto emb = make_embedder(cfg);
  const auto train = load_split(cfg, io, emb, "train");
  localizer::HostF host(r.host);
  const auto curve = trainer::pretrain_host(host, r.host_train, train);
  checkpoint::save(io.host_ckpt(), host_checkpoint(cfg, host, std::nullopt));
  const trainer::LossCurve curves[] = {curve};
  fileio::write_atomic(io.root / "models" / "host_loss.csv", trainer::loss_curve_csv(curves));

  json summary{{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}};
  std::ostringstream msg;
  msg << "host trained for " << curve.epoch_loss.size() << " epochs";
  if (!curve.epoch_loss.empty()) msg << ", final loss " << fmt(curve.epoch_loss.back(), 4);
  if (cfg.val_episodes > 0) {
    const auto val = load_split(cfg, io, emb, "val");
    const auto host_r = host_recall(host, val);
    const auto base_r = random_baseline(cfg, val);
    summary["val_host"] = percent_json(host_r);
    summary["val_random"] = percent_json(base_r);
    msg << "; val R1@0.3 " << fmt(100 * host_r[0]) << " vs random " << fmt(100 * base_r[0]);
  }
  write_json(io.root / "models" / "host_val.json", summary);
  return msg.str() + "\n";
}

std::string stage_sample_refs(const PipelineConfig& cfg, const Layout& io, bool use_host) {
  const auto emb = make_embedder(cfg);
  std::optional<localizer::HostF> host;
  if (use_host) host.emplace(load_host(checkpoint::load(io.host_ckpt())));
  std::ostringstream msg;
  for (const std::string split : {"train", "test"}) {
    auto eps = load_split(cfg, io, emb, split);
    if (split == "train") eps = falm_subset(cfg, std::move(eps));
    std::map<std::string, Span> failures;
    if (host) failures = failure_spans(*host, eps, cfg.failure_mode);
    const auto refs = sample_refs(cfg, eps, failures, split);
    std::size_t spans = 0, errors = 0;
    for (const auto& q : refs) {
      spans += q.spans.size();
      errors += q.errors.size();
    }
    serialize::write_references(io.refs(split), refs, make_header(cfg));
    msg << split << ": " << spans << " reference spans (" << failures.size()
        << " model failures), " << errors << " sampling errors\n";
  }
  return msg.str();
}

std::string stage_make_feedback(const PipelineConfig& cfg, const Layout& io) {
  const auto emb = make_embedder(cfg);
  std::ostringstream msg;
  for (const std::string split : {"train", "test"}) {
    auto eps = load_split(cfg, io, emb, split);
    if (split == "train") eps = falm_subset(cfg, std::move(eps));
    serialize::Header h;
    const auto refs = serialize::read_references(io.refs(split), &h);
    check_hash(cfg, h, io.refs(split));
    const auto qnf = make_feedback(cfg, eps, refs, emb, split != "train");
    serialize::write_feedback(io.feedback(split), qnf.samples, make_header(cfg));
    msg << split << ": " << qnf.samples.size() << " feedback samples, " << qnf.errors.size()
        << " quota shortfalls\n";
  }
  return msg.str();
}

std::string stage_make_labels(const PipelineConfig& cfg, const Layout& io) {
  const auto emb = make_embedder(cfg);
  std::ostringstream msg;
  for (const std::string split : {"train", "test"}) {
    auto eps = load_split(cfg, io, emb, split);
    if (split == "train") eps = falm_subset(cfg, std::move(eps));
    const auto fb = load_feedback(cfg, io, emb, split);
    const auto labels = make_labels(cfg, eps, fb, emb);
    serialize::write_labels(io.labels(split), labels, make_header(cfg));
    msg << split << ": " << labels.size() << " label records\n";
  }
  return msg.str();
}

std::string stage_train_falm(const PipelineConfig& cfg, const Layout& io) {
  const auto r = cfg.resolved();
  const auto emb = make_embedder(cfg);
  const auto train = falm_subset(cfg, load_split(cfg, io, emb, "train"));
  const auto fb = train_feedback(cfg, io, emb);
  const auto labels = load_labels(cfg, io, "train");
  localizer::FalmF model(r.falm);
  const auto curve = trainer::pretrain_falm(model, r.falm_train, {train, fb, labels});
  checkpoint::save(io.falm_ckpt(), falm_checkpoint(cfg, model));
  const trainer::LossCurve curves[] = {curve};
  fileio::write_atomic(io.root / "models" / "falm_loss.csv", trainer::loss_curve_csv(curves));

  const auto test = load_split(cfg, io, emb, "test");
  const auto test_fb = load_feedback(cfg, io, emb, "test");
  const auto test_labels = load_labels(cfg, io, "test");
  const double auc = falm_auc(model, test, test_fb, test_labels);
  json summary{{"config_hash", config_hash(cfg)},
               {"seed", cfg.seed},
               {"samples", fb.size()},
               {"epoch_loss", curve.epoch_loss},
               {"test_auc", auc}};
  write_json(io.root / "models" / "falm_metrics.json", summary);
  std::ostringstream msg;
  msg << "alignment model trained on " << fb.size() << " samples for " << curve.epoch_loss.size()
      << " epochs";
  if (!curve.epoch_loss.empty())
    msg << ", loss " << fmt(curve.epoch_loss.front(), 4) << " -> " << fmt(curve.epoch_loss.back(), 4);
  msg << "; held-out AUC " << fmt(auc, 4) << "\n";
  return msg.str();
}

std::string stage_finetune(const PipelineConfig& cfg, const Layout& io) {
  const auto r = cfg.resolved();
  const auto emb = make_embedder(cfg);
  const auto train = falm_subset(cfg, load_split(cfg, io, emb, "train"));
  const auto fb = train_feedback(cfg, io, emb);
  auto host = load_host(checkpoint::load(io.host_ckpt()));
  auto falm_model = load_falm(checkpoint::load(io.falm_ckpt()));
  const auto bank = feedbackgen::FeedbackTemplateBank::standard();
  auto result = trainer::finetune_with_feedback(host, falm_model, {}, r.finetune, train, fb, {&emb, &bank});
  checkpoint::save(io.finetuned_ckpt(), host_checkpoint(cfg, host, result.adapter));
  if (!r.finetune.falm_frozen)
    checkpoint::save(io.root / "models" / "falm_finetuned.ckpt", falm_checkpoint(cfg, falm_model));
  const trainer::LossCurve curves[] = {result.curve};
  fileio::write_atomic(io.root / "models" / "finetune_loss.csv", trainer::loss_curve_csv(curves));
  const auto& c = result.counters;
  json summary{{"config_hash", config_hash(cfg)},
               {"seed", cfg.seed},
               {"alpha", result.adapter.alpha},
               {"beta", result.adapter.beta},
               {"query_only_samples", c.query_only},
               {"feedback_samples", c.with_feedback},
               {"temporal_augmented", c.temporal_augmented},
               {"augmentation_skipped", c.augmentation_skipped},
               {"batches", c.batches}};
  write_json(io.root / "models" / "finetune.json", summary);
  std::ostringstream msg;
  msg << "fine-tuned " << c.batches << " batches (" << c.query_only << " query-only, "
      << c.with_feedback << " with feedback, " << c.temporal_augmented
      << " temporal augmentations); adapter alpha " << fmt(result.adapter.alpha, 4) << ", beta "
      << fmt(result.adapter.beta, 4) << "\n";
  return msg.str();
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "query-only") return EvalMode::QueryOnly;
  if (s == "feedback") return EvalMode::Feedback;
  if (s == "multi-turn") return EvalMode::MultiTurn;
  if (s == "noisy") return EvalMode::Noisy;
  throw UsageError("unknown eval mode '" + s + "' (query-only|feedback|multi-turn|noisy)");
}

std::string stage_eval(const PipelineConfig& cfg, const Layout& io, EvalMode mode, bool bypass) {
  const auto r = cfg.resolved();
  const auto emb = make_embedder(cfg);
  const auto test = load_split(cfg, io, emb, "test");
  const auto fb = load_feedback(cfg, io, emb, "test");
  localizer::EmAdapter adapter;
  const auto host = load_host(checkpoint::load(io.finetuned_ckpt()), &adapter);
  const auto falm_model = load_falm(checkpoint::load(
      r.finetune.falm_frozen ? io.falm_ckpt() : io.root / "models" / "falm_finetuned.ckpt"));
  if (bypass) adapter = {0.0, 1.0};
  const evalkit::FeedbackRunner runner(host, falm_model, adapter);
  const evalkit::EvalDataset data{test, fb};
  const auto dir = io.eval_dir();
  const std::string suffix = bypass ? "_bypass" : "";
  const json base{{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"bypass", bypass}};
  std::ostringstream msg;

  switch (mode) {
    case EvalMode::QueryOnly:
    case EvalMode::Feedback: {
      const auto qo = evalkit::evaluate_split(runner, data, evalkit::Mode::QueryOnly);
      std::vector<serialize::PredictionRecord> preds;
      const EpisodeIndex index(test);
      std::set<std::string> seen;
      for (const auto& s : fb) {
        if (!seen.insert(s.query_id).second) continue;
        const auto& ep = index.episode(s.episode_id);
        const auto& q = index.query(s.episode_id, s.query_id);
        preds.push_back({q.id, "", runner.predict(ep, q, {})});
      }
      if (mode == EvalMode::QueryOnly) {
        json j = base;
        j["mode"] = "query-only";
        j["queries"] = qo.per_query.size();
        j["query_only"] = percent_json(qo.overall.mean());
        write_json(dir / ("query_only" + suffix + ".json"), j);
        serialize::write_predictions(dir / ("predictions_query_only" + suffix + ".jsonl"), preds,
                                     make_header(cfg));
        const auto m = qo.overall.mean();
        msg << "query-only over " << qo.per_query.size() << " queries:";
        for (std::size_t i = 0; i < 4; ++i)
          msg << ' ' << evalkit::kMetrics[i].name << ' ' << fmt(100 * m[i]);
        msg << '\n';
        break;
      }
      const auto wf = evalkit::evaluate_split(runner, data, evalkit::Mode::WithFeedback);
      for (const auto& s : fb) {
        const auto& ep = index.episode(s.episode_id);
        const auto& q = index.query(s.episode_id, s.query_id);
        const FeedbackSample* turns[] = {&s};
        preds.push_back({q.id, s.text, runner.predict(ep, q, turns)});
      }
      const auto rows = evalkit::compare(qo, wf);
      fileio::write_atomic(dir / ("feedback_table" + suffix + ".csv"), evalkit::table_csv(rows));
      serialize::write_predictions(dir / ("predictions_feedback" + suffix + ".jsonl"), preds,
                                   make_header(cfg));
      json j = base;
      j["mode"] = "feedback";
      j["adapter"] = {{"alpha", adapter.alpha}, {"beta", adapter.beta}};
      json groups = json::array();
      for (const auto& row : rows)
        groups.push_back({{"group", row.group},
                          {"count", row.count},
                          {"query_only", metrics_json(row.query_only)},
                          {"feedback", metrics_json(row.feedback)},
                          {"delta", metrics_json(row.delta)}});
      j["groups"] = groups;
      write_json(dir / ("feedback" + suffix + ".json"), j);
      msg << evalkit::table_csv(rows);
      break;
    }
    case EvalMode::MultiTurn: {
      const auto res = evalkit::multi_turn_eval(runner, data, r.multi_turn);
      fileio::write_atomic(dir / ("multi_turn" + suffix + ".csv"), evalkit::curve_csv(res.curve));
      json j = base;
      j["mode"] = "multi-turn";
      j["queries"] = res.queries;
      j["skipped"] = res.skipped;
      json curve = json::array();
      for (const auto& p : res.curve)
        curve.push_back({{"n", p.n}, {"mean", metrics_json(p.mean)}, {"stddev", metrics_json(p.stddev)}});
      j["curve"] = curve;
      write_json(dir / ("multi_turn" + suffix + ".json"), j);
      msg << evalkit::curve_csv(res.curve);
      break;
    }
    case EvalMode::Noisy: {
      const auto bank = feedbackgen::FeedbackTemplateBank::standard();
      const auto res = evalkit::noisy_recovery_eval(runner, data, bank, emb, r.noisy);
      std::ostringstream csv;
      csv << "sequence,turn,metric,value\n";
      for (std::size_t i = 0; i < 4; ++i)
        csv << "query_only,0," << evalkit::kMetrics[i].name << ',' << fmt(res.query_only[i], 4) << '\n';
      for (std::size_t t = 0; t < res.turns.size(); ++t)
        for (std::size_t i = 0; i < 4; ++i)
          csv << "noisy," << t + 1 << ',' << evalkit::kMetrics[i].name << ','
              << fmt(res.turns[t][i], 4) << '\n';
      for (std::size_t t = 0; t < res.clean.size(); ++t)
        for (std::size_t i = 0; i < 4; ++i)
          csv << "clean," << t + 1 << ',' << evalkit::kMetrics[i].name << ','
              << fmt(res.clean[t][i], 4) << '\n';
      fileio::write_atomic(dir / ("noisy" + suffix + ".csv"), csv.str());
      json j = base;
      j["mode"] = "noisy";
      j["queries"] = res.queries;
      j["query_only"] = metrics_json(res.query_only);
      json turns = json::array(), clean = json::array();
      for (const auto& t : res.turns) turns.push_back(metrics_json(t));
      for (const auto& t : res.clean) clean.push_back(metrics_json(t));
      j["noisy_turns"] = turns;
      j["clean_turns"] = clean;
      write_json(dir / ("noisy" + suffix + ".json"), j);
      msg << csv.str();
      break;
    }
  }
  return msg.str();
}

std::string stage_report(const PipelineConfig& cfg, const Layout& io) {
  const auto dir = io.eval_dir();
  const auto fb = read_json(dir / "feedback.json");
  if (fb.value("config_hash", "") != config_hash(cfg))
    throw DataError((dir / "feedback.json").string() + ": produced under a different config");
  json report{{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"feedback", fb}};
  for (const char* name : {"multi_turn", "noisy"})
    if (fs::exists(dir / (std::string(name) + ".json")))
      report[name] = read_json(dir / (std::string(name) + ".json"));
  for (const char* name : {"host_val", "falm_metrics", "finetune"})
    if (fs::exists(io.root / "models" / (std::string(name) + ".json")))
      report[name] = read_json(io.root / "models" / (std::string(name) + ".json"));
  write_json(io.root / "report.json", report);

  std::ostringstream md;
  md << "# Localization report\n\n"
     << "config hash `" << config_hash(cfg) << "`, seed " << cfg.seed << "\n\n"
     << "| Method | R1@0.3 | R1@0.5 | R5@0.3 | R5@0.5 |\n"
     << "|---|---|---|---|---|\n";
  const auto& all = fb.at("groups").at(0);
  auto cells = [&](const json& m) {
    std::string s;
    for (const auto& spec : evalkit::kMetrics) s += " " + fmt(m.at(spec.name).get<double>()) + " |";
    return s;
  };
  auto delta_cells = [&](const json& m) {
    std::string s;
    for (const auto& spec : evalkit::kMetrics) {
      const double d = m.at(spec.name).get<double>();
      s += std::string(" ") + (d >= 0 ? "+" : "") + fmt(d) + " |";
    }
    return s;
  };
  md << "| Host (query only) |" << cells(all.at("query_only")) << "\n"
     << "| Host + alignment module (feedback) |" << cells(all.at("feedback")) << "\n"
     << "| Δ |" << delta_cells(all.at("delta")) << "\n\n"
     << "## By reference kind\n\n"
     << "| Group | n | ΔR1@0.3 | ΔR1@0.5 | ΔR5@0.3 | ΔR5@0.5 |\n|---|---|---|---|---|---|\n";
  for (const auto& g : fb.at("groups"))
    md << "| " << g.at("group").get<std::string>() << " | " << g.at("count").get<std::size_t>()
       << " |" << delta_cells(g.at("delta")) << "\n";
  if (report.contains("multi_turn")) {
    md << "\n## Multi-turn (mean over samplings)\n\n| n | R1@0.3 | R1@0.5 | R5@0.3 | R5@0.5 |\n"
       << "|---|---|---|---|---|\n";
    for (const auto& p : report["multi_turn"].at("curve"))
      md << "| " << p.at("n").get<std::size_t>() << " |" << cells(p.at("mean")) << "\n";
  }
  if (report.contains("noisy")) {
    const auto& nz = report["noisy"];
    md << "\n## Noisy first turn\n\n| Sequence | R1@0.3 | R1@0.5 | R5@0.3 | R5@0.5 |\n"
       << "|---|---|---|---|---|\n"
       << "| query only |" << cells(nz.at("query_only")) << "\n";
    std::size_t t = 0;
    for (const auto& row : nz.at("noisy_turns"))
      md << "| wrong + " << t++ << " correct |" << cells(row) << "\n";
    t = 1;
    for (const auto& row : nz.at("clean_turns")) md << "| " << t++ << " correct |" << cells(row) << "\n";
  }
  fileio::write_atomic(io.root / "report.md", md.str());
  return md.str();
}

std::string run_all(const PipelineConfig& cfg, const Layout& io) {
  std::string log;
  log += stage_gen(cfg, io);
  log += stage_train_host(cfg, io);
  log += stage_sample_refs(cfg, io, true);
  log += stage_make_feedback(cfg, io);
  log += stage_make_labels(cfg, io);
  log += stage_train_falm(cfg, io);
  log += stage_finetune(cfg, io);
  for (auto mode : {EvalMode::QueryOnly, EvalMode::Feedback, EvalMode::MultiTurn, EvalMode::Noisy})
    log += stage_eval(cfg, io, mode);
  log += stage_report(cfg, io);
  return log;
}

}  // namespace interloc::pipeline
