#include "interloc/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "interloc/error.hpp"
#include "interloc/optim.hpp"
#include "interloc/rng.hpp"

namespace interloc::trainer {

using tensor::Tensor;
using V = tensor::Var<float>;

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (temporal_aug_rate < 0.0 || temporal_aug_rate > 1.0)
    throw ConfigError("temporal_aug_rate must lie in [0, 1]");
}

std::string loss_curve_csv(std::span<const LossCurve> curves) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,split,loss\n";
  for (const auto& c : curves)
    for (std::size_t e = 0; e < c.epoch_loss.size(); ++e)
      out << e << ',' << c.split << ',' << c.epoch_loss[e] << '\n';
  return out.str();
}

namespace {

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  return order;
}

/// Runs `step_loss` for each item of a batch, accumulating gradients, then applies Adam.
/// Any non-finite value is reported with the batch id.
template <typename Fn>
double run_batch(optim::Adam<float>& opt, std::size_t batch_id, std::size_t count, Fn&& step_loss) {
  double total = 0.0;
  try {
    opt.zero_grad();
    for (std::size_t i = 0; i < count; ++i) {
      V loss = step_loss(i);
      const double value = loss.item();
      if (!std::isfinite(value)) throw NumericFault("loss is " + std::to_string(value));
      total += value;
      if (loss.requires_grad()) {
        tensor::backward(tensor::scale(loss, 1.0f / static_cast<float>(count)));
      }
    }
    opt.step();
  } catch (const NumericFault& e) {
    throw NonFiniteLoss("batch " + std::to_string(batch_id) + ": " + e.what());
  }
  return total;
}

}  // namespace

LossCurve pretrain_falm(falm::AlignmentModel<float>& model, const TrainConfig& cfg,
                        const LabeledFeedback& data) {
  cfg.validate();
  if (data.samples.empty()) throw DataError("pretrain_falm: empty labeled dataset");
  if (data.labels.size() != data.samples.size())
    throw DataError("pretrain_falm: " + std::to_string(data.samples.size()) + " samples but " +
                    std::to_string(data.labels.size()) + " label records");
  const EpisodeIndex index(data.episodes);
  // Inputs do not change across epochs; build them once.
  struct Prepared {
    Tensor<float> e_v, e_q, e_f, e_r;
    std::vector<double> ref_pos;
  };
  std::vector<Prepared> prepared;
  prepared.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    const auto& ep = index.episode(s.episode_id);
    const auto& q = index.query(s.episode_id, s.query_id);
    prepared.push_back({to_tensor<float>(ep.features), to_tensor<float>(q.embedding_tokens),
                        to_tensor<float>(s.embedding_tokens),
                        to_tensor<float>(falm::build_reference_embedding(ep, s.ref_span)),
                        falm::reference_positions(s.ref_span, ep.clip_count)});
  }

  optim::Adam<float> opt(model.params().params(), {.lr = cfg.lr});
  LossCurve curve;
  std::size_t batch_id = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(prepared.size(), derive_seed(cfg.seed, {hash_string("falm"), epoch}));
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - b);
      total += run_batch(opt, batch_id++, count, [&](std::size_t i) {
        const auto k = order[b + i];
        const auto& p = prepared[k];
        auto g = model.forward(p.e_v, p.e_q, p.e_f, p.e_r, &p.ref_pos);
        return falm::falm_loss<float>(g, data.labels[k], model.config());
      });
    }
    curve.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  return curve;
}

LossCurve pretrain_host(localizer::HostModel<float>& host, const TrainConfig& cfg,
                        std::span<const EpisodeRecord> episodes) {
  cfg.validate();
  struct Item {
    const EpisodeRecord* ep;
    const QueryRecord* q;
  };
  std::vector<Item> items;
  for (const auto& ep : episodes)
    for (const auto& q : ep.queries) items.push_back({&ep, &q});
  if (items.empty()) throw DataError("pretrain_host: no queries");
  std::vector<Tensor<float>> videos;
  for (const auto& ep : episodes) videos.push_back(to_tensor<float>(ep.features));

  optim::Adam<float> opt(host.params().params(), {.lr = cfg.lr});
  LossCurve curve;
  std::size_t batch_id = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(items.size(), derive_seed(cfg.seed, {hash_string("host"), epoch}));
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - b);
      total += run_batch(opt, batch_id++, count, [&](std::size_t i) {
        const auto& it = items[order[b + i]];
        const auto& video = videos[static_cast<std::size_t>(it.ep - episodes.data())];
        auto fused = host.encode(video, to_tensor<float>(it.q->embedding_tokens));
        return host.loss(host.decode(fused), it.q->gt_span);
      });
    }
    curve.epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  return curve;
}

FinetuneResult finetune_with_feedback(localizer::HostModel<float>& host,
                                      falm::AlignmentModel<float>& falm_model,
                                      localizer::EmAdapter adapter, const TrainConfig& cfg,
                                      std::span<const EpisodeRecord> episodes,
                                      std::span<const FeedbackSample> feedback,
                                      const AugmentContext& augment) {
  cfg.validate();
  if (feedback.empty()) throw DataError("finetune_with_feedback: empty feedback set");
  if (cfg.temporal_aug_rate > 0.0 && (!augment.embedder || !augment.bank))
    throw ConfigError("temporal augmentation needs an embedder and a template bank");
  const EpisodeIndex index(episodes);

  struct QueryItem {
    const EpisodeRecord* ep;
    const QueryRecord* q;
  };
  std::vector<QueryItem> queries;
  for (const auto& ep : episodes)
    for (const auto& q : ep.queries) queries.push_back({&ep, &q});
  if (queries.empty()) throw DataError("finetune_with_feedback: no queries");

  // Frozen FALM scores never change, so each feedback sample is scored once.
  std::vector<std::vector<double>> cached_p(feedback.size());
  if (cfg.falm_frozen) falm_model.params().set_trainable(false);

  V alpha = V::leaf(Tensor<float>::scalar(static_cast<float>(adapter.alpha)), true, "adapter.alpha");
  V beta = V::leaf(Tensor<float>::scalar(static_cast<float>(adapter.beta)), true, "adapter.beta");
  std::vector<V> trainable = host.params().params();
  trainable.push_back(alpha);
  trainable.push_back(beta);
  if (!cfg.falm_frozen)
    for (const auto& p : falm_model.params().params()) trainable.push_back(p);
  optim::Adam<float> opt(trainable, {.lr = cfg.lr});

  // Item encoding: values < 0 denote query-only samples.
  const std::size_t per_epoch = cfg.samples_per_epoch ? cfg.samples_per_epoch : feedback.size();
  FinetuneResult result;
  auto& counters = result.counters;
  std::size_t batch_id = 0;
  std::size_t fb_cursor = 0, q_cursor = 0;
  auto fb_order = shuffled(feedback.size(), derive_seed(cfg.seed, {hash_string("fb-order"), 0}));
  auto q_order = shuffled(queries.size(), derive_seed(cfg.seed, {hash_string("q-order"), 0}));
  std::size_t fb_pass = 0, q_pass = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    struct Item {
      bool with_feedback;
      std::size_t index;
    };
    std::vector<Item> items;
    for (std::size_t i = 0; i < per_epoch; ++i) {
      if (fb_cursor == fb_order.size()) {
        fb_order = shuffled(feedback.size(), derive_seed(cfg.seed, {hash_string("fb-order"), ++fb_pass}));
        fb_cursor = 0;
      }
      items.push_back({true, fb_order[fb_cursor++]});
      if (!cfg.mixed_sampling) continue;
      if (q_cursor == q_order.size()) {
        q_order = shuffled(queries.size(), derive_seed(cfg.seed, {hash_string("q-order"), ++q_pass}));
        q_cursor = 0;
      }
      items.push_back({false, q_order[q_cursor++]});
    }
    Rng epoch_rng(derive_seed(cfg.seed, {hash_string("finetune-epoch"), epoch}));
    epoch_rng.shuffle(items);

    double total = 0.0;
    for (std::size_t b = 0; b < items.size(); b += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, items.size() - b);
      std::size_t q_only = 0;
      total += run_batch(opt, batch_id++, count, [&](std::size_t i) {
        const auto& item = items[b + i];
        if (!item.with_feedback) {
          ++q_only;
          ++counters.query_only;
          const auto& qi = queries[item.index];
          auto fused = host.encode(to_tensor<float>(qi.ep->features),
                                   to_tensor<float>(qi.q->embedding_tokens));
          return host.loss(host.decode(fused), qi.q->gt_span);
        }
        ++counters.with_feedback;
        const FeedbackSample* sample = &feedback[item.index];
        const auto& ep = index.episode(sample->episode_id);
        const auto& q = index.query(sample->episode_id, sample->query_id);
        FeedbackSample augmented;
        bool is_augmented = false;
        const std::uint64_t item_seed =
            derive_seed(cfg.seed, {hash_string("aug"), epoch, b + i});
        Rng aug_rng(item_seed);
        if (cfg.temporal_aug_rate > 0.0 && aug_rng.bernoulli(cfg.temporal_aug_rate)) {
          try {
            augmented = feedbackgen::make_simple_temporal(ep, q, sample->ref_span, *augment.bank,
                                                          *augment.embedder, item_seed);
            sample = &augmented;
            is_augmented = true;
            ++counters.temporal_augmented;
          } catch (const OverlapError&) {
            ++counters.augmentation_skipped;
          }
        }
        V p;
        if (cfg.falm_frozen) {
          std::vector<double> scores;
          if (!is_augmented && !cached_p[item.index].empty()) {
            scores = cached_p[item.index];
          } else {
            scores = falm::falm_forward(falm_model, ep, q, *sample).p;
            if (!is_augmented) cached_p[item.index] = scores;
          }
          Tensor<float> t(scores.size(), 1);
          for (std::size_t r = 0; r < scores.size(); ++r) t(r, 0) = static_cast<float>(scores[r]);
          p = V::constant(std::move(t));
        } else {
          auto pos = falm::reference_positions(sample->ref_span, ep.clip_count);
          p = falm_model
                  .forward(to_tensor<float>(ep.features), to_tensor<float>(q.embedding_tokens),
                           to_tensor<float>(sample->embedding_tokens),
                           to_tensor<float>(falm::build_reference_embedding(ep, sample->ref_span)),
                           &pos)
                  .p;
        }
        V p_hat = tensor::clamp(tensor::affine(p, alpha, beta), 0.0f, 1.0f);
        auto fused = host.encode(to_tensor<float>(ep.features), to_tensor<float>(q.embedding_tokens),
                                 &p_hat);
        return host.loss(host.decode(fused), q.gt_span);
      });
      counters.batch_query_only.push_back(q_only);
      ++counters.batches;
    }
    result.curve.epoch_loss.push_back(total / static_cast<double>(items.size()));
  }
  if (cfg.falm_frozen) falm_model.params().set_trainable(true);
  result.adapter = {static_cast<double>(alpha.item()), static_cast<double>(beta.item())};
  return result;
}

}  // namespace interloc::trainer
