// Acceptance driver: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "interloc/core.hpp"
#include "interloc/evalkit.hpp"
#include "interloc/falm.hpp"
#include "interloc/labelgen.hpp"
#include "interloc/localizer.hpp"
#include "interloc/nn.hpp"
#include "interloc/pipeline.hpp"
#include "interloc/serialize.hpp"
#include "interloc/tensor.hpp"
#include "interloc/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace interloc;

namespace {

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double wall() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0_).count();
  }
  double cpu() const { return static_cast<double>(std::clock() - cpu0_) / CLOCKS_PER_SEC; }

 private:
  std::chrono::steady_clock::time_point wall0_ = std::chrono::steady_clock::now();
  std::clock_t cpu0_ = std::clock();
};

std::string fmt(double v, int prec = 2) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << v;
  return s.str();
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return json::parse(in);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---------------------------------------------------------------------------
// Shared pipeline runs

struct Runs {
  fs::path root;
  std::map<std::uint64_t, double> cpu_seconds;
  std::map<std::uint64_t, double> wall_seconds;
  std::map<std::uint64_t, std::string> errors;

  fs::path dir(std::uint64_t seed) const { return root / ("seed_" + std::to_string(seed)); }

  void ensure(std::uint64_t seed) {
    if (cpu_seconds.count(seed) || errors.count(seed)) return;
    const auto d = dir(seed);
    fs::remove_all(d);
    pipeline::PipelineConfig cfg;
    cfg.seed = seed;
    Stopwatch sw;
    try {
      pipeline::run_all(cfg, pipeline::Layout{d});
      cpu_seconds[seed] = sw.cpu();
      wall_seconds[seed] = sw.wall();
    } catch (const std::exception& e) {
      errors[seed] = e.what();
    }
  }
  void require(std::uint64_t seed) {
    ensure(seed);
    if (errors.count(seed)) throw std::runtime_error("seed " + std::to_string(seed) + ": " + errors[seed]);
  }
};

// ---------------------------------------------------------------------------
// 1. tIoU and recall against a cell-counting oracle

// Spans live on a 0.25 grid, so counting quarter cells gives exact overlaps.
double oracle_tiou(const Span& a, const Span& b) {
  const int a0 = static_cast<int>(std::lround(a.start * 4)), a1 = static_cast<int>(std::lround(a.end * 4));
  const int b0 = static_cast<int>(std::lround(b.start * 4)), b1 = static_cast<int>(std::lround(b.end * 4));
  int inter = 0, uni = 0;
  for (int c = std::min(a0, b0); c < std::max(a1, b1); ++c) {
    const bool in_a = c >= a0 && c < a1, in_b = c >= b0 && c < b1;
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

Outcome criterion1() {
  std::mt19937_64 g(101);
  std::uniform_int_distribution<int> start(0, 200), len(1, 60), count(1, 8);
  auto span = [&] {
    const int s = start(g);
    return Span{s * 0.25, (s + len(g)) * 0.25};
  };
  double max_diff = 0.0;
  std::size_t recall_mismatch = 0, checks = 0;
  for (int f = 0; f < 200; ++f) {
    const Span gt = span();
    SpanPrediction preds;
    const int n = count(g);
    for (int i = 0; i < n; ++i) preds.push_back({span(), 1.0 - 0.1 * i});
    for (const auto& p : preds) {
      max_diff = std::max(max_diff, std::abs(tiou(p.span, gt) - oracle_tiou(p.span, gt)));
      ++checks;
    }
    for (const auto& m : evalkit::kMetrics) {
      int want = 0;
      for (std::size_t i = 0; i < std::min<std::size_t>(m.k, preds.size()); ++i)
        if (oracle_tiou(preds[i].span, gt) >= m.tiou - 1e-12) want = 1;
      recall_mismatch += evalkit::recall_at_k(preds, gt, m.k, m.tiou) != want;
      ++checks;
    }
  }
  Outcome o;
  o.pass = max_diff <= 1e-6 && recall_mismatch == 0;
  o.detail = "200 fixtures, " + std::to_string(checks) + " checks, max |tIoU diff| " +
             std::to_string(max_diff) + ", recall mismatches " + std::to_string(recall_mismatch);
  return o;
}

// ---------------------------------------------------------------------------
// 2. Label-generation golden fixtures

Outcome criterion2() {
  using Bits = std::vector<std::uint8_t>;
  std::size_t failed = 0, total = 0;
  std::string first;
  auto close = [&](const std::string& name, const std::vector<double>& got, const std::vector<double>& want) {
    ++total;
    bool ok = got.size() == want.size();
    for (std::size_t i = 0; ok && i < got.size(); ++i) ok = std::abs(got[i] - want[i]) <= 1e-6;
    if (!ok && failed++ == 0) first = name;
  };
  auto same = [&](const std::string& name, const Bits& got, const Bits& want) {
    ++total;
    if (got != want && failed++ == 0) first = name;
  };
  const std::vector<double> s{0.1, 0.4, 0.35, 0.9, 0.8, 0.2, 0.05, 0.3};
  close("smooth sigma=1", labelgen::smooth_and_normalize(s, 1.0),
        {0.005108675564, 0.264554088863, 0.64309582639, 1.0, 0.870441958156, 0.318994366282, 0.0,
         0.038144419056});
  close("smooth sigma=2", labelgen::smooth_and_normalize(s, 2.0),
        {0.289177384613, 0.523094578332, 0.83289539588, 1.0, 0.895202241149, 0.572627231284,
         0.218269494376, 0.0});
  close("normalize sigma=0", labelgen::smooth_and_normalize(s, 0.0),
        {0.05 / 0.85, 0.35 / 0.85, 0.3 / 0.85, 1.0, 0.75 / 0.85, 0.15 / 0.85, 0.0, 0.25 / 0.85});
  close("impulse sigma=1", labelgen::smooth_and_normalize(std::vector<double>{0, 0, 1, 0, 0}, 1.0),
        {0.0, 0.539023251835, 1.0, 0.539023251835, 0.0});
  close("inversion", labelgen::invert_not_contains(std::vector<double>{0.3, 0, 1, 0.25, 0.5, 0.75, 0.9, 0.1}),
        {0.7, 1.0, 0.0, 0.75, 0.5, 0.25, 0.1, 0.9});
  const std::vector<double> b{0.2, 0.6, 0.8, 0.9, 1.0, 0.7, 0.66, 0.65};
  const auto t = labelgen::gt_threshold(b, {2, 5});
  close("threshold", {t.mean, t.stddev, t.delta}, {0.9, 0.0816496580927726, 0.6550510257216822});
  same("binarize", labelgen::binarize(b, {2, 5}), Bits{0, 0, 1, 1, 1, 1, 1, 0});
  same("binarize single clip", labelgen::binarize(b, {5, 6}), Bits{0, 0, 1, 1, 1, 1, 0, 0});
  same("temporal before", labelgen::temporal_labels({4, 6}, Temporal::Before, 8), Bits{1, 1, 1, 1, 0, 0, 0, 0});
  same("temporal after", labelgen::temporal_labels({4, 6}, Temporal::After, 8), Bits{0, 0, 0, 0, 0, 0, 1, 1});
  const Bits lc{1, 1, 0, 1, 1, 0, 1, 1}, lk{1, 0, 1, 1, 1, 1, 0, 1}, lt{1, 1, 1, 0, 1, 1, 1, 1};
  same("AND fusion", labelgen::logical_and(labelgen::logical_and(lc, lk), lt), Bits{1, 0, 0, 0, 1, 0, 0, 1});
  Outcome o;
  o.pass = failed == 0;
  o.detail = std::to_string(total - failed) + "/" + std::to_string(total) + " fixtures within 1e-6";
  if (failed) o.detail += ", first failure: " + first;
  return o;
}

// ---------------------------------------------------------------------------
// 3. Gradient checks

Outcome criterion3() {
  using namespace interloc::tensor;
  using gradcheck::param;
  using gradcheck::weighted_sum;
  using VD = Var<double>;
  std::vector<std::pair<std::string, gradcheck::Result>> results;
  auto run = [&](const std::string& name, const std::vector<VD>& leaves, const std::function<VD()>& build) {
    results.emplace_back(name, gradcheck::check(leaves, build));
  };
  std::mt19937_64 g(3);
  auto a = param(3, 4, g), b = param(3, 4, g), w = param(4, 2, g), bias = param(1, 2, g);
  auto row = param(1, 4, g), s = param(3, 1, g), al = param(1, 1, g), be = param(1, 1, g);
  run("matmul", {a, w}, [&] { return weighted_sum(matmul(a, w)); });
  run("linear", {a, w, bias}, [&] { return weighted_sum(linear(a, w, bias)); });
  run("add", {a, b}, [&] { return weighted_sum(add(a, b)); });
  run("sub", {a, b}, [&] { return weighted_sum(sub(a, b)); });
  run("mul", {a, b}, [&] { return weighted_sum(mul(a, b)); });
  run("add_row", {a, row}, [&] { return weighted_sum(add_row(a, row)); });
  run("scale", {a}, [&] { return weighted_sum(scale(a, 1.7)); });
  run("affine", {a, al, be}, [&] { return weighted_sum(affine(a, al, be)); });
  run("affine_const", {a}, [&] { return weighted_sum(affine_const(a, 0.3, -0.2)); });
  run("row_scale", {a, s}, [&] { return weighted_sum(row_scale(a, s)); });
  run("concat_rows", {a, b}, [&] {
    const VD parts[] = {a, b, a};
    return weighted_sum(concat_rows<double>(parts));
  });
  run("slice_rows", {a}, [&] { return weighted_sum(slice_rows(a, 1, 3)); });
  run("slice_cols", {a}, [&] { return weighted_sum(slice_cols(a, 1, 3)); });
  run("sum", {a}, [&] { return sum(a); });
  run("mean", {a}, [&] { return mean(a); });
  run("mean_of", {a, b}, [&] {
    const VD parts[] = {a, b, b};
    return weighted_sum(mean_of<double>(parts));
  });
  run("transpose", {a}, [&] { return weighted_sum(transpose(a)); });

  auto x = param(3, 5, g, -2, 2), gamma = param(1, 5, g), beta = param(1, 5, g);
  run("softmax_rows", {x}, [&] { return weighted_sum(softmax_rows(x)); });
  run("layer_norm", {x, gamma, beta}, [&] { return weighted_sum(layer_norm(x, gamma, beta)); });
  run("gelu", {x}, [&] { return weighted_sum(gelu(x)); });
  run("sigmoid", {x}, [&] { return weighted_sum(sigmoid(x)); });
  run("softplus", {x}, [&] { return weighted_sum(softplus(x)); });
  auto pos = param(3, 5, g, 0.2, 1.0), neg = param(3, 5, g, -1.0, -0.2);
  run("relu (active)", {pos}, [&] { return weighted_sum(relu(pos)); });
  run("relu (inactive)", {neg}, [&] { return weighted_sum(relu(neg)); });
  auto mid = param(3, 5, g, 0.2, 0.8), out = param(3, 5, g, 1.2, 2.0);
  run("clamp (inside)", {mid}, [&] { return weighted_sum(clamp(mid, 0.0, 1.0)); });
  run("clamp (outside)", {out}, [&] { return weighted_sum(clamp(out, 0.0, 1.0)); });

  auto q = param(3, 4, g), k = param(5, 4, g), v = param(5, 4, g);
  Tensor<double> mask(3, 5);
  mask(1, 2) = -3.0;
  run("attention (1 head, mask)", {q, k, v}, [&] { return weighted_sum(scaled_dot_attention(q, k, v, 1, &mask)); });
  run("attention (2 heads)", {q, k, v}, [&] { return weighted_sum(scaled_dot_attention(q, k, v, 2)); });

  auto p = param(6, 1, g, 0.05, 0.95);
  auto target = gradcheck::random_tensor(6, 1, g, 0, 1);
  Tensor<double> lmask(6, 1, 1.0);
  lmask(2, 0) = 0.0;
  run("bce_loss", {p}, [&] { return bce_loss(p, target, lmask); });
  run("mse_loss", {p}, [&] { return mse_loss(p, target, lmask); });
  auto far = gradcheck::random_tensor(6, 1, g, 2, 3);
  run("l1_loss", {p}, [&] { return l1_loss(p, far, lmask); });

  // Full alignment-model loss at d_model 8.
  falm::FalmConfig fc;
  fc.input_dim = 6;
  fc.d_model = 8;
  fc.heads = 2;
  fc.t_q_layers = fc.t_v_layers = fc.t_m_layers = 1;
  fc.ffn_hidden = 12;
  fc.head_hidden = 6;
  fc.seed = 5;
  falm::AlignmentModel<double> model(fc);
  auto mat = [&](std::size_t r) { return gradcheck::random_tensor(r, 6, g, -1.5, 1.5); };
  const auto ev = mat(6), eq = mat(2), ef = mat(3), er = mat(3);
  labelgen::AlignmentLabels labels;
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < 6; ++i) {
    labels.s_c.push_back(u(g));
    labels.s_k.push_back(u(g));
    labels.l_c.push_back(u(g) < 0.5);
    labels.l_k.push_back(u(g) < 0.5);
    labels.l_t.push_back(i >= 3);
    labels.l.push_back(labels.l_c.back() && labels.l_t.back());
  }
  labels.has_contains = labels.has_not_contains = labels.has_temporal = true;
  const std::vector<double> ref_pos{1.0, 3.0, 2.0};
  run("alignment model loss", model.params().params(),
      [&] { return falm::falm_loss<double>(model.forward(ev, eq, ef, er, &ref_pos), labels, fc); });

  double worst = 0.0;
  std::string worst_name, worst_where;
  for (const auto& [name, r] : results)
    if (r.max_rel >= worst) {
      worst = r.max_rel;
      worst_name = name;
      worst_where = r.where;
    }
  Outcome o;
  o.pass = worst <= 1e-3;
  o.detail = std::to_string(results.size()) + " checks, worst relative error " + std::to_string(worst) +
             " (" + worst_name + ")";
  if (!o.pass) o.detail += " at " + worst_where;
  return o;
}

// ---------------------------------------------------------------------------
// 4. Alignment-model pretraining

Outcome criterion4(Runs& runs) {
  runs.require(1);
  const pipeline::Layout io{runs.dir(1)};
  const auto cfg = pipeline::read_workdir_config(io);
  const auto r = cfg.resolved();
  const auto emb = pipeline::make_embedder(cfg);
  auto train = serialize::read_world(io.world("train"), emb);
  if (train.size() > cfg.falm_train_episodes) train.resize(cfg.falm_train_episodes);
  const auto fb = serialize::read_feedback(io.feedback("train"), emb);
  const auto labels = serialize::read_labels(io.labels("train"));
  auto tc = r.falm_train;
  tc.epochs = 30;
  Stopwatch sw;
  localizer::FalmF model(r.falm);
  const auto curve = trainer::pretrain_falm(model, tc, {train, fb, labels});
  const double secs = sw.cpu();
  const auto test = serialize::read_world(io.world("test"), emb);
  const auto test_fb = serialize::read_feedback(io.feedback("test"), emb);
  const auto test_labels = serialize::read_labels(io.labels("test"));
  const double auc = pipeline::falm_auc(model, test, test_fb, test_labels);
  const double ratio = curve.epoch_loss.back() / curve.epoch_loss.front();
  Outcome o;
  o.pass = ratio < 0.5 && auc >= 0.85 && secs < 300.0;
  o.detail = std::to_string(fb.size()) + " samples, 30 epochs, loss " + fmt(curve.epoch_loss.front(), 4) +
             " -> " + fmt(curve.epoch_loss.back(), 4) + " (" + fmt(100 * ratio, 1) + "% of epoch 0), test AUC " +
             fmt(auc, 4) + ", " + fmt(secs, 1) + " s CPU";
  return o;
}

// ---------------------------------------------------------------------------
// 5. Headline improvement with feedback

Outcome criterion5(Runs& runs) {
  double cpu = 0.0, d1 = 0.0, d5 = 0.0;
  bool all_positive = true;
  std::string per_seed;
  for (auto s : kSeeds) {
    runs.require(s);
    cpu += runs.cpu_seconds.at(s);
    const auto fb = read_json(runs.dir(s) / "eval" / "feedback.json");
    const auto& all = fb.at("groups").at(0);
    const double a = all.at("delta").at("R1@0.3").get<double>();
    const double b = all.at("delta").at("R5@0.3").get<double>();
    d1 += a / kSeeds.size();
    d5 += b / kSeeds.size();
    all_positive = all_positive && a > 0 && b > 0;
    per_seed += " seed " + std::to_string(s) + " (" + fmt(a) + ", " + fmt(b) + ")";
  }
  Outcome o;
  o.pass = d1 >= 5.0 && d5 >= 5.0 && all_positive && cpu < 600.0;
  o.detail = "mean delta R1@0.3 " + fmt(d1) + ", R5@0.3 " + fmt(d5) + ";" + per_seed + "; " + fmt(cpu, 1) +
             " s CPU for " + std::to_string(kSeeds.size()) + " seeds";
  return o;
}

// ---------------------------------------------------------------------------
// Trained stack for seed 1

struct Stack {
  pipeline::PipelineConfig cfg;
  synthworld::Embedder emb;
  std::vector<EpisodeRecord> test;
  std::vector<FeedbackSample> feedback;
  localizer::HostF host;
  localizer::FalmF falm;
  localizer::EmAdapter adapter;
};

Stack load_stack(const fs::path& dir) {
  const pipeline::Layout io{dir};
  auto cfg = pipeline::read_workdir_config(io);
  auto emb = pipeline::make_embedder(cfg);
  auto test = serialize::read_world(io.world("test"), emb);
  auto fb = serialize::read_feedback(io.feedback("test"), emb);
  localizer::EmAdapter adapter;
  auto host = pipeline::load_host(checkpoint::load(io.finetuned_ckpt()), &adapter);
  auto falm = pipeline::load_falm(checkpoint::load(io.falm_ckpt()));
  return Stack{std::move(cfg), std::move(emb), std::move(test), std::move(fb),
               std::move(host), std::move(falm), adapter};
}

// 6. Bitwise identities of the plug-in

Outcome criterion6(Runs& runs) {
  runs.require(1);
  const auto st = load_stack(runs.dir(1));
  std::size_t queries = 0, none_diff = 0, bypass_checked = 0, bypass_diff = 0;
  const localizer::EmAdapter ones{0.0, 1.0};
  std::map<std::string, const FeedbackSample*> first_fb;
  for (const auto& f : st.feedback) first_fb.emplace(f.episode_id + "/" + f.query_id, &f);
  for (const auto& ep : st.test)
    for (const auto& q : ep.queries) {
      ++queries;
      const auto host = localizer::host_forward(st.host, ep.features, q.embedding_tokens).prediction;
      none_diff += localizer::feedback_predict(st.host, st.falm, st.adapter, ep, q, nullptr) != host;
      const auto it = first_fb.find(ep.id + "/" + q.id);
      if (it != first_fb.end()) {
        ++bypass_checked;
        bypass_diff += localizer::feedback_predict(st.host, st.falm, ones, ep, q, it->second) != host;
      }
    }
  Outcome o;
  o.pass = none_diff == 0 && bypass_diff == 0 && bypass_checked > 0;
  o.detail = "no feedback: " + std::to_string(queries - none_diff) + "/" + std::to_string(queries) +
             " identical; adapter (0, 1): " + std::to_string(bypass_checked - bypass_diff) + "/" +
             std::to_string(bypass_checked) + " identical";
  return o;
}

// 7. Multi-turn behaviour

Outcome criterion7(Runs& runs) {
  double r1 = 0.0, r3 = 0.0;
  for (auto s : kSeeds) {
    runs.require(s);
    const auto mt = read_json(runs.dir(s) / "eval" / "multi_turn.json");
    for (const auto& p : mt.at("curve")) {
      if (p.at("n") == 1) r1 += p.at("mean").at("R5@0.3").get<double>() / kSeeds.size();
      if (p.at("n") == 3) r3 += p.at("mean").at("R5@0.3").get<double>() / kSeeds.size();
    }
  }
  // Duplicate and permutation invariance on real queries of the seed-1 stack.
  const auto st = load_stack(runs.dir(1));
  std::map<std::string, std::vector<FeedbackSample>> by_query;
  for (const auto& f : st.feedback) by_query[f.episode_id + "/" + f.query_id].push_back(f);
  const EpisodeIndex index(st.test);
  std::mt19937_64 g(23);
  std::size_t checked = 0, comparisons = 0, perm_violations = 0, dup_violations = 0;
  for (const auto& [key, list] : by_query) {
    if (list.size() < 2) continue;
    if (checked == 100) break;
    ++checked;
    const auto& ep = index.episode(list.front().episode_id);
    const auto& q = *ep.find_query(list.front().query_id);
    const auto base = localizer::feedback_predict_multi(st.host, st.falm, st.adapter, ep, q, list);
    auto shuffled = list;
    std::shuffle(shuffled.begin(), shuffled.end(), g);
    auto reversed = list;
    std::reverse(reversed.begin(), reversed.end());
    for (const auto* variant : {&shuffled, &reversed}) {
      ++comparisons;
      perm_violations += localizer::feedback_predict_multi(st.host, st.falm, st.adapter, ep, q, *variant) != base;
    }
    // [f, f] must reproduce the single-turn prediction for every f.
    for (const auto& f : list) {
      const FeedbackSample twice[] = {f, f};
      ++comparisons;
      dup_violations += localizer::feedback_predict_multi(st.host, st.falm, st.adapter, ep, q, twice) !=
                    localizer::feedback_predict(st.host, st.falm, st.adapter, ep, q, &f);
    }
  }
  Outcome o;
  o.pass = r3 >= r1 - 1.0 && perm_violations == 0 && dup_violations == 0 && checked > 0;
  o.detail = "mean R5@0.3 n=1 " + fmt(r1) + ", n=3 " + fmt(r3) + "; " + std::to_string(checked) +
             " queries, " + std::to_string(comparisons) +
             " comparisons, " + std::to_string(perm_violations) + " permutations and " +
             std::to_string(dup_violations) + " duplicates differ";
  return o;
}

// 8. Recovery from a wrong first turn

Outcome criterion8(Runs& runs) {
  double qo = 0.0, wrong = 0.0, recovered = 0.0, clean = 0.0;
  bool first_worse = true;
  for (auto s : kSeeds) {
    runs.require(s);
    const auto n = read_json(runs.dir(s) / "eval" / "noisy.json");
    const double q = n.at("query_only").at("R1@0.3").get<double>();
    const double w = n.at("noisy_turns").at(0).at("R1@0.3").get<double>();
    first_worse = first_worse && w < q;
    const double k = static_cast<double>(kSeeds.size());
    qo += q / k;
    wrong += w / k;
    recovered += n.at("noisy_turns").at(3).at("R1@0.3").get<double>() / k;
    clean += n.at("clean_turns").at(2).at("R1@0.3").get<double>() / k;
  }
  Outcome o;
  o.pass = first_worse && recovered >= 0.9 * clean;
  o.detail = "mean R1@0.3 query-only " + fmt(qo) + ", wrong turn " + fmt(wrong) + ", wrong + 3 correct " +
             fmt(recovered) + ", 3 correct " + fmt(clean) + " (ratio " + fmt(clean > 0 ? recovered / clean : 0, 3) +
             ", need 0.900)";
  return o;
}

// 9. Bitwise reproducibility

Outcome criterion9(Runs& runs) {
  runs.require(1);
  const auto a = runs.dir(1), b = runs.root / "seed_1_rerun";
  fs::remove_all(b);
  pipeline::PipelineConfig cfg;
  cfg.seed = 1;
  pipeline::run_all(cfg, pipeline::Layout{b});
  std::set<fs::path> files;
  for (const auto& root : {a, b})
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) files.insert(fs::relative(e.path(), root));
  std::size_t differ = 0;
  std::string first;
  for (const auto& f : files) {
    const bool same = fs::exists(a / f) && fs::exists(b / f) && read_bytes(a / f) == read_bytes(b / f);
    if (!same && differ++ == 0) first = f.string();
  }
  Outcome o;
  o.pass = differ == 0 && !files.empty();
  o.detail = std::to_string(files.size() - differ) + "/" + std::to_string(files.size()) + " files identical";
  if (differ) o.detail += ", first difference: " + first;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Directory for pipeline runs");
  app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  Runs runs;
  runs.root = fs::absolute(workdir);
  fs::create_directories(runs.root);

  const std::vector<std::function<Outcome()>> criteria{
      criterion1,
      criterion2,
      criterion3,
      [&] { return criterion4(runs); },
      [&] {
        // Runs every seed first so the CPU total covers exactly the pipeline runs.
        for (auto s : kSeeds) runs.ensure(s);
        return criterion5(runs);
      },
      [&] { return criterion6(runs); },
      [&] { return criterion7(runs); },
      [&] { return criterion8(runs); },
      [&] { return criterion9(runs); },
  };
  // Criterion 5 owns the pipeline runs, so it is evaluated before those that reuse them.
  const std::vector<int> order{1, 2, 3, 5, 4, 6, 7, 8, 9};
  std::map<int, std::string> lines;
  int failures = 0;
  for (int c : order) {
    if (!only.empty() && std::find(only.begin(), only.end(), c) == only.end()) continue;
    Stopwatch sw;
    Outcome o;
    try {
      o = criteria[static_cast<std::size_t>(c - 1)]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("error: ") + e.what();
    }
    failures += !o.pass;
    std::ostringstream line;
    line << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << " (" << fmt(sw.wall(), 1) << " s) "
         << o.detail;
    std::cout << line.str() << std::endl;
    lines[c] = line.str();
  }
  std::cout << "summary: " << lines.size() - static_cast<std::size_t>(failures) << "/" << lines.size()
            << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
