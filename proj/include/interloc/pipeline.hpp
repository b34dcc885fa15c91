#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "interloc/checkpoint.hpp"
#include "interloc/evalkit.hpp"
#include "interloc/falm.hpp"
#include "interloc/feedbackgen.hpp"
#include "interloc/labelgen.hpp"
#include "interloc/localizer.hpp"
#include "interloc/refsample.hpp"
#include "interloc/serialize.hpp"
#include "interloc/synthworld.hpp"
#include "interloc/trainer.hpp"

namespace interloc::pipeline {

namespace fs = std::filesystem;

/// Everything that determines the artifacts. Component seeds are derived from `seed`.
struct PipelineConfig {
  std::uint64_t seed = 7;
  synthworld::WorldConfig world;  // split, episodes and seed are set per split
  std::size_t train_episodes = 500;
  std::size_t val_episodes = 100;
  std::size_t test_episodes = 200;
  /// Leading train episodes whose queries form the FALM feedback split.
  std::size_t falm_train_episodes = 60;
  refsample::ReferenceConfig refs;
  refsample::FailureMode failure_mode = refsample::FailureMode::Recall5;
  feedbackgen::QnfConfig qnf;
  labelgen::LabelConfig labels;
  falm::FalmConfig falm;
  localizer::HostConfig host;
  trainer::TrainConfig falm_train;
  trainer::TrainConfig host_train;
  trainer::TrainConfig finetune;
  evalkit::MultiTurnConfig multi_turn;
  evalkit::NoisyConfig noisy;

  PipelineConfig();
  void validate() const;
  /// Copy with every component seed derived from `seed`.
  PipelineConfig resolved() const;
};

std::string config_to_json(const PipelineConfig& cfg);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
PipelineConfig config_from_json(const std::string& text);
PipelineConfig load_config(const fs::path& path);
/// 16 hex digits identifying the resolved configuration.
std::string config_hash(const PipelineConfig& cfg);

serialize::Header make_header(const PipelineConfig& cfg, std::string kind = {});

synthworld::Embedder make_embedder(const PipelineConfig& cfg);
std::vector<EpisodeRecord> generate_split(const PipelineConfig& cfg,
                                          const synthworld::Embedder& emb,
                                          const std::string& split);

/// Top-1 spans of queries the host gets wrong.
std::map<std::string, Span> failure_spans(const localizer::HostF& host,
                                          std::span<const EpisodeRecord> episodes,
                                          refsample::FailureMode mode);

std::vector<refsample::QueryReferences> sample_refs(const PipelineConfig& cfg,
                                                    std::span<const EpisodeRecord> episodes,
                                                    const std::map<std::string, Span>& failures,
                                                    const std::string& split);

feedbackgen::QnfDataset make_feedback(const PipelineConfig& cfg,
                                      std::span<const EpisodeRecord> episodes,
                                      std::span<const refsample::QueryReferences> refs,
                                      const synthworld::Embedder& emb, bool eval_split);

std::vector<labelgen::AlignmentLabels> make_labels(const PipelineConfig& cfg,
                                                   std::span<const EpisodeRecord> episodes,
                                                   std::span<const FeedbackSample> samples,
                                                   const synthworld::Embedder& emb);

/// Held-out per-clip AUC of P against L.
double falm_auc(const localizer::FalmF& model, std::span<const EpisodeRecord> episodes,
                std::span<const FeedbackSample> samples,
                std::span<const labelgen::AlignmentLabels> labels);

/// Mean recall of a seeded random-span baseline (one span per query, beta-fitted duration).
std::array<double, 4> random_baseline(const PipelineConfig& cfg,
                                      std::span<const EpisodeRecord> episodes);

/// Recall of the bare host on every query of the split.
std::array<double, 4> host_recall(const localizer::HostF& host,
                                  std::span<const EpisodeRecord> episodes);

// --- checkpoints ------------------------------------------------------------

checkpoint::Checkpoint falm_checkpoint(const PipelineConfig& cfg, const localizer::FalmF& model);
checkpoint::Checkpoint host_checkpoint(const PipelineConfig& cfg, const localizer::HostF& host,
                                       const std::optional<localizer::EmAdapter>& adapter);
/// Builds the model described by the checkpoint metadata and loads its weights.
localizer::FalmF load_falm(const checkpoint::Checkpoint& ckpt);
localizer::HostF load_host(const checkpoint::Checkpoint& ckpt,
                           localizer::EmAdapter* adapter = nullptr);

// --- on-disk stages ---------------------------------------------------------

/// Fixed artifact layout inside a work directory.
struct Layout {
  fs::path root;
  fs::path world(const std::string& split) const { return root / "world" / split; }
  fs::path refs(const std::string& split) const { return root / "refs" / (split + ".jsonl"); }
  fs::path feedback(const std::string& split) const {
    return root / "feedback" / (split + ".jsonl");
  }
  fs::path labels(const std::string& split) const { return root / "labels" / (split + ".jsonl"); }
  fs::path host_ckpt() const { return root / "models" / "host.ckpt"; }
  fs::path falm_ckpt() const { return root / "models" / "falm.ckpt"; }
  fs::path finetuned_ckpt() const { return root / "models" / "finetuned.ckpt"; }
  fs::path eval_dir() const { return root / "eval"; }
  fs::path config() const { return root / "config.json"; }
};

/// Thin on-disk wrappers used by the command-line tool. Each reads its inputs from the layout
/// and writes its outputs atomically. Returned strings are short human summaries.
std::string stage_gen(const PipelineConfig& cfg, const Layout& io);
std::string stage_train_host(const PipelineConfig& cfg, const Layout& io);
/// `use_host` adds ModelFailure spans from the trained host checkpoint.
std::string stage_sample_refs(const PipelineConfig& cfg, const Layout& io, bool use_host);
std::string stage_make_feedback(const PipelineConfig& cfg, const Layout& io);
std::string stage_make_labels(const PipelineConfig& cfg, const Layout& io);
std::string stage_train_falm(const PipelineConfig& cfg, const Layout& io);
std::string stage_finetune(const PipelineConfig& cfg, const Layout& io);

enum class EvalMode { QueryOnly, Feedback, MultiTurn, Noisy };
EvalMode eval_mode_from_string(const std::string& s);
/// `bypass` evaluates with the adapter forced to alpha=0, beta=1 (all-ones reweighting).
std::string stage_eval(const PipelineConfig& cfg, const Layout& io, EvalMode mode,
                       bool bypass = false);
/// Merges the evaluation outputs into report.md and report.json.
std::string stage_report(const PipelineConfig& cfg, const Layout& io);

/// Every stage in dependency order.
std::string run_all(const PipelineConfig& cfg, const Layout& io);

/// Reads the config stored in the work directory (written by stage_gen), checking that it
/// matches `expected_hash` when given.
PipelineConfig read_workdir_config(const Layout& io);

}  // namespace interloc::pipeline
