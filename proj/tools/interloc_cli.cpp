#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "interloc/error.hpp"
#include "interloc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace interloc;
using namespace interloc::pipeline;

namespace {

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Usage: return 1;
    case ErrorCategory::Data: return 2;
    case ErrorCategory::Numeric: return 3;
  }
  return 2;
}

struct Options {
  std::string workdir;
  std::string config;
  std::optional<std::uint64_t> seed;
};

// Resolves the config for commands that start a work directory: --config, then
// $INTERLOC_CONFIG_DIR/config.json, then built-in defaults. --seed overrides the seed.
PipelineConfig initial_config(const Options& o) {
  PipelineConfig cfg;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw UsageError("--config: file not found: " + o.config);
    cfg = load_config(o.config);
  } else if (const char* dir = std::getenv("INTERLOC_CONFIG_DIR")) {
    const fs::path p = fs::path(dir) / "config.json";
    if (fs::exists(p)) cfg = load_config(p);
  }
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

// Later stages reuse the config stored by `gen`; a conflicting --seed is a usage error.
PipelineConfig workdir_config(const Options& o, const Layout& io) {
  if (!fs::exists(io.config()))
    throw UsageError("--workdir: " + io.root.string() + " has no config.json (run gen first)");
  auto cfg = read_workdir_config(io);
  if (o.seed && *o.seed != cfg.seed)
    throw UsageError("--seed: " + std::to_string(*o.seed) + " differs from the work directory seed " +
                     std::to_string(cfg.seed));
  if (!o.config.empty())
    throw UsageError("--config: only accepted by gen and run-all; later stages use config.json");
  return cfg;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-w,--workdir,-o,--out", o.workdir, "Work directory holding all artifacts")
      ->required();
  cmd->add_option("-c,--config", o.config, "Pipeline config JSON");
  cmd->add_option("-s,--seed", o.seed, "Master seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedback-driven temporal localization pipeline"};
  app.require_subcommand(1);
  Options o;
  bool use_host = true;
  bool bypass = false;
  std::string mode = "feedback";

  auto* gen = app.add_subcommand("gen", "Generate the synthetic world (train/val/test)");
  add_common(gen, o);
  auto* refs = app.add_subcommand("sample-refs", "Sample reference spans for train and test");
  add_common(refs, o);
  refs->add_flag("--host,!--no-host", use_host,
                 "Include model-failure spans from the trained host (default on)");
  auto* fbk = app.add_subcommand("make-feedback", "Generate QnF feedback for the sampled references");
  add_common(fbk, o);
  auto* lab = app.add_subcommand("make-labels", "Generate alignment pseudo-labels");
  add_common(lab, o);
  auto* tf = app.add_subcommand("train-falm", "Pretrain the feedback alignment model");
  add_common(tf, o);
  auto* th = app.add_subcommand("train-host", "Pretrain the host localizer on query-only data");
  add_common(th, o);
  auto* ft = app.add_subcommand("finetune", "Fine-tune adapter and host with feedback");
  add_common(ft, o);
  auto* ev = app.add_subcommand("eval", "Evaluate on the test split");
  add_common(ev, o);
  ev->add_option("-m,--mode", mode, "query-only|feedback|multi-turn|noisy")
      ->check(CLI::IsMember({"query-only", "feedback", "multi-turn", "noisy"}));
  ev->add_flag("--bypass", bypass, "Force the reweighting to all ones");
  auto* rep = app.add_subcommand("report", "Merge evaluation outputs into report.md/json");
  add_common(rep, o);
  auto* all = app.add_subcommand("run-all", "Run every stage in order");
  add_common(all, o);
  auto* show = app.add_subcommand("print-config", "Print the effective config as JSON");
  show->add_option("-c,--config", o.config, "Pipeline config JSON");
  show->add_option("-s,--seed", o.seed, "Master seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const Layout io{o.workdir};
    std::string out;
    if (*show) {
      out = config_to_json(initial_config(o));
    } else if (*gen) {
      out = stage_gen(initial_config(o), io);
    } else if (*all) {
      out = run_all(initial_config(o), io);
    } else {
      const auto cfg = workdir_config(o, io);
      if (*refs) out = stage_sample_refs(cfg, io, use_host);
      else if (*fbk) out = stage_make_feedback(cfg, io);
      else if (*lab) out = stage_make_labels(cfg, io);
      else if (*tf) out = stage_train_falm(cfg, io);
      else if (*th) out = stage_train_host(cfg, io);
      else if (*ft) out = stage_finetune(cfg, io);
      else if (*ev) out = stage_eval(cfg, io, eval_mode_from_string(mode), bypass);
      else if (*rep) out = stage_report(cfg, io);
    }
    std::cout << out;
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
