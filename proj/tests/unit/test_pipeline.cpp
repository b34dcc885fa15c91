#include <filesystem>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "interloc/error.hpp"
#include "interloc/fileio.hpp"
#include "interloc/pipeline.hpp"

using namespace interloc;
using namespace interloc::pipeline;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_config() {
  PipelineConfig c;
  c.train_episodes = 12;
  c.val_episodes = 4;
  c.test_episodes = 8;
  c.falm_train_episodes = 6;
  c.falm.d_model = 16;
  c.falm.heads = 2;
  c.falm.t_q_layers = c.falm.t_v_layers = c.falm.t_m_layers = 1;
  c.falm.ffn_hidden = 32;
  c.falm.head_hidden = 16;
  c.host.d_model = 16;
  c.host.heads = 2;
  c.host.layers = 1;
  c.host.ffn_hidden = 32;
  c.host.head_hidden = 16;
  c.falm_train.epochs = 1;
  c.host_train.epochs = 1;
  c.finetune.epochs = 1;
  c.multi_turn.n_max = 2;
  c.multi_turn.samplings = 2;
  c.noisy.correct_turns = 2;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("interloc_pipe_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = fileio::read_all(e.path());
  return out;
}

}  // namespace

TEST_CASE("config JSON round trip") {
  auto c = tiny_config();
  c.seed = 123;
  c.failure_mode = refsample::FailureMode::Top1;
  c.finetune.lr = 3e-4;
  c.noisy.flip = false;
  const auto text = config_to_json(c);
  const auto back = config_from_json(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.seed == 123);
  CHECK(back.failure_mode == refsample::FailureMode::Top1);
  CHECK(back.finetune.lr == 3e-4);
  CHECK(config_hash(back) == config_hash(c));
}

TEST_CASE("config defaults and partial files") {
  const PipelineConfig d;
  CHECK(d.failure_mode == refsample::FailureMode::Recall5);
  CHECK(d.test_episodes == 200);
  const auto c = config_from_json(R"({"seed": 9, "splits": {"test_episodes": 50}})");
  CHECK(c.seed == 9);
  CHECK(c.test_episodes == 50);
  CHECK(c.train_episodes == d.train_episodes);
  CHECK(config_from_json("{}").seed == d.seed);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(config_from_json(R"({"sed": 1})"), ConfigError);
  try {
    config_from_json(R"({"falm": {"d_modle": 8}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("falm.d_modle") != std::string::npos);
  }
  CHECK_THROWS_AS(config_from_json(R"({"seed": "seven"})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"refs": {"failure_mode": "top3"}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json("[1, 2"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"falm": {"d_model": 10, "heads": 4}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"splits": {"falm_train_episodes": 0}})"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("config hash tracks content") {
  const auto a = tiny_config();
  auto b = a;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.seed = 8;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.falm.lambda_t = 0.25;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("resolved component seeds are distinct and follow the master seed") {
  auto c = tiny_config();
  const auto r = c.resolved();
  const std::set<std::uint64_t> seeds{r.falm.seed, r.host.seed, r.falm_train.seed, r.host_train.seed,
                                      r.finetune.seed, r.multi_turn.seed, r.noisy.seed, r.qnf.seed};
  CHECK(seeds.size() == 8);
  CHECK(r.world.seed == c.seed);
  CHECK(r.falm.input_dim == c.world.embed_dim);
  c.seed = 8;
  CHECK(c.resolved().falm.seed != r.falm.seed);
  CHECK(tiny_config().resolved().falm.seed == r.falm.seed);
}

TEST_CASE("splits are disjoint and deterministic") {
  const auto c = tiny_config();
  const auto emb = make_embedder(c);
  const auto train = generate_split(c, emb, "train");
  const auto test = generate_split(c, emb, "test");
  CHECK(train.size() == 12);
  CHECK(test.size() == 8);
  CHECK(generate_split(c, emb, "test") == test);
  CHECK(train.front().features != test.front().features);
  CHECK_THROWS_AS(generate_split(c, emb, "dev"), UsageError);
}

TEST_CASE("stages require their inputs and a matching config") {
  TempDir tmp("stages");
  const Layout io{tmp.path};
  const auto c = tiny_config();
  CHECK_THROWS_AS(stage_train_host(c, io), DataError);
  stage_gen(c, io);
  CHECK(fs::exists(io.config()));
  CHECK(fs::exists(io.world("train") / "episodes.jsonl"));
  CHECK(config_to_json(read_workdir_config(io)) == config_to_json(c));
  auto other = c;
  other.seed = 99;
  CHECK_THROWS_AS(stage_train_host(other, io), DataError);
  CHECK_THROWS_AS(stage_make_feedback(c, io), DataError);  // references not sampled yet
  CHECK_THROWS_AS(eval_mode_from_string("best"), UsageError);
}

TEST_CASE("end-to-end run is byte-identical across runs") {
  TempDir a("run_a"), b("run_b");
  const auto c = tiny_config();
  run_all(c, Layout{a.path});
  run_all(c, Layout{b.path});
  const auto sa = snapshot(a.path), sb = snapshot(b.path);
  CHECK(sa.size() == sb.size());
  for (const auto& [name, bytes] : sa) {
    INFO(name);
    REQUIRE(sb.count(name) == 1);
    CHECK(bytes == sb.at(name));
  }
  for (const char* f : {"config.json", "models/host.ckpt", "models/falm.ckpt", "models/finetuned.ckpt",
                        "eval/feedback_table.csv", "eval/multi_turn.csv", "eval/noisy.csv",
                        "report.md", "report.json"})
    CHECK(sa.count(f) == 1);
  const auto& report = sa.at("report.md");
  CHECK(report.find(config_hash(c)) != std::string::npos);
  CHECK(report.find("Host (query only)") != std::string::npos);

  // Bypass evaluation writes separate outputs.
  stage_eval(c, Layout{a.path}, EvalMode::Feedback, true);
  CHECK(fs::exists(a.path / "eval" / "feedback_bypass.json"));

  // Checkpoints rebuild identical models.
  const auto ck = checkpoint::load(Layout{a.path}.finetuned_ckpt());
  localizer::EmAdapter adapter;
  const auto host = load_host(ck, &adapter);
  const auto again = host_checkpoint(c, host, adapter);
  CHECK(checkpoint::encode(again) == checkpoint::encode(ck));
}
