#include <filesystem>
#include <fstream>
#include <functional>
#include <unistd.h>
#include <random>
#include <sstream>

#include "doctest.h"
#include "interloc/checkpoint.hpp"
#include "interloc/error.hpp"
#include "interloc/feedbackgen.hpp"
#include "interloc/fileio.hpp"
#include "interloc/labelgen.hpp"
#include "interloc/refsample.hpp"
#include "interloc/serialize.hpp"
#include "interloc/synthworld.hpp"

using namespace interloc;
using namespace interloc::serialize;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("interloc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct World {
  synthworld::WorldConfig cfg;
  synthworld::Embedder emb;
  std::vector<EpisodeRecord> episodes;
  std::vector<refsample::QueryReferences> refs;
  std::vector<FeedbackSample> feedback;
  std::vector<labelgen::AlignmentLabels> labels;
};

const World& world() {
  static const World w = [] {
    World w;
    w.cfg.episodes = 5;
    w.emb = synthworld::Embedder::from_config(w.cfg);
    w.episodes = synthworld::generate_world(w.cfg, w.emb);
    const auto beta = refsample::fit_beta(refsample::gt_durations(w.episodes));
    w.refs = refsample::sample_references(w.episodes, beta, {}, {});
    const auto bank = feedbackgen::FeedbackTemplateBank::standard();
    w.feedback = feedbackgen::build_qnf_dataset(w.episodes, w.refs, feedbackgen::TemplateBackend(bank), bank,
                                                w.emb, {})
                     .samples;
    const EpisodeIndex idx(w.episodes);
    for (const auto& f : w.feedback)
      w.labels.push_back(labelgen::make_labels(f, idx.query(f.episode_id, f.query_id),
                                               idx.episode(f.episode_id), w.emb));
    return w;
  }();
  return w;
}

const Header kHeader{"", "0123456789abcdef", 42};

std::string slurp(const fs::path& p) { return fileio::read_all(p); }

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("world round trip") {
  TempDir tmp;
  const auto& w = world();
  write_world(tmp.path, w.episodes, kHeader);
  Header h;
  const auto back = read_world(tmp.path, w.emb, &h);
  CHECK(back == w.episodes);
  CHECK(h.kind == "episodes");
  CHECK(h.config_hash == kHeader.config_hash);
  CHECK(h.seed == 42);
  CHECK(read_header(tmp.path / "episodes.jsonl") == h);
  // Rewriting yields identical bytes.
  TempDir again;
  write_world(again.path, back, kHeader);
  CHECK(slurp(tmp.path / "episodes.jsonl") == slurp(again.path / "episodes.jsonl"));
  CHECK(slurp(tmp.path / "features.bin") == slurp(again.path / "features.bin"));
}

TEST_CASE("references, feedback, labels and predictions round trip") {
  TempDir tmp;
  const auto& w = world();
  write_references(tmp.path / "refs.jsonl", w.refs, kHeader);
  const auto refs = read_references(tmp.path / "refs.jsonl");
  REQUIRE(refs.size() == w.refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    CHECK(refs[i].episode_id == w.refs[i].episode_id);
    CHECK(refs[i].query_id == w.refs[i].query_id);
    CHECK(refs[i].errors == w.refs[i].errors);
    REQUIRE(refs[i].spans.size() == w.refs[i].spans.size());
    for (std::size_t k = 0; k < refs[i].spans.size(); ++k) {
      CHECK(refs[i].spans[k].kind == w.refs[i].spans[k].kind);
      CHECK(refs[i].spans[k].span == w.refs[i].spans[k].span);
    }
  }

  write_feedback(tmp.path / "fb.jsonl", w.feedback, kHeader);
  CHECK(read_feedback(tmp.path / "fb.jsonl", w.emb) == w.feedback);

  write_labels(tmp.path / "labels.jsonl", w.labels, kHeader);
  CHECK(read_labels(tmp.path / "labels.jsonl") == w.labels);

  const std::vector<PredictionRecord> preds{{"q1", "", {{{1.5, 4.25}, 0.875}, {{0, 2}, 0.5}}},
                                            {"q2", "it happens later", {{{3, 9}, 0.1}}}};
  write_predictions(tmp.path / "preds.jsonl", preds, kHeader);
  const auto pb = read_predictions(tmp.path / "preds.jsonl");
  REQUIRE(pb.size() == 2);
  CHECK(pb[0].query_id == "q1");
  CHECK(pb[0].spans == preds[0].spans);
  CHECK(pb[1].feedback == "it happens later");
  CHECK(pb[1].spans == preds[1].spans);
}

TEST_CASE("features: checksum and truncation") {
  TempDir tmp;
  Matrix m(3, 4);
  for (std::size_t i = 0; i < 12; ++i) m.data()[i] = 0.25f * static_cast<float>(i) - 1.0f;
  const auto bin = tmp.path / "f.bin";
  write_features(bin, m);
  CHECK(read_features(bin) == m);
  CHECK(fs::file_size(bin) == 12 * sizeof(float));
  CHECK(fs::exists(sidecar_path(bin)));

  auto bytes = slurp(bin);
  spit(bin, bytes.substr(0, bytes.size() - 4));
  const auto msg = error_of([&] { read_features(bin); });
  CHECK(msg.find("ChecksumMismatch") == 0);
  CHECK(msg.find(bin.string()) != std::string::npos);
  CHECK_THROWS_AS(read_features(bin), ChecksumMismatch);

  bytes[5] ^= 0x10;
  spit(bin, bytes);
  CHECK_THROWS_AS(read_features(bin), ChecksumMismatch);
}

TEST_CASE("truncated world features name the file") {
  TempDir tmp;
  const auto& w = world();
  write_world(tmp.path, w.episodes, kHeader);
  const auto bin = tmp.path / "features.bin";
  const auto bytes = slurp(bin);
  spit(bin, bytes.substr(0, bytes.size() / 2));
  const auto msg = error_of([&] { read_world(tmp.path, w.emb); });
  CHECK(msg.find("ChecksumMismatch") == 0);
  CHECK(msg.find("features.bin") != std::string::npos);
}

TEST_CASE("invalid records report the record index") {
  TempDir tmp;
  const auto& w = world();
  std::vector<PredictionRecord> preds{{"q0", "", {{{0, 1}, 0.5}}},
                                      {"q1", "", {{{0, 1}, 0.5}}},
                                      {"q2", "", {{{5, 3}, 0.5}}}};
  write_predictions(tmp.path / "p.jsonl", preds, kHeader);
  const auto msg = error_of([&] { read_predictions(tmp.path / "p.jsonl"); });
  CHECK(msg.find("DataError") == 0);
  CHECK(msg.find("record 2") != std::string::npos);
  CHECK(msg.find("p.jsonl") != std::string::npos);

  // A reference span with start >= end.
  write_references(tmp.path / "r.jsonl", w.refs, kHeader);
  auto text = slurp(tmp.path / "r.jsonl");
  std::istringstream lines(text);
  std::string line, out;
  int n = 0;
  while (std::getline(lines, line)) {
    if (n == 2) {
      const auto pos = line.find("\"span\":[");
      REQUIRE(pos != std::string::npos);
      const auto close = line.find(']', pos);
      line = line.substr(0, pos) + "\"span\":[7.0,7.0" + line.substr(close);
    }
    out += line + "\n";
    ++n;
  }
  spit(tmp.path / "r.jsonl", out);
  const auto rmsg = error_of([&] { read_references(tmp.path / "r.jsonl"); });
  CHECK(rmsg.find("DataError") == 0);
  CHECK(rmsg.find("record 1") != std::string::npos);
}

TEST_CASE("schema and header errors") {
  TempDir tmp;
  write_predictions(tmp.path / "p.jsonl", {{"q", "", {{{0, 1}, 0.5}}}}, kHeader);
  auto text = slurp(tmp.path / "p.jsonl");
  const auto pos = text.find("\"schema_version\":1");
  REQUIRE(pos != std::string::npos);
  auto bumped = text;
  bumped.replace(pos, 18, "\"schema_version\":2");
  spit(tmp.path / "p.jsonl", bumped);
  CHECK_THROWS_AS(read_predictions(tmp.path / "p.jsonl"), SchemaVersionMismatch);

  spit(tmp.path / "p.jsonl", text);
  CHECK_THROWS_AS(read_labels(tmp.path / "p.jsonl"), DataError);  // wrong kind
  spit(tmp.path / "p.jsonl", text.substr(text.find('\n') + 1));
  CHECK_THROWS_AS(read_predictions(tmp.path / "p.jsonl"), DataError);  // no header
  spit(tmp.path / "p.jsonl", "{not json\n");
  CHECK_THROWS_AS(read_predictions(tmp.path / "p.jsonl"), DataError);
  CHECK_THROWS_AS(read_predictions(tmp.path / "missing.jsonl"), DataError);
}

TEST_CASE("checkpoint round trip and errors") {
  TempDir tmp;
  nn::ParameterStore<float> store;
  Rng rng(3);
  nn::Linear<float> lin(store, "lin", 3, 2, rng);
  checkpoint::Checkpoint ck;
  ck.metadata = R"({"kind":"test"})";
  checkpoint::append(ck, store);
  const auto path = tmp.path / "m.ckpt";
  checkpoint::save(path, ck);
  const auto back = checkpoint::load(path);
  CHECK(back == ck);

  nn::ParameterStore<float> other;
  Rng rng2(4);
  nn::Linear<float> lin2(other, "lin", 3, 2, rng2);
  CHECK(other.params()[0].value() != store.params()[0].value());
  checkpoint::restore(back, other);
  for (std::size_t i = 0; i < store.params().size(); ++i)
    CHECK(other.params()[i].value() == store.params()[i].value());

  nn::ParameterStore<float> wrong;
  nn::Linear<float> lin3(wrong, "lin", 4, 2, rng2);
  CHECK_THROWS_AS(checkpoint::restore(back, wrong), DataError);
  nn::ParameterStore<float> missing;
  nn::Linear<float> lin4(missing, "other", 3, 2, rng2);
  CHECK_THROWS_AS(checkpoint::restore(back, missing), DataError);

  const auto bytes = checkpoint::encode(ck);
  CHECK_THROWS_AS(checkpoint::decode(bytes.substr(0, bytes.size() - 3)), DataError);
  CHECK_THROWS_AS(checkpoint::decode(bytes + "x"), DataError);
  CHECK_THROWS_AS(checkpoint::decode("XXXX" + bytes.substr(4)), DataError);
  auto v2 = bytes;
  v2[4] = 2;
  CHECK_THROWS_AS(checkpoint::decode(v2), SchemaVersionMismatch);
  CHECK_THROWS_AS(checkpoint::load(tmp.path / "absent.ckpt"), DataError);
}

TEST_CASE("crc32 and atomic writes") {
  CHECK(fileio::crc32_hex("123456789") == "cbf43926");
  CHECK(fileio::crc32_hex("") == "00000000");
  TempDir tmp;
  const auto p = tmp.path / "sub" / "x.txt";
  fileio::write_atomic(p, "hello");
  CHECK(fileio::read_all(p) == "hello");
  fileio::write_atomic(p, "bye");
  CHECK(fileio::read_all(p) == "bye");
  for (const auto& e : fs::directory_iterator(p.parent_path())) CHECK(e.path().filename() == "x.txt");
}
