#include "interloc/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "json.hpp"

#include "interloc/error.hpp"
#include "interloc/feedbackgen.hpp"
#include "interloc/fileio.hpp"

namespace interloc::serialize {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "feature files are written in host order, which must be little-endian");

json header_json(const Header& h) {
  return {{"schema_version", kSchemaVersion},
          {"type", "header"},
          {"kind", h.kind},
          {"config_hash", h.config_hash},
          {"seed", h.seed}};
}

std::string record_line(json j) {
  j["schema_version"] = kSchemaVersion;
  return j.dump() + "\n";
}

/// Streams the records of a JSONL file, validating the header and schema versions.
class JsonlReader {
 public:
  JsonlReader(const fs::path& path, std::string_view kind) : path_(path) {
    std::istringstream in(fileio::read_all(path));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw DataError(where(n) + "malformed JSON: " + e.what());
      }
      if (!j.is_object() || !j.contains("schema_version"))
        throw DataError(where(n) + "missing schema_version");
      if (j["schema_version"] != kSchemaVersion)
        throw SchemaVersionMismatch(where(n) + "schema_version " +
                                    j["schema_version"].dump() + ", expected " +
                                    std::to_string(kSchemaVersion));
      lines_.push_back({n, std::move(j)});
    }
    if (lines_.empty() || lines_.front().second.value("type", "") != "header")
      throw DataError(path.string() + ": missing header line");
    const auto& h = lines_.front().second;
    header_.kind = h.value("kind", "");
    header_.config_hash = h.value("config_hash", "");
    header_.seed = h.value("seed", std::uint64_t{0});
    if (header_.kind != kind)
      throw DataError(path.string() + ": holds '" + header_.kind + "' records, expected '" +
                      std::string(kind) + "'");
  }

  const Header& header() const { return header_; }
  std::size_t size() const { return lines_.size() - 1; }
  const json& record(std::size_t i) const { return lines_[i + 1].second; }
  /// Message prefix naming the file and the 0-based record index.
  std::string where_record(std::size_t i) const {
    return path_.string() + ": record " + std::to_string(i) + " (line " +
           std::to_string(lines_[i + 1].first) + "): ";
  }

  /// Runs fn(json, index), turning JSON access errors into DataError with the location.
  template <typename Fn>
  void each(Fn&& fn) const {
    for (std::size_t i = 0; i < size(); ++i) {
      try {
        fn(record(i), i);
      } catch (const json::exception& e) {
        throw DataError(where_record(i) + e.what());
      } catch (const Error& e) {
        if (e.category() != ErrorCategory::Data) throw;
        throw DataError(where_record(i) + e.what());
      }
    }
  }

 private:
  std::string where(std::size_t line) const {
    return path_.string() + ": line " + std::to_string(line) + ": ";
  }

  fs::path path_;
  Header header_;
  std::vector<std::pair<std::size_t, json>> lines_;
};

json span_json(const Span& s) { return json::array({s.start, s.end}); }

Span span_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw DataError("span must be [start, end]");
  Span s{j[0].get<double>(), j[1].get<double>()};
  require_valid(s);
  return s;
}

void write_lines(const fs::path& path, const Header& header, const std::vector<json>& records) {
  std::string out = header_json(header).dump() + "\n";
  for (const auto& r : records) out += record_line(r);
  fileio::write_atomic(path, out);
}

template <typename T>
std::vector<T> vector_from(const json& j, const char* key) {
  return j.at(key).get<std::vector<T>>();
}

}  // namespace

fs::path sidecar_path(const fs::path& bin) {
  auto p = bin;
  p += ".json";
  return p;
}

void write_features(const fs::path& bin, const Matrix& m) {
  std::string bytes(reinterpret_cast<const char*>(m.data().data()), m.data().size() * sizeof(float));
  json side{{"rows", m.rows()},
            {"cols", m.cols()},
            {"dtype", "float32-le"},
            {"checksum", "crc32:" + fileio::crc32_hex(bytes)}};
  fileio::write_atomic(bin, bytes);
  fileio::write_atomic(sidecar_path(bin), side.dump(2) + "\n");
}

Matrix read_features(const fs::path& bin) {
  json side;
  try {
    side = json::parse(fileio::read_all(sidecar_path(bin)));
  } catch (const json::exception& e) {
    throw DataError(sidecar_path(bin).string() + ": " + e.what());
  }
  const auto rows = side.at("rows").get<std::size_t>();
  const auto cols = side.at("cols").get<std::size_t>();
  if (side.value("dtype", "") != "float32-le")
    throw DataError(sidecar_path(bin).string() + ": unsupported dtype");
  const auto bytes = fileio::read_all(bin);
  if (bytes.size() != rows * cols * sizeof(float))
    throw ChecksumMismatch(bin.string() + ": " + std::to_string(bytes.size()) + " bytes, sidecar expects " +
                           std::to_string(rows * cols * sizeof(float)));
  if (side.value("checksum", "") != "crc32:" + fileio::crc32_hex(bytes))
    throw ChecksumMismatch(bin.string() + ": CRC-32 does not match the sidecar");
  Matrix m(rows, cols);
  std::memcpy(m.data().data(), bytes.data(), bytes.size());
  return m;
}

void write_world(const fs::path& dir, const std::vector<EpisodeRecord>& episodes,
                 const Header& header) {
  std::size_t cols = episodes.empty() ? 0 : episodes.front().features.cols();
  std::size_t rows = 0;
  for (const auto& ep : episodes) rows += ep.features.rows();
  Matrix all(rows, cols);
  std::vector<json> records;
  std::size_t offset = 0;
  for (const auto& ep : episodes) {
    if (ep.features.cols() != cols) throw ShapeMismatch("episodes disagree on feature width");
    std::copy(ep.features.data().begin(), ep.features.data().end(),
              all.data().begin() + static_cast<long>(offset * cols));
    json queries = json::array();
    for (const auto& q : ep.queries)
      queries.push_back({{"id", q.id},
                         {"terms", q.terms},
                         {"gt_span", span_json(q.gt_span)},
                         {"kind", to_string(q.kind)},
                         {"answer_token", q.answer_token}});
    records.push_back({{"type", "episode"},
                       {"id", ep.id},
                       {"clip_count", ep.clip_count},
                       {"feature_offset", offset},
                       {"clip_events", ep.clip_events},
                       {"queries", queries}});
    offset += ep.features.rows();
  }
  Header h = header;
  h.kind = "episodes";
  fs::create_directories(dir);
  write_features(dir / "features.bin", all);
  write_lines(dir / "episodes.jsonl", h, records);
}

std::vector<EpisodeRecord> read_world(const fs::path& dir, const synthworld::Embedder& emb,
                                      Header* header) {
  JsonlReader reader(dir / "episodes.jsonl", "episodes");
  if (header) *header = reader.header();
  const Matrix all = read_features(dir / "features.bin");
  if (all.cols() != emb.dim())
    throw DataError((dir / "features.bin").string() + ": width " + std::to_string(all.cols()) +
                    " does not match the embedder (" + std::to_string(emb.dim()) + ")");
  std::vector<EpisodeRecord> out;
  reader.each([&](const json& j, std::size_t) {
    EpisodeRecord ep;
    ep.id = j.at("id").get<std::string>();
    ep.clip_count = j.at("clip_count").get<std::size_t>();
    if (ep.clip_count == 0) throw DataError("clip_count must be positive");
    const auto offset = j.at("feature_offset").get<std::size_t>();
    if (offset + ep.clip_count > all.rows()) throw DataError("feature rows out of range");
    ep.clip_events = j.at("clip_events").get<std::vector<std::vector<std::string>>>();
    if (ep.clip_events.size() != ep.clip_count)
      throw DataError("clip_events has " + std::to_string(ep.clip_events.size()) +
                      " entries for " + std::to_string(ep.clip_count) + " clips");
    for (const auto& clip : ep.clip_events)
      for (const auto& t : clip) emb.vocabulary().index(t);
    ep.features = Matrix(ep.clip_count, all.cols());
    std::copy_n(all.data().begin() + static_cast<long>(offset * all.cols()),
                ep.clip_count * all.cols(), ep.features.data().begin());
    for (float v : ep.features.data())
      if (!std::isfinite(v)) throw DataError("non-finite feature value");
    for (const auto& qj : j.at("queries")) {
      QueryRecord q;
      q.id = qj.at("id").get<std::string>();
      q.terms = qj.at("terms").get<std::vector<std::string>>();
      if (q.terms.empty()) throw DataError("query " + q.id + " has no terms");
      q.gt_span = span_from(qj.at("gt_span"));
      require_valid(q.gt_span, ep.clip_count);
      q.kind = query_kind_from_string(qj.at("kind").get<std::string>());
      q.answer_token = qj.value("answer_token", "");
      q.embedding_tokens = synthworld::embed_terms(emb, q.terms);
      ep.queries.push_back(std::move(q));
    }
    out.push_back(std::move(ep));
  });
  return out;
}

void write_references(const fs::path& path, const std::vector<refsample::QueryReferences>& refs,
                      const Header& header) {
  std::vector<json> records;
  for (const auto& r : refs) {
    json spans = json::array();
    for (const auto& s : r.spans) spans.push_back({{"kind", to_string(s.kind)}, {"span", span_json(s.span)}});
    records.push_back({{"type", "references"},
                       {"episode_id", r.episode_id},
                       {"query_id", r.query_id},
                       {"spans", spans},
                       {"errors", r.errors}});
  }
  Header h = header;
  h.kind = "references";
  write_lines(path, h, records);
}

std::vector<refsample::QueryReferences> read_references(const fs::path& path, Header* header) {
  JsonlReader reader(path, "references");
  if (header) *header = reader.header();
  std::vector<refsample::QueryReferences> out;
  reader.each([&](const json& j, std::size_t) {
    refsample::QueryReferences r;
    r.episode_id = j.at("episode_id").get<std::string>();
    r.query_id = j.at("query_id").get<std::string>();
    for (const auto& s : j.at("spans"))
      r.spans.push_back({ref_kind_from_string(s.at("kind").get<std::string>()), span_from(s.at("span"))});
    r.errors = j.at("errors").get<std::vector<std::string>>();
    out.push_back(std::move(r));
  });
  return out;
}

void write_feedback(const fs::path& path, const std::vector<FeedbackSample>& samples,
                    const Header& header) {
  std::vector<json> records;
  for (const auto& s : samples)
    records.push_back({{"type", "feedback"},
                       {"episode_id", s.episode_id},
                       {"query_id", s.query_id},
                       {"ref_span", span_json(s.ref_span)},
                       {"ref_kind", to_string(s.ref_kind)},
                       {"text", s.text},
                       {"contains", s.clauses.contains},
                       {"not_contains", s.clauses.not_contains},
                       {"temporal", to_string(s.clauses.temporal)}});
  Header h = header;
  h.kind = "feedback";
  write_lines(path, h, records);
}

std::vector<FeedbackSample> read_feedback(const fs::path& path, const synthworld::Embedder& emb,
                                          Header* header) {
  JsonlReader reader(path, "feedback");
  if (header) *header = reader.header();
  std::vector<FeedbackSample> out;
  reader.each([&](const json& j, std::size_t) {
    FeedbackSample s;
    s.episode_id = j.at("episode_id").get<std::string>();
    s.query_id = j.at("query_id").get<std::string>();
    s.ref_span = span_from(j.at("ref_span"));
    s.ref_kind = ref_kind_from_string(j.at("ref_kind").get<std::string>());
    s.text = j.at("text").get<std::string>();
    s.clauses.contains = j.at("contains").get<std::vector<std::string>>();
    s.clauses.not_contains = j.at("not_contains").get<std::vector<std::string>>();
    s.clauses.temporal = temporal_from_string(j.at("temporal").get<std::string>());
    if (s.clauses.degenerate()) throw DataError("feedback carries no clause");
    for (const auto& c : s.clauses.contains)
      if (std::find(s.clauses.not_contains.begin(), s.clauses.not_contains.end(), c) !=
          s.clauses.not_contains.end())
        throw DataError("token '" + c + "' is both contained and excluded");
    s.embedding_tokens = feedbackgen::feedback_embedding(emb, s.clauses);
    out.push_back(std::move(s));
  });
  return out;
}

void write_labels(const fs::path& path, const std::vector<labelgen::AlignmentLabels>& labels,
                  const Header& header) {
  std::vector<json> records;
  for (const auto& l : labels)
    records.push_back({{"type", "labels"},
                       {"s_c", l.s_c},
                       {"s_k", l.s_k},
                       {"l_c", l.l_c},
                       {"l_k", l.l_k},
                       {"l_t", l.l_t},
                       {"l", l.l},
                       {"has_contains", l.has_contains},
                       {"has_not_contains", l.has_not_contains},
                       {"has_temporal", l.has_temporal}});
  Header h = header;
  h.kind = "labels";
  write_lines(path, h, records);
}

std::vector<labelgen::AlignmentLabels> read_labels(const fs::path& path, Header* header) {
  JsonlReader reader(path, "labels");
  if (header) *header = reader.header();
  std::vector<labelgen::AlignmentLabels> out;
  reader.each([&](const json& j, std::size_t) {
    labelgen::AlignmentLabels l;
    l.s_c = vector_from<double>(j, "s_c");
    l.s_k = vector_from<double>(j, "s_k");
    l.l_c = vector_from<std::uint8_t>(j, "l_c");
    l.l_k = vector_from<std::uint8_t>(j, "l_k");
    l.l_t = vector_from<std::uint8_t>(j, "l_t");
    l.l = vector_from<std::uint8_t>(j, "l");
    l.has_contains = j.at("has_contains").get<bool>();
    l.has_not_contains = j.at("has_not_contains").get<bool>();
    l.has_temporal = j.at("has_temporal").get<bool>();
    const auto m = l.l.size();
    if (m == 0 || l.s_c.size() != m || l.s_k.size() != m || l.l_c.size() != m ||
        l.l_k.size() != m || l.l_t.size() != m)
      throw DataError("label vectors have inconsistent lengths");
    for (double v : l.s_c)
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("s_c outside [0,1]");
    for (double v : l.s_k)
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("s_k outside [0,1]");
    for (const auto* bits : {&l.l_c, &l.l_k, &l.l_t, &l.l})
      for (auto b : *bits)
        if (b > 1) throw DataError("binary label outside {0,1}");
    out.push_back(std::move(l));
  });
  return out;
}

void write_predictions(const fs::path& path, const std::vector<PredictionRecord>& preds,
                       const Header& header) {
  std::vector<json> records;
  for (const auto& p : preds) {
    json spans = json::array(), scores = json::array();
    for (const auto& s : p.spans) {
      spans.push_back(span_json(s.span));
      scores.push_back(s.score);
    }
    records.push_back({{"type", "prediction"},
                       {"query_id", p.query_id},
                       {"feedback", p.feedback},
                       {"spans", spans},
                       {"scores", scores}});
  }
  Header h = header;
  h.kind = "predictions";
  write_lines(path, h, records);
}

std::vector<PredictionRecord> read_predictions(const fs::path& path, Header* header) {
  JsonlReader reader(path, "predictions");
  if (header) *header = reader.header();
  std::vector<PredictionRecord> out;
  reader.each([&](const json& j, std::size_t) {
    PredictionRecord p;
    p.query_id = j.at("query_id").get<std::string>();
    p.feedback = j.value("feedback", "");
    const auto& spans = j.at("spans");
    const auto scores = j.at("scores").get<std::vector<double>>();
    if (spans.size() != scores.size()) throw DataError("spans and scores differ in length");
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!std::isfinite(scores[i])) throw DataError("non-finite score");
      p.spans.push_back({span_from(spans[i]), scores[i]});
    }
    out.push_back(std::move(p));
  });
  return out;
}

Header read_header(const fs::path& path) {
  std::istringstream in(fileio::read_all(path));
  std::string line;
  std::getline(in, line);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  }
  if (j.value("schema_version", -1) != kSchemaVersion)
    throw SchemaVersionMismatch(path.string() + ": unsupported schema_version");
  if (j.value("type", "") != "header") throw DataError(path.string() + ": missing header line");
  return {j.value("kind", ""), j.value("config_hash", ""), j.value("seed", std::uint64_t{0})};
}

}  // namespace interloc::serialize
