#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "interloc/core.hpp"
#include "interloc/labelgen.hpp"
#include "interloc/refsample.hpp"
#include "interloc/synthworld.hpp"

namespace interloc::serialize {

namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

/// First line of every JSONL artifact.
struct Header {
  std::string kind;  // "episodes", "references", "feedback", "labels", "predictions"
  std::string config_hash;
  std::uint64_t seed = 0;
  bool operator==(const Header&) const = default;
};

/// Flat little-endian float32 rows plus a JSON sidecar (rows, cols, dtype, checksum).
void write_features(const fs::path& bin, const Matrix& m);
/// Throws ChecksumMismatch naming the file when size or CRC disagree with the sidecar.
Matrix read_features(const fs::path& bin);
fs::path sidecar_path(const fs::path& bin);

/// episodes.jsonl + features.bin (+ sidecar) inside `dir`.
void write_world(const fs::path& dir, const std::vector<EpisodeRecord>& episodes,
                 const Header& header);
/// Query embeddings are rebuilt from their terms with `emb`.
std::vector<EpisodeRecord> read_world(const fs::path& dir, const synthworld::Embedder& emb,
                                      Header* header = nullptr);

void write_references(const fs::path& path, const std::vector<refsample::QueryReferences>& refs,
                      const Header& header);
std::vector<refsample::QueryReferences> read_references(const fs::path& path,
                                                        Header* header = nullptr);

void write_feedback(const fs::path& path, const std::vector<FeedbackSample>& samples,
                    const Header& header);
/// Embeddings are rebuilt from the clause sets.
std::vector<FeedbackSample> read_feedback(const fs::path& path, const synthworld::Embedder& emb,
                                          Header* header = nullptr);

void write_labels(const fs::path& path, const std::vector<labelgen::AlignmentLabels>& labels,
                  const Header& header);
std::vector<labelgen::AlignmentLabels> read_labels(const fs::path& path, Header* header = nullptr);

struct PredictionRecord {
  std::string query_id;
  std::string feedback;  // empty for query-only
  SpanPrediction spans;
};

void write_predictions(const fs::path& path, const std::vector<PredictionRecord>& preds,
                       const Header& header);
std::vector<PredictionRecord> read_predictions(const fs::path& path, Header* header = nullptr);

/// Reads only the header line.
Header read_header(const fs::path& path);

}  // namespace interloc::serialize
