#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "palm/common.hpp"
#include "palm/metrics.hpp"
#include "palm/scoring.hpp"
#include "palm/trainer.hpp"

namespace palm::io {

using Bytes = std::vector<std::uint8_t>;

// EmbeddingFile, little-endian:
//   "PALM" | u32 version = 1 | u64 count | u32 dim | u8 labeled
//   count x ( dim x f32 [ i32 label ] )
inline constexpr std::uint32_t kEmbeddingVersion = 1;

Bytes encode_embeddings(const EmbeddingBatch& batch);
EmbeddingBatch decode_embeddings(std::span<const std::uint8_t> bytes);
void write_embeddings(const std::filesystem::path& path, const EmbeddingBatch& batch);
EmbeddingBatch read_embeddings(const std::filesystem::path& path);

/// `v1,...,vD[,label]` per line; blank lines and lines starting with '#' are skipped.
EmbeddingBatch read_csv_dataset(const std::filesystem::path& path, bool labeled);

// ModelFile, little-endian:
//   "PALMMODL" | u32 version = 1 | sections, each: 4-byte tag | u64 length | payload
//   CONF config JSON, ENCD encoder/projector tensors, PROT prototype bank,
//   OPTM optimizer state, then optional GFIT Gaussian fit and KNNR kNN reference embeddings.
// Tensors are u32 rows | u32 cols | rows*cols f64, row-major.
inline constexpr std::uint32_t kModelVersion = 1;

struct ModelFile {
  Checkpoint checkpoint;
  std::optional<GaussianFit> fit;
  std::optional<Matrix> knn_reference;
};

Bytes encode_model(const ModelFile& model);
ModelFile decode_model(std::span<const std::uint8_t> bytes);
void write_model(const std::filesystem::path& path, const ModelFile& model);
ModelFile read_model(const std::filesystem::path& path);

/// `index,score` with a header line.
void write_scores(const std::filesystem::path& path, std::span<const double> scores);
/// Throws InvalidInput naming the offending line.
std::vector<double> read_scores(const std::filesystem::path& path);

/// `bin_left,bin_right,p_id,p_ood` rows, then `# overlap=<value>`.
std::string format_histogram(const OverlapHistogram& hist);

Bytes read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace palm::io
