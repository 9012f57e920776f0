#pragma once

#include "riskseq/common.hpp"
#include "riskseq/datamodel.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace riskseq {

inline constexpr double kDefaultChunkSeconds = 30.0;
inline constexpr double kDefaultWindowSeconds = 1800.0;
inline constexpr int kReferenceEmbeddingDim = 1280;
inline constexpr int kReferenceSampleRate = 16000;

struct SegmentSequence {
    std::vector<std::vector<float>> segments;
    Mask mask;
    double chunk_s = kDefaultChunkSeconds;
    double window_s = kDefaultWindowSeconds;
    int sample_rate = kReferenceSampleRate;

    std::size_t length() const { return segments.size(); }
};

/// Fixed-window segmentation: truncates at window_s, zero-pads the tail to
/// exactly window_s / chunk_s chunks. A final partial chunk is zero-extended
/// and kept as real audio.
SegmentSequence segment_waveform(const Waveform& wave, double chunk_s = kDefaultChunkSeconds,
                                 double window_s = kDefaultWindowSeconds);

SegmentSequence segment_audio(const CallRecording& rec, double chunk_s = kDefaultChunkSeconds,
                              double window_s = kDefaultWindowSeconds);

struct SegmentEmbeddingSequence {
    MatrixF embeddings;  // L x d, rows with mask == false are zero
    Mask mask;
    std::string extractor_id;

    Eigen::Index length() const { return embeddings.rows(); }
    Eigen::Index dim() const { return embeddings.cols(); }
};

class ExtractionError : public Error {
public:
    ExtractionError(std::size_t chunk_index, const std::string& what)
        : Error("chunk " + std::to_string(chunk_index) + ": " + what), chunk_index_(chunk_index) {}

    std::size_t chunk_index() const { return chunk_index_; }

private:
    std::size_t chunk_index_;
};

using Chunk = std::span<const float>;

class Extractor {
public:
    virtual ~Extractor() = default;

    virtual std::string id() const = 0;
    virtual int dim() const = 0;
    virtual int sample_rate() const = 0;

    /// Row i embeds chunks[i]. Chunks are embedded independently of each other.
    /// Implementations report failures as ExtractionError with the batch index.
    virtual MatrixF extract(const std::vector<Chunk>& chunks) const = 0;
};

/// Deterministic stand-in for the speech model: a seeded random projection of
/// per-chunk statistics (mean plus cosine/sine correlations against the
/// synthetic tone basis). Linear in the audio, so all-zero chunks map to zero.
class MockExtractor final : public Extractor {
public:
    static constexpr int kStatistics = 1 + kToneFeatures;
    static constexpr double kGain = 50.0;

    MockExtractor(int dim, std::uint64_t seed, int sample_rate);

    std::string id() const override;
    int dim() const override { return static_cast<int>(projection_.rows()); }
    int sample_rate() const override { return sample_rate_; }
    MatrixF extract(const std::vector<Chunk>& chunks) const override;

    Vector statistics(Chunk chunk) const;
    Vector extract_one(Chunk chunk) const;

    const Matrix& projection() const { return projection_; }

private:
    struct ToneTables {
        std::vector<double> cos;  // kSyntheticTones x n, tone-major
        std::vector<double> sin;
    };
    const ToneTables& tables(std::size_t n) const;

    Matrix projection_;
    std::uint64_t seed_;
    int sample_rate_;
    mutable std::mutex mutex_;
    mutable std::map<std::size_t, std::shared_ptr<const ToneTables>> tables_;
};

/// Adapter around the external pre-trained speech encoder (final layer,
/// mean-pooled over frames). The model runs in a helper process that reads
/// raw float32 chunks and writes one 1280-float row per chunk:
///
///   <command> <weights> <input.f32> <n_chunks> <samples_per_chunk> <output.f32>
///
/// RISKSEQ_WHISPER_WEIGHTS names the weights location and RISKSEQ_WHISPER_CMD
/// overrides the helper command.
class ReferenceExtractor final : public Extractor {
public:
    struct Options {
        std::string command;
        std::string weights;
    };

    static Options from_environment();

    explicit ReferenceExtractor(Options options);

    std::string id() const override { return "whisper-large-v2-final-meanpool"; }
    int dim() const override { return kReferenceEmbeddingDim; }
    int sample_rate() const override { return kReferenceSampleRate; }
    MatrixF extract(const std::vector<Chunk>& chunks) const override;

    const Options& options() const { return options_; }

private:
    Options options_;
};

std::unique_ptr<Extractor> make_extractor(const std::string& name, int mock_dim, std::uint64_t mock_seed,
                                          int mock_sample_rate);

/// Masked chunks are skipped and yield zero rows.
SegmentEmbeddingSequence extract_embeddings(const SegmentSequence& seq, const Extractor& extractor);

// ---------------------------------------------------------------------------
// Embedding cache: one little-endian binary file per call plus an index.
//
//   magic "RSQEMB01" | u32 version | u32 d | u32 L | u32 len + call id |
//   u32 len + extractor id | u64 checksum | L*d float32 row-major | L mask bytes
//
// The checksum (FNV-1a 64) covers every header field before it and the payload.

inline constexpr std::uint32_t kCacheVersion = 1;

std::filesystem::path cache_file(const std::filesystem::path& dir, const std::string& id);

/// Writes to a temporary file and renames it into place.
void cache_write(const std::string& id, const SegmentEmbeddingSequence& emb, const std::filesystem::path& dir);

SegmentEmbeddingSequence cache_read(const std::string& id, const std::filesystem::path& dir,
                                    const std::optional<std::string>& expected_extractor_id = std::nullopt);

struct CacheIndexEntry {
    std::string id;
    std::string file;
    std::string extractor_id;
    int dim = 0;
    int length = 0;
};

void write_cache_index(const std::filesystem::path& dir, const std::vector<CacheIndexEntry>& entries);
std::vector<CacheIndexEntry> read_cache_index(const std::filesystem::path& dir);

}  // namespace riskseq
