#pragma once

#include "riskseq/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace riskseq {

// ---------------------------------------------------------------------------
// Suicide risk assessment scale: 12 elements scored from 31 items.

inline constexpr int kScaleElements = 12;
inline constexpr int kScaleItems = 31;
inline constexpr int kMaxUnansweredItems = 5;
inline constexpr int kMaxAggregate = 16;
inline constexpr int kHighRiskThreshold = 8;
inline constexpr int kScoreClasses = kMaxAggregate + 1;

struct ScaleElement {
    std::string_view name;
    int items;
    std::array<int, 3> allowed;  // padded with the first value when fewer than 3
};

const std::array<ScaleElement, kScaleElements>& scale_elements();

bool element_score_allowed(int element, int score);

struct ScaleAssessment {
    std::array<int, kScaleElements> element_scores{};
    int answered_items = kScaleItems;

    int unanswered_items() const { return kScaleItems - answered_items; }
};

/// Aggregate score in [0, 16], or nullopt ("missing") when more than five items
/// were left unanswered. Throws ValidationError naming the offending element.
std::optional<int> score_scale(const ScaleAssessment& assessment);

enum class ManualRisk { Low, High };

/// Low for 0..7, High for 8..16. Throws ValidationError("unratable") on a
/// missing aggregate and on values outside [0, 16].
ManualRisk classify_manual_risk(std::optional<int> aggregate);

// ---------------------------------------------------------------------------

struct RiskLabel {
    bool followup_suicidal_act = false;
};

struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;

    double duration_s() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

/// Contiguous run of planted-signal segments [first, last) in a synthetic call.
struct PlantedRun {
    int first = 0;
    int last = 0;

    int length() const { return last - first; }
    bool contains(int segment) const { return segment >= first && segment < last; }
};

struct CallRecording {
    std::string id;
    Waveform waveform;
    ScaleAssessment scale;
    RiskLabel label;
    std::optional<PlantedRun> planted;  // synthetic ground truth only

    double duration_s() const { return waveform.duration_s(); }
};

void validate_recording(const CallRecording& rec);

// ---------------------------------------------------------------------------

struct LabeledId {
    std::string id;
    bool label = false;
};

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
    std::uint64_t seed = 0;
};

/// 4:1 train/test split, then 4:1 train/validation split of the remainder,
/// each stratified by label with largest-remainder allocation.
DatasetSplit split_dataset(const std::vector<LabeledId>& ids, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic corpus.
//
// Background audio is a sum of fixed tones (see synthetic_tone_hz) whose
// cosine/sine amplitudes are redrawn per 30 s chunk, plus white noise.
// Positive calls carry a mean shift of the tone amplitudes along a fixed
// random direction in a contiguous run of chunks.

inline constexpr int kSyntheticTones = 16;
inline constexpr int kToneFeatures = 2 * kSyntheticTones;

/// Integer frequencies keep every tone periodic over a 30 s chunk.
constexpr double synthetic_tone_hz(int tone) { return 2.0 * (tone + 1); }

struct SynthConfig {
    int n_calls = 200;
    double prevalence = 0.5;
    double min_minutes = 9.0;
    double max_minutes = 120.0;
    double median_minutes = 50.0;
    double duration_sigma = 0.5;  // log-normal shape before clipping
    int sample_rate = 16000;
    double signal_strength = 6.0;   // shift in units of tone_std
    double planted_fraction = 0.2;  // fraction of real in-window chunks planted
    double scale_agreement = 0.7;   // probability the scale band follows the label
    double missing_rate = 0.05;
    double tone_std = 0.02;
    double noise_std = 0.02;
    double chunk_s = 30.0;
    double window_s = 1800.0;
};

void validate_synth_config(const SynthConfig& cfg);

/// Unit vector in tone-feature space (cos amplitudes then sin amplitudes)
/// along which the planted signal is shifted.
Vector planted_direction(std::uint64_t seed);

/// Labels of the corpus in id order: exactly round(n * prevalence) positives.
std::vector<bool> synthetic_labels(const SynthConfig& cfg, std::uint64_t seed);

std::string synthetic_call_id(int index);

/// One call of the corpus; pure function of (cfg, seed, index).
CallRecording synthesize_call(const SynthConfig& cfg, std::uint64_t seed, int index);

std::vector<CallRecording> generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Corpus manifest CSV.

struct ManifestEntry {
    std::string id;
    std::string audio_path;
    double duration_s = 0.0;
    ScaleAssessment scale;
    RiskLabel label;
};

std::string manifest_header();
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Mono 16-bit PCM WAV.

void write_wav(const std::filesystem::path& path, const Waveform& wave);

/// Reads at most max_seconds of audio (all of it when max_seconds <= 0).
Waveform read_wav(const std::filesystem::path& path, double max_seconds = 0.0);

/// Linear-interpolation resampling.
Waveform resample(const Waveform& wave, int target_rate);

}  // namespace riskseq
