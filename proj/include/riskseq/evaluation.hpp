#pragma once

#include "riskseq/baselines.hpp"
#include "riskseq/common.hpp"
#include "riskseq/datamodel.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace riskseq {

struct SegmentEmbeddingSequence;

struct Confusion {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Fractions in [0, 1]. Undefined ratios (0/0) are reported as 0 and flagged.
struct ConfusionMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool zero_division = false;
    Confusion counts;
};

ConfusionMetrics confusion_metrics(const std::vector<bool>& preds, const std::vector<bool>& labels);

/// Harmonic mean of precision and recall (any consistent unit); 0 when both are 0.
double f1_score(double precision, double recall);

enum class Metric { precision, recall, f1 };

/// Percent values.
struct Interval {
    double mean = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct MetricResult {
    Interval precision;
    Interval recall;
    Interval f1;
    ConfusionMetrics point;  // full-sample estimate, fractions
    int n_bootstrap = 0;
    std::uint64_t seed = 0;
    int skipped = 0;  // resamples without a positive label
    bool skip_warning = false;  // more than 10% skipped
};

/// Percentile bootstrap over (prediction, label) pairs: resample means and
/// 2.5/97.5 percentiles (linear interpolation) for all three metrics, drawn
/// from the same resamples. Requires n >= 100.
MetricResult bootstrap_metrics(const std::vector<bool>& preds, const std::vector<bool>& labels, int n,
                               std::uint64_t seed);

/// Single-metric view of bootstrap_metrics with the same seed.
Interval bootstrap_ci(Metric metric, const std::vector<bool>& preds, const std::vector<bool>& labels, int n,
                      std::uint64_t seed);

/// Linear-interpolation percentile of sorted data, q in [0, 1].
double percentile(const std::vector<double>& sorted, double q);

// ---------------------------------------------------------------------------

enum class MissingScalePolicy { exclude, low };

std::string_view missing_policy_name(MissingScalePolicy policy);
MissingScalePolicy parse_missing_policy(std::string_view name);

struct ManualPredictions {
    std::vector<bool> preds;
    std::vector<bool> labels;
    std::size_t excluded = 0;
};

/// classify_manual_risk(score_scale(.)) per entry; missing aggregates are
/// excluded or rated Low per policy. All-missing input is an error.
ManualPredictions manual_predictions(const std::vector<ManifestEntry>& entries, MissingScalePolicy policy);

MetricResult manual_baseline(const std::vector<ManifestEntry>& entries, MissingScalePolicy policy, int n_bootstrap,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------
// Comparison table.

struct ReportRow {
    std::string model;
    std::optional<MetricResult> result;  // nullopt renders as "not implemented"
};

struct ComparisonReport {
    std::vector<std::pair<std::string, std::string>> metadata;
    std::vector<ReportRow> rows;
};

std::string format_interval(const Interval& interval);

ComparisonReport compare_report(std::vector<ReportRow> rows,
                                std::vector<std::pair<std::string, std::string>> metadata = {});

/// Indices of rows holding the best mean in a column; all tied rows are marked.
std::vector<std::size_t> best_rows(const ComparisonReport& report, Metric metric);

std::string report_to_csv(const ComparisonReport& report);
ComparisonReport parse_report_csv(const std::string& text);
/// Plain-text table; best values per column are wrapped in ** **.
std::string report_to_text(const ComparisonReport& report);

// ---------------------------------------------------------------------------
// Interpretability.

enum class SalienceSource { encoder_attention, attention_pool };

std::string_view salience_source_name(SalienceSource source);

struct SegmentSalience {
    int index = 0;
    double start_s = 0.0;
    double end_s = 0.0;
    double weight = 0.0;
};

struct InterpretabilityReport {
    std::string call_id;
    SalienceSource source = SalienceSource::encoder_attention;
    std::vector<SegmentSalience> top;
};

struct Salience {
    Vector weights;  // nonnegative, sums to 1 over unmasked segments
    SalienceSource source;
};

/// Attention-pool models use their pooling weights. Encoder models use the
/// attention received by each key, averaged over heads and unmasked queries
/// of the final layer (all layers when all_layers). Plain recurrent models
/// raise UnsupportedError.
Salience segment_salience(const Model& model, const Matrix& x, const Mask& mask, bool all_layers = false);

InterpretabilityReport top_k_segments(const Model& model, const std::string& call_id,
                                      const SegmentEmbeddingSequence& emb, int k = 10, double chunk_s = 30.0,
                                      bool all_layers = false);

/// Top-k unmasked indices by weight, ties broken by lower index.
std::vector<int> top_k_indices(const Vector& weights, const Mask& mask, int k);

std::string interpretability_to_text(const InterpretabilityReport& report);

}  // namespace riskseq
