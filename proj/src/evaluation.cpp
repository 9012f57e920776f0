#include "riskseq/evaluation.hpp"

#include "riskseq/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

namespace riskseq {

namespace {

ConfusionMetrics metrics_from(const Confusion& c) {
    ConfusionMetrics m;
    m.counts = c;
    const std::size_t predicted = c.tp + c.fp;
    const std::size_t actual = c.tp + c.fn;
    if (predicted == 0 || actual == 0) m.zero_division = true;
    m.precision = predicted ? static_cast<double>(c.tp) / static_cast<double>(predicted) : 0.0;
    m.recall = actual ? static_cast<double>(c.tp) / static_cast<double>(actual) : 0.0;
    m.f1 = f1_score(m.precision, m.recall);
    return m;
}

Interval summarize(std::vector<double> values) {
    Interval out;
    if (values.empty()) return out;
    out.mean = 100.0 * std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    out.ci_low = 100.0 * percentile(values, 0.025);
    out.ci_high = 100.0 * percentile(values, 0.975);
    return out;
}

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, sep)) out.push_back(field);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

const Interval& column(const MetricResult& r, Metric metric) {
    switch (metric) {
        case Metric::precision: return r.precision;
        case Metric::recall: return r.recall;
        case Metric::f1: return r.f1;
    }
    return r.f1;
}

constexpr const char* kCsvHeader =
    "model,status,precision_mean,precision_low,precision_high,recall_mean,recall_low,recall_high,"
    "f1_mean,f1_low,f1_high,best";

}  // namespace

ConfusionMetrics confusion_metrics(const std::vector<bool>& preds, const std::vector<bool>& labels) {
    if (preds.size() != labels.size()) throw ValidationError("predictions and labels differ in length");
    if (preds.empty()) throw ValidationError("confusion_metrics on empty input");
    Confusion c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] && labels[i]) ++c.tp;
        else if (preds[i]) ++c.fp;
        else if (labels[i]) ++c.fn;
        else ++c.tn;
    }
    return metrics_from(c);
}

double f1_score(double precision, double recall) {
    const double sum = precision + recall;
    return sum > 0.0 ? 2.0 * precision * recall / sum : 0.0;
}

double percentile(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw ValidationError("percentile of empty data");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

MetricResult bootstrap_metrics(const std::vector<bool>& preds, const std::vector<bool>& labels, int n,
                               std::uint64_t seed) {
    if (n < 100) throw ValidationError("bootstrap needs at least 100 resamples");
    MetricResult result;
    result.point = confusion_metrics(preds, labels);
    result.n_bootstrap = n;
    result.seed = seed;

    const std::size_t m = preds.size();
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    std::vector<double> precision, recall, f1;
    precision.reserve(static_cast<std::size_t>(n));
    recall.reserve(static_cast<std::size_t>(n));
    f1.reserve(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) {
        Confusion c;
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = pick(rng);
            if (preds[j] && labels[j]) ++c.tp;
            else if (preds[j]) ++c.fp;
            else if (labels[j]) ++c.fn;
            else ++c.tn;
        }
        if (c.tp + c.fn == 0) {
            ++result.skipped;
            continue;
        }
        const auto metrics = metrics_from(c);
        precision.push_back(metrics.precision);
        recall.push_back(metrics.recall);
        f1.push_back(metrics.f1);
    }
    result.skip_warning = result.skipped * 10 > n;
    result.precision = summarize(std::move(precision));
    result.recall = summarize(std::move(recall));
    result.f1 = summarize(std::move(f1));
    return result;
}

Interval bootstrap_ci(Metric metric, const std::vector<bool>& preds, const std::vector<bool>& labels, int n,
                      std::uint64_t seed) {
    return column(bootstrap_metrics(preds, labels, n, seed), metric);
}

// ---------------------------------------------------------------------------

std::string_view missing_policy_name(MissingScalePolicy policy) {
    return policy == MissingScalePolicy::exclude ? "exclude" : "low";
}

MissingScalePolicy parse_missing_policy(std::string_view name) {
    if (name == "exclude") return MissingScalePolicy::exclude;
    if (name == "low") return MissingScalePolicy::low;
    throw ValidationError("unknown missing-scale policy '" + std::string(name) + "' (valid: exclude, low)");
}

ManualPredictions manual_predictions(const std::vector<ManifestEntry>& entries, MissingScalePolicy policy) {
    ManualPredictions out;
    for (const auto& e : entries) {
        const auto aggregate = score_scale(e.scale);
        if (!aggregate) {
            ++out.excluded;
            if (policy == MissingScalePolicy::exclude) continue;
            out.preds.push_back(false);
        } else {
            out.preds.push_back(classify_manual_risk(aggregate) == ManualRisk::High);
        }
        out.labels.push_back(e.label.followup_suicidal_act);
    }
    if (out.excluded == entries.size()) {
        throw ValidationError("manual baseline: every scale assessment is missing");
    }
    if (policy == MissingScalePolicy::low) out.excluded = 0;
    return out;
}

MetricResult manual_baseline(const std::vector<ManifestEntry>& entries, MissingScalePolicy policy, int n_bootstrap,
                             std::uint64_t seed) {
    const auto manual = manual_predictions(entries, policy);
    return bootstrap_metrics(manual.preds, manual.labels, n_bootstrap, seed);
}

// ---------------------------------------------------------------------------

std::string format_interval(const Interval& interval) {
    return fixed2(interval.mean) + " [" + fixed2(interval.ci_low) + ", " + fixed2(interval.ci_high) + "]";
}

ComparisonReport compare_report(std::vector<ReportRow> rows, std::vector<std::pair<std::string, std::string>> metadata) {
    if (rows.empty()) throw ValidationError("compare_report needs at least one row");
    ComparisonReport report;
    report.rows = std::move(rows);
    report.metadata = std::move(metadata);
    return report;
}

std::vector<std::size_t> best_rows(const ComparisonReport& report, Metric metric) {
    // Compared at display precision.
    double best_value = -1.0;
    for (const auto& row : report.rows) {
        if (!row.result) continue;
        const double v = std::stod(fixed2(column(*row.result, metric).mean));
        if (v > best_value) best_value = v;
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& row = report.rows[i];
        if (row.result && std::stod(fixed2(column(*row.result, metric).mean)) == best_value) out.push_back(i);
    }
    return out;
}

std::string report_to_csv(const ComparisonReport& report) {
    std::ostringstream out;
    for (const auto& [key, value] : report.metadata) out << "# " << key << '=' << value << '\n';
    out << kCsvHeader << '\n';
    const auto best_p = best_rows(report, Metric::precision);
    const auto best_r = best_rows(report, Metric::recall);
    const auto best_f = best_rows(report, Metric::f1);
    auto contains = [](const std::vector<std::size_t>& v, std::size_t i) {
        return std::find(v.begin(), v.end(), i) != v.end();
    };
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& row = report.rows[i];
        if (row.model.find(',') != std::string::npos) throw ValidationError("model names must not contain commas");
        out << row.model << ',';
        if (!row.result) {
            out << "not implemented,,,,,,,,,,\n";
            continue;
        }
        out << "ok";
        for (Metric m : {Metric::precision, Metric::recall, Metric::f1}) {
            const auto& iv = column(*row.result, m);
            out << ',' << fixed2(iv.mean) << ',' << fixed2(iv.ci_low) << ',' << fixed2(iv.ci_high);
        }
        std::string best;
        if (contains(best_p, i)) best += "precision";
        if (contains(best_r, i)) best += std::string(best.empty() ? "" : ";") + "recall";
        if (contains(best_f, i)) best += std::string(best.empty() ? "" : ";") + "f1";
        out << ',' << best << '\n';
    }
    return out.str();
}

ComparisonReport parse_report_csv(const std::string& text) {
    ComparisonReport report;
    std::istringstream in(text);
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (!header_seen && line.rfind("# ", 0) == 0) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw FormatError("malformed report metadata line: " + line);
            report.metadata.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
            continue;
        }
        if (!header_seen) {
            if (line != kCsvHeader) throw FormatError("unexpected report header: " + line);
            header_seen = true;
            continue;
        }
        if (line.empty()) continue;
        const auto fields = split(line, ',');
        if (fields.size() != 12) throw FormatError("report row must have 12 fields: " + line);
        ReportRow row;
        row.model = fields[0];
        if (fields[1] == "ok") {
            MetricResult r;
            auto parse = [&](std::size_t at) {
                return Interval{std::stod(fields[at]), std::stod(fields[at + 1]), std::stod(fields[at + 2])};
            };
            r.precision = parse(2);
            r.recall = parse(5);
            r.f1 = parse(8);
            row.result = r;
        } else if (fields[1] != "not implemented") {
            throw FormatError("unknown row status: " + fields[1]);
        }
        report.rows.push_back(std::move(row));
    }
    if (!header_seen) throw FormatError("report has no header");
    return report;
}

std::string report_to_text(const ComparisonReport& report) {
    std::ostringstream out;
    for (const auto& [key, value] : report.metadata) out << key << ": " << value << '\n';
    if (!report.metadata.empty()) out << '\n';
    const auto best_p = best_rows(report, Metric::precision);
    const auto best_r = best_rows(report, Metric::recall);
    const auto best_f = best_rows(report, Metric::f1);
    auto cell = [](const Interval& iv, bool bold) {
        const std::string s = format_interval(iv);
        return bold ? "**" + s + "**" : s;
    };
    auto contains = [](const std::vector<std::size_t>& v, std::size_t i) {
        return std::find(v.begin(), v.end(), i) != v.end();
    };
    char line[256];
    std::snprintf(line, sizeof(line), "%-36s %-28s %-28s %-28s\n", "Models", "Precision(%)", "Recall(%)",
                  "F1-score(%)");
    out << line;
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        const auto& row = report.rows[i];
        if (!row.result) {
            std::snprintf(line, sizeof(line), "%-36s %s\n", row.model.c_str(), "not implemented");
        } else {
            std::snprintf(line, sizeof(line), "%-36s %-28s %-28s %-28s\n", row.model.c_str(),
                          cell(row.result->precision, contains(best_p, i)).c_str(),
                          cell(row.result->recall, contains(best_r, i)).c_str(),
                          cell(row.result->f1, contains(best_f, i)).c_str());
        }
        out << line;
    }
    return out.str();
}

// ---------------------------------------------------------------------------

std::string_view salience_source_name(SalienceSource source) {
    return source == SalienceSource::encoder_attention ? "encoder_attention" : "attention_pool";
}

Salience segment_salience(const Model& model, const Matrix& x, const Mask& mask, bool all_layers) {
    if (!model.has_attention_pool() && !model.has_encoder_attention()) {
        throw UnsupportedError("model '" + std::string(model_kind_name(model.kind())) +
                               "' exposes no attention weights; interpretability needs an encoder or attention pooling");
    }
    ModelTrace trace;
    model.forward(x, mask, trace);
    Salience out;
    if (model.has_attention_pool()) {
        out.source = SalienceSource::attention_pool;
        out.weights = trace.pool.weights;
        return out;
    }
    out.source = SalienceSource::encoder_attention;
    const auto& layers = trace.encoder.layers;
    const std::size_t first = all_layers ? 0 : layers.size() - 1;
    const auto length = static_cast<Eigen::Index>(mask.size());
    out.weights = Vector::Zero(length);
    const auto queries = static_cast<Scalar>(count_valid(mask));
    std::size_t maps = 0;
    for (std::size_t l = first; l < layers.size(); ++l) {
        for (const Matrix& p : layers[l].attn.probs) {
            for (Eigen::Index q = 0; q < length; ++q) {
                if (mask[static_cast<std::size_t>(q)]) out.weights += p.row(q).transpose() / queries;
            }
            ++maps;
        }
    }
    out.weights /= static_cast<Scalar>(maps);
    return out;
}

std::vector<int> top_k_indices(const Vector& weights, const Mask& mask, int k) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) idx.push_back(static_cast<int>(i));
    }
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return weights[a] > weights[b]; });
    if (k >= 0 && static_cast<std::size_t>(k) < idx.size()) idx.resize(static_cast<std::size_t>(k));
    return idx;
}

InterpretabilityReport top_k_segments(const Model& model, const std::string& call_id,
                                      const SegmentEmbeddingSequence& emb, int k, double chunk_s, bool all_layers) {
    if (k <= 0) throw ValidationError("k must be positive");
    const auto salience = segment_salience(model, emb.embeddings.cast<Scalar>(), emb.mask, all_layers);
    InterpretabilityReport report;
    report.call_id = call_id;
    report.source = salience.source;
    for (int index : top_k_indices(salience.weights, emb.mask, k)) {
        report.top.push_back(SegmentSalience{index, index * chunk_s, (index + 1) * chunk_s, salience.weights[index]});
    }
    return report;
}

std::string interpretability_to_text(const InterpretabilityReport& report) {
    std::ostringstream out;
    out << "call: " << report.call_id << '\n';
    out << "source: " << salience_source_name(report.source) << '\n';
    if (report.source == SalienceSource::encoder_attention) {
        out << "salience: attention received per segment, final encoder layer, averaged over heads and unmasked "
               "queries\n";
    } else {
        out << "salience: attention pooling weights\n";
    }
    out << "rank,segment,start_s,end_s,weight\n";
    char line[128];
    for (std::size_t r = 0; r < report.top.size(); ++r) {
        const auto& s = report.top[r];
        std::snprintf(line, sizeof(line), "%zu,%d,%.1f,%.1f,%.6f\n", r + 1, s.index, s.start_s, s.end_s, s.weight);
        out << line;
    }
    return out.str();
}

}  // namespace riskseq
