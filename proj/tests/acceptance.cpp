// Acceptance suite: one PASS/FAIL line per criterion.

#include "riskseq/config.hpp"
#include "riskseq/encoder.hpp"
#include "riskseq/evaluation.hpp"
#include "riskseq/features.hpp"
#include "riskseq/training.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace riskseq;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

std::string fmt(const char* format, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), format, a, b, c);
    return buf;
}

// ---------------------------------------------------------------------------
// Desk-scale synthetic data, streamed call by call.

struct Corpus {
    std::vector<Example> examples;
    std::vector<ManifestEntry> entries;
    std::vector<std::optional<PlantedRun>> planted;
    DatasetSplit split;

    std::vector<Example> subset(const std::vector<std::string>& ids) const {
        std::map<std::string, const Example*> by_id;
        for (const auto& e : examples) by_id[e.id] = &e;
        std::vector<Example> out;
        for (const auto& id : ids) out.push_back(*by_id.at(id));
        return out;
    }
};

constexpr int kDeskRate = 128;
constexpr int kDeskDim = 32;

SynthConfig desk_synth(int n_calls, double signal) {
    SynthConfig s;
    s.n_calls = n_calls;
    s.sample_rate = kDeskRate;
    s.signal_strength = signal;
    return s;
}

Corpus build_corpus(const SynthConfig& synth, std::uint64_t seed) {
    Corpus c;
    const MockExtractor extractor(kDeskDim, derive_seed(seed, "extract"), synth.sample_rate);
    std::vector<LabeledId> ids;
    for (int i = 0; i < synth.n_calls; ++i) {
        const CallRecording rec = synthesize_call(synth, derive_seed(seed, "synth"), i);
        const auto emb = extract_embeddings(segment_waveform(rec.waveform, synth.chunk_s, synth.window_s), extractor);
        c.examples.push_back(make_example(rec.id, emb, Target{rec.label.followup_suicidal_act, score_scale(rec.scale)}));
        c.entries.push_back(ManifestEntry{rec.id, "", rec.duration_s(), rec.scale, rec.label});
        c.planted.push_back(rec.planted);
        ids.push_back({rec.id, rec.label.followup_suicidal_act});
    }
    c.split = split_dataset(ids, derive_seed(seed, "split"));
    return c;
}

ModelConfig desk_model(ModelKind kind) {
    ModelConfig m;
    m.kind = kind;
    m.input_dim = kDeskDim;
    m.encoder.input_dim = kDeskDim;
    m.encoder.d_model = 16;
    m.encoder.n_heads = 2;
    m.encoder.n_layers = 1;
    m.encoder.d_ff = 32;
    m.hidden = 16;
    m.attention_dim = 16;
    return m;
}

TrainConfig desk_train(std::uint64_t seed, int epochs = 30) {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = 16;
    t.learning_rate = 1e-3;
    t.seed = seed;
    return t;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
    Outcome o;
    const double rows[3][3] = {{61.42, 78.06, 68.75}, {62.75, 79.35, 70.08}, {61.11, 85.16, 71.15}};
    for (const auto& r : rows) {
        const double f = f1_score(r[0], r[1]);
        o.require(std::abs(f - r[2]) <= 0.01, fmt("F1(%.2f, %.2f) = %.4f", r[0], r[1], f));
        o.detail += (o.detail.empty() ? "" : ", ") + fmt("%.3f", f);
    }
    // Same formula through confusion counts: 100 positives, recall 78/100, precision 78/127.
    std::vector<bool> preds, labels;
    for (int i = 0; i < 100; ++i) {
        labels.push_back(true);
        preds.push_back(i < 78);
    }
    for (int i = 0; i < 49; ++i) {
        labels.push_back(false);
        preds.push_back(true);
    }
    const auto m = confusion_metrics(preds, labels);
    o.require(std::abs(m.f1 - f1_score(m.precision, m.recall)) < 1e-12, "confusion F1 differs from harmonic mean");
    return o;
}

Outcome criterion2() {
    Outcome o;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> seconds(1.0, 120 * 60.0);
    int checked = 0;
    for (int i = 0; i < 200; ++i) {
        const double s = i == 0 ? 1.0 : i == 1 ? 120 * 60.0 : seconds(rng);
        Waveform w;
        w.sample_rate = kDeskRate;
        w.samples.assign(static_cast<std::size_t>(std::llround(s * kDeskRate)), 0.01f);
        const auto seq = segment_waveform(w);
        const auto valid = count_valid(seq.mask);
        const std::size_t chunk = 30 * kDeskRate;
        const auto expected = std::min<std::size_t>(60, (w.samples.size() + chunk - 1) / chunk);
        bool prefix = true;
        for (std::size_t l = 0; l < seq.length(); ++l) prefix &= seq.mask[l] == (l < valid);
        o.require(seq.length() == 60 && prefix && valid == expected,
                  fmt("duration %.1f s gave %.0f valid of %.0f", s, static_cast<double>(valid),
                      static_cast<double>(seq.length())));
        ++checked;
    }
    const std::string helper = std::string("python3 ") + RISKSEQ_TESTS_DIR + "/data/fake_whisper.py";
    try {
        ReferenceExtractor ex({helper, "stub"});
        Waveform w;
        w.sample_rate = kReferenceSampleRate;
        w.samples.assign(95 * kReferenceSampleRate, 0.02f);
        const auto emb = extract_embeddings(segment_waveform(w), ex);
        o.require(emb.dim() == 1280 && emb.length() == 60 && count_valid(emb.mask) == 4,
                  "reference path did not give 60 x 1280");
    } catch (const std::exception& e) {
        o.require(false, std::string("reference path failed: ") + e.what());
    }
    o.detail = o.pass ? std::to_string(checked) + " durations, reference helper protocol 60x1280" : o.detail;
    return o;
}

Outcome criterion3() {
    Outcome o;
    const Vector p0 = positional_encoding(0, 16);
    for (int i = 0; i < 16; ++i) o.require(p0[i] == (i % 2 == 0 ? 0.0 : 1.0), "p_0 pattern");
    for (int t = 0; t < 200; ++t) {
        o.require(std::abs(positional_encoding(t, 16).squaredNorm() - 8.0) < 1e-9, "||p_t||^2 != d/2");
    }

    Rng rng(3);
    EncoderConfig ec;
    ec.input_dim = 8;
    ec.d_model = 8;
    ec.n_heads = 2;
    ec.n_layers = 2;
    ec.d_ff = 16;
    Encoder enc(ec, rng);
    const Mask mask = oracle::prefix_mask(10, 6);
    const auto out = enc.forward(oracle::random_matrix(10, 8, 4), mask);
    for (const auto& layer : out.attn) {
        for (const Matrix& p : layer) {
            o.require((p.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-5, "attention row sum");
            o.require(p.rightCols(4).isZero(), "weight on masked key");
        }
    }

    const auto zero = LstmParams::zeros("lstm", 5, 4);
    o.require(lstm_forward(oracle::random_matrix(7, 5, 5), Mask(7, true), zero).isZero(), "zero LSTM closed form");
    const auto s = lstm_step(Vector::Ones(5), Vector::Zero(4), Vector::Zero(4), zero);
    o.require((s.f.array() == 0.5).all() && (s.o.array() == 0.5).all() && s.c.isZero(), "zero LSTM gates");

    Vector z(4);
    z << 0.3, -1.2, 2.5, 0.0;
    o.require((softmax(Vector((z.array() + 50.0).matrix())) - softmax(z)).cwiseAbs().maxCoeff() < 1e-12,
              "softmax shift invariance");

    Prediction pred;
    pred.y_r = 0.5;
    pred.y_s = Vector::Constant(4, 0.25);
    pred.z = Vector::Zero(2);
    o.require(std::abs(hybrid_loss_sample(pred, {true, 1}, {1.0, 0.0}).value - std::log(2.0)) < 1e-12, "ln 2 case");
    pred.y_r = 0.8;
    o.require(std::abs(hybrid_loss_sample(pred, {true, 1}, {1.0, 0.0}).value + std::log(0.8)) < 1e-12,
              "alpha=1 beta=0 is BCE");
    pred.y_r = 1.0;
    pred.y_s = Vector::Unit(4, 2);
    o.require(hybrid_loss_sample(pred, {true, 2}, {0.5, 0.5}).value < 1e-6, "perfect prediction");
    if (o.pass) o.detail = "positional encoding, attention rows and masks, zero LSTM, softmax shift, loss reductions";
    return o;
}

Outcome criterion4() {
    Outcome o;
    auto cfg = oracle::small_config(ModelKind::proposed, 16, 8);
    Model model(cfg, 4);
    const Matrix x = oracle::random_matrix(4, 16, 44);
    const auto check = oracle::check_model_gradients(model, x, {true, true, true, false}, {true, 9}, {0.5, 0.5});
    o.require(check.max_rel_error < 1e-3, "worst " + check.worst);
    o.detail = fmt("max relative error %.3g over %.0f entries", check.max_rel_error,
                   static_cast<double>(check.checked)) + (o.pass ? "" : "; " + o.detail);
    return o;
}

Outcome criterion5() {
    Outcome o;
    const Matrix x = oracle::random_matrix(12, 16, 5);
    const Mask mask = oracle::prefix_mask(12, 7);
    double worst = 0;
    for (ModelKind kind : all_model_kinds()) {
        Model m(oracle::small_config(kind), 5);
        const auto a = m.forward(x, mask);
        Matrix tampered = x;
        tampered.bottomRows(5) = oracle::random_matrix(5, 16, 55, 100.0);
        const auto b = m.forward(tampered, mask);
        worst = std::max({worst, std::abs(a.y_r - b.y_r), (a.y_s - b.y_s).cwiseAbs().maxCoeff()});
    }
    o.require(worst < 1e-6, fmt("masked content moved outputs by %.3g", worst));

    const Matrix h = oracle::random_matrix(7, 6, 6);
    Matrix padded = Matrix::Zero(20, 6);
    padded.topRows(7) = h;
    padded.bottomRows(13) = oracle::random_matrix(13, 6, 66);
    const double pool_diff =
        (average_pool(h, Mask(7, true)) - average_pool(padded, oracle::prefix_mask(20, 7))).cwiseAbs().maxCoeff();
    o.require(pool_diff < 1e-12, fmt("appending padding moved the pool by %.3g", pool_diff));
    o.detail = fmt("max output change %.3g, pool change %.3g", worst, pool_diff) + (o.pass ? "" : "; " + o.detail);
    return o;
}

Outcome criterion6() {
    Outcome o;
    EncoderConfig ec;
    ec.input_dim = 16;
    ec.d_model = 16;
    ec.n_heads = 2;
    ec.n_layers = 2;
    ec.d_ff = 32;
    std::mt19937_64 shuffle(6);
    double worst_off = 0, least_on = 1e9;
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix x = oracle::random_matrix(20, 16, 600 + static_cast<std::uint64_t>(trial));
        std::vector<int> perm(20);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), shuffle);
        Matrix px(20, 16);
        for (int i = 0; i < 20; ++i) px.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
        const Mask all(20, true);
        for (bool pe : {false, true}) {
            ec.positional_encoding = pe;
            Rng rng(static_cast<std::uint64_t>(trial));
            Encoder enc(ec, rng);
            const double d = (average_pool(enc.forward(x, all).states, all) -
                              average_pool(enc.forward(px, all).states, all)).cwiseAbs().maxCoeff();
            if (pe) least_on = std::min(least_on, d);
            else worst_off = std::max(worst_off, d);
        }
    }
    o.require(worst_off <= 1e-6, fmt("without positions: deviation %.3g", worst_off));
    o.require(least_on > 1e-3, fmt("with positions: deviation only %.3g", least_on));
    o.detail = fmt("off %.3g, on >= %.3g", worst_off, least_on) + (o.pass ? "" : "; " + o.detail);
    return o;
}

struct LearnedModel {
    Model model;
    TrainLog log;
};

Outcome criterion7(const Corpus& signal, LearnedModel& learned) {
    Outcome o;
    const std::uint64_t seed = 7;
    auto result = train(Model(desk_model(ModelKind::proposed), derive_seed(seed, "model-init")),
                        signal.subset(signal.split.train), signal.subset(signal.split.validation), desk_train(seed));
    double best = 0;
    int first_hit = 0;
    for (const auto& e : result.log.epochs) {
        best = std::max(best, e.val_f1);
        if (!first_hit && e.val_f1 >= 0.95) first_hit = e.epoch;
    }
    o.require(best >= 0.95, fmt("best validation F1 %.3f", best));
    const auto test = signal.subset(signal.split.test);
    const double test_f1 = evaluate_examples(result.model, test, 0.5).f1;
    learned = {result.model, result.log};

    const Corpus noise = build_corpus(desk_synth(200, 0.0), 8);
    const auto noise_result = train(Model(desk_model(ModelKind::proposed), derive_seed(8, "model-init")),
                                    noise.subset(noise.split.train), noise.subset(noise.split.validation),
                                    desk_train(8));
    const auto noise_test = noise.subset(noise.split.test);
    std::vector<bool> labels;
    for (const auto& e : noise_test) labels.push_back(e.target.risk);
    const auto preds = predict_labels(noise_result.model, noise_test, 0.5);
    const double p = oracle::permutation_p_value_f1(preds, labels, 2000, 9);
    o.require(p > 0.05, fmt("zero-signal permutation p = %.4f", p));
    o.detail = fmt("val F1 %.3f (first >= 0.95 at epoch %.0f), test F1 %.3f", best, first_hit, test_f1) +
               fmt("; zero-signal test F1 %.3f, permutation p = %.3f", oracle::f1_of(preds, labels), p) +
               (o.pass ? "" : "; " + o.detail);
    return o;
}

Outcome criterion8() {
    Outcome o;
    std::vector<bool> labels;
    for (int i = 0; i < 200; ++i) labels.push_back(i % 2 == 0);
    const auto perfect = bootstrap_metrics(labels, labels, 1000, 1);
    for (const Interval* iv : {&perfect.precision, &perfect.recall, &perfect.f1}) {
        o.require(iv->mean == 100.0 && iv->ci_low == 100.0 && iv->ci_high == 100.0, "zero-variance CI");
    }

    auto with_accuracy = [](std::size_t m, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::bernoulli_distribution correct(0.75);
        std::vector<bool> l, p;
        for (std::size_t i = 0; i < m; ++i) {
            l.push_back(i % 2 == 0);
            p.push_back(correct(rng) ? l.back() : !l.back());
        }
        return std::pair{p, l};
    };
    double ratio = 0;
    const int reps = 10;
    for (int r = 0; r < reps; ++r) {
        const auto [p1, l1] = with_accuracy(100, 100 + static_cast<std::uint64_t>(r));
        const auto [p4, l4] = with_accuracy(400, 400 + static_cast<std::uint64_t>(r));
        const auto a = bootstrap_ci(Metric::f1, p1, l1, 1000, static_cast<std::uint64_t>(r));
        const auto b = bootstrap_ci(Metric::f1, p4, l4, 1000, static_cast<std::uint64_t>(r));
        ratio += (a.ci_high - a.ci_low) / (b.ci_high - b.ci_low) / reps;
    }
    o.require(ratio >= 1.5 && ratio <= 2.5, fmt("width ratio %.3f", ratio));

    const auto [p, l] = with_accuracy(150, 3);
    const auto x = bootstrap_metrics(p, l, 1000, 42);
    const auto y = bootstrap_metrics(p, l, 1000, 42);
    o.require(x.f1.mean == y.f1.mean && x.f1.ci_low == y.f1.ci_low && x.f1.ci_high == y.f1.ci_high &&
                  x.precision.ci_low == y.precision.ci_low && x.recall.ci_high == y.recall.ci_high,
              "seeded runs differ");
    o.detail = fmt("width ratio 100->400: %.3f", ratio) + (o.pass ? "" : "; " + o.detail);
    return o;
}

Outcome criterion9(const Model& model) {
    Outcome o;
    // Fresh calls past the training corpus; same seed, planted direction and extractor.
    SynthConfig synth = desk_synth(600, 6.0);
    const MockExtractor extractor(kDeskDim, derive_seed(7, "extract"), synth.sample_rate);
    std::vector<std::vector<double>> weights;  // salience over unmasked segments
    std::vector<std::set<int>> planted;
    for (int i = 200; static_cast<int>(weights.size()) < 100 && i < synth.n_calls; ++i) {
        const CallRecording rec = synthesize_call(synth, derive_seed(7, "synth"), i);
        if (!rec.planted) continue;
        const auto emb = extract_embeddings(segment_waveform(rec.waveform), extractor);
        const auto s = segment_salience(model, emb.embeddings.cast<Scalar>(), emb.mask);
        std::vector<double> w;
        for (std::size_t l = 0; l < emb.mask.size(); ++l) {
            if (emb.mask[l]) w.push_back(s.weights[static_cast<Eigen::Index>(l)]);
        }
        weights.push_back(std::move(w));
        std::set<int> run;
        for (int l = rec.planted->first; l < rec.planted->last; ++l) run.insert(l);
        planted.push_back(std::move(run));
    }
    auto overlap_of = [&](const std::vector<std::vector<double>>& ws) {
        double total = 0;
        for (std::size_t c = 0; c < ws.size(); ++c) {
            const Vector v = Eigen::Map<const Vector>(ws[c].data(), static_cast<Eigen::Index>(ws[c].size()));
            int hits = 0;
            for (int idx : top_k_indices(v, Mask(ws[c].size(), true), 10)) hits += planted[c].count(idx);
            total += hits;
        }
        return total / static_cast<double>(ws.size());
    };
    const double observed = overlap_of(weights);
    std::mt19937_64 rng(99);
    const int n_perm = 1000;
    int at_least = 0;
    double chance = 0;
    auto shuffled = weights;
    for (int b = 0; b < n_perm; ++b) {
        for (auto& w : shuffled) std::shuffle(w.begin(), w.end(), rng);
        const double v = overlap_of(shuffled);
        chance += v / n_perm;
        at_least += v >= observed;
    }
    const double p = (1.0 + at_least) / (1.0 + n_perm);
    o.require(weights.size() == 100, "fewer than 100 planted calls");
    o.require(p < 0.01, fmt("overlap %.3f vs chance %.3f, p = %.4f", observed, chance, p));
    o.detail = fmt("mean top-10 overlap %.3f vs chance %.3f, p = %.4f", observed, chance, p) +
               (o.pass ? "" : "; " + o.detail);
    return o;
}

Outcome criterion10(const Corpus& corpus) {
    Outcome o;
    const auto train_set = corpus.subset(corpus.split.train);
    const auto val_set = corpus.subset(corpus.split.validation);
    const auto test_set = corpus.subset(corpus.split.test);
    std::vector<bool> labels;
    for (const auto& e : test_set) labels.push_back(e.target.risk);

    std::vector<ManifestEntry> test_entries;
    for (const auto& id : corpus.split.test) {
        for (const auto& e : corpus.entries) {
            if (e.id == id) test_entries.push_back(e);
        }
    }
    const std::uint64_t boot = derive_seed(10, "bootstrap");
    const auto manual = manual_predictions(test_entries, MissingScalePolicy::exclude);
    std::vector<ReportRow> rows = {{"Manual scale rating", bootstrap_metrics(manual.preds, manual.labels, 1000, boot)}};
    std::ostringstream f1s;
    for (ModelKind kind : all_model_kinds()) {
        try {
            if (kind == ModelKind::proposed) rows.push_back({"Mamba", std::nullopt});
            auto result = train(Model(desk_model(kind), derive_seed(10, "model-init")), train_set, val_set,
                                desk_train(10, 10));
            const auto preds = predict_labels(result.model, test_set, 0.5);
            rows.push_back({std::string(model_display_name(kind)), bootstrap_metrics(preds, labels, 1000, boot)});
            f1s << (f1s.tellp() ? ", " : "") << model_kind_name(kind) << ' '
                << fmt("%.1f", rows.back().result->f1.mean);
        } catch (const std::exception& e) {
            o.require(false, std::string(model_kind_name(kind)) + ": " + e.what());
        }
    }
    try {
        parse_model_kind("mamba");
        o.require(false, "mamba parsed");
    } catch (const NotImplementedError&) {
    }
    const auto report = compare_report(rows, {{"seed", "10"}, {"bootstrap", "percentile"}, {"n_bootstrap", "1000"}});
    const std::string csv = report_to_csv(report);
    o.require(report.rows.size() == 10, "expected 10 rows");
    o.require(csv.find("Mamba,not implemented") != std::string::npos, "no mamba row");
    o.require(report_to_csv(parse_report_csv(csv)) == csv, "csv round trip");
    std::cout << report_to_text(report);
    o.detail = std::to_string(report.rows.size()) + " rows; F1 " + f1s.str() + (o.pass ? "" : "; " + o.detail);
    return o;
}

}  // namespace

int main() {
    int failures = 0;
    auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !o.pass;
        std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
                    o.detail.c_str(), secs);
        std::fflush(stdout);
    };

    report(1, "metric consistency", criterion1);
    report(2, "segmentation and reference shape", criterion2);
    report(3, "equation-level units", criterion3);
    report(4, "gradient check", criterion4);
    report(5, "padding invariance", criterion5);
    report(6, "permutation property", criterion6);

    std::optional<Corpus> corpus;
    LearnedModel learned;
    bool learned_ok = false;
    report(7, "desk-scale learning", [&] {
        corpus = build_corpus(desk_synth(200, 6.0), 7);
        auto o = criterion7(*corpus, learned);
        learned_ok = true;
        return o;
    });
    report(8, "bootstrap", criterion8);
    report(9, "interpretability signal", [&] {
        if (!learned_ok) throw Error("no trained model from criterion 7");
        return criterion9(learned.model);
    });
    report(10, "harness interchangeability", [&] {
        if (!corpus) corpus = build_corpus(desk_synth(200, 6.0), 7);
        return criterion10(*corpus);
    });
    std::printf("%d of 10 criteria passed\n", 10 - failures);
    return failures == 0 ? 0 : 1;
}
