#include "riskseq/datamodel.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace riskseq;

namespace {

ScaleAssessment all(int value) {
    ScaleAssessment a;
    a.element_scores.fill(value);
    return a;
}

ScaleAssessment maximum() {
    ScaleAssessment a = all(1);
    a.element_scores[0] = 4;
    a.element_scores[4] = 2;
    return a;
}

std::vector<LabeledId> make_ids(int n, int positives) {
    std::vector<LabeledId> ids;
    for (int i = 0; i < n; ++i) ids.push_back({"id" + std::to_string(i), i < positives});
    return ids;
}

SynthConfig small_synth() {
    SynthConfig cfg;
    cfg.n_calls = 20;
    cfg.sample_rate = 128;
    return cfg;
}

}  // namespace

TEST_CASE("scale element table") {
    const auto& e = scale_elements();
    int items = 0;
    int max_total = 0;
    for (const auto& el : e) {
        items += el.items;
        max_total += *std::max_element(el.allowed.begin(), el.allowed.end());
    }
    CHECK(items == kScaleItems);
    CHECK(max_total == kMaxAggregate);
    CHECK(element_score_allowed(0, 4));
    CHECK_FALSE(element_score_allowed(0, 2));
    CHECK(element_score_allowed(4, 2));
    CHECK_FALSE(element_score_allowed(4, 1));
    CHECK_FALSE(element_score_allowed(1, 2));
}

TEST_CASE("score_scale examples") {
    CHECK(score_scale(all(0)) == 0);
    CHECK(score_scale(maximum()) == 16);
    ScaleAssessment six_unanswered = maximum();
    six_unanswered.answered_items = 25;
    CHECK_FALSE(score_scale(six_unanswered).has_value());
    ScaleAssessment five_unanswered = maximum();
    five_unanswered.answered_items = 26;
    CHECK(score_scale(five_unanswered) == 16);
}

TEST_CASE("score_scale names the offending element") {
    ScaleAssessment a = all(0);
    a.element_scores[4] = 1;
    try {
        score_scale(a);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("acute_life_events") != std::string::npos);
    }
    ScaleAssessment b = all(0);
    b.answered_items = 40;
    CHECK_THROWS_AS(score_scale(b), ValidationError);
}

TEST_CASE("score_scale is monotone in every element") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        ScaleAssessment a = all(0);
        for (int e = 0; e < kScaleElements; ++e) {
            const auto& allowed = scale_elements()[e].allowed;
            a.element_scores[e] = allowed[rng() % 3];
        }
        const int base = *score_scale(a);
        for (int e = 0; e < kScaleElements; ++e) {
            for (int v : scale_elements()[e].allowed) {
                if (v < a.element_scores[e]) continue;
                ScaleAssessment b = a;
                b.element_scores[e] = v;
                CHECK(*score_scale(b) >= base);
            }
        }
    }
}

TEST_CASE("classify_manual_risk thresholds") {
    CHECK(classify_manual_risk(0) == ManualRisk::Low);
    CHECK(classify_manual_risk(7) == ManualRisk::Low);
    CHECK(classify_manual_risk(8) == ManualRisk::High);
    CHECK(classify_manual_risk(16) == ManualRisk::High);
    CHECK_THROWS_WITH_AS(classify_manual_risk(std::nullopt), doctest::Contains("unratable"), ValidationError);
    CHECK_THROWS_AS(classify_manual_risk(17), ValidationError);
    CHECK_THROWS_AS(classify_manual_risk(-1), ValidationError);
}

TEST_CASE("split_dataset sizes") {
    SUBCASE("paper-sized corpus") {
        const auto split = split_dataset(make_ids(1549, 746), 11);
        CHECK(split.test.size() == 310);
        CHECK(split.validation.size() >= 247);
        CHECK(split.validation.size() <= 248);
        CHECK(split.train.size() >= 991);
        CHECK(split.train.size() <= 992);
    }
    SUBCASE("smallest corpus") {
        const auto split = split_dataset(make_ids(5, 2), 1);
        CHECK(split.test.size() == 1);
        CHECK(split.validation.size() == 1);
        CHECK(split.train.size() == 3);
    }
    CHECK_THROWS_AS(split_dataset(make_ids(4, 2), 1), ValidationError);
    auto dup = make_ids(6, 3);
    dup[5].id = dup[0].id;
    CHECK_THROWS_AS(split_dataset(dup, 1), ValidationError);
}

TEST_CASE("split_dataset is a deterministic stratified partition") {
    const auto ids = make_ids(200, 90);
    const auto a = split_dataset(ids, 5);
    const auto b = split_dataset(ids, 5);
    CHECK(a.train == b.train);
    CHECK(a.validation == b.validation);
    CHECK(a.test == b.test);
    CHECK(split_dataset(ids, 6).test != a.test);

    std::set<std::string> all;
    for (const auto* part : {&a.train, &a.validation, &a.test}) {
        for (const auto& id : *part) CHECK(all.insert(id).second);
    }
    CHECK(all.size() == ids.size());

    auto positives = [&](const std::vector<std::string>& part) {
        int n = 0;
        for (const auto& id : part) n += std::stoi(id.substr(2)) < 90;
        return n;
    };
    CHECK(positives(a.test) == 18);  // 40 * 0.45
    CHECK(positives(a.validation) == 14);  // largest remainder of 17.6 / 14.4

    // Input order does not matter.
    auto reversed = ids;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(split_dataset(reversed, 5).test == a.test);
}

TEST_CASE("synthetic labels have exact prevalence") {
    SynthConfig cfg = small_synth();
    cfg.n_calls = 200;
    const auto labels = synthetic_labels(cfg, 7);
    CHECK(std::count(labels.begin(), labels.end(), true) == 100);
    cfg.prevalence = 0.3;
    const auto skewed = synthetic_labels(cfg, 7);
    CHECK(std::count(skewed.begin(), skewed.end(), true) == 60);
}

TEST_CASE("synth config validation") {
    SynthConfig cfg = small_synth();
    cfg.prevalence = 0.0;
    CHECK_THROWS_AS(validate_synth_config(cfg), ValidationError);
    cfg.prevalence = 1.0;
    CHECK_THROWS_AS(validate_synth_config(cfg), ValidationError);
    cfg = small_synth();
    cfg.sample_rate = 100;
    CHECK_THROWS_AS(validate_synth_config(cfg), ValidationError);
    cfg = small_synth();
    cfg.signal_strength = -1;
    CHECK_THROWS_AS(validate_synth_config(cfg), ValidationError);
}

TEST_CASE("synthetic calls: durations, planted runs, determinism") {
    const SynthConfig cfg = small_synth();
    const auto corpus = generate_synthetic_corpus(cfg, 9);
    REQUIRE(corpus.size() == 20);
    for (const auto& rec : corpus) {
        CHECK(rec.duration_s() >= 9 * 60.0 - 1e-9);
        CHECK(rec.duration_s() <= 120 * 60.0 + 1e-9);
        CHECK(rec.waveform.sample_rate == 128);
        CHECK(rec.planted.has_value() == rec.label.followup_suicidal_act);
        if (rec.planted) {
            const int real = std::min(60, static_cast<int>(std::ceil(rec.duration_s() / 30.0)));
            CHECK(rec.planted->first >= 0);
            CHECK(rec.planted->last <= real);
            CHECK(rec.planted->length() == std::max(1, static_cast<int>(std::lround(0.2 * real))));
        }
        CHECK_NOTHROW(validate_recording(rec));
    }
    const auto again = synthesize_call(cfg, 9, 3);
    CHECK(again.waveform.samples == corpus[3].waveform.samples);
    CHECK(synthesize_call(cfg, 10, 3).waveform.samples != corpus[3].waveform.samples);
    CHECK(corpus[3].id == "call_00003");
}

TEST_CASE("planted direction is a seeded unit vector") {
    const Vector u = planted_direction(4);
    CHECK(u.size() == kToneFeatures);
    CHECK(u.norm() == doctest::Approx(1.0));
    CHECK(u == planted_direction(4));
    CHECK((u - planted_direction(5)).norm() > 0.1);
}

TEST_CASE("scale follows label at full agreement") {
    SynthConfig cfg = small_synth();
    cfg.n_calls = 60;
    cfg.scale_agreement = 1.0;
    cfg.missing_rate = 0.0;
    for (const auto& rec : generate_synthetic_corpus(cfg, 2)) {
        const auto agg = score_scale(rec.scale);
        REQUIRE(agg.has_value());
        CHECK((classify_manual_risk(agg) == ManualRisk::High) == rec.label.followup_suicidal_act);
    }
    cfg.missing_rate = 1.0;
    for (const auto& rec : generate_synthetic_corpus(cfg, 2)) CHECK_FALSE(score_scale(rec.scale).has_value());
}

// Tone-amplitude statistics computed directly from the waveform by correlation.
static Vector tone_statistics(const std::vector<float>& x, std::size_t begin, std::size_t n, int rate) {
    Vector s = Vector::Zero(kToneFeatures);
    for (int k = 0; k < kSyntheticTones; ++k) {
        const double w = 2 * M_PI * synthetic_tone_hz(k) / rate;
        for (std::size_t i = 0; i < n; ++i) {
            s[k] += x[begin + i] * std::cos(w * i);
            s[kSyntheticTones + k] += x[begin + i] * std::sin(w * i);
        }
    }
    return s * (2.0 / static_cast<double>(n));
}

TEST_CASE("signal strength controls linear separability of pooled features") {
    auto pooled = [](const SynthConfig& cfg, std::uint64_t seed, std::vector<Vector>& xs, std::vector<bool>& ys) {
        const std::size_t chunk = static_cast<std::size_t>(cfg.chunk_s * cfg.sample_rate);
        for (int i = 0; i < cfg.n_calls; ++i) {
            const auto rec = synthesize_call(cfg, seed, i);
            const std::size_t chunks = std::min<std::size_t>(60, rec.waveform.samples.size() / chunk);
            Vector mean = Vector::Zero(kToneFeatures);
            for (std::size_t c = 0; c < chunks; ++c) mean += tone_statistics(rec.waveform.samples, c * chunk, chunk, cfg.sample_rate);
            xs.push_back(mean / static_cast<double>(chunks));
            ys.push_back(rec.label.followup_suicidal_act);
        }
    };
    SynthConfig cfg = small_synth();
    cfg.n_calls = 200;
    cfg.max_minutes = 30;
    cfg.min_minutes = 9;

    SUBCASE("strong signal") {
        std::vector<Vector> xs;
        std::vector<bool> ys;
        pooled(cfg, 21, xs, ys);
        const auto model = oracle::fit_logistic(xs, ys);
        CHECK(oracle::accuracy(model, xs, ys) >= 0.99);
    }
    SUBCASE("no signal") {
        cfg.signal_strength = 0.0;
        std::vector<Vector> xs;
        std::vector<bool> ys;
        pooled(cfg, 21, xs, ys);
        // Fit on half, score on the other half.
        std::vector<Vector> fit_x(xs.begin(), xs.begin() + 100), test_x(xs.begin() + 100, xs.end());
        std::vector<bool> fit_y(ys.begin(), ys.begin() + 100), test_y(ys.begin() + 100, ys.end());
        const auto model = oracle::fit_logistic(fit_x, fit_y);
        std::vector<bool> preds;
        for (const auto& x : test_x) preds.push_back(model.prob(x) >= 0.5);
        CHECK(oracle::permutation_p_value_f1(preds, test_y, 1000, 5) > 0.05);
    }
}

TEST_CASE("manifest round trip and errors") {
    const auto dir = oracle::temp_dir("manifest");
    std::vector<ManifestEntry> entries;
    entries.push_back({"a", "audio/a.wav", 600.5, maximum(), {true}});
    entries.push_back({"b", "audio/b.wav", 1234.25, all(0), {false}});
    write_manifest(dir / "m.csv", entries);
    const auto back = read_manifest(dir / "m.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "a");
    CHECK(back[0].duration_s == 600.5);
    CHECK(back[0].scale.element_scores == entries[0].scale.element_scores);
    CHECK(back[0].label.followup_suicidal_act);
    CHECK_FALSE(back[1].label.followup_suicidal_act);

    CHECK_THROWS_AS(read_manifest(dir / "missing.csv"), NotFoundError);
    {
        std::ofstream out(dir / "bad.csv");
        out << "id,wrong\n";
    }
    CHECK_THROWS_AS(read_manifest(dir / "bad.csv"), FormatError);
    {
        std::ofstream out(dir / "short.csv");
        out << manifest_header() << "\nx,y,1\n";
    }
    CHECK_THROWS_AS(read_manifest(dir / "short.csv"), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("wav round trip, truncation, resampling") {
    const auto dir = oracle::temp_dir("wav");
    Waveform w;
    w.sample_rate = 16000;
    for (int i = 0; i < 32000; ++i) w.samples.push_back(static_cast<float>(0.5 * std::sin(i * 0.01)));
    write_wav(dir / "x.wav", w);
    const auto back = read_wav(dir / "x.wav");
    CHECK(back.sample_rate == 16000);
    REQUIRE(back.samples.size() == w.samples.size());
    double max_err = 0;
    for (std::size_t i = 0; i < w.samples.size(); ++i) max_err = std::max(max_err, std::abs(double(back.samples[i]) - w.samples[i]));
    CHECK(max_err < 1.0 / 32767.0);
    CHECK(read_wav(dir / "x.wav", 1.0).samples.size() == 16000);

    const auto down = resample(w, 8000);
    CHECK(down.sample_rate == 8000);
    CHECK(down.samples.size() == 16000);
    CHECK(down.samples[100] == doctest::Approx(w.samples[200]).epsilon(1e-6));
    CHECK_THROWS_AS(read_wav(dir / "nope.wav"), NotFoundError);
    {
        std::ofstream out(dir / "junk.wav");
        out << "not a wav file at all";
    }
    CHECK_THROWS_AS(read_wav(dir / "junk.wav"), FormatError);
    std::filesystem::remove_all(dir);
}
