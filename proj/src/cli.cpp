#include "riskseq/cli.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace riskseq {

namespace fs = std::filesystem;

namespace run_layout {

fs::path model_dir(const RunConfig& cfg, const std::string& model) {
    return fs::path(cfg.paths.run_dir) / "models" / model;
}

fs::path checkpoint(const RunConfig& cfg, const std::string& model) {
    return model_dir(cfg, model) / "checkpoint.bin";
}

fs::path splits(const RunConfig& cfg) {
    return fs::path(cfg.paths.run_dir) / "splits.csv";
}

fs::path manifest(const RunConfig& cfg) {
    return fs::path(cfg.paths.corpus_dir) / "manifest.csv";
}

fs::path planted(const RunConfig& cfg) {
    return fs::path(cfg.paths.corpus_dir) / "planted.csv";
}

}  // namespace run_layout

namespace {

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << text;
        if (!out) throw Error("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path& path, const std::string& prerequisite) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError(path.string() + " not found (run " + prerequisite + " first)");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string model_name(const RunConfig& cfg) {
    return std::string(model_kind_name(cfg.model.kind));
}

std::vector<ManifestEntry> read_corpus_manifest(const RunConfig& cfg) {
    const fs::path path = run_layout::manifest(cfg);
    if (!fs::exists(path)) throw NotFoundError("manifest not found: " + path.string() + " (run synth first)");
    return read_manifest(path);
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

std::vector<std::pair<std::string, std::string>> report_metadata(const RunConfig& cfg) {
    return {{"seed", std::to_string(cfg.seed)},
            {"bootstrap", "percentile"},
            {"n_bootstrap", std::to_string(cfg.eval.n_bootstrap)},
            {"ci", "95%"},
            {"threshold", fmt("%g", cfg.eval.threshold)},
            {"missing_scale", std::string(missing_policy_name(cfg.eval.missing_scale))},
            {"extractor", expected_extractor_id(cfg)},
            {"grad_clip", fmt("%g", cfg.train.grad_clip)}};
}

Model load_model_for(const RunConfig& cfg, const std::optional<fs::path>& checkpoint) {
    const fs::path path = checkpoint ? *checkpoint : run_layout::checkpoint(cfg, model_name(cfg));
    if (!fs::exists(path)) {
        throw NotFoundError("checkpoint not found: " + path.string() + " (run train --model " + model_name(cfg) +
                            " first)");
    }
    return load_checkpoint(path);
}

}  // namespace

std::string expected_extractor_id(const RunConfig& cfg) {
    if (cfg.features.extractor == "reference") return "whisper-large-v2-final-meanpool";
    return MockExtractor(cfg.features.dim, stage_seed(cfg, "extract"), cfg.synth.sample_rate).id();
}

// ---------------------------------------------------------------------------

void cmd_synth(const RunConfig& cfg, std::ostream& log) {
    const fs::path dir(cfg.paths.corpus_dir);
    fs::create_directories(dir / "audio");
    const std::uint64_t seed = stage_seed(cfg, "synth");
    std::vector<ManifestEntry> entries;
    std::ostringstream planted;
    planted << "id,label,first,last\n";
    for (int i = 0; i < cfg.synth.n_calls; ++i) {
        const CallRecording rec = synthesize_call(cfg.synth, seed, i);
        const std::string rel = "audio/" + rec.id + ".wav";
        write_wav(dir / rel, rec.waveform);
        entries.push_back(ManifestEntry{rec.id, rel, rec.duration_s(), rec.scale, rec.label});
        planted << rec.id << ',' << (rec.label.followup_suicidal_act ? 1 : 0) << ',';
        if (rec.planted) planted << rec.planted->first << ',' << rec.planted->last;
        else planted << ',';
        planted << '\n';
    }
    write_manifest(run_layout::manifest(cfg), entries);
    write_text(run_layout::planted(cfg), planted.str());
    log << "synth: wrote " << entries.size() << " calls to " << dir.string() << '\n';
}

void cmd_extract(const RunConfig& cfg, std::ostream& log) {
    const auto entries = read_corpus_manifest(cfg);
    const auto extractor =
        make_extractor(cfg.features.extractor, cfg.features.dim, stage_seed(cfg, "extract"), cfg.synth.sample_rate);
    if (extractor->dim() != cfg.features.dim) {
        throw ValidationError("extractor " + extractor->id() + " produces d = " + std::to_string(extractor->dim()) +
                              " but features.dim = " + std::to_string(cfg.features.dim));
    }
    const fs::path cache(cfg.paths.cache_dir);
    fs::create_directories(cache);
    const auto expected_length = static_cast<Eigen::Index>(std::llround(cfg.features.window_s / cfg.features.chunk_s));
    std::vector<CacheIndexEntry> index;
    int fresh = 0;
    for (const auto& e : entries) {
        bool cached = false;
        try {
            const auto existing = cache_read(e.id, cache, extractor->id());
            cached = existing.length() == expected_length && existing.dim() == extractor->dim();
        } catch (const Error&) {
            cached = false;
        }
        if (!cached) {
            Waveform wave = read_wav(fs::path(cfg.paths.corpus_dir) / e.audio_path, cfg.features.window_s);
            if (wave.sample_rate != extractor->sample_rate()) wave = resample(wave, extractor->sample_rate());
            const auto segments = segment_waveform(wave, cfg.features.chunk_s, cfg.features.window_s);
            auto emb = extract_embeddings(segments, *extractor);
            cache_write(e.id, emb, cache);
            ++fresh;
        }
        index.push_back(CacheIndexEntry{e.id, cache_file(cache, e.id).filename().string(), extractor->id(),
                                        extractor->dim(), static_cast<int>(expected_length)});
    }
    write_cache_index(cache, index);
    log << "extract: " << fresh << " embedded, " << entries.size() - static_cast<std::size_t>(fresh)
        << " already cached (" << extractor->id() << ")\n";
}

DatasetView load_dataset(const RunConfig& cfg) {
    DatasetView view;
    view.entries = read_corpus_manifest(cfg);
    std::vector<LabeledId> ids;
    for (const auto& e : view.entries) ids.push_back({e.id, e.label.followup_suicidal_act});
    view.split = split_dataset(ids, stage_seed(cfg, "split"));

    std::map<std::string, bool> labels;
    for (const auto& e : view.entries) labels[e.id] = e.label.followup_suicidal_act;
    std::ostringstream out;
    out << "id,split,label\n";
    auto dump = [&](const std::vector<std::string>& part, const char* name) {
        for (const auto& id : part) out << id << ',' << name << ',' << (labels[id] ? 1 : 0) << '\n';
    };
    dump(view.split.train, "train");
    dump(view.split.validation, "validation");
    dump(view.split.test, "test");
    write_text(run_layout::splits(cfg), out.str());
    return view;
}

std::vector<Example> load_examples(const RunConfig& cfg, const std::vector<ManifestEntry>& entries,
                                   const std::vector<std::string>& ids) {
    std::map<std::string, const ManifestEntry*> by_id;
    for (const auto& e : entries) by_id[e.id] = &e;
    const std::string extractor_id = expected_extractor_id(cfg);
    std::vector<Example> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw NotFoundError("call " + id + " is not in the manifest");
        const auto emb = cache_read(id, cfg.paths.cache_dir, extractor_id);
        if (emb.dim() != cfg.features.dim) {
            throw StaleCacheError("cached embeddings for " + id + " have d = " + std::to_string(emb.dim()) +
                                  ", config expects " + std::to_string(cfg.features.dim) + " (re-run extract)");
        }
        Target target{it->second->label.followup_suicidal_act, score_scale(it->second->scale)};
        out.push_back(make_example(id, emb, target));
    }
    return out;
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
    const auto data = load_dataset(cfg);
    const auto train_set = load_examples(cfg, data.entries, data.split.train);
    const auto val_set = load_examples(cfg, data.entries, data.split.validation);
    const std::string name = model_name(cfg);
    Model model = build_model(cfg.model, stage_seed(cfg, "model-init"));
    log << "train: " << name << " with " << model.parameter_count() << " parameters, " << train_set.size()
        << " train / " << val_set.size() << " validation calls\n";

    TrainConfig tc = cfg.train;
    tc.seed = stage_seed(cfg, "train");
    auto result = train(std::move(model), train_set, val_set, tc, [&](const EpochRecord& r) {
        char line[160];
        std::snprintf(line, sizeof(line), "epoch %d/%d loss %.5f val P %.3f R %.3f F1 %.3f\n", r.epoch, tc.epochs,
                      r.train_loss, r.val_precision, r.val_recall, r.val_f1);
        log << line << std::flush;
    });

    const fs::path dir = run_layout::model_dir(cfg, name);
    fs::create_directories(dir);
    save_checkpoint(result.model, dir / "checkpoint.bin");
    write_text(dir / "train_log.csv", result.log.to_csv());
    save_run_config(cfg, dir / "config.json");
    log << "train: selected epoch " << result.log.selected_epoch << ", checkpoint " << (dir / "checkpoint.bin").string()
        << '\n';
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& log, const std::optional<fs::path>& checkpoint) {
    const Model model = load_model_for(cfg, checkpoint);
    const auto data = load_dataset(cfg);
    const auto test_set = load_examples(cfg, data.entries, data.split.test);
    const auto probs = predict_risk(model, test_set);
    std::vector<bool> preds, labels;
    std::ostringstream pred_csv;
    pred_csv << "id,label,y_r,prediction\n";
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        preds.push_back(probs[i] >= cfg.eval.threshold);
        labels.push_back(test_set[i].target.risk);
        char line[128];
        std::snprintf(line, sizeof(line), ",%d,%.17g,%d\n", labels.back() ? 1 : 0, probs[i], preds.back() ? 1 : 0);
        pred_csv << test_set[i].id << line;
    }
    const auto result = bootstrap_metrics(preds, labels, cfg.eval.n_bootstrap, stage_seed(cfg, "bootstrap"));
    auto metadata = report_metadata(cfg);
    metadata.emplace_back("skipped_resamples", std::to_string(result.skipped));
    if (result.skip_warning) metadata.emplace_back("warning", "more than 10% of resamples had no positive label");
    const auto report = compare_report({ReportRow{std::string(model_display_name(model.kind())), result}}, metadata);

    const std::string name(model_kind_name(model.kind()));
    const fs::path dir = run_layout::model_dir(cfg, name);
    write_text(dir / "eval.csv", report_to_csv(report));
    write_text(dir / "predictions.csv", pred_csv.str());
    log << report_to_text(report);
}

void cmd_compare(const RunConfig& cfg, std::ostream& log) {
    const auto data = load_dataset(cfg);
    std::map<std::string, const ManifestEntry*> by_id;
    for (const auto& e : data.entries) by_id[e.id] = &e;
    std::vector<ManifestEntry> test_entries;
    for (const auto& id : data.split.test) test_entries.push_back(*by_id.at(id));

    std::vector<ReportRow> rows;
    auto metadata = report_metadata(cfg);
    const auto manual = manual_predictions(test_entries, cfg.eval.missing_scale);
    metadata.emplace_back("manual_excluded", std::to_string(manual.excluded));
    rows.push_back({"Manual scale rating",
                    bootstrap_metrics(manual.preds, manual.labels, cfg.eval.n_bootstrap, stage_seed(cfg, "bootstrap"))});

    std::string missing;
    int evaluated = 0;
    for (ModelKind kind : all_model_kinds()) {
        if (kind == ModelKind::proposed) rows.push_back({"Mamba", std::nullopt});
        const fs::path eval = run_layout::model_dir(cfg, std::string(model_kind_name(kind))) / "eval.csv";
        if (!fs::exists(eval)) {
            missing += (missing.empty() ? "" : ";") + std::string(model_kind_name(kind));
            continue;
        }
        const auto parsed = parse_report_csv(read_text(eval, "evaluate"));
        if (parsed.rows.size() != 1 || !parsed.rows[0].result) throw FormatError(eval.string() + " is not a model result");
        rows.push_back({std::string(model_display_name(kind)), parsed.rows[0].result});
        ++evaluated;
    }
    if (evaluated == 0) {
        throw NotFoundError("no evaluated models under " + (fs::path(cfg.paths.run_dir) / "models").string() +
                            " (run evaluate --model <name> first)");
    }
    if (!missing.empty()) metadata.emplace_back("not_evaluated", missing);
    const auto report = compare_report(std::move(rows), metadata);
    write_text(fs::path(cfg.paths.run_dir) / "report.csv", report_to_csv(report));
    write_text(fs::path(cfg.paths.run_dir) / "report.txt", report_to_text(report));
    log << report_to_text(report);
}

void cmd_interpret(const RunConfig& cfg, std::ostream& log, const std::optional<std::string>& call_id,
                   std::optional<int> k, const std::optional<fs::path>& checkpoint) {
    const Model model = load_model_for(cfg, checkpoint);
    std::vector<std::string> ids;
    if (call_id) {
        ids.push_back(*call_id);
    } else {
        ids = load_dataset(cfg).split.test;
    }
    const int top = k.value_or(cfg.eval.top_k);
    const std::string name(model_kind_name(model.kind()));
    const fs::path dir = fs::path(cfg.paths.run_dir) / "interpret" / name;
    const std::string extractor_id = expected_extractor_id(cfg);
    for (const auto& id : ids) {
        const auto emb = cache_read(id, cfg.paths.cache_dir, extractor_id);
        const auto report = top_k_segments(model, id, emb, top, cfg.features.chunk_s, cfg.eval.salience_all_layers);
        const std::string text = interpretability_to_text(report);
        write_text(dir / (id + ".txt"), text);
        if (call_id) log << text;
    }
    log << "interpret: wrote " << ids.size() << " report(s) to " << dir.string() << '\n';
}

// ---------------------------------------------------------------------------

namespace {

std::string error_type(const std::exception& e) {
    if (dynamic_cast<const ValidationError*>(&e)) return "ValidationError";
    if (dynamic_cast<const FormatError*>(&e)) return "FormatError";
    if (dynamic_cast<const NotFoundError*>(&e)) return "NotFoundError";
    if (dynamic_cast<const StaleCacheError*>(&e)) return "StaleCacheError";
    if (dynamic_cast<const ShapeError*>(&e)) return "ShapeError";
    if (dynamic_cast<const NumericError*>(&e)) return "NumericError";
    if (dynamic_cast<const NotImplementedError*>(&e)) return "NotImplementedError";
    if (dynamic_cast<const UnsupportedError*>(&e)) return "UnsupportedError";
    if (dynamic_cast<const ExtractionError*>(&e)) return "ExtractionError";
    if (dynamic_cast<const Error*>(&e)) return "Error";
    return "InternalError";
}

}  // namespace

fs::path write_error_artifact(const fs::path& run_dir, const std::string& command, const std::exception& error) {
    const fs::path dir = run_dir / "errors";
    fs::create_directories(dir);
    fs::path path;
    for (int n = 1;; ++n) {
        path = dir / (command + "-" + std::to_string(n) + ".json");
        if (!fs::exists(path)) break;
    }
    nlohmann::json j{{"command", command}, {"error", error_type(error)}, {"message", error.what()}};
    if (dynamic_cast<const StaleCacheError*>(&error)) j["hint"] = "re-run extract";
    write_text(path, j.dump(2) + "\n");
    return path;
}

int run_command(const std::string& command, const RunConfig& cfg, std::ostream& err,
                const std::function<void()>& body) {
    try {
        fs::create_directories(cfg.paths.run_dir);
        save_run_config(cfg, fs::path(cfg.paths.run_dir) / "config.json");
        body();
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        try {
            err << "error artifact: " << write_error_artifact(cfg.paths.run_dir, command, e).string() << '\n';
        } catch (const std::exception& inner) {
            err << "could not write error artifact: " << inner.what() << '\n';
        }
        return 1;
    }
}

}  // namespace riskseq
