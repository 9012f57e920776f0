#include "riskseq/config.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace riskseq {

using nlohmann::json;

namespace {

json encoder_json(const EncoderConfig& c) {
    return json{{"d_model", c.d_model},
                {"n_heads", c.n_heads},
                {"n_layers", c.n_layers},
                {"d_ff", c.d_ff},
                {"dropout", c.dropout},
                {"positional_encoding", c.positional_encoding},
                {"input_projection", c.input_projection}};
}

json model_json(const ModelConfig& c) {
    return json{{"kind", std::string(model_kind_name(c.kind))},
                {"input_dim", c.input_dim},
                {"encoder", encoder_json(c.encoder)},
                {"hidden", c.hidden},
                {"recurrent_layers", c.recurrent_layers},
                {"attention_dim", c.attention_dim},
                {"score_classes", c.score_classes},
                {"strict_mean_pool", c.strict_mean_pool}};
}

json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["paths"] = {{"corpus_dir", c.paths.corpus_dir}, {"cache_dir", c.paths.cache_dir}, {"run_dir", c.paths.run_dir}};
    const auto& s = c.synth;
    j["synth"] = {{"n_calls", s.n_calls},
                  {"prevalence", s.prevalence},
                  {"min_minutes", s.min_minutes},
                  {"max_minutes", s.max_minutes},
                  {"median_minutes", s.median_minutes},
                  {"duration_sigma", s.duration_sigma},
                  {"sample_rate", s.sample_rate},
                  {"signal_strength", s.signal_strength},
                  {"planted_fraction", s.planted_fraction},
                  {"scale_agreement", s.scale_agreement},
                  {"missing_rate", s.missing_rate},
                  {"tone_std", s.tone_std},
                  {"noise_std", s.noise_std}};
    j["features"] = {{"extractor", c.features.extractor},
                     {"chunk_s", c.features.chunk_s},
                     {"window_s", c.features.window_s},
                     {"dim", c.features.dim}};
    json model = model_json(c.model);
    model.erase("input_dim");  // follows features.dim
    j["model"] = model;
    const auto& t = c.train;
    j["train"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"learning_rate", t.learning_rate},
                  {"weight_decay", t.weight_decay},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"epsilon", t.epsilon},
                  {"alpha", t.loss.alpha},
                  {"beta", t.loss.beta},
                  {"grad_clip", t.grad_clip},
                  {"threshold", t.threshold},
                  {"lr_schedule", std::string(lr_schedule_name(t.lr_schedule))},
                  {"early_stopping_patience", t.early_stopping_patience}};
    j["eval"] = {{"n_bootstrap", c.eval.n_bootstrap},
                 {"threshold", c.eval.threshold},
                 {"missing_scale", std::string(missing_policy_name(c.eval.missing_scale))},
                 {"top_k", c.eval.top_k},
                 {"salience_all_layers", c.eval.salience_all_layers}};
    return j;
}

std::string key_list(const json& reference) {
    std::string out;
    for (const auto& [key, _] : reference.items()) out += (out.empty() ? "" : ", ") + key;
    return out;
}

// Overlays input onto reference, rejecting keys the reference lacks.
void merge_checked(json& reference, const json& input, const std::string& where) {
    if (!input.is_object()) {
        throw ValidationError("config " + (where.empty() ? std::string("root") : where) + " must be an object");
    }
    for (const auto& [key, value] : input.items()) {
        const std::string path = where.empty() ? key : where + "." + key;
        if (!reference.contains(key)) {
            throw ValidationError("unknown config key '" + path + "'; valid keys" +
                                  (where.empty() ? "" : " in " + where) + ": " + key_list(reference));
        }
        json& slot = reference[key];
        if (slot.is_object()) {
            merge_checked(slot, value, path);
        } else {
            const bool numeric_ok = slot.is_number() && value.is_number();
            if (!numeric_ok && slot.type() != value.type()) {
                throw ValidationError("config key '" + path + "' expects a " + std::string(slot.type_name()) +
                                      ", got " + std::string(value.type_name()));
            }
            slot = value;
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError("config key '" + where + "." + key + "': " + e.what());
    }
}

EncoderConfig encoder_from(const json& j) {
    EncoderConfig c;
    read(j, "d_model", c.d_model, "model.encoder");
    read(j, "n_heads", c.n_heads, "model.encoder");
    read(j, "n_layers", c.n_layers, "model.encoder");
    read(j, "d_ff", c.d_ff, "model.encoder");
    read(j, "dropout", c.dropout, "model.encoder");
    read(j, "positional_encoding", c.positional_encoding, "model.encoder");
    read(j, "input_projection", c.input_projection, "model.encoder");
    return c;
}

ModelConfig model_from(const json& j) {
    ModelConfig c;
    std::string kind;
    read(j, "kind", kind, "model");
    c.kind = parse_model_kind(kind);
    if (j.contains("input_dim")) read(j, "input_dim", c.input_dim, "model");
    c.encoder = encoder_from(j.at("encoder"));
    c.encoder.input_dim = c.input_dim;
    read(j, "hidden", c.hidden, "model");
    read(j, "recurrent_layers", c.recurrent_layers, "model");
    read(j, "attention_dim", c.attention_dim, "model");
    read(j, "score_classes", c.score_classes, "model");
    read(j, "strict_mean_pool", c.strict_mean_pool, "model");
    return c;
}

RunConfig from_json(const json& j) {
    RunConfig c;
    read(j, "seed", c.seed, "root");
    const json& p = j.at("paths");
    read(p, "corpus_dir", c.paths.corpus_dir, "paths");
    read(p, "cache_dir", c.paths.cache_dir, "paths");
    read(p, "run_dir", c.paths.run_dir, "paths");
    const json& s = j.at("synth");
    read(s, "n_calls", c.synth.n_calls, "synth");
    read(s, "prevalence", c.synth.prevalence, "synth");
    read(s, "min_minutes", c.synth.min_minutes, "synth");
    read(s, "max_minutes", c.synth.max_minutes, "synth");
    read(s, "median_minutes", c.synth.median_minutes, "synth");
    read(s, "duration_sigma", c.synth.duration_sigma, "synth");
    read(s, "sample_rate", c.synth.sample_rate, "synth");
    read(s, "signal_strength", c.synth.signal_strength, "synth");
    read(s, "planted_fraction", c.synth.planted_fraction, "synth");
    read(s, "scale_agreement", c.synth.scale_agreement, "synth");
    read(s, "missing_rate", c.synth.missing_rate, "synth");
    read(s, "tone_std", c.synth.tone_std, "synth");
    read(s, "noise_std", c.synth.noise_std, "synth");
    const json& f = j.at("features");
    read(f, "extractor", c.features.extractor, "features");
    read(f, "chunk_s", c.features.chunk_s, "features");
    read(f, "window_s", c.features.window_s, "features");
    read(f, "dim", c.features.dim, "features");
    c.synth.chunk_s = c.features.chunk_s;
    c.synth.window_s = c.features.window_s;
    c.model = model_from(j.at("model"));
    c.model.input_dim = c.features.dim;
    c.model.encoder.input_dim = c.features.dim;
    const json& t = j.at("train");
    read(t, "epochs", c.train.epochs, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "learning_rate", c.train.learning_rate, "train");
    read(t, "weight_decay", c.train.weight_decay, "train");
    read(t, "beta1", c.train.beta1, "train");
    read(t, "beta2", c.train.beta2, "train");
    read(t, "epsilon", c.train.epsilon, "train");
    read(t, "alpha", c.train.loss.alpha, "train");
    read(t, "beta", c.train.loss.beta, "train");
    read(t, "grad_clip", c.train.grad_clip, "train");
    read(t, "threshold", c.train.threshold, "train");
    std::string schedule;
    read(t, "lr_schedule", schedule, "train");
    c.train.lr_schedule = parse_lr_schedule(schedule);
    read(t, "early_stopping_patience", c.train.early_stopping_patience, "train");
    const json& e = j.at("eval");
    read(e, "n_bootstrap", c.eval.n_bootstrap, "eval");
    read(e, "threshold", c.eval.threshold, "eval");
    std::string policy;
    read(e, "missing_scale", policy, "eval");
    c.eval.missing_scale = parse_missing_policy(policy);
    read(e, "top_k", c.eval.top_k, "eval");
    read(e, "salience_all_layers", c.eval.salience_all_layers, "eval");
    c.train.seed = stage_seed(c, "train");
    return c;
}

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(what + " is not valid JSON: " + e.what());
    }
}

}  // namespace

std::uint64_t stage_seed(const RunConfig& cfg, std::string_view stage) {
    return derive_seed(cfg.seed, stage);
}

void validate_run_config(const RunConfig& cfg) {
    if (cfg.paths.corpus_dir.empty() || cfg.paths.cache_dir.empty() || cfg.paths.run_dir.empty()) {
        throw ValidationError("paths.corpus_dir, paths.cache_dir and paths.run_dir must be non-empty");
    }
    validate_synth_config(cfg.synth);
    if (cfg.features.extractor != "mock" && cfg.features.extractor != "reference") {
        throw ValidationError("features.extractor must be one of: mock, reference");
    }
    if (!(cfg.features.chunk_s > 0.0) || !(cfg.features.window_s >= cfg.features.chunk_s)) {
        throw ValidationError("features.chunk_s must be positive and no larger than features.window_s");
    }
    if (cfg.features.dim <= 0) throw ValidationError("features.dim must be positive");
    if (cfg.features.extractor == "reference") {
        if (cfg.features.dim != kReferenceEmbeddingDim) {
            throw ValidationError("the reference extractor produces d = 1280; set features.dim to 1280");
        }
        if (cfg.synth.sample_rate != kReferenceSampleRate) {
            throw ValidationError("the reference extractor needs 16000 Hz audio; set synth.sample_rate to 16000");
        }
    }
    if (cfg.model.input_dim != cfg.features.dim) throw ValidationError("model input_dim must equal features.dim");
    validate_model_config(cfg.model);
    validate_train_config(cfg.train);
    if (cfg.eval.n_bootstrap < 100) throw ValidationError("eval.n_bootstrap must be at least 100");
    if (!(cfg.eval.threshold > 0.0 && cfg.eval.threshold < 1.0)) throw ValidationError("eval.threshold must lie in (0, 1)");
    if (cfg.eval.top_k <= 0) throw ValidationError("eval.top_k must be positive");
}

std::string run_config_to_json(const RunConfig& cfg) {
    return to_json(cfg).dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
    json reference = to_json(RunConfig{});
    merge_checked(reference, parse_json(text, "config"), "");
    return from_json(reference);
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("config file not found: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return run_config_from_json(buffer.str());
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << run_config_to_json(cfg);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ValidationError("override '" + assignment + "' must look like section.key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json patch = value;
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};

    json current = to_json(cfg);
    merge_checked(current, patch, "");
    cfg = from_json(current);
}

std::string model_config_to_json(const ModelConfig& cfg) {
    return model_json(cfg).dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    json reference = model_json(ModelConfig{});
    merge_checked(reference, parse_json(text, "model config"), "model");
    return model_from(reference);
}

}  // namespace riskseq
