#include "riskseq/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    std::optional<std::string> run_dir;
    std::optional<std::string> extractor;
    std::optional<std::string> model;
    std::optional<std::string> checkpoint;
    std::optional<std::string> call_id;
    std::optional<int> k;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON run config");
    cmd->add_option("--seed", f.seed, "root seed");
    cmd->add_option("--set", f.overrides, "override, e.g. train.epochs=30");
    cmd->add_option("--run-dir", f.run_dir, "run directory");
    cmd->add_option("--extractor", f.extractor, "mock or reference");
}

riskseq::RunConfig resolve(const Flags& f) {
    riskseq::RunConfig cfg = f.config.empty() ? riskseq::RunConfig{} : riskseq::load_run_config(f.config);
    for (const auto& o : f.overrides) riskseq::apply_override(cfg, o);
    if (f.seed) riskseq::apply_override(cfg, "seed=" + std::to_string(*f.seed));
    if (f.run_dir) cfg.paths.run_dir = *f.run_dir;
    if (f.extractor) cfg.features.extractor = *f.extractor;
    if (f.model) cfg.model.kind = riskseq::parse_model_kind(*f.model);
    riskseq::validate_run_config(cfg);
    return cfg;
}

// Best-effort run directory for errors raised before the config is resolved.
std::string fallback_run_dir(const Flags& f) {
    if (f.run_dir) return *f.run_dir;
    if (!f.config.empty()) {
        try {
            return riskseq::load_run_config(f.config).paths.run_dir;
        } catch (const std::exception&) {
        }
    }
    return riskseq::PathsConfig{}.run_dir;
}

// No config snapshot is written here.
int fail(const std::string& command, const Flags& f, const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    const auto path = riskseq::write_error_artifact(fallback_run_dir(f), command, e);
    std::cerr << "error artifact: " << path.string() << '\n';
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Suicide-risk prediction from call recordings: corpus, features, training, evaluation"};
    app.require_subcommand(1);
    Flags f;

    auto* synth = app.add_subcommand("synth", "generate the synthetic corpus");
    auto* extract = app.add_subcommand("extract", "embed every call into the cache");
    auto* train = app.add_subcommand("train", "train one model");
    auto* evaluate = app.add_subcommand("evaluate", "bootstrap metrics on the test split");
    auto* compare = app.add_subcommand("compare", "comparison table over evaluated models");
    auto* interpret = app.add_subcommand("interpret", "top-k salient segments per call");
    for (auto* cmd : {synth, extract, train, evaluate, compare, interpret}) add_common(cmd, f);
    for (auto* cmd : {train, evaluate, interpret}) cmd->add_option("--model", f.model, "model name");
    for (auto* cmd : {evaluate, interpret}) cmd->add_option("--checkpoint", f.checkpoint, "checkpoint path");
    interpret->add_option("--call-id", f.call_id, "call id (default: every test call)");
    interpret->add_option("--k", f.k, "number of segments");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", f, riskseq::ValidationError(e.what()));
    }

    const std::string command = app.get_subcommands().front()->get_name();
    riskseq::RunConfig cfg;
    try {
        cfg = resolve(f);
    } catch (const std::exception& e) {
        return fail(command, f, e);
    }

    std::optional<std::filesystem::path> checkpoint;
    if (f.checkpoint) checkpoint = *f.checkpoint;
    return riskseq::run_command(command, cfg, std::cerr, [&] {
        if (command == "synth") riskseq::cmd_synth(cfg, std::cout);
        else if (command == "extract") riskseq::cmd_extract(cfg, std::cout);
        else if (command == "train") riskseq::cmd_train(cfg, std::cout);
        else if (command == "evaluate") riskseq::cmd_evaluate(cfg, std::cout, checkpoint);
        else if (command == "compare") riskseq::cmd_compare(cfg, std::cout);
        else riskseq::cmd_interpret(cfg, std::cout, f.call_id, f.k, checkpoint);
    });
}
