#pragma once

#include "riskseq/config.hpp"

#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace riskseq {

/// Run directory layout:
///   config.json                      resolved config of the latest command
///   splits.csv                       id,split,label
///   models/<model>/checkpoint.bin    selected parameters
///   models/<model>/train_log.csv
///   models/<model>/config.json       snapshot used for training
///   models/<model>/eval.csv          single-row report
///   models/<model>/predictions.csv
///   report.csv, report.txt           comparison table
///   interpret/<model>/<id>.txt
///   errors/<command>-<n>.json        one file per failed command
namespace run_layout {
std::filesystem::path model_dir(const RunConfig& cfg, const std::string& model);
std::filesystem::path checkpoint(const RunConfig& cfg, const std::string& model);
std::filesystem::path splits(const RunConfig& cfg);
std::filesystem::path manifest(const RunConfig& cfg);
std::filesystem::path planted(const RunConfig& cfg);
}  // namespace run_layout

/// Writes manifest.csv, audio/<id>.wav and planted.csv under paths.corpus_dir.
void cmd_synth(const RunConfig& cfg, std::ostream& log);

/// Embeds every manifest call into paths.cache_dir; calls already cached by the
/// same extractor are skipped.
void cmd_extract(const RunConfig& cfg, std::ostream& log);

/// Trains model.kind on the train split, selecting on the validation split.
void cmd_train(const RunConfig& cfg, std::ostream& log);

/// Bootstrap metrics of model.kind on the test split.
void cmd_evaluate(const RunConfig& cfg, std::ostream& log,
                  const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// Manual baseline plus every evaluated model, in table order.
void cmd_compare(const RunConfig& cfg, std::ostream& log);

/// Top-k salient segments for one call, or for every test call.
void cmd_interpret(const RunConfig& cfg, std::ostream& log, const std::optional<std::string>& call_id,
                   std::optional<int> k, const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

struct DatasetView {
    std::vector<ManifestEntry> entries;
    DatasetSplit split;
};

/// Manifest plus its deterministic split; writes splits.csv.
DatasetView load_dataset(const RunConfig& cfg);

std::string expected_extractor_id(const RunConfig& cfg);

/// Loads cached embeddings for ids (in order) as training examples.
std::vector<Example> load_examples(const RunConfig& cfg, const std::vector<ManifestEntry>& entries,
                                   const std::vector<std::string>& ids);

/// Writes errors/<command>-<n>.json and returns its path.
std::filesystem::path write_error_artifact(const std::filesystem::path& run_dir, const std::string& command,
                                           const std::exception& error);

/// Snapshots the config, runs body, and converts any exception into an error
/// artifact. Returns 0 on success and 1 when an artifact was written.
int run_command(const std::string& command, const RunConfig& cfg, std::ostream& err,
                const std::function<void()>& body);

}  // namespace riskseq
