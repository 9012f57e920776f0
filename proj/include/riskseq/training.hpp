#pragma once

#include "riskseq/baselines.hpp"
#include "riskseq/common.hpp"
#include "riskseq/decoder.hpp"
#include "riskseq/evaluation.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace riskseq {

struct SegmentEmbeddingSequence;

enum class LrSchedule { constant, cosine };

std::string_view lr_schedule_name(LrSchedule schedule);
LrSchedule parse_lr_schedule(std::string_view name);

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 1e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    LossWeights loss;
    double grad_clip = 1.0;  // global L2 norm; <= 0 disables
    double threshold = 0.5;
    LrSchedule lr_schedule = LrSchedule::constant;
    int early_stopping_patience = 0;  // 0 disables
    std::uint64_t seed = 0;
};

void validate_train_config(const TrainConfig& cfg);

// ---------------------------------------------------------------------------

/// Decoupled weight decay Adam; state is keyed by parameter name.
class AdamW {
public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
        double weight_decay = 1e-2;
    };

    explicit AdamW(Options options) : options_(options) {}

    /// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
    void step(const ParameterList& params);

    void set_lr(double lr) { options_.lr = lr; }
    double lr() const { return options_.lr; }
    long step_count() const { return t_; }

private:
    struct Moments {
        Matrix m, v;
    };
    Options options_;
    long t_ = 0;
    std::map<std::string, Moments> state_;
};

/// Scales gradients in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(const ParameterList& params, double max_norm);

// ---------------------------------------------------------------------------

struct Example {
    std::string id;
    Matrix x;
    Mask mask;
    Target target;
};

Example make_example(const std::string& id, const SegmentEmbeddingSequence& emb, const Target& target);

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_precision = 0.0;
    double val_recall = 0.0;
    double val_f1 = 0.0;
    double lr = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    int selected_epoch = 0;  // 1-based, 0 when nothing was selected
    bool stopped_early = false;

    std::string to_csv() const;
};

struct TrainResult {
    Model model;  // parameters of the selected epoch
    TrainLog log;
};

/// Risk predictions at the threshold.
std::vector<bool> predict_labels(const Model& model, const std::vector<Example>& examples, double threshold);
std::vector<Scalar> predict_risk(const Model& model, const std::vector<Example>& examples);

ConfusionMetrics evaluate_examples(const Model& model, const std::vector<Example>& examples, double threshold);

/// Seeded mini-batch training; keeps the parameters of the epoch with the best
/// validation F1 (earliest on ties).
TrainResult train(Model model, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const TrainConfig& cfg, const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Mean hybrid loss over a set without updating anything.
double mean_loss(const Model& model, const std::vector<Example>& examples, const LossWeights& weights);

// ---------------------------------------------------------------------------
// Checkpoint:  magic "RSQCKPT\0" | u32 version | u32 len + model config JSON |
//              u32 n | n * (u32 len + name | u32 rows | u32 cols | f64 data) |
//              u64 checksum (FNV-1a over everything before it)

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

/// Loads tensors into an existing model. Only tensors whose names start with
/// prefix are read; a shape mismatch raises ShapeError naming the tensor.
void load_parameters(Model& model, const std::filesystem::path& path, const std::string& prefix = "");

}  // namespace riskseq
