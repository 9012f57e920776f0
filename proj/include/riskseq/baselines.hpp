#pragma once

#include "riskseq/common.hpp"
#include "riskseq/decoder.hpp"
#include "riskseq/encoder.hpp"
#include "riskseq/nn.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace riskseq {

struct SegmentEmbeddingSequence;

// ---------------------------------------------------------------------------
// GRU cell:  z = s(W_z [h, x] + b_z),  r = s(W_r [h, x] + b_r),
//            n = tanh(W_h [r * h, x] + b_h),  h' = z * h + (1 - z) * n

struct GruParams {
    Parameter w_z, w_r, w_h;  // hidden x (hidden + input)
    Parameter b_z, b_r, b_h;  // hidden x 1

    static GruParams init(const std::string& name, Eigen::Index input, Eigen::Index hidden, Rng& rng);
    static GruParams zeros(const std::string& name, Eigen::Index input, Eigen::Index hidden);

    Eigen::Index hidden() const { return w_z.value.rows(); }
    Eigen::Index input() const { return w_z.value.cols() - w_z.value.rows(); }

    void collect(ParameterList& out);
};

struct GruStep {
    Vector concat;        // [h_prev, x]
    Vector z, r;
    Vector concat_reset;  // [r * h_prev, x]
    Vector candidate;
    Vector h_prev, h;
};

GruStep gru_step(const Vector& x, const Vector& h_prev, const GruParams& p);

struct GruTrace {
    Mask mask;
    bool reverse = false;
    Eigen::Index input_dim = 0;
    std::vector<GruStep> steps;
};

Matrix gru_forward(const Matrix& states, const Mask& mask, const GruParams& p, bool reverse = false,
                   GruTrace* trace = nullptr);
Matrix gru_backward(const GruTrace& trace, const Matrix& d_out, GruParams& p);

// ---------------------------------------------------------------------------

enum class CellType { lstm, gru };

/// Stacked (optionally bidirectional) recurrent layers. A bidirectional layer
/// concatenates [forward, backward] states per row.
class RecurrentStack {
public:
    struct Direction {
        CellType type = CellType::lstm;
        LstmParams lstm;
        GruParams gru;
    };
    struct DirectionTrace {
        LstmTrace lstm;
        GruTrace gru;
    };
    struct Trace {
        std::vector<Matrix> inputs;
        std::vector<std::vector<DirectionTrace>> layers;
    };

    RecurrentStack() = default;
    RecurrentStack(const std::string& name, CellType type, Eigen::Index input, Eigen::Index hidden, int layers,
                   bool bidirectional, Rng& rng);

    Matrix forward(const Matrix& x, const Mask& mask, Trace* trace = nullptr) const;
    Matrix backward(const Trace& trace, const Matrix& d_out);

    Eigen::Index output_dim() const { return hidden_ * (bidirectional_ ? 2 : 1); }
    bool bidirectional() const { return bidirectional_; }

    void collect(ParameterList& out);

    std::vector<std::vector<Direction>> layers;  // [layer][direction]

private:
    Eigen::Index hidden_ = 0;
    bool bidirectional_ = false;
};

// ---------------------------------------------------------------------------

/// u_t = v' tanh(W h_t), weights = masked softmax(u), z = sum_t w_t h_t.
class AdditiveAttentionPool {
public:
    struct Trace {
        Matrix input;
        Matrix hidden;  // tanh(H W'), L x A
        Vector weights;
    };

    AdditiveAttentionPool() = default;
    AdditiveAttentionPool(const std::string& name, Eigen::Index input, Eigen::Index attention_dim, Rng& rng);

    Vector forward(const Matrix& h, const Mask& mask, Trace* trace = nullptr) const;
    Matrix backward(const Trace& trace, const Vector& dz);

    void collect(ParameterList& out);

    Parameter w;  // A x D
    Parameter v;  // A x 1
};

struct AttentionPoolResult {
    Vector z;
    Vector weights;
};

AttentionPoolResult additive_attention_pool(const Matrix& h, const Mask& mask, const AdditiveAttentionPool& params);

// ---------------------------------------------------------------------------

enum class ModelKind { proposed, lstm, bilstm, gru, bigru, attention_lstm, attention_gru, transformer };

/// All buildable models in report order.
const std::vector<ModelKind>& all_model_kinds();
std::string_view model_kind_name(ModelKind kind);
std::string_view model_display_name(ModelKind kind);
/// "mamba" raises NotImplementedError; unknown names raise ValidationError.
ModelKind parse_model_kind(std::string_view name);

struct ModelConfig {
    ModelKind kind = ModelKind::proposed;
    int input_dim = 1280;
    EncoderConfig encoder;  // encoder.input_dim follows input_dim
    int hidden = 256;
    int recurrent_layers = 1;
    int attention_dim = 128;
    int score_classes = 17;
    bool strict_mean_pool = false;
};

void validate_model_config(const ModelConfig& cfg);

struct ModelTrace {
    Matrix input;
    Mask mask;
    Encoder::Trace encoder;
    RecurrentStack::Trace recurrent;
    Matrix backbone;
    AdditiveAttentionPool::Trace pool;
    Prediction prediction;
};

/// Embeddings -> [encoder] -> [recurrent stack] -> mean or attention pooling
/// -> score head + risk head. Every model kind shares this contract.
class Model {
public:
    Model() = default;
    Model(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    ModelKind kind() const { return cfg_.kind; }

    Prediction forward(const SegmentEmbeddingSequence& seq) const;
    Prediction forward(const Matrix& x, const Mask& mask) const;
    Prediction forward(const Matrix& x, const Mask& mask, ModelTrace& trace, Rng* dropout_rng = nullptr) const;

    /// Accumulates gradients of all parameters from dL/d(logits).
    void backward(const ModelTrace& trace, Scalar d_risk_logit, const Vector& d_score_logits);

    ParameterList parameters();
    ParameterList risk_head_parameters();
    ParameterList score_head_parameters();
    std::size_t parameter_count();
    void zero_grad();

    Eigen::Index pooled_dim() const;
    bool has_encoder_attention() const { return encoder.has_value(); }
    bool has_attention_pool() const { return attention_pool.has_value(); }

    std::optional<Encoder> encoder;
    std::optional<RecurrentStack> recurrent;
    std::optional<AdditiveAttentionPool> attention_pool;
    HeadParams heads;

private:
    ModelConfig cfg_;
};

Model build_model(const ModelConfig& cfg, std::uint64_t seed);
Model build_model(std::string_view name, ModelConfig cfg, std::uint64_t seed);

}  // namespace riskseq
