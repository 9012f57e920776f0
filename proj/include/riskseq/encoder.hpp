#pragma once

#include "riskseq/common.hpp"
#include "riskseq/nn.hpp"

#include <string>
#include <vector>

namespace riskseq {

struct SegmentEmbeddingSequence;

struct EncoderConfig {
    int input_dim = 1280;
    int d_model = 256;
    int n_heads = 8;
    int n_layers = 4;
    int d_ff = 1024;
    double dropout = 0.0;
    bool positional_encoding = true;
    bool input_projection = true;  // learned input_dim -> d_model map

    int d_k() const { return d_model / n_heads; }
};

void validate_encoder_config(const EncoderConfig& cfg);

/// Sinusoidal encoding of position t: p[2k] = sin(w_k t), p[2k+1] = cos(w_k t)
/// with w_k = 10000^(-2k/d).
template <typename S = Scalar>
Eigen::Matrix<S, Eigen::Dynamic, 1> positional_encoding(Eigen::Index t, Eigen::Index d) {
    if (d <= 0 || d % 2 != 0) throw ValidationError("positional encoding dimension must be even and positive");
    if (t < 0) throw ValidationError("position must be non-negative");
    Eigen::Matrix<S, Eigen::Dynamic, 1> p(d);
    for (Eigen::Index k = 0; k < d / 2; ++k) {
        const S omega = std::pow(S(10000), -S(2 * k) / S(d));
        p[2 * k] = std::sin(omega * S(t));
        p[2 * k + 1] = std::cos(omega * S(t));
    }
    return p;
}

/// L x d matrix whose row t is positional_encoding(t, d).
template <typename S = Scalar>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> positional_matrix(Eigen::Index length, Eigen::Index d) {
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> m(length, d);
    for (Eigen::Index t = 0; t < length; ++t) m.row(t) = positional_encoding<S>(t, d).transpose();
    return m;
}

/// e'_t = e_t + p_t for every row, padded rows included.
template <typename Derived>
typename Derived::PlainObject add_position(const Eigen::MatrixBase<Derived>& embeddings) {
    using S = typename Derived::Scalar;
    return embeddings + positional_matrix<S>(embeddings.rows(), embeddings.cols());
}

class MultiHeadSelfAttention {
public:
    struct Trace {
        Matrix input;
        Matrix q, k, v;
        Matrix concat;
        std::vector<Matrix> probs;  // one L x L map per head
    };

    MultiHeadSelfAttention() = default;
    MultiHeadSelfAttention(const std::string& name, int d_model, int n_heads, Rng& rng);

    /// Keys with mask == false are excluded (score -inf before the softmax).
    Matrix forward(const Matrix& x, const Mask& mask, Trace* trace = nullptr) const;
    Matrix backward(const Trace& trace, const Matrix& dy);

    void collect(ParameterList& out);

    int n_heads() const { return n_heads_; }

    Parameter w_q, w_k, w_v, w_o;

private:
    int n_heads_ = 1;
};

/// FFN(x) = max(0, x W1 + b1) W2 + b2, row-wise.
class FeedForward {
public:
    struct Trace {
        Matrix input;
        Matrix hidden_pre;
    };

    FeedForward() = default;
    FeedForward(const std::string& name, int d_model, int d_ff, Rng& rng);

    Matrix forward(const Matrix& x, Trace* trace = nullptr) const;
    Matrix backward(const Trace& trace, const Matrix& dy);

    void collect(ParameterList& out);

    Parameter ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

/// Post-norm layer: x -> LayerNorm(x + SelfAttn(x)) -> LayerNorm(. + FFN(.)).
class EncoderLayer {
public:
    struct Trace {
        MultiHeadSelfAttention::Trace attn;
        Matrix drop_attn;
        LayerNorm::Trace norm1;
        FeedForward::Trace ffn;
        Matrix drop_ffn;
        LayerNorm::Trace norm2;
    };

    EncoderLayer() = default;
    EncoderLayer(const std::string& name, const EncoderConfig& cfg, Rng& rng);

    Matrix forward(const Matrix& x, const Mask& mask, Trace* trace, Rng* dropout_rng) const;
    Matrix backward(const Trace& trace, const Matrix& dy);

    void collect(ParameterList& out);

    MultiHeadSelfAttention attn;
    LayerNorm norm1;
    FeedForward ffn;
    LayerNorm norm2;
    double dropout = 0.0;
};

struct EncodedSequence {
    Matrix states;                           // L x d_model
    std::vector<std::vector<Matrix>> attn;   // [layer][head], L x L
};

class Encoder {
public:
    struct Trace {
        Matrix input;
        Matrix layer_input;
        std::vector<EncoderLayer::Trace> layers;
    };

    Encoder() = default;
    Encoder(const EncoderConfig& cfg, Rng& rng, const std::string& name = "encoder");

    const EncoderConfig& config() const { return cfg_; }

    EncodedSequence forward(const Matrix& embeddings, const Mask& mask) const;
    EncodedSequence forward(const SegmentEmbeddingSequence& seq) const;

    /// Training forward: fills trace (attention maps included) and returns states.
    Matrix forward(const Matrix& embeddings, const Mask& mask, Trace& trace, Rng* dropout_rng) const;
    /// Accumulates parameter gradients; returns dL/d(embeddings).
    Matrix backward(const Trace& trace, const Matrix& d_states);

    void collect(ParameterList& out);

    Linear input_proj;
    std::vector<EncoderLayer> layers;

private:
    EncoderConfig cfg_;
};

}  // namespace riskseq
