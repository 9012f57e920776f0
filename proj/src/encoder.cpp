#include "riskseq/encoder.hpp"

#include "riskseq/features.hpp"

namespace riskseq {

void validate_encoder_config(const EncoderConfig& cfg) {
    if (cfg.input_dim <= 0 || cfg.d_model <= 0 || cfg.n_heads <= 0 || cfg.n_layers <= 0 || cfg.d_ff <= 0) {
        throw ValidationError("encoder dimensions must all be positive");
    }
    if (cfg.d_model % cfg.n_heads != 0) {
        throw ValidationError("d_model (" + std::to_string(cfg.d_model) + ") must be divisible by n_heads (" +
                              std::to_string(cfg.n_heads) + ")");
    }
    if (cfg.positional_encoding && cfg.d_model % 2 != 0) {
        throw ValidationError("positional encoding needs an even d_model");
    }
    if (!cfg.input_projection && cfg.input_dim != cfg.d_model) {
        throw ValidationError("embedding dimension " + std::to_string(cfg.input_dim) + " != d_model " +
                              std::to_string(cfg.d_model) + " and no input projection is configured");
    }
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ValidationError("dropout must lie in [0, 1)");
}

// ---------------------------------------------------------------------------

MultiHeadSelfAttention::MultiHeadSelfAttention(const std::string& name, int d_model, int n_heads, Rng& rng)
    : w_q(name + ".w_q", glorot_uniform(d_model, d_model, rng)),
      w_k(name + ".w_k", glorot_uniform(d_model, d_model, rng)),
      w_v(name + ".w_v", glorot_uniform(d_model, d_model, rng)),
      w_o(name + ".w_o", glorot_uniform(d_model, d_model, rng)),
      n_heads_(n_heads) {}

Matrix MultiHeadSelfAttention::forward(const Matrix& x, const Mask& mask, Trace* trace) const {
    if (static_cast<std::size_t>(x.rows()) != mask.size()) {
        throw ShapeError("attention mask length " + std::to_string(mask.size()) + " != sequence length " +
                         std::to_string(x.rows()));
    }
    if (!any_valid(mask)) throw ValidationError("self-attention over an all-masked sequence (no valid keys)");

    const Eigen::Index d = w_q.value.cols();
    const Eigen::Index dk = d / n_heads_;
    const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(dk));
    Matrix q = x * w_q.value;
    Matrix k = x * w_k.value;
    Matrix v = x * w_v.value;
    Matrix concat(x.rows(), d);
    std::vector<Matrix> probs;
    probs.reserve(static_cast<std::size_t>(n_heads_));
    for (int h = 0; h < n_heads_; ++h) {
        const auto cols = Eigen::seqN(h * dk, dk);
        const Matrix scores = (q(Eigen::all, cols) * k(Eigen::all, cols).transpose()) * scale;
        Matrix p = masked_softmax_rows(scores, mask);
        concat(Eigen::all, cols).noalias() = p * v(Eigen::all, cols);
        probs.push_back(std::move(p));
    }
    Matrix y = concat * w_o.value;
    if (trace) {
        trace->input = x;
        trace->q = std::move(q);
        trace->k = std::move(k);
        trace->v = std::move(v);
        trace->concat = std::move(concat);
        trace->probs = std::move(probs);
    }
    return y;
}

Matrix MultiHeadSelfAttention::backward(const Trace& t, const Matrix& dy) {
    const Eigen::Index d = w_q.value.cols();
    const Eigen::Index dk = d / n_heads_;
    const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(dk));

    w_o.grad.noalias() += t.concat.transpose() * dy;
    const Matrix d_concat = dy * w_o.value.transpose();
    Matrix dq(t.q.rows(), d), dk_all(t.k.rows(), d), dv(t.v.rows(), d);
    for (int h = 0; h < n_heads_; ++h) {
        const auto cols = Eigen::seqN(h * dk, dk);
        const Matrix& p = t.probs[static_cast<std::size_t>(h)];
        const Matrix d_head = d_concat(Eigen::all, cols);
        const Matrix dp = d_head * t.v(Eigen::all, cols).transpose();
        dv(Eigen::all, cols).noalias() = p.transpose() * d_head;
        const Matrix ds = softmax_rows_backward(p, dp) * scale;
        dq(Eigen::all, cols).noalias() = ds * t.k(Eigen::all, cols);
        dk_all(Eigen::all, cols).noalias() = ds.transpose() * t.q(Eigen::all, cols);
    }
    w_q.grad.noalias() += t.input.transpose() * dq;
    w_k.grad.noalias() += t.input.transpose() * dk_all;
    w_v.grad.noalias() += t.input.transpose() * dv;
    return dq * w_q.value.transpose() + dk_all * w_k.value.transpose() + dv * w_v.value.transpose();
}

void MultiHeadSelfAttention::collect(ParameterList& out) {
    out.push_back(&w_q);
    out.push_back(&w_k);
    out.push_back(&w_v);
    out.push_back(&w_o);
}

// ---------------------------------------------------------------------------

FeedForward::FeedForward(const std::string& name, int d_model, int d_ff, Rng& rng)
    : ffn_w1(name + ".ffn_w1", glorot_uniform(d_model, d_ff, rng)),
      ffn_b1(name + ".ffn_b1", Matrix::Zero(1, d_ff)),
      ffn_w2(name + ".ffn_w2", glorot_uniform(d_ff, d_model, rng)),
      ffn_b2(name + ".ffn_b2", Matrix::Zero(1, d_model)) {}

Matrix FeedForward::forward(const Matrix& x, Trace* trace) const {
    Matrix pre = x * ffn_w1.value;
    pre.rowwise() += ffn_b1.value.row(0);
    Matrix y = relu(pre) * ffn_w2.value;
    y.rowwise() += ffn_b2.value.row(0);
    if (trace) {
        trace->input = x;
        trace->hidden_pre = std::move(pre);
    }
    return y;
}

Matrix FeedForward::backward(const Trace& t, const Matrix& dy) {
    const Matrix hidden = relu(t.hidden_pre);
    ffn_w2.grad.noalias() += hidden.transpose() * dy;
    ffn_b2.grad.row(0) += dy.colwise().sum();
    const Matrix d_hidden = ((dy * ffn_w2.value.transpose()).array() * (t.hidden_pre.array() > 0.0).cast<Scalar>()).matrix();
    ffn_w1.grad.noalias() += t.input.transpose() * d_hidden;
    ffn_b1.grad.row(0) += d_hidden.colwise().sum();
    return d_hidden * ffn_w1.value.transpose();
}

void FeedForward::collect(ParameterList& out) {
    out.push_back(&ffn_w1);
    out.push_back(&ffn_b1);
    out.push_back(&ffn_w2);
    out.push_back(&ffn_b2);
}

// ---------------------------------------------------------------------------

EncoderLayer::EncoderLayer(const std::string& name, const EncoderConfig& cfg, Rng& rng)
    : attn(name + ".attn", cfg.d_model, cfg.n_heads, rng),
      norm1(name + ".norm1", cfg.d_model),
      ffn(name, cfg.d_model, cfg.d_ff, rng),
      norm2(name + ".norm2", cfg.d_model),
      dropout(cfg.dropout) {}

Matrix EncoderLayer::forward(const Matrix& x, const Mask& mask, Trace* trace, Rng* dropout_rng) const {
    Matrix a = attn.forward(x, mask, trace ? &trace->attn : nullptr);
    if (dropout > 0.0 && dropout_rng) {
        Matrix keep = dropout_mask(a.rows(), a.cols(), dropout, dropout_rng);
        a = a.cwiseProduct(keep);
        if (trace) trace->drop_attn = std::move(keep);
    }
    const Matrix y1 = norm1.forward(x + a, trace ? &trace->norm1 : nullptr);
    Matrix f = ffn.forward(y1, trace ? &trace->ffn : nullptr);
    if (dropout > 0.0 && dropout_rng) {
        Matrix keep = dropout_mask(f.rows(), f.cols(), dropout, dropout_rng);
        f = f.cwiseProduct(keep);
        if (trace) trace->drop_ffn = std::move(keep);
    }
    return norm2.forward(y1 + f, trace ? &trace->norm2 : nullptr);
}

Matrix EncoderLayer::backward(const Trace& t, const Matrix& dy) {
    const Matrix ds2 = norm2.backward(t.norm2, dy);
    Matrix df = ds2;
    if (t.drop_ffn.size() > 0) df = df.cwiseProduct(t.drop_ffn);
    const Matrix dy1 = ds2 + ffn.backward(t.ffn, df);
    const Matrix ds1 = norm1.backward(t.norm1, dy1);
    Matrix da = ds1;
    if (t.drop_attn.size() > 0) da = da.cwiseProduct(t.drop_attn);
    return ds1 + attn.backward(t.attn, da);
}

void EncoderLayer::collect(ParameterList& out) {
    attn.collect(out);
    norm1.collect(out);
    ffn.collect(out);
    norm2.collect(out);
}

// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& cfg, Rng& rng, const std::string& name) : cfg_(cfg) {
    validate_encoder_config(cfg);
    if (cfg.input_projection) {
        input_proj = Linear(name + ".input_proj", cfg.input_dim, cfg.d_model, rng);
    }
    for (int l = 0; l < cfg.n_layers; ++l) {
        layers.emplace_back(name + ".layer" + std::to_string(l), cfg, rng);
    }
}

Matrix Encoder::forward(const Matrix& embeddings, const Mask& mask, Trace& trace, Rng* dropout_rng) const {
    if (embeddings.cols() != cfg_.input_dim) {
        throw ShapeError("encoder expects embeddings of width " + std::to_string(cfg_.input_dim) + ", got " +
                         std::to_string(embeddings.cols()));
    }
    if (static_cast<std::size_t>(embeddings.rows()) != mask.size()) {
        throw ShapeError("mask length does not match the embedding sequence");
    }
    if (!any_valid(mask)) throw ValidationError("encoder input has no unmasked position");

    trace.input = embeddings;
    Matrix x = cfg_.input_projection ? input_proj.forward(embeddings) : embeddings;
    if (cfg_.positional_encoding) x = add_position(x);
    trace.layer_input = x;
    trace.layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
        x = layers[l].forward(x, mask, &trace.layers[l], dropout_rng);
        if (!x.allFinite()) throw NumericError("non-finite activations in encoder layer " + std::to_string(l));
    }
    return x;
}

EncodedSequence Encoder::forward(const Matrix& embeddings, const Mask& mask) const {
    Trace trace;
    EncodedSequence out;
    out.states = forward(embeddings, mask, trace, nullptr);
    for (const auto& layer : trace.layers) out.attn.push_back(layer.attn.probs);
    return out;
}

EncodedSequence Encoder::forward(const SegmentEmbeddingSequence& seq) const {
    return forward(seq.embeddings.cast<Scalar>(), seq.mask);
}

Matrix Encoder::backward(const Trace& trace, const Matrix& d_states) {
    Matrix d = d_states;
    for (std::size_t l = layers.size(); l-- > 0;) {
        d = layers[l].backward(trace.layers[l], d);
    }
    if (cfg_.input_projection) d = input_proj.backward(trace.input, d);
    return d;
}

void Encoder::collect(ParameterList& out) {
    if (cfg_.input_projection) input_proj.collect(out);
    for (auto& layer : layers) layer.collect(out);
}

}  // namespace riskseq
