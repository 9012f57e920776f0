#include "riskseq/baselines.hpp"

#include "riskseq/features.hpp"

#include <array>

namespace riskseq {

GruParams GruParams::init(const std::string& name, Eigen::Index input, Eigen::Index hidden, Rng& rng) {
    GruParams p;
    p.w_z = Parameter(name + ".w_z", glorot_uniform(hidden, hidden + input, rng));
    p.w_r = Parameter(name + ".w_r", glorot_uniform(hidden, hidden + input, rng));
    p.w_h = Parameter(name + ".w_h", glorot_uniform(hidden, hidden + input, rng));
    p.b_z = Parameter(name + ".b_z", Matrix::Zero(hidden, 1));
    p.b_r = Parameter(name + ".b_r", Matrix::Zero(hidden, 1));
    p.b_h = Parameter(name + ".b_h", Matrix::Zero(hidden, 1));
    return p;
}

GruParams GruParams::zeros(const std::string& name, Eigen::Index input, Eigen::Index hidden) {
    GruParams p;
    p.w_z = Parameter(name + ".w_z", Matrix::Zero(hidden, hidden + input));
    p.w_r = Parameter(name + ".w_r", Matrix::Zero(hidden, hidden + input));
    p.w_h = Parameter(name + ".w_h", Matrix::Zero(hidden, hidden + input));
    p.b_z = Parameter(name + ".b_z", Matrix::Zero(hidden, 1));
    p.b_r = Parameter(name + ".b_r", Matrix::Zero(hidden, 1));
    p.b_h = Parameter(name + ".b_h", Matrix::Zero(hidden, 1));
    return p;
}

void GruParams::collect(ParameterList& out) {
    for (Parameter* q : {&w_z, &w_r, &w_h, &b_z, &b_r, &b_h}) out.push_back(q);
}

GruStep gru_step(const Vector& x, const Vector& h_prev, const GruParams& p) {
    const Eigen::Index hidden = p.hidden();
    if (h_prev.size() != hidden || x.size() != p.input()) throw ShapeError("gru_step: inconsistent dimensions");
    if (!x.allFinite()) throw NumericError("gru_step: non-finite input");
    GruStep s;
    s.h_prev = h_prev;
    s.concat.resize(hidden + x.size());
    s.concat << h_prev, x;
    s.z = sigmoid(p.w_z.value * s.concat + p.b_z.value.col(0));
    s.r = sigmoid(p.w_r.value * s.concat + p.b_r.value.col(0));
    s.concat_reset.resize(hidden + x.size());
    s.concat_reset << s.r.cwiseProduct(h_prev), x;
    s.candidate = tanh(p.w_h.value * s.concat_reset + p.b_h.value.col(0));
    s.h = s.z.cwiseProduct(h_prev) + (1.0 - s.z.array()).matrix().cwiseProduct(s.candidate);
    return s;
}

Matrix gru_forward(const Matrix& states, const Mask& mask, const GruParams& p, bool reverse, GruTrace* trace) {
    if (static_cast<std::size_t>(states.rows()) != mask.size()) {
        throw ShapeError("gru_forward: mask length does not match the sequence");
    }
    const Eigen::Index length = states.rows();
    Matrix out = Matrix::Zero(length, p.hidden());
    Vector h = Vector::Zero(p.hidden());
    if (trace) {
        trace->mask = mask;
        trace->reverse = reverse;
        trace->input_dim = states.cols();
        trace->steps.assign(static_cast<std::size_t>(length), GruStep{});
    }
    for (Eigen::Index n = 0; n < length; ++n) {
        const Eigen::Index t = reverse ? length - 1 - n : n;
        if (!mask[static_cast<std::size_t>(t)]) continue;
        GruStep s = gru_step(states.row(t).transpose(), h, p);
        h = s.h;
        out.row(t) = h.transpose();
        if (trace) trace->steps[static_cast<std::size_t>(t)] = std::move(s);
    }
    return out;
}

Matrix gru_backward(const GruTrace& trace, const Matrix& d_out, GruParams& p) {
    const auto length = static_cast<Eigen::Index>(trace.steps.size());
    const Eigen::Index hidden = p.hidden();
    Matrix dx = Matrix::Zero(length, trace.input_dim);
    Vector dh_next = Vector::Zero(hidden);
    for (Eigen::Index n = length; n-- > 0;) {
        const Eigen::Index t = trace.reverse ? length - 1 - n : n;
        if (!trace.mask[static_cast<std::size_t>(t)]) continue;
        const GruStep& s = trace.steps[static_cast<std::size_t>(t)];
        const Vector dh = d_out.row(t).transpose() + dh_next;

        const Vector dz = dh.cwiseProduct(s.h_prev - s.candidate);
        const Vector dn = dh.cwiseProduct((1.0 - s.z.array()).matrix());
        Vector dh_prev = dh.cwiseProduct(s.z);

        const Vector a_n = dn.array() * (1.0 - s.candidate.array().square());
        p.w_h.grad.noalias() += a_n * s.concat_reset.transpose();
        p.b_h.grad.col(0) += a_n;
        const Vector d_reset = p.w_h.value.transpose() * a_n;
        const Vector d_rh = d_reset.head(hidden);
        Vector d_x = d_reset.tail(trace.input_dim);
        const Vector dr = d_rh.cwiseProduct(s.h_prev);
        dh_prev += d_rh.cwiseProduct(s.r);

        const Vector a_z = dz.array() * s.z.array() * (1.0 - s.z.array());
        const Vector a_r = dr.array() * s.r.array() * (1.0 - s.r.array());
        p.w_z.grad.noalias() += a_z * s.concat.transpose();
        p.w_r.grad.noalias() += a_r * s.concat.transpose();
        p.b_z.grad.col(0) += a_z;
        p.b_r.grad.col(0) += a_r;
        Vector d_concat = p.w_z.value.transpose() * a_z;
        d_concat.noalias() += p.w_r.value.transpose() * a_r;
        dh_prev += d_concat.head(hidden);
        d_x += d_concat.tail(trace.input_dim);

        dh_next = dh_prev;
        dx.row(t) = d_x.transpose();
    }
    return dx;
}

// ---------------------------------------------------------------------------

RecurrentStack::RecurrentStack(const std::string& name, CellType type, Eigen::Index input, Eigen::Index hidden,
                               int n_layers, bool bidirectional, Rng& rng)
    : hidden_(hidden), bidirectional_(bidirectional) {
    if (n_layers <= 0 || hidden <= 0 || input <= 0) throw ValidationError("recurrent stack dimensions must be positive");
    Eigen::Index in = input;
    const std::array<std::string, 2> suffix = {"fwd", "bwd"};
    for (int l = 0; l < n_layers; ++l) {
        std::vector<Direction> dirs;
        for (int d = 0; d < (bidirectional ? 2 : 1); ++d) {
            const std::string prefix = name + ".layer" + std::to_string(l) + "." + suffix[static_cast<std::size_t>(d)];
            Direction dir;
            dir.type = type;
            if (type == CellType::lstm) dir.lstm = LstmParams::init(prefix, in, hidden, rng);
            else dir.gru = GruParams::init(prefix, in, hidden, rng);
            dirs.push_back(std::move(dir));
        }
        layers.push_back(std::move(dirs));
        in = output_dim();
    }
}

Matrix RecurrentStack::forward(const Matrix& x, const Mask& mask, Trace* trace) const {
    Matrix input = x;
    if (trace) {
        trace->inputs.clear();
        trace->layers.assign(layers.size(), {});
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& dirs = layers[l];
        Matrix out(input.rows(), output_dim());
        if (trace) trace->layers[l].resize(dirs.size());
        for (std::size_t d = 0; d < dirs.size(); ++d) {
            const bool reverse = d == 1;
            DirectionTrace* dt = trace ? &trace->layers[l][d] : nullptr;
            const Matrix h = dirs[d].type == CellType::lstm
                                 ? lstm_forward(input, mask, dirs[d].lstm, reverse, dt ? &dt->lstm : nullptr)
                                 : gru_forward(input, mask, dirs[d].gru, reverse, dt ? &dt->gru : nullptr);
            out.middleCols(static_cast<Eigen::Index>(d) * hidden_, hidden_) = h;
        }
        if (trace) trace->inputs.push_back(input);
        input = std::move(out);
    }
    return input;
}

Matrix RecurrentStack::backward(const Trace& trace, const Matrix& d_out) {
    Matrix d = d_out;
    for (std::size_t l = layers.size(); l-- > 0;) {
        auto& dirs = layers[l];
        Matrix dx = Matrix::Zero(trace.inputs[l].rows(), trace.inputs[l].cols());
        for (std::size_t d_i = 0; d_i < dirs.size(); ++d_i) {
            const Matrix part = d.middleCols(static_cast<Eigen::Index>(d_i) * hidden_, hidden_);
            const auto& dt = trace.layers[l][d_i];
            dx += dirs[d_i].type == CellType::lstm ? lstm_backward(dt.lstm, part, dirs[d_i].lstm)
                                                   : gru_backward(dt.gru, part, dirs[d_i].gru);
        }
        d = std::move(dx);
    }
    return d;
}

void RecurrentStack::collect(ParameterList& out) {
    for (auto& dirs : layers) {
        for (auto& dir : dirs) {
            if (dir.type == CellType::lstm) dir.lstm.collect(out);
            else dir.gru.collect(out);
        }
    }
}

// ---------------------------------------------------------------------------

AdditiveAttentionPool::AdditiveAttentionPool(const std::string& name, Eigen::Index input, Eigen::Index attention_dim,
                                             Rng& rng)
    : w(name + ".w", glorot_uniform(attention_dim, input, rng)), v(name + ".v", glorot_uniform(attention_dim, 1, rng)) {}

Vector AdditiveAttentionPool::forward(const Matrix& h, const Mask& mask, Trace* trace) const {
    if (static_cast<std::size_t>(h.rows()) != mask.size()) throw ShapeError("attention pool: mask length mismatch");
    if (!any_valid(mask)) throw ValidationError("attention pool over an all-masked sequence");
    Matrix hidden = tanh(Matrix(h * w.value.transpose()));
    const Vector scores = hidden * v.value.col(0);
    const Vector weights = masked_softmax_rows(RowVector(scores.transpose()), mask).transpose();
    Vector z = h.transpose() * weights;
    if (trace) {
        trace->input = h;
        trace->hidden = std::move(hidden);
        trace->weights = weights;
    }
    return z;
}

Matrix AdditiveAttentionPool::backward(const Trace& t, const Vector& dz) {
    Matrix dh = t.weights * dz.transpose();
    const Vector d_weights = t.input * dz;
    const Vector d_scores = t.weights.array() * (d_weights.array() - t.weights.dot(d_weights));
    v.grad.col(0).noalias() += t.hidden.transpose() * d_scores;
    const Matrix d_pre = ((d_scores * v.value.col(0).transpose()).array() * (1.0 - t.hidden.array().square())).matrix();
    w.grad.noalias() += d_pre.transpose() * t.input;
    dh.noalias() += d_pre * w.value;
    return dh;
}

void AdditiveAttentionPool::collect(ParameterList& out) {
    out.push_back(&w);
    out.push_back(&v);
}

AttentionPoolResult additive_attention_pool(const Matrix& h, const Mask& mask, const AdditiveAttentionPool& params) {
    AdditiveAttentionPool::Trace trace;
    AttentionPoolResult out;
    out.z = params.forward(h, mask, &trace);
    out.weights = trace.weights;
    return out;
}

// ---------------------------------------------------------------------------

const std::vector<ModelKind>& all_model_kinds() {
    static const std::vector<ModelKind> kinds = {ModelKind::lstm,           ModelKind::gru,
                                                 ModelKind::bilstm,         ModelKind::bigru,
                                                 ModelKind::attention_lstm, ModelKind::attention_gru,
                                                 ModelKind::transformer,    ModelKind::proposed};
    return kinds;
}

std::string_view model_kind_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::proposed: return "proposed";
        case ModelKind::lstm: return "lstm";
        case ModelKind::bilstm: return "bilstm";
        case ModelKind::gru: return "gru";
        case ModelKind::bigru: return "bigru";
        case ModelKind::attention_lstm: return "attention_lstm";
        case ModelKind::attention_gru: return "attention_gru";
        case ModelKind::transformer: return "transformer";
    }
    return "unknown";
}

std::string_view model_display_name(ModelKind kind) {
    switch (kind) {
        case ModelKind::proposed: return "Proposed (encoder + LSTM decoder)";
        case ModelKind::lstm: return "LSTM";
        case ModelKind::bilstm: return "BiLSTM";
        case ModelKind::gru: return "GRU";
        case ModelKind::bigru: return "BiGRU";
        case ModelKind::attention_lstm: return "AttentionLSTM";
        case ModelKind::attention_gru: return "AttentionGRU";
        case ModelKind::transformer: return "Transformer";
    }
    return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
    if (name == "mamba") {
        throw NotImplementedError("model 'mamba' is not implemented (selective state-space model)");
    }
    for (ModelKind kind : all_model_kinds()) {
        if (model_kind_name(kind) == name) return kind;
    }
    std::string valid;
    for (ModelKind kind : all_model_kinds()) {
        if (!valid.empty()) valid += ", ";
        valid += model_kind_name(kind);
    }
    throw ValidationError("unknown model '" + std::string(name) + "' (valid: " + valid + ")");
}

void validate_model_config(const ModelConfig& cfg) {
    if (cfg.input_dim <= 0) throw ValidationError("input_dim must be positive");
    if (cfg.hidden <= 0 || cfg.recurrent_layers <= 0 || cfg.attention_dim <= 0) {
        throw ValidationError("hidden, recurrent_layers and attention_dim must be positive");
    }
    if (cfg.score_classes < 2) throw ValidationError("score_classes must be at least 2");
    EncoderConfig enc = cfg.encoder;
    enc.input_dim = cfg.input_dim;
    if (cfg.kind == ModelKind::proposed || cfg.kind == ModelKind::transformer) validate_encoder_config(enc);
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.encoder.input_dim = cfg_.input_dim;
    validate_model_config(cfg_);
    Rng rng(derive_seed(seed, "model-init"));

    Eigen::Index width = cfg_.input_dim;
    const bool uses_encoder = cfg_.kind == ModelKind::proposed || cfg_.kind == ModelKind::transformer;
    if (uses_encoder) {
        encoder.emplace(cfg_.encoder, rng, "encoder");
        width = cfg_.encoder.d_model;
    }
    switch (cfg_.kind) {
        case ModelKind::proposed:
            recurrent.emplace("decoder.lstm", CellType::lstm, width, cfg_.hidden, cfg_.recurrent_layers, false, rng);
            break;
        case ModelKind::lstm:
        case ModelKind::attention_lstm:
            recurrent.emplace("rnn", CellType::lstm, width, cfg_.hidden, cfg_.recurrent_layers, false, rng);
            break;
        case ModelKind::bilstm:
            recurrent.emplace("rnn", CellType::lstm, width, cfg_.hidden, cfg_.recurrent_layers, true, rng);
            break;
        case ModelKind::gru:
        case ModelKind::attention_gru:
            recurrent.emplace("rnn", CellType::gru, width, cfg_.hidden, cfg_.recurrent_layers, false, rng);
            break;
        case ModelKind::bigru:
            recurrent.emplace("rnn", CellType::gru, width, cfg_.hidden, cfg_.recurrent_layers, true, rng);
            break;
        case ModelKind::transformer:
            break;
    }
    if (recurrent) width = recurrent->output_dim();
    if (cfg_.kind == ModelKind::attention_lstm || cfg_.kind == ModelKind::attention_gru) {
        attention_pool.emplace("pool", width, cfg_.attention_dim, rng);
    }
    heads = HeadParams::init("heads", width, cfg_.score_classes, rng);
}

Eigen::Index Model::pooled_dim() const {
    return heads.pooled_dim();
}

Prediction Model::forward(const Matrix& x, const Mask& mask, ModelTrace& trace, Rng* dropout_rng) const {
    if (x.cols() != cfg_.input_dim) {
        throw ShapeError("model expects embeddings of width " + std::to_string(cfg_.input_dim) + ", got " +
                         std::to_string(x.cols()));
    }
    if (static_cast<std::size_t>(x.rows()) != mask.size()) throw ShapeError("model input: mask length mismatch");
    if (!any_valid(mask)) throw ValidationError("model input has no unmasked segment");
    trace.input = x;
    trace.mask = mask;
    Matrix h = encoder ? encoder->forward(x, mask, trace.encoder, dropout_rng) : x;
    if (recurrent) h = recurrent->forward(h, mask, &trace.recurrent);
    if (!h.allFinite()) throw NumericError("non-finite backbone output");
    trace.backbone = h;

    Prediction pred;
    pred.z = attention_pool ? attention_pool->forward(h, mask, &trace.pool)
                            : average_pool(h, mask, cfg_.strict_mean_pool);
    pred.y_s = score_head(pred.z, heads);
    pred.y_r = risk_head(pred.z, heads);
    trace.prediction = pred;
    return pred;
}

Prediction Model::forward(const Matrix& x, const Mask& mask) const {
    ModelTrace trace;
    return forward(x, mask, trace, nullptr);
}

Prediction Model::forward(const SegmentEmbeddingSequence& seq) const {
    return forward(seq.embeddings.cast<Scalar>(), seq.mask);
}

void Model::backward(const ModelTrace& trace, Scalar d_risk_logit, const Vector& d_score_logits) {
    const Vector dz = heads_backward(trace.prediction.z, d_risk_logit, d_score_logits, heads);
    Matrix d = attention_pool ? attention_pool->backward(trace.pool, dz)
                              : average_pool_backward(dz, trace.mask, cfg_.strict_mean_pool);
    if (recurrent) d = recurrent->backward(trace.recurrent, d);
    if (encoder) encoder->backward(trace.encoder, d);
}

ParameterList Model::parameters() {
    ParameterList out;
    if (encoder) encoder->collect(out);
    if (recurrent) recurrent->collect(out);
    if (attention_pool) attention_pool->collect(out);
    heads.collect(out);
    return out;
}

ParameterList Model::risk_head_parameters() {
    ParameterList out;
    heads.collect_risk(out);
    return out;
}

ParameterList Model::score_head_parameters() {
    ParameterList out;
    heads.collect_score(out);
    return out;
}

std::size_t Model::parameter_count() {
    std::size_t n = 0;
    for (const Parameter* p : parameters()) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void Model::zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
}

Model build_model(const ModelConfig& cfg, std::uint64_t seed) {
    return Model(cfg, seed);
}

Model build_model(std::string_view name, ModelConfig cfg, std::uint64_t seed) {
    cfg.kind = parse_model_kind(name);
    return Model(cfg, seed);
}

}  // namespace riskseq
