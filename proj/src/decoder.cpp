#include "riskseq/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace riskseq {

namespace {

Parameter weight(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng* rng) {
    return Parameter(name, rng ? glorot_uniform(rows, cols, *rng) : Matrix::Zero(rows, cols));
}

}  // namespace

LstmParams LstmParams::init(const std::string& name, Eigen::Index input, Eigen::Index hidden, Rng& rng) {
    LstmParams p;
    p.w_f = weight(name + ".w_f", hidden, hidden + input, &rng);
    p.w_i = weight(name + ".w_i", hidden, hidden + input, &rng);
    p.w_c = weight(name + ".w_c", hidden, hidden + input, &rng);
    p.w_o = weight(name + ".w_o", hidden, hidden + input, &rng);
    p.b_f = Parameter(name + ".b_f", Matrix::Zero(hidden, 1));
    p.b_i = Parameter(name + ".b_i", Matrix::Zero(hidden, 1));
    p.b_c = Parameter(name + ".b_c", Matrix::Zero(hidden, 1));
    p.b_o = Parameter(name + ".b_o", Matrix::Zero(hidden, 1));
    return p;
}

LstmParams LstmParams::zeros(const std::string& name, Eigen::Index input, Eigen::Index hidden) {
    LstmParams p;
    p.w_f = weight(name + ".w_f", hidden, hidden + input, nullptr);
    p.w_i = weight(name + ".w_i", hidden, hidden + input, nullptr);
    p.w_c = weight(name + ".w_c", hidden, hidden + input, nullptr);
    p.w_o = weight(name + ".w_o", hidden, hidden + input, nullptr);
    p.b_f = Parameter(name + ".b_f", Matrix::Zero(hidden, 1));
    p.b_i = Parameter(name + ".b_i", Matrix::Zero(hidden, 1));
    p.b_c = Parameter(name + ".b_c", Matrix::Zero(hidden, 1));
    p.b_o = Parameter(name + ".b_o", Matrix::Zero(hidden, 1));
    return p;
}

void LstmParams::collect(ParameterList& out) {
    for (Parameter* q : {&w_f, &w_i, &w_c, &w_o, &b_f, &b_i, &b_c, &b_o}) out.push_back(q);
}

LstmStep lstm_step(const Vector& x, const Vector& h_prev, const Vector& c_prev, const LstmParams& p) {
    const Eigen::Index hidden = p.hidden();
    if (h_prev.size() != hidden || c_prev.size() != hidden || x.size() != p.input()) {
        throw ShapeError("lstm_step: inconsistent dimensions");
    }
    if (!x.allFinite()) throw NumericError("lstm_step: non-finite input");
    LstmStep s;
    s.concat.resize(hidden + x.size());
    s.concat << h_prev, x;
    s.f = sigmoid(p.w_f.value * s.concat + p.b_f.value.col(0));
    s.i = sigmoid(p.w_i.value * s.concat + p.b_i.value.col(0));
    s.candidate = tanh(p.w_c.value * s.concat + p.b_c.value.col(0));
    s.c_prev = c_prev;
    s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.candidate);
    s.o = sigmoid(p.w_o.value * s.concat + p.b_o.value.col(0));
    s.h = s.o.cwiseProduct(tanh(s.c));
    return s;
}

Matrix lstm_forward(const Matrix& states, const Mask& mask, const LstmParams& p, bool reverse, LstmTrace* trace) {
    if (static_cast<std::size_t>(states.rows()) != mask.size()) {
        throw ShapeError("lstm_forward: mask length does not match the sequence");
    }
    const Eigen::Index length = states.rows();
    const Eigen::Index hidden = p.hidden();
    Matrix out = Matrix::Zero(length, hidden);
    Vector h = Vector::Zero(hidden);
    Vector c = Vector::Zero(hidden);
    if (trace) {
        trace->mask = mask;
        trace->reverse = reverse;
        trace->input_dim = states.cols();
        trace->steps.assign(static_cast<std::size_t>(length), LstmStep{});
    }
    for (Eigen::Index n = 0; n < length; ++n) {
        const Eigen::Index t = reverse ? length - 1 - n : n;
        if (!mask[static_cast<std::size_t>(t)]) continue;
        LstmStep s = lstm_step(states.row(t).transpose(), h, c, p);
        h = s.h;
        c = s.c;
        out.row(t) = h.transpose();
        if (trace) trace->steps[static_cast<std::size_t>(t)] = std::move(s);
    }
    return out;
}

Matrix lstm_backward(const LstmTrace& trace, const Matrix& d_out, LstmParams& p) {
    const auto length = static_cast<Eigen::Index>(trace.steps.size());
    const Eigen::Index hidden = p.hidden();
    Matrix dx = Matrix::Zero(length, trace.input_dim);
    Vector dh_next = Vector::Zero(hidden);
    Vector dc_next = Vector::Zero(hidden);
    for (Eigen::Index n = length; n-- > 0;) {
        const Eigen::Index t = trace.reverse ? length - 1 - n : n;
        if (!trace.mask[static_cast<std::size_t>(t)]) continue;
        const LstmStep& s = trace.steps[static_cast<std::size_t>(t)];
        const Vector dh = d_out.row(t).transpose() + dh_next;
        const Vector tanh_c = tanh(s.c);
        const Vector d_o = dh.cwiseProduct(tanh_c);
        const Vector dc = dc_next + dh.cwiseProduct(s.o).cwiseProduct((1.0 - tanh_c.array().square()).matrix());
        const Vector d_f = dc.cwiseProduct(s.c_prev);
        const Vector d_i = dc.cwiseProduct(s.candidate);
        const Vector d_cand = dc.cwiseProduct(s.i);
        dc_next = dc.cwiseProduct(s.f);

        const Vector z_f = d_f.array() * s.f.array() * (1.0 - s.f.array());
        const Vector z_i = d_i.array() * s.i.array() * (1.0 - s.i.array());
        const Vector z_c = d_cand.array() * (1.0 - s.candidate.array().square());
        const Vector z_o = d_o.array() * s.o.array() * (1.0 - s.o.array());

        p.w_f.grad.noalias() += z_f * s.concat.transpose();
        p.w_i.grad.noalias() += z_i * s.concat.transpose();
        p.w_c.grad.noalias() += z_c * s.concat.transpose();
        p.w_o.grad.noalias() += z_o * s.concat.transpose();
        p.b_f.grad.col(0) += z_f;
        p.b_i.grad.col(0) += z_i;
        p.b_c.grad.col(0) += z_c;
        p.b_o.grad.col(0) += z_o;

        Vector d_concat = p.w_f.value.transpose() * z_f;
        d_concat.noalias() += p.w_i.value.transpose() * z_i;
        d_concat.noalias() += p.w_c.value.transpose() * z_c;
        d_concat.noalias() += p.w_o.value.transpose() * z_o;
        dh_next = d_concat.head(hidden);
        dx.row(t) = d_concat.tail(trace.input_dim).transpose();
    }
    return dx;
}

// ---------------------------------------------------------------------------

Vector average_pool(const Matrix& h, const Mask& mask, bool strict_length) {
    if (static_cast<std::size_t>(h.rows()) != mask.size()) throw ShapeError("average_pool: mask length mismatch");
    const std::size_t valid = count_valid(mask);
    if (valid == 0) throw ValidationError("average_pool: no unmasked rows");
    Vector z = Vector::Zero(h.cols());
    for (Eigen::Index t = 0; t < h.rows(); ++t) {
        if (mask[static_cast<std::size_t>(t)]) z += h.row(t).transpose();
    }
    return z / static_cast<Scalar>(strict_length ? mask.size() : valid);
}

Matrix average_pool_backward(const Vector& dz, const Mask& mask, bool strict_length) {
    const std::size_t valid = count_valid(mask);
    const Scalar denom = static_cast<Scalar>(strict_length ? mask.size() : valid);
    Matrix dh = Matrix::Zero(static_cast<Eigen::Index>(mask.size()), dz.size());
    for (std::size_t t = 0; t < mask.size(); ++t) {
        if (mask[t]) dh.row(static_cast<Eigen::Index>(t)) = dz.transpose() / denom;
    }
    return dh;
}

// ---------------------------------------------------------------------------

HeadParams HeadParams::init(const std::string& name, Eigen::Index pooled_dim, Eigen::Index classes, Rng& rng) {
    HeadParams p;
    p.w_s = Parameter(name + ".w_s", glorot_uniform(classes, pooled_dim, rng));
    p.b_s = Parameter(name + ".b_s", Matrix::Zero(classes, 1));
    p.w_r = Parameter(name + ".w_r", glorot_uniform(1, pooled_dim, rng));
    p.b_r = Parameter(name + ".b_r", Matrix::Zero(1, 1));
    return p;
}

void HeadParams::collect(ParameterList& out) {
    collect_score(out);
    collect_risk(out);
}

void HeadParams::collect_score(ParameterList& out) {
    out.push_back(&w_s);
    out.push_back(&b_s);
}

void HeadParams::collect_risk(ParameterList& out) {
    out.push_back(&w_r);
    out.push_back(&b_r);
}

Vector score_logits(const Vector& z, const HeadParams& p) {
    if (z.size() != p.pooled_dim()) throw ShapeError("score head: pooled dimension mismatch");
    return p.w_s.value * z + p.b_s.value.col(0);
}

Scalar risk_logit(const Vector& z, const HeadParams& p) {
    if (z.size() != p.pooled_dim()) throw ShapeError("risk head: pooled dimension mismatch");
    return (p.w_r.value * z)(0) + p.b_r.value(0, 0);
}

Vector score_head(const Vector& z, const HeadParams& p) {
    const Vector logits = score_logits(z, p);
    if (!logits.allFinite()) throw NumericError("score head: non-finite logits");
    return softmax(logits);
}

Scalar risk_head(const Vector& z, const HeadParams& p) {
    const Scalar logit = risk_logit(z, p);
    if (!std::isfinite(logit)) throw NumericError("risk head: non-finite logit");
    Vector v(1);
    v << logit;
    return sigmoid(v)(0);
}

Vector heads_backward(const Vector& z, Scalar d_risk_logit, const Vector& d_score_logits, HeadParams& p) {
    p.w_s.grad.noalias() += d_score_logits * z.transpose();
    p.b_s.grad.col(0) += d_score_logits;
    p.w_r.grad.row(0) += d_risk_logit * z.transpose();
    p.b_r.grad(0, 0) += d_risk_logit;
    return p.w_s.value.transpose() * d_score_logits + p.w_r.value.row(0).transpose() * d_risk_logit;
}

// ---------------------------------------------------------------------------

Scalar binary_cross_entropy(Scalar target, Scalar prob) {
    const Scalar p = std::clamp(prob, kLogClamp, 1.0 - kLogClamp);
    return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

Scalar categorical_cross_entropy(int target_class, const Vector& probs) {
    if (target_class < 0 || target_class >= probs.size()) {
        throw ValidationError("score target class out of range: " + std::to_string(target_class));
    }
    return -std::log(std::max(probs[target_class], kLogClamp));
}

SampleLoss hybrid_loss_sample(const Prediction& pred, const Target& target, const LossWeights& weights) {
    SampleLoss out;
    const Scalar y = target.risk ? 1.0 : 0.0;
    const Scalar p = pred.y_r;
    out.risk_term = binary_cross_entropy(y, p);
    const bool risk_clamped = p < kLogClamp || p > 1.0 - kLogClamp;
    out.d_risk_logit = risk_clamped ? 0.0 : weights.alpha * (p - y);

    out.d_score_logits = Vector::Zero(pred.y_s.size());
    if (target.score) {
        const int c = *target.score;
        out.score_term = categorical_cross_entropy(c, pred.y_s);
        if (pred.y_s[c] >= kLogClamp) {
            out.d_score_logits = weights.beta * pred.y_s;
            out.d_score_logits[c] -= weights.beta;
        }
    }
    out.value = weights.alpha * out.risk_term + weights.beta * out.score_term;
    return out;
}

Scalar hybrid_loss(std::span<const Prediction> preds, std::span<const Target> targets, const LossWeights& weights) {
    if (preds.size() != targets.size() || preds.empty()) {
        throw ValidationError("hybrid_loss needs equally many predictions and targets (at least one)");
    }
    Scalar total = 0.0;
    for (std::size_t n = 0; n < preds.size(); ++n) total += hybrid_loss_sample(preds[n], targets[n], weights).value;
    return total / static_cast<Scalar>(preds.size());
}

}  // namespace riskseq
