#pragma once

#include "riskseq/common.hpp"
#include "riskseq/nn.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace riskseq {

// ---------------------------------------------------------------------------
// LSTM cell over the concatenation [h_{t-1}, x_t].

struct LstmParams {
    Parameter w_f, w_i, w_c, w_o;  // hidden x (hidden + input)
    Parameter b_f, b_i, b_c, b_o;  // hidden x 1

    static LstmParams init(const std::string& name, Eigen::Index input, Eigen::Index hidden, Rng& rng);
    static LstmParams zeros(const std::string& name, Eigen::Index input, Eigen::Index hidden);

    Eigen::Index hidden() const { return w_f.value.rows(); }
    Eigen::Index input() const { return w_f.value.cols() - w_f.value.rows(); }

    void collect(ParameterList& out);
};

struct LstmStep {
    Vector concat;  // [h_prev, x]
    Vector f, i, candidate, o;
    Vector c_prev, c, h;
};

LstmStep lstm_step(const Vector& x, const Vector& h_prev, const Vector& c_prev, const LstmParams& p);

struct LstmTrace {
    Mask mask;
    bool reverse = false;
    Eigen::Index input_dim = 0;
    std::vector<LstmStep> steps;  // indexed by time; empty entries at masked steps
};

/// Runs the cell left to right (right to left when reverse) from zero state.
/// Masked steps leave (h, c) unchanged and emit a zero row.
Matrix lstm_forward(const Matrix& states, const Mask& mask, const LstmParams& p, bool reverse = false,
                    LstmTrace* trace = nullptr);

/// Accumulates parameter gradients; returns dL/d(states).
Matrix lstm_backward(const LstmTrace& trace, const Matrix& d_out, LstmParams& p);

// ---------------------------------------------------------------------------

/// Mean over unmasked rows. strict_length divides by the full length L
/// instead (literal reading of the pooling equation, for ablations).
Vector average_pool(const Matrix& h, const Mask& mask, bool strict_length = false);
Matrix average_pool_backward(const Vector& dz, const Mask& mask, bool strict_length = false);

// ---------------------------------------------------------------------------

struct HeadParams {
    Parameter w_s, b_s;  // M x D, M x 1
    Parameter w_r, b_r;  // 1 x D, 1 x 1

    static HeadParams init(const std::string& name, Eigen::Index pooled_dim, Eigen::Index classes, Rng& rng);

    Eigen::Index classes() const { return w_s.value.rows(); }
    Eigen::Index pooled_dim() const { return w_s.value.cols(); }

    void collect(ParameterList& out);
    void collect_score(ParameterList& out);
    void collect_risk(ParameterList& out);
};

Vector score_logits(const Vector& z, const HeadParams& p);
Scalar risk_logit(const Vector& z, const HeadParams& p);

/// y_s = softmax(W_s z + b_s)
Vector score_head(const Vector& z, const HeadParams& p);
/// y_r = sigmoid(W_r z + b_r)
Scalar risk_head(const Vector& z, const HeadParams& p);

/// Accumulates head gradients from dL/d(logits); returns dL/dz.
Vector heads_backward(const Vector& z, Scalar d_risk_logit, const Vector& d_score_logits, HeadParams& p);

struct Prediction {
    Scalar y_r = 0.5;
    Vector y_s;
    Vector z;
};

// ---------------------------------------------------------------------------
// Hybrid loss  L = alpha * BCE(y_r, yhat_r) + beta * CE(y_s, yhat_s).

inline constexpr Scalar kLogClamp = 1e-7;

struct LossWeights {
    Scalar alpha = 0.5;
    Scalar beta = 0.5;
};

struct Target {
    bool risk = false;
    std::optional<int> score;  // aggregate scale class; nullopt when missing
};

Scalar binary_cross_entropy(Scalar target, Scalar prob);
Scalar categorical_cross_entropy(int target_class, const Vector& probs);

struct SampleLoss {
    Scalar value = 0.0;
    Scalar risk_term = 0.0;
    Scalar score_term = 0.0;
    Scalar d_risk_logit = 0.0;  // dL/d(risk logit)
    Vector d_score_logits;      // dL/d(score logits)
};

/// Loss of one sample and its gradient w.r.t. both heads' logits. A missing
/// scale target drops the score term.
SampleLoss hybrid_loss_sample(const Prediction& pred, const Target& target, const LossWeights& weights);

/// Mean of the per-sample hybrid loss.
Scalar hybrid_loss(std::span<const Prediction> preds, std::span<const Target> targets, const LossWeights& weights);

}  // namespace riskseq
