#pragma once

#include "riskseq/common.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace riskseq {

using Rng = std::mt19937_64;

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterList = std::vector<Parameter*>;

Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// ---------------------------------------------------------------------------
// Elementwise and row-wise functions, generic over the Eigen scalar.

template <typename Derived>
typename Derived::PlainObject sigmoid(const Eigen::MatrixBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return x.unaryExpr([](S v) {
        if (v >= S(0)) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
    });
}

template <typename Derived>
typename Derived::PlainObject tanh(const Eigen::MatrixBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return x.unaryExpr([](S v) { return std::tanh(v); });
}

template <typename Derived>
typename Derived::PlainObject relu(const Eigen::MatrixBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return x.cwiseMax(S(0));
}

/// Numerically stable softmax of a vector.
template <typename Derived>
typename Derived::PlainObject softmax(const Eigen::MatrixBase<Derived>& logits) {
    using S = typename Derived::Scalar;
    const S shift = logits.maxCoeff();
    typename Derived::PlainObject e = (logits.array() - shift).exp().matrix();
    return e / e.sum();
}

/// Softmax along each row over the columns with mask == true; masked columns
/// get exactly zero weight. Every row must see at least one valid column.
template <typename Derived>
typename Derived::PlainObject masked_softmax_rows(const Eigen::MatrixBase<Derived>& scores, const Mask& mask) {
    using S = typename Derived::Scalar;
    typename Derived::PlainObject out(scores.rows(), scores.cols());
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        S shift = -std::numeric_limits<S>::infinity();
        for (Eigen::Index c = 0; c < scores.cols(); ++c) {
            if (mask[static_cast<std::size_t>(c)]) shift = std::max(shift, scores(r, c));
        }
        S total = S(0);
        for (Eigen::Index c = 0; c < scores.cols(); ++c) {
            const S v = mask[static_cast<std::size_t>(c)] ? std::exp(scores(r, c) - shift) : S(0);
            out(r, c) = v;
            total += v;
        }
        out.row(r) /= total;
    }
    return out;
}

/// Gradient of a row softmax: given P and dL/dP, returns dL/dScores.
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& d_probs) {
    const Vector dots = (probs.array() * d_probs.array()).rowwise().sum();
    return (probs.array() * (d_probs.colwise() - dots).array()).matrix();
}

// ---------------------------------------------------------------------------

/// y = x W + b applied to each row of x.
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng, bool bias = true);

    Matrix forward(const Matrix& x) const;
    /// Accumulates parameter gradients; returns dL/dx.
    Matrix backward(const Matrix& x, const Matrix& dy);

    void collect(ParameterList& out);

    Eigen::Index in_dim() const { return w.value.rows(); }
    Eigen::Index out_dim() const { return w.value.cols(); }

    Parameter w;
    Parameter b;
    bool has_bias = true;
};

class LayerNorm {
public:
    struct Trace {
        Matrix normalized;
        Vector inv_std;
    };

    static constexpr Scalar kEpsilon = 1e-5;

    LayerNorm() = default;
    LayerNorm(const std::string& name, Eigen::Index dim);

    Matrix forward(const Matrix& x, Trace* trace = nullptr) const;
    Matrix backward(const Trace& trace, const Matrix& dy);

    void collect(ParameterList& out);

    Parameter gamma;
    Parameter beta;
};

/// Inverted dropout. Returns the keep mask scaled by 1/(1-p); all ones when p == 0.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, Scalar p, Rng* rng);

}  // namespace riskseq
