#include "riskseq/nn.hpp"

namespace riskseq {

Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    const Scalar limit = std::sqrt(6.0 / static_cast<Scalar>(rows + cols));
    std::uniform_real_distribution<Scalar> dist(-limit, limit);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
    }
    return m;
}

Linear::Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng, bool bias)
    : w(name + ".w", glorot_uniform(in, out, rng)), b(name + ".b", Matrix::Zero(1, out)), has_bias(bias) {}

Matrix Linear::forward(const Matrix& x) const {
    if (x.cols() != w.value.rows()) {
        throw ShapeError(w.name + ": expected input width " + std::to_string(w.value.rows()) + ", got " +
                         std::to_string(x.cols()));
    }
    Matrix y = x * w.value;
    if (has_bias) y.rowwise() += b.value.row(0);
    return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
    w.grad.noalias() += x.transpose() * dy;
    if (has_bias) b.grad.row(0) += dy.colwise().sum();
    return dy * w.value.transpose();
}

void Linear::collect(ParameterList& out) {
    out.push_back(&w);
    if (has_bias) out.push_back(&b);
}

LayerNorm::LayerNorm(const std::string& name, Eigen::Index dim)
    : gamma(name + ".gamma", Matrix::Ones(1, dim)), beta(name + ".beta", Matrix::Zero(1, dim)) {}

Matrix LayerNorm::forward(const Matrix& x, Trace* trace) const {
    const auto n = static_cast<Scalar>(x.cols());
    const Vector mean = x.rowwise().mean();
    Matrix centered = x.colwise() - mean;
    const Vector var = centered.array().square().rowwise().sum() / n;
    const Vector inv_std = (var.array() + kEpsilon).rsqrt();
    Matrix normalized = centered.array().colwise() * inv_std.array();
    Matrix y = normalized.array().rowwise() * gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    if (trace) {
        trace->normalized = std::move(normalized);
        trace->inv_std = inv_std;
    }
    return y;
}

Matrix LayerNorm::backward(const Trace& trace, const Matrix& dy) {
    const auto n = static_cast<Scalar>(dy.cols());
    gamma.grad.row(0) += (dy.array() * trace.normalized.array()).colwise().sum().matrix();
    beta.grad.row(0) += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    const Vector sum_dxhat = dxhat.rowwise().sum();
    const Vector sum_dxhat_xhat = (dxhat.array() * trace.normalized.array()).rowwise().sum();
    Matrix dx = (n * dxhat.array()).matrix();
    dx.colwise() -= sum_dxhat;
    dx -= (trace.normalized.array().colwise() * sum_dxhat_xhat.array()).matrix();
    return (dx.array().colwise() * (trace.inv_std.array() / n)).matrix();
}

void LayerNorm::collect(ParameterList& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, Scalar p, Rng* rng) {
    if (p <= 0.0 || rng == nullptr) return Matrix::Ones(rows, cols);
    std::bernoulli_distribution keep(1.0 - p);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
    }
    return m;
}

}  // namespace riskseq
