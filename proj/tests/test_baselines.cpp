#include "riskseq/baselines.hpp"

#include "oracles.hpp"

#include <doctest.h>

using namespace riskseq;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("GRU scalar step by hand") {
    auto p = GruParams::zeros("gru", 1, 1);
    p.w_z.value << 0.5, 1.0;
    p.w_r.value << -0.3, 0.7;
    p.w_h.value << 0.9, -1.1;
    p.b_h.value << 0.2;
    Vector x(1), h(1);
    x << 0.4;
    h << -0.6;
    const auto s = gru_step(x, h, p);
    const double z = sig(0.5 * -0.6 + 0.4);
    const double r = sig(-0.3 * -0.6 + 0.7 * 0.4);
    const double n = std::tanh(0.9 * r * -0.6 - 1.1 * 0.4 + 0.2);
    CHECK(s.h[0] == doctest::Approx(z * -0.6 + (1 - z) * n).epsilon(1e-14));
    CHECK(gru_forward(oracle::random_matrix(4, 1, 1), Mask(4, true), GruParams::zeros("g", 1, 1)).isZero());
}

TEST_CASE("model kind names") {
    CHECK(all_model_kinds().size() == 8);
    for (ModelKind kind : all_model_kinds()) CHECK(parse_model_kind(model_kind_name(kind)) == kind);
    CHECK_THROWS_AS(parse_model_kind("mamba"), NotImplementedError);
    CHECK_THROWS_WITH_AS(parse_model_kind("cnn"), doctest::Contains("valid: "), ValidationError);
    CHECK(model_display_name(ModelKind::bigru) == "BiGRU");
}

TEST_CASE("every kind builds and predicts") {
    const Matrix x = oracle::random_matrix(7, 16, 3);
    const Mask mask = oracle::prefix_mask(7, 5);
    for (ModelKind kind : all_model_kinds()) {
        CAPTURE(model_kind_name(kind));
        Model m(oracle::small_config(kind), 11);
        const auto pred = m.forward(x, mask);
        CHECK(pred.y_r > 0.0);
        CHECK(pred.y_r < 1.0);
        CHECK(pred.y_s.size() == kScoreClasses);
        CHECK(pred.y_s.sum() == doctest::Approx(1.0));
        CHECK(m.parameter_count() > 0);

        // Same seed, same weights; padded rows never matter.
        Model again(oracle::small_config(kind), 11);
        Matrix tampered = x;
        tampered.bottomRows(2).setConstant(5.0);
        const auto p2 = again.forward(tampered, mask);
        CHECK(p2.y_r == doctest::Approx(pred.y_r).epsilon(1e-12));
        CHECK_THROWS_AS(m.forward(x, Mask(7, false)), ValidationError);
        CHECK_THROWS_AS(m.forward(oracle::random_matrix(7, 15, 1), mask), ShapeError);
    }
}

TEST_CASE("backbone structure per kind") {
    const auto cfg = [](ModelKind k) { return oracle::small_config(k, 16, 8); };
    CHECK(Model(cfg(ModelKind::lstm), 1).pooled_dim() == 8);
    CHECK(Model(cfg(ModelKind::bilstm), 1).pooled_dim() == 16);
    CHECK(Model(cfg(ModelKind::bigru), 1).pooled_dim() == 16);
    CHECK(Model(cfg(ModelKind::transformer), 1).pooled_dim() == 8);
    CHECK(Model(cfg(ModelKind::proposed), 1).has_encoder_attention());
    CHECK(Model(cfg(ModelKind::transformer), 1).has_encoder_attention());
    CHECK_FALSE(Model(cfg(ModelKind::gru), 1).has_encoder_attention());
    CHECK(Model(cfg(ModelKind::attention_gru), 1).has_attention_pool());
    CHECK_FALSE(Model(cfg(ModelKind::lstm), 1).has_attention_pool());
}

TEST_CASE("bidirectional output concatenates both directions") {
    Rng rng(2);
    RecurrentStack bi("rnn", CellType::lstm, 3, 4, 1, true, rng);
    const Matrix x = oracle::random_matrix(5, 3, 4);
    const Mask mask = oracle::prefix_mask(5, 4);
    const Matrix out = bi.forward(x, mask);
    CHECK(out.cols() == 8);
    const Matrix fwd = lstm_forward(x, mask, bi.layers[0][0].lstm);
    const Matrix bwd = lstm_forward(x, mask, bi.layers[0][1].lstm, true);
    CHECK(out.leftCols(4) == fwd);
    CHECK(out.rightCols(4) == bwd);
}

TEST_CASE("additive attention pool") {
    Rng rng(3);
    AdditiveAttentionPool pool("pool", 4, 3, rng);
    const Matrix h = oracle::random_matrix(6, 4, 5);
    const Mask mask = oracle::prefix_mask(6, 4);
    const auto r = additive_attention_pool(h, mask, pool);
    CHECK(r.weights.sum() == doctest::Approx(1.0));
    CHECK(r.weights.tail(2).isZero());
    Vector u(4);
    for (Eigen::Index t = 0; t < 4; ++t) {
        u[t] = (pool.v.value.transpose() * (pool.w.value * h.row(t).transpose()).array().tanh().matrix())(0, 0);
    }
    const Vector expected = (u.array() - u.maxCoeff()).exp() / (u.array() - u.maxCoeff()).exp().sum();
    CHECK((r.weights.head(4) - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((r.z - h.transpose() * r.weights).cwiseAbs().maxCoeff() < 1e-12);

    SUBCASE("constant rows give uniform weights") {
        Matrix c(4, 4);
        c.rowwise() = h.row(0);
        const auto rc = additive_attention_pool(c, Mask(4, true), pool);
        CHECK((rc.weights.array() - 0.25).abs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("model gradients against finite differences") {
    const Matrix x = oracle::random_matrix(5, 6, 21);
    const Mask mask = oracle::prefix_mask(5, 4);
    for (ModelKind kind : all_model_kinds()) {
        CAPTURE(model_kind_name(kind));
        auto cfg = oracle::small_config(kind, 6, 4);
        cfg.score_classes = 5;
        Model m(cfg, 3);
        const auto check = oracle::check_model_gradients(m, x, mask, {true, 2}, {0.5, 0.5});
        INFO(check.worst);
        CHECK(check.max_rel_error < 1e-4);
        const auto missing = oracle::check_model_gradients(m, x, mask, {false, std::nullopt}, {0.3, 0.7});
        CHECK(missing.max_rel_error < 1e-4);
    }
}
