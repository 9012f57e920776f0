#include "riskseq/config.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <fstream>

using namespace riskseq;

TEST_CASE("defaults follow the reported protocol") {
    const RunConfig cfg;
    CHECK(cfg.features.chunk_s == 30.0);
    CHECK(cfg.features.window_s == 1800.0);
    CHECK(cfg.features.dim == 1280);
    CHECK(cfg.model.input_dim == 1280);
    CHECK(cfg.train.epochs == 100);
    CHECK(cfg.train.batch_size == 32);
    CHECK(cfg.eval.n_bootstrap == 1000);
    CHECK(cfg.eval.top_k == 10);
    CHECK(cfg.model.score_classes == 17);
    CHECK(cfg.eval.missing_scale == MissingScalePolicy::exclude);
    CHECK_NOTHROW(validate_run_config(cfg));
}

TEST_CASE("json round trip") {
    RunConfig cfg;
    cfg.seed = 1234567890123ULL;
    cfg.synth.sample_rate = 256;
    cfg.features.dim = 32;
    cfg.model.kind = ModelKind::bigru;
    cfg.train.lr_schedule = LrSchedule::cosine;
    cfg.eval.missing_scale = MissingScalePolicy::low;
    const std::string text = run_config_to_json(cfg);
    const RunConfig back = run_config_from_json(text);
    CHECK(run_config_to_json(back) == text);
    CHECK(back.seed == cfg.seed);
    CHECK(back.model.kind == ModelKind::bigru);
    CHECK(back.model.input_dim == 32);
    CHECK(back.model.encoder.input_dim == 32);
    CHECK(back.train.seed == stage_seed(back, "train"));
    CHECK(back.train.seed == derive_seed(cfg.seed, "train"));

    const std::string model_text = model_config_to_json(back.model);
    CHECK(model_config_to_json(model_config_from_json(model_text)) == model_text);
}

TEST_CASE("partial files keep defaults") {
    const auto cfg = run_config_from_json(R"({"seed": 9, "train": {"epochs": 3}})");
    CHECK(cfg.seed == 9);
    CHECK(cfg.train.epochs == 3);
    CHECK(cfg.train.batch_size == 32);
}

TEST_CASE("unknown keys list the valid ones") {
    CHECK_THROWS_WITH_AS(run_config_from_json(R"({"trian": {}})"), doctest::Contains("valid keys: "), ValidationError);
    try {
        run_config_from_json(R"({"train": {"epoch": 3}})");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("train.epoch") != std::string::npos);
        CHECK(msg.find("epochs") != std::string::npos);
        CHECK(msg.find("batch_size") != std::string::npos);
    }
    CHECK_THROWS_AS(run_config_from_json(R"({"train": {"epochs": "many"}})"), ValidationError);
    CHECK_THROWS_AS(run_config_from_json("{not json"), ValidationError);
    CHECK_THROWS_AS(run_config_from_json(R"({"model": {"kind": "cnn"}})"), ValidationError);
}

TEST_CASE("overrides") {
    RunConfig cfg;
    apply_override(cfg, "train.epochs=7");
    apply_override(cfg, "model.encoder.n_heads=4");
    apply_override(cfg, "features.extractor=mock");
    apply_override(cfg, "seed=42");
    CHECK(cfg.train.epochs == 7);
    CHECK(cfg.model.encoder.n_heads == 4);
    CHECK(cfg.seed == 42);
    CHECK(cfg.train.seed == derive_seed(42, "train"));
    apply_override(cfg, "features.dim=64");
    CHECK(cfg.model.input_dim == 64);
    CHECK_THROWS_AS(apply_override(cfg, "train.nope=1"), ValidationError);
    CHECK_THROWS_AS(apply_override(cfg, "train.epochs"), ValidationError);
    CHECK_THROWS_AS(apply_override(cfg, "train.epochs=abc"), ValidationError);
}

TEST_CASE("cross-section validation") {
    RunConfig cfg;
    cfg.features.extractor = "reference";
    cfg.features.dim = 64;
    cfg.model.input_dim = 64;
    CHECK_THROWS_AS(validate_run_config(cfg), ValidationError);
    cfg = RunConfig{};
    cfg.model.input_dim = 12;
    CHECK_THROWS_AS(validate_run_config(cfg), ValidationError);
    cfg = RunConfig{};
    cfg.eval.n_bootstrap = 50;
    CHECK_THROWS_AS(validate_run_config(cfg), ValidationError);
    cfg = RunConfig{};
    cfg.features.extractor = "whisper";
    CHECK_THROWS_AS(validate_run_config(cfg), ValidationError);
}

TEST_CASE("files") {
    const auto dir = oracle::temp_dir("config");
    RunConfig cfg;
    cfg.seed = 5;
    save_run_config(cfg, dir / "sub" / "config.json");
    CHECK(load_run_config(dir / "sub" / "config.json").seed == 5);
    CHECK_THROWS_AS(load_run_config(dir / "missing.json"), NotFoundError);
    std::filesystem::remove_all(dir);
}
