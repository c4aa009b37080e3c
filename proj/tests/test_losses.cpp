#include <catch2/catch_amalgamated.hpp>

#include <gatenet/losses.hpp>
#include <gatenet/gradcheck.hpp>
#include <gatenet/rng.hpp>

#include <cmath>

using namespace gatenet;

namespace {

// Straight-line reference written directly from the definition, kept free of
// library calls so the production path is checked against independent code.
double reference_loss(const std::vector<double>& preds_norm,
                      const std::vector<double>& targets_mm,
                      const SizeLossConfig& cfg) {
    double acc = 0.0;
    for (std::size_t i = 0; i < preds_norm.size(); ++i) {
        double y = targets_mm[i];
        double yc = y < cfg.min_mm ? cfg.min_mm : (y > cfg.max_mm ? cfg.max_mm : y);
        double w = y > cfg.T2_mm ? cfg.alpha2 : (y > cfg.T1_mm ? cfg.alpha1 : 1.0);
        double r;
        if (cfg.residual_in_mm) {
            double pred_mm = (preds_norm[i] + 1.0) * 0.5 * (cfg.max_mm - cfg.min_mm) + cfg.min_mm;
            r = pred_mm - yc;
        } else {
            double t = 2.0 * (yc - cfg.min_mm) / (cfg.max_mm - cfg.min_mm) - 1.0;
            r = preds_norm[i] - t;
        }
        double a = std::abs(r);
        double h = a <= cfg.huber_delta ? 0.5 * r * r
                                        : cfg.huber_delta * (a - 0.5 * cfg.huber_delta);
        acc += w * h;
    }
    return acc / static_cast<double>(preds_norm.size());
}

} // namespace

TEST_CASE("size normalization", "[losses]") {
    SizeLossConfig cfg;
    REQUIRE(normalize_size(0.5, cfg) == -1.0);
    REQUIRE(normalize_size(20.0, cfg) == 1.0);
    REQUIRE(std::abs(normalize_size(10.25, cfg)) < 1e-15);

    SECTION("round trip") {
        Rng rng(2);
        for (int i = 0; i < 1000; ++i) {
            double y = rng.uniform(0.5, 20.0);
            REQUIRE(std::abs(denormalize_size(normalize_size(y, cfg), cfg) - y) < 1e-12);
        }
    }

    SECTION("out-of-range values clamp and count") {
        long clamped = 0;
        REQUIRE(normalize_size(0.2, cfg, &clamped) == -1.0);
        REQUIRE(normalize_size(25.0, cfg, &clamped) == 1.0);
        REQUIRE(normalize_size(10.0, cfg, &clamped) ==
                normalize_size(10.0, cfg));
        REQUIRE(clamped == 2);
    }
}

TEST_CASE("huber scalar", "[losses]") {
    REQUIRE(huber_scalar(0.0, 1.0) == 0.0);
    REQUIRE(huber_scalar(0.5, 1.0) == 0.125);
    REQUIRE(huber_scalar(2.0, 1.0) == 1.5);
    REQUIRE(huber_scalar(-2.0, 1.0) == 1.5);
    REQUIRE(huber_scalar(1.0, 2.0) == 0.5);
}

TEST_CASE("size weights follow the thresholds", "[losses]") {
    SizeLossConfig cfg;
    REQUIRE(size_weight(4.0, cfg) == 1.0);
    REQUIRE(size_weight(5.0, cfg) == 1.0);   // boundary: not strictly above T1
    REQUIRE(size_weight(5.5, cfg) == 2.0);
    REQUIRE(size_weight(10.0, cfg) == 2.0);  // boundary: not strictly above T2
    REQUIRE(size_weight(10.5, cfg) == 3.0);
    REQUIRE(size_weight(19.0, cfg) == 3.0);
}

TEST_CASE("weighted huber basics", "[losses]") {
    SizeLossConfig cfg;

    SECTION("perfect predictions give zero loss") {
        std::vector<double> ys{3.0, 8.0, 15.0};
        std::vector<double> preds(3);
        for (int i = 0; i < 3; ++i) preds[static_cast<std::size_t>(i)] = normalize_size(ys[static_cast<std::size_t>(i)], cfg);
        auto loss = weighted_huber_loss(Tensor::from(preds, {3}), ys, cfg);
        REQUIRE(loss.item() == 0.0);
    }

    SECTION("single large target scales the residual by alpha2") {
        double y = 12.0;
        double t = normalize_size(y, cfg);
        auto loss = weighted_huber_loss(Tensor::from({t + 0.1}, {1}), {y}, cfg);
        REQUIRE(std::abs(loss.item() - 3.0 * huber_scalar(0.1, 1.0)) < 1e-15);
    }

    SECTION("unit weights reduce to plain huber") {
        SizeLossConfig flat = cfg;
        flat.alpha1 = 1.0;
        flat.alpha2 = 1.0;
        Rng rng(4);
        std::vector<double> ys(16), preds(16);
        double want = 0.0;
        for (int i = 0; i < 16; ++i) {
            ys[static_cast<std::size_t>(i)] = rng.uniform(0.5, 20.0);
            preds[static_cast<std::size_t>(i)] = rng.uniform(-1.0, 1.0);
            want += huber_scalar(preds[static_cast<std::size_t>(i)] -
                                 normalize_size(ys[static_cast<std::size_t>(i)], flat), 1.0);
        }
        auto loss = weighted_huber_loss(Tensor::from(preds, {16}), ys, flat);
        REQUIRE(std::abs(loss.item() - want / 16.0) < 1e-15);
    }

    SECTION("length mismatch is rejected") {
        REQUIRE_THROWS_AS(weighted_huber_loss(Tensor::zeros({2}), {1.0, 2.0, 3.0}, cfg),
                          std::invalid_argument);
    }

    SECTION("clamp counter reports out-of-range targets") {
        long clamped = 0;
        weighted_huber_loss(Tensor::zeros({3}), {0.1, 8.0, 30.0}, cfg, &clamped);
        REQUIRE(clamped == 2);
    }

    SECTION("invalid configs are rejected") {
        SizeLossConfig bad = cfg;
        bad.T2_mm = 4.0; // below T1
        REQUIRE_THROWS_AS(weighted_huber_loss(Tensor::zeros({1}), {1.0}, bad),
                          std::invalid_argument);
        bad = cfg;
        bad.alpha1 = 0.5;
        REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
        bad = cfg;
        bad.huber_delta = 0.0;
        REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}

TEST_CASE("weighted huber matches the straight-line reference", "[losses]") {
    SizeLossConfig cfg;
    Rng rng(71);
    const int batches = 250, per_batch = 40; // 10^4 pairs total
    for (int b = 0; b < batches; ++b) {
        std::vector<double> preds(per_batch), ys(per_batch);
        for (int i = 0; i < per_batch; ++i) {
            preds[static_cast<std::size_t>(i)] = rng.uniform(-1.5, 1.5);
            ys[static_cast<std::size_t>(i)] = rng.uniform(0.0, 22.0);
        }
        // force the threshold boundaries into every batch
        ys[0] = 5.0;
        ys[1] = 10.0;
        double want = reference_loss(preds, ys, cfg);
        double got = weighted_huber_loss(Tensor::from(preds, {per_batch}), ys, cfg).item();
        REQUIRE(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("boundary targets take the lighter weight", "[losses]") {
    SizeLossConfig cfg;
    // identical residual, weights must read 1 at y=5 and alpha1 at y=10
    double t5 = normalize_size(5.0, cfg), t10 = normalize_size(10.0, cfg);
    auto l5 = weighted_huber_loss(Tensor::from({t5 + 0.2}, {1}), {5.0}, cfg).item();
    auto l10 = weighted_huber_loss(Tensor::from({t10 + 0.2}, {1}), {10.0}, cfg).item();
    double h = huber_scalar(0.2, 1.0);
    REQUIRE(std::abs(l5 - h) < 1e-15);
    REQUIRE(std::abs(l10 - 2.0 * h) < 1e-15);
}

TEST_CASE("millimeter residual mode", "[losses]") {
    SizeLossConfig cfg;
    cfg.residual_in_mm = true;

    // prediction mapping to 12 mm against a 10 mm target: residual 2, weight 2
    double p = 2.0 * (12.0 - cfg.min_mm) / (cfg.max_mm - cfg.min_mm) - 1.0;
    auto loss = weighted_huber_loss(Tensor::from({p}, {1}), {10.0}, cfg);
    REQUIRE(std::abs(loss.item() - 2.0 * huber_scalar(2.0, 1.0)) < 1e-12);

    SECTION("matches the reference on random pairs") {
        Rng rng(72);
        std::vector<double> preds(32), ys(32);
        for (int i = 0; i < 32; ++i) {
            preds[static_cast<std::size_t>(i)] = rng.uniform(-1.0, 1.0);
            ys[static_cast<std::size_t>(i)] = rng.uniform(0.0, 22.0);
        }
        double want = reference_loss(preds, ys, cfg);
        double got = weighted_huber_loss(Tensor::from(preds, {32}), ys, cfg).item();
        REQUIRE(std::abs(got - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    }

    SECTION("clamp counter still fires") {
        long clamped = 0;
        weighted_huber_loss(Tensor::zeros({2}), {0.1, 12.0}, cfg, &clamped);
        REQUIRE(clamped == 1);
    }
}

TEST_CASE("loss gradients at the huber kink", "[losses]") {
    SizeLossConfig cfg;
    double y = 8.0;
    double t = normalize_size(y, cfg);
    // residual sits exactly at +delta; central differences straddle the kink
    std::vector<Tensor> params{Tensor::param("p", {t + cfg.huber_delta}, {1})};
    auto make_loss = [&]() { return weighted_huber_loss(params[0], {y}, cfg); };
    auto rep = gradcheck(make_loss, params, 1e-6);
    REQUIRE(rep.max_rel_err < 1e-5);
}

TEST_CASE("loss gradients away from the kink", "[losses]") {
    SizeLossConfig cfg;
    std::vector<double> ys{2.0, 7.0, 11.0, 19.0};
    std::vector<Tensor> params{Tensor::param("p", {-0.9, 0.1, 0.4, 0.95}, {4})};
    auto make_loss = [&]() { return weighted_huber_loss(params[0], ys, cfg); };
    REQUIRE(gradcheck(make_loss, params).max_rel_err < 1e-7);
}
