#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatenet/tensor.hpp"

namespace gatenet {

// Size-weighted regression loss settings. Thresholds and min/max are in
// millimeters; predictions live in the normalized [-1, 1] range.
struct SizeLossConfig {
    double T1_mm = 5.0;
    double alpha1 = 2.0;
    double T2_mm = 10.0;
    double alpha2 = 3.0;
    double huber_delta = 1.0;
    double min_mm = 0.5;
    double max_mm = 20.0;
    // When true, residuals are formed in millimeter space instead of
    // normalized space (weights always come from millimeter targets).
    bool residual_in_mm = false;

    void validate() const {
        if (!(T1_mm > 0.0 && T1_mm < T2_mm))
            throw std::invalid_argument("SizeLossConfig: need 0 < T1 < T2, got T1=" +
                                        std::to_string(T1_mm) + " T2=" + std::to_string(T2_mm));
        if (alpha1 < 1.0 || alpha2 < 1.0)
            throw std::invalid_argument("SizeLossConfig: weights must be >= 1");
        if (!(min_mm < max_mm))
            throw std::invalid_argument("SizeLossConfig: need min_mm < max_mm");
        if (!(huber_delta > 0.0))
            throw std::invalid_argument("SizeLossConfig: huber_delta must be positive");
    }
};

// Affine map [min_mm, max_mm] -> [-1, +1]. Out-of-range inputs clamp; the
// caller can count clamps via the optional counter.
inline double normalize_size(double y_mm, const SizeLossConfig& cfg, long* clamped = nullptr) {
    double y = y_mm;
    if (y < cfg.min_mm || y > cfg.max_mm) {
        if (clamped) ++*clamped;
        y = std::clamp(y, cfg.min_mm, cfg.max_mm);
    }
    return 2.0 * (y - cfg.min_mm) / (cfg.max_mm - cfg.min_mm) - 1.0;
}

inline double denormalize_size(double y_norm, const SizeLossConfig& cfg) {
    return (y_norm + 1.0) * 0.5 * (cfg.max_mm - cfg.min_mm) + cfg.min_mm;
}

inline double huber_scalar(double r, double delta) {
    double a = std::abs(r);
    return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

// Piecewise weight from the millimeter target: 1 below T1 (inclusive),
// alpha1 on (T1, T2], alpha2 above T2.
inline double size_weight(double y_mm, const SizeLossConfig& cfg) {
    if (y_mm > cfg.T2_mm) return cfg.alpha2;
    if (y_mm > cfg.T1_mm) return cfg.alpha1;
    return 1.0;
}

// Mean over the batch of size_weight(y_mm) * Huber(residual). Residuals are
// formed in normalized space by default; targets enter in millimeters and are
// normalized internally.
inline Tensor weighted_huber_loss(const Tensor& preds_norm,
                                  const std::vector<double>& targets_mm,
                                  const SizeLossConfig& cfg,
                                  long* clamped = nullptr) {
    cfg.validate();
    long n = preds_norm.numel();
    if (static_cast<long>(targets_mm.size()) != n)
        throw std::invalid_argument("weighted_huber_loss: " + std::to_string(targets_mm.size()) +
                                    " targets for " + std::to_string(n) + " predictions");
    Shape s = preds_norm.shape();
    std::vector<double> tgt(static_cast<std::size_t>(n));
    std::vector<double> wts(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        double y = targets_mm[static_cast<std::size_t>(i)];
        if (cfg.residual_in_mm) {
            if ((y < cfg.min_mm || y > cfg.max_mm) && clamped) ++*clamped;
            tgt[static_cast<std::size_t>(i)] = std::clamp(y, cfg.min_mm, cfg.max_mm);
        } else {
            tgt[static_cast<std::size_t>(i)] = normalize_size(y, cfg, clamped);
        }
        wts[static_cast<std::size_t>(i)] = size_weight(y, cfg);
    }
    Tensor pred = preds_norm;
    if (cfg.residual_in_mm) {
        // map predictions back to millimeters so the residual lives there
        Tensor half = Tensor::full(s, 1.0);
        pred = add(scale(add(pred, half), 0.5 * (cfg.max_mm - cfg.min_mm)),
                   Tensor::full(s, cfg.min_mm));
    }
    Tensor residual = sub(pred, Tensor::from(std::move(tgt), s));
    Tensor weighted = mul(huber_ew(residual, cfg.huber_delta), Tensor::from(std::move(wts), s));
    return mean(weighted);
}

} // namespace gatenet
