#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatenet/rng.hpp"
#include "gatenet/tensor.hpp"

namespace gatenet {

enum class GateMode { embedding, channel };

inline const char* gate_mode_name(GateMode m) {
    return m == GateMode::embedding ? "embedding" : "channel";
}

struct GateStats {
    double mean = 0.0;
    double std = 0.0;
    std::vector<long> histogram; // 20 equal-width bins over [0,1]
};

// Learnable per-feature attenuation. Each score sigma(w_i) lies in (0,1) and
// scales its feature independently; scores are not normalized against each
// other. Raw weights carry group=att so the router can split parameter groups
// by tag alone.
class HardAttentionGate {
public:
    HardAttentionGate(std::string name, long n, GateMode mode, Rng& rng)
        : mode_(mode), n_(n) {
        if (n < 1)
            throw std::invalid_argument("HardAttentionGate: n must be >= 1, got " + std::to_string(n));
        // Xavier uniform with fan_in = fan_out = n
        double a = std::sqrt(6.0 / static_cast<double>(2 * n));
        std::vector<double> w(static_cast<std::size_t>(n));
        for (auto& v : w) v = rng.uniform(-a, a);
        raw_ = Tensor::param(std::move(name), std::move(w), {n}, Group::att);
    }

    // Wraps existing raw weights (checkpoint restore).
    HardAttentionGate(Tensor raw, GateMode mode) : raw_(std::move(raw)), mode_(mode) {
        if (raw_.rank() != 1)
            throw std::invalid_argument("HardAttentionGate: raw weights must be rank 1, got " +
                                        shape_str(raw_.shape()));
        n_ = raw_.dim(0);
    }

    Tensor& raw() { return raw_; }
    const Tensor& raw() const { return raw_; }
    GateMode mode() const { return mode_; }
    long size() const { return n_; }

    // Differentiable scores f = sigma(w).
    Tensor scores() const { return sigmoid(raw_); }

    // Hadamard product of scores and X. Embedding mode matches the last dim;
    // channel mode matches dim 1 of NCHW and broadcasts over spatial dims.
    Tensor apply(const Tensor& x) const {
        Tensor f = scores();
        if (mode_ == GateMode::embedding) {
            if (x.rank() < 1 || x.shape().back() != n_)
                throw std::invalid_argument(std::string("gate_apply: embedding mode with n=") +
                                            std::to_string(n_) + " cannot gate shape " +
                                            shape_str(x.shape()));
            return mul(x, f);
        }
        if (x.rank() != 4 || x.dim(1) != n_)
            throw std::invalid_argument(std::string("gate_apply: channel mode with n=") +
                                        std::to_string(n_) + " expects [N," + std::to_string(n_) +
                                        ",H,W], got " + shape_str(x.shape()));
        // [n] -> [n,1,1] aligns with the channel axis under trailing broadcast
        return mul(x, reshape(f, {n_, 1, 1}));
    }

    // Snapshot of the current score distribution; no graph participation.
    GateStats stats() const {
        GateStats s;
        s.histogram.assign(20, 0);
        double sum = 0.0, sq = 0.0;
        for (double w : raw_.data()) {
            double f = sigmoid_scalar(w);
            sum += f;
            sq += f * f;
            int bin = std::min(19, static_cast<int>(f * 20.0));
            ++s.histogram[static_cast<std::size_t>(bin)];
        }
        double n = static_cast<double>(n_);
        s.mean = sum / n;
        double var = sq / n - s.mean * s.mean;
        s.std = std::sqrt(std::max(var, 0.0));
        return s;
    }

private:
    Tensor raw_;
    GateMode mode_;
    long n_ = 0;
};

} // namespace gatenet
