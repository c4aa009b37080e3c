#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatenet/layers.hpp"
#include "gatenet/tensor.hpp"

namespace gatenet {

// ---------------------------------------------------------------------------
// Gradient clipping
// ---------------------------------------------------------------------------

inline double grad_global_norm(const GradientMap& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (double v : g) sq += v * v;
    return std::sqrt(sq);
}

// Global L2 clipping over the whole map: if the joint norm exceeds th, every
// entry is scaled by th/norm, preserving direction.
inline GradientMap clip_gradients(const GradientMap& grads, double th) {
    if (!(th > 0.0))
        throw std::invalid_argument("clip_gradients: threshold must be positive, got " +
                                    std::to_string(th));
    double norm = grad_global_norm(grads);
    if (norm <= th) return grads;
    double s = th / norm;
    GradientMap out = grads;
    for (auto& [name, g] : out)
        for (double& v : g) v *= s;
    return out;
}

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

struct ScheduleState {
    double eta_min = 0.0;
    double eta_max = 1e-3;
    long T_i = 10;   // current cycle length
    long T_cur = 0;  // position within the cycle
    long t_mult = 2; // cycle-length multiplier applied at each restart
};

inline double cosine_warm_restart_lr(const ScheduleState& s) {
    if (s.T_i < 1 || s.T_cur < 0 || s.T_cur > s.T_i)
        throw std::invalid_argument("cosine_warm_restart_lr: T_cur " + std::to_string(s.T_cur) +
                                    " outside [0, " + std::to_string(s.T_i) + "]");
    return s.eta_min + 0.5 * (s.eta_max - s.eta_min) *
                           (1.0 + std::cos(M_PI * static_cast<double>(s.T_cur) /
                                           static_cast<double>(s.T_i)));
}

// One step forward; a cycle ends at T_cur == T_i (where lr == eta_min) and the
// next step restarts at T_cur = 0 with the cycle length multiplied.
inline void schedule_advance(ScheduleState& s) {
    if (s.T_cur == s.T_i) {
        s.T_cur = 0;
        s.T_i *= s.t_mult;
    } else {
        ++s.T_cur;
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct OptimConfig {
    double lr = 1e-3;
    double weight_decay = 1e-5;
    double clip_threshold = 8.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Bare theta -= lr * g updates instead of Adam; exists for hand-checkable
    // trajectories.
    bool plain_sgd = false;
    bool use_schedule = false;
    double eta_min = 0.0;
    long schedule_T0 = 10;
    long schedule_t_mult = 2;
};

// One named parameter collection with its own learning rate, clip threshold,
// Adam state, and schedule. Groups never share state.
class ParamGroup {
public:
    struct Applied {
        double lr = 0.0;
        double pre_clip_norm = 0.0;
        double post_clip_norm = 0.0;
    };

    ParamGroup(std::string id, ParamList params, OptimConfig cfg)
        : id_(std::move(id)), params_(std::move(params)), cfg_(cfg) {
        sched_.eta_min = cfg.eta_min;
        sched_.eta_max = cfg.lr;
        sched_.T_i = cfg.schedule_T0;
        sched_.t_mult = cfg.schedule_t_mult;
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    const std::string& id() const { return id_; }
    const ParamList& params() const { return params_; }
    const OptimConfig& config() const { return cfg_; }
    bool empty() const { return params_.empty(); }
    long step_count() const { return t_; }
    const ScheduleState& schedule() const { return sched_; }

    double current_lr() const {
        return cfg_.use_schedule ? cosine_warm_restart_lr(sched_) : cfg_.lr;
    }

    // Subset of `grads` belonging to this group; parameters absent from the
    // map get zero gradients.
    GradientMap restrict(const GradientMap& grads) const {
        GradientMap out;
        for (const auto& p : params_) {
            auto it = grads.find(p.name());
            out[p.name()] = it != grads.end() ? it->second
                                              : std::vector<double>(p.data().size(), 0.0);
        }
        return out;
    }

    // Clip, then update every parameter in the group. Returns the norms and lr
    // actually used. Advances the schedule by one step.
    Applied apply(const GradientMap& grads) {
        Applied a;
        a.lr = current_lr();
        GradientMap mine = restrict(grads);
        a.pre_clip_norm = grad_global_norm(mine);
        GradientMap clipped = clip_gradients(mine, cfg_.clip_threshold);
        a.post_clip_norm = grad_global_norm(clipped);
        ++t_;
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Tensor p = params_[pi];
            const std::vector<double>& g = clipped.at(p.name());
            if (g.size() != p.data().size())
                throw std::runtime_error("ParamGroup: gradient length " + std::to_string(g.size()) +
                                         " != parameter " + p.name() + " length " +
                                         std::to_string(p.data().size()));
            auto& data = p.data();
            double decay = 1.0 - a.lr * cfg_.weight_decay;
            if (cfg_.plain_sgd) {
                for (std::size_t i = 0; i < data.size(); ++i)
                    data[i] = data[i] * decay - a.lr * g[i];
            } else {
                double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
                double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
                auto& m = m_[pi];
                auto& v = v_[pi];
                for (std::size_t i = 0; i < data.size(); ++i) {
                    m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                    v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                    double mhat = m[i] / bc1;
                    double vhat = v[i] / bc2;
                    data[i] = data[i] * decay - a.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                }
            }
        }
        if (cfg_.use_schedule) schedule_advance(sched_);
        return a;
    }

private:
    std::string id_;
    ParamList params_;
    OptimConfig cfg_;
    ScheduleState sched_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Training steps
// ---------------------------------------------------------------------------

using LossFn = std::function<Tensor(const Tensor& preds)>;

struct TrainStepReport {
    double loss_att = std::numeric_limits<double>::quiet_NaN();
    double loss_main = std::numeric_limits<double>::quiet_NaN();
    double pre_clip_att = 0.0, post_clip_att = 0.0;
    double pre_clip_main = 0.0, post_clip_main = 0.0;
    double lr_att = 0.0, lr_main = 0.0;
};

namespace detail {
inline double checked_loss(const Tensor& loss, const char* phase) {
    double v = loss.item();
    if (!std::isfinite(v))
        throw std::runtime_error(std::string("train step: non-finite loss in ") + phase +
                                 " phase (" + std::to_string(v) + ")");
    return v;
}
} // namespace detail

// Dual-phase step: attention parameters move first on their own forward pass;
// the main parameters then see a fresh forward through the already-updated
// gates. Both phases consume the same batch.
inline TrainStepReport gr_train_step(Model& model, const Tensor& x,
                                     ParamGroup& att, ParamGroup& main,
                                     const LossFn& loss_att, const LossFn& loss_main) {
    if (att.empty())
        throw std::invalid_argument(
            "gr_train_step: attention group is empty; use standard_train_step for ungated models");
    TrainStepReport r;

    zero_grads(model.params());
    Tensor la = loss_att(model.forward(x));
    r.loss_att = detail::checked_loss(la, "att");
    GradientMap ga = backward(la);
    auto aa = att.apply(ga);
    r.pre_clip_att = aa.pre_clip_norm;
    r.post_clip_att = aa.post_clip_norm;
    r.lr_att = aa.lr;

    zero_grads(model.params());
    Tensor lm = loss_main(model.forward(x));
    r.loss_main = detail::checked_loss(lm, "main");
    GradientMap gm = backward(lm);
    auto am = main.apply(gm);
    r.pre_clip_main = am.pre_clip_norm;
    r.post_clip_main = am.post_clip_norm;
    r.lr_main = am.lr;
    return r;
}

// Single-phase baseline: one forward/backward, one group covering the model.
inline TrainStepReport standard_train_step(Model& model, const Tensor& x,
                                           ParamGroup& group, const LossFn& loss_fn) {
    TrainStepReport r;
    zero_grads(model.params());
    Tensor l = loss_fn(model.forward(x));
    r.loss_main = detail::checked_loss(l, "main");
    GradientMap g = backward(l);
    auto a = group.apply(g);
    r.pre_clip_main = a.pre_clip_norm;
    r.post_clip_main = a.post_clip_norm;
    r.lr_main = a.lr;
    return r;
}

} // namespace gatenet
