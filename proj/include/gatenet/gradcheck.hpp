#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatenet/tensor.hpp"

namespace gatenet {

struct GradCheckEntry {
    std::string param;
    long index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    GradCheckEntry worst; // entry attaining max_rel_err
    std::vector<GradCheckEntry> per_param_worst;
};

// Central-difference comparison against the reverse-mode gradient.
// f must be a pure function of the parameter values; this is enforced by
// evaluating the baseline twice and requiring bitwise equality.
inline GradCheckReport finite_diff_check(const std::function<double(void)>& f,
                                         const ParamList& params,
                                         double eps = 1e-5) {
    if (!(eps >= 1e-7 && eps <= 1e-3))
        throw std::invalid_argument("finite_diff_check: eps " + std::to_string(eps) +
                                    " outside [1e-7, 1e-3]");
    double base1 = f();
    double base2 = f();
    if (base1 != base2)
        throw std::runtime_error("finite_diff_check: function is not deterministic (" +
                                 std::to_string(base1) + " vs " + std::to_string(base2) + ")");

    // Analytic gradients are read from the params; the caller runs backward
    // before calling (or uses gradcheck() below, which does it).
    GradCheckReport report;
    for (const Tensor& pc : params) {
        Tensor p = pc;
        GradCheckEntry worst;
        worst.param = p.name();
        std::vector<double> analytic = p.has_grad() ? p.grad() : std::vector<double>(p.data().size(), 0.0);
        for (long i = 0; i < p.numel(); ++i) {
            double saved = p.data()[static_cast<std::size_t>(i)];
            p.data()[static_cast<std::size_t>(i)] = saved + eps;
            double fp = f();
            p.data()[static_cast<std::size_t>(i)] = saved - eps;
            double fm = f();
            p.data()[static_cast<std::size_t>(i)] = saved;
            double numeric = (fp - fm) / (2.0 * eps);
            double a = analytic[static_cast<std::size_t>(i)];
            double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
            if (rel > worst.rel_err) {
                worst.index = i;
                worst.analytic = a;
                worst.numeric = numeric;
                worst.rel_err = rel;
            }
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst = {p.name(), i, a, numeric, rel};
            }
        }
        report.per_param_worst.push_back(worst);
    }
    return report;
}

// Convenience wrapper: builds the loss via `make_loss`, runs backward to fill
// parameter gradients, then compares against central differences of the same
// closure. Parameter gradients are zeroed first so stale values cannot leak in.
inline GradCheckReport gradcheck(const std::function<Tensor(void)>& make_loss,
                                 const ParamList& params,
                                 double eps = 1e-5) {
    for (const Tensor& pc : params) {
        Tensor p = pc;
        p.zero_grad();
    }
    Tensor loss = make_loss();
    backward(loss);
    auto f = [&make_loss]() { return make_loss().item(); };
    return finite_diff_check(f, params, eps);
}

} // namespace gatenet
