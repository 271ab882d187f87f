#pragma once

// Finite-difference verification of reverse-mode gradients.
//
// check_gradients() rebuilds the loss graph through a caller-supplied closure
// (which must read the live parameter values), runs one analytic backward
// pass, then probes every parameter element with central differences and
// reports the worst relative error per parameter. Intended to run at double
// precision; float probes drown in rounding noise.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "labelcl/autograd.hpp"
#include "labelcl/error.hpp"

namespace labelcl {

struct GradCheckEntry {
    std::string param;
    int64_t elements = 0;
    double max_rel_err = 0.0;
    int64_t worst_index = -1;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool pass(double tolerance) const { return max_rel_err <= tolerance; }
};

// rel(g, fd) = |g - fd| / max(1, |g|, |fd|)
inline double rel_gap(double g, double fd) {
    return std::fabs(g - fd) / std::max({1.0, std::fabs(g), std::fabs(fd)});
}

// corrupt_first_element is a self-test hook: it shifts one analytic gradient
// so callers can prove the detector fires.
template <typename S>
GradCheckReport check_gradients(const std::function<Var<S>()>& loss_fn,
                                const std::vector<Var<S>>& params,
                                double step_size = 1e-4,
                                bool corrupt_first_element = false) {
    if (step_size <= 0) throw ContractError("check_gradients: step_size must be positive");

    for (const auto& p : params)
        for (auto& g : p->grad.data) g = S(0);
    {
        auto loss = loss_fn();
        if (loss->value.numel() != 1)
            throw ContractError("check_gradients: loss_fn must return a scalar, got shape " +
                                shape_str(loss->value.shape));
        backward(loss);
    }
    std::vector<Tensor<S>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p->grad);
    if (corrupt_first_element && !params.empty() && params[0]->grad.numel() > 0)
        analytic[0][0] += S(1);

    auto eval = [&](const Var<S>& p, int64_t i, double delta) -> double {
        const S orig = p->value[i];
        p->value[i] = static_cast<S>(static_cast<double>(orig) + delta);
        double out;
        try {
            out = static_cast<double>(loss_fn()->value[0]);
        } catch (const Error& e) {
            p->value[i] = orig;
            throw NumericError("gradient probe failed at parameter '" + p->name + "' element " +
                               std::to_string(i) + ": " + e.what());
        }
        p->value[i] = orig;
        if (!std::isfinite(out))
            throw NumericError("gradient probe produced non-finite loss at parameter '" + p->name +
                               "' element " + std::to_string(i));
        return out;
    };

    GradCheckReport report;
    for (size_t k = 0; k < params.size(); ++k) {
        const auto& p = params[k];
        GradCheckEntry entry;
        entry.param = p->name;
        entry.elements = p->value.numel();
        for (int64_t i = 0; i < p->value.numel(); ++i) {
            const double fp = eval(p, i, step_size);
            const double fm = eval(p, i, -step_size);
            const double fd = (fp - fm) / (2.0 * step_size);
            const double g = static_cast<double>(analytic[k][i]);
            const double rel = rel_gap(g, fd);
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
                entry.analytic_at_worst = g;
                entry.numeric_at_worst = fd;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

} // namespace labelcl
