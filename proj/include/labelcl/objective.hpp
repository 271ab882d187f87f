#pragma once

// Per-class linear heads with sigmoid scores, binary cross-entropy over the
// batch, the weighted joint objective, and the optimizer: decoupled-weight-
// decay Adam driven by a one-cycle learning-rate schedule.

#include <cmath>
#include <cstdint>
#include <string>
#include <type_traits>
#include <vector>

#include "labelcl/autograd.hpp"
#include "labelcl/config.hpp"
#include "labelcl/rng.hpp"

namespace labelcl {

template <typename S>
struct ClassifierHeads {
    Var<S> w; // (L, d)
    Var<S> b; // (L)
};

template <typename S>
ClassifierHeads<S> make_classifier(ParamStore<S>& store, RngState& rng, int64_t num_classes, int64_t d) {
    Tensor<S> w({num_classes, d});
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& v : w.data) v = static_cast<S>(rng.normal() * sd);
    ClassifierHeads<S> heads;
    heads.w = store.add("cls.w", std::move(w));
    heads.b = store.add("cls.b", Tensor<S>::zeros({num_classes}));
    return heads;
}

// features: (n * L, d) rows in (image, class) row-major order.
// Score s_il = sigmoid(w_l . q_il + b_l); result shape (n, L).
template <typename S>
Var<S> classify(const ClassifierHeads<S>& heads, const Var<S>& features, int64_t n) {
    const int64_t num_classes = heads.w->value.rows();
    if (features->value.rows() != n * num_classes)
        throw ShapeError("classify: " + std::to_string(features->value.rows()) + " feature rows != " +
                         std::to_string(n) + " images x " + std::to_string(num_classes) + " classes");
    auto dots = sum_last(mul(features, tile_rows(heads.w, n)));
    return sigmoid(add_bias(reshape(dots, {n, num_classes}), heads.b));
}

template <typename S>
constexpr double score_clamp_epsilon() {
    if constexpr (std::is_same_v<S, double>)
        return 1e-12;
    else
        return 1e-7;
}

// Mean-over-images negative log likelihood; scores are clamped away from
// {0, 1} so the logs stay finite.
template <typename S>
Var<S> bce_loss(const Var<S>& scores, const std::vector<uint8_t>& targets) {
    if (scores->value.rank() != 2)
        throw ShapeError("bce: expected (images, classes) scores, got " + shape_str(scores->value.shape));
    const int64_t n = scores->value.rows();
    if (static_cast<int64_t>(targets.size()) != scores->value.numel())
        throw ShapeError("bce: target count " + std::to_string(targets.size()) + " != score count " +
                         std::to_string(scores->value.numel()));
    const double eps = score_clamp_epsilon<S>();
    Tensor<S> t(scores->value.shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = targets[static_cast<size_t>(i)] ? S(1) : S(0);
    auto y = constant(std::move(t));
    auto one_minus_y = scale(add_const(y, S(-1)), S(-1));
    auto s = clamp(scores, static_cast<S>(eps), static_cast<S>(1.0 - eps));
    auto one_minus_s = scale(add_const(s, S(-1)), S(-1));
    auto ll = add(mul(y, log_e(s)), mul(one_minus_y, log_e(one_minus_s)));
    return scale(sum_all(ll), static_cast<S>(-1.0 / static_cast<double>(n)));
}

// Weighted sum of the three components. Disabled components must arrive as
// zero constants; a non-finite component aborts training by name.
template <typename S>
Var<S> total_loss(const Var<S>& l_bce, const Var<S>& l_s2s, const Var<S>& l_p2s, const RunConfig& cfg) {
    auto check = [](const Var<S>& v, const char* name) {
        if (!std::isfinite(static_cast<double>(v->value[0])))
            throw NumericError(std::string("loss component ") + name + " is not finite; aborting training");
    };
    check(l_bce, "l_bce");
    check(l_s2s, "l_s2s");
    check(l_p2s, "l_p2s");
    auto out = scale(l_bce, static_cast<S>(cfg.w_bce));
    out = add(out, scale(l_s2s, static_cast<S>(cfg.w_sscl)));
    return add(out, scale(l_p2s, static_cast<S>(cfg.w_pscl)));
}

struct LossReport {
    int64_t epoch = 0;
    int64_t iteration = 0;
    double l_bce = 0.0, l_s2s = 0.0, l_p2s = 0.0, l_total = 0.0;
    double lr = 0.0;
};

// One-cycle schedule: linear rise from peak/25 to exactly peak over the
// warm-up steps, then cosine decay to peak/1e4 at the final step.
class OneCycleSchedule {
public:
    OneCycleSchedule(double peak, int64_t total_steps, double warmup_frac)
        : peak_(peak), total_(total_steps) {
        if (!(peak > 0.0)) throw ParamError("schedule: peak rate must be positive");
        if (total_steps < 1) throw ParamError("schedule: need at least one step");
        if (!(warmup_frac > 0.0 && warmup_frac < 1.0))
            throw ParamError("schedule: warm-up fraction must lie in (0, 1)");
        warm_ = std::max<int64_t>(1, std::llround(warmup_frac * static_cast<double>(total_steps)));
    }

    double lr_at(int64_t step) const {
        if (step < 0 || step >= total_)
            throw ContractError("schedule exhausted: step " + std::to_string(step) + " of " +
                                std::to_string(total_));
        const double start = peak_ / 25.0;
        if (step == warm_) return peak_;
        if (step < warm_)
            return start + (peak_ - start) * (static_cast<double>(step) / static_cast<double>(warm_));
        const double end = peak_ / 1e4;
        const double progress = static_cast<double>(step - warm_) / static_cast<double>(total_ - warm_);
        return end + (peak_ - end) * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
    }

    int64_t total_steps() const { return total_; }
    int64_t warm_steps() const { return warm_; }
    double peak() const { return peak_; }

private:
    double peak_;
    int64_t total_;
    int64_t warm_;
};

// Adam with decoupled weight decay. Moments are held and updated in double
// regardless of the training scalar type, so the update sequence is
// bit-reproducible and checkpoints round-trip exactly.
template <typename S>
class AdamW {
public:
    AdamW(std::vector<Var<S>> params, double weight_decay, OneCycleSchedule schedule,
          double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)), wd_(weight_decay), schedule_(schedule), beta1_(beta1),
          beta2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            if (!p->is_param) throw ContractError("optimizer given a non-parameter node");
            m_.emplace_back(static_cast<size_t>(p->value.numel()), 0.0);
            v_.emplace_back(static_cast<size_t>(p->value.numel()), 0.0);
        }
    }

    // Applies one update at the scheduled rate, then zeroes all gradients.
    // Returns the learning rate used.
    double step() {
        const double lr = schedule_.lr_at(step_count_);
        ++step_count_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            auto& p = *params_[pi];
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (int64_t i = 0; i < p.value.numel(); ++i) {
                const double g = static_cast<double>(p.grad[i]);
                m[static_cast<size_t>(i)] = beta1_ * m[static_cast<size_t>(i)] + (1.0 - beta1_) * g;
                v[static_cast<size_t>(i)] = beta2_ * v[static_cast<size_t>(i)] + (1.0 - beta2_) * g * g;
                const double mhat = m[static_cast<size_t>(i)] / bc1;
                const double vhat = v[static_cast<size_t>(i)] / bc2;
                const double x = static_cast<double>(p.value[i]);
                p.value[i] = static_cast<S>(x - lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * x));
                p.grad[i] = S(0);
            }
        }
        return lr;
    }

    int64_t step_count() const { return step_count_; }
    const OneCycleSchedule& schedule() const { return schedule_; }
    const std::vector<Var<S>>& params() const { return params_; }
    const std::vector<std::vector<double>>& moments_m() const { return m_; }
    const std::vector<std::vector<double>>& moments_v() const { return v_; }

    void restore(int64_t step_count, std::vector<std::vector<double>> m,
                 std::vector<std::vector<double>> v) {
        if (m.size() != m_.size() || v.size() != v_.size())
            throw ContractError("optimizer restore: slot count mismatch");
        for (size_t i = 0; i < m.size(); ++i)
            if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
                throw ContractError("optimizer restore: slot size mismatch");
        step_count_ = step_count;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    std::vector<Var<S>> params_;
    double wd_;
    OneCycleSchedule schedule_;
    double beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace labelcl
