#pragma once

// Unified-embedding-space machinery: a shared two-layer projection head, a
// per-class FIFO memory bank of projected activated vectors, a screened
// streaming prototype bank over raw per-class features, and the two
// contrastive losses (sample-to-sample and prototype-to-sample).
//
// Stored bank/prototype values are plain numbers: they enter loss graphs as
// constants, so gradients flow only through current-batch vectors and the
// projection head.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <vector>

#include "labelcl/autograd.hpp"
#include "labelcl/config.hpp"
#include "labelcl/rng.hpp"
#include "labelcl/tensor.hpp"

namespace labelcl {

template <typename S>
struct ProjectionHead {
    Var<S> w1, b1, w2, b2;
    Activation act = Activation::Relu;
    bool normalize = true;
};

template <typename S>
ProjectionHead<S> make_projection_head(ParamStore<S>& store, RngState& rng, int d_in, int d_hidden,
                                       int d_out, Activation act, bool normalize) {
    auto init = [&](const std::string& name, int64_t rows, int64_t cols) {
        Tensor<S> t({rows, cols});
        const double sd = 1.0 / std::sqrt(static_cast<double>(rows));
        for (auto& v : t.data) v = static_cast<S>(rng.normal() * sd);
        return store.add(name, std::move(t));
    };
    ProjectionHead<S> head;
    head.w1 = init("proj.w1", d_in, d_hidden);
    head.b1 = store.add("proj.b1", Tensor<S>::zeros({d_hidden}));
    head.w2 = init("proj.w2", d_hidden, d_out);
    head.b2 = store.add("proj.b2", Tensor<S>::zeros({d_out}));
    head.act = act;
    head.normalize = normalize;
    return head;
}

// Affine -> activation -> affine per row; optional unit-normalization.
template <typename S>
Var<S> project_rows(const ProjectionHead<S>& head, const Var<S>& x) {
    auto h = add_bias(matmul(x, head.w1), head.b1);
    h = head.act == Activation::Gelu ? gelu(h) : relu(h);
    auto out = add_bias(matmul(h, head.w2), head.b2);
    return head.normalize ? l2_normalize_rows(out) : out;
}

// Projected batch: rows are (image, class) pairs in row-major order.
template <typename S>
struct ProjectedBatch {
    Var<S> x;                     // (n * num_classes, d')
    std::vector<uint8_t> y;       // n * num_classes, row-major
    int64_t n = 0;
    int64_t num_classes = 0;
    std::vector<int64_t> image_ids; // n entries
};

template <typename S>
struct BankEntry {
    std::vector<S> vec;
    int64_t image_id = 0;
    uint64_t stamp = 0; // global push counter; strictly increasing, so recency is a total order
};

template <typename S>
struct SnapshotEntry {
    std::vector<S> vec;
    int64_t cls = 0;
    int64_t image_id = 0;
};

template <typename S>
class MemoryBank {
public:
    MemoryBank(int64_t num_classes, int64_t capacity, int64_t dim)
        : capacity_(capacity), dim_(dim), buffers_(static_cast<size_t>(num_classes)) {
        if (num_classes < 1 || capacity < 1 || dim < 1)
            throw ParamError("memory bank: classes, capacity, and width must be positive");
    }

    // Gradient-free copies of every activated row, oldest-first eviction.
    void push(const ProjectedBatch<S>& batch) {
        if (batch.x->value.cols() != dim_)
            throw ShapeError("bank push: vector width " + std::to_string(batch.x->value.cols()) +
                             " != bank width " + std::to_string(dim_));
        for (int64_t i = 0; i < batch.n; ++i)
            for (int64_t j = 0; j < batch.num_classes; ++j) {
                if (!batch.y[static_cast<size_t>(i * batch.num_classes + j)]) continue;
                BankEntry<S> e;
                e.vec.resize(static_cast<size_t>(dim_));
                for (int64_t c = 0; c < dim_; ++c)
                    e.vec[static_cast<size_t>(c)] = batch.x->value.at(i * batch.num_classes + j, c);
                e.image_id = batch.image_ids[static_cast<size_t>(i)];
                e.stamp = next_stamp_++;
                auto& buf = buffers_[static_cast<size_t>(j)];
                buf.push_back(std::move(e));
                if (static_cast<int64_t>(buf.size()) > capacity_) buf.pop_front();
            }
    }

    // Most recent `cap_total` entries across all classes (global recency by
    // push stamp), returned most-recent-first as gradient-free copies.
    std::vector<SnapshotEntry<S>> snapshot(int64_t cap_total) const {
        std::vector<std::pair<uint64_t, std::pair<int64_t, size_t>>> order; // stamp -> (class, slot)
        for (size_t j = 0; j < buffers_.size(); ++j)
            for (size_t s = 0; s < buffers_[j].size(); ++s)
                order.push_back({buffers_[j][s].stamp, {static_cast<int64_t>(j), s}});
        std::sort(order.begin(), order.end(),
                  [](const auto& a, const auto& b) { return a.first > b.first; });
        if (cap_total < static_cast<int64_t>(order.size())) order.resize(static_cast<size_t>(std::max<int64_t>(cap_total, 0)));
        std::vector<SnapshotEntry<S>> out;
        out.reserve(order.size());
        for (const auto& [stamp, loc] : order) {
            (void)stamp;
            const auto& e = buffers_[static_cast<size_t>(loc.first)][loc.second];
            out.push_back({e.vec, loc.first, e.image_id});
        }
        return out;
    }

    int64_t size(int64_t cls) const { return static_cast<int64_t>(buffers_[static_cast<size_t>(cls)].size()); }
    int64_t num_classes() const { return static_cast<int64_t>(buffers_.size()); }
    int64_t capacity() const { return capacity_; }
    int64_t dim() const { return dim_; }
    uint64_t next_stamp() const { return next_stamp_; }
    const std::deque<BankEntry<S>>& entries(int64_t cls) const { return buffers_[static_cast<size_t>(cls)]; }

    // Checkpoint restore: replaces all contents.
    void restore(uint64_t next_stamp, std::vector<std::deque<BankEntry<S>>> buffers) {
        if (buffers.size() != buffers_.size())
            throw ContractError("bank restore: class count mismatch");
        buffers_ = std::move(buffers);
        next_stamp_ = next_stamp;
    }

private:
    int64_t capacity_, dim_;
    std::vector<std::deque<BankEntry<S>>> buffers_;
    uint64_t next_stamp_ = 0;
};

namespace detail {

template <typename S>
Tensor<S> snapshot_matrix(const std::vector<SnapshotEntry<S>>& snap, int64_t dim) {
    Tensor<S> m({static_cast<int64_t>(snap.size()), dim});
    for (size_t r = 0; r < snap.size(); ++r) {
        if (static_cast<int64_t>(snap[r].vec.size()) != dim)
            throw ShapeError("snapshot entry width mismatch");
        for (int64_t c = 0; c < dim; ++c) m.at(static_cast<int64_t>(r), c) = snap[r].vec[static_cast<size_t>(c)];
    }
    return m;
}

} // namespace detail

// Sample-to-sample contrastive loss. Anchors are the current batch's
// activated rows; the candidate set adds the snapshot. Per anchor with
// positive set P inside candidates-minus-self A:
//   term = logsumexp_{a in A}(sim/tau) - (1/|P|) * sum_{p in P} sim_p/tau,
// zero when P is empty; the result is the sum over anchors.
template <typename S>
Var<S> sscl_loss(const ProjectedBatch<S>& batch, const std::vector<SnapshotEntry<S>>& snap,
                 double tau) {
    if (!(tau > 0.0)) throw ParamError("temperature must be positive, got " + std::to_string(tau));
    const int64_t dim = batch.x->value.cols();
    std::vector<int64_t> act;
    for (int64_t r = 0; r < batch.x->value.rows(); ++r)
        if (batch.y[static_cast<size_t>(r)]) act.push_back(r);
    const int64_t a_count = static_cast<int64_t>(act.size());
    if (a_count == 0) return constant(Tensor<S>::scalar(S(0)));

    const int64_t m_count = static_cast<int64_t>(snap.size());
    auto x_act = select_rows(batch.x, act);
    Var<S> x_all = x_act;
    if (m_count > 0)
        x_all = concat_rows<S>({x_act, constant(detail::snapshot_matrix(snap, dim))});
    auto sims = scale(matmul(x_act, transpose(x_all)), static_cast<S>(1.0 / tau));

    const int64_t cols = a_count + m_count;
    auto col_class = [&](int64_t c) {
        return c < a_count ? act[static_cast<size_t>(c)] % batch.num_classes
                           : snap[static_cast<size_t>(c - a_count)].cls;
    };
    Tensor<S> den_mask = Tensor<S>::full({a_count, cols}, S(1));
    Tensor<S> pos_mask = Tensor<S>::zeros({a_count, cols});
    Tensor<S> inv_counts = Tensor<S>::zeros({a_count});
    Tensor<S> weights = Tensor<S>::zeros({a_count});
    for (int64_t i = 0; i < a_count; ++i) {
        den_mask.at(i, i) = S(0); // exclude self
        const int64_t cls = act[static_cast<size_t>(i)] % batch.num_classes;
        int64_t positives = 0;
        for (int64_t c = 0; c < cols; ++c) {
            if (c == i || col_class(c) != cls) continue;
            pos_mask.at(i, c) = S(1);
            ++positives;
        }
        if (positives > 0) {
            inv_counts[i] = static_cast<S>(1.0 / static_cast<double>(positives));
            weights[i] = S(1);
        }
    }
    auto lse_den = masked_lse_rows(sims, den_mask);
    auto pos_mean = mul(sum_last(mul(sims, constant(std::move(pos_mask)))), constant(std::move(inv_counts)));
    return sum_all(mul(constant(std::move(weights)), sub(lse_den, pos_mean)));
}

// Screened streaming prototype bank over raw (pre-projection) per-class
// feature vectors. Accumulates in double; the derived mean is clamped into
// the per-coordinate [min, max] envelope of its contributors so the
// convex-combination bound holds exactly despite rounding.
template <typename S>
class PrototypeBank {
public:
    PrototypeBank(int64_t num_classes, int64_t dim)
        : num_classes_(num_classes), dim_(dim), sums_(static_cast<size_t>(num_classes * dim), 0.0),
          cmin_(static_cast<size_t>(num_classes * dim), 0.0),
          cmax_(static_cast<size_t>(num_classes * dim), 0.0),
          counts_(static_cast<size_t>(num_classes), 0),
          display_(static_cast<size_t>(num_classes * dim), 0.0),
          display_defined_(static_cast<size_t>(num_classes), 0),
          display_counts_(static_cast<size_t>(num_classes), 0) {
        if (num_classes < 1 || dim < 1) throw ParamError("prototype bank: classes and width must be positive");
    }

    // Accepts (i, j) when y_ij = 1 AND s_ij >= epsilon; adds a gradient-free
    // copy of the raw feature row into the class sum.
    void update(const Tensor<S>& features, const std::vector<uint8_t>& y, const Tensor<S>& scores,
                int64_t n, double epsilon) {
        if (features.rows() != n * num_classes_ || features.cols() != dim_)
            throw ShapeError("prototype update: features shape " + shape_str(features.shape) + " unexpected");
        if (scores.numel() != n * num_classes_)
            throw ShapeError("prototype update: scores size mismatch");
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < num_classes_; ++j) {
                const int64_t row = i * num_classes_ + j;
                if (!y[static_cast<size_t>(row)]) continue;
                if (static_cast<double>(scores[row]) < epsilon) continue;
                const bool first = counts_[static_cast<size_t>(j)] == 0;
                for (int64_t c = 0; c < dim_; ++c) {
                    const size_t k = static_cast<size_t>(j * dim_ + c);
                    const double v = static_cast<double>(features.at(row, c));
                    sums_[k] += v;
                    if (first) {
                        cmin_[k] = v;
                        cmax_[k] = v;
                    } else {
                        cmin_[k] = std::min(cmin_[k], v);
                        cmax_[k] = std::max(cmax_[k], v);
                    }
                }
                ++counts_[static_cast<size_t>(j)];
            }
    }

    bool defined(int64_t cls) const { return counts_[static_cast<size_t>(cls)] > 0; }
    int64_t count(int64_t cls) const { return counts_[static_cast<size_t>(cls)]; }
    int64_t num_classes() const { return num_classes_; }
    int64_t dim() const { return dim_; }

    std::vector<int64_t> defined_classes() const {
        std::vector<int64_t> out;
        for (int64_t j = 0; j < num_classes_; ++j)
            if (defined(j)) out.push_back(j);
        return out;
    }

    // Streaming mean for class j, clamped into the contributors' envelope.
    std::vector<double> prototype(int64_t cls) const {
        if (!defined(cls)) throw ContractError("prototype requested for undefined class " + std::to_string(cls));
        std::vector<double> out(static_cast<size_t>(dim_));
        const double inv = 1.0 / static_cast<double>(counts_[static_cast<size_t>(cls)]);
        for (int64_t c = 0; c < dim_; ++c) {
            const size_t k = static_cast<size_t>(cls * dim_ + c);
            out[static_cast<size_t>(c)] = std::clamp(sums_[k] * inv, cmin_[k], cmax_[k]);
        }
        return out;
    }

    // (defined count, dim) matrix of current prototypes in defined-class order.
    Tensor<S> defined_matrix() const {
        auto classes = defined_classes();
        Tensor<S> m({static_cast<int64_t>(classes.size()), dim_});
        for (size_t r = 0; r < classes.size(); ++r) {
            auto p = prototype(classes[r]);
            for (int64_t c = 0; c < dim_; ++c) m.at(static_cast<int64_t>(r), c) = static_cast<S>(p[static_cast<size_t>(c)]);
        }
        return m;
    }

    // Epoch boundary: classes that accumulated anything overwrite their
    // display/export copy with the final streaming mean, then the streaming
    // state restarts empty. Classes untouched this epoch keep the old copy.
    void reset_epoch() {
        for (int64_t j = 0; j < num_classes_; ++j) {
            if (!defined(j)) continue;
            auto p = prototype(j);
            for (int64_t c = 0; c < dim_; ++c) display_[static_cast<size_t>(j * dim_ + c)] = p[static_cast<size_t>(c)];
            display_defined_[static_cast<size_t>(j)] = 1;
            display_counts_[static_cast<size_t>(j)] = counts_[static_cast<size_t>(j)];
        }
        std::fill(sums_.begin(), sums_.end(), 0.0);
        std::fill(cmin_.begin(), cmin_.end(), 0.0);
        std::fill(cmax_.begin(), cmax_.end(), 0.0);
        std::fill(counts_.begin(), counts_.end(), 0);
    }

    // Export view: the live streaming mean when the class has contributions
    // this epoch, otherwise the retained copy from earlier epochs.
    struct ExportRow {
        bool defined = false;
        int64_t count = 0;
        std::vector<double> values;
    };
    ExportRow export_row(int64_t cls) const {
        ExportRow row;
        if (defined(cls)) {
            row.defined = true;
            row.count = counts_[static_cast<size_t>(cls)];
            row.values = prototype(cls);
        } else if (display_defined_[static_cast<size_t>(cls)]) {
            row.defined = true;
            row.count = display_counts_[static_cast<size_t>(cls)];
            row.values.assign(display_.begin() + cls * dim_, display_.begin() + (cls + 1) * dim_);
        }
        return row;
    }

    // Raw state accessors for checkpointing.
    const std::vector<double>& raw_sums() const { return sums_; }
    const std::vector<double>& raw_min() const { return cmin_; }
    const std::vector<double>& raw_max() const { return cmax_; }
    const std::vector<int64_t>& raw_counts() const { return counts_; }
    const std::vector<double>& raw_display() const { return display_; }
    const std::vector<uint8_t>& raw_display_defined() const { return display_defined_; }
    const std::vector<int64_t>& raw_display_counts() const { return display_counts_; }
    void restore(std::vector<double> sums, std::vector<double> cmin, std::vector<double> cmax,
                 std::vector<int64_t> counts, std::vector<double> display,
                 std::vector<uint8_t> display_defined, std::vector<int64_t> display_counts) {
        if (sums.size() != sums_.size() || counts.size() != counts_.size() ||
            cmin.size() != cmin_.size() || cmax.size() != cmax_.size() ||
            display.size() != display_.size() || display_defined.size() != display_defined_.size() ||
            display_counts.size() != display_counts_.size())
            throw ContractError("prototype restore: size mismatch");
        sums_ = std::move(sums);
        cmin_ = std::move(cmin);
        cmax_ = std::move(cmax);
        counts_ = std::move(counts);
        display_ = std::move(display);
        display_defined_ = std::move(display_defined);
        display_counts_ = std::move(display_counts);
    }

private:
    int64_t num_classes_, dim_;
    std::vector<double> sums_, cmin_, cmax_;
    std::vector<int64_t> counts_;
    std::vector<double> display_;
    std::vector<uint8_t> display_defined_;
    std::vector<int64_t> display_counts_;
};

template <typename S>
struct PrototypeProjection {
    Var<S> cout;                  // (defined count, d'), empty Var when none defined
    std::vector<int64_t> classes; // class id per row
};

// Projects each defined prototype through the shared head. Gradients reach
// the head parameters only; the accumulated sums enter as constants.
template <typename S>
PrototypeProjection<S> project_prototypes(const ProjectionHead<S>& head, const PrototypeBank<S>& bank) {
    PrototypeProjection<S> out;
    out.classes = bank.defined_classes();
    if (out.classes.empty()) return out;
    out.cout = project_rows(head, constant(bank.defined_matrix()));
    return out;
}

// Prototype-to-sample contrastive loss. Per defined class j with prototype
// row c_j: positives are activated class-j vectors (batch plus snapshot),
// negatives are non-activated class-j batch vectors;
//   term = logsumexp(all sims/tau) - logsumexp(positive sims/tau),
// zero when the positive set is empty; summed over defined classes.
template <typename S>
Var<S> pscl_loss(const PrototypeProjection<S>& protos, const ProjectedBatch<S>& batch,
                 const std::vector<SnapshotEntry<S>>& snap, double tau) {
    if (!(tau > 0.0)) throw ParamError("temperature must be positive, got " + std::to_string(tau));
    const int64_t rows = static_cast<int64_t>(protos.classes.size());
    if (rows == 0) return constant(Tensor<S>::scalar(S(0)));

    const int64_t dim = batch.x->value.cols();
    const int64_t batch_cols = batch.x->value.rows();
    const int64_t m_count = static_cast<int64_t>(snap.size());
    Var<S> x_all = batch.x;
    if (m_count > 0)
        x_all = concat_rows<S>({batch.x, constant(detail::snapshot_matrix(snap, dim))});
    auto sims = scale(matmul(protos.cout, transpose(x_all)), static_cast<S>(1.0 / tau));

    const int64_t cols = batch_cols + m_count;
    Tensor<S> den_mask = Tensor<S>::zeros({rows, cols});
    Tensor<S> pos_mask = Tensor<S>::zeros({rows, cols});
    Tensor<S> weights = Tensor<S>::zeros({rows});
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t cls = protos.classes[static_cast<size_t>(r)];
        bool any_pos = false;
        for (int64_t c = 0; c < batch_cols; ++c) {
            if (c % batch.num_classes != cls) continue;
            den_mask.at(r, c) = S(1);
            if (batch.y[static_cast<size_t>(c)]) {
                pos_mask.at(r, c) = S(1);
                any_pos = true;
            }
        }
        for (int64_t s = 0; s < m_count; ++s) {
            if (snap[static_cast<size_t>(s)].cls != cls) continue;
            den_mask.at(r, batch_cols + s) = S(1);
            pos_mask.at(r, batch_cols + s) = S(1);
            any_pos = true;
        }
        if (any_pos) weights[r] = S(1);
    }
    auto lse_den = masked_lse_rows(sims, den_mask);
    auto lse_pos = masked_lse_rows(sims, pos_mask);
    return sum_all(mul(constant(std::move(weights)), sub(lse_den, lse_pos)));
}

} // namespace labelcl
