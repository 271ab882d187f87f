#pragma once

// Single-thread training orchestration. Fixed per-iteration order:
//   forward -> classify (+ classification loss) -> project -> bank snapshot
//   -> sample-to-sample loss -> prototype update -> prototype projection
//   -> prototype-to-sample loss -> total -> backward -> optimizer step
//   -> bank push.
// The bank push comes last so a batch never contrasts against its own
// stored copies; prototypes are updated from the same forward pass that
// produced the screening scores. Everything is deterministic for a fixed
// seed: parameter init, per-epoch shuffles, and the arithmetic itself.

#include <cinttypes>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "labelcl/checkpoint.hpp"
#include "labelcl/config.hpp"
#include "labelcl/contrastive.hpp"
#include "labelcl/data.hpp"
#include "labelcl/metrics.hpp"
#include "labelcl/objective.hpp"
#include "labelcl/sarl.hpp"

namespace labelcl {

// Seed-stream tags for independent deterministic generators.
constexpr uint64_t kParamInitStream = 0x504152414d494e49ull;
constexpr uint64_t kShuffleStream = 0x53485546464c4531ull;
constexpr uint64_t kTrainerRngStream = 0x545241494e524e47ull;

inline std::string loss_log_header() { return "epoch\titer\tl_bce\tl_s2s\tl_p2s\tl_total\tlr\n"; }

inline std::string format_loss_line(const LossReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%" PRId64 "\t%" PRId64 "\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n",
                  r.epoch, r.iteration, r.l_bce, r.l_s2s, r.l_p2s, r.l_total, r.lr);
    return buf;
}

template <typename S>
class Trainer {
public:
    Trainer(const RunConfig& cfg, const Dataset& data) : cfg_(cfg), data_(data) {
        cfg_.validate();
        if (data.train.empty()) throw DataError("training split is empty");
        dims_.classes = data.spec.num_classes;
        dims_.grid_h = data.spec.grid_h;
        dims_.grid_w = data.spec.grid_w;
        dims_.grid_c = data.spec.grid_c;

        RngState init_rng(mix_seed(cfg_.seed, kParamInitStream));
        model_ = std::make_unique<SarlModel<S>>(cfg_, dims_, store_, init_rng);
        head_ = make_projection_head<S>(store_, init_rng, cfg_.d_model, cfg_.d_hidden, cfg_.d_proj,
                                        cfg_.activation, cfg_.normalize_projections);
        classifier_ = make_classifier<S>(store_, init_rng, dims_.classes, cfg_.d_model);

        bank_ = std::make_unique<MemoryBank<S>>(dims_.classes, cfg_.bank_capacity, cfg_.d_proj);
        protos_ = std::make_unique<PrototypeBank<S>>(dims_.classes, cfg_.d_model);

        batches_per_epoch_ = static_cast<int64_t>(
            batch_order(static_cast<int64_t>(data.train.size()), cfg_.batch_size, 0, false).size());
        opt_ = std::make_unique<AdamW<S>>(
            store_.all(), cfg_.weight_decay,
            OneCycleSchedule(cfg_.peak_lr, cfg_.epochs * batches_per_epoch_, cfg_.warmup_frac));
        train_rng_ = RngState(mix_seed(cfg_.seed, kTrainerRngStream));
    }

    // One batch given sample indices into the training split.
    LossReport train_iteration(const std::vector<int64_t>& indices) {
        const int64_t n = static_cast<int64_t>(indices.size());
        const int64_t L = dims_.classes;

        std::vector<Var<S>> qouts;
        std::vector<uint8_t> y;
        std::vector<int64_t> ids;
        qouts.reserve(static_cast<size_t>(n));
        for (int64_t idx : indices) {
            const Sample& s = data_.train[static_cast<size_t>(idx)];
            auto res = model_->forward(s.grid.template cast<S>());
            qouts.push_back(res.qout);
            y.insert(y.end(), s.labels.begin(), s.labels.end());
            ids.push_back(s.id);
        }
        auto features = n == 1 ? qouts[0] : concat_rows(qouts); // (n*L, d)

        auto scores = classify(classifier_, features, n);
        auto l_bce = bce_loss(scores, y);

        ProjectedBatch<S> batch;
        batch.n = n;
        batch.num_classes = L;
        batch.x = project_rows(head_, features);
        batch.y = y;
        batch.image_ids = ids;

        int64_t activated = 0;
        for (uint8_t v : y) activated += v;
        auto snap = bank_->snapshot(activated);

        auto zero = [] { return constant(Tensor<S>::scalar(S(0))); };
        auto l_s2s = cfg_.sscl_on ? sscl_loss(batch, snap, cfg_.tau) : zero();

        protos_->update(features->value, y, scores->value, n, cfg_.epsilon);
        auto pp = project_prototypes(head_, *protos_);
        auto l_p2s = cfg_.pscl_on ? pscl_loss(pp, batch, snap, cfg_.tau) : zero();

        auto total = total_loss(l_bce, l_s2s, l_p2s, cfg_);
        backward(total);
        const double lr = opt_->step();
        bank_->push(batch);

        ++iteration_;
        LossReport r;
        r.epoch = epochs_done_ + 1;
        r.iteration = iteration_;
        r.l_bce = static_cast<double>(l_bce->value[0]);
        r.l_s2s = static_cast<double>(l_s2s->value[0]);
        r.l_p2s = static_cast<double>(l_p2s->value[0]);
        r.l_total = static_cast<double>(total->value[0]);
        r.lr = lr;
        return r;
    }

    // Trains from the current epoch up to cfg.epochs. Per epoch: iterate all
    // batches (seeded shuffle), evaluate the test split, reset the prototype
    // epoch state, then invoke the callback (checkpointing etc.).
    void train(const std::function<void(const LossReport&)>& on_iteration,
               const std::function<void(int64_t epoch, const MetricReport& all,
                                        const MetricReport& top3)>& on_epoch,
               int64_t stop_after = -1) {
        while (epochs_done_ < cfg_.epochs && (stop_after < 0 || epochs_done_ < stop_after)) {
            const int64_t epoch = epochs_done_; // zero-based during the epoch
            auto batches = batch_order(static_cast<int64_t>(data_.train.size()), cfg_.batch_size,
                                       mix_seed(mix_seed(cfg_.seed, kShuffleStream),
                                                static_cast<uint64_t>(epoch)),
                                       true);
            for (const auto& batch : batches) {
                auto report = train_iteration(batch);
                if (on_iteration) on_iteration(report);
            }
            auto [all, top3] = evaluate_split(data_.test);
            protos_->reset_epoch();
            ++epochs_done_;
            if (on_epoch) on_epoch(epochs_done_, all, top3);
        }
    }

    // Inference-only evaluation: encoder/decoder plus classifier heads.
    std::pair<MetricReport, MetricReport> evaluate_split(const std::vector<Sample>& split) const {
        const int64_t L = dims_.classes;
        const int64_t n = static_cast<int64_t>(split.size());
        std::vector<double> scores(static_cast<size_t>(n * L), 0.0);
        std::vector<uint8_t> targets(static_cast<size_t>(n * L), 0);
        for (int64_t i = 0; i < n; ++i) {
            const Sample& s = split[static_cast<size_t>(i)];
            auto res = model_->forward(s.grid.template cast<S>());
            auto sc = classify(classifier_, res.qout, 1);
            for (int64_t j = 0; j < L; ++j) {
                scores[static_cast<size_t>(i * L + j)] = static_cast<double>(sc->value[j]);
                targets[static_cast<size_t>(i * L + j)] = s.labels[static_cast<size_t>(j)];
            }
        }
        EvalConfig all_cfg;
        all_cfg.mode = EvalConfig::Mode::All;
        EvalConfig top_cfg;
        top_cfg.mode = EvalConfig::Mode::TopK;
        top_cfg.k = 3;
        return {evaluate(scores, targets, n, L, all_cfg), evaluate(scores, targets, n, L, top_cfg)};
    }

    // Per-sample forward products for the export commands.
    struct SampleView {
        Tensor<S> qout;       // (L, d)
        Tensor<S> scores;     // (L)
        Tensor<S> projected;  // (L, d')
        Tensor<S> attention;  // (L, H0*W0)
    };
    SampleView inspect(const Sample& s) const {
        auto res = model_->forward(s.grid.template cast<S>());
        auto sc = classify(classifier_, res.qout, 1);
        auto proj = project_rows(head_, res.qout);
        SampleView view;
        view.qout = res.qout->value;
        view.scores = Tensor<S>({dims_.classes}, sc->value.data);
        view.projected = proj->value;
        view.attention = res.cross_attention;
        return view;
    }

    CheckpointData<S> snapshot_state() const {
        CheckpointData<S> c;
        c.config_text = config_to_text(cfg_);
        c.epoch = epochs_done_;
        c.iteration = iteration_;
        for (const auto& p : store_.all()) {
            c.param_names.push_back(p->name);
            c.param_values.push_back(p->value);
        }
        c.opt_step = opt_->step_count();
        c.opt_m = opt_->moments_m();
        c.opt_v = opt_->moments_v();
        c.proto_classes = protos_->num_classes();
        c.proto_dim = protos_->dim();
        c.proto_sums = protos_->raw_sums();
        c.proto_min = protos_->raw_min();
        c.proto_max = protos_->raw_max();
        c.proto_display = protos_->raw_display();
        c.proto_counts = protos_->raw_counts();
        c.proto_display_counts = protos_->raw_display_counts();
        c.proto_display_defined = protos_->raw_display_defined();
        c.bank_capacity = bank_->capacity();
        c.bank_dim = bank_->dim();
        c.bank_next_stamp = bank_->next_stamp();
        for (int64_t j = 0; j < bank_->num_classes(); ++j)
            c.bank_buffers.push_back(bank_->entries(j));
        c.rng_raw = train_rng_.raw_state();
        return c;
    }

    void restore_state(const CheckpointData<S>& c) {
        const auto params = store_.all();
        if (c.param_names.size() != params.size())
            throw DataError("checkpoint parameter count " + std::to_string(c.param_names.size()) +
                            " != model parameter count " + std::to_string(params.size()));
        for (size_t i = 0; i < params.size(); ++i) {
            if (c.param_names[i] != params[i]->name)
                throw DataError("checkpoint parameter order mismatch at " + c.param_names[i]);
            if (!params[i]->value.same_shape(c.param_values[i]))
                throw DataError("checkpoint parameter " + c.param_names[i] + " shape mismatch");
            params[i]->value = c.param_values[i];
            std::fill(params[i]->grad.data.begin(), params[i]->grad.data.end(), S(0));
        }
        opt_->restore(c.opt_step, c.opt_m, c.opt_v);
        if (c.proto_classes != protos_->num_classes() || c.proto_dim != protos_->dim())
            throw DataError("checkpoint prototype bank dims mismatch");
        protos_->restore(c.proto_sums, c.proto_min, c.proto_max, c.proto_counts, c.proto_display,
                         c.proto_display_defined, c.proto_display_counts);
        if (c.bank_capacity != bank_->capacity() || c.bank_dim != bank_->dim() ||
            static_cast<int64_t>(c.bank_buffers.size()) != bank_->num_classes())
            throw DataError("checkpoint memory bank dims mismatch");
        bank_->restore(c.bank_next_stamp, c.bank_buffers);
        train_rng_.set_raw_state(c.rng_raw);
        epochs_done_ = c.epoch;
        iteration_ = c.iteration;
    }

    const RunConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return data_; }
    const DataDims& dims() const { return dims_; }
    int64_t epochs_done() const { return epochs_done_; }
    int64_t iteration() const { return iteration_; }
    int64_t batches_per_epoch() const { return batches_per_epoch_; }
    ParamStore<S>& params() { return store_; }
    const PrototypeBank<S>& prototype_bank() const { return *protos_; }
    const MemoryBank<S>& memory_bank() const { return *bank_; }
    const ProjectionHead<S>& projection_head() const { return head_; }

private:
    RunConfig cfg_;
    const Dataset& data_;
    DataDims dims_;
    ParamStore<S> store_;
    std::unique_ptr<SarlModel<S>> model_;
    ProjectionHead<S> head_;
    ClassifierHeads<S> classifier_;
    std::unique_ptr<MemoryBank<S>> bank_;
    std::unique_ptr<PrototypeBank<S>> protos_;
    std::unique_ptr<AdamW<S>> opt_;
    RngState train_rng_{0};
    int64_t epochs_done_ = 0;
    int64_t iteration_ = 0;
    int64_t batches_per_epoch_ = 0;
};

} // namespace labelcl
