#pragma once

// Command implementations behind the CLI (and the Python bindings): train,
// eval, grad-check, gen-data, and the two export commands. Each returns a
// process exit code; the CLI maps thrown errors to documented codes.

#include <array>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "labelcl/checkpoint.hpp"
#include "labelcl/config.hpp"
#include "labelcl/contrastive.hpp"
#include "labelcl/data.hpp"
#include "labelcl/gradcheck.hpp"
#include "labelcl/metrics.hpp"
#include "labelcl/objective.hpp"
#include "labelcl/trainer.hpp"

namespace labelcl {

constexpr uint64_t kGradCheckStream = 0x4752414443484b31ull;

struct CliOptions {
    std::string config_path;
    std::string out_dir;
    bool seed_set = false;
    uint64_t seed = 0;
    bool no_sscl = false;
    bool no_pscl = false;
    bool deterministic = false; // presence of --deterministic (always-on behavior; flag documents intent)
    std::string precision; // "", "train", "high"
    std::string resume_path;
    std::string checkpoint_path;
    std::string data_path;
    std::string out_path;     // gen-data / export file target
    std::string split = "";   // export split selector
    int instances = 20;       // grad-check
    bool corrupt = false;     // grad-check self-test fixture
    int64_t stop_after = -1;  // train: pause after this many epochs (schedule still spans config epochs)
};

inline RunConfig resolve_config(const CliOptions& opt) {
    RunConfig cfg;
    if (!opt.config_path.empty()) cfg = load_config(opt.config_path);
    if (opt.seed_set) cfg.seed = opt.seed;
    if (opt.no_sscl) cfg.sscl_on = false;
    if (opt.no_pscl) cfg.pscl_on = false;
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    if (!opt.data_path.empty()) cfg.dataset_path = opt.data_path;
    if (!opt.precision.empty()) {
        if (opt.precision == "train")
            cfg.precision = Precision::Train;
        else if (opt.precision == "high")
            cfg.precision = Precision::High;
        else
            throw ParamError("unknown precision '" + opt.precision + "' (use train or high)");
    }
    cfg.validate();
    return cfg;
}

inline Dataset dataset_for(const RunConfig& cfg) {
    if (!cfg.dataset_path.empty()) return load_dataset(cfg.dataset_path);
    return generate(cfg.synth);
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << text;
    if (!f) throw IoError("failed writing: " + path);
}

inline std::string format_eval_row(int64_t epoch, const MetricReport& all, const MetricReport& top3) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%" PRId64 "\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", epoch,
                  all.map, all.cf1, all.of1, top3.map, top3.cf1, top3.of1);
    return buf;
}

template <typename S>
int run_train(const RunConfig& cfg, const CliOptions& opt) {
    Dataset data = dataset_for(cfg);
    Trainer<S> trainer(cfg, data);

    if (!opt.resume_path.empty()) {
        auto ckpt = load_checkpoint<S>(opt.resume_path);
        trainer.restore_state(ckpt);
        std::cout << "resumed from " << opt.resume_path << " at epoch " << trainer.epochs_done()
                  << ", iteration " << trainer.iteration() << "\n";
    }

    ensure_dir(cfg.out_dir);
    write_text_file(cfg.out_dir + "/config_echo.cfg", config_to_text(cfg));

    std::ofstream loss_log(cfg.out_dir + "/loss_log.tsv", std::ios::trunc);
    std::ofstream eval_log(cfg.out_dir + "/eval_history.tsv", std::ios::trunc);
    if (!loss_log || !eval_log) throw IoError("cannot open log files under " + cfg.out_dir);
    loss_log << loss_log_header();
    eval_log << "epoch\tmap_all\tcf1_all\tof1_all\tmap_top3\tcf1_top3\tof1_top3\n";

    MetricReport final_all, final_top3;
    trainer.train(
        [&](const LossReport& r) { loss_log << format_loss_line(r); },
        [&](int64_t epoch, const MetricReport& all, const MetricReport& top3) {
            eval_log << format_eval_row(epoch, all, top3);
            eval_log.flush();
            final_all = all;
            final_top3 = top3;
            save_checkpoint(cfg.out_dir + "/checkpoint.ckpt", trainer.snapshot_state());
            std::cout << "epoch " << epoch << "/" << cfg.epochs << "  mAP(all) " << all.map
                      << "  mAP(top3) " << top3.map << "\n";
        },
        opt.stop_after);
    loss_log.flush();

    if (trainer.epochs_done() > 0) {
        write_text_file(cfg.out_dir + "/metrics_all.tsv", report_to_text(final_all));
        write_text_file(cfg.out_dir + "/metrics_top3.tsv", report_to_text(final_top3));
    }
    std::cout << "done: " << trainer.epochs_done() << " epochs, " << trainer.iteration()
              << " iterations\n";
    return 0;
}

template <typename S>
int run_eval(const CliOptions& opt) {
    auto ckpt = load_checkpoint<S>(opt.checkpoint_path);
    RunConfig cfg = parse_config_text(ckpt.config_text);
    if (!opt.data_path.empty()) cfg.dataset_path = opt.data_path;
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    Dataset data = dataset_for(cfg);
    Trainer<S> trainer(cfg, data);
    trainer.restore_state(ckpt);

    auto [all, top3] = trainer.evaluate_split(data.test);
    ensure_dir(cfg.out_dir);
    write_text_file(cfg.out_dir + "/config_echo.cfg", config_to_text(cfg));
    write_text_file(cfg.out_dir + "/metrics_all.tsv", report_to_text(all));
    write_text_file(cfg.out_dir + "/metrics_top3.tsv", report_to_text(top3));
    std::cout << report_to_text(all) << "\n" << report_to_text(top3);
    return 0;
}

// Gradient verification of the loss definitions on randomized tiny
// instances. The inputs to each loss (feature rows, projection head,
// classifier) are the checked parameters; the activation is the smooth one
// so central differences are clean.
inline int run_grad_check(const RunConfig& cfg, const CliOptions& opt) {
    struct ComponentStat {
        const char* name;
        double max_err = 0.0;
    };
    ComponentStat stats[4] = {{"l_bce"}, {"l_s2s"}, {"l_p2s"}, {"l_total"}};

    for (int trial = 0; trial < opt.instances; ++trial) {
        RngState rng(mix_seed(mix_seed(cfg.seed, kGradCheckStream), static_cast<uint64_t>(trial)));
        const int64_t n = 1 + static_cast<int64_t>(rng.below(3));       // <= 3
        const int64_t L = 2 + static_cast<int64_t>(rng.below(3));       // <= 4
        const int64_t d = 3 + static_cast<int64_t>(rng.below(4));       // <= 6
        const int64_t dh = 3 + static_cast<int64_t>(rng.below(3));      // <= 5
        const int64_t dp = 2 + static_cast<int64_t>(rng.below(5));      // <= 6

        ParamStore<double> store;
        auto head = make_projection_head<double>(store, rng, static_cast<int>(d), static_cast<int>(dh),
                                                 static_cast<int>(dp), Activation::Gelu, true);
        auto heads = make_classifier<double>(store, rng, L, d);
        Tensor<double> raw({n * L, d});
        for (auto& v : raw.data) v = rng.normal();
        auto features = store.add("features", std::move(raw));

        std::vector<uint8_t> y(static_cast<size_t>(n * L), 0);
        for (auto& v : y) v = rng.uniform() < 0.5 ? 1 : 0;
        y[static_cast<size_t>(rng.below(static_cast<uint64_t>(n * L)))] = 1;

        auto snap = [&] {
            std::vector<SnapshotEntry<double>> s;
            const int64_t count = static_cast<int64_t>(rng.below(4));
            for (int64_t i = 0; i < count; ++i) {
                SnapshotEntry<double> e;
                e.cls = static_cast<int64_t>(rng.below(static_cast<uint64_t>(L)));
                e.image_id = 1000 + i;
                for (int64_t c = 0; c < dp; ++c) e.vec.push_back(rng.normal());
                s.push_back(std::move(e));
            }
            return s;
        }();
        PrototypeBank<double> bank(L, d);
        bank.update(features->value, y, Tensor<double>::full({n, L}, 0.9), n, 0.8);

        auto projected = [&] {
            ProjectedBatch<double> b;
            b.n = n;
            b.num_classes = L;
            b.x = project_rows(head, features);
            b.y = y;
            for (int64_t i = 0; i < n; ++i) b.image_ids.push_back(i);
            return b;
        };
        const double tau = 0.2 + 0.6 * rng.uniform();
        RunConfig weights; // unit loss weights
        auto loss_fns = std::array<std::function<Var<double>()>, 4>{
            [&]() { return bce_loss(classify(heads, features, n), y); },
            [&]() { return sscl_loss(projected(), snap, tau); },
            [&]() { return pscl_loss(project_prototypes(head, bank), projected(), snap, tau); },
            [&]() {
                return total_loss(bce_loss(classify(heads, features, n), y),
                                  sscl_loss(projected(), snap, tau),
                                  pscl_loss(project_prototypes(head, bank), projected(), snap, tau),
                                  weights);
            }};
        for (int c = 0; c < 4; ++c) {
            const bool corrupt = opt.corrupt && c == 0 && trial == 0;
            auto report = check_gradients<double>(loss_fns[static_cast<size_t>(c)], store.all(), 1e-4, corrupt);
            stats[c].max_err = std::max(stats[c].max_err, report.max_rel_err);
        }
    }

    bool ok = true;
    std::printf("component\tmax_rel_err\tstatus\n");
    for (const auto& s : stats) {
        const bool pass = s.max_err <= 1e-4;
        ok = ok && pass;
        std::printf("%s\t%.3e\t%s\n", s.name, s.max_err, pass ? "pass" : "FAIL");
    }
    std::printf("instances\t%d\n", opt.instances);
    return ok ? 0 : 5;
}

inline int run_gen_data(const RunConfig& cfg, const CliOptions& opt) {
    if (opt.out_path.empty()) throw ParamError("gen-data needs --out-file <path>");
    Dataset ds = generate(cfg.synth);
    save_dataset(ds, opt.out_path);
    write_text_file(opt.out_path + ".config", config_to_text(cfg));
    double cardinality = 0.0;
    for (const auto& s : ds.train)
        for (uint8_t v : s.labels) cardinality += v;
    cardinality /= static_cast<double>(ds.train.size());
    std::cout << "wrote " << opt.out_path << ": " << ds.train.size() << " train / " << ds.test.size()
              << " test samples, " << ds.spec.num_classes << " classes, mean train cardinality "
              << cardinality << "\n";
    return 0;
}

template <typename S>
int run_export_embeddings(const CliOptions& opt) {
    auto ckpt = load_checkpoint<S>(opt.checkpoint_path);
    RunConfig cfg = parse_config_text(ckpt.config_text);
    if (!opt.data_path.empty()) cfg.dataset_path = opt.data_path;
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    Dataset data = dataset_for(cfg);
    Trainer<S> trainer(cfg, data);
    trainer.restore_state(ckpt);
    ensure_dir(cfg.out_dir);
    write_text_file(cfg.out_dir + "/config_echo.cfg", config_to_text(cfg));

    const std::string split = opt.split.empty() ? "all" : opt.split;
    std::vector<const std::vector<Sample>*> splits;
    if (split == "train" || split == "all") splits.push_back(&data.train);
    if (split == "test" || split == "all") splits.push_back(&data.test);
    if (splits.empty()) throw ParamError("unknown split '" + split + "' (use train, test, or all)");

    // Activated projected vectors: one row per (image, class) with y=1.
    std::ofstream emb(cfg.out_dir + "/embeddings.tsv", std::ios::trunc);
    if (!emb) throw IoError("cannot open embeddings output under " + cfg.out_dir);
    emb << "image\tclass";
    for (int c = 0; c < cfg.d_proj; ++c) emb << "\tv" << c;
    emb << "\n";
    int64_t rows = 0;
    char num[64];
    for (const auto* sp : splits)
        for (const auto& s : *sp) {
            auto view = trainer.inspect(s);
            for (int64_t j = 0; j < trainer.dims().classes; ++j) {
                if (!s.labels[static_cast<size_t>(j)]) continue;
                emb << s.id << "\t" << j;
                for (int64_t c = 0; c < cfg.d_proj; ++c) {
                    std::snprintf(num, sizeof(num), "%.17g", static_cast<double>(view.projected.at(j, c)));
                    emb << "\t" << num;
                }
                emb << "\n";
                ++rows;
            }
        }

    // Prototype export: class id, contribution count, raw-space prototype,
    // projected prototype. Classes with no prototype yet are omitted.
    std::ofstream protos(cfg.out_dir + "/prototypes.tsv", std::ios::trunc);
    if (!protos) throw IoError("cannot open prototypes output under " + cfg.out_dir);
    protos << "class\tcount";
    for (int c = 0; c < cfg.d_model; ++c) protos << "\tin" << c;
    for (int c = 0; c < cfg.d_proj; ++c) protos << "\tout" << c;
    protos << "\n";
    const auto& bank = trainer.prototype_bank();
    for (int64_t j = 0; j < trainer.dims().classes; ++j) {
        auto row = bank.export_row(j);
        if (!row.defined) continue;
        Tensor<S> cin({1, static_cast<int64_t>(row.values.size())});
        for (size_t c = 0; c < row.values.size(); ++c) cin.at(0, static_cast<int64_t>(c)) = static_cast<S>(row.values[c]);
        auto cout_row = project_rows(trainer.projection_head(), constant(std::move(cin)));
        protos << j << "\t" << row.count;
        for (double v : row.values) {
            std::snprintf(num, sizeof(num), "%.17g", v);
            protos << "\t" << num;
        }
        for (int64_t c = 0; c < cfg.d_proj; ++c) {
            std::snprintf(num, sizeof(num), "%.17g", static_cast<double>(cout_row->value.at(0, c)));
            protos << "\t" << num;
        }
        protos << "\n";
    }
    std::cout << "wrote " << rows << " activated embedding rows and the prototype table under "
              << cfg.out_dir << "\n";
    return 0;
}

template <typename S>
int run_export_attention(const CliOptions& opt) {
    auto ckpt = load_checkpoint<S>(opt.checkpoint_path);
    RunConfig cfg = parse_config_text(ckpt.config_text);
    if (!opt.data_path.empty()) cfg.dataset_path = opt.data_path;
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    Dataset data = dataset_for(cfg);
    Trainer<S> trainer(cfg, data);
    trainer.restore_state(ckpt);
    ensure_dir(cfg.out_dir);
    write_text_file(cfg.out_dir + "/config_echo.cfg", config_to_text(cfg));

    const std::string split = opt.split.empty() ? "test" : opt.split;
    std::vector<const std::vector<Sample>*> splits;
    if (split == "train" || split == "all") splits.push_back(&data.train);
    if (split == "test" || split == "all") splits.push_back(&data.test);
    if (splits.empty()) throw ParamError("unknown split '" + split + "' (use train, test, or all)");

    // Record per image: header "image <id> <H0> <W0> <L>", then one line per
    // class with H0*W0 cross-attention weights in row-major order.
    std::ofstream out(cfg.out_dir + "/attention.txt", std::ios::trunc);
    if (!out) throw IoError("cannot open attention output under " + cfg.out_dir);
    char num[64];
    int64_t images = 0;
    for (const auto* sp : splits)
        for (const auto& s : *sp) {
            auto view = trainer.inspect(s);
            out << "image " << s.id << " " << trainer.dims().grid_h << " " << trainer.dims().grid_w
                << " " << trainer.dims().classes << "\n";
            for (int64_t j = 0; j < trainer.dims().classes; ++j) {
                for (int64_t t = 0; t < view.attention.cols(); ++t) {
                    std::snprintf(num, sizeof(num), "%.17g", static_cast<double>(view.attention.at(j, t)));
                    out << (t ? "\t" : "") << num;
                }
                out << "\n";
            }
            ++images;
        }
    std::cout << "wrote attention maps for " << images << " images under " << cfg.out_dir << "\n";
    return 0;
}

} // namespace labelcl
