// labelcl: label-query transformer training stack with contrastive
// clustering and prototype losses on synthetic multi-label grid data.
//
// Exit codes: 0 success; 2 configuration/usage error; 3 data or I/O error;
// 4 numeric abort; 5 gradient-check tolerance failure; 1 anything else.

#include <CLI11.hpp>

#include <exception>
#include <functional>
#include <iostream>

#include "labelcl/commands.hpp"

namespace {

using labelcl::CliOptions;

void add_common(CLI::App* cmd, CliOptions& opt) {
    cmd->add_option("--config", opt.config_path, "configuration file (key=value lines)");
    cmd->add_option("--seed", opt.seed, "override the run seed")->each([&](const std::string&) {
        opt.seed_set = true;
    });
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_flag("--deterministic", opt.deterministic,
                  "single-thread deterministic mode (always on; flag records intent)");
    cmd->add_option("--precision", opt.precision, "train (float) or high (double)")
        ->check(CLI::IsMember({"train", "high"}));
}

int dispatch(const std::function<int()>& body) {
    try {
        return body();
    } catch (const labelcl::ParamError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const labelcl::ContractError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const labelcl::ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const labelcl::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const labelcl::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const labelcl::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const labelcl::DomainError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"label-query transformer with contrastive representation training"};
    app.require_subcommand(1);
    CliOptions opt;

    auto* train = app.add_subcommand("train", "train a model and write logs + checkpoint");
    add_common(train, opt);
    train->add_flag("--no-sscl", opt.no_sscl, "disable the sample-to-sample loss");
    train->add_flag("--no-pscl", opt.no_pscl, "disable the prototype-to-sample loss");
    train->add_option("--resume", opt.resume_path, "checkpoint to resume from");
    train->add_option("--stop-after", opt.stop_after,
                      "pause after this many total epochs (schedule still spans the configured count)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval, opt);
    eval->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")->required();
    eval->add_option("--data", opt.data_path, "dataset file (defaults to the checkpoint's config)");

    auto* grad = app.add_subcommand("grad-check", "verify loss gradients against finite differences");
    add_common(grad, opt);
    grad->add_option("--instances", opt.instances, "number of randomized tiny instances");
    grad->add_flag("--self-test-corrupt", opt.corrupt,
                   "deliberately corrupt one gradient to prove the detector trips");

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
    add_common(gen, opt);
    gen->add_option("--out-file", opt.out_path, "dataset file to write")->required();

    auto* expe = app.add_subcommand("export-embeddings",
                                    "write activated projected vectors and the prototype table");
    add_common(expe, opt);
    expe->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")->required();
    expe->add_option("--data", opt.data_path, "dataset file (defaults to the checkpoint's config)");
    expe->add_option("--split", opt.split, "train, test, or all (default all)");

    auto* expa = app.add_subcommand("export-attention", "write per-class attention maps");
    add_common(expa, opt);
    expa->add_option("--checkpoint", opt.checkpoint_path, "checkpoint file")->required();
    expa->add_option("--data", opt.data_path, "dataset file (defaults to the checkpoint's config)");
    expa->add_option("--split", opt.split, "train, test, or all (default test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    return dispatch([&]() -> int {
        if (train->parsed()) {
            if (!opt.resume_path.empty()) {
                // Resume: the checkpoint's embedded config governs the run.
                const uint8_t tag = labelcl::checkpoint_precision_tag(opt.resume_path);
                if (tag == 1) {
                    auto ckpt = labelcl::load_checkpoint<double>(opt.resume_path);
                    labelcl::RunConfig cfg = labelcl::parse_config_text(ckpt.config_text);
                    if (!opt.config_path.empty() &&
                        labelcl::config_to_text(labelcl::load_config(opt.config_path)) !=
                            ckpt.config_text)
                        throw labelcl::ParamError("--config disagrees with the checkpoint's config");
                    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
                    return labelcl::run_train<double>(cfg, opt);
                }
                auto ckpt = labelcl::load_checkpoint<float>(opt.resume_path);
                labelcl::RunConfig cfg = labelcl::parse_config_text(ckpt.config_text);
                if (!opt.config_path.empty() &&
                    labelcl::config_to_text(labelcl::load_config(opt.config_path)) != ckpt.config_text)
                    throw labelcl::ParamError("--config disagrees with the checkpoint's config");
                if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
                return labelcl::run_train<float>(cfg, opt);
            }
            labelcl::RunConfig cfg = labelcl::resolve_config(opt);
            return cfg.precision == labelcl::Precision::High ? labelcl::run_train<double>(cfg, opt)
                                                             : labelcl::run_train<float>(cfg, opt);
        }
        if (eval->parsed()) {
            const uint8_t tag = labelcl::checkpoint_precision_tag(opt.checkpoint_path);
            return tag == 1 ? labelcl::run_eval<double>(opt) : labelcl::run_eval<float>(opt);
        }
        if (grad->parsed()) {
            // Gradient checking always runs in high precision.
            labelcl::RunConfig cfg = labelcl::resolve_config(opt);
            cfg.precision = labelcl::Precision::High;
            return labelcl::run_grad_check(cfg, opt);
        }
        if (gen->parsed()) {
            labelcl::RunConfig cfg = labelcl::resolve_config(opt);
            return labelcl::run_gen_data(cfg, opt);
        }
        if (expe->parsed()) {
            const uint8_t tag = labelcl::checkpoint_precision_tag(opt.checkpoint_path);
            return tag == 1 ? labelcl::run_export_embeddings<double>(opt)
                            : labelcl::run_export_embeddings<float>(opt);
        }
        if (expa->parsed()) {
            const uint8_t tag = labelcl::checkpoint_precision_tag(opt.checkpoint_path);
            return tag == 1 ? labelcl::run_export_attention<double>(opt)
                            : labelcl::run_export_attention<float>(opt);
        }
        throw labelcl::ParamError("no subcommand selected");
    });
}
