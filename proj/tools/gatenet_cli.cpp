// Command-line front end: train, eval, gradcheck, gatestats, synth.
// Exit codes: 0 success, 1 validation error, 2 runtime/numeric failure,
// 3 gradcheck threshold failure.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gatenet/gatenet.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string checkpoint;
    std::string out_dir;
    std::string data_path;
    long seed = -1;
};

gatenet::RunConfig load_config(const CommonOpts& o) {
    gatenet::RunConfig cfg = o.config_path.empty() ? gatenet::RunConfig{}
                                                   : gatenet::load_run_config(o.config_path);
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
    if (!o.data_path.empty()) cfg.data.path = o.data_path;
    gatenet::validate_paths(cfg);
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o, bool needs_config) {
    auto* copt = cmd->add_option("--config", o.config_path, "Run configuration file (JSON)");
    if (needs_config) copt->required();
    cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint prefix (reads <prefix>.json/.bin)");
    cmd->add_option("--out-dir", o.out_dir, "Output directory override");
    cmd->add_option("--data", o.data_path, "Dataset path override");
    cmd->add_option("--seed", o.seed, "Seed override");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gated-attention training harness"};
    app.require_subcommand(1);

    CommonOpts train_o, eval_o, grad_o, stats_o, synth_o;
    auto* train_cmd = app.add_subcommand("train", "Train a model and emit logs, checkpoint, eval report");
    add_common(train_cmd, train_o, true);
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint across folds");
    add_common(eval_cmd, eval_o, true);
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the configured model");
    add_common(grad_cmd, grad_o, true);
    auto* stats_cmd = app.add_subcommand("gatestats", "Gate score distributions from a checkpoint");
    add_common(stats_cmd, stats_o, false);
    auto* synth_cmd = app.add_subcommand("synth", "Emit a synthetic regression dataset as CSV");
    gatenet::SynthSpec synth_spec;
    std::string synth_out = "synth.csv";
    synth_cmd->add_option("--out", synth_out, "Output CSV path");
    synth_cmd->add_option("--n-samples", synth_spec.n_samples, "Sample count");
    synth_cmd->add_option("--n-informative", synth_spec.n_informative, "Informative feature count");
    synth_cmd->add_option("--n-nuisance", synth_spec.n_nuisance, "Nuisance feature count");
    synth_cmd->add_option("--noise-std", synth_spec.noise_std, "Target noise standard deviation");
    synth_cmd->add_option("--seed", synth_spec.seed, "Generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            gatenet::RunConfig cfg = load_config(train_o);
            gatenet::TrainResult r = gatenet::run_train(cfg);
            std::cout << "steps " << r.steps << "\n"
                      << "best_epoch " << r.best_epoch << "\n"
                      << "best_val_loss " << gatenet::fmt_g17(r.best_val_loss) << "\n"
                      << "final_train_loss " << gatenet::fmt_g17(r.final_train_loss) << "\n"
                      << "checkpoint " << r.best_checkpoint_prefix << "\n";
            if (r.clamp_count > 0)
                std::cout << "warning: " << r.clamp_count << " targets clamped to the size range\n";
            return 0;
        }
        if (eval_cmd->parsed()) {
            if (eval_o.checkpoint.empty()) {
                std::cerr << "eval: --checkpoint is required\n";
                return 1;
            }
            gatenet::RunConfig cfg = load_config(eval_o);
            gatenet::run_eval(cfg, eval_o.checkpoint);
            std::cout << "eval report written to " << cfg.out_dir << "\n";
            return 0;
        }
        if (grad_cmd->parsed()) {
            gatenet::RunConfig cfg = load_config(grad_o);
            gatenet::GradcheckRun r = gatenet::run_gradcheck(cfg);
            for (const auto& e : r.report.per_param_worst)
                std::printf("%-24s analytic %.10e numeric %.10e rel_err %.3e\n", e.param.c_str(),
                            e.analytic, e.numeric, e.rel_err);
            std::printf("max_rel_err %.3e (%s)\n", r.report.max_rel_err,
                        r.pass ? "pass" : "FAIL");
            return r.pass ? 0 : 3;
        }
        if (stats_cmd->parsed()) {
            if (stats_o.checkpoint.empty()) {
                std::cerr << "gatestats: --checkpoint is required\n";
                return 1;
            }
            std::string out = stats_o.out_dir.empty() ? std::string("gate_stats.csv")
                                                      : stats_o.out_dir + "/gate_stats.csv";
            auto gates = gatenet::run_gatestats(stats_o.checkpoint, out);
            std::cout << gates.size() << " gates written to " << out << "\n";
            return 0;
        }
        if (synth_cmd->parsed()) {
            gatenet::run_synth(synth_spec, synth_out);
            std::cout << "dataset written to " << synth_out << "\n";
            return 0;
        }
    } catch (const gatenet::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }
    return 1;
}
