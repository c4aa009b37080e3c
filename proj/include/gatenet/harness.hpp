#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatenet/checkpoint.hpp"
#include "gatenet/config.hpp"
#include "gatenet/data.hpp"
#include "gatenet/gradcheck.hpp"
#include "gatenet/layers.hpp"
#include "gatenet/losses.hpp"
#include "gatenet/metrics.hpp"
#include "gatenet/optim.hpp"

namespace gatenet {

namespace fs = std::filesystem;

// Shortest round-trippable decimal form; keeps artifacts byte-deterministic.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
}

// One run owns its output directory; a leftover lock file from a crashed run
// must be deleted by hand, which is the honest failure mode.
class OutDirLock {
public:
    explicit OutDirLock(const std::string& dir) : path_(fs::path(dir) / "run.lock") {
        fs::create_directories(dir);
        if (fs::exists(path_))
            throw std::runtime_error("output directory " + dir +
                                     " is locked by another run; delete " + path_.string() +
                                     " if that run is gone");
        std::ofstream out(path_);
        out << "locked\n";
    }
    ~OutDirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    OutDirLock(const OutDirLock&) = delete;
    OutDirLock& operator=(const OutDirLock&) = delete;

private:
    fs::path path_;
};

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

struct LoadedData {
    std::vector<Sample> samples;
    std::vector<long> informative; // synth only
};

inline LoadedData load_dataset(const DataConfig& d) {
    LoadedData out;
    if (d.source == "synth") {
        SynthDataset ds = synth_regression_dataset(d.synth);
        out.samples = std::move(ds.samples);
        out.informative = std::move(ds.informative_indices);
    } else if (d.source == "csv") {
        out.samples = load_csv_regression(d.path);
    } else if (d.source == "cifar100") {
        std::set<long> filter(d.cifar_classes.begin(), d.cifar_classes.end());
        out.samples = load_cifar100_binary(d.path, d.cifar_limit, filter);
    } else {
        throw ConfigError("config: data.source: unknown source \"" + d.source + "\"");
    }
    if (out.samples.empty())
        throw std::runtime_error("load_dataset: no samples from source " + d.source);
    return out;
}

inline SplitResult make_split(const std::vector<Sample>& samples, const DataConfig& d) {
    if (d.split == "none") {
        SplitResult r;
        r.train = samples;
        r.val = samples;
        r.test = samples;
        r.plan = {1, 0, 0};
        return r;
    }
    return kfold_split(samples, d.k, d.test_fold);
}

// Image runs normalize with statistics of the training split only.
inline void normalize_split(SplitResult& split) {
    ChannelStats st = compute_channel_stats(split.train);
    split.train = normalize_images(std::move(split.train), st.means, st.stds);
    split.val = normalize_images(std::move(split.val), st.means, st.stds);
    split.test = normalize_images(std::move(split.test), st.means, st.stds);
}

namespace detail {

inline void shuffle_indices(std::vector<long>& v, Rng& rng) {
    for (long i = static_cast<long>(v.size()) - 1; i > 0; --i) {
        long j = static_cast<long>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
}

inline Tensor stack_by_index(const std::vector<Sample>& samples, const std::vector<long>& order,
                             long begin, long count, double aug_sigma, std::uint64_t aug_seed) {
    const Shape& s0 = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(begin)])].input.shape();
    Shape os;
    os.push_back(count);
    os.insert(os.end(), s0.begin(), s0.end());
    long stride = numel_of(s0);
    std::vector<double> out(static_cast<std::size_t>(count * stride));
    for (long i = 0; i < count; ++i) {
        const Sample& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + i)])];
        if (s.input.shape() != s0)
            throw std::runtime_error("batch assembly: inconsistent input shapes");
        if (aug_sigma > 0.0) {
            Sample a = augment_gaussian_noise(
                s, aug_sigma,
                aug_seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(order[static_cast<std::size_t>(begin + i)]));
            std::copy(a.input.data().begin(), a.input.data().end(),
                      out.begin() + static_cast<long>(i * stride));
        } else {
            std::copy(s.input.data().begin(), s.input.data().end(),
                      out.begin() + static_cast<long>(i * stride));
        }
    }
    return Tensor::from(std::move(out), os);
}

struct BatchTargets {
    std::vector<double> size_mm;
    std::vector<long> labels;
};

inline BatchTargets gather_targets(const std::vector<Sample>& samples,
                                   const std::vector<long>& order, long begin, long count,
                                   bool classification) {
    BatchTargets t;
    for (long i = 0; i < count; ++i) {
        const Sample& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(begin + i)])];
        if (classification) {
            if (!s.has_class())
                throw std::runtime_error("training: sample " + s.unique_id + " has no class label");
            t.labels.push_back(s.class_label);
        } else {
            if (!s.has_size())
                throw std::runtime_error("training: sample " + s.unique_id + " has no size target");
            t.size_mm.push_back(s.size_mm);
        }
    }
    return t;
}

} // namespace detail

// Flattens [N,1] regression output to [N]; leaves logits alone.
inline Tensor squeeze_preds(const Tensor& preds) {
    if (preds.rank() == 2 && preds.dim(1) == 1) return reshape(preds, {preds.dim(0)});
    return preds;
}

inline LossFn make_loss_fn(const RunConfig& cfg, bool att_phase,
                           const detail::BatchTargets& targets, long* clamp_counter) {
    if (cfg.loss_kind == "cross_entropy") {
        std::vector<long> labels = targets.labels;
        return [labels](const Tensor& preds) { return cross_entropy(preds, labels); };
    }
    SizeLossConfig lc = att_phase ? cfg.loss_att : cfg.loss_main;
    std::vector<double> mm = targets.size_mm;
    return [lc, mm, clamp_counter](const Tensor& preds) {
        return weighted_huber_loss(squeeze_preds(preds), mm, lc, clamp_counter);
    };
}

// Mean loss over a split, weighted by batch size; no parameter updates.
inline double dataset_loss(Model& model, const std::vector<Sample>& samples,
                           const RunConfig& cfg) {
    if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
    bool cls = cfg.loss_kind == "cross_entropy";
    std::vector<long> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
    double total = 0.0;
    long n = static_cast<long>(samples.size());
    for (long b = 0; b < n; b += cfg.batch_size) {
        long count = std::min(cfg.batch_size, n - b);
        Tensor x = detail::stack_by_index(samples, order, b, count, 0.0, 0);
        auto targets = detail::gather_targets(samples, order, b, count, cls);
        LossFn fn = make_loss_fn(cfg, false, targets, nullptr);
        total += fn(model.forward(x)).item() * static_cast<double>(count);
    }
    return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline json cm_json(const ConfusionMatrix& cm) {
    json rows = json::array();
    for (int t = 0; t < cm.k; ++t) {
        json row = json::array();
        for (int p = 0; p < cm.k; ++p) row.push_back(cm.at(t, p));
        rows.push_back(row);
    }
    return rows;
}

inline json metric_set_json(const MetricSet& m) {
    return json{{"balanced_accuracy", m.balanced_accuracy},
                {"f1_macro", m.f1_macro},
                {"avg_sens_spec", m.avg_sens_spec},
                {"recalls", m.recalls},
                {"precisions", m.precisions},
                {"confusion", cm_json(m.cm)}};
}

inline json eval_report_json(const EvalReport& r) {
    return json{{"n_samples", r.n_samples},
                {"n_unique_ids", r.n_unique_ids},
                {"triclass", metric_set_json(r.triclass)},
                {"binary", metric_set_json(r.binary)}};
}

inline void write_eval_csv_rows(std::ofstream& out, const std::string& fold,
                                const EvalReport& r) {
    auto row = [&](const char* scheme, const char* metric, double v) {
        out << fold << "," << scheme << "," << metric << "," << fmt_g17(v) << "\n";
    };
    row("triclass", "balanced_accuracy", r.triclass.balanced_accuracy);
    row("triclass", "f1_macro", r.triclass.f1_macro);
    row("triclass", "avg_sens_spec", r.triclass.avg_sens_spec);
    row("binary", "balanced_accuracy", r.binary.balanced_accuracy);
    row("binary", "f1_macro", r.binary.f1_macro);
    row("binary", "avg_sens_spec", r.binary.avg_sens_spec);
}

inline void write_gate_stats_csv(const std::string& path,
                                 const std::vector<GatePlacement>& gates) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << "layer,position,mean,std";
    for (int b = 0; b < 20; ++b) out << ",bin_" << b;
    out << "\n";
    for (const auto& g : gates) {
        GateStats st = g.gate.stats();
        out << g.layer << "," << g.position << "," << fmt_g17(st.mean) << "," << fmt_g17(st.std);
        for (long c : st.histogram) out << "," << c;
        out << "\n";
    }
}

// ---------------------------------------------------------------------------
// Inference over a sample set
// ---------------------------------------------------------------------------

struct Predictions {
    std::vector<std::string> ids;
    std::vector<double> preds_mm;
    std::vector<double> targets_mm;
    std::vector<long> pred_labels;
    std::vector<long> true_labels;
};

inline Predictions predict(Model& model, const std::vector<Sample>& samples,
                           const RunConfig& cfg) {
    Predictions out;
    bool cls = cfg.loss_kind == "cross_entropy";
    std::vector<long> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<long>(i);
    long n = static_cast<long>(samples.size());
    for (long b = 0; b < n; b += cfg.batch_size) {
        long count = std::min(cfg.batch_size, n - b);
        Tensor x = detail::stack_by_index(samples, order, b, count, 0.0, 0);
        Tensor y = model.forward(x);
        for (long i = 0; i < count; ++i) {
            const Sample& s = samples[static_cast<std::size_t>(b + i)];
            out.ids.push_back(s.unique_id);
            if (cls) {
                long K = y.dim(1);
                long best = 0;
                for (long k = 1; k < K; ++k)
                    if (y.data()[static_cast<std::size_t>(i * K + k)] >
                        y.data()[static_cast<std::size_t>(i * K + best)])
                        best = k;
                out.pred_labels.push_back(best);
                out.true_labels.push_back(s.class_label);
            } else {
                double norm = y.data()[static_cast<std::size_t>(i * y.dim(1))];
                // A poorly fit model can emit sizes outside the representable
                // range; binning only accepts nonnegative sizes, so predictions
                // clamp like targets do.
                double mm = std::clamp(denormalize_size(norm, cfg.loss_main),
                                       cfg.loss_main.min_mm, cfg.loss_main.max_mm);
                out.preds_mm.push_back(mm);
                out.targets_mm.push_back(s.size_mm);
            }
        }
    }
    return out;
}

inline ConfusionMatrix label_confusion(const std::vector<long>& truth,
                                       const std::vector<long>& pred, int k) {
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < truth.size(); ++i)
        ++cm.at(static_cast<int>(truth[i]), static_cast<int>(pred[i]));
    return cm;
}

// ---------------------------------------------------------------------------
// run_train
// ---------------------------------------------------------------------------

struct TrainResult {
    std::string best_checkpoint_prefix;
    long best_epoch = -1;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::vector<double> val_losses;
    double final_train_loss = std::numeric_limits<double>::quiet_NaN();
    long steps = 0;
    long clamp_count = 0;
    EvalReport test_report;                // regression runs
    double test_accuracy = std::numeric_limits<double>::quiet_NaN(); // classification runs
};

inline TrainResult run_train(const RunConfig& cfg) {
    OutDirLock lock(cfg.out_dir);
    LoadedData data = load_dataset(cfg.data);
    SplitResult split = make_split(data.samples, cfg.data);
    if (cfg.data.source == "cifar100") normalize_split(split);
    if (split.train.empty() || split.val.empty() || split.test.empty())
        throw std::runtime_error("run_train: a split is empty (train " +
                                 std::to_string(split.train.size()) + ", val " +
                                 std::to_string(split.val.size()) + ", test " +
                                 std::to_string(split.test.size()) + ")");

    auto model = model_build(cfg.model, cfg.seed);
    bool cls = cfg.loss_kind == "cross_entropy";

    std::unique_ptr<ParamGroup> att_group, main_group;
    if (cfg.gr_enabled) {
        att_group = std::make_unique<ParamGroup>("att", model->params_in(Group::att), cfg.opt_att);
        main_group = std::make_unique<ParamGroup>("main", model->params_in(Group::main), cfg.opt_main);
        if (att_group->empty())
            throw std::runtime_error("run_train: gr_enabled but the model has no attention-group parameters");
    } else {
        main_group = std::make_unique<ParamGroup>("main", model->params(), cfg.opt_main);
    }

    std::ofstream steps_csv(fs::path(cfg.out_dir) / "train_steps.csv");
    steps_csv << "step,epoch,loss_att,loss_main,pre_clip_att,post_clip_att,"
                 "pre_clip_main,post_clip_main,lr_att,lr_main\n";
    std::ofstream epochs_csv(fs::path(cfg.out_dir) / "train_epochs.csv");
    epochs_csv << "epoch,train_loss,val_loss";
    auto gates = model->gates();
    for (const auto& g : gates)
        epochs_csv << ",gate" << g.layer << "_" << g.position << "_mean"
                   << ",gate" << g.layer << "_" << g.position << "_std";
    epochs_csv << "\n";

    TrainResult result;
    std::string best_prefix = (fs::path(cfg.out_dir) / "best").string();
    long n_train = static_cast<long>(split.train.size());

    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<long> order(static_cast<std::size_t>(n_train));
        for (long i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
        Rng shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(epoch) + 1);
        detail::shuffle_indices(order, shuffle_rng);

        double epoch_loss = 0.0;
        long batches = 0;
        for (long b = 0; b < n_train; b += cfg.batch_size) {
            long count = std::min(cfg.batch_size, n_train - b);
            std::uint64_t aug_seed = cfg.seed + static_cast<std::uint64_t>(epoch) * 1000003ull +
                                     static_cast<std::uint64_t>(b) * 7919ull;
            Tensor x = detail::stack_by_index(split.train, order, b, count,
                                              cfg.data.augment_noise_std, aug_seed);
            auto targets = detail::gather_targets(split.train, order, b, count, cls);
            TrainStepReport rep;
            try {
                if (cfg.gr_enabled) {
                    rep = gr_train_step(*model, x, *att_group, *main_group,
                                        make_loss_fn(cfg, true, targets, &result.clamp_count),
                                        make_loss_fn(cfg, false, targets, &result.clamp_count));
                } else {
                    rep = standard_train_step(*model, x, *main_group,
                                              make_loss_fn(cfg, false, targets, &result.clamp_count));
                }
            } catch (const std::runtime_error& e) {
                // Snapshot enough state to reconstruct the failure, then stop.
                json diag{{"step", result.steps},
                          {"epoch", epoch},
                          {"error", e.what()}};
                std::ofstream d(fs::path(cfg.out_dir) / "diagnostic.json");
                d << diag.dump(2) << "\n";
                throw;
            }
            steps_csv << result.steps << "," << epoch << "," << fmt_g17(rep.loss_att) << ","
                      << fmt_g17(rep.loss_main) << "," << fmt_g17(rep.pre_clip_att) << ","
                      << fmt_g17(rep.post_clip_att) << "," << fmt_g17(rep.pre_clip_main) << ","
                      << fmt_g17(rep.post_clip_main) << "," << fmt_g17(rep.lr_att) << ","
                      << fmt_g17(rep.lr_main) << "\n";
            epoch_loss += rep.loss_main;
            ++batches;
            ++result.steps;
        }
        double train_loss = epoch_loss / static_cast<double>(batches);
        double val_loss = dataset_loss(*model, split.val, cfg);
        result.final_train_loss = train_loss;
        result.val_losses.push_back(val_loss);

        epochs_csv << epoch << "," << fmt_g17(train_loss) << "," << fmt_g17(val_loss);
        for (const auto& g : model->gates()) {
            GateStats st = g.gate.stats();
            epochs_csv << "," << fmt_g17(st.mean) << "," << fmt_g17(st.std);
        }
        epochs_csv << "\n";

        if (val_loss < result.best_val_loss) {
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
            CheckpointMeta meta;
            meta.model_hash = model_config_hash(cfg.model);
            meta.model = model_config_json(cfg.model);
            meta.epoch = epoch;
            meta.val_loss = val_loss;
            meta.precision = cfg.checkpoint_precision;
            save_checkpoint(best_prefix, *model, meta);
        }
    }
    result.best_checkpoint_prefix = best_prefix;

    // Final test evaluation uses the best checkpoint, not the last state.
    apply_checkpoint(*model, load_checkpoint(best_prefix));
    Predictions p = predict(*model, split.test, cfg);
    json report;
    std::ofstream csv(fs::path(cfg.out_dir) / "eval.csv");
    csv << "fold,scheme,metric,value\n";
    if (cls) {
        ConfusionMatrix cm = label_confusion(p.true_labels, p.pred_labels,
                                             static_cast<int>(cfg.model.out_dim));
        long correct = 0;
        for (int k = 0; k < cm.k; ++k) correct += cm.at(k, k);
        result.test_accuracy = static_cast<double>(correct) / cm.total();
        report = json{{"n_samples", cm.total()},
                      {"accuracy", result.test_accuracy},
                      {"balanced_accuracy", balanced_accuracy(cm)},
                      {"f1_macro", f1_macro(cm)},
                      {"avg_sens_spec", avg_sens_spec(cm)},
                      {"confusion", cm_json(cm)}};
        csv << "test,classes,accuracy," << fmt_g17(result.test_accuracy) << "\n";
        csv << "test,classes,balanced_accuracy," << fmt_g17(balanced_accuracy(cm)) << "\n";
        csv << "test,classes,f1_macro," << fmt_g17(f1_macro(cm)) << "\n";
    } else {
        result.test_report = eval_report(p.ids, p.preds_mm, p.targets_mm);
        report = eval_report_json(result.test_report);
        write_eval_csv_rows(csv, "test", result.test_report);
    }
    std::ofstream ej(fs::path(cfg.out_dir) / "eval.json");
    ej << report.dump(2) << "\n";
    write_gate_stats_csv((fs::path(cfg.out_dir) / "gate_stats.csv").string(), model->gates());
    return result;
}

// ---------------------------------------------------------------------------
// run_eval
// ---------------------------------------------------------------------------

struct EvalResult {
    ConsolidatedReport consolidated; // regression
    double accuracy = std::numeric_limits<double>::quiet_NaN(); // classification, pooled
};

inline EvalResult run_eval(const RunConfig& cfg, const std::string& checkpoint_prefix) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint_prefix);
    std::string cfg_hash = model_config_hash(cfg.model);
    if (ck.meta.model_hash != cfg_hash)
        throw std::runtime_error("run_eval: checkpoint model hash " + ck.meta.model_hash +
                                 " does not match config model hash " + cfg_hash);
    auto model = model_from_checkpoint(ck);

    OutDirLock lock(cfg.out_dir);
    LoadedData data = load_dataset(cfg.data);
    bool cls = cfg.loss_kind == "cross_entropy";
    EvalResult result;
    json report;
    std::ofstream csv(fs::path(cfg.out_dir) / "eval.csv");
    csv << "fold,scheme,metric,value\n";

    long folds = cfg.data.split == "kfold" ? cfg.data.k : 1;
    if (cls) {
        ConfusionMatrix pooled(static_cast<int>(cfg.model.out_dim));
        json fold_rows = json::array();
        for (long f = 0; f < folds; ++f) {
            SplitResult split = folds == 1 ? make_split(data.samples, cfg.data)
                                           : kfold_split(data.samples, cfg.data.k, f);
            if (cfg.data.source == "cifar100") normalize_split(split);
            Predictions p = predict(*model, split.test, cfg);
            ConfusionMatrix cm = label_confusion(p.true_labels, p.pred_labels,
                                                 static_cast<int>(cfg.model.out_dim));
            pooled += cm;
            long correct = 0;
            for (int k = 0; k < cm.k; ++k) correct += cm.at(k, k);
            double acc = static_cast<double>(correct) / cm.total();
            fold_rows.push_back(json{{"fold", f}, {"accuracy", acc}});
            csv << f << ",classes,accuracy," << fmt_g17(acc) << "\n";
        }
        long correct = 0;
        for (int k = 0; k < pooled.k; ++k) correct += pooled.at(k, k);
        result.accuracy = static_cast<double>(correct) / pooled.total();
        report = json{{"pooled", json{{"accuracy", result.accuracy},
                                      {"balanced_accuracy", balanced_accuracy(pooled)},
                                      {"f1_macro", f1_macro(pooled)},
                                      {"confusion", cm_json(pooled)}}},
                      {"folds", fold_rows}};
        csv << "pooled,classes,accuracy," << fmt_g17(result.accuracy) << "\n";
    } else {
        std::vector<FoldPredictions> fps;
        for (long f = 0; f < folds; ++f) {
            SplitResult split = folds == 1 ? make_split(data.samples, cfg.data)
                                           : kfold_split(data.samples, cfg.data.k, f);
            Predictions p = predict(*model, split.test, cfg);
            FoldPredictions fp;
            fp.fold = f;
            fp.ids = std::move(p.ids);
            fp.preds_mm = std::move(p.preds_mm);
            fp.targets_mm = std::move(p.targets_mm);
            fps.push_back(std::move(fp));
        }
        result.consolidated = consolidate_folds(fps);
        json fold_rows = json::array();
        for (std::size_t f = 0; f < result.consolidated.per_fold.size(); ++f) {
            fold_rows.push_back(eval_report_json(result.consolidated.per_fold[f]));
            write_eval_csv_rows(csv, std::to_string(f), result.consolidated.per_fold[f]);
        }
        write_eval_csv_rows(csv, "pooled", result.consolidated.pooled);
        json stats;
        for (const auto& [key, st] : result.consolidated.fold_stats) {
            stats[key] = json{{"mean", st.mean}, {"variance", st.variance}};
            csv << "mean," << key << ",," << fmt_g17(st.mean) << "\n";
            csv << "variance," << key << ",," << fmt_g17(st.variance) << "\n";
        }
        report = json{{"pooled", eval_report_json(result.consolidated.pooled)},
                      {"folds", fold_rows},
                      {"fold_stats", stats}};
    }
    std::ofstream ej(fs::path(cfg.out_dir) / "eval.json");
    ej << report.dump(2) << "\n";
    return result;
}

// ---------------------------------------------------------------------------
// run_gradcheck / run_gatestats
// ---------------------------------------------------------------------------

struct GradcheckRun {
    GradCheckReport report;
    bool pass = false;
};

inline GradcheckRun run_gradcheck(const RunConfig& cfg) {
    auto model = model_build(cfg.model, cfg.seed);
    if (model->param_count() > 5000)
        throw ConfigError("gradcheck: model has " + std::to_string(model->param_count()) +
                          " parameters, limit 5000; reduce embed/depth/streams/hidden");
    LoadedData data = load_dataset(cfg.data);
    bool cls = cfg.loss_kind == "cross_entropy";
    long count = std::min<long>(4, static_cast<long>(data.samples.size()));
    std::vector<long> order(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
    Tensor x = detail::stack_by_index(data.samples, order, 0, count, 0.0, 0);
    auto targets = detail::gather_targets(data.samples, order, 0, count, cls);
    LossFn fn = make_loss_fn(cfg, false, targets, nullptr);

    GradcheckRun out;
    out.report = gradcheck([&]() { return fn(model->forward(x)); }, model->params());
    out.pass = std::isfinite(out.report.max_rel_err) && out.report.max_rel_err <= 1e-4;
    return out;
}

inline std::vector<GatePlacement> run_gatestats(const std::string& checkpoint_prefix,
                                                const std::string& out_csv) {
    LoadedCheckpoint ck = load_checkpoint(checkpoint_prefix);
    auto model = model_from_checkpoint(ck);
    auto gates = model->gates();
    if (gates.empty())
        throw std::runtime_error("gatestats: checkpoint has no attention-group parameters");
    write_gate_stats_csv(out_csv, gates);
    return gates;
}

// ---------------------------------------------------------------------------
// run_synth
// ---------------------------------------------------------------------------

inline void run_synth(const SynthSpec& spec, const std::string& out_csv) {
    SynthDataset ds = synth_regression_dataset(spec);
    std::ofstream out(out_csv);
    if (!out)
        throw std::runtime_error("synth: cannot write " + out_csv);
    long F = spec.n_informative + spec.n_nuisance;
    out << "unique_id";
    for (long j = 0; j < F; ++j) out << ",f" << j;
    out << ",size_mm\n";
    for (const auto& s : ds.samples) {
        out << s.unique_id;
        for (double v : s.input.data()) out << "," << fmt_g17(v);
        out << "," << fmt_g17(s.size_mm) << "\n";
    }
}

} // namespace gatenet
