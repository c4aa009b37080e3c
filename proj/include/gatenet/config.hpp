#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatenet/data.hpp"
#include "gatenet/layers.hpp"
#include "gatenet/losses.hpp"
#include "gatenet/optim.hpp"
#include "gatenet/rng.hpp"

namespace gatenet {

using nlohmann::json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::string source = "synth"; // synth | csv | cifar100
    std::string path;
    std::string split = "kfold"; // kfold | none
    long k = 6;
    long test_fold = 0;
    double augment_noise_std = 0.0;
    SynthSpec synth;
    long cifar_limit = 0; // 0 = all records
    std::vector<long> cifar_classes;
};

struct RunConfig {
    ModelConfig model;
    bool gr_enabled = true;
    OptimConfig opt_main;
    OptimConfig opt_att;
    std::string loss_kind = "weighted_huber"; // weighted_huber | cross_entropy
    SizeLossConfig loss_att;
    SizeLossConfig loss_main;
    DataConfig data;
    long epochs = 2;
    long batch_size = 8;
    std::uint64_t seed = 1;
    std::string out_dir = "run_out";
    std::string checkpoint_precision = "f32"; // f32 | f64
};

namespace detail {

inline void check_keys(const json& j, const std::string& section,
                       const std::set<std::string>& allowed) {
    if (!j.is_object())
        throw ConfigError("config: " + section + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("config: " + section + "." + it.key() + ": unknown key");
}

template <class T>
T field(const json& j, const std::string& section, const std::string& key, T def) {
    if (!j.contains(key)) return def;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config: " + section + "." + key + ": wrong type");
    }
}

inline SizeLossConfig parse_size_loss(const json& j, const std::string& section) {
    check_keys(j, section, {"T1_mm", "alpha1", "T2_mm", "alpha2", "huber_delta",
                            "min_mm", "max_mm", "residual_in_mm"});
    SizeLossConfig c;
    c.T1_mm = field(j, section, "T1_mm", c.T1_mm);
    c.alpha1 = field(j, section, "alpha1", c.alpha1);
    c.T2_mm = field(j, section, "T2_mm", c.T2_mm);
    c.alpha2 = field(j, section, "alpha2", c.alpha2);
    c.huber_delta = field(j, section, "huber_delta", c.huber_delta);
    c.min_mm = field(j, section, "min_mm", c.min_mm);
    c.max_mm = field(j, section, "max_mm", c.max_mm);
    c.residual_in_mm = field(j, section, "residual_in_mm", c.residual_in_mm);
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw ConfigError("config: " + section + ": " + e.what());
    }
    return c;
}

inline OptimConfig parse_optim(const json& j, const std::string& section, OptimConfig def) {
    check_keys(j, section, {"lr", "weight_decay", "clip_threshold", "beta1", "beta2", "eps",
                            "plain_sgd", "schedule"});
    OptimConfig c = def;
    c.lr = field(j, section, "lr", c.lr);
    c.weight_decay = field(j, section, "weight_decay", c.weight_decay);
    c.clip_threshold = field(j, section, "clip_threshold", c.clip_threshold);
    c.beta1 = field(j, section, "beta1", c.beta1);
    c.beta2 = field(j, section, "beta2", c.beta2);
    c.eps = field(j, section, "eps", c.eps);
    c.plain_sgd = field(j, section, "plain_sgd", c.plain_sgd);
    if (j.contains("schedule")) {
        const json& sj = j.at("schedule");
        check_keys(sj, section + ".schedule", {"enabled", "eta_min", "T0", "t_mult"});
        c.use_schedule = field(sj, section + ".schedule", "enabled", true);
        c.eta_min = field(sj, section + ".schedule", "eta_min", c.eta_min);
        c.schedule_T0 = field(sj, section + ".schedule", "T0", c.schedule_T0);
        c.schedule_t_mult = field(sj, section + ".schedule", "t_mult", c.schedule_t_mult);
        if (c.schedule_T0 < 1)
            throw ConfigError("config: " + section + ".schedule.T0: must be >= 1");
        if (c.schedule_t_mult < 1)
            throw ConfigError("config: " + section + ".schedule.t_mult: must be >= 1");
    }
    if (!(c.lr >= 0.0))
        throw ConfigError("config: " + section + ".lr: must be >= 0");
    if (!(c.clip_threshold > 0.0))
        throw ConfigError("config: " + section + ".clip_threshold: must be > 0");
    if (c.weight_decay < 0.0)
        throw ConfigError("config: " + section + ".weight_decay: must be >= 0");
    return c;
}

} // namespace detail

inline ModelConfig parse_model_config(const json& m) {
    using detail::check_keys;
    using detail::field;
    check_keys(m, "model", {"arch", "use_hag", "out_dim", "image_c", "image_h", "image_w",
                            "patch", "embed", "heads", "depth", "streams", "stream_in",
                            "stream_channels", "in_dim", "hidden"});
    ModelConfig c;
    c.arch = field<std::string>(m, "model", "arch", c.arch);
    c.use_hag = field(m, "model", "use_hag", c.use_hag);
    c.out_dim = field(m, "model", "out_dim", c.out_dim);
    c.image_c = field(m, "model", "image_c", c.image_c);
    c.image_h = field(m, "model", "image_h", c.image_h);
    c.image_w = field(m, "model", "image_w", c.image_w);
    c.patch = field(m, "model", "patch", c.patch);
    c.embed = field(m, "model", "embed", c.embed);
    c.heads = field(m, "model", "heads", c.heads);
    c.depth = field(m, "model", "depth", c.depth);
    c.streams = field(m, "model", "streams", c.streams);
    c.stream_in = field(m, "model", "stream_in", c.stream_in);
    c.stream_channels = field(m, "model", "stream_channels", c.stream_channels);
    c.in_dim = field(m, "model", "in_dim", c.in_dim);
    c.hidden = field(m, "model", "hidden", c.hidden);
    if (c.arch != "micro_vit" && c.arch != "multistream_cnn" && c.arch != "gated_mlp")
        throw ConfigError("config: model.arch: unknown architecture \"" + c.arch + "\"");
    return c;
}

inline RunConfig parse_run_config(const json& j) {
    using detail::check_keys;
    using detail::field;
    check_keys(j, "root", {"model", "optimizer", "loss", "data", "run"});
    RunConfig c;

    if (j.contains("model")) c.model = parse_model_config(j.at("model"));

    // ViT tolerates larger main-gradient norms than the CNN; group defaults
    // follow the architecture unless overridden.
    c.opt_main.lr = 1e-3;
    c.opt_main.weight_decay = 1e-5;
    c.opt_main.clip_threshold = c.model.arch == "micro_vit" ? 128.0 : 8.0;
    c.opt_att.lr = 1e-2;
    c.opt_att.weight_decay = 1e-5;
    c.opt_att.clip_threshold = 128.0;

    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        check_keys(o, "optimizer", {"gr_enabled", "main", "att"});
        c.gr_enabled = field(o, "optimizer", "gr_enabled", c.gr_enabled);
        if (o.contains("main")) c.opt_main = detail::parse_optim(o.at("main"), "optimizer.main", c.opt_main);
        if (o.contains("att")) c.opt_att = detail::parse_optim(o.at("att"), "optimizer.att", c.opt_att);
    }
    if (c.gr_enabled && !c.model.use_hag)
        throw ConfigError("config: optimizer.gr_enabled: requires model.use_hag = true");

    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, "loss", {"kind", "att", "main"});
        c.loss_kind = field<std::string>(l, "loss", "kind", c.loss_kind);
        if (l.contains("att")) c.loss_att = detail::parse_size_loss(l.at("att"), "loss.att");
        if (l.contains("main")) c.loss_main = detail::parse_size_loss(l.at("main"), "loss.main");
    }
    if (c.loss_kind != "weighted_huber" && c.loss_kind != "cross_entropy")
        throw ConfigError("config: loss.kind: unknown loss \"" + c.loss_kind + "\"");
    if (c.loss_kind == "cross_entropy" && c.model.out_dim < 2)
        throw ConfigError("config: loss.kind: cross_entropy requires model.out_dim >= 2");

    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, "data", {"source", "path", "split", "k", "test_fold", "augment_noise_std",
                               "synth", "cifar_limit", "cifar_classes"});
        c.data.source = field<std::string>(d, "data", "source", c.data.source);
        c.data.path = field<std::string>(d, "data", "path", c.data.path);
        c.data.split = field<std::string>(d, "data", "split", c.data.split);
        c.data.k = field(d, "data", "k", c.data.k);
        c.data.test_fold = field(d, "data", "test_fold", c.data.test_fold);
        c.data.augment_noise_std = field(d, "data", "augment_noise_std", c.data.augment_noise_std);
        c.data.cifar_limit = field(d, "data", "cifar_limit", c.data.cifar_limit);
        if (d.contains("cifar_classes")) {
            try {
                c.data.cifar_classes = d.at("cifar_classes").get<std::vector<long>>();
            } catch (const json::exception&) {
                throw ConfigError("config: data.cifar_classes: expected an integer array");
            }
        }
        if (d.contains("synth")) {
            const json& s = d.at("synth");
            check_keys(s, "data.synth", {"n_samples", "n_informative", "n_nuisance", "noise_std", "seed"});
            c.data.synth.n_samples = field(s, "data.synth", "n_samples", c.data.synth.n_samples);
            c.data.synth.n_informative = field(s, "data.synth", "n_informative", c.data.synth.n_informative);
            c.data.synth.n_nuisance = field(s, "data.synth", "n_nuisance", c.data.synth.n_nuisance);
            c.data.synth.noise_std = field(s, "data.synth", "noise_std", c.data.synth.noise_std);
            c.data.synth.seed = field(s, "data.synth", "seed", c.data.synth.seed);
        }
    }
    if (c.data.source != "synth" && c.data.source != "csv" && c.data.source != "cifar100")
        throw ConfigError("config: data.source: unknown source \"" + c.data.source + "\"");
    if (c.data.split != "kfold" && c.data.split != "none")
        throw ConfigError("config: data.split: must be kfold or none");
    if (c.data.split == "kfold" && c.data.k < 3)
        throw ConfigError("config: data.k: must be >= 3 for kfold");
    if (c.data.split == "kfold" && (c.data.test_fold < 0 || c.data.test_fold >= c.data.k))
        throw ConfigError("config: data.test_fold: outside [0, k)");
    if (c.data.source != "synth" && c.data.path.empty())
        throw ConfigError("config: data.path: required for source " + c.data.source);

    if (j.contains("run")) {
        const json& r = j.at("run");
        check_keys(r, "run", {"epochs", "batch_size", "seed", "out_dir", "checkpoint_precision"});
        c.epochs = field(r, "run", "epochs", c.epochs);
        c.batch_size = field(r, "run", "batch_size", c.batch_size);
        c.seed = field<std::uint64_t>(r, "run", "seed", c.seed);
        c.out_dir = field<std::string>(r, "run", "out_dir", c.out_dir);
        c.checkpoint_precision = field<std::string>(r, "run", "checkpoint_precision",
                                                    c.checkpoint_precision);
    }
    if (c.epochs < 1) throw ConfigError("config: run.epochs: must be >= 1");
    if (c.batch_size < 1) throw ConfigError("config: run.batch_size: must be >= 1");
    if (c.checkpoint_precision != "f32" && c.checkpoint_precision != "f64")
        throw ConfigError("config: run.checkpoint_precision: must be f32 or f64");
    return c;
}

// Path-existence validation is separate from parsing so tests can construct
// configs without touching the filesystem.
inline void validate_paths(const RunConfig& c) {
    if (c.data.source != "synth" && !std::filesystem::exists(c.data.path))
        throw ConfigError("config: data.path: file not found: " + c.data.path);
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

inline json model_config_json(const ModelConfig& m) {
    return json{{"arch", m.arch},
                {"use_hag", m.use_hag},
                {"out_dim", m.out_dim},
                {"image_c", m.image_c},
                {"image_h", m.image_h},
                {"image_w", m.image_w},
                {"patch", m.patch},
                {"embed", m.embed},
                {"heads", m.heads},
                {"depth", m.depth},
                {"streams", m.streams},
                {"stream_in", m.stream_in},
                {"stream_channels", m.stream_channels},
                {"in_dim", m.in_dim},
                {"hidden", m.hidden}};
}

inline ModelConfig model_config_from_json(const json& j) { return parse_model_config(j); }

// Stable identity for "same model section": FNV-1a over the canonical dump.
inline std::string model_config_hash(const ModelConfig& m) {
    std::uint64_t h = fnv1a64(model_config_json(m).dump());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace gatenet
