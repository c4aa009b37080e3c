#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gatenet/rng.hpp"
#include "gatenet/tensor.hpp"

namespace gatenet {

// One observation. Frames of the same lesion share unique_id; splits operate
// on ids, never on frames.
struct Sample {
    std::string unique_id;
    Tensor input;
    double size_mm = std::numeric_limits<double>::quiet_NaN();
    long class_label = -1;
    long fold = -1; // preassigned fold, -1 = unassigned

    bool has_size() const { return !std::isnan(size_mm); }
    bool has_class() const { return class_label >= 0; }
};

struct SplitPlan {
    long k = 0;
    long test_fold = 0;
    long val_fold = 0;
};

struct SplitResult {
    std::vector<Sample> train, val, test;
    SplitPlan plan;
};

// ---------------------------------------------------------------------------
// CSV regression loader
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, const std::string& col, long row) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("load_csv_regression: cannot parse \"" + s + "\" as number in column " +
                                    col + " at row " + std::to_string(row));
    }
}

} // namespace detail

// Header must contain unique_id and size_mm; fold is optional; every other
// column is a feature, in header order.
inline std::vector<Sample> load_csv_regression(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("load_csv_regression: cannot open " + path);
    std::string header;
    if (!std::getline(in, header))
        throw std::runtime_error("load_csv_regression: empty file " + path);
    auto cols = detail::split_csv_line(header);
    long id_col = -1, size_col = -1, fold_col = -1;
    std::vector<long> feat_cols;
    for (long i = 0; i < static_cast<long>(cols.size()); ++i) {
        if (cols[static_cast<std::size_t>(i)] == "unique_id") id_col = i;
        else if (cols[static_cast<std::size_t>(i)] == "size_mm") size_col = i;
        else if (cols[static_cast<std::size_t>(i)] == "fold") fold_col = i;
        else feat_cols.push_back(i);
    }
    if (id_col < 0)
        throw std::runtime_error("load_csv_regression: missing column unique_id in " + path);
    if (size_col < 0)
        throw std::runtime_error("load_csv_regression: missing column size_mm in " + path);

    std::vector<Sample> samples;
    std::string line;
    long row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != cols.size())
            throw std::invalid_argument("load_csv_regression: row " + std::to_string(row) + " has " +
                                        std::to_string(f.size()) + " fields, header has " +
                                        std::to_string(cols.size()));
        Sample s;
        s.unique_id = f[static_cast<std::size_t>(id_col)];
        if (s.unique_id.empty())
            throw std::invalid_argument("load_csv_regression: empty unique_id at row " +
                                        std::to_string(row));
        s.size_mm = detail::parse_double(f[static_cast<std::size_t>(size_col)], "size_mm", row);
        if (fold_col >= 0)
            s.fold = static_cast<long>(detail::parse_double(f[static_cast<std::size_t>(fold_col)], "fold", row));
        std::vector<double> feats;
        feats.reserve(feat_cols.size());
        for (long c : feat_cols)
            feats.push_back(detail::parse_double(f[static_cast<std::size_t>(c)],
                                                 cols[static_cast<std::size_t>(c)], row));
        s.input = Tensor::from(std::move(feats), {static_cast<long>(feat_cols.size())});
        samples.push_back(std::move(s));
    }
    if (samples.empty())
        throw std::runtime_error("load_csv_regression: no data rows in " + path);
    return samples;
}

// ---------------------------------------------------------------------------
// CIFAR-100 binary loader
// ---------------------------------------------------------------------------

// Record layout: 1 coarse-label byte, 1 fine-label byte, 3072 pixel bytes as
// three 32x32 channel planes. Pixels are scaled to [0,1]; channel
// normalization is a separate pass so its statistics can come from the
// training split alone.
inline std::vector<Sample> load_cifar100_binary(const std::string& path, long limit = -1,
                                                const std::set<long>& class_filter = {}) {
    constexpr long kRecord = 3074;
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("load_cifar100_binary: cannot open " + path);
    in.seekg(0, std::ios::end);
    long size = static_cast<long>(in.tellg());
    in.seekg(0, std::ios::beg);
    if (size == 0 || size % kRecord != 0)
        throw std::runtime_error("load_cifar100_binary: file length " + std::to_string(size) +
                                 " is not a multiple of " + std::to_string(kRecord));
    long n = size / kRecord;
    std::vector<Sample> samples;
    std::vector<unsigned char> buf(kRecord);
    for (long i = 0; i < n; ++i) {
        if (!in.read(reinterpret_cast<char*>(buf.data()), kRecord))
            throw std::runtime_error("load_cifar100_binary: truncated record " + std::to_string(i));
        long fine = buf[1];
        if (!class_filter.empty() && !class_filter.count(fine)) continue;
        std::vector<double> px(3072);
        for (long j = 0; j < 3072; ++j)
            px[static_cast<std::size_t>(j)] = static_cast<double>(buf[static_cast<std::size_t>(j + 2)]) / 255.0;
        Sample s;
        s.unique_id = "cifar-" + std::to_string(i);
        s.class_label = fine;
        s.input = Tensor::from(std::move(px), {3, 32, 32});
        samples.push_back(std::move(s));
        if (limit > 0 && static_cast<long>(samples.size()) >= limit) break;
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Synthetic regression task
// ---------------------------------------------------------------------------

struct SynthSpec {
    long n_samples = 256;
    long n_informative = 8;
    long n_nuisance = 8;
    double noise_std = 1.0;
    std::uint64_t seed = 1;
};

struct SynthDataset {
    std::vector<Sample> samples;
    std::vector<long> informative_indices;
    SynthSpec spec;
};

// Informative features share a latent factor, so each one correlates strongly
// with the target on its own; nuisance features are independent noise. Targets
// land in the clinical 0.5-20 mm range centered at the midpoint.
inline SynthDataset synth_regression_dataset(const SynthSpec& spec) {
    if (spec.n_samples < 1 || spec.n_informative < 1 || spec.n_nuisance < 1)
        throw std::invalid_argument("synth_regression_dataset: counts must be >= 1");
    if (spec.noise_std < 0.0)
        throw std::invalid_argument("synth_regression_dataset: noise_std must be >= 0");
    SynthDataset ds;
    ds.spec = spec;
    Rng rng(spec.seed);
    long F = spec.n_informative + spec.n_nuisance;
    for (long i = 0; i < spec.n_samples; ++i) {
        std::vector<double> x(static_cast<std::size_t>(F));
        double z = rng.normal();
        double acc = 0.0;
        for (long j = 0; j < spec.n_informative; ++j) {
            double v = z + 0.5 * rng.normal();
            x[static_cast<std::size_t>(j)] = v;
            acc += v;
        }
        for (long j = spec.n_informative; j < F; ++j)
            x[static_cast<std::size_t>(j)] = rng.normal();
        double y = 10.25 + 4.0 * (acc / static_cast<double>(spec.n_informative)) +
                   rng.normal(0.0, spec.noise_std);
        Sample s;
        s.unique_id = "synth-" + std::to_string(i);
        s.size_mm = std::clamp(y, 0.5, 20.0);
        s.input = Tensor::from(std::move(x), {F});
        ds.samples.push_back(std::move(s));
    }
    for (long j = 0; j < spec.n_informative; ++j) ds.informative_indices.push_back(j);
    return ds;
}

// ---------------------------------------------------------------------------
// Normalization / augmentation
// ---------------------------------------------------------------------------

struct ChannelStats {
    std::vector<double> means;
    std::vector<double> stds;
};

inline ChannelStats compute_channel_stats(const std::vector<Sample>& samples) {
    if (samples.empty())
        throw std::invalid_argument("compute_channel_stats: no samples");
    const Shape& s0 = samples[0].input.shape();
    if (s0.size() != 3)
        throw std::invalid_argument("compute_channel_stats: expected [C,H,W] inputs, got " +
                                    shape_str(s0));
    long C = s0[0], hw = s0[1] * s0[2];
    ChannelStats st;
    st.means.assign(static_cast<std::size_t>(C), 0.0);
    st.stds.assign(static_cast<std::size_t>(C), 0.0);
    long per_channel = hw * static_cast<long>(samples.size());
    for (const auto& s : samples) {
        if (s.input.shape() != s0)
            throw std::invalid_argument("compute_channel_stats: inconsistent shapes");
        for (long c = 0; c < C; ++c)
            for (long i = 0; i < hw; ++i)
                st.means[static_cast<std::size_t>(c)] += s.input.data()[static_cast<std::size_t>(c * hw + i)];
    }
    for (long c = 0; c < C; ++c) st.means[static_cast<std::size_t>(c)] /= static_cast<double>(per_channel);
    for (const auto& s : samples)
        for (long c = 0; c < C; ++c)
            for (long i = 0; i < hw; ++i) {
                double d = s.input.data()[static_cast<std::size_t>(c * hw + i)] -
                           st.means[static_cast<std::size_t>(c)];
                st.stds[static_cast<std::size_t>(c)] += d * d;
            }
    for (long c = 0; c < C; ++c)
        st.stds[static_cast<std::size_t>(c)] =
            std::sqrt(st.stds[static_cast<std::size_t>(c)] / static_cast<double>(per_channel));
    return st;
}

inline std::vector<Sample> normalize_images(std::vector<Sample> samples,
                                            const std::vector<double>& means,
                                            const std::vector<double>& stds) {
    if (means.size() != stds.size())
        throw std::invalid_argument("normalize_images: means/stds length mismatch");
    for (double s : stds)
        if (!(s > 0.0))
            throw std::invalid_argument("normalize_images: stds must be positive");
    for (auto& s : samples) {
        const Shape& sh = s.input.shape();
        if (sh.size() != 3 || sh[0] != static_cast<long>(means.size()))
            throw std::invalid_argument("normalize_images: sample shape " + shape_str(sh) +
                                        " does not match " + std::to_string(means.size()) +
                                        " channels");
        long hw = sh[1] * sh[2];
        std::vector<double> out = s.input.data();
        for (long c = 0; c < sh[0]; ++c)
            for (long i = 0; i < hw; ++i) {
                auto& v = out[static_cast<std::size_t>(c * hw + i)];
                v = (v - means[static_cast<std::size_t>(c)]) / stds[static_cast<std::size_t>(c)];
            }
        s.input = Tensor::from(std::move(out), sh);
    }
    return samples;
}

inline Sample augment_gaussian_noise(const Sample& sample, double sigma, std::uint64_t seed) {
    if (sigma < 0.0)
        throw std::invalid_argument("augment_gaussian_noise: sigma must be >= 0");
    Sample out = sample;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    std::vector<double> data = sample.input.data();
    for (auto& v : data) v += rng.normal(0.0, sigma);
    out.input = Tensor::from(std::move(data), sample.input.shape());
    return out;
}

// ---------------------------------------------------------------------------
// K-fold split by unique id
// ---------------------------------------------------------------------------

// Fold assignment for every unique id: preassigned folds are honored when all
// samples carry one (an id spanning two folds is an error); otherwise ids are
// ranked by hash and dealt round-robin, which balances fold sizes to within 1.
inline std::map<std::string, long> assign_folds(const std::vector<Sample>& samples, long k) {
    std::map<std::string, long> fold_of;
    bool any_pre = false, any_unpre = false;
    for (const auto& s : samples)
        (s.fold >= 0 ? any_pre : any_unpre) = true;
    if (any_pre && any_unpre)
        throw std::invalid_argument("kfold_split: some samples have preassigned folds and some do not");
    if (any_pre) {
        for (const auto& s : samples) {
            if (s.fold >= k)
                throw std::invalid_argument("kfold_split: sample fold " + std::to_string(s.fold) +
                                            " >= k " + std::to_string(k));
            auto [it, inserted] = fold_of.emplace(s.unique_id, s.fold);
            if (!inserted && it->second != s.fold)
                throw std::invalid_argument("kfold_split: unique_id \"" + s.unique_id +
                                            "\" spans folds " + std::to_string(it->second) +
                                            " and " + std::to_string(s.fold));
        }
        return fold_of;
    }
    std::set<std::string> ids;
    for (const auto& s : samples) ids.insert(s.unique_id);
    std::vector<std::pair<std::uint64_t, std::string>> ranked;
    ranked.reserve(ids.size());
    for (const auto& id : ids) ranked.emplace_back(fnv1a64(id), id);
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t r = 0; r < ranked.size(); ++r)
        fold_of[ranked[r].second] = static_cast<long>(r % static_cast<std::size_t>(k));
    return fold_of;
}

inline SplitResult kfold_split(const std::vector<Sample>& samples, long k, long test_fold) {
    if (k < 3)
        throw std::invalid_argument("kfold_split: k must be >= 3, got " + std::to_string(k));
    if (test_fold < 0 || test_fold >= k)
        throw std::invalid_argument("kfold_split: test_fold " + std::to_string(test_fold) +
                                    " outside [0, " + std::to_string(k) + ")");
    auto fold_of = assign_folds(samples, k);
    SplitResult r;
    r.plan = {k, test_fold, (test_fold + 1) % k};
    for (const auto& s : samples) {
        long f = fold_of.at(s.unique_id);
        if (f == r.plan.test_fold) r.test.push_back(s);
        else if (f == r.plan.val_fold) r.val.push_back(s);
        else r.train.push_back(s);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

// Stacks sample inputs along a new leading batch axis.
inline Tensor stack_inputs(const std::vector<Sample>& samples, long begin, long count) {
    if (count < 1 || begin < 0 || begin + count > static_cast<long>(samples.size()))
        throw std::invalid_argument("stack_inputs: bad range");
    const Shape& s0 = samples[static_cast<std::size_t>(begin)].input.shape();
    Shape os;
    os.push_back(count);
    os.insert(os.end(), s0.begin(), s0.end());
    long stride = numel_of(s0);
    std::vector<double> out(static_cast<std::size_t>(count * stride));
    for (long i = 0; i < count; ++i) {
        const auto& s = samples[static_cast<std::size_t>(begin + i)];
        if (s.input.shape() != s0)
            throw std::invalid_argument("stack_inputs: inconsistent input shapes");
        std::copy(s.input.data().begin(), s.input.data().end(),
                  out.begin() + static_cast<long>(i * stride));
    }
    return Tensor::from(std::move(out), os);
}

} // namespace gatenet
