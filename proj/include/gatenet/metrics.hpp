#pragma once

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace gatenet {

// Size binning. Triclass: diminutive up to and including 5 mm, small strictly
// between 5 and 10, large at 10 and above. Binary splits at 10 mm, upper side
// inclusive, so Large and Over10 agree.
enum class Scheme { triclass, binary };

inline int num_classes(Scheme s) { return s == Scheme::triclass ? 3 : 2; }

inline const char* class_label(Scheme s, int k) {
    static const char* tri[] = {"D", "S", "L"};
    static const char* bin[] = {"Under10", "Over10"};
    return s == Scheme::triclass ? tri[k] : bin[k];
}

inline int bin_size(double y_mm, Scheme s) {
    if (y_mm < 0.0)
        throw std::invalid_argument("bin_size: negative size " + std::to_string(y_mm));
    if (s == Scheme::binary) return y_mm < 10.0 ? 0 : 1;
    if (y_mm <= 5.0) return 0;
    if (y_mm < 10.0) return 1;
    return 2;
}

struct ConfusionMatrix {
    int k = 0;
    std::vector<long> counts; // row = true, col = predicted

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int k_) : k(k_), counts(static_cast<std::size_t>(k_) * k_, 0) {}

    long& at(int t, int p) { return counts[static_cast<std::size_t>(t * k + p)]; }
    long at(int t, int p) const { return counts[static_cast<std::size_t>(t * k + p)]; }
    long total() const {
        long n = 0;
        for (long c : counts) n += c;
        return n;
    }
    long row_sum(int t) const {
        long n = 0;
        for (int p = 0; p < k; ++p) n += at(t, p);
        return n;
    }
    long col_sum(int p) const {
        long n = 0;
        for (int t = 0; t < k; ++t) n += at(t, p);
        return n;
    }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        if (k != o.k)
            throw std::invalid_argument("ConfusionMatrix: size mismatch");
        for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
        return *this;
    }
};

inline ConfusionMatrix confusion(const std::vector<double>& preds_mm,
                                 const std::vector<double>& targets_mm, Scheme s) {
    if (preds_mm.size() != targets_mm.size())
        throw std::invalid_argument("confusion: " + std::to_string(preds_mm.size()) +
                                    " predictions vs " + std::to_string(targets_mm.size()) +
                                    " targets");
    ConfusionMatrix cm(num_classes(s));
    for (std::size_t i = 0; i < preds_mm.size(); ++i)
        ++cm.at(bin_size(targets_mm[i], s), bin_size(preds_mm[i], s));
    return cm;
}

inline std::vector<double> per_class_recall(const ConfusionMatrix& cm) {
    std::vector<double> r(static_cast<std::size_t>(cm.k), 0.0);
    for (int t = 0; t < cm.k; ++t) {
        long n = cm.row_sum(t);
        r[static_cast<std::size_t>(t)] = n > 0 ? static_cast<double>(cm.at(t, t)) / n : 0.0;
    }
    return r;
}

inline std::vector<double> per_class_precision(const ConfusionMatrix& cm) {
    std::vector<double> p(static_cast<std::size_t>(cm.k), 0.0);
    for (int c = 0; c < cm.k; ++c) {
        long n = cm.col_sum(c);
        p[static_cast<std::size_t>(c)] = n > 0 ? static_cast<double>(cm.at(c, c)) / n : 0.0;
    }
    return p;
}

// Mean recall over classes that appear in the data. Absent classes are
// excluded; the optional counter reports how many were skipped.
inline double balanced_accuracy(const ConfusionMatrix& cm, long* excluded = nullptr) {
    if (cm.total() == 0)
        throw std::invalid_argument("balanced_accuracy: empty confusion matrix");
    double sum = 0.0;
    int used = 0;
    for (int t = 0; t < cm.k; ++t) {
        long n = cm.row_sum(t);
        if (n == 0) {
            if (excluded) ++*excluded;
            continue;
        }
        sum += static_cast<double>(cm.at(t, t)) / n;
        ++used;
    }
    return sum / used;
}

// Unweighted mean of per-class F1; F1 is 0 whenever precision + recall is 0.
// weighted=true weights each class by its support instead.
inline double f1_macro(const ConfusionMatrix& cm, bool weighted = false) {
    if (cm.total() == 0)
        throw std::invalid_argument("f1_macro: empty confusion matrix");
    auto rec = per_class_recall(cm);
    auto pre = per_class_precision(cm);
    double sum = 0.0, wsum = 0.0;
    for (int c = 0; c < cm.k; ++c) {
        double p = pre[static_cast<std::size_t>(c)], r = rec[static_cast<std::size_t>(c)];
        double f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        double w = weighted ? static_cast<double>(cm.row_sum(c)) : 1.0;
        sum += w * f1;
        wsum += w;
    }
    return sum / wsum;
}

// One-vs-rest mean of (sensitivity + specificity)/2 across classes present in
// the data. Specificity with no negatives counts as 1 (no negative was
// misclassified).
inline double avg_sens_spec(const ConfusionMatrix& cm, long* excluded = nullptr) {
    if (cm.total() == 0)
        throw std::invalid_argument("avg_sens_spec: empty confusion matrix");
    long total = cm.total();
    double sum = 0.0;
    int used = 0;
    for (int c = 0; c < cm.k; ++c) {
        long support = cm.row_sum(c);
        if (support == 0) {
            if (excluded) ++*excluded;
            continue;
        }
        long tp = cm.at(c, c);
        long fp = cm.col_sum(c) - tp;
        long neg = total - support;
        double sens = static_cast<double>(tp) / support;
        double spec = neg > 0 ? static_cast<double>(neg - fp) / neg : 1.0;
        sum += 0.5 * (sens + spec);
        ++used;
    }
    return sum / used;
}

struct MetricSet {
    double balanced_accuracy = 0.0;
    double f1_macro = 0.0;
    double avg_sens_spec = 0.0;
    std::vector<double> recalls;
    std::vector<double> precisions;
    ConfusionMatrix cm;
};

struct EvalReport {
    MetricSet triclass;
    MetricSet binary;
    long n_samples = 0;
    long n_unique_ids = 0;
};

inline MetricSet metric_set(const std::vector<double>& preds_mm,
                            const std::vector<double>& targets_mm, Scheme s) {
    MetricSet m;
    m.cm = confusion(preds_mm, targets_mm, s);
    m.balanced_accuracy = balanced_accuracy(m.cm);
    m.f1_macro = f1_macro(m.cm);
    m.avg_sens_spec = avg_sens_spec(m.cm);
    m.recalls = per_class_recall(m.cm);
    m.precisions = per_class_precision(m.cm);
    return m;
}

inline EvalReport eval_report(const std::vector<std::string>& ids,
                              const std::vector<double>& preds_mm,
                              const std::vector<double>& targets_mm) {
    if (ids.size() != preds_mm.size() || preds_mm.size() != targets_mm.size())
        throw std::invalid_argument("eval_report: ids/preds/targets length mismatch");
    if (preds_mm.empty())
        throw std::invalid_argument("eval_report: no samples");
    EvalReport r;
    r.triclass = metric_set(preds_mm, targets_mm, Scheme::triclass);
    r.binary = metric_set(preds_mm, targets_mm, Scheme::binary);
    r.n_samples = static_cast<long>(preds_mm.size());
    std::set<std::string> uniq(ids.begin(), ids.end());
    r.n_unique_ids = static_cast<long>(uniq.size());
    return r;
}

// ---------------------------------------------------------------------------
// Fold consolidation
// ---------------------------------------------------------------------------

struct FoldPredictions {
    long fold = 0;
    std::vector<std::string> ids;
    std::vector<double> preds_mm;
    std::vector<double> targets_mm;
};

struct MetricStat {
    double mean = 0.0;
    double variance = 0.0; // population variance over folds
};

struct ConsolidatedReport {
    EvalReport pooled;
    std::vector<EvalReport> per_fold;
    std::map<std::string, MetricStat> fold_stats;
};

// Pools all fold predictions into one report (the pooled confusion matrix is
// the elementwise sum of the fold matrices) and summarizes per-fold metric
// spread. Sample ids must not repeat across folds.
inline ConsolidatedReport consolidate_folds(const std::vector<FoldPredictions>& folds) {
    if (folds.empty())
        throw std::invalid_argument("consolidate_folds: no folds");
    std::set<std::string> seen;
    std::vector<std::string> all_ids;
    std::vector<double> all_preds, all_targets;
    ConsolidatedReport out;
    for (const auto& f : folds) {
        if (f.ids.size() != f.preds_mm.size() || f.ids.size() != f.targets_mm.size())
            throw std::invalid_argument("consolidate_folds: fold " + std::to_string(f.fold) +
                                        " has inconsistent lengths");
        for (const auto& id : f.ids) {
            if (!seen.insert(id).second)
                throw std::invalid_argument("consolidate_folds: sample id \"" + id +
                                            "\" appears in more than one fold");
        }
        all_ids.insert(all_ids.end(), f.ids.begin(), f.ids.end());
        all_preds.insert(all_preds.end(), f.preds_mm.begin(), f.preds_mm.end());
        all_targets.insert(all_targets.end(), f.targets_mm.begin(), f.targets_mm.end());
        out.per_fold.push_back(eval_report(f.ids, f.preds_mm, f.targets_mm));
    }
    out.pooled = eval_report(all_ids, all_preds, all_targets);

    auto stat = [&](const std::string& key, auto getter) {
        MetricStat st;
        double n = static_cast<double>(out.per_fold.size());
        for (const auto& r : out.per_fold) st.mean += getter(r);
        st.mean /= n;
        for (const auto& r : out.per_fold) {
            double d = getter(r) - st.mean;
            st.variance += d * d;
        }
        st.variance /= n;
        out.fold_stats[key] = st;
    };
    stat("triclass.balanced_accuracy", [](const EvalReport& r) { return r.triclass.balanced_accuracy; });
    stat("triclass.f1_macro", [](const EvalReport& r) { return r.triclass.f1_macro; });
    stat("triclass.avg_sens_spec", [](const EvalReport& r) { return r.triclass.avg_sens_spec; });
    stat("binary.balanced_accuracy", [](const EvalReport& r) { return r.binary.balanced_accuracy; });
    stat("binary.f1_macro", [](const EvalReport& r) { return r.binary.f1_macro; });
    stat("binary.avg_sens_spec", [](const EvalReport& r) { return r.binary.avg_sens_spec; });
    return out;
}

} // namespace gatenet
