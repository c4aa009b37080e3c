#include <catch2/catch_amalgamated.hpp>

#include <gatenet/metrics.hpp>
#include <gatenet/rng.hpp>

#include <cmath>

using namespace gatenet;

namespace {

// Build a matrix directly from row-major counts.
ConfusionMatrix cm_from(int k, std::vector<long> counts) {
    ConfusionMatrix cm(k);
    cm.counts = std::move(counts);
    return cm;
}

} // namespace

TEST_CASE("size binning boundaries", "[metrics]") {
    SECTION("triclass") {
        REQUIRE(bin_size(4.9, Scheme::triclass) == 0);
        REQUIRE(bin_size(5.0, Scheme::triclass) == 0);  // inclusive on the small side
        REQUIRE(bin_size(5.1, Scheme::triclass) == 1);
        REQUIRE(bin_size(7.5, Scheme::triclass) == 1);
        REQUIRE(bin_size(9.99, Scheme::triclass) == 1);
        REQUIRE(bin_size(10.0, Scheme::triclass) == 2); // inclusive on the large side
        REQUIRE(bin_size(15.0, Scheme::triclass) == 2);
        REQUIRE(bin_size(0.0, Scheme::triclass) == 0);
    }

    SECTION("binary agrees with triclass at the 10 mm split") {
        REQUIRE(bin_size(9.99, Scheme::binary) == 0);
        REQUIRE(bin_size(10.0, Scheme::binary) == 1);
        REQUIRE(bin_size(0.5, Scheme::binary) == 0);
        REQUIRE(bin_size(20.0, Scheme::binary) == 1);
    }

    SECTION("negative sizes are rejected") {
        REQUIRE_THROWS_AS(bin_size(-0.1, Scheme::triclass), std::invalid_argument);
    }

    SECTION("labels") {
        REQUIRE(std::string(class_label(Scheme::triclass, 0)) == "D");
        REQUIRE(std::string(class_label(Scheme::triclass, 2)) == "L");
        REQUIRE(std::string(class_label(Scheme::binary, 1)) == "Over10");
    }
}

TEST_CASE("confusion matrices", "[metrics]") {
    SECTION("perfect predictions are diagonal") {
        std::vector<double> ys{3.0, 7.0, 12.0, 4.0};
        auto cm = confusion(ys, ys, Scheme::triclass);
        REQUIRE(cm.at(0, 0) == 2);
        REQUIRE(cm.at(1, 1) == 1);
        REQUIRE(cm.at(2, 2) == 1);
        REQUIRE(cm.total() == 4);
    }

    SECTION("hand case") {
        std::vector<double> targets{3.0, 7.0, 12.0};
        std::vector<double> preds{4.0, 12.0, 12.0};
        auto cm = confusion(preds, targets, Scheme::triclass);
        REQUIRE(cm.at(0, 0) == 1); // D predicted D
        REQUIRE(cm.at(1, 2) == 1); // S predicted L
        REQUIRE(cm.at(2, 2) == 1); // L predicted L
        REQUIRE(cm.row_sum(1) == 1);
        REQUIRE(cm.col_sum(2) == 2);
    }

    SECTION("length mismatch") {
        REQUIRE_THROWS_AS(confusion({1.0}, {1.0, 2.0}, Scheme::binary), std::invalid_argument);
    }

    SECTION("accumulation sums elementwise") {
        auto a = cm_from(2, {1, 2, 3, 4});
        auto b = cm_from(2, {10, 20, 30, 40});
        a += b;
        REQUIRE(a.counts == std::vector<long>{11, 22, 33, 44});
        auto c = cm_from(3, std::vector<long>(9, 0));
        REQUIRE_THROWS_AS(a += c, std::invalid_argument);
    }
}

TEST_CASE("balanced accuracy", "[metrics]") {
    SECTION("diagonal matrix scores 1") {
        REQUIRE(balanced_accuracy(cm_from(3, {5, 0, 0, 0, 2, 0, 0, 0, 7})) == 1.0);
    }

    SECTION("mean of per-class recalls") {
        // recalls 1, 0.5, 0
        auto cm = cm_from(3, {4, 0, 0, 1, 1, 0, 3, 0, 0});
        REQUIRE(std::abs(balanced_accuracy(cm) - 0.5) < 1e-15);
    }

    SECTION("everything predicted into one class") {
        auto cm = cm_from(2, {50, 0, 50, 0});
        REQUIRE(balanced_accuracy(cm) == 0.5);
    }

    SECTION("absent classes are excluded and counted") {
        auto cm = cm_from(3, {4, 0, 0, 0, 0, 0, 0, 0, 6});
        long excluded = 0;
        REQUIRE(balanced_accuracy(cm, &excluded) == 1.0);
        REQUIRE(excluded == 1);
    }

    SECTION("duplicating every sample leaves the score unchanged") {
        auto cm = cm_from(3, {4, 1, 0, 2, 6, 1, 0, 3, 9});
        auto dbl = cm_from(3, {8, 2, 0, 4, 12, 2, 0, 6, 18});
        REQUIRE(std::abs(balanced_accuracy(cm) - balanced_accuracy(dbl)) < 1e-15);
    }

    SECTION("empty matrix is rejected") {
        REQUIRE_THROWS_AS(balanced_accuracy(cm_from(2, {0, 0, 0, 0})), std::invalid_argument);
    }
}

TEST_CASE("macro f1", "[metrics]") {
    SECTION("diagonal matrix scores 1") {
        REQUIRE(f1_macro(cm_from(2, {3, 0, 0, 4})) == 1.0);
    }

    SECTION("hand case") {
        // rows [2,2] and [1,2]: P0=2/3 R0=1/2, P1=1/2 R1=2/3
        auto cm = cm_from(2, {2, 2, 1, 2});
        double p0 = 2.0 / 3.0, r0 = 2.0 / 4.0;
        double p1 = 2.0 / 4.0, r1 = 2.0 / 3.0;
        double f0 = 2 * p0 * r0 / (p0 + r0);
        double f1 = 2 * p1 * r1 / (p1 + r1);
        REQUIRE(std::abs(f1_macro(cm) - 0.5 * (f0 + f1)) < 1e-15);
    }

    SECTION("a class never predicted and never present contributes 0") {
        auto cm = cm_from(3, {5, 0, 0, 0, 5, 0, 0, 0, 0});
        REQUIRE(std::abs(f1_macro(cm) - 2.0 / 3.0) < 1e-15);
    }

    SECTION("support weighting shifts the mean") {
        auto cm = cm_from(2, {90, 0, 10, 0});
        // class 0: P=0.9, R=1 -> F1 = 18/19; class 1: 0
        double f0 = 2 * 0.9 * 1.0 / 1.9;
        REQUIRE(std::abs(f1_macro(cm, false) - 0.5 * f0) < 1e-15);
        REQUIRE(std::abs(f1_macro(cm, true) - 0.9 * f0) < 1e-15);
    }
}

TEST_CASE("average sensitivity-specificity", "[metrics]") {
    SECTION("diagonal matrix scores 1") {
        REQUIRE(avg_sens_spec(cm_from(2, {3, 0, 0, 4})) == 1.0);
    }

    SECTION("collapse into one class scores one half") {
        REQUIRE(avg_sens_spec(cm_from(2, {50, 0, 50, 0})) == 0.5);
    }

    SECTION("hand case one-vs-rest") {
        auto cm = cm_from(2, {8, 2, 3, 7});
        // class 0: sens 0.8, spec 0.7; class 1: sens 0.7, spec 0.8
        REQUIRE(std::abs(avg_sens_spec(cm) - 0.75) < 1e-15);
    }

    SECTION("single-class data has no negatives, specificity reads 1") {
        auto cm = cm_from(2, {9, 1, 0, 0});
        long excluded = 0;
        // sens 0.9, spec 1 for the only present class
        REQUIRE(std::abs(avg_sens_spec(cm, &excluded) - 0.95) < 1e-15);
        REQUIRE(excluded == 1);
    }

    SECTION("swapping the binary labels swaps sens and spec") {
        auto cm = cm_from(2, {8, 2, 3, 7});
        auto swapped = cm_from(2, {7, 3, 2, 8});
        REQUIRE(std::abs(avg_sens_spec(cm) - avg_sens_spec(swapped)) < 1e-15);
    }
}

TEST_CASE("metric sets and eval reports", "[metrics]") {
    std::vector<std::string> ids{"a", "b", "c", "a"};
    std::vector<double> preds{3.0, 7.0, 12.0, 4.0};
    std::vector<double> targets{3.0, 8.0, 11.0, 16.0};
    auto r = eval_report(ids, preds, targets);
    REQUIRE(r.n_samples == 4);
    REQUIRE(r.n_unique_ids == 3);
    REQUIRE(r.triclass.cm.k == 3);
    REQUIRE(r.binary.cm.k == 2);
    REQUIRE(r.triclass.recalls.size() == 3);
    // the L->D miss hurts binary more than the S->S hit helps
    REQUIRE(r.binary.balanced_accuracy == 0.75);

    REQUIRE_THROWS_AS(eval_report({}, {}, {}), std::invalid_argument);
    REQUIRE_THROWS_AS(eval_report({"a"}, {1.0, 2.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("fold consolidation", "[metrics]") {
    SECTION("single fold is its own pooled report") {
        FoldPredictions f{0, {"a", "b"}, {3.0, 12.0}, {3.0, 12.0}};
        auto rep = consolidate_folds({f});
        REQUIRE(rep.pooled.triclass.balanced_accuracy == 1.0);
        REQUIRE(rep.per_fold.size() == 1);
        REQUIRE(rep.fold_stats.at("triclass.balanced_accuracy").variance == 0.0);
    }

    SECTION("identical folds have zero variance") {
        FoldPredictions f0{0, {"a", "b", "c"}, {3.0, 7.0, 12.0}, {3.0, 8.0, 11.0}};
        FoldPredictions f1 = f0;
        f1.fold = 1;
        f1.ids = {"d", "e", "f"};
        auto rep = consolidate_folds({f0, f1});
        for (const auto& [key, st] : rep.fold_stats) {
            INFO(key);
            REQUIRE(st.variance < 1e-30);
        }
    }

    SECTION("balanced accuracies 0.4 and 0.6 give mean 0.5, variance 0.01") {
        // binary recalls (0.4, 0.4) and (0.6, 0.6)
        FoldPredictions f0{0, {}, {}, {}};
        FoldPredictions f1{1, {}, {}, {}};
        int n = 0;
        auto push = [&n](FoldPredictions& f, double pred, double target, int count) {
            for (int i = 0; i < count; ++i) {
                f.ids.push_back("s" + std::to_string(n++));
                f.preds_mm.push_back(pred);
                f.targets_mm.push_back(target);
            }
        };
        push(f0, 3.0, 3.0, 4);   // under correct
        push(f0, 12.0, 3.0, 6);  // under missed
        push(f0, 12.0, 12.0, 4); // over correct
        push(f0, 3.0, 12.0, 6);  // over missed
        push(f1, 3.0, 3.0, 6);
        push(f1, 12.0, 3.0, 4);
        push(f1, 12.0, 12.0, 6);
        push(f1, 3.0, 12.0, 4);
        auto rep = consolidate_folds({f0, f1});
        auto st = rep.fold_stats.at("binary.balanced_accuracy");
        REQUIRE(std::abs(st.mean - 0.5) < 1e-15);
        REQUIRE(std::abs(st.variance - 0.01) < 1e-15);
    }

    SECTION("pooled matrix is the elementwise sum of fold matrices") {
        Rng rng(37);
        std::vector<FoldPredictions> folds(3);
        int n = 0;
        for (int f = 0; f < 3; ++f) {
            folds[static_cast<std::size_t>(f)].fold = f;
            int count = 10 + f * 3;
            for (int i = 0; i < count; ++i) {
                folds[static_cast<std::size_t>(f)].ids.push_back("s" + std::to_string(n++));
                folds[static_cast<std::size_t>(f)].preds_mm.push_back(rng.uniform(0.5, 20.0));
                folds[static_cast<std::size_t>(f)].targets_mm.push_back(rng.uniform(0.5, 20.0));
            }
        }
        auto rep = consolidate_folds(folds);
        for (auto scheme : {Scheme::triclass, Scheme::binary}) {
            ConfusionMatrix sum(num_classes(scheme));
            for (const auto& r : rep.per_fold)
                sum += scheme == Scheme::triclass ? r.triclass.cm : r.binary.cm;
            const auto& pooled = scheme == Scheme::triclass ? rep.pooled.triclass.cm
                                                            : rep.pooled.binary.cm;
            REQUIRE(pooled.counts == sum.counts);
        }
    }

    SECTION("duplicate ids across folds are rejected") {
        FoldPredictions f0{0, {"a"}, {3.0}, {3.0}};
        FoldPredictions f1{1, {"a"}, {4.0}, {4.0}};
        REQUIRE_THROWS_WITH(consolidate_folds({f0, f1}),
                            Catch::Matchers::ContainsSubstring("\"a\""));
    }

    SECTION("no folds") {
        REQUIRE_THROWS_AS(consolidate_folds({}), std::invalid_argument);
    }
}
