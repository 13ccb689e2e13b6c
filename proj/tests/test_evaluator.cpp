#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "infoseg/evaluator.hpp"

#include <algorithm>
#include <numeric>
#include <random>

using namespace infoseg;

namespace {

ConfusionMatrix from_counts(std::initializer_list<std::initializer_list<std::int64_t>> rows) {
    int r = int(rows.size());
    int c = int(rows.begin()->size());
    ConfusionMatrix cm(r, c);
    int i = 0;
    for (const auto& row : rows) {
        int j = 0;
        for (auto v : row) cm.counts(i, j++) = v;
        ++i;
    }
    return cm;
}

// Exhaustive oracle: the best injective mapping by trying every
// assignment of predicted rows to annotated columns.
std::int64_t best_matching_bruteforce(const ConfusionMatrix& cm) {
    std::vector<int> cols(cm.counts.cols());
    std::iota(cols.begin(), cols.end(), 0);
    std::int64_t best = -1;
    do {
        std::int64_t sum = 0;
        for (int k = 0; k < cm.counts.rows(); ++k) sum += cm.counts(k, cols[k]);
        best = std::max(best, sum);
    } while (std::next_permutation(cols.begin(), cols.end()));
    return best;
}

}  // namespace

TEST_CASE("accumulate counts pixels and honors the ignore value") {
    ConfusionMatrix cm(2, 3);
    MatXi pred(2, 2), truth(2, 2);
    pred << 0, 1, 1, 0;
    truth << 0, 2, kIgnoreLabel, 1;
    accumulate(cm, pred, truth);
    CHECK(cm.counts(0, 0) == 1);
    CHECK(cm.counts(1, 2) == 1);
    CHECK(cm.counts(0, 1) == 1);
    CHECK(cm.ignore_count == 1);
    CHECK(cm.total() == 3);

    MatXi bad = MatXi::Constant(2, 2, 5);
    CHECK_THROWS_AS(accumulate(cm, bad, truth), DataError);
    MatXi small(1, 1);
    small << 0;
    CHECK_THROWS_AS(accumulate(cm, small, truth), StructuralError);
}

TEST_CASE("accumulate is order-independent") {
    std::mt19937_64 rng(4);
    MatXi p1(8, 8), t1(8, 8), p2(8, 8), t2(8, 8);
    for (int i = 0; i < 64; ++i) {
        p1.data()[i] = int(rng() % 3);
        t1.data()[i] = int(rng() % 4);
        p2.data()[i] = int(rng() % 3);
        t2.data()[i] = int(rng() % 4);
    }
    ConfusionMatrix a(3, 4), b(3, 4);
    accumulate(a, p1, t1);
    accumulate(a, p2, t2);
    accumulate(b, p2, t2);
    accumulate(b, p1, t1);
    CHECK(a.counts == b.counts);

    ConfusionMatrix c(3, 4), d(3, 4);
    accumulate(c, p1, t1);
    accumulate(d, p2, t2);
    c += d;
    CHECK(a.counts == c.counts);
}

TEST_CASE("matching recovers the identity on a diagonal matrix") {
    auto cm = from_counts({{10, 0, 0}, {0, 7, 0}, {0, 0, 5}});
    auto m = hungarian_match(cm);
    CHECK(m.assignment == std::vector<int>{0, 1, 2});
    CHECK(m.matched_pa == doctest::Approx(1.0));
}

TEST_CASE("matching recovers a permuted diagonal") {
    auto cm = from_counts({{0, 9, 0}, {0, 0, 4}, {6, 0, 0}});
    auto m = hungarian_match(cm);
    CHECK(m.assignment == std::vector<int>{1, 2, 0});
    CHECK(m.matched_pa == doctest::Approx(1.0));
}

TEST_CASE("matching agrees with brute force on random matrices") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        int k = 2 + int(rng() % 3);       // predicted classes
        int kp = k + int(rng() % 2);      // annotated classes, >= k
        ConfusionMatrix cm(k, kp);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < kp; ++j) cm.counts(i, j) = std::int64_t(rng() % 50);
        auto m = hungarian_match(cm);
        std::int64_t matched = 0;
        std::vector<bool> used(kp, false);
        for (int i = 0; i < k; ++i) {
            REQUIRE(m.assignment[i] >= 0);
            REQUIRE(m.assignment[i] < kp);
            REQUIRE(!used[m.assignment[i]]);  // injective
            used[m.assignment[i]] = true;
            matched += cm.counts(i, m.assignment[i]);
        }
        CHECK(matched == best_matching_bruteforce(cm));
    }
}

TEST_CASE("matching rejects more predicted than annotated classes") {
    ConfusionMatrix cm(4, 3);
    cm.counts.setConstant(1);
    CHECK_THROWS_AS(hungarian_match(cm), ConfigError);
}

TEST_CASE("metrics match hand-computed values") {
    // pred 0 <-> true 1, pred 1 <-> true 0.
    auto cm = from_counts({{2, 8}, {6, 4}});
    cm.ignore_count = 5;
    auto m = hungarian_match(cm);
    REQUIRE(m.assignment == std::vector<int>{1, 0});
    auto report = metrics(cm, m);
    CHECK(report.pa == doctest::Approx(14.0 / 20.0));
    // IoU(pred0, true1) = 8 / (10 + 12 - 8), IoU(pred1, true0) = 6 / (10 + 8 - 6).
    double iou0 = 8.0 / 14.0, iou1 = 6.0 / 12.0;
    CHECK(report.per_class[0].iou == doctest::Approx(iou0));
    CHECK(report.per_class[1].iou == doctest::Approx(iou1));
    CHECK(report.miou == doctest::Approx((iou0 + iou1) / 2.0));
    CHECK(report.ignore_fraction == doctest::Approx(5.0 / 25.0));
    CHECK(report.per_class[0].pixel_freq == doctest::Approx(12.0 / 20.0));
}

TEST_CASE("empty classes are excluded from the IoU mean") {
    // Predicted class 2 never fires and its matched label never occurs.
    auto cm = from_counts({{5, 0, 0}, {0, 5, 0}, {0, 0, 0}});
    auto m = hungarian_match(cm);
    auto report = metrics(cm, m);
    CHECK(report.per_class[2].iou_defined == false);
    CHECK(report.miou == doctest::Approx(1.0));
    CHECK(report.pa == doctest::Approx(1.0));
}

TEST_CASE("metrics are invariant to relabeling the prediction") {
    std::mt19937_64 rng(7);
    MatXi pred(16, 16), truth(16, 16);
    for (int i = 0; i < 256; ++i) {
        pred.data()[i] = int(rng() % 3);
        truth.data()[i] = int(rng() % 3);
    }
    ConfusionMatrix cm(3, 3);
    accumulate(cm, pred, truth);
    auto base = metrics(cm, hungarian_match(cm));

    // Swap predicted ids 0 and 2 everywhere; scores must not move.
    MatXi swapped = pred;
    for (int i = 0; i < 256; ++i)
        swapped.data()[i] = pred.data()[i] == 0 ? 2 : (pred.data()[i] == 2 ? 0 : 1);
    ConfusionMatrix cm2(3, 3);
    accumulate(cm2, swapped, truth);
    auto remapped = metrics(cm2, hungarian_match(cm2));
    CHECK(base.pa == doctest::Approx(remapped.pa));
    CHECK(base.miou == doctest::Approx(remapped.miou));
}

TEST_CASE("metrics JSON names the matched classes") {
    auto cm = from_counts({{3, 0}, {0, 3}});
    auto report = metrics(cm, hungarian_match(cm));
    std::string doc = metrics_to_json(report, {"background", "shape-1"});
    CHECK(doc.find("\"pixel_accuracy\"") != std::string::npos);
    CHECK(doc.find("shape-1") != std::string::npos);
    CHECK(doc.find("\"mean_iou\"") != std::string::npos);
}
