#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "labelcl/metrics.hpp"
#include "labelcl/rng.hpp"

using namespace labelcl;

namespace {

// Brute-force AP without sorting: every element's rank is 1 + (count of
// strictly higher scores) + (count of equal scores at lower index); terms are
// summed in ascending rank order exactly like the implementation, so the two
// must agree bit-for-bit.
double naive_ap(const std::vector<double>& s, const std::vector<uint8_t>& y) {
    const size_t n = s.size();
    std::vector<size_t> at_rank(n);
    for (size_t e = 0; e < n; ++e) {
        size_t rank = 1;
        for (size_t f = 0; f < n; ++f) {
            if (s[f] > s[e]) ++rank;
            else if (s[f] == s[e] && f < e) ++rank;
        }
        at_rank[rank - 1] = e;
    }
    double sum = 0.0;
    int64_t hits = 0, positives = 0;
    for (uint8_t v : y) positives += v;
    for (size_t k = 0; k < n; ++k) {
        if (y[at_rank[k]]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(k + 1);
        }
    }
    return sum / static_cast<double>(positives);
}

} // namespace

TEST_CASE("average precision oracles") {
    double ap = 0.0;
    // Hand rank-precision oracle: (1/2)(1/1 + 2/3) = 5/6.
    CHECK(average_precision({0.9, 0.8, 0.3}, {1, 0, 1}, ap));
    CHECK(std::fabs(ap - 5.0 / 6.0) <= 1e-12);

    // Perfect ranking.
    CHECK(average_precision({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}, ap));
    CHECK(ap == 1.0);

    // Degenerate single positive.
    CHECK(average_precision({0.42}, {1}, ap));
    CHECK(ap == 1.0);

    // No positives -> excluded signal.
    CHECK_FALSE(average_precision({0.5, 0.6}, {0, 0}, ap));
}

TEST_CASE("average precision is invariant under monotone score transforms") {
    RngState rng(404);
    for (int t = 0; t < 50; ++t) {
        const size_t n = 3 + rng.below(10);
        std::vector<double> s(n);
        std::vector<uint8_t> y(n);
        bool any = false;
        for (size_t i = 0; i < n; ++i) {
            s[i] = rng.uniform(-2.0, 2.0);
            y[i] = rng.uniform() < 0.4 ? 1 : 0;
            any = any || y[i];
        }
        if (!any) y[0] = 1;
        std::vector<double> warped(n);
        for (size_t i = 0; i < n; ++i) warped[i] = std::atan(s[i]) * 3.0 + 7.0;
        double a = 0.0, b = 0.0;
        average_precision(s, y, a);
        average_precision(warped, y, b);
        CHECK(a == b);
    }
}

TEST_CASE("average precision matches the brute-force oracle exactly") {
    RngState rng(777);
    for (int t = 0; t < 200; ++t) {
        const size_t n = 2 + rng.below(12);
        std::vector<double> s(n);
        std::vector<uint8_t> y(n);
        bool any = false;
        for (size_t i = 0; i < n; ++i) {
            // Coarse score grid forces frequent ties.
            s[i] = static_cast<double>(rng.below(5)) / 4.0;
            y[i] = rng.uniform() < 0.5 ? 1 : 0;
            any = any || y[i];
        }
        if (!any) y[n - 1] = 1;
        double ap = 0.0;
        REQUIRE(average_precision(s, y, ap));
        CHECK(ap == naive_ap(s, y));
    }
}

TEST_CASE("top-k decisions and pooled counts match the crafted oracle") {
    // N=2, L=3, k=2: predicted [[1,1,0],[0,1,1]] -> OP=3/4, OR=1, OF1=6/7.
    std::vector<double> scores{0.9, 0.8, 0.1, 0.2, 0.7, 0.6};
    std::vector<uint8_t> targets{1, 0, 0, 0, 1, 1};
    EvalConfig cfg;
    cfg.mode = EvalConfig::Mode::TopK;
    cfg.k = 2;
    auto pred = decide_predictions(scores, 2, 3, cfg);
    CHECK(pred == std::vector<uint8_t>{1, 1, 0, 0, 1, 1});
    auto r = evaluate(scores, targets, 2, 3, cfg);
    CHECK(std::fabs(r.op - 0.75) <= 1e-12);
    CHECK(std::fabs(r.orr - 1.0) <= 1e-12);
    CHECK(std::fabs(r.of1 - 6.0 / 7.0) <= 1e-12);
}

TEST_CASE("perfect predictor scores ones everywhere") {
    RngState rng(11);
    const int64_t n = 6, L = 4;
    std::vector<double> scores(n * L);
    std::vector<uint8_t> targets(n * L);
    for (int64_t i = 0; i < n * L; ++i) {
        targets[static_cast<size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;
        scores[static_cast<size_t>(i)] = targets[static_cast<size_t>(i)] ? 0.9 : 0.1;
    }
    // Guarantee every class has a positive so nothing is excluded.
    for (int64_t j = 0; j < L; ++j) {
        targets[static_cast<size_t>(j)] = 1;
        scores[static_cast<size_t>(j)] = 0.9;
    }
    EvalConfig cfg; // All mode, threshold 0.5
    auto r = evaluate(scores, targets, n, L, cfg);
    CHECK(r.map == 1.0);
    CHECK(r.cp == 1.0);
    CHECK(r.cr == 1.0);
    CHECK(r.cf1 == 1.0);
    CHECK(r.op == 1.0);
    CHECK(r.orr == 1.0);
    CHECK(r.of1 == 1.0);
    CHECK(r.classes_evaluated == L);
}

TEST_CASE("tie rule: uniform scores pick the lowest class indices") {
    std::vector<double> scores(5, 0.3);
    EvalConfig cfg;
    cfg.mode = EvalConfig::Mode::TopK;
    cfg.k = 3;
    auto pred = decide_predictions(scores, 1, 5, cfg);
    CHECK(pred == std::vector<uint8_t>{1, 1, 1, 0, 0});

    // TopK predicts exactly k per image, or L when L < k.
    cfg.k = 9;
    auto all = decide_predictions(scores, 1, 5, cfg);
    CHECK(all == std::vector<uint8_t>{1, 1, 1, 1, 1});
}

TEST_CASE("all-mode threshold includes the boundary and exclusions work") {
    // Class 1 has zero positives: excluded from mAP/CP/CR but still pooled.
    std::vector<double> scores{0.5, 0.9, 0.4, 0.2};
    std::vector<uint8_t> targets{1, 0, 1, 0};
    EvalConfig cfg;
    auto pred = decide_predictions(scores, 2, 2, cfg);
    CHECK(pred == std::vector<uint8_t>{1, 1, 0, 0}); // 0.5 >= 0.5 counts
    auto r = evaluate(scores, targets, 2, 2, cfg);
    CHECK(r.classes_evaluated == 1);
    CHECK(r.class_included == std::vector<uint8_t>{1, 0});
    // Class 0: tp=1 (im0), pred=1, pos=2 -> precision 1, recall 1/2, ap: ranks
    // by score 0.5 > 0.4 -> positives at ranks 1 and 2 -> (1/1 + 2/2)/2 = 1.
    CHECK(r.map == 1.0);
    CHECK(r.cp == 1.0);
    CHECK(std::fabs(r.cr - 0.5) <= 1e-12);
    // Pooled: tp=1, pred=2, pos=2.
    CHECK(std::fabs(r.op - 0.5) <= 1e-12);
    CHECK(std::fabs(r.orr - 0.5) <= 1e-12);
}

TEST_CASE("report round trip and internal consistency") {
    RngState rng(99);
    const int64_t n = 12, L = 5;
    std::vector<double> scores(n * L);
    std::vector<uint8_t> targets(n * L);
    for (auto& v : scores) v = rng.uniform(0.01, 0.99);
    for (auto& v : targets) v = rng.uniform() < 0.35 ? 1 : 0;
    EvalConfig cfg;
    cfg.mode = EvalConfig::Mode::TopK;
    cfg.k = 3;
    auto r = evaluate(scores, targets, n, L, cfg);

    std::string text = report_to_text(r);
    auto parsed = parse_report_text(text);
    CHECK(parsed.mode == r.mode);
    CHECK(parsed.map == r.map);
    CHECK(parsed.cp == r.cp);
    CHECK(parsed.cr == r.cr);
    CHECK(parsed.cf1 == r.cf1);
    CHECK(parsed.op == r.op);
    CHECK(parsed.orr == r.orr);
    CHECK(parsed.of1 == r.of1);
    CHECK(parsed.per_class_ap == r.per_class_ap);
    CHECK(parsed.class_included == r.class_included);

    // Header/column order is fixed.
    CHECK(text.rfind("metric\tvalue\n", 0) == 0);

    // The mAP field must equal the mean of included per-class AP rows.
    double sum = 0.0;
    int64_t cnt = 0;
    for (int64_t j = 0; j < parsed.num_classes; ++j)
        if (parsed.class_included[static_cast<size_t>(j)]) {
            sum += parsed.per_class_ap[static_cast<size_t>(j)];
            ++cnt;
        }
    REQUIRE(cnt > 0);
    CHECK(std::fabs(parsed.map - sum / static_cast<double>(cnt)) <= 1e-12);
}

TEST_CASE("file round trip") {
    std::vector<double> scores{0.9, 0.2, 0.3, 0.8};
    std::vector<uint8_t> targets{1, 0, 0, 1};
    auto r = evaluate(scores, targets, 2, 2, EvalConfig{});
    const char* path = "metric_report_roundtrip.tsv";
    write_report(r, path);
    auto back = read_report(path);
    CHECK(back.map == r.map);
    CHECK(back.of1 == r.of1);
    std::remove(path);
}
