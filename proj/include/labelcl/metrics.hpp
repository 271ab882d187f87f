#pragma once

// Multi-label evaluation: per-class average precision and mAP, per-class
// (CP/CR/CF1) and overall (OP/OR/OF1) precision/recall/F1 in All-scores and
// Top-K decision modes. All tie-breaking is by ascending index; classes with
// zero positives are excluded from mAP and per-class averaging; 0/0 -> 0.

#include <cstdint>
#include <string>
#include <vector>

#include "labelcl/error.hpp"

namespace labelcl {

struct EvalConfig {
    enum class Mode { All, TopK };
    Mode mode = Mode::All;
    int k = 3;              // TopK only
    double threshold = 0.5; // All only

    void validate() const;
};

struct MetricReport {
    std::string mode;                  // "all" or "topK" with K substituted
    int64_t num_classes = 0;
    int64_t classes_evaluated = 0;     // classes with at least one positive
    std::vector<double> per_class_ap;  // 0 where excluded
    std::vector<uint8_t> class_included;
    double map = 0, cp = 0, cr = 0, cf1 = 0, op = 0, orr = 0, of1 = 0;
};

// Non-interpolated AP: sort by descending score (ties by ascending sample
// index); AP = (1/P) * sum over positive ranks k of (positives in top k)/k.
// Returns false when the class has no positives (excluded upstream).
bool average_precision(const std::vector<double>& scores, const std::vector<uint8_t>& labels,
                       double& ap_out);

// scores and targets are row-major N x num_classes.
MetricReport evaluate(const std::vector<double>& scores, const std::vector<uint8_t>& targets,
                      int64_t n, int64_t num_classes, const EvalConfig& cfg);

// Per-image predicted-positive sets under cfg (same row-major layout).
std::vector<uint8_t> decide_predictions(const std::vector<double>& scores, int64_t n,
                                        int64_t num_classes, const EvalConfig& cfg);

std::string report_to_text(const MetricReport& r);
void write_report(const MetricReport& r, const std::string& path);
MetricReport parse_report_text(const std::string& text);
MetricReport read_report(const std::string& path);

} // namespace labelcl
