#include "labelcl/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace labelcl {

namespace {

double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

double f1(double p, double r) { return (p + r) == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace

void EvalConfig::validate() const {
    if (mode == Mode::TopK && k < 1) throw ParamError("eval config: k must be >= 1");
    if (mode == Mode::All && !(threshold > 0.0 && threshold < 1.0))
        throw ParamError("eval config: threshold must lie in (0, 1)");
}

bool average_precision(const std::vector<double>& scores, const std::vector<uint8_t>& labels,
                       double& ap_out) {
    if (scores.size() != labels.size())
        throw ShapeError("average_precision: scores and labels lengths differ (" +
                         std::to_string(scores.size()) + " vs " + std::to_string(labels.size()) + ")");
    int64_t positives = 0;
    for (uint8_t v : labels) positives += v;
    if (positives == 0) return false;

    std::vector<int64_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        return a < b;
    });

    double sum = 0.0;
    int64_t hits = 0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[static_cast<size_t>(order[rank])]) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    ap_out = sum / static_cast<double>(positives);
    return true;
}

std::vector<uint8_t> decide_predictions(const std::vector<double>& scores, int64_t n,
                                        int64_t num_classes, const EvalConfig& cfg) {
    cfg.validate();
    if (scores.size() != static_cast<size_t>(n * num_classes))
        throw ShapeError("decide_predictions: scores size " + std::to_string(scores.size()) +
                         " does not match " + std::to_string(n) + "x" + std::to_string(num_classes));
    std::vector<uint8_t> pred(scores.size(), 0);
    if (cfg.mode == EvalConfig::Mode::All) {
        for (size_t i = 0; i < scores.size(); ++i) pred[i] = scores[i] >= cfg.threshold ? 1 : 0;
        return pred;
    }
    const int64_t k = std::min<int64_t>(cfg.k, num_classes);
    std::vector<int64_t> order(static_cast<size_t>(num_classes));
    for (int64_t i = 0; i < n; ++i) {
        const double* row = &scores[static_cast<size_t>(i * num_classes)];
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            if (row[a] != row[b]) return row[a] > row[b];
            return a < b;
        });
        for (int64_t r = 0; r < k; ++r)
            pred[static_cast<size_t>(i * num_classes + order[static_cast<size_t>(r)])] = 1;
    }
    return pred;
}

MetricReport evaluate(const std::vector<double>& scores, const std::vector<uint8_t>& targets,
                      int64_t n, int64_t num_classes, const EvalConfig& cfg) {
    cfg.validate();
    if (scores.size() != static_cast<size_t>(n * num_classes) || targets.size() != scores.size())
        throw ShapeError("evaluate: scores/targets size does not match " + std::to_string(n) + "x" +
                         std::to_string(num_classes));

    MetricReport r;
    r.mode = cfg.mode == EvalConfig::Mode::All ? "all" : ("top" + std::to_string(cfg.k));
    r.num_classes = num_classes;
    r.per_class_ap.assign(static_cast<size_t>(num_classes), 0.0);
    r.class_included.assign(static_cast<size_t>(num_classes), 0);

    const auto pred = decide_predictions(scores, n, num_classes, cfg);

    // Per-class counts, pooled counts, and AP.
    double map_sum = 0.0;
    double cp_sum = 0.0, cr_sum = 0.0;
    int64_t cp_classes = 0, cr_classes = 0, included = 0;
    int64_t tp_all = 0, pred_all = 0, pos_all = 0;
    std::vector<double> cls_scores(static_cast<size_t>(n));
    std::vector<uint8_t> cls_labels(static_cast<size_t>(n));
    for (int64_t j = 0; j < num_classes; ++j) {
        int64_t tp = 0, predicted = 0, positives = 0;
        for (int64_t i = 0; i < n; ++i) {
            const size_t at = static_cast<size_t>(i * num_classes + j);
            cls_scores[static_cast<size_t>(i)] = scores[at];
            cls_labels[static_cast<size_t>(i)] = targets[at];
            predicted += pred[at];
            positives += targets[at];
            tp += pred[at] & targets[at];
        }
        tp_all += tp;
        pred_all += predicted;
        pos_all += positives;
        if (positives == 0) continue; // excluded from mAP and per-class averages
        ++included;
        r.class_included[static_cast<size_t>(j)] = 1;
        double ap = 0.0;
        average_precision(cls_scores, cls_labels, ap);
        r.per_class_ap[static_cast<size_t>(j)] = ap;
        map_sum += ap;
        cr_sum += static_cast<double>(tp) / static_cast<double>(positives);
        ++cr_classes;
        if (predicted > 0) {
            cp_sum += static_cast<double>(tp) / static_cast<double>(predicted);
            ++cp_classes;
        }
    }
    r.classes_evaluated = included;
    r.map = included ? map_sum / static_cast<double>(included) : 0.0;
    r.cp = cp_classes ? cp_sum / static_cast<double>(cp_classes) : 0.0;
    r.cr = cr_classes ? cr_sum / static_cast<double>(cr_classes) : 0.0;
    r.cf1 = f1(r.cp, r.cr);
    r.op = safe_ratio(static_cast<double>(tp_all), static_cast<double>(pred_all));
    r.orr = safe_ratio(static_cast<double>(tp_all), static_cast<double>(pos_all));
    r.of1 = f1(r.op, r.orr);
    return r;
}

std::string report_to_text(const MetricReport& r) {
    std::ostringstream o;
    o << "metric\tvalue\n";
    o << "mode\t" << r.mode << "\n";
    o << "num_classes\t" << r.num_classes << "\n";
    o << "classes_evaluated\t" << r.classes_evaluated << "\n";
    o << "map\t" << fmt(r.map) << "\n";
    o << "cp\t" << fmt(r.cp) << "\n";
    o << "cr\t" << fmt(r.cr) << "\n";
    o << "cf1\t" << fmt(r.cf1) << "\n";
    o << "op\t" << fmt(r.op) << "\n";
    o << "or\t" << fmt(r.orr) << "\n";
    o << "of1\t" << fmt(r.of1) << "\n";
    for (int64_t j = 0; j < r.num_classes; ++j)
        o << "ap\t" << j << "\t" << fmt(r.per_class_ap[static_cast<size_t>(j)]) << "\t"
          << int(r.class_included[static_cast<size_t>(j)]) << "\n";
    return o.str();
}

void write_report(const MetricReport& r, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write metric report: " + path);
    out << report_to_text(r);
    if (!out) throw IoError("failed writing metric report: " + path);
}

MetricReport parse_report_text(const std::string& text) {
    MetricReport r;
    std::stringstream ss(text);
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        if (first) {
            if (line != "metric\tvalue") throw DataError("metric report: bad header line '" + line + "'");
            first = false;
            continue;
        }
        std::stringstream ls(line);
        std::string key;
        std::getline(ls, key, '\t');
        std::string rest;
        std::getline(ls, rest);
        try {
            if (key == "mode") r.mode = rest;
            else if (key == "num_classes") {
                r.num_classes = std::stoll(rest);
                r.per_class_ap.assign(static_cast<size_t>(r.num_classes), 0.0);
                r.class_included.assign(static_cast<size_t>(r.num_classes), 0);
            }
            else if (key == "classes_evaluated") r.classes_evaluated = std::stoll(rest);
            else if (key == "map") r.map = std::stod(rest);
            else if (key == "cp") r.cp = std::stod(rest);
            else if (key == "cr") r.cr = std::stod(rest);
            else if (key == "cf1") r.cf1 = std::stod(rest);
            else if (key == "op") r.op = std::stod(rest);
            else if (key == "or") r.orr = std::stod(rest);
            else if (key == "of1") r.of1 = std::stod(rest);
            else if (key == "ap") {
                std::stringstream rs(rest);
                std::string cls, val, inc;
                std::getline(rs, cls, '\t');
                std::getline(rs, val, '\t');
                std::getline(rs, inc, '\t');
                int64_t j = std::stoll(cls);
                if (j < 0 || j >= r.num_classes)
                    throw DataError("metric report: ap row class out of range");
                r.per_class_ap[static_cast<size_t>(j)] = std::stod(val);
                r.class_included[static_cast<size_t>(j)] = static_cast<uint8_t>(std::stoi(inc));
            }
            else throw DataError("metric report: unknown key '" + key + "'");
        } catch (const DataError&) {
            throw;
        } catch (const std::exception&) {
            throw DataError("metric report: bad value in line '" + line + "'");
        }
    }
    return r;
}

MetricReport read_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open metric report: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_report_text(buf.str());
}

} // namespace labelcl
