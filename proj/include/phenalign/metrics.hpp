#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "phenalign/error.hpp"
#include "phenalign/serialize.hpp"

namespace phenalign {

constexpr double kDecisionThreshold = 0.5;

struct EvalRecord {
    double score = 0.0;  // higher = more disease-like
    int pred = 0;
    int label = 0;  // 1 = disease
    std::string group;
};

inline EvalRecord make_eval_record(double score, int label, std::string group,
                                   double threshold = kDecisionThreshold) {
    EvalRecord r;
    r.score = score;
    r.pred = score >= threshold ? 1 : 0;
    r.label = label;
    r.group = std::move(group);
    return r;
}

// Mann-Whitney AUC with midranks, so ties count one half.
inline double roc_auc(const std::vector<EvalRecord>& records) {
    std::size_t n_pos = 0, n_neg = 0;
    for (const EvalRecord& r : records) (r.label == 1 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("auc: needs both classes, got " +
                                   std::to_string(n_pos) + " positive and " +
                                   std::to_string(n_neg) + " negative");
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return records[a].score < records[b].score;
    });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() &&
               records[order[j]].score == records[order[i]].score)
            ++j;
        // 1-based midrank of the tie block [i, j).
        const double midrank = static_cast<double>(i + j + 1) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (records[order[k]].label == 1) rank_sum_pos += midrank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

struct ConfusionMetrics {
    double acc = 0.0;
    double sen = 0.0;
    double spc = 0.0;
};

inline ConfusionMetrics confusion_metrics(const std::vector<EvalRecord>& records) {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (const EvalRecord& r : records) {
        if (r.label == 1)
            (r.pred == 1 ? tp : fn) += 1;
        else
            (r.pred == 1 ? fp : tn) += 1;
    }
    if (tp + fn == 0)
        throw UndefinedMetricError("sensitivity: no positive labels");
    if (tn + fp == 0)
        throw UndefinedMetricError("specificity: no negative labels");
    ConfusionMetrics m;
    m.acc = static_cast<double>(tp + tn) / static_cast<double>(records.size());
    m.sen = static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.spc = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return m;
}

namespace detail {

inline std::map<std::string, std::vector<const EvalRecord*>> by_group(
    const std::vector<EvalRecord>& records) {
    std::map<std::string, std::vector<const EvalRecord*>> groups;
    for (const EvalRecord& r : records) groups[r.group].push_back(&r);
    return groups;
}

inline double max_gap(const std::vector<double>& vals) {
    double lo = vals[0], hi = vals[0];
    for (double v : vals) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return hi - lo;
}

}  // namespace detail

// Largest pairwise gap in positive-prediction rate across groups.
inline double dpd(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw ContractError("dpd: no records");
    auto groups = detail::by_group(records);
    std::vector<double> rates;
    for (const auto& [name, rows] : groups) {
        std::size_t pos = 0;
        for (const EvalRecord* r : rows) pos += r->pred == 1 ? 1 : 0;
        rates.push_back(static_cast<double>(pos) / static_cast<double>(rows.size()));
    }
    return detail::max_gap(rates);
}

// max(TPR gap, FPR gap) across groups; every group needs both classes.
inline double deodds(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw ContractError("deodds: no records");
    auto groups = detail::by_group(records);
    std::vector<double> tprs, fprs;
    for (const auto& [name, rows] : groups) {
        std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
        for (const EvalRecord* r : rows) {
            if (r->label == 1)
                (r->pred == 1 ? tp : fn) += 1;
            else
                (r->pred == 1 ? fp : tn) += 1;
        }
        if (tp + fn == 0)
            throw UndefinedMetricError("deodds: group '" + name +
                                       "' has no positive labels");
        if (fp + tn == 0)
            throw UndefinedMetricError("deodds: group '" + name +
                                       "' has no negative labels");
        tprs.push_back(static_cast<double>(tp) / static_cast<double>(tp + fn));
        fprs.push_back(static_cast<double>(fp) / static_cast<double>(fp + tn));
    }
    return std::max(detail::max_gap(tprs), detail::max_gap(fprs));
}

inline double es_auc_formula(double overall, const std::vector<double>& group_aucs) {
    double dev = 0.0;
    for (double a : group_aucs) dev += std::abs(overall - a);
    return overall / (1.0 + dev);
}

// Overall AUC shrunk by absolute per-group deviations.
inline double es_auc(const std::vector<EvalRecord>& records) {
    const double overall = roc_auc(records);
    auto groups = detail::by_group(records);
    std::vector<double> group_aucs;
    for (const auto& [name, rows] : groups) {
        std::vector<EvalRecord> sub;
        sub.reserve(rows.size());
        for (const EvalRecord* r : rows) sub.push_back(*r);
        try {
            group_aucs.push_back(roc_auc(sub));
        } catch (const UndefinedMetricError&) {
            throw UndefinedMetricError("es_auc: group '" + name +
                                       "' has a single class");
        }
    }
    return es_auc_formula(overall, group_aucs);
}

// Ordered name/value rows; order is part of the report.
using MetricReport = std::vector<std::pair<std::string, double>>;

inline std::string report_csv(const MetricReport& report) {
    std::string out = "metric,value\n";
    for (const auto& [name, value] : report)
        out += name + "," + format_fixed(value, 6) + "\n";
    return out;
}

inline std::string report_csv_full(const MetricReport& report) {
    std::string out = "metric,value\n";
    for (const auto& [name, value] : report)
        out += name + "," + format_double(value) + "\n";
    return out;
}

inline MetricReport parse_report_csv(const std::string& text) {
    std::vector<std::string> lines = read_lines(text);
    if (lines.empty() || trim(lines[0]) != "metric,value")
        throw ParseError("metric report: missing metric,value header");
    MetricReport out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::vector<std::string> fields = split(lines[i], ',');
        const std::string ctx = "metric report line " + std::to_string(i + 1);
        if (fields.size() != 2) throw ParseError(ctx + ": expected 2 fields");
        out.emplace_back(fields[0], parse_double(fields[1], ctx));
    }
    return out;
}

}  // namespace phenalign
