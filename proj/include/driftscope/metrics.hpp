#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "driftscope/errors.hpp"

namespace driftscope {

namespace detail {

inline void check_scores_labels(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw ShapeError("scores and labels differ in length: " + std::to_string(scores.size()) + " vs " +
                         std::to_string(labels.size()));
    }
    for (int l : labels) {
        if (l != 0 && l != 1) throw DomainError("labels must be 0 or 1");
    }
}

}  // namespace detail

/// Mann-Whitney AUC: P(score_pos > score_neg) + P(tie) / 2, positive = label 1.
/// Doubled integer ranks keep the statistic exact.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_scores_labels(scores, labels);
    const std::size_t n = scores.size();
    std::uint64_t n_pos = 0;
    for (int l : labels) n_pos += static_cast<std::uint64_t>(l);
    const std::uint64_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("roc_auc needs both classes");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Tied block [begin, end) shares rank (begin + 1 + end) / 2; store twice that.
    std::uint64_t pos_rank_sum_x2 = 0;
    std::size_t begin = 0;
    while (begin < n) {
        std::size_t end = begin + 1;
        while (end < n && scores[order[end]] == scores[order[begin]]) ++end;
        const std::uint64_t rank_x2 = begin + 1 + end;
        for (std::size_t k = begin; k < end; ++k) {
            if (labels[order[k]] == 1) pos_rank_sum_x2 += rank_x2;
        }
        begin = end;
    }
    const std::uint64_t u_x2 = pos_rank_sum_x2 - n_pos * (n_pos + 1);
    return static_cast<double>(u_x2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Average precision with tied scores grouped into a single threshold step.
inline double pr_auc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_scores_labels(scores, labels);
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int l : labels) n_pos += static_cast<std::size_t>(l);
    if (n_pos == 0) throw UndefinedMetricError("pr_auc needs at least one positive");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0;
    std::size_t begin = 0;
    while (begin < n) {
        std::size_t end = begin;
        while (end < n && scores[order[end]] == scores[order[begin]]) {
            tp += static_cast<std::size_t>(labels[order[end]]);
            ++end;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(end);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        begin = end;
    }
    return ap;
}

struct ThresholdMetrics {
    double accuracy = 0.0;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
};

/// Predicts positive when score >= threshold. Zero denominators yield 0.
inline ThresholdMetrics threshold_metrics(std::span<const double> scores, std::span<const int> labels,
                                          double threshold = 0.5) {
    detail::check_scores_labels(scores, labels);
    if (scores.empty()) throw UndefinedMetricError("threshold metrics of an empty sample");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= threshold;
        if (labels[i] == 1) {
            predicted ? ++tp : ++fn;
        } else {
            predicted ? ++fp : ++tn;
        }
    }
    ThresholdMetrics m;
    m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
    m.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    m.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    m.f1 = tp == 0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

}  // namespace driftscope
