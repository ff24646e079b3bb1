#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "driftscope/errors.hpp"
#include "driftscope/trace.hpp"

namespace driftscope {

struct ProbFeatureConfig {
    double tau = 0.1;                        // low-probability threshold on p_chosen
    std::vector<double> percentiles{25.0, 75.0};  // over the p_max sequence
};

struct ProbFeatures {
    double mtp = 0.0;
    double mps = 0.0;
    double mg_max = 0.0;
    double mg_min = 0.0;
    double mean_h_norm = 0.0;
    double low_prob_frac = 0.0;
    std::vector<double> pct_values;

    /// Flattened in feature-file column order.
    std::vector<double> values() const {
        std::vector<double> out{mtp, mps, mg_max, mg_min, mean_h_norm, low_prob_frac};
        out.insert(out.end(), pct_values.begin(), pct_values.end());
        return out;
    }
};

inline void validate(const ProbFeatureConfig& cfg) {
    if (!(cfg.tau > 0.0 && cfg.tau < 1.0)) throw DomainError("tau must lie in (0, 1)");
    for (std::size_t i = 0; i < cfg.percentiles.size(); ++i) {
        const double q = cfg.percentiles[i];
        if (!(q > 0.0 && q < 100.0)) throw DomainError("percentiles must lie in (0, 100)");
        if (i > 0 && q <= cfg.percentiles[i - 1]) throw DomainError("percentiles must be strictly ascending");
    }
}

inline double min_token_probability(std::span<const double> p_max) {
    if (p_max.empty()) throw EmptyGenerationError("min_token_probability of an empty generation");
    return *std::min_element(p_max.begin(), p_max.end());
}

inline double max_probability_spread(std::span<const double> p_max, std::span<const double> p_min) {
    if (p_max.size() != p_min.size()) throw ShapeError("p_max and p_min lengths differ");
    if (p_max.empty()) throw EmptyGenerationError("max_probability_spread of an empty generation");
    double spread = 0.0;
    for (std::size_t t = 0; t < p_max.size(); ++t) {
        if (p_max[t] < p_min[t]) {
            throw DomainError("p_max < p_min at token " + std::to_string(t));
        }
        spread = std::max(spread, p_max[t] - p_min[t]);
    }
    return spread;
}

/// Mean absolute step-to-step change; 0 for a single value.
inline double mean_gradient(std::span<const double> seq) {
    if (seq.empty()) throw EmptyGenerationError("mean_gradient of an empty sequence");
    if (seq.size() == 1) return 0.0;
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) total += std::abs(seq[t + 1] - seq[t]);
    return total / static_cast<double>(seq.size() - 1);
}

/// Linear-interpolation percentile, q in (0, 100).
inline double percentile(std::span<const double> seq, double q) {
    if (!(q > 0.0 && q < 100.0)) throw DomainError("percentile rank must lie in (0, 100)");
    if (seq.empty()) throw EmptyGenerationError("percentile of an empty sequence");
    std::vector<double> sorted(seq.begin(), seq.end());
    std::sort(sorted.begin(), sorted.end());
    const double h = static_cast<double>(sorted.size() - 1) * q / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = static_cast<std::size_t>(std::ceil(h));
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline ProbFeatures build_prob_features(const TraceRecord& rec, const ProbFeatureConfig& cfg) {
    if (rec.tokens.empty()) throw EmptyGenerationError("record '" + rec.id + "' has no generated tokens");
    const std::size_t m = rec.tokens.size();
    std::vector<double> p_max(m);
    std::vector<double> p_min(m);
    double h_sum = 0.0;
    std::size_t low = 0;
    for (std::size_t t = 0; t < m; ++t) {
        const TokenProbStats& s = rec.tokens[t].prob;
        p_max[t] = s.p_max;
        p_min[t] = s.p_min;
        h_sum += s.h_norm;
        if (s.p_chosen < cfg.tau) ++low;
    }

    ProbFeatures f;
    f.mtp = min_token_probability(p_max);
    f.mps = max_probability_spread(p_max, p_min);
    f.mg_max = mean_gradient(p_max);
    f.mg_min = mean_gradient(p_min);
    f.mean_h_norm = h_sum / static_cast<double>(m);
    f.low_prob_frac = static_cast<double>(low) / static_cast<double>(m);
    for (double q : cfg.percentiles) f.pct_values.push_back(percentile(p_max, q));
    return f;
}

}  // namespace driftscope
