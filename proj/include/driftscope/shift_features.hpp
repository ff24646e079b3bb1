#pragma once

// Layer-wise shift features. For each generated token, states at layers l and l+r are
// compared by Wasserstein-1 between their distributions and by cosine similarity; the
// per-token measurements are then averaged over the generation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "driftscope/errors.hpp"
#include "driftscope/trace.hpp"

namespace driftscope {

struct ShiftConfig {
    std::size_t window = 2;
    bool include_attention = true;
    bool include_hidden = true;
};

enum class Stream { hidden, attention };

struct LayerPair {
    std::size_t from;
    std::size_t to;

    bool operator==(const LayerPair&) const = default;
};

struct PairDescriptor {
    Stream stream;
    LayerPair pair;

    bool operator==(const PairDescriptor&) const = default;
};

struct ShiftFeatureBlock {
    std::vector<double> wasserstein_hidden;
    std::vector<double> cosine_hidden;
    std::vector<double> wasserstein_attn;
    std::vector<double> cosine_attn;
    std::vector<PairDescriptor> layout;
    // Cosine entries forced to 0 because one operand was an all-zero vector.
    std::size_t degenerate_cosines = 0;
};

/// Stride-r pairs (l, l+r) for l = 0, r, 2r, ... with l + r < n_states.
inline std::vector<LayerPair> layer_pairs(std::size_t n_states, std::size_t r) {
    std::vector<LayerPair> pairs;
    if (r == 0) return pairs;
    for (std::size_t l = 0; l + r < n_states; l += r) pairs.push_back({l, l + r});
    return pairs;
}

inline std::vector<double> softmax(std::span<const double> z) {
    if (z.empty()) throw ShapeError("softmax of an empty vector");
    double peak = z[0];
    for (double x : z) {
        if (!std::isfinite(x)) throw DomainError("softmax input is not finite");
        peak = std::max(peak, x);
    }
    std::vector<double> out(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - peak);
        total += out[i];
    }
    for (double& x : out) x /= total;
    return out;
}

/// W1 with unit ground distance between adjacent indices: sum of |CDF_p - CDF_q|.
/// Inputs are renormalized to unit mass.
inline double wasserstein1(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw ShapeError("wasserstein1 length mismatch: " + std::to_string(p.size()) + " vs " +
                         std::to_string(q.size()));
    }
    if (p.empty()) throw ShapeError("wasserstein1 of empty distributions");
    double mass_p = 0.0;
    double mass_q = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!(p[i] >= 0.0) || !(q[i] >= 0.0) || !std::isfinite(p[i]) || !std::isfinite(q[i])) {
            throw DomainError("wasserstein1 needs finite non-negative mass");
        }
        mass_p += p[i];
        mass_q += q[i];
    }
    if (mass_p <= 0.0 || mass_q <= 0.0) throw DomainError("wasserstein1 of a zero-mass vector");

    double cdf_p = 0.0;
    double cdf_q = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < p.size(); ++i) {
        cdf_p += p[i] / mass_p;
        cdf_q += q[i] / mass_q;
        total += std::abs(cdf_p - cdf_q);
    }
    return total;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_similarity length mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    if (a.empty()) throw ShapeError("cosine_similarity of empty vectors");
    double dot = 0.0;
    double norm_a = 0.0;
    double norm_b = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        norm_a += a[i] * a[i];
        norm_b += b[i] * b[i];
    }
    if (norm_a == 0.0 || norm_b == 0.0) throw DegenerateInputError("cosine_similarity of a zero vector");
    return std::clamp(dot / (std::sqrt(norm_a) * std::sqrt(norm_b)), -1.0, 1.0);
}

namespace detail {

inline std::vector<std::vector<double>> widen(const std::vector<std::vector<float>>& rows) {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const auto& row : rows) out.emplace_back(row.begin(), row.end());
    return out;
}

inline double cosine_or_zero(std::span<const double> a, std::span<const double> b, std::size_t& degenerate) {
    try {
        return cosine_similarity(a, b);
    } catch (const DegenerateInputError&) {
        ++degenerate;
        return 0.0;
    }
}

}  // namespace detail

inline ShiftFeatureBlock token_shift_features(const TokenStates& tok, const ShiftConfig& cfg) {
    if (cfg.window < 1) throw DomainError("shift window must be >= 1");
    ShiftFeatureBlock block;

    if (cfg.include_hidden) {
        const auto hidden = detail::widen(tok.hidden);
        std::vector<std::vector<double>> dists;
        dists.reserve(hidden.size());
        for (const auto& z : hidden) dists.push_back(softmax(z));
        for (const LayerPair& lp : layer_pairs(hidden.size(), cfg.window)) {
            block.wasserstein_hidden.push_back(wasserstein1(dists[lp.from], dists[lp.to]));
            block.cosine_hidden.push_back(
                detail::cosine_or_zero(hidden[lp.from], hidden[lp.to], block.degenerate_cosines));
            block.layout.push_back({Stream::hidden, lp});
        }
    }
    if (cfg.include_attention) {
        const auto rows = detail::widen(tok.attention);
        for (const LayerPair& lp : layer_pairs(rows.size(), cfg.window)) {
            block.wasserstein_attn.push_back(wasserstein1(rows[lp.from], rows[lp.to]));
            block.cosine_attn.push_back(
                detail::cosine_or_zero(rows[lp.from], rows[lp.to], block.degenerate_cosines));
            block.layout.push_back({Stream::attention, lp});
        }
    }
    return block;
}

/// Element-wise mean over tokens of every stream.
inline ShiftFeatureBlock aggregate_over_tokens(std::span<const ShiftFeatureBlock> blocks) {
    if (blocks.empty()) throw EmptyGenerationError("cannot average shift features over zero tokens");
    ShiftFeatureBlock out = blocks.front();
    for (std::size_t t = 1; t < blocks.size(); ++t) {
        const ShiftFeatureBlock& b = blocks[t];
        if (b.layout != out.layout) throw ShapeError("shift feature layouts differ between tokens");
        auto accumulate = [](std::vector<double>& acc, const std::vector<double>& x) {
            for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
        };
        accumulate(out.wasserstein_hidden, b.wasserstein_hidden);
        accumulate(out.cosine_hidden, b.cosine_hidden);
        accumulate(out.wasserstein_attn, b.wasserstein_attn);
        accumulate(out.cosine_attn, b.cosine_attn);
        out.degenerate_cosines += b.degenerate_cosines;
    }
    const double n = static_cast<double>(blocks.size());
    for (auto* v : {&out.wasserstein_hidden, &out.cosine_hidden, &out.wasserstein_attn, &out.cosine_attn}) {
        for (double& x : *v) x /= n;
    }
    return out;
}

inline ShiftFeatureBlock record_shift_features(const TraceRecord& rec, const ShiftConfig& cfg) {
    std::vector<ShiftFeatureBlock> blocks;
    blocks.reserve(rec.tokens.size());
    for (const TokenStates& tok : rec.tokens) blocks.push_back(token_shift_features(tok, cfg));
    return aggregate_over_tokens(blocks);
}

}  // namespace driftscope
