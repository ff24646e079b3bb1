#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "driftscope/errors.hpp"
#include "driftscope/features.hpp"
#include "driftscope/rng.hpp"

namespace driftscope {

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded stratified split. The train side gets round(n * train_frac) rows, shared between
/// the classes by largest remainder; each class keeps at least one row on each side.
inline SplitIndices stratified_split_indices(const std::vector<int>& labels, double train_frac,
                                             std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw DomainError("train fraction must lie in (0, 1)");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DomainError("split needs 0/1 labels on every row");
        by_class[labels[i]].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        if (by_class[c].size() < 2) {
            throw DomainError("stratified split needs at least 2 samples of class " + std::to_string(c) +
                              ", got " + std::to_string(by_class[c].size()));
        }
    }

    const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(labels.size()) * train_frac));
    std::size_t take[2];
    double remainder[2];
    for (int c = 0; c < 2; ++c) {
        const double exact = static_cast<double>(by_class[c].size()) * train_frac;
        take[c] = static_cast<std::size_t>(std::floor(exact));
        remainder[c] = exact - std::floor(exact);
    }
    std::size_t assigned = take[0] + take[1];
    const int first = remainder[1] > remainder[0] ? 1 : 0;
    const int order[2] = {first, 1 - first};
    for (int k = 0; k < 2 && assigned < target; ++k) {
        ++take[order[k]];
        ++assigned;
    }
    for (int c = 0; c < 2; ++c) take[c] = std::clamp<std::size_t>(take[c], 1, by_class[c].size() - 1);

    Rng rng(seed);
    SplitIndices out;
    for (int c = 0; c < 2; ++c) {
        auto idx = by_class[c];
        rng.shuffle(idx);
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]));
        out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]), idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

inline std::pair<LabeledFeatureSet, LabeledFeatureSet> split(const LabeledFeatureSet& set, double train_frac,
                                                             std::uint64_t seed) {
    const SplitIndices idx = stratified_split_indices(set.labels, train_frac, seed);
    return {set.subset(idx.train), set.subset(idx.test)};
}

}  // namespace driftscope
