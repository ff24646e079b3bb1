#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "driftscope/features.hpp"
#include "driftscope/synth.hpp"
#include "driftscope/trace_io.hpp"

namespace driftscope {
namespace {

TraceMeta meta() { return TraceMeta{"synth", 6, 16, 128, Precision::f32, "synthetic", true, true}; }

// Per-record mean over the distribution-shift columns.
std::vector<double> mean_wasserstein(const std::vector<TraceRecord>& records) {
    const auto set = extract_dataset(meta(), records, FeatureConfig{});
    const std::size_t n = set.layout.segment_size(Segment::dist_shift);
    std::vector<double> out;
    for (const auto& row : set.features) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += row[k];
        out.push_back(s / static_cast<double>(n));
    }
    return out;
}

struct ClassStats {
    double mean_diff;
    double t;
};

ClassStats welch(const std::vector<double>& v, std::size_t n_truthful) {
    double m[2] = {0, 0}, s2[2] = {0, 0};
    std::size_t n[2] = {n_truthful, v.size() - n_truthful};
    for (std::size_t i = 0; i < v.size(); ++i) m[i >= n_truthful] += v[i];
    for (int c = 0; c < 2; ++c) m[c] /= static_cast<double>(n[c]);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const int c = i >= n_truthful;
        s2[c] += (v[i] - m[c]) * (v[i] - m[c]);
    }
    for (int c = 0; c < 2; ++c) s2[c] /= static_cast<double>(n[c] - 1);
    const double se = std::sqrt(s2[0] / static_cast<double>(n[0]) + s2[1] / static_cast<double>(n[1]));
    return {m[1] - m[0], (m[1] - m[0]) / se};
}

TEST(Synth, SameSeedIsBitIdentical) {
    const auto a = synthesize_traces(7, 10, 10, 1.0, meta());
    const auto b = synthesize_traces(7, 10, 10, 1.0, meta());
    EXPECT_EQ(encode_trace(meta(), a), encode_trace(meta(), b));
    EXPECT_NE(encode_trace(meta(), a), encode_trace(meta(), synthesize_traces(8, 10, 10, 1.0, meta())));
}

TEST(Synth, RecordsValidateAndCarryLabels) {
    const auto records = synthesize_traces(2, 15, 15, 2.0, meta());
    ASSERT_EQ(records.size(), 30u);
    for (std::size_t i = 0; i < records.size(); ++i) {
        EXPECT_TRUE(validate_record(meta(), records[i]).empty()) << records[i].id;
        EXPECT_EQ(records[i].label, i < 15 ? 0 : 1);
        EXPECT_GE(records[i].gen_len, 8u);
        EXPECT_LE(records[i].gen_len, 16u);
    }
}

TEST(Synth, ZeroDriftHasNoClassDifference) {
    const auto stats = welch(mean_wasserstein(synthesize_traces(11, 200, 200, 0.0, meta())), 200);
    EXPECT_LT(std::abs(stats.t), 1.96);
}

TEST(Synth, DriftRaisesHallucinatedWasserstein) {
    const auto stats = welch(mean_wasserstein(synthesize_traces(12, 100, 100, 1.0, meta())), 100);
    EXPECT_GT(stats.mean_diff, 0.0);
}

TEST(Synth, GapGrowsWithDrift) {
    double previous = -1.0;
    for (double drift : {0.0, 0.5, 1.0, 2.0}) {
        const auto stats = welch(mean_wasserstein(synthesize_traces(13, 60, 60, drift, meta())), 60);
        EXPECT_GT(stats.mean_diff, previous) << "drift " << drift;
        previous = stats.mean_diff;
    }
}

TEST(Synth, ShiftOnlySignalLeavesProbabilitiesAlone) {
    SynthOptions opt;
    opt.perturb_probs = false;
    const auto records = synthesize_traces(14, 150, 150, 1.5, meta(), opt);
    const auto set = extract_dataset(meta(), records, FeatureConfig{});
    const std::size_t mtp = set.layout.segment_offset(Segment::probabilistic);
    std::vector<double> col;
    for (const auto& row : set.features) col.push_back(row[mtp]);
    EXPECT_LT(std::abs(welch(col, 150).t), 3.0);
}

TEST(Synth, NegativeDriftRejected) {
    EXPECT_THROW(synthesize_traces(1, 1, 1, -0.5, meta()), DomainError);
}

}  // namespace
}  // namespace driftscope
