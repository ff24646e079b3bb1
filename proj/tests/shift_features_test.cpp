#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "driftscope/features.hpp"
#include "driftscope/rng.hpp"
#include "driftscope/shift_features.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace driftscope {
namespace {

using Vec = std::vector<double>;

Vec random_distribution(Rng& rng, std::size_t n, bool sparse = true) {
    Vec p(n);
    for (double& x : p) x = (sparse && rng.below(4) == 0) ? 0.0 : rng.uniform();
    p[rng.below(n)] += 0.1;
    return p;
}

TEST(Softmax, Examples) {
    const Vec a = softmax(Vec{0.0, 0.0});
    EXPECT_DOUBLE_EQ(a[0], 0.5);
    EXPECT_DOUBLE_EQ(a[1], 0.5);
    const Vec b = softmax(Vec{0.0, std::log(3.0)});
    EXPECT_NEAR(b[0], 0.25, 1e-15);
    EXPECT_NEAR(b[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        Vec z(1 + rng.below(12));
        for (double& x : z) x = rng.normal(0.0, 5.0);
        const double c = rng.uniform(-50.0, 50.0);
        Vec shifted = z;
        for (double& x : shifted) x += c;
        const Vec p = softmax(z);
        const Vec q = softmax(shifted);
        for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
    }
}

TEST(Softmax, LargeInputsStayFinite) {
    const Vec p = softmax(Vec{1000.0, 1000.0, -1000.0});
    EXPECT_DOUBLE_EQ(p[0], 0.5);
    EXPECT_DOUBLE_EQ(p[2], 0.0);
}

TEST(Softmax, Errors) {
    EXPECT_THROW(softmax(Vec{0.0, std::nan("")}), DomainError);
    EXPECT_THROW(softmax(Vec{INFINITY}), DomainError);
    EXPECT_THROW(softmax(Vec{}), ShapeError);
}

TEST(Wasserstein, Examples) {
    EXPECT_DOUBLE_EQ(wasserstein1(Vec{0.5, 0.5}, Vec{0.5, 0.5}), 0.0);
    EXPECT_DOUBLE_EQ(wasserstein1(Vec{1, 0, 0}, Vec{0, 0, 1}), 2.0);
    EXPECT_NEAR(wasserstein1(Vec{0.5, 0.5, 0}, Vec{0, 0.5, 0.5}), 1.0, 1e-12);
    EXPECT_NEAR(oracle::min_cost_transport({0.5, 0.5, 0}, {0, 0.5, 0.5}), 1.0, 1e-9);
}

TEST(Wasserstein, RenormalizesMass) {
    EXPECT_NEAR(wasserstein1(Vec{2, 0, 0}, Vec{0, 0, 5}), 2.0, 1e-15);
}

TEST(Wasserstein, MatchesTransportOracle) {
    Rng rng(17);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + rng.below(8);
        const Vec p = random_distribution(rng, n);
        const Vec q = random_distribution(rng, n);
        EXPECT_NEAR(wasserstein1(p, q), oracle::min_cost_transport(p, q), 1e-9) << "trial " << t;
    }
}

TEST(Wasserstein, MetricAxioms) {
    Rng rng(23);
    for (int t = 0; t < 300; ++t) {
        const std::size_t n = 1 + rng.below(10);
        const Vec p = random_distribution(rng, n);
        const Vec q = random_distribution(rng, n);
        const Vec s = random_distribution(rng, n);
        EXPECT_EQ(wasserstein1(p, p), 0.0);
        EXPECT_DOUBLE_EQ(wasserstein1(p, q), wasserstein1(q, p));
        EXPECT_GE(wasserstein1(p, q), 0.0);
        EXPECT_LE(wasserstein1(p, s), wasserstein1(p, q) + wasserstein1(q, s) + 1e-12);
        EXPECT_LE(wasserstein1(p, q), static_cast<double>(n - 1) + 1e-12);
    }
}

TEST(Wasserstein, Errors) {
    EXPECT_THROW(wasserstein1(Vec{1, 0}, Vec{1, 0, 0}), ShapeError);
    EXPECT_THROW(wasserstein1(Vec{}, Vec{}), ShapeError);
    EXPECT_THROW(wasserstein1(Vec{-0.1, 1.1}, Vec{0.5, 0.5}), DomainError);
    EXPECT_THROW(wasserstein1(Vec{0, 0}, Vec{0.5, 0.5}), DomainError);
    EXPECT_THROW(wasserstein1(Vec{std::nan(""), 1}, Vec{0.5, 0.5}), DomainError);
}

TEST(Cosine, Examples) {
    EXPECT_NEAR(cosine_similarity(Vec{1, 2, 3}, Vec{1, 2, 3}), 1.0, 1e-15);
    EXPECT_DOUBLE_EQ(cosine_similarity(Vec{1, 0}, Vec{0, 1}), 0.0);
    EXPECT_NEAR(cosine_similarity(Vec{1, 2}, Vec{-1, -2}), -1.0, 1e-15);
}

TEST(Cosine, BoundsAndScaleInvariance) {
    Rng rng(31);
    for (int t = 0; t < 300; ++t) {
        Vec a(1 + rng.below(16));
        Vec b(a.size());
        for (double& x : a) x = rng.normal();
        for (double& x : b) x = rng.normal();
        const double c = cosine_similarity(a, b);
        EXPECT_GE(c, -1.0);
        EXPECT_LE(c, 1.0);
        const double k = std::exp(rng.uniform(-5.0, 5.0));
        Vec ka = a;
        for (double& x : ka) x *= k;
        EXPECT_NEAR(cosine_similarity(ka, b), c, 1e-12);
        EXPECT_DOUBLE_EQ(cosine_similarity(b, a), c);
    }
}

TEST(Cosine, Errors) {
    EXPECT_THROW(cosine_similarity(Vec{0, 0}, Vec{1, 2}), DegenerateInputError);
    EXPECT_THROW(cosine_similarity(Vec{1}, Vec{1, 2}), ShapeError);
}

TEST(LayerPairs, Examples) {
    const auto deep = layer_pairs(33, 2);
    ASSERT_EQ(deep.size(), 16u);
    for (std::size_t i = 0; i < deep.size(); ++i) EXPECT_EQ(deep[i], (LayerPair{2 * i, 2 * i + 2}));
    EXPECT_EQ(layer_pairs(5, 1), (std::vector<LayerPair>{{0, 1}, {1, 2}, {2, 3}, {3, 4}}));
    EXPECT_TRUE(layer_pairs(3, 4).empty());
    EXPECT_TRUE(layer_pairs(0, 1).empty());
}

TEST(LayerPairs, CountFormulaAcrossDepthsAndWindows) {
    for (std::size_t layers : {4u, 12u, 32u}) {
        for (std::size_t r : {1u, 2u, 4u, 6u, 8u}) {
            FeatureConfig cfg;
            cfg.shift.window = r;
            const TraceMeta meta{"m", static_cast<std::uint32_t>(layers), 8, 100, Precision::f32, "", true, true};
            const std::size_t hid = layers / r;        // floor((n_states - 1) / r), n_states = L + 1
            const std::size_t att = (layers - 1) / r;  // n_states = L
            const FeatureLayout layout = make_layout(meta, cfg);
            EXPECT_EQ(layout.size(), 2 * hid + 2 * att + 8) << "L=" << layers << " r=" << r;
            EXPECT_EQ(layout.segment_size(Segment::dist_shift), hid + att);
            EXPECT_EQ(layout.segment_size(Segment::similarity), hid + att);
            EXPECT_EQ(layout.segment_size(Segment::probabilistic), 8u);
        }
    }
}

TEST(LayerPairs, SeventyColumnsForThirtyTwoLayers) {
    const TraceMeta meta{"llama-shaped", 32, 4096, 32000, Precision::f16, "", true, true};
    const FeatureLayout layout = make_layout(meta, FeatureConfig{});
    EXPECT_EQ(layout.size(), 70u);
    EXPECT_EQ(layout.names.front(), "w_hid_0_2");
    EXPECT_EQ(layout.names[16], "w_att_0_2");
    EXPECT_EQ(layout.names.back(), "pmax_p75");
}

TokenStates token_with(std::vector<std::vector<float>> hidden, std::vector<std::vector<float>> attention) {
    TokenStates tok;
    tok.hidden = std::move(hidden);
    tok.attention = std::move(attention);
    return tok;
}

TEST(TokenShift, HandSetHiddenStates) {
    const float ln3 = static_cast<float>(std::log(3.0));
    ShiftConfig cfg;
    cfg.window = 1;
    cfg.include_attention = false;
    const auto block = token_shift_features(token_with({{0, 0}, {0, ln3}, {0, 0}}, {}), cfg);
    ASSERT_EQ(block.wasserstein_hidden.size(), 2u);
    // CDFs differ only at the first index: |0.5 - 0.25|.
    EXPECT_NEAR(block.wasserstein_hidden[0], std::abs(0.5 - 0.25), 1e-7);
    EXPECT_NEAR(block.wasserstein_hidden[1], 0.25, 1e-7);
    EXPECT_EQ(block.layout, (std::vector<PairDescriptor>{{Stream::hidden, {0, 1}}, {Stream::hidden, {1, 2}}}));
}

TEST(TokenShift, AdjacentPointMassesInAttention) {
    ShiftConfig cfg;
    cfg.window = 1;
    cfg.include_hidden = false;
    const auto block = token_shift_features(token_with({}, {{1, 0}, {0, 1}}), cfg);
    ASSERT_EQ(block.wasserstein_attn.size(), 1u);
    EXPECT_DOUBLE_EQ(block.wasserstein_attn[0], 1.0);
    EXPECT_DOUBLE_EQ(block.cosine_attn[0], 0.0);
}

TEST(TokenShift, IdenticalLayersGiveZeroShift) {
    const std::vector<float> h{0.3f, -1.0f, 2.0f};
    const std::vector<float> a{0.2f, 0.3f, 0.5f};
    ShiftConfig cfg;
    cfg.window = 1;
    const auto block = token_shift_features(token_with({h, h, h, h}, {a, a, a}), cfg);
    for (double w : block.wasserstein_hidden) EXPECT_EQ(w, 0.0);
    for (double w : block.wasserstein_attn) EXPECT_EQ(w, 0.0);
    for (double c : block.cosine_hidden) EXPECT_NEAR(c, 1.0, 1e-15);
    for (double c : block.cosine_attn) EXPECT_NEAR(c, 1.0, 1e-15);
}

TEST(TokenShift, ZeroHiddenVectorFlagsAndEmitsZero) {
    ShiftConfig cfg;
    cfg.window = 1;
    cfg.include_attention = false;
    const auto block = token_shift_features(token_with({{0, 0}, {1, 2}}, {}), cfg);
    EXPECT_EQ(block.cosine_hidden, (Vec{0.0}));
    EXPECT_EQ(block.degenerate_cosines, 1u);
    EXPECT_NEAR(block.wasserstein_hidden[0], wasserstein1(softmax(Vec{0, 0}), softmax(Vec{1, 2})), 1e-7);
}

TEST(TokenShift, ZeroWindowRejected) {
    ShiftConfig cfg;
    cfg.window = 0;
    EXPECT_THROW(token_shift_features(token_with({{1}}, {}), cfg), DomainError);
}

ShiftFeatureBlock block_of(double v) {
    ShiftFeatureBlock b;
    b.wasserstein_hidden = {v};
    b.cosine_hidden = {v};
    b.layout = {{Stream::hidden, {0, 1}}};
    return b;
}

TEST(Aggregate, SingleBlockUnchanged) {
    const std::vector<ShiftFeatureBlock> one{block_of(0.7)};
    const auto out = aggregate_over_tokens(one);
    EXPECT_EQ(out.wasserstein_hidden, one[0].wasserstein_hidden);
    EXPECT_EQ(out.cosine_hidden, one[0].cosine_hidden);
}

TEST(Aggregate, MeanOfTwo) {
    const std::vector<ShiftFeatureBlock> two{block_of(0.2), block_of(0.4)};
    EXPECT_NEAR(aggregate_over_tokens(two).wasserstein_hidden[0], 0.3, 1e-15);
}

TEST(Aggregate, MatchesPerEntryMean) {
    const TraceMeta meta = testing::tiny_meta(4, 5);
    Rng rng(41);
    for (int t = 0; t < 20; ++t) {
        const TraceRecord rec = testing::random_record(meta, rng, 5, 3);
        ShiftConfig cfg;
        cfg.window = 1 + rng.below(3);
        std::vector<ShiftFeatureBlock> blocks;
        for (const auto& tok : rec.tokens) blocks.push_back(token_shift_features(tok, cfg));
        const auto agg = record_shift_features(rec, cfg);
        for (std::size_t i = 0; i < agg.wasserstein_hidden.size(); ++i) {
            long double sum = 0;
            for (const auto& b : blocks) sum += b.wasserstein_hidden[i];
            EXPECT_NEAR(agg.wasserstein_hidden[i], static_cast<double>(sum / blocks.size()), 1e-12);
        }
        for (std::size_t i = 0; i < agg.cosine_attn.size(); ++i) {
            long double sum = 0;
            for (const auto& b : blocks) sum += b.cosine_attn[i];
            EXPECT_NEAR(agg.cosine_attn[i], static_cast<double>(sum / blocks.size()), 1e-12);
        }
    }
}

TEST(Aggregate, Errors) {
    EXPECT_THROW(aggregate_over_tokens(std::vector<ShiftFeatureBlock>{}), EmptyGenerationError);
    auto other = block_of(0.1);
    other.layout = {{Stream::attention, {0, 1}}};
    const std::vector<ShiftFeatureBlock> mixed{block_of(0.1), other};
    EXPECT_THROW(aggregate_over_tokens(mixed), ShapeError);
}

TEST(Features, ExtractMatchesLayoutOrder) {
    const TraceMeta meta = testing::tiny_meta(4, 3);
    Rng rng(5);
    const TraceRecord rec = testing::random_record(meta, rng, 4, 2);
    const FeatureConfig cfg;
    const FeatureLayout layout = make_layout(meta, cfg);
    const Vec x = extract_features(rec, cfg);
    ASSERT_EQ(x.size(), layout.size());
    const auto shift = record_shift_features(rec, cfg.shift);
    EXPECT_EQ(x[0], shift.wasserstein_hidden[0]);
    EXPECT_EQ(x[layout.segment_offset(Segment::similarity)], shift.cosine_hidden[0]);
    EXPECT_EQ(x[layout.segment_offset(Segment::probabilistic)], build_prob_features(rec, cfg.prob).mtp);
}

TEST(Features, CsvRoundTripIsExact) {
    Rng rng(77);
    const FeatureLayout layout = testing::small_layout();
    LabeledFeatureSet set{layout, {}, {}, {}};
    for (int i = 0; i < 25; ++i) {
        Vec row(layout.size());
        for (double& x : row) x = rng.normal() * std::pow(10.0, rng.uniform(-8, 8));
        set.push_back(std::move(row), static_cast<int>(rng.below(3)) - 1, "tag" + std::to_string(i % 3));
    }
    const LabeledFeatureSet back = features_from_csv(features_to_csv(set));
    EXPECT_EQ(back.layout, set.layout);
    EXPECT_EQ(back.features, set.features);
    EXPECT_EQ(back.labels, set.labels);
    EXPECT_EQ(back.source_tags, set.source_tags);
}

TEST(Features, CsvRejectsDelimiterInSourceTag) {
    LabeledFeatureSet set{testing::small_layout(), {}, {}, {}};
    set.push_back(Vec(6, 0.0), 1, "a,b");
    EXPECT_THROW(features_to_csv(set), FormatError);
}

TEST(Features, LayoutRejectsOutOfOrderSegments) {
    EXPECT_THROW(FeatureLayout::from_names({"mtp", "w_hid_0_1"}), FormatError);
}

}  // namespace
}  // namespace driftscope
