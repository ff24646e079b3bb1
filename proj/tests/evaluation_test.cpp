#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "driftscope/evaluation.hpp"
#include "driftscope/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace driftscope {
namespace {

using testing::gaussian_blobs;
using testing::layout_with;
using Vec = std::vector<double>;

TrainConfig quick_config(std::uint64_t seed = 7) {
    TrainConfig cfg;
    cfg.max_epochs = 40;
    cfg.seed = seed;
    return cfg;
}

TEST(Importance, ZeroSigmaGivesZeroDeviation) {
    const auto data = gaussian_blobs(testing::small_layout(), 20, 1.0, Vec(6, 1.0), 1);
    const auto model = train(data, quick_config()).model;
    const auto rep = feature_importance(model, data, 0.0, 3, 5);
    for (double d : rep.deviations) EXPECT_EQ(d, 0.0);
}

TEST(Importance, NegativeSigmaRejected) {
    const auto data = gaussian_blobs(testing::small_layout(), 20, 1.0, Vec(6, 1.0), 1);
    const auto model = init_model(data.layout, standardize_fit(data), 4, 3, 0.2, 1);
    EXPECT_THROW(feature_importance(model, data, -1.0), DomainError);
}

TEST(Importance, DeadPathSegmentHasZeroDeviation) {
    const auto data = gaussian_blobs(layout_with(2, 2, 2), 20, 1.0, Vec(6, 1.0), 2);
    MembershipModel model = init_model(data.layout, standardize_fit(data), 4, 3, 0.2, 3);
    // Cut every fusion input coming from the similarity group.
    auto& fusion = model.params.fusion;
    for (std::size_t o = 0; o < fusion.out; ++o) {
        for (std::size_t k = 4; k < 8; ++k) fusion.weight[o * fusion.in + k] = 0.0;
    }
    const auto rep = feature_importance(model, data, 1.0, 5, 9);
    EXPECT_EQ(rep.deviations[2], 0.0);
    EXPECT_EQ(rep.deviations[3], 0.0);
    EXPECT_GT(rep.deviations[0] + rep.deviations[1], 0.0);
    EXPECT_EQ(rep.ranking.size(), 6u);
}

TEST(Importance, DominantFeatureRanksFirst) {
    const std::vector<std::string> names{"a", "b", "c", "d"};
    const Vec w{0.1, -0.2, 4.0, 0.3};
    auto score = [&](std::span<const double> x) {
        double z = 0.0;
        for (std::size_t k = 0; k < 4; ++k) z += w[k] * x[k];
        return 1.0 / (1.0 + std::exp(-z));
    };
    Rng rng(4);
    std::vector<Vec> rows(30, Vec(4));
    for (auto& r : rows) {
        for (double& v : r) v = rng.normal() * 0.2;
    }
    const auto rep = perturbation_importance(score, rows, names, 1.0, 10, 1);
    EXPECT_EQ(rep.ranking.front(), "c");
    for (double d : rep.deviations) EXPECT_GE(d, 0.0);
}

TEST(Importance, LinearScorerScalesWithSigma) {
    const std::vector<std::string> names{"a", "b"};
    auto linear = [](std::span<const double> x) { return 0.7 * x[0] - 0.2 * x[1]; };
    const std::vector<Vec> rows{{0.0, 1.0}, {1.0, -1.0}, {0.5, 0.5}};
    const auto half = perturbation_importance(linear, rows, names, 0.5, 10, 3);
    const auto one = perturbation_importance(linear, rows, names, 1.0, 10, 3);
    const auto two = perturbation_importance(linear, rows, names, 2.0, 10, 3);
    for (std::size_t f = 0; f < 2; ++f) {
        EXPECT_LT(half.deviations[f], one.deviations[f]);
        EXPECT_LT(one.deviations[f], two.deviations[f]);
    }
}

TEST(Importance, DeterministicPerSeed) {
    const auto data = gaussian_blobs(testing::small_layout(), 15, 1.0, Vec(6, 1.0), 3);
    const auto model = init_model(data.layout, standardize_fit(data), 4, 3, 0.2, 1);
    EXPECT_EQ(feature_importance(model, data, 1.0, 4, 11).deviations,
              feature_importance(model, data, 1.0, 4, 11).deviations);
}

TraceMeta sweep_meta() { return TraceMeta{"synth", 4, 8, 64, Precision::f32, "sweep", true, true}; }

TEST(WindowSweep, RowsPerWindowAndNullRows) {
    const auto meta = sweep_meta();
    const auto records = synthesize_traces(3, 30, 30, 1.0, meta);
    PipelineConfig cfg;
    cfg.train.max_epochs = 30;
    const auto sweep = window_sweep(meta, records, {1, 2, 4, 8}, cfg);
    ASSERT_EQ(sweep.rows.size(), 4u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(sweep.rows[i].report.has_value());
    // Five hidden states at r = 4 still give one pair; r = 8 gives none.
    EXPECT_EQ(sweep.rows[2].n_features, 1u + 0u + 1u + 0u + 8u);
    EXPECT_FALSE(sweep.rows[3].report.has_value());
    EXPECT_NE(sweep.rows[3].reason.find("window 8"), std::string::npos);
    EXPECT_TRUE(sweep.best_window.has_value());
    EXPECT_TRUE(to_json(sweep)["rows"][3]["metrics"].is_null());
}

TEST(WindowSweep, SingleWindowEqualsDirectPipeline) {
    const auto meta = sweep_meta();
    const auto records = synthesize_traces(4, 25, 25, 1.0, meta);
    PipelineConfig cfg;
    cfg.train.max_epochs = 20;
    const auto sweep = window_sweep(meta, records, {1}, cfg);
    PipelineConfig direct = cfg;
    direct.features.shift.window = 1;
    const auto expected = run_holdout(extract_dataset(meta, records, direct.features), direct).report;
    ASSERT_EQ(sweep.rows.size(), 1u);
    EXPECT_EQ(*sweep.rows[0].report, expected);
}

TEST(WindowSweep, NeedsBothClasses) {
    const auto meta = sweep_meta();
    const auto records = synthesize_traces(4, 5, 0, 1.0, meta);
    EXPECT_THROW(window_sweep(meta, records, {1}, PipelineConfig{}), TrainingError);
}

LabeledFeatureSet shift_signal_set(std::size_t per_class, std::uint64_t seed) {
    const FeatureLayout layout = layout_with(3, 3, 4);
    Vec direction(layout.size(), 0.0);
    for (std::size_t k = 0; k < 3; ++k) direction[k] = 1.0;
    return gaussian_blobs(layout, per_class, 1.5, direction, seed);
}

TEST(GroupAblation, StandardMasksGiveFiveRows) {
    const auto masks = standard_ablation_masks();
    ASSERT_EQ(masks.size(), 5u);
    const std::vector<std::string> labels{"I", "II", "III", "IV", "full"};
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(masks[i].label, labels[i]);
    const auto tr = shift_signal_set(40, 1);
    const auto te = shift_signal_set(40, 2);
    const auto rows = group_ablation(tr, te, masks, quick_config());
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0].n_features, 3u);
    EXPECT_EQ(rows[3].n_features, 7u);
    EXPECT_EQ(rows[4].n_features, 10u);
    EXPECT_EQ(to_json(rows).size(), 5u);
}

TEST(GroupAblation, FullMaskEqualsUnablatedPipeline) {
    const auto tr = shift_signal_set(30, 3);
    const auto te = shift_signal_set(30, 4);
    const auto rows = group_ablation(tr, te, {GroupMask{"full", true, true, true}}, quick_config());
    const auto model = train(tr, quick_config()).model;
    EXPECT_EQ(rows.at(0).report, evaluate_model(model, te));
}

TEST(GroupAblation, ShiftOnlySignalRanksDistAboveProb) {
    const auto tr = shift_signal_set(60, 5);
    const auto te = shift_signal_set(60, 6);
    const auto rows = group_ablation(tr, te, {{"dist", true, false, false}, {"prob", false, false, true}},
                                     quick_config());
    EXPECT_GT(rows[0].report.auc_roc, rows[1].report.auc_roc);
    EXPECT_GT(rows[0].report.auc_roc, 0.8);
}

TEST(GroupAblation, EmptyMaskIsDomainError) {
    const auto tr = shift_signal_set(10, 5);
    EXPECT_THROW(group_ablation(tr, tr, {{"none", false, false, false}}, quick_config()), DomainError);
    EXPECT_THROW(select_groups(tr, GroupMask{"none", false, false, false}), DomainError);
}

TEST(Transfer, SameSetEqualsInDomainEvaluation) {
    const auto data = shift_signal_set(30, 8);
    const auto model = train(data, quick_config()).model;
    EXPECT_EQ(transfer_eval(data, data, quick_config()), evaluate_model(model, data));
}

LabeledFeatureSet domain(const Vec& direction, std::uint64_t seed, const std::string& tag) {
    return gaussian_blobs(layout_with(3, 3, 0), 150, 1.2, direction, seed, tag);
}

TEST(Transfer, SharedSignalTransfers) {
    const Vec dir{1, 1, 1, 0, 0, 0};
    const auto a = domain(dir, 10, "a");
    const auto [b_train, b_test] = split(domain(dir, 11, "b"), 0.5, 1);
    const double in_domain = transfer_eval(b_train, b_test, quick_config()).auc_roc;
    const double across = transfer_eval(a, b_test, quick_config()).auc_roc;
    EXPECT_LE(std::abs(in_domain - across), 0.1);
}

TEST(Transfer, OrthogonalSignalDoesNotTransfer) {
    const auto a = domain(Vec{1, 1, 1, 0, 0, 0}, 12, "a");
    const auto b = domain(Vec{0, 0, 0, 1, 1, 1}, 13, "b");
    const double across = transfer_eval(a, b, quick_config()).auc_roc;
    EXPECT_NEAR(across, 0.5, 0.1);
}

TEST(Transfer, LayoutMismatchIsShapeError) {
    EXPECT_THROW(transfer_eval(shift_signal_set(10, 1), domain(Vec(6, 1.0), 2, "x"), quick_config()), ShapeError);
}

TEST(Report, CountsAndJson) {
    const auto r = evaluate_scores(Vec{0.9, 0.2, 0.6, 0.4}, std::vector<int>{1, 0, 1, 1});
    EXPECT_EQ(r.n_pos, 3u);
    EXPECT_EQ(r.n_neg, 1u);
    EXPECT_EQ(r.auc_roc, 1.0);
    const auto j = to_json(r);
    EXPECT_EQ(j["n_pos"], 3);
    EXPECT_EQ(j["threshold"], 0.5);
}

}  // namespace
}  // namespace driftscope
