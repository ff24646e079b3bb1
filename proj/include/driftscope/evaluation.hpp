#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "driftscope/errors.hpp"
#include "driftscope/features.hpp"
#include "driftscope/membership.hpp"
#include "driftscope/metrics.hpp"
#include "driftscope/rng.hpp"
#include "driftscope/split.hpp"
#include "driftscope/trace.hpp"

namespace driftscope {

struct EvalReport {
    double auc_roc = 0.0;
    double pr_auc = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double threshold = 0.5;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;

    bool operator==(const EvalReport&) const = default;
};

inline EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                                  double threshold = 0.5) {
    EvalReport r;
    r.auc_roc = roc_auc(scores, labels);
    r.pr_auc = pr_auc(scores, labels);
    const ThresholdMetrics t = threshold_metrics(scores, labels, threshold);
    r.accuracy = t.accuracy;
    r.f1 = t.f1;
    r.precision = t.precision;
    r.recall = t.recall;
    r.threshold = threshold;
    for (int l : labels) (l == 1 ? r.n_pos : r.n_neg) += 1;
    return r;
}

inline EvalReport evaluate_model(const MembershipModel& model, const LabeledFeatureSet& test, double threshold = 0.5) {
    require_labeled(test, false, "evaluation set");
    return evaluate_scores(score_batch(model, test), test.labels, threshold);
}

/// Root seed plus everything needed for split -> train -> evaluate.
struct PipelineConfig {
    FeatureConfig features;
    TrainConfig train;
    double train_frac = 0.75;
    double threshold = 0.5;
    std::uint64_t seed = 42;

    std::uint64_t split_seed() const { return derive_seed(seed, seed_stream::split); }

    TrainConfig train_config() const {
        TrainConfig t = train;
        t.seed = derive_seed(seed, seed_stream::train);
        return t;
    }
};

struct HoldoutResult {
    EvalReport report;
    TrainHistory history;
};

/// Stratified split of `set`, training on the train side, evaluation on the held-out side.
inline HoldoutResult run_holdout(const LabeledFeatureSet& set, const PipelineConfig& cfg) {
    require_labeled(set, true, "pipeline data");
    const auto [train_part, test_part] = split(set, cfg.train_frac, cfg.split_seed());
    TrainResult trained = train(train_part, cfg.train_config());
    return {evaluate_model(trained.model, test_part, cfg.threshold), std::move(trained.history)};
}

// ---- feature importance ----

struct ImportanceReport {
    std::vector<std::string> names;
    std::vector<double> deviations;   // mean |score_perturbed - score_clean|
    std::vector<std::string> ranking;  // names by decreasing deviation
};

/// Perturbs one standardized feature at a time with N(0, sigma^2) noise and averages the
/// absolute change of `score` over samples x trials. Works with any scorer on standardized rows.
template <class ScoreFn>
ImportanceReport perturbation_importance(ScoreFn&& score, const std::vector<std::vector<double>>& standardized,
                                         const std::vector<std::string>& names, double sigma, std::size_t trials,
                                         std::uint64_t seed) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("importance sigma must be finite and >= 0");
    if (trials == 0) throw DomainError("importance needs at least one trial");
    if (standardized.empty()) throw ShapeError("importance needs at least one sample");

    std::vector<double> clean;
    clean.reserve(standardized.size());
    for (const auto& x : standardized) clean.push_back(score(std::span<const double>(x)));

    Rng rng(seed);
    ImportanceReport report;
    report.names = names;
    report.deviations.assign(names.size(), 0.0);
    std::vector<double> x;
    for (std::size_t f = 0; f < names.size(); ++f) {
        double total = 0.0;
        for (std::size_t t = 0; t < trials; ++t) {
            for (std::size_t s = 0; s < standardized.size(); ++s) {
                x = standardized[s];
                x[f] += sigma * rng.normal();
                total += std::abs(score(std::span<const double>(x)) - clean[s]);
            }
        }
        report.deviations[f] = total / static_cast<double>(trials * standardized.size());
    }

    std::vector<std::size_t> order(names.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return report.deviations[a] > report.deviations[b]; });
    for (std::size_t i : order) report.ranking.push_back(names[i]);
    return report;
}

inline ImportanceReport feature_importance(const MembershipModel& model, const LabeledFeatureSet& test,
                                           double sigma = 1.0, std::size_t trials = 10, std::uint64_t seed = 0) {
    require_layout(model, test.layout);
    const auto standardized = detail::standardize_rows(model.standardizer, test.features);
    return perturbation_importance([&](std::span<const double> x) { return forward(model, x); }, standardized,
                                   model.layout.names, sigma, trials, seed);
}

// ---- window sweep ----

struct WindowRow {
    std::size_t window = 0;
    std::size_t n_features = 0;
    std::optional<EvalReport> report;  // empty when the window yields no layer pairs
    std::string reason;
};

struct WindowSweep {
    std::vector<WindowRow> rows;
    std::optional<std::size_t> best_window;
};

inline WindowSweep window_sweep(const TraceMeta& meta, const std::vector<TraceRecord>& records,
                                const std::vector<std::size_t>& windows, const PipelineConfig& cfg) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    for (const auto& r : records) {
        if (r.label == 1) ++pos;
        if (r.label == 0) ++neg;
    }
    if (pos == 0 || neg == 0) throw TrainingError("window sweep needs at least one trace per class");

    WindowSweep sweep;
    double best_auc = -1.0;
    for (std::size_t r : windows) {
        WindowRow row;
        row.window = r;
        if (r == 0) throw DomainError("window must be >= 1");
        const std::size_t hid = cfg.features.shift.include_hidden ? layer_pairs(meta.hidden_states(), r).size() : 0;
        const std::size_t att = cfg.features.shift.include_attention ? layer_pairs(meta.n_layers, r).size() : 0;
        if (hid + att == 0) {
            row.reason = "window " + std::to_string(r) + " leaves no layer pairs (" +
                         std::to_string(meta.hidden_states()) + " hidden states, " + std::to_string(meta.n_layers) +
                         " attention layers)";
            sweep.rows.push_back(std::move(row));
            continue;
        }
        PipelineConfig row_cfg = cfg;
        row_cfg.features.shift.window = r;
        const LabeledFeatureSet set = extract_dataset(meta, records, row_cfg.features);
        row.n_features = set.layout.size();
        row.report = run_holdout(set, row_cfg).report;
        if (row.report->auc_roc > best_auc) {
            best_auc = row.report->auc_roc;
            sweep.best_window = r;
        }
        sweep.rows.push_back(std::move(row));
    }
    return sweep;
}

// ---- group ablation ----

struct GroupMask {
    std::string label;
    bool dist_shift = true;
    bool similarity = true;
    bool probabilistic = true;

    bool keeps(Segment s) const {
        switch (s) {
            case Segment::dist_shift: return dist_shift;
            case Segment::similarity: return similarity;
            case Segment::probabilistic: return probabilistic;
        }
        return false;
    }
    bool empty() const { return !dist_shift && !similarity && !probabilistic; }
};

/// Model versions I-IV and the full model: {dist}, {sim}, {dist, sim}, {dist, prob}, all.
inline std::vector<GroupMask> standard_ablation_masks() {
    return {{"I", true, false, false},
            {"II", false, true, false},
            {"III", true, true, false},
            {"IV", true, false, true},
            {"full", true, true, true}};
}

/// Drops the columns of every segment the mask leaves out.
inline LabeledFeatureSet select_groups(const LabeledFeatureSet& set, const GroupMask& mask) {
    if (mask.empty()) throw DomainError("ablation mask selects no feature group");
    std::vector<std::size_t> keep;
    std::vector<std::string> names;
    for (std::size_t k = 0; k < set.layout.size(); ++k) {
        if (mask.keeps(segment_of(set.layout.names[k]))) {
            keep.push_back(k);
            names.push_back(set.layout.names[k]);
        }
    }
    if (keep.empty()) throw ShapeError("ablation mask '" + mask.label + "' keeps no columns of this layout");
    LabeledFeatureSet out{FeatureLayout::from_names(std::move(names)), {}, {}, {}};
    for (std::size_t i = 0; i < set.size(); ++i) {
        std::vector<double> row;
        row.reserve(keep.size());
        for (std::size_t k : keep) row.push_back(set.features[i][k]);
        out.push_back(std::move(row), set.labels[i], set.source_tags[i]);
    }
    return out;
}

struct AblationRow {
    GroupMask mask;
    std::size_t n_features = 0;
    EvalReport report;
};

inline std::vector<AblationRow> group_ablation(const LabeledFeatureSet& train_set, const LabeledFeatureSet& test_set,
                                               const std::vector<GroupMask>& masks, const TrainConfig& cfg,
                                               double threshold = 0.5) {
    if (train_set.layout != test_set.layout) throw ShapeError("train and test layouts differ");
    std::vector<AblationRow> rows;
    for (const GroupMask& mask : masks) {
        const auto tr = select_groups(train_set, mask);
        const auto te = select_groups(test_set, mask);
        const TrainResult trained = train(tr, cfg);
        rows.push_back({mask, tr.layout.size(), evaluate_model(trained.model, te, threshold)});
    }
    return rows;
}

// ---- transfer ----

/// Train on one dataset (internal validation split), evaluate on another.
inline EvalReport transfer_eval(const LabeledFeatureSet& train_set, const LabeledFeatureSet& test_set,
                                const TrainConfig& cfg, double threshold = 0.5) {
    if (train_set.layout != test_set.layout) {
        throw ShapeError("transfer layouts differ: train has " + train_set.layout.describe() + ", test has " +
                         test_set.layout.describe());
    }
    const TrainResult trained = train(train_set, cfg);
    return evaluate_model(trained.model, test_set, threshold);
}

// ---- JSON ----

inline nlohmann::json to_json(const EvalReport& r) {
    return {{"auc_roc", r.auc_roc},     {"pr_auc", r.pr_auc}, {"accuracy", r.accuracy},
            {"f1", r.f1},               {"precision", r.precision}, {"recall", r.recall},
            {"threshold", r.threshold}, {"n_pos", r.n_pos},   {"n_neg", r.n_neg}};
}

inline nlohmann::json to_json(const TrainHistory& h) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : h.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"val_loss", e.val_loss},
                          {"val_auc", e.val_auc},
                          {"lr", e.lr}});
    }
    return {{"initial_train_loss", h.initial_train_loss},
            {"best_epoch", h.best_epoch},
            {"best_val_auc", h.best_val_auc},
            {"early_stopped", h.early_stopped},
            {"epochs", epochs}};
}

inline nlohmann::json to_json(const ImportanceReport& r) {
    nlohmann::json features = nlohmann::json::array();
    for (std::size_t i = 0; i < r.names.size(); ++i) {
        features.push_back({{"name", r.names[i]}, {"deviation", r.deviations[i]}});
    }
    return {{"features", features}, {"ranking", r.ranking}};
}

inline nlohmann::json to_json(const WindowSweep& s) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : s.rows) {
        nlohmann::json j = {{"window", row.window}, {"n_features", row.n_features}};
        if (row.report) {
            j["metrics"] = to_json(*row.report);
        } else {
            j["metrics"] = nullptr;
            j["reason"] = row.reason;
        }
        rows.push_back(j);
    }
    nlohmann::json out = {{"rows", rows}};
    out["best_window"] = s.best_window ? nlohmann::json(*s.best_window) : nlohmann::json(nullptr);
    return out;
}

inline nlohmann::json to_json(const std::vector<AblationRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        out.push_back({{"model_version", r.mask.label},
                       {"dist_shift", r.mask.dist_shift},
                       {"similarity", r.mask.similarity},
                       {"probabilistic", r.mask.probabilistic},
                       {"n_features", r.n_features},
                       {"metrics", to_json(r.report)}});
    }
    return out;
}

}  // namespace driftscope
