#pragma once

// driftscope command line. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <chrono>
#include <cstdint>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "driftscope/evaluation.hpp"
#include "driftscope/features.hpp"
#include "driftscope/membership.hpp"
#include "driftscope/synth.hpp"
#include "driftscope/trace_io.hpp"

namespace driftscope::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

struct FeatureFlags {
    std::size_t window = 2;
    double tau = 0.1;
    std::vector<double> percentiles{25.0, 75.0};
    bool no_attention = false;
    bool no_hidden = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--window", window, "layer offset r between compared states")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--tau", tau, "low-probability threshold on the chosen token")
            ->check(CLI::Range(0.0, 1.0))
            ->capture_default_str();
        cmd->add_option("--percentiles", percentiles, "percentiles of the p_max sequence")
            ->delimiter(',')
            ->check(CLI::Range(0.0, 100.0))
            ->capture_default_str();
        cmd->add_flag("--no-attention", no_attention, "skip attention-row features");
        cmd->add_flag("--no-hidden", no_hidden, "skip hidden-state features");
    }

    FeatureConfig config() const {
        FeatureConfig c;
        c.shift.window = window;
        c.shift.include_attention = !no_attention;
        c.shift.include_hidden = !no_hidden;
        c.prob.tau = tau;
        c.prob.percentiles = percentiles;
        return c;
    }

    nlohmann::json echo() const {
        return {{"window", window},
                {"tau", tau},
                {"percentiles", percentiles},
                {"include_attention", !no_attention},
                {"include_hidden", !no_hidden}};
    }
};

struct TrainFlags {
    TrainConfig cfg;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--lr", cfg.lr_init, "initial learning rate")->capture_default_str();
        cmd->add_option("--batch-size", cfg.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
        cmd->add_option("--max-epochs", cfg.max_epochs)->check(CLI::PositiveNumber)->capture_default_str();
        cmd->add_option("--patience", cfg.patience, "epochs without validation-AUC gain before stopping")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--lr-halve-after", cfg.lr_halve_after, "stalled validation-loss epochs before halving lr")
            ->check(CLI::PositiveNumber)
            ->capture_default_str();
        cmd->add_option("--weight-decay", cfg.weight_decay)->check(CLI::NonNegativeNumber)->capture_default_str();
        cmd->add_option("--val-fraction", cfg.val_fraction)->check(CLI::Range(0.0, 0.5))->capture_default_str();
        cmd->add_option("--group-width", cfg.group_width)->check(CLI::PositiveNumber)->capture_default_str();
        cmd->add_option("--fused-width", cfg.fused_width)->check(CLI::PositiveNumber)->capture_default_str();
        cmd->add_option("--dropout", cfg.dropout_rate)->check(CLI::Range(0.0, 0.95))->capture_default_str();
    }
};

struct Common {
    std::uint64_t seed = 42;
    std::string report;
    bool timing = false;

    void add_seed(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "root seed (env DRIFTSCOPE_SEED)")
            ->envname("DRIFTSCOPE_SEED")
            ->capture_default_str();
    }
    void add_report(CLI::App* cmd) {
        cmd->add_option("--report", report, "write a JSON report here");
        cmd->add_flag("--timing", timing, "include wall-clock timing in the report");
    }
};

inline std::string fmt(double v, int precision = 4) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(precision) << v;
    return ss.str();
}

/// Aligned plain-text table.
inline void print_table(std::ostream& out, const std::vector<std::string>& header,
                        const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) {
            out << (c ? "  " : "") << std::setw(static_cast<int>(width[c])) << cells[c];
        }
        out << "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
}

inline std::vector<std::string> metric_cells(const EvalReport& r) {
    return {fmt(r.auc_roc), fmt(r.pr_auc), fmt(r.accuracy), fmt(r.f1), fmt(r.precision), fmt(r.recall)};
}

inline const std::vector<std::string> kMetricHeader = {"auc_roc", "pr_auc", "accuracy", "f1", "precision", "recall"};

inline void emit_report(const Common& common, nlohmann::json report,
                        std::chrono::steady_clock::time_point started) {
    if (common.report.empty()) return;
    report["seed"] = common.seed;
    report["seed_derivation"] = kSeedDerivation;
    if (common.timing) {
        const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started);
        report["timing_seconds"] = elapsed.count();
    }
    write_text_file(common.report, report.dump(2) + "\n");
}

inline PipelineConfig pipeline(const Common& common, const FeatureFlags& features, const TrainFlags& training,
                               double train_frac) {
    PipelineConfig p;
    p.features = features.config();
    p.train = training.cfg;
    p.train_frac = train_frac;
    p.seed = common.seed;
    return p;
}

/// The held-out side of the pipeline split, or every row when `all` is set.
inline LabeledFeatureSet evaluation_rows(const LabeledFeatureSet& set, bool all, const PipelineConfig& p) {
    if (all) return set;
    return split(set, p.train_frac, p.split_seed()).second;
}

inline GroupMask parse_mask(const std::string& item) {
    for (const auto& m : standard_ablation_masks()) {
        if (m.label == item) return m;
    }
    GroupMask mask{item, false, false, false};
    std::stringstream ss(item);
    std::string part;
    while (std::getline(ss, part, '+')) {
        if (part == "dist") {
            mask.dist_shift = true;
        } else if (part == "sim") {
            mask.similarity = true;
        } else if (part == "prob") {
            mask.probabilistic = true;
        } else {
            throw CLI::ValidationError("--masks", "unknown group '" + part + "' (use dist, sim, prob or I..IV, full)");
        }
    }
    return mask;
}

}  // namespace detail

/// Runs the CLI on `args` (args[0] is the program name).
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using namespace detail;
    const auto started = std::chrono::steady_clock::now();

    CLI::App app{"driftscope: hallucination scoring from layer-wise activation traces"};
    app.require_subcommand(1);
    Common common;
    std::function<void()> action;

    // synth
    std::string out_path;
    std::size_t n_truthful = 200;
    std::size_t n_halluc = 200;
    double drift = 1.0;
    TraceMeta meta{"synthetic", 8, 32, 1000, Precision::f32, "synthetic", true, true};
    std::string precision = "f32";
    std::string signal = "all";
    auto* synth = app.add_subcommand("synth", "write a seeded synthetic trace file");
    synth->add_option("--out", out_path, "trace file to write")->required();
    synth->add_option("--truthful", n_truthful)->capture_default_str();
    synth->add_option("--hallucinated", n_halluc)->capture_default_str();
    synth->add_option("--drift", drift, "perturbation magnitude in hallucinated spans")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    synth->add_option("--layers", meta.n_layers)->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--hidden-dim", meta.hidden_dim)->check(CLI::PositiveNumber)->capture_default_str();
    synth->add_option("--vocab", meta.vocab_size)->check(CLI::Range(2u, 1u << 30))->capture_default_str();
    synth->add_option("--precision", precision)->check(CLI::IsMember({"f32", "f16"}))->capture_default_str();
    synth->add_option("--tag", meta.dataset_tag, "dataset tag")->capture_default_str();
    synth->add_option("--signal", signal, "where hallucinated records differ")
        ->check(CLI::IsMember({"all", "shift", "prob"}))
        ->capture_default_str();
    common.add_seed(synth);
    synth->callback([&] {
        action = [&] {
            meta.precision = precision == "f16" ? Precision::f16 : Precision::f32;
            SynthOptions opt;
            opt.perturb_probs = signal != "shift";
            opt.perturb_hidden = opt.perturb_attention = signal != "prob";
            const auto records = synthesize_traces(common.seed, n_truthful, n_halluc, drift, meta, opt);
            write_trace(meta, records, out_path);
            out << "wrote " << records.size() << " records to " << out_path << "\n";
        };
    });

    // extract
    std::string trace_path;
    std::string features_path;
    FeatureFlags features;
    auto* extract = app.add_subcommand("extract", "compute the feature file of a trace");
    extract->add_option("--trace", trace_path)->required();
    extract->add_option("--out", out_path, "features CSV to write")->required();
    features.add_to(extract);
    extract->callback([&] {
        action = [&] {
            const Trace trace = read_trace(trace_path);
            const auto set = extract_dataset(trace.meta, trace.records, features.config());
            write_features(set, out_path);
            out << "wrote " << set.size() << " rows x " << set.layout.describe() << " to " << out_path << "\n";
        };
    });

    // train
    std::string model_path;
    TrainFlags training;
    double train_frac = 0.75;
    bool use_all = false;
    auto* train_cmd = app.add_subcommand("train", "fit the membership network");
    train_cmd->add_option("--features", features_path)->required();
    train_cmd->add_option("--model", model_path, "model file to write")->required();
    train_cmd->add_option("--train-frac", train_frac, "train side of the stratified split")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    train_cmd->add_flag("--all", use_all, "train on every row instead of the train split");
    training.add_to(train_cmd);
    common.add_seed(train_cmd);
    common.add_report(train_cmd);
    train_cmd->callback([&] {
        action = [&] {
            const auto set = read_features(features_path);
            const PipelineConfig p = pipeline(common, features, training, train_frac);
            const auto fit_rows = use_all ? set : split(set, p.train_frac, p.split_seed()).first;
            const TrainResult result = train(fit_rows, p.train_config());
            save_model(result.model, model_path);
            out << "trained on " << fit_rows.size() << " rows; best epoch " << result.history.best_epoch
                << " (val auc " << fmt(result.history.best_val_auc) << ") of " << result.history.epochs.size()
                << "\n";
            emit_report(common,
                        {{"command", "train"},
                         {"config",
                          {{"features", features_path},
                           {"model", model_path},
                           {"train_frac", train_frac},
                           {"all", use_all},
                           {"train", train_config_to_json(p.train_config())}}},
                         {"n_train", fit_rows.size()},
                         {"history", to_json(result.history)}},
                        started);
        };
    });

    // score
    auto* score = app.add_subcommand("score", "score every row of a feature file");
    score->add_option("--model", model_path)->required();
    score->add_option("--features", features_path)->required();
    score->add_option("--out", out_path, "scores CSV to write")->required();
    score->callback([&] {
        action = [&] {
            const auto model = load_model(model_path);
            const auto set = read_features(features_path);
            const auto scores = score_batch(model, set);
            std::string csv = "row,score,label,source_tag\n";
            for (std::size_t i = 0; i < scores.size(); ++i) {
                csv += std::to_string(i) + "," + format_double(scores[i]) + "," + std::to_string(set.labels[i]) + "," +
                       set.source_tags[i] + "\n";
            }
            write_text_file(out_path, csv);
            out << "scored " << scores.size() << " rows\n";
        };
    });

    // eval
    double threshold = 0.5;
    auto* eval = app.add_subcommand("eval", "evaluate a model on the held-out split (or all rows)");
    eval->add_option("--model", model_path)->required();
    eval->add_option("--features", features_path)->required();
    eval->add_option("--train-frac", train_frac)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    eval->add_flag("--all", use_all, "evaluate every row instead of the held-out split");
    eval->add_option("--threshold", threshold)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    common.add_seed(eval);
    common.add_report(eval);
    eval->callback([&] {
        action = [&] {
            const auto model = load_model(model_path);
            const auto set = read_features(features_path);
            require_layout(model, set.layout);
            const PipelineConfig p = pipeline(common, features, training, train_frac);
            const auto rows = evaluation_rows(set, use_all, p);
            const EvalReport r = evaluate_model(model, rows, threshold);
            print_table(out, kMetricHeader, {metric_cells(r)});
            emit_report(common,
                        {{"command", "eval"},
                         {"config",
                          {{"model", model_path},
                           {"features", features_path},
                           {"train_frac", train_frac},
                           {"all", use_all},
                           {"threshold", threshold}}},
                         {"metrics", to_json(r)}},
                        started);
        };
    });

    // ablate-window
    std::vector<std::size_t> windows{1, 2, 4, 6, 8};
    FeatureFlags sweep_features;
    auto* ablate_window = app.add_subcommand("ablate-window", "extract, train and evaluate for each window size");
    ablate_window->add_option("--trace", trace_path)->required();
    ablate_window->add_option("--windows", windows)->delimiter(',')->check(CLI::PositiveNumber)->capture_default_str();
    ablate_window->add_option("--train-frac", train_frac)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    ablate_window->add_option("--tau", sweep_features.tau)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    ablate_window->add_option("--percentiles", sweep_features.percentiles)->delimiter(',')->capture_default_str();
    training.add_to(ablate_window);
    common.add_seed(ablate_window);
    common.add_report(ablate_window);
    ablate_window->callback([&] {
        action = [&] {
            const Trace trace = read_trace(trace_path);
            const PipelineConfig p = pipeline(common, sweep_features, training, train_frac);
            const WindowSweep sweep = window_sweep(trace.meta, trace.records, windows, p);
            std::vector<std::vector<std::string>> rows;
            for (const auto& row : sweep.rows) {
                rows.push_back({std::to_string(row.window), std::to_string(row.n_features),
                                row.report ? fmt(row.report->auc_roc) : "null", row.report ? "" : row.reason});
            }
            print_table(out, {"window", "features", "auc_roc", "note"}, rows);
            if (sweep.best_window) out << "best window: " << *sweep.best_window << "\n";
            nlohmann::json cfg = sweep_features.echo();
            cfg.erase("window");
            cfg["trace"] = trace_path;
            cfg["windows"] = windows;
            cfg["train_frac"] = train_frac;
            cfg["train"] = train_config_to_json(p.train_config());
            emit_report(common, {{"command", "ablate-window"}, {"config", cfg}, {"sweep", to_json(sweep)}}, started);
        };
    });

    // ablate-groups
    std::vector<std::string> mask_names{"I", "II", "III", "IV", "full"};
    auto* ablate_groups = app.add_subcommand("ablate-groups", "retrain with feature groups removed");
    ablate_groups->add_option("--features", features_path)->required();
    ablate_groups->add_option("--masks", mask_names, "I, II, III, IV, full or combinations like dist+prob")
        ->delimiter(',')
        ->capture_default_str();
    ablate_groups->add_option("--train-frac", train_frac)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    training.add_to(ablate_groups);
    common.add_seed(ablate_groups);
    common.add_report(ablate_groups);
    ablate_groups->callback([&] {
        action = [&] {
            std::vector<GroupMask> masks;
            for (const auto& name : mask_names) masks.push_back(parse_mask(name));
            const auto set = read_features(features_path);
            const PipelineConfig p = pipeline(common, features, training, train_frac);
            const auto [tr, te] = split(set, p.train_frac, p.split_seed());
            const auto rows = group_ablation(tr, te, masks, p.train_config());
            std::vector<std::vector<std::string>> table;
            for (const auto& r : rows) {
                std::vector<std::string> cells{r.mask.label, r.mask.dist_shift ? "x" : "-",
                                               r.mask.similarity ? "x" : "-", r.mask.probabilistic ? "x" : "-"};
                const auto m = metric_cells(r.report);
                cells.insert(cells.end(), m.begin(), m.end());
                table.push_back(cells);
            }
            std::vector<std::string> header{"version", "dist", "sim", "prob"};
            header.insert(header.end(), kMetricHeader.begin(), kMetricHeader.end());
            print_table(out, header, table);
            emit_report(common,
                        {{"command", "ablate-groups"},
                         {"config",
                          {{"features", features_path},
                           {"masks", mask_names},
                           {"train_frac", train_frac},
                           {"train", train_config_to_json(p.train_config())}}},
                         {"rows", to_json(rows)}},
                        started);
        };
    });

    // importance
    double sigma = 1.0;
    std::size_t trials = 10;
    auto* importance = app.add_subcommand("importance", "Gaussian-perturbation feature importance");
    importance->add_option("--model", model_path)->required();
    importance->add_option("--features", features_path)->required();
    importance->add_option("--sigma", sigma, "noise std in standardized units")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    importance->add_option("--trials", trials)->check(CLI::PositiveNumber)->capture_default_str();
    importance->add_option("--train-frac", train_frac)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    importance->add_flag("--all", use_all, "use every row instead of the held-out split");
    common.add_seed(importance);
    common.add_report(importance);
    importance->callback([&] {
        action = [&] {
            const auto model = load_model(model_path);
            const auto set = read_features(features_path);
            require_layout(model, set.layout);
            const PipelineConfig p = pipeline(common, features, training, train_frac);
            const auto rows = evaluation_rows(set, use_all, p);
            const auto rep =
                feature_importance(model, rows, sigma, trials, derive_seed(common.seed, seed_stream::importance));
            std::vector<std::vector<std::string>> table;
            for (const auto& name : rep.ranking) {
                const auto k = static_cast<std::size_t>(
                    std::find(rep.names.begin(), rep.names.end(), name) - rep.names.begin());
                table.push_back({name, fmt(rep.deviations[k], 6)});
            }
            print_table(out, {"feature", "deviation"}, table);
            emit_report(common,
                        {{"command", "importance"},
                         {"config",
                          {{"model", model_path},
                           {"features", features_path},
                           {"sigma", sigma},
                           {"trials", trials},
                           {"train_frac", train_frac},
                           {"all", use_all}}},
                         {"importance", to_json(rep)}},
                        started);
        };
    });

    // transfer
    std::string test_path;
    auto* transfer = app.add_subcommand("transfer", "train on one feature file, evaluate on another");
    transfer->add_option("--train", features_path)->required();
    transfer->add_option("--test", test_path)->required();
    transfer->add_option("--threshold", threshold)->check(CLI::Range(0.0, 1.0))->capture_default_str();
    training.add_to(transfer);
    common.add_seed(transfer);
    common.add_report(transfer);
    transfer->callback([&] {
        action = [&] {
            const auto tr = read_features(features_path);
            const auto te = read_features(test_path);
            const PipelineConfig p = pipeline(common, features, training, train_frac);
            const EvalReport r = transfer_eval(tr, te, p.train_config(), threshold);
            print_table(out, kMetricHeader, {metric_cells(r)});
            emit_report(common,
                        {{"command", "transfer"},
                         {"config",
                          {{"train", features_path},
                           {"test", test_path},
                           {"threshold", threshold},
                           {"train_config", train_config_to_json(p.train_config())}}},
                         {"metrics", to_json(r)}},
                        started);
        };
    });

    std::vector<std::string> argv(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(argv.begin(), argv.end());
    try {
        app.parse(argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        action();
        return kExitOk;
    } catch (const ValidationError& e) {
        err << "error: invalid trace: " << e.what() << "\n";
        for (const auto& entry : e.entries()) {
            err << "  record " << entry.record_index << " (" << entry.record_id << "): " << describe(entry.violation)
                << "\n";
        }
        return kExitData;
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const TrainingError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
}

}  // namespace driftscope::cli
