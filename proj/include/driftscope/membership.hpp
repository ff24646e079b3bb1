#pragma once

// Membership network: maps a feature vector to P(hallucinated).
//
//   per segment:  affine -> layer norm -> ReLU -> dropout      (segment width -> group_width)
//   concat groups -> affine -> ReLU                            (k * group_width -> fused_width)
//   affine -> logistic                                         (fused_width -> 1)
//
// Inputs to forward / loss_and_gradient are already standardized; score_batch applies the
// model's standardizer to raw features.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "driftscope/errors.hpp"
#include "driftscope/features.hpp"
#include "driftscope/metrics.hpp"
#include "driftscope/rng.hpp"
#include "driftscope/split.hpp"

namespace driftscope {

inline constexpr double kStdFloor = 1e-8;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kProbClamp = 1e-12;
inline constexpr int kModelVersion = 1;

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stddev;

    /// Per-column mean and population standard deviation (floored at 1e-8).
    static Standardizer fit(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) throw ShapeError("cannot fit a standardizer on an empty set");
        const std::size_t d = rows.front().size();
        Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
        const double n = static_cast<double>(rows.size());
        for (const auto& r : rows) {
            if (r.size() != d) throw ShapeError("ragged feature rows");
            for (std::size_t k = 0; k < d; ++k) s.mean[k] += r[k];
        }
        for (double& m : s.mean) m /= n;
        for (const auto& r : rows) {
            for (std::size_t k = 0; k < d; ++k) s.stddev[k] += (r[k] - s.mean[k]) * (r[k] - s.mean[k]);
        }
        for (double& v : s.stddev) v = std::max(std::sqrt(v / n), kStdFloor);
        return s;
    }

    std::vector<double> apply(std::span<const double> x) const {
        if (x.size() != mean.size()) {
            throw ShapeError("standardizer expects " + std::to_string(mean.size()) + " features, got " +
                             std::to_string(x.size()));
        }
        std::vector<double> out(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) out[k] = (x[k] - mean[k]) / stddev[k];
        return out;
    }

    bool operator==(const Standardizer&) const = default;
};

inline Standardizer standardize_fit(const LabeledFeatureSet& train) {
    if (train.size() == 0) throw ShapeError("cannot fit a standardizer on an empty set");
    return Standardizer::fit(train.features);
}

struct Dense {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weight;  // out x in, row-major
    std::vector<double> bias;

    bool operator==(const Dense&) const = default;
};

struct GroupProjection {
    Segment segment = Segment::dist_shift;
    std::size_t offset = 0;
    std::size_t size = 0;
    Dense affine;
    std::vector<double> ln_gain;
    std::vector<double> ln_bias;

    bool operator==(const GroupProjection&) const = default;
};

struct MembershipParams {
    std::vector<GroupProjection> groups;
    Dense fusion;
    Dense head;

    bool operator==(const MembershipParams&) const = default;
};

/// Every trainable tensor in a fixed order; gradient and optimizer state share it.
template <class Params>
    requires std::same_as<std::remove_const_t<Params>, MembershipParams>
auto tensors(Params& p) {
    using Tensor = std::conditional_t<std::is_const_v<Params>, const std::vector<double>, std::vector<double>>;
    std::vector<Tensor*> out;
    for (auto& g : p.groups) {
        out.insert(out.end(), {&g.affine.weight, &g.affine.bias, &g.ln_gain, &g.ln_bias});
    }
    out.insert(out.end(), {&p.fusion.weight, &p.fusion.bias, &p.head.weight, &p.head.bias});
    return out;
}

inline MembershipParams zeros_like(const MembershipParams& p) {
    MembershipParams z = p;
    for (auto* t : tensors(z)) std::fill(t->begin(), t->end(), 0.0);
    return z;
}

struct TrainConfig {
    double lr_init = 1e-4;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 200;
    std::size_t patience = 10;
    std::size_t lr_halve_after = 5;
    double weight_decay = 0.01;
    double val_fraction = 0.1;
    std::uint64_t seed = 42;
    std::size_t group_width = 32;
    std::size_t fused_width = 64;
    double dropout_rate = 0.2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    void validate() const {
        if (!(lr_init > 0.0)) throw DomainError("lr_init must be positive");
        if (batch_size == 0 || max_epochs == 0 || patience == 0 || lr_halve_after == 0) {
            throw DomainError("batch_size, max_epochs, patience and lr_halve_after must be positive");
        }
        if (!(weight_decay >= 0.0)) throw DomainError("weight_decay must be non-negative");
        if (!(val_fraction > 0.0 && val_fraction < 0.5)) throw DomainError("val_fraction must lie in (0, 0.5)");
        if (group_width == 0 || fused_width == 0) throw DomainError("layer widths must be positive");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DomainError("dropout_rate must lie in [0, 1)");
    }

    bool operator==(const TrainConfig&) const = default;
};

struct MembershipModel {
    FeatureLayout layout;
    Standardizer standardizer;
    MembershipParams params;
    std::size_t group_width = 32;
    std::size_t fused_width = 64;
    double dropout_rate = 0.2;
    std::uint64_t seed = 0;
    TrainConfig train_config;

    bool operator==(const MembershipModel&) const = default;
};

/// Fresh model for `layout`: one projection per non-empty segment, uniform +-1/sqrt(fan_in)
/// weights and biases drawn from `seed`, unit layer-norm gain.
inline MembershipModel init_model(const FeatureLayout& layout, Standardizer standardizer, std::size_t group_width,
                                  std::size_t fused_width, double dropout_rate, std::uint64_t seed) {
    MembershipModel m;
    m.layout = layout;
    m.standardizer = std::move(standardizer);
    m.group_width = group_width;
    m.fused_width = fused_width;
    m.dropout_rate = dropout_rate;
    m.seed = seed;

    Rng rng(seed);
    auto make_dense = [&](std::size_t in, std::size_t out) {
        Dense d{in, out, std::vector<double>(in * out), std::vector<double>(out)};
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& w : d.weight) w = rng.uniform(-bound, bound);
        for (double& b : d.bias) b = rng.uniform(-bound, bound);
        return d;
    };
    for (Segment s : kSegments) {
        const std::size_t size = layout.segment_size(s);
        if (size == 0) continue;
        GroupProjection g;
        g.segment = s;
        g.offset = layout.segment_offset(s);
        g.size = size;
        g.affine = make_dense(size, group_width);
        g.ln_gain.assign(group_width, 1.0);
        g.ln_bias.assign(group_width, 0.0);
        m.params.groups.push_back(std::move(g));
    }
    if (m.params.groups.empty()) throw ShapeError("feature layout has no features");
    m.params.fusion = make_dense(m.params.groups.size() * group_width, fused_width);
    m.params.head = make_dense(fused_width, 1);
    return m;
}

/// Per sample, per group: multiplicative dropout factors (0 or 1/(1-p)).
using DropoutMask = std::vector<std::vector<double>>;

inline DropoutMask sample_dropout_mask(const MembershipModel& model, Rng& rng) {
    DropoutMask mask(model.params.groups.size(), std::vector<double>(model.group_width, 1.0));
    const double p = model.dropout_rate;
    if (p <= 0.0) return mask;
    for (auto& g : mask) {
        for (double& f : g) f = rng.uniform() < p ? 0.0 : 1.0 / (1.0 - p);
    }
    return mask;
}

namespace detail {

struct GroupCache {
    std::vector<double> normalized;
    std::vector<double> pre_relu;
    double inv_std = 0.0;
};

struct ForwardCache {
    std::vector<GroupCache> groups;
    std::vector<double> concat;
    std::vector<double> fused_pre;
    std::vector<double> fused;
    double logit = 0.0;
    double score = 0.0;
};

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline void affine(const Dense& d, std::span<const double> x, std::vector<double>& y) {
    y.assign(d.bias.begin(), d.bias.end());
    for (std::size_t o = 0; o < d.out; ++o) {
        const double* row = d.weight.data() + o * d.in;
        double acc = 0.0;
        for (std::size_t i = 0; i < d.in; ++i) acc += row[i] * x[i];
        y[o] += acc;
    }
}

inline ForwardCache forward_cached(const MembershipModel& model, std::span<const double> x,
                                   const DropoutMask* mask) {
    const MembershipParams& p = model.params;
    if (x.size() != model.layout.size()) {
        throw ShapeError("model expects " + std::to_string(model.layout.size()) + " features, got " +
                         std::to_string(x.size()));
    }
    ForwardCache c;
    c.groups.resize(p.groups.size());
    c.concat.reserve(p.groups.size() * model.group_width);
    std::vector<double> h;
    for (std::size_t g = 0; g < p.groups.size(); ++g) {
        const GroupProjection& gp = p.groups[g];
        GroupCache& gc = c.groups[g];
        affine(gp.affine, x.subspan(gp.offset, gp.size), h);
        const double width = static_cast<double>(h.size());
        const double mu = std::accumulate(h.begin(), h.end(), 0.0) / width;
        double var = 0.0;
        for (double v : h) var += (v - mu) * (v - mu);
        var /= width;
        gc.inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        gc.normalized.resize(h.size());
        gc.pre_relu.resize(h.size());
        for (std::size_t k = 0; k < h.size(); ++k) {
            gc.normalized[k] = (h[k] - mu) * gc.inv_std;
            gc.pre_relu[k] = gp.ln_gain[k] * gc.normalized[k] + gp.ln_bias[k];
            double a = std::max(gc.pre_relu[k], 0.0);
            if (mask) a *= (*mask)[g][k];
            c.concat.push_back(a);
        }
    }
    affine(p.fusion, c.concat, c.fused_pre);
    c.fused.resize(c.fused_pre.size());
    for (std::size_t k = 0; k < c.fused.size(); ++k) c.fused[k] = std::max(c.fused_pre[k], 0.0);
    std::vector<double> logit;
    affine(p.head, c.fused, logit);
    c.logit = logit[0];
    c.score = sigmoid(c.logit);
    return c;
}

}  // namespace detail

/// Score of one standardized feature vector. In train mode a dropout mask is drawn from
/// `dropout_rng` (or from the model seed when none is given).
inline double forward(const MembershipModel& model, std::span<const double> x, bool train_mode = false,
                      Rng* dropout_rng = nullptr) {
    // Clamped so the score stays strictly inside (0, 1) even when the logistic saturates.
    auto bounded = [](double s) { return std::clamp(s, kProbClamp, 1.0 - kProbClamp); };
    if (!train_mode) return bounded(detail::forward_cached(model, x, nullptr).score);
    Rng fallback(model.seed);
    Rng& rng = dropout_rng ? *dropout_rng : fallback;
    const DropoutMask mask = sample_dropout_mask(model, rng);
    return bounded(detail::forward_cached(model, x, &mask).score);
}

inline double binary_cross_entropy(double score, int label) {
    const double p = std::clamp(score, kProbClamp, 1.0 - kProbClamp);
    return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

struct LossAndGradient {
    double loss = 0.0;
    MembershipParams gradient;
};

/// Mean binary cross-entropy over a standardized batch and its exact gradient.
/// `masks` (one per sample) applies dropout; nullptr runs the deterministic network.
inline LossAndGradient loss_and_gradient(const MembershipModel& model,
                                         std::span<const std::vector<double>> batch, std::span<const int> labels,
                                         const std::vector<DropoutMask>* masks = nullptr) {
    if (batch.empty()) throw ShapeError("loss_and_gradient of an empty batch");
    if (batch.size() != labels.size()) throw ShapeError("batch and labels differ in length");
    if (masks && masks->size() != batch.size()) throw ShapeError("one dropout mask per sample required");

    const MembershipParams& p = model.params;
    LossAndGradient out{0.0, zeros_like(p)};
    MembershipParams& grad = out.gradient;
    const double scale = 1.0 / static_cast<double>(batch.size());

    std::vector<double> d_fused_pre(p.fusion.out);
    std::vector<double> d_concat(p.fusion.in);
    std::vector<double> d_pre(model.group_width);
    std::vector<double> d_norm(model.group_width);
    std::vector<double> d_h(model.group_width);

    for (std::size_t s = 0; s < batch.size(); ++s) {
        const DropoutMask* mask = masks ? &(*masks)[s] : nullptr;
        const auto c = detail::forward_cached(model, batch[s], mask);
        out.loss += binary_cross_entropy(c.score, labels[s]) * scale;

        const double d_logit = (c.score - static_cast<double>(labels[s])) * scale;
        for (std::size_t k = 0; k < p.head.in; ++k) grad.head.weight[k] += d_logit * c.fused[k];
        grad.head.bias[0] += d_logit;

        for (std::size_t k = 0; k < p.fusion.out; ++k) {
            d_fused_pre[k] = c.fused_pre[k] > 0.0 ? d_logit * p.head.weight[k] : 0.0;
        }
        std::fill(d_concat.begin(), d_concat.end(), 0.0);
        for (std::size_t o = 0; o < p.fusion.out; ++o) {
            const double d = d_fused_pre[o];
            if (d == 0.0) continue;
            const double* w = p.fusion.weight.data() + o * p.fusion.in;
            double* gw = grad.fusion.weight.data() + o * p.fusion.in;
            for (std::size_t i = 0; i < p.fusion.in; ++i) {
                gw[i] += d * c.concat[i];
                d_concat[i] += d * w[i];
            }
            grad.fusion.bias[o] += d;
        }

        for (std::size_t g = 0; g < p.groups.size(); ++g) {
            const GroupProjection& gp = p.groups[g];
            GroupProjection& gg = grad.groups[g];
            const detail::GroupCache& gc = c.groups[g];
            const std::size_t width = model.group_width;
            double mean_dn = 0.0;
            double mean_dn_n = 0.0;
            for (std::size_t k = 0; k < width; ++k) {
                double d = d_concat[g * width + k];
                if (mask) d *= (*mask)[g][k];
                d_pre[k] = gc.pre_relu[k] > 0.0 ? d : 0.0;
                gg.ln_gain[k] += d_pre[k] * gc.normalized[k];
                gg.ln_bias[k] += d_pre[k];
                d_norm[k] = d_pre[k] * gp.ln_gain[k];
                mean_dn += d_norm[k];
                mean_dn_n += d_norm[k] * gc.normalized[k];
            }
            mean_dn /= static_cast<double>(width);
            mean_dn_n /= static_cast<double>(width);
            const auto x = std::span<const double>(batch[s]).subspan(gp.offset, gp.size);
            for (std::size_t k = 0; k < width; ++k) {
                d_h[k] = gc.inv_std * (d_norm[k] - mean_dn - gc.normalized[k] * mean_dn_n);
                double* gw = gg.affine.weight.data() + k * gp.size;
                for (std::size_t i = 0; i < gp.size; ++i) gw[i] += d_h[k] * x[i];
                gg.affine.bias[k] += d_h[k];
            }
        }
    }
    return out;
}

struct AdamWState {
    MembershipParams first_moment;
    MembershipParams second_moment;
    std::uint64_t step = 0;

    static AdamWState zeros_like(const MembershipParams& p) {
        return {driftscope::zeros_like(p), driftscope::zeros_like(p), 0};
    }
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

/// Adam with bias correction and decoupled weight decay: theta *= (1 - lr * lambda) before
/// the adaptive step.
inline void optimizer_step(MembershipParams& params, AdamWState& state, const MembershipParams& gradient,
                           double lr, const AdamWConfig& cfg) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(cfg.beta1, t);
    const double correction2 = 1.0 - std::pow(cfg.beta2, t);
    const double decay = 1.0 - lr * cfg.weight_decay;

    auto theta = tensors(params);
    auto m = tensors(state.first_moment);
    auto v = tensors(state.second_moment);
    const auto g = tensors(gradient);
    for (std::size_t k = 0; k < theta.size(); ++k) {
        for (std::size_t i = 0; i < theta[k]->size(); ++i) {
            const double gi = (*g[k])[i];
            double& mi = (*m[k])[i];
            double& vi = (*v[k])[i];
            mi = cfg.beta1 * mi + (1.0 - cfg.beta1) * gi;
            vi = cfg.beta2 * vi + (1.0 - cfg.beta2) * gi * gi;
            const double m_hat = mi / correction1;
            const double v_hat = vi / correction2;
            double& w = (*theta[k])[i];
            w *= decay;
            w -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

/// Scores of raw (unstandardized) feature rows, dropout off.
inline std::vector<double> score_rows(const MembershipModel& model, const std::vector<std::vector<double>>& rows) {
    std::vector<double> scores;
    scores.reserve(rows.size());
    for (const auto& r : rows) scores.push_back(forward(model, model.standardizer.apply(r)));
    return scores;
}

inline void require_layout(const MembershipModel& model, const FeatureLayout& layout) {
    if (model.layout != layout) {
        throw ShapeError("feature layout mismatch: model has " + model.layout.describe() + ", input has " +
                         layout.describe());
    }
}

inline std::vector<double> score_batch(const MembershipModel& model, const LabeledFeatureSet& set) {
    require_layout(model, set.layout);
    return score_rows(model, set.features);
}

// ---- training ----

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // full train set, dropout off, end of epoch
    double val_loss = 0.0;
    double val_auc = 0.0;
    double lr = 0.0;
};

struct TrainHistory {
    double initial_train_loss = 0.0;
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_auc = 0.0;
    bool early_stopped = false;
};

struct TrainResult {
    MembershipModel model;
    TrainHistory history;
};

namespace detail {

inline std::vector<std::vector<double>> standardize_rows(const Standardizer& s,
                                                         const std::vector<std::vector<double>>& rows) {
    std::vector<std::vector<double>> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(s.apply(r));
    return out;
}

inline double mean_loss(const MembershipModel& model, const std::vector<std::vector<double>>& rows,
                        const std::vector<int>& labels, std::vector<double>* scores = nullptr) {
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double s = forward(model, rows[i]);
        if (scores) scores->push_back(s);
        total += binary_cross_entropy(s, labels[i]);
    }
    return total / static_cast<double>(rows.size());
}

inline void quantize_to_f32(MembershipParams& p) {
    for (auto* t : tensors(p)) {
        for (double& w : *t) w = static_cast<double>(static_cast<float>(w));
    }
}

}  // namespace detail

/// Trains on `train_set`, monitoring `val_set` each epoch. Early stopping on validation AUC,
/// learning rate halved when validation loss stalls. Returns the best-validation-AUC weights.
inline TrainResult train(const LabeledFeatureSet& train_set, const LabeledFeatureSet& val_set,
                         const TrainConfig& cfg) {
    cfg.validate();
    require_labeled(train_set, true, "training set");
    require_labeled(val_set, true, "validation set");
    if (train_set.layout != val_set.layout) throw ShapeError("train and validation layouts differ");

    Standardizer standardizer = standardize_fit(train_set);
    const auto x_train = detail::standardize_rows(standardizer, train_set.features);
    const auto x_val = detail::standardize_rows(standardizer, val_set.features);

    TrainResult result;
    MembershipModel model = init_model(train_set.layout, std::move(standardizer), cfg.group_width, cfg.fused_width,
                                       cfg.dropout_rate, cfg.seed);
    model.train_config = cfg;
    AdamWState opt = AdamWState::zeros_like(model.params);
    const AdamWConfig adam{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};

    TrainHistory& hist = result.history;
    hist.initial_train_loss = detail::mean_loss(model, x_train, train_set.labels);

    Rng shuffle_rng(derive_seed(cfg.seed, 101));
    std::vector<std::size_t> order(x_train.size());
    std::iota(order.begin(), order.end(), 0);

    double lr = cfg.lr_init;
    double best_auc = -1.0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    double best_kept_loss = std::numeric_limits<double>::infinity();
    std::size_t since_auc_gain = 0;
    std::size_t since_loss_gain = 0;
    MembershipParams best_params = model.params;
    std::uint64_t step = 0;

    std::vector<std::vector<double>> batch;
    std::vector<int> batch_labels;
    std::vector<DropoutMask> masks;
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            batch_labels.clear();
            masks.clear();
            Rng dropout_rng(derive_seed(cfg.seed, 1000 + step));
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(x_train[order[i]]);
                batch_labels.push_back(train_set.labels[order[i]]);
                masks.push_back(sample_dropout_mask(model, dropout_rng));
            }
            const auto lg = loss_and_gradient(model, batch, batch_labels, &masks);
            if (!std::isfinite(lg.loss)) throw TrainingError("training loss became non-finite");
            optimizer_step(model.params, opt, lg.gradient, lr, adam);
            ++step;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = detail::mean_loss(model, x_train, train_set.labels);
        std::vector<double> val_scores;
        rec.val_loss = detail::mean_loss(model, x_val, val_set.labels, &val_scores);
        rec.val_auc = roc_auc(val_scores, val_set.labels);
        hist.epochs.push_back(rec);

        // AUC ties keep the lower validation loss but do not reset patience.
        const bool gained = rec.val_auc > best_auc;
        if (gained || (rec.val_auc == best_auc && rec.val_loss < best_kept_loss)) {
            best_auc = rec.val_auc;
            best_kept_loss = rec.val_loss;
            best_params = model.params;
            hist.best_epoch = epoch;
        }
        if (gained) {
            since_auc_gain = 0;
        } else if (++since_auc_gain >= cfg.patience) {
            hist.early_stopped = true;
            break;
        }
        if (rec.val_loss < best_val_loss) {
            best_val_loss = rec.val_loss;
            since_loss_gain = 0;
        } else if (++since_loss_gain >= cfg.lr_halve_after) {
            lr *= 0.5;
            since_loss_gain = 0;
        }
    }
    hist.best_val_auc = best_auc;

    detail::quantize_to_f32(best_params);
    model.params = std::move(best_params);
    result.model = std::move(model);
    return result;
}

/// Holds out a stratified `val_fraction` of `data` for monitoring, then trains.
inline TrainResult train(const LabeledFeatureSet& data, const TrainConfig& cfg) {
    cfg.validate();
    require_labeled(data, true, "training data");
    const auto [fit_part, val_part] = split(data, 1.0 - cfg.val_fraction, derive_seed(cfg.seed, 100));
    return train(fit_part, val_part, cfg);
}

// ---- model file ----

namespace detail {

inline nlohmann::json dense_to_json(const Dense& d) {
    return {{"in", d.in}, {"out", d.out}, {"weight", d.weight}, {"bias", d.bias}};
}

inline std::vector<double> read_array(const nlohmann::json& j, const std::string& field, std::size_t expected) {
    const auto* node = &j;
    std::size_t pos = 0;
    // Dotted paths walk nested objects; the full path is reported on failure.
    while (true) {
        const auto dot = field.find('.', pos);
        const std::string key = field.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (!node->is_object() || !node->contains(key)) {
            throw FormatError("model file is missing field '" + field + "'");
        }
        node = &(*node)[key];
        if (dot == std::string::npos) break;
        pos = dot + 1;
    }
    if (!node->is_array()) throw FormatError("model field '" + field + "' is not an array");
    std::vector<double> out;
    out.reserve(node->size());
    for (const auto& v : *node) {
        if (!v.is_number()) throw FormatError("model field '" + field + "' holds a non-number");
        out.push_back(v.get<double>());
    }
    if (out.size() != expected) {
        throw FormatError("model field '" + field + "' has " + std::to_string(out.size()) + " entries, expected " +
                          std::to_string(expected));
    }
    return out;
}

template <class T>
T model_field(const nlohmann::json& j, const std::string& field) {
    if (!j.contains(field)) throw FormatError("model file is missing field '" + field + "'");
    try {
        return j.at(field).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError("model field '" + field + "' has the wrong type");
    }
}

}  // namespace detail

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    return {{"lr_init", c.lr_init},           {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},     {"patience", c.patience},
            {"lr_halve_after", c.lr_halve_after}, {"weight_decay", c.weight_decay},
            {"val_fraction", c.val_fraction}, {"seed", c.seed},
            {"group_width", c.group_width},   {"fused_width", c.fused_width},
            {"dropout_rate", c.dropout_rate}, {"beta1", c.beta1},
            {"beta2", c.beta2},               {"adam_eps", c.adam_eps}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr_init = j.value("lr_init", c.lr_init);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.lr_halve_after = j.value("lr_halve_after", c.lr_halve_after);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.seed = j.value("seed", c.seed);
    c.group_width = j.value("group_width", c.group_width);
    c.fused_width = j.value("fused_width", c.fused_width);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    return c;
}

inline nlohmann::json model_to_json(const MembershipModel& m) {
    nlohmann::json segments = nlohmann::json::array();
    for (Segment s : kSegments) segments.push_back({{"name", to_string(s)}, {"size", m.layout.segment_size(s)}});
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : m.params.groups) {
        groups.push_back({{"segment", to_string(g.segment)},
                          {"offset", g.offset},
                          {"size", g.size},
                          {"affine", detail::dense_to_json(g.affine)},
                          {"ln_gain", g.ln_gain},
                          {"ln_bias", g.ln_bias}});
    }
    return {{"format", "driftscope-membership"},
            {"version", kModelVersion},
            {"layout", {{"names", m.layout.names}, {"segments", segments}}},
            {"standardizer", {{"mean", m.standardizer.mean}, {"std", m.standardizer.stddev}}},
            {"group_width", m.group_width},
            {"fused_width", m.fused_width},
            {"dropout_rate", m.dropout_rate},
            {"groups", groups},
            {"fusion", detail::dense_to_json(m.params.fusion)},
            {"head", detail::dense_to_json(m.params.head)},
            {"train_config", train_config_to_json(m.train_config)},
            {"seed", m.seed}};
}

inline MembershipModel model_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("model file is not a JSON object");
    const int version = detail::model_field<int>(j, "version");
    if (version != kModelVersion) {
        throw FormatError("model version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kModelVersion) + ")");
    }
    if (!j.contains("layout") || !j["layout"].contains("names")) {
        throw FormatError("model file is missing field 'layout.names'");
    }
    const FeatureLayout layout =
        FeatureLayout::from_names(detail::model_field<std::vector<std::string>>(j["layout"], "names"));
    const std::size_t n = layout.size();
    const auto group_width = detail::model_field<std::size_t>(j, "group_width");
    const auto fused_width = detail::model_field<std::size_t>(j, "fused_width");

    MembershipModel m = init_model(layout, Standardizer{}, group_width, fused_width,
                                   detail::model_field<double>(j, "dropout_rate"), 0);
    m.seed = detail::model_field<std::uint64_t>(j, "seed");
    m.standardizer.mean = detail::read_array(j, "standardizer.mean", n);
    m.standardizer.stddev = detail::read_array(j, "standardizer.std", n);
    if (j.contains("train_config")) m.train_config = train_config_from_json(j["train_config"]);

    if (!j.contains("groups") || !j["groups"].is_array()) throw FormatError("model file is missing field 'groups'");
    const auto& groups = j["groups"];
    if (groups.size() != m.params.groups.size()) {
        throw FormatError("model field 'groups' has " + std::to_string(groups.size()) + " entries, layout implies " +
                          std::to_string(m.params.groups.size()));
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
        GroupProjection& gp = m.params.groups[g];
        const std::string prefix = "groups[" + std::to_string(g) + "]";
        if (!groups[g].is_object()) throw FormatError("model field '" + prefix + "' is not an object");
        try {
            gp.affine.weight = detail::read_array(groups[g], "affine.weight", gp.size * group_width);
            gp.affine.bias = detail::read_array(groups[g], "affine.bias", group_width);
            gp.ln_gain = detail::read_array(groups[g], "ln_gain", group_width);
            gp.ln_bias = detail::read_array(groups[g], "ln_bias", group_width);
        } catch (const FormatError& e) {
            throw FormatError(std::string(e.what()) + " in " + prefix);
        }
    }
    const std::size_t fused_in = m.params.groups.size() * group_width;
    m.params.fusion.weight = detail::read_array(j, "fusion.weight", fused_in * fused_width);
    m.params.fusion.bias = detail::read_array(j, "fusion.bias", fused_width);
    m.params.head.weight = detail::read_array(j, "head.weight", fused_width);
    m.params.head.bias = detail::read_array(j, "head.bias", 1);
    return m;
}

inline void save_model(const MembershipModel& model, const std::filesystem::path& path) {
    write_text_file(path, model_to_json(model).dump(1) + "\n");
}

inline MembershipModel load_model(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("model file is not valid JSON: " + std::string(e.what()));
    }
    return model_from_json(j);
}

}  // namespace driftscope
