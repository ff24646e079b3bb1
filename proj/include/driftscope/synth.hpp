#pragma once

// Seeded synthetic traces for exercising the pipeline without a language model.
//
// Truthful records follow a smooth random walk across layers for both hidden states and
// attention logits. Hallucinated records come from the same process, except that inside a
// random contiguous token span every layer state gets independent N(0, drift^2) noise and
// the next-token distribution is flattened (lower p_max, higher entropy).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "driftscope/errors.hpp"
#include "driftscope/rng.hpp"
#include "driftscope/trace.hpp"

namespace driftscope {

struct SynthOptions {
    bool perturb_hidden = true;
    bool perturb_attention = true;
    bool perturb_probs = true;
    std::size_t min_gen_len = 8;
    std::size_t max_gen_len = 16;
    double layer_step = 0.25;  // std of the layer-to-layer random walk
};

namespace detail {

inline std::vector<float> softmax_f32(const std::vector<double>& logits) {
    const double peak = *std::max_element(logits.begin(), logits.end());
    std::vector<double> e(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) total += e[i] = std::exp(logits[i] - peak);
    std::vector<float> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(e[i] / total);
    return out;
}

inline TraceRecord synth_record(const TraceMeta& meta, std::uint64_t seed, std::size_t index, bool hallucinated,
                                double drift, const SynthOptions& opt) {
    Rng rng(derive_seed(seed, index + 1));
    TraceRecord rec;
    rec.id = "synth-" + std::to_string(index);
    rec.label = hallucinated ? 1 : 0;
    rec.prompt_len = static_cast<std::uint32_t>(4 + rng.below(8));
    const std::size_t span_choices = opt.max_gen_len - opt.min_gen_len + 1;
    rec.gen_len = static_cast<std::uint32_t>(opt.min_gen_len + rng.below(span_choices));

    std::size_t span_begin = rec.gen_len;
    std::size_t span_end = rec.gen_len;
    if (hallucinated) {
        const std::size_t len = std::max<std::size_t>(1, rec.gen_len / 2);
        span_begin = rng.below(rec.gen_len - len + 1);
        span_end = span_begin + len;
    }

    const double uniform = 1.0 / meta.vocab_size;
    const std::size_t n_hidden = meta.hidden_states();
    for (std::size_t j = 0; j < rec.gen_len; ++j) {
        const bool perturbed = j >= span_begin && j < span_end;
        TokenStates tok;

        std::vector<double> z(meta.hidden_dim);
        for (double& v : z) v = rng.normal();
        for (std::size_t l = 0; l < n_hidden; ++l) {
            if (l > 0) {
                for (double& v : z) v += rng.normal(0.0, opt.layer_step);
            }
            std::vector<float> state(z.begin(), z.end());
            if (perturbed && opt.perturb_hidden) {
                for (float& v : state) v += static_cast<float>(drift * rng.normal());
            }
            tok.hidden.push_back(std::move(state));
        }

        const std::size_t ctx = meta.attention_length(rec.prompt_len, j);
        std::vector<double> a(ctx);
        for (double& v : a) v = rng.normal();
        for (std::size_t l = 0; l < meta.n_layers; ++l) {
            if (l > 0) {
                for (double& v : a) v += rng.normal(0.0, opt.layer_step);
            }
            std::vector<double> logits = a;
            if (perturbed && opt.perturb_attention) {
                for (double& v : logits) v += drift * rng.normal();
            }
            tok.attention.push_back(softmax_f32(logits));
        }

        // p_max is 1/|V| plus a margin; the perturbed span shrinks the margin by exp(-drift).
        double margin = (1.0 - uniform) * (0.55 + 0.4 * rng.uniform());
        if (perturbed && opt.perturb_probs) margin *= std::exp(-drift);
        const double p_max = uniform + margin;
        const double p_min = uniform * 0.5 * rng.uniform();
        const double p_chosen = rng.uniform() < 0.85 ? p_max : p_min + (p_max - p_min) * rng.uniform();
        const double confidence = margin / (1.0 - uniform);
        const double h_norm = std::clamp(0.9 * (1.0 - confidence) + 0.05 * rng.uniform(), 0.0, 1.0);
        tok.prob = {static_cast<float>(p_max), static_cast<float>(p_min), static_cast<float>(p_chosen),
                    static_cast<float>(h_norm), static_cast<std::uint32_t>(rng.below(meta.vocab_size))};
        rec.tokens.push_back(std::move(tok));
    }
    return rec;
}

}  // namespace detail

/// `n_truthful` records labeled 0 followed by `n_halluc` records labeled 1.
/// Each record depends only on (seed, index), so the output is a pure function of the arguments.
inline std::vector<TraceRecord> synthesize_traces(std::uint64_t seed, std::size_t n_truthful, std::size_t n_halluc,
                                                  double drift, const TraceMeta& meta, const SynthOptions& opt = {}) {
    if (!(drift >= 0.0) || !std::isfinite(drift)) throw DomainError("drift must be a finite value >= 0");
    validate_meta(meta);
    if (opt.min_gen_len < 1 || opt.max_gen_len < opt.min_gen_len) {
        throw DomainError("synthetic generation length range is empty");
    }
    std::vector<TraceRecord> out;
    out.reserve(n_truthful + n_halluc);
    for (std::size_t i = 0; i < n_truthful + n_halluc; ++i) {
        out.push_back(detail::synth_record(meta, seed, i, i >= n_truthful, drift, opt));
    }
    return out;
}

}  // namespace driftscope
