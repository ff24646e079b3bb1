#pragma once

// Activation-trace data model: one record per prompt/generation pair holding, for every
// generated token, the hidden state of each layer, the head-averaged attention row of
// each decoder layer, and scalar summaries of the next-token distribution.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "driftscope/errors.hpp"

namespace driftscope {

enum class Precision { f32, f16 };

inline const char* to_string(Precision p) { return p == Precision::f16 ? "f16" : "f32"; }

struct TraceMeta {
    std::string model_name;
    std::uint32_t n_layers = 1;
    std::uint32_t hidden_dim = 1;
    std::uint32_t vocab_size = 2;
    Precision precision = Precision::f32;
    std::string dataset_tag;
    // Hidden states carry the embedding output in front of the decoder layers.
    bool include_embedding = true;
    // Attention row of token j spans prompt_len + j + 1 positions when set, prompt_len + j otherwise.
    bool attn_includes_current = true;

    std::size_t hidden_states() const { return n_layers + (include_embedding ? 1u : 0u); }

    std::size_t attention_length(std::size_t prompt_len, std::size_t token_index) const {
        return prompt_len + token_index + (attn_includes_current ? 1u : 0u);
    }

    bool operator==(const TraceMeta&) const = default;
};

struct TokenProbStats {
    float p_max = 1.0f;
    float p_min = 0.0f;
    float p_chosen = 1.0f;
    float h_norm = 0.0f;  // entropy / ln|V|
    std::uint32_t token_id = 0;

    bool operator==(const TokenProbStats&) const = default;
};

struct TokenStates {
    std::vector<std::vector<float>> hidden;     // hidden_states() vectors of hidden_dim
    std::vector<std::vector<float>> attention;  // n_layers rows over the context
    TokenProbStats prob;

    bool operator==(const TokenStates&) const = default;
};

struct TraceRecord {
    std::string id;
    std::uint32_t prompt_len = 0;
    std::uint32_t gen_len = 0;
    std::optional<std::string> response_text;
    std::optional<int> label;  // 1 = hallucinated, 0 = truthful
    std::vector<TokenStates> tokens;

    bool operator==(const TraceRecord&) const = default;
};

enum class ViolationKind {
    gen_len_mismatch,
    gen_len_range,
    hidden_count,
    hidden_width,
    attention_count,
    attention_length,
    attention_negative,
    attention_sum,
    non_finite,
    prob_range,
    prob_order,
    uniform_bound,
    entropy_range,
    token_id_range,
    label_value,
};

inline const char* to_string(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::gen_len_mismatch: return "gen_len_mismatch";
        case ViolationKind::gen_len_range: return "gen_len_range";
        case ViolationKind::hidden_count: return "hidden_count";
        case ViolationKind::hidden_width: return "hidden_width";
        case ViolationKind::attention_count: return "attention_count";
        case ViolationKind::attention_length: return "attention_length";
        case ViolationKind::attention_negative: return "attention_negative";
        case ViolationKind::attention_sum: return "attention_sum";
        case ViolationKind::non_finite: return "non_finite";
        case ViolationKind::prob_range: return "prob_range";
        case ViolationKind::prob_order: return "prob_order";
        case ViolationKind::uniform_bound: return "uniform_bound";
        case ViolationKind::entropy_range: return "entropy_range";
        case ViolationKind::token_id_range: return "token_id_range";
        case ViolationKind::label_value: return "label_value";
    }
    return "unknown";
}

struct Violation {
    ViolationKind kind;
    std::optional<std::size_t> token;
    std::optional<std::size_t> layer;
    std::string message;
};

struct ValidationOptions {
    std::size_t max_gen_len = 64;
    double attention_sum_tolerance = 1e-3;
    // Slack on the probability-ordering invariants for values rounded to f32.
    double prob_tolerance = 1e-6;
};

inline std::string describe(const Violation& v) {
    std::string out = to_string(v.kind);
    if (v.token) out += " token " + std::to_string(*v.token);
    if (v.layer) out += " layer " + std::to_string(*v.layer);
    return out + ": " + v.message;
}

/// Reports every broken invariant of `rec` against `meta`; empty when the record is valid.
inline std::vector<Violation> validate_record(const TraceMeta& meta, const TraceRecord& rec,
                                              const ValidationOptions& opts = {}) {
    std::vector<Violation> out;
    auto add = [&](ViolationKind kind, std::optional<std::size_t> token,
                   std::optional<std::size_t> layer, std::string message) {
        out.push_back({kind, token, layer, std::move(message)});
    };

    if (rec.gen_len != rec.tokens.size()) {
        add(ViolationKind::gen_len_mismatch, std::nullopt, std::nullopt,
            "gen_len " + std::to_string(rec.gen_len) + " but " +
                std::to_string(rec.tokens.size()) + " tokens");
    }
    if (rec.gen_len == 0 || rec.gen_len > opts.max_gen_len) {
        add(ViolationKind::gen_len_range, std::nullopt, std::nullopt,
            "gen_len " + std::to_string(rec.gen_len) + " outside [1, " +
                std::to_string(opts.max_gen_len) + "]");
    }
    if (rec.label && *rec.label != 0 && *rec.label != 1) {
        add(ViolationKind::label_value, std::nullopt, std::nullopt,
            "label " + std::to_string(*rec.label) + " is not 0 or 1");
    }

    const double uniform = 1.0 / static_cast<double>(meta.vocab_size);
    const double tol = opts.prob_tolerance;
    for (std::size_t j = 0; j < rec.tokens.size(); ++j) {
        const TokenStates& tok = rec.tokens[j];

        if (tok.hidden.size() != meta.hidden_states()) {
            add(ViolationKind::hidden_count, j, std::nullopt,
                std::to_string(tok.hidden.size()) + " hidden states, expected " +
                    std::to_string(meta.hidden_states()));
        }
        for (std::size_t l = 0; l < tok.hidden.size(); ++l) {
            const auto& h = tok.hidden[l];
            if (h.size() != meta.hidden_dim) {
                add(ViolationKind::hidden_width, j, l,
                    "width " + std::to_string(h.size()) + ", expected " +
                        std::to_string(meta.hidden_dim));
            }
            for (float x : h) {
                if (!std::isfinite(x)) {
                    add(ViolationKind::non_finite, j, l, "non-finite hidden value");
                    break;
                }
            }
        }

        if (tok.attention.size() != meta.n_layers) {
            add(ViolationKind::attention_count, j, std::nullopt,
                std::to_string(tok.attention.size()) + " attention rows, expected " +
                    std::to_string(meta.n_layers));
        }
        const std::size_t expected_len = meta.attention_length(rec.prompt_len, j);
        for (std::size_t l = 0; l < tok.attention.size(); ++l) {
            const auto& row = tok.attention[l];
            if (row.size() != expected_len) {
                add(ViolationKind::attention_length, j, l,
                    "row length " + std::to_string(row.size()) + ", expected " +
                        std::to_string(expected_len));
            }
            double sum = 0.0;
            bool negative = false;
            bool finite = true;
            for (float a : row) {
                if (!std::isfinite(a)) finite = false;
                if (a < 0.0f) negative = true;
                sum += a;
            }
            if (!finite) {
                add(ViolationKind::non_finite, j, l, "non-finite attention weight");
                continue;
            }
            if (negative) add(ViolationKind::attention_negative, j, l, "negative attention weight");
            if (std::abs(sum - 1.0) > opts.attention_sum_tolerance) {
                add(ViolationKind::attention_sum, j, l, "row sums to " + std::to_string(sum));
            }
        }

        const TokenProbStats& p = tok.prob;
        const float values[] = {p.p_max, p.p_min, p.p_chosen};
        bool in_range = true;
        for (float v : values) {
            if (!(v >= 0.0f && v <= 1.0f)) in_range = false;
        }
        if (!in_range) {
            add(ViolationKind::prob_range, j, std::nullopt, "probability outside [0, 1]");
        } else {
            if (p.p_min > p.p_chosen + tol || p.p_chosen > p.p_max + tol) {
                add(ViolationKind::prob_order, j, std::nullopt, "expected p_min <= p_chosen <= p_max");
            }
            if (p.p_min > uniform + tol || p.p_max < uniform - tol) {
                add(ViolationKind::uniform_bound, j, std::nullopt, "expected p_min <= 1/|V| <= p_max");
            }
        }
        if (!(p.h_norm >= 0.0f && p.h_norm <= 1.0f)) {
            add(ViolationKind::entropy_range, j, std::nullopt, "h_norm outside [0, 1]");
        }
        if (p.token_id >= meta.vocab_size) {
            add(ViolationKind::token_id_range, j, std::nullopt,
                "token_id " + std::to_string(p.token_id) + " >= vocab_size");
        }
    }
    return out;
}

inline bool is_structural(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::gen_len_mismatch:
        case ViolationKind::hidden_count:
        case ViolationKind::hidden_width:
        case ViolationKind::attention_count:
        case ViolationKind::attention_length:
            return true;
        default:
            return false;
    }
}

/// Thrown when records fail validation; keeps the full report per record.
class ValidationError : public Error {
public:
    struct Entry {
        std::size_t record_index;
        std::string record_id;
        Violation violation;
    };

    explicit ValidationError(std::vector<Entry> entries)
        : Error(summarize(entries)), entries_(std::move(entries)) {}

    const std::vector<Entry>& entries() const noexcept { return entries_; }

private:
    static std::string summarize(const std::vector<Entry>& entries) {
        std::string msg = std::to_string(entries.size()) + " validation violation(s)";
        if (!entries.empty()) {
            msg += "; first: record " + std::to_string(entries.front().record_index) + " (" +
                   entries.front().record_id + ") " + describe(entries.front().violation);
        }
        return msg;
    }

    std::vector<Entry> entries_;
};

inline void validate_meta(const TraceMeta& meta) {
    if (meta.n_layers < 1) throw DomainError("n_layers must be >= 1");
    if (meta.hidden_dim < 1) throw DomainError("hidden_dim must be >= 1");
    if (meta.vocab_size < 2) throw DomainError("vocab_size must be >= 2");
}

}  // namespace driftscope
