#pragma once

// Binary trace file, little-endian:
//   "HSFT" | u16 version=1 | u16 flags (bit0 f16 payload, bit1 attention includes current position)
//   | u32 len + meta JSON | u32 record count
//   | per record: u32 len + record JSON, then per token:
//       (hidden_states * hidden_dim) payload floats,
//       n_layers attention rows, each u32 length + payload floats,
//       f32 p_max, p_min, p_chosen, h_norm, u32 token_id

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "driftscope/errors.hpp"
#include "driftscope/half.hpp"
#include "driftscope/trace.hpp"

namespace driftscope {

inline constexpr std::array<char, 4> kTraceMagic = {'H', 'S', 'F', 'T'};
inline constexpr std::uint16_t kTraceVersion = 1;
inline constexpr std::uint16_t kFlagF16 = 1u << 0;
inline constexpr std::uint16_t kFlagAttnIncludesCurrent = 1u << 1;

struct Trace {
    TraceMeta meta;
    std::vector<TraceRecord> records;

    bool operator==(const Trace&) const = default;
};

namespace detail {

class ByteWriter {
public:
    void u16(std::uint16_t v) {
        bytes_.push_back(static_cast<char>(v & 0xFF));
        bytes_.push_back(static_cast<char>(v >> 8));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void payload(float v, Precision p) {
        if (p == Precision::f16) {
            u16(float_to_half_bits(v));
        } else {
            f32(v);
        }
    }
    void raw(std::string_view s) { bytes_.append(s.data(), s.size()); }
    void blob(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }

    std::string take() { return std::move(bytes_); }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const char> data) : data_(data) {}

    void set_record(std::size_t index) { record_ = index; }
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            throw CorruptionError(std::string("truncated trace while reading ") + what, pos_, record_);
        }
    }

    std::uint16_t u16(const char* what) {
        need(2, what);
        const auto b0 = static_cast<unsigned char>(data_[pos_]);
        const auto b1 = static_cast<unsigned char>(data_[pos_ + 1]);
        pos_ += 2;
        return static_cast<std::uint16_t>(b0 | (b1 << 8));
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    float payload(Precision p, const char* what) {
        return p == Precision::f16 ? half_bits_to_float(u16(what)) : f32(what);
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const char> data_;
    std::size_t pos_ = 0;
    std::size_t record_ = 0;
};

inline nlohmann::json meta_to_json(const TraceMeta& m) {
    return {{"model_name", m.model_name},
            {"n_layers", m.n_layers},
            {"hidden_dim", m.hidden_dim},
            {"vocab_size", m.vocab_size},
            {"precision", to_string(m.precision)},
            {"dataset_tag", m.dataset_tag},
            {"include_embedding", m.include_embedding},
            {"attn_includes_current", m.attn_includes_current}};
}

template <class T>
T json_field(const nlohmann::json& j, const char* key, const char* context) {
    if (!j.contains(key)) {
        throw FormatError(std::string(context) + " is missing field '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError(std::string(context) + " field '" + key + "' has the wrong type");
    }
}

inline nlohmann::json parse_json(const std::string& text, const char* context) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string(context) + " is not valid JSON: " + e.what());
    }
}

inline TraceMeta meta_from_json(const nlohmann::json& j) {
    TraceMeta m;
    m.model_name = json_field<std::string>(j, "model_name", "trace header");
    m.n_layers = json_field<std::uint32_t>(j, "n_layers", "trace header");
    m.hidden_dim = json_field<std::uint32_t>(j, "hidden_dim", "trace header");
    m.vocab_size = json_field<std::uint32_t>(j, "vocab_size", "trace header");
    const auto precision = json_field<std::string>(j, "precision", "trace header");
    if (precision == "f32") {
        m.precision = Precision::f32;
    } else if (precision == "f16") {
        m.precision = Precision::f16;
    } else {
        throw FormatError("trace header precision '" + precision + "' is not f32 or f16");
    }
    m.dataset_tag = json_field<std::string>(j, "dataset_tag", "trace header");
    m.include_embedding = j.value("include_embedding", true);
    m.attn_includes_current = j.value("attn_includes_current", true);
    return m;
}

inline void check_shapes(const TraceMeta& meta, const std::vector<TraceRecord>& records) {
    std::vector<ValidationError::Entry> structural;
    std::vector<ValidationError::Entry> other;
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (auto& v : validate_record(meta, records[i])) {
            (is_structural(v.kind) ? structural : other).push_back({i, records[i].id, std::move(v)});
        }
    }
    if (!structural.empty()) {
        const auto& first = structural.front();
        throw ShapeError("record " + std::to_string(first.record_index) + " (" + first.record_id +
                         ") inconsistent with trace meta: " + describe(first.violation));
    }
    if (!other.empty()) throw ValidationError(std::move(other));
}

}  // namespace detail

/// Serializes a trace into the binary format. Throws ShapeError / ValidationError on bad records.
inline std::string encode_trace(const TraceMeta& meta, const std::vector<TraceRecord>& records) {
    validate_meta(meta);
    detail::check_shapes(meta, records);

    detail::ByteWriter w;
    w.raw(std::string_view(kTraceMagic.data(), kTraceMagic.size()));
    w.u16(kTraceVersion);
    std::uint16_t flags = 0;
    if (meta.precision == Precision::f16) flags |= kFlagF16;
    if (meta.attn_includes_current) flags |= kFlagAttnIncludesCurrent;
    w.u16(flags);
    w.blob(detail::meta_to_json(meta).dump());
    w.u32(static_cast<std::uint32_t>(records.size()));

    for (const TraceRecord& rec : records) {
        nlohmann::json rj = {{"id", rec.id},
                             {"prompt_len", rec.prompt_len},
                             {"gen_len", rec.gen_len},
                             {"label", rec.label.value_or(-1)},
                             {"response_text", nullptr}};
        if (rec.response_text) rj["response_text"] = *rec.response_text;
        w.blob(rj.dump());
        for (const TokenStates& tok : rec.tokens) {
            for (const auto& h : tok.hidden) {
                for (float x : h) w.payload(x, meta.precision);
            }
            for (const auto& row : tok.attention) {
                w.u32(static_cast<std::uint32_t>(row.size()));
                for (float a : row) w.payload(a, meta.precision);
            }
            w.f32(tok.prob.p_max);
            w.f32(tok.prob.p_min);
            w.f32(tok.prob.p_chosen);
            w.f32(tok.prob.h_norm);
            w.u32(tok.prob.token_id);
        }
    }
    return w.take();
}

/// Parses the binary format. Every record is validated; violations raise ValidationError.
inline Trace decode_trace(std::span<const char> bytes, const ValidationOptions& opts = {}) {
    detail::ByteReader r(bytes);
    const std::string magic = r.bytes(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kTraceMagic.begin())) {
        throw FormatError("bad trace magic '" + magic + "', expected 'HSFT'");
    }
    const std::uint16_t version = r.u16("version");
    if (version != kTraceVersion) {
        throw FormatError("unsupported trace version " + std::to_string(version));
    }
    const std::uint16_t flags = r.u16("flags");
    const std::uint32_t header_len = r.u32("header length");
    Trace trace;
    trace.meta = detail::meta_from_json(detail::parse_json(r.bytes(header_len, "header"), "trace header"));
    const Precision payload = (flags & kFlagF16) ? Precision::f16 : Precision::f32;
    if (payload != trace.meta.precision) {
        throw FormatError("trace flags declare " + std::string(to_string(payload)) +
                          " payload but header says " + to_string(trace.meta.precision));
    }
    trace.meta.attn_includes_current = (flags & kFlagAttnIncludesCurrent) != 0;
    try {
        validate_meta(trace.meta);
    } catch (const DomainError& e) {
        throw FormatError(std::string("invalid trace header: ") + e.what());
    }
    const TraceMeta& meta = trace.meta;
    const std::size_t elem = payload == Precision::f16 ? 2 : 4;

    const std::uint32_t count = r.u32("record count");
    std::vector<ValidationError::Entry> violations;
    for (std::uint32_t i = 0; i < count; ++i) {
        r.set_record(i);
        const std::uint32_t json_len = r.u32("record header length");
        const auto rj = detail::parse_json(r.bytes(json_len, "record header"), "record header");
        TraceRecord rec;
        rec.id = detail::json_field<std::string>(rj, "id", "record header");
        rec.prompt_len = detail::json_field<std::uint32_t>(rj, "prompt_len", "record header");
        rec.gen_len = detail::json_field<std::uint32_t>(rj, "gen_len", "record header");
        const int label = detail::json_field<int>(rj, "label", "record header");
        if (label != -1) rec.label = label;
        if (rj.contains("response_text") && !rj["response_text"].is_null()) {
            rec.response_text = rj["response_text"].get<std::string>();
        }

        rec.tokens.reserve(std::min<std::size_t>(rec.gen_len, 4096));
        for (std::uint32_t j = 0; j < rec.gen_len; ++j) {
            TokenStates tok;
            r.need(meta.hidden_states() * meta.hidden_dim * elem, "hidden states");
            tok.hidden.assign(meta.hidden_states(), std::vector<float>(meta.hidden_dim));
            for (auto& h : tok.hidden) {
                for (float& x : h) x = r.payload(payload, "hidden states");
            }
            tok.attention.resize(meta.n_layers);
            for (auto& row : tok.attention) {
                const std::uint32_t len = r.u32("attention row length");
                r.need(static_cast<std::size_t>(len) * elem, "attention row");
                row.resize(len);
                for (float& a : row) a = r.payload(payload, "attention row");
            }
            tok.prob.p_max = r.f32("token scalars");
            tok.prob.p_min = r.f32("token scalars");
            tok.prob.p_chosen = r.f32("token scalars");
            tok.prob.h_norm = r.f32("token scalars");
            tok.prob.token_id = r.u32("token id");
            rec.tokens.push_back(std::move(tok));
        }
        for (auto& v : validate_record(meta, rec, opts)) violations.push_back({i, rec.id, std::move(v)});
        trace.records.push_back(std::move(rec));
    }
    if (r.remaining() != 0) {
        throw CorruptionError("trailing bytes after last record", r.offset(), count);
    }
    if (!violations.empty()) throw ValidationError(std::move(violations));
    return trace;
}

inline void write_trace(const TraceMeta& meta, const std::vector<TraceRecord>& records,
                        const std::filesystem::path& path) {
    const std::string bytes = encode_trace(meta, records);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Trace read_trace(const std::filesystem::path& path, const ValidationOptions& opts = {}) {
    const std::string bytes = read_file_bytes(path);
    return decode_trace(std::span<const char>(bytes.data(), bytes.size()), opts);
}

}  // namespace driftscope
