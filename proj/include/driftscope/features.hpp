#pragma once

// Fixed-layout feature vectors and the features CSV.
//
// Column order is grouped by segment so every segment is contiguous:
//   w_hid_*, w_att_*   (distribution shift)
//   c_hid_*, c_att_*   (similarity)
//   mtp, mps, mg_max, mg_min, mean_h_norm, low_prob_frac, pmax_p<q>...   (probabilistic)

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "driftscope/errors.hpp"
#include "driftscope/prob_features.hpp"
#include "driftscope/shift_features.hpp"
#include "driftscope/trace.hpp"

namespace driftscope {

enum class Segment { dist_shift = 0, similarity = 1, probabilistic = 2 };

inline constexpr std::array<Segment, 3> kSegments = {Segment::dist_shift, Segment::similarity,
                                                      Segment::probabilistic};

inline const char* to_string(Segment s) {
    switch (s) {
        case Segment::dist_shift: return "dist_shift";
        case Segment::similarity: return "similarity";
        case Segment::probabilistic: return "probabilistic";
    }
    return "unknown";
}

inline Segment segment_of(std::string_view name) {
    if (name.starts_with("w_")) return Segment::dist_shift;
    if (name.starts_with("c_")) return Segment::similarity;
    return Segment::probabilistic;
}

struct FeatureLayout {
    std::vector<std::string> names;
    std::array<std::size_t, 3> segment_sizes{0, 0, 0};

    std::size_t size() const { return names.size(); }
    std::size_t segment_size(Segment s) const { return segment_sizes[static_cast<std::size_t>(s)]; }
    std::size_t segment_offset(Segment s) const {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(s); ++i) offset += segment_sizes[i];
        return offset;
    }

    /// Builds a layout from column names; segments must appear contiguously and in order.
    static FeatureLayout from_names(std::vector<std::string> names) {
        FeatureLayout layout;
        int last = 0;
        for (const auto& n : names) {
            const auto seg = static_cast<int>(segment_of(n));
            if (seg < last) {
                throw FormatError("feature column '" + n + "' is out of segment order");
            }
            last = seg;
            ++layout.segment_sizes[static_cast<std::size_t>(seg)];
        }
        layout.names = std::move(names);
        return layout;
    }

    std::string describe() const {
        std::string out = std::to_string(size()) + " features (";
        for (Segment s : kSegments) {
            if (s != Segment::dist_shift) out += ", ";
            out += std::string(to_string(s)) + "=" + std::to_string(segment_size(s));
        }
        return out + ")";
    }

    bool operator==(const FeatureLayout&) const = default;
};

struct FeatureConfig {
    ShiftConfig shift;
    ProbFeatureConfig prob;
};

inline std::string percentile_name(double q) {
    std::string label;
    if (q == std::floor(q)) {
        label = std::to_string(static_cast<long long>(q));
    } else {
        char buf[32];
        auto res = std::to_chars(buf, buf + sizeof buf, q);
        label.assign(buf, res.ptr);
        for (char& c : label) {
            if (c == '.') c = '_';
        }
    }
    return "pmax_p" + label;
}

inline FeatureLayout make_layout(const TraceMeta& meta, const FeatureConfig& cfg) {
    const std::size_t r = cfg.shift.window;
    std::vector<LayerPair> hid;
    std::vector<LayerPair> att;
    if (cfg.shift.include_hidden) hid = layer_pairs(meta.hidden_states(), r);
    if (cfg.shift.include_attention) att = layer_pairs(meta.n_layers, r);

    auto pair_name = [](const char* prefix, const LayerPair& p) {
        return std::string(prefix) + std::to_string(p.from) + "_" + std::to_string(p.to);
    };
    std::vector<std::string> names;
    for (const auto& p : hid) names.push_back(pair_name("w_hid_", p));
    for (const auto& p : att) names.push_back(pair_name("w_att_", p));
    for (const auto& p : hid) names.push_back(pair_name("c_hid_", p));
    for (const auto& p : att) names.push_back(pair_name("c_att_", p));
    for (const char* n : {"mtp", "mps", "mg_max", "mg_min", "mean_h_norm", "low_prob_frac"}) names.emplace_back(n);
    for (double q : cfg.prob.percentiles) names.push_back(percentile_name(q));
    return FeatureLayout::from_names(std::move(names));
}

inline std::vector<double> extract_features(const TraceRecord& rec, const FeatureConfig& cfg) {
    const ShiftFeatureBlock shift = record_shift_features(rec, cfg.shift);
    const ProbFeatures prob = build_prob_features(rec, cfg.prob);
    std::vector<double> out;
    for (const auto* v : {&shift.wasserstein_hidden, &shift.wasserstein_attn, &shift.cosine_hidden,
                          &shift.cosine_attn}) {
        out.insert(out.end(), v->begin(), v->end());
    }
    const auto p = prob.values();
    out.insert(out.end(), p.begin(), p.end());
    return out;
}

/// Feature rows with labels (1 = hallucinated, 0 = truthful, -1 = unlabeled) and provenance.
struct LabeledFeatureSet {
    FeatureLayout layout;
    std::vector<std::vector<double>> features;
    std::vector<int> labels;
    std::vector<std::string> source_tags;

    std::size_t size() const { return features.size(); }

    void push_back(std::vector<double> row, int label, std::string tag) {
        if (row.size() != layout.size()) {
            throw ShapeError("feature row has " + std::to_string(row.size()) + " values, layout has " +
                             std::to_string(layout.size()));
        }
        features.push_back(std::move(row));
        labels.push_back(label);
        source_tags.push_back(std::move(tag));
    }

    LabeledFeatureSet subset(const std::vector<std::size_t>& indices) const {
        LabeledFeatureSet out{layout, {}, {}, {}};
        for (std::size_t i : indices) out.push_back(features[i], labels[i], source_tags[i]);
        return out;
    }

    bool operator==(const LabeledFeatureSet&) const = default;
};

inline std::size_t count_label(const LabeledFeatureSet& set, int label) {
    std::size_t n = 0;
    for (int l : set.labels) n += (l == label);
    return n;
}

/// Throws unless every label is 0/1 and, when `need_both`, both classes are present.
inline void require_labeled(const LabeledFeatureSet& set, bool need_both, const char* context) {
    for (int l : set.labels) {
        if (l != 0 && l != 1) throw ShapeError(std::string(context) + ": every row needs a 0/1 label");
    }
    if (need_both && (count_label(set, 0) == 0 || count_label(set, 1) == 0)) {
        throw TrainingError(std::string(context) + ": both classes must be present");
    }
}

inline LabeledFeatureSet extract_dataset(const TraceMeta& meta, const std::vector<TraceRecord>& records,
                                         const FeatureConfig& cfg) {
    validate(cfg.prob);
    if (cfg.shift.window < 1) throw DomainError("shift window must be >= 1");
    LabeledFeatureSet set{make_layout(meta, cfg), {}, {}, {}};
    for (const TraceRecord& rec : records) {
        set.push_back(extract_features(rec, cfg), rec.label.value_or(-1), meta.dataset_tag);
    }
    return set;
}

// ---- features CSV ----

inline std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::string features_to_csv(const LabeledFeatureSet& set) {
    std::string out;
    for (const auto& n : set.layout.names) out += n + ",";
    out += "label,source_tag\n";
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.source_tags[i].find_first_of(",\r\n") != std::string::npos) {
            throw FormatError("source tag '" + set.source_tags[i] + "' contains a CSV delimiter");
        }
        for (double x : set.features[i]) out += format_double(x) + ",";
        out += std::to_string(set.labels[i]) + "," + set.source_tags[i] + "\n";
    }
    return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw FormatError("features line " + std::to_string(line_no) + ": cannot parse '" + s + "'");
    }
    return v;
}

}  // namespace detail

inline LabeledFeatureSet features_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("features file is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = detail::split_csv_line(line);
    if (header.size() < 2 || header[header.size() - 2] != "label" || header.back() != "source_tag") {
        throw FormatError("features header must end with 'label,source_tag'");
    }
    header.resize(header.size() - 2);
    LabeledFeatureSet set{FeatureLayout::from_names(header), {}, {}, {}};

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != set.layout.size() + 2) {
            throw FormatError("features line " + std::to_string(line_no) + " has " +
                              std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(set.layout.size() + 2));
        }
        std::vector<double> row(set.layout.size());
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = detail::parse_double(cells[k], line_no);
        const double label = detail::parse_double(cells[row.size()], line_no);
        if (label != -1.0 && label != 0.0 && label != 1.0) {
            throw FormatError("features line " + std::to_string(line_no) + ": label must be 0, 1 or -1");
        }
        set.push_back(std::move(row), static_cast<int>(label), cells.back());
    }
    return set;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_features(const LabeledFeatureSet& set, const std::filesystem::path& path) {
    write_text_file(path, features_to_csv(set));
}

inline LabeledFeatureSet read_features(const std::filesystem::path& path) {
    return features_from_csv(read_text_file(path));
}

}  // namespace driftscope
