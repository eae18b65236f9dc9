#pragma once

#include <cstddef>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rise/dataset_io.hpp"
#include "rise/error.hpp"
#include "rise/matrix.hpp"

namespace rise {

// Row-normalized gold -> predicted distribution measured on dev data.
struct ConfusionProfile {
    Matrix table;                      // table(gold, pred)
    std::vector<std::size_t> support;  // gold counts; empty when loaded from CSV

    std::size_t num_classes() const noexcept { return table.rows(); }
};

inline constexpr double kDefaultNegSmoothing = 0.01;

inline ConfusionProfile fit_confusion(const Matrix& dev_logits, std::span<const std::size_t> dev_gold) {
    if (dev_logits.rows() != dev_gold.size()) fail(ErrorCode::LengthMismatch, "dev logits rows do not match gold count");
    if (dev_gold.empty()) fail(ErrorCode::BadArgument, "confusion needs at least one dev example");
    const std::size_t C = dev_logits.cols();
    ConfusionProfile p{Matrix(C, C), std::vector<std::size_t>(C, 0)};
    for (std::size_t i = 0; i < dev_gold.size(); ++i) {
        if (dev_gold[i] >= C) fail(ErrorCode::BadLabel, "gold index out of range");
        p.table(dev_gold[i], argmax(dev_logits.row(i))) += 1.0;
        ++p.support[dev_gold[i]];
    }
    for (std::size_t y = 0; y < C; ++y) {
        for (std::size_t yp = 0; yp < C; ++yp) {
            // Unseen gold classes get a uniform row so downstream weights stay defined.
            p.table(y, yp) = p.support[y] ? p.table(y, yp) / static_cast<double>(p.support[y])
                                          : 1.0 / static_cast<double>(C);
        }
    }
    return p;
}

using NegativeWeights = std::map<std::size_t, double>;

// w_{y'} = P(gold, y') + smoothing for every y' != gold; not renormalized.
inline NegativeWeights negative_weights(const ConfusionProfile& profile, std::size_t gold, double smoothing = 0.0) {
    if (gold >= profile.num_classes()) fail(ErrorCode::BadLabel, "gold index out of range");
    if (!(smoothing >= 0.0)) fail(ErrorCode::BadArgument, "smoothing must be non-negative");
    NegativeWeights w;
    for (std::size_t y = 0; y < profile.num_classes(); ++y) {
        if (y != gold) w.emplace(y, profile.table(gold, y) + smoothing);
    }
    return w;
}

inline NegativeWeights uniform_negative_weights(std::size_t num_classes, std::size_t gold) {
    NegativeWeights w;
    for (std::size_t y = 0; y < num_classes; ++y) {
        if (y != gold) w.emplace(y, 1.0);
    }
    return w;
}

namespace detail {

inline std::string csv_quote(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

inline std::vector<std::string> csv_split(std::string_view line) {
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                fields.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else if (c != '\r') {
            fields.back() += c;
        }
    }
    return fields;
}

}  // namespace detail

// Header row and first column carry label names; the corner cell records the
// negative-weight smoothing the consumer should apply.
inline void write_confusion_csv(std::ostream& out, const ConfusionProfile& profile, const LabelSet& labels,
                                double neg_smoothing = kDefaultNegSmoothing) {
    if (labels.size() != profile.num_classes()) fail(ErrorCode::DimensionMismatch, "label count does not match profile");
    out << "neg_smoothing=" << format_double(neg_smoothing);
    for (const auto& n : labels.names()) out << ',' << detail::csv_quote(n);
    out << '\n';
    for (std::size_t y = 0; y < profile.num_classes(); ++y) {
        out << detail::csv_quote(labels.name(y));
        for (std::size_t yp = 0; yp < profile.num_classes(); ++yp) out << ',' << format_double(profile.table(y, yp));
        out << '\n';
    }
}

struct LoadedConfusion {
    ConfusionProfile profile;
    double neg_smoothing = 0.0;
};

// Reads a table written by write_confusion_csv; label names must match `labels` in order.
inline LoadedConfusion read_confusion_csv(std::istream& in, const LabelSet& labels) {
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line != "\r") rows.push_back(detail::csv_split(line));
    }
    const std::size_t C = labels.size();
    if (rows.size() != C + 1) fail(ErrorCode::DimensionMismatch, "confusion table must have " + std::to_string(C + 1) + " lines");
    LoadedConfusion out;
    const std::string_view corner = rows[0][0];
    constexpr std::string_view key = "neg_smoothing=";
    if (corner.starts_with(key)) out.neg_smoothing = parse_double(corner.substr(key.size()));
    if (rows[0].size() != C + 1) fail(ErrorCode::DimensionMismatch, "confusion header must list every label");
    for (std::size_t y = 0; y < C; ++y) {
        if (rows[0][y + 1] != labels.name(y)) fail(ErrorCode::BadLabel, "confusion header label mismatch at column " + std::to_string(y));
    }
    out.profile.table = Matrix(C, C);
    for (std::size_t y = 0; y < C; ++y) {
        const auto& r = rows[y + 1];
        if (r.size() != C + 1) fail(ErrorCode::DimensionMismatch, "confusion row " + std::to_string(y) + " has wrong width");
        if (r[0] != labels.name(y)) fail(ErrorCode::BadLabel, "confusion row label mismatch at row " + std::to_string(y));
        for (std::size_t yp = 0; yp < C; ++yp) out.profile.table(y, yp) = parse_double(r[yp + 1]);
    }
    return out;
}

}  // namespace rise
