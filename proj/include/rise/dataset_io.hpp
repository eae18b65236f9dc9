#pragma once

// On-disk artifact bundle: a JSON manifest plus headerless CSV matrices and
// line-oriented label/split/id files. Everything downstream consumes the
// in-memory DatasetBundle produced here.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "rise/error.hpp"
#include "rise/matrix.hpp"

namespace rise {

namespace fs = std::filesystem;
using json = nlohmann::json;

class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
        if (names_.size() < 2) fail(ErrorCode::BadLabel, "label set needs at least 2 labels");
        std::unordered_set<std::string> seen;
        for (const auto& n : names_) {
            if (n.empty()) fail(ErrorCode::BadLabel, "empty label name");
            if (!seen.insert(n).second) fail(ErrorCode::BadLabel, "duplicate label name '" + n + "'");
        }
    }

    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::string& name(std::size_t i) const { return names_.at(i); }

    std::optional<std::size_t> index_of(std::string_view name) const {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == name) return i;
        }
        return std::nullopt;
    }

    friend bool operator==(const LabelSet&, const LabelSet&) = default;

private:
    std::vector<std::string> names_;
};

enum class Split { Train, Dev, Test };

inline std::string_view to_string(Split s) noexcept {
    switch (s) {
        case Split::Train: return "train";
        case Split::Dev: return "dev";
        case Split::Test: return "test";
    }
    return "?";
}

inline Split parse_split(std::string_view token) {
    if (token == "train") return Split::Train;
    if (token == "dev") return Split::Dev;
    if (token == "test") return Split::Test;
    fail(ErrorCode::ParseError, "unknown split '" + std::string(token) + "'");
}

struct ExampleRecord {
    std::string id;
    Split split = Split::Train;
    std::size_t gold = 0;
    std::vector<double> logits;
    std::vector<double> features;  // empty when the bundle has no features

    friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

struct DatasetBundle {
    LabelSet labels;
    std::vector<ExampleRecord> examples;
    std::optional<Matrix> label_features;  // C x D
    std::optional<std::size_t> dim;        // D; absent when no features are shipped
    json meta = json::object();

    std::size_t num_classes() const noexcept { return labels.size(); }
    bool has_features() const noexcept { return dim.has_value(); }

    std::vector<std::size_t> indices_of(Split split) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < examples.size(); ++i) {
            if (examples[i].split == split) out.push_back(i);
        }
        return out;
    }

    Matrix logits(std::span<const std::size_t> indices) const {
        Matrix m(indices.size(), num_classes());
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const auto& z = examples[indices[r]].logits;
            std::copy(z.begin(), z.end(), m.row(r).begin());
        }
        return m;
    }

    Matrix features(std::span<const std::size_t> indices) const {
        if (!dim) fail(ErrorCode::MissingFeatures, "bundle has no sentence features");
        Matrix m(indices.size(), *dim);
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const auto& f = examples[indices[r]].features;
            std::copy(f.begin(), f.end(), m.row(r).begin());
        }
        return m;
    }

    std::vector<std::size_t> gold(std::span<const std::size_t> indices) const {
        std::vector<std::size_t> out(indices.size());
        for (std::size_t r = 0; r < indices.size(); ++r) out[r] = examples[indices[r]].gold;
        return out;
    }

    friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

// Checks every structural invariant of an in-memory bundle.
inline void validate(const DatasetBundle& b) {
    const std::size_t C = b.labels.size();
    if (C < 2) fail(ErrorCode::BadLabel, "label set needs at least 2 labels");
    std::unordered_set<std::string> ids;
    for (const auto& ex : b.examples) {
        if (!ids.insert(ex.id).second) fail(ErrorCode::DuplicateId, "duplicate example id '" + ex.id + "'");
        if (ex.logits.size() != C) {
            fail(ErrorCode::DimensionMismatch, "example '" + ex.id + "' has " + std::to_string(ex.logits.size()) +
                                                   " logits, expected " + std::to_string(C));
        }
        if (ex.gold >= C) fail(ErrorCode::BadLabel, "example '" + ex.id + "' gold index out of range");
        const std::size_t want = b.dim.value_or(0);
        if (ex.features.size() != want) {
            fail(ErrorCode::DimensionMismatch, "example '" + ex.id + "' has " + std::to_string(ex.features.size()) +
                                                   " features, expected " + std::to_string(want));
        }
    }
    if (b.label_features) {
        if (!b.dim) fail(ErrorCode::DimensionMismatch, "label features require a feature dimension");
        if (b.label_features->rows() != C || b.label_features->cols() != *b.dim) {
            fail(ErrorCode::DimensionMismatch, "label features must be " + std::to_string(C) + "x" +
                                                   std::to_string(*b.dim));
        }
    }
}

namespace detail {

inline std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::MissingFile, "cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        lines.push_back(std::move(line));
    }
    return lines;
}

inline std::vector<std::vector<double>> read_csv_rows(const fs::path& path) {
    std::vector<std::vector<double>> rows;
    for (const auto& line : read_lines(path)) {
        std::vector<double> row;
        std::string_view rest(line);
        while (true) {
            auto comma = rest.find(',');
            row.push_back(parse_double(rest.substr(0, comma)));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void check_width(const std::vector<std::vector<double>>& rows, std::size_t width, std::string_view what) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != width) {
            fail(ErrorCode::DimensionMismatch, std::string(what) + " row " + std::to_string(i) + " has " +
                                                   std::to_string(rows[i].size()) + " columns, expected " +
                                                   std::to_string(width));
        }
    }
}

inline fs::path resolve(const fs::path& base, const json& files, const char* key) {
    if (!files.contains(key) || !files[key].is_string()) {
        fail(ErrorCode::ParseError, std::string("manifest.files.") + key + " must be a path string");
    }
    fs::path p = base / files[key].get<std::string>();
    if (!fs::exists(p)) fail(ErrorCode::MissingFile, std::string(key) + " file not found: " + p.string());
    return p;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
    out << text;
    if (!out) fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

inline void append_csv_row(std::string& out, std::span<const double> row) {
    for (std::size_t j = 0; j < row.size(); ++j) {
        if (j) out += ',';
        out += format_double(row[j]);
    }
    out += '\n';
}

}  // namespace detail

inline DatasetBundle load_bundle(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) fail(ErrorCode::MissingFile, "manifest not found: " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorCode::ParseError, "manifest is not valid JSON: " + std::string(e.what()));
    }
    if (!manifest.is_object()) fail(ErrorCode::ParseError, "manifest must be a JSON object");
    if (!manifest.contains("labels") || !manifest["labels"].is_array()) {
        fail(ErrorCode::ParseError, "manifest.labels must be an array of strings");
    }
    if (!manifest.contains("files") || !manifest["files"].is_object()) {
        fail(ErrorCode::ParseError, "manifest.files must be an object");
    }

    DatasetBundle b;
    std::vector<std::string> names;
    for (const auto& n : manifest["labels"]) {
        if (!n.is_string()) fail(ErrorCode::ParseError, "label names must be strings");
        names.push_back(n.get<std::string>());
    }
    b.labels = LabelSet(std::move(names));
    const std::size_t C = b.labels.size();

    if (manifest.contains("dim") && !manifest["dim"].is_null()) {
        if (!manifest["dim"].is_number_unsigned() || manifest["dim"].get<std::size_t>() == 0) {
            fail(ErrorCode::ParseError, "manifest.dim must be a positive integer or null");
        }
        b.dim = manifest["dim"].get<std::size_t>();
    }
    if (manifest.contains("meta")) b.meta = manifest["meta"];

    const fs::path base = manifest_path.parent_path();
    const json& files = manifest["files"];

    auto logits = detail::read_csv_rows(detail::resolve(base, files, "logits"));
    detail::check_width(logits, C, "logits");
    const std::size_t N = logits.size();

    auto gold_lines = detail::read_lines(detail::resolve(base, files, "gold"));
    auto split_lines = detail::read_lines(detail::resolve(base, files, "splits"));
    if (gold_lines.size() != N) {
        fail(ErrorCode::DimensionMismatch, "gold has " + std::to_string(gold_lines.size()) + " lines, logits has " +
                                               std::to_string(N) + " rows");
    }
    if (split_lines.size() != N) {
        fail(ErrorCode::DimensionMismatch, "splits has " + std::to_string(split_lines.size()) +
                                               " lines, logits has " + std::to_string(N) + " rows");
    }

    std::vector<std::string> ids;
    if (files.contains("ids")) {
        ids = detail::read_lines(detail::resolve(base, files, "ids"));
        if (ids.size() != N) fail(ErrorCode::DimensionMismatch, "ids count does not match logits rows");
    } else {
        for (std::size_t i = 0; i < N; ++i) ids.push_back(std::to_string(i));
    }

    std::vector<std::vector<double>> features;
    if (files.contains("features")) {
        if (!b.dim) fail(ErrorCode::DimensionMismatch, "features file given but manifest.dim is null");
        features = detail::read_csv_rows(detail::resolve(base, files, "features"));
        if (features.size() != N) fail(ErrorCode::DimensionMismatch, "features rows do not match logits rows");
        detail::check_width(features, *b.dim, "features");
    } else if (b.dim) {
        fail(ErrorCode::MissingFile, "manifest.dim is set but no features file is listed");
    }

    if (files.contains("label_features")) {
        if (!b.dim) fail(ErrorCode::DimensionMismatch, "label_features given but manifest.dim is null");
        auto rows = detail::read_csv_rows(detail::resolve(base, files, "label_features"));
        if (rows.size() != C) fail(ErrorCode::DimensionMismatch, "label_features must have one row per label");
        detail::check_width(rows, *b.dim, "label_features");
        b.label_features = Matrix::from_rows(rows);
    }

    b.examples.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        auto& ex = b.examples[i];
        ex.id = ids[i];
        ex.split = parse_split(split_lines[i]);
        std::size_t g = 0;
        const auto& gl = gold_lines[i];
        auto [ptr, ec] = std::from_chars(gl.data(), gl.data() + gl.size(), g);
        if (ec != std::errc{} || ptr != gl.data() + gl.size()) {
            fail(ErrorCode::BadLabel, "gold line " + std::to_string(i) + " is not a label index: '" + gl + "'");
        }
        if (g >= C) fail(ErrorCode::BadLabel, "gold index " + gl + " out of range on line " + std::to_string(i));
        ex.gold = g;
        ex.logits = std::move(logits[i]);
        if (!features.empty()) ex.features = std::move(features[i]);
    }
    validate(b);
    return b;
}

// Writes manifest.json plus matrix files into `dir`; returns the manifest path.
inline fs::path save_bundle(const DatasetBundle& b, const fs::path& dir) {
    validate(b);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());

    std::string logits, gold, splits, ids, features;
    for (const auto& ex : b.examples) {
        detail::append_csv_row(logits, ex.logits);
        gold += std::to_string(ex.gold) + '\n';
        splits += std::string(to_string(ex.split)) + '\n';
        ids += ex.id + '\n';
        if (b.dim) detail::append_csv_row(features, ex.features);
    }

    json files = {{"logits", "logits.csv"}, {"gold", "gold.txt"}, {"splits", "splits.txt"}, {"ids", "ids.txt"}};
    detail::write_text(dir / "logits.csv", logits);
    detail::write_text(dir / "gold.txt", gold);
    detail::write_text(dir / "splits.txt", splits);
    detail::write_text(dir / "ids.txt", ids);
    if (b.dim) {
        files["features"] = "features.csv";
        detail::write_text(dir / "features.csv", features);
    }
    if (b.label_features) {
        files["label_features"] = "label_features.csv";
        std::string lf;
        for (std::size_t r = 0; r < b.label_features->rows(); ++r) detail::append_csv_row(lf, b.label_features->row(r));
        detail::write_text(dir / "label_features.csv", lf);
    }

    json manifest = {{"labels", b.labels.names()},
                     {"dim", b.dim ? json(*b.dim) : json(nullptr)},
                     {"files", files},
                     {"meta", b.meta}};
    const fs::path manifest_path = dir / "manifest.json";
    detail::write_text(manifest_path, manifest.dump(2) + '\n');
    return manifest_path;
}

}  // namespace rise
