#pragma once

// Domain types, configuration schema and answer scoring shared by the whole engine.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mor {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed document (bad JSON, wrong types, unknown keys).
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Well-formed document whose values break an invariant.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Caller passed inputs a backend or engine operation cannot accept.
class InputError : public Error {
public:
    using Error::Error;
};

class BackendError : public Error {
public:
    using Error::Error;
};
class ConnectivityError : public BackendError {
public:
    using BackendError::BackendError;
};
class TimeoutError : public BackendError {
public:
    using BackendError::BackendError;
};
class MalformedResponseError : public BackendError {
public:
    using BackendError::BackendError;
};
class DimensionMismatchError : public BackendError {
public:
    using BackendError::BackendError;
};

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) return {};
        Matrix m(rows.size(), rows.front().size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (rows[r].size() != m.cols_)
                throw InputError("ragged matrix: row " + std::to_string(r) + " has " +
                                 std::to_string(rows[r].size()) + " columns, expected " +
                                 std::to_string(m.cols_));
            std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
        }
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    const std::vector<double>& data() const noexcept { return data_; }

    void push_row(std::span<const double> values) {
        if (rows_ == 0 && cols_ == 0) cols_ = values.size();
        if (values.size() != cols_) throw InputError("row width mismatch");
        data_.insert(data_.end(), values.begin(), values.end());
        ++rows_;
    }

    /// Row-wise concatenation.
    void append(const Matrix& other) {
        if (other.empty()) return;
        if (rows_ == 0 && cols_ == 0) cols_ = other.cols_;
        if (other.cols_ != cols_)
            throw InputError("cannot concatenate matrices of width " + std::to_string(cols_) + " and " +
                             std::to_string(other.cols_));
        data_.insert(data_.end(), other.data_.begin(), other.data_.end());
        rows_ += other.rows_;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    std::vector<std::vector<double>> to_rows() const {
        std::vector<std::vector<double>> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r].assign(row(r).begin(), row(r).end());
        return out;
    }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct ImageInput {
    std::vector<double> features;
    std::optional<std::string> source_label;
};

struct Problem {
    std::string id;
    std::string question;
    std::vector<ImageInput> images;
    std::vector<std::string> gold_answers;
    std::optional<std::string> category;
};

enum class PromptCategory { generic, specific };

inline constexpr std::string_view kObjectPlaceholder = "{object}";

struct TriggeringPrompt {
    int index = 0;
    std::string templ;
    PromptCategory category = PromptCategory::generic;

    bool has_placeholder() const { return templ.find(kObjectPlaceholder) != std::string::npos; }
};

struct LinkWord {
    std::string word;
    bool operator==(const LinkWord&) const = default;
};

struct Rationale {
    int prompt_index = 0;
    std::string prompt_text;
    std::string text;
    bool failed = false;
};

struct IntermediateRationale {
    std::string full_text;
    int prompt_index = 0;
    LinkWord link_word;
    std::string prompt_text;
    std::string rationale_text;
    std::string question;
};

/// Where a thought came from: the bare problem (z0) or one prompt's intermediate rationale.
struct ThoughtOrigin {
    std::optional<int> prompt_index;

    static ThoughtOrigin base() { return {}; }
    static ThoughtOrigin rationale(int index) { return {index}; }
    bool is_base() const { return !prompt_index.has_value(); }
    bool operator==(const ThoughtOrigin&) const = default;
};

struct Thought {
    Matrix rows;
    ThoughtOrigin origin;
};

enum class Pooling { mean, cls };
enum class Fusion { fid, majority_vote };
enum class Mode { vanilla, cot, mor };

struct SelectionPolicy {
    enum class Kind { fixed, dynamic };
    Kind kind = Kind::dynamic;
    int k = 0;
    double alpha = 0.95;
    int k_max = 6;

    static SelectionPolicy fixed(int k) { return {Kind::fixed, k, 0.0, 0}; }
    static SelectionPolicy dynamic(double alpha, int k_max) { return {Kind::dynamic, 0, alpha, k_max}; }
    bool operator==(const SelectionPolicy&) const = default;
};

/// Triggering prompts as printed in the source prompt table, indices 0-10.
/// Categories follow the grouping used in the diversity analysis: 0-5 object/scenario style
/// (specific), 6-10 open-ended (generic). configs/table6_prompts.json keeps the table's own labels.
inline std::vector<TriggeringPrompt> default_prompts() {
    const char* texts[] = {"Let's consider on",  "What the scenario about", "Let's ponder on",
                           "Let's reflect on",   "Let's brainstorm on",     "What do you think on",
                           "Let's contemplate on", "First,",                "Let's think",
                           "Hi",                 "Caption"};
    std::vector<TriggeringPrompt> out;
    for (int i = 0; i < 11; ++i)
        out.push_back({i, texts[i], i <= 5 ? PromptCategory::specific : PromptCategory::generic});
    return out;
}

inline std::vector<LinkWord> default_link_words() { return {{"Therefore"}, {"Consequently"}, {"Then"}}; }

struct PipelineConfig {
    std::vector<TriggeringPrompt> prompts = default_prompts();
    std::vector<LinkWord> link_words = default_link_words();
    Pooling pooling = Pooling::mean;
    Fusion fusion = Fusion::fid;
    SelectionPolicy selection = SelectionPolicy::dynamic(0.95, 6);
    bool include_base_in_fusion = true;
    Mode mode = Mode::mor;
    int max_decode_len = 16;
    long long seed = 0;
    std::optional<std::vector<std::string>> closed_vocab;
    // Generation input is "question prompt:" when true, "prompt:" otherwise.
    bool compose_question_first = true;
    int key_phrase_cap = 5;
};

struct RunRecord {
    std::string problem_id;
    std::vector<Rationale> rationales;
    std::vector<int> thought_prompts;  // prompt index of each scored thought
    std::vector<double> similarities;
    std::vector<std::size_t> selected_indices;
    std::string answer;
    std::optional<bool> correct;
    std::optional<std::string> failure;
    std::vector<std::string> warnings;
};

struct RunResult {
    std::vector<RunRecord> records;
    std::optional<double> accuracy_overall;
    std::map<std::string, double> accuracy_by_category;
};

// ---------------------------------------------------------------------------
// Answer scoring
// ---------------------------------------------------------------------------

inline bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.emplace_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline std::string normalize_answer(std::string_view raw) {
    std::string cleaned;
    cleaned.reserve(raw.size());
    for (unsigned char c : raw) {
        if (is_ascii_punct(c)) continue;
        cleaned.push_back(static_cast<char>(std::tolower(c)));
    }
    const auto words = split_whitespace(cleaned);
    std::vector<std::string> kept;
    for (const auto& w : words)
        if (w != "a" && w != "an" && w != "the") kept.push_back(w);
    // an answer made only of articles keeps them
    return join(kept.empty() ? words : kept);
}

inline bool match_answer(std::string_view predicted, std::span<const std::string> gold) {
    const std::string p = normalize_answer(predicted);
    return std::any_of(gold.begin(), gold.end(), [&](const std::string& g) { return normalize_answer(g) == p; });
}

/// Maps a free-form answer onto a closed candidate list; empty when nothing fits.
inline std::string restrict_to_vocab(std::string_view answer, std::span<const std::string> candidates) {
    const std::string a = normalize_answer(answer);
    for (const auto& c : candidates)
        if (normalize_answer(c) == a) return c;
    const std::string padded = " " + a + " ";
    for (const auto& c : candidates) {
        const std::string n = normalize_answer(c);
        if (!n.empty() && padded.find(" " + n + " ") != std::string::npos) return c;
    }
    return {};
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline void validate(const Problem& p) {
    if (trim(p.question).empty()) throw ValidationError("question", "must be non-empty");
    if (p.images.empty() || p.images.size() > 2) throw ValidationError("images", "expected 1 or 2 images");
    for (const auto& img : p.images) {
        if (img.features.empty()) throw ValidationError("images", "feature vector is empty");
        if (!std::all_of(img.features.begin(), img.features.end(), [](double v) { return std::isfinite(v); }))
            throw ValidationError("images", "feature vector has non-finite entries");
        if (img.features.size() != p.images.front().features.size())
            throw ValidationError("images", "images of one problem differ in length");
    }
    for (const auto& g : p.gold_answers)
        if (g.empty()) throw ValidationError("answers", "gold answers must be non-empty");
}

inline void validate(const PipelineConfig& c) {
    std::vector<int> seen;
    for (std::size_t i = 0; i < c.prompts.size(); ++i) {
        const auto& p = c.prompts[i];
        const std::string f = "prompts[" + std::to_string(i) + "]";
        if (p.index < 0) throw ValidationError(f + ".index", "must be >= 0");
        if (std::find(seen.begin(), seen.end(), p.index) != seen.end())
            throw ValidationError(f + ".index", "duplicate index " + std::to_string(p.index));
        seen.push_back(p.index);
        if (trim(p.templ).empty()) throw ValidationError(f + ".template", "must be non-empty");
        if (p.has_placeholder() && p.category != PromptCategory::specific)
            throw ValidationError(f + ".category", "templates with {object} must be specific");
    }
    for (std::size_t i = 0; i < c.link_words.size(); ++i)
        if (trim(c.link_words[i].word).empty())
            throw ValidationError("link_words[" + std::to_string(i) + "]", "must be non-empty");
    if (c.mode != Mode::vanilla) {
        if (c.prompts.empty()) throw ValidationError("prompts", "must be non-empty unless mode is vanilla");
        if (c.link_words.empty()) throw ValidationError("link_words", "must be non-empty unless mode is vanilla");
    }
    if (c.selection.kind == SelectionPolicy::Kind::fixed) {
        if (c.selection.k < 0) throw ValidationError("selection.k", "must be >= 0");
    } else {
        if (!(c.selection.alpha > 0.0 && c.selection.alpha <= 1.0))
            throw ValidationError("selection.alpha", "must lie in (0, 1]");
        if (c.selection.k_max < 1) throw ValidationError("selection.k_max", "must be >= 1");
    }
    if (c.max_decode_len < 1) throw ValidationError("max_decode_len", "must be >= 1");
    if (c.key_phrase_cap < 0) throw ValidationError("key_phrase_cap", "must be >= 0");
    if (c.closed_vocab) {
        if (c.closed_vocab->empty()) throw ValidationError("closed_vocab", "must be non-empty when present");
        for (const auto& a : *c.closed_vocab)
            if (trim(a).empty()) throw ValidationError("closed_vocab", "entries must be non-empty");
    }
}

// ---------------------------------------------------------------------------
// Enum <-> text
// ---------------------------------------------------------------------------

inline std::string to_string(Pooling p) { return p == Pooling::mean ? "mean" : "cls"; }
inline std::string to_string(Fusion f) { return f == Fusion::fid ? "fid" : "majority_vote"; }
inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::vanilla: return "vanilla";
        case Mode::cot: return "cot";
        case Mode::mor: return "mor";
    }
    return "mor";
}
inline std::string to_string(PromptCategory c) { return c == PromptCategory::generic ? "generic" : "specific"; }

// ---------------------------------------------------------------------------
// Config I/O
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t line_of(std::string_view text, std::size_t byte) {
    byte = std::min(byte, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
}

template <class T>
T get_as(const json& j, const std::string& field) {
    try {
        return j.get<T>();
    } catch (const json::exception&) {
        throw SchemaError(field + ": wrong type (" + std::string(j.type_name()) + ")");
    }
}

inline std::string get_enum(const json& j, const std::string& field, std::initializer_list<std::string_view> allowed) {
    auto s = get_as<std::string>(j, field);
    if (std::find(allowed.begin(), allowed.end(), s) == allowed.end())
        throw ValidationError(field, "unknown value \"" + s + "\"");
    return s;
}

}  // namespace detail

inline json to_json(const SelectionPolicy& s) {
    if (s.kind == SelectionPolicy::Kind::fixed) return {{"kind", "fixed"}, {"k", s.k}};
    return {{"kind", "dynamic"}, {"alpha", s.alpha}, {"k_max", s.k_max}};
}

inline json to_json(const PipelineConfig& c) {
    json prompts = json::array();
    for (const auto& p : c.prompts)
        prompts.push_back({{"index", p.index}, {"template", p.templ}, {"category", to_string(p.category)}});
    json links = json::array();
    for (const auto& l : c.link_words) links.push_back(l.word);
    json j = {{"mode", to_string(c.mode)},
              {"prompts", prompts},
              {"link_words", links},
              {"pooling", to_string(c.pooling)},
              {"fusion", to_string(c.fusion)},
              {"selection", to_json(c.selection)},
              {"include_base_in_fusion", c.include_base_in_fusion},
              {"max_decode_len", c.max_decode_len},
              {"seed", c.seed},
              {"compose_question_first", c.compose_question_first},
              {"key_phrase_cap", c.key_phrase_cap}};
    if (c.closed_vocab) j["closed_vocab"] = *c.closed_vocab;
    return j;
}

/// Builds a validated config from a parsed document; absent keys keep their defaults.
inline PipelineConfig config_from_json(const json& j) {
    using detail::get_as;
    using detail::get_enum;
    if (!j.is_object()) throw SchemaError("config: top level must be an object");
    static const std::vector<std::string> known = {
        "mode",       "prompts", "link_words",     "pooling",        "fusion",
        "selection",  "include_base_in_fusion",    "max_decode_len", "seed",
        "closed_vocab", "compose_question_first",  "key_phrase_cap"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw SchemaError("config: unknown key \"" + key + "\"");

    PipelineConfig c;
    if (j.contains("mode")) {
        auto m = get_enum(j["mode"], "mode", {"vanilla", "cot", "mor"});
        c.mode = m == "vanilla" ? Mode::vanilla : m == "cot" ? Mode::cot : Mode::mor;
    }
    if (j.contains("prompts")) {
        const auto& arr = j["prompts"];
        if (!arr.is_array()) throw SchemaError("prompts: expected an array");
        c.prompts.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string f = "prompts[" + std::to_string(i) + "]";
            const auto& e = arr[i];
            if (!e.is_object() || !e.contains("template")) throw SchemaError(f + ": expected {index, template, category}");
            TriggeringPrompt p;
            p.index = e.contains("index") ? get_as<int>(e["index"], f + ".index") : static_cast<int>(i);
            p.templ = get_as<std::string>(e["template"], f + ".template");
            if (e.contains("category"))
                p.category = get_enum(e["category"], f + ".category", {"generic", "specific"}) == "generic"
                                 ? PromptCategory::generic
                                 : PromptCategory::specific;
            else
                p.category = p.has_placeholder() ? PromptCategory::specific : PromptCategory::generic;
            c.prompts.push_back(std::move(p));
        }
    }
    if (j.contains("link_words")) {
        const auto& arr = j["link_words"];
        if (!arr.is_array()) throw SchemaError("link_words: expected an array");
        c.link_words.clear();
        for (std::size_t i = 0; i < arr.size(); ++i)
            c.link_words.push_back({get_as<std::string>(arr[i], "link_words[" + std::to_string(i) + "]")});
    }
    if (j.contains("pooling"))
        c.pooling = get_enum(j["pooling"], "pooling", {"mean", "cls"}) == "mean" ? Pooling::mean : Pooling::cls;
    if (j.contains("fusion"))
        c.fusion = get_enum(j["fusion"], "fusion", {"fid", "majority_vote", "mv"}) == "fid" ? Fusion::fid
                                                                                          : Fusion::majority_vote;
    if (j.contains("selection")) {
        const auto& s = j["selection"];
        if (!s.is_object() || !s.contains("kind")) throw SchemaError("selection: expected {kind, ...}");
        if (get_enum(s["kind"], "selection.kind", {"fixed", "dynamic"}) == "fixed") {
            c.selection = SelectionPolicy::fixed(s.contains("k") ? get_as<int>(s["k"], "selection.k") : 1);
        } else {
            c.selection = SelectionPolicy::dynamic(
                s.contains("alpha") ? get_as<double>(s["alpha"], "selection.alpha") : 0.95,
                s.contains("k_max") ? get_as<int>(s["k_max"], "selection.k_max") : 6);
        }
    }
    if (j.contains("include_base_in_fusion"))
        c.include_base_in_fusion = get_as<bool>(j["include_base_in_fusion"], "include_base_in_fusion");
    if (j.contains("max_decode_len")) c.max_decode_len = get_as<int>(j["max_decode_len"], "max_decode_len");
    if (j.contains("seed")) c.seed = get_as<long long>(j["seed"], "seed");
    if (j.contains("closed_vocab") && !j["closed_vocab"].is_null())
        c.closed_vocab = get_as<std::vector<std::string>>(j["closed_vocab"], "closed_vocab");
    if (j.contains("compose_question_first"))
        c.compose_question_first = get_as<bool>(j["compose_question_first"], "compose_question_first");
    if (j.contains("key_phrase_cap")) c.key_phrase_cap = get_as<int>(j["key_phrase_cap"], "key_phrase_cap");
    validate(c);
    return c;
}

inline PipelineConfig parse_config(std::string_view text, std::string_view source = "config") {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string(source) + ":" + std::to_string(detail::line_of(text, e.byte)) + ": " +
                          e.what());
    }
    return config_from_json(j);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline PipelineConfig load_config(const std::string& path) { return parse_config(read_file(path), path); }

}  // namespace mor
