#pragma once

// Rationale generation: key phrases -> instantiated triggering prompts -> backend continuations ->
// intermediate rationales of the form "<prompt>. <rationale>. <link word>, <question>".

#include <algorithm>
#include <unordered_set>

#include "mor/backend.hpp"

namespace mor {

struct KeyPhrase {
    std::string text;
    std::size_t begin = 0;  // byte offsets into the question, [begin, end)
    std::size_t end = 0;
};

struct InstantiatedPrompt {
    int index = 0;           // fresh, sequential
    std::string text;
    int template_index = 0;  // TriggeringPrompt::index it came from
};

/// Built-in English function-word list used by the key phrase extractor.
inline const std::unordered_set<std::string>& stopwords() {
    static const std::unordered_set<std::string> words = {
        "a",     "an",    "the",   "and",   "or",    "but",   "if",    "then",  "else",  "of",    "at",
        "by",    "for",   "with",  "about", "against", "between", "into", "through", "during", "before",
        "after", "above", "below", "to",    "from",  "up",    "down",  "in",    "out",   "on",    "off",
        "over",  "under", "again", "once",  "here",  "there", "when",  "where", "why",   "how",   "all",
        "any",   "both",  "each",  "few",   "more",  "most",  "other", "some",  "such",  "no",    "nor",
        "not",   "only",  "own",   "same",  "so",    "than",  "too",   "very",  "can",   "will",  "just",
        "should", "now",  "is",    "are",   "was",   "were",  "be",    "been",  "being", "have",  "has",
        "had",   "do",    "does",  "did",   "i",     "me",    "my",    "we",    "our",   "you",   "your",
        "he",    "him",   "his",   "she",   "her",   "it",    "its",   "they",  "them",  "their", "what",
        "which", "who",   "whom",  "this",  "that",  "these", "those", "am",    "least", "would", "could",
        "also",  "as",    "while", "whether"};
    return words;
}

/// Maximal runs of non-stopword tokens in question order. Clause punctuation (, ; : . ! ?) ends a run.
/// Phrases are deduplicated case-insensitively and capped at `cap`.
inline std::vector<KeyPhrase> extract_key_phrases(std::string_view question, std::size_t cap = 5) {
    std::vector<KeyPhrase> out;
    std::unordered_set<std::string> seen;
    std::optional<KeyPhrase> run;

    auto flush = [&] {
        if (!run) return;
        run->text = std::string(question.substr(run->begin, run->end - run->begin));
        std::string key = run->text;
        for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (out.size() < cap && seen.insert(key).second) out.push_back(*run);
        run.reset();
    };
    auto is_clause_mark = [](char c) { return std::string_view(",;:.!?").find(c) != std::string_view::npos; };

    std::size_t i = 0;
    while (i < question.size()) {
        while (i < question.size() && std::isspace(static_cast<unsigned char>(question[i]))) ++i;
        std::size_t j = i;
        while (j < question.size() && !std::isspace(static_cast<unsigned char>(question[j]))) ++j;
        if (j == i) break;
        std::size_t b = i, e = j;
        while (b < e && is_ascii_punct(static_cast<unsigned char>(question[b]))) ++b;
        while (e > b && is_ascii_punct(static_cast<unsigned char>(question[e - 1]))) --e;
        bool leading_break = false, trailing_break = false;
        for (std::size_t k = i; k < b; ++k) leading_break |= is_clause_mark(question[k]);
        for (std::size_t k = e; k < j; ++k) trailing_break |= is_clause_mark(question[k]);

        if (b == e || leading_break) flush();
        if (b < e) {
            std::string lower(question.substr(b, e - b));
            for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            if (stopwords().count(lower)) {
                flush();
            } else if (run) {
                run->end = e;
            } else {
                run = KeyPhrase{{}, b, e};
            }
        }
        if (trailing_break) flush();
        i = j;
    }
    flush();
    return out;
}

inline std::string substitute_placeholder(std::string_view templ, std::string_view phrase) {
    std::string out;
    std::size_t pos = 0;
    while (true) {
        auto hit = templ.find(kObjectPlaceholder, pos);
        if (hit == std::string_view::npos) break;
        out.append(templ.substr(pos, hit - pos));
        out.append(phrase);
        pos = hit + kObjectPlaceholder.size();
    }
    out.append(templ.substr(pos));
    return out;
}

inline std::vector<InstantiatedPrompt> instantiate_prompts(std::span<const TriggeringPrompt> templates,
                                                           std::span<const KeyPhrase> phrases) {
    std::vector<InstantiatedPrompt> out;
    int next = 0;
    for (const auto& t : templates) {
        if (!t.has_placeholder()) {
            out.push_back({next++, t.templ, t.index});
            continue;
        }
        for (const auto& ph : phrases) out.push_back({next++, substitute_placeholder(t.templ, ph.text), t.index});
    }
    return out;
}

inline std::string compose_generation_input(std::string_view question, std::string_view prompt_text,
                                            bool question_first = true) {
    std::string out;
    if (question_first) {
        out.append(question);
        out.push_back(' ');
    }
    out.append(prompt_text);
    out.push_back(':');
    return out;
}

/// One rationale per prompt, in prompt order. A prompt whose generation fails yields an empty,
/// flagged rationale instead of aborting the problem.
inline std::vector<Rationale> generate_rationales(const Backend& backend, std::span<const InstantiatedPrompt> prompts,
                                                  std::string_view question, std::span<const ImageInput> images,
                                                  int max_len, bool question_first = true) {
    std::vector<Rationale> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) {
        Rationale r{p.index, p.text, {}, false};
        try {
            r.text = backend.generate(compose_generation_input(question, p.text, question_first), images, max_len);
        } catch (const Error&) {
            r.text.clear();
            r.failed = true;
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline IntermediateRationale form_intermediate(const InstantiatedPrompt& prompt, const Rationale& rationale,
                                               const LinkWord& link, std::string_view question) {
    if (rationale.prompt_index != prompt.index)
        throw InputError("rationale for prompt " + std::to_string(rationale.prompt_index) +
                         " paired with prompt " + std::to_string(prompt.index));
    const std::string body = trim(rationale.text);
    std::string full = prompt.text + ". ";
    if (!body.empty()) full += body + ". ";
    full += link.word + ", ";
    full.append(question);
    return {std::move(full), prompt.index, link, prompt.text, body, std::string(question)};
}

}  // namespace mor
