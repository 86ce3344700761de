#pragma once

// Encoding, scoring, selection and fusion of multi-modal thoughts, and the three answering modes:
//   vanilla  decode(z0)
//   cot      decode(top-1 thought), base excluded
//   mor      key phrases -> prompts -> rationales -> intermediates -> thoughts -> cosine vs z0
//            -> select -> FiD concatenation or majority vote -> answer

#include <algorithm>
#include <cmath>
#include <map>
#include <limits>
#include <numeric>

#include "mor/backend.hpp"
#include "mor/rationale.hpp"

namespace mor {

struct ScoredThought {
    Thought thought;
    double similarity = 0.0;
    int prompt_index = 0;
};

struct FusedThought {
    Matrix rows;
    std::vector<ThoughtOrigin> composition;
};

inline std::vector<double> pool(const Matrix& rows, Pooling method) {
    if (rows.empty()) throw InputError("pool: thought has no rows");
    if (method == Pooling::cls) return {rows.row(0).begin(), rows.row(0).end()};
    std::vector<double> out(rows.cols(), 0.0);
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        auto row = rows.row(r);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
    }
    for (double& v : out) v /= static_cast<double>(rows.rows());
    return out;
}

inline std::vector<double> pool(const Thought& t, Pooling method) { return pool(t.rows, method); }

inline constexpr double kZeroNorm = 1e-12;

/// Cosine similarity; 0 when either vector has norm below 1e-12.
inline double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        throw InputError("cosine: length mismatch " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    if (nu < kZeroNorm || nv < kZeroNorm) return 0.0;
    return dot / (nu * nv);
}

inline std::vector<ScoredThought> score_thoughts(std::vector<Thought> thoughts, const Thought& base, Pooling pooling) {
    const auto anchor = pool(base, pooling);
    std::vector<ScoredThought> out;
    out.reserve(thoughts.size());
    for (auto& t : thoughts) {
        if (t.rows.cols() != base.rows.cols())
            throw InputError("score_thoughts: thought width " + std::to_string(t.rows.cols()) + " != base width " +
                             std::to_string(base.rows.cols()));
        const double s = cosine(pool(t, pooling), anchor);
        const int index = t.origin.prompt_index.value_or(-1);
        out.push_back({std::move(t), s, index});
    }
    return out;
}

/// Indices ordered by descending similarity, ties by ascending index.
inline std::vector<std::size_t> rank_by_similarity(std::span<const double> similarities) {
    std::vector<std::size_t> order(similarities.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return similarities[a] > similarities[b]; });
    return order;
}

inline std::vector<std::size_t> select(std::span<const double> similarities, const SelectionPolicy& policy) {
    auto order = rank_by_similarity(similarities);
    if (order.empty()) return order;
    if (policy.kind == SelectionPolicy::Kind::fixed) {
        order.resize(std::min(order.size(), static_cast<std::size_t>(std::max(policy.k, 0))));
        return order;
    }
    const double best = similarities[order.front()];
    if (best <= 0.0) return {order.front()};
    const double threshold = policy.alpha * best;
    std::vector<std::size_t> kept;
    for (auto i : order) {
        if (kept.size() >= static_cast<std::size_t>(std::max(policy.k_max, 1))) break;
        if (similarities[i] >= threshold) kept.push_back(i);
    }
    return kept;
}

inline std::vector<std::size_t> select(std::span<const ScoredThought> scored, const SelectionPolicy& policy) {
    std::vector<double> sims;
    sims.reserve(scored.size());
    for (const auto& s : scored) sims.push_back(s.similarity);
    return select(sims, policy);
}

/// Row-wise concatenation: base first when requested, then `selected` in the given order.
inline FusedThought fuse_fid(const Thought& base, std::span<const ScoredThought> selected, bool include_base) {
    if (selected.empty() && !include_base) throw InputError("fuse_fid: nothing to fuse");
    FusedThought out;
    if (include_base) {
        out.rows = base.rows;
        out.composition.push_back(base.origin);
    }
    for (const auto& s : selected) {
        out.rows.append(s.thought.rows);
        out.composition.push_back(s.thought.origin);
    }
    return out;
}

struct Vote {
    std::string answer;
    double similarity = 0.0;
};

/// Most frequent normalized answer; count ties go to the answer with the highest supporting
/// similarity, then to the lexicographically smallest answer.
inline std::string majority_winner(std::span<const Vote> votes) {
    if (votes.empty()) throw InputError("majority vote: no candidates");
    struct Tally {
        std::size_t count = 0;
        double best = -std::numeric_limits<double>::infinity();
    };
    std::map<std::string, Tally> tally;
    for (const auto& v : votes) {
        auto& t = tally[normalize_answer(v.answer)];
        ++t.count;
        t.best = std::max(t.best, v.similarity);
    }
    auto winner = tally.begin();
    for (auto it = std::next(tally.begin()); it != tally.end(); ++it) {
        const auto& [a, ta] = *it;
        const auto& tw = winner->second;
        if (ta.count > tw.count || (ta.count == tw.count && ta.best > tw.best)) winner = it;
    }
    return winner->first;
}

inline std::string fuse_majority_vote(const Backend& backend, std::span<const ScoredThought> selected, int max_len) {
    if (selected.empty()) throw InputError("fuse_majority_vote: empty selection");
    std::vector<Vote> votes;
    votes.reserve(selected.size());
    for (const auto& s : selected) votes.push_back({backend.decode(s.thought.rows, max_len), s.similarity});
    return majority_winner(votes);
}

inline Thought encode_base(const Backend& backend, const Problem& problem) {
    return {backend.encode(problem.question, problem.images), ThoughtOrigin::base()};
}

/// One thought per intermediate. Items whose encoding fails are dropped and reported in `warnings`.
inline std::vector<Thought> encode_thoughts(const Backend& backend, std::span<const IntermediateRationale> intermediates,
                                            std::span<const ImageInput> images,
                                            std::vector<std::string>* warnings = nullptr) {
    std::vector<Thought> out;
    out.reserve(intermediates.size());
    for (const auto& im : intermediates) {
        try {
            out.push_back({backend.encode(im.full_text, images), ThoughtOrigin::rationale(im.prompt_index)});
        } catch (const Error& e) {
            if (warnings) warnings->push_back("prompt " + std::to_string(im.prompt_index) + ": " + e.what());
        }
    }
    return out;
}

/// Everything computed for a problem before fusion.
struct ProblemTrace {
    std::string problem_id;
    Thought base;
    std::vector<Rationale> rationales;
    std::vector<IntermediateRationale> intermediates;
    std::vector<ScoredThought> scored;
    std::vector<std::string> warnings;
    std::optional<std::string> failure;
};

/// Runs the pipeline up to scoring. Rationale generation is skipped when `with_rationales` is false.
inline ProblemTrace build_trace(const Backend& backend, const Problem& problem, const PipelineConfig& config,
                                bool with_rationales = true) {
    ProblemTrace trace;
    trace.problem_id = problem.id;
    try {
        trace.base = encode_base(backend, problem);
    } catch (const Error& e) {
        trace.failure = std::string("base encoding failed: ") + e.what();
        return trace;
    }
    if (!with_rationales) return trace;

    const auto phrases = extract_key_phrases(problem.question, static_cast<std::size_t>(config.key_phrase_cap));
    const auto prompts = instantiate_prompts(config.prompts, phrases);
    trace.rationales = generate_rationales(backend, prompts, problem.question, problem.images, config.max_decode_len,
                                           config.compose_question_first);
    const LinkWord link = config.link_words.empty() ? LinkWord{"Therefore"} : config.link_words.front();
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        if (trace.rationales[i].failed) trace.warnings.push_back("prompt " + std::to_string(prompts[i].index) + ": generation failed");
        trace.intermediates.push_back(form_intermediate(prompts[i], trace.rationales[i], link, problem.question));
    }
    auto thoughts = encode_thoughts(backend, trace.intermediates, problem.images, &trace.warnings);
    std::erase_if(thoughts, [&](const Thought& t) {
        if (t.rows.cols() == trace.base.rows.cols() && !t.rows.empty()) return false;
        trace.warnings.push_back("prompt " + std::to_string(*t.origin.prompt_index) + ": thought width mismatch");
        return true;
    });
    trace.scored = score_thoughts(std::move(thoughts), trace.base, config.pooling);
    return trace;
}

/// How a trace is turned into an answer.
struct FusionPlan {
    std::vector<std::size_t> selected;  // indices into ProblemTrace::scored, in fusion order
    Fusion method = Fusion::fid;
    bool include_base = true;
};

inline RunRecord resolve(const Backend& backend, const ProblemTrace& trace, const FusionPlan& plan,
                         const PipelineConfig& config) {
    RunRecord rec;
    rec.problem_id = trace.problem_id;
    rec.rationales = trace.rationales;
    rec.warnings = trace.warnings;
    for (const auto& s : trace.scored) {
        rec.thought_prompts.push_back(s.prompt_index);
        rec.similarities.push_back(s.similarity);
    }
    rec.selected_indices = plan.selected;
    if (trace.failure) {
        rec.failure = trace.failure;
        return rec;
    }
    std::vector<ScoredThought> chosen;
    for (auto i : plan.selected) {
        if (i >= trace.scored.size()) throw InputError("fusion plan index out of range");
        chosen.push_back(trace.scored[i]);
    }
    try {
        if (plan.method == Fusion::majority_vote) {
            if (chosen.empty()) {
                rec.warnings.push_back("majority vote with no thoughts; decoded the base thought");
                rec.answer = backend.decode(trace.base.rows, config.max_decode_len);
            } else {
                rec.answer = fuse_majority_vote(backend, chosen, config.max_decode_len);
            }
        } else {
            const auto fused = fuse_fid(trace.base, chosen, plan.include_base);
            rec.answer = backend.decode(fused.rows, config.max_decode_len);
        }
    } catch (const Error& e) {
        rec.failure = std::string("answering failed: ") + e.what();
        rec.answer.clear();
        return rec;
    }
    if (config.closed_vocab) rec.answer = restrict_to_vocab(rec.answer, *config.closed_vocab);
    return rec;
}

inline FusionPlan plan_for(const ProblemTrace& trace, const PipelineConfig& config) {
    std::vector<double> sims;
    for (const auto& s : trace.scored) sims.push_back(s.similarity);
    switch (config.mode) {
        case Mode::vanilla: return {{}, Fusion::fid, true};
        case Mode::cot: return {select(sims, SelectionPolicy::fixed(1)), Fusion::fid, false};
        case Mode::mor: break;
    }
    return {select(sims, config.selection), config.fusion, config.include_base_in_fusion};
}

inline RunRecord answer_problem(const Backend& backend, const Problem& problem, const PipelineConfig& config) {
    const auto trace = build_trace(backend, problem, config, config.mode != Mode::vanilla);
    return resolve(backend, trace, plan_for(trace, config), config);
}

}  // namespace mor
