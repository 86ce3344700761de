#pragma once

// Dataset I/O, batch evaluation and the analyses built on top of it: ablation ladder, k-sweep,
// rationale diversity, similarity curves and per-category breakdowns.

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <set>
#include <thread>

#include "mor/thought_engine.hpp"

namespace mor {

struct Dataset {
    std::string name;
    int d_img = 0;
    std::vector<Problem> problems;
};

// ---------------------------------------------------------------------------
// JSON conversion
// ---------------------------------------------------------------------------

inline json to_json(const Problem& p) {
    json images = json::array();
    for (const auto& img : p.images) images.push_back(img.features);
    json j = {{"id", p.id}, {"question", p.question}, {"images", images}, {"answers", p.gold_answers}};
    if (p.category) j["category"] = *p.category;
    return j;
}

inline json to_json(const RunRecord& r) {
    json rationales = json::array();
    for (const auto& x : r.rationales)
        rationales.push_back({{"prompt_index", x.prompt_index}, {"prompt_text", x.prompt_text}, {"text", x.text},
                              {"failed", x.failed}});
    json j = {{"problem_id", r.problem_id},
              {"rationales", rationales},
              {"thought_prompts", r.thought_prompts},
              {"similarities", r.similarities},
              {"selected_indices", r.selected_indices},
              {"answer", r.answer},
              {"warnings", r.warnings}};
    j["correct"] = r.correct ? json(*r.correct) : json(nullptr);
    if (r.failure) j["failure"] = *r.failure;
    return j;
}

inline json to_json(const RunResult& result, const PipelineConfig& config) {
    json records = json::array();
    for (const auto& r : result.records) records.push_back(to_json(r));
    json j = {{"config", to_json(config)}, {"accuracy_by_category", result.accuracy_by_category}, {"records", records}};
    if (result.accuracy_overall) j["accuracy_overall"] = *result.accuracy_overall;
    return j;
}

// ---------------------------------------------------------------------------
// Dataset I/O
// ---------------------------------------------------------------------------

namespace detail {

inline Problem problem_from_json(const json& j, const std::filesystem::path& base_dir, const std::string& where) {
    if (!j.is_object()) throw SchemaError(where + ": expected an object");
    Problem p;
    try {
        p.id = j.at("id").get<std::string>();
        p.question = j.at("question").get<std::string>();
        for (const auto& img : j.at("images")) {
            ImageInput in;
            if (img.is_object()) {
                auto file = img.at("file").get<std::string>();
                auto path = std::filesystem::path(file).is_absolute() ? std::filesystem::path(file) : base_dir / file;
                json feats;
                try {
                    feats = json::parse(read_file(path.string()));
                } catch (const json::parse_error& e) {
                    throw SchemaError(where + ": feature file " + path.string() + ": " + e.what());
                }
                in.features = feats.get<std::vector<double>>();
                in.source_label = file;
            } else {
                in.features = img.get<std::vector<double>>();
            }
            p.images.push_back(std::move(in));
        }
        if (j.contains("answers")) p.gold_answers = j["answers"].get<std::vector<std::string>>();
        if (j.contains("category") && !j["category"].is_null()) {
            const auto& c = j["category"];
            p.category = c.is_string() ? c.get<std::string>() : c.dump();
        }
    } catch (const json::exception& e) {
        throw SchemaError(where + ": " + e.what());
    }
    try {
        validate(p);
    } catch (const ValidationError& e) {
        throw ValidationError(where + "." + e.field(), e.what());
    }
    return p;
}

}  // namespace detail

inline void validate(const Dataset& d) {
    if (d.problems.empty()) throw ValidationError("dataset", "no problems");
    std::set<std::string> ids;
    for (std::size_t i = 0; i < d.problems.size(); ++i) {
        const auto& p = d.problems[i];
        if (!ids.insert(p.id).second) throw ValidationError("problems[" + std::to_string(i) + "].id", "duplicate id \"" + p.id + "\"");
        for (const auto& img : p.images)
            if (static_cast<int>(img.features.size()) != d.d_img)
                throw ValidationError("problems[" + std::to_string(i) + "].images",
                                      "image length " + std::to_string(img.features.size()) + " differs from " +
                                          std::to_string(d.d_img));
    }
}

inline Dataset parse_dataset(std::string_view text, const std::string& name,
                             const std::filesystem::path& base_dir = std::filesystem::current_path()) {
    Dataset d;
    d.name = name;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = name + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw SchemaError(where + ": " + e.what());
        }
        d.problems.push_back(detail::problem_from_json(j, base_dir, where));
        if (d.problems.size() == 1) d.d_img = static_cast<int>(d.problems.front().images.front().features.size());
        try {
            const auto& p = d.problems.back();
            for (const auto& img : p.images)
                if (static_cast<int>(img.features.size()) != d.d_img)
                    throw ValidationError("images", "length " + std::to_string(img.features.size()) +
                                                        " differs from the first problem (" + std::to_string(d.d_img) + ")");
        } catch (const ValidationError& e) {
            throw ValidationError(where + "." + e.field(), e.what());
        }
    }
    validate(d);
    return d;
}

inline Dataset load_dataset(const std::string& path) {
    const auto text = read_file(path);
    return parse_dataset(text, path, std::filesystem::path(path).parent_path());
}

inline std::string dataset_to_jsonl(const std::vector<Problem>& problems) {
    std::string out;
    for (const auto& p : problems) {
        out += to_json(p).dump();
        out += '\n';
    }
    return out;
}

inline void write_text(const std::string& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw InputError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on `jobs` threads. Results must be written to per-index slots.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    const auto workers = static_cast<std::size_t>(std::clamp(jobs, 1, 256));
    if (workers == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

/// Marks each record correct/incorrect against its problem and aggregates accuracies.
/// Failed problems count as incorrect.
inline RunResult score_records(std::vector<RunRecord> records, std::span<const Problem> problems) {
    RunResult result;
    std::size_t labelled = 0, correct = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> by_cat;  // correct, total
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto& r = records[i];
        const auto& p = problems[i];
        if (p.gold_answers.empty()) continue;
        const bool ok = !r.failure && match_answer(r.answer, p.gold_answers);
        r.correct = ok;
        ++labelled;
        correct += ok;
        if (p.category) {
            auto& c = by_cat[*p.category];
            c.first += ok;
            ++c.second;
        }
    }
    if (labelled > 0) result.accuracy_overall = 100.0 * static_cast<double>(correct) / static_cast<double>(labelled);
    for (const auto& [cat, c] : by_cat)
        result.accuracy_by_category[cat] = 100.0 * static_cast<double>(c.first) / static_cast<double>(c.second);
    result.records = std::move(records);
    return result;
}

inline RunResult evaluate(const Backend& backend, const Dataset& dataset, const PipelineConfig& config, int jobs = 1) {
    validate(config);
    std::vector<RunRecord> records(dataset.problems.size());
    parallel_for(records.size(), jobs,
                 [&](std::size_t i) { records[i] = answer_problem(backend, dataset.problems[i], config); });
    return score_records(std::move(records), dataset.problems);
}

inline std::vector<ProblemTrace> build_traces(const Backend& backend, const Dataset& dataset, PipelineConfig config,
                                              int jobs = 1) {
    config.mode = Mode::mor;
    validate(config);
    std::vector<ProblemTrace> traces(dataset.problems.size());
    parallel_for(traces.size(), jobs,
                 [&](std::size_t i) { traces[i] = build_trace(backend, dataset.problems[i], config, true); });
    return traces;
}

/// Applies one plan per problem and scores the result.
template <class PlanFn>
RunResult evaluate_traces(const Backend& backend, const Dataset& dataset, const std::vector<ProblemTrace>& traces,
                          const PipelineConfig& config, PlanFn&& plan, int jobs = 1) {
    std::vector<RunRecord> records(traces.size());
    parallel_for(records.size(), jobs, [&](std::size_t i) { records[i] = resolve(backend, traces[i], plan(traces[i]), config); });
    return score_records(std::move(records), dataset.problems);
}

inline std::map<std::string, double> category_breakdown(const RunResult& result) {
    std::map<std::string, double> out = result.accuracy_by_category;
    out["all"] = result.accuracy_overall.value_or(0.0);
    return out;
}

// ---------------------------------------------------------------------------
// Ablation ladder
// ---------------------------------------------------------------------------

enum class AblationFusion { none, mv, fid };

struct AblationRow {
    std::string label;
    bool cot = false;
    bool retrieval = false;
    AblationFusion fusion = AblationFusion::none;
    bool dynamic = false;
    double score = 0.0;
};

/// Prompt indices ordered by mean similarity across traces (descending, ties by lower index).
inline std::vector<int> rank_prompts_by_mean_similarity(const std::vector<ProblemTrace>& traces) {
    std::map<int, std::pair<double, std::size_t>> acc;
    for (const auto& t : traces)
        for (const auto& s : t.scored) {
            auto& a = acc[s.prompt_index];
            a.first += s.similarity;
            ++a.second;
        }
    std::vector<std::pair<int, double>> means;
    for (const auto& [idx, a] : acc) means.emplace_back(idx, a.first / static_cast<double>(a.second));
    std::stable_sort(means.begin(), means.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
    std::vector<int> out;
    for (const auto& m : means) out.push_back(m.first);
    return out;
}

namespace detail {

inline std::vector<std::size_t> pinned(const ProblemTrace& t, std::span<const int> prompts) {
    std::vector<double> sims;
    for (const auto& s : t.scored) sims.push_back(s.similarity);
    std::vector<std::size_t> out;
    for (auto i : rank_by_similarity(sims))
        if (std::find(prompts.begin(), prompts.end(), t.scored[i].prompt_index) != prompts.end()) out.push_back(i);
    return out;
}

}  // namespace detail

/// The six-row module ablation:
///   1 vanilla; 2 CoT on the predetermined best prompt; 3 majority vote over all thoughts;
///   4 FiD over the predetermined best two prompts; 5 FiD over the top-2 by similarity;
///   6 FiD with dynamic selection.
/// "Predetermined" prompts come from a calibration pass ranking prompts by mean similarity.
inline std::vector<AblationRow> ablation_grid(const Backend& backend, const Dataset& dataset,
                                              const PipelineConfig& base_config, int jobs = 1) {
    const auto traces = build_traces(backend, dataset, base_config, jobs);
    const auto ranked = rank_prompts_by_mean_similarity(traces);
    const std::vector<int> best1(ranked.begin(), ranked.begin() + static_cast<long>(std::min<std::size_t>(1, ranked.size())));
    const std::vector<int> best2(ranked.begin(), ranked.begin() + static_cast<long>(std::min<std::size_t>(2, ranked.size())));
    const bool include_base = base_config.include_base_in_fusion;
    const SelectionPolicy dynamic = base_config.selection.kind == SelectionPolicy::Kind::dynamic
                                        ? base_config.selection
                                        : SelectionPolicy::dynamic(0.95, 6);

    auto score = [&](auto plan) {
        return evaluate_traces(backend, dataset, traces, base_config, plan, jobs).accuracy_overall.value_or(0.0);
    };
    auto sims_of = [](const ProblemTrace& t) {
        std::vector<double> s;
        for (const auto& x : t.scored) s.push_back(x.similarity);
        return s;
    };

    std::vector<AblationRow> rows;
    rows.push_back({"vanilla", false, false, AblationFusion::none, false,
                    score([](const ProblemTrace&) { return FusionPlan{{}, Fusion::fid, true}; })});
    rows.push_back({"cot", true, false, AblationFusion::none, false, score([&](const ProblemTrace& t) {
                        return FusionPlan{detail::pinned(t, best1), Fusion::fid, false};
                    })});
    rows.push_back({"cot+mv", true, false, AblationFusion::mv, false, score([&](const ProblemTrace& t) {
                        return FusionPlan{rank_by_similarity(sims_of(t)), Fusion::majority_vote, false};
                    })});
    rows.push_back({"cot+fid", true, false, AblationFusion::fid, false, score([&](const ProblemTrace& t) {
                        return FusionPlan{detail::pinned(t, best2), Fusion::fid, include_base};
                    })});
    rows.push_back({"cot+fid+retrieval", true, true, AblationFusion::fid, false, score([&](const ProblemTrace& t) {
                        return FusionPlan{select(sims_of(t), SelectionPolicy::fixed(2)), Fusion::fid, include_base};
                    })});
    rows.push_back({"cot+fid+retrieval+dynamic", true, true, AblationFusion::fid, true, score([&](const ProblemTrace& t) {
                        return FusionPlan{select(sims_of(t), dynamic), Fusion::fid, include_base};
                    })});
    return rows;
}

// ---------------------------------------------------------------------------
// k-sweep
// ---------------------------------------------------------------------------

inline std::vector<std::pair<int, double>> k_sweep(const Backend& backend, const Dataset& dataset,
                                                   const PipelineConfig& config, std::span<const int> k_values,
                                                   int jobs = 1) {
    if (k_values.empty()) throw InputError("k_sweep: empty k list");
    for (int k : k_values)
        if (k < 1) throw InputError("k_sweep: k must be >= 1, got " + std::to_string(k));
    const auto traces = build_traces(backend, dataset, config, jobs);
    std::vector<std::pair<int, double>> out;
    for (int k : k_values) {
        PipelineConfig c = config;
        c.mode = Mode::mor;
        c.selection = SelectionPolicy::fixed(k);
        auto result = evaluate_traces(backend, dataset, traces, c, [&](const ProblemTrace& t) { return plan_for(t, c); }, jobs);
        out.emplace_back(k, result.accuracy_overall.value_or(0.0));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Similarity analyses
// ---------------------------------------------------------------------------

using SquareMatrix = std::vector<std::vector<double>>;

/// Pairwise cosine of pooled text-only encodings. Unencodable texts pool to the zero vector.
inline SquareMatrix diversity_matrix(const Backend& backend, std::span<const std::string> texts,
                                     Pooling pooling = Pooling::mean) {
    if (texts.empty()) throw InputError("diversity_matrix: no texts");
    std::vector<std::vector<double>> pooled;
    const auto dim = static_cast<std::size_t>(backend.info().dim);
    for (const auto& t : texts) {
        try {
            pooled.push_back(pool(backend.encode(t, {}), pooling));
        } catch (const InputError&) {
            pooled.emplace_back(dim, 0.0);
        }
    }
    const std::size_t n = texts.size();
    SquareMatrix m(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        m[i][i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) m[i][j] = m[j][i] = cosine(pooled[i], pooled[j]);
    }
    return m;
}

struct GroupContrast {
    double intra = 0.0;  // mean over pairs inside the labelled group
    double cross = 0.0;  // mean over (group, non-group) pairs
    std::size_t intra_pairs = 0;
    std::size_t cross_pairs = 0;
};

inline GroupContrast group_contrast(const SquareMatrix& m, const std::vector<bool>& in_group) {
    GroupContrast g;
    for (std::size_t i = 0; i < m.size(); ++i)
        for (std::size_t j = i + 1; j < m.size(); ++j) {
            if (in_group[i] && in_group[j]) {
                g.intra += m[i][j];
                ++g.intra_pairs;
            } else if (in_group[i] != in_group[j]) {
                g.cross += m[i][j];
                ++g.cross_pairs;
            }
        }
    if (g.intra_pairs) g.intra /= static_cast<double>(g.intra_pairs);
    if (g.cross_pairs) g.cross /= static_cast<double>(g.cross_pairs);
    return g;
}

struct SimilarityCurve {
    std::vector<double> per_rationale;
    std::vector<double> mean_pooled;  // cosine of the running mean of pooled thoughts 0..i
};

inline SimilarityCurve similarity_curve(const Backend& backend, const Problem& problem,
                                        std::span<const IntermediateRationale> intermediates_ranked,
                                        Pooling pooling = Pooling::mean) {
    SimilarityCurve curve;
    const auto base = pool(encode_base(backend, problem), pooling);
    std::vector<double> running(base.size(), 0.0);
    for (std::size_t i = 0; i < intermediates_ranked.size(); ++i) {
        std::vector<double> v(base.size(), 0.0);
        try {
            v = pool(backend.encode(intermediates_ranked[i].full_text, problem.images), pooling);
        } catch (const Error&) {
        }
        for (std::size_t c = 0; c < v.size(); ++c) running[c] += v[c];
        std::vector<double> mean(running);
        for (double& x : mean) x /= static_cast<double>(i + 1);
        curve.per_rationale.push_back(cosine(v, base));
        curve.mean_pooled.push_back(cosine(mean, base));
    }
    return curve;
}

/// Intermediates of a trace that produced a thought, ranked by that thought's similarity.
inline std::vector<IntermediateRationale> ranked_intermediates(const ProblemTrace& t) {
    std::vector<double> sims;
    for (const auto& s : t.scored) sims.push_back(s.similarity);
    std::vector<IntermediateRationale> out;
    for (auto i : rank_by_similarity(sims))
        for (const auto& im : t.intermediates)
            if (im.prompt_index == t.scored[i].prompt_index) {
                out.push_back(im);
                break;
            }
    return out;
}

/// Element-wise mean of per-problem matrices indexed by prompt position; cells average over the
/// problems that have both positions.
inline SquareMatrix dataset_diversity(const Backend& backend, const Dataset& dataset, const PipelineConfig& config,
                                      int jobs = 1) {
    std::vector<SquareMatrix> per(dataset.problems.size());
    parallel_for(per.size(), jobs, [&](std::size_t i) {
        const auto& p = dataset.problems[i];
        const auto prompts = instantiate_prompts(config.prompts, extract_key_phrases(p.question, static_cast<std::size_t>(config.key_phrase_cap)));
        const auto rationales = generate_rationales(backend, prompts, p.question, p.images, config.max_decode_len,
                                                    config.compose_question_first);
        std::vector<std::string> texts;
        for (const auto& r : rationales) texts.push_back(r.text);
        if (!texts.empty()) per[i] = diversity_matrix(backend, texts, config.pooling);
    });
    std::size_t n = 0;
    for (const auto& m : per) n = std::max(n, m.size());
    SquareMatrix sum(n, std::vector<double>(n, 0.0));
    std::vector<std::vector<std::size_t>> count(n, std::vector<std::size_t>(n, 0));
    for (const auto& m : per)
        for (std::size_t i = 0; i < m.size(); ++i)
            for (std::size_t j = 0; j < m.size(); ++j) {
                sum[i][j] += m[i][j];
                ++count[i][j];
            }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) sum[i][j] = i == j ? 1.0 : count[i][j] ? sum[i][j] / static_cast<double>(count[i][j]) : 0.0;
    return sum;
}

/// Position-wise mean of per-problem similarity curves.
inline SimilarityCurve dataset_curve(const Backend& backend, const Dataset& dataset, const PipelineConfig& config,
                                     int jobs = 1) {
    const auto traces = build_traces(backend, dataset, config, jobs);
    std::vector<SimilarityCurve> per(traces.size());
    parallel_for(per.size(), jobs, [&](std::size_t i) {
        if (traces[i].failure) return;
        per[i] = similarity_curve(backend, dataset.problems[i], ranked_intermediates(traces[i]), config.pooling);
    });
    SimilarityCurve out;
    std::vector<std::size_t> count;
    for (const auto& c : per) {
        if (c.per_rationale.size() > out.per_rationale.size()) {
            out.per_rationale.resize(c.per_rationale.size(), 0.0);
            out.mean_pooled.resize(c.per_rationale.size(), 0.0);
            count.resize(c.per_rationale.size(), 0);
        }
        for (std::size_t i = 0; i < c.per_rationale.size(); ++i) {
            out.per_rationale[i] += c.per_rationale[i];
            out.mean_pooled[i] += c.mean_pooled[i];
            ++count[i];
        }
    }
    for (std::size_t i = 0; i < count.size(); ++i) {
        out.per_rationale[i] /= static_cast<double>(count[i]);
        out.mean_pooled[i] /= static_cast<double>(count[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string diversity_csv(const SquareMatrix& m) {
    std::string out = "index";
    for (std::size_t j = 0; j < m.size(); ++j) out += "," + std::to_string(j);
    out += '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        out += std::to_string(i);
        for (double v : m[i]) out += "," + format_number(v);
        out += '\n';
    }
    return out;
}

inline std::string curve_csv(const SimilarityCurve& c) {
    std::string out = "index,per_rationale,mean_pooled\n";
    for (std::size_t i = 0; i < c.per_rationale.size(); ++i)
        out += std::to_string(i) + "," + format_number(c.per_rationale[i]) + "," + format_number(c.mean_pooled[i]) + "\n";
    return out;
}

inline std::string sweep_csv(const std::vector<std::pair<int, double>>& rows) {
    std::string out = "k,score\n";
    for (const auto& [k, s] : rows) out += std::to_string(k) + "," + format_number(s) + "\n";
    return out;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "row,score\n";
    for (const auto& r : rows) out += r.label + "," + format_number(r.score) + "\n";
    return out;
}

}  // namespace mor
