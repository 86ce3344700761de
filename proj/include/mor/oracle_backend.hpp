#pragma once

// Synthetic encoder-decoder whose behaviour is fixed by construction, so that pipeline accuracy
// orderings can be checked without a pretrained model.
//
// Each problem hides an answer of `a` aspect tokens (1 <= a <= num_aspects) inside its image
// features, together with the role of every triggering cue for that problem:
//   relevant to slot j -> generate() reveals that slot's token; the intermediate's thought has
//                         pooled cosine in [0.96, 0.99] to the base thought and carries the slot
//                         evidence
//   distractor         -> generate() emits a per-cue noise token; the thought has cosine < 0.08
//                         and decodes to that noise token
// The base thought (question + image, no cue) carries no evidence, so it decodes to "unknown".
// decode() scans every fused row: slot evidence is emitted in slot order, followed by the noise
// tokens of any distractor rows. A fusion is therefore correct iff it covers all slots and holds
// no distractor.
//
// Embedding coordinates (dim = max(8, 3 + A*V + P + V)):
//   0                    problem axis
//   1 + j*V + v          evidence "slot j has value v"
//   1 + A*V + c          noise of cue c
//   1 + A*V + P          blank (cue seen, no rationale)
//   2 + A*V + P          text axis (text-only encoding of a value token)
//   3 + A*V + P + v      text value v
//
// Image feature layout (d_img = 2 + A + 2P):
//   [0] serial, [1] a, [2 + j] value of slot j (-1 unused), [2 + A + 2c] role of cue c (-1 distractor,
//   else slot), [3 + A + 2c] similarity target of cue c.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <utility>

#include "mor/backend.hpp"

namespace mor {

inline std::vector<std::string> default_aspect_vocab() {
    return {"red",    "blue",   "green",  "yellow", "purple", "orange", "wooden", "metal",
            "glass",  "plastic", "round", "square", "striped", "dotted", "tall",  "short",
            "heavy",  "light",  "shiny",  "matte",  "soft",   "rough",  "frozen", "ancient"};
}

inline std::vector<std::string> default_oracle_cues() {
    std::vector<std::string> out;
    for (const auto& p : default_prompts()) out.push_back(p.templ);
    return out;
}

struct OracleTaskSpec {
    int num_aspects = 3;
    std::vector<std::string> aspect_vocab = default_aspect_vocab();
    double distractor_ratio = 0.75;
    std::uint64_t seed = 7;
    std::vector<std::string> cues = default_oracle_cues();
};

inline json to_json(const OracleTaskSpec& s) {
    return {{"num_aspects", s.num_aspects},
            {"aspect_vocab", s.aspect_vocab},
            {"distractor_ratio", s.distractor_ratio},
            {"seed", s.seed},
            {"cues", s.cues}};
}

inline OracleTaskSpec oracle_spec_from_json(const json& j) {
    OracleTaskSpec s;
    try {
        if (j.contains("num_aspects")) s.num_aspects = j.at("num_aspects").get<int>();
        if (j.contains("aspect_vocab")) s.aspect_vocab = j.at("aspect_vocab").get<std::vector<std::string>>();
        if (j.contains("distractor_ratio")) s.distractor_ratio = j.at("distractor_ratio").get<double>();
        if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("cues")) s.cues = j.at("cues").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("oracle spec: ") + e.what());
    }
    return s;
}

inline void validate(const OracleTaskSpec& s) {
    if (s.num_aspects < 1 || s.num_aspects > 8) throw ValidationError("num_aspects", "must lie in 1..8");
    if (static_cast<int>(s.aspect_vocab.size()) < s.num_aspects)
        throw ValidationError("aspect_vocab", "needs at least num_aspects tokens");
    if (!(s.distractor_ratio >= 0.0 && s.distractor_ratio <= 1.0))
        throw ValidationError("distractor_ratio", "must lie in [0, 1]");
    if (s.cues.empty()) throw ValidationError("cues", "must be non-empty");
    if (static_cast<int>(s.cues.size()) < s.num_aspects)
        throw ValidationError("cues", "need at least num_aspects cues");
    for (const auto& c : s.cues)
        if (tokenize(c).empty()) throw ValidationError("cues", "cue without tokens");
    std::vector<std::string> seen;
    for (const auto& v : s.aspect_vocab) {
        auto toks = tokenize(v);
        if (toks.size() != 1 || toks[0] != v)
            throw ValidationError("aspect_vocab", "\"" + v + "\" is not a single lowercase token");
        if (normalize_answer(v) != v) throw ValidationError("aspect_vocab", "\"" + v + "\" is not normalized");
        if (v == "unknown" || v.rfind("noise", 0) == 0)
            throw ValidationError("aspect_vocab", "\"" + v + "\" is reserved");
        if (std::find(seen.begin(), seen.end(), v) != seen.end())
            throw ValidationError("aspect_vocab", "duplicate token \"" + v + "\"");
        seen.push_back(v);
    }
}

/// Decoded view of an oracle image.
struct OracleLayout {
    int serial = 0;
    int aspects = 0;
    std::vector<int> values;  // per slot, -1 when unused
    std::vector<int> roles;   // per cue, -1 distractor
    std::vector<double> similarity;
};

class OracleBackend final : public Backend {
public:
    static constexpr double kRelevantLow = 0.96;
    static constexpr double kRelevantHigh = 0.99;
    static constexpr double kDistractorHigh = 0.08;
    static constexpr double kBlankSimilarity = 0.05;
    static constexpr double kEvidenceThreshold = 0.1;
    static constexpr double kTextAxisWeight = 0.9;

    explicit OracleBackend(OracleTaskSpec spec) : spec_(std::move(spec)) {
        validate(spec_);
        A_ = static_cast<std::size_t>(spec_.num_aspects);
        V_ = spec_.aspect_vocab.size();
        P_ = spec_.cues.size();
        dim_ = std::max<std::size_t>(8, 3 + A_ * V_ + P_ + V_);
        for (const auto& c : spec_.cues) {
            auto toks = tokenize(c.substr(0, c.find(kObjectPlaceholder)));
            cue_tokens_.push_back(std::move(toks));
        }
    }

    const OracleTaskSpec& spec() const { return spec_; }
    int d_img() const { return static_cast<int>(2 + A_ + 2 * P_); }

    BackendInfo info() const override {
        return {"oracle", static_cast<int>(dim_), d_img(), static_cast<int>(V_ + P_ + 2), 4096};
    }

    static std::string noise_token(std::size_t cue) { return "noise" + std::to_string(cue); }

    OracleLayout parse(const ImageInput& img) const {
        const auto& f = img.features;
        if (f.size() != static_cast<std::size_t>(d_img())) throw InputError("oracle: image dimension mismatch");
        auto as_int = [&](double v) {
            if (v != std::floor(v)) throw InputError("oracle: image is not an oracle encoding");
            return static_cast<int>(v);
        };
        OracleLayout l;
        l.serial = as_int(f[0]);
        l.aspects = as_int(f[1]);
        if (l.aspects < 1 || l.aspects > static_cast<int>(A_)) throw InputError("oracle: bad aspect count");
        for (std::size_t j = 0; j < A_; ++j) {
            int v = as_int(f[2 + j]);
            bool used = static_cast<int>(j) < l.aspects;
            if (used ? (v < 0 || v >= static_cast<int>(V_)) : v != -1) throw InputError("oracle: bad slot value");
            l.values.push_back(v);
        }
        for (std::size_t c = 0; c < P_; ++c) {
            int role = as_int(f[2 + A_ + 2 * c]);
            double s = f[3 + A_ + 2 * c];
            if (role < -1 || role >= l.aspects || !(s >= 0.0 && s <= 1.0)) throw InputError("oracle: bad cue record");
            l.roles.push_back(role);
            l.similarity.push_back(s);
        }
        return l;
    }

    std::string answer_for(const OracleLayout& l) const {
        std::vector<std::string> parts;
        for (int j = 0; j < l.aspects; ++j) parts.push_back(spec_.aspect_vocab[static_cast<std::size_t>(l.values[j])]);
        return join(parts);
    }

    /// Longest cue whose tokens occur contiguously in `tokens`; ties go to the lower cue index.
    std::optional<std::size_t> find_cue(const std::vector<std::string>& tokens) const {
        std::optional<std::size_t> best;
        for (std::size_t c = 0; c < P_; ++c) {
            const auto& cue = cue_tokens_[c];
            if (cue.empty() || cue.size() > tokens.size()) continue;
            if (best && cue_tokens_[*best].size() >= cue.size()) continue;
            for (std::size_t i = 0; i + cue.size() <= tokens.size(); ++i) {
                if (std::equal(cue.begin(), cue.end(), tokens.begin() + static_cast<long>(i))) {
                    best = c;
                    break;
                }
            }
        }
        return best;
    }

    std::string generate(std::string_view prompt, std::span<const ImageInput> images, int max_len) const override {
        detail::check_max_len(max_len);
        detail::check_inputs(prompt, images, d_img());
        if (images.empty()) return {};
        const auto layout = parse(images.front());
        const auto cue = find_cue(tokenize(prompt));
        if (!cue) return {};
        const int role = layout.roles[*cue];
        if (role < 0) return noise_token(*cue);
        return spec_.aspect_vocab[static_cast<std::size_t>(layout.values[static_cast<std::size_t>(role)])];
    }

    Matrix encode(std::string_view text, std::span<const ImageInput> images) const override {
        detail::check_inputs(text, images, d_img());
        const auto tokens = tokenize(text);
        if (images.empty()) return encode_text_only(tokens);

        const auto layout = parse(images.front());
        std::vector<double> row(dim_, 0.0);
        const auto cue = find_cue(tokens);
        if (!cue) {
            row[kProblemAxis] = 1.0;
        } else {
            const int role = layout.roles[*cue];
            const double s = layout.similarity[*cue];
            const double orth = std::sqrt(std::max(0.0, 1.0 - s * s));
            bool evidence = false;
            if (role >= 0) {
                const auto value = static_cast<std::size_t>(layout.values[static_cast<std::size_t>(role)]);
                if (contains(tokens, spec_.aspect_vocab[value])) {
                    row[kProblemAxis] = s;
                    row[evidence_coord(static_cast<std::size_t>(role), value)] = orth;
                    evidence = true;
                }
            } else if (contains(tokens, noise_token(*cue))) {
                row[kProblemAxis] = s;
                row[noise_coord(*cue)] = orth;
                evidence = true;
            }
            if (!evidence) {
                row[kProblemAxis] = kBlankSimilarity;
                row[blank_coord()] = std::sqrt(1.0 - kBlankSimilarity * kBlankSimilarity);
            }
        }
        Matrix out(0, dim_);
        const std::size_t length = tokens.size() + images.size();
        for (std::size_t r = 0; r < length; ++r) out.push_row(row);
        return out;
    }

    std::string decode(const Matrix& fused, int max_len) const override {
        detail::check_max_len(max_len);
        if (fused.empty()) throw InputError("oracle decode: empty matrix");
        if (fused.cols() != dim_)
            throw InputError("oracle decode: width " + std::to_string(fused.cols()) + " != dim " + std::to_string(dim_));
        std::vector<std::vector<std::size_t>> slot_values(A_);
        std::vector<std::size_t> noise;
        for (std::size_t r = 0; r < fused.rows(); ++r) {
            auto row = fused.row(r);
            for (std::size_t j = 0; j < A_; ++j)
                for (std::size_t v = 0; v < V_; ++v)
                    if (row[evidence_coord(j, v)] > kEvidenceThreshold) push_unique(slot_values[j], v);
            for (std::size_t c = 0; c < P_; ++c)
                if (row[noise_coord(c)] > kEvidenceThreshold) push_unique(noise, c);
        }
        std::vector<std::string> out;
        for (const auto& values : slot_values)
            for (auto v : values) out.push_back(spec_.aspect_vocab[v]);
        for (auto c : noise) out.push_back(noise_token(c));
        if (out.empty()) out.emplace_back("unknown");
        if (out.size() > static_cast<std::size_t>(max_len)) out.resize(static_cast<std::size_t>(max_len));
        return join(out);
    }

private:
    static constexpr std::size_t kProblemAxis = 0;
    std::size_t evidence_coord(std::size_t slot, std::size_t value) const { return 1 + slot * V_ + value; }
    std::size_t noise_coord(std::size_t cue) const { return 1 + A_ * V_ + cue; }
    std::size_t blank_coord() const { return 1 + A_ * V_ + P_; }
    std::size_t text_axis_coord() const { return 2 + A_ * V_ + P_; }
    std::size_t text_value_coord(std::size_t v) const { return 3 + A_ * V_ + P_ + v; }

    static bool contains(const std::vector<std::string>& tokens, const std::string& t) {
        return std::find(tokens.begin(), tokens.end(), t) != tokens.end();
    }
    static void push_unique(std::vector<std::size_t>& v, std::size_t x) {
        if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
    }

    Matrix encode_text_only(const std::vector<std::string>& tokens) const {
        Matrix out(0, dim_);
        for (const auto& t : tokens) {
            std::vector<double> row(dim_, 0.0);
            auto it = std::find(spec_.aspect_vocab.begin(), spec_.aspect_vocab.end(), t);
            std::optional<std::size_t> noise;
            for (std::size_t c = 0; c < P_ && !noise; ++c)
                if (t == noise_token(c)) noise = c;
            if (it != spec_.aspect_vocab.end()) {
                row[text_axis_coord()] = kTextAxisWeight;
                row[text_value_coord(static_cast<std::size_t>(it - spec_.aspect_vocab.begin()))] =
                    std::sqrt(1.0 - kTextAxisWeight * kTextAxisWeight);
            } else if (noise) {
                row[noise_coord(*noise)] = 1.0;
            } else {
                row[blank_coord()] = 1.0;
            }
            out.push_row(row);
        }
        return out;
    }

    OracleTaskSpec spec_;
    std::size_t A_ = 0, V_ = 0, P_ = 0, dim_ = 0;
    std::vector<std::vector<std::string>> cue_tokens_;
};

/// Deterministic problem source paired with an OracleBackend.
///
/// Problems follow a 10-slot schedule (permuted per block of 10): three single-aspect problems (two
/// where both "favoured" cues are relevant, one where neither is), three two-aspect problems and
/// four full-aspect problems. The two favoured cues are relevant far more often than any other,
/// which is what a calibration pass over mean similarity discovers.
class OracleProblemGenerator {
public:
    explicit OracleProblemGenerator(OracleTaskSpec spec) : spec_(std::move(spec)) {
        validate(spec_);
        const std::size_t P = spec_.cues.size();
        const auto distractors = static_cast<std::size_t>(std::llround(spec_.distractor_ratio * static_cast<double>(P)));
        relevant_count_ = std::max<std::size_t>(static_cast<std::size_t>(spec_.num_aspects), P - std::min(P, distractors));
        detail::StableRng rng(detail::mix64(spec_.seed) ^ 0xfa7001ULL);
        std::vector<std::size_t> cues(P);
        for (std::size_t c = 0; c < P; ++c) cues[c] = c;
        rng.shuffle(cues);
        favoured_ = {cues[0], P > 1 ? cues[1] : cues[0]};
    }

    const OracleTaskSpec& spec() const { return spec_; }
    std::size_t relevant_count() const { return relevant_count_; }
    std::pair<std::size_t, std::size_t> favoured_cues() const { return favoured_; }

    Problem problem(std::size_t i) const {
        const std::size_t A = static_cast<std::size_t>(spec_.num_aspects);
        const std::size_t P = spec_.cues.size();
        const std::size_t V = spec_.aspect_vocab.size();

        detail::StableRng block_rng(detail::mix64(spec_.seed * 1000003ULL + i / 10 + 1));
        std::vector<int> schedule = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
        block_rng.shuffle(schedule);
        const int type = schedule[i % 10];

        detail::StableRng rng(detail::mix64(spec_.seed) ^ detail::mix64(i + 0x51ULL));
        const std::size_t aspects = type <= 2 ? 1 : type <= 5 ? std::min<std::size_t>(2, A) : A;

        const auto [f1, f2] = favoured_;
        std::vector<std::size_t> others;
        for (std::size_t c = 0; c < P; ++c)
            if (c != f1 && c != f2) others.push_back(c);
        rng.shuffle(others);

        // Relevant cues in descending-similarity order, and their slots (-1 = pick later).
        std::vector<std::size_t> order;
        std::vector<int> slot;
        auto add = [&](std::size_t c, int s) {
            if (std::find(order.begin(), order.end(), c) == order.end()) {
                order.push_back(c);
                slot.push_back(s);
            }
        };
        auto add_others = [&] {
            for (auto c : others) add(c, -1);
            add(f2, -1);
            add(f1, -1);
        };
        const int second = aspects > 1 ? 1 : 0;
        switch (type) {
            case 0:
            case 1:
                add(f1, 0), add(f2, 0), add_others();
                break;
            case 2:
                add_others();
                break;
            case 3:
                add(f1, 0), add(f2, second), add_others();
                break;
            case 4:
                add(f1, 0);
                if (!others.empty()) add(others[0], second);
                add(f2, second), add_others();
                break;
            case 5:
                add(f1, 0);
                if (!others.empty()) add(others[0], second);
                add(f2, 0), add_others();
                break;
            default: {
                add(f1, 0), add(f2, second);
                for (std::size_t k = 0; k < others.size(); ++k) add(others[k], -1);
                break;
            }
        }
        order.resize(relevant_count_);
        slot.resize(relevant_count_);
        if (type >= 6) {
            // full-aspect problems: random similarity ranking
            std::vector<std::size_t> perm(order.size());
            for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = k;
            rng.shuffle(perm);
            std::vector<std::size_t> o2;
            std::vector<int> s2;
            for (auto k : perm) o2.push_back(order[k]), s2.push_back(slot[k]);
            order = std::move(o2);
            slot = std::move(s2);
        }
        assign_slots(slot, aspects, rng);

        std::vector<double> sims(order.size());
        for (auto& s : sims) s = rng.uniform(OracleBackend::kRelevantLow, OracleBackend::kRelevantHigh);
        std::sort(sims.begin(), sims.end(), std::greater<>());

        std::vector<std::size_t> values(V);
        for (std::size_t v = 0; v < V; ++v) values[v] = v;
        rng.shuffle(values);

        std::vector<double> f(2 + A + 2 * P, 0.0);
        f[0] = static_cast<double>(i);
        f[1] = static_cast<double>(aspects);
        for (std::size_t j = 0; j < A; ++j) f[2 + j] = j < aspects ? static_cast<double>(values[j]) : -1.0;
        for (std::size_t c = 0; c < P; ++c) {
            f[2 + A + 2 * c] = -1.0;
            f[3 + A + 2 * c] = rng.uniform(0.0, OracleBackend::kDistractorHigh);
        }
        for (std::size_t k = 0; k < order.size(); ++k) {
            f[2 + A + 2 * order[k]] = static_cast<double>(slot[k]);
            f[3 + A + 2 * order[k]] = sims[k];
        }

        Problem p;
        char id[32];
        std::snprintf(id, sizeof id, "oracle-%05zu", i);
        p.id = id;
        p.question = "which hidden attributes does item " + std::to_string(i) + " have?";
        p.images.push_back({std::move(f), std::nullopt});
        std::vector<std::string> answer;
        for (std::size_t j = 0; j < aspects; ++j) answer.push_back(spec_.aspect_vocab[values[j]]);
        p.gold_answers.push_back(join(answer));
        p.category = std::to_string(aspects);
        return p;
    }

    std::vector<Problem> problems(std::size_t count) const {
        std::vector<Problem> out;
        out.reserve(count);
        for (std::size_t i = 0; i < count; ++i) out.push_back(problem(i));
        return out;
    }

private:
    // Fills unassigned slots so that every slot in [0, aspects) is covered.
    static void assign_slots(std::vector<int>& slot, std::size_t aspects, detail::StableRng& rng) {
        const int a = static_cast<int>(aspects);
        for (int s = 0; s < a; ++s) {
            if (std::find(slot.begin(), slot.end(), s) != slot.end()) continue;
            auto free = std::find(slot.begin(), slot.end(), -1);
            if (free != slot.end()) {
                *free = s;
                continue;
            }
            // steal from a slot that is covered twice, scanning from the lowest-similarity end
            for (auto it = slot.rbegin(); it != slot.rend(); ++it) {
                if (std::count(slot.begin(), slot.end(), *it) > 1) {
                    *it = s;
                    break;
                }
            }
        }
        for (auto& s : slot)
            if (s < 0) s = static_cast<int>(rng.below(aspects));
    }

    OracleTaskSpec spec_;
    std::size_t relevant_count_ = 0;
    std::pair<std::size_t, std::size_t> favoured_{0, 0};
};

inline std::pair<std::shared_ptr<const OracleBackend>, OracleProblemGenerator> make_oracle_backend(OracleTaskSpec spec) {
    auto backend = std::make_shared<const OracleBackend>(spec);
    return {std::move(backend), OracleProblemGenerator(std::move(spec))};
}

}  // namespace mor
