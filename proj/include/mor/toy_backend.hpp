#pragma once

// A small deterministic encoder-decoder used for determinism, shape and mode-identity checks.
//
//   encode: one row per token (token embedding + mix * mean image patch), then the image patches.
//           Each image's feature vector is cut into ceil(d_img / dim) chunks, zero-padded to dim.
//   decode: greedy; step query = mean(fused rows) + transition * mean(embeddings generated so far),
//           next token = argmax over the vocabulary of <query, embedding>; stops at </s>.
//   generate = decode(encode(prompt, images)).

#include <algorithm>
#include <limits>
#include <unordered_map>

#include "mor/backend.hpp"

namespace mor {

inline std::vector<std::string> default_toy_vocab() {
    return {"</s>",  "<unk>", "yes",   "no",    "one",    "two",    "three", "four",   "red",    "blue",
            "green", "white", "black", "brown", "yellow", "dog",    "dogs",  "cat",    "bird",   "man",
            "woman", "child", "car",   "bus",   "train",  "boat",   "tree",  "grass",  "water",  "sky",
            "left",  "right", "image", "both",  "there",  "is",     "are",   "in",     "on",     "of",
            "a",     "the",   "and",   "with",  "wearing", "hat",   "shirt", "scarf",  "scarves", "pant",
            "legs",  "warm",  "cold",  "young", "old",    "big",    "small", "table",  "food",   "pizza",
            "ball",  "game",  "sport", "phone", "computer", "street", "sign", "snow",   "rain",   "sunny",
            "think", "step",  "by",    "let's", "consider", "what",  "scenario", "about", "ponder", "reflect",
            "brainstorm", "do", "you", "contemplate", "first", "hi", "caption", "therefore", "then",
            "consequently", "at", "least", "than", "lower", "hangs", "see", "against", "clearly", "it"};
}

class ToyBackend final : public Backend {
public:
    ToyBackend(std::uint64_t seed, int dim, std::vector<std::string> vocab, int d_img)
        : dim_(dim), d_img_(d_img), vocab_(std::move(vocab)) {
        if (dim < 8) throw InputError("toy backend: dim must be >= 8, got " + std::to_string(dim));
        if (d_img < 1) throw InputError("toy backend: d_img must be >= 1");
        if (vocab_.size() < 2) throw InputError("toy backend: vocabulary needs at least 2 entries");
        if (std::find(vocab_.begin(), vocab_.end(), kEosToken) == vocab_.end())
            throw InputError("toy backend: vocabulary must contain " + std::string(kEosToken));
        if (std::find(vocab_.begin(), vocab_.end(), kUnkToken) == vocab_.end()) vocab_.emplace_back(kUnkToken);
        for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], i);
        eos_ = index_.at(std::string(kEosToken));
        unk_ = index_.at(std::string(kUnkToken));

        detail::StableRng rng(seed);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
        embeddings_ = Matrix(vocab_.size(), static_cast<std::size_t>(dim));
        for (std::size_t r = 0; r < embeddings_.rows(); ++r)
            for (double& v : embeddings_.row(r)) v = rng.uniform(-1.0, 1.0);
        image_mix_ = random_square(rng, scale);
        transition_ = random_square(rng, scale);
    }

    BackendInfo info() const override {
        return {"toy", dim_, d_img_, static_cast<int>(vocab_.size()), 4096};
    }

    Matrix encode(std::string_view text, std::span<const ImageInput> images) const override {
        detail::check_inputs(text, images, d_img_);
        const auto d = static_cast<std::size_t>(dim_);
        Matrix patches(0, d);
        for (const auto& img : images) {
            const std::size_t chunks = (img.features.size() + d - 1) / d;
            for (std::size_t c = 0; c < chunks; ++c) {
                std::vector<double> row(d, 0.0);
                const std::size_t begin = c * d;
                const std::size_t end = std::min(begin + d, img.features.size());
                std::copy(img.features.begin() + static_cast<long>(begin), img.features.begin() + static_cast<long>(end),
                          row.begin());
                patches.push_row(row);
            }
        }
        std::vector<double> image_bias(d, 0.0);
        if (!patches.empty()) image_bias = mat_vec(image_mix_, column_mean(patches));

        Matrix out(0, d);
        for (const auto& tok : tokenize(text)) {
            auto e = embeddings_.row(token_id(tok));
            std::vector<double> row(d);
            for (std::size_t i = 0; i < d; ++i) row[i] = e[i] + image_bias[i];
            out.push_row(row);
        }
        out.append(patches);
        return out;
    }

    std::string generate(std::string_view prompt, std::span<const ImageInput> images, int max_len) const override {
        detail::check_max_len(max_len);
        return decode(encode(prompt, images), max_len);
    }

    std::string decode(const Matrix& fused, int max_len) const override {
        detail::check_max_len(max_len);
        if (fused.empty()) throw InputError("toy decode: empty matrix");
        if (fused.cols() != static_cast<std::size_t>(dim_))
            throw InputError("toy decode: width " + std::to_string(fused.cols()) + " != dim " + std::to_string(dim_));
        const auto d = static_cast<std::size_t>(dim_);
        const std::vector<double> context = column_mean(fused);
        std::vector<double> prefix_sum(d, 0.0);
        std::vector<std::string> out;
        for (int step = 0; step < max_len; ++step) {
            std::vector<double> query = context;
            if (!out.empty()) {
                std::vector<double> prefix_mean(d);
                for (std::size_t i = 0; i < d; ++i) prefix_mean[i] = prefix_sum[i] / static_cast<double>(out.size());
                const auto shifted = mat_vec(transition_, prefix_mean);
                for (std::size_t i = 0; i < d; ++i) query[i] += shifted[i];
            }
            std::size_t best = eos_;
            double best_score = -std::numeric_limits<double>::infinity();
            for (std::size_t t = 0; t < vocab_.size(); ++t) {
                if (t == unk_) continue;
                auto e = embeddings_.row(t);
                double s = 0.0;
                for (std::size_t i = 0; i < d; ++i) s += query[i] * e[i];
                if (s > best_score) {
                    best_score = s;
                    best = t;
                }
            }
            if (best == eos_) break;
            out.push_back(vocab_[best]);
            auto e = embeddings_.row(best);
            for (std::size_t i = 0; i < d; ++i) prefix_sum[i] += e[i];
        }
        return join(out);
    }

    const std::vector<std::string>& vocab() const { return vocab_; }

private:
    std::size_t token_id(const std::string& tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? unk_ : it->second;
    }

    Matrix random_square(detail::StableRng& rng, double scale) const {
        Matrix m(static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_));
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-1.0, 1.0) * scale;
        return m;
    }

    static std::vector<double> column_mean(const Matrix& m) {
        std::vector<double> out(m.cols(), 0.0);
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t c = 0; c < m.cols(); ++c) out[c] += m(r, c);
        for (double& v : out) v /= static_cast<double>(m.rows());
        return out;
    }

    static std::vector<double> mat_vec(const Matrix& m, const std::vector<double>& v) {
        std::vector<double> out(m.rows(), 0.0);
        for (std::size_t r = 0; r < m.rows(); ++r)
            for (std::size_t c = 0; c < m.cols(); ++c) out[r] += m(r, c) * v[c];
        return out;
    }

    int dim_;
    int d_img_;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t eos_ = 0;
    std::size_t unk_ = 0;
    Matrix embeddings_;
    Matrix image_mix_;
    Matrix transition_;
};

inline BackendPtr make_toy_backend(std::uint64_t seed, int dim, std::vector<std::string> vocab = default_toy_vocab(),
                                   int d_img = 0) {
    return std::make_shared<ToyBackend>(seed, dim, std::move(vocab), d_img > 0 ? d_img : 2 * dim);
}

}  // namespace mor
