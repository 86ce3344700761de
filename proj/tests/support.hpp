#pragma once

#include <filesystem>
#include <random>

#include "mor/mor.hpp"

namespace mor::testing {

inline const std::vector<std::string>& question_bank() {
    static const std::vector<std::string> q = {
        "What color is the big dog on the left?",
        "Is there a cat sitting near the window?",
        "How many people are holding umbrellas?",
        "What is the man in the red shirt eating?",
        "Does the left image contain exactly two birds?",
        "Which animal is larger, the horse or the cow?",
        "What sport is being played on the field?",
        "Are the scarves made of wool?",
        "Why are the pant legs rolled up?",
        "Where is the small boat going?",
    };
    return q;
}

/// Random problems for a toy backend with image length d_img.
inline std::vector<Problem> random_toy_problems(std::size_t n, int d_img, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Problem> out;
    for (std::size_t i = 0; i < n; ++i) {
        Problem p;
        p.id = "toy-" + std::to_string(i);
        p.question = question_bank()[rng() % question_bank().size()];
        const std::size_t images = 1 + rng() % 2;
        for (std::size_t k = 0; k < images; ++k) {
            ImageInput img;
            for (int c = 0; c < d_img; ++c) img.features.push_back(u(rng));
            p.images.push_back(std::move(img));
        }
        p.gold_answers = {"yes"};
        out.push_back(std::move(p));
    }
    return out;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (double& v : m.row(r)) v = u(rng);
    return m;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("mor-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

}  // namespace mor::testing
