#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mor/core.hpp"

namespace mor {

struct BackendInfo {
    std::string name;
    int dim = 0;
    int d_img = 0;
    int vocab_size = 0;
    int max_sequence = 0;
    bool operator==(const BackendInfo&) const = default;
};

/// One frozen encoder-decoder model. generate, encode and decode share a single embedding space.
/// Implementations must be safe for concurrent const calls.
class Backend {
public:
    virtual ~Backend() = default;

    virtual BackendInfo info() const = 0;

    /// Encoder states for text followed by image patches; rows = token_count + patch_count.
    virtual Matrix encode(std::string_view text, std::span<const ImageInput> images) const = 0;

    /// Greedy continuation of at most max_len tokens; may be empty.
    virtual std::string generate(std::string_view prompt, std::span<const ImageInput> images, int max_len) const = 0;

    /// Greedy decoding attending over every row of `fused`.
    virtual std::string decode(const Matrix& fused, int max_len) const = 0;
};

using BackendPtr = std::shared_ptr<const Backend>;

inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kUnkToken = "<unk>";

/// Whitespace split, lowercase, edge punctuation stripped. A token made only of punctuation is kept
/// verbatim so the token count always equals the whitespace-token count.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (auto& raw : split_whitespace(text)) {
        std::size_t b = 0, e = raw.size();
        while (b < e && is_ascii_punct(static_cast<unsigned char>(raw[b]))) ++b;
        while (e > b && is_ascii_punct(static_cast<unsigned char>(raw[e - 1]))) --e;
        std::string tok = b < e ? raw.substr(b, e - b) : raw;
        for (auto& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        out.push_back(std::move(tok));
    }
    return out;
}

namespace detail {

inline void check_inputs(std::string_view text, std::span<const ImageInput> images, int d_img) {
    if (images.size() > 2) throw InputError("at most 2 images are accepted, got " + std::to_string(images.size()));
    if (trim(text).empty() && images.empty()) throw InputError("nothing to encode: empty text and no images");
    for (const auto& img : images) {
        if (static_cast<int>(img.features.size()) != d_img)
            throw InputError("image dimension mismatch: expected " + std::to_string(d_img) + ", got " +
                             std::to_string(img.features.size()));
        for (double v : img.features)
            if (!std::isfinite(v)) throw InputError("image features must be finite");
    }
}

inline void check_max_len(int max_len) {
    if (max_len < 1) throw InputError("max_len must be >= 1");
}

/// splitmix64; used to derive independent, platform-stable streams from a seed.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic generator with bit-identical output on every platform (std distributions are not).
class StableRng {
public:
    explicit StableRng(std::uint64_t seed) : state_(mix64(seed)) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) { return n == 0 ? 0 : static_cast<std::size_t>(next() % n); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::uint64_t state_;
};

}  // namespace detail
}  // namespace mor
