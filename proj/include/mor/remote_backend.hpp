#pragma once

// HTTP/JSON client for an out-of-process model server.
//
//   GET  /v1/info                                    -> {name, dim, d_img, vocab_size, max_sequence}
//   POST /v1/encode   {text, images}                 -> {embeddings: [[dim numbers] x L]}
//   POST /v1/generate {text, images, max_len}        -> {text}
//   POST /v1/decode   {embeddings, max_len}          -> {text}
//
// One request per call; a fresh connection per request keeps the client safe to share between threads.

#include <chrono>
#include <mutex>
#include <regex>

#include "httplib.h"
#include "mor/backend.hpp"

namespace mor {

class RemoteBackend final : public Backend {
public:
    RemoteBackend(std::string base_url, int timeout_ms) : base_url_(std::move(base_url)), timeout_ms_(timeout_ms) {
        static const std::regex url_re(R"(^http://[A-Za-z0-9.\-\[\]:]+(:[0-9]{1,5})?/?$)");
        if (!std::regex_match(base_url_, url_re)) throw InputError("remote backend: invalid base url \"" + base_url_ + "\"");
        if (timeout_ms_ < 1) throw InputError("remote backend: timeout must be >= 1 ms");
        if (base_url_.back() == '/') base_url_.pop_back();
    }

    BackendInfo info() const override {
        std::lock_guard lock(info_mutex_);
        if (info_) return *info_;
        const json j = request("GET", "/v1/info", nullptr);
        BackendInfo bi;
        try {
            bi.name = j.at("name").get<std::string>();
            bi.dim = j.at("dim").get<int>();
            bi.d_img = j.at("d_img").get<int>();
            bi.vocab_size = j.at("vocab_size").get<int>();
            bi.max_sequence = j.at("max_sequence").get<int>();
        } catch (const json::exception& e) {
            throw MalformedResponseError("/v1/info: " + std::string(e.what()));
        }
        if (bi.dim < 1 || bi.d_img < 1 || bi.vocab_size < 2 || bi.max_sequence < 1)
            throw MalformedResponseError("/v1/info: non-positive dimensions");
        info_ = bi;
        return bi;
    }

    Matrix encode(std::string_view text, std::span<const ImageInput> images) const override {
        const auto bi = info();
        detail::check_inputs(text, images, bi.d_img);
        json body = {{"text", text}, {"images", images_json(images)}};
        const json j = request("POST", "/v1/encode", &body);
        Matrix m = parse_matrix(j, "/v1/encode");
        if (m.empty()) throw MalformedResponseError("/v1/encode: no rows");
        if (m.cols() != static_cast<std::size_t>(bi.dim))
            throw DimensionMismatchError("/v1/encode: rows of width " + std::to_string(m.cols()) +
                                         ", server declared dim " + std::to_string(bi.dim));
        return m;
    }

    std::string generate(std::string_view prompt, std::span<const ImageInput> images, int max_len) const override {
        detail::check_max_len(max_len);
        const auto bi = info();
        detail::check_inputs(prompt, images, bi.d_img);
        json body = {{"text", prompt}, {"images", images_json(images)}, {"max_len", max_len}};
        return text_field(request("POST", "/v1/generate", &body), "/v1/generate");
    }

    std::string decode(const Matrix& fused, int max_len) const override {
        detail::check_max_len(max_len);
        const auto bi = info();
        if (fused.empty()) throw InputError("decode: empty matrix");
        if (fused.cols() != static_cast<std::size_t>(bi.dim))
            throw InputError("decode: width " + std::to_string(fused.cols()) + " != dim " + std::to_string(bi.dim));
        json body = {{"embeddings", fused.to_rows()}, {"max_len", max_len}};
        return text_field(request("POST", "/v1/decode", &body), "/v1/decode");
    }

    const std::string& base_url() const { return base_url_; }

private:
    static json images_json(std::span<const ImageInput> images) {
        json arr = json::array();
        for (const auto& img : images) arr.push_back(img.features);
        return arr;
    }

    static std::string text_field(const json& j, const std::string& where) {
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
            throw MalformedResponseError(where + ": expected {\"text\": string}");
        return j["text"].get<std::string>();
    }

    static Matrix parse_matrix(const json& j, const std::string& where) {
        if (!j.is_object() || !j.contains("embeddings") || !j["embeddings"].is_array())
            throw MalformedResponseError(where + ": expected {\"embeddings\": [[...]]}");
        std::vector<std::vector<double>> rows;
        for (const auto& r : j["embeddings"]) {
            if (!r.is_array()) throw MalformedResponseError(where + ": embedding row is not an array");
            std::vector<double> row;
            for (const auto& v : r) {
                if (!v.is_number()) throw MalformedResponseError(where + ": non-numeric embedding entry");
                row.push_back(v.get<double>());
            }
            rows.push_back(std::move(row));
        }
        try {
            Matrix m = Matrix::from_rows(rows);
            if (!m.all_finite()) throw MalformedResponseError(where + ": non-finite embedding entry");
            return m;
        } catch (const InputError& e) {
            throw MalformedResponseError(where + ": " + e.what());
        }
    }

    json request(const std::string& method, const std::string& path, const json* body) const {
        httplib::Client cli(base_url_);
        const auto timeout = std::chrono::milliseconds(timeout_ms_);
        cli.set_connection_timeout(timeout);
        cli.set_read_timeout(timeout);
        cli.set_write_timeout(timeout);
        httplib::Result res = method == "GET" ? cli.Get(path) : cli.Post(path, body->dump(), "application/json");
        if (!res) {
            const auto err = res.error();
            const std::string what = base_url_ + path + ": " + httplib::to_string(err);
            if (err == httplib::Error::Read) throw TimeoutError(what + " (no response within " + std::to_string(timeout_ms_) + " ms)");
            throw ConnectivityError(what);
        }
        if (res->status != 200) {
            std::string detail = res->body;
            try {
                auto e = json::parse(res->body);
                if (e.contains("error") && e["error"].is_string()) detail = e["error"].get<std::string>();
            } catch (const json::exception&) {
            }
            throw BackendError(path + ": status " + std::to_string(res->status) + ": " + detail);
        }
        try {
            return json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw MalformedResponseError(path + ": invalid JSON body: " + e.what());
        }
    }

    std::string base_url_;
    int timeout_ms_;
    mutable std::mutex info_mutex_;
    mutable std::optional<BackendInfo> info_;
};

inline BackendPtr make_remote_backend(std::string base_url, int timeout_ms) {
    return std::make_shared<RemoteBackend>(std::move(base_url), timeout_ms);
}

}  // namespace mor
