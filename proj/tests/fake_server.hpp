#pragma once

// In-process server speaking the backend wire protocol on top of any local Backend.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <thread>

#include "httplib.h"
#include "mor/backend.hpp"

namespace mor::testing {

/// A loopback port with nothing listening on it.
inline int closed_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

enum class Fault { none, ragged, wrong_width, slow, not_json, server_error, non_numeric };

class FakeServer {
public:
    explicit FakeServer(BackendPtr backend, Fault fault = Fault::none, int delay_ms = 0)
        : backend_(std::move(backend)), fault_(fault), delay_ms_(delay_ms) {
        server_.Get("/v1/info", [this](const httplib::Request&, httplib::Response& res) {
            const auto i = backend_->info();
            reply(res, {{"name", i.name}, {"dim", i.dim}, {"d_img", i.d_img}, {"vocab_size", i.vocab_size},
                        {"max_sequence", i.max_sequence}});
        });
        server_.Post("/v1/encode", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                const auto j = json::parse(req.body);
                const auto images = images_of(j);
                auto rows = backend_->encode(j.at("text").get<std::string>(), images).to_rows();
                if (fault_ == Fault::ragged && !rows.empty()) rows.back().pop_back();
                if (fault_ == Fault::wrong_width)
                    for (auto& r : rows) r.push_back(0.0);
                json body = {{"embeddings", rows}};
                if (fault_ == Fault::non_numeric) body["embeddings"][0][0] = "x";
                return body;
            });
        });
        server_.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                const auto j = json::parse(req.body);
                return json{{"text", backend_->generate(j.at("text").get<std::string>(), images_of(j),
                                                        j.at("max_len").get<int>())}};
            });
        });
        server_.Post("/v1/decode", [this](const httplib::Request& req, httplib::Response& res) {
            handle(res, [&] {
                const auto j = json::parse(req.body);
                const auto m = Matrix::from_rows(j.at("embeddings").get<std::vector<std::vector<double>>>());
                return json{{"text", backend_->decode(m, j.at("max_len").get<int>())}};
            });
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~FakeServer() {
        server_.stop();
        if (thread_.joinable()) thread_.join();
    }

    FakeServer(const FakeServer&) = delete;
    FakeServer& operator=(const FakeServer&) = delete;

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int requests() const { return requests_.load(); }

private:
    static std::vector<ImageInput> images_of(const json& j) {
        std::vector<ImageInput> out;
        for (const auto& f : j.at("images")) out.push_back({f.get<std::vector<double>>(), {}});
        return out;
    }

    void reply(httplib::Response& res, const json& body) {
        ++requests_;
        if (delay_ms_ > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
        if (fault_ == Fault::not_json) {
            res.set_content("<html>oops</html>", "text/html");
            return;
        }
        if (fault_ == Fault::server_error) {
            res.status = 500;
            res.set_content(json{{"error", "model crashed"}}.dump(), "application/json");
            return;
        }
        res.set_content(body.dump(), "application/json");
    }

    template <class Fn>
    void handle(httplib::Response& res, Fn&& fn) {
        try {
            reply(res, fn());
        } catch (const std::exception& e) {
            ++requests_;
            res.status = 400;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    }

    BackendPtr backend_;
    Fault fault_;
    int delay_ms_;
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::atomic<int> requests_{0};
};

}  // namespace mor::testing
