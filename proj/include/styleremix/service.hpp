#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

#include "json.hpp"
#include "styleremix/model.hpp"

namespace httplib {
class Server;
}

namespace styleremix {

/// A client error that maps to HTTP 400.
class RequestError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Counting semaphore that admits waiters strictly in arrival order.
class FifoLimiter {
public:
    explicit FifoLimiter(std::size_t max_inflight);

    class Permit {
    public:
        explicit Permit(FifoLimiter* owner) : owner_(owner) {}
        Permit(Permit&& other) noexcept : owner_(std::exchange(other.owner_, nullptr)) {}
        Permit(const Permit&) = delete;
        Permit& operator=(const Permit&) = delete;
        Permit& operator=(Permit&&) = delete;
        ~Permit();

    private:
        FifoLimiter* owner_;
    };

    Permit acquire();
    std::size_t inflight() const;
    std::size_t waiting() const;
    std::size_t max_inflight() const { return max_; }

private:
    void release();

    const std::size_t max_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<std::uint64_t> queue_;
    std::uint64_t next_ticket_ = 0;
    std::size_t inflight_ = 0;
};

/// Resolves a stylize spec to a weight vector. The spec is a JSON object with
/// exactly one of: "style": name | "weights": [c reals] |
/// "combine": {a, b, alpha} | "perturb": {style, mu, sigma, seed} |
/// "cst": {mode}. Throws RequestError on anything else.
Tensor<float> resolve_weights(const StyleRemixModel<float>& model, const nlohmann::json& spec);

struct ServiceOptions {
    std::filesystem::path checkpoint;
    std::size_t max_inflight = 2;
    std::uint64_t seed = 0;
    std::size_t max_upload_bytes = 8u << 20;
    std::string cors_origin = "*";
    std::filesystem::path static_dir;  // served under / when set
};

struct HttpReply {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::map<std::string, std::string> headers;
};

/// Inference over one checkpoint. The model is loaded once and only read
/// afterwards, so handlers may run concurrently.
class StyleService {
public:
    explicit StyleService(ServiceOptions options);
    ~StyleService();
    StyleService(const StyleService&) = delete;
    StyleService& operator=(const StyleService&) = delete;

    /// Loads the checkpoint and precomputes the embedding on this thread.
    void load();
    /// Same as load() on a background thread; requests get 503 meanwhile.
    void load_async();
    bool ready() const { return state_ == State::ready; }
    /// Blocks until loading finished (successfully or not).
    void wait_loaded();

    HttpReply healthz() const;
    HttpReply styles() const;
    HttpReply thumbnail(const std::string& name) const;
    HttpReply embedding() const;
    HttpReply stylize(const std::string& png, const std::string& spec_json);

    /// Registers every route, CORS headers, the upload limit and error bodies.
    void attach(httplib::Server& server);

    const ServiceOptions& options() const { return options_; }
    FifoLimiter& limiter() { return limiter_; }
    /// Side length uploads are cropped and resized to.
    std::size_t image_side() const;

private:
    enum class State { loading, ready, failed };
    std::optional<HttpReply> unavailable() const;

    ServiceOptions options_;
    FifoLimiter limiter_;
    std::atomic<State> state_{State::loading};
    std::string load_error_;
    std::unique_ptr<StyleRemixModel<float>> model_;
    std::optional<std::string> embedding_body_;
    std::string embedding_error_;
    std::thread loader_;
};

std::string json_error(const std::string& message);

/// Blocking server loop for the CLI.
int run_server(const ServiceOptions& options, const std::string& host, int port);

}  // namespace styleremix
