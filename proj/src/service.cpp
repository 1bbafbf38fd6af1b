#include "styleremix/service.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>

#include "styleremix/checkpoint.hpp"
#include "styleremix/image.hpp"
#include "styleremix/ops.hpp"
#include "styleremix/remix.hpp"
#include "styleremix/tape.hpp"

// after Eigen: resolv.h, pulled in by httplib, defines a `_res` macro
#include "httplib.h"

namespace styleremix {

FifoLimiter::FifoLimiter(std::size_t max_inflight) : max_(max_inflight)
{
    if (max_inflight == 0) throw std::invalid_argument("max_inflight must be at least 1");
}

FifoLimiter::Permit::~Permit()
{
    if (owner_) owner_->release();
}

FifoLimiter::Permit FifoLimiter::acquire()
{
    std::unique_lock lock(mutex_);
    const auto ticket = next_ticket_++;
    queue_.push_back(ticket);
    cv_.wait(lock, [&] { return queue_.front() == ticket && inflight_ < max_; });
    queue_.pop_front();
    ++inflight_;
    cv_.notify_all();
    return Permit(this);
}

void FifoLimiter::release()
{
    {
        std::lock_guard lock(mutex_);
        --inflight_;
    }
    cv_.notify_all();
}

std::size_t FifoLimiter::inflight() const
{
    std::lock_guard lock(mutex_);
    return inflight_;
}

std::size_t FifoLimiter::waiting() const
{
    std::lock_guard lock(mutex_);
    return queue_.size();
}

namespace {

const std::vector<std::string> kSelectors{"style", "weights", "combine", "perturb", "cst"};

const nlohmann::json& field(const nlohmann::json& obj, const std::string& selector, const std::string& key)
{
    if (!obj.is_object()) throw RequestError("'" + selector + "' must be an object");
    if (!obj.contains(key)) throw RequestError("'" + selector + "' is missing '" + key + "'");
    return obj.at(key);
}

double number(const nlohmann::json& obj, const std::string& selector, const std::string& key)
{
    const auto& v = field(obj, selector, key);
    if (!v.is_number()) throw RequestError("'" + selector + "." + key + "' must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw RequestError("'" + selector + "." + key + "' must be finite");
    return d;
}

std::string text(const nlohmann::json& obj, const std::string& selector, const std::string& key)
{
    const auto& v = field(obj, selector, key);
    if (!v.is_string()) throw RequestError("'" + selector + "." + key + "' must be a string");
    return v.get<std::string>();
}

Tensor<float> style_weights(const StyleRemixModel<float>& model, const std::string& name)
{
    if (!model.styles().contains(name)) throw RequestError("unknown style '" + name + "'");
    return model.styles().get(name).weights().detach();
}

std::string url_encode(const std::string& s)
{
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char ch : s) {
        if (std::isalnum(ch) || ch == '-' || ch == '_' || ch == '.' || ch == '~') {
            out += static_cast<char>(ch);
        } else {
            out += '%';
            out += hex[ch >> 4];
            out += hex[ch & 15];
        }
    }
    return out;
}

HttpReply json_reply(int status, const nlohmann::json& body)
{
    return {status, "application/json", body.dump(), {}};
}

HttpReply error_reply(int status, const std::string& message)
{
    return {status, "application/json", json_error(message), {}};
}

void send(const HttpReply& reply, httplib::Response& res)
{
    res.status = reply.status;
    for (const auto& [k, v] : reply.headers) res.set_header(k, v);
    res.set_content(reply.body, reply.content_type);
}

}  // namespace

std::string json_error(const std::string& message)
{
    return nlohmann::json{{"error", message}}.dump();
}

Tensor<float> resolve_weights(const StyleRemixModel<float>& model, const nlohmann::json& spec)
{
    if (!spec.is_object()) throw RequestError("spec must be a JSON object");
    std::vector<std::string> present;
    for (const auto& [key, value] : spec.items()) {
        if (std::find(kSelectors.begin(), kSelectors.end(), key) == kSelectors.end()) {
            throw RequestError("unknown spec field '" + key + "'");
        }
        present.push_back(key);
    }
    if (present.size() != 1) {
        throw RequestError("spec must contain exactly one of style, weights, combine, perturb, cst; got " +
                           std::to_string(present.size()));
    }
    const auto& key = present.front();
    const auto& value = spec.at(key);
    const std::size_t c = model.channels();
    TapeScope<float> no_tape(nullptr);

    if (key == "style") {
        if (!value.is_string()) throw RequestError("'style' must be a string");
        return style_weights(model, value.get<std::string>());
    }
    if (key == "weights") {
        if (!value.is_array() || value.size() != c) {
            throw RequestError("'weights' must be an array of " + std::to_string(c) + " numbers");
        }
        std::vector<float> w;
        for (const auto& v : value) {
            if (!v.is_number() || !std::isfinite(v.get<double>())) throw RequestError("'weights' entries must be finite");
            w.push_back(v.get<float>());
        }
        return Tensor<float>({c}, std::move(w));
    }
    if (key == "combine") {
        const auto a = style_weights(model, text(value, key, "a"));
        const auto b = style_weights(model, text(value, key, "b"));
        const double alpha = number(value, key, "alpha");
        if (alpha < 0 || alpha > 1) throw RequestError("'combine.alpha' must lie in [0,1]");
        return convex_combination(a, b, alpha);
    }
    if (key == "perturb") {
        const auto w = style_weights(model, text(value, key, "style"));
        const double mu = number(value, key, "mu");
        const double sigma = number(value, key, "sigma");
        if (sigma < 0) throw RequestError("'perturb.sigma' must be non-negative");
        const auto& seed = field(value, key, "seed");
        if (!seed.is_number_integer() || seed.get<std::int64_t>() < 0) throw RequestError("'perturb.seed' must be a non-negative integer");
        try {
            return perturb_weights(w, mu, sigma, seed.get<std::uint64_t>());
        } catch (const std::runtime_error& e) {
            throw RequestError(e.what());
        }
    }
    CstMode mode;
    try {
        mode = parse_cst_mode(text(value, key, "mode"));
    } catch (const RequestError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw RequestError(e.what());
    }
    if (mode == CstMode::average && model.styles().empty()) throw RequestError("cst average needs a trained style");
    return cst_weights(model.styles(), mode, c);
}

StyleService::StyleService(ServiceOptions options) : options_(std::move(options)), limiter_(options_.max_inflight) {}

StyleService::~StyleService()
{
    if (loader_.joinable()) loader_.join();
}

void StyleService::load()
{
    try {
        model_ = std::make_unique<StyleRemixModel<float>>(load_checkpoint(options_.checkpoint));
        const auto n = model_->styles().size();
        if (n < 3) {
            embedding_error_ = "embedding needs at least 3 styles, checkpoint has " + std::to_string(n);
        } else {
            TsneOptions opts;
            opts.seed = options_.seed;
            opts.perplexity = std::clamp((static_cast<double>(n) - 1) / 3.0, 1.0, opts.perplexity);
            const auto result = tsne_embed(style_weight_matrix(model_->styles()), opts);
            nlohmann::json coords = nlohmann::json::array();
            for (long i = 0; i < result.coords.rows(); ++i) coords.push_back({result.coords(i, 0), result.coords(i, 1)});
            embedding_body_ = nlohmann::json{{"names", model_->styles().names()},
                                             {"coords", coords},
                                             {"seed", options_.seed},
                                             {"perplexity", opts.perplexity},
                                             {"kl", result.final_kl}}
                                  .dump();
        }
        state_ = State::ready;
    } catch (const std::exception& e) {
        load_error_ = e.what();
        state_ = State::failed;
        throw;
    }
}

void StyleService::load_async()
{
    loader_ = std::thread([this] {
        try {
            load();
        } catch (const std::exception& e) {
            std::cerr << "styleremix: failed to load " << options_.checkpoint << ": " << e.what() << "\n";
        }
    });
}

void StyleService::wait_loaded()
{
    if (loader_.joinable()) loader_.join();
}

std::size_t StyleService::image_side() const
{
    const auto s = model_->config().image_size;
    return s % 8 == 0 ? s : round_to_8(s);
}

std::optional<HttpReply> StyleService::unavailable() const
{
    switch (state_.load()) {
    case State::ready:
        return std::nullopt;
    case State::loading:
        return error_reply(503, "checkpoint is still loading");
    default:
        return error_reply(503, "checkpoint failed to load: " + load_error_);
    }
}

HttpReply StyleService::healthz() const
{
    switch (state_.load()) {
    case State::ready:
        return json_reply(200, {{"status", "ready"}});
    case State::loading:
        return json_reply(200, {{"status", "loading"}});
    default:
        return json_reply(500, {{"status", "failed"}, {"error", load_error_}});
    }
}

HttpReply StyleService::styles() const
{
    if (auto r = unavailable()) return *r;
    nlohmann::json out = nlohmann::json::array();
    TapeScope<float> no_tape(nullptr);
    for (const auto& s : model_->styles()) {
        const auto w = s.weights();
        out.push_back({{"name", s.name},
                       {"weights", std::vector<float>(w.data().begin(), w.data().end())},
                       {"thumb_url", "/api/styles/" + url_encode(s.name) + "/thumb"},
                       {"learnable", s.learnable}});
    }
    return json_reply(200, out);
}

HttpReply StyleService::thumbnail(const std::string& name) const
{
    if (auto r = unavailable()) return *r;
    if (!model_->styles().contains(name)) return error_reply(404, "unknown style '" + name + "'");
    std::filesystem::path ref = model_->styles().get(name).reference;
    if (ref.empty()) return error_reply(404, "style '" + name + "' has no reference image");
    if (ref.is_relative()) ref = options_.checkpoint / ref;
    try {
        const auto png = encode_png(center_square(read_png(ref), 96));
        return {200, "image/png", std::string(png.begin(), png.end()), {}};
    } catch (const ImageError& e) {
        return error_reply(404, e.what());
    }
}

HttpReply StyleService::embedding() const
{
    if (auto r = unavailable()) return *r;
    if (!embedding_body_) return error_reply(409, embedding_error_);
    return {200, "application/json", *embedding_body_, {}};
}

HttpReply StyleService::stylize(const std::string& png, const std::string& spec_json)
{
    if (auto r = unavailable()) return *r;
    if (png.size() > options_.max_upload_bytes) {
        return error_reply(413, "image exceeds " + std::to_string(options_.max_upload_bytes) + " bytes");
    }
    Tensor<float> weights;
    Image input;
    try {
        const auto spec = nlohmann::json::parse(spec_json);
        weights = resolve_weights(*model_, spec);
    } catch (const nlohmann::json::parse_error& e) {
        return error_reply(400, std::string("spec is not valid JSON: ") + e.what());
    } catch (const RequestError& e) {
        return error_reply(400, e.what());
    }
    try {
        input = decode_png(std::vector<std::uint8_t>(png.begin(), png.end()), "image");
    } catch (const ImageError& e) {
        return error_reply(400, e.what());
    }

    const auto side = image_side();
    const auto resized = center_square(input, side);
    std::vector<std::uint8_t> out;
    {
        auto permit = limiter_.acquire();
        TapeScope<float> no_tape(nullptr);
        const auto x = reshape(image_to_tensor(resized), {1, 3, side, side});
        out = encode_png(tensor_to_image(model_->stylize(x, weights)));
    }
    HttpReply reply{200, "image/png", std::string(out.begin(), out.end()), {}};
    reply.headers["X-StyleRemix-Input-Size"] = std::to_string(input.width) + "x" + std::to_string(input.height);
    reply.headers["X-StyleRemix-Output-Size"] = std::to_string(side) + "x" + std::to_string(side);
    reply.headers["X-StyleRemix-Resize"] = "center-square";
    return reply;
}

void StyleService::attach(httplib::Server& server)
{
    server.set_payload_max_length(options_.max_upload_bytes + (64u << 10));
    server.set_default_headers({
        {"Access-Control-Allow-Origin", options_.cors_origin},
        {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
        {"Access-Control-Allow-Headers", "Content-Type"},
        {"Access-Control-Expose-Headers", "X-StyleRemix-Input-Size, X-StyleRemix-Output-Size, X-StyleRemix-Resize"},
    });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty()) return;
        const auto message = res.status == 413 ? std::string("upload exceeds the size limit")
                                               : std::string(httplib::status_message(res.status));
        res.set_content(json_error(message), "application/json");
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string message = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            message = e.what();
        } catch (...) {
        }
        res.status = 500;
        res.set_content(json_error(message), "application/json");
    });

    server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) { send(healthz(), res); });
    server.Get("/api/styles", [this](const httplib::Request&, httplib::Response& res) { send(styles(), res); });
    server.Get(R"(/api/styles/([^/]+)/thumb)", [this](const httplib::Request& req, httplib::Response& res) {
        send(thumbnail(httplib::detail::decode_url(req.matches[1], false)), res);
    });
    server.Get("/api/embedding", [this](const httplib::Request&, httplib::Response& res) { send(embedding(), res); });
    server.Post("/api/stylize", [this](const httplib::Request& req, httplib::Response& res) {
        if (!req.is_multipart_form_data()) {
            return send(error_reply(400, "expected multipart/form-data with 'image' and 'spec'"), res);
        }
        if (!req.has_file("image")) return send(error_reply(400, "missing 'image' part"), res);
        if (!req.has_file("spec")) return send(error_reply(400, "missing 'spec' part"), res);
        send(stylize(req.get_file_value("image").content, req.get_file_value("spec").content), res);
    });
    if (!options_.static_dir.empty() && !server.set_mount_point("/", options_.static_dir.string())) {
        throw std::invalid_argument("static dir " + options_.static_dir.string() + " does not exist");
    }
}

int run_server(const ServiceOptions& options, const std::string& host, int port)
{
    StyleService service(options);
    httplib::Server server;
    service.attach(server);
    service.load_async();
    std::cerr << "styleremix: serving " << options.checkpoint << " on http://" << host << ":" << port << "\n";
    if (!server.listen(host, port)) {
        std::cerr << "styleremix: cannot listen on " << host << ":" << port << "\n";
        return 1;
    }
    return 0;
}

}  // namespace styleremix
