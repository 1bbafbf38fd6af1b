#include "styleremix/remix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "styleremix/image.hpp"
#include "styleremix/tape.hpp"

namespace styleremix {

Tensor<float> convex_combination(const Tensor<float>& a, const Tensor<float>& b, double alpha)
{
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw std::invalid_argument("convex_combination: alpha must lie in [0,1], got " + std::to_string(alpha));
    }
    if (a.shape() != b.shape()) {
        throw ShapeError("convex_combination: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    }
    const auto wa = static_cast<float>(alpha);
    const auto wb = static_cast<float>(1.0 - alpha);
    std::vector<float> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = wa * a.data()[i] + wb * b.data()[i];
    return Tensor<float>(a.shape(), std::move(out));
}

Tensor<float> perturb_weights(const Tensor<float>& w, double mu, double sigma, std::uint64_t seed)
{
    if (!(sigma >= 0)) throw std::invalid_argument("perturb_weights: sigma must be non-negative");
    if (!std::isfinite(mu)) throw std::invalid_argument("perturb_weights: mu must be finite");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(mu, sigma > 0 ? sigma : 1.0);
    std::vector<double> v(w.numel());
    for (int attempt = 0; attempt < 5; ++attempt) {
        double total = 0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = static_cast<double>(w.data()[i]) + (sigma > 0 ? noise(rng) : mu);
            total += v[i];
        }
        if (std::abs(total) >= 1e-6) {
            std::vector<float> out(v.size());
            for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / total);
            return Tensor<float>(w.shape(), std::move(out));
        }
    }
    throw std::runtime_error("perturb_weights: noise sum stayed near zero after 5 draws");
}

CstMode parse_cst_mode(const std::string& s)
{
    if (s == "average") return CstMode::average;
    if (s == "uniform") return CstMode::uniform;
    throw std::invalid_argument("unknown cst mode '" + s + "' (expected average or uniform)");
}

Tensor<float> cst_weights(const StyleRegistry<float>& registry, CstMode mode, std::size_t c)
{
    if (mode == CstMode::uniform) return Tensor<float>::full({c}, 1.0f / static_cast<float>(c));
    if (registry.empty()) throw std::invalid_argument("cst average: the style registry is empty");
    TapeScope<float> off(nullptr);
    std::vector<double> acc(c, 0.0);
    for (const auto& layer : registry) {
        const auto w = layer.weights();
        if (w.numel() != c) throw ShapeError("cst average: style '" + layer.name + "' has wrong width");
        for (std::size_t i = 0; i < c; ++i) acc[i] += w.data()[i];
    }
    std::vector<float> out(c);
    for (std::size_t i = 0; i < c; ++i) out[i] = static_cast<float>(acc[i] / static_cast<double>(registry.size()));
    return Tensor<float>({c}, std::move(out));
}

Tensor<float> stylebank_onehot_weights(std::size_t j, std::size_t m, std::size_t c)
{
    if (m == 0 || c % m != 0) {
        throw std::invalid_argument("stylebank: c=" + std::to_string(c) + " not divisible by m=" + std::to_string(m));
    }
    if (j >= m) throw std::out_of_range("stylebank: style index " + std::to_string(j) + " >= " + std::to_string(m));
    const std::size_t block = c / m;
    std::vector<float> w(c, 0.0f);
    for (std::size_t i = j * block; i < (j + 1) * block; ++i) w[i] = static_cast<float>(m) / static_cast<float>(c);
    return Tensor<float>({c}, std::move(w));
}

Eigen::MatrixXd style_weight_matrix(const StyleRegistry<float>& registry)
{
    TapeScope<float> off(nullptr);
    if (registry.empty()) return {};
    const auto c = registry.at(0).theta.numel();
    Eigen::MatrixXd rows(registry.size(), c);
    for (std::size_t r = 0; r < registry.size(); ++r) {
        const auto w = registry.at(r).weights();
        for (std::size_t i = 0; i < c; ++i) rows(static_cast<long>(r), static_cast<long>(i)) = w.data()[i];
    }
    return rows;
}

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& rows, const std::vector<std::string>& names)
{
    if (rows.rows() < 2) throw std::invalid_argument("correlation_matrix: need at least 2 styles");
    Eigen::MatrixXd centered = rows.colwise() - rows.rowwise().mean();
    Eigen::VectorXd norms = centered.rowwise().norm();
    for (long i = 0; i < rows.rows(); ++i) {
        if (!(norms(i) > 1e-12)) {
            const auto name = static_cast<std::size_t>(i) < names.size() ? names[static_cast<std::size_t>(i)]
                                                                         : "#" + std::to_string(i);
            throw std::invalid_argument("correlation_matrix: style '" + name + "' has constant weights");
        }
        centered.row(i) /= norms(i);
    }
    Eigen::MatrixXd corr = centered * centered.transpose();
    corr = corr.cwiseMax(-1.0).cwiseMin(1.0);
    corr.diagonal().setOnes();
    return corr;
}

PcaResult pca_reduce(const Eigen::MatrixXd& data, std::size_t k)
{
    const auto n = static_cast<std::size_t>(data.rows()), d = static_cast<std::size_t>(data.cols());
    if (n < 2) throw std::invalid_argument("pca_reduce: need at least 2 rows");
    if (k == 0 || k > std::min(n, d)) {
        throw std::invalid_argument("pca_reduce: k=" + std::to_string(k) + " outside [1, " +
                                    std::to_string(std::min(n, d)) + "]");
    }
    PcaResult r;
    r.mean = data.colwise().mean().transpose();
    const Eigen::MatrixXd centered = data.rowwise() - r.mean.transpose();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("pca_reduce: eigendecomposition failed");
    r.eigenvalues = solver.eigenvalues().reverse();
    r.components.resize(static_cast<long>(k), static_cast<long>(d));
    for (std::size_t i = 0; i < k; ++i) {
        Eigen::VectorXd v = solver.eigenvectors().col(static_cast<long>(d - 1 - i));
        Eigen::Index pivot;
        v.cwiseAbs().maxCoeff(&pivot);
        if (v(pivot) < 0) v = -v;
        r.components.row(static_cast<long>(i)) = v.transpose();
    }
    r.scores = centered * r.components.transpose();
    return r;
}

bool conditional_affinities(const Eigen::VectorXd& sq_dists, std::size_t self, double perplexity,
                            Eigen::VectorXd& row, double& beta)
{
    const long n = sq_dists.size();
    const double target = std::log(perplexity);
    double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    beta = 1.0;
    row.resize(n);
    for (int it = 0; it < 200; ++it) {
        double total = 0, weighted = 0;
        for (long j = 0; j < n; ++j) {
            row(j) = j == static_cast<long>(self) ? 0.0 : std::exp(-beta * sq_dists(j));
            total += row(j);
            weighted += sq_dists(j) * row(j);
        }
        if (total <= std::numeric_limits<double>::min()) {
            // every neighbour underflowed: bandwidth far too small
            hi = beta;
            beta = std::isinf(lo) ? beta / 2 : (beta + lo) / 2;
            continue;
        }
        const double entropy = std::log(total) + beta * weighted / total;
        row /= total;
        const double diff = entropy - target;
        if (std::abs(diff) < 1e-4) return true;
        if (diff > 0) {
            lo = beta;
            beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
        } else {
            hi = beta;
            beta = std::isinf(lo) ? beta / 2 : (beta + lo) / 2;
        }
    }
    return false;
}

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x)
{
    const Eigen::VectorXd norms = x.rowwise().squaredNorm();
    Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + norms;
    d.rowwise() += norms.transpose();
    return d.cwiseMax(0.0);
}

double kl_divergence(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y)
{
    const Eigen::MatrixXd num = (1.0 + squared_distances(y).array()).inverse().matrix();
    const long n = y.rows();
    double total = 0;
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < n; ++j)
            if (i != j) total += num(i, j);
    double kl = 0;
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < n; ++j) {
            if (i == j) continue;
            const double q = std::max(num(i, j) / total, 1e-12);
            kl += p(i, j) * std::log(p(i, j) / q);
        }
    return kl;
}

}  // namespace

TsneResult tsne_embed(const Eigen::MatrixXd& data, const TsneOptions& opts)
{
    const long n = data.rows();
    if (n < 3) throw std::invalid_argument("tsne_embed: need at least 3 points");
    if (!(opts.perplexity > 0) || opts.perplexity >= static_cast<double>(n)) {
        throw std::invalid_argument("tsne_embed: perplexity must be in (0, N)");
    }
    TsneResult result;
    const Eigen::MatrixXd d = squared_distances(data);
    Eigen::MatrixXd p(n, n);
    for (long i = 0; i < n; ++i) {
        Eigen::VectorXd row;
        double beta;
        if (!conditional_affinities(d.row(i).transpose(), static_cast<std::size_t>(i), opts.perplexity, row, beta)) {
            result.fallback_points.push_back(static_cast<std::size_t>(i));
        }
        p.row(i) = row.transpose();
    }
    p = (p + p.transpose()) / (2.0 * static_cast<double>(n));
    p = p.cwiseMax(1e-12);
    p.diagonal().setZero();

    std::mt19937_64 rng(opts.seed);
    std::normal_distribution<double> init(0.0, 1e-4);
    Eigen::MatrixXd y(n, 2);
    for (long i = 0; i < n; ++i) y(i, 0) = init(rng), y(i, 1) = init(rng);
    result.initial_kl = kl_divergence(p, y);

    Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
    for (std::size_t it = 0; it < opts.iterations; ++it) {
        const double exaggeration = it < opts.exaggeration_iters ? opts.exaggeration : 1.0;
        const double momentum = it < opts.momentum_switch ? opts.initial_momentum : opts.final_momentum;
        const Eigen::MatrixXd num = (1.0 + squared_distances(y).array()).inverse().matrix();
        double total = 0;
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < n; ++j)
                if (i != j) total += num(i, j);
        Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, 2);
        for (long i = 0; i < n; ++i)
            for (long j = 0; j < n; ++j) {
                if (i == j) continue;
                const double m = (exaggeration * p(i, j) - num(i, j) / total) * num(i, j);
                grad.row(i) += 4.0 * m * (y.row(i) - y.row(j));
            }
        for (long i = 0; i < n; ++i)
            for (long c = 0; c < 2; ++c) {
                const bool same = (grad(i, c) > 0) == (velocity(i, c) > 0);
                gains(i, c) = std::max(same ? gains(i, c) * 0.8 : gains(i, c) + 0.2, 0.01);
                velocity(i, c) = momentum * velocity(i, c) - opts.learning_rate * gains(i, c) * grad(i, c);
            }
        y += velocity;
        y.rowwise() -= y.colwise().mean();
    }
    result.final_kl = kl_divergence(p, y);
    result.coords = y;
    return result;
}

std::uint64_t conv_macs(std::size_t c_in, std::size_t c_out, std::size_t kh, std::size_t kw, std::size_t h_out,
                        std::size_t w_out)
{
    return static_cast<std::uint64_t>(c_out) * c_in * kh * kw * h_out * w_out;
}

FlopsReport flops_count(const ModelConfig& config, std::size_t height, std::size_t width)
{
    config.validate();
    if (height % 4 != 0 || width % 4 != 0) throw std::invalid_argument("flops_count: H and W must be multiples of 4");
    const auto& e = config.enc_channels;
    const auto c = config.basis_channels, k = config.kernel;
    FlopsReport r;
    auto add = [&](std::string name, std::size_t ci, std::size_t co, std::size_t div) {
        const auto ho = height / div, wo = width / div;
        r.layers.push_back({std::move(name), ci, co, k, ho, wo, conv_macs(ci, co, k, k, ho, wo)});
        r.macs += r.layers.back().macs;
    };
    add("encoder.0", 3, e[0], 1);
    add("encoder.1", e[0], e[1], 2);
    add("encoder.2", e[1], e[2], 4);
    add("basis", c, c, 4);
    add("decoder.0", c, e[1], 2);
    add("decoder.1", e[1], e[0], 1);
    add("decoder.2", e[0], 3, 1);
    return r;
}

namespace {

void put(Image& img, long x, long y, std::uint8_t r, std::uint8_t g, std::uint8_t b)
{
    if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) return;
    auto* px = &img.rgb[(static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)) * 3];
    px[0] = r;
    px[1] = g;
    px[2] = b;
}

}  // namespace

void render_scatter(const Eigen::MatrixXd& coords, const std::filesystem::path& file, std::size_t size)
{
    if (coords.cols() != 2) throw std::invalid_argument("render_scatter: expected N x 2 coordinates");
    Image img{size, size, std::vector<std::uint8_t>(size * size * 3, 255)};
    const double margin = 0.08 * static_cast<double>(size);
    const Eigen::Vector2d lo = coords.colwise().minCoeff(), hi = coords.colwise().maxCoeff();
    const double span = std::max({hi(0) - lo(0), hi(1) - lo(1), 1e-12});
    const long radius = std::max<long>(3, static_cast<long>(size / 64));
    for (long i = 0; i < coords.rows(); ++i) {
        const double hue = static_cast<double>(i) / static_cast<double>(std::max<long>(coords.rows(), 1));
        const auto r = static_cast<std::uint8_t>(127 + 127 * std::cos(6.2831853 * hue));
        const auto g = static_cast<std::uint8_t>(127 + 127 * std::cos(6.2831853 * (hue - 1.0 / 3)));
        const auto b = static_cast<std::uint8_t>(127 + 127 * std::cos(6.2831853 * (hue - 2.0 / 3)));
        const double inner = static_cast<double>(size) - 2 * margin;
        const auto cx = static_cast<long>(margin + (coords(i, 0) - lo(0)) / span * inner);
        const auto cy = static_cast<long>(static_cast<double>(size) - margin - (coords(i, 1) - lo(1)) / span * inner);
        for (long dy = -radius - 1; dy <= radius + 1; ++dy)
            for (long dx = -radius - 1; dx <= radius + 1; ++dx) {
                const long d2 = dx * dx + dy * dy;
                if (d2 <= radius * radius) {
                    put(img, cx + dx, cy + dy, r, g, b);
                } else if (d2 <= (radius + 1) * (radius + 1)) {
                    put(img, cx + dx, cy + dy, 0, 0, 0);
                }
            }
    }
    write_png(file, img);
}

void render_heatmap(const Eigen::MatrixXd& matrix, const std::filesystem::path& file, std::size_t cell)
{
    const auto rows = static_cast<std::size_t>(matrix.rows()), cols = static_cast<std::size_t>(matrix.cols());
    if (rows == 0 || cols == 0) throw std::invalid_argument("render_heatmap: empty matrix");
    Image img{cols * cell, rows * cell, std::vector<std::uint8_t>(rows * cols * cell * cell * 3)};
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = std::clamp(matrix(static_cast<long>(r), static_cast<long>(c)), -1.0, 1.0);
            const double a = std::abs(v);
            const auto fade = static_cast<std::uint8_t>(std::lround(255 * (1 - a)));
            const std::uint8_t red = v >= 0 ? 255 : fade, blue = v >= 0 ? fade : 255;
            for (std::size_t y = 0; y < cell; ++y)
                for (std::size_t x = 0; x < cell; ++x)
                    put(img, static_cast<long>(c * cell + x), static_cast<long>(r * cell + y), red, fade, blue);
        }
    write_png(file, img);
}

}  // namespace styleremix
