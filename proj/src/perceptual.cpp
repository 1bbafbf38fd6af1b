#include "styleremix/perceptual.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "styleremix/checkpoint.hpp"
#include "styleremix/ops.hpp"
#include "styleremix/tape.hpp"

namespace styleremix {

void LossWeights::validate() const
{
    if (!(alpha >= 0) || !(beta >= 0)) throw std::invalid_argument("loss weights must be non-negative");
}

void to_json(nlohmann::json& j, const LossWeights& w)
{
    j = {{"alpha", w.alpha}, {"beta", w.beta}};
}

void from_json(const nlohmann::json& j, LossWeights& w)
{
    w.alpha = j.value("alpha", 1.0);
    w.beta = j.value("beta", 3e4);
    w.validate();
}

GramNorm parse_gram_norm(const std::string& s)
{
    if (s == "chw") return GramNorm::chw;
    if (s == "hw") return GramNorm::hw;
    throw std::invalid_argument("unknown gram normalisation '" + s + "' (expected chw or hw)");
}

std::string to_string(GramNorm n)
{
    return n == GramNorm::chw ? "chw" : "hw";
}

template <typename T>
const std::vector<std::string>& FeatureExtractor<T>::tap_names()
{
    static const std::vector<std::string> names{"conv1_2", "conv2_2", "conv3_2", "conv4_2"};
    return names;
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::generate(std::uint64_t seed, const std::vector<std::size_t>& widths)
{
    if (widths.size() != 4) throw std::invalid_argument("extractor: expected 4 block widths");
    FeatureExtractor ex;
    ex.widths_ = widths;
    std::mt19937_64 rng(seed);
    std::size_t c_in = 3;
    for (std::size_t b = 0; b < 4; ++b) {
        for (std::size_t i = 1; i <= 2; ++i) {
            const std::size_t c_out = widths[b];
            const std::size_t fan_in = c_in * 9;
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
            std::vector<T> w(c_out * fan_in);
            for (auto& v : w) v = static_cast<T>(dist(rng));
            Layer layer;
            layer.name = "conv" + std::to_string(b + 1) + "_" + std::to_string(i);
            layer.conv.weights = Tensor<T>({c_out, c_in, 3, 3}, std::move(w));
            layer.conv.bias = Tensor<T>::zeros({c_out});
            layer.conv.stride = Stride::integer(i == 1 && b > 0 ? 2 : 1);
            ex.layers_.push_back(std::move(layer));
            c_in = c_out;
        }
    }
    return ex;
}

template <typename T>
void FeatureExtractor<T>::save(const std::filesystem::path& dir) const
{
    TensorArchive archive;
    for (const auto& layer : layers_) {
        archive.add(layer.name + ".weight", layer.conv.weights.template cast<float>());
        archive.add(layer.name + ".bias", layer.conv.bias.template cast<float>());
    }
    archive.metadata()["format"] = kFormat;
    archive.metadata()["widths"] = widths_;
    archive.save(dir);
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::load(const std::filesystem::path& dir)
{
    const auto archive = TensorArchive::load(dir);
    const auto& meta = archive.metadata();
    if (meta.value("format", "") != kFormat || !meta.contains("widths")) {
        throw ManifestError("extractor: " + dir.string() + " is not a feature extractor archive");
    }
    FeatureExtractor ex;
    ex.widths_ = meta["widths"].get<std::vector<std::size_t>>();
    if (ex.widths_.size() != 4) throw ManifestError("extractor: expected 4 block widths");
    if (archive.size() != 16) throw LayoutError("extractor: expected 16 tensors, found " + std::to_string(archive.size()));
    std::size_t c_in = 3;
    for (std::size_t b = 0; b < 4; ++b) {
        for (std::size_t i = 1; i <= 2; ++i) {
            Layer layer;
            layer.name = "conv" + std::to_string(b + 1) + "_" + std::to_string(i);
            const auto c_out = ex.widths_[b];
            if (!archive.contains(layer.name + ".weight") || !archive.contains(layer.name + ".bias")) {
                throw LayoutError("extractor: missing tensors for " + layer.name);
            }
            auto w = archive.get(layer.name + ".weight");
            auto bias = archive.get(layer.name + ".bias");
            if (w.shape() != Shape{c_out, c_in, 3, 3} || bias.shape() != Shape{c_out}) {
                throw LayoutError("extractor: unexpected shape for " + layer.name);
            }
            layer.conv.weights = w.template cast<T>();
            layer.conv.bias = bias.template cast<T>();
            layer.conv.stride = Stride::integer(i == 1 && b > 0 ? 2 : 1);
            ex.layers_.push_back(std::move(layer));
            c_in = c_out;
        }
    }
    return ex;
}

template <typename T>
FeatureMap<T> FeatureExtractor<T>::extract(const Tensor<T>& image, const std::vector<std::string>& wanted) const
{
    if (image.rank() != 4 || image.dim(1) != 3) {
        throw ShapeError("extract_features: expected [n,3,H,W], got " + to_string(image.shape()));
    }
    if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0) {
        throw ShapeError("extract_features: spatial dims of " + to_string(image.shape()) + " not divisible by 8");
    }
    const auto& taps = wanted.empty() ? tap_names() : wanted;
    std::size_t last = 0;
    for (const auto& t : taps) {
        const auto it = std::find(tap_names().begin(), tap_names().end(), t);
        if (it == tap_names().end()) throw std::invalid_argument("extract_features: unknown tap '" + t + "'");
        last = std::max(last, static_cast<std::size_t>(it - tap_names().begin()));
    }
    FeatureMap<T> out;
    Tensor<T> x = image;
    for (std::size_t i = 0; i < 2 * (last + 1); ++i) {
        x = relu(conv2d(x, layers_[i].conv));
        if (std::find(taps.begin(), taps.end(), layers_[i].name) != taps.end()) out.emplace(layers_[i].name, x);
    }
    return out;
}

template <typename T>
template <typename U>
FeatureExtractor<U> FeatureExtractor<T>::cast() const
{
    FeatureExtractor<U> ex;
    ex.widths_ = widths_;
    for (const auto& l : layers_) {
        typename FeatureExtractor<U>::Layer layer;
        layer.name = l.name;
        layer.conv.weights = l.conv.weights.template cast<U>();
        layer.conv.bias = l.conv.bias.template cast<U>();
        layer.conv.stride = l.conv.stride;
        ex.layers_.push_back(std::move(layer));
    }
    return ex;
}

template <typename T>
PerceptualLoss<T>::PerceptualLoss(const FeatureExtractor<T>& extractor, std::vector<std::string> content_taps,
                                  std::vector<std::string> style_taps, GramNorm norm)
    : extractor_(&extractor), content_taps_(std::move(content_taps)), style_taps_(std::move(style_taps)), norm_(norm)
{
}

template <typename T>
std::vector<std::string> PerceptualLoss<T>::all_taps() const
{
    auto taps = content_taps_;
    for (const auto& t : style_taps_) {
        if (std::find(taps.begin(), taps.end(), t) == taps.end()) taps.push_back(t);
    }
    return taps;
}

namespace {

template <typename T>
Tensor<T> batched(const Tensor<T>& image)
{
    if (image.rank() == 3) return reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
    return image;
}

}  // namespace

template <typename T>
StyleTarget<T> PerceptualLoss<T>::style_target(const Tensor<T>& style_image) const
{
    TapeScope<T> off(nullptr);
    const auto image = batched(style_image.detach());
    if (image.dim(0) != 1) throw ShapeError("style_target: expected a single image, got " + to_string(image.shape()));
    StyleTarget<T> target;
    for (auto& [name, f] : extractor_->extract(image, style_taps_)) target.grams.emplace(name, gram_matrix(f));
    return target;
}

template <typename T>
FeatureMap<T> PerceptualLoss<T>::content_target(const Tensor<T>& image) const
{
    TapeScope<T> off(nullptr);
    return extractor_->extract(batched(image.detach()), content_taps_);
}

template <typename T>
Tensor<T> PerceptualLoss<T>::content_loss(const FeatureMap<T>& output, const FeatureMap<T>& content) const
{
    Tensor<T> total;
    for (const auto& tap : content_taps_) {
        auto term = squared_distance(output.at(tap), content.at(tap));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template <typename T>
Tensor<T> PerceptualLoss<T>::content_loss(const Tensor<T>& output, const Tensor<T>& content) const
{
    return content_loss(extractor_->extract(batched(output), content_taps_),
                        extractor_->extract(batched(content), content_taps_));
}

template <typename T>
Tensor<T> PerceptualLoss<T>::style_loss(const FeatureMap<T>& output, const StyleTarget<T>& target) const
{
    Tensor<T> total;
    for (const auto& tap : style_taps_) {
        const auto& f = output.at(tap);
        const auto g = gram_matrix(f);
        const auto& ref = target.grams.at(tap);
        const std::size_t n = f.dim(0), c = f.dim(1);
        if (ref.shape() != Shape{1, c, c}) {
            throw ShapeError("style_loss: target gram " + to_string(ref.shape()) + " does not match tap " + tap);
        }
        std::vector<T> tiled;
        tiled.reserve(n * c * c);
        for (std::size_t i = 0; i < n; ++i) tiled.insert(tiled.end(), ref.data().begin(), ref.data().end());
        const double units = static_cast<double>(f.dim(2) * f.dim(3)) * (norm_ == GramNorm::chw ? c : 1);
        auto term = scale(squared_distance(g, Tensor<T>({n, c, c}, std::move(tiled))), static_cast<T>(1.0 / units));
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template <typename T>
Tensor<T> PerceptualLoss<T>::style_loss(const Tensor<T>& output, const Tensor<T>& style_image) const
{
    return style_loss(extractor_->extract(batched(output), style_taps_), style_target(style_image));
}

template <typename T>
Tensor<T> PerceptualLoss<T>::perceptual_loss(const Tensor<T>& output, const FeatureMap<T>& content,
                                             const StyleTarget<T>& target, const LossWeights& weights) const
{
    weights.validate();
    const auto feats = extractor_->extract(batched(output), all_taps());
    auto c = scale(content_loss(feats, content), static_cast<T>(weights.alpha));
    if (weights.beta == 0) return c;
    return add(c, scale(style_loss(feats, target), static_cast<T>(weights.beta)));
}

template <typename T>
Tensor<T> PerceptualLoss<T>::perceptual_loss(const Tensor<T>& output, const Tensor<T>& content,
                                             const Tensor<T>& style_image, const LossWeights& weights) const
{
    return perceptual_loss(output, content_target(content), style_target(style_image), weights);
}

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& output, const Tensor<T>& content)
{
    if (output.shape() != content.shape()) {
        throw ShapeError("reconstruction_loss: " + to_string(output.shape()) + " vs " + to_string(content.shape()));
    }
    return squared_distance(output, content);
}

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;
template FeatureExtractor<double> FeatureExtractor<float>::cast<double>() const;
template FeatureExtractor<float> FeatureExtractor<double>::cast<float>() const;
template FeatureExtractor<float> FeatureExtractor<float>::cast<float>() const;
template class PerceptualLoss<float>;
template class PerceptualLoss<double>;
template Tensor<float> reconstruction_loss(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> reconstruction_loss(const Tensor<double>&, const Tensor<double>&);

}  // namespace styleremix
