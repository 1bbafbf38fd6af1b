#include "styleremix/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "styleremix/checkpoint.hpp"
#include "styleremix/tape.hpp"

namespace styleremix {

namespace {

constexpr float kNormEps = 1e-5f;

template <typename T>
Tensor<T> he_uniform(Shape shape, std::mt19937_64& rng)
{
    const auto fan_in = shape[1] * shape[2] * shape[3];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<T>(dist(rng));
    return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
ConvBlock<T> make_block(std::size_t c_in, std::size_t c_out, std::size_t k, Stride stride, bool normalized,
                        std::mt19937_64& rng)
{
    ConvBlock<T> block;
    block.conv.weights = he_uniform<T>({c_out, c_in, k, k}, rng);
    block.conv.stride = stride;
    if (normalized) {
        block.gamma = Tensor<T>::full({c_out}, T(1), true);
        block.beta = Tensor<T>::zeros({c_out}, true);
    } else {
        block.conv.bias = Tensor<T>::zeros({c_out}, true);
    }
    return block;
}

template <typename U, typename T>
Tensor<U> cast_param(const Tensor<T>& t)
{
    if (!t.defined()) return {};
    auto out = t.template cast<U>();
    out.set_requires_grad(t.requires_grad());
    return out;
}

template <typename U, typename T>
ConvBlock<U> cast_block(const ConvBlock<T>& b)
{
    ConvBlock<U> out;
    out.conv.weights = cast_param<U>(b.conv.weights);
    out.conv.bias = cast_param<U>(b.conv.bias);
    out.conv.stride = b.conv.stride;
    out.gamma = cast_param<U>(b.gamma);
    out.beta = cast_param<U>(b.beta);
    return out;
}

}  // namespace

void ModelConfig::validate() const
{
    if (enc_channels.size() != 3) throw std::invalid_argument("config: enc_channels must list 3 widths");
    for (auto c : enc_channels) {
        if (c == 0) throw std::invalid_argument("config: channel widths must be positive");
    }
    if (basis_channels != enc_channels.back()) {
        throw std::invalid_argument("config: basis_channels must equal the encoder output width");
    }
    if (kernel % 2 == 0) throw std::invalid_argument("config: kernel size must be odd");
    if (image_size == 0 || image_size % 4 != 0) {
        throw std::invalid_argument("config: image_size must be a positive multiple of 4");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c)
{
    j = {{"enc_channels", c.enc_channels},
         {"basis_channels", c.basis_channels},
         {"kernel", c.kernel},
         {"image_size", c.image_size}};
}

void from_json(const nlohmann::json& j, ModelConfig& c)
{
    ModelConfig d;
    c.enc_channels = j.value("enc_channels", d.enc_channels);
    c.basis_channels = j.value("basis_channels", c.enc_channels.empty() ? d.basis_channels : c.enc_channels.back());
    c.kernel = j.value("kernel", d.kernel);
    c.image_size = j.value("image_size", d.image_size);
}

template <typename T>
Tensor<T> ConvBlock<T>::forward(const Tensor<T>& x) const
{
    Tensor<T> y = conv.stride.is_half() ? upsample_conv2d(x, conv) : conv2d(x, conv);
    if (!gamma.defined()) return y;
    return relu(instance_norm(y, gamma, beta, T(kNormEps)));
}

template <typename T>
Tensor<T> StyleWeightsLayer<T>::weights() const
{
    if (learnable) return softmax_vec(theta);
    return theta;
}

template <typename T>
Tensor<T> weighted_basis(const StyleBasis<T>& basis, const Tensor<T>& weights)
{
    if (weights.rank() != 1 || weights.numel() != basis.kernels.dim(1)) {
        throw ShapeError("weighted_basis: weights " + to_string(weights.shape()) + " vs basis " +
                         to_string(basis.kernels.shape()));
    }
    return scale_input_slices(basis.kernels, weights);
}

template <typename T>
Tensor<T> apply_style(const Tensor<T>& features, const StyleBasis<T>& basis, const Tensor<T>& weights)
{
    const ConvKernel<T> kernel{basis.kernels, {}, Stride::integer(1)};
    auto mixed = conv2d(scale_channels(features, weights), kernel);
    return relu(instance_norm(mixed, basis.gamma, basis.beta, T(kNormEps)));
}

template <typename T>
Tensor<T> apply_style_materialized(const Tensor<T>& features, const StyleBasis<T>& basis,
                                   const Tensor<T>& weights)
{
    const ConvKernel<T> kernel{weighted_basis(basis, weights), {}, Stride::integer(1)};
    return relu(instance_norm(conv2d(features, kernel), basis.gamma, basis.beta, T(kNormEps)));
}

template <typename T>
StyleWeightsLayer<T>& StyleRegistry<T>::add(StyleWeightsLayer<T> layer)
{
    if (contains(layer.name)) throw std::invalid_argument("style registry: duplicate style name '" + layer.name + "'");
    layers_.push_back(std::move(layer));
    return layers_.back();
}

template <typename T>
bool StyleRegistry<T>::contains(const std::string& name) const
{
    for (const auto& l : layers_)
        if (l.name == name) return true;
    return false;
}

template <typename T>
std::size_t StyleRegistry<T>::index_of(const std::string& name) const
{
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].name == name) return i;
    throw std::out_of_range("unknown style '" + name + "'");
}

template <typename T>
std::vector<std::string> StyleRegistry<T>::names() const
{
    std::vector<std::string> out;
    for (const auto& l : layers_) out.push_back(l.name);
    return out;
}

template <typename T>
StyleRemixModel<T>::StyleRemixModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config))
{
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto k = config_.kernel;
    const auto& e = config_.enc_channels;
    const auto c = config_.basis_channels;

    encoder_.push_back(make_block<T>(3, e[0], k, Stride::integer(1), true, rng));
    encoder_.push_back(make_block<T>(e[0], e[1], k, Stride::integer(2), true, rng));
    encoder_.push_back(make_block<T>(e[1], e[2], k, Stride::integer(2), true, rng));

    basis_.kernels = he_uniform<T>({c, c, k, k}, rng);
    basis_.gamma = Tensor<T>::full({c}, T(1), true);
    basis_.beta = Tensor<T>::zeros({c}, true);

    decoder_.push_back(make_block<T>(c, e[1], k, Stride::half(), true, rng));
    decoder_.push_back(make_block<T>(e[1], e[0], k, Stride::half(), true, rng));
    decoder_.push_back(make_block<T>(e[0], 3, k, Stride::integer(1), false, rng));
}

template <typename T>
void StyleRemixModel<T>::check_image(const Tensor<T>& image) const
{
    if (image.rank() != 4 || image.dim(1) != 3) {
        throw ShapeError("model: expected image [n,3,H,W], got " + to_string(image.shape()));
    }
    if (image.dim(2) % 4 != 0 || image.dim(3) % 4 != 0) {
        throw ShapeError("model: image dims of " + to_string(image.shape()) + " must be divisible by 4");
    }
}

template <typename T>
Tensor<T> StyleRemixModel<T>::encode(const Tensor<T>& image) const
{
    check_image(image);
    Tensor<T> x = image;
    for (const auto& block : encoder_) x = block.forward(x);
    return x;
}

template <typename T>
Tensor<T> StyleRemixModel<T>::decode(const Tensor<T>& features) const
{
    if (features.rank() != 4 || features.dim(1) != channels()) {
        throw ShapeError("model: decode expects [n," + std::to_string(channels()) + ",h,w], got " +
                         to_string(features.shape()));
    }
    Tensor<T> x = features;
    for (const auto& block : decoder_) x = block.forward(x);
    return x;
}

template <typename T>
Tensor<T> StyleRemixModel<T>::apply_style(const Tensor<T>& features, const Tensor<T>& weights) const
{
    return styleremix::apply_style(features, basis_, weights);
}

template <typename T>
Tensor<T> StyleRemixModel<T>::reconstruct(const Tensor<T>& image) const
{
    return decode(encode(image));
}

template <typename T>
Tensor<T> StyleRemixModel<T>::stylize(const Tensor<T>& image, const Tensor<T>& weights) const
{
    if (weights.rank() != 1 || weights.numel() != channels()) {
        throw ShapeError("model: style weights must have shape [" + std::to_string(channels()) + "], got " +
                         to_string(weights.shape()));
    }
    return decode(apply_style(encode(image), weights));
}

template <typename T>
Tensor<T> StyleRemixModel<T>::stylize(const Tensor<T>& image, const std::string& style) const
{
    return stylize(image, styles_.get(style).weights());
}

template <typename T>
StyleWeightsLayer<T>& StyleRemixModel<T>::add_style(const std::string& name, const std::string& reference)
{
    StyleWeightsLayer<T> layer;
    layer.name = name;
    layer.theta = Tensor<T>::zeros({channels()}, true);
    layer.learnable = true;
    layer.reference = reference;
    return styles_.add(std::move(layer));
}

template <typename T>
StyleWeightsLayer<T>& StyleRemixModel<T>::add_fixed_style(const std::string& name, const Tensor<T>& weights,
                                                          const std::string& reference)
{
    if (weights.shape() != Shape{channels()}) {
        throw ShapeError("model: fixed style weights must have shape [" + std::to_string(channels()) + "]");
    }
    StyleWeightsLayer<T> layer;
    layer.name = name;
    layer.theta = weights.clone(false);
    layer.learnable = false;
    layer.reference = reference;
    return styles_.add(std::move(layer));
}

template <typename T>
std::vector<NamedTensor<T>> StyleRemixModel<T>::autoencoder_parameters() const
{
    std::vector<NamedTensor<T>> out;
    auto add_blocks = [&out](const std::vector<ConvBlock<T>>& blocks, const std::string& prefix) {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto p = prefix + "." + std::to_string(i) + ".";
            out.emplace_back(p + "weight", blocks[i].conv.weights);
            if (blocks[i].conv.bias.defined()) out.emplace_back(p + "bias", blocks[i].conv.bias);
            if (blocks[i].gamma.defined()) {
                out.emplace_back(p + "gamma", blocks[i].gamma);
                out.emplace_back(p + "beta", blocks[i].beta);
            }
        }
    };
    add_blocks(encoder_, "encoder");
    add_blocks(decoder_, "decoder");
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> StyleRemixModel<T>::basis_parameters() const
{
    return {{"basis.weight", basis_.kernels}, {"basis.gamma", basis_.gamma}, {"basis.beta", basis_.beta}};
}

template <typename T>
std::vector<NamedTensor<T>> StyleRemixModel<T>::style_parameters() const
{
    std::vector<NamedTensor<T>> out;
    for (const auto& s : styles_) out.emplace_back("styles." + s.name + ".theta", s.theta);
    return out;
}

template <typename T>
std::vector<NamedTensor<T>> StyleRemixModel<T>::parameters() const
{
    auto out = autoencoder_parameters();
    for (auto& p : basis_parameters()) out.push_back(std::move(p));
    for (auto& p : style_parameters()) out.push_back(std::move(p));
    return out;
}

template <typename T>
std::size_t StyleRemixModel<T>::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& [name, t] : parameters()) n += t.numel();
    return n;
}

template <typename T>
template <typename U>
StyleRemixModel<U> StyleRemixModel<T>::cast() const
{
    StyleRemixModel<U> out;
    out.config_ = config_;
    for (const auto& b : encoder_) out.encoder_.push_back(cast_block<U>(b));
    for (const auto& b : decoder_) out.decoder_.push_back(cast_block<U>(b));
    out.basis_.kernels = cast_param<U>(basis_.kernels);
    out.basis_.gamma = cast_param<U>(basis_.gamma);
    out.basis_.beta = cast_param<U>(basis_.beta);
    for (const auto& s : styles_) {
        StyleWeightsLayer<U> layer{s.name, cast_param<U>(s.theta), s.learnable, s.reference};
        out.styles_.add(std::move(layer));
    }
    return out;
}

void save_checkpoint(const StyleRemixModel<float>& model, const std::filesystem::path& dir)
{
    TensorArchive archive;
    for (const auto& [name, t] : model.parameters()) archive.add(name, t);
    auto& meta = archive.metadata();
    meta["format"] = "styleremix-model";
    meta["config"] = model.config();
    nlohmann::json styles = nlohmann::json::array();
    std::size_t order = 0;
    for (const auto& s : model.styles()) {
        styles.push_back({{"name", s.name}, {"order", order++}, {"learnable", s.learnable}, {"reference", s.reference}});
    }
    meta["styles"] = std::move(styles);
    archive.save(dir);
}

StyleRemixModel<float> load_checkpoint(const std::filesystem::path& dir)
{
    const auto archive = TensorArchive::load(dir);
    const auto& meta = archive.metadata();
    if (meta.value("format", "") != "styleremix-model" || !meta.contains("config") || !meta.contains("styles")) {
        throw ManifestError("checkpoint: " + dir.string() + " is not a model checkpoint");
    }
    ModelConfig config;
    try {
        config = meta["config"].get<ModelConfig>();
        config.validate();
    } catch (const std::exception& e) {
        throw ManifestError(std::string("checkpoint: bad config: ") + e.what());
    }

    StyleRemixModel<float> model(config, 0);
    std::vector<std::pair<std::size_t, nlohmann::json>> ordered;
    for (const auto& s : meta["styles"]) {
        if (!s.contains("name") || !s.contains("order")) throw ManifestError("checkpoint: malformed style entry");
        ordered.emplace_back(s["order"].get<std::size_t>(), s);
    }
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        if (ordered[i].first != i) throw ManifestError("checkpoint: style order is not 0..n-1");
        const auto& s = ordered[i].second;
        const auto name = s["name"].get<std::string>();
        const auto reference = s.value("reference", std::string());
        try {
            if (s.value("learnable", true)) {
                model.add_style(name, reference);
            } else {
                model.add_fixed_style(name, Tensor<float>::zeros({config.basis_channels}), reference);
            }
        } catch (const std::invalid_argument& e) {
            throw ManifestError(std::string("checkpoint: ") + e.what());
        }
    }

    const auto params = model.parameters();
    if (params.size() != archive.size()) {
        throw LayoutError("checkpoint: manifest lists " + std::to_string(archive.size()) + " tensors, model has " +
                          std::to_string(params.size()));
    }
    for (const auto& [name, tensor] : params) {
        if (!archive.contains(name)) throw LayoutError("checkpoint: missing tensor " + name);
        const auto stored = archive.get(name);
        if (stored.shape() != tensor.shape()) {
            throw LayoutError("checkpoint: tensor " + name + " has shape " + to_string(stored.shape()) +
                              ", model expects " + to_string(tensor.shape()));
        }
        auto dst = Tensor<float>(tensor).mutable_data();
        std::copy(stored.data().begin(), stored.data().end(), dst.begin());
    }
    return model;
}

template struct ConvBlock<float>;
template struct ConvBlock<double>;
template struct StyleWeightsLayer<float>;
template struct StyleWeightsLayer<double>;
template class StyleRegistry<float>;
template class StyleRegistry<double>;
template class StyleRemixModel<float>;
template class StyleRemixModel<double>;
template StyleRemixModel<double> StyleRemixModel<float>::cast<double>() const;
template StyleRemixModel<float> StyleRemixModel<double>::cast<float>() const;
template StyleRemixModel<float> StyleRemixModel<float>::cast<float>() const;
template Tensor<float> weighted_basis(const StyleBasis<float>&, const Tensor<float>&);
template Tensor<double> weighted_basis(const StyleBasis<double>&, const Tensor<double>&);
template Tensor<float> apply_style(const Tensor<float>&, const StyleBasis<float>&, const Tensor<float>&);
template Tensor<double> apply_style(const Tensor<double>&, const StyleBasis<double>&, const Tensor<double>&);
template Tensor<float> apply_style_materialized(const Tensor<float>&, const StyleBasis<float>&, const Tensor<float>&);
template Tensor<double> apply_style_materialized(const Tensor<double>&, const StyleBasis<double>&,
                                                 const Tensor<double>&);

}  // namespace styleremix
