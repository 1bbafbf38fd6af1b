#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "styleremix/nn.hpp"
#include "styleremix/tensor.hpp"

namespace styleremix {

/// Autoencoder widths and basis size. The encoder's last width is the basis
/// channel count c, which is also the style-weight dimension.
struct ModelConfig {
    std::vector<std::size_t> enc_channels{16, 32, 64};
    std::size_t basis_channels = 64;
    std::size_t kernel = 3;
    std::size_t image_size = 64;

    static ModelConfig desk() { return {}; }
    static ModelConfig paper() { return {{32, 64, 256}, 256, 3, 512}; }

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Conv, optionally followed by instance norm and ReLU.
template <typename T>
struct ConvBlock {
    ConvKernel<T> conv;
    Tensor<T> gamma;  // undefined for the linear output layer
    Tensor<T> beta;

    Tensor<T> forward(const Tensor<T>& x) const;
};

/// Shared kernel bank B [c, c, k, k] plus the instance-norm affine that
/// follows the weighted convolution.
template <typename T>
struct StyleBasis {
    Tensor<T> kernels;
    Tensor<T> gamma;
    Tensor<T> beta;
};

/// Per-style parameters. A learnable layer holds pre-softmax logits and
/// yields softmax(theta). A fixed layer (StyleBank mode) stores the simplex
/// point itself in `theta` and is never optimised.
template <typename T>
struct StyleWeightsLayer {
    std::string name;
    Tensor<T> theta;
    bool learnable = true;
    std::string reference;  // path of the style image it was trained on

    Tensor<T> weights() const;
};

template <typename T>
Tensor<T> style_weights_forward(const StyleWeightsLayer<T>& layer) { return layer.weights(); }

/// Materialised weighted basis: input slice i of B scaled by w[i].
template <typename T>
Tensor<T> weighted_basis(const StyleBasis<T>& basis, const Tensor<T>& weights);

/// relu(IN(conv(F * w, B))): the channel-scaling form of convolving with the
/// weighted basis.
template <typename T>
Tensor<T> apply_style(const Tensor<T>& features, const StyleBasis<T>& basis, const Tensor<T>& weights);

/// relu(IN(conv(F, weighted_basis(B, w)))). Reference path for apply_style.
template <typename T>
Tensor<T> apply_style_materialized(const Tensor<T>& features, const StyleBasis<T>& basis,
                                   const Tensor<T>& weights);

template <typename T>
class StyleRegistry {
public:
    StyleWeightsLayer<T>& add(StyleWeightsLayer<T> layer);
    bool contains(const std::string& name) const;
    std::size_t index_of(const std::string& name) const;
    const StyleWeightsLayer<T>& at(std::size_t i) const { return layers_.at(i); }
    StyleWeightsLayer<T>& at(std::size_t i) { return layers_.at(i); }
    const StyleWeightsLayer<T>& get(const std::string& name) const { return layers_[index_of(name)]; }
    std::size_t size() const { return layers_.size(); }
    bool empty() const { return layers_.empty(); }
    std::vector<std::string> names() const;

    auto begin() const { return layers_.begin(); }
    auto end() const { return layers_.end(); }

private:
    std::vector<StyleWeightsLayer<T>> layers_;
};

template <typename T>
using NamedTensor = std::pair<std::string, Tensor<T>>;

/// Encoder E, style basis B, decoder D and the style registry.
template <typename T>
class StyleRemixModel {
public:
    StyleRemixModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    std::size_t channels() const { return config_.basis_channels; }

    /// [n,3,H,W] -> [n,c,H/4,W/4]
    Tensor<T> encode(const Tensor<T>& image) const;
    /// [n,c,h,w] -> [n,3,4h,4w], unclamped
    Tensor<T> decode(const Tensor<T>& features) const;
    Tensor<T> apply_style(const Tensor<T>& features, const Tensor<T>& weights) const;
    /// Autoencoder branch E -> D, bypassing the basis.
    Tensor<T> reconstruct(const Tensor<T>& image) const;
    /// Stylizing branch E -> (W -> B) -> D with an explicit weight vector.
    Tensor<T> stylize(const Tensor<T>& image, const Tensor<T>& weights) const;
    /// Stylizing branch through a registered style's weight layer.
    Tensor<T> stylize(const Tensor<T>& image, const std::string& style) const;

    /// Registers a learnable style with all-equal logits (uniform weights).
    StyleWeightsLayer<T>& add_style(const std::string& name, const std::string& reference = "");
    /// Registers a non-learnable style with the given simplex weights.
    StyleWeightsLayer<T>& add_fixed_style(const std::string& name, const Tensor<T>& weights,
                                          const std::string& reference = "");

    const StyleRegistry<T>& styles() const { return styles_; }
    StyleRegistry<T>& styles() { return styles_; }
    const StyleBasis<T>& basis() const { return basis_; }
    StyleBasis<T>& basis() { return basis_; }

    std::vector<NamedTensor<T>> autoencoder_parameters() const;
    std::vector<NamedTensor<T>> basis_parameters() const;
    std::vector<NamedTensor<T>> style_parameters() const;
    /// Autoencoder, basis, then styles in registry order.
    std::vector<NamedTensor<T>> parameters() const;
    std::size_t parameter_count() const;

    template <typename U>
    StyleRemixModel<U> cast() const;

private:
    template <typename U>
    friend class StyleRemixModel;
    StyleRemixModel() = default;

    void check_image(const Tensor<T>& image) const;

    ModelConfig config_;
    std::vector<ConvBlock<T>> encoder_;
    StyleBasis<T> basis_;
    std::vector<ConvBlock<T>> decoder_;
    StyleRegistry<T> styles_;
};

extern template class StyleRemixModel<float>;
extern template class StyleRemixModel<double>;

/// Writes config, registry and every parameter tensor.
void save_checkpoint(const StyleRemixModel<float>& model, const std::filesystem::path& dir);
/// Throws a CheckpointError subclass on any inconsistency; never returns a
/// partially populated model.
StyleRemixModel<float> load_checkpoint(const std::filesystem::path& dir);

}  // namespace styleremix
