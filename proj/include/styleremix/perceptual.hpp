#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "styleremix/nn.hpp"
#include "styleremix/tensor.hpp"

namespace styleremix {

struct LossWeights {
    double alpha = 1.0;
    double beta = 3e4;

    static LossWeights painting() { return {1.0, 6e4}; }
    void validate() const;
    bool operator==(const LossWeights&) const = default;
};

/// Style-loss normaliser n_l: channels*height*width, or height*width only.
enum class GramNorm { chw, hw };

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
GramNorm parse_gram_norm(const std::string& s);
std::string to_string(GramNorm n);

template <typename T>
using FeatureMap = std::map<std::string, Tensor<T>>;

/// Frozen 4-block conv stack. Block b holds conv{b}_1 then conv{b}_2, each a
/// 3x3 reflection-padded conv with bias followed by ReLU; conv{2,3,4}_1 use
/// stride 2. Taps are the post-ReLU conv{b}_2 outputs at strides 1, 2, 4, 8.
template <typename T>
class FeatureExtractor {
public:
    struct Layer {
        std::string name;
        ConvKernel<T> conv;
    };

    static constexpr const char* kFormat = "styleremix-extractor";

    /// Deterministic He-normal weights, zero biases.
    static FeatureExtractor generate(std::uint64_t seed, const std::vector<std::size_t>& widths = {16, 32, 64, 128});
    static FeatureExtractor load(const std::filesystem::path& dir);
    void save(const std::filesystem::path& dir) const;

    /// Taps in `wanted` (all four when empty). Later blocks are skipped when
    /// no requested tap needs them.
    FeatureMap<T> extract(const Tensor<T>& image, const std::vector<std::string>& wanted = {}) const;

    static const std::vector<std::string>& tap_names();
    const std::vector<Layer>& layers() const { return layers_; }
    const std::vector<std::size_t>& widths() const { return widths_; }

    template <typename U>
    FeatureExtractor<U> cast() const;

private:
    template <typename U>
    friend class FeatureExtractor;

    std::vector<std::size_t> widths_;
    std::vector<Layer> layers_;
};

extern template class FeatureExtractor<float>;
extern template class FeatureExtractor<double>;

/// Per-tap gram matrices of one style image, each [1,C,C].
template <typename T>
struct StyleTarget {
    FeatureMap<T> grams;
};

/// Content, style and perceptual losses over a fixed extractor.
template <typename T>
class PerceptualLoss {
public:
    PerceptualLoss(const FeatureExtractor<T>& extractor, std::vector<std::string> content_taps = {"conv2_2"},
                   std::vector<std::string> style_taps = {"conv1_2", "conv2_2", "conv3_2", "conv4_2"},
                   GramNorm norm = GramNorm::chw);

    const FeatureExtractor<T>& extractor() const { return *extractor_; }
    const std::vector<std::string>& content_taps() const { return content_taps_; }
    const std::vector<std::string>& style_taps() const { return style_taps_; }
    GramNorm norm() const { return norm_; }

    /// Gram matrices of a single [3,h,w] or [1,3,h,w] style image, computed
    /// without recording.
    StyleTarget<T> style_target(const Tensor<T>& style_image) const;
    /// Content-tap features of `image`, computed without recording.
    FeatureMap<T> content_target(const Tensor<T>& image) const;

    /// Sum over content taps of squared feature distance.
    Tensor<T> content_loss(const Tensor<T>& output, const Tensor<T>& content) const;
    Tensor<T> content_loss(const FeatureMap<T>& output, const FeatureMap<T>& content) const;
    /// Sum over style taps of ||G(output) - G(style)||^2 / n_l, summed over the batch.
    Tensor<T> style_loss(const Tensor<T>& output, const Tensor<T>& style_image) const;
    Tensor<T> style_loss(const FeatureMap<T>& output, const StyleTarget<T>& target) const;
    /// alpha * content + beta * style
    Tensor<T> perceptual_loss(const Tensor<T>& output, const Tensor<T>& content, const Tensor<T>& style_image,
                              const LossWeights& weights) const;
    Tensor<T> perceptual_loss(const Tensor<T>& output, const FeatureMap<T>& content, const StyleTarget<T>& target,
                              const LossWeights& weights) const;

private:
    std::vector<std::string> all_taps() const;

    const FeatureExtractor<T>* extractor_;
    std::vector<std::string> content_taps_;
    std::vector<std::string> style_taps_;
    GramNorm norm_;
};

extern template class PerceptualLoss<float>;
extern template class PerceptualLoss<double>;

/// Squared L2 distance over all pixels.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& output, const Tensor<T>& content);

}  // namespace styleremix
