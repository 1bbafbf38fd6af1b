#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "styleremix/tensor.hpp"

namespace styleremix {

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 8-bit interleaved RGB.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> rgb;

    bool operator==(const Image&) const = default;
};

/// Decodes RGB or RGBA PNG (alpha dropped, 16-bit reduced, palette expanded).
/// Grayscale images are rejected as non-RGB.
Image decode_png(const std::vector<std::uint8_t>& bytes, const std::string& label = "<memory>");
Image read_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);

/// [3,H,W] floats in [0,1].
Tensor<float> image_to_tensor(const Image& image);
/// Accepts [3,H,W] or [1,3,H,W]; clamps to [0,1] and rounds to 8 bits.
Image tensor_to_image(const Tensor<float>& tensor);

/// Bilinear resampling with pixel-centre alignment.
Image resize_bilinear(const Image& image, std::size_t width, std::size_t height);
Image crop(const Image& image, std::size_t x0, std::size_t y0, std::size_t width, std::size_t height);
/// Largest centred square, resized to size x size.
Image center_square(const Image& image, std::size_t size);

/// Nearest multiple of 8 (halves round up), at least 8.
std::size_t round_to_8(std::size_t v);

/// Upscales so the short side reaches `crop_size` if needed, then takes a
/// random crop whose offsets come only from `rng`.
Tensor<float> preprocess_content(const std::filesystem::path& file, std::size_t crop_size, std::mt19937_64& rng);
Tensor<float> preprocess_content(const Image& image, std::size_t crop_size, std::mt19937_64& rng);
/// Aspect-preserving scale to `long_side`, then each side rounded to a
/// multiple of 8.
Tensor<float> preprocess_style(const std::filesystem::path& file, std::size_t long_side);
Tensor<float> preprocess_style(const Image& image, std::size_t long_side);

}  // namespace styleremix
