#include "styleremix/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace styleremix {

Image decode_png(const std::vector<std::uint8_t>& bytes, const std::string& label)
{
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
        throw ImageError(label + ": not a readable PNG (" + png.message + ")");
    }
    if (!(png.format & PNG_FORMAT_FLAG_COLOR)) {
        png_image_free(&png);
        throw ImageError(label + ": not an RGB image");
    }
    png.format = PNG_FORMAT_RGB;
    Image out;
    out.width = png.width;
    out.height = png.height;
    out.rgb.resize(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, out.rgb.data(), 0, nullptr)) {
        throw ImageError(label + ": corrupt PNG data (" + png.message + ")");
    }
    return out;
}

Image read_png(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError(path.string() + ": cannot open");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_png(bytes, path.string());
}

std::vector<std::uint8_t> encode_png(const Image& image)
{
    if (image.rgb.size() != image.width * image.height * 3 || image.width == 0 || image.height == 0) {
        throw ImageError("encode_png: buffer does not match " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + " RGB");
    }
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.rgb.data(), 0, nullptr)) {
        throw ImageError(std::string("encode_png: ") + png.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.rgb.data(), 0, nullptr)) {
        throw ImageError(std::string("encode_png: ") + png.message);
    }
    out.resize(size);
    return out;
}

void write_png(const std::filesystem::path& path, const Image& image)
{
    const auto bytes = encode_png(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageError(path.string() + ": write failed");
}

Tensor<float> image_to_tensor(const Image& image)
{
    const std::size_t area = image.width * image.height;
    std::vector<float> values(3 * area);
    for (std::size_t p = 0; p < area; ++p)
        for (std::size_t c = 0; c < 3; ++c) values[c * area + p] = static_cast<float>(image.rgb[p * 3 + c]) / 255.0f;
    return Tensor<float>({3, image.height, image.width}, std::move(values));
}

Image tensor_to_image(const Tensor<float>& tensor)
{
    const auto& s = tensor.shape();
    const bool batched = s.size() == 4;
    if (!(s.size() == 3 || (batched && s[0] == 1)) || s[batched ? 1 : 0] != 3) {
        throw ShapeError("tensor_to_image: expected [3,H,W] or [1,3,H,W], got " + to_string(s));
    }
    Image out;
    out.height = s[s.size() - 2];
    out.width = s[s.size() - 1];
    const std::size_t area = out.width * out.height;
    out.rgb.resize(area * 3);
    auto data = tensor.data();
    for (std::size_t p = 0; p < area; ++p)
        for (std::size_t c = 0; c < 3; ++c) {
            const float v = std::clamp(data[c * area + p], 0.0f, 1.0f);
            out.rgb[p * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    return out;
}

Image resize_bilinear(const Image& image, std::size_t width, std::size_t height)
{
    if (width == 0 || height == 0) throw ImageError("resize_bilinear: target size must be positive");
    if (width == image.width && height == image.height) return image;
    Image out{width, height, std::vector<std::uint8_t>(width * height * 3)};
    const double sx = static_cast<double>(image.width) / static_cast<double>(width);
    const double sy = static_cast<double>(image.height) / static_cast<double>(height);
    auto source = [](double pos, std::size_t n, std::size_t& i0, std::size_t& i1, double& frac) {
        pos = std::clamp(pos, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::size_t>(std::floor(pos));
        i1 = std::min(i0 + 1, n - 1);
        frac = pos - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < height; ++y) {
        std::size_t y0, y1;
        double fy;
        source((static_cast<double>(y) + 0.5) * sy - 0.5, image.height, y0, y1, fy);
        for (std::size_t x = 0; x < width; ++x) {
            std::size_t x0, x1;
            double fx;
            source((static_cast<double>(x) + 0.5) * sx - 0.5, image.width, x0, x1, fx);
            for (std::size_t c = 0; c < 3; ++c) {
                auto px = [&](std::size_t yy, std::size_t xx) {
                    return static_cast<double>(image.rgb[(yy * image.width + xx) * 3 + c]);
                };
                const double top = px(y0, x0) * (1 - fx) + px(y0, x1) * fx;
                const double bottom = px(y1, x0) * (1 - fx) + px(y1, x1) * fx;
                const double v = top * (1 - fy) + bottom * fy;
                out.rgb[(y * width + x) * 3 + c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

Image crop(const Image& image, std::size_t x0, std::size_t y0, std::size_t width, std::size_t height)
{
    if (x0 + width > image.width || y0 + height > image.height) {
        throw ImageError("crop: window exceeds " + std::to_string(image.width) + "x" + std::to_string(image.height));
    }
    Image out{width, height, std::vector<std::uint8_t>(width * height * 3)};
    for (std::size_t y = 0; y < height; ++y) {
        const auto* row = image.rgb.data() + ((y0 + y) * image.width + x0) * 3;
        std::copy(row, row + width * 3, out.rgb.begin() + static_cast<long>(y * width * 3));
    }
    return out;
}

Image center_square(const Image& image, std::size_t size)
{
    const std::size_t side = std::min(image.width, image.height);
    return resize_bilinear(crop(image, (image.width - side) / 2, (image.height - side) / 2, side, side), size, size);
}

std::size_t round_to_8(std::size_t v)
{
    return std::max<std::size_t>(8, (v + 4) / 8 * 8);
}

Tensor<float> preprocess_content(const Image& image, std::size_t crop_size, std::mt19937_64& rng)
{
    Image source = image;
    const std::size_t short_side = std::min(image.width, image.height);
    if (short_side < crop_size) {
        const double scale = static_cast<double>(crop_size) / static_cast<double>(short_side);
        const auto w = std::max(crop_size, static_cast<std::size_t>(std::ceil(image.width * scale - 1e-9)));
        const auto h = std::max(crop_size, static_cast<std::size_t>(std::ceil(image.height * scale - 1e-9)));
        source = resize_bilinear(image, w, h);
    }
    std::uniform_int_distribution<std::size_t> dx(0, source.width - crop_size);
    std::uniform_int_distribution<std::size_t> dy(0, source.height - crop_size);
    const auto x0 = dx(rng);
    const auto y0 = dy(rng);
    return image_to_tensor(crop(source, x0, y0, crop_size, crop_size));
}

Tensor<float> preprocess_content(const std::filesystem::path& file, std::size_t crop_size, std::mt19937_64& rng)
{
    return preprocess_content(read_png(file), crop_size, rng);
}

Tensor<float> preprocess_style(const Image& image, std::size_t long_side)
{
    const double scale = static_cast<double>(long_side) / static_cast<double>(std::max(image.width, image.height));
    const auto w = round_to_8(static_cast<std::size_t>(std::lround(image.width * scale)));
    const auto h = round_to_8(static_cast<std::size_t>(std::lround(image.height * scale)));
    return image_to_tensor(resize_bilinear(image, w, h));
}

Tensor<float> preprocess_style(const std::filesystem::path& file, std::size_t long_side)
{
    return preprocess_style(read_png(file), long_side);
}

}  // namespace styleremix
