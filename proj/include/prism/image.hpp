#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace prism {

/// Interleaved 8-bit raster, row-major. Color images are RGB (3 channels).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, fill) {}

    bool empty() const noexcept { return width <= 0 || height <= 0; }

    std::uint8_t* at(int x, int y) noexcept {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }
    const std::uint8_t* at(int x, int y) const noexcept {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Binary raster; any nonzero byte is foreground.
struct Mask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill) {}

    bool test(int x, int y) const noexcept {
        return bits[static_cast<std::size_t>(y) * width + x] != 0;
    }
    void set(int x, int y, bool on = true) noexcept {
        bits[static_cast<std::size_t>(y) * width + x] = on ? 1 : 0;
    }
    /// Foreground test for a sub-pixel location; false outside the raster.
    bool contains(double x, double y) const noexcept;
    std::size_t count() const noexcept;

    friend bool operator==(const Mask&, const Mask&) = default;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Decodes PNG or JPEG bytes. Throws DataError unless the result has 3 channels.
Image decode_image(std::span<const std::uint8_t> bytes);
Image load_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const Image& image);
void save_png(const Image& image, const std::filesystem::path& path);

/// Reads a single-channel 8-bit PNG mask; nonzero pixels become foreground.
Mask load_mask(const std::filesystem::path& path);
void save_mask(const Mask& mask, const std::filesystem::path& path);

/// Luma in [0, 1], one float per pixel.
std::vector<float> to_gray(const Image& image);

}  // namespace prism
