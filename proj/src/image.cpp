#include "prism/image.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "prism/error.hpp"

namespace prism {

bool Mask::contains(double x, double y) const noexcept {
    const long xi = std::lround(x);
    const long yi = std::lround(y);
    if (xi < 0 || yi < 0 || xi >= width || yi >= height) return false;
    return test(static_cast<int>(xi), static_cast<int>(yi));
}

std::size_t Mask::count() const noexcept {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write: " + path.string());
}

namespace {

cv::Mat decode_raw(std::span<const std::uint8_t> bytes, int flags) {
    if (bytes.empty()) throw DataError("empty image buffer");
    const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1,
                      const_cast<std::uint8_t*>(bytes.data()));
    cv::Mat decoded;
    try {
        decoded = cv::imdecode(buf, flags);
    } catch (const cv::Exception& e) {
        throw DataError(std::string("image decode failed: ") + e.what());
    }
    if (decoded.empty()) throw DataError("image decode failed");
    if (decoded.depth() != CV_8U) throw DataError("image is not 8-bit");
    return decoded;
}

std::vector<std::uint8_t> encode(const cv::Mat& mat) {
    std::vector<std::uint8_t> out;
    // Fixed compression level keeps output byte-stable across runs.
    const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
    if (!cv::imencode(".png", mat, out, params)) throw DataError("png encode failed");
    return out;
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
    cv::Mat bgr = decode_raw(bytes, cv::IMREAD_UNCHANGED);
    if (bgr.channels() != 3) {
        throw DataError("expected a 3-channel image, got " + std::to_string(bgr.channels()));
    }
    Image img(bgr.cols, bgr.rows, 3);
    for (int y = 0; y < bgr.rows; ++y) {
        const auto* row = bgr.ptr<std::uint8_t>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            auto* px = img.at(x, y);
            px[0] = row[3 * x + 2];
            px[1] = row[3 * x + 1];
            px[2] = row[3 * x + 0];
        }
    }
    return img;
}

Image load_image(const std::filesystem::path& path) {
    try {
        return decode_image(read_file_bytes(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_png(const Image& image) {
    if (image.channels != 3 && image.channels != 1) throw DataError("png encode: unsupported channel count");
    cv::Mat mat(image.height, image.width, image.channels == 3 ? CV_8UC3 : CV_8UC1);
    for (int y = 0; y < image.height; ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < image.width; ++x) {
            const auto* px = image.at(x, y);
            if (image.channels == 3) {
                row[3 * x + 0] = px[2];
                row[3 * x + 1] = px[1];
                row[3 * x + 2] = px[0];
            } else {
                row[x] = px[0];
            }
        }
    }
    return encode(mat);
}

void save_png(const Image& image, const std::filesystem::path& path) {
    write_file_bytes(path, encode_png(image));
}

Mask load_mask(const std::filesystem::path& path) {
    cv::Mat raw;
    try {
        raw = decode_raw(read_file_bytes(path), cv::IMREAD_UNCHANGED);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    if (raw.channels() != 1) throw DataError(path.string() + ": mask must be single-channel");
    Mask mask(raw.cols, raw.rows);
    for (int y = 0; y < raw.rows; ++y) {
        const auto* row = raw.ptr<std::uint8_t>(y);
        for (int x = 0; x < raw.cols; ++x) mask.set(x, y, row[x] != 0);
    }
    return mask;
}

void save_mask(const Mask& mask, const std::filesystem::path& path) {
    cv::Mat mat(mask.height, mask.width, CV_8UC1);
    for (int y = 0; y < mask.height; ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.width; ++x) row[x] = mask.test(x, y) ? 255 : 0;
    }
    write_file_bytes(path, encode(mat));
}

std::vector<float> to_gray(const Image& image) {
    std::vector<float> gray(static_cast<std::size_t>(image.width) * image.height);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const auto* px = image.at(x, y);
            float v;
            if (image.channels >= 3) {
                v = (0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2]) / 255.0f;
            } else {
                v = px[0] / 255.0f;
            }
            gray[static_cast<std::size_t>(y) * image.width + x] = v;
        }
    }
    return gray;
}

}  // namespace prism
