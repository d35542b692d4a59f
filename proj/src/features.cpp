#include "prism/features.hpp"

#include <algorithm>
#include <cmath>

#include "prism/error.hpp"

namespace prism {

namespace {

std::vector<float> gaussian_kernel(float sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
    std::vector<float> k(2 * radius + 1);
    float sum = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5f * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (auto& v : k) v /= sum;
    return k;
}

/// Separable convolution with edge replication.
std::vector<float> blur(std::span<const float> src, int w, int h, float sigma) {
    const auto kernel = gaussian_kernel(sigma);
    const int r = static_cast<int>(kernel.size() / 2);
    const auto W = static_cast<std::size_t>(w);
    std::vector<float> tmp(src.size(), 0.0f);
    std::vector<float> out(src.size(), 0.0f);
    std::vector<float> padded(W + 2 * static_cast<std::size_t>(r));
    for (int y = 0; y < h; ++y) {
        const float* row = src.data() + static_cast<std::size_t>(y) * W;
        for (int x = -r; x < w + r; ++x) padded[static_cast<std::size_t>(x + r)] = row[std::clamp(x, 0, w - 1)];
        float* dst = tmp.data() + static_cast<std::size_t>(y) * W;
        for (int i = 0; i <= 2 * r; ++i) {
            const float kv = kernel[static_cast<std::size_t>(i)];
            const float* p = padded.data() + i;
            for (std::size_t x = 0; x < W; ++x) dst[x] += kv * p[x];
        }
    }
    for (int y = 0; y < h; ++y) {
        float* dst = out.data() + static_cast<std::size_t>(y) * W;
        for (int i = -r; i <= r; ++i) {
            const float kv = kernel[static_cast<std::size_t>(i + r)];
            const float* p = tmp.data() + static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * W;
            for (std::size_t x = 0; x < W; ++x) dst[x] += kv * p[x];
        }
    }
    return out;
}

float bilinear(std::span<const float> img, int w, float x, float y) {
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const float fx = x - x0;
    const float fy = y - y0;
    const float* r0 = img.data() + static_cast<std::size_t>(y0) * w + x0;
    const float* r1 = r0 + w;
    return (1 - fy) * ((1 - fx) * r0[0] + fx * r0[1]) + fy * ((1 - fx) * r1[0] + fx * r1[1]);
}

float parabolic_offset(float left, float center, float right) {
    const float denom = left - 2.0f * center + right;
    if (denom >= 0.0f) return 0.0f;
    return std::clamp(0.5f * (left - right) / denom, -0.49f, 0.49f);
}

}  // namespace

FeatureSet translated(FeatureSet features, float dx, float dy) {
    for (auto& kp : features.keypoints) {
        kp.x += dx;
        kp.y += dy;
    }
    return features;
}

std::vector<float> harris_response(std::span<const float> gray, int w, int h, float window_sigma,
                                   float k) {
    const std::size_t n = static_cast<std::size_t>(w) * h;
    std::vector<float> ixx(n), iyy(n), ixy(n);
    auto px = [&](int x, int y) {
        return gray[static_cast<std::size_t>(std::clamp(y, 0, h - 1)) * w + std::clamp(x, 0, w - 1)];
    };
    auto sobel = [&](int x, int y, auto&& at) {
        const float gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1) -
                          at(x - 1, y - 1) - 2 * at(x - 1, y) - at(x - 1, y + 1)) / 8.0f;
        const float gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1) -
                          at(x - 1, y - 1) - 2 * at(x, y - 1) - at(x + 1, y - 1)) / 8.0f;
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        ixx[i] = gx * gx;
        iyy[i] = gy * gy;
        ixy[i] = gx * gy;
    };
    auto direct = [&](int x, int y) { return gray[static_cast<std::size_t>(y) * w + x]; };
    for (int y = 0; y < h; ++y) {
        const bool edge_row = y == 0 || y == h - 1;
        for (int x = 0; x < w; ++x) {
            if (edge_row || x == 0 || x == w - 1) sobel(x, y, px);
            else sobel(x, y, direct);
        }
    }
    ixx = blur(ixx, w, h, window_sigma);
    iyy = blur(iyy, w, h, window_sigma);
    ixy = blur(ixy, w, h, window_sigma);
    std::vector<float> response(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float tr = ixx[i] + iyy[i];
        response[i] = ixx[i] * iyy[i] - ixy[i] * ixy[i] - k * tr * tr;
    }
    return response;
}

ReferenceFeatureExtractor::ReferenceFeatureExtractor(HarrisParams params) : params_(params) {
    if (params_.descriptor_grid < 2 || params_.descriptor_spacing < 1 || params_.window_sigma <= 0 ||
        params_.descriptor_sigma <= 0) {
        throw ConfigError("invalid Harris parameters");
    }
}

std::string ReferenceFeatureExtractor::fingerprint() const {
    return "reference:" + std::to_string(params_.window_sigma) + ":" + std::to_string(params_.k) + ":" +
           std::to_string(params_.quality) + ":" + std::to_string(params_.descriptor_grid) + ":" +
           std::to_string(params_.descriptor_spacing);
}

int ReferenceFeatureExtractor::border() const noexcept {
    // Half patch extent, plus the sub-pixel offset and the bilinear neighbour.
    const float half = 0.5f * (params_.descriptor_grid - 1) * params_.descriptor_spacing;
    return static_cast<int>(std::ceil(half + 0.49f)) + 1;
}

FeatureSet ReferenceFeatureExtractor::extract(const Image& image, int max_keypoints, const Mask* gate) const {
    if (max_keypoints < 1) throw DataError("max_keypoints must be >= 1");
    FeatureSet out;
    out.descriptor_size = params_.descriptor_grid * params_.descriptor_grid;
    const int w = image.width;
    const int h = image.height;
    const int margin = border();
    if (w < 2 * margin + 1 || h < 2 * margin + 1) {
        out.too_small = true;
        return out;
    }
    if (gate != nullptr && (gate->width != w || gate->height != h)) {
        throw DataError("feature gate mask does not match image dims");
    }

    const auto gray = to_gray(image);
    const auto response = harris_response(gray, w, h, params_.window_sigma, params_.k);
    float max_r = 0.0f;
    for (int y = margin; y < h - margin; ++y) {
        for (int x = margin; x < w - margin; ++x) max_r = std::max(max_r, response[static_cast<std::size_t>(y) * w + x]);
    }
    const float thresh = std::max(params_.min_response, params_.quality * max_r);

    struct Peak {
        int x, y;
        float r;
    };
    std::vector<Peak> peaks;
    for (int y = margin; y < h - margin; ++y) {
        for (int x = margin; x < w - margin; ++x) {
            const float r = response[static_cast<std::size_t>(y) * w + x];
            if (!(r > thresh)) continue;
            if (gate != nullptr && !gate->test(x, y)) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const float nr = response[static_cast<std::size_t>(y + dy) * w + x + dx];
                    // Plateaus resolve to their first pixel in raster order.
                    const bool earlier = dy < 0 || (dy == 0 && dx < 0);
                    if (nr > r || (earlier && nr == r)) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) peaks.push_back({x, y, r});
        }
    }
    std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) { return a.r > b.r; });

    const auto smooth = blur(gray, w, h, params_.descriptor_sigma);
    const int grid = params_.descriptor_grid;
    const float half = 0.5f * (grid - 1);
    std::vector<float> desc(static_cast<std::size_t>(grid) * grid);
    for (const auto& p : peaks) {
        if (static_cast<int>(out.keypoints.size()) >= max_keypoints) break;
        auto at = [&](int x, int y) { return response[static_cast<std::size_t>(y) * w + x]; };
        const float kx = p.x + parabolic_offset(at(p.x - 1, p.y), p.r, at(p.x + 1, p.y));
        const float ky = p.y + parabolic_offset(at(p.x, p.y - 1), p.r, at(p.x, p.y + 1));

        double mean = 0.0;
        for (int j = 0; j < grid; ++j) {
            for (int i = 0; i < grid; ++i) {
                const float v = bilinear(smooth, w, kx + (i - half) * params_.descriptor_spacing,
                                         ky + (j - half) * params_.descriptor_spacing);
                desc[static_cast<std::size_t>(j) * grid + i] = v;
                mean += v;
            }
        }
        mean /= static_cast<double>(desc.size());
        double sq = 0.0;
        for (auto& v : desc) {
            v = static_cast<float>(v - mean);
            sq += static_cast<double>(v) * v;
        }
        if (sq < 1e-12) continue;
        const float inv = static_cast<float>(1.0 / std::sqrt(sq));
        for (auto v : desc) out.descriptors.push_back(v * inv);
        out.keypoints.push_back({kx, ky, p.r});
    }
    return out;
}

FeatureSet extract_features(const FeatureProvider& provider, const Image& image, int max_keypoints,
                            const Mask* gate) {
    if (image.empty()) throw DataError("cannot extract features from an empty image");
    return provider.extract(image, max_keypoints, gate);
}

}  // namespace prism
