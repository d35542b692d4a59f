#pragma once

#include <span>
#include <string>
#include <vector>

#include "prism/image.hpp"

namespace prism {

struct Keypoint {
    float x = 0.0f;
    float y = 0.0f;
    float response = 0.0f;
};

/// Keypoints with row-aligned, L2-normalized descriptors.
struct FeatureSet {
    std::vector<Keypoint> keypoints;
    std::vector<float> descriptors;  ///< size() x descriptor_size, row-major
    int descriptor_size = 64;
    bool too_small = false;  ///< input smaller than the detector window

    std::size_t size() const noexcept { return keypoints.size(); }
    bool empty() const noexcept { return keypoints.empty(); }
    std::span<const float> descriptor(std::size_t i) const noexcept {
        return {descriptors.data() + i * static_cast<std::size_t>(descriptor_size),
                static_cast<std::size_t>(descriptor_size)};
    }
};

/// Shifts every keypoint by (dx, dy), e.g. from crop to source coordinates.
FeatureSet translated(FeatureSet features, float dx, float dy);

class FeatureProvider {
public:
    virtual ~FeatureProvider() = default;
    virtual std::string kind() const = 0;
    virtual std::string fingerprint() const { return kind(); }
    /// At most max_keypoints, by descending response. When gate is given,
    /// keypoints on pixels outside it are dropped.
    virtual FeatureSet extract(const Image& image, int max_keypoints, const Mask* gate) const = 0;
};

struct HarrisParams {
    float window_sigma = 1.5f;
    float k = 0.04f;
    /// Responses below quality * max response (or below min_response) are ignored.
    float quality = 0.01f;
    float min_response = 1e-8f;
    float descriptor_sigma = 1.0f;
    int descriptor_grid = 8;
    int descriptor_spacing = 2;
};

/// Harris corners with mean-subtracted intensity-patch descriptors (D = grid^2).
class ReferenceFeatureExtractor final : public FeatureProvider {
public:
    explicit ReferenceFeatureExtractor(HarrisParams params = {});
    std::string kind() const override { return "reference"; }
    std::string fingerprint() const override;
    FeatureSet extract(const Image& image, int max_keypoints, const Mask* gate) const override;

    /// Pixels closer than this to the border never host a keypoint.
    int border() const noexcept;

private:
    HarrisParams params_;
};

FeatureSet extract_features(const FeatureProvider& provider, const Image& image, int max_keypoints,
                            const Mask* gate = nullptr);

/// Harris response map for a luma image (exposed for tests).
std::vector<float> harris_response(std::span<const float> gray, int width, int height,
                                   float window_sigma, float k);

}  // namespace prism
