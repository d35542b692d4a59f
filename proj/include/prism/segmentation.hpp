#pragma once

#include <optional>
#include <string>
#include <vector>

#include "prism/embedding.hpp"
#include "prism/image.hpp"

namespace prism {

/// Half-open pixel box [x1, x2) x [y1, y2).
struct BoundingBox {
    int x1 = 0;
    int y1 = 0;
    int x2 = 0;
    int y2 = 0;

    int width() const noexcept { return x2 - x1; }
    int height() const noexcept { return y2 - y1; }
    long long area() const noexcept { return static_cast<long long>(width()) * height(); }
    bool valid_for(int w, int h) const noexcept {
        return 0 <= x1 && x1 < x2 && x2 <= w && 0 <= y1 && y1 < y2 && y2 <= h;
    }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Detection {
    BoundingBox box;
    Mask mask;  ///< full source-image size
    std::string label;
    float score = 1.0f;
};

struct SegmentationOutput {
    std::vector<Detection> detections;
    int width = 0;
    int height = 0;
};

/// Throws ProviderError(schema) when a detection violates its invariants.
void validate_segmentation(const SegmentationOutput& output);

class SegmenterProvider {
public:
    virtual ~SegmenterProvider() = default;
    virtual std::string kind() const = 0;
    /// Identifies the configuration, used as a cache key component.
    virtual std::string fingerprint() const { return kind(); }
    virtual SegmentationOutput segment(const ImageInput& input) const = 0;
};

/// Whole image as one detection with an all-ones mask.
class IdentitySegmenter final : public SegmenterProvider {
public:
    std::string kind() const override { return "identity"; }
    SegmentationOutput segment(const ImageInput& input) const override;
};

/// Reads the mask referenced by the input; the box is the mask's extent.
class MaskFileSegmenter final : public SegmenterProvider {
public:
    std::string kind() const override { return "mask_file"; }
    SegmentationOutput segment(const ImageInput& input) const override;
};

/// Background-differencing segmenter for synthetic scenes: pixels whose max
/// channel difference from the plate exceeds `threshold` are foreground;
/// 8-connected components of at least `min_area` pixels become detections.
class ThresholdSegmenter final : public SegmenterProvider {
public:
    explicit ThresholdSegmenter(Image background, int threshold = 25, int min_area = 100);
    std::string kind() const override { return "threshold"; }
    std::string fingerprint() const override;
    SegmentationOutput segment(const ImageInput& input) const override;

private:
    Image background_;
    int threshold_;
    int min_area_;
};

inline SegmentationOutput segment(const SegmenterProvider& provider, const ImageInput& input) {
    return provider.segment(input);
}

/// Largest box area; ties go to the lowest index. Null when there are no detections.
const Detection* select_primary_detection(const SegmentationOutput& output);

/// image[y1:y2, x1:x2] with pixels outside the mask set to black.
/// Throws DataError when the box or mask does not fit the image.
Image crop_with_mask(const Image& image, const Detection& detection);

/// A masked crop plus the crop-sized mask and its placement in the source.
struct Region {
    Image pixels;
    Mask mask;
    BoundingBox box;
    bool fallback = false;  ///< no detection; the full image is used unmasked
};

Region prepare_region(const SegmenterProvider& provider, const ImageInput& input);

/// The unmasked full image as a region (segmentation disabled).
Region full_region(const Image& image);

}  // namespace prism
