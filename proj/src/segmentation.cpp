#include "prism/segmentation.hpp"

#include <algorithm>
#include <cstdlib>

#include "prism/error.hpp"

namespace prism {

namespace {

Detection whole_image(int w, int h) {
    return {{0, 0, w, h}, Mask(w, h, 1), "image", 1.0f};
}

BoundingBox mask_extent(const Mask& mask) {
    BoundingBox b{mask.width, mask.height, 0, 0};
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.test(x, y)) continue;
            b.x1 = std::min(b.x1, x);
            b.y1 = std::min(b.y1, y);
            b.x2 = std::max(b.x2, x + 1);
            b.y2 = std::max(b.y2, y + 1);
        }
    }
    return b;
}

}  // namespace

void validate_segmentation(const SegmentationOutput& output) {
    for (std::size_t i = 0; i < output.detections.size(); ++i) {
        const auto& d = output.detections[i];
        const std::string where = "detection " + std::to_string(i);
        if (!d.box.valid_for(output.width, output.height)) {
            throw ProviderError(ProviderError::Reason::schema, where + ": box outside image");
        }
        if (d.mask.width != output.width || d.mask.height != output.height) {
            throw ProviderError(ProviderError::Reason::schema, where + ": mask dims differ from image dims");
        }
        if (d.mask.count() == 0) {
            throw ProviderError(ProviderError::Reason::schema, where + ": empty mask");
        }
        if (!(d.score >= 0.0f && d.score <= 1.0f)) {
            throw ProviderError(ProviderError::Reason::schema, where + ": score outside [0, 1]");
        }
    }
}

SegmentationOutput IdentitySegmenter::segment(const ImageInput& input) const {
    const Image& img = input.pixels;
    if (img.empty()) throw DataError("cannot segment an empty image");
    return {{whole_image(img.width, img.height)}, img.width, img.height};
}

SegmentationOutput MaskFileSegmenter::segment(const ImageInput& input) const {
    if (input.mask_ref == nullptr) {
        throw ProviderError(ProviderError::Reason::missing_input,
                            "mask_file segmenter: no mask for image '" + std::string(input.id) + "'");
    }
    const Image& img = input.pixels;
    Mask mask = load_mask(*input.mask_ref);
    if (mask.width != img.width || mask.height != img.height) {
        throw DataError("mask " + input.mask_ref->string() + " does not match image dims");
    }
    SegmentationOutput out{{}, img.width, img.height};
    if (mask.count() == 0) return out;
    out.detections.push_back({mask_extent(mask), std::move(mask), "mask", 1.0f});
    return out;
}

ThresholdSegmenter::ThresholdSegmenter(Image background, int threshold, int min_area)
    : background_(std::move(background)), threshold_(threshold), min_area_(min_area) {
    if (background_.empty() || background_.channels != 3) {
        throw ConfigError("threshold segmenter needs a 3-channel background plate");
    }
    if (threshold_ < 0 || min_area_ < 1) throw ConfigError("threshold segmenter: bad parameters");
}

std::string ThresholdSegmenter::fingerprint() const {
    return "threshold:" + std::to_string(threshold_) + ":" + std::to_string(min_area_) + ":" +
           std::to_string(background_.width) + "x" + std::to_string(background_.height);
}

SegmentationOutput ThresholdSegmenter::segment(const ImageInput& input) const {
    const Image& img = input.pixels;
    if (img.width != background_.width || img.height != background_.height || img.channels != 3) {
        throw DataError("threshold segmenter: image dims do not match the background plate");
    }
    const int w = img.width;
    const int h = img.height;
    std::vector<std::uint8_t> fg(static_cast<std::size_t>(w) * h, 0);
    for (std::size_t i = 0; i < fg.size(); ++i) {
        int diff = 0;
        for (int c = 0; c < 3; ++c) {
            diff = std::max(diff, std::abs(int(img.pixels[3 * i + c]) - int(background_.pixels[3 * i + c])));
        }
        fg[i] = diff > threshold_;
    }

    SegmentationOutput out{{}, w, h};
    std::vector<int> label(fg.size(), -1);
    std::vector<int> stack;
    std::vector<int> members;
    int next = 0;
    for (int start = 0; start < w * h; ++start) {
        if (!fg[start] || label[start] >= 0) continue;
        members.clear();
        stack.assign(1, start);
        label[start] = next;
        while (!stack.empty()) {
            const int idx = stack.back();
            stack.pop_back();
            members.push_back(idx);
            const int cx = idx % w;
            const int cy = idx / w;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = cx + dx;
                    const int ny = cy + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const int n = ny * w + nx;
                    if (fg[n] && label[n] < 0) {
                        label[n] = next;
                        stack.push_back(n);
                    }
                }
            }
        }
        ++next;
        if (static_cast<int>(members.size()) < min_area_) continue;
        Detection d{{w, h, 0, 0}, Mask(w, h), "component", 1.0f};
        for (int idx : members) {
            const int x = idx % w;
            const int y = idx / w;
            d.mask.set(x, y);
            d.box.x1 = std::min(d.box.x1, x);
            d.box.y1 = std::min(d.box.y1, y);
            d.box.x2 = std::max(d.box.x2, x + 1);
            d.box.y2 = std::max(d.box.y2, y + 1);
        }
        out.detections.push_back(std::move(d));
    }
    return out;
}

const Detection* select_primary_detection(const SegmentationOutput& output) {
    const Detection* best = nullptr;
    for (const auto& d : output.detections) {
        if (best == nullptr || d.box.area() > best->box.area()) best = &d;
    }
    return best;
}

Image crop_with_mask(const Image& image, const Detection& detection) {
    const auto& b = detection.box;
    if (!b.valid_for(image.width, image.height)) throw DataError("crop box outside image bounds");
    if (detection.mask.width != image.width || detection.mask.height != image.height) {
        throw DataError("crop mask does not match image dims");
    }
    Image out(b.width(), b.height(), image.channels);
    for (int y = b.y1; y < b.y2; ++y) {
        for (int x = b.x1; x < b.x2; ++x) {
            if (!detection.mask.test(x, y)) continue;
            std::copy_n(image.at(x, y), image.channels, out.at(x - b.x1, y - b.y1));
        }
    }
    return out;
}

Region full_region(const Image& image) {
    return {image, Mask(image.width, image.height, 1), {0, 0, image.width, image.height}, false};
}

Region prepare_region(const SegmenterProvider& provider, const ImageInput& input) {
    const SegmentationOutput seg = provider.segment(input);
    const Detection* primary = select_primary_detection(seg);
    if (primary == nullptr) {
        Region r = full_region(input.pixels);
        r.fallback = true;
        return r;
    }
    const auto& b = primary->box;
    Region r{crop_with_mask(input.pixels, *primary), Mask(b.width(), b.height()), b, false};
    for (int y = b.y1; y < b.y2; ++y) {
        for (int x = b.x1; x < b.x2; ++x) r.mask.set(x - b.x1, y - b.y1, primary->mask.test(x, y));
    }
    return r;
}

}  // namespace prism
