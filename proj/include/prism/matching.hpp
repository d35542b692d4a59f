#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prism/features.hpp"

namespace prism {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct Correspondence {
    std::uint32_t query_idx = 0;
    std::uint32_t gallery_idx = 0;
    float distance = 0.0f;
};

/// Row-major 3x3 projective map, scaled so h[8] == 1 when that entry is nonzero.
struct Homography {
    std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

    /// Maps p; nullopt when p lands on the line at infinity.
    std::optional<Point2> apply(Point2 p) const noexcept;
    double determinant() const noexcept;
    std::optional<Homography> inverse() const noexcept;
};

/// Distance between H(p) and q; +inf when H(p) is at infinity.
double reprojection_error(const Homography& H, Point2 p, Point2 q) noexcept;

/// Normalized DLT. Four points use a direct 8x8 solve, more use SVD.
/// Returns nullopt for degenerate input or a near-singular result.
std::optional<Homography> fit_homography(std::span<const Point2> src, std::span<const Point2> dst);

/// True when three of the four points are (nearly) collinear in either image.
bool degenerate_sample(std::span<const Point2, 4> src, std::span<const Point2, 4> dst) noexcept;

struct MatchSet {
    std::vector<Correspondence> correspondences;
    std::optional<std::vector<bool>> inlier_flags;
    std::optional<Homography> model;
};

class MatcherProvider {
public:
    virtual ~MatcherProvider() = default;
    virtual std::string kind() const = 0;
    virtual std::string fingerprint() const { return kind(); }
    virtual MatchSet match(const FeatureSet& a, const FeatureSet& b) const = 0;
};

/// Mutual nearest neighbours in L2 that also pass the ratio test on the query side.
class ReferenceMatcher final : public MatcherProvider {
public:
    explicit ReferenceMatcher(double ratio = 0.8);
    std::string kind() const override { return "reference"; }
    std::string fingerprint() const override;
    MatchSet match(const FeatureSet& a, const FeatureSet& b) const override;

private:
    double ratio_;
};

/// Throws DataError when the descriptor lengths differ.
MatchSet match_descriptors(const MatcherProvider& provider, const FeatureSet& a, const FeatureSet& b);

struct RansacParams {
    double threshold_px = 3.0;
    int max_iters = 2000;
    double confidence = 0.99;
    /// Enumerate every minimal sample instead of drawing randomly.
    bool exhaustive = false;
};

/// Homography RANSAC. Fewer than four matches yields zero inliers and no model.
/// When the number of distinct minimal samples fits the iteration budget they
/// are all enumerated. Otherwise samples are drawn at random and every new best
/// model is refit on its inliers by least squares. Ties on inlier count prefer
/// the lower summed inlier error.
MatchSet ransac_verify(MatchSet matches, const FeatureSet& a, const FeatureSet& b,
                       const RansacParams& params, std::uint64_t seed);

std::size_t inlier_count(const MatchSet& matches) noexcept;

/// Iterations needed to draw an all-inlier sample of size 4 with the given
/// confidence at inlier ratio w, capped at max_iters.
int adaptive_iterations(double inlier_ratio, double confidence, int max_iters) noexcept;

/// Per-pair RANSAC seed, independent of scheduling order.
std::uint64_t pair_seed(std::string_view query_id, std::string_view gallery_id, std::uint64_t base = 0) noexcept;

}  // namespace prism
