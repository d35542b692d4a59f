#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "prism/catalog.hpp"
#include "prism/embedding.hpp"
#include "prism/features.hpp"
#include "prism/image.hpp"
#include "prism/matching.hpp"
#include "prism/pipeline.hpp"
#include "prism/segmentation.hpp"
#include "prism/synthesis.hpp"

namespace prism::testing {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& tag = "prism") {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = fs::temp_directory_path() /
                (tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

inline double gaussian(std::mt19937_64& rng) {
    const double u1 = std::max(1e-300, uniform(rng, 0.0, 1.0));
    const double u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(gaussian(rng));
    return v;
}

inline EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t dim) {
    for (;;) {
        auto v = random_vector(rng, dim);
        double n = 0;
        for (float x : v) n += x * x;
        if (n > 1e-6) return EmbeddingVector::normalized(std::move(v));
    }
}

inline Image random_image(std::mt19937_64& rng, int w, int h) {
    Image img(w, h, 3);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
    return img;
}

/// Piecewise-constant blocks: plenty of corners, no noise.
inline Image blocky_image(std::mt19937_64& rng, int w, int h, int blocks = 12) {
    Image img(w, h, 3, 90);
    for (int b = 0; b < blocks; ++b) {
        const int bw = uniform_int(rng, 4, std::max(4, w / 3)), bh = uniform_int(rng, 4, std::max(4, h / 3));
        const int x0 = uniform_int(rng, 0, w - 1), y0 = uniform_int(rng, 0, h - 1);
        const std::uint8_t c[3] = {static_cast<std::uint8_t>(rng() & 0xff), static_cast<std::uint8_t>(rng() & 0xff),
                                   static_cast<std::uint8_t>(rng() & 0xff)};
        for (int y = y0; y < std::min(h, y0 + bh); ++y)
            for (int x = x0; x < std::min(w, x0 + bw); ++x)
                for (int k = 0; k < 3; ++k) img.at(x, y)[k] = c[k];
    }
    return img;
}

/// Catalog of in-memory products (no files): ids p000.., `views` views each.
inline CatalogManifest synthetic_catalog(std::size_t n, std::size_t views = 6, const fs::path& root = "/nonexistent") {
    std::vector<ProductRecord> products;
    for (std::size_t i = 0; i < n; ++i) {
        ProductRecord p;
        char id[32];
        std::snprintf(id, sizeof id, "p%03zu", i);
        p.product_id = id;
        p.display_name = id;
        p.coarse_class = static_cast<CoarseClass>(i % 3);
        for (std::size_t v = 0; v < views; ++v) {
            const ViewLabel label = kAllViews[v];
            const std::string image_id = p.product_id + "_" + std::string(to_string(label));
            p.views.push_back({label, root / (image_id + ".png"), std::nullopt, image_id});
        }
        products.push_back(std::move(p));
    }
    return CatalogManifest(std::move(products), root);
}

// ---------------------------------------------------------------------------
// Independent homography oracle: plain Gaussian elimination on the 8x8 system
// with h33 = 1, no normalization, no shared code with the library solver.

inline std::optional<std::array<double, 9>> oracle_fit4(const std::array<Point2, 4>& s, const std::array<Point2, 4>& d) {
    double A[8][9];
    for (int i = 0; i < 4; ++i) {
        const double x = s[i].x, y = s[i].y, u = d[i].x, v = d[i].y;
        double r0[9] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
        double r1[9] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
        for (int j = 0; j < 9; ++j) {
            A[2 * i][j] = r0[j];
            A[2 * i + 1][j] = r1[j];
        }
    }
    for (int c = 0; c < 8; ++c) {
        int piv = c;
        for (int r = c + 1; r < 8; ++r)
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        if (std::abs(A[piv][c]) < 1e-12) return std::nullopt;
        for (int j = 0; j < 9; ++j) std::swap(A[c][j], A[piv][j]);
        for (int r = 0; r < 8; ++r) {
            if (r == c) continue;
            const double f = A[r][c] / A[c][c];
            for (int j = c; j < 9; ++j) A[r][j] -= f * A[c][j];
        }
    }
    std::array<double, 9> h{};
    for (int i = 0; i < 8; ++i) h[i] = A[i][8] / A[i][i];
    h[8] = 1.0;
    return h;
}

inline double oracle_error(const std::array<double, 9>& h, Point2 p, Point2 q) {
    const double w = h[6] * p.x + h[7] * p.y + h[8];
    if (std::abs(w) < 1e-15) return INFINITY;
    const double x = (h[0] * p.x + h[1] * p.y + h[2]) / w;
    const double y = (h[3] * p.x + h[4] * p.y + h[5]) / w;
    return std::hypot(x - q.x, y - q.y);
}

/// Cross product based collinearity, independent of the library's degeneracy test.
inline bool oracle_collinear(const std::array<Point2, 4>& p) {
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            for (int k = j + 1; k < 4; ++k) {
                const double ax = p[j].x - p[i].x, ay = p[j].y - p[i].y;
                const double bx = p[k].x - p[i].x, by = p[k].y - p[i].y;
                const double cross = std::abs(ax * by - ay * bx);
                const double scale = std::hypot(ax, ay) * std::hypot(bx, by);
                if (scale == 0.0 || cross <= 1e-6 * scale) return true;
            }
    return false;
}

/// Maximum inlier count over every non-degenerate 4-subset.
inline std::size_t brute_force_max_inliers(const std::vector<Point2>& src, const std::vector<Point2>& dst, double thr) {
    const std::size_t n = src.size();
    if (n < 4) return 0;
    std::size_t best = 0;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b)
            for (std::size_t c = b + 1; c < n; ++c)
                for (std::size_t d = c + 1; d < n; ++d) {
                    const std::array<Point2, 4> s{src[a], src[b], src[c], src[d]};
                    const std::array<Point2, 4> t{dst[a], dst[b], dst[c], dst[d]};
                    if (oracle_collinear(s) || oracle_collinear(t)) continue;
                    const auto h = oracle_fit4(s, t);
                    if (!h) continue;
                    const double det = (*h)[0] * ((*h)[4] * (*h)[8] - (*h)[5] * (*h)[7]) -
                                       (*h)[1] * ((*h)[3] * (*h)[8] - (*h)[5] * (*h)[6]) +
                                       (*h)[2] * ((*h)[3] * (*h)[7] - (*h)[4] * (*h)[6]);
                    if (std::abs(det) <= 1e-12) continue;
                    std::size_t count = 0;
                    for (std::size_t i = 0; i < n; ++i) count += oracle_error(*h, src[i], dst[i]) < thr;
                    best = std::max(best, count);
                }
    return best;
}

/// Feature sets whose keypoints are the given points (descriptors unused by RANSAC).
inline std::pair<FeatureSet, FeatureSet> point_features(const std::vector<Point2>& src, const std::vector<Point2>& dst) {
    FeatureSet a, b;
    a.descriptor_size = b.descriptor_size = 1;
    for (const auto& p : src) {
        a.keypoints.push_back({static_cast<float>(p.x), static_cast<float>(p.y), 1.0f});
        a.descriptors.push_back(1.0f);
    }
    for (const auto& p : dst) {
        b.keypoints.push_back({static_cast<float>(p.x), static_cast<float>(p.y), 1.0f});
        b.descriptors.push_back(1.0f);
    }
    return {a, b};
}

inline MatchSet identity_matches(std::size_t n) {
    MatchSet m;
    for (std::size_t i = 0; i < n; ++i)
        m.correspondences.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i), 0.0f});
    return m;
}

/// Snap to float precision so the points RANSAC sees equal the oracle's.
/// Rounds to float precision, matching keypoint storage. The volatile stores keep
/// GCC 11's -O3 vectorizer from eliding the round trip.
inline Point2 snap(Point2 p) {
    volatile float x = static_cast<float>(p.x);
    volatile float y = static_cast<float>(p.y);
    return {x, y};
}

inline std::array<double, 9> random_homography(std::mt19937_64& rng) {
    const double th = uniform(rng, -0.5, 0.5), s = uniform(rng, 0.7, 1.3);
    return {s * std::cos(th) + uniform(rng, -0.05, 0.05), -s * std::sin(th) + uniform(rng, -0.05, 0.05), uniform(rng, -20, 20),
            s * std::sin(th) + uniform(rng, -0.05, 0.05), s * std::cos(th) + uniform(rng, -0.05, 0.05), uniform(rng, -20, 20),
            uniform(rng, -4e-4, 4e-4), uniform(rng, -4e-4, 4e-4), 1.0};
}

inline Point2 apply(const std::array<double, 9>& h, Point2 p) {
    const double w = h[6] * p.x + h[7] * p.y + h[8];
    return {(h[0] * p.x + h[1] * p.y + h[2]) / w, (h[3] * p.x + h[4] * p.y + h[5]) / w};
}

// ---------------------------------------------------------------------------
// Shared synthetic datasets, generated once per process and directory.

struct Dataset {
    SynthSpec spec;
    SynthDataset data;
    std::shared_ptr<const CatalogManifest> catalog;
    Image background;
    std::vector<QuerySource> sources;
};

inline std::shared_ptr<Dataset> make_dataset(const SynthSpec& spec, const fs::path& dir, int workers = 4) {
    auto ds = std::make_shared<Dataset>();
    ds->spec = spec;
    ds->data = synthesize(spec, dir, workers);
    ds->catalog = std::make_shared<const CatalogManifest>(ds->data.catalog);
    ds->background = load_image(ds->data.background_path);
    for (const auto& r : ds->data.queries) ds->sources.push_back({r.query_id, r.image, r.mask, r.coarse_class});
    return ds;
}

inline Providers reference_providers(const Image& background, bool threshold = true) {
    Providers p;
    p.embedder = std::make_shared<HashEmbedder>();
    if (threshold) p.segmenter = std::make_shared<ThresholdSegmenter>(background);
    else p.segmenter = std::make_shared<IdentitySegmenter>();
    p.features = std::make_shared<ReferenceFeatureExtractor>();
    p.matcher = std::make_shared<ReferenceMatcher>();
    return p;
}

}  // namespace prism::testing
