#include "prism/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "prism/error.hpp"

namespace prism {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Normalizer {
    double scale = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    Eigen::Matrix3d matrix() const {
        Eigen::Matrix3d T;
        T << scale, 0, -scale * cx, 0, scale, -scale * cy, 0, 0, 1;
        return T;
    }
};

double distance(double dx, double dy) noexcept { return std::sqrt(dx * dx + dy * dy); }

Normalizer hartley(std::span<const Point2> pts) {
    Normalizer n;
    for (const auto& p : pts) {
        n.cx += p.x;
        n.cy += p.y;
    }
    n.cx /= static_cast<double>(pts.size());
    n.cy /= static_cast<double>(pts.size());
    double mean_dist = 0.0;
    for (const auto& p : pts) mean_dist += distance(p.x - n.cx, p.y - n.cy);
    mean_dist /= static_cast<double>(pts.size());
    n.scale = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 0.0;
    return n;
}

/// Gaussian elimination with partial pivoting; the solution replaces b.
/// Fails when a pivot is negligible relative to the largest one seen.
bool solve8(Eigen::Matrix<double, 8, 8>& M, Eigen::Matrix<double, 8, 1>& b) noexcept {
    double largest = 0.0;
    for (int c = 0; c < 8; ++c) {
        int p = c;
        for (int r = c + 1; r < 8; ++r) {
            if (std::abs(M(r, c)) > std::abs(M(p, c))) p = r;
        }
        const double pivot = std::abs(M(p, c));
        largest = std::max(largest, pivot);
        if (!(pivot > 1e-10 * largest)) return false;
        if (p != c) {
            M.row(p).swap(M.row(c));
            std::swap(b(p), b(c));
        }
        for (int r = c + 1; r < 8; ++r) {
            const double f = M(r, c) / M(c, c);
            for (int k = c + 1; k < 8; ++k) M(r, k) -= f * M(c, k);
            b(r) -= f * b(c);
        }
    }
    for (int r = 7; r >= 0; --r) {
        double acc = b(r);
        for (int k = r + 1; k < 8; ++k) acc -= M(r, k) * b(k);
        b(r) = acc / M(r, r);
    }
    return true;
}

bool collinear(Point2 a, Point2 b, Point2 c) noexcept {
    const double ux = b.x - a.x, uy = b.y - a.y;
    const double vx = c.x - a.x, vy = c.y - a.y;
    const double cross = ux * vy - uy * vx;
    const double norms = distance(ux, uy) * distance(vx, vy);
    return std::abs(cross) <= 1e-6 * norms + 1e-12;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Score {
    std::size_t inliers = 0;
    double error = kInf;

    bool better_than(const Score& o) const noexcept {
        return inliers > o.inliers || (inliers == o.inliers && error < o.error);
    }
};

Score evaluate(const Homography& H, std::span<const Point2> src, std::span<const Point2> dst,
               double threshold) {
    Score s{0, 0.0};
    for (std::size_t i = 0; i < src.size(); ++i) {
        const double e = reprojection_error(H, src[i], dst[i]);
        if (e < threshold) {
            ++s.inliers;
            s.error += e;
        }
    }
    return s;
}

double choose4(std::size_t n) {
    if (n < 4) return 0.0;
    const double d = static_cast<double>(n);
    return d * (d - 1) * (d - 2) * (d - 3) / 24.0;
}

}  // namespace

std::optional<Point2> Homography::apply(Point2 p) const noexcept {
    const double w = h[6] * p.x + h[7] * p.y + h[8];
    if (std::abs(w) < 1e-12) return std::nullopt;
    return Point2{(h[0] * p.x + h[1] * p.y + h[2]) / w, (h[3] * p.x + h[4] * p.y + h[5]) / w};
}

double Homography::determinant() const noexcept {
    return h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6]) +
           h[2] * (h[3] * h[7] - h[4] * h[6]);
}

std::optional<Homography> Homography::inverse() const noexcept {
    const double det = determinant();
    if (std::abs(det) < 1e-12) return std::nullopt;
    Homography inv;
    inv.h = {(h[4] * h[8] - h[5] * h[7]) / det, (h[2] * h[7] - h[1] * h[8]) / det,
             (h[1] * h[5] - h[2] * h[4]) / det, (h[5] * h[6] - h[3] * h[8]) / det,
             (h[0] * h[8] - h[2] * h[6]) / det, (h[2] * h[3] - h[0] * h[5]) / det,
             (h[3] * h[7] - h[4] * h[6]) / det, (h[1] * h[6] - h[0] * h[7]) / det,
             (h[0] * h[4] - h[1] * h[3]) / det};
    if (std::abs(inv.h[8]) > 1e-12) {
        const double s = inv.h[8];
        for (auto& v : inv.h) v /= s;
    }
    return inv;
}

double reprojection_error(const Homography& H, Point2 p, Point2 q) noexcept {
    const auto m = H.apply(p);
    if (!m) return kInf;
    return distance(m->x - q.x, m->y - q.y);
}

bool degenerate_sample(std::span<const Point2, 4> src, std::span<const Point2, 4> dst) noexcept {
    static constexpr int kTriples[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
    for (const auto& t : kTriples) {
        if (collinear(src[t[0]], src[t[1]], src[t[2]]) || collinear(dst[t[0]], dst[t[1]], dst[t[2]])) {
            return true;
        }
    }
    return false;
}

std::optional<Homography> fit_homography(std::span<const Point2> src, std::span<const Point2> dst) {
    const std::size_t n = src.size();
    if (n < 4 || dst.size() != n) return std::nullopt;
    const Normalizer ns = hartley(src);
    const Normalizer nd = hartley(dst);
    if (ns.scale == 0.0 || nd.scale == 0.0) return std::nullopt;

    auto fill = [&](auto& A) {
        for (std::size_t i = 0; i < n; ++i) {
            const double x = ns.scale * (src[i].x - ns.cx), y = ns.scale * (src[i].y - ns.cy);
            const double u = nd.scale * (dst[i].x - nd.cx), v = nd.scale * (dst[i].y - nd.cy);
            const auto r = static_cast<Eigen::Index>(2 * i);
            A.row(r) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
            A.row(r + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
        }
    };

    Eigen::Matrix<double, 9, 1> hv;
    bool solved = false;
    if (n == 4) {
        Eigen::Matrix<double, 8, 9> A;
        fill(A);
        Eigen::Matrix<double, 8, 8> M = A.leftCols<8>();
        Eigen::Matrix<double, 8, 1> rhs = -A.col(8);
        if (solve8(M, rhs)) {
            hv.head<8>() = rhs;
            hv(8) = 1.0;
            solved = hv.allFinite();
        }
    }
    if (!solved) {
        Eigen::Matrix<double, Eigen::Dynamic, 9> A(2 * n, 9);
        fill(A);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
        hv = svd.matrixV().col(8);
    }

    Eigen::Matrix3d Hn;
    Hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
    const Eigen::Matrix3d H = nd.matrix().inverse() * Hn * ns.matrix();
    Homography out;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out.h[static_cast<std::size_t>(3 * r + c)] = H(r, c);
    }
    if (std::abs(out.h[8]) > 1e-12) {
        const double s = out.h[8];
        for (auto& v : out.h) v /= s;
    }
    for (double v : out.h) {
        if (!std::isfinite(v)) return std::nullopt;
    }
    if (std::abs(out.determinant()) <= 1e-12) return std::nullopt;
    return out;
}

ReferenceMatcher::ReferenceMatcher(double ratio) : ratio_(ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("ratio test threshold must lie in (0, 1]");
}

std::string ReferenceMatcher::fingerprint() const { return "reference:" + std::to_string(ratio_); }

MatchSet ReferenceMatcher::match(const FeatureSet& a, const FeatureSet& b) const {
    MatchSet out;
    if (a.empty() || b.empty()) return out;
    const int D = a.descriptor_size;
    using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMat> A(a.descriptors.data(), static_cast<Eigen::Index>(a.size()), D);
    const Eigen::Map<const RowMat> B(b.descriptors.data(), static_cast<Eigen::Index>(b.size()), D);
    // Rows are unit-norm, so squared L2 distance is 2 - 2 * dot.
    const RowMat S = A * B.transpose();

    const auto na = static_cast<Eigen::Index>(a.size());
    const auto nb = static_cast<Eigen::Index>(b.size());
    std::vector<Eigen::Index> best_for_b(static_cast<std::size_t>(nb), 0);
    for (Eigen::Index j = 0; j < nb; ++j) {
        Eigen::Index best = 0;
        for (Eigen::Index i = 1; i < na; ++i) {
            if (S(i, j) > S(best, j)) best = i;
        }
        best_for_b[static_cast<std::size_t>(j)] = best;
    }
    auto dist = [](float s) { return std::sqrt(std::max(0.0f, 2.0f - 2.0f * s)); };
    for (Eigen::Index i = 0; i < na; ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < nb; ++j) {
            if (S(i, j) > S(i, best)) best = j;
        }
        if (best_for_b[static_cast<std::size_t>(best)] != i) continue;
        float second = -std::numeric_limits<float>::infinity();
        for (Eigen::Index j = 0; j < nb; ++j) {
            if (j != best) second = std::max(second, S(i, j));
        }
        const float d1 = dist(S(i, best));
        if (nb > 1) {
            const float d2 = dist(second);
            if (!(d1 < ratio_ * d2)) continue;
        }
        out.correspondences.push_back(
            {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(best), d1});
    }
    return out;
}

MatchSet match_descriptors(const MatcherProvider& provider, const FeatureSet& a, const FeatureSet& b) {
    if (a.descriptor_size != b.descriptor_size && !a.empty() && !b.empty()) {
        throw DataError("descriptor length mismatch: " + std::to_string(a.descriptor_size) + " vs " +
                        std::to_string(b.descriptor_size));
    }
    return provider.match(a, b);
}

int adaptive_iterations(double inlier_ratio, double confidence, int max_iters) noexcept {
    const double w4 = std::pow(std::clamp(inlier_ratio, 0.0, 1.0), 4);
    if (w4 <= 0.0) return max_iters;
    if (w4 >= 1.0) return std::min(1, max_iters);
    const double needed = std::log(1.0 - confidence) / std::log(1.0 - w4);
    if (!std::isfinite(needed) || needed >= max_iters) return max_iters;
    return std::max(1, static_cast<int>(std::ceil(needed)));
}

MatchSet ransac_verify(MatchSet matches, const FeatureSet& a, const FeatureSet& b,
                       const RansacParams& params, std::uint64_t seed) {
    if (!(params.threshold_px > 0.0)) throw ConfigError("RANSAC threshold must be positive");
    if (!(params.confidence > 0.0 && params.confidence < 1.0)) {
        throw ConfigError("RANSAC confidence must lie in (0, 1)");
    }
    if (params.max_iters < 1) throw ConfigError("RANSAC max_iters must be >= 1");

    const std::size_t n = matches.correspondences.size();
    matches.inlier_flags = std::vector<bool>(n, false);
    matches.model.reset();
    if (n < 4) return matches;

    std::vector<Point2> src(n), dst(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& c = matches.correspondences[i];
        if (c.query_idx >= a.size() || c.gallery_idx >= b.size()) {
            throw DataError("correspondence index out of range");
        }
        src[i] = {a.keypoints[c.query_idx].x, a.keypoints[c.query_idx].y};
        dst[i] = {b.keypoints[c.gallery_idx].x, b.keypoints[c.gallery_idx].y};
    }

    Score best;
    best.inliers = 0;
    std::optional<Homography> best_model;
    std::array<Point2, 4> s4, d4;
    bool local_opt = false;
    // Least-squares refit on the current inlier set, repeated while it improves.
    auto refine = [&] {
        std::vector<Point2> si, di;
        for (int round = 0; round < 4; ++round) {
            si.clear();
            di.clear();
            for (std::size_t i = 0; i < n; ++i) {
                if (reprojection_error(*best_model, src[i], dst[i]) < params.threshold_px) {
                    si.push_back(src[i]);
                    di.push_back(dst[i]);
                }
            }
            if (si.size() <= 4) return;
            const auto H = fit_homography(si, di);
            if (!H) return;
            const Score s = evaluate(*H, src, dst, params.threshold_px);
            if (!s.better_than(best)) return;
            best = s;
            best_model = H;
        }
    };
    auto try_sample = [&](const std::array<std::size_t, 4>& idx) {
        for (int k = 0; k < 4; ++k) {
            s4[k] = src[idx[k]];
            d4[k] = dst[idx[k]];
        }
        if (degenerate_sample(s4, d4)) return false;
        const auto H = fit_homography(s4, d4);
        if (!H) return true;
        const Score s = evaluate(*H, src, dst, params.threshold_px);
        if (!best_model || s.better_than(best)) {
            best = s;
            best_model = H;
            if (local_opt) refine();
        }
        return true;
    };

    if (params.exhaustive || choose4(n) <= params.max_iters) {
        std::array<std::size_t, 4> idx{};
        for (idx[0] = 0; idx[0] < n; ++idx[0])
            for (idx[1] = idx[0] + 1; idx[1] < n; ++idx[1])
                for (idx[2] = idx[1] + 1; idx[2] < n; ++idx[2])
                    for (idx[3] = idx[2] + 1; idx[3] < n; ++idx[3]) try_sample(idx);
    } else {
        local_opt = true;
        std::mt19937_64 rng(seed);
        auto draw = [&] { return static_cast<std::size_t>(rng() % n); };
        int cap = params.max_iters;
        for (int iter = 0; iter < cap; ++iter) {
            for (int attempt = 0; attempt < 100; ++attempt) {
                std::array<std::size_t, 4> idx{draw(), 0, 0, 0};
                for (int k = 1; k < 4; ++k) {
                    std::size_t c;
                    do {
                        c = draw();
                    } while (std::find(idx.begin(), idx.begin() + k, c) != idx.begin() + k);
                    idx[static_cast<std::size_t>(k)] = c;
                }
                if (try_sample(idx)) break;
            }
            if (best_model) {
                cap = adaptive_iterations(static_cast<double>(best.inliers) / n, params.confidence,
                                          params.max_iters);
            }
        }
    }

    if (!best_model || best.inliers == 0) return matches;
    auto& flags = *matches.inlier_flags;
    for (std::size_t i = 0; i < n; ++i) {
        flags[i] = reprojection_error(*best_model, src[i], dst[i]) < params.threshold_px;
    }
    matches.model = best_model;
    return matches;
}

std::size_t inlier_count(const MatchSet& matches) noexcept {
    if (!matches.inlier_flags) return 0;
    return static_cast<std::size_t>(
        std::count(matches.inlier_flags->begin(), matches.inlier_flags->end(), true));
}

std::uint64_t pair_seed(std::string_view query_id, std::string_view gallery_id, std::uint64_t base) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    mix(query_id);
    h ^= 0xff;
    h *= 0x100000001b3ULL;
    mix(gallery_id);
    return splitmix64(h ^ splitmix64(base));
}

}  // namespace prism
