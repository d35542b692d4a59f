#pragma once

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "prism/evaluation.hpp"
#include "support.hpp"

namespace prism::testing {

struct PropertyReport {
    std::string name;
    int cases = 0;
    int failures = 0;
    long long checks = 0;  ///< individual assertions evaluated, to catch vacuous passes
    std::string first_failure;

    bool ok() const noexcept { return failures == 0 && cases > 0; }
    void fail(int case_index, const std::string& why) {
        if (failures++ == 0) first_failure = "case " + std::to_string(case_index) + ": " + why;
    }
};

inline PropertyReport check_cosine_bounds(std::uint64_t seed, int cases) {
    PropertyReport r{"cosine bounds and symmetry"};
    std::mt19937_64 rng(seed);
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const auto dim = static_cast<std::size_t>(uniform_int(rng, 1, 300));
        const auto a = random_unit(rng, dim);
        auto b = random_unit(rng, dim);
        if (c % 4 == 0) {
            // near-parallel pair
            std::vector<float> v(a.values().begin(), a.values().end());
            for (auto& x : v) x += static_cast<float>(1e-7 * gaussian(rng));
            b = EmbeddingVector::normalized(std::move(v));
        }
        const double ab = cosine_similarity(a, b), ba = cosine_similarity(b, a), aa = cosine_similarity(a, a);
        if (std::abs(ab) > 1.0 + 1e-6) r.fail(c, "|cos| > 1");
        else if (ab != ba) r.fail(c, "asymmetric");
        else if (std::abs(aa - 1.0) > 1e-6) r.fail(c, "self similarity != 1");
    }
    return r;
}

inline PropertyReport check_hash_embedder(std::uint64_t seed, int cases) {
    PropertyReport r{"hash embedder purity, unit norm, self similarity"};
    std::mt19937_64 rng(seed);
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const int side = uniform_int(rng, 2, 24);
        const HashEmbedder emb(side);
        const Image img = random_image(rng, uniform_int(rng, 1, 48), uniform_int(rng, 1, 48));
        const Image copy = img;
        const auto v1 = emb.embed({"x", img, nullptr});
        const auto v2 = emb.embed({"y", copy, nullptr});
        double n = 0;
        for (float x : v1.values()) n += static_cast<double>(x) * x;
        if (!(v1 == v2)) r.fail(c, "not deterministic");
        else if (v1.dim() != static_cast<std::uint32_t>(side * side + 8) || emb.dim() != v1.dim()) r.fail(c, "wrong dim");
        else if (std::abs(std::sqrt(n) - 1.0) > 1e-5) r.fail(c, "not unit norm");
        else if (std::abs(cosine_similarity(v1, v2) - 1.0) > 1e-6) r.fail(c, "self similarity != 1");
    }
    return r;
}

inline PropertyReport check_topk_prefix(std::uint64_t seed, int cases) {
    PropertyReport r{"top-K total order, prefix consistency, monotone recall"};
    std::mt19937_64 rng(seed);
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 40));
        const auto views = static_cast<std::size_t>(uniform_int(rng, 1, 6));
        const CatalogManifest cat = synthetic_catalog(n, views);
        EmbeddingStore store(8);
        std::vector<EmbeddingVector> pool;
        for (int i = 0; i < 5; ++i) pool.push_back(random_unit(rng, 8));
        for (const auto& p : cat.products())
            for (const auto& v : p.views)
                store.insert(v.image_id, rng() % 3 == 0 ? pool[rng() % pool.size()] : random_unit(rng, 8));
        const auto q = rng() % 4 == 0 ? pool[0] : random_unit(rng, 8);

        const auto full = top_k_products(q, cat, store, n);
        std::vector<std::pair<double, std::string>> oracle;
        bool bad = full.entries.size() != n;
        for (const auto& p : cat.products()) {
            double best = -2;
            for (const auto& v : p.views) best = std::max(best, cosine_similarity(q, store.at(v.image_id)));
            oracle.push_back({best, p.product_id});
            if (product_similarity(q, p, store).score != best) bad = true;
        }
        std::sort(oracle.begin(), oracle.end(), [](const auto& x, const auto& y) {
            return x.first != y.first ? x.first > y.first : x.second < y.second;
        });
        for (std::size_t i = 0; !bad && i < n; ++i)
            bad = full.entries[i].product_id != oracle[i].second || full.entries[i].score != oracle[i].first ||
                  full.entries[i].view_indices.size() != views;
        if (bad) {
            r.fail(c, "K = N ordering differs from the oracle");
            continue;
        }
        const auto k1 = static_cast<std::size_t>(uniform_int(rng, 1, static_cast<int>(n)));
        const auto k2 = static_cast<std::size_t>(uniform_int(rng, static_cast<int>(k1), static_cast<int>(n) + 3));
        const auto a = top_k_products(q, cat, store, k1), b = top_k_products(q, cat, store, k2);
        if (a.entries.size() != std::min(k1, n) || b.entries.size() != std::min(k2, n)) {
            r.fail(c, "size != min(K, N)");
            continue;
        }
        for (std::size_t i = 0; i < a.entries.size(); ++i)
            if (a.entries[i].product_id != b.entries[i].product_id) {
                r.fail(c, "top_k(K1) is not a prefix of top_k(K2)");
                break;
            }
        const std::string& truth = cat.products()[rng() % n].product_id;
        auto contains = [&](const CandidateSet& s) {
            return std::any_of(s.entries.begin(), s.entries.end(), [&](const Candidate& e) { return e.product_id == truth; });
        };
        if (contains(a) && !contains(b)) r.fail(c, "recall not monotone in K");
    }
    return r;
}

inline PropertyReport check_crop_contracts(std::uint64_t seed, int cases) {
    PropertyReport r{"crop/mask pixel contracts"};
    std::mt19937_64 rng(seed);
    const IdentitySegmenter identity;
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const int w = uniform_int(rng, 1, 40), h = uniform_int(rng, 1, 40);
        const Image img = random_image(rng, w, h);
        Detection d;
        d.box.x1 = uniform_int(rng, 0, w - 1);
        d.box.y1 = uniform_int(rng, 0, h - 1);
        d.box.x2 = uniform_int(rng, d.box.x1 + 1, w);
        d.box.y2 = uniform_int(rng, d.box.y1 + 1, h);
        d.mask = Mask(w, h);
        const double density = uniform(rng, 0.0, 1.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) d.mask.set(x, y, uniform(rng, 0, 1) < density);
        const Image crop = crop_with_mask(img, d);
        if (crop.width != d.box.width() || crop.height != d.box.height() ||
            crop.pixels.size() != static_cast<std::size_t>(d.box.area()) * 3) {
            r.fail(c, "crop dims differ from the box");
            continue;
        }
        std::size_t crop_fg = 0, mask_fg = 0;
        bool bad = false;
        for (int y = 0; y < crop.height; ++y)
            for (int x = 0; x < crop.width; ++x) {
                const bool on = d.mask.test(d.box.x1 + x, d.box.y1 + y);
                mask_fg += on;
                const std::uint8_t* p = crop.at(x, y);
                const std::uint8_t* s = img.at(d.box.x1 + x, d.box.y1 + y);
                crop_fg += (p[0] | p[1] | p[2]) != 0;
                for (int k = 0; k < 3; ++k) bad = bad || (on ? p[k] != s[k] : p[k] != 0);
            }
        if (bad) r.fail(c, "pixel contract violated");
        else if (crop_fg > mask_fg) r.fail(c, "crop foreground exceeds mask foreground");
        const Region reg = prepare_region(identity, {"i", img, nullptr});
        if (!(reg.pixels == img) || reg.fallback || reg.box.x1 != 0 || reg.box.y2 != h)
            r.fail(c, "identity prepare_region is not neutral");
    }
    return r;
}

inline Image window(const Image& src, int x0, int y0, int w, int h) {
    Image out(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) std::copy_n(src.at(x0 + x, y0 + y), 3, out.at(x, y));
    return out;
}

inline float max_response(const Image& img, const HarrisParams& hp) {
    const auto gray = to_gray(img);
    const auto map = harris_response(gray, img.width, img.height, hp.window_sigma, hp.k);
    return *std::max_element(map.begin(), map.end());
}

inline PropertyReport check_translation_equivariance(std::uint64_t seed, int cases) {
    PropertyReport r{"keypoint translation equivariance"};
    std::mt19937_64 rng(seed);
    const HarrisParams hp;
    const ReferenceFeatureExtractor fx(hp);
    const int W = 96, H = 96, pad = 6;
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const Image big = blocky_image(rng, W + 2 * pad, H + 2 * pad, 40);
        const int dx = uniform_int(rng, -pad, pad), dy = uniform_int(rng, -pad, pad);
        const Image a = window(big, pad, pad, W, H);
        const Image b = window(big, pad - dx, pad - dy, W, H);
        const auto fa = fx.extract(a, 1 << 20, nullptr), fb = fx.extract(b, 1 << 20, nullptr);
        const float floor = 0.011f * std::max(max_response(a, hp), max_response(b, hp));
        const int margin = fx.border() + 8;
        auto safe = [&](double x, double y) {
            return x >= margin + std::abs(dx) && y >= margin + std::abs(dy) && x <= W - 1 - margin - std::abs(dx) &&
                   y <= H - 1 - margin - std::abs(dy);
        };
        auto find = [](const FeatureSet& fs, double x, double y) {
            for (const auto& k : fs.keypoints)
                if (std::abs(k.x - x) <= 0.5 && std::abs(k.y - y) <= 0.5) return true;
            return false;
        };
        bool bad = false;
        for (const auto& k : fa.keypoints)
            if (k.response > floor && safe(k.x, k.y)) {
                ++r.checks;
                if (!find(fb, k.x + dx, k.y + dy)) bad = true;
            }
        for (const auto& k : fb.keypoints)
            if (k.response > floor && safe(k.x - dx, k.y - dy) && !find(fa, k.x - dx, k.y - dy)) bad = true;
        if (bad) r.fail(c, "shifted keypoint not found within 0.5 px");
    }
    return r;
}

inline PropertyReport check_descriptor_self_match(std::uint64_t seed, int cases) {
    PropertyReport r{"descriptor self-similarity"};
    std::mt19937_64 rng(seed);
    const ReferenceFeatureExtractor fx;
    const ReferenceMatcher matcher;
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const Image img = blocky_image(rng, uniform_int(rng, 48, 96), uniform_int(rng, 48, 96), 30);
        const auto fs = fx.extract(img, 256, nullptr);
        const auto m = matcher.match(fs, fs);
        // Patches that repeat elsewhere in the image (same block corner) have
        // equal descriptors; those are genuinely ambiguous and may be dropped.
        bool duplicates = false, bad = false;
        for (std::size_t i = 0; i < fs.size(); ++i) {
            const auto a = fs.descriptor(i);
            double self = 0, best_other = -2;
            for (std::size_t j = 0; j < fs.size(); ++j) {
                const auto b = fs.descriptor(j);
                double d = 0;
                for (std::size_t t = 0; t < a.size(); ++t) d += static_cast<double>(a[t]) * b[t];
                if (j == i) self = d;
                else best_other = std::max(best_other, d);
            }
            if (best_other > self + 1e-6) bad = true;
            if (best_other > 1.0 - 1e-6) duplicates = true;
        }
        for (const auto& cr : m.correspondences) bad = bad || cr.query_idx != cr.gallery_idx;
        r.checks += static_cast<long long>(m.correspondences.size());
        if (!duplicates && m.correspondences.size() != fs.size()) bad = true;
        if (bad) r.fail(c, "self match is not the identity");
    }
    return r;
}

inline PropertyReport check_zero_region(std::uint64_t seed, int cases) {
    PropertyReport r{"no keypoints inside zeroed regions"};
    std::mt19937_64 rng(seed);
    const ReferenceFeatureExtractor fx;
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const int w = uniform_int(rng, 32, 64), h = uniform_int(rng, 32, 64);
        Image img = blocky_image(rng, w, h, 24);
        const int zw = uniform_int(rng, 12, w - 4), zh = uniform_int(rng, 12, h - 4);
        const int zx = uniform_int(rng, 0, w - zw), zy = uniform_int(rng, 0, h - zh);
        Mask gate(w, h, 1);
        for (int y = zy; y < zy + zh; ++y)
            for (int x = zx; x < zx + zw; ++x) {
                std::fill_n(img.at(x, y), 3, std::uint8_t{0});
                gate.set(x, y, false);
            }
        // A pixel whose whole detector footprint is zero.
        const int reach = 7;
        auto inside = [&](double x, double y, int shrink) {
            return x >= zx + shrink && x <= zx + zw - 1 - shrink && y >= zy + shrink && y <= zy + zh - 1 - shrink;
        };
        const auto free = fx.extract(img, 4096, nullptr);
        const auto gated = fx.extract(img, 4096, &gate);
        bool bad = false;
        for (const auto& k : free.keypoints) bad = bad || inside(k.x, k.y, reach);
        r.checks += static_cast<long long>(free.size() + gated.size());
        if (bad) {
            r.fail(c, "keypoint inside a zero region");
            continue;
        }
        for (const auto& k : gated.keypoints) bad = bad || !gate.contains(k.x, k.y);
        if (bad) r.fail(c, "gated keypoint on a masked pixel");
    }
    return r;
}

struct PlantedInstance {
    std::vector<Point2> src, dst;
};

inline PlantedInstance planted(std::mt19937_64& rng, int inliers, int outliers, double sigma) {
    const auto H = random_homography(rng);
    PlantedInstance inst;
    for (int i = 0; i < inliers; ++i) {
        const Point2 p{uniform(rng, 0, 200), uniform(rng, 0, 200)};
        Point2 q = apply(H, p);
        q.x += sigma * gaussian(rng);
        q.y += sigma * gaussian(rng);
        inst.src.push_back(snap(p));
        inst.dst.push_back(snap(q));
    }
    for (int i = 0; i < outliers; ++i) {
        inst.src.push_back(snap({uniform(rng, 0, 200), uniform(rng, 0, 200)}));
        inst.dst.push_back(snap({uniform(rng, -20, 240), uniform(rng, -20, 240)}));
    }
    // shuffle jointly
    for (std::size_t i = inst.src.size(); i > 1; --i) {
        const std::size_t j = rng() % i;
        std::swap(inst.src[i - 1], inst.src[j]);
        std::swap(inst.dst[i - 1], inst.dst[j]);
    }
    return inst;
}

inline PropertyReport check_ransac_consistency(std::uint64_t seed, int cases) {
    PropertyReport r{"RANSAC inlier consistency, threshold monotonicity, seed determinism"};
    std::mt19937_64 rng(seed);
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const int in = uniform_int(rng, 0, 30), out = uniform_int(rng, 0, 20);
        const auto inst = planted(rng, in, out, uniform(rng, 0, 2));
        const auto [a, b] = point_features(inst.src, inst.dst);
        RansacParams p;
        p.threshold_px = uniform(rng, 0.5, 6);
        p.max_iters = uniform_int(rng, 1, 500);
        p.exhaustive = rng() % 5 == 0 && inst.src.size() <= 14;
        const std::uint64_t s = rng();
        const auto m1 = ransac_verify(identity_matches(inst.src.size()), a, b, p, s);
        const auto m2 = ransac_verify(identity_matches(inst.src.size()), a, b, p, s);
        if (!m1.inlier_flags || m1.inlier_flags->size() != inst.src.size()) {
            r.fail(c, "flags missing");
            continue;
        }
        if (*m1.inlier_flags != *m2.inlier_flags || m1.model.has_value() != m2.model.has_value() ||
            (m1.model && m1.model->h != m2.model->h)) {
            r.fail(c, "not deterministic for a fixed seed");
            continue;
        }
        if (!m1.model) {
            if (inlier_count(m1) != 0) r.fail(c, "inliers without a model");
            continue;
        }
        bool bad = false;
        std::size_t lower = 0;
        const double lower_thr = p.threshold_px * uniform(rng, 0.1, 1.0);
        for (std::size_t i = 0; i < inst.src.size(); ++i) {
            const double e = reprojection_error(*m1.model, inst.src[i], inst.dst[i]);
            bad = bad || ((*m1.inlier_flags)[i] != (e < p.threshold_px));
            lower += e < lower_thr;
        }
        r.checks += static_cast<long long>(inlier_count(m1));
        if (bad) r.fail(c, "flags disagree with the returned model");
        else if (lower > inlier_count(m1)) r.fail(c, "lower threshold increased the inlier count");
    }
    return r;
}

inline PropertyReport check_ransac_oracle(std::uint64_t seed, int cases) {
    PropertyReport r{"exhaustive RANSAC equals brute force"};
    std::mt19937_64 rng(seed);
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const int n = uniform_int(rng, 0, 12);
        const int in = uniform_int(rng, 0, n);
        const auto inst = planted(rng, in, n - in, uniform(rng, 0, 3));
        const double thr = uniform(rng, 1.0, 5.0);
        const auto [a, b] = point_features(inst.src, inst.dst);
        RansacParams p;
        p.threshold_px = thr;
        p.exhaustive = true;
        const auto m = ransac_verify(identity_matches(inst.src.size()), a, b, p, rng());
        const std::size_t expect = brute_force_max_inliers(inst.src, inst.dst, thr);
        r.checks += static_cast<long long>(expect);
        if (inlier_count(m) != expect)
            r.fail(c, "n=" + std::to_string(n) + " ransac=" + std::to_string(inlier_count(m)) + " oracle=" +
                          std::to_string(expect));
    }
    return r;
}

inline bool ranked_before(const RankedProduct& a, const RankedProduct& b) {
    if (a.inlier_score != b.inlier_score) return a.inlier_score > b.inlier_score;
    if (a.stage1_score != b.stage1_score) return a.stage1_score > b.stage1_score;
    return a.product_id < b.product_id;
}

inline PropertyReport check_rank_total_order(std::uint64_t seed, int cases) {
    PropertyReport r{"ranking tie-break total order"};
    std::mt19937_64 rng(seed);
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const int n = uniform_int(rng, 0, 30);
        std::vector<RankedProduct> items;
        for (int i = 0; i < n; ++i)
            items.push_back({"p" + std::to_string(i), uniform_int(rng, 0, 4), uniform_int(rng, 0, 3) * 0.25,
                             kAllViews[rng() % 6]});
        auto shuffled = items;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const auto x = rank_candidates(items), y = rank_candidates(shuffled);
        bool bad = x != y || x.size() != items.size();
        for (std::size_t i = 1; !bad && i < x.size(); ++i) bad = !ranked_before(x[i - 1], x[i]);
        if (bad) r.fail(c, "ranking is not a permutation-invariant strict order");
    }
    return r;
}

inline PropertyReport check_accuracy_monotone(std::uint64_t seed, int cases) {
    PropertyReport r{"top-k accuracy monotone in k"};
    std::mt19937_64 rng(seed);
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const int nq = uniform_int(rng, 1, 20), np = uniform_int(rng, 1, 12);
        std::vector<RetrievalResult> results;
        std::vector<QueryLabel> labels;
        for (int q = 0; q < nq; ++q) {
            RetrievalResult res;
            res.query_id = "q" + std::to_string(q);
            std::vector<int> ids(static_cast<std::size_t>(np));
            std::iota(ids.begin(), ids.end(), 0);
            std::shuffle(ids.begin(), ids.end(), rng);
            const int shown = uniform_int(rng, 0, np);
            for (int i = 0; i < shown; ++i) res.ranked.push_back({"p" + std::to_string(ids[static_cast<std::size_t>(i)]), 0, 0.0});
            results.push_back(res);
            labels.push_back({res.query_id, "p" + std::to_string(uniform_int(rng, 0, np))});
        }
        double prev = -1;
        bool bad = false;
        for (std::size_t k = 1; k <= static_cast<std::size_t>(np) + 2; ++k) {
            const double acc = top_k_accuracy(results, labels, k);
            bad = bad || acc < prev || acc < 0 || acc > 1;
            prev = acc;
        }
        if (bad) r.fail(c, "accuracy decreased with k");
    }
    return r;
}

inline PropertyReport check_histogram_conservation(std::uint64_t seed, int cases) {
    PropertyReport r{"histogram counts conserve"};
    std::mt19937_64 rng(seed);
    for (int c = 0; c < cases; ++c, ++r.cases) {
        const int n = uniform_int(rng, 0, 200), bins = uniform_int(rng, 1, 20);
        std::vector<MaskRatioRecord> recs;
        for (int i = 0; i < n; ++i) {
            const int kind = uniform_int(rng, 0, 3);
            const double ratio = kind == 0 ? 0.0 : kind == 1 ? 1.0 : uniform(rng, 0, 1);
            recs.push_back({"q", 0, 0, ratio});
        }
        const auto h = histogram(recs, bins);
        std::size_t total = 0;
        for (const auto& b : h) total += b.count;
        if (total != recs.size() || h.size() != static_cast<std::size_t>(bins)) r.fail(c, "counts do not sum to n");
    }
    return r;
}

inline std::vector<PropertyReport> run_all_properties(std::uint64_t seed, int cases) {
    return {check_cosine_bounds(seed + 1, cases),         check_hash_embedder(seed + 2, cases),
            check_topk_prefix(seed + 3, cases),           check_crop_contracts(seed + 4, cases),
            check_translation_equivariance(seed + 5, cases), check_descriptor_self_match(seed + 6, cases),
            check_zero_region(seed + 7, cases),           check_ransac_consistency(seed + 8, cases),
            check_ransac_oracle(seed + 9, cases),         check_rank_total_order(seed + 10, cases),
            check_accuracy_monotone(seed + 11, cases),    check_histogram_conservation(seed + 12, cases)};
}

}  // namespace prism::testing
