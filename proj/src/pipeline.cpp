#include "prism/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>

#include "prism/parallel.hpp"

namespace prism {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

/// Rethrows the in-flight prism::Error with the failing stage prefixed.
[[noreturn]] void rethrow_in_stage(std::string_view stage) {
    const std::string prefix = std::string(stage) + ": ";
    try {
        throw;
    } catch (const ProviderError& e) {
        throw ProviderError(e.reason(), prefix + e.what());
    } catch (const FormatError& e) {
        throw FormatError(e.reason(), prefix + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const DataError& e) {
        throw DataError(prefix + e.what());
    }
}

constexpr std::uint8_t kCacheMagic[4] = {'P', 'R', 'S', 'F'};
constexpr std::uint32_t kCacheVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

class CacheReader {
public:
    explicit CacheReader(std::span<const std::uint8_t> b) : bytes_(b) {}
    template <typename T>
    T get() {
        T v;
        std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError(FormatError::Reason::truncated, "gallery cache truncated");
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() {
        auto s = take(get<std::uint32_t>());
        return {s.begin(), s.end()};
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(CandidateStrategy s) {
    switch (s) {
        case CandidateStrategy::embedding_topk: return "embedding_topk";
        case CandidateStrategy::class_filter: return "class_filter";
        case CandidateStrategy::none: return "none";
    }
    return "?";
}

CandidateStrategy parse_candidate_strategy(std::string_view s) {
    if (s == "embedding_topk") return CandidateStrategy::embedding_topk;
    if (s == "class_filter") return CandidateStrategy::class_filter;
    if (s == "none") return CandidateStrategy::none;
    throw ConfigError("unknown candidate_strategy '" + std::string(s) + "'");
}

std::string_view to_string(CandidateUnit u) { return u == CandidateUnit::product ? "product" : "image"; }

CandidateUnit parse_candidate_unit(std::string_view s) {
    if (s == "product") return CandidateUnit::product;
    if (s == "image") return CandidateUnit::image;
    throw ConfigError("unknown candidate_unit '" + std::string(s) + "'");
}

void PipelineConfig::validate() const {
    if (k < 1) throw ConfigError("K must be >= 1");
    if (max_keypoints < 1) throw ConfigError("max_keypoints must be >= 1");
    if (worker_count < 1) throw ConfigError("worker_count must be >= 1");
    if (!(ransac.threshold_px > 0.0)) throw ConfigError("ransac threshold_px must be positive");
    if (ransac.max_iters < 1) throw ConfigError("ransac max_iters must be >= 1");
    if (!(ransac.confidence > 0.0 && ransac.confidence < 1.0)) {
        throw ConfigError("ransac confidence must lie in (0, 1)");
    }
}

Query QuerySource::load() const {
    return {id, load_image(image_path), mask_ref, coarse_class};
}

double RetrievalResult::stage_ms(std::string_view stage) const {
    for (const auto& t : traces) {
        if (t.stage == stage) return t.wall_ms;
    }
    return 0.0;
}

std::vector<RankedProduct> rank_candidates(std::vector<RankedProduct> scores) {
    std::sort(scores.begin(), scores.end(), [](const RankedProduct& a, const RankedProduct& b) {
        if (a.inlier_score != b.inlier_score) return a.inlier_score > b.inlier_score;
        if (a.stage1_score != b.stage1_score) return a.stage1_score > b.stage1_score;
        return a.product_id < b.product_id;
    });
    return scores;
}

nlohmann::json to_json(const RetrievalResult& result) {
    nlohmann::json ranked = nlohmann::json::array();
    for (const auto& r : result.ranked) {
        ranked.push_back({{"product_id", r.product_id},
                          {"inlier_score", r.inlier_score},
                          {"stage1_score", r.stage1_score},
                          {"best_view", to_string(r.best_view)}});
    }
    return {{"query_id", result.query_id},
            {"ranked", std::move(ranked)},
            {"timings_ms",
             {{"stage1", result.stage_ms("stage1")},
              {"stage2", result.stage_ms("stage2")},
              {"stage3", result.stage_ms("stage3")},
              {"total", result.total_ms}}},
            {"flags", result.fallback_flags}};
}

RetrievalEngine::RetrievalEngine(PipelineConfig config, std::shared_ptr<const CatalogManifest> catalog,
                                 std::shared_ptr<const EmbeddingStore> store, Providers providers)
    : config_(config), catalog_(std::move(catalog)), store_(std::move(store)), providers_(std::move(providers)) {
    config_.validate();
    if (!catalog_) throw ConfigError("engine needs a catalog");
    if (!providers_.features || !providers_.matcher) throw ConfigError("engine needs feature and matcher providers");
    if (config_.segmentation_enabled && !providers_.segmenter) {
        throw ConfigError("segmentation enabled without a segmenter provider");
    }
    if (config_.candidate_strategy != CandidateStrategy::class_filter) {
        if (!providers_.embedder) throw ConfigError("embedding strategy needs an embedder provider");
        if (!store_) {
            store_ = std::make_shared<const EmbeddingStore>(build_embedding_store(*providers_.embedder, *catalog_));
        }
        if (store_->dim() != providers_.embedder->dim()) {
            throw ConfigError("embedding store dim " + std::to_string(store_->dim()) +
                              " does not match embedder dim " + std::to_string(providers_.embedder->dim()));
        }
    }
    std::size_t total = 0;
    for (const auto& p : catalog_->products()) {
        offsets_.push_back(total);
        total += p.views.size();
    }
    slots_.reserve(total);
    for (std::size_t i = 0; i < total; ++i) slots_.push_back(std::make_unique<Slot>());
}

std::size_t RetrievalEngine::flat_index(std::size_t product_index, std::size_t view_index) const {
    return offsets_.at(product_index) + view_index;
}

std::string RetrievalEngine::gallery_fingerprint() const {
    std::string fp = config_.segmentation_enabled ? providers_.segmenter->fingerprint() : std::string("none");
    fp += "|" + providers_.features->fingerprint() + "|kp=" + std::to_string(config_.max_keypoints);
    return fp;
}

GalleryEntry RetrievalEngine::compute_entry(const ViewImage& view) const {
    const Image img = load_image(view.image_ref);
    const ImageInput input{view.image_id, img, view.mask_ref ? &*view.mask_ref : nullptr};
    const Region region = config_.segmentation_enabled ? prepare_region(*providers_.segmenter, input)
                                                       : full_region(img);
    const Mask* gate = config_.segmentation_enabled && !region.fallback ? &region.mask : nullptr;
    return {region.box, region.fallback,
            extract_features(*providers_.features, region.pixels, config_.max_keypoints, gate)};
}

const GalleryEntry& RetrievalEngine::gallery_entry(std::size_t product_index, std::size_t view_index) const {
    auto& slot = *slots_.at(flat_index(product_index, view_index));
    std::call_once(slot.once, [&] {
        const auto& view = catalog_->products().at(product_index).views.at(view_index);
        slot.entry = std::make_shared<const GalleryEntry>(compute_entry(view));
    });
    return *slot.entry;
}

void RetrievalEngine::precompute_gallery() {
    const auto start = Clock::now();
    const auto gallery = gallery_images(*catalog_);
    parallel_for(gallery.size(), config_.worker_count,
                 [&](std::size_t i) { gallery_entry(gallery[i].product_index, gallery[i].view_index); });
    precompute_ms_ = ms_since(start);
}

void RetrievalEngine::save_gallery_cache(const std::filesystem::path& path) {
    precompute_gallery();
    std::vector<std::uint8_t> out(std::begin(kCacheMagic), std::end(kCacheMagic));
    put<std::uint32_t>(out, kCacheVersion);
    const std::string fp = gallery_fingerprint();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(fp.size()));
    out.insert(out.end(), fp.begin(), fp.end());
    const auto gallery = gallery_images(*catalog_);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(gallery.size()));
    for (const auto& g : gallery) {
        const auto& e = gallery_entry(g.product_index, g.view_index);
        const auto& id = g.view->image_id;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(id.size()));
        out.insert(out.end(), id.begin(), id.end());
        for (int v : {e.box.x1, e.box.y1, e.box.x2, e.box.y2}) put<std::int32_t>(out, v);
        put<std::uint8_t>(out, e.fallback);
        put<std::uint8_t>(out, e.features.too_small);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.features.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e.features.descriptor_size));
        for (const auto& kp : e.features.keypoints) {
            put(out, kp.x);
            put(out, kp.y);
            put(out, kp.response);
        }
        for (float d : e.features.descriptors) put(out, d);
    }
    write_file_bytes(path, out);
}

void RetrievalEngine::load_gallery_cache(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    CacheReader in(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCacheMagic, 4) != 0) {
        throw FormatError(FormatError::Reason::bad_magic, "gallery cache: bad magic");
    }
    in.take(4);
    if (in.get<std::uint32_t>() != kCacheVersion) {
        throw FormatError(FormatError::Reason::bad_version, "gallery cache: unsupported version");
    }
    if (in.str() != gallery_fingerprint()) {
        throw ConfigError("gallery cache was built with a different segmenter/feature configuration");
    }
    const auto count = in.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string id = in.str();
        GalleryEntry e;
        e.box = {in.get<std::int32_t>(), in.get<std::int32_t>(), in.get<std::int32_t>(), in.get<std::int32_t>()};
        e.fallback = in.get<std::uint8_t>() != 0;
        e.features.too_small = in.get<std::uint8_t>() != 0;
        const auto n = in.get<std::uint32_t>();
        e.features.descriptor_size = static_cast<int>(in.get<std::uint32_t>());
        e.features.keypoints.resize(n);
        for (auto& kp : e.features.keypoints) {
            kp.x = in.get<float>();
            kp.y = in.get<float>();
            kp.response = in.get<float>();
        }
        e.features.descriptors.resize(static_cast<std::size_t>(n) * e.features.descriptor_size);
        for (auto& d : e.features.descriptors) d = in.get<float>();
        const auto loc = catalog_->locate_image(id);
        if (!loc) throw DataError("gallery cache references unknown image '" + id + "'");
        auto& slot = *slots_.at(flat_index(loc->first, loc->second));
        auto entry = std::make_shared<const GalleryEntry>(std::move(e));
        std::call_once(slot.once, [&] { slot.entry = std::move(entry); });
    }
}

CandidateSet RetrievalEngine::select_candidates(const Query& query) const {
    switch (config_.candidate_strategy) {
        case CandidateStrategy::class_filter:
            if (!query.coarse_class) {
                throw DataError("class_filter strategy needs a query class for '" + query.id + "'");
            }
            return class_filter_candidates(*query.coarse_class, *catalog_);
        case CandidateStrategy::none: {
            const auto qvec = providers_.embedder->embed({query.id, query.image, nullptr});
            return top_k_products(qvec, *catalog_, *store_, catalog_->size());
        }
        case CandidateStrategy::embedding_topk: {
            const auto qvec = providers_.embedder->embed({query.id, query.image, nullptr});
            return config_.candidate_unit == CandidateUnit::product
                       ? top_k_products(qvec, *catalog_, *store_, config_.k)
                       : top_k_images(qvec, *catalog_, *store_, config_.k);
        }
    }
    throw ConfigError("unhandled candidate strategy");
}

RetrievalResult RetrievalEngine::stage1_only(const Query& query) const {
    const auto start = Clock::now();
    RetrievalResult result;
    result.query_id = query.id;
    const auto candidates = select_candidates(query);
    for (const auto& c : candidates.entries) {
        const auto& views = catalog_->products()[c.product_index].views;
        result.ranked.push_back({c.product_id, 0, c.score, views[c.best_view].view});
    }
    result.total_ms = ms_since(start);
    result.traces.push_back({"stage1", result.total_ms, {{"candidates", candidates.entries.size()}}});
    return result;
}

PreparedQuery RetrievalEngine::prepare_query(const Query& query) const {
    const ImageInput input{query.id, query.image, query.mask_ref ? &*query.mask_ref : nullptr};
    const Region region = config_.segmentation_enabled ? prepare_region(*providers_.segmenter, input)
                                                       : full_region(query.image);
    const Mask* gate = config_.segmentation_enabled && !region.fallback ? &region.mask : nullptr;
    return {region.box, region.fallback,
            extract_features(*providers_.features, region.pixels, config_.max_keypoints, gate)};
}

MatchSet RetrievalEngine::verify_pair(const Query& query, const PreparedQuery& prepared,
                                      std::size_t product_index, std::size_t view_index) const {
    const auto& entry = gallery_entry(product_index, view_index);
    const auto& view = catalog_->products()[product_index].views[view_index];
    MatchSet matches = match_descriptors(*providers_.matcher, prepared.features, entry.features);
    return ransac_verify(std::move(matches), prepared.features, entry.features, config_.ransac,
                         pair_seed(query.id, view.image_id, config_.seed));
}

RetrievalResult RetrievalEngine::run_query(const Query& query) const {
    return run_query_impl(query, config_.worker_count);
}

RetrievalResult RetrievalEngine::run_query_impl(const Query& query, int workers) const {
    const auto start = Clock::now();
    RetrievalResult result;
    result.query_id = query.id;
    if (query.image.empty() || query.image.channels != 3) {
        throw DataError("query '" + query.id + "' is not a 3-channel image");
    }

    // Stage 1: candidate selection.
    auto t = Clock::now();
    CandidateSet candidates;
    try {
        candidates = select_candidates(query);
    } catch (const Error&) {
        rethrow_in_stage("stage1");
    }
    if (candidates.entries.empty()) throw DataError("stage1: empty candidate set");
    struct Pair {
        std::size_t candidate;
        std::size_t product;
        std::size_t view;
    };
    std::vector<Pair> pairs;
    for (std::size_t c = 0; c < candidates.entries.size(); ++c) {
        for (auto v : candidates.entries[c].view_indices) {
            pairs.push_back({c, candidates.entries[c].product_index, v});
        }
    }
    result.traces.push_back({"stage1", ms_since(t),
                             {{"strategy", to_string(config_.candidate_strategy)},
                              {"candidates", candidates.entries.size()},
                              {"pairs", pairs.size()}}});

    // Stage 2: query region; gallery regions come from the cache.
    t = Clock::now();
    const ImageInput input{query.id, query.image, query.mask_ref ? &*query.mask_ref : nullptr};
    Region region;
    std::size_t gallery_fallbacks = 0;
    try {
        region = config_.segmentation_enabled ? prepare_region(*providers_.segmenter, input)
                                              : full_region(query.image);
        parallel_for(pairs.size(), workers, [&](std::size_t i) { gallery_entry(pairs[i].product, pairs[i].view); });
        for (const auto& p : pairs) gallery_fallbacks += gallery_entry(p.product, p.view).fallback;
    } catch (const Error&) {
        rethrow_in_stage("stage2");
    }
    if (region.fallback) result.fallback_flags.insert("query_segmentation_fallback");
    if (gallery_fallbacks > 0) result.fallback_flags.insert("gallery_segmentation_fallback");
    result.traces.push_back({"stage2", ms_since(t),
                             {{"segmentation", config_.segmentation_enabled},
                              {"query_box", {region.box.x1, region.box.y1, region.box.x2, region.box.y2}},
                              {"query_fallback", region.fallback},
                              {"gallery_fallbacks", gallery_fallbacks}}});

    // Stage 3: features, matching, geometric verification.
    t = Clock::now();
    std::vector<int> inliers(pairs.size(), 0);
    PreparedQuery prepared;
    try {
        const Mask* gate = config_.segmentation_enabled && !region.fallback ? &region.mask : nullptr;
        prepared = {region.box, region.fallback,
                    extract_features(*providers_.features, region.pixels, config_.max_keypoints, gate)};
        if (prepared.features.too_small) result.fallback_flags.insert("query_too_small");
        parallel_for(pairs.size(), workers, [&](std::size_t i) {
            inliers[i] = static_cast<int>(inlier_count(verify_pair(query, prepared, pairs[i].product, pairs[i].view)));
        });
    } catch (const Error&) {
        rethrow_in_stage("stage3");
    }

    std::vector<RankedProduct> scores;
    scores.reserve(candidates.entries.size());
    for (const auto& c : candidates.entries) scores.push_back({c.product_id, -1, c.score, ViewLabel::front_view});
    const auto& products = catalog_->products();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto& s = scores[pairs[i].candidate];
        if (inliers[i] > s.inlier_score) {
            s.inlier_score = inliers[i];
            s.best_view = products[pairs[i].product].views[pairs[i].view].view;
        }
    }
    nlohmann::json per_candidate = nlohmann::json::object();
    for (auto& s : scores) {
        s.inlier_score = std::max(s.inlier_score, 0);
        per_candidate[s.product_id] = s.inlier_score;
    }
    result.ranked = rank_candidates(std::move(scores));
    result.traces.push_back({"stage3", ms_since(t),
                             {{"query_keypoints", prepared.features.size()},
                              {"pairs", pairs.size()},
                              {"inliers", std::move(per_candidate)}}});
    result.total_ms = ms_since(start);
    return result;
}

std::vector<BatchOutcome> RetrievalEngine::run_batch(std::span<const QuerySource> queries) const {
    std::vector<BatchOutcome> out(queries.size());
    parallel_for(queries.size(), config_.worker_count, [&](std::size_t i) {
        out[i].query_id = queries[i].id;
        try {
            out[i].result = run_query_impl(queries[i].load(), 1);
        } catch (const Error& e) {
            out[i].error = e.what();
            out[i].error_kind = e.kind();
        }
    });
    return out;
}

std::vector<BatchOutcome> RetrievalEngine::run_batch(std::span<const Query> queries) const {
    std::vector<BatchOutcome> out(queries.size());
    parallel_for(queries.size(), config_.worker_count, [&](std::size_t i) {
        out[i].query_id = queries[i].id;
        try {
            out[i].result = run_query_impl(queries[i], 1);
        } catch (const Error& e) {
            out[i].error = e.what();
            out[i].error_kind = e.kind();
        }
    });
    return out;
}

}  // namespace prism
