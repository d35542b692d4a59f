#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/catalog.hpp"
#include "prism/embedding.hpp"
#include "prism/error.hpp"
#include "prism/features.hpp"
#include "prism/matching.hpp"
#include "prism/segmentation.hpp"

namespace prism {

enum class CandidateStrategy { embedding_topk, class_filter, none };
enum class CandidateUnit { product, image };

std::string_view to_string(CandidateStrategy s);
CandidateStrategy parse_candidate_strategy(std::string_view s);
std::string_view to_string(CandidateUnit u);
CandidateUnit parse_candidate_unit(std::string_view s);

struct PipelineConfig {
    std::size_t k = 35;
    CandidateStrategy candidate_strategy = CandidateStrategy::embedding_topk;
    CandidateUnit candidate_unit = CandidateUnit::product;
    bool segmentation_enabled = true;
    int max_keypoints = 1024;
    int worker_count = 1;
    RansacParams ransac;
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
};

struct Providers {
    std::shared_ptr<const EmbeddingProvider> embedder;
    std::shared_ptr<const SegmenterProvider> segmenter;
    std::shared_ptr<const FeatureProvider> features;
    std::shared_ptr<const MatcherProvider> matcher;
};

struct Query {
    std::string id;
    Image image;
    std::optional<std::filesystem::path> mask_ref;
    std::optional<CoarseClass> coarse_class;  ///< consumed by the class-filter strategy
};

/// A query that is decoded lazily, so a bad file fails only its own query.
struct QuerySource {
    std::string id;
    std::filesystem::path image_path;
    std::optional<std::filesystem::path> mask_ref;
    std::optional<CoarseClass> coarse_class;

    Query load() const;
};

struct StageTrace {
    std::string stage;
    double wall_ms = 0.0;
    nlohmann::json detail;
};

struct RankedProduct {
    std::string product_id;
    int inlier_score = 0;
    double stage1_score = 0.0;
    ViewLabel best_view = ViewLabel::front_view;

    friend bool operator==(const RankedProduct&, const RankedProduct&) = default;
};

struct RetrievalResult {
    std::string query_id;
    std::vector<RankedProduct> ranked;
    std::vector<StageTrace> traces;
    std::set<std::string> fallback_flags;
    double total_ms = 0.0;

    double stage_ms(std::string_view stage) const;
};

/// Inlier score descending, then stage-1 score descending, then product_id ascending.
std::vector<RankedProduct> rank_candidates(std::vector<RankedProduct> scores);

/// Per-query JSON export.
nlohmann::json to_json(const RetrievalResult& result);

struct BatchOutcome {
    std::string query_id;
    std::optional<RetrievalResult> result;
    std::string error;  ///< empty on success
    ErrorKind error_kind = ErrorKind::data;

    bool ok() const noexcept { return result.has_value(); }
};

/// Verification inputs for one gallery view. Pixels are not retained.
struct GalleryEntry {
    BoundingBox box;  ///< crop placement in the source image
    bool fallback = false;
    FeatureSet features;  ///< crop coordinates
};

/// Query-side stage-2/3 inputs.
struct PreparedQuery {
    BoundingBox box;
    bool fallback = false;
    FeatureSet features;
};

class RetrievalEngine {
public:
    /// store may be null, in which case the gallery is embedded with the configured
    /// embedder (not applicable to the class-filter strategy).
    RetrievalEngine(PipelineConfig config, std::shared_ptr<const CatalogManifest> catalog,
                    std::shared_ptr<const EmbeddingStore> store, Providers providers);

    const PipelineConfig& config() const noexcept { return config_; }
    const CatalogManifest& catalog() const noexcept { return *catalog_; }
    const EmbeddingStore* store() const noexcept { return store_.get(); }

    /// Segments and extracts features for every gallery view. Optional: entries
    /// are otherwise computed on first use.
    void precompute_gallery();
    double precompute_ms() const noexcept { return precompute_ms_; }

    /// Cache key component identifying the segmenter and feature configuration.
    std::string gallery_fingerprint() const;
    /// Persists / restores the gallery cache. load throws FormatError or ConfigError
    /// (fingerprint mismatch).
    void save_gallery_cache(const std::filesystem::path& path);
    void load_gallery_cache(const std::filesystem::path& path);

    /// Stage 1 only.
    CandidateSet select_candidates(const Query& query) const;
    /// Ranking by Stage-1 similarity alone, for baseline comparisons.
    RetrievalResult stage1_only(const Query& query) const;

    RetrievalResult run_query(const Query& query) const;
    /// Results are element-wise identical to sequential run_query, independent of worker_count.
    std::vector<BatchOutcome> run_batch(std::span<const QuerySource> queries) const;
    std::vector<BatchOutcome> run_batch(std::span<const Query> queries) const;

    PreparedQuery prepare_query(const Query& query) const;
    const GalleryEntry& gallery_entry(std::size_t product_index, std::size_t view_index) const;
    /// Match + RANSAC of one (query, gallery view) pair.
    MatchSet verify_pair(const Query& query, const PreparedQuery& prepared, std::size_t product_index,
                         std::size_t view_index) const;

private:
    struct Slot {
        std::once_flag once;
        std::shared_ptr<const GalleryEntry> entry;
    };

    RetrievalResult run_query_impl(const Query& query, int workers) const;
    GalleryEntry compute_entry(const ViewImage& view) const;
    std::size_t flat_index(std::size_t product_index, std::size_t view_index) const;

    PipelineConfig config_;
    std::shared_ptr<const CatalogManifest> catalog_;
    std::shared_ptr<const EmbeddingStore> store_;
    Providers providers_;
    std::vector<std::size_t> offsets_;
    std::vector<std::unique_ptr<Slot>> slots_;
    double precompute_ms_ = 0.0;
};

}  // namespace prism
