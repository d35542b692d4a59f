#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prism/catalog.hpp"
#include "prism/evaluation.hpp"
#include "prism/image.hpp"
#include "prism/matching.hpp"

namespace prism {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Dials for a synthetic catalog and query set.
struct SynthSpec {
    int n_products = 50;
    int n_queries_per_product = 2;
    int canvas_width = 192;
    int canvas_height = 144;
    int art_width = 96;
    int art_height = 72;
    Range perspective_jitter{0.0, 0.04};  ///< per-corner offset as a fraction of art size
    Range rotation_deg{-6.0, 6.0};
    Range scale{0.9, 1.1};
    double translate_frac = 1.0;  ///< fraction of the free canvas slack used for placement
    double clutter_density = 0.0;  ///< target fraction of free background covered by distractors
    Range occlusion_frac{0.0, 0.0};
    Range brightness{-10.0, 10.0};
    Range contrast{0.9, 1.1};
    int similarity_groups = 5;  ///< products per look-alike family
    double glyph_frac = 0.4;    ///< side of the per-product patch relative to the art
    std::uint64_t seed = 1;

    /// Throws ConfigError when a range is inverted or a size is out of bounds.
    void validate() const;
};

SynthSpec synth_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const SynthSpec& spec);
SynthSpec load_synth_spec(const std::filesystem::path& path);

/// One query, as listed in queries.json. Geometry fields are present only for
/// generated data.
struct SynthRecord {
    std::string query_id;
    std::filesystem::path image;
    std::string true_product_id;
    std::optional<std::filesystem::path> mask;
    std::optional<Homography> homography;  ///< front_view gallery image -> query image
    double occlusion_frac = 0.0;
    std::vector<std::vector<Point2>> occlusion_polygons;
    std::optional<CoarseClass> coarse_class;
};

/// The shared background plate (smooth gradient) used by every synthetic image.
Image render_background(const SynthSpec& spec);

/// Writes background.png, gallery/*.png (+ masks) and manifest.json under out_dir.
CatalogManifest generate_catalog(const SynthSpec& spec, const std::filesystem::path& out_dir, int workers = 1);

/// Writes queries/*.png (+ masks) and queries.json under out_dir.
std::pair<std::vector<SynthRecord>, std::vector<QueryLabel>> generate_queries(
    const SynthSpec& spec, const CatalogManifest& catalog, const std::filesystem::path& out_dir, int workers = 1);

struct SynthDataset {
    CatalogManifest catalog;
    std::vector<SynthRecord> queries;
    std::vector<QueryLabel> labels;
    std::filesystem::path manifest_path;
    std::filesystem::path queries_path;
    std::filesystem::path background_path;
};

SynthDataset synthesize(const SynthSpec& spec, const std::filesystem::path& out_dir, int workers = 1);

/// Parses queries.json; relative paths resolve against the file's directory.
/// Throws DataError on schema violations.
std::vector<SynthRecord> load_query_file(const std::filesystem::path& path);
void save_query_file(const std::vector<SynthRecord>& records, const std::filesystem::path& path);

std::vector<QueryLabel> labels_of(const std::vector<SynthRecord>& records);

}  // namespace prism
