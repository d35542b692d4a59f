#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace prism {

/// Canonical capture angles. Declaration order is the gallery enumeration order.
enum class ViewLabel { back_drop, bottom_drop, front_drop, front_view, side_drop, top_drop };

inline constexpr std::array<ViewLabel, 6> kAllViews{
    ViewLabel::back_drop, ViewLabel::bottom_drop, ViewLabel::front_drop,
    ViewLabel::front_view, ViewLabel::side_drop, ViewLabel::top_drop};

std::string_view to_string(ViewLabel v);
/// Throws DataError for anything outside the six labels.
ViewLabel parse_view_label(std::string_view s);

enum class CoarseClass { bagged, bottled, canned, unknown };

std::string_view to_string(CoarseClass c);
CoarseClass parse_coarse_class(std::string_view s);

struct ViewImage {
    ViewLabel view = ViewLabel::front_view;
    std::filesystem::path image_ref;
    std::optional<std::filesystem::path> mask_ref;
    std::string image_id;
};

struct ProductRecord {
    std::string product_id;
    std::string display_name;
    CoarseClass coarse_class = CoarseClass::unknown;
    std::vector<ViewImage> views;  ///< sorted by ViewLabel after load
};

struct GalleryImage {
    std::size_t product_index;
    std::size_t view_index;
    const ProductRecord* product;
    const ViewImage* view;
};

/// Immutable after construction; asset paths are absolute (resolved against root_dir).
class CatalogManifest {
public:
    CatalogManifest() = default;
    /// Validates every invariant; throws DataError on violation.
    CatalogManifest(std::vector<ProductRecord> products, std::filesystem::path root_dir,
                    std::optional<std::filesystem::path> embedding_store_ref = std::nullopt);

    const std::vector<ProductRecord>& products() const noexcept { return products_; }
    const std::filesystem::path& root_dir() const noexcept { return root_dir_; }
    const std::optional<std::filesystem::path>& embedding_store_ref() const noexcept {
        return embedding_store_ref_;
    }
    std::size_t size() const noexcept { return products_.size(); }
    std::size_t image_count() const noexcept { return image_count_; }

    const ProductRecord* find_product(std::string_view product_id) const;
    std::optional<std::size_t> product_index(std::string_view product_id) const;
    /// (product index, view index) for a gallery image id.
    std::optional<std::pair<std::size_t, std::size_t>> locate_image(std::string_view image_id) const;

private:
    std::vector<ProductRecord> products_;
    std::filesystem::path root_dir_;
    std::optional<std::filesystem::path> embedding_store_ref_;
    std::size_t image_count_ = 0;
    std::unordered_map<std::string, std::size_t> product_lookup_;
    std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> image_lookup_;
};

/// Parses the manifest JSON. Relative root_dir is taken relative to base_dir;
/// relative assets relative to root_dir. check_assets verifies files exist.
CatalogManifest parse_manifest(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                               bool check_assets = true);
CatalogManifest load_manifest(const std::filesystem::path& path, bool check_assets = true);

/// Serializes with root_dir relative to manifest_dir and assets relative to root_dir.
nlohmann::json manifest_to_json(const CatalogManifest& catalog,
                                const std::filesystem::path& manifest_dir);
void save_manifest(const CatalogManifest& catalog, const std::filesystem::path& path);

/// Products in manifest order, views in ViewLabel order.
std::vector<GalleryImage> gallery_images(const CatalogManifest& catalog);

}  // namespace prism
