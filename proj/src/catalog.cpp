#include "prism/catalog.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "prism/error.hpp"

namespace prism {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 6> kViewNames{
    "back_drop", "bottom_drop", "front_drop", "front_view", "side_drop", "top_drop"};
constexpr std::array<std::string_view, 4> kClassNames{"bagged", "bottled", "canned", "unknown"};

const json& require(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) throw DataError(where + ": missing field '" + key + "'");
    return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& where) {
    const auto& v = require(obj, key, where);
    if (!v.is_string()) throw DataError(where + ": field '" + key + "' must be a string");
    return v.get<std::string>();
}

std::optional<fs::path> optional_path(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw DataError(where + ": field '" + key + "' must be a string or null");
    return fs::path(it->get<std::string>());
}

fs::path resolve(const fs::path& root, const fs::path& p) {
    return p.is_absolute() ? p : (root / p).lexically_normal();
}

std::string relative_to(const fs::path& p, const fs::path& root) {
    auto rel = p.lexically_relative(root);
    if (rel.empty() || *rel.begin() == "..") return p.generic_string();
    return rel == "." ? std::string(".") : rel.generic_string();
}

}  // namespace

std::string_view to_string(ViewLabel v) { return kViewNames[static_cast<std::size_t>(v)]; }

ViewLabel parse_view_label(std::string_view s) {
    for (std::size_t i = 0; i < kViewNames.size(); ++i) {
        if (kViewNames[i] == s) return static_cast<ViewLabel>(i);
    }
    throw DataError("unknown view label '" + std::string(s) + "'");
}

std::string_view to_string(CoarseClass c) { return kClassNames[static_cast<std::size_t>(c)]; }

CoarseClass parse_coarse_class(std::string_view s) {
    for (std::size_t i = 0; i < kClassNames.size(); ++i) {
        if (kClassNames[i] == s) return static_cast<CoarseClass>(i);
    }
    throw DataError("unknown coarse class '" + std::string(s) + "'");
}

CatalogManifest::CatalogManifest(std::vector<ProductRecord> products, fs::path root_dir,
                                 std::optional<fs::path> embedding_store_ref)
    : products_(std::move(products)),
      root_dir_(std::move(root_dir)),
      embedding_store_ref_(std::move(embedding_store_ref)) {
    if (products_.empty()) throw DataError("catalog has no products");
    for (std::size_t p = 0; p < products_.size(); ++p) {
        auto& product = products_[p];
        if (product.product_id.empty()) throw DataError("empty product_id");
        if (!product_lookup_.emplace(product.product_id, p).second) {
            throw DataError("duplicate product_id '" + product.product_id + "'");
        }
        if (product.views.empty() || product.views.size() > kAllViews.size()) {
            throw DataError("product '" + product.product_id + "' must have 1..6 views");
        }
        std::stable_sort(product.views.begin(), product.views.end(),
                         [](const ViewImage& a, const ViewImage& b) { return a.view < b.view; });
        for (std::size_t v = 0; v + 1 < product.views.size(); ++v) {
            if (product.views[v].view == product.views[v + 1].view) {
                throw DataError("product '" + product.product_id + "' repeats view '" +
                                std::string(to_string(product.views[v].view)) + "'");
            }
        }
        for (std::size_t v = 0; v < product.views.size(); ++v) {
            const auto& id = product.views[v].image_id;
            if (id.empty()) throw DataError("empty image_id in product '" + product.product_id + "'");
            if (!image_lookup_.emplace(id, std::pair{p, v}).second) {
                throw DataError("duplicate image_id '" + id + "'");
            }
        }
        image_count_ += product.views.size();
    }
}

const ProductRecord* CatalogManifest::find_product(std::string_view product_id) const {
    auto idx = product_index(product_id);
    return idx ? &products_[*idx] : nullptr;
}

std::optional<std::size_t> CatalogManifest::product_index(std::string_view product_id) const {
    auto it = product_lookup_.find(std::string(product_id));
    if (it == product_lookup_.end()) return std::nullopt;
    return it->second;
}

std::optional<std::pair<std::size_t, std::size_t>> CatalogManifest::locate_image(
    std::string_view image_id) const {
    auto it = image_lookup_.find(std::string(image_id));
    if (it == image_lookup_.end()) return std::nullopt;
    return it->second;
}

CatalogManifest parse_manifest(const json& doc, const fs::path& base_dir, bool check_assets) {
    if (!doc.is_object()) throw DataError("manifest: top level must be an object");
    fs::path root = resolve(base_dir, require_string(doc, "root_dir", "manifest"));
    auto store_ref = optional_path(doc, "embedding_store", "manifest");
    if (store_ref) store_ref = resolve(root, *store_ref);

    const auto& products_json = require(doc, "products", "manifest");
    if (!products_json.is_array()) throw DataError("manifest: 'products' must be an array");

    std::vector<ProductRecord> products;
    products.reserve(products_json.size());
    for (const auto& pj : products_json) {
        if (!pj.is_object()) throw DataError("manifest: product entries must be objects");
        ProductRecord rec;
        rec.product_id = require_string(pj, "product_id", "product");
        const std::string where = "product '" + rec.product_id + "'";
        rec.display_name = pj.value("display_name", rec.product_id);
        if (auto it = pj.find("coarse_class"); it != pj.end() && !it->is_null()) {
            if (!it->is_string()) throw DataError(where + ": coarse_class must be a string");
            rec.coarse_class = parse_coarse_class(it->get<std::string>());
        }
        const auto& views = require(pj, "views", where);
        if (!views.is_array()) throw DataError(where + ": 'views' must be an array");
        for (const auto& vj : views) {
            ViewImage view;
            view.view = parse_view_label(require_string(vj, "view", where));
            view.image_ref = resolve(root, require_string(vj, "image", where));
            if (auto mask = optional_path(vj, "mask", where)) view.mask_ref = resolve(root, *mask);
            view.image_id = require_string(vj, "image_id", where);
            if (check_assets) {
                if (!fs::exists(view.image_ref)) {
                    throw DataError("missing asset: " + view.image_ref.string());
                }
                if (view.mask_ref && !fs::exists(*view.mask_ref)) {
                    throw DataError("missing asset: " + view.mask_ref->string());
                }
            }
            rec.views.push_back(std::move(view));
        }
        products.push_back(std::move(rec));
    }
    return CatalogManifest(std::move(products), std::move(root), std::move(store_ref));
}

CatalogManifest load_manifest(const fs::path& path, bool check_assets) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError("manifest parse error: " + std::string(e.what()));
    }
    return parse_manifest(doc, fs::absolute(path).parent_path(), check_assets);
}

json manifest_to_json(const CatalogManifest& catalog, const fs::path& manifest_dir) {
    const auto& root = catalog.root_dir();
    json products = json::array();
    for (const auto& p : catalog.products()) {
        json views = json::array();
        for (const auto& v : p.views) {
            views.push_back({{"view", to_string(v.view)},
                             {"image", relative_to(v.image_ref, root)},
                             {"mask", v.mask_ref ? json(relative_to(*v.mask_ref, root)) : json(nullptr)},
                             {"image_id", v.image_id}});
        }
        products.push_back({{"product_id", p.product_id},
                            {"display_name", p.display_name},
                            {"coarse_class", to_string(p.coarse_class)},
                            {"views", std::move(views)}});
    }
    const auto& store = catalog.embedding_store_ref();
    return {{"root_dir", relative_to(root, fs::absolute(manifest_dir).lexically_normal())},
            {"embedding_store", store ? json(relative_to(*store, root)) : json(nullptr)},
            {"products", std::move(products)}};
}

void save_manifest(const CatalogManifest& catalog, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << manifest_to_json(catalog, fs::absolute(path).parent_path()).dump(2) << '\n';
}

std::vector<GalleryImage> gallery_images(const CatalogManifest& catalog) {
    std::vector<GalleryImage> out;
    out.reserve(catalog.image_count());
    const auto& products = catalog.products();
    for (std::size_t p = 0; p < products.size(); ++p) {
        for (std::size_t v = 0; v < products[p].views.size(); ++v) {
            out.push_back({p, v, &products[p], &products[p].views[v]});
        }
    }
    return out;
}

}  // namespace prism
