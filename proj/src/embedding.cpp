#include "prism/embedding.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "prism/error.hpp"

namespace prism {

namespace {

constexpr std::uint8_t kMagic[4] = {'P', 'R', 'S', 'M'};
constexpr std::uint32_t kVersion = 1;
// Hash-derived components are small so the thumbnail dominates similarity.
constexpr float kHashScale = 0.05f;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::span<const std::uint8_t> take(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(FormatError::Reason::truncated, "embedding store truncated");
        }
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint32_t u32() {
        auto s = take(4);
        return static_cast<std::uint32_t>(s[0]) | static_cast<std::uint32_t>(s[1]) << 8 |
               static_cast<std::uint32_t>(s[2]) << 16 | static_cast<std::uint32_t>(s[3]) << 24;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

EmbeddingVector EmbeddingVector::normalized(std::vector<float> raw) {
    if (raw.empty()) throw DataError("embedding has zero dimensions");
    double sq = 0.0;
    for (float v : raw) {
        if (!std::isfinite(v)) throw DataError("embedding has non-finite component");
        sq += static_cast<double>(v) * v;
    }
    if (sq <= 0.0) throw DataError("embedding has zero norm");
    const double inv = 1.0 / std::sqrt(sq);
    for (float& v : raw) v = static_cast<float>(v * inv);
    return EmbeddingVector(std::move(raw));
}

EmbeddingVector EmbeddingVector::from_unit(std::vector<float> values) {
    if (values.empty()) throw DataError("embedding has zero dimensions");
    double sq = 0.0;
    for (float v : values) {
        if (!std::isfinite(v)) throw DataError("embedding has non-finite component");
        sq += static_cast<double>(v) * v;
    }
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-4) throw DataError("embedding is not unit-norm");
    return EmbeddingVector(std::move(values));
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.dim() != b.dim()) {
        throw DataError("embedding dim mismatch: " + std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()));
    }
    const auto va = a.values();
    const auto vb = b.values();
    double dot = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) dot += static_cast<double>(va[i]) * vb[i];
    return std::clamp(dot, -1.0, 1.0);
}

void EmbeddingStore::insert(const std::string& image_id, EmbeddingVector vec) {
    if (dim_ == 0) dim_ = vec.dim();
    if (vec.dim() != dim_) {
        throw DataError("embedding dim " + std::to_string(vec.dim()) + " does not match store dim " +
                        std::to_string(dim_));
    }
    auto [it, inserted] = entries_.insert_or_assign(image_id, std::move(vec));
    if (inserted) ids_.push_back(image_id);
}

const EmbeddingVector* EmbeddingStore::find(std::string_view image_id) const {
    auto it = entries_.find(std::string(image_id));
    return it == entries_.end() ? nullptr : &it->second;
}

const EmbeddingVector& EmbeddingStore::at(std::string_view image_id) const {
    if (const auto* v = find(image_id)) return *v;
    throw DataError("missing embedding for image '" + std::string(image_id) + "'");
}

std::vector<std::uint8_t> serialize_embedding_store(const EmbeddingStore& store) {
    static_assert(std::endian::native == std::endian::little, "store format assumes little-endian host");
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kVersion);
    put_u32(out, store.dim());
    put_u32(out, static_cast<std::uint32_t>(store.size()));
    for (const auto& id : store.ids()) {
        put_u32(out, static_cast<std::uint32_t>(id.size()));
        out.insert(out.end(), id.begin(), id.end());
        const auto values = store.at(id).values();
        const auto* raw = reinterpret_cast<const std::uint8_t*>(values.data());
        out.insert(out.end(), raw, raw + values.size_bytes());
    }
    return out;
}

EmbeddingStore deserialize_embedding_store(std::span<const std::uint8_t> bytes) {
    Reader in(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError(FormatError::Reason::bad_magic, "embedding store: bad magic");
    }
    in.take(4);
    if (const auto version = in.u32(); version != kVersion) {
        throw FormatError(FormatError::Reason::bad_version,
                          "embedding store: unsupported version " + std::to_string(version));
    }
    const std::uint32_t dim = in.u32();
    const std::uint32_t count = in.u32();
    if (dim == 0 && count > 0) {
        throw FormatError(FormatError::Reason::malformed, "embedding store: zero dim");
    }
    EmbeddingStore store(dim);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto id_len = in.u32();
        auto id_bytes = in.take(id_len);
        std::string id(id_bytes.begin(), id_bytes.end());
        auto raw = in.take(static_cast<std::size_t>(dim) * 4);
        std::vector<float> values(dim);
        std::memcpy(values.data(), raw.data(), raw.size());
        try {
            store.insert(id, EmbeddingVector::from_unit(std::move(values)));
        } catch (const DataError& e) {
            throw FormatError(FormatError::Reason::malformed,
                              "embedding store entry '" + id + "': " + e.what());
        }
    }
    if (!in.done()) throw FormatError(FormatError::Reason::malformed, "embedding store: trailing bytes");
    if (store.size() != count) {
        throw FormatError(FormatError::Reason::malformed, "embedding store: duplicate image ids");
    }
    return store;
}

void save_embedding_store(const EmbeddingStore& store, const std::filesystem::path& path) {
    write_file_bytes(path, serialize_embedding_store(store));
}

EmbeddingStore load_embedding_store(const std::filesystem::path& path) {
    return deserialize_embedding_store(read_file_bytes(path));
}

HashEmbedder::HashEmbedder(int side) : side_(side) {
    if (side < 1) throw DataError("hash embedder side must be positive");
}

std::uint32_t HashEmbedder::dim() const { return static_cast<std::uint32_t>(side_ * side_ + 8); }

EmbeddingVector HashEmbedder::embed(const ImageInput& input) const {
    const Image& img = input.pixels;
    if (img.empty() || img.channels != 3) throw DataError("hash embedder needs a 3-channel image");
    const auto gray = to_gray(img);

    std::vector<float> raw;
    raw.reserve(dim());
    for (int cy = 0; cy < side_; ++cy) {
        const int y0 = cy * img.height / side_;
        const int y1 = std::max(y0 + 1, (cy + 1) * img.height / side_);
        for (int cx = 0; cx < side_; ++cx) {
            const int x0 = cx * img.width / side_;
            const int x1 = std::max(x0 + 1, (cx + 1) * img.width / side_);
            double sum = 0.0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) sum += gray[static_cast<std::size_t>(y) * img.width + x];
            }
            raw.push_back(static_cast<float>(sum / ((y1 - y0) * (x1 - x0))));
        }
    }

    std::uint8_t header[12];
    const std::uint32_t dims[3] = {static_cast<std::uint32_t>(img.width),
                                   static_cast<std::uint32_t>(img.height),
                                   static_cast<std::uint32_t>(img.channels)};
    std::memcpy(header, dims, sizeof(header));
    const std::uint64_t h = fnv1a(img.pixels, fnv1a(header));
    for (int i = 0; i < 8; ++i) {
        const auto byte = static_cast<std::uint8_t>(h >> (8 * i));
        raw.push_back(kHashScale * (static_cast<float>(byte) - 127.5f) / 127.5f);
    }
    return EmbeddingVector::normalized(std::move(raw));
}

StoreEmbedder::StoreEmbedder(std::shared_ptr<const EmbeddingStore> store) : store_(std::move(store)) {
    if (!store_) throw DataError("store embedder needs a store");
}

EmbeddingVector StoreEmbedder::embed(const ImageInput& input) const {
    if (const auto* v = store_->find(input.id)) return *v;
    throw ProviderError(ProviderError::Reason::missing_input,
                        "missing embedding for image '" + std::string(input.id) + "'");
}

EmbeddingStore build_embedding_store(const EmbeddingProvider& provider, const CatalogManifest& catalog) {
    EmbeddingStore store(provider.dim());
    for (const auto& g : gallery_images(catalog)) {
        const Image img = load_image(g.view->image_ref);
        store.insert(g.view->image_id, provider.embed({g.view->image_id, img, nullptr}));
    }
    return store;
}

ProductScore product_similarity(const EmbeddingVector& query, const ProductRecord& product,
                                const EmbeddingStore& store) {
    ProductScore best{-2.0, 0};
    for (std::size_t v = 0; v < product.views.size(); ++v) {
        const double s = cosine_similarity(query, store.at(product.views[v].image_id));
        if (s > best.score) best = {s, v};
    }
    return best;
}

namespace {

void sort_candidates(std::vector<Candidate>& entries) {
    std::sort(entries.begin(), entries.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.product_id < b.product_id;
    });
}

}  // namespace

CandidateSet top_k_products(const EmbeddingVector& query, const CatalogManifest& catalog,
                            const EmbeddingStore& store, std::size_t k) {
    if (catalog.size() == 0) throw DataError("empty catalog");
    if (k == 0) throw DataError("K must be >= 1");
    const auto& products = catalog.products();
    std::vector<Candidate> all;
    all.reserve(products.size());
    for (std::size_t p = 0; p < products.size(); ++p) {
        const auto s = product_similarity(query, products[p], store);
        Candidate c{products[p].product_id, s.score, p, {}, s.best_view};
        c.view_indices.resize(products[p].views.size());
        for (std::size_t v = 0; v < c.view_indices.size(); ++v) c.view_indices[v] = v;
        all.push_back(std::move(c));
    }
    const std::size_t keep = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(),
                      [](const Candidate& a, const Candidate& b) {
                          if (a.score != b.score) return a.score > b.score;
                          return a.product_id < b.product_id;
                      });
    all.resize(keep);
    return {std::move(all), k};
}

CandidateSet top_k_images(const EmbeddingVector& query, const CatalogManifest& catalog,
                          const EmbeddingStore& store, std::size_t k) {
    if (catalog.size() == 0) throw DataError("empty catalog");
    if (k == 0) throw DataError("K must be >= 1");
    struct Scored {
        double score;
        const GalleryImage* image;
    };
    const auto gallery = gallery_images(catalog);
    std::vector<Scored> scored;
    scored.reserve(gallery.size());
    for (const auto& g : gallery) scored.push_back({cosine_similarity(query, store.at(g.view->image_id)), &g});
    const std::size_t keep = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [](const Scored& a, const Scored& b) {
                          if (a.score != b.score) return a.score > b.score;
                          if (a.image->product->product_id != b.image->product->product_id) {
                              return a.image->product->product_id < b.image->product->product_id;
                          }
                          return a.image->view_index < b.image->view_index;
                      });

    std::vector<Candidate> entries;
    std::unordered_map<std::size_t, std::size_t> slot;
    for (std::size_t i = 0; i < keep; ++i) {
        const auto& g = *scored[i].image;
        auto [it, fresh] = slot.emplace(g.product_index, entries.size());
        if (fresh) {
            entries.push_back({g.product->product_id, scored[i].score, g.product_index, {}, g.view_index});
        }
        entries[it->second].view_indices.push_back(g.view_index);
    }
    for (auto& c : entries) std::sort(c.view_indices.begin(), c.view_indices.end());
    sort_candidates(entries);
    return {std::move(entries), k};
}

CandidateSet class_filter_candidates(CoarseClass query_class, const CatalogManifest& catalog) {
    if (query_class == CoarseClass::unknown) throw DataError("class filter needs a known query class");
    const auto& products = catalog.products();
    std::vector<Candidate> entries;
    for (std::size_t p = 0; p < products.size(); ++p) {
        if (products[p].coarse_class != query_class) continue;
        Candidate c{products[p].product_id, 0.0, p, {}};
        for (std::size_t v = 0; v < products[p].views.size(); ++v) c.view_indices.push_back(v);
        entries.push_back(std::move(c));
    }
    if (entries.empty()) {
        throw DataError("no products in class '" + std::string(to_string(query_class)) + "'");
    }
    sort_candidates(entries);
    const std::size_t n = entries.size();
    return {std::move(entries), n};
}

}  // namespace prism
