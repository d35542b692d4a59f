#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prism/catalog.hpp"
#include "prism/image.hpp"

namespace prism {

/// An image handed to a provider. The id and mask path are only consulted
/// by backends that need them (store lookups, mask files).
struct ImageInput {
    std::string_view id;
    const Image& pixels;
    const std::filesystem::path* mask_ref = nullptr;
};

/// Unit-norm float vector. Normalized at construction.
class EmbeddingVector {
public:
    EmbeddingVector() = default;

    /// L2-normalizes raw. Throws DataError on empty, non-finite or zero input.
    static EmbeddingVector normalized(std::vector<float> raw);
    /// Adopts values as-is after checking they are finite with norm 1 within 1e-4.
    static EmbeddingVector from_unit(std::vector<float> values);

    std::uint32_t dim() const noexcept { return static_cast<std::uint32_t>(values_.size()); }
    std::span<const float> values() const noexcept { return values_; }

    friend bool operator==(const EmbeddingVector&, const EmbeddingVector&) = default;

private:
    explicit EmbeddingVector(std::vector<float> v) : values_(std::move(v)) {}
    std::vector<float> values_;
};

/// Dot product of two unit vectors, accumulated in double and clamped to [-1, 1].
/// Throws DataError on dim mismatch.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

/// image_id -> vector, all of one dim. Iteration follows insertion order.
class EmbeddingStore {
public:
    explicit EmbeddingStore(std::uint32_t dim = 0) : dim_(dim) {}

    std::uint32_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return ids_.size(); }
    const std::vector<std::string>& ids() const noexcept { return ids_; }

    /// Inserts or replaces. The first insertion fixes dim when it is 0.
    void insert(const std::string& image_id, EmbeddingVector vec);
    const EmbeddingVector* find(std::string_view image_id) const;
    /// Throws DataError("missing embedding ...") when absent.
    const EmbeddingVector& at(std::string_view image_id) const;

private:
    std::uint32_t dim_;
    std::vector<std::string> ids_;
    std::unordered_map<std::string, EmbeddingVector> entries_;
};

/// Binary layout (little-endian): "PRSM", u32 version=1, u32 dim, u32 count,
/// then per entry u32 id_len, id bytes, dim x f32.
std::vector<std::uint8_t> serialize_embedding_store(const EmbeddingStore& store);
/// Throws FormatError (bad_magic / bad_version / truncated / malformed).
EmbeddingStore deserialize_embedding_store(std::span<const std::uint8_t> bytes);
void save_embedding_store(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore load_embedding_store(const std::filesystem::path& path);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::string kind() const = 0;
    virtual std::uint32_t dim() const = 0;
    virtual EmbeddingVector embed(const ImageInput& input) const = 0;
};

/// Deterministic stand-in embedder: side x side box-filtered luma thumbnail
/// plus eight values expanded from a 64-bit content hash, L2-normalized.
class HashEmbedder final : public EmbeddingProvider {
public:
    explicit HashEmbedder(int side = 16);
    std::string kind() const override { return "hash"; }
    std::uint32_t dim() const override;
    EmbeddingVector embed(const ImageInput& input) const override;

private:
    int side_;
};

/// Looks embeddings up by image id in a precomputed store.
class StoreEmbedder final : public EmbeddingProvider {
public:
    explicit StoreEmbedder(std::shared_ptr<const EmbeddingStore> store);
    std::string kind() const override { return "store"; }
    std::uint32_t dim() const override { return store_->dim(); }
    EmbeddingVector embed(const ImageInput& input) const override;

private:
    std::shared_ptr<const EmbeddingStore> store_;
};

inline EmbeddingVector embed_image(const EmbeddingProvider& provider, const ImageInput& input) {
    return provider.embed(input);
}

/// Embeds every gallery image with provider.
EmbeddingStore build_embedding_store(const EmbeddingProvider& provider, const CatalogManifest& catalog);

struct ProductScore {
    double score;
    std::size_t best_view;  ///< index into ProductRecord::views
};

/// Max cosine similarity over the product's views.
ProductScore product_similarity(const EmbeddingVector& query, const ProductRecord& product,
                                const EmbeddingStore& store);

struct Candidate {
    std::string product_id;
    double score = 0.0;
    std::size_t product_index = 0;
    std::vector<std::size_t> view_indices;  ///< views that proceed to verification
    std::size_t best_view = 0;              ///< most similar view (index into ProductRecord::views)
};

struct CandidateSet {
    std::vector<Candidate> entries;
    std::size_t requested_k = 0;
};

/// min(K, N) products by descending max-over-views similarity, ties by product_id.
/// All views of each selected product are retained.
CandidateSet top_k_products(const EmbeddingVector& query, const CatalogManifest& catalog,
                            const EmbeddingStore& store, std::size_t k);

/// Per-image variant: the K most similar gallery images, grouped by product.
/// A product's score is its best retained view; only retained views proceed.
CandidateSet top_k_images(const EmbeddingVector& query, const CatalogManifest& catalog,
                          const EmbeddingStore& store, std::size_t k);

/// Every product of the given class with score 0, ordered by product_id.
/// Throws DataError when the class is empty or `unknown`.
CandidateSet class_filter_candidates(CoarseClass query_class, const CatalogManifest& catalog);

}  // namespace prism
