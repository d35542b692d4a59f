#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "prism/catalog.hpp"
#include "prism/pipeline.hpp"
#include "prism/remote.hpp"

namespace prism {

struct EmbedderSpec {
    std::string backend = "hash";  ///< hash | store | remote
    int side = 16;
    std::optional<EndpointConfig> endpoint;
    std::uint32_t dim = 0;  ///< required for remote
};

struct SegmenterSpec {
    std::string backend = "threshold";  ///< identity | mask_file | threshold | remote
    std::optional<std::filesystem::path> background;
    int threshold = 25;
    int min_area = 100;
    std::optional<EndpointConfig> endpoint;
};

struct FeatureSpec {
    std::string backend = "reference";  ///< reference | remote
    std::optional<EndpointConfig> endpoint;
};

struct MatcherSpec {
    std::string backend = "reference";  ///< reference | alt | remote
    double ratio = 0.8;
    std::optional<EndpointConfig> endpoint;
};

/// Everything a command needs; paths are absolute after loading.
struct RunConfig {
    std::optional<std::filesystem::path> manifest;
    std::optional<std::filesystem::path> embedding_store;
    std::optional<std::filesystem::path> queries;
    std::optional<std::filesystem::path> report;
    std::optional<std::filesystem::path> gallery_cache;
    PipelineConfig pipeline;
    EmbedderSpec embedder;
    SegmenterSpec segmenter;
    FeatureSpec features;
    MatcherSpec matcher;
};

/// Strict schema: unknown keys and wrong types are ConfigErrors. Relative paths
/// resolve against base_dir.
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

EndpointConfig endpoint_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const EndpointConfig& cfg);

nlohmann::json pipeline_config_to_json(const PipelineConfig& cfg);
PipelineConfig pipeline_config_from_json(const nlohmann::json& doc);

/// Instantiates the configured backends. The store is needed by the store
/// embedder; the background image by the threshold segmenter.
Providers build_providers(const RunConfig& cfg, std::shared_ptr<const EmbeddingStore> store);

/// Opens the catalog and store, builds providers and the engine.
struct Session {
    RunConfig config;
    std::shared_ptr<const CatalogManifest> catalog;
    std::shared_ptr<const EmbeddingStore> store;
    std::shared_ptr<RetrievalEngine> engine;
};
Session open_session(const RunConfig& cfg);

}  // namespace prism
