#pragma once

#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "prism/embedding.hpp"
#include "prism/features.hpp"
#include "prism/matching.hpp"
#include "prism/segmentation.hpp"

namespace prism {

struct EndpointConfig {
    std::string base_url;  ///< e.g. http://127.0.0.1:8080
    std::string path = "/";
    int timeout_ms = 5000;
    int retries = 2;
    std::optional<std::string> auth_token;
    int max_in_flight = 4;
    int backoff_ms = 50;  ///< first retry delay; doubles per attempt

    /// Throws ConfigError unless timeout > 0, retries >= 0 and the URL is http(s)://host[:port].
    void validate() const;
};

/// Endpoint rooted at $PRISM_REMOTE_URL; nullopt when the variable is unset or empty.
std::optional<EndpointConfig> endpoint_from_env(std::string_view path);

/// POSTs to one endpoint with bounded concurrency and exponential-backoff retries.
/// Connection failures, timeouts and 5xx are retried; other statuses fail at once.
class HttpEndpoint {
public:
    explicit HttpEndpoint(EndpointConfig cfg);
    const EndpointConfig& config() const noexcept { return cfg_; }
    /// Response body of a 2xx reply, else ProviderError.
    std::string post(const std::string& body, const std::string& content_type) const;

private:
    EndpointConfig cfg_;
    mutable std::mutex mutex_;
    mutable std::condition_variable slot_free_;
    mutable int in_flight_ = 0;
};

/// Response parsers. Each rejects the whole response (ProviderError, schema) on any violation.
EmbeddingVector parse_embedding_response(std::string_view body, std::uint32_t dim);
SegmentationOutput parse_segmentation_response(std::string_view body, int width, int height);
FeatureSet parse_feature_response(std::string_view body);
MatchSet parse_match_response(std::string_view body, const FeatureSet& a, const FeatureSet& b);

nlohmann::json match_request(const FeatureSet& a, const FeatureSet& b);

class RemoteEmbedder final : public EmbeddingProvider {
public:
    RemoteEmbedder(EndpointConfig cfg, std::uint32_t dim);
    std::string kind() const override { return "remote"; }
    std::uint32_t dim() const override { return dim_; }
    EmbeddingVector embed(const ImageInput& input) const override;

private:
    std::shared_ptr<HttpEndpoint> http_;
    std::uint32_t dim_;
};

class RemoteSegmenter final : public SegmenterProvider {
public:
    explicit RemoteSegmenter(EndpointConfig cfg);
    std::string kind() const override { return "remote"; }
    std::string fingerprint() const override;
    SegmentationOutput segment(const ImageInput& input) const override;

private:
    std::shared_ptr<HttpEndpoint> http_;
};

/// Keypoints come back in service order; the gate and the cap are applied locally.
class RemoteFeatureExtractor final : public FeatureProvider {
public:
    explicit RemoteFeatureExtractor(EndpointConfig cfg);
    std::string kind() const override { return "remote"; }
    std::string fingerprint() const override;
    FeatureSet extract(const Image& image, int max_keypoints, const Mask* gate) const override;

private:
    std::shared_ptr<HttpEndpoint> http_;
};

/// Returns raw correspondences only; geometric verification stays local.
class RemoteMatcher final : public MatcherProvider {
public:
    explicit RemoteMatcher(EndpointConfig cfg);
    std::string kind() const override { return "remote"; }
    std::string fingerprint() const override;
    MatchSet match(const FeatureSet& a, const FeatureSet& b) const override;

private:
    std::shared_ptr<HttpEndpoint> http_;
};

}  // namespace prism
