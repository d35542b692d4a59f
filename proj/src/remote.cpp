#include "prism/remote.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>

#include "prism/error.hpp"

namespace prism {

using nlohmann::json;
using Reason = ProviderError::Reason;

namespace {

[[noreturn]] void schema_error(const std::string& what) { throw ProviderError(Reason::schema, what); }

json parse_body(std::string_view body) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        schema_error(std::string("response is not JSON: ") + e.what());
    }
}

double number(const json& v, const char* what) {
    if (!v.is_number()) schema_error(std::string(what) + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) schema_error(std::string(what) + " must be finite");
    return d;
}

long long integer(const json& v, const char* what) {
    if (!v.is_number_integer()) schema_error(std::string(what) + " must be an integer");
    return v.get<long long>();
}

std::string image_body(const Image& image) {
    const auto png = encode_png(image);
    return {png.begin(), png.end()};
}

json descriptors_json(const FeatureSet& fs) {
    json out = json::array();
    for (std::size_t i = 0; i < fs.size(); ++i) {
        const auto d = fs.descriptor(i);
        out.push_back(std::vector<float>(d.begin(), d.end()));
    }
    return out;
}

json keypoints_json(const FeatureSet& fs) {
    json out = json::array();
    for (const auto& k : fs.keypoints) out.push_back({k.x, k.y});
    return out;
}

}  // namespace

void EndpointConfig::validate() const {
    static const std::regex url(R"(^https?://[^/:\s]+(:\d+)?/?$)");
    if (!std::regex_match(base_url, url)) throw ConfigError("endpoint base_url must look like http://host[:port]: '" + base_url + "'");
    if (path.empty() || path.front() != '/') throw ConfigError("endpoint path must start with '/'");
    if (timeout_ms <= 0) throw ConfigError("endpoint timeout_ms must be > 0");
    if (retries < 0) throw ConfigError("endpoint retries must be >= 0");
    if (max_in_flight < 1) throw ConfigError("endpoint max_in_flight must be >= 1");
    if (backoff_ms < 0) throw ConfigError("endpoint backoff_ms must be >= 0");
}

std::optional<EndpointConfig> endpoint_from_env(std::string_view path) {
    const char* url = std::getenv("PRISM_REMOTE_URL");
    if (url == nullptr || *url == '\0') return std::nullopt;
    EndpointConfig cfg;
    cfg.base_url = url;
    while (!cfg.base_url.empty() && cfg.base_url.back() == '/') cfg.base_url.pop_back();
    cfg.path = std::string(path);
    return cfg;
}

HttpEndpoint::HttpEndpoint(EndpointConfig cfg) : cfg_(std::move(cfg)) {
    while (!cfg_.base_url.empty() && cfg_.base_url.back() == '/') cfg_.base_url.pop_back();
    cfg_.validate();
}

std::string HttpEndpoint::post(const std::string& body, const std::string& content_type) const {
    {
        std::unique_lock lock(mutex_);
        slot_free_.wait(lock, [&] { return in_flight_ < cfg_.max_in_flight; });
        ++in_flight_;
    }
    struct Release {
        const HttpEndpoint* self;
        ~Release() {
            {
                std::lock_guard lock(self->mutex_);
                --self->in_flight_;
            }
            self->slot_free_.notify_one();
        }
    } release{this};

    httplib::Client client(cfg_.base_url);
    const auto ms = std::chrono::milliseconds(cfg_.timeout_ms);
    client.set_connection_timeout(ms);
    client.set_read_timeout(ms);
    client.set_write_timeout(ms);
    httplib::Headers headers;
    if (cfg_.auth_token) headers.emplace("Authorization", "Bearer " + *cfg_.auth_token);

    Reason last_reason = Reason::unreachable;
    std::string last_what;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
        if (attempt > 0 && cfg_.backoff_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.backoff_ms) * (1 << std::min(attempt - 1, 10)));
        const auto start = std::chrono::steady_clock::now();
        auto res = client.Post(cfg_.path, headers, body, content_type);
        const auto elapsed = std::chrono::steady_clock::now() - start;
        if (!res) {
            const bool timed_out = res.error() == httplib::Error::ConnectionTimeout || elapsed >= ms * 9 / 10;
            last_reason = timed_out ? Reason::timeout : Reason::unreachable;
            last_what = (timed_out ? "timed out: " : "unreachable: ") + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) return res->body;
        last_reason = Reason::http_status;
        last_what = "HTTP " + std::to_string(res->status);
        if (res->status < 500) break;
    }
    throw ProviderError(last_reason, cfg_.base_url + cfg_.path + " " + last_what);
}

EmbeddingVector parse_embedding_response(std::string_view body, std::uint32_t dim) {
    const json doc = parse_body(body);
    if (!doc.is_array()) schema_error("embedding response must be a JSON array");
    if (doc.size() != dim)
        schema_error("embedding response has " + std::to_string(doc.size()) + " values, expected " + std::to_string(dim));
    std::vector<float> v;
    v.reserve(dim);
    double sq = 0.0;
    for (const auto& x : doc) {
        v.push_back(static_cast<float>(number(x, "embedding value")));
        sq += static_cast<double>(v.back()) * v.back();
    }
    if (!(sq > 0.0)) schema_error("embedding response is the zero vector");
    if (std::abs(std::sqrt(sq) - 1.0) <= 1e-6) return EmbeddingVector::from_unit(std::move(v));
    return EmbeddingVector::normalized(std::move(v));
}

SegmentationOutput parse_segmentation_response(std::string_view body, int width, int height) {
    const json doc = parse_body(body);
    if (!doc.is_array()) schema_error("segmentation response must be a JSON array");
    SegmentationOutput out{{}, width, height};
    for (const auto& d : doc) {
        if (!d.is_object() || !d.contains("box") || !d.contains("mask_rle"))
            schema_error("detection needs box and mask_rle");
        const auto& b = d["box"];
        if (!b.is_array() || b.size() != 4) schema_error("box must be [x1, y1, x2, y2]");
        Detection det;
        det.box.x1 = static_cast<int>(integer(b[0], "box"));
        det.box.y1 = static_cast<int>(integer(b[1], "box"));
        det.box.x2 = static_cast<int>(integer(b[2], "box"));
        det.box.y2 = static_cast<int>(integer(b[3], "box"));
        if (d.contains("label")) {
            if (!d["label"].is_string()) schema_error("label must be a string");
            det.label = d["label"].get<std::string>();
        }
        if (d.contains("score")) det.score = static_cast<float>(number(d["score"], "score"));
        const auto& rle = d["mask_rle"];
        if (!rle.is_array() || rle.size() != static_cast<std::size_t>(height))
            schema_error("mask_rle must have one entry per image row");
        det.mask = Mask(width, height);
        for (int y = 0; y < height; ++y) {
            const auto& row = rle[static_cast<std::size_t>(y)];
            if (!row.is_array()) schema_error("mask_rle row must be a list of runs");
            for (const auto& run : row) {
                if (!run.is_array() || run.size() != 2) schema_error("mask run must be [start, len]");
                const long long s = integer(run[0], "run start"), n = integer(run[1], "run length");
                if (s < 0 || n < 0 || s + n > width) schema_error("mask run exceeds the image width");
                for (long long x = s; x < s + n; ++x) det.mask.set(static_cast<int>(x), y);
            }
        }
        out.detections.push_back(std::move(det));
    }
    validate_segmentation(out);
    return out;
}

FeatureSet parse_feature_response(std::string_view body) {
    const json doc = parse_body(body);
    if (!doc.is_object() || !doc.contains("keypoints") || !doc.contains("descriptors"))
        schema_error("feature response needs keypoints and descriptors");
    const auto& kp = doc["keypoints"];
    const auto& ds = doc["descriptors"];
    if (!kp.is_array() || !ds.is_array() || kp.size() != ds.size())
        schema_error("keypoints and descriptors must be arrays of equal length");
    FeatureSet fs;
    fs.descriptor_size = 0;
    for (std::size_t i = 0; i < kp.size(); ++i) {
        const auto& p = kp[i];
        if (!p.is_array() || p.size() < 2 || p.size() > 3) schema_error("keypoint must be [x, y] or [x, y, response]");
        Keypoint k;
        k.x = static_cast<float>(number(p[0], "keypoint x"));
        k.y = static_cast<float>(number(p[1], "keypoint y"));
        k.response = p.size() == 3 ? static_cast<float>(number(p[2], "keypoint response")) : 0.0f;
        const auto& d = ds[i];
        if (!d.is_array() || d.empty()) schema_error("descriptor must be a non-empty array");
        if (i == 0) fs.descriptor_size = static_cast<int>(d.size());
        if (d.size() != static_cast<std::size_t>(fs.descriptor_size)) schema_error("descriptor lengths differ");
        for (const auto& x : d) fs.descriptors.push_back(static_cast<float>(number(x, "descriptor value")));
        fs.keypoints.push_back(k);
    }
    if (fs.descriptor_size == 0) fs.descriptor_size = 64;
    return fs;
}

json match_request(const FeatureSet& a, const FeatureSet& b) {
    return json{{"desc_a", descriptors_json(a)},
                {"desc_b", descriptors_json(b)},
                {"kpts_a", keypoints_json(a)},
                {"kpts_b", keypoints_json(b)}};
}

MatchSet parse_match_response(std::string_view body, const FeatureSet& a, const FeatureSet& b) {
    const json doc = parse_body(body);
    if (!doc.is_object() || !doc.contains("matches") || !doc["matches"].is_array())
        schema_error("match response needs a matches array");
    std::vector<bool> used_a(a.size(), false), used_b(b.size(), false);
    MatchSet out;
    for (const auto& m : doc["matches"]) {
        if (!m.is_array() || m.size() != 2) schema_error("match must be [i, j]");
        const long long i = integer(m[0], "match index"), j = integer(m[1], "match index");
        if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= a.size() || static_cast<std::size_t>(j) >= b.size())
            schema_error("match index out of range");
        if (used_a[static_cast<std::size_t>(i)] || used_b[static_cast<std::size_t>(j)])
            schema_error("keypoint used by more than one match");
        used_a[static_cast<std::size_t>(i)] = used_b[static_cast<std::size_t>(j)] = true;
        float dist = 0.0f;
        if (a.descriptor_size == b.descriptor_size) {
            const auto da = a.descriptor(static_cast<std::size_t>(i)), db = b.descriptor(static_cast<std::size_t>(j));
            double sq = 0.0;
            for (std::size_t t = 0; t < da.size(); ++t) sq += (da[t] - db[t]) * static_cast<double>(da[t] - db[t]);
            dist = static_cast<float>(std::sqrt(sq));
        }
        out.correspondences.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), dist});
    }
    return out;
}

RemoteEmbedder::RemoteEmbedder(EndpointConfig cfg, std::uint32_t dim)
    : http_(std::make_shared<HttpEndpoint>(std::move(cfg))), dim_(dim) {
    if (dim == 0) throw ConfigError("remote embedder dim must be > 0");
}

EmbeddingVector RemoteEmbedder::embed(const ImageInput& input) const {
    return parse_embedding_response(http_->post(image_body(input.pixels), "image/png"), dim_);
}

RemoteSegmenter::RemoteSegmenter(EndpointConfig cfg) : http_(std::make_shared<HttpEndpoint>(std::move(cfg))) {}

std::string RemoteSegmenter::fingerprint() const {
    return "remote:" + http_->config().base_url + http_->config().path;
}

SegmentationOutput RemoteSegmenter::segment(const ImageInput& input) const {
    if (input.pixels.empty()) throw DataError("cannot segment an empty image");
    return parse_segmentation_response(http_->post(image_body(input.pixels), "image/png"), input.pixels.width,
                                       input.pixels.height);
}

RemoteFeatureExtractor::RemoteFeatureExtractor(EndpointConfig cfg)
    : http_(std::make_shared<HttpEndpoint>(std::move(cfg))) {}

std::string RemoteFeatureExtractor::fingerprint() const {
    return "remote:" + http_->config().base_url + http_->config().path;
}

FeatureSet RemoteFeatureExtractor::extract(const Image& image, int max_keypoints, const Mask* gate) const {
    if (image.empty()) throw DataError("cannot extract features from an empty image");
    FeatureSet raw = parse_feature_response(http_->post(image_body(image), "image/png"));
    FeatureSet out;
    out.descriptor_size = raw.descriptor_size;
    const auto D = static_cast<std::size_t>(raw.descriptor_size);
    for (std::size_t i = 0; i < raw.size() && out.size() < static_cast<std::size_t>(std::max(0, max_keypoints)); ++i) {
        const Keypoint& k = raw.keypoints[i];
        if (k.x < 0 || k.y < 0 || k.x > image.width - 1 || k.y > image.height - 1)
            schema_error("keypoint outside the image");
        if (gate != nullptr && !gate->contains(k.x, k.y)) continue;
        out.keypoints.push_back(k);
        out.descriptors.insert(out.descriptors.end(), raw.descriptors.begin() + static_cast<std::ptrdiff_t>(i * D),
                               raw.descriptors.begin() + static_cast<std::ptrdiff_t>((i + 1) * D));
    }
    return out;
}

RemoteMatcher::RemoteMatcher(EndpointConfig cfg) : http_(std::make_shared<HttpEndpoint>(std::move(cfg))) {}

std::string RemoteMatcher::fingerprint() const {
    return "remote:" + http_->config().base_url + http_->config().path;
}

MatchSet RemoteMatcher::match(const FeatureSet& a, const FeatureSet& b) const {
    if (a.empty() || b.empty()) return {};
    return parse_match_response(http_->post(match_request(a, b).dump(), "application/json"), a, b);
}

}  // namespace prism
