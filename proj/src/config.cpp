#include "prism/config.hpp"

#include <fstream>

#include "prism/error.hpp"

namespace prism {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void only_keys(const json& obj, std::initializer_list<std::string_view> keys, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (auto k : keys) known = known || key == k;
        if (!known) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

std::string get_string(const json& v, const std::string& where) {
    if (!v.is_string()) throw ConfigError(where + " must be a string");
    return v.get<std::string>();
}

long long get_int(const json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
    return v.get<long long>();
}

double get_number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError(where + " must be a number");
    return v.get<double>();
}

bool get_bool(const json& v, const std::string& where) {
    if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
    return v.get<bool>();
}

std::optional<fs::path> get_path(const json& obj, const char* key, const fs::path& base) {
    if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
    fs::path p = get_string(obj[key], key);
    return p.is_absolute() ? p : (base / p).lexically_normal();
}

std::optional<EndpointConfig> endpoint_of(const json& obj, const std::string& where) {
    if (!obj.contains("endpoint")) return std::nullopt;
    try {
        return endpoint_from_json(obj["endpoint"]);
    } catch (const ConfigError& e) {
        throw ConfigError(where + ".endpoint: " + e.what());
    }
}

void require_endpoint(std::optional<EndpointConfig>& ep, const std::string& where, std::string_view path) {
    if (ep) return;
    ep = endpoint_from_env(path);
    if (!ep) throw ConfigError(where + ": remote backend needs an endpoint or PRISM_REMOTE_URL");
}

}  // namespace

EndpointConfig endpoint_from_json(const json& doc) {
    only_keys(doc, {"base_url", "path", "timeout_ms", "retries", "auth_token", "max_in_flight", "backoff_ms"}, "endpoint");
    EndpointConfig ep;
    if (!doc.contains("base_url")) throw ConfigError("endpoint: base_url is required");
    ep.base_url = get_string(doc["base_url"], "base_url");
    while (!ep.base_url.empty() && ep.base_url.back() == '/') ep.base_url.pop_back();
    if (doc.contains("path")) ep.path = get_string(doc["path"], "path");
    if (doc.contains("timeout_ms")) ep.timeout_ms = static_cast<int>(get_int(doc["timeout_ms"], "timeout_ms"));
    if (doc.contains("retries")) ep.retries = static_cast<int>(get_int(doc["retries"], "retries"));
    if (doc.contains("auth_token") && !doc["auth_token"].is_null()) ep.auth_token = get_string(doc["auth_token"], "auth_token");
    if (doc.contains("max_in_flight")) ep.max_in_flight = static_cast<int>(get_int(doc["max_in_flight"], "max_in_flight"));
    if (doc.contains("backoff_ms")) ep.backoff_ms = static_cast<int>(get_int(doc["backoff_ms"], "backoff_ms"));
    ep.validate();
    return ep;
}

json to_json(const EndpointConfig& ep) {
    json o{{"base_url", ep.base_url},     {"path", ep.path},
           {"timeout_ms", ep.timeout_ms}, {"retries", ep.retries},
           {"max_in_flight", ep.max_in_flight}, {"backoff_ms", ep.backoff_ms}};
    if (ep.auth_token) o["auth_token"] = *ep.auth_token;
    return o;
}

json pipeline_config_to_json(const PipelineConfig& c) {
    return json{{"k", c.k},
                {"candidate_strategy", std::string(to_string(c.candidate_strategy))},
                {"candidate_unit", std::string(to_string(c.candidate_unit))},
                {"segmentation", c.segmentation_enabled},
                {"max_keypoints", c.max_keypoints},
                {"workers", c.worker_count},
                {"seed", c.seed},
                {"ransac",
                 {{"threshold_px", c.ransac.threshold_px},
                  {"max_iters", c.ransac.max_iters},
                  {"confidence", c.ransac.confidence},
                  {"exhaustive", c.ransac.exhaustive}}}};
}

PipelineConfig pipeline_config_from_json(const json& doc) {
    only_keys(doc, {"k", "candidate_strategy", "candidate_unit", "segmentation", "max_keypoints", "workers", "seed", "ransac"},
              "pipeline");
    PipelineConfig c;
    if (doc.contains("k")) {
        const long long k = get_int(doc["k"], "pipeline.k");
        if (k < 1) throw ConfigError("pipeline.k must be >= 1");
        c.k = static_cast<std::size_t>(k);
    }
    if (doc.contains("candidate_strategy"))
        c.candidate_strategy = parse_candidate_strategy(get_string(doc["candidate_strategy"], "pipeline.candidate_strategy"));
    if (doc.contains("candidate_unit"))
        c.candidate_unit = parse_candidate_unit(get_string(doc["candidate_unit"], "pipeline.candidate_unit"));
    if (doc.contains("segmentation")) c.segmentation_enabled = get_bool(doc["segmentation"], "pipeline.segmentation");
    if (doc.contains("max_keypoints"))
        c.max_keypoints = static_cast<int>(get_int(doc["max_keypoints"], "pipeline.max_keypoints"));
    if (doc.contains("workers")) c.worker_count = static_cast<int>(get_int(doc["workers"], "pipeline.workers"));
    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_integer() || (doc["seed"].is_number_integer() && !doc["seed"].is_number_unsigned() &&
                                                 doc["seed"].get<long long>() < 0))
            throw ConfigError("pipeline.seed must be a non-negative integer");
        c.seed = doc["seed"].get<std::uint64_t>();
    }
    if (doc.contains("ransac")) {
        const json& r = doc["ransac"];
        only_keys(r, {"threshold_px", "max_iters", "confidence", "exhaustive"}, "pipeline.ransac");
        if (r.contains("threshold_px")) c.ransac.threshold_px = get_number(r["threshold_px"], "ransac.threshold_px");
        if (r.contains("max_iters")) c.ransac.max_iters = static_cast<int>(get_int(r["max_iters"], "ransac.max_iters"));
        if (r.contains("confidence")) c.ransac.confidence = get_number(r["confidence"], "ransac.confidence");
        if (r.contains("exhaustive")) c.ransac.exhaustive = get_bool(r["exhaustive"], "ransac.exhaustive");
    }
    c.validate();
    return c;
}

RunConfig run_config_from_json(const json& doc, const fs::path& base_dir) {
    only_keys(doc, {"manifest", "embedding_store", "queries", "report", "gallery_cache", "pipeline", "providers"}, "config");
    const fs::path base = fs::absolute(base_dir);
    RunConfig cfg;
    cfg.manifest = get_path(doc, "manifest", base);
    cfg.embedding_store = get_path(doc, "embedding_store", base);
    cfg.queries = get_path(doc, "queries", base);
    cfg.report = get_path(doc, "report", base);
    cfg.gallery_cache = get_path(doc, "gallery_cache", base);
    if (doc.contains("pipeline")) cfg.pipeline = pipeline_config_from_json(doc["pipeline"]);

    if (doc.contains("providers")) {
        const json& p = doc["providers"];
        only_keys(p, {"embedder", "segmenter", "features", "matcher"}, "providers");
        if (p.contains("embedder")) {
            const json& e = p["embedder"];
            only_keys(e, {"backend", "side", "endpoint", "dim"}, "providers.embedder");
            if (e.contains("backend")) cfg.embedder.backend = get_string(e["backend"], "embedder.backend");
            if (e.contains("side")) cfg.embedder.side = static_cast<int>(get_int(e["side"], "embedder.side"));
            if (e.contains("dim")) {
                const long long d = get_int(e["dim"], "embedder.dim");
                if (d < 1) throw ConfigError("embedder.dim must be >= 1");
                cfg.embedder.dim = static_cast<std::uint32_t>(d);
            }
            cfg.embedder.endpoint = endpoint_of(e, "providers.embedder");
        }
        if (p.contains("segmenter")) {
            const json& s = p["segmenter"];
            only_keys(s, {"backend", "background", "threshold", "min_area", "endpoint"}, "providers.segmenter");
            if (s.contains("backend")) cfg.segmenter.backend = get_string(s["backend"], "segmenter.backend");
            cfg.segmenter.background = get_path(s, "background", base);
            if (s.contains("threshold")) cfg.segmenter.threshold = static_cast<int>(get_int(s["threshold"], "segmenter.threshold"));
            if (s.contains("min_area")) cfg.segmenter.min_area = static_cast<int>(get_int(s["min_area"], "segmenter.min_area"));
            cfg.segmenter.endpoint = endpoint_of(s, "providers.segmenter");
        }
        if (p.contains("features")) {
            const json& f = p["features"];
            only_keys(f, {"backend", "endpoint"}, "providers.features");
            if (f.contains("backend")) cfg.features.backend = get_string(f["backend"], "features.backend");
            cfg.features.endpoint = endpoint_of(f, "providers.features");
        }
        if (p.contains("matcher")) {
            const json& m = p["matcher"];
            only_keys(m, {"backend", "ratio", "endpoint"}, "providers.matcher");
            if (m.contains("backend")) cfg.matcher.backend = get_string(m["backend"], "matcher.backend");
            if (m.contains("ratio")) cfg.matcher.ratio = get_number(m["ratio"], "matcher.ratio");
            cfg.matcher.endpoint = endpoint_of(m, "providers.matcher");
        }
    }

    const auto& eb = cfg.embedder.backend;
    if (eb != "hash" && eb != "store" && eb != "remote") throw ConfigError("unknown embedder backend '" + eb + "'");
    if (eb == "hash" && (cfg.embedder.side < 2 || cfg.embedder.side > 256)) throw ConfigError("embedder.side must be in [2, 256]");
    if (eb == "remote" && cfg.embedder.dim == 0) throw ConfigError("remote embedder needs dim");
    const auto& sb = cfg.segmenter.backend;
    if (sb != "identity" && sb != "mask_file" && sb != "threshold" && sb != "remote")
        throw ConfigError("unknown segmenter backend '" + sb + "'");
    if (sb == "threshold" && cfg.segmenter.threshold < 0) throw ConfigError("segmenter.threshold must be >= 0");
    if (sb == "threshold" && cfg.segmenter.min_area < 1) throw ConfigError("segmenter.min_area must be >= 1");
    const auto& fb = cfg.features.backend;
    if (fb != "reference" && fb != "remote") throw ConfigError("unknown features backend '" + fb + "'");
    const auto& mb = cfg.matcher.backend;
    if (mb != "reference" && mb != "alt" && mb != "remote") throw ConfigError("unknown matcher backend '" + mb + "'");
    if (!(cfg.matcher.ratio > 0.0 && cfg.matcher.ratio <= 1.0)) throw ConfigError("matcher.ratio must be in (0, 1]");
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return run_config_from_json(doc, fs::absolute(path).parent_path());
}

json to_json(const RunConfig& cfg) {
    auto path_or_null = [](const std::optional<fs::path>& p) { return p ? json(p->generic_string()) : json(nullptr); };
    json providers;
    providers["embedder"] = {{"backend", cfg.embedder.backend}, {"side", cfg.embedder.side}};
    if (cfg.embedder.dim) providers["embedder"]["dim"] = cfg.embedder.dim;
    if (cfg.embedder.endpoint) providers["embedder"]["endpoint"] = to_json(*cfg.embedder.endpoint);
    providers["segmenter"] = {{"backend", cfg.segmenter.backend},
                              {"background", path_or_null(cfg.segmenter.background)},
                              {"threshold", cfg.segmenter.threshold},
                              {"min_area", cfg.segmenter.min_area}};
    if (cfg.segmenter.endpoint) providers["segmenter"]["endpoint"] = to_json(*cfg.segmenter.endpoint);
    providers["features"] = {{"backend", cfg.features.backend}};
    if (cfg.features.endpoint) providers["features"]["endpoint"] = to_json(*cfg.features.endpoint);
    providers["matcher"] = {{"backend", cfg.matcher.backend}, {"ratio", cfg.matcher.ratio}};
    if (cfg.matcher.endpoint) providers["matcher"]["endpoint"] = to_json(*cfg.matcher.endpoint);
    return json{{"manifest", path_or_null(cfg.manifest)},
                {"embedding_store", path_or_null(cfg.embedding_store)},
                {"queries", path_or_null(cfg.queries)},
                {"report", path_or_null(cfg.report)},
                {"gallery_cache", path_or_null(cfg.gallery_cache)},
                {"pipeline", pipeline_config_to_json(cfg.pipeline)},
                {"providers", providers}};
}

Providers build_providers(const RunConfig& cfg_in, std::shared_ptr<const EmbeddingStore> store) {
    RunConfig cfg = cfg_in;
    Providers p;
    const auto& eb = cfg.embedder.backend;
    if (eb == "hash") {
        p.embedder = std::make_shared<HashEmbedder>(cfg.embedder.side);
    } else if (eb == "store") {
        if (!store) throw ConfigError("store embedder needs an embedding store");
        p.embedder = std::make_shared<StoreEmbedder>(std::move(store));
    } else {
        require_endpoint(cfg.embedder.endpoint, "providers.embedder", "/embed");
        p.embedder = std::make_shared<RemoteEmbedder>(*cfg.embedder.endpoint, cfg.embedder.dim);
    }

    const auto& sb = cfg.segmenter.backend;
    if (sb == "identity") {
        p.segmenter = std::make_shared<IdentitySegmenter>();
    } else if (sb == "mask_file") {
        p.segmenter = std::make_shared<MaskFileSegmenter>();
    } else if (sb == "threshold") {
        if (!cfg.segmenter.background) throw ConfigError("threshold segmenter needs a background image");
        Image plate;
        try {
            plate = load_image(*cfg.segmenter.background);
        } catch (const DataError& e) {
            throw ConfigError(std::string("threshold segmenter background: ") + e.what());
        }
        p.segmenter = std::make_shared<ThresholdSegmenter>(std::move(plate), cfg.segmenter.threshold, cfg.segmenter.min_area);
    } else {
        require_endpoint(cfg.segmenter.endpoint, "providers.segmenter", "/segment");
        p.segmenter = std::make_shared<RemoteSegmenter>(*cfg.segmenter.endpoint);
    }

    if (cfg.features.backend == "reference") {
        p.features = std::make_shared<ReferenceFeatureExtractor>();
    } else {
        require_endpoint(cfg.features.endpoint, "providers.features", "/features");
        p.features = std::make_shared<RemoteFeatureExtractor>(*cfg.features.endpoint);
    }

    const auto& mb = cfg.matcher.backend;
    if (mb == "reference") {
        p.matcher = std::make_shared<ReferenceMatcher>(cfg.matcher.ratio);
    } else if (mb == "alt") {
        p.matcher = std::make_shared<ReferenceMatcher>(1.0);
    } else {
        require_endpoint(cfg.matcher.endpoint, "providers.matcher", "/match");
        p.matcher = std::make_shared<RemoteMatcher>(*cfg.matcher.endpoint);
    }
    return p;
}

Session open_session(const RunConfig& cfg) {
    if (!cfg.manifest) throw ConfigError("no manifest given");
    Session s;
    s.config = cfg;
    auto catalog = std::make_shared<CatalogManifest>(load_manifest(*cfg.manifest));
    s.catalog = catalog;
    std::optional<fs::path> store_path = cfg.embedding_store;
    if (!store_path && cfg.embedder.backend == "store") store_path = catalog->embedding_store_ref();
    if (store_path && cfg.embedder.backend == "store")
        s.store = std::make_shared<EmbeddingStore>(load_embedding_store(*store_path));
    if (cfg.embedder.backend == "store" && !s.store) throw ConfigError("store embedder needs an embedding store path");
    Providers providers = build_providers(cfg, s.store);
    s.engine = std::make_shared<RetrievalEngine>(cfg.pipeline, s.catalog, s.store, std::move(providers));
    if (cfg.gallery_cache && fs::exists(*cfg.gallery_cache)) s.engine->load_gallery_cache(*cfg.gallery_cache);
    return s;
}

}  // namespace prism
