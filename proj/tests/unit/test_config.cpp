#include <gtest/gtest.h>

#include <fstream>

#include "../common/support.hpp"
#include "prism/config.hpp"
#include "prism/error.hpp"

using namespace prism;
using namespace prism::testing;
using nlohmann::json;

TEST(Config, DefaultsAndRelativePaths) {
    const RunConfig cfg = run_config_from_json(json{{"manifest", "data/manifest.json"}}, "/base");
    ASSERT_TRUE(cfg.manifest);
    EXPECT_EQ(*cfg.manifest, fs::path("/base/data/manifest.json"));
    EXPECT_EQ(cfg.pipeline.k, 35);
    EXPECT_EQ(cfg.embedder.backend, "hash");
    EXPECT_EQ(cfg.matcher.backend, "reference");
    EXPECT_DOUBLE_EQ(cfg.matcher.ratio, 0.8);
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
    EXPECT_THROW(run_config_from_json(json{{"manfest", "x"}}, "/"), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"pipeline", {{"kk", 3}}}}, "/"), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"pipeline", {{"k", "35"}}}}, "/"), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"pipeline", {{"k", 0}}}}, "/"), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"pipeline", {{"seed", -1}}}}, "/"), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"pipeline", {{"ransac", {{"iters", 5}}}}}}, "/"), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"providers", {{"embedder", {{"backend", "clip"}}}}}}, "/"), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"providers", {{"embedder", {{"backend", "remote"}}}}}}, "/"), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"providers", {{"matcher", {{"ratio", 1.5}}}}}}, "/"), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"providers", {{"segmenter", {{"threshold", -3}}}}}}, "/"), ConfigError);
    EXPECT_THROW(endpoint_from_json(json{{"path", "/embed"}}), ConfigError);
    EXPECT_THROW(endpoint_from_json(json{{"base_url", "http://h"}, {"timeout", 5}}), ConfigError);
}

TEST(Config, RoundTrip) {
    json doc{{"manifest", "/d/manifest.json"},
             {"pipeline",
              {{"k", 12},
               {"candidate_strategy", "class_filter"},
               {"candidate_unit", "image"},
               {"segmentation", false},
               {"workers", 3},
               {"seed", 99},
               {"ransac", {{"threshold_px", 2.5}, {"max_iters", 500}, {"exhaustive", true}}}}},
             {"providers",
              {{"embedder", {{"backend", "remote"}, {"dim", 128}, {"endpoint", {{"base_url", "http://h:1"}, {"retries", 4}}}}},
               {"matcher", {{"backend", "alt"}}}}}};
    const RunConfig a = run_config_from_json(doc, "/");
    EXPECT_EQ(a.pipeline.k, 12u);
    EXPECT_EQ(a.pipeline.candidate_strategy, CandidateStrategy::class_filter);
    EXPECT_EQ(a.pipeline.candidate_unit, CandidateUnit::image);
    EXPECT_FALSE(a.pipeline.segmentation_enabled);
    EXPECT_TRUE(a.pipeline.ransac.exhaustive);
    ASSERT_TRUE(a.embedder.endpoint);
    EXPECT_EQ(a.embedder.endpoint->retries, 4);
    const json once = to_json(a);
    const RunConfig b = run_config_from_json(once, "/");
    EXPECT_EQ(to_json(b), once);
}

TEST(Config, BuildProviders) {
    TempDir dir;
    RunConfig cfg;
    cfg.segmenter.backend = "identity";
    Providers p = build_providers(cfg, nullptr);
    EXPECT_EQ(p.embedder->kind(), "hash");
    EXPECT_EQ(p.segmenter->kind(), "identity");
    EXPECT_EQ(p.features->kind(), "reference");
    EXPECT_EQ(p.matcher->kind(), "reference");

    cfg.embedder.backend = "store";
    EXPECT_THROW(build_providers(cfg, nullptr), ConfigError);
    cfg.embedder.backend = "hash";

    cfg.segmenter.backend = "threshold";
    EXPECT_THROW(build_providers(cfg, nullptr), ConfigError);
    cfg.segmenter.background = dir.path() / "missing.png";
    EXPECT_THROW(build_providers(cfg, nullptr), ConfigError);
    save_png(Image(16, 16, 3, 40), dir.path() / "plate.png");
    cfg.segmenter.background = dir.path() / "plate.png";
    EXPECT_EQ(build_providers(cfg, nullptr).segmenter->kind(), "threshold");

    cfg.features.backend = "remote";
    EXPECT_THROW(build_providers(cfg, nullptr), ConfigError);
}

TEST(Config, AltMatcherDropsRatioTest) {
    RunConfig cfg;
    cfg.segmenter.backend = "identity";
    cfg.matcher.backend = "alt";
    const auto alt = build_providers(cfg, nullptr).matcher;
    cfg.matcher.backend = "reference";
    const auto ref = build_providers(cfg, nullptr).matcher;
    EXPECT_NE(alt->fingerprint(), ref->fingerprint());

    FeatureSet a, b;
    a.descriptor_size = b.descriptor_size = 2;
    a.keypoints = {{0, 0, 1}};
    a.descriptors = {1, 0};
    b.keypoints = {{0, 0, 1}, {1, 1, 1}};
    b.descriptors = {0.8f, 0.6f, 0.7f, 0.714f};
    EXPECT_EQ(ref->match(a, b).correspondences.size(), 0u);
    EXPECT_EQ(alt->match(a, b).correspondences.size(), 1u);
}

TEST(Config, LoadFromFile) {
    TempDir dir;
    std::ofstream(dir.path() / "c.json") << R"({"manifest": "m.json", "pipeline": {"k": 7}})";
    const RunConfig cfg = load_run_config(dir.path() / "c.json");
    EXPECT_EQ(*cfg.manifest, fs::absolute(dir.path() / "m.json"));
    EXPECT_EQ(cfg.pipeline.k, 7u);
    std::ofstream(dir.path() / "bad.json") << "{ nope";
    EXPECT_THROW(load_run_config(dir.path() / "bad.json"), ConfigError);
    EXPECT_THROW(load_run_config(dir.path() / "absent.json"), ConfigError);
}
