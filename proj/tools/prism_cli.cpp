#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prism/config.hpp"
#include "prism/error.hpp"
#include "prism/evaluation.hpp"
#include "prism/parallel.hpp"
#include "prism/synthesis.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prism;

namespace {

struct Options {
    std::optional<std::string> config;
    std::optional<std::string> manifest;
    std::optional<std::string> backend;
    std::optional<std::string> store;
    std::optional<std::size_t> top;
    std::optional<int> workers;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> report;
    std::string format;
};

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return 2;
        case ErrorKind::provider: return 3;
        case ErrorKind::data:
        case ErrorKind::format: return 4;
    }
    return 1;
}

std::string_view kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::config: return "config";
        case ErrorKind::provider: return "provider";
        case ErrorKind::data: return "data";
        case ErrorKind::format: return "format";
    }
    return "internal";
}

std::string one_line(std::string s) {
    for (char& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

void print_error(std::string_view kind, const std::string& what) {
    std::fprintf(stderr, "error kind=%.*s message=%s\n", static_cast<int>(kind.size()), kind.data(),
                 one_line(what).c_str());
}

RunConfig resolve_config(const Options& o) {
    RunConfig cfg;
    if (o.config) cfg = load_run_config(*o.config);
    if (o.manifest) cfg.manifest = fs::absolute(*o.manifest);
    if (!o.config && cfg.manifest) {
        const fs::path plate = cfg.manifest->parent_path() / "background.png";
        if (fs::exists(plate)) cfg.segmenter.background = plate;
        else cfg.segmenter.backend = "identity";
    }
    if (o.backend) {
        if (*o.backend != "store" && *o.backend != "hash" && *o.backend != "remote")
            throw ConfigError("--backend must be store, hash or remote");
        cfg.embedder.backend = *o.backend;
    }
    if (o.store) cfg.embedding_store = fs::absolute(*o.store);
    if (cfg.embedder.backend == "store" && !cfg.embedding_store && cfg.manifest) {
        const fs::path guess = cfg.manifest->parent_path() / "embeddings.prsm";
        if (fs::exists(guess)) cfg.embedding_store = guess;
    }
    if (o.seed) cfg.pipeline.seed = *o.seed;
    if (o.workers) cfg.pipeline.worker_count = *o.workers;
    else if (!o.config) cfg.pipeline.worker_count = default_worker_count();
    if (o.report) cfg.report = fs::absolute(*o.report);
    cfg.pipeline.validate();
    return cfg;
}

std::string fingerprint(const RunConfig& cfg) {
    const json doc = to_json(cfg);
    return json{{"pipeline", doc["pipeline"]}, {"providers", doc["providers"]}}.dump();
}

fs::path default_cache(const RunConfig& cfg) {
    if (cfg.gallery_cache) return *cfg.gallery_cache;
    return cfg.manifest->parent_path() / "gallery_cache.prsf";
}

std::vector<QuerySource> sources_of(const std::vector<SynthRecord>& records) {
    std::vector<QuerySource> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.query_id, r.image, r.mask, r.coarse_class});
    return out;
}

int cmd_ingest(const Options& o, const std::string& manifest) {
    Options opts = o;
    opts.manifest = manifest;
    RunConfig cfg = resolve_config(opts);
    Session s = open_session(cfg);
    s.engine->precompute_gallery();
    const double precompute_ms = s.engine->precompute_ms();
    std::size_t keypoints = 0, fallbacks = 0;
    const auto& products = s.catalog->products();
    for (std::size_t p = 0; p < products.size(); ++p)
        for (std::size_t v = 0; v < products[p].views.size(); ++v) {
            const GalleryEntry& e = s.engine->gallery_entry(p, v);
            keypoints += e.features.size();
            fallbacks += e.fallback ? 1 : 0;
        }
    const fs::path cache = default_cache(cfg);
    s.engine->save_gallery_cache(cache);
    std::printf("ingested products=%zu images=%zu keypoints=%zu segmentation_fallbacks=%zu precompute_ms=%.1f cache=%s\n",
                s.catalog->size(), s.catalog->image_count(), keypoints, fallbacks, precompute_ms,
                cache.string().c_str());
    return 0;
}

int cmd_embed(const Options& o, const std::string& manifest, std::optional<std::string> out) {
    Options opts = o;
    opts.manifest = manifest;
    RunConfig cfg = resolve_config(opts);
    if (cfg.embedder.backend == "store") throw ConfigError("embed needs a computing backend (hash or remote)");
    const CatalogManifest catalog = load_manifest(*cfg.manifest);
    const Providers providers = build_providers(cfg, nullptr);
    const EmbeddingStore store = build_embedding_store(*providers.embedder, catalog);
    const fs::path path = out ? fs::path(*out) : cfg.manifest->parent_path() / "embeddings.prsm";
    save_embedding_store(store, path);
    std::printf("embedded images=%zu dim=%u backend=%s out=%s\n", store.size(), store.dim(),
                cfg.embedder.backend.c_str(), path.string().c_str());
    return 0;
}

int cmd_query(const Options& o, const std::string& image, std::optional<std::string> mask,
              std::optional<std::string> cls) {
    RunConfig cfg = resolve_config(o);
    Session s = open_session(cfg);
    QuerySource src{fs::path(image).stem().string(), image, std::nullopt, std::nullopt};
    if (mask) src.mask_ref = fs::path(*mask);
    if (cls) src.coarse_class = parse_coarse_class(*cls);
    const RetrievalResult r = s.engine->run_query(src.load());
    const std::size_t top = std::min(o.top.value_or(10), r.ranked.size());
    if (o.format == "json") {
        json doc = to_json(r);
        doc["ranked"] = json(std::vector<json>(doc["ranked"].begin(), doc["ranked"].begin() + static_cast<std::ptrdiff_t>(top)));
        std::cout << doc.dump(2) << '\n';
        return 0;
    }
    std::printf("%-5s %-24s %8s %10s %s\n", "rank", "product_id", "inliers", "stage1", "best_view");
    for (std::size_t i = 0; i < top; ++i) {
        const auto& e = r.ranked[i];
        std::printf("%-5zu %-24s %8d %10.6f %s\n", i + 1, e.product_id.c_str(), e.inlier_score, e.stage1_score,
                    std::string(to_string(e.best_view)).c_str());
    }
    std::printf("timings_ms stage1=%.2f stage2=%.2f stage3=%.2f total=%.2f\n", r.stage_ms("stage1"),
                r.stage_ms("stage2"), r.stage_ms("stage3"), r.total_ms);
    if (!r.fallback_flags.empty()) {
        std::string flags;
        for (const auto& f : r.fallback_flags) flags += (flags.empty() ? "" : ",") + f;
        std::printf("flags %s\n", flags.c_str());
    }
    return 0;
}

std::vector<SynthRecord> read_queries(const RunConfig& cfg, const std::optional<std::string>& path) {
    fs::path qpath;
    if (path) qpath = *path;
    else if (cfg.queries) qpath = *cfg.queries;
    else throw ConfigError("no queries file given");
    auto records = load_query_file(qpath);
    if (records.empty()) throw DataError("queries file " + qpath.string() + " is empty");
    return records;
}

void write_report(const MetricsReport& rep, const RunConfig& cfg, ReportFormat fmt) {
    if (cfg.report) {
        emit_report(rep, *cfg.report, fmt);
        return;
    }
    if (fmt == ReportFormat::json) {
        std::cout << report_to_json(rep).dump(2) << '\n';
        return;
    }
    const fs::path tmp = fs::temp_directory_path() / "prism_report.csv";
    emit_report(rep, tmp, fmt);
    std::ifstream in(tmp);
    std::cout << in.rdbuf();
    fs::remove(tmp);
}

int cmd_eval(const Options& o, const std::optional<std::string>& queries, bool diagnose, bool stage1) {
    const ReportFormat fmt = parse_report_format(o.format.empty() ? "json" : o.format);
    RunConfig cfg = resolve_config(o);
    const auto records = read_queries(cfg, queries);
    Session s = open_session(cfg);
    if (!stage1) s.engine->precompute_gallery();
    const auto sources = sources_of(records);
    const auto labels = labels_of(records);
    const EvaluationRun run =
        evaluate_queries(*s.engine, sources, labels, stage1 ? RunMode::stage1_only : RunMode::full, diagnose);
    for (const auto& f : run.failures) print_error(kind_name(f.error_kind), "query " + f.query_id + ": " + f.error);
    const MetricsReport rep = build_report(fingerprint(cfg), run);
    write_report(rep, cfg, fmt);
    std::fprintf(stderr, "evaluated queries=%zu errors=%zu top1=%.4f top5=%.4f top35=%.4f mean_total_ms=%.2f\n",
                 rep.n_queries, rep.n_errors, rep.top1, rep.top5, rep.top35,
                 rep.latency.count("total") ? rep.latency.at("total").mean : 0.0);
    return 0;
}

int cmd_synth(const Options& o, const std::string& spec_path, const std::string& out_dir) {
    SynthSpec spec = load_synth_spec(spec_path);
    if (o.seed) spec.seed = *o.seed;
    const SynthDataset ds = synthesize(spec, out_dir, o.workers.value_or(default_worker_count()));
    const fs::path root = fs::absolute(out_dir);
    json cfg{{"manifest", "manifest.json"},
             {"queries", "queries.json"},
             {"providers", {{"segmenter", {{"backend", "threshold"}, {"background", "background.png"}}}}}};
    std::ofstream(root / "config.json") << cfg.dump(2) << '\n';
    std::printf("synthesized products=%zu images=%zu queries=%zu out=%s\n", ds.catalog.size(),
                ds.catalog.image_count(), ds.queries.size(), root.string().c_str());
    return 0;
}

int cmd_ablate(const Options& o, const std::vector<std::string>& variants, const std::optional<std::string>& queries) {
    RunConfig base = resolve_config(o);
    const auto records = read_queries(base, queries);
    const auto sources = sources_of(records);
    const auto labels = labels_of(records);

    std::vector<std::string> names{"full"};
    for (const auto& v : variants)
        if (v != "full") names.push_back(v);

    json reports = json::array();
    std::printf("%-16s %8s %8s %8s %12s %12s %7s\n", "variant", "top1", "top5", "top35", "mean_ms", "stage3_ms", "errors");
    for (const auto& name : names) {
        RunConfig cfg = base;
        RunMode mode = RunMode::full;
        if (name == "no_stage1") cfg.pipeline.candidate_strategy = CandidateStrategy::class_filter;
        else if (name == "no_segmentation") cfg.pipeline.segmentation_enabled = false;
        else if (name == "matcher=alt") cfg.matcher.backend = "alt";
        else if (name == "exhaustive") cfg.pipeline.candidate_strategy = CandidateStrategy::none;
        else if (name == "stage1_only") mode = RunMode::stage1_only;
        else if (name != "full") throw ConfigError("unknown ablation variant '" + name + "'");
        cfg.gallery_cache.reset();
        Session s = open_session(cfg);
        if (mode == RunMode::full) s.engine->precompute_gallery();
        const EvaluationRun run = evaluate_queries(*s.engine, sources, labels, mode);
        const MetricsReport rep = build_report(fingerprint(cfg), run);
        std::printf("%-16s %8.4f %8.4f %8.4f %12.2f %12.2f %7zu\n", name.c_str(), rep.top1, rep.top5, rep.top35,
                    rep.latency.at("total").mean, rep.latency.at("stage3").mean, rep.n_errors);
        reports.push_back({{"variant", name}, {"report", report_to_json(rep)}});
    }
    if (base.report) std::ofstream(*base.report) << reports.dump(2) << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Staged product retrieval: embedding shortlist, segmentation crop, geometric verification."};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--config", o.config, "run configuration (JSON)");
    app.add_option("--manifest", o.manifest, "catalog manifest");
    app.add_option("--backend", o.backend, "embedder backend: store, hash or remote");
    app.add_option("--store", o.store, "embedding store file");
    app.add_option("--top", o.top, "rows to print for query");
    app.add_option("--workers", o.workers, "worker threads (default: all cores)");
    app.add_option("--seed", o.seed, "seed for every stochastic component");
    app.add_option("--report", o.report, "report output path");
    app.add_option("--format", o.format, "report format: json or csv");

    std::string manifest_arg, image_arg, spec_arg, out_dir_arg;
    std::optional<std::string> out_arg, mask_arg, class_arg, queries_arg;
    bool diagnose = false, stage1 = false;
    std::vector<std::string> variants;

    auto* ingest = app.add_subcommand("ingest", "validate a catalog and cache gallery features");
    ingest->add_option("manifest", manifest_arg)->required();
    auto* embed = app.add_subcommand("embed", "build and save the embedding store");
    embed->add_option("manifest", manifest_arg)->required();
    embed->add_option("-o,--out", out_arg, "store path (default: next to the manifest)");
    auto* query = app.add_subcommand("query", "rank the catalog against one image");
    query->add_option("image", image_arg)->required();
    query->add_option("--mask", mask_arg, "mask for the mask_file segmenter");
    query->add_option("--class", class_arg, "coarse class for the class_filter strategy");
    auto* eval = app.add_subcommand("eval", "evaluate a labelled query set");
    eval->add_option("queries", queries_arg, "queries.json (default: from --config)");
    eval->add_flag("--diagnose", diagnose, "measure the out-of-mask ratio");
    eval->add_flag("--stage1-only", stage1, "rank by embedding similarity alone");
    auto* synth = app.add_subcommand("synth", "generate a synthetic catalog and query set");
    synth->add_option("spec", spec_arg)->required();
    synth->add_option("out_dir", out_dir_arg)->required();
    auto* ablate = app.add_subcommand("ablate", "compare pipeline variants");
    ablate->add_option("--variants", variants,
                       "no_stage1, no_segmentation, matcher=alt, exhaustive, stage1_only")
        ->delimiter(',');
    ablate->add_option("queries", queries_arg, "queries.json (default: from --config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("config", e.what());
        return 2;
    }

    try {
        if (!o.format.empty() && o.format != "json" && o.format != "csv")
            throw ConfigError("--format must be json or csv");
        if (*ingest) return cmd_ingest(o, manifest_arg);
        if (*embed) return cmd_embed(o, manifest_arg, out_arg);
        if (*query) return cmd_query(o, image_arg, mask_arg, class_arg);
        if (*eval) return cmd_eval(o, queries_arg, diagnose, stage1);
        if (*synth) return cmd_synth(o, spec_arg, out_dir_arg);
        if (*ablate) return cmd_ablate(o, variants, queries_arg);
    } catch (const Error& e) {
        print_error(kind_name(e.kind()), e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return 1;
    }
    return 0;
}
