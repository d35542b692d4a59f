#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/pipeline.hpp"

namespace prism {

struct QueryLabel {
    std::string query_id;
    std::string true_product_id;
};

/// Fraction of results whose true product is among the first k ranked entries.
/// Throws DataError when a result has no label or results is empty.
double top_k_accuracy(std::span<const RetrievalResult> results, std::span<const QueryLabel> labels,
                      std::size_t k);

struct LatencySummary {
    double mean = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;

    friend bool operator==(const LatencySummary&, const LatencySummary&) = default;
};

/// Mean and linearly interpolated percentiles; all zero for no samples.
LatencySummary summarize_latency(std::vector<double> samples_ms);

struct MaskRatioRecord {
    std::string query_id;
    std::size_t out_mask = 0;
    std::size_t in_mask = 0;
    double ratio = 0.0;
};

class NoMatchesError : public DataError {
public:
    explicit NoMatchesError(const std::string& what) : DataError(what) {}
};

/// A correspondence is in-mask only if both endpoints are foreground. Features
/// must be expressed in the coordinates of the (uncropped) masks.
/// Throws NoMatchesError for an empty match set.
MaskRatioRecord out_of_mask_ratio(std::string query_id, const MatchSet& matches, const FeatureSet& query_features,
                                  const FeatureSet& gallery_features, const Mask& query_mask,
                                  const Mask& gallery_mask);

/// Out-of-mask ratio of the query against the true product's view with the most
/// correspondences, using the engine's segmentation setting. nullopt when no
/// view yields a match or no view has a mask.
std::optional<MaskRatioRecord> diagnose_mask_ratio(const RetrievalEngine& engine, const Query& query,
                                                   const Mask& query_mask, std::string_view true_product_id);

struct HistogramBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;

    friend bool operator==(const HistogramBin&, const HistogramBin&) = default;
};

/// Uniform bins over [0, 1]; the last bin is closed on the right.
std::vector<HistogramBin> histogram(std::span<const MaskRatioRecord> records, int bins);

struct QueryRow {
    std::string query_id;
    std::string true_product_id;
    std::string predicted_product_id;
    int true_rank = 0;  ///< 1-based; 0 when the true product is not ranked
    double stage1_ms = 0.0;
    double stage2_ms = 0.0;
    double stage3_ms = 0.0;
    double total_ms = 0.0;

    friend bool operator==(const QueryRow&, const QueryRow&) = default;
};

struct MetricsReport {
    std::string config;
    std::size_t n_queries = 0;
    double top1 = 0.0;
    double top5 = 0.0;
    double top35 = 0.0;
    std::map<std::string, LatencySummary> latency;  ///< stage1, stage2, stage3, total
    std::vector<HistogramBin> mask_ratio_histogram;
    std::size_t mask_ratio_skipped = 0;
    std::size_t n_errors = 0;
    std::vector<QueryRow> queries;

    friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

MetricsReport build_report(std::string config_fingerprint, std::span<const RetrievalResult> results,
                           std::span<const QueryLabel> labels, std::span<const MaskRatioRecord> records = {},
                           int bins = 10);

enum class RunMode { full, stage1_only };

struct EvaluationRun {
    std::vector<RetrievalResult> results;  ///< successful queries, input order
    std::vector<QueryLabel> labels;
    std::vector<MaskRatioRecord> mask_records;
    std::size_t mask_skipped = 0;
    std::vector<BatchOutcome> failures;
};

/// Runs every query (workers from the engine config). With diagnose set, the
/// out-of-mask ratio is measured for queries whose mask_ref is present.
EvaluationRun evaluate_queries(const RetrievalEngine& engine, std::span<const QuerySource> queries,
                               std::span<const QueryLabel> labels, RunMode mode = RunMode::full,
                               bool diagnose = false);

MetricsReport build_report(std::string config_fingerprint, const EvaluationRun& run, int bins = 10);

enum class ReportFormat { json, csv };

/// Throws ConfigError for anything but "json" or "csv".
ReportFormat parse_report_format(std::string_view s);

nlohmann::json report_to_json(const MetricsReport& report);
/// Throws FormatError(malformed) on schema violations.
MetricsReport report_from_json(const nlohmann::json& doc);

void emit_report(const MetricsReport& report, const std::filesystem::path& path, ReportFormat format);
MetricsReport load_report(const std::filesystem::path& path);
/// Per-query rows of a CSV report. Throws FormatError(malformed).
std::vector<QueryRow> load_report_rows_csv(const std::filesystem::path& path);

}  // namespace prism
