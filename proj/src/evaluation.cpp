#include "prism/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "prism/parallel.hpp"

namespace prism {

using nlohmann::json;

namespace {

std::unordered_map<std::string, std::string> label_map(std::span<const QueryLabel> labels) {
    std::unordered_map<std::string, std::string> m;
    for (const auto& l : labels) m[l.query_id] = l.true_product_id;
    return m;
}

int rank_of(const RetrievalResult& r, const std::string& product_id) {
    for (std::size_t i = 0; i < r.ranked.size(); ++i) {
        if (r.ranked[i].product_id == product_id) return static_cast<int>(i) + 1;
    }
    return 0;
}

double percentile(const std::vector<double>& sorted, double q) {
    if (sorted.size() == 1) return sorted.front();
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

double top_k_accuracy(std::span<const RetrievalResult> results, std::span<const QueryLabel> labels, std::size_t k) {
    if (results.empty()) throw DataError("top-k accuracy over zero results");
    const auto truth = label_map(labels);
    std::size_t hits = 0;
    for (const auto& r : results) {
        auto it = truth.find(r.query_id);
        if (it == truth.end()) throw DataError("no label for query '" + r.query_id + "'");
        const int rank = rank_of(r, it->second);
        hits += rank > 0 && static_cast<std::size_t>(rank) <= k;
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

LatencySummary summarize_latency(std::vector<double> samples) {
    if (samples.empty()) return {};
    std::sort(samples.begin(), samples.end());
    double sum = 0.0;
    for (double s : samples) sum += s;
    return {sum / static_cast<double>(samples.size()), percentile(samples, 0.50), percentile(samples, 0.95)};
}

MaskRatioRecord out_of_mask_ratio(std::string query_id, const MatchSet& matches, const FeatureSet& a,
                                  const FeatureSet& b, const Mask& query_mask, const Mask& gallery_mask) {
    if (matches.correspondences.empty()) throw NoMatchesError("no matches for query '" + query_id + "'");
    MaskRatioRecord rec{std::move(query_id), 0, 0, 0.0};
    for (const auto& c : matches.correspondences) {
        if (c.query_idx >= a.size() || c.gallery_idx >= b.size()) {
            throw DataError("correspondence index out of range");
        }
        const auto& ka = a.keypoints[c.query_idx];
        const auto& kb = b.keypoints[c.gallery_idx];
        const bool inside = query_mask.contains(ka.x, ka.y) && gallery_mask.contains(kb.x, kb.y);
        (inside ? rec.in_mask : rec.out_mask) += 1;
    }
    rec.ratio = static_cast<double>(rec.out_mask) / static_cast<double>(rec.out_mask + rec.in_mask);
    return rec;
}

std::optional<MaskRatioRecord> diagnose_mask_ratio(const RetrievalEngine& engine, const Query& query,
                                                   const Mask& query_mask, std::string_view true_product_id) {
    const auto pidx = engine.catalog().product_index(true_product_id);
    if (!pidx) throw DataError("unknown product '" + std::string(true_product_id) + "'");
    const auto& product = engine.catalog().products()[*pidx];
    const PreparedQuery prepared = engine.prepare_query(query);
    const FeatureSet qf = translated(prepared.features, static_cast<float>(prepared.box.x1),
                                     static_cast<float>(prepared.box.y1));

    std::optional<MaskRatioRecord> best;
    std::size_t best_matches = 0;
    for (std::size_t v = 0; v < product.views.size(); ++v) {
        const auto& view = product.views[v];
        if (!view.mask_ref) continue;
        const MatchSet m = engine.verify_pair(query, prepared, *pidx, v);
        if (m.correspondences.size() <= best_matches) continue;
        const auto& entry = engine.gallery_entry(*pidx, v);
        const FeatureSet gf = translated(entry.features, static_cast<float>(entry.box.x1),
                                         static_cast<float>(entry.box.y1));
        best = out_of_mask_ratio(query.id, m, qf, gf, query_mask, load_mask(*view.mask_ref));
        best_matches = m.correspondences.size();
    }
    return best;
}

std::vector<HistogramBin> histogram(std::span<const MaskRatioRecord> records, int bins) {
    if (bins < 1) throw DataError("histogram needs at least one bin");
    std::vector<HistogramBin> out(static_cast<std::size_t>(bins));
    for (int i = 0; i < bins; ++i) {
        out[static_cast<std::size_t>(i)] = {static_cast<double>(i) / bins, static_cast<double>(i + 1) / bins, 0};
    }
    for (const auto& r : records) {
        const double x = std::clamp(r.ratio, 0.0, 1.0);
        const int idx = std::min(bins - 1, static_cast<int>(std::floor(x * bins + 1e-9)));
        ++out[static_cast<std::size_t>(idx)].count;
    }
    return out;
}

MetricsReport build_report(std::string config_fingerprint, std::span<const RetrievalResult> results,
                           std::span<const QueryLabel> labels, std::span<const MaskRatioRecord> records, int bins) {
    MetricsReport rep;
    rep.config = std::move(config_fingerprint);
    rep.n_queries = results.size();
    rep.top1 = top_k_accuracy(results, labels, 1);
    rep.top5 = top_k_accuracy(results, labels, 5);
    rep.top35 = top_k_accuracy(results, labels, 35);

    const auto truth = label_map(labels);
    std::map<std::string, std::vector<double>> samples;
    for (const auto& r : results) {
        QueryRow row;
        row.query_id = r.query_id;
        row.true_product_id = truth.at(r.query_id);
        row.predicted_product_id = r.ranked.empty() ? std::string() : r.ranked.front().product_id;
        row.true_rank = rank_of(r, row.true_product_id);
        row.stage1_ms = r.stage_ms("stage1");
        row.stage2_ms = r.stage_ms("stage2");
        row.stage3_ms = r.stage_ms("stage3");
        row.total_ms = r.total_ms;
        samples["stage1"].push_back(row.stage1_ms);
        samples["stage2"].push_back(row.stage2_ms);
        samples["stage3"].push_back(row.stage3_ms);
        samples["total"].push_back(row.total_ms);
        rep.queries.push_back(std::move(row));
    }
    for (auto& [stage, s] : samples) rep.latency[stage] = summarize_latency(std::move(s));
    rep.mask_ratio_histogram = histogram(records, std::max(bins, 1));
    return rep;
}

MetricsReport build_report(std::string config_fingerprint, const EvaluationRun& run, int bins) {
    if (run.results.empty()) throw DataError("every query failed; nothing to report");
    MetricsReport rep = build_report(std::move(config_fingerprint), run.results, run.labels, run.mask_records, bins);
    rep.mask_ratio_skipped = run.mask_skipped;
    rep.n_errors = run.failures.size();
    return rep;
}

EvaluationRun evaluate_queries(const RetrievalEngine& engine, std::span<const QuerySource> queries,
                               std::span<const QueryLabel> labels, RunMode mode, bool diagnose) {
    if (queries.empty()) throw DataError("no queries to evaluate");
    const auto truth = label_map(labels);
    for (const auto& q : queries)
        if (!truth.contains(q.id)) throw DataError("no label for query '" + q.id + "'");

    std::vector<BatchOutcome> outcomes;
    if (mode == RunMode::full) {
        outcomes = engine.run_batch(queries);
    } else {
        outcomes.resize(queries.size());
        parallel_for(queries.size(), engine.config().worker_count, [&](std::size_t i) {
            BatchOutcome& out = outcomes[i];
            out.query_id = queries[i].id;
            try {
                out.result = engine.stage1_only(queries[i].load());
            } catch (const Error& e) {
                out.error = e.what();
                out.error_kind = e.kind();
            } catch (const std::exception& e) {
                out.error = e.what();
            }
        });
    }

    EvaluationRun run;
    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        if (outcomes[i].ok()) {
            run.labels.push_back({queries[i].id, truth.at(queries[i].id)});
            run.results.push_back(std::move(*outcomes[i].result));
            ok.push_back(i);
        } else {
            run.failures.push_back(std::move(outcomes[i]));
        }
    }

    if (diagnose && mode == RunMode::full) {
        std::vector<std::optional<MaskRatioRecord>> recs(ok.size());
        std::vector<char> attempted(ok.size(), 0);
        parallel_for(ok.size(), engine.config().worker_count, [&](std::size_t j) {
            const QuerySource& src = queries[ok[j]];
            if (!src.mask_ref) return;
            attempted[j] = 1;
            const Query q = src.load();
            const Mask mask = load_mask(*src.mask_ref);
            recs[j] = diagnose_mask_ratio(engine, q, mask, truth.at(src.id));
        });
        for (std::size_t j = 0; j < ok.size(); ++j) {
            if (recs[j]) run.mask_records.push_back(std::move(*recs[j]));
            else if (attempted[j]) ++run.mask_skipped;
        }
    }
    return run;
}

ReportFormat parse_report_format(std::string_view s) {
    if (s == "json") return ReportFormat::json;
    if (s == "csv") return ReportFormat::csv;
    throw ConfigError("unknown report format '" + std::string(s) + "'");
}

json report_to_json(const MetricsReport& r) {
    json latency = json::object();
    for (const auto& [stage, l] : r.latency) latency[stage] = {{"mean", l.mean}, {"p50", l.p50}, {"p95", l.p95}};
    json hist = json::array();
    for (const auto& b : r.mask_ratio_histogram) hist.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
    json rows = json::array();
    for (const auto& q : r.queries) {
        rows.push_back({{"query_id", q.query_id},
                        {"true_product_id", q.true_product_id},
                        {"predicted_product_id", q.predicted_product_id},
                        {"true_rank", q.true_rank},
                        {"stage1_ms", q.stage1_ms},
                        {"stage2_ms", q.stage2_ms},
                        {"stage3_ms", q.stage3_ms},
                        {"total_ms", q.total_ms}});
    }
    return {{"config", r.config},
            {"n_queries", r.n_queries},
            {"accuracy", {{"top1", r.top1}, {"top5", r.top5}, {"top35", r.top35}}},
            {"latency_ms", std::move(latency)},
            {"mask_ratio_histogram", std::move(hist)},
            {"mask_ratio_skipped", r.mask_ratio_skipped},
            {"n_errors", r.n_errors},
            {"queries", std::move(rows)}};
}

MetricsReport report_from_json(const json& doc) {
    try {
        MetricsReport r;
        r.config = doc.at("config").get<std::string>();
        r.n_queries = doc.at("n_queries").get<std::size_t>();
        const auto& acc = doc.at("accuracy");
        r.top1 = acc.at("top1").get<double>();
        r.top5 = acc.at("top5").get<double>();
        r.top35 = acc.at("top35").get<double>();
        for (const auto& [stage, l] : doc.at("latency_ms").items()) {
            r.latency[stage] = {l.at("mean").get<double>(), l.at("p50").get<double>(), l.at("p95").get<double>()};
        }
        for (const auto& b : doc.at("mask_ratio_histogram")) {
            r.mask_ratio_histogram.push_back(
                {b.at("lo").get<double>(), b.at("hi").get<double>(), b.at("count").get<std::size_t>()});
        }
        r.mask_ratio_skipped = doc.value("mask_ratio_skipped", std::size_t{0});
        r.n_errors = doc.value("n_errors", std::size_t{0});
        if (auto it = doc.find("queries"); it != doc.end()) {
            for (const auto& q : *it) {
                r.queries.push_back({q.at("query_id").get<std::string>(), q.at("true_product_id").get<std::string>(),
                                     q.at("predicted_product_id").get<std::string>(), q.at("true_rank").get<int>(),
                                     q.at("stage1_ms").get<double>(), q.at("stage2_ms").get<double>(),
                                     q.at("stage3_ms").get<double>(), q.at("total_ms").get<double>()});
            }
        }
        return r;
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Reason::malformed, std::string("report: ") + e.what());
    }
}

void emit_report(const MetricsReport& report, const std::filesystem::path& path, ReportFormat format) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write report: " + path.string());
    if (format == ReportFormat::json) {
        out << report_to_json(report).dump(2) << '\n';
    } else {
        out.precision(std::numeric_limits<double>::max_digits10);
        out << "query_id,true_product_id,predicted_product_id,true_rank,stage1_ms,stage2_ms,stage3_ms,total_ms\n";
        for (const auto& q : report.queries) {
            out << csv_field(q.query_id) << ',' << csv_field(q.true_product_id) << ','
                << csv_field(q.predicted_product_id) << ',' << q.true_rank << ',' << q.stage1_ms << ','
                << q.stage2_ms << ',' << q.stage3_ms << ',' << q.total_ms << '\n';
        }
    }
    if (!out) throw DataError("short write: " + path.string());
}

MetricsReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(FormatError::Reason::malformed, std::string("report: ") + e.what());
    }
    return report_from_json(doc);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    if (quoted) throw FormatError(FormatError::Reason::malformed, "report csv: unterminated quote");
    return out;
}

}  // namespace

std::vector<QueryRow> load_report_rows_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report: " + path.string());
    std::string line;
    if (!std::getline(in, line) ||
        line != "query_id,true_product_id,predicted_product_id,true_rank,stage1_ms,stage2_ms,stage3_ms,total_ms") {
        throw FormatError(FormatError::Reason::malformed, "report csv: unexpected header");
    }
    std::vector<QueryRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 8) throw FormatError(FormatError::Reason::malformed, "report csv: expected 8 fields");
        try {
            std::size_t used = 0;
            auto num = [&](const std::string& s) {
                const double v = std::stod(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
                return v;
            };
            const int rank = std::stoi(f[3], &used);
            if (used != f[3].size()) throw std::invalid_argument(f[3]);
            rows.push_back({f[0], f[1], f[2], rank, num(f[4]), num(f[5]), num(f[6]), num(f[7])});
        } catch (const std::logic_error&) {
            throw FormatError(FormatError::Reason::malformed, "report csv: bad number in '" + line + "'");
        }
    }
    return rows;
}

}  // namespace prism
