#pragma once

// RunReport serialization: one JSON object per (batch, block) plus an
// aggregate JSON document. No timestamps anywhere, so identical runs produce
// byte-identical files.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "metric.hpp"
#include "model.hpp"

namespace pp {

struct BlockRecord {
    std::size_t batch = 0;
    std::size_t block = 0;
    BlockKind kind = BlockKind::Attention;
    std::vector<std::size_t> retained; // retained head/channel indices
    std::size_t units = 0;             // total prunable units of the block
    double ratio = 0.0;
    std::uint64_t probe_flops = 0;
    std::uint64_t block_flops = 0;
    MetricKind metric = MetricKind::Ppsp;
    bool has_trace = false;
    double x_norm = 0.0;
    double xint_norm = 0.0;
};

struct AggregateReport {
    double perplexity = 0.0;
    std::uint64_t total_flops = 0;   // block + lm-head + probe MACs actually executed
    std::uint64_t probe_flops = 0;
    std::uint64_t block_flops = 0;
    std::uint64_t lm_head_flops = 0;
    std::uint64_t dense_flops = 0;   // analytic dense block reference at run dims
    std::string mode;
    std::string config_digest;
    std::size_t batches = 0;
    std::size_t batch_size = 0;
    std::size_t seq_len = 0;
    std::vector<double> jaccard_vs_reference; // per block, only when a reference stream was given
};

inline nlohmann::json record_to_json(const BlockRecord& r) {
    nlohmann::json j{{"batch", r.batch},
                     {"block", r.block},
                     {"kind", block_kind_name(r.kind)},
                     {"retained_indices", r.retained},
                     {"units", r.units},
                     {"ratio", r.ratio},
                     {"probe_flops", r.probe_flops},
                     {"block_flops", r.block_flops},
                     {"metric", metric_name(r.metric)}};
    if (r.has_trace) j["trace"] = {{"x_norm", r.x_norm}, {"xint_norm", r.xint_norm}};
    return j;
}

inline BlockRecord record_from_json(const nlohmann::json& j) {
    try {
        BlockRecord r;
        r.batch = j.at("batch").get<std::size_t>();
        r.block = j.at("block").get<std::size_t>();
        const std::string kind = j.at("kind").get<std::string>();
        if (kind == "attention")
            r.kind = BlockKind::Attention;
        else if (kind == "mlp")
            r.kind = BlockKind::Mlp;
        else
            throw FormatError("unknown block kind: " + kind);
        r.retained = j.at("retained_indices").get<std::vector<std::size_t>>();
        r.units = j.at("units").get<std::size_t>();
        r.ratio = j.at("ratio").get<double>();
        r.probe_flops = j.at("probe_flops").get<std::uint64_t>();
        r.block_flops = j.at("block_flops").get<std::uint64_t>();
        r.metric = parse_metric(j.at("metric").get<std::string>());
        if (j.contains("trace")) {
            r.has_trace = true;
            r.x_norm = j.at("trace").at("x_norm").get<double>();
            r.xint_norm = j.at("trace").at("xint_norm").get<double>();
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed report record: ") + e.what());
    }
}

inline nlohmann::json aggregate_to_json(const AggregateReport& a) {
    nlohmann::json j{{"perplexity", a.perplexity},
                     {"total_flops", a.total_flops},
                     {"probe_flops", a.probe_flops},
                     {"block_flops", a.block_flops},
                     {"lm_head_flops", a.lm_head_flops},
                     {"dense_flops", a.dense_flops},
                     {"mode", a.mode},
                     {"config_digest", a.config_digest},
                     {"batches", a.batches},
                     {"batch_size", a.batch_size},
                     {"seq_len", a.seq_len}};
    if (!a.jaccard_vs_reference.empty()) j["jaccard_vs_reference"] = a.jaccard_vs_reference;
    return j;
}

inline AggregateReport aggregate_from_json(const nlohmann::json& j) {
    try {
        AggregateReport a;
        a.perplexity = j.at("perplexity").get<double>();
        a.total_flops = j.at("total_flops").get<std::uint64_t>();
        a.probe_flops = j.at("probe_flops").get<std::uint64_t>();
        a.block_flops = j.at("block_flops").get<std::uint64_t>();
        a.lm_head_flops = j.at("lm_head_flops").get<std::uint64_t>();
        a.dense_flops = j.at("dense_flops").get<std::uint64_t>();
        a.mode = j.at("mode").get<std::string>();
        a.config_digest = j.at("config_digest").get<std::string>();
        a.batches = j.at("batches").get<std::size_t>();
        a.batch_size = j.at("batch_size").get<std::size_t>();
        a.seq_len = j.at("seq_len").get<std::size_t>();
        if (j.contains("jaccard_vs_reference"))
            a.jaccard_vs_reference = j.at("jaccard_vs_reference").get<std::vector<double>>();
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed aggregate report: ") + e.what());
    }
}

inline void write_report_jsonl(const std::string& path, std::span<const BlockRecord> records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + path);
    for (const BlockRecord& r : records) os << record_to_json(r).dump() << '\n';
    if (!os) throw FormatError("write failed: " + path);
}

inline std::vector<BlockRecord> read_report_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open for reading: " + path);
    std::vector<BlockRecord> records;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw FormatError("invalid JSON line in " + path);
        records.push_back(record_from_json(j));
    }
    return records;
}

// FNV-1a over the canonical (sorted-key) JSON dump; stable across runs.
inline std::string config_digest(const nlohmann::json& effective_config) {
    const std::string s = effective_config.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace pp
