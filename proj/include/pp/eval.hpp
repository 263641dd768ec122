#pragma once

// Post-run analysis: Jaccard overlap of pruning decisions across report
// streams, the performance-runtime ratio, and FLOPs summaries. Emits plain
// CSV.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "report.hpp"

namespace pp {

// |a∩b| / |a∪b| over sorted index sets. Two empty sets count as identical.
inline double jaccard(std::span<const std::size_t> a, std::span<const std::size_t> b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0, ia = 0, ib = 0;
    while (ia < a.size() && ib < b.size()) {
        if (a[ia] == b[ib]) {
            ++inter;
            ++ia;
            ++ib;
        } else if (a[ia] < b[ib]) {
            ++ia;
        } else {
            ++ib;
        }
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Per-(batch, block) retained sets keyed identically across runs.
struct MaskStream {
    struct Entry {
        BlockKind kind = BlockKind::Attention;
        std::size_t units = 0;
        std::vector<std::size_t> retained;
        double ratio = 0.0;

        std::vector<std::size_t> pruned() const {
            std::vector<std::size_t> out;
            out.reserve(units - retained.size());
            std::size_t r = 0;
            for (std::size_t u = 0; u < units; ++u) {
                if (r < retained.size() && retained[r] == u)
                    ++r;
                else
                    out.push_back(u);
            }
            return out;
        }
    };

    std::map<std::pair<std::size_t, std::size_t>, Entry> entries; // (batch, block) -> entry

    static MaskStream from_records(std::span<const BlockRecord> records) {
        MaskStream s;
        for (const BlockRecord& r : records) {
            Entry e{r.kind, r.units, r.retained, r.ratio};
            std::sort(e.retained.begin(), e.retained.end());
            s.entries[{r.batch, r.block}] = std::move(e);
        }
        return s;
    }
};

struct JaccardRow {
    std::size_t block = 0;
    BlockKind kind = BlockKind::Attention;
    double j_pruned = 0.0;   // mean over batches, pruned (complement) sets
    double j_retained = 0.0; // mean over batches, retained sets
    double ratio = 0.0;
    std::size_t batches = 0;
};

// Per-block mean Jaccard between two streams over a shared (batch, block)
// grid. Pruned-set overlap is the primary figure; retained-set overlap is
// also reported.
inline std::vector<JaccardRow> jaccard_profile(const MaskStream& a, const MaskStream& b) {
    if (a.entries.size() != b.entries.size())
        throw ShapeError("jaccard_profile: report grids differ in size");
    std::map<std::size_t, JaccardRow> rows;
    auto ita = a.entries.begin();
    auto itb = b.entries.begin();
    for (; ita != a.entries.end(); ++ita, ++itb) {
        if (ita->first != itb->first) throw ShapeError("jaccard_profile: report grids have different keys");
        const MaskStream::Entry& ea = ita->second;
        const MaskStream::Entry& eb = itb->second;
        if (ea.units != eb.units || ea.kind != eb.kind)
            throw ShapeError("jaccard_profile: block shapes differ between streams");
        JaccardRow& row = rows[ita->first.second];
        row.block = ita->first.second;
        row.kind = ea.kind;
        row.ratio = ea.ratio;
        row.j_pruned += jaccard(ea.pruned(), eb.pruned());
        row.j_retained += jaccard(ea.retained, eb.retained);
        row.batches += 1;
    }
    std::vector<JaccardRow> out;
    out.reserve(rows.size());
    for (auto& [block, row] : rows) {
        row.j_pruned /= static_cast<double>(row.batches);
        row.j_retained /= static_cast<double>(row.batches);
        out.push_back(row);
    }
    return out;
}

struct PerfRuntime {
    double perf_dense = 0.0;
    double perf_pruned = 0.0;
    double runtime_dense = 0.0;
    double runtime_pruned = 0.0;
};

// Performance degradation per unit of runtime reduction; lower is better.
inline double prr(const PerfRuntime& p) {
    const double dt = p.runtime_dense - p.runtime_pruned;
    if (!(dt > 0.0)) throw ValueError("prr: runtime_dense must exceed runtime_pruned");
    return std::fabs(p.perf_dense - p.perf_pruned) / dt;
}

struct FlopsSummaryRow {
    std::string mode;
    std::uint64_t probe_flops = 0;
    std::uint64_t block_flops = 0;
    std::uint64_t dense_flops = 0;
    double probe_share = 0.0; // probe / analytic dense
};

inline FlopsSummaryRow flops_summary_row(const AggregateReport& a) {
    FlopsSummaryRow row;
    row.mode = a.mode;
    row.probe_flops = a.probe_flops;
    row.block_flops = a.block_flops;
    row.dense_flops = a.dense_flops;
    row.probe_share =
        a.dense_flops == 0 ? 0.0
                           : static_cast<double>(a.probe_flops) / static_cast<double>(a.dense_flops);
    return row;
}

// ---------------------------------------------------------------------------
// CSV emission.

inline void write_jaccard_csv(const std::string& path, std::span<const JaccardRow> pp_vs_oracle,
                              std::span<const JaccardRow> fixed_vs_oracle) {
    if (pp_vs_oracle.size() != fixed_vs_oracle.size())
        throw ShapeError("write_jaccard_csv: profiles cover different block sets");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "block,kind,j_pp_oracle,j_fixed_oracle\n";
    char buf[64];
    for (std::size_t i = 0; i < pp_vs_oracle.size(); ++i) {
        const JaccardRow& a = pp_vs_oracle[i];
        const JaccardRow& b = fixed_vs_oracle[i];
        if (a.block != b.block) throw ShapeError("write_jaccard_csv: block mismatch between profiles");
        std::snprintf(buf, sizeof buf, "%.6f,%.6f", a.j_pruned, b.j_pruned);
        os << a.block << ',' << block_kind_name(a.kind) << ',' << buf << '\n';
    }
    if (!os) throw FormatError("write failed: " + path);
}

struct PrrRow {
    std::string label;
    PerfRuntime perf;
};

inline void write_prr_csv(const std::string& path, std::span<const PrrRow> rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "label,perf_dense,perf_pruned,runtime_dense,runtime_pruned,prr\n";
    char buf[160];
    for (const PrrRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%g,%g,%g,%g,%.4f", r.perf.perf_dense, r.perf.perf_pruned,
                      r.perf.runtime_dense, r.perf.runtime_pruned, prr(r.perf));
        os << r.label << ',' << buf << '\n';
    }
    if (!os) throw FormatError("write failed: " + path);
}

inline void write_flops_csv(const std::string& path, std::span<const FlopsSummaryRow> rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << "mode,probe_flops,block_flops,dense_flops,probe_share\n";
    char buf[32];
    for (const FlopsSummaryRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%.6f", r.probe_share);
        os << r.mode << ',' << r.probe_flops << ',' << r.block_flops << ',' << r.dense_flops << ','
           << buf << '\n';
    }
    if (!os) throw FormatError("write failed: " + path);
}

} // namespace pp
