#pragma once

// Historical-state maintenance: per-block squared-norm statistics over
// (token position, input channel), initialized from a calibration pass,
// fused with probe statistics, and EMA-updated from full inference.
// Accumulation is done in double; the PPH1 snapshot payload is f32.

#include <cstdint>
#include <string>
#include <vector>

#include "io.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace pp {

struct HistoricalState {
    std::size_t rows = 0; // S_cal
    std::size_t cols = 0; // C_in
    std::vector<double> v;
    double lambda = 0.99;

    HistoricalState() = default;
    HistoricalState(std::size_t rows_, std::size_t cols_, double lambda_ = 0.99)
        : rows(rows_), cols(cols_), v(rows_ * cols_, 0.0), lambda(lambda_) {}

    double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

enum class FusionKind { ImportanceScaled, FixedRatio, ProbeOnly, HistoryOnly };

struct FusionMode {
    FusionKind kind = FusionKind::ImportanceScaled;
    double alpha = 0.5; // only for FixedRatio

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("FusionMode: alpha must be in [0,1]");
    }
};

// Batch-axis compression: entry (j,k) = sum_i x[i,j,k]^2.
inline Matrix reduce_batch_sq(const Tensor3& x_int) {
    Matrix out(x_int.s(), x_int.d());
    std::vector<double> acc(x_int.s() * x_int.d(), 0.0);
    for (std::size_t i = 0; i < x_int.n(); ++i)
        for (std::size_t j = 0; j < x_int.s(); ++j) {
            const std::span<const float> row = x_int.row(i, j);
            double* a = acc.data() + j * x_int.d();
            for (std::size_t k = 0; k < x_int.d(); ++k) a[k] += static_cast<double>(row[k]) * row[k];
        }
    for (std::size_t idx = 0; idx < acc.size(); ++idx) out.data()[idx] = static_cast<float>(acc[idx]);
    return out;
}

// Initial historical states: dense forward over the calibration batch, then
// batch-axis compression of every block's intermediate states.
inline std::vector<HistoricalState> init_history(const Model& m, const TokenBatch& calibration,
                                                 double lambda = 0.99) {
    calibration.validate(m.cfg.vocab_size);
    ForwardTrace trace;
    trace.record_xint = true;
    model_forward(m, calibration, nullptr, &trace);
    std::vector<HistoricalState> hist;
    hist.reserve(m.num_blocks());
    for (std::size_t l = 0; l < m.num_blocks(); ++l) {
        const Tensor3& xint = trace.xint[l];
        HistoricalState h(xint.s(), xint.d(), lambda);
        for (std::size_t i = 0; i < xint.n(); ++i)
            for (std::size_t j = 0; j < xint.s(); ++j) {
                const std::span<const float> row = xint.row(i, j);
                double* a = h.v.data() + j * h.cols;
                for (std::size_t k = 0; k < h.cols; ++k) a[k] += static_cast<double>(row[k]) * row[k];
            }
        hist.push_back(std::move(h));
    }
    return hist;
}

// Importance-scaled fusion of probe statistics with the history rows the
// probe's tokens map to. probe_sq row r aligns with history row seq_rows[r].
// p==v is an exact fixed point; p+v == 0 yields 0.
inline Matrix fuse(const Matrix& probe_sq, const HistoricalState& hist,
                   std::span<const std::size_t> seq_rows, FusionMode mode) {
    mode.validate();
    if (probe_sq.rows() != seq_rows.size())
        throw ShapeError("fuse: probe_sq rows must align with seq_rows");
    if (probe_sq.cols() != hist.cols) throw ShapeError("fuse: channel width mismatch with history");
    for (std::size_t r : seq_rows)
        if (r >= hist.rows) throw ShapeError("fuse: seq row index out of history range");

    Matrix out(probe_sq.rows(), probe_sq.cols());
    for (std::size_t r = 0; r < probe_sq.rows(); ++r) {
        const std::span<const float> p = probe_sq.row(r);
        const double* v = hist.v.data() + seq_rows[r] * hist.cols;
        const std::span<float> o = out.row(r);
        for (std::size_t k = 0; k < probe_sq.cols(); ++k) {
            const double pd = p[k], vd = v[k];
            double res = 0.0;
            switch (mode.kind) {
                case FusionKind::ImportanceScaled: {
                    const double denom = pd + vd;
                    if (denom != 0.0) {
                        const double w = pd / denom;
                        res = w * pd + (1.0 - w) * vd;
                    }
                    break;
                }
                case FusionKind::FixedRatio:
                    res = mode.alpha * pd + (1.0 - mode.alpha) * vd;
                    break;
                case FusionKind::ProbeOnly:
                    res = pd;
                    break;
                case FusionKind::HistoryOnly:
                    res = vd;
                    break;
            }
            o[k] = static_cast<float>(res);
        }
    }
    return out;
}

// Sequence-axis reduction: column sums, the surrogate of ||X^int_{:,:,k}||^2.
inline std::vector<float> collapse_seq(const Matrix& fused) {
    std::vector<double> acc(fused.cols(), 0.0);
    for (std::size_t r = 0; r < fused.rows(); ++r) {
        const std::span<const float> row = fused.row(r);
        for (std::size_t k = 0; k < fused.cols(); ++k) acc[k] += row[k];
    }
    std::vector<float> out(fused.cols());
    for (std::size_t k = 0; k < fused.cols(); ++k) out[k] = static_cast<float>(acc[k]);
    return out;
}

// EMA update from the pruned block's full-inference intermediate states.
// x_int channel c corresponds to retained channel mask.retained_channels[c];
// only those history columns move, and only the first x_int.s() rows.
inline void ema_update(HistoricalState& hist, const Tensor3& x_int, const ChannelMask& mask,
                       std::size_t head_dim) {
    const std::vector<std::size_t> channels = mask.retained_channels(head_dim);
    if (channels.size() != x_int.d())
        throw ShapeError("ema_update: x_int width must equal retained channel count");
    if (x_int.s() > hist.rows)
        throw ShapeError("ema_update: batch sequence length exceeds calibration length");
    for (std::size_t c : channels)
        if (c >= hist.cols) throw ShapeError("ema_update: retained channel out of history range");

    const double lambda = hist.lambda;
    std::vector<double> sq(x_int.d());
    for (std::size_t j = 0; j < x_int.s(); ++j) {
        std::fill(sq.begin(), sq.end(), 0.0);
        for (std::size_t i = 0; i < x_int.n(); ++i) {
            const std::span<const float> row = x_int.row(i, j);
            for (std::size_t c = 0; c < x_int.d(); ++c) sq[c] += static_cast<double>(row[c]) * row[c];
        }
        double* vrow = hist.v.data() + j * hist.cols;
        for (std::size_t c = 0; c < x_int.d(); ++c) {
            const std::size_t col = channels[c];
            vrow[col] = lambda * vrow[col] + (1.0 - lambda) * sq[c];
        }
    }
}

// ---------------------------------------------------------------------------
// PPH1 snapshot: magic, then one (u32 S_cal, u32 C_in, f32 payload) record
// per block until end of file.

inline void save_history(std::span<const HistoricalState> hist, const std::string& path) {
    std::ofstream os = detail::open_out(path);
    detail::write_magic(os, "PPH1");
    for (const HistoricalState& h : hist) {
        detail::write_u32(os, static_cast<std::uint32_t>(h.rows));
        detail::write_u32(os, static_cast<std::uint32_t>(h.cols));
        for (double v : h.v) detail::write_f32(os, static_cast<float>(v));
    }
    if (!os) throw FormatError("write failed: " + path);
}

inline std::vector<HistoricalState> load_history(const std::string& path, double lambda = 0.99) {
    std::ifstream is = detail::open_in(path);
    detail::expect_magic(is, "PPH1", path.c_str());
    std::vector<HistoricalState> hist;
    while (true) {
        if (is.peek() == std::char_traits<char>::eof()) break;
        const std::uint32_t rows = detail::read_u32(is, "history rows");
        const std::uint32_t cols = detail::read_u32(is, "history cols");
        if (rows == 0 || cols == 0) throw FormatError("history record with zero dimension");
        HistoricalState h(rows, cols, lambda);
        for (double& v : h.v) v = static_cast<double>(detail::read_f32(is, "history value"));
        hist.push_back(std::move(h));
    }
    if (hist.empty()) throw FormatError("history snapshot has no records: " + path);
    return hist;
}

} // namespace pp
