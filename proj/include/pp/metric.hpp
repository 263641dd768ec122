#pragma once

// Channel/head importance metrics and the selection step turning scores plus
// a pruning ratio into a ChannelMask.
//
//   ppsp:     score_k = xsq_k * sqrt(sum_i w[i,k]^4)   (L2 over output
//             channels of the squared per-weight importance)
//   wanda_sp: score_k = xnorm_k * sum_i |w[i,k]|
//   flap:     score_k = ||w[:,k]||^2 * sample-variance of channel k

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "model.hpp"
#include "tensor.hpp"

namespace pp {

enum class MetricKind { Ppsp, WandaSp, Flap };

inline const char* metric_name(MetricKind k) {
    switch (k) {
        case MetricKind::Ppsp: return "ppsp";
        case MetricKind::WandaSp: return "wanda_sp";
        case MetricKind::Flap: return "flap";
    }
    return "?";
}

inline MetricKind parse_metric(const std::string& s) {
    if (s == "ppsp") return MetricKind::Ppsp;
    if (s == "wanda_sp" || s == "wanda-sp") return MetricKind::WandaSp;
    if (s == "flap") return MetricKind::Flap;
    throw ConfigError("unknown metric: " + s);
}

// xsq holds squared channel norms ||X^int_{:,:,k}||^2 (or their surrogate).
inline std::vector<float> ppsp_scores(const Matrix& w_final, std::span<const float> xsq) {
    if (xsq.size() != w_final.cols()) throw ShapeError("ppsp_scores: xsq length != C_in");
    for (float v : xsq)
        if (std::isnan(v) || v < 0.0f) throw ValueError("ppsp_scores: xsq must be finite and >= 0");
    std::vector<double> w4(w_final.cols(), 0.0);
    for (std::size_t i = 0; i < w_final.rows(); ++i) {
        const std::span<const float> row = w_final.row(i);
        for (std::size_t k = 0; k < w_final.cols(); ++k) {
            const double w2 = static_cast<double>(row[k]) * row[k];
            w4[k] += w2 * w2;
        }
    }
    std::vector<float> scores(w_final.cols());
    for (std::size_t k = 0; k < w_final.cols(); ++k)
        scores[k] = static_cast<float>(static_cast<double>(xsq[k]) * std::sqrt(w4[k]));
    return scores;
}

// xnorm holds UN-squared channel norms ||X^int_{:,:,k}||_2.
inline std::vector<float> wanda_sp_scores(const Matrix& w_final, std::span<const float> xnorm) {
    if (xnorm.size() != w_final.cols()) throw ShapeError("wanda_sp_scores: xnorm length != C_in");
    for (float v : xnorm)
        if (std::isnan(v) || v < 0.0f) throw ValueError("wanda_sp_scores: xnorm must be finite and >= 0");
    std::vector<double> abs_sum(w_final.cols(), 0.0);
    for (std::size_t i = 0; i < w_final.rows(); ++i) {
        const std::span<const float> row = w_final.row(i);
        for (std::size_t k = 0; k < w_final.cols(); ++k) abs_sum[k] += std::fabs(static_cast<double>(row[k]));
    }
    std::vector<float> scores(w_final.cols());
    for (std::size_t k = 0; k < w_final.cols(); ++k)
        scores[k] = static_cast<float>(static_cast<double>(xnorm[k]) * abs_sum[k]);
    return scores;
}

// Per-weight importance |W_{i,k}| * ||X_k||, the unsquared form whose argsort
// the squared form must preserve.
inline Matrix wanda_per_weight(const Matrix& w_final, std::span<const float> xnorm) {
    if (xnorm.size() != w_final.cols()) throw ShapeError("wanda_per_weight: xnorm length != C_in");
    Matrix out(w_final.rows(), w_final.cols());
    for (std::size_t i = 0; i < w_final.rows(); ++i)
        for (std::size_t k = 0; k < w_final.cols(); ++k)
            out.at(i, k) = std::fabs(w_final.at(i, k)) * xnorm[k];
    return out;
}

// x_samples: one row per observation (sample-token pair of the calibration
// intermediates), one column per channel. Sample variance with divisor N-1.
inline std::vector<float> flap_scores(const Matrix& w_final, const Matrix& x_samples) {
    if (x_samples.cols() != w_final.cols()) throw ShapeError("flap_scores: channel width mismatch");
    if (x_samples.rows() < 2) throw ValueError("flap_scores: need at least 2 observations");
    const std::size_t n = x_samples.rows(), c = x_samples.cols();
    std::vector<double> mean(c, 0.0), var(c, 0.0), wsq(c, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const std::span<const float> row = x_samples.row(r);
        for (std::size_t k = 0; k < c; ++k) mean[k] += row[k];
    }
    for (std::size_t k = 0; k < c; ++k) mean[k] /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
        const std::span<const float> row = x_samples.row(r);
        for (std::size_t k = 0; k < c; ++k) {
            const double d = row[k] - mean[k];
            var[k] += d * d;
        }
    }
    for (std::size_t i = 0; i < w_final.rows(); ++i) {
        const std::span<const float> row = w_final.row(i);
        for (std::size_t k = 0; k < c; ++k) wsq[k] += static_cast<double>(row[k]) * row[k];
    }
    std::vector<float> scores(c);
    for (std::size_t k = 0; k < c; ++k)
        scores[k] = static_cast<float>(wsq[k] * var[k] / static_cast<double>(n - 1));
    return scores;
}

// Head h's score is the L2 norm of its head_dim channel scores.
inline std::vector<float> aggregate_heads(std::span<const float> channel_scores, std::size_t head_dim) {
    if (head_dim == 0 || channel_scores.size() % head_dim != 0)
        throw ShapeError("aggregate_heads: score length not divisible by head_dim");
    const std::size_t heads = channel_scores.size() / head_dim;
    std::vector<float> out(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        double acc = 0.0;
        for (std::size_t e = 0; e < head_dim; ++e) {
            const double v = channel_scores[h * head_dim + e];
            acc += v * v;
        }
        out[h] = static_cast<float>(std::sqrt(acc));
    }
    return out;
}

namespace detail {

inline std::size_t round_half_away(double x) {
    return static_cast<std::size_t>(std::llround(x));
}

} // namespace detail

// Retain the top (1-ratio) units by score; pruned count rounds half away
// from zero, ties break by ascending index, and at least one unit survives.
inline ChannelMask select_mask(std::span<const float> scores, double ratio, Granularity granularity,
                               std::size_t block_index) {
    if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("select_mask: ratio must be in [0,1)");
    if (scores.empty()) throw ValueError("select_mask: empty scores");
    const std::size_t units = scores.size();
    std::size_t n_prune = detail::round_half_away(ratio * static_cast<double>(units));
    if (n_prune >= units) n_prune = units - 1;
    IndexOrder order = argsort_desc(scores);
    ChannelMask mask{block_index, granularity, units, {}};
    mask.retained.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(units - n_prune));
    std::sort(mask.retained.begin(), mask.retained.end());
    mask.validate();
    return mask;
}

// Global ratio plan: the first skip_first_layers layers (both their blocks)
// stay dense; the remaining blocks take a rescaled uniform ratio so the
// model-wide average matches the target, capped at 0.95. Per-kind overrides
// replace the rescaled ratio for blocks of that kind (for attention-vs-MLP
// discrepancy experiments) and are applied as given, without rescaling.
struct PruneRatioPlan {
    double target_ratio = 0.4;
    std::size_t skip_first_layers = 3;
    double attention_ratio = -1.0; // < 0 means not overridden
    double mlp_ratio = -1.0;

    void validate(std::size_t total_blocks) const {
        if (!(target_ratio >= 0.0 && target_ratio < 1.0))
            throw ConfigError("PruneRatioPlan: target_ratio must be in [0,1)");
        for (double r : {attention_ratio, mlp_ratio})
            if (r >= 0.0 && !(r < 1.0))
                throw ConfigError("PruneRatioPlan: per-kind ratios must be in [0,1)");
        if (effective_target() > 0.0 && skipped_blocks() >= total_blocks)
            throw ConfigError("PruneRatioPlan: all layers skipped but target ratio > 0");
    }

    std::size_t skipped_blocks() const { return 2 * skip_first_layers; }

    double effective_target() const {
        double t = target_ratio;
        t = std::max(t, attention_ratio);
        t = std::max(t, mlp_ratio);
        return t;
    }

    double per_block_ratio(std::size_t total_blocks) const {
        validate(total_blocks);
        if (target_ratio == 0.0) return 0.0;
        const double scaled = target_ratio * static_cast<double>(total_blocks) /
                              static_cast<double>(total_blocks - skipped_blocks());
        return std::min(scaled, 0.95);
    }

    double ratio_for_block(std::size_t block, std::size_t total_blocks, BlockKind kind) const {
        if (block < skipped_blocks()) return 0.0;
        if (kind == BlockKind::Attention && attention_ratio >= 0.0) return attention_ratio;
        if (kind == BlockKind::Mlp && mlp_ratio >= 0.0) return mlp_ratio;
        return per_block_ratio(total_blocks);
    }
};

} // namespace pp
