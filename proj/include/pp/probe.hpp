#pragma once

// Probe generation: residual-importance ranking, sequential token-then-sample
// selection, the probe forward pass, and analytic FLOPs accounting for
// probing vs dense inference.

#include <cmath>
#include <cstdint>
#include <vector>

#include "model.hpp"
#include "tensor.hpp"

namespace pp {

enum class SelectionSource { Residual, PostLayerNorm };

struct ProbeConfig {
    double batch_frac = 0.05; // x%
    double seq_frac = 0.50;   // y%
    SelectionSource selection_source = SelectionSource::Residual;
    std::size_t parallel_offset = 0; // 0 = standard PP, k > 0 = probe from X^{l-k}

    void validate() const {
        if (!(batch_frac > 0.0 && batch_frac <= 1.0))
            throw ConfigError("ProbeConfig: batch_frac must be in (0,1]");
        if (!(seq_frac > 0.0 && seq_frac <= 1.0))
            throw ConfigError("ProbeConfig: seq_frac must be in (0,1]");
    }

    std::size_t probe_batch(std::size_t n) const {
        return static_cast<std::size_t>(std::ceil(batch_frac * static_cast<double>(n)));
    }
    std::size_t probe_seq(std::size_t s) const {
        return static_cast<std::size_t>(std::ceil(seq_frac * static_cast<double>(s)));
    }
};

// Argsort prefixes, in descending-importance order.
struct ProbeSelection {
    IndexOrder seq_indices;
    IndexOrder batch_indices;

    // Gather order: ascending original position, so the causal mask over the
    // probe is the plain lower-triangular one.
    IndexOrder seq_ascending() const {
        IndexOrder out = seq_indices;
        std::sort(out.begin(), out.end());
        return out;
    }
    IndexOrder batch_ascending() const {
        IndexOrder out = batch_indices;
        std::sort(out.begin(), out.end());
        return out;
    }
};

// Per-sample or per-token L2 norm of the residual over the other two axes.
inline std::vector<float> residual_importance(const Tensor3& x, Axis target) {
    if (target == Axis::Feature)
        throw ValueError("residual_importance: target must be batch or sequence");
    return l2_norm_over_axes(x, target);
}

// Sequential selection: top ceil(y%*S) tokens by importance over the full
// tensor, then top ceil(x%*N) samples by importance over the reduced token
// set only.
inline ProbeSelection select_probe(const Tensor3& x_residual, const ProbeConfig& cfg) {
    cfg.validate();
    const std::size_t n_seq = cfg.probe_seq(x_residual.s());
    const std::size_t n_batch = cfg.probe_batch(x_residual.n());
    if (n_seq == 0 || n_batch == 0)
        throw ConfigError("select_probe: fraction produced an empty selection");

    const std::vector<float> seq_imp = residual_importance(x_residual, Axis::Sequence);
    IndexOrder seq_order = argsort_desc(seq_imp);
    seq_order.resize(n_seq);

    // Sample importance over the selected tokens only.
    std::vector<double> acc(x_residual.n(), 0.0);
    for (std::size_t i = 0; i < x_residual.n(); ++i)
        for (std::size_t j : seq_order) {
            const std::span<const float> row = x_residual.row(i, j);
            double sum = 0.0;
            for (float v : row) sum += static_cast<double>(v) * v;
            acc[i] += sum;
        }
    std::vector<float> batch_imp(x_residual.n());
    for (std::size_t i = 0; i < x_residual.n(); ++i)
        batch_imp[i] = static_cast<float>(std::sqrt(acc[i]));
    IndexOrder batch_order = argsort_desc(batch_imp);
    batch_order.resize(n_batch);

    return ProbeSelection{std::move(seq_order), std::move(batch_order)};
}

// Probe tensor: the selected samples and tokens of LN(x), gathered in
// ascending original order on both axes. Layer norm is position-wise, so
// normalizing the gathered rows equals gathering the normalized tensor.
inline Tensor3 build_probe(const Tensor3& x, std::span<const float> ln_gain,
                           std::span<const float> ln_bias, const ProbeSelection& sel,
                           float eps = 1e-5f) {
    const IndexOrder rows = sel.batch_ascending();
    const IndexOrder cols = sel.seq_ascending();
    if (rows.empty() || cols.empty()) throw ValueError("build_probe: empty selection");
    for (std::size_t i : rows)
        if (i >= x.n()) throw ValueError("build_probe: batch index out of range");
    for (std::size_t j : cols)
        if (j >= x.s()) throw ValueError("build_probe: sequence index out of range");
    Tensor3 gathered(rows.size(), cols.size(), x.d());
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = 0; b < cols.size(); ++b) {
            const std::span<const float> src = x.row(rows[a], cols[b]);
            std::copy(src.begin(), src.end(), gathered.row(a, b).begin());
        }
    return layer_norm(gathered, ln_gain, ln_bias, eps);
}

// T^l applied to the probe. Because build_probe gathers tokens in ascending
// original position, the standard causal mask implements "attend only to
// selected tokens at earlier original positions".
inline Tensor3 probe_forward(const BlockWeights& block, const Tensor3& probe, std::size_t head_dim,
                             std::uint64_t* macs = nullptr) {
    return block_forward_intermediate(block, probe, head_dim, macs);
}

// ---------------------------------------------------------------------------
// Analytic multiply-accumulate counts. Dense per block: 4*N*S*D^2 + 2*N*S^2*D
// (attention: Q/K/V/O projections plus score and value mixing) or
// 2*N*S*D*mlp (MLP: FC1+FC2). The probe runs Q/K/V and FC1 (4 of the 6
// projections per layer pair) plus the quadratic attention terms at the
// probe's actual dimensions.

struct BlockDims {
    BlockKind kind = BlockKind::Attention;
    std::size_t d_model = 0;
    std::size_t mlp_hidden = 0;
};

inline std::uint64_t flops_dense_block(std::size_t n, std::size_t s, const BlockDims& dims) {
    const std::uint64_t ns = static_cast<std::uint64_t>(n) * s;
    if (dims.kind == BlockKind::Mlp)
        return 2ull * ns * dims.d_model * dims.mlp_hidden;
    return 4ull * ns * dims.d_model * dims.d_model + 2ull * ns * s * dims.d_model;
}

inline std::uint64_t flops_probe_block(std::size_t n_probe, std::size_t s_probe, const BlockDims& dims) {
    const std::uint64_t ns = static_cast<std::uint64_t>(n_probe) * s_probe;
    if (dims.kind == BlockKind::Mlp)
        return ns * dims.d_model * dims.mlp_hidden;
    return 3ull * ns * dims.d_model * dims.d_model + 2ull * ns * s_probe * dims.d_model;
}

inline BlockDims block_dims(const Model& m, std::size_t block) {
    return BlockDims{m.block_kind(block), m.cfg.d_model, m.cfg.mlp_hidden};
}

inline std::uint64_t flops_dense_model(const Model& m, std::size_t n, std::size_t s) {
    std::uint64_t total = 0;
    for (std::size_t l = 0; l < m.num_blocks(); ++l) total += flops_dense_block(n, s, block_dims(m, l));
    return total;
}

inline std::uint64_t flops_probe_model(const Model& m, const ProbeConfig& cfg, std::size_t n,
                                       std::size_t s) {
    cfg.validate();
    const std::size_t np = cfg.probe_batch(n), sp = cfg.probe_seq(s);
    std::uint64_t total = 0;
    for (std::size_t l = 0; l < m.num_blocks(); ++l)
        total += flops_probe_block(np, sp, block_dims(m, l));
    return total;
}

// Model-free variants over uniform layer shapes, for large-model estimates.
inline std::uint64_t flops_dense_layers(std::size_t layers, std::size_t n, std::size_t s,
                                        std::size_t d_model, std::size_t mlp_hidden) {
    const std::uint64_t per_layer = flops_dense_block(n, s, {BlockKind::Attention, d_model, mlp_hidden}) +
                                    flops_dense_block(n, s, {BlockKind::Mlp, d_model, mlp_hidden});
    return layers * per_layer;
}

inline std::uint64_t flops_probe_layers(std::size_t layers, std::size_t n_probe, std::size_t s_probe,
                                        std::size_t d_model, std::size_t mlp_hidden) {
    const std::uint64_t per_layer =
        flops_probe_block(n_probe, s_probe, {BlockKind::Attention, d_model, mlp_hidden}) +
        flops_probe_block(n_probe, s_probe, {BlockKind::Mlp, d_model, mlp_hidden});
    return layers * per_layer;
}

} // namespace pp
