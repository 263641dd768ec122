#pragma once

// Pre-norm residual transformer: attention blocks (Q/K/V/O) and MLP blocks
// (FC1/SiLU/FC2), dense and pruned forward passes with coupled-structure
// weight slicing, synthetic model generation, and the PPW1/PPT1 file formats.
//
// A model with `num_layers` layers has 2*num_layers blocks: layer L
// contributes block 2L (attention) followed by block 2L+1 (MLP). The final
// projection of a block (O for attention, FC2 for MLP) is the matrix whose
// input channels are the pruning targets; pruning removes whole attention
// heads or FC1-row/FC2-column pairs.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "io.hpp"
#include "tensor.hpp"

namespace pp {

struct ModelConfig {
    std::size_t num_layers = 6;
    std::size_t d_model = 64;
    std::size_t num_heads = 4;
    std::size_t mlp_hidden = 256;
    std::size_t vocab_size = 512;
    std::uint64_t seed = 42;
    // Fraction of feature channels whose embedding/LM-head columns are
    // amplified to induce outlier activations.
    double outlier_fraction = 0.05;
    double outlier_gain = 10.0;

    std::size_t head_dim() const { return d_model / num_heads; }
    std::size_t num_blocks() const { return 2 * num_layers; }

    void validate() const {
        if (d_model == 0 || num_heads == 0 || mlp_hidden == 0 || vocab_size == 0)
            throw ConfigError("ModelConfig: dims must be >= 1");
        if (d_model % num_heads != 0)
            throw ConfigError("ModelConfig: d_model must be divisible by num_heads");
        if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0))
            throw ConfigError("ModelConfig: outlier_fraction must be in [0,1]");
        if (!(outlier_gain > 0.0)) throw ConfigError("ModelConfig: outlier_gain must be > 0");
    }
};

enum class BlockKind { Attention, Mlp };

inline const char* block_kind_name(BlockKind k) { return k == BlockKind::Attention ? "attention" : "mlp"; }

enum class Granularity { Channel, Head };

// Retained channel indices (MLP) or retained head indices (attention) for
// one block.
struct ChannelMask {
    std::size_t block_index = 0;
    Granularity granularity = Granularity::Channel;
    std::size_t units = 0; // C_in for channels, head count for heads
    std::vector<std::size_t> retained;

    bool is_full() const { return retained.size() == units; }

    void validate() const {
        if (units == 0) throw ValueError("ChannelMask: units must be >= 1");
        if (retained.empty()) throw ValueError("ChannelMask: at least one unit must be retained");
        for (std::size_t i = 0; i < retained.size(); ++i) {
            if (retained[i] >= units) throw ValueError("ChannelMask: index out of range");
            if (i > 0 && retained[i] <= retained[i - 1])
                throw ValueError("ChannelMask: indices must be strictly increasing");
        }
    }

    // Head masks expand to the channel indices they cover in C_in.
    std::vector<std::size_t> retained_channels(std::size_t head_dim) const {
        if (granularity == Granularity::Channel) return retained;
        std::vector<std::size_t> out;
        out.reserve(retained.size() * head_dim);
        for (std::size_t h : retained)
            for (std::size_t e = 0; e < head_dim; ++e) out.push_back(h * head_dim + e);
        return out;
    }

    static ChannelMask full(std::size_t block_index, Granularity g, std::size_t units) {
        ChannelMask m{block_index, g, units, {}};
        m.retained.resize(units);
        for (std::size_t i = 0; i < units; ++i) m.retained[i] = i;
        return m;
    }
};

struct TokenBatch {
    std::size_t n = 0, s = 0;
    std::vector<std::uint32_t> ids; // row-major (n, s)

    std::uint32_t at(std::size_t i, std::size_t j) const { return ids[i * s + j]; }

    void validate(std::size_t vocab_size) const {
        if (n == 0 || s == 0) throw ValueError("TokenBatch: n and s must be >= 1");
        if (ids.size() != n * s) throw ShapeError("TokenBatch: ids length != n*s");
        for (std::uint32_t t : ids)
            if (t >= vocab_size) throw ValueError("TokenBatch: token id out of vocab range");
    }
};

struct BlockWeights {
    BlockKind kind = BlockKind::Attention;
    // Attention: all (d_model, d_model). wo is the final projection.
    Matrix wq, wk, wv, wo;
    // MLP: w_fc1 (mlp_hidden, d_model), w_fc2 (d_model, mlp_hidden). w_fc2 is final.
    Matrix w_fc1, w_fc2;
    std::vector<float> ln_gain, ln_bias;

    const Matrix& final_weight() const { return kind == BlockKind::Attention ? wo : w_fc2; }
    std::size_t c_in() const { return final_weight().cols(); }
};

struct Model {
    ModelConfig cfg;
    Matrix embedding; // (vocab, d_model)
    std::vector<BlockWeights> blocks;
    std::vector<float> final_ln_gain, final_ln_bias;
    Matrix lm_head; // (vocab, d_model)

    std::size_t num_blocks() const { return blocks.size(); }
    BlockKind block_kind(std::size_t block) const {
        return block % 2 == 0 ? BlockKind::Attention : BlockKind::Mlp;
    }
    // Prunable unit count of a block: heads for attention, C_in for MLP.
    std::size_t block_units(std::size_t block) const {
        return block_kind(block) == BlockKind::Attention ? cfg.num_heads : cfg.mlp_hidden;
    }
    Granularity block_granularity(std::size_t block) const {
        return block_kind(block) == BlockKind::Attention ? Granularity::Head : Granularity::Channel;
    }
};

// Deterministic gaussian source (Box-Muller over mt19937_64 uniforms) so
// generated weights are identical across standard libraries.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

    std::uint64_t raw() { return rng_(); }

    double uniform() { // (0,1]
        return static_cast<double>((rng_() >> 11) + 1) * 0x1.0p-53;
    }

    std::uint32_t bounded(std::uint32_t n) {
        return static_cast<std::uint32_t>((static_cast<unsigned __int128>(rng_()) * n) >> 64);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

private:
    std::mt19937_64 rng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

namespace detail {

inline void fill_normal(Matrix& m, GaussianSource& g, double scale) {
    for (float& v : m.data()) v = static_cast<float>(g.normal() * scale);
}

inline void fill_layer_norm_params(std::vector<float>& gain, std::vector<float>& bias, std::size_t d,
                                   GaussianSource& g) {
    gain.resize(d);
    bias.resize(d);
    for (float& v : gain) v = static_cast<float>(1.0 + 0.05 * g.normal());
    for (float& v : bias) v = static_cast<float>(0.02 * g.normal());
}

} // namespace detail

// Deterministic synthetic model. Weight tensors are generated in the PPW1
// payload order; outlier channels are then selected and the corresponding
// embedding and LM-head columns scaled by outlier_gain.
inline Model generate_synthetic_model(const ModelConfig& cfg) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    GaussianSource g(cfg.seed);
    const double d_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double mlp_scale = 1.0 / std::sqrt(static_cast<double>(cfg.mlp_hidden));

    m.embedding = Matrix(cfg.vocab_size, cfg.d_model);
    detail::fill_normal(m.embedding, g, 1.0);

    m.blocks.resize(cfg.num_blocks());
    for (std::size_t layer = 0; layer < cfg.num_layers; ++layer) {
        BlockWeights& attn = m.blocks[2 * layer];
        attn.kind = BlockKind::Attention;
        attn.wq = Matrix(cfg.d_model, cfg.d_model);
        attn.wk = Matrix(cfg.d_model, cfg.d_model);
        attn.wv = Matrix(cfg.d_model, cfg.d_model);
        attn.wo = Matrix(cfg.d_model, cfg.d_model);
        detail::fill_normal(attn.wq, g, d_scale);
        detail::fill_normal(attn.wk, g, d_scale);
        detail::fill_normal(attn.wv, g, d_scale);
        detail::fill_normal(attn.wo, g, d_scale);
        detail::fill_layer_norm_params(attn.ln_gain, attn.ln_bias, cfg.d_model, g);

        BlockWeights& mlp = m.blocks[2 * layer + 1];
        mlp.kind = BlockKind::Mlp;
        mlp.w_fc1 = Matrix(cfg.mlp_hidden, cfg.d_model);
        mlp.w_fc2 = Matrix(cfg.d_model, cfg.mlp_hidden);
        detail::fill_normal(mlp.w_fc1, g, d_scale);
        detail::fill_normal(mlp.w_fc2, g, mlp_scale);
        detail::fill_layer_norm_params(mlp.ln_gain, mlp.ln_bias, cfg.d_model, g);
    }

    detail::fill_layer_norm_params(m.final_ln_gain, m.final_ln_bias, cfg.d_model, g);
    m.lm_head = Matrix(cfg.vocab_size, cfg.d_model);
    detail::fill_normal(m.lm_head, g, d_scale);

    const std::size_t n_outlier =
        static_cast<std::size_t>(std::llround(cfg.outlier_fraction * static_cast<double>(cfg.d_model)));
    if (n_outlier > 0) {
        std::vector<std::size_t> channels(cfg.d_model);
        for (std::size_t i = 0; i < cfg.d_model; ++i) channels[i] = i;
        for (std::size_t i = 0; i < n_outlier; ++i) {
            const std::size_t j = i + g.bounded(static_cast<std::uint32_t>(cfg.d_model - i));
            std::swap(channels[i], channels[j]);
        }
        const float gain = static_cast<float>(cfg.outlier_gain);
        for (std::size_t i = 0; i < n_outlier; ++i) {
            const std::size_t c = channels[i];
            for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
                m.embedding.at(v, c) *= gain;
                m.lm_head.at(v, c) *= gain;
            }
        }
    }
    return m;
}

inline Tensor3 embed(const Model& m, const TokenBatch& batch) {
    batch.validate(m.cfg.vocab_size);
    Tensor3 x(batch.n, batch.s, m.cfg.d_model);
    for (std::size_t i = 0; i < batch.n; ++i)
        for (std::size_t j = 0; j < batch.s; ++j) {
            const std::span<const float> e = m.embedding.row(batch.at(i, j));
            std::copy(e.begin(), e.end(), x.row(i, j).begin());
        }
    return x;
}

namespace detail {

// Causal multi-head attention over already-projected q/k/v of width
// heads*head_dim. The full S x S score matrix is computed and then masked,
// so the counted MACs match the 2*N*S^2*C analytic term.
inline Tensor3 attention_core(const Tensor3& q, const Tensor3& k, const Tensor3& v,
                              std::size_t head_dim, std::uint64_t* macs = nullptr) {
    const std::size_t n = q.n(), s = q.s(), width = q.d();
    const std::size_t heads = width / head_dim;
    const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(head_dim));
    const float neg_inf = -std::numeric_limits<float>::infinity();
    Tensor3 out(n, s, width);
    Matrix scores(s, s);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * head_dim;
            for (std::size_t a = 0; a < s; ++a) {
                const std::span<const float> qa = q.row(i, a);
                for (std::size_t b = 0; b < s; ++b) {
                    const std::span<const float> kb = k.row(i, b);
                    float acc = 0.0f;
                    for (std::size_t e = 0; e < head_dim; ++e) acc += qa[off + e] * kb[off + e];
                    scores.at(a, b) = b <= a ? acc * inv_sqrt_hd : neg_inf;
                }
            }
            const Matrix w = softmax_rows(scores);
            for (std::size_t a = 0; a < s; ++a) {
                const std::span<float> oa = out.row(i, a);
                for (std::size_t e = 0; e < head_dim; ++e) oa[off + e] = 0.0f;
                for (std::size_t b = 0; b < s; ++b) {
                    const float wab = w.at(a, b);
                    const std::span<const float> vb = v.row(i, b);
                    for (std::size_t e = 0; e < head_dim; ++e) oa[off + e] += wab * vb[off + e];
                }
            }
        }
    }
    if (macs) *macs += 2ull * n * heads * s * s * head_dim;
    return out;
}

inline Matrix take_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::span<const float> src = m.row(rows[r]);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

inline Matrix take_cols(const Matrix& m, std::span<const std::size_t> cols) {
    Matrix out(m.rows(), cols.size());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < cols.size(); ++c) out.at(r, c) = m.at(r, cols[c]);
    return out;
}

inline void add_inplace(Tensor3& dst, const Tensor3& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

} // namespace detail

// The block's intermediate transformation T^l applied to layer-normalized
// input: SiLU(FC1 x) for MLP, concatenated causal attention heads for
// attention. The result is the input of the final projection. head_dim is
// ignored for MLP blocks.
inline Tensor3 block_forward_intermediate(const BlockWeights& block, const Tensor3& x_ln,
                                          std::size_t head_dim, std::uint64_t* macs = nullptr) {
    if (block.kind == BlockKind::Mlp) {
        Tensor3 h = matmul_rhs_transposed(x_ln, block.w_fc1, macs);
        for (float& v : h.data()) v = silu(v);
        return h;
    }
    const Tensor3 q = matmul_rhs_transposed(x_ln, block.wq, macs);
    const Tensor3 k = matmul_rhs_transposed(x_ln, block.wk, macs);
    const Tensor3 v = matmul_rhs_transposed(x_ln, block.wv, macs);
    return detail::attention_core(q, k, v, head_dim, macs);
}

// Residual block forward with optional coupled-structure pruning: FC1 rows +
// FC2 columns for MLP, whole heads across Q/K/V rows and O columns for
// attention. mask == nullptr means dense. out_xint receives the (pruned
// width) intermediate states when non-null.
inline Tensor3 block_forward_full(const BlockWeights& block, const Tensor3& x, std::size_t head_dim,
                                  const ChannelMask* mask, std::uint64_t* macs = nullptr,
                                  Tensor3* out_xint = nullptr) {
    if (mask) {
        mask->validate();
        const Granularity expected =
            block.kind == BlockKind::Attention ? Granularity::Head : Granularity::Channel;
        if (mask->granularity != expected)
            throw ConfigError("block_forward_full: mask granularity does not match block kind");
    }
    const Tensor3 x_ln = layer_norm(x, block.ln_gain, block.ln_bias);
    Tensor3 xint;
    Tensor3 proj;
    if (!mask || mask->is_full()) {
        xint = block_forward_intermediate(block, x_ln, head_dim, macs);
        proj = matmul_rhs_transposed(xint, block.final_weight(), macs);
    } else if (block.kind == BlockKind::Mlp) {
        const Matrix fc1 = detail::take_rows(block.w_fc1, mask->retained);
        const Matrix fc2 = detail::take_cols(block.w_fc2, mask->retained);
        xint = matmul_rhs_transposed(x_ln, fc1, macs);
        for (float& v : xint.data()) v = silu(v);
        proj = matmul_rhs_transposed(xint, fc2, macs);
    } else {
        const std::vector<std::size_t> chans = mask->retained_channels(head_dim);
        const Matrix wq = detail::take_rows(block.wq, chans);
        const Matrix wk = detail::take_rows(block.wk, chans);
        const Matrix wv = detail::take_rows(block.wv, chans);
        const Matrix wo = detail::take_cols(block.wo, chans);
        const Tensor3 q = matmul_rhs_transposed(x_ln, wq, macs);
        const Tensor3 k = matmul_rhs_transposed(x_ln, wk, macs);
        const Tensor3 v = matmul_rhs_transposed(x_ln, wv, macs);
        xint = detail::attention_core(q, k, v, head_dim, macs);
        proj = matmul_rhs_transposed(xint, wo, macs);
    }
    detail::add_inplace(proj, x);
    if (out_xint) *out_xint = std::move(xint);
    return proj;
}

struct ForwardTrace {
    bool record_xint = false;
    std::vector<Tensor3> xint;      // per block, only when record_xint
    std::vector<double> x_norm;     // ||X^l|| at block input
    std::vector<double> xint_norm;  // ||X^{l,int}||
};

// Full forward pass: embedding, all blocks (optionally masked), final layer
// norm, LM head. masks may be nullptr (dense) or hold nullptr entries.
inline Tensor3 model_forward(const Model& m, const TokenBatch& batch,
                             const std::vector<const ChannelMask*>* masks = nullptr,
                             ForwardTrace* trace = nullptr, std::uint64_t* macs = nullptr) {
    if (masks && masks->size() != m.num_blocks())
        throw ShapeError("model_forward: masks size != block count");
    Tensor3 x = embed(m, batch);
    for (std::size_t l = 0; l < m.num_blocks(); ++l) {
        const ChannelMask* mask = masks ? (*masks)[l] : nullptr;
        Tensor3 xint;
        if (trace) trace->x_norm.push_back(l2_norm_all(x));
        x = block_forward_full(m.blocks[l], x, m.cfg.head_dim(), mask, macs,
                               trace ? &xint : nullptr);
        if (trace) {
            trace->xint_norm.push_back(l2_norm_all(xint));
            if (trace->record_xint) trace->xint.push_back(std::move(xint));
        }
    }
    const Tensor3 x_ln = layer_norm(x, m.final_ln_gain, m.final_ln_bias);
    return matmul_rhs_transposed(x_ln, m.lm_head, macs);
}

// Mean next-token cross entropy (natural log) over positions 0..S-2.
inline double mean_cross_entropy(const Tensor3& logits, const TokenBatch& batch) {
    if (logits.n() != batch.n || logits.s() != batch.s)
        throw ShapeError("mean_cross_entropy: logits/batch shape mismatch");
    if (batch.s < 2) throw ValueError("mean_cross_entropy: need sequence length >= 2");
    double total = 0.0;
    for (std::size_t i = 0; i < batch.n; ++i) {
        for (std::size_t j = 0; j + 1 < batch.s; ++j) {
            const std::span<const float> row = logits.row(i, j);
            double mx = -std::numeric_limits<double>::infinity();
            for (float v : row) mx = std::max(mx, static_cast<double>(v));
            double sum = 0.0;
            for (float v : row) sum += std::exp(static_cast<double>(v) - mx);
            const double lse = std::log(sum) + mx;
            total += lse - static_cast<double>(row[batch.at(i, j + 1)]);
        }
    }
    return total / (static_cast<double>(batch.n) * static_cast<double>(batch.s - 1));
}

// ---------------------------------------------------------------------------
// PPW1 weight file: magic, u32 num_layers/d_model/num_heads/mlp_hidden/
// vocab_size, u64 seed, then the f32 payload in this order: embedding, per
// layer [attention: wq wk wv wo ln_gain ln_bias][mlp: w_fc1 w_fc2 ln_gain
// ln_bias], final_ln_gain, final_ln_bias, lm_head. Little-endian throughout.

inline void save_model(const Model& m, const std::string& path) {
    std::ofstream os = detail::open_out(path);
    detail::write_magic(os, "PPW1");
    detail::write_u32(os, static_cast<std::uint32_t>(m.cfg.num_layers));
    detail::write_u32(os, static_cast<std::uint32_t>(m.cfg.d_model));
    detail::write_u32(os, static_cast<std::uint32_t>(m.cfg.num_heads));
    detail::write_u32(os, static_cast<std::uint32_t>(m.cfg.mlp_hidden));
    detail::write_u32(os, static_cast<std::uint32_t>(m.cfg.vocab_size));
    detail::write_u64(os, m.cfg.seed);
    detail::write_f32_array(os, m.embedding.data());
    for (const BlockWeights& b : m.blocks) {
        if (b.kind == BlockKind::Attention) {
            detail::write_f32_array(os, b.wq.data());
            detail::write_f32_array(os, b.wk.data());
            detail::write_f32_array(os, b.wv.data());
            detail::write_f32_array(os, b.wo.data());
        } else {
            detail::write_f32_array(os, b.w_fc1.data());
            detail::write_f32_array(os, b.w_fc2.data());
        }
        detail::write_f32_array(os, b.ln_gain);
        detail::write_f32_array(os, b.ln_bias);
    }
    detail::write_f32_array(os, m.final_ln_gain);
    detail::write_f32_array(os, m.final_ln_bias);
    detail::write_f32_array(os, m.lm_head.data());
    if (!os) throw FormatError("write failed: " + path);
}

inline Model load_model(const std::string& path) {
    std::ifstream is = detail::open_in(path);
    detail::expect_magic(is, "PPW1", path.c_str());
    Model m;
    m.cfg.num_layers = detail::read_u32(is, "num_layers");
    m.cfg.d_model = detail::read_u32(is, "d_model");
    m.cfg.num_heads = detail::read_u32(is, "num_heads");
    m.cfg.mlp_hidden = detail::read_u32(is, "mlp_hidden");
    m.cfg.vocab_size = detail::read_u32(is, "vocab_size");
    m.cfg.seed = detail::read_u64(is, "seed");
    try {
        m.cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid model header: ") + e.what());
    }
    const ModelConfig& c = m.cfg;
    auto read_matrix = [&](std::size_t rows, std::size_t cols, const char* what) {
        Matrix mat(rows, cols);
        detail::read_f32_array(is, mat.data(), what);
        return mat;
    };
    auto read_vec = [&](std::size_t len, const char* what) {
        std::vector<float> v(len);
        detail::read_f32_array(is, v, what);
        return v;
    };
    m.embedding = read_matrix(c.vocab_size, c.d_model, "embedding");
    m.blocks.resize(c.num_blocks());
    for (std::size_t layer = 0; layer < c.num_layers; ++layer) {
        BlockWeights& attn = m.blocks[2 * layer];
        attn.kind = BlockKind::Attention;
        attn.wq = read_matrix(c.d_model, c.d_model, "wq");
        attn.wk = read_matrix(c.d_model, c.d_model, "wk");
        attn.wv = read_matrix(c.d_model, c.d_model, "wv");
        attn.wo = read_matrix(c.d_model, c.d_model, "wo");
        attn.ln_gain = read_vec(c.d_model, "ln_gain");
        attn.ln_bias = read_vec(c.d_model, "ln_bias");
        BlockWeights& mlp = m.blocks[2 * layer + 1];
        mlp.kind = BlockKind::Mlp;
        mlp.w_fc1 = read_matrix(c.mlp_hidden, c.d_model, "w_fc1");
        mlp.w_fc2 = read_matrix(c.d_model, c.mlp_hidden, "w_fc2");
        mlp.ln_gain = read_vec(c.d_model, "ln_gain");
        mlp.ln_bias = read_vec(c.d_model, "ln_bias");
    }
    m.final_ln_gain = read_vec(c.d_model, "final_ln_gain");
    m.final_ln_bias = read_vec(c.d_model, "final_ln_bias");
    m.lm_head = read_matrix(c.vocab_size, c.d_model, "lm_head");
    detail::expect_eof(is, path.c_str());
    return m;
}

// ---------------------------------------------------------------------------
// PPT1 token corpus: magic, u32 vocab_size, u64 count, then u32 token ids.

struct Corpus {
    std::size_t vocab_size = 0;
    std::vector<std::uint32_t> ids;
};

inline void save_corpus(const Corpus& c, const std::string& path) {
    std::ofstream os = detail::open_out(path);
    detail::write_magic(os, "PPT1");
    detail::write_u32(os, static_cast<std::uint32_t>(c.vocab_size));
    detail::write_u64(os, c.ids.size());
    for (std::uint32_t t : c.ids) detail::write_u32(os, t);
    if (!os) throw FormatError("write failed: " + path);
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream is = detail::open_in(path);
    detail::expect_magic(is, "PPT1", path.c_str());
    Corpus c;
    c.vocab_size = detail::read_u32(is, "vocab_size");
    if (c.vocab_size == 0) throw FormatError("corpus vocab_size must be >= 1");
    const std::uint64_t count = detail::read_u64(is, "count");
    c.ids.resize(count);
    for (std::uint32_t& t : c.ids) {
        t = detail::read_u32(is, "token");
        if (t >= c.vocab_size) throw FormatError("corpus token id out of vocab range");
    }
    detail::expect_eof(is, path.c_str());
    return c;
}

inline Corpus gen_uniform_corpus(std::size_t vocab_size, std::size_t count, std::uint64_t seed) {
    if (vocab_size == 0) throw ConfigError("gen_uniform_corpus: vocab_size must be >= 1");
    Corpus c;
    c.vocab_size = vocab_size;
    c.ids.resize(count);
    GaussianSource g(seed);
    for (std::uint32_t& t : c.ids) t = g.bounded(static_cast<std::uint32_t>(vocab_size));
    return c;
}

// Autoregressive sampling from the dense model (temperature 1), used to
// build corpora the model actually predicts well. KV-cached so generation is
// linear in the number of blocks per token. First token of each sequence is
// sampled uniformly.
inline Corpus sample_corpus_from_model(const Model& m, std::size_t num_sequences, std::size_t seq_len,
                                       std::uint64_t seed) {
    if (num_sequences == 0 || seq_len == 0)
        throw ConfigError("sample_corpus_from_model: need at least one sequence and token");
    const std::size_t d = m.cfg.d_model, hd = m.cfg.head_dim(), heads = m.cfg.num_heads;
    GaussianSource g(seed);
    std::vector<std::uint32_t> ids(num_sequences * seq_len);

    // Per attention block: cached K and V, (num_sequences, seq_len, d).
    std::vector<Tensor3> k_cache, v_cache;
    for (std::size_t l = 0; l < m.num_blocks(); ++l)
        if (m.block_kind(l) == BlockKind::Attention) {
            k_cache.emplace_back(num_sequences, seq_len, d);
            v_cache.emplace_back(num_sequences, seq_len, d);
        }

    for (std::size_t i = 0; i < num_sequences; ++i)
        ids[i * seq_len] = g.bounded(static_cast<std::uint32_t>(m.cfg.vocab_size));

    const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(hd));
    for (std::size_t t = 1; t < seq_len; ++t) {
        // Forward position t-1 for every sequence.
        Tensor3 x(num_sequences, 1, d);
        for (std::size_t i = 0; i < num_sequences; ++i) {
            const std::span<const float> e = m.embedding.row(ids[i * seq_len + (t - 1)]);
            std::copy(e.begin(), e.end(), x.row(i, 0).begin());
        }
        std::size_t attn_index = 0;
        for (std::size_t l = 0; l < m.num_blocks(); ++l) {
            const BlockWeights& b = m.blocks[l];
            const Tensor3 x_ln = layer_norm(x, b.ln_gain, b.ln_bias);
            if (b.kind == BlockKind::Mlp) {
                Tensor3 h = matmul_rhs_transposed(x_ln, b.w_fc1);
                for (float& v : h.data()) v = silu(v);
                const Tensor3 proj = matmul_rhs_transposed(h, b.w_fc2);
                detail::add_inplace(x, proj);
                continue;
            }
            const Tensor3 q = matmul_rhs_transposed(x_ln, b.wq);
            const Tensor3 k = matmul_rhs_transposed(x_ln, b.wk);
            const Tensor3 v = matmul_rhs_transposed(x_ln, b.wv);
            Tensor3& kc = k_cache[attn_index];
            Tensor3& vc = v_cache[attn_index];
            ++attn_index;
            Tensor3 att(num_sequences, 1, d);
            for (std::size_t i = 0; i < num_sequences; ++i) {
                std::copy(k.row(i, 0).begin(), k.row(i, 0).end(), kc.row(i, t - 1).begin());
                std::copy(v.row(i, 0).begin(), v.row(i, 0).end(), vc.row(i, t - 1).begin());
                const std::span<const float> qi = q.row(i, 0);
                const std::span<float> oi = att.row(i, 0);
                std::vector<double> w(t);
                for (std::size_t h = 0; h < heads; ++h) {
                    const std::size_t off = h * hd;
                    double mx = -std::numeric_limits<double>::infinity();
                    for (std::size_t p = 0; p < t; ++p) {
                        const std::span<const float> kp = kc.row(i, p);
                        float acc = 0.0f;
                        for (std::size_t e = 0; e < hd; ++e) acc += qi[off + e] * kp[off + e];
                        w[p] = static_cast<double>(acc * inv_sqrt_hd);
                        mx = std::max(mx, w[p]);
                    }
                    double sum = 0.0;
                    for (std::size_t p = 0; p < t; ++p) {
                        w[p] = std::exp(w[p] - mx);
                        sum += w[p];
                    }
                    for (std::size_t e = 0; e < hd; ++e) oi[off + e] = 0.0f;
                    for (std::size_t p = 0; p < t; ++p) {
                        const float wp = static_cast<float>(w[p] / sum);
                        const std::span<const float> vp = vc.row(i, p);
                        for (std::size_t e = 0; e < hd; ++e) oi[off + e] += wp * vp[off + e];
                    }
                }
            }
            const Tensor3 proj = matmul_rhs_transposed(att, b.wo);
            detail::add_inplace(x, proj);
        }
        const Tensor3 x_ln = layer_norm(x, m.final_ln_gain, m.final_ln_bias);
        const Tensor3 logits = matmul_rhs_transposed(x_ln, m.lm_head);
        for (std::size_t i = 0; i < num_sequences; ++i) {
            const std::span<const float> row = logits.row(i, 0);
            double mx = -std::numeric_limits<double>::infinity();
            for (float v : row) mx = std::max(mx, static_cast<double>(v));
            double sum = 0.0;
            std::vector<double> p(row.size());
            for (std::size_t v = 0; v < row.size(); ++v) {
                p[v] = std::exp(static_cast<double>(row[v]) - mx);
                sum += p[v];
            }
            const double u = g.uniform() * sum;
            double acc = 0.0;
            std::uint32_t pick = static_cast<std::uint32_t>(row.size() - 1);
            for (std::size_t v = 0; v < row.size(); ++v) {
                acc += p[v];
                if (acc >= u) {
                    pick = static_cast<std::uint32_t>(v);
                    break;
                }
            }
            ids[i * seq_len + t] = pick;
        }
    }
    return Corpus{m.cfg.vocab_size, std::move(ids)};
}

} // namespace pp
