#pragma once

// Batch-wise dynamic pruning engine. Per block: select a probe from the
// residual stream, run the block's intermediate transformation on it, fuse
// the probe statistics with history, score channels/heads, prune, run full
// inference on the remaining weights, and EMA-update the history.
//
// Modes: dense (no pruning), fixed (one-time masks from calibration),
// full-batch (the probe is the whole batch; the theoretical upper bound),
// pp (standard probing), pp-parallel (probe built from an earlier block's
// residual).

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "eval.hpp"
#include "history.hpp"
#include "metric.hpp"
#include "model.hpp"
#include "probe.hpp"
#include "report.hpp"

namespace pp {

enum class RunMode { Dense, Fixed, FullBatchProbing, Pp, PpParallel };

inline const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::Dense: return "dense";
        case RunMode::Fixed: return "fixed";
        case RunMode::FullBatchProbing: return "full-batch";
        case RunMode::Pp: return "pp";
        case RunMode::PpParallel: return "pp-parallel";
    }
    return "?";
}

inline RunMode parse_run_mode(const std::string& s) {
    if (s == "dense") return RunMode::Dense;
    if (s == "fixed") return RunMode::Fixed;
    if (s == "full-batch" || s == "full_batch") return RunMode::FullBatchProbing;
    if (s == "pp") return RunMode::Pp;
    if (s == "pp-parallel" || s == "pp_parallel") return RunMode::PpParallel;
    throw ConfigError("unknown run mode: " + s);
}

inline const char* fusion_kind_name(FusionKind k) {
    switch (k) {
        case FusionKind::ImportanceScaled: return "importance_scaled";
        case FusionKind::FixedRatio: return "fixed_ratio";
        case FusionKind::ProbeOnly: return "probe_only";
        case FusionKind::HistoryOnly: return "history_only";
    }
    return "?";
}

inline FusionKind parse_fusion_kind(const std::string& s) {
    if (s == "importance_scaled") return FusionKind::ImportanceScaled;
    if (s == "fixed_ratio") return FusionKind::FixedRatio;
    if (s == "probe_only") return FusionKind::ProbeOnly;
    if (s == "history_only") return FusionKind::HistoryOnly;
    throw ConfigError("unknown fusion mode: " + s);
}

inline const char* selection_source_name(SelectionSource s) {
    return s == SelectionSource::Residual ? "residual" : "post_layernorm";
}

inline SelectionSource parse_selection_source(const std::string& s) {
    if (s == "residual") return SelectionSource::Residual;
    if (s == "post_layernorm") return SelectionSource::PostLayerNorm;
    throw ConfigError("unknown selection source: " + s);
}

struct EngineConfig {
    ProbeConfig probe;
    FusionMode fusion;
    MetricKind metric = MetricKind::Ppsp;
    PruneRatioPlan plan;
    double lambda = 0.99;
    bool record_traces = false;

    void validate(RunMode mode, std::size_t total_blocks) const {
        probe.validate();
        fusion.validate();
        plan.validate(total_blocks);
        if (!(lambda >= 0.0 && lambda < 1.0)) throw ConfigError("EngineConfig: lambda must be in [0,1)");
        if (metric == MetricKind::Flap && mode != RunMode::Fixed)
            throw ConfigError("flap metric is defined as a calibration-time baseline; use fixed mode");
        if (mode == RunMode::Pp && probe.parallel_offset != 0)
            throw ConfigError("pp mode requires parallel_offset 0; use pp-parallel");
        if (mode != RunMode::Pp && mode != RunMode::PpParallel && probe.parallel_offset != 0)
            throw ConfigError("parallel_offset is only meaningful in pp-parallel mode");
    }
};

// Canonical JSON of everything that determines a run's outputs; its digest
// is echoed into the aggregate report.
inline nlohmann::json engine_config_json(RunMode mode, const EngineConfig& cfg, const ModelConfig& mc,
                                         std::size_t batch_size, std::size_t seq_len) {
    return nlohmann::json{
        {"mode", run_mode_name(mode)},
        {"probe",
         {{"batch_frac", cfg.probe.batch_frac},
          {"seq_frac", cfg.probe.seq_frac},
          {"selection_source", selection_source_name(cfg.probe.selection_source)},
          {"parallel_offset", cfg.probe.parallel_offset}}},
        {"fusion", {{"mode", fusion_kind_name(cfg.fusion.kind)}, {"alpha", cfg.fusion.alpha}}},
        {"metric", metric_name(cfg.metric)},
        {"ratio",
         {{"target_ratio", cfg.plan.target_ratio},
          {"skip_first_layers", cfg.plan.skip_first_layers},
          {"attention_ratio", cfg.plan.attention_ratio},
          {"mlp_ratio", cfg.plan.mlp_ratio}}},
        {"lambda", cfg.lambda},
        {"record_traces", cfg.record_traces},
        {"run", {{"batch_size", batch_size}, {"seq_len", seq_len}}},
        {"model",
         {{"num_layers", mc.num_layers},
          {"d_model", mc.d_model},
          {"num_heads", mc.num_heads},
          {"mlp_hidden", mc.mlp_hidden},
          {"vocab_size", mc.vocab_size},
          {"seed", mc.seed},
          {"outlier_fraction", mc.outlier_fraction},
          {"outlier_gain", mc.outlier_gain}}}};
}

struct BatchResult {
    Tensor3 logits;
    double mean_ce = 0.0;
    std::uint64_t lm_head_macs = 0;
    std::vector<BlockRecord> records;
};

struct CorpusResult {
    AggregateReport aggregate;
    std::vector<BlockRecord> records;
};

class Engine {
public:
    Engine(Model model, RunMode mode, EngineConfig cfg)
        : model_(std::move(model)), mode_(mode), cfg_(cfg) {
        if (mode_ == RunMode::PpParallel && cfg_.probe.parallel_offset == 0)
            cfg_.probe.parallel_offset = 1;
        cfg_.validate(mode_, model_.num_blocks());
    }

    const Model& model() const { return model_; }
    RunMode mode() const { return mode_; }
    const EngineConfig& config() const { return cfg_; }
    bool needs_calibration() const { return mode_ != RunMode::Dense; }
    bool calibrated() const { return calibrated_; }
    const std::vector<HistoricalState>& history() const { return history_; }
    const std::vector<ChannelMask>& fixed_masks() const { return fixed_masks_; }

    // Dense pass over the calibration batch: initializes per-block history
    // and the one-time fixed-mode masks.
    void calibrate(const TokenBatch& calibration) {
        calibration.validate(model_.cfg.vocab_size);
        ForwardTrace trace;
        trace.record_xint = true;
        model_forward(model_, calibration, nullptr, &trace);
        history_.clear();
        calib_xsq_.clear();
        calib_samples_.clear();
        for (std::size_t l = 0; l < model_.num_blocks(); ++l) {
            const Tensor3& xint = trace.xint[l];
            HistoricalState h(xint.s(), xint.d(), cfg_.lambda);
            for (std::size_t i = 0; i < xint.n(); ++i)
                for (std::size_t j = 0; j < xint.s(); ++j) {
                    const std::span<const float> row = xint.row(i, j);
                    double* a = h.v.data() + j * h.cols;
                    for (std::size_t k = 0; k < h.cols; ++k)
                        a[k] += static_cast<double>(row[k]) * row[k];
                }
            calib_xsq_.push_back(column_sums(h));
            if (cfg_.metric == MetricKind::Flap) {
                Matrix samples(xint.n() * xint.s(), xint.d());
                std::copy(xint.data().begin(), xint.data().end(), samples.data().begin());
                calib_samples_.push_back(std::move(samples));
            }
            history_.push_back(std::move(h));
        }
        build_fixed_masks();
        calibrated_ = true;
    }

    void load_history_snapshot(const std::string& path) {
        std::vector<HistoricalState> h = load_history(path, cfg_.lambda);
        if (h.size() != model_.num_blocks())
            throw FormatError("history snapshot has " + std::to_string(h.size()) + " blocks, model has " +
                              std::to_string(model_.num_blocks()));
        for (std::size_t l = 0; l < h.size(); ++l)
            if (h[l].cols != model_.blocks[l].c_in())
                throw FormatError("history snapshot channel width mismatch at block " + std::to_string(l));
        if (cfg_.metric == MetricKind::Flap)
            throw ConfigError("flap masks need calibration intermediates; calibrate from a corpus instead");
        history_ = std::move(h);
        calib_xsq_.clear();
        for (const HistoricalState& hs : history_) calib_xsq_.push_back(column_sums(hs));
        calib_samples_.clear();
        build_fixed_masks();
        calibrated_ = true;
    }

    void save_history_snapshot(const std::string& path) const { save_history(history_, path); }

    BatchResult run_batch(const TokenBatch& batch, std::size_t batch_index) {
        batch.validate(model_.cfg.vocab_size);
        if (needs_calibration()) {
            if (!calibrated_) throw ConfigError("engine not calibrated");
            if (updates_history())
                for (const HistoricalState& h : history_)
                    if (batch.s > h.rows)
                        throw ConfigError("batch sequence length exceeds calibration length");
        }
        const std::size_t total = model_.num_blocks();
        const std::size_t hd = model_.cfg.head_dim();
        BatchResult res;
        res.records.reserve(total);

        Tensor3 x = embed(model_, batch);
        std::vector<Tensor3> residuals; // X^0..X^l, only kept in pp-parallel mode
        if (mode_ == RunMode::PpParallel) residuals.push_back(x);

        for (std::size_t l = 0; l < total; ++l) {
            const BlockWeights& block = model_.blocks[l];
            const double ratio = mode_ == RunMode::Dense
                                     ? 0.0
                                     : cfg_.plan.ratio_for_block(l, total, model_.block_kind(l));
            std::uint64_t probe_macs = 0;
            ChannelMask mask = ChannelMask::full(l, model_.block_granularity(l), model_.block_units(l));

            if (ratio > 0.0) {
                switch (mode_) {
                    case RunMode::Dense:
                        break;
                    case RunMode::Fixed:
                        mask = fixed_masks_[l];
                        break;
                    case RunMode::FullBatchProbing: {
                        // Direct route: the probe is LN(X^l) of the whole batch.
                        const Tensor3 p = layer_norm(x, block.ln_gain, block.ln_bias);
                        const Tensor3 xint_p = block_forward_intermediate(block, p, hd, &probe_macs);
                        const std::vector<float> stats = collapse_seq(reduce_batch_sq(xint_p));
                        mask = mask_from_stats(l, ratio, stats);
                        break;
                    }
                    case RunMode::Pp:
                    case RunMode::PpParallel: {
                        const Tensor3& src =
                            mode_ == RunMode::PpParallel
                                ? residuals[l >= cfg_.probe.parallel_offset ? l - cfg_.probe.parallel_offset
                                                                            : 0]
                                : x;
                        ProbeSelection sel;
                        if (cfg_.probe.selection_source == SelectionSource::PostLayerNorm) {
                            const Tensor3 src_ln = layer_norm(src, block.ln_gain, block.ln_bias);
                            sel = select_probe(src_ln, cfg_.probe);
                        } else {
                            sel = select_probe(src, cfg_.probe);
                        }
                        const Tensor3 probe = build_probe(src, block.ln_gain, block.ln_bias, sel);
                        const Tensor3 xint_p = probe_forward(block, probe, hd, &probe_macs);
                        const Matrix psq = reduce_batch_sq(xint_p);
                        const IndexOrder rows = sel.seq_ascending();
                        const Matrix fused = fuse(psq, history_[l], rows, cfg_.fusion);
                        const std::vector<float> stats = collapse_seq(fused);
                        mask = mask_from_stats(l, ratio, stats);
                        break;
                    }
                }
            }

            const double x_norm = cfg_.record_traces ? l2_norm_all(x) : 0.0;
            std::uint64_t block_macs = 0;
            Tensor3 xint;
            const bool want_xint = updates_history() || cfg_.record_traces;
            x = block_forward_full(block, x, hd, &mask, &block_macs, want_xint ? &xint : nullptr);
            if (mode_ == RunMode::PpParallel) residuals.push_back(x);
            if (updates_history()) ema_update(history_[l], xint, mask, hd);

            BlockRecord rec;
            rec.batch = batch_index;
            rec.block = l;
            rec.kind = block.kind;
            rec.retained = mask.retained;
            rec.units = mask.units;
            rec.ratio = ratio;
            rec.probe_flops = probe_macs;
            rec.block_flops = block_macs;
            rec.metric = cfg_.metric;
            if (cfg_.record_traces) {
                rec.has_trace = true;
                rec.x_norm = x_norm;
                rec.xint_norm = l2_norm_all(xint);
            }
            res.records.push_back(std::move(rec));
        }

        const Tensor3 x_ln = layer_norm(x, model_.final_ln_gain, model_.final_ln_bias);
        res.logits = matmul_rhs_transposed(x_ln, model_.lm_head, &res.lm_head_macs);
        res.mean_ce = mean_cross_entropy(res.logits, batch);
        return res;
    }

    // Non-overlapping batches in corpus order; the tail that does not fill a
    // batch is dropped. Optionally compares emitted masks against a
    // reference stream (per-block mean pruned-set Jaccard).
    CorpusResult run_corpus(std::span<const std::uint32_t> tokens, std::size_t batch_size,
                            std::size_t seq_len, const std::string& digest = "",
                            const MaskStream* reference = nullptr) {
        if (batch_size == 0) throw ConfigError("run_corpus: batch_size must be >= 1");
        if (seq_len < 2) throw ConfigError("run_corpus: seq_len must be >= 2 for next-token loss");
        const std::size_t per_batch = batch_size * seq_len;
        const std::size_t num_batches = tokens.size() / per_batch;
        if (num_batches == 0) throw ValueError("run_corpus: corpus smaller than one batch");

        CorpusResult out;
        double ce_sum = 0.0;
        AggregateReport agg;
        for (std::size_t b = 0; b < num_batches; ++b) {
            TokenBatch batch{batch_size, seq_len,
                             {tokens.begin() + static_cast<std::ptrdiff_t>(b * per_batch),
                              tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * per_batch)}};
            BatchResult r = run_batch(batch, b);
            ce_sum += r.mean_ce;
            agg.lm_head_flops += r.lm_head_macs;
            for (BlockRecord& rec : r.records) {
                agg.probe_flops += rec.probe_flops;
                agg.block_flops += rec.block_flops;
                out.records.push_back(std::move(rec));
            }
        }
        agg.perplexity = std::exp(ce_sum / static_cast<double>(num_batches));
        agg.total_flops = agg.probe_flops + agg.block_flops + agg.lm_head_flops;
        agg.dense_flops = flops_dense_model(model_, batch_size, seq_len) * num_batches;
        agg.mode = run_mode_name(mode_);
        agg.config_digest = digest;
        agg.batches = num_batches;
        agg.batch_size = batch_size;
        agg.seq_len = seq_len;
        if (reference) {
            const MaskStream mine = MaskStream::from_records(out.records);
            for (const JaccardRow& row : jaccard_profile(mine, *reference))
                agg.jaccard_vs_reference.push_back(row.j_pruned);
        }
        out.aggregate = agg;
        return out;
    }

private:
    bool updates_history() const {
        return mode_ == RunMode::Pp || mode_ == RunMode::PpParallel ||
               mode_ == RunMode::FullBatchProbing;
    }

    static std::vector<float> column_sums(const HistoricalState& h) {
        std::vector<double> acc(h.cols, 0.0);
        for (std::size_t r = 0; r < h.rows; ++r)
            for (std::size_t c = 0; c < h.cols; ++c) acc[c] += h.at(r, c);
        std::vector<float> out(h.cols);
        for (std::size_t c = 0; c < h.cols; ++c) out[c] = static_cast<float>(acc[c]);
        return out;
    }

    ChannelMask mask_from_stats(std::size_t l, double ratio, std::span<const float> xsq) const {
        const BlockWeights& block = model_.blocks[l];
        std::vector<float> scores;
        switch (cfg_.metric) {
            case MetricKind::Ppsp:
                scores = ppsp_scores(block.final_weight(), xsq);
                break;
            case MetricKind::WandaSp: {
                // The fused statistic approximates ||X||^2; wanda-sp takes the norm.
                std::vector<float> xnorm(xsq.size());
                for (std::size_t k = 0; k < xsq.size(); ++k)
                    xnorm[k] = std::sqrt(std::max(xsq[k], 0.0f));
                scores = wanda_sp_scores(block.final_weight(), xnorm);
                break;
            }
            case MetricKind::Flap:
                throw ConfigError("flap has no online statistics path");
        }
        if (block.kind == BlockKind::Attention)
            return select_mask(aggregate_heads(scores, model_.cfg.head_dim()), ratio, Granularity::Head, l);
        return select_mask(scores, ratio, Granularity::Channel, l);
    }

    void build_fixed_masks() {
        const std::size_t total = model_.num_blocks();
        fixed_masks_.clear();
        fixed_masks_.reserve(total);
        for (std::size_t l = 0; l < total; ++l) {
            const double ratio = cfg_.plan.ratio_for_block(l, total, model_.block_kind(l));
            if (ratio == 0.0) {
                fixed_masks_.push_back(
                    ChannelMask::full(l, model_.block_granularity(l), model_.block_units(l)));
            } else if (cfg_.metric == MetricKind::Flap) {
                const BlockWeights& block = model_.blocks[l];
                std::vector<float> scores = flap_scores(block.final_weight(), calib_samples_[l]);
                if (block.kind == BlockKind::Attention)
                    fixed_masks_.push_back(select_mask(aggregate_heads(scores, model_.cfg.head_dim()),
                                                       ratio, Granularity::Head, l));
                else
                    fixed_masks_.push_back(select_mask(scores, ratio, Granularity::Channel, l));
            } else {
                fixed_masks_.push_back(mask_from_stats(l, ratio, calib_xsq_[l]));
            }
        }
    }

    Model model_;
    RunMode mode_;
    EngineConfig cfg_;
    std::vector<HistoricalState> history_;
    std::vector<std::vector<float>> calib_xsq_;
    std::vector<Matrix> calib_samples_;
    std::vector<ChannelMask> fixed_masks_;
    bool calibrated_ = false;
};

} // namespace pp
