// Command-line entry point: synthetic model/corpus generation, calibration,
// mode runs, and report analysis.
//
// Exit codes: 0 success, 2 usage/config error, 3 data/format error,
// 4 internal invariant violation.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pp/engine.hpp"
#include "pp/eval.hpp"

using nlohmann::json;

namespace {

struct RunSection {
    std::size_t batch_size = 8;
    std::size_t seq_len = 64;
};

struct PathsSection {
    std::string model, corpus, calibration, history, report, aggregate;
};

struct CliConfig {
    std::optional<std::uint64_t> seed;
    pp::ModelConfig model;
    pp::EngineConfig engine;
    RunSection run;
    PathsSection paths;
};

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw pp::ConfigError("config section '" + where + "' must be an object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                ok = true;
                break;
            }
        if (!ok) throw pp::ConfigError("unknown key '" + item.key() + "' in " + where);
    }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

CliConfig load_cli_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw pp::ConfigError("cannot open config: " + path);
    json j = json::parse(is, nullptr, false);
    if (j.is_discarded()) throw pp::ConfigError("config is not valid JSON: " + path);
    check_keys(j,
               {"version", "seed", "model", "probe", "fusion", "metric", "ratio", "lambda",
                "record_traces", "run", "paths"},
               "config");
    if (!j.contains("version")) throw pp::ConfigError("config missing 'version'");
    if (j.at("version").get<int>() != 1) throw pp::ConfigError("unsupported config version");

    CliConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"num_layers", "d_model", "num_heads", "mlp_hidden", "vocab_size",
                    "outlier_fraction", "outlier_gain"},
                   "model");
        read_if(m, "num_layers", c.model.num_layers);
        read_if(m, "d_model", c.model.d_model);
        read_if(m, "num_heads", c.model.num_heads);
        read_if(m, "mlp_hidden", c.model.mlp_hidden);
        read_if(m, "vocab_size", c.model.vocab_size);
        read_if(m, "outlier_fraction", c.model.outlier_fraction);
        read_if(m, "outlier_gain", c.model.outlier_gain);
    }
    if (j.contains("probe")) {
        const json& p = j.at("probe");
        check_keys(p, {"batch_frac", "seq_frac", "selection_source", "parallel_offset"}, "probe");
        read_if(p, "batch_frac", c.engine.probe.batch_frac);
        read_if(p, "seq_frac", c.engine.probe.seq_frac);
        if (p.contains("selection_source"))
            c.engine.probe.selection_source =
                pp::parse_selection_source(p.at("selection_source").get<std::string>());
        read_if(p, "parallel_offset", c.engine.probe.parallel_offset);
    }
    if (j.contains("fusion")) {
        const json& f = j.at("fusion");
        check_keys(f, {"mode", "alpha"}, "fusion");
        if (f.contains("mode")) c.engine.fusion.kind = pp::parse_fusion_kind(f.at("mode").get<std::string>());
        read_if(f, "alpha", c.engine.fusion.alpha);
    }
    if (j.contains("metric")) c.engine.metric = pp::parse_metric(j.at("metric").get<std::string>());
    if (j.contains("ratio")) {
        const json& r = j.at("ratio");
        check_keys(r, {"target_ratio", "skip_first_layers", "attention_ratio", "mlp_ratio"}, "ratio");
        read_if(r, "target_ratio", c.engine.plan.target_ratio);
        read_if(r, "skip_first_layers", c.engine.plan.skip_first_layers);
        read_if(r, "attention_ratio", c.engine.plan.attention_ratio);
        read_if(r, "mlp_ratio", c.engine.plan.mlp_ratio);
    }
    read_if(j, "lambda", c.engine.lambda);
    read_if(j, "record_traces", c.engine.record_traces);
    if (j.contains("run")) {
        const json& r = j.at("run");
        check_keys(r, {"batch_size", "seq_len"}, "run");
        read_if(r, "batch_size", c.run.batch_size);
        read_if(r, "seq_len", c.run.seq_len);
    }
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        check_keys(p, {"model", "corpus", "calibration", "history", "report", "aggregate"}, "paths");
        read_if(p, "model", c.paths.model);
        read_if(p, "corpus", c.paths.corpus);
        read_if(p, "calibration", c.paths.calibration);
        read_if(p, "history", c.paths.history);
        read_if(p, "report", c.paths.report);
        read_if(p, "aggregate", c.paths.aggregate);
    }
    return c;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag,
                           const std::optional<std::uint64_t>& config) {
    if (flag) return *flag;
    if (config) return *config;
    if (const char* env = std::getenv("PP_SEED")) return std::strtoull(env, nullptr, 10);
    return 42;
}

std::string pick_path(const std::string& flag, const std::string& config, const char* what,
                      bool required = true) {
    if (!flag.empty()) return flag;
    if (!config.empty()) return config;
    if (required) throw pp::ConfigError(std::string("missing required path: ") + what);
    return {};
}

pp::TokenBatch calibration_batch(const pp::Corpus& corpus, std::size_t seq_len,
                                 std::size_t batch_size_limit) {
    if (seq_len == 0) throw pp::ConfigError("calibration seq_len must be >= 1");
    std::size_t n = corpus.ids.size() / seq_len;
    if (batch_size_limit > 0) n = std::min(n, batch_size_limit);
    if (n == 0) throw pp::ConfigError("calibration corpus shorter than one sequence");
    return pp::TokenBatch{n, seq_len,
                          {corpus.ids.begin(), corpus.ids.begin() + static_cast<std::ptrdiff_t>(n * seq_len)}};
}

// ---------------------------------------------------------------------------

struct GenModelArgs {
    std::string config_path, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> layers, d_model, heads, mlp, vocab;
    std::optional<double> outlier_fraction, outlier_gain;
};

int cmd_gen_model(const GenModelArgs& a) {
    CliConfig cfg;
    if (!a.config_path.empty()) cfg = load_cli_config(a.config_path);
    pp::ModelConfig mc = cfg.model;
    if (a.layers) mc.num_layers = *a.layers;
    if (a.d_model) mc.d_model = *a.d_model;
    if (a.heads) mc.num_heads = *a.heads;
    if (a.mlp) mc.mlp_hidden = *a.mlp;
    if (a.vocab) mc.vocab_size = *a.vocab;
    if (a.outlier_fraction) mc.outlier_fraction = *a.outlier_fraction;
    if (a.outlier_gain) mc.outlier_gain = *a.outlier_gain;
    mc.seed = resolve_seed(a.seed, cfg.seed);
    mc.validate();
    const pp::Model m = pp::generate_synthetic_model(mc);
    pp::save_model(m, a.out);
    std::cout << "wrote " << a.out << " (layers=" << mc.num_layers << " d_model=" << mc.d_model
              << " heads=" << mc.num_heads << " mlp=" << mc.mlp_hidden << " vocab=" << mc.vocab_size
              << " seed=" << mc.seed << ")\n";
    return 0;
}

struct GenCorpusArgs {
    std::string out, model_path;
    std::optional<std::uint64_t> seed;
    std::size_t vocab = 512;
    std::size_t count = 0;
    std::size_t seq_len = 64;
};

int cmd_gen_corpus(const GenCorpusArgs& a) {
    if (a.count == 0) throw pp::ConfigError("gen-corpus: --count must be >= 1");
    const std::uint64_t seed = resolve_seed(a.seed, std::nullopt);
    pp::Corpus c;
    if (!a.model_path.empty()) {
        const pp::Model m = pp::load_model(a.model_path);
        const std::size_t n_seq = (a.count + a.seq_len - 1) / a.seq_len;
        c = pp::sample_corpus_from_model(m, n_seq, a.seq_len, seed);
        c.ids.resize(a.count);
    } else {
        c = pp::gen_uniform_corpus(a.vocab, a.count, seed);
    }
    pp::save_corpus(c, a.out);
    std::cout << "wrote " << a.out << " (vocab=" << c.vocab_size << " tokens=" << c.ids.size()
              << " seed=" << seed << (a.model_path.empty() ? " uniform" : " model-sampled") << ")\n";
    return 0;
}

struct CalibrateArgs {
    std::string config_path, model_path, corpus_path, out_history;
    std::size_t seq_len = 64;
    std::size_t batch_size = 0; // 0 = use the whole corpus
    std::optional<double> lambda;
};

int cmd_calibrate(const CalibrateArgs& a) {
    CliConfig cfg;
    if (!a.config_path.empty()) cfg = load_cli_config(a.config_path);
    const std::string model_path = pick_path(a.model_path, cfg.paths.model, "--model");
    const std::string corpus_path = pick_path(a.corpus_path, cfg.paths.corpus, "--corpus");
    pp::Model m = pp::load_model(model_path);
    const pp::Corpus corpus = pp::load_corpus(corpus_path);
    if (corpus.vocab_size != m.cfg.vocab_size)
        throw pp::FormatError("corpus vocab does not match model vocab");
    // The snapshot only depends on the model and the calibration batch, so a
    // neutral engine config is used regardless of what the run will look like.
    pp::EngineConfig ecfg;
    ecfg.plan.target_ratio = 0.0;
    ecfg.plan.skip_first_layers = 0;
    if (a.lambda) ecfg.lambda = *a.lambda;
    const pp::TokenBatch batch = calibration_batch(corpus, a.seq_len, a.batch_size);
    pp::Engine engine(std::move(m), pp::RunMode::Dense, ecfg);
    engine.calibrate(batch);
    engine.save_history_snapshot(a.out_history);
    std::cout << "wrote " << a.out_history << " (blocks=" << engine.history().size()
              << " s_cal=" << batch.s << " n_cal=" << batch.n << ")\n";
    return 0;
}

struct RunArgs {
    std::string config_path, model_path, corpus_path, mode;
    std::string report_path, aggregate_path, history_path, calib_corpus_path, reference_path;
    std::size_t calib_seq_len = 0;   // 0 = same as run seq_len
    std::size_t calib_batch_size = 0;
    std::optional<std::size_t> batch_size, seq_len, skip_layers, parallel_offset;
    std::optional<double> ratio, attention_ratio, mlp_ratio, probe_batch, probe_seq, alpha, lambda;
    std::string fusion, metric, selection_source;
    bool record_traces = false;
};

int cmd_run(const RunArgs& a) {
    CliConfig cfg;
    if (!a.config_path.empty()) cfg = load_cli_config(a.config_path);
    const std::string model_path = pick_path(a.model_path, cfg.paths.model, "--model");
    const std::string corpus_path = pick_path(a.corpus_path, cfg.paths.corpus, "--corpus");
    const pp::RunMode mode = pp::parse_run_mode(a.mode);

    pp::EngineConfig ecfg = cfg.engine;
    if (a.ratio) ecfg.plan.target_ratio = *a.ratio;
    if (a.attention_ratio) ecfg.plan.attention_ratio = *a.attention_ratio;
    if (a.mlp_ratio) ecfg.plan.mlp_ratio = *a.mlp_ratio;
    if (a.skip_layers) ecfg.plan.skip_first_layers = *a.skip_layers;
    if (a.probe_batch) ecfg.probe.batch_frac = *a.probe_batch;
    if (a.probe_seq) ecfg.probe.seq_frac = *a.probe_seq;
    if (a.parallel_offset) ecfg.probe.parallel_offset = *a.parallel_offset;
    if (!a.selection_source.empty())
        ecfg.probe.selection_source = pp::parse_selection_source(a.selection_source);
    if (!a.fusion.empty()) ecfg.fusion.kind = pp::parse_fusion_kind(a.fusion);
    if (a.alpha) ecfg.fusion.alpha = *a.alpha;
    if (!a.metric.empty()) ecfg.metric = pp::parse_metric(a.metric);
    if (a.lambda) ecfg.lambda = *a.lambda;
    if (a.record_traces) ecfg.record_traces = true;
    const std::size_t batch_size = a.batch_size ? *a.batch_size : cfg.run.batch_size;
    const std::size_t seq_len = a.seq_len ? *a.seq_len : cfg.run.seq_len;

    pp::Model model = pp::load_model(model_path);
    const pp::Corpus corpus = pp::load_corpus(corpus_path);
    if (corpus.vocab_size != model.cfg.vocab_size)
        throw pp::FormatError("corpus vocab does not match model vocab");
    const json effective = pp::engine_config_json(mode, ecfg, model.cfg, batch_size, seq_len);
    const std::string digest = pp::config_digest(effective);

    pp::Engine engine(std::move(model), mode, ecfg);
    if (engine.needs_calibration()) {
        const std::string history_path =
            !a.history_path.empty() ? a.history_path : cfg.paths.history;
        const std::string calib_path =
            !a.calib_corpus_path.empty() ? a.calib_corpus_path : cfg.paths.calibration;
        if (!history_path.empty()) {
            engine.load_history_snapshot(history_path);
        } else if (!calib_path.empty()) {
            const pp::Corpus calib = pp::load_corpus(calib_path);
            if (calib.vocab_size != engine.model().cfg.vocab_size)
                throw pp::FormatError("calibration corpus vocab does not match model vocab");
            const std::size_t cal_s = a.calib_seq_len ? a.calib_seq_len : seq_len;
            engine.calibrate(calibration_batch(calib, cal_s, a.calib_batch_size));
        } else {
            throw pp::ConfigError("mode '" + a.mode + "' needs --history or --calib-corpus");
        }
    }

    pp::MaskStream reference;
    const pp::MaskStream* reference_ptr = nullptr;
    if (!a.reference_path.empty()) {
        reference = pp::MaskStream::from_records(pp::read_report_jsonl(a.reference_path));
        reference_ptr = &reference;
    }

    const pp::CorpusResult result = engine.run_corpus(corpus.ids, batch_size, seq_len, digest,
                                                      reference_ptr);
    const std::string report_path = !a.report_path.empty() ? a.report_path : cfg.paths.report;
    if (!report_path.empty()) pp::write_report_jsonl(report_path, result.records);
    const json agg = pp::aggregate_to_json(result.aggregate);
    const std::string aggregate_path =
        !a.aggregate_path.empty() ? a.aggregate_path : cfg.paths.aggregate;
    if (!aggregate_path.empty()) {
        std::ofstream os(aggregate_path, std::ios::trunc);
        if (!os) throw pp::FormatError("cannot open for writing: " + aggregate_path);
        os << agg.dump(2) << '\n';
    }
    std::cout << agg.dump(2) << '\n';
    return 0;
}

struct AnalyzeArgs {
    std::string kind, out, prr_input, label = "run";
    std::vector<std::string> reports;
    std::optional<double> perf_dense, perf_pruned, runtime_dense, runtime_pruned;
};

int cmd_analyze(const AnalyzeArgs& a) {
    if (a.out.empty()) throw pp::ConfigError("analyze: --out is required");
    if (a.kind == "jaccard") {
        if (a.reports.size() != 3)
            throw pp::ConfigError("analyze --kind jaccard needs --reports <pp> <fixed> <oracle>");
        try {
            const pp::MaskStream spp = pp::MaskStream::from_records(pp::read_report_jsonl(a.reports[0]));
            const pp::MaskStream sfx = pp::MaskStream::from_records(pp::read_report_jsonl(a.reports[1]));
            const pp::MaskStream sor = pp::MaskStream::from_records(pp::read_report_jsonl(a.reports[2]));
            const std::vector<pp::JaccardRow> ppo = pp::jaccard_profile(spp, sor);
            const std::vector<pp::JaccardRow> fxo = pp::jaccard_profile(sfx, sor);
            pp::write_jaccard_csv(a.out, ppo, fxo);
        } catch (const pp::ShapeError& e) {
            throw pp::ConfigError(std::string("mismatched report grids: ") + e.what());
        }
        std::cout << "wrote " << a.out << "\n";
        return 0;
    }
    if (a.kind == "prr") {
        std::vector<pp::PrrRow> rows;
        if (!a.prr_input.empty()) {
            std::ifstream is(a.prr_input);
            if (!is) throw pp::FormatError("cannot open: " + a.prr_input);
            json j = json::parse(is, nullptr, false);
            if (j.is_discarded() || !j.is_array())
                throw pp::FormatError("prr input must be a JSON array of rows");
            for (const json& r : j) {
                check_keys(r, {"label", "perf_dense", "perf_pruned", "runtime_dense", "runtime_pruned"},
                           "prr row");
                pp::PrrRow row;
                row.label = r.at("label").get<std::string>();
                row.perf.perf_dense = r.at("perf_dense").get<double>();
                row.perf.perf_pruned = r.at("perf_pruned").get<double>();
                row.perf.runtime_dense = r.at("runtime_dense").get<double>();
                row.perf.runtime_pruned = r.at("runtime_pruned").get<double>();
                rows.push_back(row);
            }
        } else {
            if (!(a.perf_dense && a.perf_pruned && a.runtime_dense && a.runtime_pruned))
                throw pp::ConfigError(
                    "analyze --kind prr needs --prr-input or all of --perf-dense --perf-pruned "
                    "--runtime-dense --runtime-pruned");
            rows.push_back(
                pp::PrrRow{a.label, {*a.perf_dense, *a.perf_pruned, *a.runtime_dense, *a.runtime_pruned}});
        }
        pp::write_prr_csv(a.out, rows);
        std::cout << "wrote " << a.out << "\n";
        return 0;
    }
    if (a.kind == "flops") {
        if (a.reports.empty()) throw pp::ConfigError("analyze --kind flops needs aggregate --reports");
        std::vector<pp::FlopsSummaryRow> rows;
        for (const std::string& path : a.reports) {
            std::ifstream is(path);
            if (!is) throw pp::FormatError("cannot open: " + path);
            json j = json::parse(is, nullptr, false);
            if (j.is_discarded()) throw pp::FormatError("invalid aggregate JSON: " + path);
            rows.push_back(pp::flops_summary_row(pp::aggregate_from_json(j)));
        }
        pp::write_flops_csv(a.out, rows);
        std::cout << "wrote " << a.out << "\n";
        return 0;
    }
    throw pp::ConfigError("unknown analyze kind: " + a.kind);
}

struct FlopsArgs {
    std::string model_path;
    std::size_t layers = 32, d_model = 4096, heads = 32, mlp = 11008;
    std::size_t n = 20, s = 1024;
    double probe_batch = 0.05, probe_seq = 0.5;
};

int cmd_flops(const FlopsArgs& a) {
    std::uint64_t dense = 0, probe = 0;
    pp::ProbeConfig pc;
    pc.batch_frac = a.probe_batch;
    pc.seq_frac = a.probe_seq;
    pc.validate();
    if (!a.model_path.empty()) {
        const pp::Model m = pp::load_model(a.model_path);
        dense = pp::flops_dense_model(m, a.n, a.s);
        probe = pp::flops_probe_model(m, pc, a.n, a.s);
    } else {
        dense = pp::flops_dense_layers(a.layers, a.n, a.s, a.d_model, a.mlp);
        probe = pp::flops_probe_layers(a.layers, pc.probe_batch(a.n), pc.probe_seq(a.s), a.d_model, a.mlp);
    }
    const json out{{"dense_flops", dense},
                   {"probe_flops", probe},
                   {"probe_share", static_cast<double>(probe) / static_cast<double>(dense)},
                   {"n", a.n},
                   {"s", a.s},
                   {"probe_batch", a.probe_batch},
                   {"probe_seq", a.probe_seq}};
    std::cout << out.dump(2) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"probe-driven dynamic structured pruning for a synthetic transformer"};
    app.require_subcommand(1);

    GenModelArgs gm;
    CLI::App* gen_model = app.add_subcommand("gen-model", "generate a synthetic model (PPW1)");
    gen_model->add_option("--config", gm.config_path, "JSON config file");
    gen_model->add_option("--out", gm.out, "output weight file")->required();
    gen_model->add_option("--seed", gm.seed, "generation seed");
    gen_model->add_option("--layers", gm.layers, "transformer layers");
    gen_model->add_option("--d-model", gm.d_model, "feature width");
    gen_model->add_option("--heads", gm.heads, "attention heads");
    gen_model->add_option("--mlp", gm.mlp, "MLP hidden width");
    gen_model->add_option("--vocab", gm.vocab, "vocabulary size");
    gen_model->add_option("--outlier-fraction", gm.outlier_fraction, "fraction of amplified channels");
    gen_model->add_option("--outlier-gain", gm.outlier_gain, "amplification gain");

    GenCorpusArgs gc;
    CLI::App* gen_corpus = app.add_subcommand("gen-corpus", "generate a token corpus (PPT1)");
    gen_corpus->add_option("--out", gc.out, "output corpus file")->required();
    gen_corpus->add_option("--vocab", gc.vocab, "vocabulary size (uniform mode)");
    gen_corpus->add_option("--count", gc.count, "token count")->required();
    gen_corpus->add_option("--seed", gc.seed, "sampling seed");
    gen_corpus->add_option("--model", gc.model_path, "sample tokens from this model");
    gen_corpus->add_option("--seq-len", gc.seq_len, "sequence length for model sampling");

    CalibrateArgs ca;
    CLI::App* calibrate = app.add_subcommand("calibrate", "compute historical states (PPH1)");
    calibrate->add_option("--config", ca.config_path, "JSON config file");
    calibrate->add_option("--model", ca.model_path, "model weight file");
    calibrate->add_option("--corpus", ca.corpus_path, "calibration corpus");
    calibrate->add_option("--out-history", ca.out_history, "output history snapshot")->required();
    calibrate->add_option("--seq-len", ca.seq_len, "calibration sequence length");
    calibrate->add_option("--batch-size", ca.batch_size, "limit calibration samples (0 = all)");
    calibrate->add_option("--lambda", ca.lambda, "EMA coefficient");

    RunArgs ra;
    CLI::App* run = app.add_subcommand("run", "run a corpus through an execution mode");
    run->add_option("--config", ra.config_path, "JSON config file");
    run->add_option("--model", ra.model_path, "model weight file");
    run->add_option("--corpus", ra.corpus_path, "evaluation corpus");
    run->add_option("--mode", ra.mode, "dense|fixed|full-batch|pp|pp-parallel")->required();
    run->add_option("--report", ra.report_path, "per-block JSON-lines output");
    run->add_option("--aggregate", ra.aggregate_path, "aggregate JSON output");
    run->add_option("--history", ra.history_path, "history snapshot to load");
    run->add_option("--calib-corpus", ra.calib_corpus_path, "calibrate inline from this corpus");
    run->add_option("--calib-seq-len", ra.calib_seq_len, "calibration sequence length");
    run->add_option("--calib-batch-size", ra.calib_batch_size, "calibration sample limit (0 = all)");
    run->add_option("--reference-report", ra.reference_path, "mask stream to compare against");
    run->add_option("--batch-size", ra.batch_size, "evaluation batch size");
    run->add_option("--seq-len", ra.seq_len, "evaluation sequence length");
    run->add_option("--ratio", ra.ratio, "target pruning ratio");
    run->add_option("--attention-ratio", ra.attention_ratio, "per-kind override for attention blocks");
    run->add_option("--mlp-ratio", ra.mlp_ratio, "per-kind override for MLP blocks");
    run->add_option("--skip-layers", ra.skip_layers, "unpruned leading layers");
    run->add_option("--probe-batch", ra.probe_batch, "probe batch fraction");
    run->add_option("--probe-seq", ra.probe_seq, "probe sequence fraction");
    run->add_option("--parallel-offset", ra.parallel_offset, "pp-parallel residual offset");
    run->add_option("--selection-source", ra.selection_source, "residual|post_layernorm");
    run->add_option("--fusion", ra.fusion, "importance_scaled|fixed_ratio|probe_only|history_only");
    run->add_option("--alpha", ra.alpha, "fixed_ratio coefficient");
    run->add_option("--metric", ra.metric, "ppsp|wanda_sp|flap");
    run->add_option("--lambda", ra.lambda, "EMA coefficient");
    run->add_flag("--record-traces", ra.record_traces, "record per-block norm traces");

    AnalyzeArgs an;
    CLI::App* analyze = app.add_subcommand("analyze", "emit CSV analyses from reports");
    analyze->add_option("--kind", an.kind, "jaccard|prr|flops")->required();
    analyze->add_option("--out", an.out, "output CSV path")->required();
    analyze->add_option("--reports", an.reports, "report files (jaccard: pp fixed oracle jsonl; flops: aggregate json)");
    analyze->add_option("--prr-input", an.prr_input, "JSON array of PRR rows");
    analyze->add_option("--label", an.label, "label for single-row PRR");
    analyze->add_option("--perf-dense", an.perf_dense, "dense performance");
    analyze->add_option("--perf-pruned", an.perf_pruned, "pruned performance");
    analyze->add_option("--runtime-dense", an.runtime_dense, "dense runtime (s)");
    analyze->add_option("--runtime-pruned", an.runtime_pruned, "pruned runtime (s)");

    FlopsArgs fl;
    CLI::App* flops = app.add_subcommand("flops", "analytic dense vs probe FLOPs");
    flops->add_option("--model", fl.model_path, "take shapes from this model file");
    flops->add_option("--layers", fl.layers, "layer count");
    flops->add_option("--d-model", fl.d_model, "feature width");
    flops->add_option("--heads", fl.heads, "attention heads");
    flops->add_option("--mlp", fl.mlp, "MLP hidden width");
    flops->add_option("--n", fl.n, "batch size");
    flops->add_option("--s", fl.s, "sequence length");
    flops->add_option("--probe-batch", fl.probe_batch, "probe batch fraction");
    flops->add_option("--probe-seq", fl.probe_seq, "probe sequence fraction");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen_model->parsed()) return cmd_gen_model(gm);
        if (gen_corpus->parsed()) return cmd_gen_corpus(gc);
        if (calibrate->parsed()) return cmd_calibrate(ca);
        if (run->parsed()) return cmd_run(ra);
        if (analyze->parsed()) return cmd_analyze(an);
        if (flops->parsed()) return cmd_flops(fl);
    } catch (const pp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const pp::FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const pp::ValueError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
