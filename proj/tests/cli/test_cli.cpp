// End-to-end tests driving the ppcli binary (path injected as PPCLI_PATH).

#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "pp/eval.hpp"
#include "pp/model.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output; // stdout + stderr
};

CmdResult run_cli(const std::string& args) {
    const std::string cmd = std::string(PPCLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    std::string out;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (fgets(buf.data(), buf.size(), pipe)) out += buf.data();
    const int status = pclose(pipe);
    CmdResult r;
    r.output = out;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct Workspace {
    fs::path dir;
    Workspace() {
        dir = fs::temp_directory_path() / ("ppcli_test_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Workspace() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
    std::string path(const char* name) const { return (dir / name).string(); }
};

} // namespace

TEST_CASE("gen-model is deterministic and validates its config") {
    Workspace ws;
    const std::string base = " --layers 2 --d-model 16 --heads 2 --mlp 24 --vocab 40 --seed 7 --out ";
    CHECK(run_cli("gen-model" + base + ws.path("a.ppw")).exit_code == 0);
    CHECK(run_cli("gen-model" + base + ws.path("b.ppw")).exit_code == 0);
    CHECK(slurp(ws.path("a.ppw")) == slurp(ws.path("b.ppw")));

    // default config (6 layers, d 64, heads 4, mlp 256, vocab 512) well under 5s
    const auto t0 = std::chrono::steady_clock::now();
    CHECK(run_cli("gen-model --seed 1 --out " + ws.path("default.ppw")).exit_code == 0);
    CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 5.0);

    const CmdResult bad =
        run_cli("gen-model --layers 2 --d-model 15 --heads 2 --mlp 24 --vocab 40 --out " +
                ws.path("c.ppw"));
    CHECK(bad.exit_code == 2);
    CHECK(bad.output.find("divisible") != std::string::npos);
}

TEST_CASE("gen-corpus modes") {
    Workspace ws;
    SECTION("uniform is deterministic and reloadable") {
        CHECK(run_cli("gen-corpus --vocab 64 --count 100 --seed 3 --out " + ws.path("a.ppt"))
                  .exit_code == 0);
        CHECK(run_cli("gen-corpus --vocab 64 --count 100 --seed 3 --out " + ws.path("b.ppt"))
                  .exit_code == 0);
        CHECK(slurp(ws.path("a.ppt")) == slurp(ws.path("b.ppt")));
        const pp::Corpus c = pp::load_corpus(ws.path("a.ppt"));
        CHECK(c.ids.size() == 100);
    }
    SECTION("model-sampled corpus uses the model vocabulary") {
        REQUIRE(run_cli("gen-model --layers 1 --d-model 16 --heads 2 --mlp 16 --vocab 32 --seed 5 "
                        "--out " +
                        ws.path("m.ppw"))
                    .exit_code == 0);
        CHECK(run_cli("gen-corpus --count 64 --seq-len 16 --seed 9 --model " + ws.path("m.ppw") +
                      " --out " + ws.path("s.ppt"))
                  .exit_code == 0);
        const pp::Corpus c = pp::load_corpus(ws.path("s.ppt"));
        CHECK(c.vocab_size == 32);
        CHECK(c.ids.size() == 64);
    }
    SECTION("PP_SEED env is the seed fallback") {
        const std::string cmd_a = "PP_SEED=77 " + std::string(PPCLI_PATH) +
                                  " gen-corpus --vocab 32 --count 40 --out " + ws.path("e1.ppt") +
                                  " >/dev/null 2>&1";
        const std::string cmd_b = "PP_SEED=77 " + std::string(PPCLI_PATH) +
                                  " gen-corpus --vocab 32 --count 40 --out " + ws.path("e2.ppt") +
                                  " >/dev/null 2>&1";
        REQUIRE(std::system(cmd_a.c_str()) == 0);
        REQUIRE(std::system(cmd_b.c_str()) == 0);
        CHECK(slurp(ws.path("e1.ppt")) == slurp(ws.path("e2.ppt")));
        // a different seed changes the stream
        const std::string cmd_c = "PP_SEED=78 " + std::string(PPCLI_PATH) +
                                  " gen-corpus --vocab 32 --count 40 --out " + ws.path("e3.ppt") +
                                  " >/dev/null 2>&1";
        REQUIRE(std::system(cmd_c.c_str()) == 0);
        CHECK(slurp(ws.path("e1.ppt")) != slurp(ws.path("e3.ppt")));
    }
}

namespace {

// One shared pipeline fixture: model, corpora, calibration snapshot.
struct Pipeline {
    Workspace ws;
    std::string model, corpus, calib, history;

    Pipeline() {
        model = ws.path("model.ppw");
        corpus = ws.path("eval.ppt");
        calib = ws.path("calib.ppt");
        history = ws.path("hist.pph");
        REQUIRE(run_cli("gen-model --layers 3 --d-model 32 --heads 4 --mlp 48 --vocab 96 --seed 11 "
                        "--out " +
                        model)
                    .exit_code == 0);
        REQUIRE(run_cli("gen-corpus --vocab 96 --count 256 --seed 13 --out " + corpus).exit_code == 0);
        REQUIRE(run_cli("gen-corpus --vocab 96 --count 128 --seed 17 --out " + calib).exit_code == 0);
        REQUIRE(run_cli("calibrate --model " + model + " --corpus " + calib +
                        " --seq-len 16 --out-history " + history)
                    .exit_code == 0);
    }

    std::string run_mode(const std::string& mode, const std::string& extra, const char* report) {
        const std::string rp = ws.path(report);
        const CmdResult r = run_cli("run --model " + model + " --corpus " + corpus + " --mode " +
                                    mode + " --batch-size 4 --seq-len 16 --skip-layers 1 " + extra +
                                    " --report " + rp);
        REQUIRE(r.exit_code == 0);
        return rp;
    }
};

} // namespace

TEST_CASE("calibrate rejects corpora shorter than one sequence") {
    Workspace ws;
    REQUIRE(run_cli("gen-model --layers 1 --d-model 16 --heads 2 --mlp 16 --vocab 32 --seed 5 "
                    "--out " +
                    ws.path("m.ppw"))
                .exit_code == 0);
    REQUIRE(run_cli("gen-corpus --vocab 32 --count 8 --seed 3 --out " + ws.path("c.ppt")).exit_code ==
            0);
    const CmdResult r = run_cli("calibrate --model " + ws.path("m.ppw") + " --corpus " +
                                ws.path("c.ppt") + " --seq-len 16 --out-history " + ws.path("h.pph"));
    CHECK(r.exit_code == 2);
}

TEST_CASE("run pipeline") {
    Pipeline p;

    SECTION("dense equals pp at ratio zero") {
        const CmdResult dense = run_cli("run --model " + p.model + " --corpus " + p.corpus +
                                        " --mode dense --batch-size 4 --seq-len 16 --ratio 0");
        REQUIRE(dense.exit_code == 0);
        const CmdResult pp0 = run_cli("run --model " + p.model + " --corpus " + p.corpus +
                                      " --mode pp --history " + p.history +
                                      " --batch-size 4 --seq-len 16 --ratio 0");
        REQUIRE(pp0.exit_code == 0);
        const json a = json::parse(dense.output);
        const json b = json::parse(pp0.output);
        CHECK(a.at("perplexity").get<double>() == b.at("perplexity").get<double>());
    }

    SECTION("pp at full probe with probe_only fusion matches full-batch masks") {
        const std::string rp = p.run_mode(
            "pp", "--history " + p.history + " --probe-batch 1.0 --probe-seq 1.0 --fusion probe_only",
            "pp_full.jsonl");
        const std::string rf = p.run_mode("full-batch", "--history " + p.history, "fb.jsonl");
        const auto a = pp::read_report_jsonl(rp);
        const auto b = pp::read_report_jsonl(rf);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].retained == b[i].retained);
    }

    SECTION("report lines satisfy the schema") {
        const std::string rp =
            p.run_mode("pp", "--history " + p.history, "schema.jsonl");
        std::ifstream is(rp);
        std::string line;
        std::size_t lines = 0;
        while (std::getline(is, line)) {
            const json j = json::parse(line);
            for (const char* key : {"batch", "block", "kind", "retained_indices", "units", "ratio",
                                    "probe_flops", "block_flops", "metric"})
                CHECK(j.contains(key));
            ++lines;
        }
        CHECK(lines == 4 * 6); // 4 batches x 6 blocks
    }

    SECTION("reruns are byte-identical") {
        const std::string r1 = p.run_mode("pp", "--history " + p.history, "det1.jsonl");
        const std::string r2 = p.run_mode("pp", "--history " + p.history, "det2.jsonl");
        CHECK(slurp(r1) == slurp(r2));
    }

    SECTION("inline calibration matches the snapshot route") {
        const std::string r1 = p.run_mode("fixed", "--history " + p.history, "snap.jsonl");
        const std::string r2 = p.run_mode(
            "fixed", "--calib-corpus " + p.calib + " --calib-seq-len 16", "inline.jsonl");
        CHECK(slurp(r1) == slurp(r2));
    }

    SECTION("missing calibration for pruned modes exits 2") {
        const CmdResult r = run_cli("run --model " + p.model + " --corpus " + p.corpus +
                                    " --mode pp --batch-size 4 --seq-len 16 --skip-layers 1");
        CHECK(r.exit_code == 2);
        CHECK(r.output.find("--history or --calib-corpus") != std::string::npos);
    }

    SECTION("aggregate file matches stdout and carries the digest") {
        const std::string agg_path = p.ws.path("agg.json");
        const CmdResult r = run_cli("run --model " + p.model + " --corpus " + p.corpus +
                                    " --mode fixed --history " + p.history +
                                    " --batch-size 4 --seq-len 16 --skip-layers 1 --aggregate " +
                                    agg_path);
        REQUIRE(r.exit_code == 0);
        const json from_stdout = json::parse(r.output);
        const json from_file = json::parse(slurp(agg_path));
        CHECK(from_stdout == from_file);
        CHECK(from_stdout.at("config_digest").get<std::string>().size() == 16);
        CHECK(from_stdout.at("mode") == "fixed");
    }

    SECTION("mode and config variants run end to end") {
        for (const std::string extra :
             {std::string("--mode pp-parallel --history ") + p.history,
              std::string("--mode pp-parallel --parallel-offset 2 --history ") + p.history,
              std::string("--mode pp --fusion fixed_ratio --alpha 0.1 --history ") + p.history,
              std::string("--mode pp --selection-source post_layernorm --history ") + p.history,
              std::string("--mode pp --metric wanda_sp --history ") + p.history,
              std::string("--mode fixed --metric flap --calib-corpus ") + p.calib +
                  " --calib-seq-len 16",
              std::string("--mode pp --ratio 0 --mlp-ratio 0.5 --history ") + p.history}) {
            const CmdResult r = run_cli("run --model " + p.model + " --corpus " + p.corpus +
                                        " --batch-size 4 --seq-len 16 --skip-layers 1 " + extra);
            INFO(extra << "\n" << r.output);
            CHECK(r.exit_code == 0);
        }
        // invalid combos exit 2
        CHECK(run_cli("run --model " + p.model + " --corpus " + p.corpus +
                      " --mode pp --metric flap --history " + p.history +
                      " --batch-size 4 --seq-len 16 --skip-layers 1")
                  .exit_code == 2);
        CHECK(run_cli("run --model " + p.model + " --corpus " + p.corpus +
                      " --mode fixed --metric flap --history " + p.history +
                      " --batch-size 4 --seq-len 16 --skip-layers 1")
                  .exit_code == 2);
    }

    SECTION("reference report produces per-block jaccard in the aggregate") {
        const std::string ref = p.run_mode("full-batch", "--history " + p.history, "ref.jsonl");
        const CmdResult r = run_cli("run --model " + p.model + " --corpus " + p.corpus +
                                    " --mode pp --history " + p.history +
                                    " --batch-size 4 --seq-len 16 --skip-layers 1 "
                                    "--reference-report " +
                                    ref);
        REQUIRE(r.exit_code == 0);
        const json agg = json::parse(r.output);
        REQUIRE(agg.contains("jaccard_vs_reference"));
        CHECK(agg.at("jaccard_vs_reference").size() == 6);
    }
}

TEST_CASE("analyze") {
    Pipeline p;
    const std::string rpp = p.run_mode("pp", "--history " + p.history, "a_pp.jsonl");
    const std::string rfx = p.run_mode("fixed", "--history " + p.history, "a_fx.jsonl");
    const std::string rfb = p.run_mode("full-batch", "--history " + p.history, "a_fb.jsonl");

    SECTION("jaccard self comparison is all ones") {
        const std::string out = p.ws.path("self.csv");
        const CmdResult r = run_cli("analyze --kind jaccard --reports " + rpp + " " + rpp + " " +
                                    rpp + " --out " + out);
        REQUIRE(r.exit_code == 0);
        std::ifstream is(out);
        std::string header, line;
        std::getline(is, header);
        CHECK(header == "block,kind,j_pp_oracle,j_fixed_oracle");
        std::size_t rows = 0;
        while (std::getline(is, line)) {
            CHECK(line.find("1.000000,1.000000") != std::string::npos);
            ++rows;
        }
        CHECK(rows == 6);
    }

    SECTION("three-way comparison runs") {
        const std::string out = p.ws.path("cmp.csv");
        const CmdResult r = run_cli("analyze --kind jaccard --reports " + rpp + " " + rfx + " " +
                                    rfb + " --out " + out);
        CHECK(r.exit_code == 0);
    }

    SECTION("mismatched grids exit 2") {
        // rerun pp over a shorter corpus to change the grid
        Workspace ws2;
        const std::string small = ws2.path("small.ppt");
        REQUIRE(run_cli("gen-corpus --vocab 96 --count 128 --seed 29 --out " + small).exit_code == 0);
        const std::string rp2 = ws2.path("small.jsonl");
        REQUIRE(run_cli("run --model " + p.model + " --corpus " + small +
                        " --mode pp --history " + p.history +
                        " --batch-size 4 --seq-len 16 --skip-layers 1 --report " + rp2)
                    .exit_code == 0);
        const CmdResult r = run_cli("analyze --kind jaccard --reports " + rpp + " " + rp2 + " " +
                                    rfb + " --out " + p.ws.path("bad.csv"));
        CHECK(r.exit_code == 2);
    }

    SECTION("prr reproduces the reference value") {
        const std::string out = p.ws.path("prr.csv");
        const CmdResult r = run_cli(
            "analyze --kind prr --label pp --perf-dense 6.0 --perf-pruned 16.8 "
            "--runtime-dense 1.028 --runtime-pruned 0.739 --out " +
            out);
        REQUIRE(r.exit_code == 0);
        CHECK(slurp(out).find("37.37") != std::string::npos);
    }

    SECTION("flops summary consumes aggregate files") {
        const std::string agg = p.ws.path("fl_agg.json");
        REQUIRE(run_cli("run --model " + p.model + " --corpus " + p.corpus +
                        " --mode pp --history " + p.history +
                        " --batch-size 4 --seq-len 16 --skip-layers 1 --aggregate " + agg)
                    .exit_code == 0);
        const std::string out = p.ws.path("flops.csv");
        const CmdResult r = run_cli("analyze --kind flops --reports " + agg + " --out " + out);
        REQUIRE(r.exit_code == 0);
        std::ifstream is(out);
        std::string header, line;
        std::getline(is, header);
        CHECK(header == "mode,probe_flops,block_flops,dense_flops,probe_share");
        REQUIRE(std::getline(is, line));
        const double share = std::stod(line.substr(line.rfind(',') + 1));
        CHECK(share >= 0.0);
        CHECK(share <= 1.0);
    }
}

TEST_CASE("config file handling") {
    Workspace ws;
    SECTION("unknown keys are rejected with exit 2") {
        std::ofstream cfg(ws.path("bad.json"));
        cfg << R"({"version": 1, "modle": {}})";
        cfg.close();
        const CmdResult r =
            run_cli("gen-model --config " + ws.path("bad.json") + " --out " + ws.path("x.ppw"));
        CHECK(r.exit_code == 2);
        CHECK(r.output.find("unknown key") != std::string::npos);
    }
    SECTION("missing version is rejected") {
        std::ofstream cfg(ws.path("nover.json"));
        cfg << R"({"seed": 3})";
        cfg.close();
        CHECK(run_cli("gen-model --config " + ws.path("nover.json") + " --out " + ws.path("x.ppw"))
                  .exit_code == 2);
    }
    SECTION("flags override config values") {
        std::ofstream cfg(ws.path("cfg.json"));
        cfg << R"({"version": 1, "seed": 5, "model": {"num_layers": 1, "d_model": 16,
                   "num_heads": 2, "mlp_hidden": 16, "vocab_size": 32}})";
        cfg.close();
        REQUIRE(run_cli("gen-model --config " + ws.path("cfg.json") + " --out " + ws.path("a.ppw"))
                    .exit_code == 0);
        REQUIRE(run_cli("gen-model --config " + ws.path("cfg.json") + " --seed 6 --out " +
                        ws.path("b.ppw"))
                    .exit_code == 0);
        CHECK(slurp(ws.path("a.ppw")) != slurp(ws.path("b.ppw")));
        const pp::Model m = pp::load_model(ws.path("a.ppw"));
        CHECK(m.cfg.num_layers == 1);
        CHECK(m.cfg.seed == 5);
    }
}

TEST_CASE("format errors exit 3") {
    Workspace ws;
    std::ofstream bad(ws.path("bad.ppw"), std::ios::binary);
    bad << "NOPE this is not a weight file";
    bad.close();
    const CmdResult r = run_cli("run --model " + ws.path("bad.ppw") +
                                " --corpus x.ppt --mode dense");
    CHECK(r.exit_code == 3);
}

TEST_CASE("flops subcommand reports the 7B-scale probing share") {
    const CmdResult r = run_cli(
        "flops --layers 32 --d-model 4096 --heads 32 --mlp 11008 --n 20 --s 1024 "
        "--probe-batch 0.05 --probe-seq 0.5");
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(r.output);
    const double share = j.at("probe_share").get<double>();
    CHECK(share > 0.010);
    CHECK(share < 0.020);
}
