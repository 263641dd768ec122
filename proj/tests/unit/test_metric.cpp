#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "pp/metric.hpp"

using namespace pp;

TEST_CASE("ppsp worked example") {
    const Matrix w = Matrix::from_rows({{1, 2}, {3, 4}});
    const std::vector<float> xsq{1.0f, 4.0f};
    const std::vector<float> s = ppsp_scores(w, xsq);
    REQUIRE(s.size() == 2);
    CHECK(s[0] == Catch::Approx(std::sqrt(82.0)).epsilon(1e-5));
    CHECK(s[1] == Catch::Approx(std::sqrt(4352.0)).epsilon(1e-5));
}

TEST_CASE("ppsp properties") {
    SECTION("zero statistics give zero scores") {
        const Matrix w = Matrix::from_rows({{1, 2}, {3, 4}});
        for (float v : ppsp_scores(w, std::vector<float>{0.0f, 0.0f})) CHECK(v == 0.0f);
    }
    SECTION("scaling the statistics scales scores linearly, order unchanged") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<float> wd(-2.0f, 2.0f), xd(0.0f, 4.0f);
        Matrix w(5, 7);
        for (float& v : w.data()) v = wd(rng);
        std::vector<float> xsq(7), scaled(7);
        for (std::size_t k = 0; k < 7; ++k) {
            xsq[k] = xd(rng);
            scaled[k] = 3.0f * xsq[k];
        }
        const std::vector<float> a = ppsp_scores(w, xsq);
        const std::vector<float> b = ppsp_scores(w, scaled);
        for (std::size_t k = 0; k < 7; ++k) CHECK(b[k] == Catch::Approx(3.0 * a[k]).epsilon(1e-5));
        CHECK(argsort_desc(a) == argsort_desc(b));
    }
    SECTION("closed form equals brute force on random instances") {
        std::mt19937_64 rng(17);
        std::uniform_real_distribution<float> wd(-2.0f, 2.0f), xd(0.0f, 4.0f);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t rows = 1 + rng() % 16, cols = 1 + rng() % 16;
            Matrix w(rows, cols);
            for (float& v : w.data()) v = wd(rng);
            std::vector<float> xsq(cols);
            for (float& v : xsq) v = xd(rng);
            const std::vector<float> got = ppsp_scores(w, xsq);
            for (std::size_t k = 0; k < cols; ++k) {
                double acc = 0.0;
                for (std::size_t i = 0; i < rows; ++i) {
                    const double e = static_cast<double>(w.at(i, k)) * w.at(i, k) * xsq[k];
                    acc += e * e;
                }
                const double brute = std::sqrt(acc);
                CHECK(got[k] == Catch::Approx(brute).epsilon(1e-5).margin(1e-12));
            }
        }
    }
    SECTION("length mismatch") {
        CHECK_THROWS_AS(ppsp_scores(Matrix::identity(2), std::vector<float>{1.0f}), ShapeError);
    }
}

TEST_CASE("wanda_sp worked examples") {
    const Matrix w = Matrix::from_rows({{1, 2}, {3, 4}});
    SECTION("hand-computed column sums") {
        const std::vector<float> s = wanda_sp_scores(w, std::vector<float>{1.0f, 2.0f});
        CHECK(s == std::vector<float>{4.0f, 12.0f});
    }
    SECTION("zero weights give zero scores") {
        const Matrix z(3, 2);
        for (float v : wanda_sp_scores(z, std::vector<float>{1.0f, 2.0f})) CHECK(v == 0.0f);
    }
    SECTION("identity weights pass the norms through") {
        const std::vector<float> s = wanda_sp_scores(Matrix::identity(3), std::vector<float>{5, 6, 7});
        CHECK(s == std::vector<float>{5.0f, 6.0f, 7.0f});
    }
}

TEST_CASE("squared per-weight importance preserves the argsort") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<float> wd(-3.0f, 3.0f), xd(0.0f, 2.0f);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t rows = 1 + rng() % 8, cols = 1 + rng() % 8;
        Matrix w(rows, cols);
        for (float& v : w.data()) v = wd(rng);
        std::vector<float> xnorm(cols);
        for (float& v : xnorm) v = xd(rng);
        const Matrix per = wanda_per_weight(w, xnorm);
        std::vector<float> flat(per.data().begin(), per.data().end());
        std::vector<float> squared(flat.size());
        for (std::size_t i = 0; i < flat.size(); ++i)
            squared[i] = static_cast<float>(static_cast<double>(flat[i]) * flat[i]);
        CHECK(argsort_desc(flat) == argsort_desc(squared));
    }
}

TEST_CASE("flap worked examples") {
    SECTION("constant column scores zero") {
        const Matrix w = Matrix::identity(1);
        const Matrix x = Matrix::from_rows({{2}, {2}, {2}});
        CHECK(flap_scores(w, x)[0] == 0.0f);
    }
    SECTION("hand variance") {
        const Matrix w = Matrix::identity(1); // column norm^2 = 1
        const Matrix x = Matrix::from_rows({{0}, {2}});
        CHECK(flap_scores(w, x)[0] == Catch::Approx(2.0)); // var = 2 with divisor n-1
    }
    SECTION("weight scaling is quadratic") {
        const Matrix x = Matrix::from_rows({{0, 1}, {2, 3}});
        Matrix w1 = Matrix::identity(2);
        Matrix w3 = Matrix::identity(2);
        w3.at(0, 0) = 3.0f;
        w3.at(1, 1) = 3.0f;
        const std::vector<float> a = flap_scores(w1, x);
        const std::vector<float> b = flap_scores(w3, x);
        CHECK(b[0] == Catch::Approx(9.0 * a[0]));
        CHECK(b[1] == Catch::Approx(9.0 * a[1]));
    }
    SECTION("needs two observations") {
        CHECK_THROWS_AS(flap_scores(Matrix::identity(1), Matrix::from_rows({{1}})), ValueError);
    }
}

TEST_CASE("aggregate_heads") {
    CHECK(aggregate_heads(std::vector<float>{1, 2, 3}, 1) == std::vector<float>{1, 2, 3});
    CHECK(aggregate_heads(std::vector<float>{3, 4}, 2) == std::vector<float>{5});
    CHECK(aggregate_heads(std::vector<float>{0, 0, 3, 4}, 2) == std::vector<float>{0, 5});
    CHECK_THROWS_AS(aggregate_heads(std::vector<float>{1, 2, 3}, 2), ShapeError);
}

TEST_CASE("select_mask") {
    SECTION("ratio zero keeps everything") {
        const ChannelMask m = select_mask(std::vector<float>{1, 2, 3}, 0.0, Granularity::Channel, 4);
        CHECK(m.is_full());
        CHECK(m.block_index == 4);
    }
    SECTION("keeps the top scores") {
        const ChannelMask m =
            select_mask(std::vector<float>{5, 1, 9, 2}, 0.5, Granularity::Channel, 0);
        CHECK(m.retained == std::vector<std::size_t>{0, 2});
    }
    SECTION("ties break by ascending index") {
        const ChannelMask m =
            select_mask(std::vector<float>{7, 7, 7, 7}, 0.5, Granularity::Channel, 0);
        CHECK(m.retained == std::vector<std::size_t>{0, 1});
    }
    SECTION("at least one unit survives") {
        const ChannelMask m = select_mask(std::vector<float>{3, 1}, 0.9, Granularity::Head, 0);
        CHECK(m.retained == std::vector<std::size_t>{0});
    }
    SECTION("prune count rounds half away from zero") {
        // ratio 0.5 of 5 units -> round(2.5) = 3 pruned, 2 retained
        const ChannelMask m =
            select_mask(std::vector<float>{5, 4, 3, 2, 1}, 0.5, Granularity::Channel, 0);
        CHECK(m.retained.size() == 2);
    }
    SECTION("positive scaling of scores leaves the selection unchanged") {
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<float> dist(0.0f, 9.0f);
        std::vector<float> scores(16), scaled(16);
        for (std::size_t i = 0; i < 16; ++i) {
            scores[i] = dist(rng);
            scaled[i] = 2.5f * scores[i];
        }
        CHECK(select_mask(scores, 0.4, Granularity::Channel, 0).retained ==
              select_mask(scaled, 0.4, Granularity::Channel, 0).retained);
    }
    SECTION("invalid ratio") {
        CHECK_THROWS_AS(select_mask(std::vector<float>{1.0f}, 1.0, Granularity::Channel, 0),
                        ConfigError);
    }
}

TEST_CASE("select_mask retains exactly units - round(ratio * units)") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t units = 2 + rng() % 64;
        const double ratio = (rng() % 90) / 100.0;
        std::vector<float> scores(units);
        for (float& v : scores) v = dist(rng);
        const ChannelMask m = select_mask(scores, ratio, Granularity::Channel, 0);
        std::size_t pruned = static_cast<std::size_t>(std::llround(ratio * units));
        if (pruned >= units) pruned = units - 1;
        CHECK(m.retained.size() == units - pruned);
        m.validate();
    }
}

TEST_CASE("prune ratio plan") {
    PruneRatioPlan plan;
    plan.target_ratio = 0.2;
    plan.skip_first_layers = 3;
    SECTION("rescaling reproduces the per-block ratios of a 32-layer model") {
        CHECK(plan.per_block_ratio(64) == Catch::Approx(0.2 * 32.0 / 29.0)); // ~22%
        plan.target_ratio = 0.4;
        CHECK(plan.per_block_ratio(64) == Catch::Approx(0.4 * 32.0 / 29.0)); // ~44%
    }
    SECTION("skipped blocks stay dense and the average hits the target") {
        plan.target_ratio = 0.4;
        const std::size_t blocks = 64;
        double sum = 0.0;
        for (std::size_t l = 0; l < blocks; ++l) {
            const double r = plan.ratio_for_block(l, blocks, l % 2 == 0 ? BlockKind::Attention : BlockKind::Mlp);
            if (l < 6) CHECK(r == 0.0);
            sum += r;
        }
        CHECK(sum / blocks == Catch::Approx(0.4).epsilon(1e-9));
    }
    SECTION("cap at 0.95") {
        plan.target_ratio = 0.9;
        plan.skip_first_layers = 10;
        CHECK(plan.per_block_ratio(64) == 0.95);
    }
    SECTION("all layers skipped with nonzero target is rejected") {
        plan.skip_first_layers = 32;
        CHECK_THROWS_AS(plan.validate(64), ConfigError);
        plan.target_ratio = 0.0;
        plan.validate(64); // ratio zero is fine
    }
    SECTION("per-kind overrides replace the rescaled ratio for their block kind") {
        plan.target_ratio = 0.4;
        plan.skip_first_layers = 0;
        plan.attention_ratio = 0.2;
        CHECK(plan.ratio_for_block(0, 8, BlockKind::Attention) == 0.2);
        CHECK(plan.ratio_for_block(1, 8, BlockKind::Mlp) == Catch::Approx(0.4));
        plan.mlp_ratio = 0.0;
        CHECK(plan.ratio_for_block(1, 8, BlockKind::Mlp) == 0.0);
        plan.attention_ratio = 1.5;
        CHECK_THROWS_AS(plan.validate(8), ConfigError);
    }
}

TEST_CASE("per-kind ratio overrides flow through the block schedule") {
    PruneRatioPlan plan;
    plan.target_ratio = 0.0;
    plan.skip_first_layers = 1;
    plan.attention_ratio = 0.5; // attention-only pruning
    for (std::size_t l = 0; l < 8; ++l) {
        const BlockKind kind = l % 2 == 0 ? BlockKind::Attention : BlockKind::Mlp;
        const double r = plan.ratio_for_block(l, 8, kind);
        if (l < 2)
            CHECK(r == 0.0);
        else if (kind == BlockKind::Attention)
            CHECK(r == 0.5);
        else
            CHECK(r == 0.0);
    }
}
