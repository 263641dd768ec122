#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "pp/tensor.hpp"

using namespace pp;

namespace {

Tensor3 random_tensor(std::size_t n, std::size_t s, std::size_t d, std::uint64_t seed,
                      float scale = 1.0f) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(-scale, scale);
    Tensor3 x(n, s, d);
    for (float& v : x.data()) v = dist(rng);
    return x;
}

} // namespace

TEST_CASE("matmul_rhs_transposed worked examples") {
    SECTION("identity") {
        Tensor3 x(1, 1, 2);
        x.at(0, 0, 0) = 1.0f;
        x.at(0, 0, 1) = 2.0f;
        const Tensor3 y = matmul_rhs_transposed(x, Matrix::identity(2));
        CHECK(y.at(0, 0, 0) == 1.0f);
        CHECK(y.at(0, 0, 1) == 2.0f);
    }
    SECTION("hand product") {
        Tensor3 x(1, 1, 2);
        x.at(0, 0, 0) = 1.0f;
        x.at(0, 0, 1) = 2.0f;
        const Matrix w = Matrix::from_rows({{1, 0}, {1, 1}});
        const Tensor3 y = matmul_rhs_transposed(x, w);
        CHECK(y.at(0, 0, 0) == 1.0f);
        CHECK(y.at(0, 0, 1) == 3.0f);
    }
    SECTION("per-batch rows") {
        Tensor3 x(2, 1, 2);
        x.at(0, 0, 0) = 1.0f;
        x.at(1, 0, 1) = 1.0f;
        const Matrix w = Matrix::from_rows({{3, 4}});
        const Tensor3 y = matmul_rhs_transposed(x, w);
        REQUIRE(y.n() == 2);
        REQUIRE(y.s() == 1);
        REQUIRE(y.d() == 1);
        CHECK(y.at(0, 0, 0) == 3.0f);
        CHECK(y.at(1, 0, 0) == 4.0f);
    }
    SECTION("shape mismatch") {
        CHECK_THROWS_AS(matmul_rhs_transposed(Tensor3(1, 1, 3), Matrix::identity(2)), ShapeError);
    }
}

TEST_CASE("matmul with identity weight is exact identity") {
    const Tensor3 x = random_tensor(3, 5, 8, 17);
    const Tensor3 y = matmul_rhs_transposed(x, Matrix::identity(8));
    CHECK(y == x);
}

TEST_CASE("matmul counts multiply-accumulates") {
    const Tensor3 x = random_tensor(2, 3, 4, 5);
    Matrix w(6, 4);
    std::uint64_t macs = 0;
    matmul_rhs_transposed(x, w, &macs);
    CHECK(macs == 2ull * 3 * 6 * 4);
}

TEST_CASE("layer_norm worked examples") {
    SECTION("constant row collapses to ~0") {
        Tensor3 x(1, 1, 4, 3.5f);
        const std::vector<float> gain(4, 1.0f), bias(4, 0.0f);
        const Tensor3 y = layer_norm(x, gain, bias, 1e-5f);
        for (float v : y.data()) CHECK(std::fabs(v) <= 1e-3f);
    }
    SECTION("[1,-1] with eps 0 is its own normalization") {
        Tensor3 x(1, 1, 2);
        x.at(0, 0, 0) = 1.0f;
        x.at(0, 0, 1) = -1.0f;
        const std::vector<float> gain(2, 1.0f), bias(2, 0.0f);
        const Tensor3 y = layer_norm(x, gain, bias, 0.0f);
        CHECK(y.at(0, 0, 0) == Catch::Approx(1.0).margin(1e-6));
        CHECK(y.at(0, 0, 1) == Catch::Approx(-1.0).margin(1e-6));
    }
    SECTION("zero gain yields bias") {
        const Tensor3 x = random_tensor(2, 2, 3, 7);
        const std::vector<float> gain(3, 0.0f), bias{0.5f, -1.0f, 2.0f};
        const Tensor3 y = layer_norm(x, gain, bias);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                CHECK(y.at(i, j, 0) == 0.5f);
                CHECK(y.at(i, j, 1) == -1.0f);
                CHECK(y.at(i, j, 2) == 2.0f);
            }
    }
    SECTION("length mismatch") {
        const std::vector<float> small(2, 1.0f);
        CHECK_THROWS_AS(layer_norm(Tensor3(1, 1, 3), small, small), ShapeError);
    }
}

TEST_CASE("layer_norm output has zero mean and unit variance per position") {
    const Tensor3 x = random_tensor(3, 4, 16, 23, 2.0f);
    const std::vector<float> gain(16, 1.0f), bias(16, 0.0f);
    const Tensor3 y = layer_norm(x, gain, bias, 1e-8f);
    for (std::size_t i = 0; i < y.n(); ++i)
        for (std::size_t j = 0; j < y.s(); ++j) {
            double mean = 0.0, var = 0.0;
            for (float v : y.row(i, j)) mean += v;
            mean /= 16.0;
            for (float v : y.row(i, j)) var += (v - mean) * (v - mean);
            var /= 16.0;
            CHECK(std::fabs(mean) <= 1e-5);
            CHECK(var == Catch::Approx(1.0).margin(1e-3));
        }
}

TEST_CASE("l2_norm_over_axes worked examples") {
    SECTION("zeros") {
        const std::vector<float> v = l2_norm_over_axes(Tensor3(2, 3, 4), Axis::Feature);
        for (float x : v) CHECK(x == 0.0f);
    }
    SECTION("single element per batch slice") {
        Tensor3 x(2, 1, 1);
        x.at(0, 0, 0) = 3.0f;
        x.at(1, 0, 0) = 4.0f;
        const std::vector<float> v = l2_norm_over_axes(x, Axis::Batch);
        CHECK(v == std::vector<float>{3.0f, 4.0f});
    }
    SECTION("per-token sums of squares") {
        Tensor3 x(1, 2, 2);
        x.at(0, 0, 0) = 1.0f;
        x.at(0, 0, 1) = 2.0f;
        x.at(0, 1, 0) = 3.0f;
        x.at(0, 1, 1) = 4.0f;
        const std::vector<float> v = l2_norm_over_axes(x, Axis::Sequence);
        REQUIRE(v.size() == 2);
        CHECK(v[0] == Catch::Approx(std::sqrt(5.0)));
        CHECK(v[1] == Catch::Approx(5.0));
    }
}

TEST_CASE("l2 norms partition the total sum of squares on every axis") {
    const Tensor3 x = random_tensor(4, 5, 6, 99);
    double total = 0.0;
    for (float v : x.data()) total += static_cast<double>(v) * v;
    for (Axis a : {Axis::Batch, Axis::Sequence, Axis::Feature}) {
        double partition = 0.0;
        for (float n : l2_norm_over_axes(x, a)) partition += static_cast<double>(n) * n;
        CHECK(partition == Catch::Approx(total).epsilon(1e-4));
    }
}

TEST_CASE("argsort_desc worked examples") {
    CHECK(argsort_desc(std::vector<float>{5, 1, 9}) == IndexOrder{2, 0, 1});
    CHECK(argsort_desc(std::vector<float>{7, 7, 7}) == IndexOrder{0, 1, 2});
    CHECK(argsort_desc(std::vector<float>{}) == IndexOrder{});
    const float nan = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(argsort_desc(std::vector<float>{1.0f, nan}), ValueError);
}

TEST_CASE("argsort_desc yields a non-increasing permutation") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> dist(-3, 3); // duplicates likely
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<float> v(37);
        for (float& x : v) x = static_cast<float>(dist(rng));
        const IndexOrder order = argsort_desc(v);
        std::vector<bool> seen(v.size(), false);
        for (std::size_t i = 0; i < order.size(); ++i) {
            REQUIRE(order[i] < v.size());
            CHECK(!seen[order[i]]);
            seen[order[i]] = true;
            if (i > 0) {
                CHECK(v[order[i - 1]] >= v[order[i]]);
                if (v[order[i - 1]] == v[order[i]]) CHECK(order[i - 1] < order[i]);
            }
        }
    }
}

TEST_CASE("softmax_rows worked examples") {
    SECTION("symmetry") {
        const Matrix y = softmax_rows(Matrix::from_rows({{0, 0}}));
        CHECK(y.at(0, 0) == Catch::Approx(0.5));
        CHECK(y.at(0, 1) == Catch::Approx(0.5));
    }
    SECTION("large values do not overflow") {
        const Matrix y = softmax_rows(Matrix::from_rows({{1000, 1000}}));
        CHECK(y.at(0, 0) == Catch::Approx(0.5));
        CHECK(y.at(0, 1) == Catch::Approx(0.5));
    }
    SECTION("log-ratio row") {
        const Matrix y = softmax_rows(
            Matrix::from_rows({{std::log(1.0f), std::log(3.0f)}}));
        CHECK(y.at(0, 0) == Catch::Approx(0.25).margin(1e-6));
        CHECK(y.at(0, 1) == Catch::Approx(0.75).margin(1e-6));
    }
}

TEST_CASE("softmax rows are non-negative and sum to one") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> dist(-30.0f, 30.0f);
    Matrix m(8, 13);
    for (float& v : m.data()) v = dist(rng);
    const Matrix y = softmax_rows(m);
    for (std::size_t r = 0; r < y.rows(); ++r) {
        double sum = 0.0;
        for (float v : y.row(r)) {
            CHECK(v >= 0.0f);
            sum += v;
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-5));
    }
}

TEST_CASE("silu at reference points") {
    CHECK(silu(0.0f) == 0.0f);
    CHECK(silu(1.0f) == Catch::Approx(0.73106).margin(1e-4));
    CHECK(silu(2.0f) == Catch::Approx(1.76159).margin(1e-4));
}
