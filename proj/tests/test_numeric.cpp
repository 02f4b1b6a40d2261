#include <cmath>

#include "doctest.h"
#include "peav/numeric.hpp"
#include "peav/prng.hpp"

using namespace peav;

namespace {

// Independent element-by-element oracle for matmul.
Tensor matmul_triple_loop(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor c = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += a.at2(i, kk) * b.at2(kk, j);
            c.at2(i, j) = acc;
        }
    }
    return c;
}

Tensor random_tensor(std::vector<std::size_t> shape, PrngStream& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.next_gaussian();
    return t;
}

}  // namespace

TEST_CASE("matmul identity and small cases") {
    Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
    Tensor m = Tensor::matrix({{3, 4}, {5, 6}});
    CHECK(max_abs_diff(matmul(eye, m), m) == 0.0);

    Tensor a = Tensor::matrix({{1, 2}});
    Tensor b = Tensor::matrix({{3}, {4}});
    Tensor c = matmul(a, b);
    CHECK(c.shape() == std::vector<std::size_t>{1, 1});
    CHECK(c[0] == doctest::Approx(11.0));
}

TEST_CASE("matmul matches the triple-loop oracle") {
    PrngStream rng(42);
    Tensor a = random_tensor({5, 7}, rng);
    Tensor b = random_tensor({7, 3}, rng);
    CHECK(max_abs_diff(matmul(a, b), matmul_triple_loop(a, b)) <= 1e-12);
}

TEST_CASE("matmul_nt equals matmul against the transpose") {
    PrngStream rng(7);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({5, 6}, rng);
    Tensor bt = Tensor::zeros({6, 5});
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 6; ++j) bt.at2(j, i) = b.at2(i, j);
    }
    CHECK(max_abs_diff(matmul_nt(a, b), matmul(a, bt)) <= 1e-15);
}

TEST_CASE("matmul associativity on random conforming triples") {
    PrngStream rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = random_tensor({4, 5}, rng);
        Tensor b = random_tensor({5, 6}, rng);
        Tensor c = random_tensor({6, 3}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        CHECK(max_rel_diff(left, right) < 1e-9);
    }
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), dimension_error);
    try {
        matmul(a, b);
    } catch (const dimension_error& e) {
        CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("softmax_axis closed forms") {
    Tensor x = Tensor::vector({0, 0, 0});
    Tensor y = softmax_axis(x, 0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Tensor big = softmax_axis(Tensor::vector({1000, 1000}), 0);
    CHECK(big.all_finite());
    CHECK(big[0] == doctest::Approx(0.5).epsilon(1e-12));

    Tensor q = softmax_axis(Tensor::vector({0.0, std::log(3.0)}), 0);
    CHECK(q[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax_axis slices sum to one and shift invariance") {
    PrngStream rng(11);
    Tensor x = random_tensor({3, 5, 2}, rng, 3.0);
    for (std::size_t axis = 0; axis < 3; ++axis) {
        Tensor y = softmax_axis(x, axis);
        // sum along axis == 1 for every slice
        std::size_t outer = 1, inner = 1;
        for (std::size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
        for (std::size_t d = axis + 1; d < 3; ++d) inner *= x.shape()[d];
        const std::size_t extent = x.shape()[axis];
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                double sum = 0.0;
                for (std::size_t e = 0; e < extent; ++e) sum += y[(o * extent + e) * inner + i];
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
    // adding a constant along the axis changes nothing
    Tensor shifted = x;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 17.25;
    CHECK(max_abs_diff(softmax_axis(x, 1), softmax_axis(shifted, 1)) <= 1e-12);
}

TEST_CASE("softmax_axis empty extent is a domain error") {
    Tensor empty = Tensor::zeros({0});
    CHECK_THROWS_AS(softmax_axis(empty, 0), domain_error);
}

TEST_CASE("log_sigmoid stable closed forms") {
    CHECK(log_sigmoid(0.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    CHECK(std::isfinite(log_sigmoid(-1000.0)));
    CHECK(log_sigmoid(-1000.0) == doctest::Approx(-1000.0).epsilon(1e-9));
    // high-precision value of -ln(1 + e^-2)
    CHECK(log_sigmoid(2.0) == doctest::Approx(-0.12692801104297249).epsilon(1e-12));
    for (double x : {-30.0, -2.5, 0.0, 0.7, 40.0}) {
        CHECK(log_sigmoid(x) <= 0.0);
        CHECK(sigmoid(x) + sigmoid(-x) == doctest::Approx(1.0).epsilon(1e-12));
    }
    // monotone increasing
    CHECK(log_sigmoid(1.0) > log_sigmoid(0.5));
}

TEST_CASE("l2_normalize rows") {
    Tensor v = Tensor::vector({3, 4});
    Tensor n = l2_normalize(v, 0);
    CHECK(n[0] == doctest::Approx(0.6));
    CHECK(n[1] == doctest::Approx(0.8));

    Tensor zero = l2_normalize(Tensor::vector({0, 0}), 0, 1e-12);
    CHECK(zero[0] == 0.0);
    CHECK(zero[1] == 0.0);

    PrngStream rng(5);
    Tensor m = random_tensor({10, 8}, rng);
    Tensor rows = l2_normalize(m, 1);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(l2_norm(rows.row(i)) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("finite_diff_grad on polynomials") {
    auto square = [](const Tensor& x) { return x[0] * x[0]; };
    Tensor g = finite_diff_grad(square, Tensor::vector({3.0}), 1e-5);
    CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-6));

    auto sum = [](const Tensor& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
        return s;
    };
    Tensor ones = finite_diff_grad(sum, Tensor::vector({1.0, -2.0, 0.5}), 1e-5);
    for (std::size_t i = 0; i < 3; ++i) CHECK(ones[i] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("finite_diff_grad propagates non-finite evaluations") {
    auto bad = [](const Tensor& x) { return 1.0 / (x[0] - 3.0); };  // inf at the probe
    CHECK_THROWS_AS(finite_diff_grad(bad, Tensor::vector({3.0 - 1e-5}), 1e-5), domain_error);
    CHECK_THROWS_AS(finite_diff_grad([](const Tensor&) { return 1.0; }, Tensor::vector({1.0}),
                                     0.0),
                    param_error);
}

TEST_CASE("prng reproducibility and counter state") {
    PrngStream a(123), b(123);
    for (int i = 0; i < 10000; ++i) CHECK(a.next_u64() == b.next_u64());

    // resuming from an explicit (seed, counter) matches the original stream
    PrngStream c(9, 0);
    std::vector<std::uint64_t> first;
    for (int i = 0; i < 10; ++i) first.push_back(c.next_u64());
    PrngStream resumed(9, 5);
    for (int i = 5; i < 10; ++i) {
        CHECK(resumed.next_u64() == first[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("prng substreams are independent of parent consumption") {
    PrngStream a(77);
    PrngStream sub_before = a.substream(4);
    a.next_u64();
    a.next_u64();
    PrngStream sub_after = a.substream(4);
    CHECK(sub_before.next_u64() == sub_after.next_u64());
}

TEST_CASE("prng uniform and gaussian ranges") {
    PrngStream rng(2024);
    double mean = 0.0;
    for (int i = 0; i < 2000; ++i) {
        double u = rng.next_double();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        mean += rng.next_gaussian();
    }
    CHECK(std::abs(mean / 2000.0) < 0.1);
}

TEST_CASE("tensor factories validate input") {
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), dimension_error);
    CHECK_THROWS_AS(Tensor::from_data({1}, {std::nan("")}), domain_error);
    CHECK_THROWS_AS(Tensor::matrix({{1, 2}, {3}}), dimension_error);
    Tensor t = Tensor::zeros({2, 0, 3});
    CHECK(t.size() == 0);
}
