#include <cmath>

#include "doctest.h"
#include "peav/numeric.hpp"
#include "peav/prng.hpp"
#include "peav/retrieval_eval.hpp"

using namespace peav;
using namespace peav::retrieval;

namespace {

SimMatrix diag_matrix(std::size_t n) {
    SimMatrix m;
    m.values = Tensor::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) m.values.at2(i, i) = 1.0;
    m.positives.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.positives[i] = {i};
    m.row_ids.resize(n, "q");
    m.col_ids.resize(n, "g");
    return m;
}

Tensor random_unit_rows(std::size_t n, std::size_t c, PrngStream& rng) {
    Tensor t = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
    return l2_normalize(t, 1);
}

}  // namespace

TEST_CASE("dsl_reweight single-query identity and zeros") {
    PrngStream rng(3);
    Tensor one_row = Tensor::zeros({1, 5});
    for (std::size_t j = 0; j < 5; ++j) one_row.at2(0, j) = rng.next_gaussian();
    Tensor out = dsl_reweight(one_row, 10.0);
    CHECK(max_abs_diff(out, one_row) == 0.0);  // softmax over one query is 1

    Tensor with_zero = Tensor::matrix({{0.0, 2.0}, {1.0, 0.0}});
    Tensor rew = dsl_reweight(with_zero, 10.0);
    CHECK(rew.at2(0, 0) == 0.0);
    CHECK(rew.at2(1, 1) == 0.0);
}

TEST_CASE("dsl_reweight keeps diagonal-dominant argmax") {
    Tensor sims = Tensor::matrix({{2.0, 0.0}, {0.0, 2.0}});
    Tensor out = dsl_reweight(sims, 10.0);
    CHECK(out.at2(0, 0) > out.at2(0, 1));
    CHECK(out.at2(1, 1) > out.at2(1, 0));
    // hand-evaluated: softmax over the query axis of 10*sims gives
    // sigma(20) on the diagonal, so out[0,0] = 2 * (e^20 / (e^20 + 1))
    const double w = std::exp(20.0) / (std::exp(20.0) + 1.0);
    CHECK(out.at2(0, 0) == doctest::Approx(2.0 * w).epsilon(1e-12));
}

TEST_CASE("recall_at_k closed cases and monotonicity") {
    SimMatrix m = diag_matrix(4);
    CHECK(recall_at_k(m, 1) == doctest::Approx(1.0));
    CHECK(recall_at_k(m, 4) == doctest::Approx(1.0));

    // positives moved to the anti-diagonal, similarities stay identity:
    // query i ranks gallery i first, so only i == G-1-i can hit. Hand
    // count: 1/G for odd G (the middle query), 0 for even G.
    SimMatrix anti5 = diag_matrix(5);
    for (std::size_t i = 0; i < 5; ++i) anti5.positives[i] = {4 - i};
    CHECK(recall_at_k(anti5, 1) == doctest::Approx(1.0 / 5));
    CHECK(recall_at_k(anti5, 5) == doctest::Approx(1.0));

    SimMatrix anti = diag_matrix(4);
    for (std::size_t i = 0; i < 4; ++i) anti.positives[i] = {3 - i};
    CHECK(recall_at_k(anti, 1) == doctest::Approx(0.0));
    CHECK(recall_at_k(anti, 4) == doctest::Approx(1.0));

    double prev = 0.0;
    for (std::size_t k = 1; k <= 4; ++k) {
        double r = recall_at_k(anti, k);
        CHECK(r >= prev);
        prev = r;
    }
    CHECK_THROWS_AS(recall_at_k(m, 5), param_error);
    CHECK_THROWS_AS(recall_at_k(m, 0), param_error);
}

TEST_CASE("recall_at_k breaks ties by lower index") {
    SimMatrix m;
    m.values = Tensor::matrix({{0.5, 0.5, 0.5}});
    m.positives = {{2}};
    m.row_ids = {"q0"};
    m.col_ids = {"g0", "g1", "g2"};
    CHECK(recall_at_k(m, 1) == 0.0);  // index 0 wins the tie
    CHECK(recall_at_k(m, 3) == 1.0);
}

TEST_CASE("recall_at_k validates positives") {
    SimMatrix m = diag_matrix(2);
    m.positives[1].clear();
    CHECK_THROWS_AS(recall_at_k(m, 1), config_error);
}

TEST_CASE("dsl preserves diagonal-positive recall") {
    PrngStream rng(5);
    SimMatrix m = diag_matrix(6);
    // add mild off-diagonal noise below the diagonal values
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t j = 0; j < 6; ++j) {
            if (i != j) m.values.at2(i, j) = 0.4 * rng.next_double();
        }
    }
    SimMatrix rew = m;
    rew.values = dsl_reweight(m.values, 10.0);
    CHECK(recall_at_k(m, 1) == doctest::Approx(1.0));
    CHECK(recall_at_k(rew, 1) == doctest::Approx(1.0));
}

TEST_CASE("classify_zero_shot template averaging") {
    // encoder returns fixed unit vectors per prompt
    auto encoder = [](const std::string& prompt) -> std::vector<double> {
        if (prompt == "t0 of A") return {1.0, 0.0, 0.0};
        if (prompt == "t1 of A") return {0.0, 1.0, 0.0};
        if (prompt.find("of B") != std::string::npos) return {0.0, 0.0, 1.0};
        return {0.0, 0.0, 0.0};
    };

    // prototype of A = normalized midpoint of the two unit vectors
    const double inv = 1.0 / std::sqrt(2.0);
    Tensor embeds = Tensor::matrix({{inv, inv, 0.0}, {0.0, 0.0, 1.0}});
    std::vector<std::size_t> labels{0, 1};
    double acc = classify_zero_shot(embeds, {"A", "B"}, {"t0 of {c}", "t1 of {c}"}, encoder,
                                    labels);
    CHECK(acc == doctest::Approx(1.0));

    // template order does not matter (exact) and duplicates do not either
    double acc_rev = classify_zero_shot(embeds, {"A", "B"}, {"t1 of {c}", "t0 of {c}"}, encoder,
                                        labels);
    CHECK(acc == acc_rev);
    double acc_dup = classify_zero_shot(
        embeds, {"A", "B"}, {"t0 of {c}", "t1 of {c}", "t0 of {c}", "t1 of {c}"}, encoder, labels);
    CHECK(acc_dup == doctest::Approx(acc).epsilon(1e-12));

    // single class is always correct
    CHECK(classify_zero_shot(embeds, {"A"}, {"t0 of {c}"}, encoder, {0, 0}) ==
          doctest::Approx(1.0));

    CHECK_THROWS_AS(classify_zero_shot(embeds, {}, {"t"}, encoder, labels), param_error);
    CHECK_THROWS_AS(classify_zero_shot(embeds, {"A"}, {}, encoder, labels), param_error);
}

TEST_CASE("classify_zero_shot exact-prototype accuracy is 1") {
    PrngStream rng(9);
    const std::size_t n_classes = 5, ch = 8;
    Tensor prototypes = random_unit_rows(n_classes, ch, rng);
    auto encoder = [&](const std::string& prompt) -> std::vector<double> {
        for (std::size_t c = 0; c < n_classes; ++c) {
            if (prompt.find("class" + std::to_string(c)) != std::string::npos) {
                return prototypes.row(c);
            }
        }
        return std::vector<double>(ch, 0.0);
    };
    std::vector<std::string> names;
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < n_classes; ++c) names.push_back("class" + std::to_string(c));
    Tensor embeds = Tensor::zeros({n_classes, ch});
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t j = 0; j < ch; ++j) embeds.at2(c, j) = prototypes.at2(c, j);
        labels.push_back(c);
    }
    CHECK(classify_zero_shot(embeds, names, {"a sound of {c}"}, encoder, labels) ==
          doctest::Approx(1.0));
}

TEST_CASE("joint_query_eval native vs max_unimodal") {
    // two half-concept axes: video sees i, audio caption sees j, audio = (i, j)
    const std::size_t m = 3;           // values per half
    const std::size_t n = m * m;       // gallery size
    const std::size_t ch = 2 * m;      // one-hot halves
    EmbeddingBundle bundle;
    Tensor h_a = Tensor::zeros({n, ch});
    Tensor h_v = Tensor::zeros({n, ch});
    Tensor h_ta = Tensor::zeros({n, ch});
    const double inv = 1.0 / std::sqrt(2.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t row = i * m + j;
            h_a.at2(row, i) = inv;
            h_a.at2(row, m + j) = inv;
            h_v.at2(row, i) = 1.0;       // video knows only i
            h_ta.at2(row, m + j) = 1.0;  // audio caption knows only j
        }
    }
    bundle.h_a = h_a;
    bundle.h_v = h_v;
    bundle.h_ta = h_ta;
    // the trained joint projection recombines the halves: [I_m 0; 0 I_m]
    // acting on concat(video, caption)
    Tensor h_vt = Tensor::zeros({n, ch});
    for (std::size_t row = 0; row < n; ++row) {
        for (std::size_t k = 0; k < ch; ++k) {
            h_vt.at2(row, k) = inv * (h_v.at2(row, k) + h_ta.at2(row, k));
        }
    }
    bundle.h_vt = h_vt;

    std::vector<std::vector<std::size_t>> positives(n);
    for (std::size_t row = 0; row < n; ++row) positives[row] = {row};

    const double native =
        joint_query_eval(bundle, JointTask::TV_to_A, JointStrategy::native, positives);
    const double fallback =
        joint_query_eval(bundle, JointTask::TV_to_A, JointStrategy::max_unimodal, positives);
    CHECK(native == doctest::Approx(1.0));
    CHECK(fallback < native);  // halves alone are ambiguous

    // the caption formula: max over the two unimodal recalls, exactly
    SimMatrix ta;
    ta.values = matmul_nt(h_ta, h_a);
    ta.positives = positives;
    ta.row_ids.resize(n);
    ta.col_ids.resize(n);
    SimMatrix va = ta;
    va.values = matmul_nt(h_v, h_a);
    CHECK(fallback == doctest::Approx(std::max(recall_at_k(ta, 1), recall_at_k(va, 1))));
}

TEST_CASE("joint_query_eval native with text-blind joint equals unimodal") {
    PrngStream rng(21);
    const std::size_t n = 6, ch = 8;
    EmbeddingBundle bundle;
    bundle.h_a = random_unit_rows(n, ch, rng);
    bundle.h_v = random_unit_rows(n, ch, rng);
    bundle.h_ta = random_unit_rows(n, ch, rng);
    bundle.h_vt = bundle.h_v;  // joint projection that ignores text

    std::vector<std::vector<std::size_t>> positives(n);
    for (std::size_t i = 0; i < n; ++i) positives[i] = {i};

    const double native =
        joint_query_eval(bundle, JointTask::TV_to_A, JointStrategy::native, positives);
    SimMatrix va;
    va.values = matmul_nt(*bundle.h_v, *bundle.h_a);
    va.positives = positives;
    va.row_ids.resize(n);
    va.col_ids.resize(n);
    CHECK(native == doctest::Approx(recall_at_k(va, 1)));

    // missing joint stream under native is a configuration error
    EmbeddingBundle missing;
    missing.h_a = bundle.h_a;
    missing.h_v = bundle.h_v;
    CHECK_THROWS_AS(
        joint_query_eval(missing, JointTask::TV_to_A, JointStrategy::native, positives),
        config_error);
}
