// Copyright (c) 2026, The adamoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "adamoe/errors.hpp"
#include "adamoe/rng.hpp"
#include "adamoe/tensor.hpp"

using namespace adamoe;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal();
    return Tensor::from(std::move(shape), std::move(v), grad);
}

void check_values(const Tensor& t, const std::vector<double>& want, double tol = 0.0) {
    REQUIRE(t.numel() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        if (tol == 0.0) {
            CHECK(t.at(i) == want[i]);
        } else {
            CHECK(t.at(i) == doctest::Approx(want[i]).epsilon(tol));
        }
    }
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity, hand product and zero") {
    const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    const Tensor col = Tensor::from({2, 1}, {3, 4});
    check_values(matmul(eye, col), {3, 4});

    const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    const Tensor b = Tensor::from({2, 1}, {5, 6});
    const Tensor c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c.at(0) == 17.0);
    CHECK(c.at(1) == 39.0);

    const Tensor z = matmul(Tensor::zeros({3, 2}), a);
    for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({2, 3});
    try {
        (void)matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("matmul rows do not depend on batch composition") {
    Rng rng(3);
    const Tensor w = random_tensor({5, 4}, rng, false);
    const Tensor x = random_tensor({6, 5}, rng, false);
    const Tensor full = matmul(x, w);
    const std::size_t pick[] = {4};
    const Tensor one = matmul(gather_rows(x, pick), w);
    for (std::size_t j = 0; j < 4; ++j) CHECK(one.at(0, j) == full.at(4, j));
}

TEST_CASE("softmax closed forms") {
    check_values(softmax(Tensor::from({4}, {7, 7, 7, 7})), {0.25, 0.25, 0.25, 0.25}, 1e-15);
    const Tensor p = softmax(Tensor::from({2}, {0.0, std::log(2.0)}));
    CHECK(p.at(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(p.at(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    const Tensor big = softmax(Tensor::from({3}, {1000.0, 1000.0, -1000.0}));
    CHECK(big.at(0) == doctest::Approx(0.5));
    CHECK(big.at(2) == 0.0);

    const Tensor rows = softmax(Tensor::from({2, 3}, {1, 2, 3, 0, 0, 0}), -1);
    double s0 = 0.0;
    for (std::size_t j = 0; j < 3; ++j) s0 += rows.at(0, j);
    CHECK(s0 == doctest::Approx(1.0));
    CHECK(rows.at(1, 2) == doctest::Approx(1.0 / 3.0));

    CHECK_THROWS_AS((void)softmax(Tensor::zeros({2, 0})), DimensionError);
}

TEST_CASE("elementwise suite") {
    const Tensor x = Tensor::from({2}, {1, 2});
    CHECK(mse(x, x).item() == 0.0);
    CHECK(mse(x, Tensor::zeros({2})).item() == 2.5);
    CHECK(silu(Tensor::scalar(0.0)).item() == 0.0);
    CHECK(silu(Tensor::scalar(1.0)).item() == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    check_values(add(x, x), {2, 4});
    check_values(sub(x, x), {0, 0});
    check_values(mul(x, x), {1, 4});
    check_values(scale(x, -3.0), {-3, -6});
    CHECK_THROWS_AS((void)add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
    CHECK_THROWS_AS((void)mse(Tensor::zeros({2}), Tensor::zeros({2, 1})), DimensionError);
}

TEST_CASE("broadcast over leading dimensions") {
    const Tensor m = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor row = Tensor::from({3}, {10, 20, 30});
    check_values(add(m, row), {11, 22, 33, 14, 25, 36});
    check_values(add(row, m), {11, 22, 33, 14, 25, 36});
    CHECK_THROWS_AS((void)add(m, Tensor::zeros({2})), DimensionError);
}

TEST_CASE("rms_norm cases") {
    const Tensor gain = Tensor::full({4}, 1.0);
    const Tensor unit = Tensor::from({1, 4}, {1, -1, 1, -1});
    const Tensor y = rms_norm(unit, gain, 0.0);
    check_values(y, {1, -1, 1, -1}, 1e-15);

    const Tensor c = rms_norm(Tensor::full({1, 4}, -3.0), gain);
    for (double v : c.data()) CHECK(v == doctest::Approx(-1.0).epsilon(1e-6));

    const Tensor z = rms_norm(Tensor::zeros({1, 4}), gain);
    for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("gather and scatter") {
    Rng rng(1);
    const Tensor x = random_tensor({4, 3}, rng, false);
    const std::size_t ident[] = {0, 1, 2, 3};
    const Tensor g = gather_rows(x, ident);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(g.at(i) == x.at(i));

    const std::size_t perm[] = {2, 0, 3, 1};
    const Tensor back = scatter_add_rows(gather_rows(x, perm), perm, 4);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back.at(i) == x.at(i));

    const std::size_t bad[] = {4};
    CHECK_THROWS_AS((void)gather_rows(x, bad), IndexError);
    CHECK_THROWS_AS((void)scatter_add_rows(gather_rows(x, ident), perm, 3), IndexError);
}

TEST_CASE("backward basics") {
    const Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    const Tensor unrelated = Tensor::from({3}, {4, 5, 6}, true);
    const Tensor loss = sum(scale(x, 2.5));
    loss.backward();
    for (double g : x.grad()) CHECK(g == 2.5);
    for (double g : unrelated.grad()) CHECK(g == 0.0);

    CHECK_THROWS_AS(scale(x, 1.0).backward(), ContractError);
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    sum(x).backward();
    sum(x).backward();
    CHECK(x.grad()[0] == 2.0);
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("no-grad guard stops recording") {
    const Tensor x = Tensor::from({2}, {1, 2}, true);
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_enabled());
        CHECK_FALSE(add(x, x).requires_grad());
    }
    CHECK(grad_enabled());
    CHECK(add(x, x).requires_grad());
}

TEST_CASE("tape is topologically ordered") {
    Rng rng(2);
    const Tensor a = random_tensor({3, 4}, rng);
    const Tensor b = random_tensor({4, 2}, rng);
    const Tensor h = silu(matmul(a, b));
    const Tensor loss = mean(mul(h, h));
    const Tape tape = Tape::record(loss);
    CHECK(tape.is_topological());
    CHECK(tape.size() >= 6);
    bool saw_matmul = false, saw_silu = false;
    for (const auto& e : tape.entries()) {
        saw_matmul = saw_matmul || e.op == "matmul";
        saw_silu = saw_silu || e.op == "silu";
    }
    CHECK(saw_matmul);
    CHECK(saw_silu);
}

TEST_CASE("finite differences: definition oracles") {
    Rng rng(4);
    const Tensor x = random_tensor({5}, rng);
    const auto rep = finite_diff_check([](const Tensor& t) { return mse(t, Tensor::zeros({5})); }, x);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error <= 1e-4);

    const auto flat = finite_diff_check([](const Tensor&) { return Tensor::scalar(3.0); }, x);
    CHECK(flat.passed);
    CHECK(flat.max_abs_error == 0.0);

    CHECK_THROWS_AS(finite_diff_check([](const Tensor& t) { return scale(sum(t), std::nan("")); }, x),
                    NumericalError);
}

TEST_CASE("finite differences: composite graph through every op") {
    Rng rng(5);
    const std::size_t B = 2, T = 3, d = 4;
    std::vector<Tensor> params{random_tensor({B * T, d}, rng), random_tensor({d, d}, rng),
                               random_tensor({d, d}, rng),     random_tensor({d, d}, rng),
                               random_tensor({d}, rng),        random_tensor({2 * d, 2}, rng)};
    const AttentionLayout layout{B, T, 2, {1, 3, 3}};
    auto loss = [&]() {
        const Tensor& x = params[0];
        const Tensor h = rms_norm(x, params[4]);
        const Tensor att = attention(matmul(h, params[1]), matmul(h, params[2]), matmul(h, params[3]), layout);
        const Tensor p = softmax(matmul(concat_cols(att, x), params[5]));
        const std::size_t rows[] = {0, 2, 5};
        const std::size_t flat[] = {0, 5, 10};
        const Tensor picked = mul_rows(gather_rows(silu(att), rows), take(p, flat));
        const Tensor spread = scatter_add_rows(picked, rows, B * T);
        const Tensor sq = mul(reshape(att, {B * T * d}), reshape(att, {B * T * d}));
        return add(mse(spread, x), add(mean(mean_rows(att)), scale(mean(sq), 0.5)));
    };
    const auto rep = finite_diff_check(loss, params);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error <= 1e-4);
    CHECK(rep.checked == B * T * d + 3 * d * d + d + 2 * d * 2);
}

TEST_CASE("finite differences restore parameters bit-exactly") {
    Rng rng(6);
    std::vector<Tensor> params{random_tensor({3, 3}, rng)};
    const std::vector<double> before = params[0].to_vector();
    (void)finite_diff_check([&]() { return mean(silu(params[0])); }, params);
    CHECK(params[0].to_vector() == before);
}

TEST_CASE("leaf mutation guard") {
    const Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor y = add(x, x);
    CHECK_THROWS_AS(y.mutable_data(), ContractError);
    CHECK_THROWS_AS((void)y.item(), ContractError);
    CHECK_THROWS_AS((void)Tensor::from({3}, {1, 2}), DimensionError);
}

}  // TEST_SUITE
