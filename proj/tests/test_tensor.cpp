#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "a3sn/tensor.hpp"

using namespace a3sn;

namespace {

Tensor rand_tensor(std::vector<std::size_t> shape, Rng& rng) {
    return Tensor::uniform(std::move(shape), -1.0, 1.0, rng, false);
}

Tensor weighted_sum(Tape& t, const Tensor& y, const Tensor& w) {
    return sum_all(t, mul(t, y, w));
}

} // namespace

TEST_CASE("matmul identity and hand-computed products") {
    Tape t = Tape::inference();
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor prod = matmul(t, eye, a);
    for (std::size_t i = 0; i < 4; ++i) CHECK(prod[i] == a[i]);

    Tensor row({1, 2}, {1, 2});
    Tensor col({2, 1}, {3, 4});
    CHECK(matmul(t, row, col).item() == 11.0);
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    Tape t;
    Tensor a({2, 3}, std::vector<double>(6, 1.0));
    Tensor b({2, 2}, std::vector<double>(4, 1.0));
    try {
        matmul(t, a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient of sum(A*B) matches finite differences") {
    Rng rng(11);
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({4, 2}, rng);
    auto f = [&](Tape& t, const Tensor& x) { return sum_all(t, matmul(t, x, b)); };
    GradCheckResult r = grad_check(f, a, 1e-5, 1e-6);
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("softmax of a constant row is uniform") {
    Tape t = Tape::inference();
    Tensor x({1, 3}, {0, 0, 0});
    Tensor s = softmax_rows(t, x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("softmax is stable for large logits") {
    Tape t = Tape::inference();
    Tensor x({1, 2}, {1000.0, 0.0});
    Tensor s = softmax_rows(t, x);
    CHECK(s.all_finite());
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax Jacobian-vector product matches finite differences") {
    Rng rng(3);
    Tensor x = rand_tensor({3, 5}, rng);
    Tensor w = rand_tensor({3, 5}, rng);
    auto f = [&](Tape& t, const Tensor& v) { return weighted_sum(t, softmax_rows(t, v), w); };
    CHECK(grad_check(f, x, 1e-5, 1e-6).pass);
}

TEST_CASE("softmax rows sum to one on random inputs") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = Tensor::uniform({4, 7}, -30.0, 30.0, rng);
        Tape t = Tape::inference();
        Tensor s = softmax_rows(t, x);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 7; ++j) sum += s.at(r, j);
            CHECK(std::fabs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("layer_norm maps a constant row to zeros") {
    Tape t = Tape::inference();
    Tensor x({2, 4}, std::vector<double>(8, 3.5));
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta = Tensor::zeros({4});
    Tensor y = layer_norm(t, x, gamma, beta, 1e-5);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::fabs(y[i]) < 1e-9);
}

TEST_CASE("layer_norm of [1,3] approaches [-1,1] as eps vanishes") {
    Tape t = Tape::inference();
    Tensor x({1, 2}, {1.0, 3.0});
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    Tensor y = layer_norm(t, x, gamma, beta, 1e-12);
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm gradients match finite differences") {
    Rng rng(5);
    Tensor x = rand_tensor({3, 6}, rng);
    Tensor gamma = Tensor::uniform({6}, 0.5, 1.5, rng);
    Tensor beta = rand_tensor({6}, rng);
    Tensor w = rand_tensor({3, 6}, rng);
    auto fx = [&](Tape& t, const Tensor& v) {
        return weighted_sum(t, layer_norm(t, v, gamma, beta, 1e-5), w);
    };
    auto fg = [&](Tape& t, const Tensor& v) {
        return weighted_sum(t, layer_norm(t, x, v, beta, 1e-5), w);
    };
    auto fb = [&](Tape& t, const Tensor& v) {
        return weighted_sum(t, layer_norm(t, x, gamma, v, 1e-5), w);
    };
    CHECK(grad_check(fx, x, 1e-5, 1e-5).pass);
    CHECK(grad_check(fg, gamma, 1e-5, 1e-5).pass);
    CHECK(grad_check(fb, beta, 1e-5, 1e-5).pass);
}

TEST_CASE("conv1d_same with width-1 identity kernel reproduces the input") {
    Tape t = Tape::inference();
    Rng rng(7);
    Tensor x = rand_tensor({5, 3}, rng);
    Tensor kernel = Tensor::zeros({1, 3, 3});
    for (std::size_t i = 0; i < 3; ++i) kernel[i * 3 + i] = 1.0;
    Tensor bias = Tensor::zeros({3});
    Tensor y = conv1d_same(t, x, kernel, bias);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv1d_same with a zero kernel emits the bias everywhere") {
    Tape t = Tape::inference();
    Rng rng(9);
    Tensor x = rand_tensor({4, 2}, rng);
    Tensor kernel = Tensor::zeros({3, 2, 2});
    Tensor bias({2}, {0.5, -1.25});
    Tensor y = conv1d_same(t, x, kernel, bias);
    for (std::size_t r = 0; r < 4; ++r) {
        CHECK(y.at(r, 0) == 0.5);
        CHECK(y.at(r, 1) == -1.25);
    }
}

TEST_CASE("conv1d_same rejects even kernel widths") {
    Tape t;
    Tensor x = Tensor::zeros({4, 2});
    Tensor kernel = Tensor::zeros({2, 2, 2});
    Tensor bias = Tensor::zeros({2});
    CHECK_THROWS_AS(conv1d_same(t, x, kernel, bias), ConfigError);
}

TEST_CASE("conv1d_same preserves sequence length for all odd widths") {
    Rng rng(13);
    for (std::size_t w : {1u, 3u, 5u, 7u}) {
        Tensor x = rand_tensor({6, 2}, rng);
        Tensor kernel = rand_tensor({w, 2, 4}, rng);
        Tensor bias = rand_tensor({4}, rng);
        Tape t = Tape::inference();
        Tensor y = conv1d_same(t, x, kernel, bias);
        CHECK(y.dim(0) == 6);
        CHECK(y.dim(1) == 4);
    }
}

TEST_CASE("conv1d_same gradients match finite differences") {
    Rng rng(21);
    Tensor x = rand_tensor({5, 3}, rng);
    Tensor kernel = rand_tensor({3, 3, 2}, rng);
    Tensor bias = rand_tensor({2}, rng);
    Tensor w = rand_tensor({5, 2}, rng);
    auto fx = [&](Tape& t, const Tensor& v) {
        return weighted_sum(t, conv1d_same(t, v, kernel, bias), w);
    };
    auto fk = [&](Tape& t, const Tensor& v) {
        return weighted_sum(t, conv1d_same(t, x, v, bias), w);
    };
    auto fb = [&](Tape& t, const Tensor& v) {
        return weighted_sum(t, conv1d_same(t, x, kernel, v), w);
    };
    CHECK(grad_check(fx, x, 1e-5, 1e-5).pass);
    CHECK(grad_check(fk, kernel, 1e-5, 1e-5).pass);
    CHECK(grad_check(fb, bias, 1e-5, 1e-5).pass);
}

TEST_CASE("elementwise basics") {
    Tape t = Tape::inference();
    CHECK(sigmoid(t, Tensor::scalar(0.0)).item() == 0.5);

    Rng rng(2);
    Tensor a = rand_tensor({3, 3}, rng);
    Tensor ones = Tensor::full({3, 3}, 1.0);
    Tensor prod = mul(t, a, ones);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(prod[i] == a[i]);

    Tensor b = rand_tensor({2, 2}, rng);
    Tensor c = rand_tensor({3, 2}, rng);
    CHECK_THROWS_AS(add(t, b, c), DimensionError);
}

TEST_CASE("elementwise gradients match finite differences") {
    Rng rng(23);
    Tensor a = rand_tensor({3, 4}, rng);
    Tensor b = rand_tensor({3, 4}, rng);
    Tensor w = rand_tensor({3, 4}, rng);
    auto check = [&](auto&& f) { CHECK(grad_check(f, a, 1e-5, 1e-6).pass); };
    check([&](Tape& t, const Tensor& x) { return weighted_sum(t, add(t, x, b), w); });
    check([&](Tape& t, const Tensor& x) { return weighted_sum(t, sub(t, x, b), w); });
    check([&](Tape& t, const Tensor& x) { return weighted_sum(t, mul(t, x, b), w); });
    check([&](Tape& t, const Tensor& x) { return weighted_sum(t, sigmoid(t, x), w); });
    check([&](Tape& t, const Tensor& x) { return weighted_sum(t, scale(t, x, -2.5), w); });
    // ReLU: keep values away from the kink.
    Tensor ar = rand_tensor({3, 4}, rng);
    for (std::size_t i = 0; i < ar.size(); ++i) {
        if (std::fabs(ar[i]) < 0.05) ar[i] = 0.1;
    }
    auto fr = [&](Tape& t, const Tensor& x) { return weighted_sum(t, relu(t, x), w); };
    CHECK(grad_check(fr, ar, 1e-5, 1e-6).pass);
}

TEST_CASE("mean_rows selects unmasked rows only") {
    Tape t = Tape::inference();
    Tensor x({3, 2}, {1, 3, 3, 5, 100, 100});
    Tensor single_mask({3}, {0, 1, 0});
    Tensor m1 = mean_rows(t, x, single_mask);
    CHECK(m1[0] == 3.0);
    CHECK(m1[1] == 5.0);

    Tensor pair_mask({3}, {1, 1, 0});
    Tensor m2 = mean_rows(t, x, pair_mask);
    CHECK(m2[0] == 2.0);
    CHECK(m2[1] == 4.0);

    Tensor zero_mask({3}, {0, 0, 0});
    CHECK_THROWS_AS(mean_rows(t, x, zero_mask), DataError);
}

TEST_CASE("mean_rows gradient matches finite differences") {
    Rng rng(31);
    Tensor x = rand_tensor({5, 3}, rng);
    Tensor mask({5}, {1, 0, 1, 1, 0});
    Tensor w = rand_tensor({3}, rng);
    auto f = [&](Tape& t, const Tensor& v) { return weighted_sum(t, mean_rows(t, v, mask), w); };
    CHECK(grad_check(f, x, 1e-5, 1e-6).pass);
}

TEST_CASE("grad_check on sum of squares") {
    Tensor x({2}, {1.0, 2.0});
    auto f = [](Tape& t, const Tensor& v) { return sum_all(t, mul(t, v, v)); };
    GradCheckResult r = grad_check(f, x, 1e-5, 1e-8);
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-8);

    // The analytic gradient itself is [2, 4].
    Tape t;
    Tensor probe({2}, {1.0, 2.0}, true);
    Tensor y = f(t, probe);
    t.backward(y);
    CHECK(probe.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(probe.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("grad_check is exact for linear functions up to truncation") {
    Rng rng(37);
    Tensor x = rand_tensor({4}, rng);
    auto f = [](Tape& t, const Tensor& v) { return sum_all(t, scale(t, v, 3.0)); };
    GradCheckResult r = grad_check(f, x, 1e-5, 1e-9);
    CHECK(r.pass);
}

TEST_CASE("grad_check rejects non-scalar functions and bad eps") {
    Tensor x({2}, {1.0, 2.0});
    auto vector_f = [](Tape& t, const Tensor& v) { return add(t, v, v); };
    CHECK_THROWS_AS(grad_check(vector_f, x, 1e-5, 1e-4), ContractError);
    auto f = [](Tape& t, const Tensor& v) { return sum_all(t, v); };
    CHECK_THROWS_AS(grad_check(f, x, 1e-2, 1e-4), ContractError);
}

TEST_CASE("every op passes grad_check at tol 1e-4 across 100 seeds") {
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        Rng rng(seed);
        Tensor a = rand_tensor({2, 3}, rng);
        Tensor b = rand_tensor({3, 2}, rng);
        Tensor sq = rand_tensor({2, 2}, rng);
        Tensor w22 = rand_tensor({2, 2}, rng);
        Tensor w23 = rand_tensor({2, 3}, rng);

        auto ok = [&](auto&& f, const Tensor& x) {
            GradCheckResult r = grad_check(f, x, 1e-5, 1e-4);
            CAPTURE(seed);
            CHECK(r.pass);
        };
        ok([&](Tape& t, const Tensor& x) { return sum_all(t, matmul(t, x, b)); }, a);
        ok([&](Tape& t, const Tensor& x) { return weighted_sum(t, transpose(t, x), w23); },
           rand_tensor({3, 2}, rng));
        ok([&](Tape& t, const Tensor& x) { return weighted_sum(t, softmax_rows(t, x), w23); },
           rand_tensor({2, 3}, rng));
        {
            Tensor gamma = Tensor::uniform({3}, 0.5, 1.5, rng);
            Tensor beta = rand_tensor({3}, rng);
            ok([&](Tape& t, const Tensor& x) {
                return weighted_sum(t, layer_norm(t, x, gamma, beta, 1e-5), w23);
            },
               rand_tensor({2, 3}, rng));
        }
        {
            Tensor kernel = rand_tensor({3, 3, 2}, rng);
            Tensor bias = rand_tensor({2}, rng);
            ok([&](Tape& t, const Tensor& x) {
                return weighted_sum(t, conv1d_same(t, x, kernel, bias), w22);
            },
               rand_tensor({2, 3}, rng));
        }
        ok([&](Tape& t, const Tensor& x) { return weighted_sum(t, add(t, x, sq), w22); },
           rand_tensor({2, 2}, rng));
        ok([&](Tape& t, const Tensor& x) { return weighted_sum(t, sub(t, sq, x), w22); },
           rand_tensor({2, 2}, rng));
        ok([&](Tape& t, const Tensor& x) { return weighted_sum(t, mul(t, x, sq), w22); },
           rand_tensor({2, 2}, rng));
        ok([&](Tape& t, const Tensor& x) { return weighted_sum(t, sigmoid(t, x), w22); },
           rand_tensor({2, 2}, rng));
        ok([&](Tape& t, const Tensor& x) { return weighted_sum(t, scale(t, x, 1.5), w22); },
           rand_tensor({2, 2}, rng));
        {
            Tensor mask({3}, {1, 0, 1});
            Tensor wv = rand_tensor({2}, rng);
            ok([&](Tape& t, const Tensor& x) {
                return weighted_sum(t, mean_rows(t, x, mask), wv);
            },
               rand_tensor({3, 2}, rng));
        }
    }
}

TEST_CASE("matmul associativity on random matrices") {
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = rand_tensor({3, 4}, rng);
        Tensor b = rand_tensor({4, 5}, rng);
        Tensor c = rand_tensor({5, 2}, rng);
        Tape t = Tape::inference();
        Tensor left = matmul(t, matmul(t, a, b), c);
        Tensor right = matmul(t, a, matmul(t, b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            CHECK(std::fabs(left[i] - right[i]) < 1e-9);
        }
    }
}

TEST_CASE("backward without gradient consumers is a no-op") {
    Tape t;
    Tensor a({2, 2}, {1, 2, 3, 4}, false);
    Tensor b({2, 2}, {5, 6, 7, 8}, false);
    Tensor s = sum_all(t, mul(t, a, b));
    CHECK(t.num_records() == 0);
    t.backward(s); // nothing requires grad; must not throw
    CHECK_FALSE(a.has_grad());
    CHECK_FALSE(b.has_grad());
}

TEST_CASE("backward twice on one tape errors") {
    Tape t;
    Tensor x({2}, {1.0, 2.0}, true);
    Tensor y = sum_all(t, x);
    t.backward(y);
    CHECK_THROWS_AS(t.backward(y), ContractError);
}

TEST_CASE("gradients accumulate when a tensor is used twice") {
    Tape t;
    Tensor x({2}, {1.0, 2.0}, true);
    Tensor y = sum_all(t, add(t, x, x));
    t.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x.grad()[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("dropout scales kept values and is identity in eval mode") {
    Rng rng(43);
    Tensor x = Tensor::full({10, 10}, 1.0);
    Tape t;
    Rng mask_rng(99);
    Tensor kept = dropout(t, x, 0.3, mask_rng, true);
    for (std::size_t i = 0; i < kept.size(); ++i) {
        CHECK((kept[i] == 0.0 || kept[i] == doctest::Approx(1.0 / 0.7).epsilon(1e-12)));
    }
    Rng unused(1);
    Tensor same = dropout(t, x, 0.3, unused, false);
    CHECK(same.same_storage(x));
}
