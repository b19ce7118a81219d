#include <doctest.h>

#include <cmath>
#include <numeric>

#include "alm/error.hpp"
#include "alm/ops.hpp"
#include "alm/parallel.hpp"
#include "alm/tensor.hpp"
#include "gradcheck.hpp"

using alm::Tensor;
namespace ops = alm::ops;

TEST_CASE("softmax, layer_norm and cross_entropy anchors") {
    const Tensor s = ops::softmax(Tensor::from({2}, {0.0, 0.0}));
    CHECK(s.at(0) == 0.5);
    CHECK(s.at(1) == 0.5);

    const Tensor ln = ops::layer_norm(Tensor::full({1, 5}, 3.25), Tensor::full({5}, 1.0), Tensor::zeros({5}));
    for (double v : ln.data()) CHECK(v == 0.0);

    for (std::size_t V : {2u, 16u, 1000u}) {
        const std::vector<int> targets{0, static_cast<int>(V) - 1, 1};
        CHECK(ops::cross_entropy(Tensor::zeros({3, V}), targets).item() == std::log(static_cast<double>(V)));
    }
}

TEST_CASE("softmax rows sum to one") {
    alm::Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        const Tensor x = alm::test::random_tensor(rng, {4, 7}, 10.0);
        const Tensor y = ops::softmax(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double z = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                const double p = y.at(r * 7 + j);
                CHECK(p > 0.0);
                CHECK(p < 1.0);
                z += p;
            }
            CHECK(std::abs(z - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("backward examples") {
    Tensor x = Tensor::scalar(3.0, true);
    alm::backward(ops::mul(x, x));
    CHECK(x.grad()[0] == 6.0);

    // d sum(A B) / dA = ones * B^T
    alm::Rng rng(2);
    Tensor A = alm::test::random_tensor(rng, {3, 4});
    Tensor B = alm::test::random_tensor(rng, {4, 2});
    A.set_requires_grad(true);
    alm::backward(ops::sum(ops::matmul(A, B)));
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(A.grad()[i * 4 + k] == doctest::Approx(B.at(k * 2) + B.at(k * 2 + 1)).epsilon(1e-14));
        }
    }
    CHECK_FALSE(B.has_grad());

    const double rel = alm::test::gradient_rel_error({A.detach(), B.detach()},
                                                     [](const auto& in) { return ops::sum(ops::matmul(in[0], in[1])); },
                                                     rng);
    CHECK(rel < 1e-6);
}

TEST_CASE("backward rejects non-scalar losses") {
    Tensor x = Tensor::full({2, 2}, 1.0, true);
    CHECK_THROWS_AS(alm::backward(ops::scale(x, 2.0)), alm::ContractError);
}

TEST_CASE("every op passes finite-difference checks") {
    alm::Rng rng(3);
    for (const auto& c : alm::test::gradient_cases()) {
        for (int trial = 0; trial < 10; ++trial) {
            const double err = c.trial(rng);
            INFO(c.name << " trial " << trial);
            CHECK(err < 1e-6);
        }
    }
}

TEST_CASE("backward is linear in the loss") {
    alm::Rng rng(4);
    Tensor x = alm::test::random_tensor(rng, {3, 5});
    Tensor w = alm::test::random_tensor(rng, {5, 2});
    x.set_requires_grad(true);
    auto loss = [&] { return ops::cross_entropy(ops::matmul(x, w), std::vector<int>{0, 1, 1}); };
    alm::backward(loss());
    const std::vector<double> g1(x.grad().begin(), x.grad().end());
    x.clear_grad();
    alm::backward(ops::scale(loss(), -2.5));
    for (std::size_t i = 0; i < g1.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(-2.5 * g1[i]).epsilon(1e-13));
}

TEST_CASE("trace visits each node once in consumer-first order") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    const Tensor y = ops::mul(x, x);
    const Tensor z = ops::add(y, x);
    const Tensor loss = ops::sum(ops::mul(z, y));
    const auto trace = alm::Trace::build(loss);
    CHECK(trace.size() == 5);
    CHECK(trace.nodes().front() == loss.node().get());
    CHECK(trace.nodes().back() == x.node().get());
    alm::backward(loss, trace);
    // loss = sum((x^2 + x) x^2) -> d/dx = 4x^3 + 3x^2
    CHECK(x.grad()[0] == 7.0);
    CHECK(x.grad()[1] == 44.0);
}

TEST_CASE("shape errors name both shapes") {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({2, 3});
    try {
        (void)ops::matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const alm::DimensionError& e) {
        CHECK(std::string(e.what()).find("[2, 3] and [2, 3]") != std::string::npos);
    }
    CHECK_THROWS_AS(ops::add(a, Tensor::zeros({2})), alm::DimensionError);
    CHECK_THROWS_AS(ops::mul(a, Tensor::zeros({4, 2, 3})), alm::DimensionError);
    CHECK_THROWS_AS(ops::softmax(a, 2), alm::DimensionError);
    CHECK_THROWS_AS(ops::layer_norm(a, Tensor::zeros({2}), Tensor::zeros({3})), alm::DimensionError);
    CHECK_THROWS_AS(ops::layer_norm(a, Tensor::zeros({3}), Tensor::zeros({3}), 0), alm::DimensionError);
    CHECK_THROWS_AS(ops::cross_entropy(a, std::vector<int>{0}), alm::DimensionError);
    CHECK_THROWS_AS(ops::reshape(a, {4, 2}), alm::DimensionError);
    CHECK_THROWS_AS(ops::causal_attention(Tensor::zeros({4, 9}), 2, 2, 2), alm::DimensionError);
    CHECK_THROWS_AS(Tensor::zeros({2, 0}), alm::DimensionError);
    CHECK_THROWS_AS(ops::embedding(Tensor::zeros({3, 2}), std::vector<int>{3}), alm::RangeError);
}

TEST_CASE("non-finite outputs raise overflow errors") {
    const Tensor big = Tensor::full({1, 2}, 1e200);
    CHECK_THROWS_AS(ops::mul(big, big), alm::OverflowError);
    CHECK_NOTHROW(ops::softmax(big));
}

TEST_CASE("detached tensors receive no gradient") {
    Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
    Tensor c = Tensor::from({2}, {3.0, 4.0}, false);
    alm::backward(ops::sum(ops::mul(w, c)));
    CHECK(w.has_grad());
    CHECK_FALSE(c.has_grad());
}

TEST_CASE("no-grad mode records no graph") {
    Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
    alm::NoGradGuard guard;
    const Tensor y = ops::mul(w, w);
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("rng contracts") {
    const Tensor z = alm::rng_normal({4, 4}, 1.5, 0.0, 9);
    for (double v : z.data()) CHECK(v == 1.5);

    const Tensor a = alm::rng_normal({3, 3}, 0.0, 1.0, 42);
    const Tensor b = alm::rng_normal({3, 3}, 0.0, 1.0, 42);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

    const std::size_t n = 1000000;
    const Tensor big = alm::rng_normal({n}, 0.0, 0.02, 1234);
    double mean = 0.0;
    for (double v : big.data()) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : big.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / (n - 1));
    CHECK(std::abs(sd - 0.02) < 0.02 * 0.01);

    const Tensor u = alm::rng_uniform({1000}, -1.0, 1.0, 5);
    for (double v : u.data()) CHECK((v >= -1.0 && v < 1.0));
    CHECK_THROWS_AS(alm::rng_normal({2}, 0.0, -1.0, 1), alm::ConfigError);
}

TEST_CASE("results do not depend on the thread count") {
    alm::Rng rng(6);
    const Tensor a = alm::test::random_tensor(rng, {64, 96});
    const Tensor b = alm::test::random_tensor(rng, {96, 80});
    const Tensor qkv = alm::test::random_tensor(rng, {2 * 24, 3 * 32});
    const auto before = alm::thread_count();
    alm::set_thread_count(1);
    const Tensor c1 = ops::matmul(a, b);
    const Tensor s1 = ops::causal_attention(qkv, 2, 24, 4);
    alm::set_thread_count(4);
    const Tensor c4 = ops::matmul(a, b);
    const Tensor s4 = ops::causal_attention(qkv, 2, 24, 4);
    alm::set_thread_count(before);
    CHECK(std::equal(c1.data().begin(), c1.data().end(), c4.data().begin()));
    CHECK(std::equal(s1.data().begin(), s1.data().end(), s4.data().begin()));
}
