#include <cmath>
#include <random>

#include "doctest.h"
#include "steerlab/error.hpp"
#include "steerlab/grad.hpp"
#include "support/fd.hpp"

using namespace steerlab;
using namespace steerlab::grad;

namespace {

std::vector<double> rand_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(n);
    for (double& v : out) v = dist(rng);
    return out;
}

// Scalar functional with non-uniform sensitivity so elementwise backward bugs
// cannot cancel: mse against a fixed random target.
Tensor reduce_to_scalar(const Tensor& t, uint64_t salt) {
    std::mt19937_64 rng(salt);
    Tensor target = Tensor::from_data(t.shape(), rand_vec(t.size(), rng));
    return mse(t, target);
}

void check_against_fd(Tensor leaf, const std::function<Tensor()>& build, uint64_t salt,
                      double tol = 1e-4) {
    Tensor out = reduce_to_scalar(build(), salt);
    GradTable table = backward(out);
    REQUIRE(table.contains(leaf));
    Tensor analytic = table.grad(leaf);
    auto numeric = fd::gradient(leaf, [&] { return reduce_to_scalar(build(), salt).item(); });
    std::vector<double> a(analytic.data().begin(), analytic.data().end());
    CHECK(fd::max_rel_err(a, numeric) <= tol);
}

}  // namespace

TEST_CASE("tensor construction validates shape, length and finiteness") {
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), Error);
    CHECK_THROWS_AS(Tensor::from_data({2}, {1.0, std::nan("")}, false), Error);
    CHECK_THROWS_AS(Tensor::from_data({2}, {1.0, INFINITY}), Error);
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.shape() == Shape{2, 3});
}

TEST_CASE("matmul of 1x1 tensors is the scalar product") {
    Tensor a = Tensor::from_data({1, 1}, {3.0});
    Tensor b = Tensor::from_data({1, 1}, {4.0});
    CHECK(matmul(a, b).item() == 12.0);
}

TEST_CASE("softmax of a constant vector is uniform") {
    Tensor x = Tensor::from_data({3}, {0.0, 0.0, 0.0});
    Tensor p = softmax(x);
    for (int i = 0; i < 3; ++i) CHECK(p.at(i) == 1.0 / 3.0);
}

TEST_CASE("layer-norm of a constant vector is zero before affine terms") {
    Tensor x = Tensor::from_data({4}, {5.0, 5.0, 5.0, 5.0});
    Tensor y = layer_norm(x);
    for (int i = 0; i < 4; ++i) CHECK(y.at(i) == 0.0);
}

TEST_CASE("shape mismatch raises") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    CHECK_THROWS_AS(matmul(a, b), Error);
    CHECK_THROWS_AS(add(a, b), Error);
    CHECK_THROWS_AS(cosine(Tensor::from_data({2}, {1, 2}), Tensor::from_data({3}, {1, 2, 3})),
                    Error);
}

TEST_CASE("d(x*x)/dx at x = 3 is 6") {
    Tensor x = Tensor::from_data({1, 1}, {3.0}, true);
    Tensor y = reshape(matmul(x, x), {1});
    GradTable g = backward(y);
    CHECK(g.grad(x).item() == 6.0);
}

TEST_CASE("frozen tensors never appear in the grad table") {
    Tensor x = Tensor::from_data({1, 1}, {3.0}, true);
    Tensor w = Tensor::from_data({1, 1}, {5.0}, false);
    Tensor y = reshape(matmul(x, w), {1});
    GradTable g = backward(y);
    CHECK(g.contains(x));
    CHECK_FALSE(g.contains(w));
}

TEST_CASE("gradient of an unrelated tensor is absent") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor unrelated = Tensor::from_data({2}, {7.0, 8.0}, true);
    Tensor y = mean_pool(x);
    GradTable g = backward(y);
    CHECK_FALSE(g.contains(unrelated));
}

TEST_CASE("backward rejects non-scalars and consumed graphs") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tensor two = exp(x);
    CHECK_THROWS_AS(backward(two), Error);

    Tensor y = mean_pool(exp(x));
    backward(y);
    CHECK_THROWS_AS(backward(y), Error);

    // a leaf is not on a recorded graph
    Tensor s = Tensor::scalar(1.0, true);
    CHECK_THROWS_AS(backward(s), Error);
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
    std::mt19937_64 rng(11);
    auto data = rand_vec(24, rng);
    Tensor a = Tensor::from_data({4, 6}, data);
    Tensor b = Tensor::from_data({4, 6}, data);
    Tensor ya = softmax(gelu(layer_norm(a)));
    Tensor yb = softmax(gelu(layer_norm(b)));
    for (int64_t i = 0; i < ya.size(); ++i) CHECK(ya.at(i) == yb.at(i));
}

TEST_CASE("finite differences agree for every op") {
    std::mt19937_64 rng(42);

    SUBCASE("matmul") {
        Tensor a = Tensor::from_data({3, 4}, rand_vec(12, rng), true);
        Tensor b = Tensor::from_data({4, 2}, rand_vec(8, rng), true);
        check_against_fd(a, [&] { return matmul(a, b); }, 1);
        check_against_fd(b, [&] { return matmul(a, b); }, 2);
    }
    SUBCASE("add same-shape and row-broadcast") {
        Tensor a = Tensor::from_data({3, 4}, rand_vec(12, rng), true);
        Tensor b = Tensor::from_data({3, 4}, rand_vec(12, rng), true);
        Tensor c = Tensor::from_data({4}, rand_vec(4, rng), true);
        check_against_fd(a, [&] { return add(a, b); }, 3);
        check_against_fd(b, [&] { return add(a, b); }, 4);
        check_against_fd(c, [&] { return add(a, c); }, 5);
    }
    SUBCASE("scale") {
        Tensor a = Tensor::from_data({5}, rand_vec(5, rng), true);
        check_against_fd(a, [&] { return scale(a, -2.5); }, 6);
    }
    SUBCASE("embedding-lookup") {
        Tensor table = Tensor::from_data({6, 3}, rand_vec(18, rng), true);
        std::vector<int> ids = {1, 4, 1, 0};
        check_against_fd(table, [&] { return embedding_lookup(table, ids); }, 7);
    }
    SUBCASE("layer-norm") {
        Tensor x = Tensor::from_data({3, 5}, rand_vec(15, rng), true);
        Tensor gain = Tensor::from_data({5}, rand_vec(5, rng, 0.5, 1.5), true);
        Tensor bias = Tensor::from_data({5}, rand_vec(5, rng), true);
        check_against_fd(x, [&] { return layer_norm(x); }, 8);
        check_against_fd(x, [&] { return layer_norm(x, gain, bias); }, 9);
        check_against_fd(gain, [&] { return layer_norm(x, gain, bias); }, 10);
        check_against_fd(bias, [&] { return layer_norm(x, gain, bias); }, 11);
    }
    SUBCASE("softmax and log-softmax") {
        Tensor x = Tensor::from_data({2, 6}, rand_vec(12, rng, -2, 2), true);
        check_against_fd(x, [&] { return softmax(x); }, 12);
        check_against_fd(x, [&] { return log_softmax(x); }, 13);
    }
    SUBCASE("gelu") {
        Tensor x = Tensor::from_data({7}, rand_vec(7, rng, -3, 3), true);
        check_against_fd(x, [&] { return gelu(x); }, 14);
    }
    SUBCASE("causal-attention") {
        Tensor q = Tensor::from_data({5, 4}, rand_vec(20, rng), true);
        Tensor k = Tensor::from_data({5, 4}, rand_vec(20, rng), true);
        Tensor v = Tensor::from_data({5, 4}, rand_vec(20, rng), true);
        check_against_fd(q, [&] { return causal_attention(q, k, v); }, 15);
        check_against_fd(k, [&] { return causal_attention(q, k, v); }, 16);
        check_against_fd(v, [&] { return causal_attention(q, k, v); }, 17);
    }
    SUBCASE("mean-pool") {
        Tensor x = Tensor::from_data({4, 3}, rand_vec(12, rng), true);
        Tensor y = Tensor::from_data({6}, rand_vec(6, rng), true);
        check_against_fd(x, [&] { return mean_pool(x); }, 18);
        check_against_fd(y, [&] { return mean_pool(y); }, 19);
    }
    SUBCASE("cosine") {
        Tensor a = Tensor::from_data({5}, rand_vec(5, rng, 0.2, 1.0), true);
        Tensor b = Tensor::from_data({5}, rand_vec(5, rng, 0.2, 1.0), true);
        check_against_fd(a, [&] { return cosine(a, b); }, 20);
        check_against_fd(b, [&] { return cosine(a, b); }, 21);
    }
    SUBCASE("mse") {
        Tensor a = Tensor::from_data({4}, rand_vec(4, rng), true);
        Tensor b = Tensor::from_data({4}, rand_vec(4, rng), true);
        check_against_fd(a, [&] { return mse(a, b); }, 22);
        check_against_fd(b, [&] { return mse(a, b); }, 23);
    }
    SUBCASE("log and exp") {
        Tensor x = Tensor::from_data({5}, rand_vec(5, rng, 0.2, 3.0), true);
        check_against_fd(x, [&] { return grad::log(x); }, 24);
        check_against_fd(x, [&] { return grad::exp(x); }, 25);
    }
    SUBCASE("concat and slice") {
        Tensor a = Tensor::from_data({2, 3}, rand_vec(6, rng), true);
        Tensor b = Tensor::from_data({4, 3}, rand_vec(12, rng), true);
        Tensor c = Tensor::from_data({2, 5}, rand_vec(10, rng), true);
        check_against_fd(a, [&] { return concat(a, b, 0); }, 26);
        check_against_fd(b, [&] { return concat(a, b, 0); }, 27);
        check_against_fd(a, [&] { return concat(a, c, 1); }, 28);
        check_against_fd(b, [&] { return slice(b, 0, 1, 2); }, 29);
        check_against_fd(c, [&] { return slice(c, 1, 1, 3); }, 30);
    }
    SUBCASE("reshape") {
        Tensor a = Tensor::from_data({2, 6}, rand_vec(12, rng), true);
        check_against_fd(a, [&] { return reshape(a, {3, 4}); }, 31);
    }
}

TEST_CASE("finite differences agree on composed graphs up to depth 40") {
    std::mt19937_64 rng(7);
    Tensor x = Tensor::from_data({4, 8}, rand_vec(32, rng, -0.5, 0.5), true);
    Tensor w = Tensor::from_data({8, 8}, rand_vec(64, rng, -0.4, 0.4), true);
    auto build = [&] {
        Tensor h = x;
        for (int depth = 0; depth < 13; ++depth) {
            h = layer_norm(h);
            h = matmul(h, w);
            h = gelu(h);
        }
        return mean_pool(h);  // depth 40 including the pool
    };
    check_against_fd(x, build, 77);
    check_against_fd(w, build, 78);
}

TEST_CASE("no-grad mode records nothing but computes the same values") {
    Tensor x = Tensor::from_data({3}, {0.3, -0.2, 0.9}, true);
    Tensor with_graph = gelu(x);
    Tensor without_graph;
    {
        NoGradGuard guard;
        without_graph = gelu(x);
    }
    for (int i = 0; i < 3; ++i) CHECK(with_graph.at(i) == without_graph.at(i));
    CHECK(with_graph.requires_grad());
    CHECK_FALSE(without_graph.requires_grad());
    CHECK_THROWS_AS(backward(mean_pool(without_graph)), Error);
}

TEST_CASE("log rejects non-positive input") {
    Tensor x = Tensor::from_data({2}, {1.0, 0.0});
    CHECK_THROWS_AS(grad::log(x), Error);
}

TEST_CASE("mutable_data only on leaves") {
    Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
    CHECK_NOTHROW(x.mutable_data());
    Tensor y = gelu(x);
    CHECK_THROWS_AS(y.mutable_data(), Error);
}
