#include <catch2/catch_amalgamated.hpp>

#include "promptfence/autodiff.hpp"
#include "test_support.hpp"

using namespace pfence;
using pftest::central_diff;
using pftest::grad_close;
using pftest::random_mat;

namespace {

// FD-checks d(sum of some scalar reduction)/d(leaf) for an arbitrary graph.
void check_gradient(Mat leaf_value, const std::function<ad::Var(ad::Tape&, ad::Var)>& graph,
                    double rtol = 1e-6) {
    auto eval = [&]() {
        ad::Tape tape;
        ad::Var x = tape.leaf(leaf_value, true);
        return tape.value(graph(tape, x))(0, 0);
    };
    ad::Tape tape;
    ad::Var x = tape.leaf(leaf_value, true);
    ad::Var root = graph(tape, x);
    tape.backward(root);
    Mat analytic = tape.grad(x);

    for (Eigen::Index i = 0; i < leaf_value.rows(); ++i)
        for (Eigen::Index j = 0; j < leaf_value.cols(); ++j) {
            double numeric = central_diff(eval, leaf_value(i, j));
            INFO("entry (" << i << "," << j << "): analytic " << analytic(i, j) << " numeric "
                           << numeric);
            REQUIRE(grad_close(analytic(i, j), numeric, rtol));
        }
}

}  // namespace

TEST_CASE("matmul and bias gradients match finite differences", "[autodiff]") {
    Rng rng(7);
    Mat a = random_mat(rng, 3, 4);
    Mat b = random_mat(rng, 4, 2);
    check_gradient(a, [&](ad::Tape& t, ad::Var x) {
        return t.sum_all(t.matmul(x, t.leaf(b)));
    });
    check_gradient(b, [&](ad::Tape& t, ad::Var x) {
        return t.sum_all(t.matmul(t.leaf(a), x));
    });
    Mat bias = random_mat(rng, 1, 2);
    check_gradient(bias, [&](ad::Tape& t, ad::Var x) {
        return t.sum_all(t.tanh(t.add_rowvec(t.leaf(a * b), x)));
    });
}

TEST_CASE("elementwise op gradients", "[autodiff]") {
    Rng rng(11);
    Mat a = random_mat(rng, 2, 5);
    check_gradient(a, [](ad::Tape& t, ad::Var x) { return t.sum_all(t.tanh(x)); });
    check_gradient(a, [](ad::Tape& t, ad::Var x) { return t.sum_all(t.exp(t.scale(x, 0.5))); });
    check_gradient(a, [](ad::Tape& t, ad::Var x) { return t.sum_all(t.hadamard(x, x)); });
    check_gradient(a, [](ad::Tape& t, ad::Var x) {
        return t.sum_all(t.sub(t.scale(x, 2.0), t.hadamard(x, x)));
    });
}

TEST_CASE("row reduction and concat gradients", "[autodiff]") {
    Rng rng(13);
    Mat a = random_mat(rng, 4, 3);
    check_gradient(a, [](ad::Tape& t, ad::Var x) {
        return t.sum_all(t.hadamard(t.mean_rows(x), t.mean_rows(x)));
    });
    Mat b = random_mat(rng, 2, 3);
    check_gradient(a, [&](ad::Tape& t, ad::Var x) {
        ad::Var cat = t.vconcat({x, t.leaf(b), x});
        return t.sum_all(t.hadamard(cat, cat));
    });
    check_gradient(a, [](ad::Tape& t, ad::Var x) { return t.sum_all(t.transpose(x)); });
}

TEST_CASE("normalize_rows gradient", "[autodiff]") {
    Rng rng(17);
    Mat a = random_mat(rng, 3, 6);
    Mat w = random_mat(rng, 6, 1);
    check_gradient(a, [&](ad::Tape& t, ad::Var x) {
        return t.sum_all(t.matmul(t.normalize_rows(x), t.leaf(w)));
    });
}

TEST_CASE("softmax and log_softmax gradients", "[autodiff]") {
    Rng rng(19);
    Mat a = random_mat(rng, 3, 5);
    Mat w = random_mat(rng, 5, 1);
    check_gradient(a, [&](ad::Tape& t, ad::Var x) {
        return t.sum_all(t.matmul(t.softmax_rows(x), t.leaf(w)));
    });
    check_gradient(a, [&](ad::Tape& t, ad::Var x) {
        return t.sum_all(t.matmul(t.log_softmax_rows(x), t.leaf(w)));
    });
    std::vector<int> labels = {2, 0, 4};
    check_gradient(a, [&](ad::Tape& t, ad::Var x) {
        return t.scale(t.sum_all(t.gather_labels(t.log_softmax_rows(x), labels)), -1.0 / 3.0);
    });
}

TEST_CASE("softmax rows sum to one and log_softmax matches softmax", "[autodiff]") {
    Rng rng(23);
    Mat a = random_mat(rng, 6, 7, 3.0);
    ad::Tape tape;
    ad::Var x = tape.leaf(a);
    Mat p = tape.value(tape.softmax_rows(x));
    Mat lp = tape.value(tape.log_softmax_rows(x));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        REQUIRE(p.row(i).sum() == Catch::Approx(1.0).margin(1e-12));
        for (Eigen::Index j = 0; j < p.cols(); ++j)
            REQUIRE(std::log(p(i, j)) == Catch::Approx(lp(i, j)).margin(1e-9));
    }
}

TEST_CASE("min_const gradient is masked on the capped side", "[autodiff]") {
    Mat a(1, 4);
    a << 0.5, 1.5, 2.5, 3.5;
    ad::Tape tape;
    ad::Var x = tape.leaf(a, true);
    ad::Var capped = tape.min_const(x, 2.0);
    tape.backward(tape.sum_all(capped));
    Mat g = tape.grad(x);
    REQUIRE(g(0, 0) == 1.0);
    REQUIRE(g(0, 1) == 1.0);
    REQUIRE(g(0, 2) == 0.0);
    REQUIRE(g(0, 3) == 0.0);
    REQUIRE(tape.value(capped)(0, 2) == 2.0);
}

TEST_CASE("gradients accumulate through shared subgraphs", "[autodiff]") {
    // y = sum(x) + sum(x o x); dy/dx = 1 + 2x
    Mat a(2, 2);
    a << 1.0, -2.0, 0.5, 3.0;
    ad::Tape tape;
    ad::Var x = tape.leaf(a, true);
    ad::Var y = tape.add(tape.sum_all(x), tape.sum_all(tape.hadamard(x, x)));
    tape.backward(y);
    Mat g = tape.grad(x);
    for (Eigen::Index i = 0; i < 2; ++i)
        for (Eigen::Index j = 0; j < 2; ++j)
            REQUIRE(g(i, j) == Catch::Approx(1.0 + 2.0 * a(i, j)).margin(1e-12));
}

TEST_CASE("shape mismatches are rejected", "[autodiff]") {
    ad::Tape tape;
    ad::Var a = tape.leaf(Mat::Zero(2, 3));
    ad::Var b = tape.leaf(Mat::Zero(3, 2));
    REQUIRE_THROWS_AS(tape.add(a, b), ConfigError);
    REQUIRE_THROWS_AS(tape.matmul(a, a), ConfigError);
    REQUIRE_THROWS_AS(tape.backward(a), ConfigError);
}
