#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "greenwave/autodiff.hpp"
#include "greenwave/matrix.hpp"
#include "support/gradient_oracle.hpp"

using namespace greenwave;

TEST_CASE("matrix shape errors name both shapes") {
    Matrix a(2, 3), b(2, 2);
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
        CHECK(msg.find("2x2") != std::string::npos);
    }
}

TEST_CASE("dense forward basics") {
    Matrix x(1, 2, {1.0, 2.0});
    Matrix w(2, 1, {3.0, 4.0});
    Matrix b(1, 1, {0.0});
    Matrix y = dense_forward(x, w, b);
    REQUIRE(y.rows() == 1);
    REQUIRE(y.cols() == 1);
    CHECK(y(0, 0) == 11.0);

    Matrix eye = Matrix::identity(2);
    Matrix zero_b(1, 2);
    CHECK(dense_forward(x, eye, zero_b) == x);
}

TEST_CASE("taped dense forward matches plain forward") {
    Rng rng(5);
    Matrix x = gwtest::random_matrix(3, 5, rng);
    Matrix w = gwtest::random_matrix(5, 2, rng);
    Matrix b = gwtest::random_matrix(1, 2, rng);
    Tape t;
    Tape::NodeId y = dense_forward(t, t.leaf(x), t.leaf(w), t.leaf(b));
    CHECK(t.value(y) == dense_forward(x, w, b));
}

TEST_CASE("gradient checks: all layer families within 1e-4 of finite differences") {
    for (const auto& summary : gwtest::run_layer_gradient_checks(20)) {
        INFO(summary.layer << " worst rel error " << summary.worst_rel_error);
        CHECK(summary.worst_rel_error <= 1e-4);
    }
}

TEST_CASE("composed two-layer network matches finite differences end to end") {
    Rng rng(11);
    const Matrix target = gwtest::random_matrix(4, 2, rng);
    auto build = [&target](Tape& t, const std::vector<Tape::NodeId>& L) {
        Tape::NodeId h = t.relu(dense_forward(t, L[0], L[1], L[2]));
        Tape::NodeId y = dense_forward(t, h, L[3], L[4]);
        return t.mse_against(y, target);
    };
    auto res = gwtest::gradient_check(build, {gwtest::random_matrix(4, 3, rng), gwtest::random_matrix(3, 6, rng),
                                              gwtest::random_matrix(1, 6, rng), gwtest::random_matrix(6, 2, rng),
                                              gwtest::random_matrix(1, 2, rng)});
    CHECK(res.rel_error <= 1e-4);
}

TEST_CASE("gcn layer") {
    SECTION("single node identity") {
        Matrix f(1, 3, {1.0, -2.0, 3.0});
        Matrix a_hat(1, 1, {1.0});
        Matrix w = Matrix::identity(3);
        CHECK(gcn_layer(f, a_hat, w, Activation::identity) == f);
    }
    SECTION("shape contract") {
        Rng rng(3);
        Matrix f = gwtest::random_matrix(15, 8, rng);
        Matrix a_hat = gwtest::random_row_stochastic(15, rng);
        Matrix w = gwtest::random_matrix(8, 16, rng);
        Matrix y = gcn_layer(f, a_hat, w, Activation::rectifier);
        CHECK(y.rows() == 15);
        CHECK(y.cols() == 16);
    }
    SECTION("two-node line graph against hand product") {
        Matrix f(2, 2, {1.0, 2.0, 3.0, 4.0});
        Matrix a_hat(2, 2, {0.5, 0.5, 0.5, 0.5});
        Matrix w = Matrix::identity(2);
        Matrix y = gcn_layer(f, a_hat, w, Activation::identity);
        CHECK(y(0, 0) == 2.0);
        CHECK(y(0, 1) == 3.0);
        CHECK(y(1, 0) == 2.0);
        CHECK(y(1, 1) == 3.0);
    }
    SECTION("A_hat = I with identity activation equals dense without bias") {
        Rng rng(7);
        Matrix f = gwtest::random_matrix(4, 3, rng);
        Matrix w = gwtest::random_matrix(3, 5, rng);
        CHECK(gcn_layer(f, Matrix::identity(4), w, Activation::identity) == matmul(f, w));
    }
}

TEST_CASE("masked row argmax") {
    SECTION("plain row") {
        Matrix q(1, 4, {1.0, 5.0, 3.0, 2.0});
        Matrix mask(1, 4, {1.0, 1.0, 1.0, 1.0});
        CHECK(masked_row_argmax(q, mask) == std::vector<int>{1});
    }
    SECTION("mask forbids the larger entry") {
        Matrix q(1, 4, {9.0, 5.0, 0.0, 0.0});
        Matrix mask(1, 4, {0.0, 1.0, 0.0, 0.0});
        CHECK(masked_row_argmax(q, mask) == std::vector<int>{1});
    }
    SECTION("invariant under positive scaling") {
        Rng rng(19);
        for (int trial = 0; trial < 50; ++trial) {
            Matrix q = gwtest::random_matrix(4, 5, rng);
            Matrix mask = gwtest::random_mask(4, 5, rng);
            const double c = rng.uniform(0.01, 100.0);
            Matrix scaled = q;
            scaled *= c;
            CHECK(masked_row_argmax(q, mask) == masked_row_argmax(scaled, mask));
        }
    }
    SECTION("all-invalid row is a contract violation") {
        Matrix q(1, 2, {1.0, 2.0});
        Matrix mask(1, 2, {0.0, 0.0});
        CHECK_THROWS_AS(masked_row_argmax(q, mask), std::logic_error);
    }
    SECTION("never returns an invalid index") {
        Rng rng(23);
        for (int trial = 0; trial < 200; ++trial) {
            Matrix q = gwtest::random_matrix(6, 4, rng, 10.0);
            Matrix mask = gwtest::random_mask(6, 4, rng);
            std::vector<int> pick = masked_row_argmax(q, mask);
            for (int r = 0; r < 6; ++r) CHECK(mask(r, pick[r]) == 1.0);
        }
    }
}

TEST_CASE("optimizers") {
    SECTION("sgd single step") {
        Matrix w(1, 1, {1.0});
        Matrix g(1, 1, {2.0});
        SgdOptimizer opt{1e-3};
        Matrix* params[] = {&w};
        const Matrix* grads[] = {&g};
        opt.step(params, grads);
        CHECK(w(0, 0) == Catch::Approx(0.998));
    }
    SECTION("zero gradient leaves parameters unchanged") {
        Matrix w(2, 2, {1.0, 2.0, 3.0, 4.0});
        Matrix g(2, 2);
        AdamOptimizer opt;
        Matrix* params[] = {&w};
        const Matrix* grads[] = {&g};
        opt.step(params, grads);
        CHECK(w == Matrix(2, 2, {1.0, 2.0, 3.0, 4.0}));
    }
    SECTION("quadratic bowl descends strictly") {
        Matrix w(1, 1, {1.0});
        SgdOptimizer opt{1e-3};
        double prev = std::abs(w(0, 0));
        for (int i = 0; i < 100; ++i) {
            Matrix g(1, 1, {2.0 * w(0, 0)});
            Matrix* params[] = {&w};
            const Matrix* grads[] = {&g};
            opt.step(params, grads);
            CHECK(std::abs(w(0, 0)) < prev);
            prev = std::abs(w(0, 0));
        }
    }
    SECTION("adam converges on the bowl") {
        Matrix w(1, 1, {1.0});
        AdamOptimizer opt;
        for (int i = 0; i < 2000; ++i) {
            Matrix g(1, 1, {2.0 * w(0, 0)});
            Matrix* params[] = {&w};
            const Matrix* grads[] = {&g};
            opt.step(params, grads);
        }
        CHECK(std::abs(w(0, 0)) < 0.05);
    }
    SECTION("non-finite gradient aborts without touching parameters") {
        Matrix w(1, 2, {1.0, 2.0});
        Matrix g(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()});
        AdamOptimizer opt;
        Matrix* params[] = {&w};
        const Matrix* grads[] = {&g};
        CHECK_THROWS_AS(opt.step(params, grads), std::runtime_error);
        CHECK(w == Matrix(1, 2, {1.0, 2.0}));
    }
}

TEST_CASE("tape handles shared nodes") {
    // f(x) = mean(x) + mean(x * x); df/dx_i = 1/n + 2 x_i / n
    Matrix x(1, 4, {1.0, -2.0, 0.5, 3.0});
    Tape t;
    Tape::NodeId xl = t.leaf(x);
    Tape::NodeId loss = t.add(t.mean_all(xl), t.mean_all(t.mul_elem(xl, xl)));
    t.backward(loss);
    for (int c = 0; c < 4; ++c) CHECK(t.grad(xl)(0, c) == Catch::Approx(0.25 + 0.5 * x(0, c)));
}

TEST_CASE("parameter checkpoints round-trip exactly") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "gw_params_test.ckpt").string();
    Rng rng(99);
    Matrix a = gwtest::random_matrix(3, 4, rng, 3.0);
    Matrix b = gwtest::random_matrix(1, 2, rng, 0.001);
    a(0, 0) = 1.0 / 3.0;  // not exactly representable in decimal
    {
        NamedParam params[] = {{"a", &a}, {"b", &b}};
        save_parameters(path, params);
    }
    Matrix a2(3, 4), b2(1, 2);
    {
        NamedParam params[] = {{"a", &a2}, {"b", &b2}};
        load_parameters(path, params);
    }
    CHECK(a == a2);
    CHECK(b == b2);

    SECTION("shape mismatch is rejected") {
        Matrix wrong(4, 3);
        NamedParam params[] = {{"a", &wrong}, {"b", &b2}};
        CHECK_THROWS_WITH(load_parameters(path, params), Catch::Matchers::ContainsSubstring("shape mismatch"));
    }
    SECTION("version mismatch is rejected") {
        const std::string bad = (fs::temp_directory_path() / "gw_params_bad.ckpt").string();
        std::ofstream out(bad);
        out << kCheckpointMagic << " 999\n0\n";
        out.close();
        NamedParam params[] = {{"a", &a2}, {"b", &b2}};
        CHECK_THROWS_WITH(load_parameters(bad, params), Catch::Matchers::ContainsSubstring("version"));
        fs::remove(bad);
    }
    fs::remove(path);
}
