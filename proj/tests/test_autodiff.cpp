#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "symplex/autodiff.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>

using namespace symplex::ad;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Max relative error between the tape gradient and central differences for
// a scalar function of the given parameters.
double grad_check(std::vector<Parameter*> params, const std::function<Var(Tape&)>& f, double h = 1e-5) {
    for (auto* p : params) p->zero_grad();
    {
        Tape tape;
        tape.backward(f(tape));
    }
    double worst = 0.0;
    for (auto* p : params) {
        for (Eigen::Index k = 0; k < p->value.size(); ++k) {
            const double keep = p->value.data()[k];
            p->value.data()[k] = keep + h;
            Tape t1;
            const double hi = f(t1).scalar();
            p->value.data()[k] = keep - h;
            Tape t2;
            const double lo = f(t2).scalar();
            p->value.data()[k] = keep;
            const double fd = (hi - lo) / (2 * h);
            const double g = p->grad.data()[k];
            worst = std::max(worst, std::abs(g - fd) / std::max(1e-3, std::abs(g) + std::abs(fd)));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("masked softmax") {
    Tape tape;
    Mask keep(1, 3);
    keep << true, false, true;
    auto p = masked_softmax(tape.constant(Matrix::Ones(1, 3)), keep);
    CHECK(p.value()(0, 0) == doctest::Approx(0.5));
    CHECK(p.value()(0, 1) == 0.0);
    CHECK(p.value()(0, 2) == doctest::Approx(0.5));

    Mask none = Mask::Constant(1, 3, false);
    CHECK_THROWS_AS(masked_softmax(tape.constant(Matrix::Ones(1, 3)), none), DimensionError);
}

TEST_CASE("layer norm of a constant row is zero") {
    Tape tape;
    auto y = layer_norm(tape.constant(Matrix::Constant(2, 5, 3.0)));
    CHECK(y.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward basics") {
    std::mt19937_64 rng(0);
    Parameter p("p", random_matrix(rng, 3, 2));
    {
        Tape tape;
        tape.backward(sum(tape.parameter(p)));
        CHECK(p.grad.isApprox(Matrix::Ones(3, 2)));
    }
    p.zero_grad();
    {
        Tape tape;
        auto v = tape.parameter(p);
        tape.backward(sum(multiply(v, v)));
        CHECK(p.grad.isApprox(2 * p.value));
    }
    Tape tape;
    auto v = tape.parameter(p);
    CHECK_THROWS_AS(tape.backward(v), DimensionError);
    auto s = sum(v);
    tape.backward(s);
    CHECK_THROWS_AS(tape.backward(s), std::logic_error);
    CHECK_THROWS_AS(matmul(v, v), DimensionError);
}

TEST_CASE("matmul gradient") {
    std::mt19937_64 rng(1);
    Parameter a("a", random_matrix(rng, 2, 3));
    Parameter b("b", random_matrix(rng, 3, 2));
    Matrix w = random_matrix(rng, 2, 2);
    auto f = [&](Tape& t) { return sum(multiply(matmul(t.parameter(a), t.parameter(b)), t.constant(w))); };
    CHECK(grad_check({&a, &b}, f) < 1e-4);
}

TEST_CASE("every op passes a finite-difference check") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        const Eigen::Index n = 2 + static_cast<Eigen::Index>(seed % 3);
        const Eigen::Index d = 3 + static_cast<Eigen::Index>(seed % 4);
        Parameter x("x", random_matrix(rng, n, d));
        Parameter w("w", random_matrix(rng, d, d));
        Parameter bias("bias", random_matrix(rng, 1, d));
        Parameter gain("gain", random_matrix(rng, 1, d));
        Parameter table("table", random_matrix(rng, 5, d));
        Matrix mix = random_matrix(rng, n, d);
        Mask keep = Mask::Constant(n, d, true);
        for (Eigen::Index i = 0; i < n; ++i) keep(i, (i + 1) % d) = false;
        Eigen::MatrixXi idx(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) idx(i, j) = static_cast<int>((i + 2 * j) % d);
        }
        std::vector<int> rows;
        for (Eigen::Index i = 0; i < n; ++i) rows.push_back(static_cast<int>((i * 3) % 5));

        // a three-layer network touching every op
        auto f = [&](Tape& t) {
            auto h = add(t.parameter(x), gather_rows(t.parameter(table), rows));
            h = add_row(matmul(h, t.parameter(w)), t.parameter(bias));
            h = multiply_row(layer_norm(h), t.parameter(gain));
            h = relu(h) + scale(h, 0.1);
            auto att = masked_softmax(matmul(h, transpose(h)), Mask::Constant(n, n, true));
            h = matmul(att, h);
            std::vector<Var> parts{col_block(h, 0, 1), col_block(h, 1, d - 1)};
            h = concat_cols(parts);
            auto lp = masked_log_softmax(h, keep);
            auto picked = gather_cols(lp, idx);
            auto pos = log(add(multiply(h, h), t.constant(Matrix::Ones(n, d))));
            std::vector<Var> terms{sum(multiply(lp, t.constant(mix))), mean(pos), element(picked, 0, n - 1),
                                   scale(sum(picked), 0.3)};
            return sum_all(terms) - mean(sub(h, t.constant(mix)));
        };
        CHECK(grad_check({&x, &w, &bias, &gain, &table}, f) < 1e-4);
    }
}

TEST_CASE("clip and adam") {
    Parameter p("p", Matrix::Zero(1, 4));
    p.grad << 5, 5, 5, 5;  // norm 10
    std::vector<Parameter*> ps{&p};
    CHECK(clip_grad_norm(ps, 5.0) == doctest::Approx(10.0));
    CHECK(p.grad.isApprox(Matrix::Constant(1, 4, 2.5)));
    p.grad << 3, 0, 0, 0;
    clip_grad_norm(ps, 5.0);
    CHECK(p.grad(0, 0) == 3.0);

    Parameter q("q", Matrix::Constant(1, 1, 1.0));
    Adam adam({&q}, AdamConfig{0.1});
    q.grad(0, 0) = 2.0;
    adam.step();
    // first bias-corrected step moves by lr * sign(g)
    CHECK(q.value(0, 0) == doctest::Approx(0.9));
}

TEST_CASE("plateau scheduler") {
    Parameter q("q", Matrix::Zero(1, 1));
    Adam adam({&q}, AdamConfig{5e-4});
    PlateauScheduler sched;
    CHECK_FALSE(sched.step(0.5, adam));
    int reductions = 0;
    for (int e = 0; e < 11; ++e) reductions += sched.step(0.5, adam) ? 1 : 0;
    CHECK(reductions == 1);
    CHECK(adam.lr() == doctest::Approx(4.5e-4));
    CHECK_FALSE(sched.step(0.6, adam));
    CHECK(sched.bad_checks() == 0);
}

TEST_CASE("checkpoint round trip") {
    std::mt19937_64 rng(4);
    Parameter a("a", random_matrix(rng, 2, 3));
    Parameter b("b", random_matrix(rng, 1, 4));
    const auto path = std::filesystem::temp_directory_path() / "symplex_ckpt_test.json";
    std::vector<const Parameter*> out{&a, &b};
    save_checkpoint(path, out);
    Parameter a2("a", Matrix::Zero(2, 3));
    Parameter b2("b", Matrix::Zero(1, 4));
    std::vector<Parameter*> in{&a2, &b2};
    load_checkpoint(path, in);
    CHECK(a2.value == a.value);
    CHECK(b2.value == b.value);
    Parameter wrong("a", Matrix::Zero(3, 3));
    std::vector<Parameter*> bad{&wrong};
    CHECK_THROWS_AS(load_checkpoint(path, bad), DimensionError);
    std::filesystem::remove(path);
}
