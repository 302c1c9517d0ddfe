#include <catch2/catch_amalgamated.hpp>

#include "gaitkit/autodiff.hpp"
#include "gaitkit/tensor.hpp"
#include "helpers.hpp"

using namespace gaitkit;
using testkit::gradcheck;
using testkit::random_tensor;
using testkit::weighted_sum;

namespace {

// naive O(T*K) reference convolution, joints handled one by one
Tensor64 conv_reference(const Tensor64& x, const Tensor64& w, size_t stride, size_t pad) {
    const size_t B = x.dim(0), Ci = x.dim(1), T = x.dim(2), N = x.dim(3);
    const size_t Co = w.dim(0), K = w.dim(2);
    const size_t To = (T + 2 * pad - K) / stride + 1;
    Tensor64 out(Shape{B, Co, To, N});
    for (size_t b = 0; b < B; ++b)
        for (size_t co = 0; co < Co; ++co)
            for (size_t to = 0; to < To; ++to)
                for (size_t n = 0; n < N; ++n) {
                    double acc = 0.0;
                    for (size_t ci = 0; ci < Ci; ++ci)
                        for (size_t k = 0; k < K; ++k) {
                            long ti = long(to * stride + k) - long(pad);
                            if (ti < 0 || ti >= long(T)) continue;
                            acc += x(b, ci, size_t(ti), n) * w(co, ci, k, 0);
                        }
                    out(b, co, to, n) = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("matmul identity and projector cases") {
    TapeT<double> t;
    auto I = t.leaf(Tensor64(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}));
    auto A = t.leaf(Tensor64(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}));
    auto out = matmul(I, A);
    CHECK(out.val()(0, 0) == 1.0);
    CHECK(out.val()(0, 1) == 2.0);
    CHECK(out.val()(1, 0) == 3.0);
    CHECK(out.val()(1, 1) == 4.0);

    auto P = t.leaf(Tensor64(Shape{2, 2}, std::vector<double>{1, 0, 0, 0}));
    auto B = t.leaf(Tensor64(Shape{2, 2}, std::vector<double>{5, 6, 7, 8}));
    auto out2 = matmul(P, B);
    CHECK(out2.val()(0, 0) == 5.0);
    CHECK(out2.val()(0, 1) == 6.0);
    CHECK(out2.val()(1, 0) == 0.0);
    CHECK(out2.val()(1, 1) == 0.0);
}

TEST_CASE("matmul rejects mismatched shapes with both shapes named") {
    TapeT<double> t;
    auto a = t.leaf(Tensor64(Shape{3, 4}));
    auto b = t.leaf(Tensor64(Shape{3, 2}));
    try {
        matmul(a, b);
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        CHECK(msg.find("(3,4)") != std::string::npos);
        CHECK(msg.find("(3,2)") != std::string::npos);
    }
}

TEST_CASE("matmul gradients vs central finite differences") {
    Rng rng(11);
    auto fn = [](const std::vector<Tensor64>& in, std::vector<Tensor64>* grads) {
        TapeT<double> t;
        auto a = t.leaf(in[0]);
        auto b = t.leaf(in[1]);
        auto loss = weighted_sum(matmul(a, b));
        if (grads) {
            t.backward(loss);
            *grads = {t.grad_of(a), t.grad_of(b)};
        }
        return loss.val().item();
    };
    double err = gradcheck(fn, {random_tensor(Shape{3, 4}, rng),
                                random_tensor(Shape{4, 2}, rng)});
    CHECK(err < 1e-5);
}

TEST_CASE("conv_temporal identity map with K=1") {
    TapeT<double> t;
    Rng rng(3);
    auto x = t.leaf(random_tensor(Shape{1, 2, 5, 3}, rng));
    // identity channel map: w[co][ci][0] = 1 iff co == ci
    Tensor64 w(Shape{2, 2, 1, 1});
    w(0, 0, 0, 0) = 1.0;
    w(1, 1, 0, 0) = 1.0;
    auto out = conv_temporal(x, t.leaf(std::move(w)), 1, 0);
    REQUIRE(out.val().shape() == x.val().shape());
    for (size_t i = 0; i < out.val().numel(); ++i)
        CHECK(out.val()[i] == Catch::Approx(x.val()[i]).margin(1e-12));
}

TEST_CASE("conv_temporal box filter on constant input") {
    TapeT<double> t;
    auto x = t.leaf(Tensor64(Shape{1, 1, 6, 2}, 1.0));
    auto w = t.leaf(Tensor64(Shape{1, 1, 3, 1}, 1.0));
    auto out = conv_temporal(x, w, 1, 0);  // zero pad -> T' = 4, all interior
    REQUIRE(out.val().dim(2) == 4);
    for (size_t i = 0; i < out.val().numel(); ++i)
        CHECK(out.val()[i] == Catch::Approx(3.0).margin(1e-12));
}

TEST_CASE("conv_temporal matches the naive loop reference") {
    Rng rng(17);
    for (auto [stride, pad] : std::vector<std::pair<size_t, size_t>>{{1, 1}, {2, 4}, {1, 4}}) {
        size_t K = pad == 1 ? 3 : 9;
        Tensor64 x = random_tensor(Shape{2, 3, 10, 4}, rng);
        Tensor64 w = random_tensor(Shape{2, 3, K, 1}, rng);
        TapeT<double> t;
        auto out = conv_temporal(t.leaf(x), t.leaf(w), stride, pad);
        Tensor64 ref = conv_reference(x, w, stride, pad);
        REQUIRE(out.val().shape() == ref.shape());
        for (size_t i = 0; i < ref.numel(); ++i)
            CHECK(std::fabs(out.val()[i] - ref[i]) < 1e-6);
    }
}

TEST_CASE("conv_temporal invalid geometry raises") {
    TapeT<double> t;
    auto x = t.leaf(Tensor64(Shape{1, 1, 2, 2}));
    auto w = t.leaf(Tensor64(Shape{1, 1, 9, 1}));
    CHECK_THROWS_AS(conv_temporal(x, w, 1, 1), DimensionError);
}

TEST_CASE("conv_temporal gradients vs finite differences") {
    Rng rng(23);
    for (size_t stride : {size_t(1), size_t(2)}) {
        auto fn = [stride](const std::vector<Tensor64>& in, std::vector<Tensor64>* grads) {
            TapeT<double> t;
            auto x = t.leaf(in[0]);
            auto w = t.leaf(in[1]);
            auto loss = weighted_sum(conv_temporal(x, w, stride, 1));
            if (grads) {
                t.backward(loss);
                *grads = {t.grad_of(x), t.grad_of(w)};
            }
            return loss.val().item();
        };
        double err = gradcheck(fn, {random_tensor(Shape{2, 2, 7, 3}, rng),
                                    random_tensor(Shape{2, 2, 3, 1}, rng)});
        CHECK(err < 1e-4);
    }
}

TEST_CASE("batch_norm keeps standardized input unchanged") {
    Rng rng(5);
    // build an input that is exactly zero-mean unit-variance per channel
    Tensor64 x = random_tensor(Shape{2, 3, 4, 5}, rng);
    const size_t C = 3, plane = 4 * 5, B = 2;
    for (size_t c = 0; c < C; ++c) {
        double mu = 0, var = 0;
        for (size_t b = 0; b < B; ++b)
            for (size_t i = 0; i < plane; ++i) mu += x(b, c, i / 5, i % 5);
        mu /= double(B * plane);
        for (size_t b = 0; b < B; ++b)
            for (size_t i = 0; i < plane; ++i) {
                double d = x(b, c, i / 5, i % 5) - mu;
                var += d * d;
            }
        var /= double(B * plane);
        double is = 1.0 / std::sqrt(var);
        for (size_t b = 0; b < B; ++b)
            for (size_t i = 0; i < plane; ++i)
                x(b, c, i / 5, i % 5) = (x(b, c, i / 5, i % 5) - mu) * is;
    }
    TapeT<double> t;
    BnStatsT<double> stats(C);
    auto gamma = t.leaf(Tensor64(Shape{C}, 1.0));
    auto beta = t.leaf(Tensor64(Shape{C}, 0.0));
    auto out = batch_norm(t.leaf(x), gamma, beta, stats, true);
    for (size_t i = 0; i < out.val().numel(); ++i)
        CHECK(std::fabs(out.val()[i] - x[i]) < 1e-5);
}

TEST_CASE("batch_norm constant input maps to shift") {
    TapeT<double> t;
    BnStatsT<double> stats(2);
    auto x = t.leaf(Tensor64(Shape{1, 2, 3, 3}, 7.25));
    auto gamma = t.leaf(Tensor64(Shape{2}, 1.5));
    auto beta = t.leaf(Tensor64(Shape{2}, std::vector<double>{0.5, -2.0}));
    auto out = batch_norm(x, gamma, beta, stats, true);
    for (size_t i = 0; i < 9; ++i) {
        CHECK(out.val()[i] == Catch::Approx(0.5).margin(1e-9));
        CHECK(out.val()[9 + i] == Catch::Approx(-2.0).margin(1e-9));
    }
}

TEST_CASE("batch_norm eval mode matches the closed form") {
    TapeT<double> t;
    BnStatsT<double> stats(2);
    stats.running_mean = Tensor64(Shape{2}, std::vector<double>{1.0, -0.5});
    stats.running_var = Tensor64(Shape{2}, std::vector<double>{4.0, 0.25});
    Tensor64 x(Shape{1, 2, 1, 2}, std::vector<double>{3.0, -1.0, 0.5, -0.5});
    auto gamma = t.leaf(Tensor64(Shape{2}, std::vector<double>{2.0, 3.0}));
    auto beta = t.leaf(Tensor64(Shape{2}, std::vector<double>{0.1, -0.2}));
    auto out = batch_norm(t.leaf(x), gamma, beta, stats, false);
    auto expect = [&](double v, size_t c) {
        double mu = stats.running_mean[c], var = stats.running_var[c];
        double gam = c == 0 ? 2.0 : 3.0, bet = c == 0 ? 0.1 : -0.2;
        return (v - mu) / std::sqrt(var + 1e-5) * gam + bet;
    };
    CHECK(out.val()[0] == Catch::Approx(expect(3.0, 0)).epsilon(1e-9));
    CHECK(out.val()[1] == Catch::Approx(expect(-1.0, 0)).epsilon(1e-9));
    CHECK(out.val()[2] == Catch::Approx(expect(0.5, 1)).epsilon(1e-9));
    CHECK(out.val()[3] == Catch::Approx(expect(-0.5, 1)).epsilon(1e-9));
}

TEST_CASE("batch_norm gradients vs finite differences, train and eval") {
    Rng rng(29);
    for (bool training : {true, false}) {
        auto fn = [training](const std::vector<Tensor64>& in, std::vector<Tensor64>* grads) {
            TapeT<double> t;
            BnStatsT<double> stats(3);
            stats.running_mean = Tensor64(Shape{3}, std::vector<double>{0.1, -0.2, 0.3});
            stats.running_var = Tensor64(Shape{3}, std::vector<double>{1.1, 0.9, 1.4});
            auto x = t.leaf(in[0]);
            auto gamma = t.leaf(in[1]);
            auto beta = t.leaf(in[2]);
            auto loss = weighted_sum(batch_norm(x, gamma, beta, stats, training));
            if (grads) {
                t.backward(loss);
                *grads = {t.grad_of(x), t.grad_of(gamma), t.grad_of(beta)};
            }
            return loss.val().item();
        };
        double err = gradcheck(fn, {random_tensor(Shape{2, 3, 3, 4}, rng),
                                    random_tensor(Shape{3}, rng, 0.5, 1.5),
                                    random_tensor(Shape{3}, rng)});
        CHECK(err < 1e-4);
    }
}

TEST_CASE("backward of sum gives all-ones") {
    TapeT<double> t;
    Rng rng(31);
    auto p = t.leaf(random_tensor(Shape{3, 4}, rng));
    auto loss = sum(p);
    t.backward(loss);
    Tensor64 g = t.grad_of(p);
    for (size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == 1.0);
}

TEST_CASE("backward of quadratic sum(p*p)/2 gives p") {
    TapeT<double> t;
    Rng rng(37);
    Tensor64 pv = random_tensor(Shape{2, 5}, rng);
    auto p = t.leaf(pv);
    auto loss = scale(sum(mul(p, p)), 0.5);
    t.backward(loss);
    Tensor64 g = t.grad_of(p);
    for (size_t i = 0; i < g.numel(); ++i) CHECK(g[i] == Catch::Approx(pv[i]).epsilon(1e-12));
}

TEST_CASE("backward requires a scalar loss") {
    TapeT<double> t;
    auto p = t.leaf(Tensor64(Shape{2, 2}, 1.0));
    auto y = add(p, p);
    CHECK_THROWS_AS(t.backward(y), DimensionError);
}

TEST_CASE("unreachable leaves hold zero gradient") {
    TapeT<double> t;
    auto a = t.leaf(Tensor64(Shape{2}, 1.0));
    auto b = t.leaf(Tensor64(Shape{2}, 2.0));
    auto loss = sum(a);
    t.backward(loss);
    Tensor64 gb = t.grad_of(b);
    CHECK(gb[0] == 0.0);
    CHECK(gb[1] == 0.0);
}

TEST_CASE("linearity of backward: grad(af+bg) = a grad(f) + b grad(g)") {
    Rng rng(41);
    Tensor64 pv = random_tensor(Shape{4, 3}, rng);
    const double alpha = 1.7, beta = -0.6;

    auto grad_of_combo = [&](double ca, double cb) {
        TapeT<double> t;
        auto p = t.leaf(pv);
        auto f = sum(mul(p, p));            // f = sum p^2
        auto g = mean(relu(p));             // g = mean relu(p)
        auto loss = add(scale(f, ca), scale(g, cb));
        t.backward(loss);
        return t.grad_of(p);
    };
    Tensor64 combo = grad_of_combo(alpha, beta);
    Tensor64 gf = grad_of_combo(1.0, 0.0);
    Tensor64 gg = grad_of_combo(0.0, 1.0);
    for (size_t i = 0; i < pv.numel(); ++i)
        CHECK(std::fabs(combo[i] - (alpha * gf[i] + beta * gg[i])) < 1e-6);
}

TEST_CASE("elementwise and reduction gradients vs finite differences") {
    Rng rng(43);
    auto fn = [](const std::vector<Tensor64>& in, std::vector<Tensor64>* grads) {
        TapeT<double> t;
        auto a = t.leaf(in[0]);
        auto b = t.leaf(in[1]);
        auto h = add(mul(a, b), sub(scale(a, 0.3), add_const(b, 0.7)));
        auto loss = add(sum(relu(h)), mean(mul(h, h)));
        if (grads) {
            t.backward(loss);
            *grads = {t.grad_of(a), t.grad_of(b)};
        }
        return loss.val().item();
    };
    // keep values away from relu kinks
    Tensor64 a = random_tensor(Shape{3, 4}, rng, 0.2, 1.0);
    Tensor64 b = random_tensor(Shape{3, 4}, rng, 0.2, 1.0);
    double err = gradcheck(fn, {a, b});
    CHECK(err < 1e-4);
}

TEST_CASE("add_rowvec, global_avg_pool and concat gradients vs finite differences") {
    Rng rng(47);
    auto fn = [](const std::vector<Tensor64>& in, std::vector<Tensor64>* grads) {
        TapeT<double> t;
        auto x = t.leaf(in[0]);
        auto y = t.leaf(in[1]);
        auto b = t.leaf(in[2]);
        auto cat = concat_channels(std::vector<VarT<double>>{x, y});
        auto pooled = global_avg_pool(cat);  // (B, C)
        auto loss = weighted_sum(add_rowvec(pooled, b));
        if (grads) {
            t.backward(loss);
            *grads = {t.grad_of(x), t.grad_of(y), t.grad_of(b)};
        }
        return loss.val().item();
    };
    double err = gradcheck(fn, {random_tensor(Shape{2, 2, 3, 4}, rng),
                                random_tensor(Shape{2, 3, 3, 4}, rng),
                                random_tensor(Shape{5}, rng)});
    CHECK(err < 1e-4);
}

TEST_CASE("forward determinism: identical seeds give bit-identical values") {
    auto run = [] {
        Rng rng(123);
        TapeT<double> t;
        auto a = t.leaf(random_tensor(Shape{4, 4}, rng));
        auto b = t.leaf(random_tensor(Shape{4, 4}, rng));
        auto out = matmul(relu(a), b);
        return out.val();
    };
    Tensor64 r1 = run(), r2 = run();
    for (size_t i = 0; i < r1.numel(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("tensor invariant: data length equals shape product") {
    CHECK_THROWS_AS(Tensor64(Shape{2, 3}, std::vector<double>{1, 2, 3}), DimensionError);
    Tensor64 ok(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    CHECK(ok.numel() == 6);
}
