#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "tessflow/rng.hpp"
#include "tessflow/tensor.hpp"

using namespace tessflow;
using namespace tessflow::ad;

namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return Tensor::uniform(s, rng, lo, hi);
}

// Scalar-loop trilinear interpolation oracle, independent of sample_points.
double trilerp_oracle(const std::vector<double>& vol, int64_t C, int64_t X, int64_t Y, int64_t Z,
                      int64_t c, double cx, double cy, double cz) {
    auto clampd = [](double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); };
    cx = clampd(cx, 0, double(X - 1));
    cy = clampd(cy, 0, double(Y - 1));
    cz = clampd(cz, 0, double(Z - 1));
    int64_t x0 = std::min<int64_t>((int64_t)std::floor(cx), X > 1 ? X - 2 : 0);
    int64_t y0 = std::min<int64_t>((int64_t)std::floor(cy), Y > 1 ? Y - 2 : 0);
    int64_t z0 = std::min<int64_t>((int64_t)std::floor(cz), Z > 1 ? Z - 2 : 0);
    double fx = cx - x0, fy = cy - y0, fz = cz - z0;
    double acc = 0;
    for (int dx = 0; dx <= 1; ++dx)
        for (int dy = 0; dy <= 1; ++dy)
            for (int dz = 0; dz <= 1; ++dz) {
                int64_t xx = std::min(x0 + dx, X - 1);
                int64_t yy = std::min(y0 + dy, Y - 1);
                int64_t zz = std::min(z0 + dz, Z - 1);
                double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                acc += w * vol[size_t(((c * X + xx) * Y + yy) * Z + zz)];
            }
    return acc;
}

} // namespace

TEST_CASE("tensor invariants") {
    Tensor t = Tensor::zeros({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS(Tensor({2, 3}, {1.0, 2.0}));
    CHECK_THROWS(Tensor({0, 3}, {}));
    CHECK(t.grad().size() == 6);
}

TEST_CASE("tape: second backward without new forward is an error") {
    Tensor x = Tensor::full({3}, 2.0, true);
    Tape tape;
    Tensor y = sum(mul(x, x));
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    CHECK_THROWS_AS(tape.backward(y), std::logic_error);
}

TEST_CASE("backward leaves finite grads on all requires_grad leaves") {
    Rng rng(7);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor unused = random_tensor({2}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    unused.set_requires_grad(true);
    Tape tape;
    Tensor loss = mean(mul(sigmoid(a), relu(b)));
    tape.backward(loss);
    for (double g : a.grad()) CHECK(std::isfinite(g));
    for (double g : b.grad()) CHECK(std::isfinite(g));
    for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("softmax closed forms") {
    Tensor x({2}, {0.0, 0.0});
    Tensor y = softmax(x, 0);
    CHECK(y.data()[0] == doctest::Approx(0.5));
    CHECK(y.data()[1] == doctest::Approx(0.5));

    Tensor x2({2}, {0.0, std::log(3.0)});
    Tensor y2 = softmax(x2, 0);
    CHECK(y2.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y2.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

    CHECK_THROWS(softmax(x, 3));
}

TEST_CASE("softmax sums to one and is strictly positive along axis") {
    Rng rng(11);
    Tensor x = random_tensor({3, 4, 5}, rng, -30.0, 30.0);
    for (int64_t axis = 0; axis < 3; ++axis) {
        Tensor y = softmax(x, axis);
        Tensor s = sum_axis(y, axis);
        for (double v : s.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
        for (double v : y.data()) CHECK(v > 0.0);
    }
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(13);
    Tensor x = random_tensor({6}, rng, -2.0, 2.0);
    Tensor w = random_tensor({6}, rng);
    auto loss = [wd = w.data()](const std::vector<Tensor>& in) {
        Tensor ww({6}, wd);
        return sum(mul(ww, softmax(in[0], 0)));
    };
    auto rep = fdcheck::check_gradients(loss, {x});
    CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gumbel-softmax: dominant logit wins in hard mode") {
    Tensor x({3}, {10.0, -10.0, -10.0});
    for (uint64_t seed = 0; seed < 100; ++seed) {
        Tensor y = gumbel_softmax(x, 0, 1.0, true, seed);
        CHECK(y.data()[0] == 1.0);
        CHECK(y.data()[1] == 0.0);
        CHECK(y.data()[2] == 0.0);
    }
}

TEST_CASE("gumbel-softmax: large temperature approaches uniform in expectation") {
    Tensor x({2}, {1.0, 2.0});
    double mean0 = 0.0, mean1 = 0.0;
    const int trials = 10000;
    for (int s = 0; s < trials; ++s) {
        Tensor y = gumbel_softmax(x, 0, 50.0, false, uint64_t(s));
        mean0 += y.data()[0];
        mean1 += y.data()[1];
    }
    mean0 /= trials;
    mean1 /= trials;
    CHECK(std::fabs(mean0 - 0.5) < 0.02);
    CHECK(std::fabs(mean1 - 0.5) < 0.02);
}

TEST_CASE("gumbel-softmax: soft mode gradient vs finite differences at fixed seed") {
    Rng rng(17);
    Tensor x = random_tensor({5}, rng, -1.0, 1.0);
    Tensor w = random_tensor({5}, rng);
    auto loss = [wd = w.data()](const std::vector<Tensor>& in) {
        Tensor ww({5}, wd);
        return sum(mul(ww, gumbel_softmax(in[0], 0, 0.7, false, 42)));
    };
    auto rep = fdcheck::check_gradients(loss, {x});
    CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("gumbel-softmax: temperature <= 0 is an error; determinism per seed") {
    Tensor x({3}, {0.1, 0.2, 0.3});
    CHECK_THROWS(gumbel_softmax(x, 0, 0.0, false, 1));
    Tensor a = gumbel_softmax(x, 0, 1.0, false, 9);
    Tensor b = gumbel_softmax(x, 0, 1.0, false, 9);
    for (size_t i = 0; i < a.data().size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("gumbel-softmax: hard mode is one-hot with soft gradient") {
    Tensor x({4}, {0.3, 1.2, -0.5, 0.9});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = gumbel_softmax(x, 0, 1.0, true, 5);
    double s = 0;
    int ones = 0;
    for (double v : y.data()) {
        s += v;
        if (v == 1.0) ones++;
    }
    CHECK(s == 1.0);
    CHECK(ones == 1);
    tape.backward(sum(mul(y, y)));
    double gsum = 0;
    for (double g : x.grad()) gsum += std::fabs(g);
    CHECK(gsum > 0.0); // straight-through path delivers gradient
}

TEST_CASE("trilinear_sample: identity coordinates reproduce the volume exactly") {
    Rng rng(23);
    const int64_t C = 2, R = 4, A = 3, E = 5;
    Tensor vol = random_tensor({C, R, A, E}, rng);
    std::vector<double> cd(3 * R * A * E);
    for (int64_t r = 0; r < R; ++r)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t e = 0; e < E; ++e) {
                int64_t i = (r * A + a) * E + e;
                cd[size_t(i)] = double(r);
                cd[size_t(R * A * E + i)] = double(a);
                cd[size_t(2 * R * A * E + i)] = double(e);
            }
    Tensor coords({3, R, A, E}, cd);
    Tensor out = trilinear_sample(vol, coords);
    for (size_t i = 0; i < out.data().size(); ++i) CHECK(out.data()[i] == vol.data()[i]);
}

TEST_CASE("trilinear_sample: +1 range shift equals index shift with border clamp") {
    Rng rng(29);
    const int64_t C = 1, R = 5, A = 2, E = 2;
    Tensor vol = random_tensor({C, R, A, E}, rng);
    std::vector<double> cd(3 * R * A * E);
    for (int64_t r = 0; r < R; ++r)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t e = 0; e < E; ++e) {
                int64_t i = (r * A + a) * E + e;
                cd[size_t(i)] = double(r + 1);
                cd[size_t(R * A * E + i)] = double(a);
                cd[size_t(2 * R * A * E + i)] = double(e);
            }
    Tensor out = trilinear_sample(vol, Tensor({3, R, A, E}, cd));
    for (int64_t r = 0; r < R; ++r)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t e = 0; e < E; ++e) {
                int64_t rs = std::min(r + 1, R - 1);
                CHECK(out.at({0, r, a, e}) == vol.at({0, rs, a, e}));
            }
}

TEST_CASE("trilinear_sample: random coords match the scalar oracle") {
    Rng rng(31);
    const int64_t C = 4, X = 5, Y = 6, Z = 7;
    Tensor vol = random_tensor({C, X, Y, Z}, rng);
    const int64_t N = X * Y * Z;
    std::vector<double> cd(3 * N);
    for (int64_t n = 0; n < N; ++n) {
        cd[size_t(n)] = rng.uniform(0.0, double(X - 1));
        cd[size_t(N + n)] = rng.uniform(0.0, double(Y - 1));
        cd[size_t(2 * N + n)] = rng.uniform(0.0, double(Z - 1));
    }
    Tensor coords({3, X, Y, Z}, cd);
    Tensor out = trilinear_sample(vol, coords);
    double max_diff = 0;
    for (int64_t c = 0; c < C; ++c)
        for (int64_t n = 0; n < N; ++n) {
            double ref = trilerp_oracle(vol.data(), C, X, Y, Z, c, cd[size_t(n)], cd[size_t(N + n)],
                                        cd[size_t(2 * N + n)]);
            max_diff = std::max(max_diff, std::fabs(ref - out.data()[size_t(c * N + n)]));
        }
    CHECK(max_diff < 1e-12);

    CHECK_THROWS(trilinear_sample(vol, Tensor::zeros({3, X, Y, Z + 1})));
}

TEST_CASE("conv3d: Dirac kernel is the identity") {
    Rng rng(37);
    Tensor x = random_tensor({3, 4, 5, 6}, rng);
    Tensor w = Tensor::zeros({3, 3, 3, 3, 3});
    for (int64_t c = 0; c < 3; ++c) {
        auto& wd = w.raw_data();
        wd[size_t((((c * 3 + c) * 3 + 1) * 3 + 1) * 3 + 1)] = 1.0;
    }
    Tensor y = conv3d(x, w, {1, 1, 1}, {1, 1, 1});
    REQUIRE(y.shape() == x.shape());
    for (size_t i = 0; i < y.data().size(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv3d: stride-2 output extents") {
    Tensor x = Tensor::zeros({2, 8, 6, 4});
    Tensor w = Tensor::zeros({5, 2, 3, 3, 3});
    Tensor y = conv3d(x, w, {2, 2, 2}, {1, 1, 1});
    CHECK(y.shape() == Shape{5, 4, 3, 2});
}

TEST_CASE("sigmoid(0) = 0.5") {
    Tensor x = Tensor::scalar(0.0);
    CHECK(sigmoid(x).value() == doctest::Approx(0.5));
}

TEST_CASE("every primitive passes a randomized finite-difference gradient check") {
    Rng rng(41);
    double tol = 1e-5;

    auto check_binary = [&](const char* name, Tensor (*op)(const Tensor&, const Tensor&),
                            bool positive_b = false) {
        Tensor a = random_tensor({3, 4}, rng, -2.0, 2.0);
        Tensor b = positive_b ? random_tensor({3, 4}, rng, 0.5, 2.0) : random_tensor({3, 4}, rng, -2.0, 2.0);
        Tensor w = random_tensor({3, 4}, rng);
        auto loss = [op, wd = w.data()](const std::vector<Tensor>& in) {
            Tensor ww({3, 4}, wd);
            return sum(mul(ww, op(in[0], in[1])));
        };
        auto rep = fdcheck::check_gradients(loss, {a, b});
        INFO(name);
        CHECK(rep.max_rel_err < tol);
    };
    check_binary("add", add);
    check_binary("sub", sub);
    check_binary("mul", mul);
    check_binary("div", div, true);

    // broadcasting add/mul with an axis-collapsed operand
    {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({1, 4}, rng);
        auto loss = [](const std::vector<Tensor>& in) { return sum(mul(in[0], in[1])); };
        auto rep = fdcheck::check_gradients(loss, {a, b});
        CHECK(rep.max_rel_err < tol);
    }

    auto check_unary = [&](const char* name, Tensor (*op)(const Tensor&), double lo, double hi) {
        Tensor x = random_tensor({4, 3}, rng, lo, hi);
        Tensor w = random_tensor({4, 3}, rng);
        auto loss = [op, wd = w.data()](const std::vector<Tensor>& in) {
            Tensor ww({4, 3}, wd);
            return sum(mul(ww, op(in[0])));
        };
        auto rep = fdcheck::check_gradients(loss, {x});
        INFO(name);
        CHECK(rep.max_rel_err < tol);
    };
    check_unary("neg", neg, -2, 2);
    check_unary("exp", ad::exp, -2, 2);
    check_unary("log", ad::log, 0.3, 3);
    check_unary("sqrt", ad::sqrt, 0.3, 3);
    check_unary("abs", ad::abs, 0.2, 2);  // keep clear of the kink
    check_unary("relu", relu, 0.1, 2);
    check_unary("sigmoid", sigmoid, -3, 3);

    // matmul
    {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        Tensor w = random_tensor({3, 2}, rng);
        auto loss = [wd = w.data()](const std::vector<Tensor>& in) {
            Tensor ww({3, 2}, wd);
            return sum(mul(ww, matmul(in[0], in[1])));
        };
        auto rep = fdcheck::check_gradients(loss, {a, b});
        CHECK(rep.max_rel_err < tol);
    }

    // conv3d including stride 2 and zero padding
    {
        Tensor x = random_tensor({2, 5, 4, 4}, rng);
        Tensor w = random_tensor({3, 2, 3, 3, 3}, rng, -0.5, 0.5);
        auto loss = [](const std::vector<Tensor>& in) {
            return mean(mul(conv3d(in[0], in[1], {2, 1, 2}, {1, 1, 1}),
                            conv3d(in[0], in[1], {2, 1, 2}, {1, 1, 1})));
        };
        auto rep = fdcheck::check_gradients(loss, {x, w});
        CHECK(rep.max_rel_err < tol);
    }

    // reductions
    {
        Tensor x = random_tensor({3, 4, 2}, rng);
        auto loss1 = [](const std::vector<Tensor>& in) { return mean(in[0]); };
        CHECK(fdcheck::check_gradients(loss1, {x}).max_rel_err < tol);
        auto loss2 = [](const std::vector<Tensor>& in) {
            return sum(mul(sum_axis(in[0], 1), sum_axis(in[0], 1)));
        };
        CHECK(fdcheck::check_gradients(loss2, {x}).max_rel_err < tol);
        auto loss3 = [](const std::vector<Tensor>& in) { return sum(max_axis(in[0], 2)); };
        CHECK(fdcheck::check_gradients(loss3, {x}).max_rel_err < tol);
    }

    // structure ops
    {
        Tensor x = random_tensor({2, 3, 4}, rng);
        auto loss = [](const std::vector<Tensor>& in) {
            Tensor y = permute(reshape(in[0], {6, 4}), {1, 0});
            Tensor z = slice(y, {1, 2}, {2, 3});
            Tensor p = pad(z, {{1, 0}, {0, 2}});
            return sum(mul(p, p));
        };
        CHECK(fdcheck::check_gradients(loss, {x}).max_rel_err < tol);
    }
    {
        Tensor a = random_tensor({2, 3}, rng);
        Tensor b = random_tensor({2, 2}, rng);
        auto loss = [](const std::vector<Tensor>& in) {
            Tensor c = concat({in[0], in[1]}, 1);
            return sum(mul(c, c));
        };
        CHECK(fdcheck::check_gradients(loss, {a, b}).max_rel_err < tol);
    }
    {
        Tensor x = random_tensor({2, 2, 3, 2}, rng);
        auto loss = [](const std::vector<Tensor>& in) {
            Tensor u = upsample_nearest3(in[0], 2);
            return sum(mul(u, u));
        };
        CHECK(fdcheck::check_gradients(loss, {x}).max_rel_err < tol);
    }

    // sampling: volume and in-bounds coords
    {
        Tensor vol = random_tensor({2, 4, 4, 3}, rng);
        const int64_t N = 6;
        std::vector<double> cd(3 * N);
        for (int64_t n = 0; n < N; ++n) {
            cd[size_t(n)] = rng.uniform(0.2, 2.8);
            cd[size_t(N + n)] = rng.uniform(0.2, 2.8);
            cd[size_t(2 * N + n)] = rng.uniform(0.2, 1.8);
        }
        Tensor coords({3, N}, cd);
        auto loss = [](const std::vector<Tensor>& in) {
            Tensor s = sample_points(in[0], in[1]);
            return sum(mul(s, s));
        };
        CHECK(fdcheck::check_gradients(loss, {vol, coords}).max_rel_err < tol);
    }

    // layer_norm
    {
        Tensor x = random_tensor({3, 5}, rng);
        Tensor gamma = random_tensor({5}, rng, 0.5, 1.5);
        Tensor beta = random_tensor({5}, rng);
        auto loss = [](const std::vector<Tensor>& in) {
            Tensor y = layer_norm(in[0], in[1], in[2], 1);
            return sum(mul(y, y));
        };
        CHECK(fdcheck::check_gradients(loss, {x, gamma, beta}).max_rel_err < tol);
    }
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
    Rng rng1(99), rng2(99);
    Tensor a1 = random_tensor({3, 4, 5}, rng1);
    Tensor a2 = random_tensor({3, 4, 5}, rng2);
    Tensor y1 = sigmoid(mul(softmax(a1, 1), a1));
    Tensor y2 = sigmoid(mul(softmax(a2, 1), a2));
    for (size_t i = 0; i < y1.data().size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("layer_norm normalizes along the requested axis") {
    Rng rng(51);
    Tensor x = random_tensor({4, 6}, rng, -3, 3);
    Tensor gamma = Tensor::full({6}, 1.0);
    Tensor beta = Tensor::zeros({6});
    Tensor y = layer_norm(x, gamma, beta, 1);
    for (int64_t r = 0; r < 4; ++r) {
        double m = 0;
        for (int64_t c = 0; c < 6; ++c) m += y.at({r, c});
        CHECK(std::fabs(m / 6.0) < 1e-9);
    }
}
