#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rtfseg/nn_ops.hpp"
#include "test_util.hpp"

using namespace rtfseg;

TEST_CASE("backward: sum gives ones, half square-sum gives x") {
    std::mt19937 rng(2);
    Tensor4<double> x0 = random_tensor<double>(2, 2, 3, 3, rng);
    Var<double> x = param(x0);

    backward(sum_all(x));
    CHECK((x->grad - 1.0).abs().maxCoeff() == 0.0);

    backward(scale(sum_all(mul(x, x)), 0.5));
    CHECK((x->grad - x0.data).abs().maxCoeff() < 1e-12);
}

TEST_CASE("gradients accumulate across fan-out") {
    Var<double> x = param(Tensor4<double>::full(1, 1, 2, 2, 3.0));
    Var<double> y = add(x, x);            // dy/dx = 2
    Var<double> z = sum_all(mul(y, x));   // z = 2*x^2, dz/dx = 4x = 12
    backward(z);
    CHECK((x->grad - 12.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("backward usage errors") {
    Var<double> c = constant(Tensor4<double>::full(1, 1, 1, 1, 1.0));
    CHECK_THROWS_AS(backward(sum_all(c)), UsageError);  // nothing tracks gradients

    Var<double> x = param(Tensor4<double>::full(1, 1, 2, 2, 1.0));
    CHECK_THROWS_AS(backward(add(x, x)), UsageError);  // not a scalar
    CHECK_THROWS_AS(backward(Var<double>{}), UsageError);
}

TEST_CASE("repeated backward starts from fresh gradients") {
    Var<double> x = param(Tensor4<double>::full(1, 1, 1, 2, 2.0));
    backward(sum_all(x));
    backward(sum_all(x));
    CHECK((x->grad - 1.0).abs().maxCoeff() == 0.0);  // not 2.0: no stale accumulation
}

TEST_CASE("broadcasting: shapes combine, gradients reduce") {
    std::mt19937 rng(4);
    Tensor4<double> a0 = random_tensor<double>(2, 3, 4, 5, rng);
    Tensor4<double> b0 = random_tensor<double>(1, 3, 1, 1, rng);

    Var<double> a = param(a0);
    Var<double> b = param(b0);
    Var<double> y = mul(a, b);
    CHECK(y->value.same_shape(a0));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(y->value.at(i, j, 1, 2) ==
                  doctest::Approx(a0.at(i, j, 1, 2) * b0.at(0, j, 0, 0)));

    backward(sum_all(y));
    // d/db_j = sum over batch and space of a
    for (int j = 0; j < 3; ++j) {
        double want = 0;
        for (int i = 0; i < 2; ++i)
            for (int yy = 0; yy < 4; ++yy)
                for (int xx = 0; xx < 5; ++xx) want += a0.at(i, j, yy, xx);
        CHECK(b->grad[j] == doctest::Approx(want).epsilon(1e-12));
    }

    Tensor4<double> c0 = random_tensor<double>(1, 1, 1, 1, rng);
    Var<double> c = param(c0);
    Var<double> z = add(a, c);  // scalar broadcast
    CHECK(z->value.at(1, 2, 3, 4) == doctest::Approx(a0.at(1, 2, 3, 4) + c0.data[0]));
    backward(sum_all(z));
    CHECK(c->grad[0] == doctest::Approx(120.0));

    Tensor4<double> bad = random_tensor<double>(2, 2, 4, 5, rng);
    CHECK_THROWS_AS(add(a, constant(bad)), ConfigError);
}

TEST_CASE("sub, scale, add_scalar, abs_val behave and differentiate") {
    std::mt19937 rng(6);
    Tensor4<double> x0 = random_tensor<double>(1, 2, 3, 3, rng);
    Var<double> x = param(x0);

    Var<double> y = add_scalar(scale(x, -1.0), 1.0);  // 1 - x
    CHECK((y->value.data - (1.0 - x0.data)).abs().maxCoeff() < 1e-15);
    backward(sum_all(y));
    CHECK((x->grad + 1.0).abs().maxCoeff() < 1e-15);

    Var<double> d = sub(x, constant(Tensor4<double>::full(1, 2, 3, 3, 0.25)));
    CHECK((d->value.data - (x0.data - 0.25)).abs().maxCoeff() < 1e-15);

    Var<double> av = abs_val(x);
    CHECK((av->value.data - x0.data.abs()).abs().maxCoeff() < 1e-15);
    backward(sum_all(av));
    CHECK((x->grad - x0.data.sign()).abs().maxCoeff() < 1e-15);
}

TEST_CASE("concat_channels and slice_channels round-trip with gradients") {
    std::mt19937 rng(8);
    Tensor4<double> a0 = random_tensor<double>(2, 2, 3, 3, rng);
    Tensor4<double> b0 = random_tensor<double>(2, 3, 3, 3, rng);
    Var<double> a = param(a0);
    Var<double> b = param(b0);

    Var<double> cat = concat_channels<double>({a, b});
    CHECK(cat->value.c == 5);
    CHECK(cat->value.at(1, 0, 2, 2) == a0.at(1, 0, 2, 2));
    CHECK(cat->value.at(1, 4, 2, 2) == b0.at(1, 2, 2, 2));

    Var<double> back_a = slice_channels(cat, 0, 2);
    Var<double> back_b = slice_channels(cat, 2, 3);
    CHECK((back_a->value.data == a0.data).all());
    CHECK((back_b->value.data == b0.data).all());

    backward(sum_all(mul(back_b, back_b)));
    CHECK((a->grad).abs().maxCoeff() == 0.0);
    CHECK((b->grad - 2.0 * b0.data).abs().maxCoeff() < 1e-12);

    Tensor4<double> odd = random_tensor<double>(2, 2, 4, 3, rng);
    CHECK_THROWS_AS(concat_channels<double>({a, constant(odd)}), ConfigError);
    CHECK_THROWS_AS(slice_channels(cat, 4, 2), ConfigError);
}

TEST_CASE("quantize_binary32 snaps values in double and passes gradients through") {
    Tensor4<double> x0(1, 1, 1, 3);
    x0.data << 0.1, 1.0 / 3.0, 2.5;  // 0.1 and 1/3 are not binary32 values
    Var<double> x = param(x0);
    Var<double> q = quantize_binary32(x);
    for (int i = 0; i < 3; ++i)
        CHECK(q->value.data[i] == static_cast<double>(static_cast<float>(x0.data[i])));
    CHECK(q->value.data[2] == 2.5);
    backward(sum_all(scale(q, 3.0)));
    CHECK((x->grad - 3.0).abs().maxCoeff() == 0.0);

    Tensor4<float> xf(1, 1, 1, 2);
    xf.data << 0.1f, 0.7f;
    Var<float> qf = quantize_binary32(constant(xf));
    CHECK((qf->value.data == xf.data).all());
}

TEST_CASE("grad_check: exact on linear maps, tight on smooth ones") {
    std::mt19937 rng(10);
    Tensor4<double> x0 = random_tensor<double>(1, 2, 4, 4, rng);
    Var<double> x = param(x0);

    auto lin = [&]() { return sum_all(scale(x, 2.0)); };
    auto coords = sample_coords<double>(x0.size(), 8, rng);
    CHECK(grad_check<double>(lin, x, 1e-3, coords).max_rel < 1e-6);

    for (unsigned seed = 0; seed < 10; ++seed) {
        std::mt19937 r(40 + seed);
        Tensor4<double> y0 = random_tensor<double>(1, 2, 4, 4, r);
        Var<double> y = param(y0);
        auto fn = [&]() { return sum_all(sigmoid(y)); };
        auto cs = sample_coords<double>(y0.size(), 8, r);
        CHECK(grad_check<double>(fn, y, 1e-3, cs).max_rel < 1e-3);
    }
}

TEST_CASE("sample_coords covers small tensors and subsamples large ones") {
    std::mt19937 rng(12);
    auto all = sample_coords<double>(5, 10, rng);
    CHECK(all.size() == 5);
    auto some = sample_coords<double>(1000, 10, rng);
    CHECK(some.size() == 10);
    std::mt19937 rng2(12);
    auto again = sample_coords<double>(1000, 10, rng2);
    CHECK(some == again);  // same seed, same coordinates
}
