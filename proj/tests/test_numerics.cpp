#include <doctest.h>

#include <cmath>

#include "catid/numerics.hpp"

using namespace catid;

TEST_CASE("softmax matches the direct formula and survives large inputs") {
    Vec v(3);
    v << 1.0, 2.0, 3.0;
    Vec p = softmax(v);
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(p[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));

    Vec big(2);
    big << 1000.0, 1001.0;
    Vec pb = softmax(big);
    CHECK(std::isfinite(pb[0]));
    CHECK(pb[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("cosine similarity basics") {
    Vec a(2), b(2);
    a << 1, 0;
    b << 0, 1;
    CHECK(cosine_sim(a, a) == doctest::Approx(1.0));
    CHECK(cosine_sim(a, b) == doctest::Approx(0.0));
    CHECK(cosine_sim(a, -a) == doctest::Approx(-1.0));
    Vec zero = Vec::Zero(2);
    CHECK_THROWS_AS(cosine_sim(a, zero), NumericError);
}

TEST_CASE("cosine gradient matches central differences") {
    Rng rng(9);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        Vec a(4), b(4);
        for (int i = 0; i < 4; ++i) {
            a[i] = dist(rng);
            b[i] = dist(rng);
        }
        Vec g = cosine_grad_a(a, b);
        const double h = 1e-6;
        for (int i = 0; i < 4; ++i) {
            Vec ap = a, am = a;
            ap[i] += h;
            am[i] -= h;
            const double fd = (ap.dot(b) / (ap.norm() * b.norm()) -
                               am.dot(b) / (am.norm() * b.norm())) /
                              (2 * h);
            CHECK(g[i] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("mlp gradients match central differences") {
    Rng rng(3);
    MlpParams p = MlpParams::random({3, 5, 2}, rng, 0.4);
    Mat x(3, 4);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);

    // scalar head: sum of squared outputs
    auto value = [&]() {
        Mat y = mlp_forward(p, x);
        return y.squaredNorm();
    };
    Tape tape;
    Mat y = mlp_forward(p, x, &tape);
    MlpGrads analytic = mlp_backward(p, tape, 2.0 * y);

    const double h = 1e-6;
    for (std::size_t layer = 0; layer < p.layer_count(); ++layer) {
        for (Eigen::Index i = 0; i < p.weights[layer].size(); ++i) {
            double& w = p.weights[layer].data()[i];
            const double orig = w;
            w = orig + h;
            const double up = value();
            w = orig - h;
            const double dn = value();
            w = orig;
            CHECK(analytic.dW[layer].data()[i] ==
                  doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
        }
        for (Eigen::Index i = 0; i < p.biases[layer].size(); ++i) {
            double& b = p.biases[layer][i];
            const double orig = b;
            b = orig + h;
            const double up = value();
            b = orig - h;
            const double dn = value();
            b = orig;
            CHECK(analytic.db[layer][i] ==
                  doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
        }
    }

    // input gradient
    Mat gx;
    mlp_backward(p, tape, 2.0 * y, &gx);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double& xi = x.data()[i];
        const double orig = xi;
        xi = orig + h;
        const double up = value();
        xi = orig - h;
        const double dn = value();
        xi = orig;
        CHECK(gx.data()[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("adamw first step matches the hand-computed update") {
    // single parameter w=1, grad=0.5, lr=0.1, wd=0.2, beta1=0.9, beta2=0.999
    double w = 1.0;
    OptimState st;
    st.cfg.lr = 0.1;
    st.cfg.weight_decay = 0.2;
    Eigen::ArrayXd g(1);
    g[0] = 0.5;
    adamw_step({TensorRef(&w, 1)}, {g}, st);
    // decoupled decay first: w = 1 - 0.1*0.2*1 = 0.98
    // m_hat = 0.5, v_hat = 0.25, step = 0.1 * 0.5 / (0.5 + 1e-8)
    const double expected = 0.98 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
    CHECK(w == doctest::Approx(expected).epsilon(1e-12));

    // second step with the same gradient
    adamw_step({TensorRef(&w, 1)}, {g}, st);
    const double m = 0.9 * 0.05 + 0.1 * 0.5;
    const double v = 0.999 * 0.00025 + 0.001 * 0.25;
    const double m_hat = m / (1 - std::pow(0.9, 2));
    const double v_hat = v / (1 - std::pow(0.999, 2));
    const double expected2 =
        expected * (1 - 0.1 * 0.2) - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    CHECK(w == doctest::Approx(expected2).epsilon(1e-10));
}

TEST_CASE("adamw rejects mismatched slot counts") {
    double w = 1.0;
    OptimState st;
    Eigen::ArrayXd g(1);
    g[0] = 0.5;
    adamw_step({TensorRef(&w, 1)}, {g}, st);
    CHECK_THROWS_AS(adamw_step({TensorRef(&w, 1), TensorRef(&w, 1)}, {g, g}, st),
                    DimensionError);
}
