#include <doctest.h>

#include <cstdio>

#include "catid/quantizer.hpp"

using namespace catid;

namespace {

QuantizerStack tiny_stack(int L = 3, int K = 4, int D_z = 3, int D_emb = 5,
                          std::uint64_t seed = 1) {
    Rng rng(seed);
    QuantizerStack s;
    s.L = L;
    s.K = K;
    s.D_z = D_z;
    s.encoder = MlpParams::random({D_emb, 6, D_z}, rng, 0.5);
    s.decoder = MlpParams::random({D_z, 6, D_emb}, rng, 0.5);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int l = 0; l < L; ++l) {
        Codebook cb;
        cb.level = l;
        cb.entries.resize(D_z, K);
        for (Eigen::Index i = 0; i < cb.entries.size(); ++i) {
            cb.entries.data()[i] = dist(rng);
        }
        s.codebooks.push_back(std::move(cb));
    }
    return s;
}

}  // namespace

TEST_CASE("assignment probs use the unsquared distance") {
    Codebook cb;
    cb.level = 0;
    cb.entries.resize(1, 2);
    cb.entries << 0.0, 3.0;
    Vec r(1);
    r << 1.0;
    // distances 1 and 2; softmax(-1, -2)
    Vec p = assignment_probs(r, cb);
    const double e1 = std::exp(-1.0), e2 = std::exp(-2.0);
    CHECK(p[0] == doctest::Approx(e1 / (e1 + e2)).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(e2 / (e1 + e2)).epsilon(1e-12));
}

TEST_CASE("trace invariants: residual recursion and reconstruction") {
    QuantizerStack s = tiny_stack();
    Rng rng(7);
    std::normal_distribution<double> dist(0.0, 1.0);
    Vec d(5);
    for (int i = 0; i < 5; ++i) d[i] = dist(rng);
    QuantizationTrace tr = quantize(s, d);
    REQUIRE(tr.residuals.size() == 3);
    CHECK(tr.residuals[0] == tr.z);
    Vec sum = Vec::Zero(3);
    for (int l = 0; l < 3; ++l) {
        const int c = tr.codes[l];
        // greedy pick maximizes the assignment probability
        CHECK(tr.probs[l][c] == doctest::Approx(tr.probs[l].maxCoeff()));
        if (l + 1 < 3) {
            Vec next = tr.residuals[l] - s.codebooks[l].entries.col(c);
            CHECK((tr.residuals[l + 1] - next).norm() == doctest::Approx(0.0));
        }
        sum += s.codebooks[l].entries.col(c);
    }
    CHECK((tr.z_hat - sum).norm() == doctest::Approx(0.0));
    CHECK((reconstruct(s, tr.codes) - sum).norm() == doctest::Approx(0.0));
}

TEST_CASE("exact ties pick the lowest code index") {
    QuantizerStack s = tiny_stack(1, 2, 2);
    s.codebooks[0].entries.col(0) << 1.0, 0.0;
    s.codebooks[0].entries.col(1) << -1.0, 0.0;
    Vec z(2);
    z << 0.0, 5.0;  // equidistant from both codewords
    QuantizationTrace tr = quantize_latent(s, z);
    CHECK(tr.codes[0] == 0);
}

TEST_CASE("codes are invariant to shared distance shifts") {
    // adding the same vector to the residual and every codeword preserves argmax
    QuantizerStack s = tiny_stack(1, 4, 3);
    Rng rng(11);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Vec z(3), shift(3);
        for (int i = 0; i < 3; ++i) {
            z[i] = dist(rng);
            shift[i] = dist(rng);
        }
        QuantizationTrace a = quantize_latent(s, z);
        QuantizerStack shifted = s;
        shifted.codebooks[0].entries.colwise() += shift;
        QuantizationTrace b = quantize_latent(shifted, z + shift);
        CHECK(a.codes[0] == b.codes[0]);
    }
}

TEST_CASE("kmeans recovers well-separated clusters") {
    Rng rng(13);
    std::normal_distribution<double> noise(0.0, 0.01);
    Mat pts(2, 30);
    std::vector<Vec> centers(3, Vec(2));
    centers[0] << 0, 0;
    centers[1] << 10, 0;
    centers[2] << 0, 10;
    for (int i = 0; i < 30; ++i) {
        pts.col(i) = centers[i % 3];
        pts(0, i) += noise(rng);
        pts(1, i) += noise(rng);
    }
    Codebook cb = kmeans_init(pts, 3, 99);
    std::vector<bool> found(3, false);
    for (int k = 0; k < 3; ++k) {
        for (int c = 0; c < 3; ++c) {
            if ((cb.entries.col(k) - centers[c]).norm() < 0.1) found[c] = true;
        }
    }
    CHECK(found[0]);
    CHECK(found[1]);
    CHECK(found[2]);
}

TEST_CASE("kmeans single cluster centroid is the mean") {
    Mat pts(1, 4);
    pts << 1.0, 2.0, 3.0, 6.0;
    Codebook cb = kmeans_init(pts, 1, 0);
    CHECK(cb.entries(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("kmeans rejects K larger than the population") {
    Mat pts(2, 3);
    pts.setRandom();
    CHECK_THROWS_AS(kmeans_init(pts, 4, 0), ValidationError);
}

TEST_CASE("checkpoint round trip preserves every parameter bit") {
    QuantizerStack s = tiny_stack();
    save_stack(s, "test_stack.bin");
    QuantizerStack loaded = load_stack("test_stack.bin");
    CHECK(loaded.L == s.L);
    CHECK(loaded.K == s.K);
    CHECK(loaded.D_z == s.D_z);
    for (int l = 0; l < s.L; ++l) {
        CHECK(loaded.codebooks[l].entries == s.codebooks[l].entries);
    }
    for (std::size_t i = 0; i < s.encoder.weights.size(); ++i) {
        CHECK(loaded.encoder.weights[i] == s.encoder.weights[i]);
        CHECK(loaded.encoder.biases[i] == s.encoder.biases[i]);
    }
    for (std::size_t i = 0; i < s.decoder.weights.size(); ++i) {
        CHECK(loaded.decoder.weights[i] == s.decoder.weights[i]);
    }
    std::remove("test_stack.bin");
    CHECK_THROWS_AS(load_stack("no_such_stack.bin"), ParseError);
}

TEST_CASE("checkpoint loader rejects a corrupted magic") {
    QuantizerStack s = tiny_stack();
    save_stack(s, "test_stack_bad.bin");
    {
        std::FILE* f = std::fopen("test_stack_bad.bin", "r+b");
        std::fputc('X', f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_stack("test_stack_bad.bin"), ParseError);
    std::remove("test_stack_bad.bin");
}
