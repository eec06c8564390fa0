#pragma once

#include <string>
#include <vector>

#include "catid/numerics.hpp"

namespace catid {

struct Codebook {
    int level = 0;
    Mat entries;  // D_z x K, one codeword per column

    int K() const { return static_cast<int>(entries.cols()); }
    int dim() const { return static_cast<int>(entries.rows()); }
};

struct QuantizerStack {
    int L = 0;
    int K = 0;
    int D_z = 0;
    std::vector<Codebook> codebooks;  // length L
    MlpParams encoder;                // D_emb -> ... -> D_z
    MlpParams decoder;                // D_z -> ... -> D_emb

    int D_emb() const { return encoder.input_dim(); }
    bool all_finite() const;
};

struct QuantizationTrace {
    Vec z;
    std::vector<Vec> residuals;  // r^0..r^{L-1}, r^0 == z
    std::vector<Vec> probs;      // p^0..p^{L-1}
    std::vector<int> codes;      // c^0..c^{L-1}
    Vec z_hat;
    Vec d_hat;
};

/// p_k = softmax_k(-||r - e_k||_2). Note the unsquared distance.
Vec assignment_probs(const Vec& r, const Codebook& cb);

/// Residual loop on an already-encoded latent; fills everything but d_hat.
QuantizationTrace quantize_latent(const QuantizerStack& stack, const Vec& z);

/// Full pipeline: encode, greedy per-layer selection, reconstruct, decode.
QuantizationTrace quantize(const QuantizerStack& stack, const Vec& d);

/// Sum of the selected codewords.
Vec reconstruct(const QuantizerStack& stack, const std::vector<int>& codes);

/// k-means++ seeding then Lloyd iterations to an assignment fixpoint (<= 100
/// rounds). Empty clusters are re-seeded to the worst-fit point.
/// latents: D x N column-per-point, N >= K.
Codebook kmeans_init(const Mat& latents, int K, std::uint64_t seed, int level = 0);

void save_stack(const QuantizerStack& stack, const std::string& path);
QuantizerStack load_stack(const std::string& path);

}  // namespace catid
