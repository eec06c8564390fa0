#pragma once

#include <optional>
#include <vector>

#include "catid/corpus.hpp"
#include "catid/quantizer.hpp"

namespace catid {

struct LossWeights {
    double alpha = 0.1;    // dispersion
    double beta = 0.0001;  // summed HCC terms
    double gamma = 1.0;    // summed CSC terms
    double eta = 0.25;     // commitment weight inside the RQ loss
    double tau = 0.07;     // temperature for the contrastive terms
    bool include_recon = false;  // baseline toggle: plain reconstruction added back
};

struct BatchContext {
    Mat d;  // D_emb x B
    std::vector<CategoryPath> categories;
    std::vector<QuantizationTrace> traces;

    int batch_size() const { return static_cast<int>(d.cols()); }
};

/// ||d - d_hat||^2 with optional gradient to d_hat.
double recon_loss(const Vec& d, const Vec& d_hat, Vec* grad_d_hat = nullptr);

struct RqGrads {
    std::vector<Vec> d_codeword;  // per layer, grad to the selected codeword
    std::vector<Vec> d_residual;  // per layer, grad to r^l (commitment path)
};

/// Eq with stop-gradients: sum_l ||sg[r_l] - e||^2 + eta ||r_l - sg[e]||^2.
/// The value collapses to (1+eta) sum_l ||r_l - e||^2; gradients honor the sg
/// split (first term -> codeword only, second -> residual only).
double rq_loss(const QuantizationTrace& trace, const QuantizerStack& stack, double eta,
               RqGrads* grads = nullptr);

// Anchor/positive/negative index sets for one HCC level, frozen so the same
// sampling can be replayed during finite-difference checks.
struct HccSampling {
    std::vector<int> anchors;
    std::vector<int> positives;
    std::vector<std::vector<int>> negatives;
};

/// Positives share the level-l label; negatives differ at level l (level 0) or
/// share the parent label but differ at level l (hard negatives, level >= 1),
/// falling back to any different-label member when the hard set is empty.
/// Anchors without a positive or a negative are skipped.
HccSampling hcc_sample(int level, const std::vector<CategoryPath>& cats, Rng& rng);

/// InfoNCE over the batch residuals at one level, cosine similarity.
/// grads, when given, is resized to the batch and filled with d loss / d r_i.
double hcc_loss(const std::vector<Vec>& residuals, const HccSampling& sampling, double tau,
                std::vector<Vec>* grads = nullptr);

/// Convenience form matching the pipeline surface: samples internally.
double hcc_loss(int level, const BatchContext& ctx, double tau, std::uint64_t seed);

/// Bidirectional KL between q and uniform; q clamped to >= 1e-8 and
/// renormalized before the reverse term. grad_q is the exact gradient of the
/// computed (clamped) expression.
double csc_loss_from_mean(const Vec& q, Vec* grad_q = nullptr);

/// Batch form: q = mean of the per-document assignment distributions.
double csc_loss(const std::vector<Vec>& probs, int K);

/// InfoNCE pairing each reconstruction with its own input against the whole
/// batch of inputs. Gradient flows to d_hat only.
double dispersion_loss(const Mat& d_hat, const Mat& d, double tau, Mat* grad_d_hat = nullptr);

// Everything captured at the base point so the objective is a smooth function
// of the parameters: greedy codes, sg'd residuals, the codeword offsets used in
// the residual recursion, the straight-through shift, and the HCC sampling.
struct FrozenAssignments {
    std::vector<std::vector<int>> codes;           // per doc
    std::vector<std::vector<Vec>> sg_residuals;    // per doc, per layer
    std::vector<std::vector<Vec>> sg_codewords;    // per doc, per layer (selected entries)
    std::vector<Vec> st_shift;                     // per doc: z_hat - z at capture
    std::vector<HccSampling> hcc;                  // per level < H
    int H = 0;
};

FrozenAssignments capture_assignments(const QuantizerStack& stack, const Mat& d,
                                      const std::vector<CategoryPath>& cats, std::uint64_t seed);

struct StackGrads {
    MlpGrads encoder;
    MlpGrads decoder;
    std::vector<Mat> codebooks;

    static StackGrads zeros_like(const QuantizerStack& stack);
};

struct LossBreakdown {
    double total = 0.0;
    double rq = 0.0;
    double recon = 0.0;
    double dispersion = 0.0;
    std::vector<double> hcc;  // per level
    std::vector<double> csc;  // per layer
};

/// Composite objective: mean L_rq + alpha L_Dis + beta sum_{l<H} L_HCC^l +
/// gamma sum_{l<L} L_CSC^l (+ mean recon when toggled). Evaluated against the
/// frozen assignments; at the capture point this equals the true objective and
/// the returned gradients are its exact a.e. derivatives.
LossBreakdown total_id_loss(const Mat& d, const std::vector<CategoryPath>& cats,
                            const QuantizerStack& stack, const LossWeights& weights,
                            const FrozenAssignments& frozen, StackGrads* grads = nullptr);

}  // namespace catid
