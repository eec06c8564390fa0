#include "catid/losses.hpp"

#include <cmath>

namespace catid {

double recon_loss(const Vec& d, const Vec& d_hat, Vec* grad_d_hat) {
    if (d.size() != d_hat.size()) {
        throw DimensionError("recon_loss: dimension mismatch");
    }
    Vec diff = d_hat - d;
    if (grad_d_hat) *grad_d_hat = 2.0 * diff;
    return diff.squaredNorm();
}

double rq_loss(const QuantizationTrace& trace, const QuantizerStack& stack, double eta,
               RqGrads* grads) {
    double loss = 0.0;
    if (grads) {
        grads->d_codeword.clear();
        grads->d_residual.clear();
    }
    for (int l = 0; l < stack.L; ++l) {
        const Vec& r = trace.residuals[l];
        const Vec e = stack.codebooks[l].entries.col(trace.codes[l]);
        const Vec diff = r - e;
        loss += (1.0 + eta) * diff.squaredNorm();
        if (grads) {
            grads->d_codeword.push_back(-2.0 * diff);       // from ||sg[r] - e||^2
            grads->d_residual.push_back(2.0 * eta * diff);  // from eta ||r - sg[e]||^2
        }
    }
    return loss;
}

HccSampling hcc_sample(int level, const std::vector<CategoryPath>& cats, Rng& rng) {
    const int n = static_cast<int>(cats.size());
    HccSampling s;
    for (int a = 0; a < n; ++a) {
        std::vector<int> pos;
        std::vector<int> hard;
        std::vector<int> other;
        for (int j = 0; j < n; ++j) {
            if (j == a) continue;
            const bool same_here = cats[j].labels[level] == cats[a].labels[level];
            if (same_here) {
                pos.push_back(j);
            } else {
                other.push_back(j);
                if (level >= 1 && cats[j].labels[level - 1] == cats[a].labels[level - 1]) {
                    hard.push_back(j);
                }
            }
        }
        std::vector<int>& negs = (level >= 1 && !hard.empty()) ? hard : other;
        if (pos.empty() || negs.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, pos.size() - 1);
        s.anchors.push_back(a);
        s.positives.push_back(pos[pick(rng)]);
        s.negatives.push_back(negs);
    }
    return s;
}

double hcc_loss(const std::vector<Vec>& residuals, const HccSampling& sampling, double tau,
                std::vector<Vec>* grads) {
    if (grads) {
        grads->assign(residuals.size(), Vec::Zero(residuals.empty() ? 0 : residuals[0].size()));
    }
    // Degenerate zero-norm residuals (exact codeword hits) have no direction;
    // drop them from the contrastive terms instead of dividing by zero.
    auto usable = [&](int i) { return residuals[i].norm() > 1e-12; };
    std::vector<std::size_t> live;
    std::vector<std::vector<int>> live_negs;
    for (std::size_t idx = 0; idx < sampling.anchors.size(); ++idx) {
        if (!usable(sampling.anchors[idx]) || !usable(sampling.positives[idx])) continue;
        std::vector<int> negs;
        for (int nj : sampling.negatives[idx]) {
            if (usable(nj)) negs.push_back(nj);
        }
        if (negs.empty()) continue;
        live.push_back(idx);
        live_negs.push_back(std::move(negs));
    }
    const std::size_t m = live.size();
    if (m == 0) return 0.0;
    double loss = 0.0;
    for (std::size_t li = 0; li < m; ++li) {
        const std::size_t idx = live[li];
        const int a = sampling.anchors[idx];
        const int p = sampling.positives[idx];
        const auto& negs = live_negs[li];
        const Vec& ra = residuals[a];

        const double sp = cosine_sim(ra, residuals[p]);
        double mx = sp / tau;
        std::vector<double> sn(negs.size());
        for (std::size_t j = 0; j < negs.size(); ++j) {
            sn[j] = cosine_sim(ra, residuals[negs[j]]);
            mx = std::max(mx, sn[j] / tau);
        }
        double denom = std::exp(sp / tau - mx);
        for (double s : sn) denom += std::exp(s / tau - mx);
        loss += std::log(denom) + mx - sp / tau;

        if (grads) {
            const double wp = std::exp(sp / tau - mx) / denom;
            auto add_pair = [&](int other, double coeff) {
                (*grads)[a] += coeff * cosine_grad_a(ra, residuals[other]);
                (*grads)[other] += coeff * cosine_grad_a(residuals[other], ra);
            };
            add_pair(p, (wp - 1.0) / (tau * static_cast<double>(m)));
            for (std::size_t j = 0; j < negs.size(); ++j) {
                const double wn = std::exp(sn[j] / tau - mx) / denom;
                add_pair(negs[j], wn / (tau * static_cast<double>(m)));
            }
        }
    }
    return loss / static_cast<double>(m);
}

double hcc_loss(int level, const BatchContext& ctx, double tau, std::uint64_t seed) {
    Rng rng(seed);
    HccSampling sampling = hcc_sample(level, ctx.categories, rng);
    std::vector<Vec> residuals;
    residuals.reserve(ctx.traces.size());
    for (const auto& tr : ctx.traces) residuals.push_back(tr.residuals[level]);
    return hcc_loss(residuals, sampling, tau);
}

double csc_loss_from_mean(const Vec& q, Vec* grad_q) {
    const int K = static_cast<int>(q.size());
    const double u = 1.0 / K;
    constexpr double kClamp = 1e-8;

    double term1 = 0.0;
    for (int k = 0; k < K; ++k) {
        term1 += q[k] * std::log(std::max(q[k], 1e-300) * K);
    }

    Vec qc = q.cwiseMax(kClamp);
    const double s = qc.sum();
    Vec qt = qc / s;
    double term2 = -std::log(static_cast<double>(K));
    for (int k = 0; k < K; ++k) term2 -= u * std::log(qt[k]);

    if (grad_q) {
        grad_q->resize(K);
        for (int k = 0; k < K; ++k) {
            double g = std::log(std::max(q[k], 1e-300) * K) + 1.0;  // d term1
            if (q[k] > kClamp) {
                g += -1.0 / (K * qt[k] * s) + 1.0 / s;  // d term2 through renorm
            }
            (*grad_q)[k] = g;
        }
    }
    return term1 + term2;
}

double csc_loss(const std::vector<Vec>& probs, int K) {
    if (probs.empty()) return 0.0;
    Vec q = Vec::Zero(K);
    for (const auto& p : probs) {
        if (p.size() != K) throw DimensionError("csc_loss: probability vector length != K");
        q += p;
    }
    q /= static_cast<double>(probs.size());
    return csc_loss_from_mean(q);
}

double dispersion_loss(const Mat& d_hat, const Mat& d, double tau, Mat* grad_d_hat) {
    const int B = static_cast<int>(d.cols());
    if (d_hat.cols() != B || d_hat.rows() != d.rows()) {
        throw DimensionError("dispersion_loss: batch shape mismatch");
    }
    if (grad_d_hat) grad_d_hat->setZero(d_hat.rows(), B);
    double loss = 0.0;
    for (int i = 0; i < B; ++i) {
        Vec sims(B);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < B; ++j) {
            sims[j] = cosine_sim(d_hat.col(i), d.col(j)) / tau;
            mx = std::max(mx, sims[j]);
        }
        double denom = 0.0;
        for (int j = 0; j < B; ++j) denom += std::exp(sims[j] - mx);
        loss += std::log(denom) + mx - sims[i];
        if (grad_d_hat) {
            for (int j = 0; j < B; ++j) {
                double coeff = std::exp(sims[j] - mx) / denom;
                if (j == i) coeff -= 1.0;
                grad_d_hat->col(i) +=
                    (coeff / (tau * B)) * cosine_grad_a(d_hat.col(i), d.col(j));
            }
        }
    }
    return loss / B;
}

FrozenAssignments capture_assignments(const QuantizerStack& stack, const Mat& d,
                                      const std::vector<CategoryPath>& cats,
                                      std::uint64_t seed) {
    const int B = static_cast<int>(d.cols());
    FrozenAssignments frozen;
    frozen.H = cats.empty() ? 0 : static_cast<int>(cats[0].labels.size());
    Mat z = mlp_forward(stack.encoder, d);
    for (int i = 0; i < B; ++i) {
        QuantizationTrace tr = quantize_latent(stack, z.col(i));
        frozen.codes.push_back(tr.codes);
        frozen.sg_residuals.push_back(tr.residuals);
        std::vector<Vec> cws;
        for (int l = 0; l < stack.L; ++l) {
            cws.push_back(stack.codebooks[l].entries.col(tr.codes[l]));
        }
        frozen.sg_codewords.push_back(std::move(cws));
        frozen.st_shift.push_back(tr.z_hat - tr.z);
    }
    Rng rng(seed);
    for (int l = 0; l < std::min(frozen.H, stack.L); ++l) {
        frozen.hcc.push_back(hcc_sample(l, cats, rng));
    }
    return frozen;
}

StackGrads StackGrads::zeros_like(const QuantizerStack& stack) {
    StackGrads g;
    g.encoder = MlpGrads::zeros_like(stack.encoder);
    g.decoder = MlpGrads::zeros_like(stack.decoder);
    for (const auto& cb : stack.codebooks) {
        g.codebooks.emplace_back(Mat::Zero(cb.entries.rows(), cb.entries.cols()));
    }
    return g;
}

LossBreakdown total_id_loss(const Mat& d, const std::vector<CategoryPath>& cats,
                            const QuantizerStack& stack, const LossWeights& weights,
                            const FrozenAssignments& frozen, StackGrads* grads) {
    const int B = static_cast<int>(d.cols());
    const int L = stack.L;
    const int K = stack.K;
    const int H = std::min(frozen.H, L);
    LossBreakdown out;
    out.hcc.assign(H, 0.0);
    out.csc.assign(L, 0.0);

    Tape enc_tape;
    Mat z = mlp_forward(stack.encoder, d, grads ? &enc_tape : nullptr);

    // Live residuals under the frozen residual recursion, live assignment probs.
    std::vector<std::vector<Vec>> residuals(B);
    std::vector<std::vector<Vec>> probs(B);
    Mat u(stack.D_z, B);  // decoder input via the straight-through shift
    for (int i = 0; i < B; ++i) {
        Vec r = z.col(i);
        for (int l = 0; l < L; ++l) {
            residuals[i].push_back(r);
            probs[i].push_back(assignment_probs(r, stack.codebooks[l]));
            r -= frozen.sg_codewords[i][l];
        }
        u.col(i) = z.col(i) + frozen.st_shift[i];
    }

    std::vector<std::vector<Vec>> grad_r;
    if (grads) {
        grad_r.assign(B, std::vector<Vec>(L, Vec::Zero(stack.D_z)));
    }

    // RQ loss with the sg structure frozen at the capture point.
    for (int i = 0; i < B; ++i) {
        for (int l = 0; l < L; ++l) {
            const Vec& e = stack.codebooks[l].entries.col(frozen.codes[i][l]);
            const Vec diff1 = frozen.sg_residuals[i][l] - e;
            const Vec diff2 = residuals[i][l] - frozen.sg_codewords[i][l];
            out.rq += diff1.squaredNorm() + weights.eta * diff2.squaredNorm();
            if (grads) {
                grads->codebooks[l].col(frozen.codes[i][l]) += (-2.0 / B) * diff1;
                grad_r[i][l] += (2.0 * weights.eta / B) * diff2;
            }
        }
    }
    out.rq /= B;
    out.total += out.rq;

    // Decoder path.
    Tape dec_tape;
    Mat d_hat = mlp_forward(stack.decoder, u, grads ? &dec_tape : nullptr);
    Mat grad_d_hat = Mat::Zero(d_hat.rows(), B);

    if (weights.alpha > 0.0) {
        Mat g_dis;
        out.dispersion =
            dispersion_loss(d_hat, d, weights.tau, grads ? &g_dis : nullptr);
        out.total += weights.alpha * out.dispersion;
        if (grads) grad_d_hat += weights.alpha * g_dis;
    }
    if (weights.include_recon) {
        for (int i = 0; i < B; ++i) {
            Vec g;
            out.recon += recon_loss(d.col(i), d_hat.col(i), grads ? &g : nullptr);
            if (grads) grad_d_hat.col(i) += g / B;
        }
        out.recon /= B;
        out.total += out.recon;
    }

    // HCC per category level.
    if (weights.beta > 0.0) {
        for (int l = 0; l < H; ++l) {
            std::vector<Vec> level_res;
            level_res.reserve(B);
            for (int i = 0; i < B; ++i) level_res.push_back(residuals[i][l]);
            std::vector<Vec> g_res;
            out.hcc[l] = hcc_loss(level_res, frozen.hcc[l], weights.tau,
                                  grads ? &g_res : nullptr);
            out.total += weights.beta * out.hcc[l];
            if (grads) {
                for (int i = 0; i < B; ++i) grad_r[i][l] += weights.beta * g_res[i];
            }
        }
    }

    // CSC per quantizer layer, through the soft assignment distributions.
    if (weights.gamma > 0.0) {
        for (int l = 0; l < L; ++l) {
            Vec q = Vec::Zero(K);
            for (int i = 0; i < B; ++i) q += probs[i][l];
            q /= B;
            Vec grad_q;
            out.csc[l] = csc_loss_from_mean(q, grads ? &grad_q : nullptr);
            out.total += weights.gamma * out.csc[l];
            if (grads) {
                for (int i = 0; i < B; ++i) {
                    const Vec& p = probs[i][l];
                    Vec dLdp = (weights.gamma / B) * grad_q;
                    // softmax backward
                    const double inner = dLdp.dot(p);
                    Vec ds = p.cwiseProduct(dLdp - Vec::Constant(K, inner));
                    for (int k = 0; k < K; ++k) {
                        Vec diff = residuals[i][l] - stack.codebooks[l].entries.col(k);
                        const double nrm = std::max(diff.norm(), 1e-12);
                        grad_r[i][l] += ds[k] * (-diff / nrm);
                        grads->codebooks[l].col(k) += ds[k] * (diff / nrm);
                    }
                }
            }
        }
    }

    if (grads) {
        Mat grad_u;
        grads->decoder = mlp_backward(stack.decoder, dec_tape, grad_d_hat, &grad_u);
        Mat grad_z = grad_u;  // straight-through: decoder input grad reaches z
        for (int i = 0; i < B; ++i) {
            for (int l = 0; l < L; ++l) grad_z.col(i) += grad_r[i][l];
        }
        Mat unused;
        grads->encoder = mlp_backward(stack.encoder, enc_tape, grad_z, nullptr);
    }
    return out;
}

}  // namespace catid
