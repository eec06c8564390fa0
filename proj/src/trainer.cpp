#include "catid/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

namespace catid {

namespace {

MlpParams make_mlp(const std::vector<int>& sizes, Rng& rng) {
    MlpParams p;
    std::normal_distribution<double> dist(0.0, 1.0);
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        const double scale = std::sqrt(2.0 / sizes[i]);
        Mat w(sizes[i + 1], sizes[i]);
        for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = scale * dist(rng);
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(Vec::Constant(sizes[i + 1], 0.01));
    }
    return p;
}

LossWeights effective_weights(const TrainConfig& cfg) {
    LossWeights w = cfg.weights;
    if (cfg.baseline_mode) {
        w.include_recon = true;
        w.alpha = 0.0;
        w.beta = 0.0;
        w.gamma = 0.0;
    }
    return w;
}

std::uint64_t step_seed(std::uint64_t base, long step) {
    std::uint64_t x = base + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(step + 1);
    x ^= x >> 33;
    x *= 0xff51afd7ed558ccdULL;
    x ^= x >> 33;
    return x;
}

struct ProbeStats {
    std::vector<double> perplexity;
    long collisions = 0;
};

ProbeStats probe_stats(const QuantizerStack& stack, const Corpus& corpus, int probe_size) {
    const int n = std::min<int>(probe_size, static_cast<int>(corpus.size()));
    std::vector<std::vector<long>> counts(stack.L, std::vector<long>(stack.K, 0));
    std::unordered_map<std::string, int> seq_counts;
    for (int i = 0; i < n; ++i) {
        QuantizationTrace tr = quantize(stack, corpus.documents[i].embedding);
        std::string key;
        for (int l = 0; l < stack.L; ++l) {
            counts[l][tr.codes[l]] += 1;
            key += std::to_string(tr.codes[l]) + ",";
        }
        seq_counts[key] += 1;
    }
    ProbeStats stats;
    for (int l = 0; l < stack.L; ++l) {
        double entropy = 0.0;
        for (long c : counts[l]) {
            if (c > 0) {
                const double p = static_cast<double>(c) / n;
                entropy -= p * std::log(p);
            }
        }
        stats.perplexity.push_back(std::exp(entropy));
    }
    for (const auto& [key, c] : seq_counts) {
        if (c > 1) stats.collisions += c - 1;
    }
    return stats;
}

std::vector<TensorRef> stack_tensor_refs(QuantizerStack& stack) {
    std::vector<TensorRef> refs = mlp_tensor_refs(stack.encoder);
    auto dec = mlp_tensor_refs(stack.decoder);
    refs.insert(refs.end(), dec.begin(), dec.end());
    for (auto& cb : stack.codebooks) refs.emplace_back(cb.entries);
    return refs;
}

std::vector<Eigen::ArrayXd> stack_grad_arrays(const StackGrads& g) {
    std::vector<Eigen::ArrayXd> out = mlp_grad_arrays(g.encoder);
    auto dec = mlp_grad_arrays(g.decoder);
    out.insert(out.end(), dec.begin(), dec.end());
    for (const auto& cb : g.codebooks) {
        out.emplace_back(Eigen::Map<const Eigen::ArrayXd>(cb.data(), cb.size()));
    }
    return out;
}

void check_finite_breakdown(const LossBreakdown& bd, long step) {
    auto check = [&](double v, const std::string& name) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite " + name + " loss at step " + std::to_string(step));
        }
    };
    check(bd.rq, "rq");
    check(bd.recon, "recon");
    check(bd.dispersion, "dispersion");
    for (std::size_t l = 0; l < bd.hcc.size(); ++l) check(bd.hcc[l], "hcc[" + std::to_string(l) + "]");
    for (std::size_t l = 0; l < bd.csc.size(); ++l) check(bd.csc[l], "csc[" + std::to_string(l) + "]");
    check(bd.total, "total");
}

}  // namespace

void TrainConfig::validate(const Corpus& corpus) const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (batch_size > static_cast<int>(corpus.size())) {
        throw ConfigError("train: batch_size " + std::to_string(batch_size) +
                          " exceeds corpus size " + std::to_string(corpus.size()));
    }
    if (K < 2) throw ConfigError("train: K must be >= 2");
    if (L < 1) throw ConfigError("train: L must be >= 1");
    validate_category_depth(corpus, L);
}

void MetricsLog::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ParseError("metrics: cannot open '" + path + "'");
    const std::size_t layers = rows.empty() ? 0 : rows.front().perplexity.size();
    out << "step,rq,recon,dispersion,hcc,csc,total";
    for (std::size_t l = 0; l < layers; ++l) out << ",ppl_" << l;
    out << ",collisions\n";
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        out << r.step << "," << fmt(r.rq) << "," << fmt(r.recon) << "," << fmt(r.dispersion)
            << "," << fmt(r.hcc) << "," << fmt(r.csc) << "," << fmt(r.total);
        for (double p : r.perplexity) out << "," << fmt(p);
        out << "," << r.collisions << "\n";
    }
}

QuantizerStack init_stack(const Corpus& corpus, const TrainConfig& config) {
    Rng rng(config.seed);
    QuantizerStack stack;
    stack.L = config.L;
    stack.K = config.K;
    stack.D_z = config.D_z;
    std::vector<int> hidden = config.encoder_hidden;
    if (hidden.empty()) hidden = {2 * corpus.D_emb};

    std::vector<int> enc_sizes = {corpus.D_emb};
    enc_sizes.insert(enc_sizes.end(), hidden.begin(), hidden.end());
    enc_sizes.push_back(config.D_z);
    std::vector<int> dec_sizes(enc_sizes.rbegin(), enc_sizes.rend());
    stack.encoder = make_mlp(enc_sizes, rng);
    stack.decoder = make_mlp(dec_sizes, rng);

    // Layer-by-layer k-means warm-up on the residual populations.
    Mat d(corpus.D_emb, corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) d.col(i) = corpus.documents[i].embedding;
    Mat residuals = mlp_forward(stack.encoder, d);
    for (int l = 0; l < config.L; ++l) {
        stack.codebooks.push_back(kmeans_init(residuals, config.K, config.seed + 1000 + l, l));
        for (Eigen::Index i = 0; i < residuals.cols(); ++i) {
            int best = 0;
            double best_d2 =
                (residuals.col(i) - stack.codebooks[l].entries.col(0)).squaredNorm();
            for (int k = 1; k < config.K; ++k) {
                const double d2 =
                    (residuals.col(i) - stack.codebooks[l].entries.col(k)).squaredNorm();
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = k;
                }
            }
            residuals.col(i) -= stack.codebooks[l].entries.col(best);
        }
    }
    return stack;
}

TrainResult train_tokenizer(const Corpus& corpus, const TrainConfig& config) {
    return train_tokenizer(corpus, config, init_stack(corpus, config));
}

TrainResult train_tokenizer(const Corpus& corpus, const TrainConfig& config,
                            QuantizerStack stack) {
    config.validate(corpus);
    const int n = static_cast<int>(corpus.size());
    const LossWeights weights = effective_weights(config);

    Rng shuffle_rng(config.seed + 7);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);

    OptimState optim;
    optim.cfg = config.optim;

    MetricsLog log;
    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        std::vector<std::vector<long>> usage(config.L, std::vector<long>(config.K, 0));

        for (int start = 0; start < n; start += config.batch_size) {
            const int bsz = std::min(config.batch_size, n - start);
            if (bsz < 2) break;  // contrastive terms need peers; remainder dropped
            Mat d(corpus.D_emb, bsz);
            std::vector<CategoryPath> cats(bsz);
            for (int i = 0; i < bsz; ++i) {
                d.col(i) = corpus.documents[order[start + i]].embedding;
                cats[i] = corpus.documents[order[start + i]].category;
            }
            FrozenAssignments frozen =
                capture_assignments(stack, d, cats, step_seed(config.seed, step));
            for (int i = 0; i < bsz; ++i) {
                for (int l = 0; l < config.L; ++l) usage[l][frozen.codes[i][l]] += 1;
            }
            StackGrads grads = StackGrads::zeros_like(stack);
            LossBreakdown bd = total_id_loss(d, cats, stack, weights, frozen, &grads);
            check_finite_breakdown(bd, step);
            adamw_step(stack_tensor_refs(stack), stack_grad_arrays(grads), optim);
            if (!stack.all_finite()) {
                throw NumericError("non-finite parameter after step " + std::to_string(step));
            }
            ++step;

            if (step % config.log_every == 0 ||
                (epoch + 1 == config.epochs && start + config.batch_size >= n)) {
                MetricsRow row;
                row.step = step;
                row.rq = bd.rq;
                row.recon = bd.recon;
                row.dispersion = bd.dispersion;
                for (double v : bd.hcc) row.hcc += weights.beta * v;
                for (double v : bd.csc) row.csc += weights.gamma * v;
                row.total = bd.total;
                ProbeStats stats = probe_stats(stack, corpus, 256);
                row.perplexity = stats.perplexity;
                row.collisions = stats.collisions;
                log.rows.push_back(std::move(row));
            }
        }

        // Dead-code rescue: unused codewords move to the worst-quantized
        // residual seen on the probe subset.
        const int probe = std::min(n, 256);
        std::vector<QuantizationTrace> traces;
        traces.reserve(probe);
        bool any_dead = false;
        for (int l = 0; l < config.L && !any_dead; ++l) {
            for (int k = 0; k < config.K; ++k) {
                if (usage[l][k] == 0) any_dead = true;
            }
        }
        if (any_dead) {
            for (int i = 0; i < probe; ++i) {
                traces.push_back(quantize(stack, corpus.documents[i].embedding));
            }
            for (int l = 0; l < config.L; ++l) {
                for (int k = 0; k < config.K; ++k) {
                    if (usage[l][k] != 0) continue;
                    int worst = 0;
                    double worst_err = -1.0;
                    for (int i = 0; i < probe; ++i) {
                        const double err =
                            (traces[i].residuals[l] -
                             stack.codebooks[l].entries.col(traces[i].codes[l]))
                                .norm();
                        if (err > worst_err) {
                            worst_err = err;
                            worst = i;
                        }
                    }
                    stack.codebooks[l].entries.col(k) = traces[worst].residuals[l];
                }
            }
        }
    }
    return TrainResult{std::move(stack), std::move(log)};
}

GradCheckReport grad_check(const TrainConfig& config, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.branching = {2, 2};
    spec.docs_per_leaf = 2;
    spec.D_emb = 6;
    spec.noise_scale = 0.3;
    spec.seed = seed;
    Corpus corpus = generate_synthetic_corpus(spec);

    TrainConfig cfg = config;
    cfg.D_z = std::min(cfg.D_z, 8);
    cfg.K = std::min(cfg.K, 4);
    const int batch = std::min<int>(6, static_cast<int>(corpus.size()));

    Mat d(corpus.D_emb, batch);
    std::vector<CategoryPath> cats(batch);
    for (int i = 0; i < batch; ++i) {
        d.col(i) = corpus.documents[i].embedding;
        cats[i] = corpus.documents[i].category;
    }
    const LossWeights weights = effective_weights(cfg);

    // Central differences need a smooth neighborhood. A rectifier unit whose
    // pre-activation sits within the step size of zero would put the two
    // evaluation points on different linear pieces, so redraw the random stack
    // until every hidden pre-activation clears a margin.
    QuantizerStack stack;
    FrozenAssignments frozen;
    constexpr double kMargin = 1e-3;
    bool clean = false;
    for (int attempt = 0; attempt < 64 && !clean; ++attempt) {
        Rng rng(seed + 11 + 7919ULL * static_cast<std::uint64_t>(attempt));
        stack = QuantizerStack{};
        stack.L = cfg.L;
        stack.K = cfg.K;
        stack.D_z = cfg.D_z;
        stack.encoder = make_mlp({corpus.D_emb, 2 * corpus.D_emb, cfg.D_z}, rng);
        stack.decoder = make_mlp({cfg.D_z, 2 * corpus.D_emb, corpus.D_emb}, rng);
        std::normal_distribution<double> dist(0.0, 1.0);
        stack.codebooks.clear();
        for (int l = 0; l < cfg.L; ++l) {
            Codebook cb;
            cb.level = l;
            cb.entries.resize(cfg.D_z, cfg.K);
            for (Eigen::Index i = 0; i < cb.entries.size(); ++i) {
                cb.entries.data()[i] = 0.5 * dist(rng);
            }
            stack.codebooks.push_back(std::move(cb));
        }
        frozen = capture_assignments(stack, d, cats, seed + 5);

        Tape enc_tape;
        Mat z = mlp_forward(stack.encoder, d, &enc_tape);
        Mat u(cfg.D_z, batch);
        for (int i = 0; i < batch; ++i) u.col(i) = z.col(i) + frozen.st_shift[i];
        Tape dec_tape;
        mlp_forward(stack.decoder, u, &dec_tape);
        double min_pre = std::numeric_limits<double>::infinity();
        for (const Tape* tape : {&enc_tape, &dec_tape}) {
            for (std::size_t layer = 0; layer + 1 < tape->pre.size(); ++layer) {
                min_pre = std::min(min_pre, tape->pre[layer].array().abs().minCoeff());
            }
        }
        clean = min_pre > kMargin;
    }
    if (!clean) throw NumericError("grad_check: could not find a kink-free base point");

    StackGrads analytic = StackGrads::zeros_like(stack);
    total_id_loss(d, cats, stack, weights, frozen, &analytic);
    const auto analytic_flat = stack_grad_arrays(analytic);

    auto eval = [&]() { return total_id_loss(d, cats, stack, weights, frozen).total; };
    auto refs = stack_tensor_refs(stack);
    const double h = 1e-5;
    auto rel = [](double a, double f) {
        return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6});
    };

    // slot -> group mapping: encoder tensors, decoder tensors, codebooks
    const std::size_t enc_slots = 2 * stack.encoder.layer_count();
    const std::size_t dec_slots = 2 * stack.decoder.layer_count();
    GradCheckReport report;
    report.groups = {{"encoder", 0.0}, {"decoder", 0.0}, {"codebooks", 0.0}};
    for (std::size_t s = 0; s < refs.size(); ++s) {
        GradCheckGroup& group = report.groups[s < enc_slots ? 0 : (s < enc_slots + dec_slots ? 1 : 2)];
        for (Eigen::Index i = 0; i < refs[s].size; ++i) {
            double& p = refs[s].data[i];
            const double orig = p;
            p = orig + h;
            const double up = eval();
            p = orig - h;
            const double down = eval();
            p = orig;
            const double fd = (up - down) / (2.0 * h);
            group.max_rel_err = std::max(group.max_rel_err, rel(analytic_flat[s][i], fd));
        }
    }
    for (const auto& g : report.groups) {
        report.max_rel_err = std::max(report.max_rel_err, g.max_rel_err);
    }
    return report;
}

}  // namespace catid
