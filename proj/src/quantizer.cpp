#include "catid/quantizer.hpp"

#include <cstring>
#include <fstream>
#include <limits>

namespace catid {

bool QuantizerStack::all_finite() const {
    if (!encoder.all_finite() || !decoder.all_finite()) return false;
    for (const auto& cb : codebooks) {
        if (!cb.entries.allFinite()) return false;
    }
    return true;
}

Vec assignment_probs(const Vec& r, const Codebook& cb) {
    if (r.size() != cb.entries.rows()) {
        throw DimensionError("assignment_probs: latent dim " + std::to_string(r.size()) +
                             " != codebook dim " + std::to_string(cb.entries.rows()));
    }
    Vec neg_dist(cb.K());
    for (int k = 0; k < cb.K(); ++k) {
        neg_dist[k] = -(r - cb.entries.col(k)).norm();
    }
    return softmax(neg_dist);
}

QuantizationTrace quantize_latent(const QuantizerStack& stack, const Vec& z) {
    QuantizationTrace trace;
    trace.z = z;
    Vec r = z;
    trace.z_hat = Vec::Zero(z.size());
    for (int l = 0; l < stack.L; ++l) {
        trace.residuals.push_back(r);
        Vec p = assignment_probs(r, stack.codebooks[l]);
        int best = 0;
        for (int k = 1; k < stack.K; ++k) {
            if (p[k] > p[best]) best = k;  // ties keep the lowest index
        }
        trace.probs.push_back(std::move(p));
        trace.codes.push_back(best);
        const Vec& e = stack.codebooks[l].entries.col(best);
        trace.z_hat += e;
        r -= e;
    }
    return trace;
}

QuantizationTrace quantize(const QuantizerStack& stack, const Vec& d) {
    Mat z = mlp_forward(stack.encoder, d);
    QuantizationTrace trace = quantize_latent(stack, z.col(0));
    trace.d_hat = mlp_forward(stack.decoder, trace.z_hat).col(0);
    return trace;
}

Vec reconstruct(const QuantizerStack& stack, const std::vector<int>& codes) {
    if (static_cast<int>(codes.size()) != stack.L) {
        throw DimensionError("reconstruct: expected " + std::to_string(stack.L) + " codes");
    }
    Vec z_hat = Vec::Zero(stack.D_z);
    for (int l = 0; l < stack.L; ++l) {
        if (codes[l] < 0 || codes[l] >= stack.K) {
            throw ValidationError("reconstruct: code " + std::to_string(codes[l]) +
                                  " out of range at layer " + std::to_string(l));
        }
        z_hat += stack.codebooks[l].entries.col(codes[l]);
    }
    return z_hat;
}

Codebook kmeans_init(const Mat& latents, int K, std::uint64_t seed, int level) {
    const int n = static_cast<int>(latents.cols());
    if (n < K) {
        throw ValidationError("kmeans_init: batch size " + std::to_string(n) +
                              " smaller than K=" + std::to_string(K));
    }
    Rng rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // k-means++ seeding
    Mat centers(latents.rows(), K);
    std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
    int first = static_cast<int>(unif(rng) * n);
    if (first >= n) first = n - 1;
    centers.col(0) = latents.col(first);
    for (int c = 1; c < K; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            const double d2 = (latents.col(i) - centers.col(c - 1)).squaredNorm();
            min_d2[i] = std::min(min_d2[i], d2);
            total += min_d2[i];
        }
        int pick = 0;
        if (total > 0.0) {
            const double target = unif(rng) * total;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += min_d2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(unif(rng) * n);
            if (pick >= n) pick = n - 1;
        }
        centers.col(c) = latents.col(pick);
    }

    // Lloyd iterations
    std::vector<int> assign(n, -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d2 = (latents.col(i) - centers.col(0)).squaredNorm();
            for (int c = 1; c < K; ++c) {
                const double d2 = (latents.col(i) - centers.col(c)).squaredNorm();
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        Mat sums = Mat::Zero(latents.rows(), K);
        std::vector<int> counts(K, 0);
        for (int i = 0; i < n; ++i) {
            sums.col(assign[i]) += latents.col(i);
            counts[assign[i]] += 1;
        }
        for (int c = 0; c < K; ++c) {
            if (counts[c] > 0) {
                centers.col(c) = sums.col(c) / counts[c];
            } else {
                // re-seed an empty cluster to the worst-fit point
                int worst = 0;
                double worst_d2 = -1.0;
                for (int i = 0; i < n; ++i) {
                    const double d2 = (latents.col(i) - centers.col(assign[i])).squaredNorm();
                    if (d2 > worst_d2) {
                        worst_d2 = d2;
                        worst = i;
                    }
                }
                centers.col(c) = latents.col(worst);
            }
        }
    }

    Codebook cb;
    cb.level = level;
    cb.entries = std::move(centers);
    return cb;
}

namespace {

constexpr char kStackMagic[8] = {'C', 'A', 'T', 'Q', 'S', 'T', 'K', '1'};

void write_i64(std::ofstream& out, std::int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::int64_t read_i64(std::ifstream& in) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_doubles(std::ofstream& out, const double* data, std::size_t n) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, std::size_t n) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void write_mlp(std::ofstream& out, const MlpParams& p) {
    write_i64(out, static_cast<std::int64_t>(p.weights.size()));
    write_i64(out, p.input_dim());
    for (const auto& w : p.weights) write_i64(out, w.rows());
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        write_doubles(out, p.weights[i].data(), static_cast<std::size_t>(p.weights[i].size()));
        write_doubles(out, p.biases[i].data(), static_cast<std::size_t>(p.biases[i].size()));
    }
}

MlpParams read_mlp(std::ifstream& in) {
    const auto layers = read_i64(in);
    std::vector<int> sizes;
    sizes.push_back(static_cast<int>(read_i64(in)));
    for (std::int64_t i = 0; i < layers; ++i) sizes.push_back(static_cast<int>(read_i64(in)));
    MlpParams p = MlpParams::zeros(sizes);
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        read_doubles(in, p.weights[i].data(), static_cast<std::size_t>(p.weights[i].size()));
        read_doubles(in, p.biases[i].data(), static_cast<std::size_t>(p.biases[i].size()));
    }
    return p;
}

}  // namespace

void save_stack(const QuantizerStack& stack, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("save_stack: cannot open '" + path + "'");
    out.write(kStackMagic, sizeof(kStackMagic));
    write_i64(out, stack.L);
    write_i64(out, stack.K);
    write_i64(out, stack.D_z);
    for (const auto& cb : stack.codebooks) {
        write_doubles(out, cb.entries.data(), static_cast<std::size_t>(cb.entries.size()));
    }
    write_mlp(out, stack.encoder);
    write_mlp(out, stack.decoder);
}

QuantizerStack load_stack(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("load_stack: cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kStackMagic, sizeof(magic)) != 0) {
        throw ParseError("load_stack: bad magic in '" + path + "'");
    }
    QuantizerStack stack;
    stack.L = static_cast<int>(read_i64(in));
    stack.K = static_cast<int>(read_i64(in));
    stack.D_z = static_cast<int>(read_i64(in));
    if (stack.L < 1 || stack.K < 2 || stack.D_z < 1) {
        throw ParseError("load_stack: implausible header in '" + path + "'");
    }
    for (int l = 0; l < stack.L; ++l) {
        Codebook cb;
        cb.level = l;
        cb.entries.resize(stack.D_z, stack.K);
        read_doubles(in, cb.entries.data(), static_cast<std::size_t>(cb.entries.size()));
        stack.codebooks.push_back(std::move(cb));
    }
    stack.encoder = read_mlp(in);
    stack.decoder = read_mlp(in);
    if (!in) throw ParseError("load_stack: truncated file '" + path + "'");
    return stack;
}

}  // namespace catid
