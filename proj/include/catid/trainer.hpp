#pragma once

#include <string>
#include <vector>

#include "catid/losses.hpp"

namespace catid {

struct TrainConfig {
    int L = 4;
    int K = 32;
    int D_z = 32;
    int epochs = 100;
    int batch_size = 256;
    LossWeights weights;
    OptimConfig optim;
    std::uint64_t seed = 0;
    bool baseline_mode = false;  // TIGER-style: recon + L_rq only
    int log_every = 10;
    std::vector<int> encoder_hidden;  // empty -> {2 * D_emb}

    void validate(const Corpus& corpus) const;
};

struct MetricsRow {
    long step = 0;  // monotonic step index, doubles as the timestamp
    double rq = 0.0;
    double recon = 0.0;
    double dispersion = 0.0;
    double hcc = 0.0;  // beta-summed levels
    double csc = 0.0;  // gamma-summed layers
    double total = 0.0;
    std::vector<double> perplexity;  // per-layer usage perplexity on the probe
    long collisions = 0;
};

struct MetricsLog {
    std::vector<MetricsRow> rows;
    void save_csv(const std::string& path) const;
};

struct TrainResult {
    QuantizerStack stack;
    MetricsLog log;
};

/// Fresh random stack with k-means warm-up on the corpus latents.
QuantizerStack init_stack(const Corpus& corpus, const TrainConfig& config);

TrainResult train_tokenizer(const Corpus& corpus, const TrainConfig& config);

/// Continues training an existing stack (used for checkpoint resume).
TrainResult train_tokenizer(const Corpus& corpus, const TrainConfig& config,
                            QuantizerStack stack);

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_rel_err = 0.0;
};

/// Central finite differences (step 1e-5) against the analytic gradients on a
/// frozen batch with frozen code assignments. Intended for tiny dimensions.
GradCheckReport grad_check(const TrainConfig& config, std::uint64_t seed);

}  // namespace catid
