#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "catid/id_assign.hpp"
#include "catid/retriever.hpp"
#include "catid/trainer.hpp"

namespace catid {

/// |top-k of ranked intersected with relevant| / |relevant|.
double recall_at_k(const std::vector<std::string>& ranked,
                   const std::set<std::string>& relevant, int k);

struct UtilizationReport {
    double entropy = 0.0;     // nats
    double perplexity = 1.0;  // exp(entropy)
    int used_codes = 0;
};

UtilizationReport codebook_utilization(const DocIdTable& table, int level);

/// Doc-weighted mean over level-l codes of the majority-category fraction.
double category_purity(const DocIdTable& table, const Corpus& corpus, int level);

struct PrefixAgreement {
    double intra_category = 0.0;  // mean common-prefix length, same level-1 label
    double inter_category = 0.0;
};

/// Seeded pair sampling, >= 10k pairs per side or exhaustive when fewer.
PrefixAgreement prefix_agreement(const DocIdTable& table, const Corpus& corpus,
                                 std::uint64_t seed = 0, int max_pairs = 10000);

struct AblationVariant {
    std::string name;
    LossWeights weights;
    bool baseline_mode = false;
};

struct PipelineConfig {
    TrainConfig train;
    SinkhornOptions sinkhorn;
    RetrieverConfig retriever;
    int queries_per_doc = 2;
    double query_noise = 0.05;
    int beam_width = 10;
    std::vector<int> recall_ks = {5, 10, 50};
};

struct RunReport {
    std::string variant;
    std::uint64_t seed = 0;
    std::map<int, double> recall;  // k -> value
    double purity_l0 = 0.0;
    double mean_perplexity = 0.0;
    long collisions_before_resolution = 0;
    double wall_seconds = 0.0;
    bool failed = false;
    std::string error;
};

/// Full pipeline for one variant/seed: tokenizer training, ID assignment and
/// resolution, retriever training, constrained beam retrieval, metrics.
RunReport run_pipeline(const Corpus& corpus, const PipelineConfig& config,
                       const AblationVariant& variant, std::uint64_t seed);

/// Loss-toggle grid with a shared corpus and seed set; failed variants are
/// reported and the rest continue.
std::vector<RunReport> ablation_run(const Corpus& corpus, const PipelineConfig& config,
                                    const std::vector<AblationVariant>& variants,
                                    const std::vector<std::uint64_t>& seeds);

void save_reports_csv(const std::vector<RunReport>& reports, const std::string& path);

}  // namespace catid
