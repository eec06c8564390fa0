#pragma once

#include <string>
#include <vector>

#include "catid/id_assign.hpp"
#include "catid/numerics.hpp"

namespace catid {

// Level-tagged ID tokens: token id = l * K + c, rendered "<a_5>", "<b_12>", ...
struct TokenVocab {
    int L = 0;
    int K = 0;

    int size() const { return L * K; }
    int token_id(int level, int code) const { return level * K + code; }
    int level_of(int token) const { return token / K; }
    int code_of(int token) const { return token % K; }
    std::string render(int token) const;
    int parse(const std::string& text) const;  // inverse of render
};

struct IdTrie {
    struct Node {
        std::vector<std::pair<int, int>> children;  // (token id, node index), sorted
        int doc = -1;                               // row index for terminal nodes
    };
    std::vector<Node> nodes;  // nodes[0] is the root
    std::vector<std::string> doc_ids;

    int child(int node, int token) const;  // -1 if absent
    bool contains(const std::vector<int>& codes, const TokenVocab& vocab) const;
};

/// Rejects tables that still contain collisions.
IdTrie build_trie(const DocIdTable& table);

struct QueryPair {
    Vec query;                 // D_emb
    std::vector<int> targets;  // length-L code sequence
    std::string relevant_doc;
};

struct RetrieverModel {
    int D_emb = 0;
    int hidden = 0;
    int L = 0;
    int K = 0;
    MlpParams query_proj;            // D_emb -> hidden -> hidden
    Mat token_emb;                   // hidden x (L*K)
    std::vector<MlpParams> heads;    // per position: 2*hidden -> hidden -> K

    static RetrieverModel random(int D_emb, int hidden, int L, int K, Rng& rng);
    bool all_finite() const;
};

struct RetrieverGrads {
    MlpGrads query_proj;
    Mat token_emb;
    std::vector<MlpGrads> heads;

    static RetrieverGrads zeros_like(const RetrieverModel& m);
};

/// -sum_t log P(y_t | y_<t, q). Gradients accumulate into *grads when given.
double seq_loss(const RetrieverModel& model, const QueryPair& pair,
                RetrieverGrads* grads = nullptr, double grad_scale = 1.0);

struct RetrieverConfig {
    int hidden = 64;
    int epochs = 300;
    int batch_size = 64;
    OptimConfig optim{.lr = 3e-3, .weight_decay = 0.0};
    int log_every = 50;
};

struct RetrieverTrainResult {
    RetrieverModel model;
    std::vector<std::pair<long, double>> loss_log;  // (step, mean batch loss)
};

RetrieverTrainResult train_retriever(const std::vector<QueryPair>& pairs, int D_emb, int L,
                                     int K, const RetrieverConfig& config, std::uint64_t seed);

struct ScoredDoc {
    std::string doc_id;
    std::vector<int> codes;
    double log_prob;
};

/// Trie-constrained beam search; scores are full-vocabulary log-softmax values
/// so a returned score equals -seq_loss of that sequence. Ties break by
/// token-id lexicographic order.
std::vector<ScoredDoc> beam_search(const RetrieverModel& model, const Vec& query,
                                   int beam_width, const IdTrie& trie);

void save_retriever(const RetrieverModel& model, const std::string& path);
RetrieverModel load_retriever(const std::string& path);

/// Synthetic query generation: normalized document embedding + Gaussian noise.
std::vector<QueryPair> make_noisy_queries(const Corpus& corpus, const DocIdTable& table,
                                          int queries_per_doc, double noise_sigma,
                                          std::uint64_t seed);

}  // namespace catid
