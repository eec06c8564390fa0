#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "catid/numerics.hpp"

namespace catid {

// Category node ids are unique across the whole tree, so a label at level l
// determines its full ancestor chain.
struct CategoryPath {
    std::vector<int> labels;  // one per level, level 0 = coarsest
};

struct Document {
    std::string doc_id;
    Vec embedding;
    CategoryPath category;
};

struct CategoryTree {
    std::vector<std::vector<int>> levels;   // node ids per level
    std::unordered_map<int, int> parent;    // node id -> parent id; roots map to -1

    int depth() const { return static_cast<int>(levels.size()); }
    bool contains_path(const CategoryPath& path) const;
};

struct Corpus {
    std::vector<Document> documents;
    CategoryTree tree;
    int H = 0;
    int D_emb = 0;

    std::size_t size() const { return documents.size(); }
};

struct SyntheticSpec {
    std::vector<int> branching;        // child counts per level, length H
    int docs_per_leaf = 1;
    int D_emb = 8;
    std::vector<double> level_scales;  // per-level cluster spread; empty -> defaults
    double noise_scale = 0.1;
    std::uint64_t seed = 0;
};

/// Planted hierarchical Gaussian mixture; deterministic per seed.
Corpus generate_synthetic_corpus(const SyntheticSpec& spec);

Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

/// ok iff H < L; throws DepthError otherwise.
void validate_category_depth(const Corpus& corpus, int L);

/// Shared post-load/post-generate validation (dims, duplicate ids, tree paths).
void validate_corpus(const Corpus& corpus);

}  // namespace catid
