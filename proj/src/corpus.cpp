#include "catid/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include <json.hpp>

namespace catid {

using nlohmann::json;

bool CategoryTree::contains_path(const CategoryPath& path) const {
    if (static_cast<int>(path.labels.size()) != depth()) return false;
    int expected_parent = -1;
    for (std::size_t l = 0; l < path.labels.size(); ++l) {
        const int node = path.labels[l];
        auto it = parent.find(node);
        if (it == parent.end()) return false;
        if (it->second != expected_parent) return false;
        const auto& lvl = levels[l];
        if (std::find(lvl.begin(), lvl.end(), node) == lvl.end()) return false;
        expected_parent = node;
    }
    return true;
}

namespace {

Vec normalized_embedding(Vec v) {
    const double n = v.norm();
    if (n == 0.0) {
        throw ValidationError("corpus: zero embedding cannot be normalized");
    }
    // Already-unit vectors pass through untouched so round-trips stay bit-exact.
    if (std::abs(n - 1.0) > 1e-9) {
        v /= n;
    }
    return v;
}

}  // namespace

Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
    const int H = static_cast<int>(spec.branching.size());
    if (H == 0) {
        throw ValidationError("synthetic spec: branching must be non-empty");
    }
    for (int b : spec.branching) {
        if (b < 1) throw ValidationError("synthetic spec: branching entries must be >= 1");
    }
    if (spec.docs_per_leaf < 1) {
        throw ValidationError("synthetic spec: docs_per_leaf must be >= 1");
    }
    if (spec.D_emb < 1) {
        throw ValidationError("synthetic spec: D_emb must be >= 1");
    }
    if (spec.noise_scale <= 0.0) {
        throw ValidationError("synthetic spec: noise_scale must be > 0");
    }
    std::vector<double> scales = spec.level_scales;
    if (scales.empty()) {
        for (int l = 0; l < H; ++l) scales.push_back(4.0 * std::pow(0.5, l));
    }
    if (static_cast<int>(scales.size()) != H) {
        throw ValidationError("synthetic spec: level_scales length must equal branching length");
    }
    for (double s : scales) {
        if (s <= 0.0) throw ValidationError("synthetic spec: level_scales must be > 0");
    }

    Rng rng(spec.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto draw = [&](double scale) {
        Vec v(spec.D_emb);
        for (int i = 0; i < spec.D_emb; ++i) v[i] = scale * gauss(rng);
        return v;
    };

    Corpus corpus;
    corpus.H = H;
    corpus.D_emb = spec.D_emb;
    corpus.tree.levels.resize(H);

    struct NodeInfo {
        int id;
        Vec center;
        std::vector<int> path;
    };
    int next_id = 0;
    std::vector<NodeInfo> frontier;
    for (int b = 0; b < spec.branching[0]; ++b) {
        NodeInfo node{next_id++, draw(scales[0]), {}};
        node.path.push_back(node.id);
        corpus.tree.levels[0].push_back(node.id);
        corpus.tree.parent[node.id] = -1;
        frontier.push_back(std::move(node));
    }
    for (int l = 1; l < H; ++l) {
        std::vector<NodeInfo> next;
        for (const auto& parent_node : frontier) {
            for (int b = 0; b < spec.branching[l]; ++b) {
                NodeInfo node{next_id++, parent_node.center + draw(scales[l]), parent_node.path};
                node.path.push_back(node.id);
                corpus.tree.levels[l].push_back(node.id);
                corpus.tree.parent[node.id] = parent_node.id;
                next.push_back(std::move(node));
            }
        }
        frontier = std::move(next);
    }

    int doc_counter = 0;
    for (const auto& leaf : frontier) {
        for (int d = 0; d < spec.docs_per_leaf; ++d) {
            Document doc;
            doc.doc_id = "doc" + std::to_string(doc_counter++);
            doc.embedding = normalized_embedding(leaf.center + draw(spec.noise_scale));
            doc.category.labels = leaf.path;
            corpus.documents.push_back(std::move(doc));
        }
    }
    validate_corpus(corpus);
    return corpus;
}

void validate_corpus(const Corpus& corpus) {
    if (corpus.tree.depth() != corpus.H) {
        throw ValidationError("corpus: tree depth does not match H");
    }
    std::unordered_set<std::string> seen;
    for (const auto& doc : corpus.documents) {
        if (doc.embedding.size() != corpus.D_emb) {
            throw DimensionError("corpus: document '" + doc.doc_id + "' has embedding dim " +
                                 std::to_string(doc.embedding.size()) + ", expected " +
                                 std::to_string(corpus.D_emb));
        }
        if (!doc.embedding.allFinite()) {
            throw ValidationError("corpus: document '" + doc.doc_id +
                                  "' has non-finite embedding entries");
        }
        if (!seen.insert(doc.doc_id).second) {
            throw ValidationError("corpus: duplicate doc_id '" + doc.doc_id + "'");
        }
        if (!corpus.tree.contains_path(doc.category)) {
            throw ValidationError("corpus: document '" + doc.doc_id +
                                  "' has a category path inconsistent with the tree");
        }
    }
}

void validate_category_depth(const Corpus& corpus, int L) {
    if (corpus.H >= L) {
        throw DepthError(corpus.H, L);
    }
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("save_corpus: cannot open '" + path + "'");
    json header;
    header["D_emb"] = corpus.D_emb;
    header["H"] = corpus.H;
    json tree = json::array();
    for (const auto& level : corpus.tree.levels) {
        for (int node : level) {
            tree.push_back(json::array({node, corpus.tree.parent.at(node)}));
        }
    }
    header["tree"] = tree;
    out << header.dump() << "\n";
    for (const auto& doc : corpus.documents) {
        json rec;
        rec["doc_id"] = doc.doc_id;
        json emb = json::array();
        for (Eigen::Index i = 0; i < doc.embedding.size(); ++i) emb.push_back(doc.embedding[i]);
        rec["embedding"] = emb;
        rec["category"] = doc.category.labels;
        out << rec.dump() << "\n";
    }
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("load_corpus: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("load_corpus: empty file");

    Corpus corpus;
    json header;
    try {
        header = json::parse(line);
        corpus.D_emb = header.at("D_emb").get<int>();
        corpus.H = header.at("H").get<int>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("load_corpus: bad header: ") + e.what());
    }
    if (corpus.H < 1 || corpus.D_emb < 1) {
        throw ValidationError("load_corpus: header must have H >= 1 and D_emb >= 1");
    }

    // Rebuild levels from parent chains, preserving file order within levels.
    std::unordered_map<int, int> node_level;
    corpus.tree.levels.resize(corpus.H);
    int max_id = -1;
    try {
        for (const auto& edge : header.at("tree")) {
            const int child = edge.at(0).get<int>();
            const int parent = edge.at(1).get<int>();
            if (corpus.tree.parent.count(child)) {
                throw ValidationError("load_corpus: node " + std::to_string(child) +
                                      " listed twice in tree");
            }
            int level = 0;
            if (parent != -1) {
                auto it = node_level.find(parent);
                if (it == node_level.end()) {
                    throw ValidationError("load_corpus: node " + std::to_string(child) +
                                          " references unknown parent " + std::to_string(parent));
                }
                level = it->second + 1;
            }
            if (level >= corpus.H) {
                throw ValidationError("load_corpus: tree deeper than header H");
            }
            corpus.tree.parent[child] = parent;
            node_level[child] = level;
            corpus.tree.levels[level].push_back(child);
            max_id = std::max(max_id, child);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("load_corpus: bad tree: ") + e.what());
    }

    // Sentinel "unspecified" children used to right-pad ragged category paths.
    std::unordered_map<long long, int> sentinel;  // (parent<<1 key) -> node id
    auto sentinel_child = [&](int parent, int level) {
        const long long key = (static_cast<long long>(parent) << 8) | level;
        auto it = sentinel.find(key);
        if (it != sentinel.end()) return it->second;
        const int id = ++max_id;
        corpus.tree.parent[id] = parent;
        corpus.tree.levels[level].push_back(id);
        sentinel[key] = id;
        return id;
    };

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("load_corpus: line " + std::to_string(line_no) + ": " + e.what());
        }
        Document doc;
        try {
            doc.doc_id = rec.at("doc_id").get<std::string>();
            const auto& emb = rec.at("embedding");
            doc.embedding.resize(static_cast<Eigen::Index>(emb.size()));
            for (std::size_t i = 0; i < emb.size(); ++i) {
                doc.embedding[static_cast<Eigen::Index>(i)] = emb[i].get<double>();
            }
            doc.category.labels = rec.at("category").get<std::vector<int>>();
        } catch (const json::exception& e) {
            throw ParseError("load_corpus: line " + std::to_string(line_no) + ": " + e.what());
        }
        if (doc.embedding.size() != corpus.D_emb) {
            throw DimensionError("load_corpus: line " + std::to_string(line_no) +
                                 ": embedding dim " + std::to_string(doc.embedding.size()) +
                                 " != header D_emb " + std::to_string(corpus.D_emb));
        }
        if (!doc.embedding.allFinite()) {
            throw ValidationError("load_corpus: line " + std::to_string(line_no) +
                                  ": non-finite embedding");
        }
        doc.embedding = normalized_embedding(std::move(doc.embedding));
        if (static_cast<int>(doc.category.labels.size()) > corpus.H) {
            throw ValidationError("load_corpus: line " + std::to_string(line_no) +
                                  ": category path longer than H");
        }
        if (doc.category.labels.empty()) {
            throw ValidationError("load_corpus: line " + std::to_string(line_no) +
                                  ": empty category path");
        }
        while (static_cast<int>(doc.category.labels.size()) < corpus.H) {
            const int parent = doc.category.labels.back();
            const int level = static_cast<int>(doc.category.labels.size());
            doc.category.labels.push_back(sentinel_child(parent, level));
        }
        corpus.documents.push_back(std::move(doc));
    }
    validate_corpus(corpus);
    return corpus;
}

}  // namespace catid
