#include "catid/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

namespace catid {

std::string TokenVocab::render(int token) const {
    const char letter = static_cast<char>('a' + level_of(token));
    return std::string("<") + letter + "_" + std::to_string(code_of(token)) + ">";
}

int TokenVocab::parse(const std::string& text) const {
    if (text.size() < 5 || text.front() != '<' || text.back() != '>' || text[2] != '_') {
        throw ParseError("token: bad rendering '" + text + "'");
    }
    const int level = text[1] - 'a';
    const int code = std::stoi(text.substr(3, text.size() - 4));
    if (level < 0 || level >= L || code < 0 || code >= K) {
        throw ParseError("token: out of range '" + text + "'");
    }
    return token_id(level, code);
}

int IdTrie::child(int node, int token) const {
    const auto& kids = nodes[node].children;
    auto it = std::lower_bound(kids.begin(), kids.end(), token,
                               [](const auto& kv, int t) { return kv.first < t; });
    if (it == kids.end() || it->first != token) return -1;
    return it->second;
}

bool IdTrie::contains(const std::vector<int>& codes, const TokenVocab& vocab) const {
    int node = 0;
    for (std::size_t l = 0; l < codes.size(); ++l) {
        node = child(node, vocab.token_id(static_cast<int>(l), codes[l]));
        if (node < 0) return false;
    }
    return nodes[node].doc >= 0;
}

IdTrie build_trie(const DocIdTable& table) {
    if (!table.collision_free()) {
        throw ValidationError("build_trie: table still contains collisions");
    }
    TokenVocab vocab{table.L, table.K};
    IdTrie trie;
    trie.nodes.emplace_back();
    for (std::size_t row = 0; row < table.rows.size(); ++row) {
        int node = 0;
        for (int l = 0; l < table.L; ++l) {
            const int token = vocab.token_id(l, table.rows[row].codes[l]);
            int next = trie.child(node, token);
            if (next < 0) {
                next = static_cast<int>(trie.nodes.size());
                trie.nodes.emplace_back();
                auto& kids = trie.nodes[node].children;
                kids.insert(std::upper_bound(kids.begin(), kids.end(),
                                             std::make_pair(token, 0)),
                            {token, next});
            }
            node = next;
        }
        trie.nodes[node].doc = static_cast<int>(row);
        trie.doc_ids.push_back(table.rows[row].doc_id);
    }
    return trie;
}

RetrieverModel RetrieverModel::random(int D_emb, int hidden, int L, int K, Rng& rng) {
    RetrieverModel m;
    m.D_emb = D_emb;
    m.hidden = hidden;
    m.L = L;
    m.K = K;
    auto init_mlp = [&](const std::vector<int>& sizes) {
        MlpParams p;
        std::normal_distribution<double> dist(0.0, 1.0);
        for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
            const double scale = std::sqrt(2.0 / sizes[i]);
            Mat w(sizes[i + 1], sizes[i]);
            for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = scale * dist(rng);
            p.weights.push_back(std::move(w));
            p.biases.emplace_back(Vec::Zero(sizes[i + 1]));
        }
        return p;
    };
    m.query_proj = init_mlp({D_emb, hidden, hidden});
    std::normal_distribution<double> dist(0.0, 1.0);
    m.token_emb.resize(hidden, L * K);
    for (Eigen::Index i = 0; i < m.token_emb.size(); ++i) {
        m.token_emb.data()[i] = 0.1 * dist(rng);
    }
    for (int t = 0; t < L; ++t) {
        m.heads.push_back(init_mlp({2 * hidden, hidden, K}));
    }
    return m;
}

bool RetrieverModel::all_finite() const {
    if (!query_proj.all_finite() || !token_emb.allFinite()) return false;
    for (const auto& h : heads) {
        if (!h.all_finite()) return false;
    }
    return true;
}

RetrieverGrads RetrieverGrads::zeros_like(const RetrieverModel& m) {
    RetrieverGrads g;
    g.query_proj = MlpGrads::zeros_like(m.query_proj);
    g.token_emb = Mat::Zero(m.token_emb.rows(), m.token_emb.cols());
    for (const auto& h : m.heads) g.heads.push_back(MlpGrads::zeros_like(h));
    return g;
}

double seq_loss(const RetrieverModel& model, const QueryPair& pair, RetrieverGrads* grads,
                double grad_scale) {
    if (static_cast<int>(pair.targets.size()) != model.L) {
        throw DimensionError("seq_loss: target length != L");
    }
    TokenVocab vocab{model.L, model.K};
    Tape q_tape;
    Mat qs = mlp_forward(model.query_proj, pair.query, grads ? &q_tape : nullptr);

    double loss = 0.0;
    Vec grad_qs = Vec::Zero(model.hidden);
    Vec prev_sum = Vec::Zero(model.hidden);
    for (int t = 0; t < model.L; ++t) {
        Vec x(2 * model.hidden);
        x.head(model.hidden) = qs.col(0);
        x.tail(model.hidden) = (t == 0) ? Vec::Zero(model.hidden) : Vec(prev_sum / t);
        Tape h_tape;
        Mat logits = mlp_forward(model.heads[t], x, grads ? &h_tape : nullptr);
        const Vec p = softmax(logits.col(0));
        const int y = pair.targets[t];
        if (y < 0 || y >= model.K) throw ValidationError("seq_loss: target code out of range");
        loss -= std::log(std::max(p[y], 1e-300));
        if (grads) {
            Vec dlogits = p;
            dlogits[y] -= 1.0;
            dlogits *= grad_scale;
            Mat dx;
            MlpGrads hg = mlp_backward(model.heads[t], h_tape, dlogits, &dx);
            grads->heads[t].accumulate(hg);
            grad_qs += dx.col(0).head(model.hidden);
            if (t > 0) {
                const Vec dm = dx.col(0).tail(model.hidden) / t;
                for (int j = 0; j < t; ++j) {
                    grads->token_emb.col(vocab.token_id(j, pair.targets[j])) += dm;
                }
            }
        }
        prev_sum += model.token_emb.col(vocab.token_id(t, pair.targets[t]));
    }
    if (grads) {
        MlpGrads qg = mlp_backward(model.query_proj, q_tape, grad_qs);
        grads->query_proj.accumulate(qg);
    }
    return loss;
}

namespace {

std::vector<TensorRef> retriever_tensor_refs(RetrieverModel& m) {
    std::vector<TensorRef> refs = mlp_tensor_refs(m.query_proj);
    refs.emplace_back(m.token_emb);
    for (auto& h : m.heads) {
        auto hr = mlp_tensor_refs(h);
        refs.insert(refs.end(), hr.begin(), hr.end());
    }
    return refs;
}

std::vector<Eigen::ArrayXd> retriever_grad_arrays(const RetrieverGrads& g) {
    std::vector<Eigen::ArrayXd> out = mlp_grad_arrays(g.query_proj);
    out.emplace_back(Eigen::Map<const Eigen::ArrayXd>(g.token_emb.data(), g.token_emb.size()));
    for (const auto& h : g.heads) {
        auto ha = mlp_grad_arrays(h);
        out.insert(out.end(), ha.begin(), ha.end());
    }
    return out;
}

}  // namespace

RetrieverTrainResult train_retriever(const std::vector<QueryPair>& pairs, int D_emb, int L,
                                     int K, const RetrieverConfig& config,
                                     std::uint64_t seed) {
    if (pairs.empty()) throw ValidationError("train_retriever: empty pair list");
    Rng rng(seed);
    RetrieverModel model = RetrieverModel::random(D_emb, config.hidden, L, K, rng);
    OptimState optim;
    optim.cfg = config.optim;

    std::vector<int> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    RetrieverTrainResult result;
    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < pairs.size(); start += config.batch_size) {
            const std::size_t end = std::min(pairs.size(), start + config.batch_size);
            const double bsz = static_cast<double>(end - start);
            RetrieverGrads grads = RetrieverGrads::zeros_like(model);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                batch_loss += seq_loss(model, pairs[order[i]], &grads, 1.0 / bsz);
            }
            batch_loss /= bsz;
            if (!std::isfinite(batch_loss)) {
                throw NumericError("train_retriever: non-finite loss at step " +
                                   std::to_string(step));
            }
            adamw_step(retriever_tensor_refs(model), retriever_grad_arrays(grads), optim);
            ++step;
            if (step % config.log_every == 0) {
                result.loss_log.emplace_back(step, batch_loss);
            }
        }
    }
    result.model = std::move(model);
    return result;
}

std::vector<ScoredDoc> beam_search(const RetrieverModel& model, const Vec& query,
                                   int beam_width, const IdTrie& trie) {
    if (beam_width < 1) throw ConfigError("beam_search: beam_width must be >= 1");
    if (trie.nodes.size() <= 1) return {};
    TokenVocab vocab{model.L, model.K};
    Mat qs = mlp_forward(model.query_proj, query);

    struct Beam {
        int node = 0;
        double log_prob = 0.0;
        std::vector<int> tokens;
        Vec emb_sum;
    };
    std::vector<Beam> beams{{0, 0.0, {}, Vec::Zero(model.hidden)}};
    for (int t = 0; t < model.L; ++t) {
        std::vector<Beam> next;
        for (const auto& beam : beams) {
            Vec x(2 * model.hidden);
            x.head(model.hidden) = qs.col(0);
            x.tail(model.hidden) = (t == 0) ? Vec::Zero(model.hidden) : Vec(beam.emb_sum / t);
            Mat logits = mlp_forward(model.heads[t], x);
            // full-vocabulary log-softmax so scores stay comparable to seq_loss
            const double mx = logits.col(0).maxCoeff();
            const double lse = mx + std::log((logits.col(0).array() - mx).exp().sum());
            for (const auto& [token, child] : trie.nodes[beam.node].children) {
                Beam b;
                b.node = child;
                b.log_prob = beam.log_prob + (logits(vocab.code_of(token), 0) - lse);
                b.tokens = beam.tokens;
                b.tokens.push_back(token);
                b.emb_sum = beam.emb_sum + model.token_emb.col(token);
                next.push_back(std::move(b));
            }
        }
        std::sort(next.begin(), next.end(), [](const Beam& a, const Beam& b) {
            if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
            return a.tokens < b.tokens;
        });
        if (static_cast<int>(next.size()) > beam_width) next.resize(beam_width);
        beams = std::move(next);
    }

    std::vector<ScoredDoc> results;
    for (const auto& beam : beams) {
        const int doc = trie.nodes[beam.node].doc;
        if (doc < 0) continue;  // cannot happen: trie paths all have length L
        ScoredDoc sd;
        sd.doc_id = trie.doc_ids[doc];
        for (int tok : beam.tokens) sd.codes.push_back(vocab.code_of(tok));
        sd.log_prob = beam.log_prob;
        results.push_back(std::move(sd));
    }
    return results;
}

namespace {

constexpr char kRetrMagic[8] = {'C', 'A', 'T', 'R', 'E', 'T', 'R', '1'};

void write_i64(std::ofstream& out, std::int64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::int64_t read_i64(std::ifstream& in) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_mlp(std::ofstream& out, const MlpParams& p) {
    write_i64(out, static_cast<std::int64_t>(p.weights.size()));
    write_i64(out, p.input_dim());
    for (const auto& w : p.weights) write_i64(out, w.rows());
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        out.write(reinterpret_cast<const char*>(p.weights[i].data()),
                  static_cast<std::streamsize>(p.weights[i].size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(p.biases[i].data()),
                  static_cast<std::streamsize>(p.biases[i].size() * sizeof(double)));
    }
}

MlpParams read_mlp(std::ifstream& in) {
    const auto layers = read_i64(in);
    std::vector<int> sizes;
    sizes.push_back(static_cast<int>(read_i64(in)));
    for (std::int64_t i = 0; i < layers; ++i) sizes.push_back(static_cast<int>(read_i64(in)));
    MlpParams p = MlpParams::zeros(sizes);
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        in.read(reinterpret_cast<char*>(p.weights[i].data()),
                static_cast<std::streamsize>(p.weights[i].size() * sizeof(double)));
        in.read(reinterpret_cast<char*>(p.biases[i].data()),
                static_cast<std::streamsize>(p.biases[i].size() * sizeof(double)));
    }
    return p;
}

}  // namespace

void save_retriever(const RetrieverModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("save_retriever: cannot open '" + path + "'");
    out.write(kRetrMagic, sizeof(kRetrMagic));
    write_i64(out, model.D_emb);
    write_i64(out, model.hidden);
    write_i64(out, model.L);
    write_i64(out, model.K);
    write_mlp(out, model.query_proj);
    out.write(reinterpret_cast<const char*>(model.token_emb.data()),
              static_cast<std::streamsize>(model.token_emb.size() * sizeof(double)));
    for (const auto& h : model.heads) write_mlp(out, h);
}

RetrieverModel load_retriever(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("load_retriever: cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kRetrMagic, sizeof(magic)) != 0) {
        throw ParseError("load_retriever: bad magic in '" + path + "'");
    }
    RetrieverModel m;
    m.D_emb = static_cast<int>(read_i64(in));
    m.hidden = static_cast<int>(read_i64(in));
    m.L = static_cast<int>(read_i64(in));
    m.K = static_cast<int>(read_i64(in));
    m.query_proj = read_mlp(in);
    m.token_emb.resize(m.hidden, m.L * m.K);
    in.read(reinterpret_cast<char*>(m.token_emb.data()),
            static_cast<std::streamsize>(m.token_emb.size() * sizeof(double)));
    for (int t = 0; t < m.L; ++t) m.heads.push_back(read_mlp(in));
    if (!in) throw ParseError("load_retriever: truncated file '" + path + "'");
    return m;
}

std::vector<QueryPair> make_noisy_queries(const Corpus& corpus, const DocIdTable& table,
                                          int queries_per_doc, double noise_sigma,
                                          std::uint64_t seed) {
    std::unordered_map<std::string, const std::vector<int>*> codes_by_id;
    for (const auto& row : table.rows) codes_by_id[row.doc_id] = &row.codes;
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<QueryPair> pairs;
    for (const auto& doc : corpus.documents) {
        auto it = codes_by_id.find(doc.doc_id);
        if (it == codes_by_id.end()) {
            throw ValidationError("make_noisy_queries: doc '" + doc.doc_id +
                                  "' missing from table");
        }
        for (int qn = 0; qn < queries_per_doc; ++qn) {
            QueryPair pair;
            pair.query = doc.embedding;
            for (Eigen::Index i = 0; i < pair.query.size(); ++i) {
                pair.query[i] += noise_sigma * gauss(rng);
            }
            pair.targets = *it->second;
            pair.relevant_doc = doc.doc_id;
            pairs.push_back(std::move(pair));
        }
    }
    return pairs;
}

}  // namespace catid
