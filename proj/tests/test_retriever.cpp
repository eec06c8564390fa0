#include <doctest.h>

#include <algorithm>
#include <cstdio>

#include "catid/retriever.hpp"

using namespace catid;

namespace {

DocIdTable demo_table() {
    DocIdTable t;
    t.L = 2;
    t.K = 3;
    t.rows = {{"a", {0, 0}, false},
              {"b", {0, 2}, false},
              {"c", {1, 1}, false},
              {"d", {2, 0}, false}};
    return t;
}

// every length-L path through the model, scored the same way seq_loss does
std::vector<ScoredDoc> exhaustive_rank(const RetrieverModel& model, const Vec& query,
                                       const DocIdTable& table) {
    std::vector<ScoredDoc> out;
    for (const auto& row : table.rows) {
        QueryPair pair;
        pair.query = query;
        pair.targets = row.codes;
        pair.relevant_doc = row.doc_id;
        ScoredDoc sd;
        sd.doc_id = row.doc_id;
        sd.codes = row.codes;
        sd.log_prob = -seq_loss(model, pair);
        out.push_back(sd);
    }
    std::sort(out.begin(), out.end(), [](const ScoredDoc& x, const ScoredDoc& y) {
        if (x.log_prob != y.log_prob) return x.log_prob > y.log_prob;
        return x.codes < y.codes;
    });
    return out;
}

}  // namespace

TEST_CASE("token vocab renders and parses level-tagged tokens") {
    TokenVocab v{2, 3};
    CHECK(v.size() == 6);
    CHECK(v.token_id(1, 2) == 5);
    CHECK(v.level_of(5) == 1);
    CHECK(v.code_of(5) == 2);
    CHECK(v.render(0) == "<a_0>");
    CHECK(v.render(5) == "<b_2>");
    CHECK(v.parse("<b_2>") == 5);
    CHECK(v.parse(v.render(4)) == 4);
    CHECK_THROWS_AS(v.parse("<z_0>"), ParseError);
    CHECK_THROWS_AS(v.parse("garbage"), ParseError);
}

TEST_CASE("trie contains exactly the table sequences") {
    DocIdTable t = demo_table();
    IdTrie trie = build_trie(t);
    TokenVocab v{t.L, t.K};
    for (const auto& row : t.rows) CHECK(trie.contains(row.codes, v));
    CHECK_FALSE(trie.contains({0, 1}, v));
    CHECK_FALSE(trie.contains({2, 2}, v));
    CHECK(trie.doc_ids.size() == 4);
}

TEST_CASE("trie rejects colliding tables") {
    DocIdTable t = demo_table();
    t.rows[1].codes = t.rows[0].codes;
    CHECK_THROWS_AS(build_trie(t), ValidationError);
}

TEST_CASE("seq_loss gradients match central differences") {
    Rng rng(4);
    RetrieverModel m = RetrieverModel::random(3, 5, 2, 3, rng);
    QueryPair pair;
    pair.query = Vec(3);
    pair.query << 0.3, -1.1, 0.5;
    pair.targets = {1, 2};

    RetrieverGrads g = RetrieverGrads::zeros_like(m);
    seq_loss(m, pair, &g);
    const double h = 1e-6;
    auto fd_check = [&](double& param, double analytic) {
        const double orig = param;
        param = orig + h;
        const double up = seq_loss(m, pair);
        param = orig - h;
        const double dn = seq_loss(m, pair);
        param = orig;
        CHECK(analytic == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4));
    };
    for (std::size_t l = 0; l < m.query_proj.weights.size(); ++l) {
        for (Eigen::Index i = 0; i < m.query_proj.weights[l].size(); i += 3) {
            fd_check(m.query_proj.weights[l].data()[i], g.query_proj.dW[l].data()[i]);
        }
    }
    for (Eigen::Index i = 0; i < m.token_emb.size(); i += 5) {
        fd_check(m.token_emb.data()[i], g.token_emb.data()[i]);
    }
    for (std::size_t t = 0; t < m.heads.size(); ++t) {
        for (Eigen::Index i = 0; i < m.heads[t].weights[0].size(); i += 7) {
            fd_check(m.heads[t].weights[0].data()[i], g.heads[t].dW[0].data()[i]);
        }
    }
}

TEST_CASE("beam score equals the negative sequence loss") {
    Rng rng(8);
    RetrieverModel m = RetrieverModel::random(3, 6, 2, 3, rng);
    DocIdTable t = demo_table();
    IdTrie trie = build_trie(t);
    Vec q(3);
    q << 1.0, 0.2, -0.4;
    auto ranked = beam_search(m, q, 4, trie);
    REQUIRE(!ranked.empty());
    for (const auto& sd : ranked) {
        QueryPair pair;
        pair.query = q;
        pair.targets = sd.codes;
        CHECK(sd.log_prob == doctest::Approx(-seq_loss(m, pair)).epsilon(1e-10));
    }
}

TEST_CASE("full-width beam matches exhaustive enumeration") {
    DocIdTable t = demo_table();
    IdTrie trie = build_trie(t);
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
        Rng rng(seed);
        RetrieverModel m = RetrieverModel::random(3, 6, 2, 3, rng);
        std::normal_distribution<double> dist(0.0, 1.0);
        Vec q(3);
        for (int i = 0; i < 3; ++i) q[i] = dist(rng);
        auto beam = beam_search(m, q, static_cast<int>(t.rows.size()), trie);
        auto brute = exhaustive_rank(m, q, t);
        REQUIRE(beam.size() == brute.size());
        for (std::size_t i = 0; i < beam.size(); ++i) {
            CHECK(beam[i].doc_id == brute[i].doc_id);
            CHECK(beam[i].log_prob == doctest::Approx(brute[i].log_prob).epsilon(1e-10));
        }
    }
}

TEST_CASE("beam results are sorted and sound") {
    Rng rng(9);
    RetrieverModel m = RetrieverModel::random(3, 6, 2, 3, rng);
    DocIdTable t = demo_table();
    IdTrie trie = build_trie(t);
    TokenVocab v{t.L, t.K};
    Vec q = Vec::Ones(3);
    auto ranked = beam_search(m, q, 2, trie);
    CHECK(ranked.size() == 2);
    CHECK(ranked[0].log_prob >= ranked[1].log_prob);
    for (const auto& sd : ranked) CHECK(trie.contains(sd.codes, v));
}

TEST_CASE("retriever memorizes a small table") {
    SyntheticSpec spec;
    spec.branching = {2, 2};
    spec.docs_per_leaf = 3;
    spec.D_emb = 8;
    spec.seed = 12;
    Corpus c = generate_synthetic_corpus(spec);
    // give every doc a distinct id sequence by hand
    DocIdTable t;
    t.L = 3;
    t.K = 4;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const int n = static_cast<int>(i);
        t.rows.push_back({c.documents[i].doc_id,
                          {n / 16 % 4, n / 4 % 4, n % 4},
                          false});
    }
    IdTrie trie = build_trie(t);
    auto pairs = make_noisy_queries(c, t, 2, 0.01, 3);
    CHECK(pairs.size() == 2 * c.size());
    RetrieverConfig rc;
    rc.hidden = 48;
    rc.epochs = 400;
    rc.batch_size = 8;
    RetrieverTrainResult r = train_retriever(pairs, c.D_emb, t.L, t.K, rc, 5);
    REQUIRE(!r.loss_log.empty());
    CHECK(r.loss_log.back().second < r.loss_log.front().second);
    int hits = 0;
    for (const auto& pair : pairs) {
        auto ranked = beam_search(r.model, pair.query, 3, trie);
        if (!ranked.empty() && ranked.front().doc_id == pair.relevant_doc) ++hits;
    }
    CHECK(hits >= static_cast<int>(0.8 * pairs.size()));
}

TEST_CASE("retriever checkpoint round trip") {
    Rng rng(19);
    RetrieverModel m = RetrieverModel::random(4, 6, 2, 3, rng);
    save_retriever(m, "test_retr.bin");
    RetrieverModel loaded = load_retriever("test_retr.bin");
    CHECK(loaded.D_emb == 4);
    CHECK(loaded.token_emb == m.token_emb);
    QueryPair pair;
    pair.query = Vec::Ones(4);
    pair.targets = {2, 1};
    CHECK(seq_loss(loaded, pair) == seq_loss(m, pair));
    std::remove("test_retr.bin");
}

TEST_CASE("empty training set is rejected") {
    RetrieverConfig rc;
    CHECK_THROWS_AS(train_retriever({}, 4, 2, 3, rc, 0), ValidationError);
}
