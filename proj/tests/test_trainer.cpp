#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "catid/trainer.hpp"

using namespace catid;

namespace {

Corpus small_corpus(std::uint64_t seed = 3) {
    SyntheticSpec spec;
    spec.branching = {3, 2};
    spec.docs_per_leaf = 6;
    spec.D_emb = 12;
    spec.seed = seed;
    return generate_synthetic_corpus(spec);
}

TrainConfig small_config() {
    TrainConfig tc;
    tc.L = 3;
    tc.K = 6;
    tc.D_z = 6;
    tc.epochs = 8;
    tc.batch_size = 12;
    tc.seed = 1;
    tc.log_every = 3;
    return tc;
}

}  // namespace

TEST_CASE("config validation rejects bad shapes before training") {
    Corpus c = small_corpus();
    TrainConfig tc = small_config();
    TrainConfig bad = tc;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(c), ConfigError);
    bad = tc;
    bad.batch_size = 1;
    CHECK_THROWS_AS(bad.validate(c), ConfigError);
    bad = tc;
    bad.batch_size = 10000;
    CHECK_THROWS_AS(bad.validate(c), ConfigError);
    bad = tc;
    bad.K = 1;
    CHECK_THROWS_AS(bad.validate(c), ConfigError);
    bad = tc;
    bad.L = 2;  // H == L
    CHECK_THROWS_AS(bad.validate(c), DepthError);
    CHECK_NOTHROW(tc.validate(c));
}

TEST_CASE("init_stack warm-up uses every requested shape") {
    Corpus c = small_corpus();
    TrainConfig tc = small_config();
    QuantizerStack s = init_stack(c, tc);
    CHECK(s.L == 3);
    CHECK(s.K == 6);
    CHECK(s.D_z == 6);
    CHECK(s.D_emb() == 12);
    CHECK(static_cast<int>(s.codebooks.size()) == 3);
    CHECK(s.all_finite());
}

TEST_CASE("training runs, logs, and reduces the objective") {
    Corpus c = small_corpus();
    TrainConfig tc = small_config();
    TrainResult r = train_tokenizer(c, tc);
    REQUIRE(!r.log.rows.empty());
    CHECK(r.stack.all_finite());
    // steps are strictly increasing
    for (std::size_t i = 1; i < r.log.rows.size(); ++i) {
        CHECK(r.log.rows[i].step > r.log.rows[i - 1].step);
    }
    CHECK(r.log.rows.back().total < r.log.rows.front().total);
    for (const auto& row : r.log.rows) {
        CHECK(row.perplexity.size() == 3);
        for (double p : row.perplexity) CHECK(p <= 6.0 + 1e-9);
    }
}

TEST_CASE("training is deterministic per seed") {
    Corpus c = small_corpus();
    TrainConfig tc = small_config();
    tc.epochs = 3;
    TrainResult a = train_tokenizer(c, tc);
    TrainResult b = train_tokenizer(c, tc);
    for (int l = 0; l < tc.L; ++l) {
        CHECK(a.stack.codebooks[l].entries == b.stack.codebooks[l].entries);
    }
    for (std::size_t i = 0; i < a.stack.encoder.weights.size(); ++i) {
        CHECK(a.stack.encoder.weights[i] == b.stack.encoder.weights[i]);
    }
    tc.seed = 2;
    TrainResult other = train_tokenizer(c, tc);
    CHECK(a.stack.codebooks[0].entries != other.stack.codebooks[0].entries);
}

TEST_CASE("baseline mode trains on reconstruction and rq only") {
    Corpus c = small_corpus();
    TrainConfig tc = small_config();
    tc.epochs = 2;
    tc.baseline_mode = true;
    TrainResult r = train_tokenizer(c, tc);
    for (const auto& row : r.log.rows) {
        CHECK(row.recon > 0.0);
        CHECK(row.dispersion == 0.0);
        CHECK(row.hcc == 0.0);
        CHECK(row.csc == 0.0);
    }
}

TEST_CASE("metrics csv has one row per logged step and a stable header") {
    Corpus c = small_corpus();
    TrainConfig tc = small_config();
    tc.epochs = 2;
    TrainResult r = train_tokenizer(c, tc);
    r.log.save_csv("test_metrics.csv");
    std::ifstream in("test_metrics.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,rq,recon,dispersion,hcc,csc,total,ppl_0,ppl_1,ppl_2,collisions");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == r.log.rows.size());
    std::remove("test_metrics.csv");
}

TEST_CASE("grad check stays within tolerance on the desk config") {
    TrainConfig tc;
    GradCheckReport rep = grad_check(tc, 12);
    CHECK(rep.max_rel_err <= 1e-4);
    REQUIRE(rep.groups.size() == 3);
    CHECK(rep.groups[0].name == "encoder");
}
