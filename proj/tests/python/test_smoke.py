import math

import numpy as np
import pytest

import catid


@pytest.fixture(scope="module")
def corpus():
    spec = catid.SyntheticSpec()
    spec.branching = [3, 2]
    spec.docs_per_leaf = 4
    spec.D_emb = 12
    spec.seed = 7
    return catid.generate_synthetic_corpus(spec)


@pytest.fixture(scope="module")
def trained(corpus):
    cfg = catid.TrainConfig()
    cfg.L = 3
    cfg.K = 6
    cfg.D_z = 6
    cfg.epochs = 6
    cfg.batch_size = 12
    cfg.seed = 1
    return catid.train_tokenizer(corpus, cfg)


def test_corpus_shape(corpus):
    assert len(corpus) == 24
    assert corpus.H == 2
    doc = corpus.documents[0]
    emb = np.asarray(doc.embedding)
    assert emb.shape == (12,)
    assert math.isclose(np.linalg.norm(emb), 1.0, rel_tol=1e-9)
    assert len(doc.category.labels) == 2


def test_depth_guard(corpus):
    with pytest.raises(catid.DepthError):
        catid.validate_category_depth(corpus, 2)


def test_training_and_quantization(corpus, trained):
    assert trained.stack.L == 3
    assert len(trained.log) > 0
    assert trained.log[-1].total < trained.log[0].total
    trace = catid.quantize(trained.stack, corpus.documents[0].embedding)
    assert len(trace.codes) == 3
    assert all(0 <= c < 6 for c in trace.codes)


def test_assignment_and_resolution(corpus, trained):
    raw = catid.assign_ids(trained.stack, corpus)
    table = catid.resolve_collisions(raw, trained.stack, corpus)
    assert table.collision_free()
    assert len(table.rows) == len(corpus)
    purity = catid.category_purity(table, corpus, 0)
    assert 0.0 <= purity <= 1.0
    entropy, perplexity, used = catid.codebook_utilization(table, 0)
    assert perplexity <= 6.0 + 1e-9
    assert used >= 1


def test_sinkhorn_marginals():
    rng = np.random.default_rng(3)
    cost = rng.uniform(size=(6, 6))
    ones = np.ones(6)
    plan, residuals, iters = catid.sinkhorn(cost, ones, ones)
    assert np.abs(plan.sum(axis=0) - 1.0).max() < 1e-6
    assert np.abs(plan.sum(axis=1) - 1.0).max() < 1e-6
    assert iters >= 1


def test_end_to_end_retrieval(corpus, trained):
    raw = catid.assign_ids(trained.stack, corpus)
    table = catid.resolve_collisions(raw, trained.stack, corpus)
    trie = catid.build_trie(table)
    pairs = catid.make_noisy_queries(corpus, table, 1, 0.01, 5)
    rc = catid.RetrieverConfig()
    rc.hidden = 48
    rc.epochs = 300
    rc.batch_size = 8
    result = catid.train_retriever(pairs, corpus.D_emb, table.L, table.K, rc, 9)
    hits = 0
    for pair in pairs:
        ranked = catid.beam_search(result.model, pair.query, 5, trie)
        assert len(ranked) <= 5
        if ranked and ranked[0].doc_id == pair.relevant_doc:
            hits += 1
    assert hits / len(pairs) > 0.5


def test_grad_check():
    cfg = catid.TrainConfig()
    report = catid.grad_check(cfg, 2)
    assert report.max_rel_err <= 1e-4


def test_recall():
    assert catid.recall_at_k(["a", "b"], {"a"}, 1) == 1.0
    assert catid.recall_at_k(["a", "b"], {"c"}, 2) == 0.0
    with pytest.raises(catid.ConfigError):
        catid.recall_at_k(["a"], {"a"}, 0)
