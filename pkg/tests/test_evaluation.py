import json

import numpy as np
import pytest

from mbanet import reference
from mbanet.data import AugmentationConfig, RetrievalSplit, make_split, make_synthetic_dataset, scan_dataset
from mbanet.errors import EmbeddingError
from mbanet.evaluation import (
    EmbeddingSet,
    EvalReport,
    aggregate,
    cmc,
    cosine_distances,
    cosine_rank,
    evaluate,
    evaluate_repetitions,
    mean_ap,
    rank1,
)
from mbanet.network import Network, NetworkConfig


def random_problem(rng, single_relevant):
    """Random labels and a random ranking; every query label occurs in the gallery."""
    n_g = int(rng.integers(3, 15))
    n_q = int(rng.integers(1, 8))
    if single_relevant:
        g_labels = rng.permutation(n_g)
        q_labels = rng.choice(g_labels, n_q)
    else:
        g_labels = rng.integers(0, 4, n_g)
        q_labels = rng.choice(g_labels, n_q)
    ranking = np.stack([rng.permutation(n_g) for _ in range(n_q)])
    return ranking, q_labels, g_labels


def oracle_metrics(ranking, q_labels, g_labels):
    ranked = [[g_labels[i] for i in row] for row in ranking]
    aps = [reference.average_precision(r, ql) for r, ql in zip(ranked, q_labels)]
    return reference.rank1(ranked, q_labels), sum(aps) / len(aps)


@pytest.mark.parametrize("single", [True, False])
def test_metrics_match_brute_force(single):
    rng = np.random.default_rng(10 + single)
    for _ in range(50):
        problem = random_problem(rng, single)
        r1, m = oracle_metrics(*problem)
        assert rank1(*problem) == r1
        assert mean_ap(*problem) == m
        if single:
            assert rank1(*problem) <= mean_ap(*problem)


def test_ap_is_reciprocal_rank():
    g_labels = np.array([5, 6, 7, 1, 8])
    assert mean_ap(np.array([[0, 1, 2, 3, 4]]), [1], g_labels) == 0.25


def test_rank1_counting():
    g = np.array([0, 1, 2, 3])
    ranking = np.array([[0, 1, 2, 3], [0, 1, 2, 3], [1, 0, 2, 3], [3, 2, 1, 0]])
    assert rank1(ranking, [0, 1, 1, 2], g) == 0.5
    assert rank1(ranking, [0, 0, 1, 3], g) == 1.0
    assert rank1(ranking, [1, 2, 3, 0], g) == 0.0


def test_multi_relevant_hand_case():
    # relevant at ranks 1, 3 -> (1/1 + 2/3) / 2
    assert mean_ap(np.array([[0, 1, 2]]), [4], np.array([4, 9, 4])) == pytest.approx((1 + 2 / 3) / 2)


def test_absent_query_label():
    with pytest.raises(EmbeddingError, match="no match"):
        mean_ap(np.array([[0, 1]]), [3], np.array([1, 2]))


def test_cosine_rank_matches_oracle():
    rng = np.random.default_rng(12)
    for _ in range(20):
        q, g = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        assert cosine_rank(q, g).tolist() == reference.cosine_ranking(q, g)


def test_identical_vector_ranked_first_and_scale_invariance():
    rng = np.random.default_rng(13)
    g = rng.normal(size=(6, 4))
    q = g[[3]].copy()
    assert cosine_rank(q, g)[0, 0] == 3
    assert cosine_distances(q, g)[0, 3] == pytest.approx(0.0, abs=1e-15)
    scales = rng.uniform(0.1, 10, size=(6, 1))
    assert np.array_equal(cosine_rank(q * 7.0, g * scales), cosine_rank(q, g))


def test_ties_broken_by_gallery_index():
    g = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [3.0, 0.0]])
    assert cosine_rank(np.array([[1.0, 0.0]]), g).tolist() == [[0, 1, 3, 2]]


def test_zero_norm_rejected():
    with pytest.raises(EmbeddingError, match="zero norm"):
        cosine_rank(np.ones((1, 2)), np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(EmbeddingError):
        cosine_rank(np.ones((1, 2)), np.ones((2, 3)))


def test_relabeling_and_rescaling_invariance():
    rng = np.random.default_rng(14)
    g, q = rng.normal(size=(8, 5)), rng.normal(size=(5, 5))
    g_labels, q_labels = np.arange(8), rng.integers(0, 8, 5)
    bijection = rng.permutation(100)[:8]
    ranking = cosine_rank(q, g)
    base = (rank1(ranking, q_labels, g_labels), mean_ap(ranking, q_labels, g_labels))
    ranking2 = cosine_rank(q * 3.0, g * 0.5)
    relabeled = (rank1(ranking2, bijection[q_labels], bijection[g_labels]),
                 mean_ap(ranking2, bijection[q_labels], bijection[g_labels]))
    assert base == relabeled


def test_distractors_never_help():
    rng = np.random.default_rng(15)
    for _ in range(30):
        g, q = rng.normal(size=(6, 4)), rng.normal(size=(4, 4))
        g_labels, q_labels = np.arange(6), rng.integers(0, 6, 4)
        ranking = cosine_rank(q, g)
        r1, m = rank1(ranking, q_labels, g_labels), mean_ap(ranking, q_labels, g_labels)
        g2 = np.concatenate([g, rng.normal(size=(5, 4))])
        l2 = np.concatenate([g_labels, np.full(5, -1)])
        ranking2 = cosine_rank(q, g2)
        assert rank1(ranking2, q_labels, l2) <= r1
        assert mean_ap(ranking2, q_labels, l2) <= m


def test_cmc_monotone_and_rank1_agrees():
    rng = np.random.default_rng(16)
    problem = random_problem(rng, True)
    curve = cmc(*problem, k=10)
    assert curve[0] == rank1(*problem)
    assert np.all(np.diff(curve) >= 0) and curve[-1] <= 1.0


def test_embedding_set_validation():
    with pytest.raises(EmbeddingError):
        EmbeddingSet(np.zeros((3, 2)), [0, 1])
    with pytest.raises(EmbeddingError):
        EmbeddingSet(np.zeros((1, 2)), [0], role="probe")


def test_report_aggregate_and_files(tmp_path):
    reports = [EvalReport([1.0], [1.0], [np.ones(3)]), EvalReport([0.5], [0.75], [np.array([0.5, 1, 1])])]
    agg = aggregate(reports)
    assert agg.mean == {"rank1": 0.75, "mAP": 0.875}
    assert agg.std["rank1"] == pytest.approx(0.25)
    agg.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "repetition,rank1,mAP" and lines[3].startswith("mean,") and len(lines) == 5
    agg.to_json(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["cmc"] == [0.75, 1.0, 1.0]


# ------------------------------------------------------------ with a network
@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = make_synthetic_dataset(tmp_path_factory.mktemp("ev") / "ds", num_identities=6,
                                  images_per_identity=3, size=36, seed=2)
    net = Network(NetworkConfig(num_identities=3))
    return scan_dataset(root), net, AugmentationConfig(resize=36, crop=32)


def test_self_retrieval_degenerate(toy):
    ds, net, aug = toy
    records = ds.records[::3]
    split = RetrievalSplit(gallery=records, query=records, test_identities=[r.identity for r in records])
    assert evaluate(net, split, aug).rank1 == [1.0]


def test_evaluate_deterministic_and_cache(toy):
    ds, net, aug = toy
    split = make_split(ds, seed=0, repetition=1)
    a, b = evaluate(net, split, aug), evaluate(net, split, aug)
    assert a.rank1 == b.rank1 and a.mAP == b.mAP
    rep = evaluate_repetitions(net, ds, aug, repetitions=3)
    assert len(rep.rank1) == 3 and all(0 <= v <= 1 for v in rep.rank1 + rep.mAP)
    assert rep.rank1[1] == a.rank1[0]


def test_empty_split_rejected(toy):
    _, net, aug = toy
    with pytest.raises(EmbeddingError):
        evaluate(net, RetrievalSplit(), aug)
