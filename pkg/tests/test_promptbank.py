import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lptsched.promptbank import (
    BankError,
    Cluster,
    CountingScorer,
    DimensionMismatch,
    EvalSet,
    PromptCandidate,
    PromptIndex,
    SyntheticScorer,
    bank_latency,
    build_index,
    cosine_distance,
    full_scan,
    insert,
    kmedoid,
    load_index,
    lookup,
    replace_within,
    save_index,
    score,
    synthetic_candidates,
    unit,
)


def cand(i, v):
    return PromptCandidate(i, f"p{i}", unit(v))


def random_cands(n, dim=8, seed=0, start=0):
    rng = np.random.default_rng(seed)
    return [cand(start + i, rng.standard_normal(dim)) for i in range(n)]


class ConstScorer:
    def __init__(self, table):
        self.table = table

    def loss(self, p, d_in, d_tgt):
        return self.table[(p.id, d_in)]


# -- distances ---------------------------------------------------------------


def test_cosine_distance_examples():
    u = unit([1.0, 2.0, 3.0])
    assert cosine_distance(u, u) == 0.0
    assert cosine_distance(u, -u) == 2.0
    assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == 1.0


def test_cosine_distance_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        cosine_distance([1.0, 0.0], [1.0, 0.0, 0.0])


def test_candidate_must_be_unit():
    with pytest.raises(BankError):
        PromptCandidate(0, "x", np.array([1.0, 1.0]))
    p = cand(0, [3.0, 4.0])
    with pytest.raises(ValueError):
        p.features[0] = 0.0


# -- k-medoid ----------------------------------------------------------------


def _cost(D, medoids):
    return D[:, medoids].min(axis=1).sum()


def brute_force_best(X, K):
    D = np.clip(1.0 - X @ X.T, 0, 2)
    return min(_cost(D, list(m)) for m in itertools.combinations(range(len(X)), K))


def test_kmedoid_antipodal_pairs_match_brute_force():
    eps = 0.05
    X = np.array([unit([1, eps]), unit([1, -eps]), unit([-1, eps]), unit([-1, -eps])])
    cs = [cand(i, x) for i, x in enumerate(X)]
    res = kmedoid(cs, 2, seed=3)
    # each tight pair forms one cluster
    assert res.labels[0] == res.labels[1] != res.labels[2] == res.labels[3]
    assert res.cost == pytest.approx(brute_force_best(X, 2), abs=1e-12)


def test_kmedoid_k_equals_n():
    cs = random_cands(7)
    res = kmedoid(cs, 7)
    assert sorted(res.medoids) == list(range(7))
    assert res.cost == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_kmedoid_k1_brute_force(seed):
    cs = random_cands(15, seed=seed)
    X = np.stack([c.features for c in cs])
    D = np.clip(1.0 - X @ X.T, 0, 2)
    want = int(np.argmin(D.sum(axis=1)))
    res = kmedoid(cs, 1, seed=seed)
    assert res.medoids == [want]


@pytest.mark.parametrize("seed", range(6))
def test_kmedoid_small_near_brute_force(seed):
    # alternating updates find a local optimum; on well-separated blobs it is global
    bank = synthetic_candidates(12, dim=6, topics=3, seed=seed, spread=0.05)
    X = np.stack([c.features for c in bank.candidates])
    res = kmedoid(bank.candidates, 3, seed=seed)
    assert res.cost == pytest.approx(brute_force_best(X, 3), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 40), k=st.integers(1, 8), seed=st.integers(0, 1000))
def test_kmedoid_properties(n, k, seed):
    k = min(k, n)
    cs = random_cands(n, dim=5, seed=seed)
    res = kmedoid(cs, k, seed=seed)
    assert all(b <= a + 1e-12 for a, b in zip(res.cost_history, res.cost_history[1:]))
    assert len(set(res.medoids)) == k
    for c, m in enumerate(res.medoids):
        assert res.labels[m] == c
    # every point sits with its nearest medoid
    X = np.stack([c.features for c in cs])
    D = np.clip(1.0 - X @ X[res.medoids].T, 0, 2)
    assert np.allclose(D[np.arange(n), res.labels], D.min(axis=1))


def test_kmedoid_bad_k():
    with pytest.raises(BankError):
        kmedoid(random_cands(3), 4)
    with pytest.raises(BankError):
        kmedoid(random_cands(3), 0)


@pytest.mark.parametrize("metric", ["euclidean", "manhattan"])
def test_kmedoid_other_metrics(metric):
    res = kmedoid(random_cands(30), 4, metric=metric)
    assert len(res.medoids) == 4


def test_kmedoid_deterministic():
    cs = random_cands(100, seed=4)
    a, b = kmedoid(cs, 10, seed=1), kmedoid(cs, 10, seed=1)
    assert a.medoids == b.medoids and np.array_equal(a.labels, b.labels)


# -- scoring -----------------------------------------------------------------


def test_score_mean_of_losses():
    p = cand(0, [1.0, 0.0])
    ev = EvalSet(((0, "a"), (1, "b")))
    assert score(p, ev, ConstScorer({(0, 0): 0.0, (0, 1): 0.0})) == 0.0
    assert score(p, ev, ConstScorer({(0, 0): 1.0, (0, 1): 3.0})) == 2.0


def test_noiseless_synthetic_scorer():
    task = unit([1.0, 0.0])
    p = cand(0, [0.75, np.sqrt(1 - 0.75**2)])
    s = SyntheticScorer(task, sigma=0.0)
    for n in (1, 5, 16):
        assert score(p, EvalSet.synthetic(n), s) == pytest.approx(0.25)


def test_empty_eval_set_rejected():
    with pytest.raises(BankError):
        EvalSet(())


def test_counting_scorer_counts_prompt_evaluations():
    s = CountingScorer(SyntheticScorer(unit([1.0, 0.0]), sigma=0.1))
    ev = EvalSet.synthetic(4)
    score(cand(0, [1.0, 0.0]), ev, s)
    score(cand(1, [0.0, 1.0]), ev, s)
    assert s.evaluations == 2 and s.loss_calls == 8


# -- index -------------------------------------------------------------------


def equal_cluster_index(K, per, dim=16, seed=0, capacity=None):
    """K well-separated groups of ``per`` candidates each, clustered by kmedoid."""
    rng = np.random.default_rng(seed)
    centers = np.linalg.qr(rng.standard_normal((dim, dim)))[0][:, :K].T if K <= dim else None
    if centers is None:
        centers = rng.standard_normal((K, dim))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    cs = []
    for k in range(K):
        for j in range(per):
            cs.append(cand(k * per + j, centers[k] + 0.01 * rng.standard_normal(dim)))
    return build_index(cs, K, capacity=capacity or len(cs), seed=seed)


def test_lookup_eval_count_is_k_plus_cluster():
    index = equal_cluster_index(4, 5)
    assert sorted(len(c) for c in index.clusters) == [5] * 4
    s = CountingScorer(SyntheticScorer(np.ones(16), sigma=0.05))
    res = lookup(index, EvalSet.synthetic(8), s)
    assert res.evals_performed == s.evaluations == 4 + 5
    assert full_scan(index.candidates(), EvalSet.synthetic(8), CountingScorer(s.inner)).evals_performed == 20


@pytest.mark.parametrize("seed", range(5))
def test_lookup_k1_equals_full_scan(seed):
    cs = random_cands(40, seed=seed)
    index = build_index(cs, 1)
    s = SyntheticScorer(np.random.default_rng(seed).standard_normal(8), sigma=0.3, seed=seed)
    ev = EvalSet.synthetic(16)
    a, b = lookup(index, ev, s), full_scan(cs, ev, s)
    assert a.best.id == b.best.id and a.score == b.score


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 10), seed=st.integers(0, 500))
def test_noiseless_lookup_best_in_matched_cluster(k, seed):
    cs = random_cands(50, seed=seed)
    index = build_index(cs, k, seed=seed)
    s = SyntheticScorer(np.random.default_rng(seed + 1).standard_normal(8), sigma=0.0)
    res = lookup(index, EvalSet.synthetic(4), s)
    best_q = max(s.quality(m) for m in index.clusters[res.cluster].members)
    assert s.quality(res.best) >= best_q - 1e-12


def test_lookup_ties_break_to_lowest_id():
    v = unit([1.0, 0.0])
    a, b = PromptCandidate(5, "a", v), PromptCandidate(2, "b", v)
    index = PromptIndex([Cluster(a, [a, b])])
    res = lookup(index, EvalSet.synthetic(2), SyntheticScorer(v, sigma=0.0))
    assert res.best.id == 2


def test_insert_joins_nearest_medoid():
    index = equal_cluster_index(3, 4, capacity=20)
    target = index.clusters[1]
    dup = PromptCandidate(999, "dup", target.medoid.features.copy())
    assert insert(index, dup) is None
    assert dup in target.members


def test_insert_single_cluster():
    index = build_index(random_cands(5), 1, capacity=10)
    for p in random_cands(3, start=100, seed=9):
        insert(index, p)
    assert len(index.clusters[0]) == 8


def test_insert_at_capacity_keeps_size():
    index = equal_cluster_index(3, 4, capacity=12)
    evicted = insert(index, cand(500, np.ones(16)))
    assert evicted is not None and len(index) == 12
    index.check()


def test_insert_dimension_mismatch():
    index = equal_cluster_index(2, 2)
    with pytest.raises(DimensionMismatch):
        insert(index, cand(7, [1.0, 0.0]))


def _cluster_at(dists):
    """Cluster whose members sit at the given cosine distances from the medoid."""
    med = cand(0, [1.0, 0.0])
    members = [med]
    for i, d in enumerate(dists, start=1):
        c = 1.0 - d
        members.append(cand(i, [c, np.sqrt(1 - c * c)]))
    return Cluster(med, members)


def test_replace_within_removes_nearest_non_medoid():
    c = _cluster_at([0.1, 0.5])
    assert replace_within(c).id == 1
    assert [m.id for m in c.members] == [0, 2]


def test_replace_within_sole_non_medoid():
    c = _cluster_at([0.7])
    assert replace_within(c).id == 1


def test_replace_within_never_removes_medoid():
    c = _cluster_at([0.4])
    dup = PromptCandidate(9, "dup", c.medoid.features.copy())
    c.members.append(dup)
    assert replace_within(c) is dup
    assert c.medoid in c.members


def test_replace_within_too_small():
    c = _cluster_at([])
    with pytest.raises(BankError, match="cluster-too-small"):
        replace_within(c)


def test_bank_latency_examples():
    index = equal_cluster_index(50, 50, dim=64)
    assert bank_latency(index, 0.053) == pytest.approx(5.3)
    one = build_index(random_cands(100), 1)
    assert bank_latency(one, 1.0) == 101.0
    with pytest.raises(BankError):
        bank_latency(one, 0.0)


def test_snapshot_round_trip(tmp_path):
    bank = synthetic_candidates(120, dim=12, topics=6, seed=2)
    index = build_index(bank.candidates, 6, capacity=200, seed=2)
    path = tmp_path / "bank.jsonl"
    save_index(index, path)
    back = load_index(path)
    assert back.K == index.K and back.capacity == 200 and len(back) == 120
    for a, b in zip(index.clusters, back.clusters):
        assert a.medoid.id == b.medoid.id
        assert [m.id for m in a.members] == [m.id for m in b.members]
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a.members, b.members))
    save_index(back, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


@pytest.mark.parametrize(
    "text",
    [
        "",
        '{"K": 1}\n',
        '{"K": 1, "capacity": 5, "D": 2, "seed": 0}\n{"id": 0, "text": "a", "cluster": 0, "medoid": false, "features": ["0x1.0p+0", "0x0.0p+0"]}\n',
        '{"K": 1, "capacity": 5, "D": 3, "seed": 0}\n{"id": 0, "text": "a", "cluster": 0, "medoid": true, "features": ["0x1.0p+0", "0x0.0p+0"]}\n',
    ],
)
def test_snapshot_malformed(tmp_path, text):
    p = tmp_path / "bad.jsonl"
    p.write_text(text)
    with pytest.raises(BankError):
        load_index(p)


def test_synthetic_candidates_deterministic():
    a = synthetic_candidates(30, seed=5)
    b = synthetic_candidates(30, seed=5)
    assert all(np.array_equal(x.features, y.features) for x, y in zip(a.candidates, b.candidates))
