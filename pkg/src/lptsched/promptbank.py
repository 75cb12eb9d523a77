"""Two-layer clustered index of candidate initial prompts.

Layer one holds one representative (the medoid) per cluster, layer two the
members.  Lookup scores every representative, then every member of the
winning cluster; insertion routes by cosine distance alone and never scores.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .core import LptError

UNIT_TOL = 1e-6


class BankError(LptError, ValueError):
    pass


class DimensionMismatch(BankError):
    pass


@dataclass(frozen=True, eq=False)
class PromptCandidate:
    id: int
    text: str
    features: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 1 or f.size == 0:
            raise BankError(f"prompt {self.id}: features must be a nonempty vector")
        if abs(np.linalg.norm(f) - 1.0) > UNIT_TOL:
            raise BankError(f"prompt {self.id}: features are not unit-normalised")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)

    @property
    def dim(self) -> int:
        return self.features.shape[0]


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def cosine_distance(u, v) -> float:
    u = np.asarray(u.features if isinstance(u, PromptCandidate) else u)
    v = np.asarray(v.features if isinstance(v, PromptCandidate) else v)
    if u.shape != v.shape:
        raise DimensionMismatch(f"{u.shape} vs {v.shape}")
    # clip guards against 1 - <u,u> landing a hair below zero
    return float(min(2.0, max(0.0, 1.0 - float(u @ v))))


def pairwise_distances(X: np.ndarray, Y: np.ndarray | None = None, metric: str = "cosine") -> np.ndarray:
    Y = X if Y is None else Y
    if metric == "cosine":
        return np.clip(1.0 - X @ Y.T, 0.0, 2.0)
    if metric in ("euclidean", "cityblock", "manhattan"):
        return cdist(X, Y, "cityblock" if metric == "manhattan" else metric)
    raise BankError(f"unknown metric {metric!r}")


# ---------------------------------------------------------------------------
# K-medoid clustering


@dataclass
class KMedoidResult:
    medoids: list[int]  # indices into the input list, one per cluster
    labels: np.ndarray  # cluster position for every input
    cost_history: list[float]
    iterations: int

    @property
    def cost(self) -> float:
        return self.cost_history[-1]


def _assign(D: np.ndarray, medoids: list[int]) -> tuple[np.ndarray, float]:
    sub = D[:, medoids]
    labels = np.argmin(sub, axis=1)  # first minimum == lowest medoid position
    labels[medoids] = np.arange(len(medoids))
    cost = float(sub[np.arange(D.shape[0]), labels].sum())
    return labels, cost


def _build_seeds(D: np.ndarray, K: int, rng: np.random.Generator) -> list[int]:
    n = D.shape[0]
    medoids = [int(rng.integers(n))]
    nearest = D[medoids[0]].copy()
    for _ in range(1, K):
        nearest_masked = nearest.copy()
        nearest_masked[medoids] = -np.inf
        nxt = int(np.argmax(nearest_masked))
        medoids.append(nxt)
        nearest = np.minimum(nearest, D[nxt])
    return medoids


def kmedoid(
    candidates: Sequence[PromptCandidate] | np.ndarray,
    K: int,
    seed: int = 0,
    max_iters: int = 100,
    metric: str = "cosine",
) -> KMedoidResult:
    """Alternating K-medoid with farthest-point seeding.

    Each round assigns every point to its nearest medoid and then moves each
    medoid to the member with the smallest summed distance to its cluster.
    A medoid only moves on a strict improvement, so the total cost never
    increases; iteration stops when it stops decreasing.
    """
    X = _matrix(candidates)
    n = X.shape[0]
    if n == 0:
        raise BankError("kmedoid on empty input")
    if not 1 <= K <= n:
        raise BankError(f"K={K} must lie in [1, {n}]")
    D = pairwise_distances(X, metric=metric)
    medoids = _build_seeds(D, K, np.random.default_rng(seed))
    labels, cost = _assign(D, medoids)
    history = [cost]
    it = 0
    for it in range(1, max_iters + 1):
        new = list(medoids)
        for c in range(K):
            members = np.flatnonzero(labels == c)
            within = D[np.ix_(members, members)].sum(axis=1)
            best = members[int(np.argmin(within))]
            current = within[np.searchsorted(members, medoids[c])]
            if within.min() < current:
                new[c] = int(best)
        if new == medoids:
            break
        new_labels, new_cost = _assign(D, new)
        if new_cost >= cost:
            break
        medoids, labels, cost = new, new_labels, new_cost
        history.append(cost)
    return KMedoidResult(medoids, labels, history, it)


def _matrix(candidates) -> np.ndarray:
    if isinstance(candidates, np.ndarray):
        return np.asarray(candidates, dtype=np.float64)
    if not candidates:
        return np.empty((0, 0))
    dims = {c.dim for c in candidates}
    if len(dims) != 1:
        raise DimensionMismatch(f"mixed feature dimensions {sorted(dims)}")
    return np.stack([c.features for c in candidates])


# ---------------------------------------------------------------------------
# Scoring


@dataclass(frozen=True)
class EvalSet:
    samples: tuple[tuple[object, object], ...]

    def __post_init__(self):
        if not self.samples:
            raise BankError("evaluation set is empty")

    def __len__(self):
        return len(self.samples)

    @classmethod
    def synthetic(cls, n: int = 16) -> "EvalSet":
        return cls(tuple((i, f"target-{i}") for i in range(n)))


class Scorer(Protocol):
    def loss(self, prompt: PromptCandidate, d_in, d_tgt) -> float: ...


class SyntheticScorer:
    """Loss driven by a hidden task-ideal direction.

    True quality is the cosine similarity between a prompt and the task
    vector; the loss on one sample is ``1 - quality`` plus seeded Gaussian
    noise, so the mean over samples estimates the quality ranking.
    """

    _ROW = 256

    def __init__(self, task_vector, sigma: float = 0.05, seed: int = 0):
        self.task_vector = unit(task_vector)
        self.sigma = float(sigma)
        self.seed = int(seed)
        self._noise: dict[int, np.ndarray] = {}

    def quality(self, prompt: PromptCandidate) -> float:
        if prompt.dim != self.task_vector.shape[0]:
            raise DimensionMismatch(f"{prompt.dim} vs {self.task_vector.shape[0]}")
        return float(prompt.features @ self.task_vector)

    def _sample_noise(self, pid: int, d_in) -> float:
        if self.sigma == 0.0:
            return 0.0
        row = self._noise.get(pid)
        if row is None:
            row = np.random.default_rng([self.seed, pid & 0xFFFFFFFF]).standard_normal(self._ROW)
            self._noise[pid] = row
        key = d_in if isinstance(d_in, (int, np.integer)) else zlib.crc32(repr(d_in).encode())
        return float(row[int(key) % self._ROW])

    def loss(self, prompt: PromptCandidate, d_in, d_tgt) -> float:
        return max(0.0, 1.0 - self.quality(prompt) + self.sigma * self._sample_noise(prompt.id, d_in))


class CountingScorer:
    """Wraps a scorer and counts prompt-level score evaluations."""

    def __init__(self, inner: Scorer):
        self.inner = inner
        self.evaluations = 0
        self.loss_calls = 0

    def loss(self, prompt, d_in, d_tgt) -> float:
        self.loss_calls += 1
        return self.inner.loss(prompt, d_in, d_tgt)


def score(p: PromptCandidate, eval_set: EvalSet, scorer: Scorer) -> float:
    if not len(eval_set):
        raise BankError("evaluation set is empty")
    if isinstance(scorer, CountingScorer):
        scorer.evaluations += 1
    total = sum(scorer.loss(p, d_in, d_tgt) for d_in, d_tgt in eval_set.samples)
    return total / len(eval_set)


def _argmin_scored(cands: Iterable[PromptCandidate], scorer_fn: Callable[[PromptCandidate], float]):
    best = None
    best_key = None
    n = 0
    for c in cands:
        key = (scorer_fn(c), c.id)
        n += 1
        if best_key is None or key < best_key:
            best, best_key = c, key
    return best, best_key[0], n


# ---------------------------------------------------------------------------
# Index


@dataclass
class Cluster:
    medoid: PromptCandidate
    members: list[PromptCandidate]

    def __len__(self):
        return len(self.members)


@dataclass
class LookupResult:
    best: PromptCandidate
    score: float
    evals_performed: int
    cluster: int


@dataclass
class PromptIndex:
    clusters: list[Cluster]
    capacity: int = 3000
    seed: int = 0
    metric: str = "cosine"
    dim: int = field(init=False)

    def __post_init__(self):
        if not self.clusters:
            raise BankError("index needs at least one cluster")
        self.dim = self.clusters[0].medoid.dim
        self._medoid_matrix = None

    @property
    def K(self) -> int:
        return len(self.clusters)

    def __len__(self) -> int:
        return sum(len(c) for c in self.clusters)

    def candidates(self) -> list[PromptCandidate]:
        return [m for c in self.clusters for m in c.members]

    def medoid_matrix(self) -> np.ndarray:
        if self._medoid_matrix is None:
            self._medoid_matrix = np.stack([c.medoid.features for c in self.clusters])
        return self._medoid_matrix

    def check(self) -> None:
        seen: set[int] = set()
        for c in self.clusters:
            if not any(m is c.medoid for m in c.members):
                raise BankError(f"medoid {c.medoid.id} missing from its cluster")
            for m in c.members:
                if m.id in seen:
                    raise BankError(f"candidate {m.id} appears twice")
                seen.add(m.id)
        if len(seen) > self.capacity:
            raise BankError(f"{len(seen)} candidates exceed capacity {self.capacity}")

    def lookup(self, eval_set: EvalSet, scorer: Scorer) -> LookupResult:
        return lookup(self, eval_set, scorer)

    def insert(self, p: PromptCandidate) -> PromptCandidate | None:
        return insert(self, p)

    def rebuild(self, K: int | None = None, seed: int | None = None) -> "PromptIndex":
        """Recluster every candidate from scratch (explicit maintenance)."""
        return build_index(self.candidates(), K or self.K, self.capacity, self.seed if seed is None else seed, self.metric)


def build_index(
    candidates: Sequence[PromptCandidate],
    K: int = 50,
    capacity: int = 3000,
    seed: int = 0,
    metric: str = "cosine",
) -> PromptIndex:
    if len(candidates) > capacity:
        raise BankError(f"{len(candidates)} candidates exceed capacity {capacity}")
    res = kmedoid(candidates, K, seed=seed, metric=metric)
    clusters = []
    for c, mi in enumerate(res.medoids):
        members = [candidates[i] for i in np.flatnonzero(res.labels == c)]
        clusters.append(Cluster(candidates[mi], members))
    clusters.sort(key=lambda cl: cl.medoid.id)
    return PromptIndex(clusters, capacity=capacity, seed=seed, metric=metric)


def lookup(index: PromptIndex, eval_set: EvalSet, scorer: Scorer) -> LookupResult:
    if not index.clusters or not len(index):
        raise BankError("lookup on an empty index")
    evals = 0

    def scored(p):
        nonlocal evals
        evals += 1
        return score(p, eval_set, scorer)

    layer1 = sorted(range(index.K), key=lambda i: index.clusters[i].medoid.id)
    best_c = None
    best_key = None
    for i in layer1:
        key = (scored(index.clusters[i].medoid), index.clusters[i].medoid.id)
        if best_key is None or key < best_key:
            best_c, best_key = i, key
    best, best_score, _ = _argmin_scored(index.clusters[best_c].members, scored)
    return LookupResult(best, best_score, evals, best_c)


def full_scan(candidates: Iterable[PromptCandidate], eval_set: EvalSet, scorer: Scorer) -> LookupResult:
    evals = 0

    def scored(p):
        nonlocal evals
        evals += 1
        return score(p, eval_set, scorer)

    best, s, _ = _argmin_scored(candidates, scored)
    if best is None:
        raise BankError("full scan over no candidates")
    return LookupResult(best, s, evals, -1)


def nearest_cluster(index: PromptIndex, features: np.ndarray) -> int:
    d = np.clip(1.0 - index.medoid_matrix() @ features, 0.0, 2.0)
    ids = np.array([c.medoid.id for c in index.clusters])
    # lexicographic (distance, medoid id)
    return int(np.lexsort((ids, d))[0])


def insert(index: PromptIndex, p: PromptCandidate) -> PromptCandidate | None:
    """Append ``p`` to its nearest cluster; evict one member if over capacity.

    Returns the evicted candidate, if any.
    """
    if p.dim != index.dim:
        raise DimensionMismatch(f"prompt {p.id} has dimension {p.dim}, index has {index.dim}")
    c = index.clusters[nearest_cluster(index, p.features)]
    c.members.append(p)
    if len(index) > index.capacity:
        return replace_within(c)
    return None


def replace_within(cluster: Cluster) -> PromptCandidate:
    """Evict the non-medoid member closest to the medoid."""
    if len(cluster.members) < 2:
        raise BankError("cluster-too-small: need a non-medoid member to evict")
    best_i = None
    best_key = None
    for i, m in enumerate(cluster.members):
        if m is cluster.medoid:
            continue
        key = (cosine_distance(m, cluster.medoid), m.id)
        if best_key is None or key < best_key:
            best_i, best_key = i, key
    return cluster.members.pop(best_i)


def bank_latency(index: PromptIndex, per_eval_cost: float) -> float:
    """Expected lookup time: K medoid scores plus one average cluster."""
    if per_eval_cost <= 0:
        raise BankError("per_eval_cost must be > 0")
    return (index.K + len(index) / index.K) * per_eval_cost


# ---------------------------------------------------------------------------
# Snapshot files (JSON lines, features as float.hex for exact round trips)


def save_index(index: PromptIndex, path: str | Path, meta: dict | None = None) -> None:
    """Write a snapshot; ``meta`` adds extra header fields (ignored on load)."""
    header = dict(meta or {})
    header.update(K=index.K, capacity=index.capacity, D=index.dim, seed=index.seed, metric=index.metric)
    lines = [json.dumps(header, sort_keys=True)]
    for ci, c in enumerate(index.clusters):
        for m in c.members:
            rec = {
                "id": m.id,
                "text": m.text,
                "cluster": ci,
                "medoid": m is c.medoid,
                "features": [float(x).hex() for x in m.features],
            }
            lines.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def load_index(path: str | Path) -> PromptIndex:
    raw = Path(path).read_text().splitlines()
    if not raw:
        raise BankError(f"{path}: empty snapshot")
    try:
        header = json.loads(raw[0])
        K = int(header["K"])
        members: list[list[PromptCandidate]] = [[] for _ in range(K)]
        medoids: list[PromptCandidate | None] = [None] * K
        for lineno, line in enumerate(raw[1:], start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            feats = np.array([float.fromhex(x) for x in rec["features"]])
            if feats.shape[0] != header["D"]:
                raise DimensionMismatch(f"{path}:{lineno}: expected {header['D']} features")
            p = PromptCandidate(int(rec["id"]), rec["text"], feats)
            members[rec["cluster"]].append(p)
            if rec["medoid"]:
                medoids[rec["cluster"]] = p
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise BankError(f"{path}: malformed snapshot ({exc})") from exc
    if any(m is None for m in medoids):
        raise BankError(f"{path}: cluster without a medoid")
    clusters = [Cluster(m, ms) for m, ms in zip(medoids, members)]
    index = PromptIndex(clusters, capacity=int(header["capacity"]), seed=int(header["seed"]), metric=header.get("metric", "cosine"))
    index.check()
    return index


# ---------------------------------------------------------------------------
# Synthetic feature provider


@dataclass
class SyntheticBank:
    """Topic-structured unit feature vectors standing in for LLM activations."""

    centers: np.ndarray
    candidates: list[PromptCandidate]
    topics: np.ndarray

    def task_vector(self, rng: np.random.Generator, spread: float = 0.35) -> tuple[np.ndarray, int]:
        t = int(rng.integers(len(self.centers)))
        d = self.centers.shape[1]
        return unit(self.centers[t] + spread * rng.standard_normal(d) / np.sqrt(d)), t


def synthetic_candidates(
    n: int, dim: int = 64, topics: int = 50, seed: int = 0, spread: float = 0.6, start_id: int = 0
) -> SyntheticBank:
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((topics, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.integers(topics, size=n)
    X = centers[labels] + spread * rng.standard_normal((n, dim)) / np.sqrt(dim)
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    cands = [PromptCandidate(start_id + i, f"prompt-{start_id + i} (topic {labels[i]})", X[i]) for i in range(n)]
    return SyntheticBank(centers, cands, labels)
