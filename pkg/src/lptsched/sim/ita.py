"""Iterations-to-accuracy ground truth and the per-model prompt banks.

Each model gets a synthetic bank of candidate prompts.  Every task has a
hidden ideal direction; a prompt's true quality is its cosine similarity to
that direction, and its ITA multiplier grows linearly as quality falls below
the best candidate in the bank.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from ..core import BankConfig, ModelSpec
from ..promptbank import (
    EvalSet,
    PromptIndex,
    SyntheticScorer,
    bank_latency,
    build_index,
    synthetic_candidates,
)

MEDIAN_MULT_RANGE = (1.7, 2.2)
MAX_MULT = 4.5


@dataclass(frozen=True)
class ItaProfile:
    q_best: float
    q_median: float
    median_mult: float
    max_mult: float = MAX_MULT

    def multiplier(self, q: float) -> float:
        span = self.q_best - self.q_median
        if span <= 0:
            return 1.0
        m = 1.0 + (self.median_mult - 1.0) * (self.q_best - q) / span
        return float(min(self.max_mult, max(1.0, m)))


@dataclass
class BankChoice:
    prompt_id: int
    multiplier: float
    evals: int


@dataclass
class ModelBank:
    model: ModelSpec
    index: PromptIndex
    features: np.ndarray  # rows aligned with ``ids``
    ids: np.ndarray
    centers: np.ndarray
    eval_set: EvalSet
    cfg: BankConfig
    model_pos: int
    _tasks: dict[int, tuple[np.ndarray, ItaProfile]] = field(default_factory=dict)
    _choices: dict[int, BankChoice] = field(default_factory=dict)

    def task(self, task_id: int) -> tuple[np.ndarray, ItaProfile]:
        hit = self._tasks.get(task_id)
        if hit is None:
            rng = np.random.default_rng([self.cfg.seed, self.model_pos, task_id, 1])
            centers = self.centers
            t = int(rng.integers(len(centers)))
            d = centers.shape[1]
            vec = centers[t] + 0.35 * rng.standard_normal(d) / math.sqrt(d)
            vec /= np.linalg.norm(vec)
            q = self.features @ vec
            prof = ItaProfile(float(q.max()), float(np.median(q)), float(rng.uniform(*MEDIAN_MULT_RANGE)))
            hit = (vec, prof)
            self._tasks[task_id] = hit
        return hit

    def scorer(self, task_id: int, sigma: float | None = None) -> SyntheticScorer:
        vec, _ = self.task(task_id)
        return SyntheticScorer(vec, self.cfg.noise if sigma is None else sigma, seed=self.cfg.seed * 100003 + task_id)

    def choose(self, task_id: int) -> BankChoice:
        """Run a two-layer lookup for the task (cached; the lookup is deterministic)."""
        hit = self._choices.get(task_id)
        if hit is None:
            res = self.index.lookup(self.eval_set, self.scorer(task_id))
            vec, prof = self.task(task_id)
            hit = BankChoice(res.best.id, prof.multiplier(float(res.best.features @ vec)), res.evals_performed)
            self._choices[task_id] = hit
        return hit

    def random_prompt_multiplier(self, task_id: int, rng: np.random.Generator) -> float:
        vec, prof = self.task(task_id)
        i = int(rng.integers(len(self.ids)))
        return prof.multiplier(float(self.features[i] @ vec))

    def latency_estimate(self) -> float:
        return bank_latency(self.index, self.model.bank_eval_cost)


@functools.lru_cache(maxsize=16)
def build_bank(model: ModelSpec, cfg: BankConfig, model_pos: int) -> ModelBank:
    size = min(cfg.size, cfg.capacity)
    syn = synthetic_candidates(size, cfg.dim, cfg.topics, seed=cfg.seed * 1009 + model_pos)
    K = min(cfg.clusters, size)
    index = build_index(syn.candidates, K, cfg.capacity, seed=cfg.seed)
    X = np.stack([c.features for c in syn.candidates])
    ids = np.array([c.id for c in syn.candidates])
    return ModelBank(model, index, X, ids, syn.centers, EvalSet.synthetic(cfg.eval_samples), cfg, model_pos)
