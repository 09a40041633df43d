"""Finite discrete distributions and the distances used to compare them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class DiscreteDistribution:
    """Normalised nonnegative weights over a finite support.

    The support is an array whose rows are the atoms (lattice points, state
    pairs or plain labels).
    """

    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.support):
            raise ValueError("one weight per atom is required")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if not total > 0:
            raise ValueError("weights must have positive mass")
        object.__setattr__(self, "weights", w / total)

    def __len__(self) -> int:
        return len(self.weights)

    def sample_index(self, rng: np.random.Generator, size=None):
        cum = np.cumsum(self.weights)
        u = rng.random(size) * cum[-1]
        return np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)

    def sample(self, rng: np.random.Generator, size=None):
        return self.support[self.sample_index(rng, size)]

    def as_dict(self) -> dict:
        keys = [tuple(np.atleast_1d(a).tolist()) for a in self.support]
        return dict(zip(keys, self.weights.tolist()))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p, float) - np.asarray(q, float)).sum())


def empirical(indices: np.ndarray, size: int) -> np.ndarray:
    counts = np.bincount(np.asarray(indices, dtype=np.int64), minlength=size).astype(float)
    return counts / max(counts.sum(), 1.0)


def chi_square_pvalue(counts: np.ndarray, probs: np.ndarray, min_expected: float = 5.0) -> float:
    """Pearson goodness-of-fit p-value, pooling cells with small expectation."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    probs = probs / probs.sum()
    expected = probs * counts.sum()
    order = np.argsort(expected)
    obs_c, exp_c = [], []
    acc_o = acc_e = 0.0
    for i in order:
        acc_o += counts[i]
        acc_e += expected[i]
        if acc_e >= min_expected:
            obs_c.append(acc_o)
            exp_c.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0:
        if exp_c:
            obs_c[-1] += acc_o
            exp_c[-1] += acc_e
        else:
            obs_c.append(acc_o)
            exp_c.append(acc_e)
    if len(exp_c) < 2:
        return 1.0
    obs_c, exp_c = np.asarray(obs_c), np.asarray(exp_c)
    stat = float(((obs_c - exp_c) ** 2 / exp_c).sum())
    return float(stats.chi2.sf(stat, len(exp_c) - 1))
