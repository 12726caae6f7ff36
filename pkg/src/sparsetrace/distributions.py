"""Sparse ternary data distributions and symmetric beta priors.

The data model is a mixture over supports: draw a uniformly random size-k
subset J of the d coordinates, put independent +/-1 entries with mean
(d/k)*mu_j on J, and zeros elsewhere.  The marginal mean of a sample is
exactly mu, which is why the family admits exact fingerprinting
identities.  Priors over mu are per-coordinate symmetric beta laws on
[-gamma, gamma] with density proportional to (1 - (x/gamma)^2)^(beta-1);
`prior_quadrature` provides Gauss-Jacobi rules that integrate polynomials
against that density exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi


def _frozen(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MeanVector:
    """Coordinate means constrained to a symmetric box [-box_bound, box_bound]^d."""

    values: np.ndarray
    box_bound: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 1 or self.values.size < 1:
            raise ValueError("mean vector must be a nonempty 1-D array")
        if self.box_bound < 0:
            raise ValueError("box_bound must be nonnegative")
        if np.max(np.abs(self.values)) > self.box_bound + 1e-12:
            raise ValueError(f"mean entries must satisfy |mu_j| <= {self.box_bound}")

    @property
    def d(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SparsePopulation:
    """Data distribution over k-sparse ternary vectors with mean mu.

    Requires |mu_j| <= k/d so the conditional sign probabilities
    (1 + (d/k) mu_j) / 2 stay in [0, 1].
    """

    mu: MeanVector
    k: int
    d: int

    def __post_init__(self):
        if not 1 <= self.k <= self.d:
            raise ValueError(f"sparsity k={self.k} must lie in [1, d={self.d}]")
        if self.mu.d != self.d:
            raise ValueError("mean vector dimension does not match d")
        bound = self.k / self.d
        if np.max(np.abs(self.mu.values)) > bound + 1e-12:
            raise ValueError(f"mean entries must satisfy |mu_j| <= k/d = {bound}")

    @property
    def population_mean(self) -> np.ndarray:
        """E[Z] = mu: the (k/d) support probability cancels the (d/k) boost."""
        return self.mu.values

    @classmethod
    def from_array(cls, mu, k: int, d: int) -> "SparsePopulation":
        return cls(MeanVector(np.asarray(mu, dtype=float), k / d), k, d)


@dataclass(frozen=True)
class TernarySample:
    """One draw: entries in {-1, 0, +1} with `support` the sorted nonzero indices."""

    entries: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(self.entries, dtype=np.int8))
        object.__setattr__(self, "support", _frozen(self.support, dtype=np.int64))
        if not np.isin(self.entries, (-1, 0, 1)).all():
            raise ValueError("entries must take values in {-1, 0, +1}")
        actual = np.flatnonzero(self.entries)
        if self.support.shape != actual.shape or not np.array_equal(self.support, actual):
            raise ValueError("support must be the sorted set of nonzero indices")

    @classmethod
    def from_entries(cls, entries) -> "TernarySample":
        arr = np.asarray(entries, dtype=np.int8)
        return cls(arr, np.flatnonzero(arr))

    @property
    def d(self) -> int:
        return self.entries.size


@dataclass(frozen=True)
class BetaPrior:
    """Product of d rescaled symmetric beta laws on [-gamma, gamma].

    Per-coordinate density is proportional to (1 - (x/gamma)^2)^(beta-1);
    beta = 1 is the uniform law, large beta concentrates near zero with
    second moment gamma^2 / (2 beta + 1).
    """

    beta: float
    gamma: float
    d: int

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.d < 1:
            raise ValueError("d must be >= 1")


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes in [-gamma, gamma] and probability weights for prior integration."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.nodes.shape != self.weights.shape:
            raise ValueError("nodes and weights must have matching shapes")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def sample_support(d: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random size-k subset of {0, ..., d-1}, sorted.

    Partial Fisher-Yates over an index array: exactly uniform, O(d) memory,
    k swap steps.
    """
    if not 1 <= k <= d:
        raise ValueError(f"k={k} out of range [1, d={d}]")
    idx = np.arange(d)
    for i in range(k):
        j = int(rng.integers(i, d))
        idx[i], idx[j] = idx[j], idx[i]
    return np.sort(idx[:k])


def sample_sparse(pop: SparsePopulation, rng: np.random.Generator) -> TernarySample:
    """One draw from the sparse population.

    Conditional on j being in the support, P(Z_j = +1) = (1 + (d/k) mu_j) / 2.
    """
    support = sample_support(pop.d, pop.k, rng)
    p_plus = (1.0 + (pop.d / pop.k) * pop.mu.values[support]) / 2.0
    signs = np.where(rng.random(pop.k) < p_plus, 1, -1)
    entries = np.zeros(pop.d, dtype=np.int8)
    entries[support] = signs
    return TernarySample(entries, support)


def sample_matrix(pop: SparsePopulation, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent draws as an (n, d) int8 matrix.

    Vectorized batch path: supports come from per-row argpartition of i.i.d.
    uniform keys (the k smallest keys form an exactly uniform k-subset).
    The dense case k = d skips support selection entirely.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    d, k = pop.d, pop.k
    p_plus = (1.0 + (d / k) * pop.mu.values) / 2.0
    if k == d:
        return np.where(rng.random((n, d)) < p_plus, 1, -1).astype(np.int8)
    keys = rng.random((n, d))
    sel = np.argpartition(keys, k - 1, axis=1)[:, :k]
    signs = np.where(rng.random((n, k)) < p_plus[sel], 1, -1).astype(np.int8)
    out = np.zeros((n, d), dtype=np.int8)
    np.put_along_axis(out, sel, signs, axis=1)
    return out


def pmf(pop: SparsePopulation, z) -> float:
    """Exact probability of a ternary vector under the sparse population.

    Zero unless z has exactly k nonzeros; otherwise
    C(d, k)^-1 * prod_{j in supp(z)} (1 + (d/k) mu_j z_j) / 2.
    """
    entries = z.entries if isinstance(z, TernarySample) else np.asarray(z)
    if entries.shape != (pop.d,):
        raise ValueError(f"sample has dimension {entries.shape}, expected ({pop.d},)")
    if not np.isin(entries, (-1, 0, 1)).all():
        raise ValueError("entries must take values in {-1, 0, +1}")
    support = np.flatnonzero(entries)
    if support.size != pop.k:
        return 0.0
    factors = (1.0 + (pop.d / pop.k) * pop.mu.values[support] * entries[support]) / 2.0
    return float(np.prod(factors)) / math.comb(pop.d, pop.k)


def sample_prior(prior: BetaPrior, rng: np.random.Generator) -> MeanVector:
    """Draw mu ~ prior via two Gamma(beta, 1) variates per coordinate.

    gamma * (G1 - G2) / (G1 + G2) has exactly the rescaled symmetric beta
    law; no inverse-CDF table is needed.
    """
    g1 = rng.gamma(prior.beta, size=prior.d)
    g2 = rng.gamma(prior.beta, size=prior.d)
    values = prior.gamma * (g1 - g2) / (g1 + g2)
    return MeanVector(values, prior.gamma)


def prior_quadrature(prior: BetaPrior, max_degree: int) -> QuadratureRule:
    """Gauss-Jacobi rule exact for polynomials of degree <= max_degree.

    ceil((max_degree + 1) / 2) nodes suffice since an m-node Gauss rule is
    exact to degree 2m - 1.  Weights are normalized to the prior's unit
    mass and nodes rescaled to [-gamma, gamma].
    """
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    m = max(1, math.ceil((max_degree + 1) / 2))
    nodes, weights = roots_jacobi(m, prior.beta - 1.0, prior.beta - 1.0)
    weights = weights / weights.sum()
    return QuadratureRule(prior.gamma * nodes, weights)


def symmetric_beta_moment(prior: BetaPrior, r: int) -> float:
    """Closed-form r-th moment of one prior coordinate.

    Odd moments vanish; even moments are
    gamma^r * prod_{i=1..r/2} (2i - 1) / (2 beta + 2i - 1).
    """
    if r < 0:
        raise ValueError("moment order must be >= 0")
    if r % 2 == 1:
        return 0.0
    value = prior.gamma**r
    for i in range(1, r // 2 + 1):
        value *= (2 * i - 1) / (2 * prior.beta + 2 * i - 1)
    return value
