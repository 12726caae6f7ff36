"""Brute-force verification of the fingerprinting identities on small instances.

These checkers never sample: datasets are enumerated atom by atom with
their exact probabilities, and the prior integral over the mean is done
per coordinate with a Gauss rule of sufficient degree, so both sides of
each identity are computed to floating-point accuracy.  They are the
independent path against which the Monte Carlo machinery is validated.

The sparse identity states that, with mu drawn from the matching prior,

    E sum_i <theta_hat, (Z_i - (d/k) mu)>_supp(Z_i)
        = (2 beta d / k) * E <mu, E[theta_hat]>,

and the scaling-matrix identity is the dense analogue with factor
2 beta / gamma^2.  The rational scaling factor (1 - (mu/g)^2)/(1 - mu^2)
is integrable exactly because, for z in {-1, +1},
(z - mu)(1 + z mu) = (1 - mu^2) z, which cancels the denominator against
the sample's probability weight and leaves a polynomial integrand.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .distributions import BetaPrior, prior_quadrature, sample_prior
from .problems import BOX_LP, ProblemSpec, support_argmax

ENUMERATION_LIMIT = 10**7

Learner = Callable[[np.ndarray], np.ndarray]


class EnumerationLimitError(RuntimeError):
    """Raised when an instance would need more weighted terms than allowed."""


@dataclass(frozen=True)
class IdentityCheckResult:
    """Both sides of one identity instance and their relative error."""

    lhs: float
    rhs: float
    rel_error: float
    instance: str

    @classmethod
    def compare(cls, lhs: float, rhs: float, instance: str) -> "IdentityCheckResult":
        rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
        return cls(lhs=lhs, rhs=rhs, rel_error=rel, instance=instance)


def ternary_atoms(d: int, k: int) -> np.ndarray:
    """All k-sparse ternary vectors in dimension d, as an (A, d) int8 matrix."""
    atoms = []
    for support in itertools.combinations(range(d), k):
        for signs in itertools.product((-1, 1), repeat=k):
            z = np.zeros(d, dtype=np.int8)
            z[list(support)] = signs
            atoms.append(z)
    return np.stack(atoms)


def _dataset_table(atoms: np.ndarray, n: int, learner: Learner):
    """Enumerate all size-n datasets over the atoms and precompute the
    mu-independent pieces: learner outputs, summed samples, support counts."""
    a = atoms.shape[0]
    idx = np.array(list(itertools.product(range(a), repeat=n)), dtype=np.int64)
    z_sets = atoms[idx]  # (N, n, d)
    thetas = np.stack([np.asarray(learner(z.astype(np.float64)), dtype=float) for z in z_sets])
    return idx, z_sets, thetas


def _node_tuples(nodes: np.ndarray, weights: np.ndarray, d: int):
    """Product quadrature over d coordinates: yields (mu, weight)."""
    for combo in itertools.product(range(nodes.size), repeat=d):
        mu = nodes[list(combo)]
        w = float(np.prod(weights[list(combo)]))
        yield mu, w


def verify_sparse_identity(d: int, k: int, n: int, beta: float, learner: Learner,
                           name: str = "learner") -> IdentityCheckResult:
    """Exact check of the sparse fingerprinting identity.

    The left side enumerates every dataset of n atoms weighted by its exact
    probability and integrates over mu with a per-coordinate Gauss rule of
    degree n + 2 (the integrand has per-coordinate degree n + 1).  The
    learner must be a deterministic map from the (n, d) sample matrix to a
    parameter vector; finitely randomized learners are handled by averaging
    their outputs over an explicit coin set before calling this.
    """
    if not 1 <= k <= d:
        raise ValueError("need 1 <= k <= d")
    if n < 1:
        raise ValueError("n must be >= 1")
    if beta < 1:
        raise ValueError("beta must be >= 1")
    prior = BetaPrior(beta=beta, gamma=k / d, d=d)
    rule = prior_quadrature(prior, n + 2)
    atoms = ternary_atoms(d, k)
    a = atoms.shape[0]
    terms = (a**n) * (rule.nodes.size**d)
    if terms > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"instance needs {terms} weighted terms > {ENUMERATION_LIMIT}")

    idx, z_sets, thetas = _dataset_table(atoms, n, learner)
    summed = z_sets.sum(axis=1).astype(np.float64)          # (N, d)
    support_counts = np.abs(z_sets).sum(axis=1).astype(np.float64)  # (N, d)
    const = np.einsum("nd,nd->n", thetas, summed)
    weighted_counts = thetas * support_counts               # (N, d)

    ratio = d / k
    inv_comb = 1.0 / math.comb(d, k)
    nonzero = atoms != 0
    lhs = 0.0
    rhs = 0.0
    for mu, w_mu in _node_tuples(rule.nodes, rule.weights, d):
        factors = np.where(nonzero, (1.0 + ratio * atoms * mu) / 2.0, 1.0)
        p_atom = inv_comb * factors.prod(axis=1)            # (A,)
        w_set = p_atom[idx].prod(axis=1)                    # (N,)
        lhs += w_mu * float(w_set @ (const - ratio * (weighted_counts @ mu)))
        rhs += w_mu * (2.0 * beta * ratio) * float(mu @ (w_set @ thetas))
    return IdentityCheckResult.compare(
        lhs, rhs, f"sparse d={d} k={k} n={n} beta={beta:g} learner={name}"
    )


def verify_scaling_identity(d: int, n: int, beta: float, gamma: float, learner: Learner,
                            name: str = "learner") -> IdentityCheckResult:
    """Exact check of the scaling-matrix identity on the dense +/-1 cube.

    gamma = 1 is allowed (the scaling matrix degenerates to the identity
    and the check reduces to the dense fingerprinting identity); gamma > 1
    is rejected.  Quadrature degree n + 3 covers the polynomial left by the
    (z - mu)(1 + z mu) = (1 - mu^2) z reduction.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    prior = BetaPrior(beta=beta, gamma=gamma, d=d)
    rule = prior_quadrature(prior, n + 3)
    atoms = ternary_atoms(d, d)  # the dense cube
    a = atoms.shape[0]
    terms = (a**n) * (rule.nodes.size**d)
    if terms > ENUMERATION_LIMIT:
        raise EnumerationLimitError(f"instance needs {terms} weighted terms > {ENUMERATION_LIMIT}")

    idx, z_sets, thetas = _dataset_table(atoms, n, learner)
    z_float = z_sets.astype(np.float64)                     # (N, n, d)
    lhs = 0.0
    rhs = 0.0
    for mu, w_mu in _node_tuples(rule.nodes, rule.weights, d):
        per_factor = (1.0 + z_float * mu) / 2.0             # (N, n, d)
        w_set = per_factor.prod(axis=(1, 2))                # (N,)
        # Swap each sample-coordinate probability factor for the centered,
        # scaled term; interior nodes keep every factor strictly positive.
        swapped = (1.0 - (mu / gamma) ** 2) * z_float / 2.0
        per_set = np.einsum("snd,sd->s", swapped / per_factor, thetas)
        lhs += w_mu * float(w_set @ per_set)
        rhs += w_mu * (2.0 * beta / gamma**2) * float(mu @ (w_set @ thetas))
    return IdentityCheckResult.compare(
        lhs, rhs, f"scaling d={d} n={n} beta={beta:g} gamma={gamma:g} learner={name}"
    )


def check_beta_abs_moment(beta: float, gamma: float, n_samples: int,
                          rng: np.random.Generator) -> tuple[float, float, bool]:
    """Monte Carlo check of E|X| >= gamma / (3 sqrt(beta)) for the prior.

    Returns (estimate, bound, passed) where passed allows the estimate a
    95% CI of slack.  The bound is only claimed for beta >= 1.
    """
    if beta < 1:
        raise ValueError("the absolute-moment bound requires beta >= 1")
    if n_samples < 10**4:
        raise ValueError("n_samples must be >= 10^4")
    prior = BetaPrior(beta=beta, gamma=gamma, d=n_samples)
    draws = np.abs(sample_prior(prior, rng).values)
    estimate = float(draws.mean())
    ci = 1.96 * float(draws.std(ddof=1)) / math.sqrt(n_samples)
    bound = gamma / (3.0 * math.sqrt(beta))
    return estimate, bound, estimate + ci >= bound


def check_card_moments(vectors: Sequence[np.ndarray], betas: Sequence[float]):
    """Exact check of the counting bound on every (vector, beta) pair.

    For a in R^n with A1 = sum a_i and A2 = sum a_i^2, the count of entries
    a_i >= beta/n must be at least max(A1 - max(beta, 0), 0)^2 / A2 (0 when
    A2 = 0): the bound holds for beta >= 0 and negative betas only relax
    the counting threshold, so they are clamped on the right-hand side.
    Returns (passed, first_counterexample).
    """
    if len(vectors) == 0 or len(vectors) != len(betas):
        raise ValueError("need equally many nonempty vectors and betas")
    for a, beta in zip(vectors, betas):
        a = np.asarray(a, dtype=float)
        n = a.size
        count = int(np.count_nonzero(a >= beta / n))
        a2 = float(np.sum(a**2))
        bound = 0.0 if a2 == 0.0 else max(float(np.sum(a)) - max(beta, 0.0), 0.0) ** 2 / a2
        if count < bound:
            return False, (a, beta, count, bound)
    return True, None


# Deterministic learners exercised by the verification grid.

def mean_clipped(z: np.ndarray) -> np.ndarray:
    """Empirical mean clipped to the unit box."""
    return np.clip(z.mean(axis=0), -1.0, 1.0)


def mean_box_vertex(z: np.ndarray) -> np.ndarray:
    """ERM-style map: box vertex aligned with the empirical mean (p = 2)."""
    d = z.shape[1]
    spec = ProblemSpec(BOX_LP, d=d, p=2.0, k=d)
    return support_argmax(spec, z.mean(axis=0)).theta


def mean_cubed(z: np.ndarray) -> np.ndarray:
    """A fixed nonlinear map: coordinatewise cube of the empirical mean."""
    return z.mean(axis=0) ** 3


GRID_LEARNERS = (
    ("mean_clipped", mean_clipped),
    ("mean_box_vertex", mean_box_vertex),
    ("mean_cubed", mean_cubed),
)


def _agreement_check(d: int, n: int) -> IdentityCheckResult:
    """The two oracles compute the same quantity at k = d, gamma = 1."""
    sparse = verify_sparse_identity(d, d, n, 2.0, mean_clipped, name="mean_clipped")
    dense = verify_scaling_identity(d, n, 2.0, 1.0, mean_clipped, name="mean_clipped")
    return IdentityCheckResult.compare(
        sparse.lhs, dense.lhs, f"agreement k=d d={d} n={n} beta=2 learner=mean_clipped"
    )


def verification_grid_tasks() -> list[Callable[[], IdentityCheckResult]]:
    """Independent thunks making up the `verify` battery.

    Sparse instances on d in {1,2,3}, k in {1..d}, n in {1,2},
    beta in {1,2,5} for three learners; scaling instances on d in {1,2},
    n in {1,2}, beta in {1,3}, gamma in {0.3, 0.9}; and the gamma = 1
    agreement between the two oracles at k = d on a shared learner.
    """
    tasks: list[Callable[[], IdentityCheckResult]] = []
    for d in (1, 2, 3):
        for k in range(1, d + 1):
            for n in (1, 2):
                for beta in (1.0, 2.0, 5.0):
                    for name, fn in GRID_LEARNERS:
                        tasks.append(partial(verify_sparse_identity, d, k, n, beta, fn, name=name))
    for d in (1, 2):
        for n in (1, 2):
            for beta in (1.0, 3.0):
                for gamma in (0.3, 0.9):
                    for name, fn in GRID_LEARNERS:
                        tasks.append(partial(verify_scaling_identity, d, n, beta, gamma, fn, name=name))
    for d in (1, 2):
        for n in (1, 2):
            tasks.append(partial(_agreement_check, d, n))
    return tasks


def verification_grid() -> list[IdentityCheckResult]:
    """Run the full `verify` battery serially."""
    return [task() for task in verification_grid_tasks()]
