"""Hard linear-loss problem instances over three feasible-set geometries.

All three instances share the linear loss shape f(theta, z) = -scale * <theta, z>,
so population risks, optimal risks, and support-function maximizers have
closed forms:

* ``box_lp``: Theta is the l-infinity ball of radius d^(-1/p) (the largest
  box inscribed in the unit l_p ball), data are k-sparse ternary vectors,
  and the loss carries a k^(-1/q) normalization (q the Holder conjugate)
  that makes f 1-Lipschitz in l_p.
* ``l1_capped``: Theta is the l_1 ball intersected with the box of radius
  1/s, data are dense +/-1 vectors.
* ``l1_counterexample``: Theta is the plain l_1 ball; an accurate learner
  here snaps to a vertex and leaks nothing about individual samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import MeanVector, SparsePopulation, TernarySample, sample_support

BOX_LP = "box_lp"
L1_CAPPED = "l1_capped"
L1_COUNTEREXAMPLE = "l1_counterexample"
VARIANTS = (BOX_LP, L1_CAPPED, L1_COUNTEREXAMPLE)

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class ProblemSpec:
    """One problem instance; `p`, `k` apply to box_lp and `s` to l1_capped."""

    variant: str
    d: int
    p: float = 2.0
    k: int | None = None
    s: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.variant == BOX_LP:
            if not self.p >= 1:
                raise ValueError("p must lie in [1, inf)")
            if self.k is None or not 1 <= self.k <= self.d:
                raise ValueError(f"box_lp requires sparsity k in [1, d={self.d}]")
        if self.variant == L1_CAPPED:
            if self.s is None or not 1 <= self.s <= self.d:
                raise ValueError(f"l1_capped requires cap s in [1, d={self.d}]")

    @property
    def q(self) -> float:
        """Holder conjugate p / (p - 1); +inf at p = 1."""
        return float("inf") if self.p == 1.0 else self.p / (self.p - 1.0)

    @property
    def loss_scale(self) -> float:
        """k^(-1/q) for box_lp (1 at p = 1, the continuous limit), else 1."""
        if self.variant != BOX_LP:
            return 1.0
        return float(self.k) ** (-(self.p - 1.0) / self.p)

    @property
    def box_radius(self) -> float:
        """Radius d^(-1/p) of the box_lp feasible set."""
        if self.variant != BOX_LP:
            raise ValueError("box_radius only applies to box_lp")
        return float(self.d) ** (-1.0 / self.p)

    @property
    def data_sparsity(self) -> int:
        """Nonzero count of every data vector: k for box_lp, d otherwise."""
        return self.k if self.variant == BOX_LP else self.d

    @property
    def lipschitz_p(self) -> float:
        """Norm index in which the loss is 1-Lipschitz."""
        return self.p if self.variant == BOX_LP else 1.0


@dataclass(frozen=True)
class ParameterPoint:
    """A candidate parameter vector with a feasibility tag."""

    theta: np.ndarray
    feasible: bool

    def __post_init__(self):
        arr = np.array(self.theta, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "theta", arr)


def is_feasible(spec: ProblemSpec, theta: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
    """Membership in the feasible set, with tolerance on norm constraints."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.d,):
        return False
    if spec.variant == BOX_LP:
        return bool(np.max(np.abs(theta)) <= spec.box_radius + tol)
    if np.sum(np.abs(theta)) > 1.0 + tol:
        return False
    if spec.variant == L1_CAPPED:
        return bool(np.max(np.abs(theta)) <= 1.0 / spec.s + tol)
    return True


def _check_data(spec: ProblemSpec, entries: np.ndarray) -> None:
    if entries.shape != (spec.d,):
        raise ValueError(f"data point has shape {entries.shape}, expected ({spec.d},)")
    if not np.isin(entries, (-1, 0, 1)).all():
        raise ValueError("data entries must take values in {-1, 0, +1}")
    nnz = int(np.count_nonzero(entries))
    if nnz != spec.data_sparsity:
        raise ValueError(f"data point has {nnz} nonzeros, expected {spec.data_sparsity}")


def loss(spec: ProblemSpec, theta: ParameterPoint, z) -> float:
    """Linear loss -scale * <theta, z>; requires a feasible theta."""
    if not theta.feasible:
        raise ValueError("loss evaluated at an infeasible parameter point")
    entries = z.entries if isinstance(z, TernarySample) else np.asarray(z)
    _check_data(spec, entries)
    return -spec.loss_scale * float(np.dot(theta.theta, entries.astype(float)))


def support_maximum(spec: ProblemSpec, v: np.ndarray) -> float:
    """sup over the feasible set of <theta, v>, in closed form."""
    v = np.asarray(v, dtype=float)
    if spec.variant == BOX_LP:
        return spec.box_radius * float(np.sum(np.abs(v)))
    if spec.variant == L1_CAPPED:
        mags = np.sort(np.abs(v))[::-1]
        return float(np.sum(mags[: spec.s])) / spec.s
    return float(np.max(np.abs(v)))


def support_argmax(spec: ProblemSpec, v: np.ndarray) -> ParameterPoint:
    """Closed-form maximizer of <theta, v> over the feasible set.

    Tie-breaking is deterministic: sign(0) = +1 and lowest index first, so
    identical inputs always map to identical parameter points.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (spec.d,):
        raise ValueError(f"direction has shape {v.shape}, expected ({spec.d},)")
    signs = np.where(v >= 0, 1.0, -1.0)
    if spec.variant == BOX_LP:
        return ParameterPoint(spec.box_radius * signs, True)
    theta = np.zeros(spec.d)
    if spec.variant == L1_CAPPED:
        top = np.argsort(-np.abs(v), kind="stable")[: spec.s]
        theta[top] = signs[top] / spec.s
    else:
        j = int(np.argmax(np.abs(v)))
        theta[j] = signs[j]
    return ParameterPoint(theta, True)


def excess_risk(spec: ProblemSpec, theta: ParameterPoint, mu) -> float:
    """Population risk gap scale * (sup_<theta', mu> - <theta, mu>).

    Exact by linearity of the loss; clamped at zero to absorb rounding when
    theta attains the support maximum.
    """
    if not theta.feasible:
        raise ValueError("excess risk evaluated at an infeasible parameter point")
    values = mu.values if isinstance(mu, MeanVector) else np.asarray(mu, dtype=float)
    if values.shape != (spec.d,):
        raise ValueError(f"mean has shape {values.shape}, expected ({spec.d},)")
    bound = spec.data_sparsity / spec.d
    if np.max(np.abs(values)) > bound + 1e-9:
        raise ValueError(f"mean entries must satisfy |mu_j| <= {bound}")
    gap = support_maximum(spec, values) - float(np.dot(theta.theta, values))
    return max(spec.loss_scale * gap, 0.0)


def data_distribution(spec: ProblemSpec, mu) -> SparsePopulation:
    """Population over the spec's data space with mean mu.

    box_lp uses the k-sparse family; the l1 variants use the dense product
    of +/-1 coins (the k = d member of the same family).
    """
    values = mu.values if isinstance(mu, MeanVector) else np.asarray(mu, dtype=float)
    return SparsePopulation.from_array(values, spec.data_sparsity, spec.d)


def random_feasible_point(spec: ProblemSpec, rng: np.random.Generator) -> ParameterPoint:
    """A random point of the feasible set (any full-support law will do)."""
    if spec.variant == BOX_LP:
        r = spec.box_radius
        return ParameterPoint(rng.uniform(-r, r, size=spec.d), True)
    mags = rng.exponential(size=spec.d)
    theta = np.where(rng.random(spec.d) < 0.5, 1.0, -1.0) * mags / mags.sum()
    theta *= rng.random()
    if spec.variant == L1_CAPPED:
        theta = np.clip(theta, -1.0 / spec.s, 1.0 / spec.s)
    return ParameterPoint(theta, True)


def random_data_point(spec: ProblemSpec, rng: np.random.Generator) -> np.ndarray:
    """A random point of the data space (uniform over atoms)."""
    entries = np.zeros(spec.d, dtype=np.int8)
    support = sample_support(spec.d, spec.data_sparsity, rng)
    entries[support] = np.where(rng.random(support.size) < 0.5, 1, -1)
    return entries


def validate_lipschitz(spec: ProblemSpec, trials: int, rng: np.random.Generator) -> bool:
    """Sampled check that |f(theta1, z) - f(theta2, z)| <= ||theta1 - theta2||_p.

    Uses p for box_lp and p = 1 for the two l_1 variants.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = spec.lipschitz_p
    for _ in range(trials):
        t1 = random_feasible_point(spec, rng)
        t2 = random_feasible_point(spec, rng)
        z = random_data_point(spec, rng)
        gap = abs(loss(spec, t1, z) - loss(spec, t2, z))
        diff = np.abs(t1.theta - t2.theta)
        norm = float(np.sum(diff**p) ** (1.0 / p))
        if gap > norm + FEASIBILITY_TOL:
            return False
    return True
