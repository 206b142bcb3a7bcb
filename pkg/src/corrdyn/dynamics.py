"""Hamiltonian mechanics kernel.

Interaction potentials with analytic gradients, numerical flow maps for the
backward characteristics, evaluable phase-space functions, and application of
the (negated) Liouville generator to products of such functions.

All positions/momenta are dimensionless.  Every container carries a leading
batch axis: a "configuration" is a batch of n-particle phase points, so whole
grids or Monte Carlo sample sets move through one vectorized call.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, FlowDivergenceError
from .partitions import IndexSet, as_index_set

Array = np.ndarray


# ---------------------------------------------------------------------------
# phase-space containers


@dataclass(frozen=True)
class PhasePoint:
    """Position/momentum pair of one particle."""

    q: Array
    p: Array

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if q.ndim != 1 or q.shape != p.shape:
            raise ContractError(f"q and p must be equal-length vectors, got {q.shape} / {p.shape}")
        if not (np.isfinite(q).all() and np.isfinite(p).all()):
            raise ContractError("phase point has non-finite components")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def nu(self) -> int:
        return self.q.shape[0]


class PhaseConfiguration:
    """A batch of phase-space states for an ordered set of particle labels.

    ``q`` and ``p`` have shape ``(batch, n_particles, nu)``; row ``i`` belongs
    to ``labels[i]``.  Labels are strictly increasing, which fixes the
    argument order of every (permutation-symmetric) phase function.
    """

    __slots__ = ("labels", "q", "p", "_pos")

    def __init__(self, labels: Iterable[int], q: Array, p: Array):
        labels = as_index_set(labels)
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        if q.ndim != 3 or p.shape != q.shape:
            raise ContractError(
                f"expected arrays of shape (batch, particles, dim), got {q.shape} / {p.shape}"
            )
        if q.shape[1] != len(labels):
            raise ContractError(f"{len(labels)} labels but {q.shape[1]} particle rows")
        if not (np.isfinite(q).all() and np.isfinite(p).all()):
            raise ContractError("configuration has non-finite components")
        self.labels = labels
        self.q = q
        self.p = p
        self._pos = {lbl: i for i, lbl in enumerate(labels)}

    @classmethod
    def single(cls, labels: Iterable[int], q: Array, p: Array) -> "PhaseConfiguration":
        """Build a batch-of-one configuration from ``(n, nu)`` arrays."""
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        return cls(labels, q[None, :, :], p[None, :, :])

    @classmethod
    def from_points(cls, labels: Iterable[int], points: Sequence[PhasePoint]) -> "PhaseConfiguration":
        q = np.stack([pt.q for pt in points])
        p = np.stack([pt.p for pt in points])
        return cls.single(labels, q, p)

    @property
    def nu(self) -> int:
        return self.q.shape[2]

    @property
    def n_particles(self) -> int:
        return self.q.shape[1]

    @property
    def batch_size(self) -> int:
        return self.q.shape[0]

    def row(self, label: int) -> int:
        try:
            return self._pos[label]
        except KeyError:
            raise ContractError(f"label {label} not in configuration {self.labels}") from None

    def subset(self, labels: Iterable[int]) -> "PhaseConfiguration":
        """Restrict to the given labels (ascending order)."""
        labels = as_index_set(labels)
        if labels == self.labels:
            return self
        rows = [self.row(lbl) for lbl in labels]
        return PhaseConfiguration(labels, self.q[:, rows, :], self.p[:, rows, :])

    def particle(self, label: int) -> tuple[Array, Array]:
        """Arrays ``(batch, nu)`` of one particle's coordinates."""
        i = self.row(label)
        return self.q[:, i, :], self.p[:, i, :]

    def with_arrays(self, q: Array, p: Array) -> "PhaseConfiguration":
        return PhaseConfiguration(self.labels, q, p)

    def __repr__(self) -> str:
        return (
            f"PhaseConfiguration(labels={self.labels}, batch={self.batch_size}, "
            f"n={self.n_particles}, nu={self.nu})"
        )


# ---------------------------------------------------------------------------
# interaction potentials


@dataclass(frozen=True)
class HarmonicPair:
    """Pair potential 0.5 * stiffness * |q_i - q_j|^2."""

    stiffness: float = 1.0
    arity = 2
    kind = "harmonic"

    def value(self, q: Array) -> Array:
        d = q[:, 0, :] - q[:, 1, :]
        return 0.5 * self.stiffness * np.sum(d * d, axis=-1)

    def gradient(self, q: Array) -> Array:
        d = q[:, 0, :] - q[:, 1, :]
        g = self.stiffness * d
        return np.stack([g, -g], axis=1)


@dataclass(frozen=True)
class GaussianPair:
    """Smooth bounded pair potential epsilon * exp(-|q_i - q_j|^2 / (2 sigma^2))."""

    epsilon: float = 1.0
    sigma: float = 1.0
    arity = 2
    kind = "gaussian"

    def value(self, q: Array) -> Array:
        d = q[:, 0, :] - q[:, 1, :]
        return self.epsilon * np.exp(-np.sum(d * d, axis=-1) / (2.0 * self.sigma**2))

    def gradient(self, q: Array) -> Array:
        d = q[:, 0, :] - q[:, 1, :]
        v = self.epsilon * np.exp(-np.sum(d * d, axis=-1) / (2.0 * self.sigma**2))
        g = -(v / self.sigma**2)[:, None] * d
        return np.stack([g, -g], axis=1)


@dataclass(frozen=True)
class GaussianTriple:
    """Genuinely three-body potential, Gaussian in the summed pair separations.

    value = epsilon * exp(-(|d12|^2 + |d13|^2 + |d23|^2) / (2 sigma^2)),
    symmetric under any permutation of the three particles.
    """

    epsilon: float = 1.0
    sigma: float = 1.0
    arity = 3
    kind = "gaussian-triple"

    def value(self, q: Array) -> Array:
        d01 = q[:, 0, :] - q[:, 1, :]
        d02 = q[:, 0, :] - q[:, 2, :]
        d12 = q[:, 1, :] - q[:, 2, :]
        s = np.sum(d01 * d01 + d02 * d02 + d12 * d12, axis=-1)
        return self.epsilon * np.exp(-s / (2.0 * self.sigma**2))

    def gradient(self, q: Array) -> Array:
        v = self.value(q)
        center = q.mean(axis=1, keepdims=True)
        # sum_j (q_i - q_j) = 3 (q_i - mean)
        return (-(v / self.sigma**2))[:, None, None] * 3.0 * (q - center)


@dataclass(frozen=True)
class HarmonicTrap:
    """Optional one-body external potential 0.5 * omega^2 * |q|^2."""

    omega: float = 1.0
    arity = 1
    kind = "harmonic-trap"

    def value(self, q: Array) -> Array:
        return 0.5 * self.omega**2 * np.sum(q[:, 0, :] ** 2, axis=-1)

    def gradient(self, q: Array) -> Array:
        return self.omega**2 * q


@dataclass(frozen=True)
class PotentialFamily:
    """The k-body interaction terms defining the n-particle Hamiltonian.

    At most one term per arity.  The arity-1 slot is an optional external
    field and is absent by default; arities >= 2 are genuine interactions.
    Kinetic energy is always sum |p_i|^2 / 2.
    """

    terms: tuple = ()

    def __post_init__(self) -> None:
        arities = [t.arity for t in self.terms]
        if len(set(arities)) != len(arities):
            raise ContractError(f"duplicate potential arity in {arities}")
        object.__setattr__(self, "terms", tuple(sorted(self.terms, key=lambda t: t.arity)))

    @classmethod
    def zero(cls) -> "PotentialFamily":
        return cls(())

    @classmethod
    def build(cls, *terms) -> "PotentialFamily":
        return cls(tuple(terms))

    def with_external(self, term) -> "PotentialFamily":
        if term.arity != 1:
            raise ContractError("external potential must have arity 1")
        return PotentialFamily(self.terms + (term,))

    def term_for(self, arity: int):
        for t in self.terms:
            if t.arity == arity:
                return t
        return None

    @property
    def interaction_arities(self) -> tuple[int, ...]:
        return tuple(t.arity for t in self.terms if t.arity >= 2)

    @property
    def key(self) -> str:
        """Stable identity string, used as part of trajectory-cache keys."""
        return "|".join(f"{t.kind}{t.arity}:{t}" for t in self.terms) or "free"

    def energy(self, q: Array) -> Array:
        """Total potential energy of a batch, shape ``(batch,)``."""
        n = q.shape[1]
        total = np.zeros(q.shape[0])
        for term in self.terms:
            if term.arity > n:
                continue
            for combo in itertools.combinations(range(n), term.arity):
                total += term.value(q[:, combo, :])
        return total

    def force(self, q: Array) -> Array:
        """-dH/dq for a batch, shape ``(batch, n, nu)``."""
        n = q.shape[1]
        out = np.zeros_like(q)
        for term in self.terms:
            if term.arity > n:
                continue
            for combo in itertools.combinations(range(n), term.arity):
                g = term.gradient(q[:, combo, :])
                for slot, particle in enumerate(combo):
                    out[:, particle, :] -= g[:, slot, :]
        return out


def hamiltonian(cfg: PhaseConfiguration, potential: PotentialFamily) -> Array:
    """H = sum |p_i|^2 / 2 + potential energy, per batch entry."""
    kinetic = 0.5 * np.sum(cfg.p * cfg.p, axis=(1, 2))
    return kinetic + potential.energy(cfg.q)


# ---------------------------------------------------------------------------
# flow maps


@dataclass(frozen=True)
class FlowSolver:
    """Fixed-step integrator realizing the Hamiltonian flow map.

    velocity-verlet (default) is symplectic and volume preserving, which the
    L1-isometry and norm checks rely on; rk4 is kept for convergence
    cross-checks.  ``step`` is the nominal step; the actual step divides the
    requested duration exactly.
    """

    integrator: str = "velocity-verlet"
    step: float = 1e-3
    max_steps: int = 2_000_000

    def __post_init__(self) -> None:
        if self.integrator not in ("velocity-verlet", "rk4"):
            raise ContractError(f"unknown integrator {self.integrator!r}")
        if not (self.step > 0.0 and math.isfinite(self.step)):
            raise ContractError(f"step must be positive, got {self.step}")
        if self.max_steps < 1:
            raise ContractError("max_steps must be >= 1")

    @property
    def key(self) -> str:
        return f"{self.integrator}:{self.step!r}"

    def _n_steps(self, duration: float) -> int:
        # Shrink the ratio by one ulp-ish factor so durations that are exact
        # multiples of `step` do not round up to an extra step.
        n = int(math.ceil(abs(duration) / self.step * (1.0 - 1e-12)))
        n = max(n, 1)
        if n > self.max_steps:
            raise ContractError(
                f"duration {duration} requires {n} steps, above max_steps={self.max_steps}"
            )
        return n

    def propagate(
        self, potential: PotentialFamily, q: Array, p: Array, duration: float
    ) -> tuple[Array, Array]:
        """Advance Hamilton's equations by the signed ``duration``."""
        if duration == 0.0:
            return q.copy(), p.copy()
        n_steps = self._n_steps(duration)
        ds = duration / n_steps
        q = q.copy()
        p = p.copy()
        if self.integrator == "velocity-verlet":
            f = potential.force(q)
            for _ in range(n_steps):
                p_half = p + (0.5 * ds) * f
                q += ds * p_half
                f = potential.force(q)
                p = p_half + (0.5 * ds) * f
        else:  # rk4 on (dq/ds, dp/ds) = (p, force(q))
            for _ in range(n_steps):
                k1q, k1p = p, potential.force(q)
                k2q = p + 0.5 * ds * k1p
                k2p = potential.force(q + 0.5 * ds * k1q)
                k3q = p + 0.5 * ds * k2p
                k3p = potential.force(q + 0.5 * ds * k2q)
                k4q = p + ds * k3p
                k4p = potential.force(q + ds * k3q)
                q = q + (ds / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
                p = p + (ds / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        if not (np.isfinite(q).all() and np.isfinite(p).all()):
            raise FlowDivergenceError(
                "trajectory became non-finite; the potential violates the smoothness contract"
            )
        return q, p


def flow_backward(
    cfg: PhaseConfiguration, potential: PotentialFamily, t: float, solver: FlowSolver
) -> PhaseConfiguration:
    """Characteristics at -t: where the trajectory through ``cfg`` sat a time t ago.

    ``t = 0`` returns the input configuration unchanged (bitwise); negative t
    flows forward.
    """
    if t == 0.0:
        return cfg
    q, p = solver.propagate(potential, cfg.q, cfg.p, -t)
    return cfg.with_arrays(q, p)


def apply_flow_operator(
    f: "PhaseFunction",
    cfg: PhaseConfiguration,
    potential: PotentialFamily,
    t: float,
    solver: FlowSolver,
) -> Array:
    """Pull ``f`` back along the backward characteristics: f evaluated at the
    flowed configuration.  Shape ``(batch,)``."""
    if f.arity != cfg.n_particles:
        raise ContractError(f"function arity {f.arity} != configuration size {cfg.n_particles}")
    flowed = flow_backward(cfg, potential, t, solver)
    return f.value(flowed.q, flowed.p)


# ---------------------------------------------------------------------------
# phase functions


class PhaseFunction:
    """An evaluable scalar function on n-particle phase space.

    Subclasses provide ``value``; gradients fall back to central finite
    differences with ``fd_step`` unless analytic ones are supplied.
    ``l1_norm_exact`` is set when the integral of |f| is known in closed form.
    """

    def __init__(
        self,
        arity: int,
        nu: int,
        symmetric: bool = False,
        fd_step: float | None = None,
        l1_norm_exact: float | None = None,
    ):
        if arity < 1 or nu < 1:
            raise ContractError(f"arity and nu must be >= 1, got {arity}, {nu}")
        self.arity = arity
        self.nu = nu
        self.symmetric = symmetric
        self.fd_step = fd_step
        self.l1_norm_exact = l1_norm_exact

    # -- evaluation ---------------------------------------------------------

    def value(self, q: Array, p: Array) -> Array:
        raise NotImplementedError

    def evaluate(self, cfg: PhaseConfiguration) -> Array:
        if cfg.n_particles != self.arity:
            raise ContractError(f"arity {self.arity} function applied to {cfg.n_particles} particles")
        if cfg.nu != self.nu:
            raise ContractError(f"dimension mismatch: function nu={self.nu}, configuration nu={cfg.nu}")
        return self.value(cfg.q, cfg.p)

    # -- derivatives --------------------------------------------------------

    @property
    def has_analytic_gradients(self) -> bool:
        return False

    def _fd(self, q: Array, p: Array, wrt_q: bool, step: float | None = None) -> Array:
        h = step if step is not None else self.fd_step
        if h is None:
            raise ContractError(
                "no analytic gradient and no fd_step configured for this phase function"
            )
        base = q if wrt_q else p
        out = np.empty_like(base)
        for i in range(self.arity):
            for d in range(self.nu):
                hi = base.copy()
                hi[:, i, d] += h
                lo = base.copy()
                lo[:, i, d] -= h
                if wrt_q:
                    out[:, i, d] = (self.value(hi, p) - self.value(lo, p)) / (2.0 * h)
                else:
                    out[:, i, d] = (self.value(q, hi) - self.value(q, lo)) / (2.0 * h)
        return out

    def grad_q(self, q: Array, p: Array) -> Array:
        """d f / d q, shape ``(batch, arity, nu)``."""
        return self._fd(q, p, wrt_q=True)

    def grad_p(self, q: Array, p: Array) -> Array:
        """d f / d p, shape ``(batch, arity, nu)``."""
        return self._fd(q, p, wrt_q=False)


class GaussianMixture(PhaseFunction):
    """Weighted sum of normalized product Gaussians on n-particle phase space.

    Each component places the same (q_center, p_center, scales) factor on
    every particle, so the mixture is permutation symmetric by construction;
    components are normalized densities, so the mixture integrates to the
    weight sum and |f| is integrable for any finite weights (weights may be
    negative: correlation functions are not densities).
    """

    def __init__(
        self,
        arity: int,
        nu: int,
        weights: Sequence[float],
        q_centers: Array,
        p_centers: Array,
        q_scales: Sequence[float],
        p_scales: Sequence[float],
    ):
        w = np.asarray(weights, dtype=float)
        qc = np.asarray(q_centers, dtype=float).reshape(len(w), nu)
        pc = np.asarray(p_centers, dtype=float).reshape(len(w), nu)
        sq = np.asarray(q_scales, dtype=float).reshape(len(w))
        sp = np.asarray(p_scales, dtype=float).reshape(len(w))
        if np.any(sq <= 0) or np.any(sp <= 0):
            raise ContractError("gaussian scales must be positive")
        exact = float(np.sum(w)) if np.all(w >= 0) else None
        super().__init__(arity, nu, symmetric=True, l1_norm_exact=exact)
        self.weights = w
        self.q_centers = qc
        self.p_centers = pc
        self.q_scales = sq
        self.p_scales = sp
        # (components,) normalization of one particle factor, q and p parts
        self._log_norm = -0.5 * arity * nu * (
            np.log(2.0 * np.pi * sq**2) + np.log(2.0 * np.pi * sp**2)
        )

    @classmethod
    def standard(
        cls,
        arity: int,
        nu: int,
        weight: float = 1.0,
        q_center: Sequence[float] | float = 0.0,
        p_center: Sequence[float] | float = 0.0,
        q_scale: float = 1.0,
        p_scale: float = 1.0,
    ) -> "GaussianMixture":
        qc = np.broadcast_to(np.asarray(q_center, dtype=float), (nu,))
        pc = np.broadcast_to(np.asarray(p_center, dtype=float), (nu,))
        return cls(arity, nu, [weight], qc[None], pc[None], [q_scale], [p_scale])

    def _components(self, q: Array, p: Array) -> Array:
        # (batch, components): value of each normalized component
        dq = q[:, None, :, :] - self.q_centers[None, :, None, :]
        dp = p[:, None, :, :] - self.p_centers[None, :, None, :]
        eq = -0.5 * np.sum(dq * dq, axis=(2, 3)) / self.q_scales[None, :] ** 2
        ep = -0.5 * np.sum(dp * dp, axis=(2, 3)) / self.p_scales[None, :] ** 2
        return np.exp(eq + ep + self._log_norm[None, :])

    def value(self, q: Array, p: Array) -> Array:
        return self._components(q, p) @ self.weights

    @property
    def has_analytic_gradients(self) -> bool:
        return True

    def grad_q(self, q: Array, p: Array) -> Array:
        comp = self._components(q, p) * self.weights[None, :]
        dq = q[:, None, :, :] - self.q_centers[None, :, None, :]
        contrib = comp[:, :, None, None] * (-dq / self.q_scales[None, :, None, None] ** 2)
        return contrib.sum(axis=1)

    def grad_p(self, q: Array, p: Array) -> Array:
        comp = self._components(q, p) * self.weights[None, :]
        dp = p[:, None, :, :] - self.p_centers[None, :, None, :]
        contrib = comp[:, :, None, None] * (-dp / self.p_scales[None, :, None, None] ** 2)
        return contrib.sum(axis=1)


def random_gaussian_mixture(
    rng: np.random.Generator,
    arity: int,
    nu: int,
    n_components: int = 2,
    signed: bool = True,
) -> GaussianMixture:
    """Random smooth test function with O(1) values and finite L1 norm."""
    weights = rng.uniform(0.3, 1.0, n_components)
    if signed and n_components > 1:
        weights[rng.integers(0, n_components)] *= -0.5
    return GaussianMixture(
        arity,
        nu,
        weights,
        rng.uniform(-0.8, 0.8, (n_components, nu)),
        rng.uniform(-0.8, 0.8, (n_components, nu)),
        rng.uniform(0.8, 1.4, n_components),
        rng.uniform(0.8, 1.4, n_components),
    )


class CallablePhaseFunction(PhaseFunction):
    """Wrap a batched evaluator ``fn(q, p) -> (batch,)`` as a phase function."""

    def __init__(
        self,
        arity: int,
        nu: int,
        fn: Callable[[Array, Array], Array],
        symmetric: bool = False,
        fd_step: float | None = None,
        grad_q_fn: Callable[[Array, Array], Array] | None = None,
        grad_p_fn: Callable[[Array, Array], Array] | None = None,
        l1_norm_exact: float | None = None,
    ):
        super().__init__(arity, nu, symmetric=symmetric, fd_step=fd_step, l1_norm_exact=l1_norm_exact)
        self._fn = fn
        self._grad_q_fn = grad_q_fn
        self._grad_p_fn = grad_p_fn

    def value(self, q: Array, p: Array) -> Array:
        return np.asarray(self._fn(q, p), dtype=float)

    @property
    def has_analytic_gradients(self) -> bool:
        return self._grad_q_fn is not None and self._grad_p_fn is not None

    def grad_q(self, q: Array, p: Array) -> Array:
        if self._grad_q_fn is not None:
            return np.asarray(self._grad_q_fn(q, p), dtype=float)
        return self._fd(q, p, wrt_q=True)

    def grad_p(self, q: Array, p: Array) -> Array:
        if self._grad_p_fn is not None:
            return np.asarray(self._grad_p_fn(q, p), dtype=float)
        return self._fd(q, p, wrt_q=False)


# ---------------------------------------------------------------------------
# Liouville generator


def apply_liouville(
    f_product: Sequence[tuple[PhaseFunction, Iterable[int]]],
    generator_scope: Iterable[int],
    potential: PotentialFamily,
    cfg: PhaseConfiguration,
    mode: str = "full",
    fd_step: float | None = None,
) -> Array:
    """Apply the negated Liouville generator to a product of phase functions.

    ``f_product`` pairs each factor with the (disjoint) particle labels it
    depends on.  The result, shape ``(batch,)``, is

    * mode="full":  -sum_{i in scope} <p_i, dF/dq_i>
      + sum over k-body potential terms and k-tuples T inside the scope of
      sum_{j in T} <dPhi_k/dq_j, dF/dp_j>,
    * mode="interaction_only": only the single potential term whose arity
      equals |scope|, contracted over the scope tuple itself (zero when the
      family has no term of that arity).

    Derivatives of the product use the Leibniz rule; factors without analytic
    gradients fall back to central differences with ``fd_step``.
    """
    if mode not in ("full", "interaction_only"):
        raise ContractError(f"unknown mode {mode!r}")
    scope = as_index_set(generator_scope)
    factors: list[tuple[PhaseFunction, IndexSet]] = []
    seen: set[int] = set()
    for f, labels in f_product:
        labels = as_index_set(labels)
        if f.arity != len(labels):
            raise ContractError(f"factor arity {f.arity} != label count {len(labels)}")
        if seen & set(labels):
            raise ContractError(f"factor index sets overlap at {seen & set(labels)}")
        seen.update(labels)
        factors.append((f, labels))
    if not set(scope) <= seen:
        raise ContractError(f"scope {scope} not covered by factor labels {sorted(seen)}")

    m = cfg.batch_size
    owner: dict[int, int] = {}
    subs: list[PhaseConfiguration] = []
    values: list[Array] = []
    for idx, (f, labels) in enumerate(factors):
        for lbl in labels:
            owner[lbl] = idx
        sub = cfg.subset(labels)
        if sub.nu != f.nu:
            raise ContractError("dimension mismatch between factor and configuration")
        subs.append(sub)
        values.append(f.value(sub.q, sub.p))

    # product of all factor values except one, per factor
    others = []
    for idx in range(len(factors)):
        rest = np.ones(m)
        for jdx, v in enumerate(values):
            if jdx != idx:
                rest = rest * v
        others.append(rest)

    grads_q: dict[int, Array] = {}
    grads_p: dict[int, Array] = {}

    def factor_grads(idx: int) -> tuple[Array, Array]:
        if idx not in grads_q:
            f, _ = factors[idx]
            sub = subs[idx]
            if f.has_analytic_gradients:
                grads_q[idx] = f.grad_q(sub.q, sub.p)
                grads_p[idx] = f.grad_p(sub.q, sub.p)
            else:
                h = f.fd_step if f.fd_step is not None else fd_step
                if h is None:
                    raise ContractError("fd_step required: a factor lacks analytic gradients")
                grads_q[idx] = f._fd(sub.q, sub.p, wrt_q=True, step=h)
                grads_p[idx] = f._fd(sub.q, sub.p, wrt_q=False, step=h)
        return grads_q[idx], grads_p[idx]

    def dF_dq(label: int) -> Array:
        idx = owner[label]
        gq, _ = factor_grads(idx)
        return gq[:, subs[idx].row(label), :] * others[idx][:, None]

    def dF_dp(label: int) -> Array:
        idx = owner[label]
        _, gp = factor_grads(idx)
        return gp[:, subs[idx].row(label), :] * others[idx][:, None]

    result = np.zeros(m)

    if mode == "full":
        for lbl in scope:
            p_i = cfg.particle(lbl)[1]
            result -= np.sum(p_i * dF_dq(lbl), axis=-1)
        for term in potential.terms:
            k = term.arity
            if k > len(scope):
                continue
            for tup in itertools.combinations(scope, k):
                rows = [cfg.row(lbl) for lbl in tup]
                grad_phi = term.gradient(cfg.q[:, rows, :])
                for slot, lbl in enumerate(tup):
                    result += np.sum(grad_phi[:, slot, :] * dF_dp(lbl), axis=-1)
    else:
        # the |scope|-body interaction operator over exactly the scope tuple;
        # one-body external fields are not interaction terms
        term = potential.term_for(len(scope))
        if term is not None and term.arity >= 2:
            rows = [cfg.row(lbl) for lbl in scope]
            grad_phi = term.gradient(cfg.q[:, rows, :])
            for slot, lbl in enumerate(scope):
                result += np.sum(grad_phi[:, slot, :] * dF_dp(lbl), axis=-1)

    return result
