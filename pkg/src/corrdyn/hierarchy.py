"""Cluster-cumulant algebra for correlation dynamics.

The evolved n-particle correlation function is a signed sum over set
partitions: each partition contributes a cumulant of backward-flow operators
(blocks merged into clusters evolve under one joint Hamiltonian flow) applied
to the product of initial correlation functions on the blocks.  This module
implements that expansion, the moment/cumulant transforms between
correlation and distribution sequences, the equivalent flow-the-distributions
route, the factorized-initial-data shortcut, the scattering-operator
representation, and the right-hand side of the correlation hierarchy.

Everything is evaluated pointwise (batched) at phase configurations; flows
are pullbacks along numerically integrated characteristics.  Identical
cluster flows recur across many partition terms, so trajectories are
memoized on the evaluation context.
"""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .dynamics import (
    Array,
    CallablePhaseFunction,
    FlowSolver,
    PhaseConfiguration,
    PhaseFunction,
    PotentialFamily,
    apply_liouville,
)
from .errors import ContractError, SizeLimitError
from .partitions import (
    IndexSet,
    Partition,
    SubsetSelection,
    enumerate_block_partitions,
    enumerate_partitions,
    enumerate_subset_selections,
    merged_labels,
    mobius_coefficient,
)


# ---------------------------------------------------------------------------
# sequences of n-particle functions


@dataclass(frozen=True)
class CorrelationSequence:
    """Per-arity correlation functions; absent arities read as the zero function."""

    functions: Mapping[int, PhaseFunction]

    def __post_init__(self) -> None:
        for n, f in self.functions.items():
            if n < 1:
                raise ContractError(f"arity must be >= 1, got {n}")
            if f.arity != n:
                raise ContractError(f"function at arity {n} has arity {f.arity}")

    @classmethod
    def chaos(cls, g1: PhaseFunction) -> "CorrelationSequence":
        """Factorized initial data: one-particle function only, all higher
        correlations identically zero."""
        if g1.arity != 1:
            raise ContractError("chaos data requires a one-particle function")
        return cls({1: g1})

    def get(self, n: int) -> PhaseFunction | None:
        return self.functions.get(n)

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(sorted(self.functions))

    @property
    def nu(self) -> int:
        return next(iter(self.functions.values())).nu

    @property
    def is_chaos(self) -> bool:
        return self.arities == (1,)


@dataclass(frozen=True)
class DistributionSequence:
    """Per-arity probability densities; all arities up to the point of use
    must be present."""

    functions: Mapping[int, PhaseFunction]

    def __post_init__(self) -> None:
        for n, f in self.functions.items():
            if n < 1 or f.arity != n:
                raise ContractError(f"bad arity {n} -> function arity {f.arity}")

    def require(self, n: int) -> PhaseFunction:
        f = self.functions.get(n)
        if f is None:
            raise ContractError(f"distribution sequence is missing arity {n}")
        return f

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(sorted(self.functions))


# ---------------------------------------------------------------------------
# evaluation context with trajectory memoization


def _digest(q: Array, p: Array) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(q.shape).encode())
    h.update(q.tobytes())
    h.update(p.tobytes())
    return h.digest()


@dataclass
class EvaluationContext:
    """Potential, solver, caps, and the trajectory cache shared by all
    expansion evaluations.

    The cache key includes the particle labels, the flow time, and a digest
    of the starting arrays, so lookups are exact; a lock makes concurrent
    lookups safe (they only deduplicate work).  Entries are evicted FIFO once
    the byte budget is exceeded.
    """

    potential: PotentialFamily
    solver: FlowSolver
    partition_cap: int = 8
    fd_step: float = 1e-4
    cache_limit_bytes: int = 512 * 2**20
    _cache: "OrderedDict[tuple, tuple[Array, Array]]" = field(
        default_factory=OrderedDict, repr=False
    )
    _cache_bytes: int = field(default=0, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    cache_hits: int = field(default=0, repr=False)
    cache_misses: int = field(default=0, repr=False)

    def flow_subset(self, cfg: PhaseConfiguration, labels: Iterable[int], t: float) -> PhaseConfiguration:
        """Backward characteristics at -t of the sub-configuration on
        ``labels``, the whole cluster flowing under one joint Hamiltonian."""
        sub = cfg.subset(labels)
        if t == 0.0:
            return sub
        key = (sub.labels, float(t), self.potential.key, self.solver.key, _digest(sub.q, sub.p))
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self.cache_hits += 1
                return sub.with_arrays(*hit)
            self.cache_misses += 1
        q, p = self.solver.propagate(self.potential, sub.q, sub.p, -t)
        with self._lock:
            if key not in self._cache:
                self._cache[key] = (q, p)
                self._cache_bytes += q.nbytes + p.nbytes
                while self._cache_bytes > self.cache_limit_bytes and len(self._cache) > 1:
                    _, (q0, p0) = self._cache.popitem(last=False)
                    self._cache_bytes -= q0.nbytes + p0.nbytes
        return sub.with_arrays(q, p)

    def flow_single(self, label: int, q: Array, p: Array, t: float) -> tuple[Array, Array]:
        """One-particle characteristics at -t for ``(batch, nu)`` arrays."""
        cfg = PhaseConfiguration((label,), q[:, None, :], p[:, None, :])
        flowed = self.flow_subset(cfg, (label,), t)
        return flowed.q[:, 0, :], flowed.p[:, 0, :]

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()
            self._cache_bytes = 0

    @property
    def cache_stats(self) -> dict:
        return {
            "entries": len(self._cache),
            "bytes": self._cache_bytes,
            "hits": self.cache_hits,
            "misses": self.cache_misses,
        }


def _check_labels(cfg: PhaseConfiguration, n: int) -> IndexSet:
    if cfg.n_particles != n:
        raise ContractError(f"expected {n} particles, configuration has {cfg.n_particles}")
    return cfg.labels


def _partitions_for(ctx: EvaluationContext, labels: IndexSet) -> list[Partition]:
    if len(labels) > ctx.partition_cap:
        raise SizeLimitError(
            f"{len(labels)} particles exceed the partition cap {ctx.partition_cap}"
        )
    return enumerate_partitions(labels, cap=ctx.partition_cap)


# ---------------------------------------------------------------------------
# cumulants and the solution expansion


def cumulant_apply(
    t: float,
    partition: Partition,
    initial: CorrelationSequence,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> Array:
    """Cumulant of flow operators over the partition's blocks, applied to the
    product of initial correlation functions on those blocks.

    Sum over all merges of the blocks into cluster groups: the Moebius
    coefficient of the merge times the product of block functions evaluated
    at coordinates flowed jointly within each merged cluster.  At t = 0 the
    flows are identities and the signed sum cancels exactly for two or more
    blocks.
    """
    if not set(partition.ground) <= set(cfg.labels):
        raise ContractError(
            f"configuration labels {cfg.labels} do not cover partition ground {partition.ground}"
        )
    blocks = partition.blocks
    factors = [initial.get(len(b)) for b in blocks]
    m = cfg.batch_size
    if any(f is None for f in factors):
        return np.zeros(m)
    out = np.zeros(m)
    for merge in enumerate_block_partitions(partition, cap=ctx.partition_cap):
        coeff = mobius_coefficient(len(merge))
        term = np.ones(m)
        for group in merge.groups:
            cluster = merged_labels(partition, group)
            flowed = ctx.flow_subset(cfg, cluster, t)
            for bi in group:
                sub = flowed.subset(blocks[bi])
                term = term * factors[bi].value(sub.q, sub.p)
        out += coeff * term
    return out


def solve_g(
    t: float,
    n: int,
    initial: CorrelationSequence,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> Array:
    """Evolved n-particle correlation function at the configuration.

    Signed partition expansion: sum over partitions of the label set of the
    block-cumulant applied to the product of initial correlations.
    Partitions whose operand contains an absent (identically zero) arity are
    skipped; that skip is exact.
    """
    labels = _check_labels(cfg, n)
    total = np.zeros(cfg.batch_size)
    for partition in _partitions_for(ctx, labels):
        if any(initial.get(len(b)) is None for b in partition.blocks):
            continue
        total += cumulant_apply(t, partition, initial, cfg, ctx)
    return total


# ---------------------------------------------------------------------------
# moment/cumulant transforms on the partition lattice


def g_from_D(distributions: DistributionSequence, n: int, cfg: PhaseConfiguration) -> Array:
    """Correlation function from distribution functions at one time slice:
    signed Moebius sum over partitions of products of block distributions."""
    labels = _check_labels(cfg, n)
    for size in range(1, n + 1):
        distributions.require(size)
    total = np.zeros(cfg.batch_size)
    for partition in enumerate_partitions(labels):
        term = np.full(cfg.batch_size, float(mobius_coefficient(len(partition))))
        for block in partition.blocks:
            sub = cfg.subset(block)
            term = term * distributions.require(len(block)).value(sub.q, sub.p)
        total += term
    return total


def D_from_g(correlations: CorrelationSequence, n: int, cfg: PhaseConfiguration) -> Array:
    """Inverse cluster expansion: distribution as the plain partition sum of
    products of correlation functions (absent arities contribute zero)."""
    labels = _check_labels(cfg, n)
    total = np.zeros(cfg.batch_size)
    for partition in enumerate_partitions(labels):
        factors = [correlations.get(len(b)) for b in partition.blocks]
        if any(f is None for f in factors):
            continue
        term = np.ones(cfg.batch_size)
        for f, block in zip(factors, partition.blocks):
            sub = cfg.subset(block)
            term = term * f.value(sub.q, sub.p)
        total += term
    return total


def solve_g_via_D(
    t: float,
    n: int,
    initial: CorrelationSequence,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> Array:
    """The composed route: expand the initial distributions out of the initial
    correlations, flow each partition block jointly, and Moebius-transform
    back.  Algebraically identical to :func:`solve_g` (same flows, different
    summation order)."""
    labels = _check_labels(cfg, n)
    total = np.zeros(cfg.batch_size)
    for partition in _partitions_for(ctx, labels):
        coeff = mobius_coefficient(len(partition))
        prod = np.ones(cfg.batch_size)
        for block in partition.blocks:
            flowed = ctx.flow_subset(cfg, block, t)
            prod = prod * D_from_g(initial, len(block), flowed)
        total += coeff * prod
    return total


# ---------------------------------------------------------------------------
# factorized initial data and the scattering representation


def solve_g_chaos(
    t: float,
    n: int,
    g1_initial: PhaseFunction,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> Array:
    """Evolution from factorized initial data: the single n-th order cumulant
    applied to the product of one-particle initial functions."""
    labels = _check_labels(cfg, n)
    singletons = Partition.of(*[(lbl,) for lbl in labels])
    return cumulant_apply(t, singletons, CorrelationSequence.chaos(g1_initial), cfg, ctx)


def evolved_g1(g1_initial: PhaseFunction, t: float, ctx: EvaluationContext) -> PhaseFunction:
    """The one-particle correlation function at time t: pullback of the
    initial function along the one-particle backward flow."""

    def fn(q: Array, p: Array) -> Array:
        qf, pf = ctx.flow_single(0, q[:, 0, :], p[:, 0, :], t)
        return g1_initial.value(qf[:, None, :], pf[:, None, :])

    return CallablePhaseFunction(
        1, g1_initial.nu, fn, symmetric=True, fd_step=ctx.fd_step
    )


def scattering_cumulant_apply(
    t: float,
    n: int,
    g1_evolved: PhaseFunction,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> Array:
    """Cumulant of scattering operators applied to the product of evolved
    one-particle functions.

    Each cluster's scattering operator is the joint backward flow composed
    with independent single-particle forward flows, so with no interaction it
    degenerates to the identity and every cumulant of order >= 2 vanishes.
    ``g1_evolved`` must already be the time-t one-particle function.
    """
    labels = _check_labels(cfg, n)
    if n < 2:
        raise ContractError("scattering cumulants are defined for n >= 2")
    total = np.zeros(cfg.batch_size)
    for partition in _partitions_for(ctx, labels):
        coeff = mobius_coefficient(len(partition))
        term = np.ones(cfg.batch_size)
        for cluster in partition.blocks:
            back = ctx.flow_subset(cfg, cluster, t)
            for lbl in cluster:
                qb, pb = back.particle(lbl)
                qs, ps = ctx.flow_single(lbl, qb, pb, -t)
                term = term * g1_evolved.value(qs[:, None, :], ps[:, None, :])
        total += coeff * term
    return total


# ---------------------------------------------------------------------------
# hierarchy right-hand side


@dataclass(frozen=True)
class GeneratorTerm:
    """One additive contribution to the hierarchy right-hand side."""

    kind: str  # "linear" | "collision"
    partition: Partition | None
    selection: SubsetSelection | None
    scope: IndexSet
    value: Array


def hierarchy_generator_terms(
    g_slice: CorrelationSequence,
    n: int,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> Iterator[GeneratorTerm]:
    """Itemized right-hand side of the correlation hierarchy at one time slice.

    The linear term applies the full negated Liouville generator to the
    n-particle function; every multi-block partition contributes, for each
    choice of one nonempty subset per block, the interaction operator of the
    subset union's arity acting on the product of block functions.
    """
    labels = _check_labels(cfg, n)
    gn = g_slice.get(n)
    if gn is not None:
        value = apply_liouville(
            [(gn, labels)], labels, ctx.potential, cfg, mode="full", fd_step=ctx.fd_step
        )
        yield GeneratorTerm("linear", None, None, labels, value)
    for partition in _partitions_for(ctx, labels):
        if len(partition) < 2:
            continue
        factors = [(g_slice.get(len(b)), b) for b in partition.blocks]
        if any(f is None for f, _ in factors):
            continue
        for selection in enumerate_subset_selections(partition):
            scope = selection.union
            value = apply_liouville(
                factors, scope, ctx.potential, cfg, mode="interaction_only", fd_step=ctx.fd_step
            )
            yield GeneratorTerm("collision", partition, selection, scope, value)


def apply_hierarchy_generator(
    g_slice: CorrelationSequence,
    n: int,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> Array:
    """Full right-hand side of the correlation hierarchy (sum of all terms)."""
    total = np.zeros(cfg.batch_size)
    for term in hierarchy_generator_terms(g_slice, n, cfg, ctx):
        total += term.value
    return total


def collision_sum_direct(
    g_slice: CorrelationSequence,
    partition: Partition,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> Array:
    """Collision contribution of one partition, summed over subset selections
    (the form appearing in the hierarchy itself)."""
    factors = [(g_slice.get(len(b)), b) for b in partition.blocks]
    if any(f is None for f, _ in factors):
        return np.zeros(cfg.batch_size)
    total = np.zeros(cfg.batch_size)
    for selection in enumerate_subset_selections(partition):
        total += apply_liouville(
            factors, selection.union, ctx.potential, cfg, mode="interaction_only", fd_step=ctx.fd_step
        )
    return total


def collision_sum_via_cluster_generators(
    g_slice: CorrelationSequence,
    partition: Partition,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> Array:
    """The same collision contribution written as a signed sum of full
    cluster Liouvillians over block merges (the form arising when the
    solution expansion is differentiated).  Kinetic parts cancel in the
    signed sum; equality with :func:`collision_sum_direct` is a nontrivial
    lattice identity asserted by the tests."""
    factors = [(g_slice.get(len(b)), b) for b in partition.blocks]
    if any(f is None for f, _ in factors):
        return np.zeros(cfg.batch_size)
    total = np.zeros(cfg.batch_size)
    for merge in enumerate_block_partitions(partition, cap=ctx.partition_cap):
        coeff = mobius_coefficient(len(merge))
        for group in merge.groups:
            cluster = merged_labels(partition, group)
            total += coeff * apply_liouville(
                factors, cluster, ctx.potential, cfg, mode="full", fd_step=ctx.fd_step
            )
    return total


# ---------------------------------------------------------------------------
# time slices and the evolution group


def time_slice(
    initial: CorrelationSequence,
    t: float,
    ctx: EvaluationContext,
    max_arity: int,
    nu: int | None = None,
) -> CorrelationSequence:
    """Materialize the evolved sequence at time t as lazy evaluators.

    Each arity's function calls the solution expansion on demand, so the
    slice can be fed back into any operation that consumes a sequence
    (nested evaluations re-enumerate partitions; fine at desk scale).
    """
    nu = initial.nu if nu is None else nu
    functions: dict[int, PhaseFunction] = {}
    for m in range(1, max_arity + 1):
        def fn(q: Array, p: Array, m: int = m) -> Array:
            cfg = PhaseConfiguration(tuple(range(1, m + 1)), q, p)
            return solve_g(t, m, initial, cfg, ctx)

        functions[m] = CallablePhaseFunction(m, nu, fn, symmetric=True, fd_step=ctx.fd_step)
    return CorrelationSequence(functions)


def compose_evolution(
    t1: float,
    t2: float,
    n: int,
    initial: CorrelationSequence,
    cfg: PhaseConfiguration,
    ctx: EvaluationContext,
) -> tuple[Array, Array]:
    """Group-property comparison pair.

    Returns (two-step value, one-step value): evolving the already-evolved
    time-t2 slice for a further t1 versus evolving the initial data for
    t1 + t2 in one go.
    """
    intermediate = time_slice(initial, t2, ctx, max_arity=n, nu=cfg.nu)
    two_step = solve_g(t1, n, intermediate, cfg, ctx)
    one_step = solve_g(t1 + t2, n, initial, cfg, ctx)
    return two_step, one_step
