"""Acceptance suite: every exit criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one timed
pass/fail line per criterion.
"""

import time
from contextlib import contextmanager
from math import comb, e, factorial

import numpy as np
import pytest

from corrdyn.dynamics import (
    FlowSolver,
    GaussianMixture,
    GaussianPair,
    GaussianTriple,
    HarmonicPair,
    PhaseConfiguration,
    PotentialFamily,
    random_gaussian_mixture,
)
from corrdyn.hierarchy import (
    CorrelationSequence,
    DistributionSequence,
    EvaluationContext,
    D_from_g,
    apply_hierarchy_generator,
    compose_evolution,
    cumulant_apply,
    evolved_g1,
    g_from_D,
    hierarchy_generator_terms,
    scattering_cumulant_apply,
    solve_g,
    solve_g_chaos,
    solve_g_via_D,
    time_slice,
)
from corrdyn.dynamics import CallablePhaseFunction
from corrdyn.partitions import (
    enumerate_partitions,
    enumerate_subset_selections,
)
from corrdyn.verify import McQuadrature, check_isometry, check_norm_bound


@contextmanager
def criterion(num, title, budget_s):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {num:02d} {title} ({time.perf_counter() - start:.2f}s)")
        raise
    elapsed = time.perf_counter() - start
    status = "PASS" if elapsed < budget_s else "FAIL"
    print(f"[{status}] criterion {num:02d} {title} ({elapsed:.2f}s, budget {budget_s:.0f}s)")
    assert elapsed < budget_s, f"runtime {elapsed:.1f}s over the {budget_s:.0f}s budget"


def labeled(n):
    return tuple(range(1, n + 1))


def random_points(n, count, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return PhaseConfiguration(
        labeled(n),
        scale * rng.standard_normal((count, n, 1)),
        scale * rng.standard_normal((count, n, 1)),
    )


def smooth_sequence(max_arity, seed=5):
    rng = np.random.default_rng(seed)
    functions = {}
    for a in range(1, max_arity + 1):
        functions[a] = GaussianMixture(
            a,
            1,
            [1.0, -0.35],
            rng.uniform(-0.5, 0.5, (2, 1)),
            rng.uniform(-0.5, 0.5, (2, 1)),
            rng.uniform(0.9, 1.3, 2),
            rng.uniform(0.9, 1.3, 2),
        )
    return CorrelationSequence(functions)


def test_criterion_01_free_flow_exactness():
    with criterion(1, "free-flow exactness", 1.0):
        ctx = EvaluationContext(PotentialFamily.zero(), FlowSolver(step=1e-3))
        g1 = GaussianMixture.standard(1, 1, q_scale=0.9, p_scale=1.1)
        seq = CorrelationSequence.chaos(g1)
        cfg = random_points(1, 1000, seed=101)
        for t in (0.37, 1.0):
            got = solve_g(t, 1, seq, cfg, ctx)
            want = g1.value(cfg.q - cfg.p * t, cfg.p)
            err = np.abs(got - want).max()
            assert err <= 1e-10, f"t={t}: free-flow error {err:.2e}"


def test_criterion_02_partition_combinatorics():
    with criterion(2, "partition combinatorics", 5.0):
        bell = [1]
        for k in range(8):
            bell.append(sum(comb(k, j) * bell[j] for j in range(k + 1)))
        assert bell[1:9] == [1, 2, 5, 15, 52, 203, 877, 4140]
        for n in range(1, 9):
            parts = enumerate_partitions(labeled(n))
            assert len(parts) == bell[n], f"n={n}"
            for p in parts:
                sels = enumerate_subset_selections(p)
                expected = 1
                for b in p.blocks:
                    expected *= 2 ** len(b) - 1
                assert len(sels) == expected, f"selection count for {p.blocks}"


def test_criterion_03_mobius_round_trip():
    with criterion(3, "Moebius round trip", 10.0):
        rng = np.random.default_rng(103)
        for n in range(1, 6):
            g = CorrelationSequence({a: random_gaussian_mixture(rng, a, 1) for a in range(1, n + 1)})
            dens = DistributionSequence(
                {a: random_gaussian_mixture(rng, a, 1, signed=False) for a in range(1, n + 1)}
            )
            cfg = random_points(n, 100, seed=200 + n)
            d_of_g = DistributionSequence(
                {
                    a: CallablePhaseFunction(
                        a, 1, lambda q, p, a=a: D_from_g(g, a, PhaseConfiguration(labeled(a), q, p))
                    )
                    for a in range(1, n + 1)
                }
            )
            err_g = np.abs(g_from_D(d_of_g, n, cfg) - g.get(n).evaluate(cfg)).max()
            g_of_d = CorrelationSequence(
                {
                    a: CallablePhaseFunction(
                        a, 1, lambda q, p, a=a: g_from_D(dens, a, PhaseConfiguration(labeled(a), q, p))
                    )
                    for a in range(1, n + 1)
                }
            )
            err_d = np.abs(D_from_g(g_of_d, n, cfg) - dens.require(n).evaluate(cfg)).max()
            assert err_g <= 1e-12, f"g->D->g at n={n}: {err_g:.2e}"
            assert err_d <= 1e-12, f"D->g->D at n={n}: {err_d:.2e}"


def test_criterion_04_initial_condition_and_cancellation():
    with criterion(4, "t=0 identities", 10.0):
        ctx = EvaluationContext(PotentialFamily.build(HarmonicPair(1.0)), FlowSolver(step=1e-3))
        for n in range(1, 6):
            seq = smooth_sequence(n, seed=300 + n)
            cfg = random_points(n, 50, seed=400 + n)
            err0 = np.abs(solve_g(0.0, n, seq, cfg, ctx) - seq.get(n).evaluate(cfg)).max()
            assert err0 <= 1e-12, f"initial condition at n={n}: {err0:.2e}"
            for part in enumerate_partitions(labeled(n)):
                if len(part) < 2:
                    continue
                errc = np.abs(cumulant_apply(0.0, part, seq, cfg, ctx)).max()
                assert errc <= 1e-12, f"cumulant at t=0 for {part.blocks}: {errc:.2e}"


def test_criterion_05_route_equivalence():
    with criterion(5, "route equivalence", 120.0):
        potentials = (
            PotentialFamily.build(HarmonicPair(1.0)),
            PotentialFamily.build(GaussianPair(1.0, 1.0)),
        )
        for pot in potentials:
            ctx = EvaluationContext(pot, FlowSolver(step=1e-3))
            for n in range(1, 5):
                seq = smooth_sequence(n, seed=500 + n)
                cfg = random_points(n, 50, seed=600 + n)
                for t in (0.25, 1.0):
                    a = solve_g(t, n, seq, cfg, ctx)
                    b = solve_g_via_D(t, n, seq, cfg, ctx)
                    scale = max(np.abs(a).max(), np.abs(b).max())
                    rel = np.abs(a - b).max() / scale
                    assert rel <= 1e-12, f"{pot.key} n={n} t={t}: relative gap {rel:.2e}"


def test_criterion_06_hierarchy_residual():
    with criterion(6, "hierarchy residual", 300.0):
        families = (
            PotentialFamily.build(HarmonicPair(1.0)),
            PotentialFamily.build(HarmonicPair(0.5), GaussianTriple(0.4, 1.2)),
        )
        t0, dt = 0.25, 1e-3
        for pot in families:
            ctx = EvaluationContext(pot, FlowSolver(step=1e-3))
            for n in range(1, 4):
                seq = smooth_sequence(max(n, 2), seed=700 + n)
                cfg = random_points(n, 100, seed=800 + n)
                g_slice = time_slice(seq, t0, ctx, max_arity=n, nu=1)
                gen = apply_hierarchy_generator(g_slice, n, cfg, ctx)

                def residual(step):
                    fd = (
                        solve_g(t0 + step, n, seq, cfg, ctx)
                        - solve_g(t0 - step, n, seq, cfg, ctx)
                    ) / (2 * step)
                    return np.abs(fd - gen).max()

                r_default = residual(dt)
                assert r_default <= 1e-4, f"{pot.key} n={n}: residual {r_default:.2e}"
                r_coarse, r_fine = residual(4e-3), residual(2e-3)
                order = np.log2(r_coarse / r_fine)
                assert order >= 1.9, f"{pot.key} n={n}: FD order {order:.2f}"


def test_criterion_07_group_property():
    with criterion(7, "group property", 300.0):
        ctx = EvaluationContext(PotentialFamily.build(HarmonicPair(1.0)), FlowSolver(step=1e-3))
        times = (0.125, 0.25, 0.5)
        for n in range(1, 4):
            seq = smooth_sequence(n, seed=900 + n)
            cfg = random_points(n, 20, seed=1000 + n)
            for t1 in times:
                for t2 in times:
                    two, one = compose_evolution(t1, t2, n, seq, cfg, ctx)
                    gap = np.abs(two - one).max()
                    assert gap <= 1e-6, f"n={n} t1={t1} t2={t2}: gap {gap:.2e}"


def test_criterion_08_chaos_and_scattering():
    with criterion(8, "chaos and scattering representations", 120.0):
        ctx = EvaluationContext(PotentialFamily.build(HarmonicPair(1.0)), FlowSolver(step=1e-3))
        g1 = GaussianMixture.standard(1, 1, q_scale=1.1, p_scale=0.9)
        chaos = CorrelationSequence.chaos(g1)
        t = 0.5
        for n in (2, 3):
            cfg = random_points(n, 50, seed=1100 + n)
            direct = solve_g(t, n, chaos, cfg, ctx)
            reduced = solve_g_chaos(t, n, g1, cfg, ctx)
            err_alg = np.abs(direct - reduced).max()
            assert err_alg <= 1e-12, f"n={n}: chaos reduction gap {err_alg:.2e}"
            scattered = scattering_cumulant_apply(t, n, evolved_g1(g1, t, ctx), cfg, ctx)
            err_flow = np.abs(reduced - scattered).max()
            assert err_flow <= 1e-6, f"n={n}: scattering gap {err_flow:.2e}"


def test_criterion_09_norm_bound():
    with criterion(9, "evolved-norm bound", 300.0):
        ctx = EvaluationContext(PotentialFamily.build(HarmonicPair(1.0)), FlowSolver(step=1e-2))
        quad = McQuadrature(sample_count=100_000, seed=1200, q_scale=2.0, p_scale=2.0)
        general = smooth_sequence(2, seed=1300)
        g1 = GaussianMixture.standard(1, 1)
        chaos = CorrelationSequence.chaos(g1)
        for n in (1, 2, 3):
            for t in (0.5, 1.0):
                report = check_norm_bound(t, n, general, ctx, quad.with_seed(1400 + 10 * n + int(2 * t)))
                assert report.passed, f"general n={n} t={t}: {report.observed} vs {report.target}"
        for n in (2, 3):
            report = check_norm_bound(1.0, n, chaos, ctx, quad.with_seed(1500 + n))
            assert report.target == pytest.approx(factorial(n) * e ** (n + 1) * g1.l1_norm_exact**n)
            assert report.passed, f"chaos n={n}: {report.observed} vs {report.target}"


def test_criterion_10_l1_isometry():
    with criterion(10, "flow L1 isometry", 180.0):
        ctx = EvaluationContext(PotentialFamily.build(HarmonicPair(1.0)), FlowSolver(step=1e-2))
        quad = McQuadrature(sample_count=100_000, seed=1600, q_scale=2.0, p_scale=2.0)
        for n in (1, 2, 3):
            f = smooth_sequence(n, seed=1700 + n).get(n)
            for t in (0.5, 1.0):
                report = check_isometry(f, n, t, ctx, quad.with_seed(1800 + 10 * n + int(2 * t)))
                assert report.passed, f"n={n} t={t}: drift {report.observed:.2e} vs {report.target:.2e}"


def test_criterion_11_pair_potential_degeneracy():
    with criterion(11, "pair-only three-body degeneracy", 60.0):
        ctx = EvaluationContext(PotentialFamily.build(HarmonicPair(1.0)), FlowSolver(step=1e-3))
        seq = smooth_sequence(3, seed=1900)
        cfg = random_points(3, 30, seed=2000)
        triple_scopes = 0
        for term in hierarchy_generator_terms(seq, 3, cfg, ctx):
            if term.kind == "collision" and len(term.scope) == 3:
                triple_scopes += 1
                assert np.all(term.value == 0.0), f"scope {term.scope} not exactly zero"
        # one three-body scope per single/pair splitting plus the fully split term
        assert triple_scopes == 4
