"""Flow maps, potentials, phase functions, and the Liouville generator."""

import numpy as np
import pytest

from conftest import random_configuration

from corrdyn.dynamics import (
    CallablePhaseFunction,
    FlowSolver,
    GaussianMixture,
    GaussianPair,
    GaussianTriple,
    HarmonicPair,
    HarmonicTrap,
    PhaseConfiguration,
    PhasePoint,
    PotentialFamily,
    apply_flow_operator,
    apply_liouville,
    flow_backward,
    hamiltonian,
)
from corrdyn.errors import ContractError, FlowDivergenceError


def harmonic_two_body_closed_form(q, p, t, stiffness=1.0):
    """Analytic two-body solution: free center of mass plus relative
    oscillation at angular frequency sqrt(2 * stiffness)."""
    q1, q2, p1, p2 = q[:, 0], q[:, 1], p[:, 0], p[:, 1]
    com = 0.5 * (q1 + q2)
    ptot = p1 + p2
    r = q1 - q2
    pr = 0.5 * (p1 - p2)
    w = np.sqrt(2.0 * stiffness)
    rt = r * np.cos(w * t) + (2.0 * pr / w) * np.sin(w * t)
    prt = pr * np.cos(w * t) - (0.5 * r * w) * np.sin(w * t)
    com_t = com + 0.5 * ptot * t
    qt = np.stack([com_t + 0.5 * rt, com_t - 0.5 * rt], axis=1)
    pt = np.stack([0.5 * ptot + prt, 0.5 * ptot - prt], axis=1)
    return qt, pt


# ---------------------------------------------------------------------------
# containers


def test_configuration_validation():
    with pytest.raises(ContractError):
        PhaseConfiguration((1, 2), np.zeros((4, 3, 1)), np.zeros((4, 3, 1)))
    with pytest.raises(ContractError):
        PhaseConfiguration((1, 2), np.full((1, 2, 1), np.nan), np.zeros((1, 2, 1)))
    cfg = random_configuration(3)
    sub = cfg.subset((1, 3))
    assert sub.labels == (1, 3)
    assert np.array_equal(sub.q[:, 1], cfg.q[:, 2])
    with pytest.raises(ContractError):
        cfg.subset((9,))


def test_phase_point_and_from_points():
    pt = PhasePoint(np.array([0.5]), np.array([-0.2]))
    cfg = PhaseConfiguration.from_points((1, 2), [pt, PhasePoint(np.array([1.0]), np.array([0.0]))])
    assert cfg.batch_size == 1 and cfg.n_particles == 2 and cfg.nu == 1
    with pytest.raises(ContractError):
        PhasePoint(np.array([np.inf]), np.array([0.0]))


# ---------------------------------------------------------------------------
# flows


def test_time_zero_flow_is_bitwise_identity(harmonic_pot, solver):
    cfg = random_configuration(2, seed=3)
    out = flow_backward(cfg, harmonic_pot, 0.0, solver)
    assert out.q is cfg.q and out.p is cfg.p


@pytest.mark.parametrize("integrator", ["velocity-verlet", "rk4"])
def test_free_flow_is_a_shear(zero_pot, integrator):
    solver = FlowSolver(integrator=integrator, step=1e-3)
    cfg = random_configuration(2, batch=16, seed=4, nu=2)
    t = 0.73
    out = flow_backward(cfg, zero_pot, t, solver)
    assert np.allclose(out.q, cfg.q - cfg.p * t, atol=1e-12)
    assert np.allclose(out.p, cfg.p, atol=0.0)


@pytest.mark.parametrize("integrator,tol", [("velocity-verlet", 5e-6), ("rk4", 1e-10)])
def test_harmonic_pair_matches_closed_form(integrator, tol):
    solver = FlowSolver(integrator=integrator, step=1e-3)
    pot = PotentialFamily.build(HarmonicPair(1.0))
    cfg = random_configuration(2, batch=12, seed=5)
    t = 0.9
    out = flow_backward(cfg, pot, t, solver)
    qe, pe = harmonic_two_body_closed_form(cfg.q, cfg.p, -t)
    err = max(np.abs(out.q - qe).max(), np.abs(out.p - pe).max())
    assert err < tol, f"{integrator}: flow error {err:.2e}"


@pytest.mark.parametrize("n", [2, 3, 4])
def test_reversibility(n, solver):
    for pot in (PotentialFamily.build(HarmonicPair(1.0)), PotentialFamily.build(GaussianPair(1.0, 1.0))):
        cfg = random_configuration(n, batch=6, seed=n)
        fwd = flow_backward(cfg, pot, 1.0, solver)
        back = flow_backward(fwd, pot, -1.0, solver)
        err = max(np.abs(back.q - cfg.q).max(), np.abs(back.p - cfg.p).max())
        assert err < 1e-10, f"n={n}: round trip error {err:.2e}"


def test_energy_drift_scales_as_step_squared(harmonic_pot):
    cfg = random_configuration(3, batch=8, seed=6)
    t = 1.0
    errs = []
    for step in (2e-2, 1e-2):
        solver = FlowSolver(step=step)
        out = flow_backward(cfg, harmonic_pot, t, solver)
        errs.append(np.abs(hamiltonian(out, harmonic_pot) - hamiltonian(cfg, harmonic_pot)).max())
    ratio = errs[0] / errs[1]
    assert ratio >= 3.5, f"energy error ratio {ratio:.2f} under step halving"


def test_integrators_agree(triple_pot):
    cfg = random_configuration(3, batch=4, seed=7)
    vv = flow_backward(cfg, triple_pot, 0.8, FlowSolver(step=5e-4))
    rk = flow_backward(cfg, triple_pot, 0.8, FlowSolver(integrator="rk4", step=5e-4))
    assert np.abs(vv.q - rk.q).max() < 1e-6
    assert np.abs(vv.p - rk.p).max() < 1e-6


def test_divergence_is_reported():
    class Antitrap:
        # inverted quadratic well: trajectories blow up like cosh(c t)
        arity = 1
        kind = "antitrap"

        def value(self, q):
            return -0.5e6 * np.sum(q[:, 0, :] ** 2, axis=-1)

        def gradient(self, q):
            return -1e6 * q

    pot = PotentialFamily.build(Antitrap())
    cfg = random_configuration(1, batch=2, seed=8)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(FlowDivergenceError):
            flow_backward(cfg, pot, 2.0, FlowSolver(step=1e-2, max_steps=10_000_000))


def test_max_steps_guard(zero_pot):
    with pytest.raises(ContractError):
        flow_backward(random_configuration(1), zero_pot, 10.0, FlowSolver(step=1e-3, max_steps=100))


def test_external_trap_enters_hamiltonian_and_flow():
    pot = PotentialFamily.zero().with_external(HarmonicTrap(1.0))
    cfg = random_configuration(1, batch=4, seed=9)
    expected = 0.5 * (cfg.p[:, 0, 0] ** 2 + cfg.q[:, 0, 0] ** 2)
    assert np.allclose(hamiltonian(cfg, pot), expected)
    # one particle in a unit trap rotates: q(-t) = q cos t - p sin t
    out = flow_backward(cfg, pot, 0.5, FlowSolver(step=1e-4))
    qe = cfg.q * np.cos(0.5) - cfg.p * np.sin(0.5)
    assert np.abs(out.q - qe).max() < 1e-7


# ---------------------------------------------------------------------------
# potential terms


def test_potential_symmetry_spot_checks():
    rng = np.random.default_rng(10)
    q = rng.standard_normal((5, 3, 2))
    for term in (GaussianTriple(0.7, 1.1),):
        v = term.value(q)
        for perm in ((1, 0, 2), (2, 1, 0), (1, 2, 0)):
            assert np.allclose(term.value(q[:, perm, :]), v)
    pair = GaussianPair(1.3, 0.9)
    assert np.allclose(pair.value(q[:, :2, :]), pair.value(q[:, (1, 0), :]))


@pytest.mark.parametrize(
    "term,k", [(HarmonicPair(0.8), 2), (GaussianPair(1.2, 0.9), 2), (GaussianTriple(0.6, 1.1), 3), (HarmonicTrap(1.3), 1)]
)
def test_potential_gradients_match_finite_differences(term, k):
    rng = np.random.default_rng(11)
    q = rng.standard_normal((4, k, 2))
    grad = term.gradient(q)
    h = 1e-6
    for i in range(k):
        for d in range(2):
            hi = q.copy()
            hi[:, i, d] += h
            lo = q.copy()
            lo[:, i, d] -= h
            fd = (term.value(hi) - term.value(lo)) / (2 * h)
            assert np.abs(grad[:, i, d] - fd).max() < 5e-9


def test_duplicate_arity_rejected():
    with pytest.raises(ContractError):
        PotentialFamily.build(HarmonicPair(1.0), GaussianPair(1.0, 1.0))


# ---------------------------------------------------------------------------
# flow operator


def test_flow_operator_identity_at_zero_time(harmonic_pot, solver):
    f = GaussianMixture.standard(2, 1)
    cfg = random_configuration(2, seed=12)
    assert np.array_equal(apply_flow_operator(f, cfg, harmonic_pot, 0.0, solver), f.evaluate(cfg))


def test_flow_operator_free_gaussian_pullback(zero_pot, solver):
    # position-only Gaussian: pullback just shifts the argument to q - p t
    f = GaussianMixture(1, 1, [1.0], [[0.2]], [[0.0]], [0.8], [50.0])
    cfg = random_configuration(1, batch=32, seed=13)
    t = 0.6
    got = apply_flow_operator(f, cfg, zero_pot, t, solver)
    want = f.value(cfg.q - cfg.p * t, cfg.p)
    assert np.abs(got - want).max() < 1e-12


def test_flow_operator_group_law(harmonic_pot, solver):
    f = GaussianMixture.standard(2, 1, q_scale=1.1)
    cfg = random_configuration(2, batch=8, seed=14)
    mid = flow_backward(cfg, harmonic_pot, 0.25, solver)
    two_leg = apply_flow_operator(f, mid, harmonic_pot, 0.5, solver)
    one_leg = apply_flow_operator(f, cfg, harmonic_pot, 0.75, solver)
    assert np.abs(two_leg - one_leg).max() < 1e-9


def test_flow_operator_arity_mismatch(harmonic_pot, solver):
    with pytest.raises(ContractError):
        apply_flow_operator(GaussianMixture.standard(3, 1), random_configuration(2), harmonic_pot, 0.1, solver)


# ---------------------------------------------------------------------------
# phase functions


def test_mixture_is_permutation_symmetric():
    rng = np.random.default_rng(15)
    f = GaussianMixture(3, 2, [1.0, -0.3], rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), [1.0, 1.2], [0.9, 1.1])
    q = rng.standard_normal((6, 3, 2))
    p = rng.standard_normal((6, 3, 2))
    i, j = 0, 2  # random transposition
    perm = [0, 1, 2]
    perm[i], perm[j] = perm[j], perm[i]
    assert np.allclose(f.value(q, p), f.value(q[:, perm, :], p[:, perm, :]))


def test_mixture_gradients_match_finite_differences():
    rng = np.random.default_rng(16)
    f = GaussianMixture(2, 1, [0.7, -0.2], rng.normal(size=(2, 1)), rng.normal(size=(2, 1)), [1.0, 1.3], [0.8, 1.1])
    q = rng.standard_normal((5, 2, 1))
    p = rng.standard_normal((5, 2, 1))
    fd = CallablePhaseFunction(2, 1, f.value, fd_step=1e-5)
    assert np.abs(f.grad_q(q, p) - fd.grad_q(q, p)).max() < 1e-8
    assert np.abs(f.grad_p(q, p) - fd.grad_p(q, p)).max() < 1e-8


def test_mixture_exact_norm_only_for_nonnegative_weights():
    f = GaussianMixture.standard(1, 1, weight=2.0)
    assert f.l1_norm_exact == pytest.approx(2.0)
    g = GaussianMixture(1, 1, [1.0, -0.5], [[0.0], [3.0]], [[0.0], [0.0]], [1.0, 1.0], [1.0, 1.0])
    assert g.l1_norm_exact is None


def test_callable_function_requires_fd_step_for_gradients():
    f = CallablePhaseFunction(1, 1, lambda q, p: np.sum(q, axis=(1, 2)))
    rng = np.random.default_rng(17)
    with pytest.raises(ContractError):
        f.grad_q(rng.standard_normal((2, 1, 1)), rng.standard_normal((2, 1, 1)))


# ---------------------------------------------------------------------------
# Liouville generator


def test_interaction_only_is_zero_without_interactions(zero_pot):
    f = GaussianMixture.standard(2, 1)
    cfg = random_configuration(2, seed=18)
    out = apply_liouville([(f, (1, 2))], (1, 2), zero_pot, cfg, mode="interaction_only")
    assert np.all(out == 0.0)


def test_free_streaming_term_matches_analytic_derivative(zero_pot):
    g1 = GaussianMixture.standard(1, 1, q_scale=0.9, p_scale=1.2)
    cfg = random_configuration(1, batch=16, seed=19)
    got = apply_liouville([(g1, (1,))], (1,), zero_pot, cfg, mode="full")
    want = -np.sum(cfg.p * g1.grad_q(cfg.q, cfg.p), axis=(1, 2))
    assert np.abs(got - want).max() < 1e-13


def test_harmonic_interaction_by_leibniz_matches_fd_oracle(harmonic_pot):
    # interaction part applied to g1(x1) g1(x2): <q1-q2, d/dp1> + <q2-q1, d/dp2>
    g1a = GaussianMixture.standard(1, 1, q_scale=1.1)
    g1b = GaussianMixture.standard(1, 1, p_scale=0.9)
    cfg = random_configuration(2, batch=10, seed=20)
    got = apply_liouville([(g1a, (1,)), (g1b, (2,))], (1, 2), harmonic_pot, cfg, mode="interaction_only")

    def product(q, p):
        return g1a.value(q[:, :1], p[:, :1]) * g1b.value(q[:, 1:], p[:, 1:])

    errs = []
    for h in (1e-3, 5e-4):
        fd = np.zeros(cfg.batch_size)
        d = cfg.q[:, 0, :] - cfg.q[:, 1, :]
        for j, sign in ((0, 1.0), (1, -1.0)):
            for dim in range(1):
                hi = cfg.p.copy()
                hi[:, j, dim] += h
                lo = cfg.p.copy()
                lo[:, j, dim] -= h
                fd += sign * d[:, dim] * (product(cfg.q, hi) - product(cfg.q, lo)) / (2 * h)
        errs.append(np.abs(got - fd).max())
    assert errs[0] < 1e-6
    assert errs[1] < errs[0]  # central differences tighten as the step shrinks


@pytest.mark.parametrize("n", [1, 2, 3])
def test_generator_is_time_derivative_of_flow_operator(n, triple_pot, solver):
    # d/dt of the pullback at t=0 equals the negated-generator application
    f = GaussianMixture.standard(n, 1, q_scale=1.2, p_scale=0.8)
    cfg = random_configuration(n, batch=12, seed=21)
    labels = tuple(range(1, n + 1))
    dt = 1e-4
    fd = (
        apply_flow_operator(f, cfg, triple_pot, dt, solver)
        - apply_flow_operator(f, cfg, triple_pot, -dt, solver)
    ) / (2 * dt)
    gen = apply_liouville([(f, labels)], labels, triple_pot, cfg, mode="full")
    assert np.abs(fd - gen).max() < 1e-6


def test_liouville_contract_errors(harmonic_pot):
    f = GaussianMixture.standard(1, 1)
    cfg = random_configuration(2, seed=22)
    with pytest.raises(ContractError):
        apply_liouville([(f, (1,)), (f, (1,))], (1,), harmonic_pot, cfg)  # overlap
    with pytest.raises(ContractError):
        apply_liouville([(f, (1,))], (1, 2), harmonic_pot, cfg)  # scope not covered
    raw = CallablePhaseFunction(1, 1, lambda q, p: np.exp(-np.sum(q**2, axis=(1, 2))))
    with pytest.raises(ContractError):
        apply_liouville([(raw, (1,))], (1,), harmonic_pot, cfg, mode="full", fd_step=None)
