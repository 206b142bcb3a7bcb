"""Run configuration: one structured, human-writable file drives everything.

The CLI only selects a command and paths; every physical and numerical
parameter (dimension, potential, solver, initial data, evaluation grid,
quadrature, tolerances) lives in the config so a run is reproducible from a
single artifact.  Parsing reports the offending field path on any error.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np
import yaml

from .dynamics import (
    FlowSolver,
    GaussianMixture,
    GaussianPair,
    GaussianTriple,
    HarmonicPair,
    HarmonicTrap,
    PhaseConfiguration,
    PhaseFunction,
    PotentialFamily,
)
from .errors import ConfigError
from .hierarchy import CorrelationSequence, DistributionSequence, EvaluationContext

PAIR_KINDS = ("zero", "harmonic", "gaussian")
TRIPLE_KINDS = ("none", "gaussian-triple")
EXTERNAL_KINDS = ("none", "harmonic-trap")
ROUTES = ("direct", "via_D", "chaos", "scattering")


def _expect_mapping(value: Any, path: str) -> Mapping:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
    return value


def _no_extra_keys(d: Mapping, allowed: tuple[str, ...], path: str) -> None:
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"{path}: unknown keys {sorted(extra)}; allowed: {sorted(allowed)}")


def _as_float(value: Any, path: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ConfigError(f"{path}: must be finite, got {out}")
    return out


def _as_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _as_vector(value: Any, dim: int, path: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),) * dim
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a number or list of length {dim}")
    vec = tuple(_as_float(v, f"{path}[{i}]") for i, v in enumerate(value))
    if len(vec) == 1 and dim > 1:
        return vec * dim
    if len(vec) != dim:
        raise ConfigError(f"{path}: expected length {dim}, got {len(vec)}")
    return vec


@dataclass(frozen=True)
class PairSpec:
    kind: str = "harmonic"
    strength: float = 1.0
    epsilon: float = 1.0
    sigma: float = 1.0

    @classmethod
    def from_dict(cls, d: Mapping, path: str) -> "PairSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("kind", "strength", "epsilon", "sigma"), path)
        kind = d.get("kind", "harmonic")
        if kind not in PAIR_KINDS:
            raise ConfigError(f"{path}.kind: {kind!r} not in {PAIR_KINDS}")
        sigma = _as_float(d.get("sigma", 1.0), f"{path}.sigma")
        if kind == "gaussian" and sigma <= 0:
            raise ConfigError(f"{path}.sigma: must be positive")
        return cls(
            kind=kind,
            strength=_as_float(d.get("strength", 1.0), f"{path}.strength"),
            epsilon=_as_float(d.get("epsilon", 1.0), f"{path}.epsilon"),
            sigma=sigma,
        )


@dataclass(frozen=True)
class TripleSpec:
    kind: str = "none"
    epsilon: float = 0.5
    sigma: float = 1.0

    @classmethod
    def from_dict(cls, d: Mapping, path: str) -> "TripleSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("kind", "epsilon", "sigma"), path)
        kind = d.get("kind", "none")
        if kind not in TRIPLE_KINDS:
            raise ConfigError(f"{path}.kind: {kind!r} not in {TRIPLE_KINDS}")
        sigma = _as_float(d.get("sigma", 1.0), f"{path}.sigma")
        if kind != "none" and sigma <= 0:
            raise ConfigError(f"{path}.sigma: must be positive")
        return cls(
            kind=kind,
            epsilon=_as_float(d.get("epsilon", 0.5), f"{path}.epsilon"),
            sigma=sigma,
        )


@dataclass(frozen=True)
class ExternalSpec:
    kind: str = "none"
    omega: float = 1.0

    @classmethod
    def from_dict(cls, d: Mapping, path: str) -> "ExternalSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("kind", "omega"), path)
        kind = d.get("kind", "none")
        if kind not in EXTERNAL_KINDS:
            raise ConfigError(f"{path}.kind: {kind!r} not in {EXTERNAL_KINDS}")
        return cls(kind=kind, omega=_as_float(d.get("omega", 1.0), f"{path}.omega"))


@dataclass(frozen=True)
class PotentialSpec:
    pair: PairSpec = field(default_factory=PairSpec)
    triple: TripleSpec = field(default_factory=TripleSpec)
    external: ExternalSpec = field(default_factory=ExternalSpec)

    @classmethod
    def from_dict(cls, d: Mapping, path: str) -> "PotentialSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("pair", "triple", "external"), path)
        return cls(
            pair=PairSpec.from_dict(d.get("pair", {}), f"{path}.pair"),
            triple=TripleSpec.from_dict(d.get("triple", {}), f"{path}.triple"),
            external=ExternalSpec.from_dict(d.get("external", {}), f"{path}.external"),
        )


@dataclass(frozen=True)
class SolverSpec:
    integrator: str = "velocity-verlet"
    step: float = 1e-3
    max_steps: int = 2_000_000

    @classmethod
    def from_dict(cls, d: Mapping, path: str) -> "SolverSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("integrator", "step", "max_steps"), path)
        integrator = d.get("integrator", "velocity-verlet")
        if integrator not in ("velocity-verlet", "rk4"):
            raise ConfigError(f"{path}.integrator: {integrator!r} unknown")
        step = _as_float(d.get("step", 1e-3), f"{path}.step")
        if step <= 0:
            raise ConfigError(f"{path}.step: must be positive")
        return cls(
            integrator=integrator,
            step=step,
            max_steps=_as_int(d.get("max_steps", 2_000_000), f"{path}.max_steps"),
        )


@dataclass(frozen=True)
class ComponentSpec:
    weight: float
    q_center: tuple[float, ...]
    p_center: tuple[float, ...]
    q_scale: float
    p_scale: float

    @classmethod
    def from_dict(cls, d: Mapping, dim: int, path: str) -> "ComponentSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("weight", "q_center", "p_center", "q_scale", "p_scale"), path)
        q_scale = _as_float(d.get("q_scale", 1.0), f"{path}.q_scale")
        p_scale = _as_float(d.get("p_scale", 1.0), f"{path}.p_scale")
        if q_scale <= 0 or p_scale <= 0:
            raise ConfigError(f"{path}: scales must be positive")
        return cls(
            weight=_as_float(d.get("weight", 1.0), f"{path}.weight"),
            q_center=_as_vector(d.get("q_center", 0.0), dim, f"{path}.q_center"),
            p_center=_as_vector(d.get("p_center", 0.0), dim, f"{path}.p_center"),
            q_scale=q_scale,
            p_scale=p_scale,
        )


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple[ComponentSpec, ...]

    @classmethod
    def from_dict(cls, d: Mapping, dim: int, path: str) -> "MixtureSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("components",), path)
        raw = d.get("components")
        if not isinstance(raw, (list, tuple)) or not raw:
            raise ConfigError(f"{path}.components: expected a nonempty list")
        return cls(
            components=tuple(
                ComponentSpec.from_dict(c, dim, f"{path}.components[{i}]")
                for i, c in enumerate(raw)
            )
        )


@dataclass(frozen=True)
class InitialSpec:
    chaos: bool = False
    functions: Mapping[int, MixtureSpec] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping, dim: int, path: str) -> "InitialSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("chaos", "functions"), path)
        chaos = d.get("chaos", False)
        if not isinstance(chaos, bool):
            raise ConfigError(f"{path}.chaos: expected a boolean")
        raw = _expect_mapping(d.get("functions", {}), f"{path}.functions")
        functions: dict[int, MixtureSpec] = {}
        for key, val in raw.items():
            if isinstance(key, str) and key.isdigit():
                key = int(key)  # JSON round-trips stringify mapping keys
            arity = _as_int(key, f"{path}.functions key {key!r}")
            if arity < 1:
                raise ConfigError(f"{path}.functions: arity {arity} must be >= 1")
            functions[arity] = MixtureSpec.from_dict(val, dim, f"{path}.functions[{arity}]")
        if 1 not in functions:
            raise ConfigError(f"{path}.functions: arity 1 is required")
        if chaos and set(functions) != {1}:
            raise ConfigError(f"{path}: chaos data admits only the arity-1 function")
        return cls(chaos=chaos, functions=functions)


@dataclass(frozen=True)
class PointsSpec:
    count: int = 20
    seed: int = 7
    q_scale: float = 1.0
    p_scale: float = 1.0

    @classmethod
    def from_dict(cls, d: Mapping, path: str) -> "PointsSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("count", "seed", "q_scale", "p_scale"), path)
        count = _as_int(d.get("count", 20), f"{path}.count")
        if count < 1:
            raise ConfigError(f"{path}.count: must be >= 1")
        return cls(
            count=count,
            seed=_as_int(d.get("seed", 7), f"{path}.seed"),
            q_scale=_as_float(d.get("q_scale", 1.0), f"{path}.q_scale"),
            p_scale=_as_float(d.get("p_scale", 1.0), f"{path}.p_scale"),
        )


@dataclass(frozen=True)
class GridSpec:
    arities: tuple[int, ...] = (1, 2)
    times: tuple[float, ...] = (0.0, 0.25, 0.5)
    points: PointsSpec = field(default_factory=PointsSpec)
    routes: tuple[str, ...] = ("direct", "via_D")

    @classmethod
    def from_dict(cls, d: Mapping, path: str) -> "GridSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(d, ("arities", "times", "points", "routes"), path)
        arities = tuple(
            _as_int(a, f"{path}.arities[{i}]") for i, a in enumerate(d.get("arities", (1, 2)))
        )
        if not arities or any(a < 1 for a in arities):
            raise ConfigError(f"{path}.arities: need a nonempty list of arities >= 1")
        times = tuple(
            _as_float(t, f"{path}.times[{i}]") for i, t in enumerate(d.get("times", (0.0, 0.25, 0.5)))
        )
        if not times:
            raise ConfigError(f"{path}.times: need at least one time")
        routes = tuple(d.get("routes", ("direct", "via_D")))
        for r in routes:
            if r not in ROUTES:
                raise ConfigError(f"{path}.routes: {r!r} not in {ROUTES}")
        return cls(
            arities=arities,
            times=times,
            points=PointsSpec.from_dict(d.get("points", {}), f"{path}.points"),
            routes=routes,
        )


@dataclass(frozen=True)
class QuadratureSpec:
    samples: int = 20_000
    seed: int = 13
    q_center: tuple[float, ...] = (0.0,)
    p_center: tuple[float, ...] = (0.0,)
    q_scale: float = 2.5
    p_scale: float = 2.5
    solver_step: float | None = None

    @classmethod
    def from_dict(cls, d: Mapping, dim: int, path: str) -> "QuadratureSpec":
        d = _expect_mapping(d, path)
        _no_extra_keys(
            d, ("samples", "seed", "q_center", "p_center", "q_scale", "p_scale", "solver_step"), path
        )
        samples = _as_int(d.get("samples", 20_000), f"{path}.samples")
        if samples < 1000:
            raise ConfigError(f"{path}.samples: at least 1000 samples are required")
        q_scale = _as_float(d.get("q_scale", 2.5), f"{path}.q_scale")
        p_scale = _as_float(d.get("p_scale", 2.5), f"{path}.p_scale")
        if q_scale <= 0 or p_scale <= 0:
            raise ConfigError(f"{path}: proposal scales must be positive")
        step = d.get("solver_step")
        if step is not None:
            step = _as_float(step, f"{path}.solver_step")
            if step <= 0:
                raise ConfigError(f"{path}.solver_step: must be positive")
        return cls(
            samples=samples,
            seed=_as_int(d.get("seed", 13), f"{path}.seed"),
            q_center=_as_vector(d.get("q_center", 0.0), dim, f"{path}.q_center"),
            p_center=_as_vector(d.get("p_center", 0.0), dim, f"{path}.p_center"),
            q_scale=q_scale,
            p_scale=p_scale,
            solver_step=step,
        )


@dataclass(frozen=True)
class ToleranceSpec:
    algebraic: float = 1e-12
    flow: float = 1e-6
    residual: float = 1e-4
    isometry_allowance: float = 1e-3
    time_fd_step: float = 1e-3

    @classmethod
    def from_dict(cls, d: Mapping, path: str) -> "ToleranceSpec":
        d = _expect_mapping(d, path)
        allowed = ("algebraic", "flow", "residual", "isometry_allowance", "time_fd_step")
        _no_extra_keys(d, allowed, path)
        kwargs = {k: _as_float(d[k], f"{path}.{k}") for k in allowed if k in d}
        return cls(**kwargs)


@dataclass(frozen=True)
class RunConfig:
    dimension: int = 1
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    initial: InitialSpec = field(
        default_factory=lambda: InitialSpec(
            chaos=False,
            functions={
                1: MixtureSpec((ComponentSpec(1.0, (0.0,), (0.0,), 1.0, 1.0),)),
                2: MixtureSpec((ComponentSpec(0.2, (0.3,), (0.0,), 1.2, 1.1),)),
            },
        )
    )
    grid: GridSpec = field(default_factory=GridSpec)
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    tolerances: ToleranceSpec = field(default_factory=ToleranceSpec)
    partition_cap: int = 8
    fd_step: float = 1e-4

    # -- parsing / serialization --------------------------------------------

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        d = _expect_mapping(d, "config")
        allowed = (
            "dimension",
            "potential",
            "solver",
            "initial",
            "grid",
            "quadrature",
            "tolerances",
            "partition_cap",
            "fd_step",
        )
        _no_extra_keys(d, allowed, "config")
        dim = _as_int(d.get("dimension", 1), "config.dimension")
        if dim < 1:
            raise ConfigError("config.dimension: must be >= 1")
        cap = _as_int(d.get("partition_cap", 8), "config.partition_cap")
        if cap < 1:
            raise ConfigError("config.partition_cap: must be >= 1")
        fd_step = _as_float(d.get("fd_step", 1e-4), "config.fd_step")
        if fd_step <= 0:
            raise ConfigError("config.fd_step: must be positive")
        grid = GridSpec.from_dict(d.get("grid", {}), "config.grid")
        for a in grid.arities:
            if a > cap:
                raise ConfigError(
                    f"config.grid.arities: arity {a} exceeds partition_cap {cap}"
                )
        # default initial data goes through the same parser so centers pick
        # up the configured dimension
        default_initial = {
            "functions": {
                1: {"components": [{"weight": 1.0}]},
                2: {"components": [{"weight": 0.2, "q_center": 0.3, "q_scale": 1.2, "p_scale": 1.1}]},
            }
        }
        initial = InitialSpec.from_dict(d.get("initial", default_initial), dim, "config.initial")
        return cls(
            dimension=dim,
            potential=PotentialSpec.from_dict(d.get("potential", {}), "config.potential"),
            solver=SolverSpec.from_dict(d.get("solver", {}), "config.solver"),
            initial=initial,
            grid=grid,
            quadrature=QuadratureSpec.from_dict(d.get("quadrature", {}), dim, "config.quadrature"),
            tolerances=ToleranceSpec.from_dict(d.get("tolerances", {}), "config.tolerances"),
            partition_cap=cap,
            fd_step=fd_step,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        # asdict maps tuples to lists only at the top level of each field;
        # normalize nested tuples to lists for clean YAML
        def norm(x):
            if isinstance(x, tuple):
                return [norm(v) for v in x]
            if isinstance(x, list):
                return [norm(v) for v in x]
            if isinstance(x, dict):
                return {k: norm(v) for k, v in x.items()}
            return x

        return norm(d)

    @classmethod
    def default(cls) -> "RunConfig":
        return cls()

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"config: invalid YAML ({e})") from None
        return cls.from_dict(data or {})

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.loads(fh.read())

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    # -- builders ------------------------------------------------------------

    def build_potential(self) -> PotentialFamily:
        terms = []
        pair = self.potential.pair
        if pair.kind == "harmonic":
            terms.append(HarmonicPair(pair.strength))
        elif pair.kind == "gaussian":
            terms.append(GaussianPair(pair.epsilon, pair.sigma))
        triple = self.potential.triple
        if triple.kind == "gaussian-triple":
            terms.append(GaussianTriple(triple.epsilon, triple.sigma))
        external = self.potential.external
        if external.kind == "harmonic-trap":
            terms.append(HarmonicTrap(external.omega))
        return PotentialFamily.build(*terms)

    def build_solver(self, step: float | None = None) -> FlowSolver:
        return FlowSolver(
            integrator=self.solver.integrator,
            step=self.solver.step if step is None else step,
            max_steps=self.solver.max_steps,
        )

    def build_context(self, solver_step: float | None = None) -> EvaluationContext:
        return EvaluationContext(
            potential=self.build_potential(),
            solver=self.build_solver(solver_step),
            partition_cap=self.partition_cap,
            fd_step=self.fd_step,
        )

    def build_mixture(self, arity: int) -> GaussianMixture:
        spec = self.initial.functions.get(arity)
        if spec is None:
            raise ConfigError(f"config.initial.functions: arity {arity} not configured")
        comps = spec.components
        return GaussianMixture(
            arity,
            self.dimension,
            [c.weight for c in comps],
            np.array([c.q_center for c in comps]),
            np.array([c.p_center for c in comps]),
            [c.q_scale for c in comps],
            [c.p_scale for c in comps],
        )

    def build_g1(self) -> PhaseFunction:
        return self.build_mixture(1)

    def build_initial(self) -> CorrelationSequence:
        if self.initial.chaos:
            return CorrelationSequence.chaos(self.build_g1())
        return CorrelationSequence(
            {a: self.build_mixture(a) for a in sorted(self.initial.functions)}
        )

    def build_distributions(self, max_arity: int) -> DistributionSequence:
        missing = [a for a in range(1, max_arity + 1) if a not in self.initial.functions]
        if missing:
            raise ConfigError(
                f"config.initial.functions: distribution input needs arities {missing}"
            )
        return DistributionSequence(
            {a: self.build_mixture(a) for a in range(1, max_arity + 1)}
        )

    def sample_points(
        self, n: int, count: int | None = None, seed_salt: int = 0
    ) -> PhaseConfiguration:
        """Deterministic Gaussian cloud of evaluation points for arity n."""
        pts = self.grid.points
        rng = np.random.default_rng(np.random.SeedSequence((pts.seed, n, seed_salt)))
        m = pts.count if count is None else count
        q = pts.q_scale * rng.standard_normal((m, n, self.dimension))
        p = pts.p_scale * rng.standard_normal((m, n, self.dimension))
        return PhaseConfiguration(tuple(range(1, n + 1)), q, p)
