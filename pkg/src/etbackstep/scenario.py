"""Interconnected plant models, built-in scenarios and numeric configuration.

A plant is a collection of ``N`` subsystems in lower-triangular chain form

    x'_{i,k}   = x_{i,k+1} + sum_j f_{ij,k}(x_j, u, t),           k < n_i
    x'_{i,n_i} = u_i + phi_i(x_i)^T theta_i(t) + psi_i(x_i) + sum_j f_{ij,n_i}(x_j, u, t)

States are handled as one flat vector ordered subsystem by subsystem.
Subsystem and channel indices are 1-based in every user-facing message
and file, 0-based in code.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, SpecificationError

Coupling = Callable[[np.ndarray, np.ndarray, float], float]


@dataclass(frozen=True)
class AssumptionConstants:
    """Bounds on the uncertainty, used only by analysis code.

    ``hbar[i][j][k]`` and ``eps[i][j][k]`` bound ``|f_{ij,k}| <= hbar*||x_j|| + eps``;
    ``lip_phi[i]``, ``lip_psi[i]`` are Lipschitz constants of ``phi_i``, ``psi_i``;
    ``beta_theta[i]`` is the radius of the set containing ``theta_i(t)``.
    Any entry may be ``None`` when unknown.
    """

    hbar: tuple | None = None
    eps: tuple | None = None
    lip_phi: tuple | None = None
    lip_psi: tuple | None = None
    beta_theta: tuple | None = None
    lower_bounds_only: bool = False


@dataclass(frozen=True)
class PlantSpec:
    """An interconnected nonlinear plant.

    Coupling terms receive the full input vector ``u`` rather than ``u_j``
    alone, since built-in models mix inputs of different subsystems.
    """

    orders: tuple[int, ...]
    param_dims: tuple[int, ...]
    phi: tuple[Callable[[np.ndarray], np.ndarray], ...]
    psi: tuple[Callable[[np.ndarray], float], ...]
    theta: tuple[Callable[[float], np.ndarray], ...]
    coupling: tuple[tuple[tuple[Coupling, ...], ...], ...]
    constants: AssumptionConstants = field(default_factory=AssumptionConstants)
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.orders)
        if n < 1:
            raise SpecificationError("plant needs at least one subsystem")
        if any(int(o) != o or o < 1 for o in self.orders):
            raise SpecificationError(f"subsystem orders must be integers >= 1, got {self.orders}")
        for name in ("param_dims", "phi", "psi", "theta", "coupling"):
            if len(getattr(self, name)) != n:
                raise SpecificationError(f"{name} must have one entry per subsystem ({n})")
        if any(p < 1 for p in self.param_dims):
            raise SpecificationError("parameter dimensions must be >= 1")
        for i, row in enumerate(self.coupling):
            if len(row) != n:
                raise SpecificationError(f"coupling row {i + 1} must cover all {n} subsystems")
            for j, chan in enumerate(row):
                if len(chan) != self.orders[i]:
                    raise SpecificationError(
                        f"coupling f_{{{i + 1}{j + 1},k}} must have exactly {self.orders[i]} "
                        f"entries, got {len(chan)}"
                    )
        for i, th in enumerate(self.theta):
            val = np.asarray(th(0.0), dtype=float).reshape(-1)
            if val.shape != (self.param_dims[i],) or not np.all(np.isfinite(val)):
                raise SpecificationError(f"theta_{i + 1}(0) not evaluable as a finite {self.param_dims[i]}-vector")

    @property
    def N(self) -> int:
        return len(self.orders)

    @cached_property
    def n_states(self) -> int:
        return sum(self.orders)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.orders)]))

    @cached_property
    def _slices(self) -> tuple[slice, ...]:
        off = self.offsets
        return tuple(slice(off[i], off[i + 1]) for i in range(self.N))

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        """Views of the flat state vector, one per subsystem."""
        return [x[s] for s in self._slices]


def plant_derivative(spec: PlantSpec, x, u, t: float) -> np.ndarray:
    """Right-hand side of the interconnected plant at ``(x, u, t)``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (spec.n_states,):
        raise SpecificationError(f"state vector must have shape ({spec.n_states},), got {x.shape}")
    if u.shape != (spec.N,):
        raise SpecificationError(f"input vector must have shape ({spec.N},), got {u.shape}")
    return _derivative(spec, x, u, t)


def _derivative(spec: PlantSpec, x: np.ndarray, u: np.ndarray, t: float, phis=None) -> np.ndarray:
    # unchecked shapes; the simulation loop calls this directly, optionally
    # passing regressors it has already evaluated at x
    xs = spec.split(x)
    dx = np.empty(spec.n_states)
    N = len(xs)
    pos = 0
    for i, n in enumerate(spec.orders):
        xi = xs[i]
        row = spec.coupling[i]
        for k in range(n):
            acc = 0.0
            for j in range(N):
                acc += row[j][k](xs[j], u, t)
            if k < n - 1:
                val = xi[k + 1] + acc
            else:
                phi = spec.phi[i](xi) if phis is None else phis[i]
                drift = float(np.dot(phi, spec.theta[i](t)))
                val = u[i] + drift + spec.psi[i](xi) + acc
            if not math.isfinite(val):
                raise NumericError("non-finite plant derivative", (i + 1, k + 1, t))
            dx[pos + k] = val
        pos += n
    return dx


@dataclass(frozen=True)
class ScenarioConfig:
    """Numeric parameters of one closed-loop experiment.

    Per-subsystem arrays are tuples indexed ``[i]``; ``varpi1``/``varpi2`` are
    indexed ``[i][j][k]``; ``gamma[i]`` is a ``p_i x p_i`` matrix.
    """

    name: str
    c: tuple
    varpi1: tuple
    varpi2: tuple
    sigma: tuple
    gamma: tuple
    dx: tuple
    du: tuple
    x0: tuple
    theta_hat0: tuple
    dt: float = 1e-3
    horizon: float = 30.0

    def __post_init__(self):
        obj = object.__setattr__
        obj(self, "c", _nested_tuple(self.c))
        obj(self, "varpi1", _nested_tuple(self.varpi1))
        obj(self, "varpi2", _nested_tuple(self.varpi2))
        obj(self, "sigma", _nested_tuple(self.sigma))
        obj(self, "gamma", tuple(_as_matrix(g) for g in self.gamma))
        obj(self, "dx", _nested_tuple(self.dx))
        obj(self, "du", _nested_tuple(self.du))
        obj(self, "x0", _nested_tuple(self.x0))
        obj(self, "theta_hat0", _nested_tuple(self.theta_hat0))
        obj(self, "dt", float(self.dt))
        obj(self, "horizon", float(self.horizon))
        self._validate()

    def _validate(self):
        N = len(self.c)
        orders = tuple(len(ci) for ci in self.c)
        for name in ("varpi1", "varpi2", "sigma", "gamma", "dx", "du", "x0", "theta_hat0"):
            if len(getattr(self, name)) != N:
                raise SpecificationError(f"{name} must have one entry per subsystem ({N})")
        if any(n < 1 for n in orders):
            raise SpecificationError("every subsystem needs at least one gain c_{i,k}")
        for i in range(N):
            for name in ("dx", "x0"):
                if len(getattr(self, name)[i]) != orders[i]:
                    raise SpecificationError(f"{name}[{i + 1}] must have {orders[i]} entries")
            for name in ("varpi1", "varpi2"):
                tab = getattr(self, name)[i]
                if len(tab) != N or any(len(r) != orders[i] for r in tab):
                    raise SpecificationError(f"{name}[{i + 1}] must be an {N} x {orders[i]} table")
            p = len(self.theta_hat0[i])
            g = np.array(self.gamma[i])
            if g.shape != (p, p):
                raise SpecificationError(f"gamma[{i + 1}] must be {p} x {p}")
            if not np.allclose(g, g.T) or np.any(np.linalg.eigvalsh(g) <= 0):
                raise SpecificationError(f"gamma[{i + 1}] must be symmetric positive definite")
        positive = [("c", _flatten(self.c)), ("varpi1", _flatten(self.varpi1)),
                    ("varpi2", _flatten(self.varpi2)), ("sigma", self.sigma),
                    ("dx", _flatten(self.dx)), ("du", self.du)]
        for name, vals in positive:
            if any(not (v > 0 and math.isfinite(v)) for v in vals):
                raise SpecificationError(f"all entries of {name} must be finite and strictly positive")
        if not self.dt > 0:
            raise SpecificationError("dt must be positive")
        if not self.horizon > self.dt:
            raise SpecificationError("horizon must exceed dt")

    @property
    def N(self) -> int:
        return len(self.c)

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(len(ci) for ci in self.c)

    @property
    def param_dims(self) -> tuple[int, ...]:
        return tuple(len(t) for t in self.theta_hat0)

    def replace(self, **changes) -> "ScenarioConfig":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return ScenarioConfig(**d)

    def scale_thresholds(self, factor: float) -> "ScenarioConfig":
        return self.replace(
            dx=tuple(tuple(v * factor for v in row) for row in self.dx),
            du=tuple(v * factor for v in self.du),
        )

    def to_dict(self) -> dict:
        return {
            "scenario": {"name": self.name},
            "sim": {"dt": self.dt, "horizon": self.horizon},
            "gains": {
                "c": _to_lists(self.c),
                "varpi1": _to_lists(self.varpi1),
                "varpi2": _to_lists(self.varpi2),
                "sigma": list(self.sigma),
                "gamma": _to_lists(self.gamma),
            },
            "thresholds": {"dx": _to_lists(self.dx), "du": list(self.du)},
            "init": {"x": _to_lists(self.x0), "theta_hat": _to_lists(self.theta_hat0)},
        }

    @classmethod
    def from_dict(cls, data: dict, base: "ScenarioConfig | None" = None) -> "ScenarioConfig":
        """Build a config from its dictionary form.

        With ``base`` given, only the keys present in ``data`` override it.
        """
        merged = base.to_dict() if base is not None else {}
        merged = _deep_merge(merged, data)
        try:
            return cls(
                name=merged["scenario"]["name"],
                dt=merged["sim"]["dt"],
                horizon=merged["sim"]["horizon"],
                c=merged["gains"]["c"],
                varpi1=merged["gains"]["varpi1"],
                varpi2=merged["gains"]["varpi2"],
                sigma=merged["gains"]["sigma"],
                gamma=merged["gains"]["gamma"],
                dx=merged["thresholds"]["dx"],
                du=merged["thresholds"]["du"],
                x0=merged["init"]["x"],
                theta_hat0=merged["init"]["theta_hat"],
            )
        except KeyError as exc:
            raise SpecificationError(f"configuration is missing key {exc}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _as_matrix(g):
    arr = np.atleast_2d(np.asarray(g, dtype=float))
    if arr.shape == (1, 1) or arr.ndim == 2:
        return tuple(tuple(float(v) for v in row) for row in arr)
    raise SpecificationError("gamma entries must be scalars or square matrices")


def _nested_tuple(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return tuple(_nested_tuple(e) for e in v)
    return float(v)


def _to_lists(v):
    if isinstance(v, tuple):
        return [_to_lists(e) for e in v]
    return v


def _flatten(v):
    if isinstance(v, tuple):
        out = []
        for e in v:
            out.extend(_flatten(e))
        return out
    return [v]


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    with open(path) as fh:
        data = json.load(fh)
    return ScenarioConfig.from_dict(data, base=base)


def save_config(config: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(config.to_json())


# --- built-in scenarios ---------------------------------------------------

SEC5_THRESHOLDS = {
    1: (((0.001, 0.002), (0.002, 0.002)), (0.01, 0.01)),
    2: (((0.005, 0.005), (0.003, 0.003)), (0.03, 0.03)),
}


def _norm2(x):
    return math.hypot(x[0], x[1])


def _sec5_phi(x):
    return np.array([0.2 * (x[0] * x[0] + x[1]) + 3.0 * math.cos(x[0] * x[1])])


def _zero_psi(x):
    return 0.0


def _zero_coupling(xj, u, t):
    return 0.0


def sec5_plant() -> PlantSpec:
    """The two-subsystem benchmark plant with non-triangular couplings."""
    f = (
        (
            (lambda xj, u, t: 0.1 * math.sin(u[0] * u[1]) * _norm2(xj),
             lambda xj, u, t: 0.1 * _norm2(xj)),
            (lambda xj, u, t: 0.15 * _norm2(xj),
             lambda xj, u, t: 0.15 * math.sin(_norm2(xj))),
        ),
        (
            (lambda xj, u, t: 0.15 * _norm2(xj),
             lambda xj, u, t: 0.15 * _norm2(xj)),
            (lambda xj, u, t: 0.1 * math.cos(u[0] * u[1]) * _norm2(xj),
             lambda xj, u, t: 0.1 * math.log1p(_norm2(xj))),
        ),
    )
    return PlantSpec(
        orders=(2, 2),
        param_dims=(1, 1),
        phi=(_sec5_phi, _sec5_phi),
        psi=(_zero_psi, _zero_psi),
        theta=(
            lambda t: np.array([0.1 + 0.1 * math.sin(0.2 * t)]),
            lambda t: np.array([0.1 + 0.1 * math.cos(0.2 * t)]),
        ),
        coupling=f,
        constants=AssumptionConstants(
            hbar=(((0.0, 0.0), (0.0, 0.0)), ((0.0, 0.0), (0.0, 0.0))),
            eps=(((0.0, 0.0), (0.0, 0.0)), ((0.0, 0.0), (0.0, 0.0))),
        ),
        notes=(
            "phi_i(0) = 3 != 0 although the model class asks for phi_i(0) = 0, kept as given",
            "phi_i has a quadratic term in x_{i,1} and is not globally Lipschitz, kept as given",
            "hbar and eps are left at 0; they are analysis-only metadata",
        ),
    )


def builtin_sec5_scenario(threshold_set: int = 1) -> tuple[PlantSpec, ScenarioConfig]:
    """Benchmark plant and its published parameters.

    ``threshold_set`` selects the first (tight) or second (loose) set of
    triggering thresholds; every other parameter is shared.
    """
    if threshold_set not in SEC5_THRESHOLDS:
        raise SpecificationError(f"unknown threshold set {threshold_set}; choose 1 or 2")
    dx, du = SEC5_THRESHOLDS[threshold_set]
    ones = ((1.0, 1.0), (1.0, 1.0))
    cfg = ScenarioConfig(
        name="sec5" if threshold_set == 1 else "sec5_set2",
        c=((0.5, 0.3), (1.8, 1.5)),
        varpi1=(ones, ones),
        varpi2=(ones, ones),
        sigma=(0.001, 0.001),
        gamma=(0.5, 0.5),
        dx=dx,
        du=du,
        x0=((0.2, 0.2), (0.1, 0.1)),
        theta_hat0=((0.0,), (0.0,)),
        dt=1e-3,
        horizon=30.0,
    )
    return sec5_plant(), cfg


def zero_scenario() -> tuple[PlantSpec, ScenarioConfig]:
    """Two double integrators with every uncertainty removed, starting at rest."""
    zf = (_zero_coupling, _zero_coupling)
    spec = PlantSpec(
        orders=(2, 2),
        param_dims=(1, 1),
        phi=(lambda x: np.zeros(1), lambda x: np.zeros(1)),
        psi=(_zero_psi, _zero_psi),
        theta=(lambda t: np.zeros(1), lambda t: np.zeros(1)),
        coupling=((zf, zf), (zf, zf)),
        constants=AssumptionConstants(
            hbar=(((0.0, 0.0), (0.0, 0.0)), ((0.0, 0.0), (0.0, 0.0))),
            eps=(((0.0, 0.0), (0.0, 0.0)), ((0.0, 0.0), (0.0, 0.0))),
            lip_phi=(0.0, 0.0), lip_psi=(0.0, 0.0), beta_theta=(0.0, 0.0),
        ),
    )
    _, base = builtin_sec5_scenario(1)
    cfg = base.replace(name="zero", x0=((0.0, 0.0), (0.0, 0.0)), horizon=2.0)
    return spec, cfg


SCENARIOS: dict[str, Callable[[], tuple[PlantSpec, ScenarioConfig]]] = {
    "sec5": lambda: builtin_sec5_scenario(1),
    "sec5_set2": lambda: builtin_sec5_scenario(2),
    "zero": zero_scenario,
}


def get_scenario(name: str) -> tuple[PlantSpec, ScenarioConfig]:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise SpecificationError(
            f"unknown scenario {name!r}; available: {', '.join(sorted(SCENARIOS))}"
        ) from None
    return factory()


def check_compatible(spec: PlantSpec, config: ScenarioConfig) -> None:
    if config.orders != spec.orders:
        raise SpecificationError(f"config orders {config.orders} do not match plant orders {spec.orders}")
    if config.param_dims != spec.param_dims:
        raise SpecificationError(
            f"config parameter sizes {config.param_dims} do not match plant {spec.param_dims}"
        )


# --- empirical assumption constants ---------------------------------------

def estimate_assumption_constants(
    spec: PlantSpec,
    box: tuple[float, float] = (-1.0, 1.0),
    n_samples: int = 2000,
    *,
    u_box: tuple[float, float] = (-5.0, 5.0),
    t_box: tuple[float, float] = (0.0, 30.0),
    offset: float = 1e-12,
    seed: int = 0,
) -> AssumptionConstants:
    """Sampling-based lower estimates of the coupling and Lipschitz constants.

    ``hbar`` is the largest observed ``|f| / (||x_j|| + offset)``; ``eps`` the
    largest ``|f|`` observed with ``x_j = 0``. Lipschitz constants are the
    largest difference quotients over random state pairs. All values are
    lower bounds of the true constants on the sampled box.
    """
    lo, hi = box
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise SpecificationError("sample box must be a bounded, non-empty interval")
    if n_samples < 1:
        raise SpecificationError("need at least one sample")
    rng = np.random.default_rng(seed)
    N = spec.N

    def _check(val, where):
        val = np.asarray(val, dtype=float)
        if not np.all(np.isfinite(val)):
            raise NumericError("non-finite function evaluation", where)
        return val

    hbar = [[[0.0] * spec.orders[i] for _ in range(N)] for i in range(N)]
    eps = [[[0.0] * spec.orders[i] for _ in range(N)] for i in range(N)]
    for _ in range(n_samples):
        u = rng.uniform(*u_box, size=N)
        t = float(rng.uniform(*t_box))
        for j in range(N):
            xj = rng.uniform(lo, hi, size=spec.orders[j])
            zero = np.zeros(spec.orders[j])
            nrm = float(np.linalg.norm(xj))
            for i in range(N):
                for k in range(spec.orders[i]):
                    f = spec.coupling[i][j][k]
                    val = abs(float(_check(f(xj, u, t), (i + 1, j + 1, k + 1))))
                    hbar[i][j][k] = max(hbar[i][j][k], val / (nrm + offset))
                    val0 = abs(float(_check(f(zero, u, t), (i + 1, j + 1, k + 1))))
                    eps[i][j][k] = max(eps[i][j][k], val0)

    lip_phi = [0.0] * N
    lip_psi = [0.0] * N
    for i in range(N):
        n = spec.orders[i]
        for _ in range(n_samples):
            a = rng.uniform(lo, hi, size=n)
            b = rng.uniform(lo, hi, size=n)
            d = float(np.linalg.norm(a - b))
            if d == 0.0:
                continue
            dphi = _check(spec.phi[i](a), (i + 1, "phi")) - _check(spec.phi[i](b), (i + 1, "phi"))
            lip_phi[i] = max(lip_phi[i], float(np.linalg.norm(dphi)) / d)
            dpsi = float(_check(spec.psi[i](a), (i + 1, "psi"))) - float(_check(spec.psi[i](b), (i + 1, "psi")))
            lip_psi[i] = max(lip_psi[i], abs(dpsi) / d)

    return AssumptionConstants(
        hbar=_nested_tuple(hbar),
        eps=_nested_tuple(eps),
        lip_phi=tuple(lip_phi),
        lip_psi=tuple(lip_psi),
        lower_bounds_only=True,
    )
