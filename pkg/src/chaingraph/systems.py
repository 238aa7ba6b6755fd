"""Built-in dynamical systems behind a single "one step" interface.

Every system is evaluated in batches: ``step_points(spec, X)`` maps an
``(n, d)`` array of states to their images plus a mask of the points whose
step completed.  ``evaluate`` is the single-point wrapper that raises
:class:`Escape` / :class:`NoReturn` instead of masking.

Flows are integrated with fixed-step RK4 so box images are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from . import galerkin
from .geometry import Box


class SystemInputError(ValueError):
    """Bad parameters, wrong state dimension or non-finite input."""


class Escape(RuntimeError):
    """A trajectory left the system's safety ball before the step finished."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class NoReturn(RuntimeError):
    """No section crossing was found within the configured maximum time."""


# -- step modes -----------------------------------------------------------------


@dataclass(frozen=True)
class SectionConfig:
    """Return-map section.

    With ``period`` set, the return is "integrate one forcing period" (the
    stroboscopic section t = 0 mod period).  Otherwise the section is the
    hyperplane ``state[coord] == value`` crossed with sign ``direction``.
    """

    period: float | None = None
    coord: int = 2
    value: float = 0.0
    direction: int = -1
    max_time: float = 50.0
    tol: float = 1e-8

    def __post_init__(self):
        if self.period is not None and not self.period > 0:
            raise SystemInputError("section period must be positive")
        if self.direction not in (-1, 1):
            raise SystemInputError("crossing direction must be +1 or -1")


@dataclass(frozen=True)
class DiscreteMap:
    mode = "discrete"


@dataclass(frozen=True)
class TimeTMap:
    T: float
    mode = "time_T"

    def __post_init__(self):
        if not self.T > 0:
            raise SystemInputError(f"time-T map needs T > 0, got {self.T}")


@dataclass(frozen=True)
class PoincareReturn:
    section: SectionConfig = SectionConfig()
    mode = "poincare"


Step = DiscreteMap | TimeTMap | PoincareReturn


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float | None = None  # None: use the system's default

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise SystemInputError("integrator dt must be positive")


# -- system registry ------------------------------------------------------------


@dataclass(frozen=True)
class SystemKind:
    """Registry entry: how to evaluate one family of systems."""

    name: str
    flow: bool
    dim: Callable[[Mapping[str, float]], int]
    rhs: Callable | None = None  # flows: rhs(t, X, p) -> dX/dt
    map: Callable | None = None  # maps: map(X, p) -> images
    defaults: Mapping[str, float] = field(default_factory=dict)
    periodic: Callable[[Mapping[str, float]], tuple[bool, ...]] | None = None
    escaped: Callable | None = None  # escaped(X, p) -> bool mask
    validate: Callable[[Mapping[str, float]], None] | None = None
    default_dt: float = 0.01
    autonomous: bool = True
    default_step: Callable[[], Step] | None = None


SYSTEMS: dict[str, SystemKind] = {}


def register_system(kind: SystemKind) -> SystemKind:
    """Extension point for additional compiled-in systems."""
    SYSTEMS[kind.name] = kind
    return kind


def _need(cond: bool, msg: str):
    if not cond:
        raise SystemInputError(msg)


def _logistic_map(X, p):
    return p["a"] * X * (1 - X)


def _validate_logistic(p):
    _need(1 < p["a"] <= 4, f"logistic parameter a must lie in (1, 4], got {p['a']}")


def _poly_coeffs(p) -> np.ndarray:
    degs = sorted(int(k[1:]) for k in p if k.startswith("c") and k[1:].isdigit())
    if not degs:
        return np.zeros(1)
    c = np.zeros(max(degs) + 1)
    for d in degs:
        c[d] = p[f"c{d}"]
    return c


def _poly_rhs(t, X, p):
    c = _poly_coeffs(p)
    return np.polynomial.polynomial.polyval(X, c)


def _lorenz_rhs(t, X, p):
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    return np.stack([p["sigma"] * (y - x), x * (p["r"] - z) - y, x * y - p["b"] * z], axis=1)


def _pendulum_rhs(t, X, p):
    theta, omega = X[:, 0], X[:, 1]
    return np.stack([omega, -p["gamma"] * omega - np.sin(theta) + p["rho"] * np.cos(t)], axis=1)


def _validate_pendulum(p):
    _need(p["gamma"] > 0, "pendulum damping gamma must be positive")


def _rotation_rhs(t, X, p):
    return np.full_like(X, 2 * np.pi * p["omega"])


def _sin_pi_over_x_rhs(t, X, p):
    with np.errstate(divide="ignore", invalid="ignore"):
        v = X * np.sin(np.pi / X)
    return np.where(X == 0, 0.0, v)


def _ci_rhs(t, X, p):
    return galerkin.rhs_batch(X, p["lambda"], int(p["N"]))


def _validate_ci(p):
    _need(p["lambda"] > 0, "Chafee-Infante lambda must be positive")
    _need(int(p["N"]) >= 1 and int(p["N"]) == p["N"], "Galerkin mode count N must be an integer >= 1")


def _norm_escape(radius):
    return lambda X, p: ~np.all(np.isfinite(X), axis=1) | (np.linalg.norm(X, axis=1) > p.get("escape_radius", radius))


register_system(SystemKind(
    "logistic", flow=False, dim=lambda p: 1, map=_logistic_map,
    defaults={"a": 4.0}, validate=_validate_logistic,
))
register_system(SystemKind(
    "polynomial1d", flow=True, dim=lambda p: 1, rhs=_poly_rhs,
    defaults={"c1": 1.0, "c3": -1.0}, escaped=_norm_escape(1e3), default_dt=0.01,
))
register_system(SystemKind(
    "lorenz", flow=True, dim=lambda p: 3, rhs=_lorenz_rhs,
    defaults={"sigma": 10.0, "b": 8.0 / 3.0, "r": 28.0}, escaped=_norm_escape(200.0), default_dt=0.005,
))
register_system(SystemKind(
    "pendulum", flow=True, dim=lambda p: 2, rhs=_pendulum_rhs,
    defaults={"gamma": 0.2, "rho": 2.0}, periodic=lambda p: (True, False),
    escaped=lambda X, p: ~np.all(np.isfinite(X), axis=1) | (np.abs(X[:, 1]) > p.get("escape_radius", 20.0)),
    validate=_validate_pendulum, default_dt=0.005, autonomous=False,
    default_step=lambda: PoincareReturn(SectionConfig(period=2 * np.pi)),
))
register_system(SystemKind(
    "circle_rotation", flow=True, dim=lambda p: 1, rhs=_rotation_rhs,
    defaults={"omega": 1.0}, periodic=lambda p: (True,), default_dt=0.01,
))
register_system(SystemKind(
    "sin_pi_over_x", flow=True, dim=lambda p: 1, rhs=_sin_pi_over_x_rhs,
    defaults={}, escaped=_norm_escape(10.0), default_dt=0.001,
))
register_system(SystemKind(
    "chafee_infante", flow=True, dim=lambda p: 2 * int(p["N"]) + 1, rhs=_ci_rhs,
    defaults={"lambda": 0.5, "N": 8}, escaped=_norm_escape(1e3), validate=_validate_ci, default_dt=0.01,
))
register_system(SystemKind(
    "identity", flow=False, dim=lambda p: int(p["dim"]), map=lambda X, p: np.array(X, copy=True),
    defaults={"dim": 1},
))

# Names used by the JSON config, mapped onto registry keys.
KIND_ALIASES = {
    "LogisticMap": "logistic",
    "Polynomial1DFlow": "polynomial1d",
    "LorenzFlow": "lorenz",
    "PendulumPoincare": "pendulum",
    "CircleRotationFlow": "circle_rotation",
    "SinPiOverXFlow": "sin_pi_over_x",
    "ChafeeInfanteGalerkin": "chafee_infante",
    "IdentityMap": "identity",
}


@dataclass(frozen=True)
class SystemSpec:
    """A built-in system, its parameters and how one step is taken.

    ``projection`` restricts the phase space to the listed state coordinates:
    the other coordinates are held at zero on input and dropped on output.
    On an invariant coordinate subspace (e.g. the constant Fourier mode of
    the Chafee-Infante truncation) this is exact.
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    step: Step | None = None
    integrator: IntegratorConfig = IntegratorConfig()
    projection: tuple[int, ...] | None = None

    def __post_init__(self):
        kind = KIND_ALIASES.get(self.kind, self.kind)
        if kind not in SYSTEMS:
            raise SystemInputError(f"unknown system kind {self.kind!r}")
        entry = SYSTEMS[kind]
        params = {**entry.defaults, **{k: float(v) for k, v in dict(self.params).items()}}
        if entry.validate:
            entry.validate(params)
        step = self.step
        if step is None:
            step = entry.default_step() if entry.default_step else (TimeTMap(1.0) if entry.flow else DiscreteMap())
        if entry.flow and isinstance(step, DiscreteMap):
            raise SystemInputError(f"{kind} is a flow; use a time-T map or a return map")
        if not entry.flow and not isinstance(step, DiscreteMap):
            raise SystemInputError(f"{kind} is a map; only discrete steps apply")
        if not entry.autonomous and isinstance(step, TimeTMap):
            period = 2 * np.pi
            k = step.T / period
            if abs(k - round(k)) > 1e-9 or round(k) < 1:
                raise SystemInputError("non-autonomous systems need T a positive multiple of the forcing period")
        if isinstance(step, PoincareReturn) and step.section.period is None:
            _need(0 <= step.section.coord < entry.dim(params), "section coordinate out of range")
        if self.projection is not None:
            proj = tuple(int(i) for i in self.projection)
            _need(len(proj) > 0 and len(set(proj)) == len(proj), "projection must list distinct coordinates")
            _need(all(0 <= i < self.state_dim_for(entry, params, step) for i in proj), "projection index out of range")
            object.__setattr__(self, "projection", proj)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "step", step)

    @staticmethod
    def state_dim_for(entry, params, step) -> int:
        d = entry.dim(params)
        if isinstance(step, PoincareReturn) and step.section.period is None:
            d -= 1
        return d

    @property
    def entry(self) -> SystemKind:
        return SYSTEMS[self.kind]

    @property
    def flow_dim(self) -> int:
        return self.entry.dim(self.params)

    @property
    def dim(self) -> int:
        """Dimension of the phase space the step acts on."""
        if self.projection is not None:
            return len(self.projection)
        return self.state_dim_for(self.entry, self.params, self.step)

    @property
    def dt(self) -> float:
        return self.integrator.dt or self.entry.default_dt

    @property
    def periodic(self) -> tuple[bool, ...]:
        full = self.entry.periodic(self.params) if self.entry.periodic else (False,) * self.flow_dim
        if isinstance(self.step, PoincareReturn) and self.step.section.period is None:
            full = tuple(v for i, v in enumerate(full) if i != self.step.section.coord)
        if self.projection is not None:
            full = tuple(full[i] for i in self.projection)
        return tuple(full)

    def with_step(self, step: Step) -> "SystemSpec":
        return replace(self, step=step)

    def with_params(self, **params) -> "SystemSpec":
        return replace(self, params={**self.params, **params})


# -- integration ----------------------------------------------------------------


def _rk4_step(rhs, t, X, h, p):
    with np.errstate(over="ignore", invalid="ignore"):
        return _rk4(rhs, t, X, h, p)


def _rk4(rhs, t, X, h, p):
    k1 = rhs(t, X, p)
    k2 = rhs(t + h / 2, X + (h / 2) * k1, p)
    k3 = rhs(t + h / 2, X + (h / 2) * k2, p)
    k4 = rhs(t + h, X + h * k3, p)
    return X + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _escaped(entry: SystemKind, X, p):
    bad = ~np.all(np.isfinite(X), axis=1)
    if entry.escaped is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            bad |= entry.escaped(X, p)
    return bad


def integrate(spec: SystemSpec, X, T: float, t0: float = 0.0):
    """RK4 from ``t0`` to ``t0 + T`` with ``ceil(T/dt)`` equal steps.

    Works on full flow states ``(n, flow_dim)``.  Returns ``(Y, ok)``;
    escaped rows are frozen at their last good state and flagged.
    """
    entry = spec.entry
    X = np.array(X, dtype=float, copy=True)
    ok = ~_escaped(entry, X, spec.params)
    if T == 0:
        return X, ok
    n = max(1, math.ceil(T / spec.dt - 1e-9))
    h = T / n
    active = np.nonzero(ok)[0]
    Y = X[active]
    for i in range(n):
        if Y.shape[0] == 0:
            break
        Y = _rk4_step(entry.rhs, t0 + i * h, Y, h, spec.params)
        bad = _escaped(entry, Y, spec.params)
        if bad.any():
            ok[active[bad]] = False
            keep = ~bad
            X[active[keep]] = Y[keep]
            active, Y = active[keep], Y[keep]
    X[active] = Y
    return X, ok


def _section_return(spec: SystemSpec, X):
    """Next directed crossing of the hyperplane section for full states X."""
    entry, sec = spec.entry, spec.step.section
    X = np.array(X, dtype=float, copy=True)
    out = np.full_like(X, np.nan)
    ok = np.zeros(X.shape[0], dtype=bool)
    h = spec.dt
    active = np.nonzero(~_escaped(entry, X, spec.params))[0]
    Y = X[active]
    t = 0.0
    n_bisect = max(1, math.ceil(math.log2(h / sec.tol)))
    while active.size and t < sec.max_time:
        Ynew = _rk4_step(entry.rhs, t, Y, h, spec.params)
        g_old = sec.direction * (Y[:, sec.coord] - sec.value)
        g_new = sec.direction * (Ynew[:, sec.coord] - sec.value)
        crossed = (g_old < 0) & (g_new >= 0)
        bad = _escaped(entry, Ynew, spec.params) & ~crossed
        if crossed.any():
            lo = np.zeros(crossed.sum())
            hi = np.full(crossed.sum(), h)
            Y0 = Y[crossed]
            for _ in range(n_bisect):
                mid = (lo + hi) / 2
                Ym = _rk4_step(entry.rhs, t, Y0, mid[:, None], spec.params)
                gm = sec.direction * (Ym[:, sec.coord] - sec.value)
                below = gm < 0
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
            Yc = _rk4_step(entry.rhs, t, Y0, hi[:, None], spec.params)
            Yc[:, sec.coord] = sec.value
            out[active[crossed]] = Yc
            ok[active[crossed]] = True
        keep = ~crossed & ~bad
        active, Y = active[keep], Ynew[keep]
        t += h
    return out, ok


def _lift(spec: SystemSpec, X) -> np.ndarray:
    """Phase-space points -> full flow/map states."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    step = spec.step
    if spec.projection is not None:
        base_dim = SystemSpec.state_dim_for(spec.entry, spec.params, step)
        Z = np.zeros((X.shape[0], base_dim))
        Z[:, list(spec.projection)] = X
        X = Z
    if isinstance(step, PoincareReturn) and step.section.period is None:
        sec = step.section
        X = np.insert(X, sec.coord, sec.value, axis=1)
    return X


def _drop(spec: SystemSpec, Y) -> np.ndarray:
    step = spec.step
    if isinstance(step, PoincareReturn) and step.section.period is None:
        Y = np.delete(Y, step.section.coord, axis=1)
    if spec.projection is not None:
        Y = Y[:, list(spec.projection)]
    return Y


def step_points(spec: SystemSpec, X):
    """One step of the system on a batch of phase-space points.

    Returns ``(Y, ok)`` where ``ok[i]`` is False if point ``i`` escaped the
    safety ball or (for hyperplane sections) never returned.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.dim:
        raise SystemInputError(f"state has dimension {X.shape[1]}, {spec.kind} expects {spec.dim}")
    Z = _lift(spec, X)
    entry, step = spec.entry, spec.step
    if isinstance(step, DiscreteMap):
        Y = entry.map(Z, spec.params)
        ok = np.all(np.isfinite(Y), axis=1)
    elif isinstance(step, TimeTMap):
        Y, ok = integrate(spec, Z, step.T)
    elif step.section.period is not None:
        Y, ok = integrate(spec, Z, step.section.period)
    else:
        Y, ok = _section_return(spec, Z)
    return _drop(spec, Y), ok


def evaluate(spec: SystemSpec, x) -> np.ndarray:
    """One step from a single point; raises on escape or missing return."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise SystemInputError("state must be finite")
    Y, ok = step_points(spec, x[None, :])
    if not ok[0]:
        if isinstance(spec.step, PoincareReturn) and spec.step.section.period is None:
            raise NoReturn(f"no crossing within t={spec.step.section.max_time}")
        raise Escape(f"{spec.kind} trajectory left its safety region")
    return Y[0]


def flow_time_T(spec: SystemSpec, x, T: float) -> np.ndarray:
    """Time-T flow map of a flow system, batched when ``x`` is 2-D.

    For non-autonomous systems the integration starts at t = 0.
    """
    if not spec.entry.flow:
        raise SystemInputError(f"{spec.kind} is not a flow")
    if not T > 0:
        raise SystemInputError("T must be positive")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != spec.flow_dim:
        raise SystemInputError(f"state has dimension {X.shape[1]}, flow expects {spec.flow_dim}")
    Y, ok = integrate(spec, X, T)
    if single:
        if not ok[0]:
            raise Escape(f"{spec.kind} trajectory left its safety region")
        return Y[0]
    return Y


def poincare_return(spec: SystemSpec, x) -> np.ndarray:
    """Return map of a system whose step is a :class:`PoincareReturn`."""
    if not isinstance(spec.step, PoincareReturn):
        raise SystemInputError("system step is not a return map")
    return evaluate(spec, x)


def vector_field(spec: SystemSpec, X, t: float = 0.0) -> np.ndarray:
    """The flow's right-hand side on full states."""
    if not spec.entry.flow:
        raise SystemInputError(f"{spec.kind} is not a flow")
    return spec.entry.rhs(t, np.atleast_2d(np.asarray(X, dtype=float)), spec.params)


# -- helpers tied to particular systems ------------------------------------------


LOGISTIC_DEGENERATE_MARGIN = 0.05


def logistic_trapping_interval(a: float, margin: float = LOGISTIC_DEGENERATE_MARGIN) -> tuple[Box, bool]:
    """Trapping interval ``[l_a^2(1/2), l_a(1/2)]`` of the logistic map.

    Returns the interval and a flag telling whether it was degenerate
    (a == 2, where both ends are the fixed point 1/2) and had to be widened
    by ``margin`` on each side.
    """
    if not 1 < a <= 4:
        raise SystemInputError(f"logistic parameter a must lie in (1, 4], got {a}")
    lo = a * a / 4 * (1 - a / 4)
    hi = a / 4
    if hi - lo <= 1e-12:
        return Box((lo - margin,), (hi + margin,)), True
    return Box((lo,), (hi,)), False


def lorenz_fixed_points(sigma: float = 10.0, b: float = 8 / 3, r: float = 28.0) -> np.ndarray:
    """Origin and the two symmetric equilibria C-, C+ (rows)."""
    if r <= 1:
        return np.zeros((1, 3))
    c = math.sqrt(b * (r - 1))
    return np.array([[0.0, 0.0, 0.0], [-c, -c, r - 1], [c, c, r - 1]])


def lipschitz_estimate(spec: SystemSpec, center, radius: float, n_pairs: int = 20000, seed: int = 0) -> float:
    """Empirical Lipschitz bound of the vector field on a ball (max secant slope)."""
    rng = np.random.default_rng(seed)
    d = spec.flow_dim
    center = np.asarray(center, dtype=float)

    def sample(n):
        v = rng.normal(size=(n, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return center + v * radius * rng.random((n, 1)) ** (1 / d)

    P, Q = sample(n_pairs), sample(n_pairs)
    Q = P + (Q - P) * rng.random((n_pairs, 1)) * 0.1
    num = np.linalg.norm(vector_field(spec, P) - vector_field(spec, Q), axis=1)
    den = np.linalg.norm(P - Q, axis=1)
    return float(np.max(num / np.maximum(den, 1e-300)))
