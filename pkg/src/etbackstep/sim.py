"""Fixed-step closed-loop simulation of plant plus controller."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .ccs import backstep, control_u
from .errors import ContractError, NumericError, SpecificationError
from .etcs import Event, HeldSignals, TriggerThresholds, control_v, etm_step
from .gains import GainTable, gain_table_for
from .scenario import PlantSpec, ScenarioConfig, _derivative, check_compatible

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
CONTROLLERS = ("ccs", "etcs")


@dataclass
class SimResult:
    """Everything recorded along one run, sampled on a uniform grid.

    Row ``n`` holds the state at ``t[n]`` and the input applied over
    ``[t[n], t[n+1])``. For event-triggered runs ``xbar`` is the held state
    after the triggering rule ran at ``t[n]`` and ``v`` the candidate input.
    """

    kind: str
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    theta_hat: np.ndarray
    orders: tuple[int, ...]
    param_dims: tuple[int, ...]
    dt: float
    kappa: float
    fingerprint: str = ""
    v: np.ndarray | None = None
    xbar: np.ndarray | None = None
    held: HeldSignals | None = None
    truncated: bool = False
    truncated_at: float | None = None
    max_state_rate: float = 0.0

    @property
    def N(self) -> int:
        return len(self.orders)

    @property
    def offsets(self) -> list[int]:
        return [int(v) for v in np.concatenate([[0], np.cumsum(self.orders)])]

    def state_names(self) -> list[str]:
        return [f"x_{i + 1}_{k + 1}" for i, n in enumerate(self.orders) for k in range(n)]

    def theta_names(self) -> list[str]:
        return [f"theta_hat_{i + 1}_{m + 1}" for i, p in enumerate(self.param_dims) for m in range(p)]

    def subsystem_states(self, i: int, held: bool = False) -> np.ndarray:
        off = self.offsets
        src = self.xbar if held else self.x
        if src is None:
            raise ContractError("held states are recorded only for event-triggered runs")
        return src[:, off[i]:off[i + 1]]

    def events(self) -> list[Event]:
        """All logged events, time-ordered, state channels before inputs at ties."""
        if self.held is None:
            return []
        out = []
        chans = self.held.channels()
        for idx, times in enumerate(self.held.state_events):
            i, k = chans[idx]
            out += [Event("state", i + 1, k + 1, t) for t in times]
        for i, times in enumerate(self.held.input_events):
            out += [Event("input", i + 1, 0, t) for t in times]
        out.sort(key=lambda e: (e.time, e.kind != "state", e.i, e.k))
        return out


class ChannelStats(NamedTuple):
    count: int
    min_gap: float | None
    mean_gap: float | None


def _rk4(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), k1


def run(
    spec: PlantSpec,
    config: ScenarioConfig,
    controller: str = "ccs",
    *,
    thresholds: TriggerThresholds | None = None,
    table: GainTable | None = None,
    hold_input: bool = False,
) -> SimResult:
    """Integrate the closed loop over ``[0, config.horizon]`` with step ``config.dt``.

    Plant states and parameter estimates are advanced jointly by classical
    RK4. The continuous controller is evaluated inside every RK stage
    unless ``hold_input`` freezes it over each step at its step-start value
    (first-order accurate in ``dt``). In event-triggered mode the applied
    input is the held broadcast value and the triggering rule is evaluated
    once per grid point, after the state update, so inter-event gaps are
    at least ``dt``.
    """
    if controller not in CONTROLLERS:
        raise SpecificationError(f"controller must be one of {CONTROLLERS}, got {controller!r}")
    check_compatible(spec, config)
    table = table if table is not None else gain_table_for(config)
    etcs = controller == "etcs"
    if etcs and thresholds is None:
        thresholds = TriggerThresholds.from_config(config)

    N = spec.N
    nx = spec.n_states
    xoff = spec.offsets
    poff = [int(v) for v in np.concatenate([[0], np.cumsum(spec.param_dims)])]
    gam = [np.array(g, dtype=float) for g in config.gamma]
    sig = [float(s) for s in config.sigma]
    dt = config.dt
    steps = int(round(config.horizon / dt))
    if steps < 1:
        raise SpecificationError("horizon shorter than one step")

    x0 = np.array([v for row in config.x0 for v in row], dtype=float)
    th0 = np.array([v for row in config.theta_hat0 for v in row], dtype=float)

    def inputs(xs, th):
        return np.array([control_u(table, spec, i, xs[xoff[i]:xoff[i + 1]], th[poff[i]:poff[i + 1]])
                         for i in range(N)])

    # z_{i,n_i} is linear in x_i; its coefficient row is the last row of M_i
    zlast = [table[i].M[-1] for i in range(N)]
    alast = [table[i].xi[-1] for i in range(N)]
    xsl = spec._slices
    psl = [slice(nx + poff[i], nx + poff[i + 1]) for i in range(N)]

    def ccs_rhs(u):
        def f(t, y):
            x = y[:nx]
            out = np.empty_like(y)
            phis = [spec.phi[i](x[xsl[i]]) for i in range(N)]
            zs = [float(zlast[i] @ x[xsl[i]]) for i in range(N)]
            if u is None:
                uu = np.array([alast[i] @ x[xsl[i]] - float(np.dot(phis[i], y[psl[i]])) - spec.psi[i](x[xsl[i]])
                               for i in range(N)])
            else:
                uu = u
            out[:nx] = _derivative(spec, x, uu, t, phis)
            for i in range(N):
                out[psl[i]] = gam[i] @ (-sig[i] * y[psl[i]] + np.asarray(phis[i], dtype=float) * zs[i])
            return out
        return f

    def etcs_rhs(u, forcing):
        def f(t, y):
            x = y[:nx]
            out = np.empty_like(y)
            out[:nx] = _derivative(spec, x, u, t)
            for i in range(N):
                out[psl[i]] = gam[i] @ (-sig[i] * y[psl[i]] + forcing[i])
            return out
        return f

    def held_forcing(xbar):
        out = []
        for i in range(N):
            xb = xbar[xoff[i]:xoff[i + 1]]
            zb, _ = backstep(table[i], xb)
            out.append(np.asarray(spec.phi[i](xb), dtype=float).reshape(-1) * zb[-1])
        return out

    M = steps + 1
    T = np.arange(M) * dt
    X = np.empty((M, nx))
    TH = np.empty((M, th0.size))
    U = np.empty((M, N))
    V = np.empty((M, N)) if etcs else None
    XB = np.empty((M, nx)) if etcs else None

    y = np.concatenate([x0, th0])
    held = None
    if etcs:
        v0 = np.array([control_v(table, spec, i, x0[xoff[i]:xoff[i + 1]], th0[poff[i]:poff[i + 1]])
                       for i in range(N)])
        held, _ = HeldSignals.initialize(spec.orders, x0, v0, 0.0)
        u = held.u.copy()
        V[0] = v0
        XB[0] = held.xbar
    else:
        u = inputs(x0, th0)

    max_rate = 0.0
    truncated_at = None
    last = 0
    X[0] = x0
    TH[0] = th0
    U[0] = u
    for n in range(steps):
        t = T[n]
        if etcs:
            f = etcs_rhs(u, held_forcing(held.xbar))
        else:
            f = ccs_rhs(u if hold_input else None)
        y_new, k1 = _rk4(f, t, y, dt)
        max_rate = max(max_rate, float(np.max(np.abs(k1[:nx]))))
        x_new = y_new[:nx]
        if not np.all(np.isfinite(y_new)) or np.max(np.abs(x_new)) > DIVERGENCE_LIMIT:
            truncated_at = float(T[n + 1])
            log.warning("divergence guard tripped at t=%.6g", truncated_at)
            break
        y = y_new
        th = y[nx:]
        tn = T[n + 1]
        if etcs:
            def candidate(h, th=th):
                return [control_v(table, spec, i, h.xbar[xoff[i]:xoff[i + 1]], th[poff[i]:poff[i + 1]])
                        for i in range(N)]
            etm_step(thresholds, held, x_new, candidate, float(tn))
            V[n + 1] = candidate(held)
            u = held.u.copy()
            XB[n + 1] = held.xbar
        else:
            u = inputs(x_new, th)
        X[n + 1] = x_new
        TH[n + 1] = th
        U[n + 1] = u
        last = n + 1

    keep = last + 1
    return SimResult(
        kind=controller,
        t=T[:keep],
        x=X[:keep],
        u=U[:keep],
        theta_hat=TH[:keep],
        orders=tuple(spec.orders),
        param_dims=tuple(spec.param_dims),
        dt=dt,
        kappa=max_rate * dt,
        max_state_rate=max_rate,
        fingerprint=config.fingerprint(),
        v=V[:keep] if etcs else None,
        xbar=XB[:keep] if etcs else None,
        held=held,
        truncated=truncated_at is not None,
        truncated_at=truncated_at,
    )


def inter_event_stats(result: SimResult) -> dict[str, ChannelStats]:
    """Per-channel event counts and gaps, excluding the initial broadcast."""
    if result.kind != "etcs" or result.held is None:
        raise ContractError("inter-event statistics need an event-triggered run")
    out = {}
    chans = result.held.channels()
    logs = [(f"x_{i + 1}_{k + 1}", result.held.state_events[idx]) for idx, (i, k) in enumerate(chans)]
    logs += [(f"u_{i + 1}", times) for i, times in enumerate(result.held.input_events)]
    for name, times in logs:
        tt = np.asarray(times, dtype=float)
        count = int(np.sum(tt > 0.0))
        gaps = np.diff(tt)
        if count == 0:
            out[name] = ChannelStats(0, None, None)
        else:
            out[name] = ChannelStats(count, float(gaps.min()), float(gaps.mean()))
    return out
