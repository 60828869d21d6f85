"""Event-triggered variant: held signals, triggering rule, triggered control.

Each state channel ``x_{i,k}`` and each input ``u_i`` broadcasts only when
it has drifted more than its threshold from the last broadcast value.
One held copy per state channel is shared by every receiver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .ccs import adapt_rate, backstep, control_u
from .errors import ContractError, SpecificationError
from .gains import GainTable


# deviations within this relative margin of the threshold count as ties
# (e.g. 0.51 - 0.5 against 0.01) and do not fire
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class TriggerThresholds:
    """``dx[i][k]`` per state channel and ``du[i]`` per input, all > 0."""

    dx: tuple
    du: tuple

    def __post_init__(self):
        dx = tuple(tuple(float(v) for v in row) for row in self.dx)
        du = tuple(float(v) for v in self.du)
        if len(dx) != len(du):
            raise SpecificationError("dx and du must cover the same subsystems")
        if any(v <= 0 for row in dx for v in row) or any(v <= 0 for v in du):
            raise SpecificationError("triggering thresholds must be strictly positive")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "du", du)

    @classmethod
    def from_config(cls, config) -> "TriggerThresholds":
        return cls(config.dx, config.du)

    @property
    def flat_dx(self) -> np.ndarray:
        return np.array([v for row in self.dx for v in row])

    def scaled(self, factor: float) -> "TriggerThresholds":
        return TriggerThresholds(
            tuple(tuple(v * factor for v in row) for row in self.dx),
            tuple(v * factor for v in self.du),
        )


class Event(NamedTuple):
    kind: str  # "state" or "input"
    i: int  # 1-based subsystem
    k: int  # 1-based channel (0 for inputs)
    time: float

    @property
    def channel_id(self) -> str:
        return f"x_{self.i}_{self.k}" if self.kind == "state" else f"u_{self.i}"


@dataclass
class HeldSignals:
    """Last broadcast values and per-channel event logs of one run.

    ``xbar`` is the flat vector of held states, ``u`` the held inputs.
    """

    orders: tuple[int, ...]
    xbar: np.ndarray
    u: np.ndarray
    state_events: list[list[float]] = field(default_factory=list)
    input_events: list[list[float]] = field(default_factory=list)
    last_time: float | None = None

    @classmethod
    def initialize(cls, orders, x0, v0, t0: float = 0.0) -> tuple["HeldSignals", list[Event]]:
        """Broadcast every channel once at ``t0``."""
        x0 = np.array(x0, dtype=float)
        v0 = np.array(v0, dtype=float)
        held = cls(tuple(orders), x0.copy(), v0.copy(),
                   [[t0] for _ in range(len(x0))], [[t0] for _ in range(len(v0))], t0)
        events = [Event("state", i + 1, k + 1, t0) for i, k in held.channels()]
        events += [Event("input", i + 1, 0, t0) for i in range(len(v0))]
        return held, events

    def channels(self):
        """(i, k) pairs in flat-vector order, 0-based."""
        return [(i, k) for i, n in enumerate(self.orders) for k in range(n)]

    def split(self) -> list[np.ndarray]:
        off = np.concatenate([[0], np.cumsum(self.orders)]).astype(int)
        return [self.xbar[off[i]:off[i + 1]] for i in range(len(self.orders))]

    def snapshot(self) -> "HeldSignals":
        return HeldSignals(self.orders, self.xbar.copy(), self.u.copy(),
                           [list(e) for e in self.state_events],
                           [list(e) for e in self.input_events], self.last_time)


def etm_step(
    thresholds: TriggerThresholds,
    held: HeldSignals,
    x,
    v: Sequence[float] | Callable[[HeldSignals], Sequence[float]],
    t: float,
) -> list[Event]:
    """Apply the triggering rule at time ``t`` and update ``held`` in place.

    A channel fires when its deviation from the held value is strictly
    larger than its threshold; ties up to rounding do not fire. State
    channels are committed first; ``v`` may be a callable receiving the
    updated ``held`` so that the candidate input can be recomputed from the
    fresh held states before the input rule is checked.
    """
    if held.last_time is not None and not t > held.last_time:
        raise ContractError(f"trigger time {t} does not advance past {held.last_time}")
    x = np.asarray(x, dtype=float)
    if x.shape != held.xbar.shape:
        raise ContractError("state vector does not match held signals")
    events = []
    dx = thresholds.flat_dx
    fire = np.abs(x - held.xbar) > dx * (1.0 + TIE_RTOL)
    if fire.any():
        for idx in np.flatnonzero(fire):
            held.xbar[idx] = x[idx]
            held.state_events[idx].append(t)
        chans = held.channels()
        events += [Event("state", chans[idx][0] + 1, chans[idx][1] + 1, t) for idx in np.flatnonzero(fire)]
    vv = np.asarray(v(held) if callable(v) else v, dtype=float)
    for i, du in enumerate(thresholds.du):
        if abs(vv[i] - held.u[i]) > du * (1.0 + TIE_RTOL):
            held.u[i] = vv[i]
            held.input_events[i].append(t)
            events.append(Event("input", i + 1, 0, t))
    held.last_time = t
    return events


def control_v(table: GainTable, spec, i: int, xbar_i, theta_hat_i) -> float:
    """Candidate input from held states; same law as the continuous scheme."""
    return control_u(table, spec, i, xbar_i, theta_hat_i)


def adapt_rate_triggered(table: GainTable, spec, i: int, xbar_i, theta_hat_i, sigma: float, gamma) -> np.ndarray:
    zbar, _ = backstep(table[i], xbar_i)
    return adapt_rate(spec, i, xbar_i, theta_hat_i, zbar[-1], sigma, gamma)
