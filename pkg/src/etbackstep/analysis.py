"""Trajectory-level verification, run comparison and CSV emission."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError
from .etcs import TriggerThresholds
from .gains import GainTable, Lemma2Bounds, lemma1_constant
from .sim import SimResult, inter_event_stats

# event times are n*dt in floating point, so consecutive gaps can undershoot dt by rounding
GAP_RTOL = 1e-9


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    measured: float
    bound: float
    slack: float = 0.0
    detail: str = ""


@dataclass
class VerificationReport:
    title: str
    fingerprint: str = ""
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: Check) -> None:
        self.checks.append(check)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_csv(self) -> str:
        rows = [[c.name, "pass" if c.passed else "fail", _fmt(c.measured), _fmt(c.bound), _fmt(c.slack), c.detail]
                for c in self.checks]
        return _csv_text(["check", "status", "measured", "bound", "slack", "detail"], rows)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.title}: {status} ({len(self.checks) - len(self.failures())}/{len(self.checks)} checks)"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _require_etcs(result: SimResult, what: str) -> None:
    if result.kind != "etcs" or result.xbar is None:
        raise ContractError(f"{what} needs an event-triggered run")


def check_lemma2(result: SimResult, bounds: Lemma2Bounds, table: GainTable) -> VerificationReport:
    """Check the recorded trigger-induced gaps against the propagated bounds.

    At every grid point ``|z - zbar| <= dz + kappa`` and
    ``|alpha - alphabar| <= dalpha + kappa (1 + K)`` per channel.
    """
    _require_etcs(result, "lemma 2 check")
    kappa = result.kappa
    rep = VerificationReport("lemma2", result.fingerprint)
    for i, g in enumerate(table.subsystems):
        x = result.subsystem_states(i)
        xb = result.subsystem_states(i, held=True)
        z, zb = x @ g.M.T, xb @ g.M.T
        a, ab = x @ g.xi.T, xb @ g.xi.T
        for k in range(g.order):
            for label, err, bound, slack in (
                ("z", np.abs(z[:, k] - zb[:, k]), bounds.dz[i][k], kappa),
                ("alpha", np.abs(a[:, k] - ab[:, k]), bounds.dalpha[i][k], kappa * (1.0 + g.K[k])),
            ):
                bad = np.flatnonzero(err > bound + slack)
                detail = ""
                if bad.size:
                    detail = f"first violation at (i={i + 1}, k={k + 1}, t={result.t[bad[0]]!r})"
                rep.add(Check(f"{label}_{i + 1}_{k + 1}", bad.size == 0, float(err.max()), float(bound), slack, detail))
    return rep


def check_hold(result: SimResult, thresholds: TriggerThresholds) -> VerificationReport:
    """Held values only change at logged events and stay within threshold plus slack."""
    _require_etcs(result, "hold check")
    rep = VerificationReport("hold", result.fingerprint)
    dx = thresholds.flat_dx
    names = result.state_names()
    for idx, name in enumerate(names):
        xb = result.xbar[:, idx]
        changes = set(np.flatnonzero(np.diff(xb) != 0.0) + 1)
        logged = {int(round(t / result.dt)) for t in result.held.state_events[idx]} - {0}
        consistent = changes <= logged
        err = float(np.max(np.abs(result.x[:, idx] - xb)))
        ok = consistent and err <= dx[idx] + result.kappa
        rep.add(Check(f"hold_{name}", ok, err, float(dx[idx]), result.kappa,
                      "" if consistent else "held value changed without an event"))
    return rep


def zeno_report(result: SimResult) -> VerificationReport:
    """Minimum inter-event gap per channel against the step size."""
    stats = inter_event_stats(result)
    rep = VerificationReport("zeno", result.fingerprint)
    floor = result.dt * (1.0 - GAP_RTOL)
    for name, st in stats.items():
        gap = st.min_gap
        ok = gap is None or gap >= floor
        rep.add(Check(f"min_gap_{name}", ok, float("nan") if gap is None else gap, result.dt, 0.0,
                      f"count={st.count}"))
    return rep


def residual_set(result: SimResult, tail_start: float) -> np.ndarray:
    """Largest ``|x_{i,1}|`` over ``[tail_start, T]`` for each subsystem."""
    if not tail_start < result.t[-1]:
        raise ContractError(f"tail start {tail_start} is not before the end of the run ({result.t[-1]})")
    mask = result.t >= tail_start
    off = result.offsets
    return np.array([float(np.max(np.abs(result.x[mask, off[i]]))) for i in range(result.N)])


def resample(result: SimResult, stride: int) -> SimResult:
    """Every ``stride``-th grid point, e.g. to compare runs at ``dt`` and ``dt/stride``."""
    sl = slice(None, None, stride)
    return replace(
        result,
        t=result.t[sl], x=result.x[sl], u=result.u[sl], theta_hat=result.theta_hat[sl],
        v=None if result.v is None else result.v[sl],
        xbar=None if result.xbar is None else result.xbar[sl],
        dt=result.dt * stride,
    )


def compare_runs(a: SimResult, b: SimResult) -> dict[str, float]:
    """Sup-norm distance per recorded signal, plus ``x`` over all states."""
    if a.t.shape != b.t.shape or not np.allclose(a.t, b.t, rtol=0, atol=1e-9 * max(a.dt, b.dt)):
        raise ContractError("runs are recorded on different time grids")
    if a.orders != b.orders or a.param_dims != b.param_dims:
        raise ContractError("runs come from different plant layouts")
    out = {}
    for names, xa, xb in ((a.state_names(), a.x, b.x),
                          ([f"u_{i + 1}" for i in range(a.N)], a.u, b.u),
                          (a.theta_names(), a.theta_hat, b.theta_hat)):
        d = np.abs(xa - xb).max(axis=0)
        out.update({n: float(v) for n, v in zip(names, d)})
    out["x"] = float(np.abs(a.x - b.x).max())
    return out


def state_distance(a: SimResult, b: SimResult) -> float:
    """Sup-norm state distance; a truncated (diverged) run is infinitely far."""
    if a.truncated or b.truncated:
        return float("inf")
    return compare_runs(a, b)["x"]


# --- CSV -------------------------------------------------------------------

def gain_table_report(table: GainTable, bounds: Lemma2Bounds | None = None) -> str:
    """One row per (i, k, l); K, dz, dalpha repeat across l."""
    rows = []
    for i, g in enumerate(table.subsystems):
        for k in range(g.order):
            for l in range(k + 1):
                rows.append([
                    i + 1, k + 1, l + 1, _fmt(float(g.xi[k, l])), _fmt(float(g.K[k])),
                    "" if bounds is None else _fmt(float(bounds.dz[i][k])),
                    "" if bounds is None else _fmt(float(bounds.dalpha[i][k])),
                ])
    return _csv_text(["i", "k", "l", "xi", "K", "dz", "dalpha"], rows)


def lemma1_report(table: GainTable) -> str:
    rows = [[i + 1, g.order, _fmt(lemma1_constant(table, i))] for i, g in enumerate(table.subsystems)]
    return _csv_text(["i", "n_i", "frobenius"], rows)


def trajectory_csv(result: SimResult) -> str:
    header = ["t"] + result.state_names() + [f"u_{i + 1}" for i in range(result.N)]
    blocks = [result.t[:, None], result.x, result.u]
    if result.v is not None:
        header += [f"v_{i + 1}" for i in range(result.N)]
        blocks.append(result.v)
    header += result.theta_names()
    blocks.append(result.theta_hat)
    data = np.hstack(blocks)
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in data.tolist():
        buf.write(",".join(map(repr, row)) + "\n")
    return buf.getvalue()


def events_csv(result: SimResult) -> str:
    rows = [[e.channel_id, e.kind, e.i, e.k, repr(float(e.time))] for e in result.events()]
    return _csv_text(["channel_id", "kind", "i", "k", "event_time"], rows)


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    return {name: data[:, j] for j, name in enumerate(header)}


def compare_trajectory_files(path_a, path_b) -> dict[str, float]:
    """Sup-norm distance per column shared by two trajectory CSV files."""
    a, b = read_trajectory_csv(path_a), read_trajectory_csv(path_b)
    if a["t"].shape != b["t"].shape or not np.allclose(a["t"], b["t"], rtol=0, atol=1e-12):
        raise ContractError("trajectory files are on different time grids")
    return {k: float(np.max(np.abs(a[k] - b[k]))) for k in a if k != "t" and k in b}


def write_run(result: SimResult, out_dir, config=None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "trajectory.csv"]
    written[0].write_text(trajectory_csv(result))
    if result.kind == "etcs":
        written.append(out / "events.csv")
        written[-1].write_text(events_csv(result))
    if config is not None:
        written.append(out / "config.json")
        written[-1].write_text(config.to_json())
    return written


def plot_run(result: SimResult, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    for j, name in enumerate(result.state_names()):
        axes[0].plot(result.t, result.x[:, j], label=name)
    for i in range(result.N):
        axes[1].plot(result.t, result.u[:, i], label=f"u_{i + 1}")
    for j, name in enumerate(result.theta_names()):
        axes[2].plot(result.t, result.theta_hat[:, j], label=name)
    for ax in axes:
        ax.legend(loc="upper right", fontsize="small")
        ax.grid(True, alpha=0.3)
    axes[-1].set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


@dataclass(frozen=True)
class SweepRow:
    scale: float
    distance_to_ccs: float
    tail_radius: float
    counts: dict
    truncated: bool


def threshold_sweep(spec, config, scales, *, tail_start: float = 20.0, reference: SimResult | None = None):
    """Event-triggered runs with all thresholds multiplied by each scale.

    Rows are sorted by decreasing scale and carry the sup-norm state
    distance to the continuous run, the residual radius over
    ``[tail_start, T]`` and the per-channel event counts.
    """
    from .sim import run

    ccs = reference if reference is not None else run(spec, config, "ccs")
    base = TriggerThresholds.from_config(config)
    rows = []
    for s in sorted(set(float(v) for v in scales), reverse=True):
        r = run(spec, config, "etcs", thresholds=base.scaled(s))
        counts = {k: v.count for k, v in inter_event_stats(r).items()}
        radius = float(residual_set(r, tail_start).max()) if not r.truncated else float("inf")
        rows.append(SweepRow(s, state_distance(r, ccs), radius, counts, r.truncated))
    return rows


def sweep_csv(rows) -> str:
    chans = list(rows[0].counts) if rows else []
    body = [[_fmt(r.scale), _fmt(r.distance_to_ccs), _fmt(r.tail_radius), int(r.truncated)]
            + [r.counts[c] for c in chans] for r in rows]
    return _csv_text(["scale", "distance_to_ccs", "tail_radius", "truncated"] + [f"count_{c}" for c in chans], body)


def is_nonincreasing(values) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))
