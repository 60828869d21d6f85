import numpy as np
import pytest

from etbackstep import ContractError, NumericError, SpecificationError, control_u, control_v, inter_event_stats, run
from etbackstep.gains import gain_table_for
from etbackstep.scenario import PlantSpec, builtin_sec5_scenario, zero_scenario


@pytest.fixture(scope="module")
def short():
    spec, cfg = builtin_sec5_scenario(1)
    return spec, cfg.replace(horizon=2.0)


@pytest.mark.parametrize("kind", ["ccs", "etcs"])
def test_zero_plant_stays_at_rest(kind):
    spec, cfg = zero_scenario()
    r = run(spec, cfg, kind)
    assert not r.truncated
    assert np.all(r.x == 0) and np.all(r.u == 0) and np.all(r.theta_hat == 0)
    if kind == "etcs":
        assert [e.time for e in r.events()] == [0.0] * 6
        stats = inter_event_stats(r)
        assert all(s.count == 0 and s.min_gap is None and s.mean_gap is None for s in stats.values())


def test_grid_and_shapes(short):
    spec, cfg = short
    r = run(spec, cfg, "etcs")
    assert r.t.shape == (2001,)
    np.testing.assert_allclose(np.diff(r.t), cfg.dt, rtol=1e-9)
    assert r.x.shape == (2001, 4) and r.u.shape == (2001, 2) and r.theta_hat.shape == (2001, 2)
    assert r.v.shape == (2001, 2) and r.xbar.shape == (2001, 4)
    assert np.all(np.isfinite(r.x))
    assert r.kappa == pytest.approx(r.max_state_rate * cfg.dt)


def test_run_is_deterministic(short):
    spec, cfg = short
    for kind in ("ccs", "etcs"):
        a, b = run(spec, cfg, kind), run(spec, cfg, kind)
        assert a.x.tobytes() == b.x.tobytes()
        assert a.u.tobytes() == b.u.tobytes()
        assert a.theta_hat.tobytes() == b.theta_hat.tobytes()
        assert a.events() == b.events()


def test_ccs_records_control_law(short):
    spec, cfg = short
    r = run(spec, cfg, "ccs")
    table = gain_table_for(cfg)
    for n in (0, 1, 500, 2000):
        for i in range(2):
            u = control_u(table, spec, i, r.subsystem_states(i)[n], r.theta_hat[n, i:i + 1])
            assert r.u[n, i] == pytest.approx(u, rel=1e-12, abs=1e-14)


def test_ccs_step_hold_is_first_order_close(short):
    spec, cfg = short
    a = run(spec, cfg, "ccs")
    b = run(spec, cfg, "ccs", hold_input=True)
    d = np.abs(a.x - b.x).max()
    assert 0 < d < 1e-3


def test_etcs_hold_semantics(short):
    spec, cfg = short
    r = run(spec, cfg, "etcs")
    table = gain_table_for(cfg)
    dx = np.array([v for row in cfg.dx for v in row])
    # on the grid the triggering rule leaves no overshoot at all
    assert np.all(np.abs(r.x - r.xbar) <= dx * (1 + 1e-12))
    for idx, times in enumerate(r.held.state_events):
        steps = np.rint(np.asarray(times) / cfg.dt).astype(int)
        assert np.all(np.diff(steps) >= 1)
        changes = np.flatnonzero(np.diff(r.xbar[:, idx]) != 0) + 1
        assert set(changes) <= set(steps)
        # held value equals the true state at its event
        for s in steps:
            assert r.xbar[s, idx] == r.x[s, idx]
    for i in range(2):
        steps = np.rint(np.asarray(r.held.input_events[i]) / cfg.dt).astype(int)
        changes = np.flatnonzero(np.diff(r.u[:, i]) != 0) + 1
        assert set(changes) <= set(steps)
        for s in steps:
            assert r.u[s, i] == r.v[s, i]
    for n in (0, 700, 2000):
        for i in range(2):
            v = control_v(table, spec, i, r.subsystem_states(i, held=True)[n], r.theta_hat[n, i:i + 1])
            assert r.v[n, i] == v


def test_events_sorted_and_initial(short):
    spec, cfg = short
    r = run(spec, cfg, "etcs")
    ev = r.events()
    assert [e.time for e in ev] == sorted(e.time for e in ev)
    assert sum(e.time == 0.0 for e in ev) == 6
    for name, s in inter_event_stats(r).items():
        assert s.min_gap is None or s.min_gap >= cfg.dt * (1 - 1e-9)


def test_stats_reject_ccs(short):
    spec, cfg = short
    with pytest.raises(ContractError):
        inter_event_stats(run(spec, cfg.replace(horizon=0.01), "ccs"))


def _unstable_spec():
    zf = lambda xj, u, t: 0.0
    grow = lambda xj, u, t: 50.0 * xj[0]
    return PlantSpec(
        orders=(2,), param_dims=(1,), phi=(lambda x: np.zeros(1),), psi=(lambda x: 0.0,),
        theta=(lambda t: np.zeros(1),), coupling=(((grow, zf),),),
    )


def test_divergence_guard():
    spec = _unstable_spec()
    _, base = builtin_sec5_scenario(1)
    cfg = base.replace(c=((0.1, 0.1),), varpi1=(((1.0, 1.0),),), varpi2=(((1.0, 1.0),),), sigma=(0.001,),
                       gamma=(0.5,), dx=((0.01, 0.01),), du=(0.1,), x0=((0.1, 0.0),), theta_hat0=((0.0,),),
                       horizon=5.0)
    r = run(spec, cfg, "ccs")
    assert r.truncated and r.truncated_at < 5.0
    assert np.all(np.abs(r.x) <= 1e6)
    assert len(r.t) == len(r.x) < 5001


def test_non_finite_derivative_raises():
    zf = lambda xj, u, t: 0.0
    bad = lambda xj, u, t: float("nan") if t > 0.01 else 0.0
    spec = PlantSpec(orders=(1,), param_dims=(1,), phi=(lambda x: np.zeros(1),), psi=(lambda x: 0.0,),
                     theta=(lambda t: np.zeros(1),), coupling=(((bad,),),))
    _, base = builtin_sec5_scenario(1)
    cfg = base.replace(c=((1.0,),), varpi1=(((1.0,),),), varpi2=(((1.0,),),), sigma=(0.001,), gamma=(0.5,),
                       dx=((0.01,),), du=(0.1,), x0=((0.1,),), theta_hat0=((0.0,),), horizon=0.1)
    with pytest.raises(NumericError) as info:
        run(spec, cfg, "ccs")
    assert info.value.location[:2] == (1, 1)


def test_run_rejects_bad_inputs(short):
    spec, cfg = short
    with pytest.raises(SpecificationError):
        run(spec, cfg, "mpc")
    with pytest.raises(SpecificationError):
        run(_unstable_spec(), cfg, "ccs")
