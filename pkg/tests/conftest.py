import pytest

from etbackstep import TriggerThresholds, builtin_sec5_scenario, run


@pytest.fixture(scope="session")
def sec5():
    return builtin_sec5_scenario(1)


@pytest.fixture(scope="session")
def sec5_set2():
    return builtin_sec5_scenario(2)


class RunCache:
    """Full-horizon benchmark runs are several seconds each; share them."""

    def __init__(self):
        self._runs = {}

    def get(self, key):
        if key not in self._runs:
            self._runs[key] = self._make(key)
        return self._runs[key]

    def _make(self, key):
        kind, threshold_set, scale, dt = key
        spec, cfg = builtin_sec5_scenario(threshold_set)
        if dt is not None:
            cfg = cfg.replace(dt=dt)
        thr = TriggerThresholds.from_config(cfg).scaled(scale)
        return run(spec, cfg, kind, thresholds=thr if kind == "etcs" else None)

    def ccs(self, dt=None):
        return self.get(("ccs", 1, 1.0, dt))

    def etcs(self, threshold_set=1, scale=1.0, dt=None):
        return self.get(("etcs", threshold_set, scale, dt))


@pytest.fixture(scope="session")
def runs():
    return RunCache()
