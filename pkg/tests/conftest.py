import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ci", suppress_health_check=(HealthCheck.too_slow,), deadline=None)
settings.register_profile("default", deadline=None)
settings.load_profile("ci" if os.environ.get("CI") else "default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "xfailed", "xpassed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" not in props or rep.when == "teardown":
                continue
            status = {"passed": "PASS", "failed": "FAIL", "xfailed": "FAIL (not gating)",
                      "xpassed": "PASS (not gating)", "skipped": "SKIP"}[outcome]
            rows.append((props["criterion"], status, props.get("measured", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda r: (int(r[0].split()[0]), r[0])  # noqa: E731
    for name, status, measured in sorted(rows, key=key):
        terminalreporter.write_line(f"criterion {name}: {status}" + (f"  [{measured}]" if measured else ""))
