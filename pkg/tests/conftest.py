import sys

import numpy as np
import pytest

from wgfriedrichs.friedrichs import conv_diff_system, maxwell2d, transport_reaction


def smooth_source(m, seed):
    """A random smooth vector field built from low-frequency trig modes."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((m, 3))
    fx, fy = rng.uniform(0.5, 3.0, (2, m))

    def f(x):
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        cols = [a[c, 0] + a[c, 1] * np.sin(fx[c] * x[:, 0] + 0.3)
                + a[c, 2] * np.cos(fy[c] * x[:, 1]) for c in range(m)]
        return np.column_stack(cols)

    return f


def builtin_systems(seed=0):
    """The three builtin systems, each with a nonzero smooth source."""
    out = {
        "transport": transport_reaction(beta=(1.0, 2.0), alpha=1.0),
        "cdr": conv_diff_system(1e-2, beta=(1.0, 2.0), alpha=1.0),
        "maxwell2d": maxwell2d(nu=1.0, sigma=1.0),
    }
    return {name: s.with_source(smooth_source(s.m, seed + i))
            for i, (name, s) in enumerate(out.items())}


SYSTEM_NAMES = ["transport", "cdr", "maxwell2d"]


@pytest.fixture(params=SYSTEM_NAMES)
def system(request):
    return builtin_systems()[request.param]


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
