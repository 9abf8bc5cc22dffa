import numpy as np
import pytest

from plremix.net import NetDims, NetState


def central_fd(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    """Max absolute deviation relative to the larger gradient's max magnitude."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return float(np.max(np.abs(a - b)) / scale)


@pytest.fixture
def small_net():
    dims = NetDims(d_in=5, hidden=(8,), num_classes=4, proj_hidden=6, d_proj=4)
    return NetState.init(dims, seed=3)


def unit_rows(rng, b, d):
    q = rng.standard_normal((b, d))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get("acceptance", None) if hasattr(config, "stash") else None
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
