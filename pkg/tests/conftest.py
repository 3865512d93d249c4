from pathlib import Path

import numpy as np

from lcmkit.tensor import grad


def numeric_grad(fn, leaf, step=1e-5):
    """Central finite differences of the scalar ``fn()`` w.r.t. ``leaf.data``."""
    out = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        hi = fn().item()
        flat[i] = keep - step
        lo = fn().item()
        flat[i] = keep
        g[i] = (hi - lo) / (2 * step)
    return out


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def fd_check(fn, leaves, step=1e-5):
    """Largest relative error between analytic and numeric gradients."""
    analytic = grad(fn(), leaves)
    return max(rel_err(a, numeric_grad(fn, leaf, step)) for a, leaf in zip(analytic, leaves))


CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
