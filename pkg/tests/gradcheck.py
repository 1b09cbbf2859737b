"""Central finite-difference gradient oracle shared by the test suite."""

import numpy as np

H = 1e-5
TOL = 1e-4
FLOOR = 1e-8


def numeric_grad(f, arrays, h=H):
    """Central differences of scalar f(list-of-arrays) w.r.t. every entry."""
    grads = []
    for k, base in enumerate(arrays):
        g = np.zeros_like(base, dtype=np.float64)
        flat = g.reshape(-1)
        for i in range(base.size):
            bumped = [a.copy() for a in arrays]
            bumped[k].reshape(-1)[i] += h
            up = f(bumped)
            bumped[k].reshape(-1)[i] -= 2 * h
            down = f(bumped)
            flat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.zeros_like(n) if a is None else a
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def assert_grads_close(analytic, numeric, tol=TOL):
    err = max_rel_error(analytic, numeric)
    assert err <= tol, f"gradient mismatch: max rel error {err:.3e} > {tol:.0e}"
