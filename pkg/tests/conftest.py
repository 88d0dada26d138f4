import numpy as np


def central_diff(f, X, h=1e-5):
    """Central finite-difference gradient of scalar f with respect to array X."""
    X = np.asarray(X, dtype=np.float64)
    g = np.zeros_like(X)
    flat = X.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(X)
        flat[i] = orig - h
        down = f(X)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return g


def rel_err(got, want):
    """Norm-wise relative error with an absolute floor for near-zero targets."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    denom = max(float(np.linalg.norm(want)), 1e-8)
    return float(np.linalg.norm(got - want)) / denom


def unit_columns(rng, d, m):
    Z = rng.standard_normal((d, m))
    return Z / np.linalg.norm(Z, axis=0)


def random_membership(rng, m, k):
    """Soft membership: positive rows normalized to sum one."""
    Pi = rng.uniform(0.05, 1.0, size=(m, k))
    return Pi / Pi.sum(axis=1, keepdims=True)
