"""Small hand-built snapshot sets for tests that need exact structure."""

import numpy as np

from dodrom.snapshots import BenchmarkConfig, SnapshotSet


def make_snapshots(u_fn, n_h, n_s1=3, n_s2=3, n_t=4, seed=0, mass=None):
    """Product-design set with columns ``u_fn(mu, nu, t)`` and parameters drawn in the benchmark box."""
    cfg = BenchmarkConfig(nx=1, ny=n_h, n_t=n_t, n_s1=n_s1, n_s2=n_s2, seed=seed)
    rng = np.random.default_rng(seed)
    mu = rng.uniform(cfg.mu_box[:, 0], cfg.mu_box[:, 1], (n_s1, 2))
    nu = rng.uniform(cfg.nu_box[:, 0], cfg.nu_box[:, 1], (n_s2, 2))
    pairs = [(i, j) for j in range(n_s2) for i in range(n_s1)]
    times = cfg.T / n_t * np.arange(1, n_t + 1)
    U = np.concatenate([np.stack([u_fn(mu[i], nu[j], t) for t in times], 1) for i, j in pairs], 1)
    return SnapshotSet(U, mu, nu, times, pairs, cfg, mass=np.ones(n_h) if mass is None else mass)
