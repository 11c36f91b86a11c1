"""Latin hypercube designs."""

from __future__ import annotations

import numpy as np

from robust_bo.errors import ContractViolation


def check_bounds(bounds) -> np.ndarray:
    """Return ``bounds`` as a (d, 2) float array, validating lower < upper."""
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or b.shape[0] < 1:
        raise ContractViolation(f"bounds must have shape (d, 2), got {b.shape}")
    if not np.all(np.isfinite(b)) or np.any(b[:, 0] >= b[:, 1]):
        raise ContractViolation(f"bounds must be finite with lower < upper: {b.tolist()}")
    return b


def latin_hypercube(n: int, bounds, rng: np.random.Generator) -> np.ndarray:
    """Draw an ``n``-point Latin hypercube inside ``bounds``.

    Each axis is cut into ``n`` equal strata; every stratum receives exactly
    one point, placed uniformly within it, and strata are matched across axes
    by an independent random permutation per axis.
    """
    if n < 1:
        raise ContractViolation(f"need at least one point, got n={n}")
    b = check_bounds(bounds)
    d = b.shape[0]
    u = rng.random((n, d))
    strata = np.column_stack([rng.permutation(n) for _ in range(d)])
    unit = (strata + u) / n
    return b[:, 0] + unit * (b[:, 1] - b[:, 0])
