from __future__ import annotations

import numpy as np

BOUNDARY_CONTROLS = ("Clip", "Rand", "Periodic", "Reflect", "Halving")
_MAX_SWEEPS = 200


def exec_boundary(variant: str, X, bounds, rng: np.random.Generator | None = None) -> np.ndarray:
    """Repair out-of-range entries of ``X`` so every entry lies in ``[lb, ub]``.

    ``Rand`` always draws ``rng.random(X.shape)`` (whether or not anything
    is out of range).  ``Reflect`` and ``Halving`` are applied repeatedly
    until every entry is inside.  ``Halving`` moves a violating entry to
    ``bound - 0.5 * (x - bound)``.
    """
    variant = variant.removeprefix("BC_")
    X = np.asarray(X, dtype=float)
    lb, ub = bounds
    lb = np.broadcast_to(np.asarray(lb, dtype=float), X.shape)
    ub = np.broadcast_to(np.asarray(ub, dtype=float), X.shape)
    out_of_range = (X < lb) | (X > ub)
    if variant == "Clip":
        return np.clip(X, lb, ub)
    if variant == "Rand":
        fresh = lb + rng.random(X.shape) * (ub - lb)
        return np.where(out_of_range, fresh, X)
    if variant == "Periodic":
        wrapped = lb + np.mod(X - ub, ub - lb)
        return np.where(out_of_range, wrapped, X)
    if variant in ("Reflect", "Halving"):
        k = 1.0 if variant == "Reflect" else 0.5
        Y = X.copy()
        for _ in range(_MAX_SWEEPS):
            hi, lo = Y > ub, Y < lb
            if not (hi.any() or lo.any()):
                return Y
            Y = np.where(hi, ub - k * (Y - ub), Y)
            Y = np.where(lo, lb - k * (Y - lb), Y)
        # pathological magnitudes: finish with a clip
        return np.clip(Y, lb, ub)
    raise ValueError(f"unknown boundary control variant {variant!r}")
