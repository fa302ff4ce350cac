"""Shifted and rotated synthetic minimization problems.

Every base function has its global minimum value 0 at the origin, so a
problem instance ``f(M^T (x - z))`` has its minimizer at ``x = z`` and
``f_star = 0``.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SUPPORTED_DIMS = (2, 5, 10, 20)
LOWER_BOUND = -5.0
UPPER_BOUND = 5.0
SHIFT_RANGE = 4.0


def sphere(y: np.ndarray) -> np.ndarray:
    return np.sum(y**2, axis=1)


def ellipsoid(y: np.ndarray) -> np.ndarray:
    d = y.shape[1]
    if d == 1:
        return y[:, 0] ** 2
    w = 10.0 ** (6.0 * np.arange(d) / (d - 1))
    return (y**2) @ w


def rosenbrock(y: np.ndarray) -> np.ndarray:
    z = y + 1.0
    if z.shape[1] == 1:
        return (z[:, 0] - 1.0) ** 2
    return np.sum(100.0 * (z[:, 1:] - z[:, :-1] ** 2) ** 2 + (z[:, :-1] - 1.0) ** 2, axis=1)


def rastrigin(y: np.ndarray) -> np.ndarray:
    return np.sum(y**2 - 10.0 * np.cos(2.0 * np.pi * y) + 10.0, axis=1)


def ackley(y: np.ndarray) -> np.ndarray:
    a = np.exp(-0.2 * np.sqrt(np.mean(y**2, axis=1)))
    b = np.exp(np.mean(np.cos(2.0 * np.pi * y), axis=1))
    # written so that the origin evaluates to exactly 0
    return 20.0 * (1.0 - a) + (np.e - b)


def griewank(y: np.ndarray) -> np.ndarray:
    i = np.arange(1, y.shape[1] + 1)
    return 1.0 + np.sum(y**2, axis=1) / 4000.0 - np.prod(np.cos(y / np.sqrt(i)), axis=1)


def schwefel12(y: np.ndarray) -> np.ndarray:
    return np.sum(np.cumsum(y, axis=1) ** 2, axis=1)


def levy(y: np.ndarray) -> np.ndarray:
    w = 1.0 + y / 4.0
    head = np.sin(np.pi * w[:, 0]) ** 2
    mid = np.sum((w[:, :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(np.pi * w[:, :-1] + 1.0) ** 2), axis=1)
    tail = (w[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * np.pi * w[:, -1]) ** 2)
    return head + mid + tail


def bent_cigar(y: np.ndarray) -> np.ndarray:
    return y[:, 0] ** 2 + 1e6 * np.sum(y[:, 1:] ** 2, axis=1)


def discus(y: np.ndarray) -> np.ndarray:
    return 1e6 * y[:, 0] ** 2 + np.sum(y[:, 1:] ** 2, axis=1)


_W_A, _W_B, _W_K = 0.5, 3.0, 10
_W_AK = _W_A ** np.arange(_W_K + 1)
_W_BK = _W_B ** np.arange(_W_K + 1)


def weierstrass(y: np.ndarray) -> np.ndarray:
    """Weierstrass function truncated at k = 10."""
    terms = _W_AK * np.cos(2.0 * np.pi * _W_BK * (y[..., None] + 0.5))
    offset = y.shape[1] * np.sum(_W_AK * np.cos(np.pi * _W_BK))
    return np.sum(terms, axis=(1, 2)) - offset


def happy_cat(y: np.ndarray) -> np.ndarray:
    z = y - 1.0
    d = z.shape[1]
    r2 = np.sum(z**2, axis=1)
    return np.abs(r2 - d) ** 0.25 + (0.5 * r2 + np.sum(z, axis=1)) / d + 0.5


CATALOG: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sphere": sphere,
    "ellipsoid": ellipsoid,
    "rosenbrock": rosenbrock,
    "rastrigin": rastrigin,
    "ackley": ackley,
    "griewank": griewank,
    "schwefel12": schwefel12,
    "levy": levy,
    "bent_cigar": bent_cigar,
    "discus": discus,
    "weierstrass": weierstrass,
    "happy_cat": happy_cat,
}

# disjoint split used for out-of-distribution problem tests
TRAIN_FUNCTIONS = ("sphere", "ellipsoid", "rosenbrock", "rastrigin", "ackley", "griewank")
HELDOUT_FUNCTIONS = ("schwefel12", "levy", "bent_cigar", "discus", "weierstrass", "happy_cat")


def random_rotation(dim: int, seed) -> np.ndarray:
    """Orthogonal matrix from the QR decomposition of a Gaussian matrix.

    Columns are sign-corrected by the diagonal of R so that the result is
    a deterministic function of ``seed``.
    """
    if int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim!r}")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


class EvaluationCounter:
    """Thread-safe running count of evaluated solutions."""

    def __init__(self) -> None:
        self._n = 0
        self._lock = threading.Lock()

    def add(self, n: int) -> None:
        with self._lock:
            self._n += n

    @property
    def value(self) -> int:
        return self._n


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    fn_id: str
    dim: int
    seed: int
    shift: np.ndarray
    rotation: np.ndarray
    lb: float = LOWER_BOUND
    ub: float = UPPER_BOUND
    f_star: float = 0.0
    counter: EvaluationCounter = field(default_factory=EvaluationCounter, repr=False)

    @property
    def evaluations(self) -> int:
        return self.counter.value

    @property
    def optimizer(self) -> np.ndarray:
        return self.shift.copy()

    @property
    def diameter(self) -> float:
        return float(np.sqrt(self.dim) * (self.ub - self.lb))

    def descriptor(self) -> dict:
        return {"fn_id": self.fn_id, "dim": self.dim, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)

    def evaluate(self, X) -> np.ndarray:
        return evaluate(self, X)

    def __call__(self, X) -> np.ndarray:
        return evaluate(self, X)


def make_instance(fn_id: str, dim: int, seed: int) -> ProblemInstance:
    if fn_id not in CATALOG:
        raise ValueError(f"unknown fn_id {fn_id!r}; known: {sorted(CATALOG)}")
    if dim not in SUPPORTED_DIMS:
        raise ValueError(f"unsupported dim {dim}; expected one of {SUPPORTED_DIMS}")
    ss = np.random.SeedSequence(int(seed))
    shift_seed, rot_seed = ss.spawn(2)
    shift = np.random.default_rng(shift_seed).uniform(-SHIFT_RANGE, SHIFT_RANGE, dim)
    rotation = random_rotation(dim, rot_seed)
    shift.setflags(write=False)
    rotation.setflags(write=False)
    return ProblemInstance(fn_id=fn_id, dim=int(dim), seed=int(seed), shift=shift, rotation=rotation)


def from_descriptor(desc: dict | str) -> ProblemInstance:
    if isinstance(desc, str):
        desc = json.loads(desc)
    return make_instance(desc["fn_id"], int(desc["dim"]), int(desc["seed"]))


def evaluate(instance: ProblemInstance, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != instance.dim:
        raise ValueError(f"expected an N x {instance.dim} matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("solutions must be finite")
    # row form of M^T (x - z)
    y = (X - instance.shift) @ instance.rotation
    out = CATALOG[instance.fn_id](y) + instance.f_star
    instance.counter.add(X.shape[0])
    return out
