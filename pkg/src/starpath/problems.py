"""Finite-sum objectives f(x) = (1/n) sum_i l_i(x) and planted synthetic instances.

Components are indexed ``0 .. n-1``. Every loss here is nonnegative, and the
planted generators choose the minimizer first and derive the targets from it,
so the planted point is a common global minimizer by construction.
"""

from __future__ import annotations

import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import numpy.typing as npt

from starpath.errors import DimensionMismatchError
from starpath.numcore import ParamVector, as_vector, norm2

logger = logging.getLogger("starpath")


def digest(*parts: object) -> str:
    """Short stable hex digest over strings, numbers and numpy arrays."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(str(part.shape).encode())
            h.update(np.ascontiguousarray(part).tobytes())
        else:
            h.update(repr(part).encode())
        h.update(b"|")
    return h.hexdigest()[:16]


class FiniteSumProblem(ABC):
    """Abstract finite-sum problem with component-level value and gradient access."""

    family: str = "abstract"

    def __init__(
        self,
        n: int,
        d: int,
        planted_minimizer: Optional[ParamVector] = None,
        lipschitz_bound: Optional[float] = None,
    ):
        if n < 1 or d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        if lipschitz_bound is not None and lipschitz_bound <= 0:
            raise ValueError("lipschitz_bound must be positive")
        self.n = int(n)
        self.d = int(d)
        self.planted_minimizer = planted_minimizer
        self.lipschitz_bound = lipschitz_bound

    @abstractmethod
    def component_value(self, i: int, x: ParamVector) -> float:
        ...

    @abstractmethod
    def component_grad(self, i: int, x: ParamVector) -> ParamVector:
        ...

    def component_value_and_grad(self, i: int, x: ParamVector) -> Tuple[float, ParamVector]:
        return self.component_value(i, x), self.component_grad(i, x)

    @property
    @abstractmethod
    def fingerprint(self) -> str:
        """Stable identity of the instance, stored in traces."""

    def check_x(self, x: ParamVector) -> None:
        if x.shape != (self.d,):
            raise DimensionMismatchError(self.d, int(np.size(x)), what="iterate")

    def check_index(self, i: int) -> None:
        if not 0 <= i < self.n:
            raise ValueError(f"component index {i} outside [0, {self.n})")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n}, d={self.d}, fingerprint={self.fingerprint})"


@dataclass(frozen=True)
class FullGradientStats:
    """Full gradient and the population variance of component gradients around it."""

    mean_grad: ParamVector
    variance: float


def full_value(p: FiniteSumProblem, x: ParamVector) -> float:
    """f(x) = (1/n) sum_i l_i(x)."""
    p.check_x(x)
    values = np.fromiter((p.component_value(i, x) for i in range(p.n)), dtype=np.float64, count=p.n)
    return float(values.mean())


def full_gradient_stats(p: FiniteSumProblem, x: ParamVector) -> FullGradientStats:
    """Mean gradient and (1/n) sum_i ||grad l_i(x) - grad f(x)||^2.

    Two passes over the components keep memory at O(d) for large models.
    """
    p.check_x(x)
    total = np.zeros(p.d, dtype=np.float64)
    for i in range(p.n):
        total += p.component_grad(i, x)
    mean = total / p.n
    acc = 0.0
    for i in range(p.n):
        diff = p.component_grad(i, x) - mean
        acc += float(np.dot(diff, diff))
    return FullGradientStats(mean_grad=mean, variance=acc / p.n)


# ── Quadratic components ─────────────────────────────────────────────


class QuadraticProblem(FiniteSumProblem):
    """l_i(x) = c_i * ||x - m_i||^2 / 2.

    Planted when every centre m_i coincides; L = max_i c_i.
    """

    family = "quadratic"

    def __init__(self, curvatures: npt.ArrayLike, centers: npt.ArrayLike):
        c = np.asarray(curvatures, dtype=np.float64).reshape(-1)
        m = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        if m.shape[0] != c.shape[0]:
            raise ValueError(f"{c.shape[0]} curvatures but {m.shape[0]} centres")
        if np.any(c <= 0):
            raise ValueError("curvatures must be positive")
        planted = as_vector(m[0]) if np.all(m == m[0]) else None
        super().__init__(c.shape[0], m.shape[1], planted_minimizer=planted, lipschitz_bound=float(c.max()))
        self.curvatures = c
        self.centers = m

    def component_value(self, i: int, x: ParamVector) -> float:
        self.check_index(i)
        diff = x - self.centers[i]
        return 0.5 * float(self.curvatures[i]) * float(np.dot(diff, diff))

    def component_grad(self, i: int, x: ParamVector) -> ParamVector:
        self.check_index(i)
        return self.curvatures[i] * (x - self.centers[i])

    @property
    def fingerprint(self) -> str:
        return digest(self.family, self.curvatures, self.centers)


# ── Consistent least squares ─────────────────────────────────────────


class ConsistentLeastSquares(FiniteSumProblem):
    """l_i(x) = (a_i^T x - b_i)^2 / 2 with b = A x_hat."""

    family = "least_squares"

    def __init__(self, A: npt.ArrayLike, x_hat: npt.ArrayLike, seed: Optional[int] = None):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        x_hat = as_vector(x_hat)
        if A.shape[1] != x_hat.shape[0]:
            raise DimensionMismatchError(A.shape[1], x_hat.shape[0], what="planted minimizer")
        # Row by row so each b_i matches the evaluation path in component_value.
        b = np.array([float(np.dot(A[i], x_hat)) for i in range(A.shape[0])])
        lipschitz = float(max(np.dot(row, row) for row in A))
        super().__init__(A.shape[0], A.shape[1], planted_minimizer=x_hat, lipschitz_bound=lipschitz)
        self.A = A
        self.b = b
        self.seed = seed

    def residual(self, i: int, x: ParamVector) -> float:
        self.check_index(i)
        return float(np.dot(self.A[i], x)) - float(self.b[i])

    def component_value(self, i: int, x: ParamVector) -> float:
        r = self.residual(i, x)
        return 0.5 * r * r

    def component_grad(self, i: int, x: ParamVector) -> ParamVector:
        return self.residual(i, x) * self.A[i]

    def component_value_and_grad(self, i: int, x: ParamVector) -> Tuple[float, ParamVector]:
        r = self.residual(i, x)
        return 0.5 * r * r, r * self.A[i]

    @property
    def fingerprint(self) -> str:
        if self.seed is not None:
            return digest(self.family, self.n, self.d, self.seed)
        return digest(self.family, self.A, self.planted_minimizer)


def make_consistent_least_squares(n: int, d: int, seed: int) -> ConsistentLeastSquares:
    """Gaussian rows a_i and planted x_hat; requires d >= n so the system stays consistent."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if d < n:
        raise ValueError(f"consistent least squares needs d >= n, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    x_hat = rng.standard_normal(d)
    return ConsistentLeastSquares(A, x_hat, seed=seed)


# ── Phase retrieval ──────────────────────────────────────────────────


class PhaseRetrieval(FiniteSumProblem):
    """l_i(x) = ((a_i^T x)^2 - b_i)^2 / 4 with b_i = (a_i^T x_hat)^2.

    Both x_hat and -x_hat are common global minimizers. The gradient is not
    globally Lipschitz, so ``lipschitz_bound`` stays ``None``; use
    :func:`estimate_lipschitz` over a trust region instead.
    """

    family = "phase_retrieval"

    def __init__(self, A: npt.ArrayLike, x_hat: npt.ArrayLike, seed: Optional[int] = None):
        A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        x_hat = as_vector(x_hat)
        if A.shape[1] != x_hat.shape[0]:
            raise DimensionMismatchError(A.shape[1], x_hat.shape[0], what="planted minimizer")
        proj = np.array([float(np.dot(A[i], x_hat)) for i in range(A.shape[0])])
        super().__init__(A.shape[0], A.shape[1], planted_minimizer=x_hat, lipschitz_bound=None)
        self.A = A
        self.b = proj * proj
        self.seed = seed

    def component_value(self, i: int, x: ParamVector) -> float:
        self.check_index(i)
        z = float(np.dot(self.A[i], x))
        r = z * z - float(self.b[i])
        return 0.25 * r * r

    def component_grad(self, i: int, x: ParamVector) -> ParamVector:
        self.check_index(i)
        z = float(np.dot(self.A[i], x))
        return (z * z - float(self.b[i])) * z * self.A[i]

    @property
    def fingerprint(self) -> str:
        if self.seed is not None:
            return digest(self.family, self.n, self.d, self.seed)
        return digest(self.family, self.A, self.planted_minimizer)


def make_phase_retrieval(n: int, d: int, seed: int) -> PhaseRetrieval:
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    x_hat = rng.standard_normal(d)
    return PhaseRetrieval(A, x_hat, seed=seed)


# ── Smoothness estimate ──────────────────────────────────────────────


def _uniform_in_ball(rng: np.random.Generator, center: ParamVector, radius: float) -> ParamVector:
    direction = rng.standard_normal(center.shape[0])
    length = norm2(direction)
    if length == 0.0:
        return center.copy()
    scale = radius * rng.random() ** (1.0 / center.shape[0])
    return center + (scale / length) * direction


def estimate_lipschitz(
    p: FiniteSumProblem,
    region_center: ParamVector,
    radius: float,
    trials: int,
    seed: int,
) -> float:
    """Largest observed ||grad l_i(u) - grad l_i(v)|| / ||u - v|| over random pairs in a ball.

    This is a lower bound on the local smoothness constant, good enough to
    sanity-check eta < 1/L where no global constant exists.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    p.check_x(region_center)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(trials):
        u = _uniform_in_ball(rng, region_center, radius)
        v = _uniform_in_ball(rng, region_center, radius)
        gap = norm2(u - v)
        if gap == 0.0:
            continue
        for i in range(p.n):
            ratio = norm2(p.component_grad(i, u) - p.component_grad(i, v)) / gap
            best = max(best, ratio)
    logger.debug("Estimated local L = %.6g over %d trials (radius %.3g)", best, trials, radius)
    return best
