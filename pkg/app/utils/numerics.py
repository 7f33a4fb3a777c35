"""Small numerical helpers shared by the solvers."""
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

RELATIVE_STEP = 1e-5


def fd_step(value: ArrayLike) -> NDArray[np.float64]:
    return RELATIVE_STEP * (1.0 + np.abs(np.asarray(value, dtype=float)))


def central_difference(func: Callable[..., ArrayLike], argnum: int, *args: ArrayLike) -> NDArray[np.float64]:
    """Central difference of ``func`` in its ``argnum``-th argument."""
    base = np.asarray(args[argnum], dtype=float)
    h = fd_step(base)
    up = list(args)
    down = list(args)
    up[argnum] = base + h
    down[argnum] = base - h
    return (np.asarray(func(*up), dtype=float) - np.asarray(func(*down), dtype=float)) / (2.0 * h)


def partial(func: Callable[..., ArrayLike], argnum: int) -> Callable[..., NDArray[np.float64]]:
    def derivative(*args: ArrayLike) -> NDArray[np.float64]:
        return central_difference(func, argnum, *args)

    derivative.__name__ = f"d{getattr(func, '__name__', 'f')}_d{argnum}"
    return derivative


def evaluate(func: Callable[..., ArrayLike], shape: tuple[int, ...], *args: ArrayLike) -> NDArray[np.float64]:
    """Call a broadcastable callable and force the result to ``shape``."""
    return np.broadcast_to(np.asarray(func(*args), dtype=float), shape)


def trapezoid_weights(points: ArrayLike) -> NDArray[np.float64]:
    points = np.asarray(points, dtype=float)
    if points.size == 1:
        return np.ones(1)
    gaps = np.diff(points)
    weights = np.zeros_like(points)
    weights[:-1] += gaps / 2.0
    weights[1:] += gaps / 2.0
    return weights


def mean_and_se(values: ArrayLike, axis: int = 0) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=axis, ddof=1) / np.sqrt(n)


def batch_means(values: ArrayLike, n_batches: int) -> tuple[float, float]:
    """Mean and standard error from equally sized batches along axis 0."""
    values = np.asarray(values, dtype=float)
    batches = np.array_split(values, n_batches)
    estimates = np.array([b.mean() for b in batches if b.size])
    return float(estimates.mean()), float(estimates.std(ddof=1) / np.sqrt(estimates.size))
