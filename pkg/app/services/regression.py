"""
Least-squares Monte Carlo conditional expectations.

Bases are polynomials of standardized features, optionally repeated
against a multiplier column (e.g. M(t, z) or a wealth numeraire). The
joint fit on [phi, phi * dB, phi * dN_i] returns E[y | F_k] and the
martingale-representation coefficients q and r in one solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from app.core.errors import ConfigurationError, RegressionError

logger = logging.getLogger(__name__)

FEATURES = ("state", "signal", "brownian")
FLAT_TOL = 1e-12


@dataclass(frozen=True)
class RegressionSpec:
    degree: int = 3
    features: tuple[str, ...] = ("state", "signal")
    g_features: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ConfigurationError("regression.degree must be >= 0")
        for name in tuple(self.features) + tuple(self.g_features or ()):
            if name not in FEATURES:
                raise ConfigurationError(f"regression feature '{name}' is not one of {FEATURES}")

    def thinned(self) -> "RegressionSpec":
        """The G-measurable sub-basis."""
        if self.g_features is None:
            return self
        return RegressionSpec(self.degree, tuple(self.g_features), None)


@dataclass
class IncrementFit:
    conditional: NDArray[np.float64]
    q: NDArray[np.float64]
    r: NDArray[np.float64] | None


def _flat(column: NDArray[np.float64]) -> bool:
    return float(column.std()) <= FLAT_TOL * (1.0 + abs(float(column.mean())))


def polynomial_basis(
    features: Sequence[NDArray[np.float64]],
    degree: int,
    multiplier: NDArray[np.float64] | None = None,
) -> NDArray[np.float64]:
    """All monomials of total degree <= ``degree`` in the standardized features."""
    scaled = []
    for column in features:
        column = np.asarray(column, dtype=float)
        if not _flat(column):
            scaled.append((column - column.mean()) / column.std())
    n = len(features[0]) if features else len(multiplier)
    columns = [np.ones(n)]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(len(scaled)), d):
            columns.append(np.prod([scaled[i] for i in combo], axis=0))
    if multiplier is not None and not _flat(np.asarray(multiplier, dtype=float)):
        multiplier = np.asarray(multiplier, dtype=float)
        columns += [c * multiplier for c in columns]
    return np.column_stack(columns)


class Regressor:
    """Least-squares projections with a once-per-solve rank warning."""

    def __init__(self, spec: RegressionSpec | None = None, label: str = "regression"):
        self.spec = spec or RegressionSpec()
        self.label = label
        self.rank_deficient = False

    def basis(
        self,
        available: Mapping[str, NDArray[np.float64]],
        multiplier: NDArray[np.float64] | None = None,
        g_measurable: bool = False,
    ) -> NDArray[np.float64]:
        spec = self.spec.thinned() if g_measurable else self.spec
        missing = [name for name in spec.features if name not in available]
        if missing:
            raise ConfigurationError(f"regression features {missing} are not available here")
        return polynomial_basis([available[name] for name in spec.features], spec.degree, multiplier)

    def _solve(self, design: NDArray[np.float64], target: NDArray[np.float64]) -> NDArray[np.float64]:
        if not np.all(np.isfinite(target)):
            raise RegressionError(f"{self.label}: non-finite regression target")
        coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
        if rank < design.shape[1] and not self.rank_deficient:
            self.rank_deficient = True
            logger.warning("%s: rank-deficient basis (%d of %d columns); using the minimum-norm fit",
                           self.label, rank, design.shape[1])
        return coef

    def conditional(self, basis: NDArray[np.float64], target: NDArray[np.float64]) -> NDArray[np.float64]:
        """E[target | basis]; target may carry several right-hand sides as columns."""
        return basis @ self._solve(basis, target)

    def with_increments(
        self,
        basis: NDArray[np.float64],
        target: NDArray[np.float64],
        dB: NDArray[np.float64],
        dN: NDArray[np.float64] | None = None,
    ) -> IncrementFit:
        """
        Fit target ~ phi a + phi dB b + sum_i phi dN_i c_i.

        conditional = phi a, q = phi b = E[target dB | F] / dt, and
        r_i = phi c_i = E[target dN_i | F] / (lambda p_i dt). Marks without a
        jump in the sample step carry no information and get r_i = 0.
        """
        p = basis.shape[1]
        blocks = [basis, basis * dB[:, None]]
        used: list[int] = []
        if dN is not None:
            for i in range(dN.shape[1]):
                if not _flat(dN[:, i]):
                    blocks.append(basis * dN[:, i, None])
                    used.append(i)
        coef = self._solve(np.hstack(blocks), target)
        conditional = basis @ coef[:p]
        q = basis @ coef[p:2 * p]
        r = None
        if dN is not None:
            r = np.zeros(target.shape + (dN.shape[1],))
            for slot, i in enumerate(used):
                lo = (2 + slot) * p
                r[..., i] = basis @ coef[lo:lo + p]
        return IncrementFit(conditional=conditional, q=q, r=r)
