"""Weighted linear least squares for a set of conditional equations.

Each measurement j contributes one equation ``design_row_j . params = observed_j``
with standard deviation ``sigma_j``.  The solver works on the weighted design
matrix through its singular value decomposition; the normal equations are
never formed.

:func:`fit_wls` is the only backend shipped.  The exclusion engine takes any
callable with the same signature (``Dataset -> FitSolution``), which is the
hook for a nonlinear fitter.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Measurement",
    "Dataset",
    "FitSolution",
    "Fitter",
    "FitError",
    "SingularModelError",
    "InsufficientDataError",
    "PerfectFitWarning",
    "SIGMA_MODES",
    "fit_wls",
    "sigma_scale",
    "rescale_sigmas",
    "design_poly",
]

SIGMA_MODES = ("none", "variance-factor")

# relative singular-value cutoff for rank decisions
RANK_RTOL = 1e-10
# residual scatter below ROUNDOFF_FACTOR * eps * cond * max|observed/sigma| is
# treated as roundoff, i.e. a perfect fit
ROUNDOFF_FACTOR = 1e3


class FitError(ValueError):
    """The least-squares problem cannot be solved."""


class SingularModelError(FitError):
    def __init__(self, rank, p):
        self.rank = rank
        self.p = p
        super().__init__(
            f"design matrix is rank deficient: column space has dimension {rank} "
            f"but the model has {p} parameters"
        )


class InsufficientDataError(FitError):
    pass


class PerfectFitWarning(UserWarning):
    """Residuals are at roundoff level; sigmas were left unscaled."""


@dataclass(frozen=True)
class Measurement:
    """One conditional equation."""

    id: Hashable
    design_row: tuple
    observed: float
    sigma: float

    def __post_init__(self):
        row = tuple(float(v) for v in self.design_row)
        object.__setattr__(self, "design_row", row)
        object.__setattr__(self, "observed", float(self.observed))
        object.__setattr__(self, "sigma", float(self.sigma))
        if not all(math.isfinite(v) for v in row):
            raise ValueError(f"measurement {self.id!r}: non-finite design value")
        if not math.isfinite(self.observed):
            raise ValueError(f"measurement {self.id!r}: non-finite observed value")
        if not (math.isfinite(self.sigma) and self.sigma > 0.0):
            raise ValueError(f"measurement {self.id!r}: sigma must be finite and > 0, got {self.sigma!r}")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ordered, immutable collection of conditional equations sharing one model.

    Stored column-wise: ``ids`` (tuple), ``design`` (N x p), ``observed`` and
    ``sigma`` (length N).  Row access goes through :attr:`measurements`.
    """

    ids: tuple
    design: np.ndarray
    observed: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        ids = tuple(self.ids)
        design = _frozen(self.design)
        observed = _frozen(self.observed).ravel()
        sigma = _frozen(self.sigma).ravel()
        if design.ndim != 2:
            raise ValueError("design must be a 2-d array")
        n, p = design.shape
        if p < 1:
            raise ValueError("model must have at least one parameter")
        if not (len(ids) == n == observed.size == sigma.size):
            raise ValueError("ids, design rows, observed values and sigmas differ in length")
        if len(set(ids)) != n:
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise ValueError(f"duplicate measurement id {dup!r}")
        for name, arr in (("design value", design), ("observed value", observed)):
            bad = ~np.isfinite(arr)
            if bad.any():
                row = int(np.argwhere(bad)[0][0])
                raise ValueError(f"measurement {ids[row]!r}: non-finite {name}")
        bad = ~(np.isfinite(sigma) & (sigma > 0.0))
        if bad.any():
            row = int(np.argmax(bad))
            raise ValueError(f"measurement {ids[row]!r}: sigma must be finite and > 0, got {sigma[row]!r}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_measurements(cls, measurements: Iterable[Measurement], p: int | None = None) -> "Dataset":
        ms = list(measurements)
        if p is None:
            if not ms:
                raise ValueError("parameter count is required for an empty dataset")
            p = len(ms[0].design_row)
        for m in ms:
            if len(m.design_row) != p:
                raise ValueError(f"measurement {m.id!r}: design row has {len(m.design_row)} entries, expected {p}")
        design = np.array([m.design_row for m in ms], dtype=float).reshape(len(ms), p)
        return cls(
            tuple(m.id for m in ms),
            design,
            [m.observed for m in ms],
            [m.sigma for m in ms],
        )

    @classmethod
    def from_arrays(cls, design, observed, sigma, ids=None) -> "Dataset":
        observed = np.asarray(observed, dtype=float).ravel()
        design = np.asarray(design, dtype=float)
        if design.ndim == 1:
            design = design[:, None]
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), observed.shape)
        if ids is None:
            ids = range(observed.size)
        return cls(tuple(ids), design, observed, sigma)

    def __len__(self):
        return len(self.ids)

    @property
    def n(self):
        return len(self.ids)

    @property
    def p(self):
        return self.design.shape[1]

    @property
    def measurements(self):
        return tuple(
            Measurement(i, row, y, s) for i, row, y, s in zip(self.ids, self.design, self.observed, self.sigma)
        )

    def _take(self, index):
        index = np.asarray(index, dtype=int)
        return Dataset(
            tuple(self.ids[k] for k in index),
            self.design[index].reshape(index.size, self.p),
            self.observed[index],
            self.sigma[index],
        )

    def subset(self, ids: Iterable[Hashable]) -> "Dataset":
        """Measurements whose id is in ``ids``, in this dataset's order."""
        keep = set(ids)
        return self._take([k for k, i in enumerate(self.ids) if i in keep])

    def without(self, ids: Iterable[Hashable]) -> "Dataset":
        drop = set(ids)
        return self._take([k for k, i in enumerate(self.ids) if i not in drop])

    def sorted_by_id(self) -> "Dataset":
        order = sorted(range(self.n), key=self.ids.__getitem__)
        if order == list(range(self.n)):
            return self
        return self._take(order)

    def with_sigma_scale(self, factor: float) -> "Dataset":
        if factor == 1.0:
            return self
        return Dataset(self.ids, self.design, self.observed, self.sigma * factor)

    def design_matrix(self):
        return self.design

    def sigmas(self):
        return self.sigma


@dataclass(frozen=True)
class FitSolution:
    """Result of a weighted least-squares fit.

    ``residuals`` are observed minus predicted; ``normalized_residuals`` are
    ``|residual| / sigma`` with the sigmas the fit was given.
    """

    parameters: np.ndarray
    covariance: np.ndarray
    residuals: Mapping
    normalized_residuals: Mapping
    variance_factor: float
    chi2: float
    dof: int
    rank: int = field(default=0)
    condition: float = field(default=1.0)

    @property
    def ids(self):
        return list(self.residuals)


Fitter = Callable[[Dataset], FitSolution]


def fit_wls(data: Dataset) -> FitSolution:
    """Solve the weighted least-squares problem ``min sum_j (eps_j / sigma_j)^2``.

    Parameters
    ----------
    data : Dataset
        At least ``p + 1`` measurements with a full-rank design.

    Returns
    -------
    FitSolution
        Covariance is the inverse of the weighted normal matrix (unscaled by
        the variance factor); ``variance_factor = chi2 / (N - p)``.

    Raises
    ------
    InsufficientDataError
        If ``N <= p``.
    SingularModelError
        If a singular value of the weighted design falls below
        ``1e-10`` times the largest.
    """
    n, p = data.n, data.p
    if n <= p:
        raise InsufficientDataError(f"need more than {p} measurements for {p} parameters, got {n}")

    A = data.design
    y = data.observed
    sigma = data.sigma
    Aw = A / sigma[:, None]
    yw = y / sigma

    U, s, Vt = np.linalg.svd(Aw, full_matrices=False)
    if s[0] == 0.0:
        raise SingularModelError(0, p)
    rank = int(np.count_nonzero(s > RANK_RTOL * s[0]))
    if rank < p:
        raise SingularModelError(rank, p)

    params = Vt.T @ ((U.T @ yw) / s)
    V_over_s = Vt.T / s
    cov = V_over_s @ V_over_s.T
    cov = 0.5 * (cov + cov.T)

    eps = y - A @ params
    norm = np.abs(eps) / sigma
    chi2 = float(np.sum((eps / sigma) ** 2))
    dof = n - p
    ids = data.ids
    return FitSolution(
        parameters=params,
        covariance=cov,
        residuals=dict(zip(ids, eps.tolist())),
        normalized_residuals=dict(zip(ids, norm.tolist())),
        variance_factor=chi2 / dof,
        chi2=chi2,
        dof=dof,
        rank=rank,
        condition=float(s[0] / s[-1]),
    )


def _check_mode(mode):
    if mode not in SIGMA_MODES:
        raise ValueError(f"sigma mode must be one of {SIGMA_MODES}, got {mode!r}")


def sigma_scale(data: Dataset, solution: FitSolution, mode: str = "variance-factor"):
    """Return ``(factor, perfect_fit)`` for refreshing the sigmas of ``data``.

    ``factor`` is ``sqrt(variance_factor)`` in variance-factor mode and 1
    otherwise.  A fit whose scatter is at roundoff level reports
    ``perfect_fit=True`` and factor 1.
    """
    _check_mode(mode)
    if mode == "none":
        return 1.0, False
    vf = solution.variance_factor
    scale = math.sqrt(vf)
    data_scale = float(np.max(np.abs(data.observed / data.sigma)))
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * solution.condition * max(1.0, data_scale)
    if scale <= floor:
        return 1.0, True
    return scale, False


def rescale_sigmas(data: Dataset, solution: FitSolution, mode: str = "variance-factor") -> Dataset:
    """Multiply every sigma by ``sqrt(variance_factor)`` (mode ``variance-factor``).

    Mode ``none`` returns ``data`` unchanged.  A perfect fit leaves the data
    unchanged and emits :class:`PerfectFitWarning`.
    """
    factor, perfect = sigma_scale(data, solution, mode)
    if perfect:
        warnings.warn("variance factor is zero (perfect fit); sigmas not rescaled", PerfectFitWarning, stacklevel=2)
    return data.with_sigma_scale(factor)


def design_poly(x: Sequence[float], degree: int) -> np.ndarray:
    """Rows ``1, x, x^2, ..., x^degree``."""
    if degree < 0:
        raise ValueError("polynomial degree must be >= 0")
    return np.vander(np.asarray(x, dtype=float), degree + 1, increasing=True)
