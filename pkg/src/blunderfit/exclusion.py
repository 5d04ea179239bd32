"""Iterative exclusion of conditional equations with excessive residuals.

One pass over a fitted set of ``N`` equations with normalized residuals
``r_j = |eps_j| / sigma_j``:

1. ``kappa = kappa_limit(N)``; under normal errors one residual is expected
   to exceed it.
2. ``L`` is the number of residuals above ``kappa``.
3. If ``L > l_prime`` the ``L - l_prime`` largest of them are excluded.
4. Among the rest, any residual above ``k_gamma(N)`` is excluded.

:func:`run_exclusion` refits, refreshes the sigmas and repeats until a pass
excludes nothing.  Excluded equations are never re-admitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Hashable, Optional

import numpy as np

from .fitting import SIGMA_MODES, Dataset, FitError, FitSolution, Fitter, fit_wls, sigma_scale
from .stat_core import k_gamma_approx, k_gamma_exact, kappa_limit

__all__ = [
    "ExclusionConfig",
    "IterationRecord",
    "ExcludedEquation",
    "ExclusionOutcome",
    "ExclusionError",
    "single_pass",
    "run_exclusion",
]

KGAMMA_MODES = ("exact", "approx")
STOP_REASONS = ("fixpoint", "max_iterations", "min_retained")


class ExclusionError(ValueError):
    pass


class IterationFitError(FitError):
    """A refit failed inside the exclusion loop."""

    def __init__(self, iteration, n_in, cause):
        self.iteration = iteration
        self.n_in = n_in
        self.cause = cause
        super().__init__(f"fit failed at iteration {iteration} with {n_in} equations: {cause}")


@dataclass(frozen=True)
class ExclusionConfig:
    """Settings for :func:`run_exclusion`.

    ``min_retained`` and ``max_iterations`` default to ``p + 2`` and ``N``
    and are resolved against the dataset by :meth:`resolve`.  Setting
    ``baseline_k`` replaces the adaptive rule with the fixed test
    ``r_j > baseline_k``.
    """

    gamma: float = 0.05
    l_prime: int = 2
    kgamma_mode: str = "exact"
    sigma_mode: str = "variance-factor"
    min_retained: Optional[int] = None
    max_iterations: Optional[int] = None
    baseline_k: Optional[float] = None

    def __post_init__(self):
        if not (isinstance(self.gamma, (int, float)) and 0.0 < self.gamma < 1.0):
            raise ExclusionError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if isinstance(self.l_prime, bool) or not isinstance(self.l_prime, (int, np.integer)) or self.l_prime < 1:
            raise ExclusionError(f"l_prime must be an integer >= 1, got {self.l_prime!r}")
        if self.kgamma_mode not in KGAMMA_MODES:
            raise ExclusionError(f"kgamma_mode must be one of {KGAMMA_MODES}, got {self.kgamma_mode!r}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ExclusionError(f"sigma_mode must be one of {SIGMA_MODES}, got {self.sigma_mode!r}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ExclusionError(f"max_iterations must be >= 1, got {self.max_iterations!r}")
        if self.min_retained is not None and self.min_retained < 2:
            raise ExclusionError(f"min_retained must be >= 2, got {self.min_retained!r}")
        if self.baseline_k is not None and not (math.isfinite(self.baseline_k) and self.baseline_k >= 0):
            raise ExclusionError(f"baseline_k must be finite and >= 0, got {self.baseline_k!r}")

    def resolve(self, n: int, p: int) -> "ExclusionConfig":
        min_retained = p + 2 if self.min_retained is None else self.min_retained
        if min_retained <= p:
            raise ExclusionError(f"min_retained must exceed the parameter count {p}, got {min_retained}")
        max_iterations = max(1, n) if self.max_iterations is None else self.max_iterations
        return replace(self, min_retained=min_retained, max_iterations=max_iterations)

    def k_gamma(self, n: int) -> float:
        if self.kgamma_mode == "exact":
            return k_gamma_exact(n, self.gamma)
        return k_gamma_approx(n, self.gamma)

    def as_dict(self):
        return {
            "gamma": self.gamma,
            "l_prime": self.l_prime,
            "kgamma_mode": self.kgamma_mode,
            "sigma_mode": self.sigma_mode,
            "min_retained": self.min_retained,
            "max_iterations": self.max_iterations,
            "baseline_k": self.baseline_k,
        }


@dataclass(frozen=True)
class IterationRecord:
    """What one pass saw and decided.

    In baseline mode ``k_gamma`` holds ``baseline_k`` and the fixed-rule
    exclusions are listed in ``excluded_step4``.
    """

    iteration: int
    n_in: int
    kappa: float
    l_count: int
    k_gamma: float
    excluded_step3: tuple
    excluded_step4: tuple
    parameters_after: tuple
    sigma_scale: float = 1.0
    mode: str = "adaptive"

    @property
    def excluded_ids(self):
        return [i for i, _ in self.excluded_step3] + [i for i, _ in self.excluded_step4]


@dataclass(frozen=True)
class ExcludedEquation:
    id: Hashable
    iteration: int
    reason: str


@dataclass(frozen=True)
class ExclusionOutcome:
    final_solution: FitSolution
    retained_ids: list
    excluded: list
    trace: list
    converged: bool
    stop_reason: str
    config: ExclusionConfig = field(default=None)

    @property
    def excluded_ids(self):
        return [e.id for e in self.excluded]

    @property
    def iterations(self):
        return len(self.trace)


def _rank_key(item):
    ident, r = item
    return (-r, ident)


def single_pass(solution: FitSolution, data: Dataset, config: ExclusionConfig, iteration: int = 1):
    """Apply the exclusion rules once to an existing fit.

    ``solution`` must be fitted on exactly the equations of ``data`` (with the
    sigmas the normalized residuals should be read against).  Nothing is
    refitted here: step 3 and step 4 both judge the same residuals, and
    step 4 uses the same ``N`` as step 1.

    Returns
    -------
    (excluded_step3, excluded_step4, record)
        Id lists ordered by decreasing normalized residual, ties by id.
    """
    n = data.n
    norm = solution.normalized_residuals
    residuals = sorted(((i, norm[i]) for i in data.ids), key=_rank_key)
    kappa = kappa_limit(n)
    above = [(i, r) for i, r in residuals if r > kappa]
    l_count = len(above)
    params = tuple(float(v) for v in solution.parameters)

    if config.baseline_k is not None:
        k = float(config.baseline_k)
        flagged = tuple((i, r) for i, r in residuals if r > k)
        record = IterationRecord(iteration, n, kappa, l_count, k, (), flagged, params, mode="baseline")
        return [], [i for i, _ in flagged], record

    step3 = tuple(above[: l_count - config.l_prime]) if l_count > config.l_prime else ()
    k = config.k_gamma(n)
    removed = {i for i, _ in step3}
    step4 = tuple((i, r) for i, r in residuals if i not in removed and r > k)
    record = IterationRecord(iteration, n, kappa, l_count, k, step3, step4, params)
    return [i for i, _ in step3], [i for i, _ in step4], record


def run_exclusion(data: Dataset, config: ExclusionConfig | None = None, fitter: Fitter = fit_wls) -> ExclusionOutcome:
    """Exclude blunders iteratively until a pass removes nothing.

    Each iteration fits the retained equations, refreshes the sigmas per
    ``config.sigma_mode`` (from the input sigmas, by the current
    ``sqrt(variance_factor)``), runs :func:`single_pass` and drops the
    flagged equations together.

    The loop stops at a fixpoint; when applying a pass would leave fewer than
    ``min_retained`` equations (that pass is then not applied); or after
    ``max_iterations`` passes.

    Equations are processed in id order, so the outcome does not depend on
    the order of ``data``.
    """
    config = ExclusionConfig() if config is None else config
    cfg = config.resolve(data.n, data.p)
    if data.n < cfg.min_retained:
        raise ExclusionError(f"need at least min_retained={cfg.min_retained} equations, got {data.n}")

    current = data.sorted_by_id()
    trace = []
    excluded = []
    stop_reason = None
    solution = None

    for iteration in range(1, cfg.max_iterations + 1):
        try:
            raw = fitter(current)
            scale, _ = sigma_scale(current, raw, cfg.sigma_mode)
            scaled = current.with_sigma_scale(scale)
            solution = raw if scale == 1.0 else fitter(scaled)
        except FitError as exc:
            raise IterationFitError(iteration, current.n, exc) from exc

        step3, step4, record = single_pass(solution, scaled, cfg, iteration)
        trace.append(replace(record, sigma_scale=scale))
        drop = step3 + step4
        if not drop:
            stop_reason = "fixpoint"
            break
        if current.n - len(drop) < cfg.min_retained:
            stop_reason = "min_retained"
            break

        reason3 = "step3"
        reason4 = "baseline" if record.mode == "baseline" else "step4"
        excluded.extend(ExcludedEquation(i, iteration, reason3) for i in step3)
        excluded.extend(ExcludedEquation(i, iteration, reason4) for i in step4)
        current = current.without(drop)
    else:
        stop_reason = "max_iterations"
        # the last pass removed equations; refit so the solution matches the retained set
        try:
            raw = fitter(current)
            scale, _ = sigma_scale(current, raw, cfg.sigma_mode)
            solution = raw if scale == 1.0 else fitter(current.with_sigma_scale(scale))
        except FitError as exc:
            raise IterationFitError(cfg.max_iterations + 1, current.n, exc) from exc

    return ExclusionOutcome(
        final_solution=solution,
        retained_ids=current.ids,
        excluded=excluded,
        trace=trace,
        converged=stop_reason == "fixpoint",
        stop_reason=stop_reason,
        config=cfg,
    )
