"""Monte Carlo checks of the exclusion statistics.

Random numbers come from numpy's PCG64.  Trials are grouped into blocks of
``BLOCK_TRIALS``; block ``b`` draws from ``SeedSequence(seed, spawn_key=(b,))``,
so every trial's stream depends only on ``(seed, trial index)`` and blocks
can run in any order.  Aggregates are plain sums, so the report is
independent of evaluation order.

Normal deviates are produced from uniforms by the inverse normal CDF.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special, stats

from .exclusion import ExclusionConfig, ExclusionError, run_exclusion
from .fitting import Dataset, design_poly, fit_wls
from .stat_core import kappa_limit, poisson_excess_prob

__all__ = [
    "NullSimSpec",
    "BlunderScenario",
    "NullSummary",
    "RuleSummary",
    "SimulationReport",
    "RULE_PRESETS",
    "make_rule",
    "simulate_null",
    "simulate_blunders",
    "block_rng",
]

BLOCK_TRIALS = 256
EXCESS_LEVELS = (2, 3, 4)

# "baseline3" is the classical fixed rule with the stated sigmas
RULE_PRESETS = {
    "adaptive": ExclusionConfig(),
    "adaptive-approx": ExclusionConfig(kgamma_mode="approx"),
    "adaptive-l1": ExclusionConfig(l_prime=1),
    "baseline3": ExclusionConfig(baseline_k=3.0, sigma_mode="none"),
}


def make_rule(rule) -> ExclusionConfig:
    """Accept a preset name, a mapping of config fields, or a config."""
    if isinstance(rule, ExclusionConfig):
        return rule
    if isinstance(rule, str):
        try:
            return RULE_PRESETS[rule]
        except KeyError:
            raise ExclusionError(f"unknown rule {rule!r}; presets are {sorted(RULE_PRESETS)}") from None
    if isinstance(rule, Mapping):
        return ExclusionConfig(**rule)
    raise ExclusionError(f"cannot build a rule from {rule!r}")


def _check_seed(seed):
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not (0 <= seed < 2**64):
        raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_check_seed(seed), spawn_key=(block,))))


def _blocks(trials):
    for b, start in enumerate(range(0, trials, BLOCK_TRIALS)):
        yield b, min(BLOCK_TRIALS, trials - start)


def standard_normals(rng: np.random.Generator, size) -> np.ndarray:
    u = rng.random(size)
    # u == 0 has probability 2**-53 per draw; keep the transform finite
    np.maximum(u, 2.0**-53, out=u)
    return special.ndtri(u)


@dataclass(frozen=True)
class NullSimSpec:
    n: int
    trials: int
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        _check_seed(self.seed)


@dataclass(frozen=True)
class BlunderScenario:
    """Straight-line (or polynomial) data with a few gross offsets.

    ``parameters`` are the generating polynomial coefficients, constant term
    first, evaluated on ``n`` points evenly spaced over [-1, 1].  Each trial
    adds unit-sigma normal noise and shifts ``blunder_count`` distinct,
    uniformly chosen points by ``+blunder_magnitude * sigma``.
    """

    n: int
    blunder_count: int
    blunder_magnitude: float
    trials: int
    seed: int = 0
    parameters: tuple = (2.0, -1.0)
    sigma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "parameters", tuple(float(v) for v in self.parameters))
        if not self.parameters:
            raise ValueError("at least one generating parameter is required")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not (0 <= self.blunder_count < self.n):
            raise ValueError(f"blunder_count must lie in [0, n), got {self.blunder_count}")
        if self.n <= len(self.parameters):
            raise ValueError("n must exceed the number of parameters")
        if not math.isfinite(self.blunder_magnitude):
            raise ValueError("blunder_magnitude must be finite")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be finite and > 0")
        _check_seed(self.seed)

    @property
    def p(self):
        return len(self.parameters)

    def design(self):
        return design_poly(np.linspace(-1.0, 1.0, self.n), self.p - 1)


@dataclass
class NullSummary:
    n: int
    trials: int
    kappa: float
    mean_L: float
    var_L: float
    se_mean_L: float
    p_L_ge: dict
    se_p_L_ge: dict
    poisson_L_ge: dict
    binomial_L_ge: dict


@dataclass
class RuleSummary:
    trials: int
    mean_L: float
    var_L: float
    p_L_ge: dict
    bias: list
    bias_se: list
    rmse: list
    mean_excluded: float
    mean_first_pass_excluded: float
    se_first_pass_excluded: float
    false_exclusion_rate: float
    missed_blunder_rate: float
    converged_fraction: float
    mean_iterations: float
    config: dict = field(default_factory=dict)


@dataclass
class SimulationReport:
    kind: str
    spec: dict
    null: NullSummary | None = None
    rules: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "kind": self.kind,
            "spec": dict(self.spec),
            "null": None if self.null is None else asdict(self.null),
            "rules": {k: asdict(v) for k, v in self.rules.items()},
            "reference": {k: asdict(v) for k, v in self.reference.items()},
        }


def binomial_excess_prob(n: int, m: int) -> float:
    """P(L >= m) for L ~ Binomial(n, 1/n), the exact law of L under normal errors."""
    return float(stats.binom.sf(m - 1, n, 1.0 / n))


def simulate_null(spec: NullSimSpec) -> SimulationReport:
    """Count exceedances of ``kappa(n)`` among ``n`` standard normal residuals.

    Under normal errors ``L`` is Binomial(n, 1/n): mean 1, and close to
    Poisson(1) for large ``n``.
    """
    kappa = kappa_limit(spec.n)
    total = 0
    total_sq = 0
    ge = {m: 0 for m in EXCESS_LEVELS}
    for block, size in _blocks(spec.trials):
        r = standard_normals(block_rng(spec.seed, block), (size, spec.n))
        L = np.count_nonzero(np.abs(r) > kappa, axis=1)
        total += int(L.sum())
        total_sq += int((L * L).sum())
        for m in EXCESS_LEVELS:
            ge[m] += int(np.count_nonzero(L >= m))

    t = spec.trials
    mean = total / t
    var = (total_sq - t * mean * mean) / (t - 1) if t > 1 else 0.0
    var = max(var, 0.0)
    p_ge = {str(m): ge[m] / t for m in EXCESS_LEVELS}
    summary = NullSummary(
        n=spec.n,
        trials=t,
        kappa=kappa,
        mean_L=mean,
        var_L=var,
        se_mean_L=math.sqrt(var / t),
        p_L_ge=p_ge,
        se_p_L_ge={k: math.sqrt(v * (1 - v) / t) for k, v in p_ge.items()},
        poisson_L_ge={str(m): poisson_excess_prob(m) for m in EXCESS_LEVELS},
        binomial_L_ge={str(m): binomial_excess_prob(spec.n, m) for m in EXCESS_LEVELS},
    )
    return SimulationReport(kind="null", spec=asdict(spec), null=summary)


class _Accumulator:
    def __init__(self, p):
        self.trials = 0
        self.err = np.zeros(p)
        self.err_sq = np.zeros(p)
        self.L = 0
        self.L_sq = 0
        self.L_ge = {m: 0 for m in EXCESS_LEVELS}
        self.excluded = 0
        self.first = 0
        self.first_sq = 0
        self.false_excl = 0
        self.clean_total = 0
        self.missed = 0
        self.blunder_total = 0
        self.converged = 0
        self.iterations = 0

    def add_fit(self, params, truth):
        d = np.asarray(params) - truth
        self.trials += 1
        self.err += d
        self.err_sq += d * d

    def add_outcome(self, outcome, truth, blunder_ids, n):
        self.add_fit(outcome.final_solution.parameters, truth)
        first = outcome.trace[0]
        self.L += first.l_count
        self.L_sq += first.l_count**2
        for m in EXCESS_LEVELS:
            self.L_ge[m] += first.l_count >= m
        fp = len(first.excluded_ids)
        self.first += fp
        self.first_sq += fp * fp
        excluded = set(outcome.excluded_ids)
        self.excluded += len(excluded)
        self.false_excl += len(excluded - blunder_ids)
        self.clean_total += n - len(blunder_ids)
        self.missed += len(blunder_ids - excluded)
        self.blunder_total += len(blunder_ids)
        self.converged += outcome.converged
        self.iterations += outcome.iterations

    def summary(self, config=None):
        t = self.trials
        mean_err = self.err / t
        var_err = (self.err_sq - t * mean_err**2) / (t - 1) if t > 1 else np.zeros_like(mean_err)
        var_err = np.maximum(var_err, 0.0)
        mean_L = self.L / t
        var_L = max((self.L_sq - t * mean_L**2) / (t - 1), 0.0) if t > 1 else 0.0
        mean_first = self.first / t
        var_first = max((self.first_sq - t * mean_first**2) / (t - 1), 0.0) if t > 1 else 0.0
        return RuleSummary(
            trials=t,
            mean_L=mean_L,
            var_L=var_L,
            p_L_ge={str(m): self.L_ge[m] / t for m in EXCESS_LEVELS},
            bias=mean_err.tolist(),
            bias_se=np.sqrt(var_err / t).tolist(),
            rmse=np.sqrt(self.err_sq / t).tolist(),
            mean_excluded=self.excluded / t,
            mean_first_pass_excluded=mean_first,
            se_first_pass_excluded=math.sqrt(var_first / t),
            false_exclusion_rate=self.false_excl / self.clean_total if self.clean_total else 0.0,
            missed_blunder_rate=self.missed / self.blunder_total if self.blunder_total else 0.0,
            converged_fraction=self.converged / t,
            mean_iterations=self.iterations / t,
            config={} if config is None else config.as_dict(),
        )


def simulate_blunders(scenario: BlunderScenario, rules: Sequence) -> SimulationReport:
    """Run every rule on the same contaminated datasets and summarize.

    ``rules`` is a sequence of preset names, config mappings or
    :class:`ExclusionConfig` objects, or a mapping of label to any of those.
    The report also carries two references computed on the same noise: a
    plain fit of the uncontaminated data (``clean_wls``) and a plain fit of
    the contaminated data (``contaminated_wls``).
    """
    if isinstance(rules, Mapping):
        items = list(rules.items())
    else:
        items = [(r if isinstance(r, str) else f"rule{k}", r) for k, r in enumerate(rules)]
    if not items:
        raise ExclusionError("at least one rule is required")
    configs = {}
    for k, (label, rule) in enumerate(items):
        try:
            configs[label] = make_rule(rule)
        except (ExclusionError, TypeError, ValueError) as exc:
            raise ExclusionError(f"rule {k} ({label!r}): {exc}") from exc

    truth = np.asarray(scenario.parameters)
    A = scenario.design()
    y0 = A @ truth
    n = scenario.n
    ids = tuple(range(n))
    acc = {label: _Accumulator(scenario.p) for label in configs}
    clean = _Accumulator(scenario.p)
    dirty = _Accumulator(scenario.p)

    for block, size in _blocks(scenario.trials):
        rng = block_rng(scenario.seed, block)
        noise = standard_normals(rng, (size, n)) * scenario.sigma
        for t in range(size):
            positions = rng.choice(n, size=scenario.blunder_count, replace=False)
            y_clean = y0 + noise[t]
            y = y_clean.copy()
            y[positions] += scenario.blunder_magnitude * scenario.sigma
            blunder_ids = {int(i) for i in positions}

            clean.add_fit(fit_wls(Dataset(ids, A, y_clean, np.full(n, scenario.sigma))).parameters, truth)
            data = Dataset(ids, A, y, np.full(n, scenario.sigma))
            dirty.add_fit(fit_wls(data).parameters, truth)
            for k, (label, config) in enumerate(configs.items()):
                try:
                    outcome = run_exclusion(data, config)
                except ExclusionError as exc:
                    raise ExclusionError(f"rule {k} ({label!r}): {exc}") from exc
                acc[label].add_outcome(outcome, truth, blunder_ids, n)

    return SimulationReport(
        kind="blunders",
        spec=asdict(scenario),
        rules={label: acc[label].summary(configs[label]) for label in configs},
        reference={"clean_wls": clean.summary(), "contaminated_wls": dirty.summary()},
    )
