"""Independent reference computations for the test-suite.

Nothing here imports the code under test.  Thresholds come from scipy's
normal quantile or mpmath, the probability integral from numerical
quadrature, fits from ``numpy.linalg.lstsq``, and exclusion sets are
recomputed directly from their definition.
"""

import math

import mpmath
import numpy as np
from scipy import integrate, stats


def psi_quad(z):
    """sqrt(2/pi) * int_0^z exp(-t^2/2) dt by adaptive quadrature."""
    val, _ = integrate.quad(lambda t: math.exp(-0.5 * t * t), 0.0, z, epsabs=1e-14, epsrel=1e-14, limit=200)
    return math.sqrt(2.0 / math.pi) * val


def tail_mp(z, dps=40):
    """1 - psi(z) at high precision."""
    with mpmath.workdps(dps):
        z = mpmath.mpf(z)
        return mpmath.sqrt(2 / mpmath.pi) * mpmath.quad(lambda t: mpmath.exp(-t * t / 2), [z, mpmath.inf])


def kappa_ref(n):
    return float(stats.norm.isf(0.5 / n))


def k_exact_ref(n, gamma):
    tail = -math.expm1(math.log1p(-gamma) / n)
    return float(stats.norm.isf(0.5 * tail))


def k_approx_ref(n, gamma):
    return float(stats.norm.isf(0.5 * gamma / n))


def wls_lstsq(design, y, sigma):
    """Weighted fit by numpy's least-squares driver; returns params and |eps|/sigma."""
    A = np.asarray(design, float) / np.asarray(sigma, float)[:, None]
    b = np.asarray(y, float) / np.asarray(sigma, float)
    params, *_ = np.linalg.lstsq(A, b, rcond=None)
    r = np.abs(b - A @ params)
    n, p = A.shape
    vf = float(r @ r) / (n - p)
    return params, r, vf


def brute_force_pass(norm, kappa, k, l_prime, baseline_k=None):
    """Exclusion sets of one pass, straight from the definitions.

    ``norm`` maps id -> normalized residual.  Step 3 takes each kappa
    exceedance that is outranked (larger residual, or equal residual and
    smaller id) by fewer than ``L - l_prime`` others.
    """
    if baseline_k is not None:
        return set(), {i for i, r in norm.items() if r > baseline_k}
    above = [i for i, r in norm.items() if r > kappa]
    L = len(above)
    step3 = set()
    if L > l_prime:
        cut = L - l_prime
        for i in above:
            outranked_by = sum(
                1 for j in above if j != i and (norm[j] > norm[i] or (norm[j] == norm[i] and j < i))
            )
            if outranked_by < cut:
                step3.add(i)
    step4 = {i for i, r in norm.items() if i not in step3 and r > k}
    return step3, step4


def outcome_signature(outcome):
    """Everything observable about an outcome, as comparable builtins."""
    trace = tuple(
        (
            r.iteration,
            r.n_in,
            r.kappa,
            r.l_count,
            r.k_gamma,
            tuple(r.excluded_step3),
            tuple(r.excluded_step4),
            tuple(r.parameters_after),
            r.sigma_scale,
            r.mode,
        )
        for r in outcome.trace
    )
    sol = outcome.final_solution
    return (
        trace,
        tuple(outcome.retained_ids),
        tuple((e.id, e.iteration, e.reason) for e in outcome.excluded),
        outcome.stop_reason,
        outcome.converged,
        sol.parameters.tobytes(),
        sol.covariance.tobytes(),
        tuple(sorted(sol.normalized_residuals.items())),
    )


def recheck_outcome(data, config, outcome, rtol=1e-9):
    """Re-derive every pass of ``outcome`` from the definitions.

    Each iteration's retained set is refitted with lstsq, sigmas are refreshed
    by sqrt(chi2 / dof) when asked, thresholds come from scipy and the
    exclusion sets from :func:`brute_force_pass`.  Residuals within ``rtol``
    of a threshold (or of a step-3 rival) cannot be decided reliably across
    two solvers; such passes are counted as ambiguous instead of compared.

    Returns ``(checked, ambiguous)`` pass counts; raises AssertionError on a
    disagreement.
    """
    ids = list(data.ids)
    index = {i: k for k, i in enumerate(ids)}
    retained = set(ids)
    checked = ambiguous = 0
    cfg = outcome.config
    for rec in outcome.trace:
        assert rec.n_in == len(retained)
        rows = sorted(retained)
        sel = [index[i] for i in rows]
        params, r, vf = wls_lstsq(data.design[sel], data.observed[sel], data.sigma[sel])
        assert np.allclose(params, rec.parameters_after, rtol=1e-7, atol=1e-7 * max(1.0, np.abs(params).max()))
        scale = 1.0
        if cfg.sigma_mode == "variance-factor":
            ref_scale = math.sqrt(vf)
            if rec.sigma_scale == 1.0 and ref_scale < 1e-6 * max(1.0, float(np.abs(data.observed[sel] / data.sigma[sel]).max())):
                scale = 1.0
            else:
                assert math.isclose(rec.sigma_scale, ref_scale, rel_tol=1e-7), (rec.sigma_scale, ref_scale)
                scale = ref_scale
        norm = dict(zip(rows, (r / scale).tolist()))

        n = len(rows)
        kappa = kappa_ref(n)
        assert math.isclose(rec.kappa, kappa, rel_tol=1e-12)
        if cfg.baseline_k is not None:
            k = cfg.baseline_k
        elif cfg.kgamma_mode == "exact":
            k = k_exact_ref(n, cfg.gamma)
        else:
            k = k_approx_ref(n, cfg.gamma)
        assert math.isclose(rec.k_gamma, k, rel_tol=1e-12)

        vals = sorted(norm.values())
        near = any(abs(v - t) <= rtol * max(1.0, t) for v in vals for t in (kappa, k))
        near = near or any(abs(a - b) <= rtol * max(1.0, a) and a > kappa for a, b in zip(vals, vals[1:]))
        if near:
            ambiguous += 1
        else:
            s3, s4 = brute_force_pass(norm, kappa, k, cfg.l_prime, cfg.baseline_k)
            assert rec.l_count == sum(v > kappa for v in vals)
            assert {i for i, _ in rec.excluded_step3} == s3
            assert {i for i, _ in rec.excluded_step4} == s4
            checked += 1
        excluded_now = set(rec.excluded_ids)
        if excluded_now and len(retained) - len(excluded_now) >= cfg.min_retained:
            retained -= excluded_now
    assert retained == set(outcome.retained_ids)
    return checked, ambiguous


def check_invariants(data, outcome):
    """Structural properties every outcome must have."""
    cfg = outcome.config
    ids = set(data.ids)
    retained = set(outcome.retained_ids)
    excluded = [e.id for e in outcome.excluded]
    assert len(excluded) == len(set(excluded))
    assert retained.isdisjoint(excluded)
    assert retained | set(excluded) == ids
    assert outcome.converged == (outcome.stop_reason == "fixpoint")
    assert set(outcome.final_solution.residuals) == retained
    assert len(retained) >= cfg.min_retained

    # termination bound
    assert 1 <= len(outcome.trace) <= min(cfg.max_iterations, data.n - cfg.min_retained + 1)

    # strictly shrinking retained sets
    n_ins = [r.n_in for r in outcome.trace]
    assert all(b < a for a, b in zip(n_ins, n_ins[1:]))
    assert n_ins[0] == data.n

    for k, rec in enumerate(outcome.trace, start=1):
        assert rec.iteration == k
        norm3 = [r for _, r in rec.excluded_step3]
        norm4 = [r for _, r in rec.excluded_step4]
        if cfg.baseline_k is None:
            # step-3 cardinality
            assert len(rec.excluded_step3) == max(0, rec.l_count - cfg.l_prime)
        else:
            assert not rec.excluded_step3
        assert all(r > rec.kappa for r in norm3)
        assert all(r > rec.k_gamma for r in norm4)
        # ordering: descending residual, ties by ascending id
        for lst in (rec.excluded_step3, rec.excluded_step4):
            keys = [(-r, i) for i, r in lst]
            assert keys == sorted(keys)

    last = outcome.trace[-1]
    if outcome.stop_reason == "fixpoint":
        assert not last.excluded_ids
    if outcome.stop_reason == "min_retained":
        assert last.n_in - len(last.excluded_ids) < cfg.min_retained
    for rec in outcome.trace[:-1]:
        assert rec.excluded_ids


def check_pass_consistency(rec, norm):
    """Threshold consistency of one record against the full residual map it judged."""
    removed3 = {i for i, _ in rec.excluded_step3}
    removed4 = {i for i, _ in rec.excluded_step4}
    assert rec.l_count == sum(r > rec.kappa for r in norm.values())
    spared = [r for i, r in norm.items() if r > rec.kappa and i not in removed3]
    if rec.excluded_step3:
        assert min(r for _, r in rec.excluded_step3) >= max(spared, default=-1.0)
    for i, r in norm.items():
        if i in removed3:
            continue
        assert (r > rec.k_gamma) == (i in removed4)
