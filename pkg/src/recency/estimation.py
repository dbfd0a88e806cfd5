"""Pseudo-likelihood maximization, sandwich covariance, and model selection.

The optimizer is quasi-Newton (BFGS) with line search on the negative
log pseudo-likelihood, stopping when the score's sup-norm drops below
1e-6 or after 500 iterations.  Non-convergence is flagged on the result,
never raised, so replicate harnesses can count failures.  On failure the
fit restarts up to three times from deterministically perturbed inits.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .likelihood import log_pseudo_likelihood, score, score_contributions
from .model import ModelSpec, Theta, as_arrays, initial_theta

__all__ = [
    "FitResult",
    "fit",
    "sandwich_covariance",
    "compare_eta_variants",
    "backward_stepwise",
    "VariantFit",
    "StepwiseResult",
    "fit_report",
]

SCORE_TOL = 1e-6
MAX_ITER = 500
N_RESTARTS = 3
WEIGHT_SUM_TOL = 1e-6
NEAR_SINGULAR_RTOL = 1e-10
# a direction is unidentified when a +-5 move costs < 0.01 log-likelihood:
# the optimum then sits at (or runs toward) an infinite parameter value
FLATNESS_DELTA = 5.0
FLATNESS_TOL = 1e-2


def select_candidate(candidates):
    """Highest likelihood wins; a converged candidate within likelihood
    resolution (0.01) of the leader beats a stalled leader."""
    best = max(candidates, key=lambda c: c[1])
    settled = [c for c in candidates if c[2] < SCORE_TOL and c[1] >= best[1] - 1e-2]
    return max(settled, key=lambda c: c[1]) if settled else best


@dataclass
class FitResult:
    """Estimates plus inference byproducts of one maximization."""

    theta_hat: Theta
    covariance: np.ndarray      # over free parameters, in free_names order
    log_pl: float
    bic: float
    n_subjects: int
    converged: bool
    iterations: int
    spec: ModelSpec
    free_names: tuple[str, ...]
    score_sup_norm: float
    recency_rate: float | None = None
    # density-ratio extras (populated by fit_extended only)
    mu: float | None = None
    constraint_residuals: tuple[float, float] | None = None
    infeasible_rejections: int = 0

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def n_free(self) -> int:
        return len(self.free_names)

    def estimates(self) -> dict[str, float]:
        free = self.theta_hat.free_values()
        return {name: float(v) for name, v in zip(self.free_names, free)}


def _check_weights(arrs, n):
    total = math.fsum(arrs.w)
    if abs(total - n) > WEIGHT_SUM_TOL:
        raise ValueError(
            f"weights sum to {total:.6f} but must equal the subject count {n}; "
            "rescale them (w *= n / w.sum()) before fitting"
        )


def _neg_objective(free, template, spec, arrs):
    theta = template.with_free(free)
    try:
        return -log_pseudo_likelihood(arrs, theta, spec)
    except FloatingPointError:
        return math.inf


def _neg_gradient(free, template, spec, arrs):
    theta = template.with_free(free)
    try:
        return -score(arrs, theta, spec)
    except FloatingPointError:
        return np.full(free.size, np.nan)


def fit(data, spec: ModelSpec, init: Theta | None = None, *,
        enforce_weight_sum: bool = True) -> FitResult:
    """Maximize the weighted log pseudo-likelihood over free parameters.

    ``init`` overrides the default starting point (zeros, eta11 = -5).
    Weights must already be rescaled to sum to the subject count unless
    ``enforce_weight_sum`` is disabled (the rescale only affects the
    sandwich/BIC scale, not the argmax).
    """
    if spec.extended:
        from .densityratio import fit_extended
        return fit_extended(data, spec, init, enforce_weight_sum=enforce_weight_sum)
    arrs = as_arrays(data)
    n = arrs.n
    if enforce_weight_sum:
        _check_weights(arrs, n)
    template = init if init is not None else initial_theta(spec)
    x0 = template.free_values()

    candidates = []
    total_iter = 0
    rng = np.random.default_rng(np.random.SeedSequence(20230915))
    for attempt in range(1 + N_RESTARTS):
        start = x0 if attempt == 0 else x0 + rng.normal(scale=0.25 * (1.0 + np.abs(x0)))
        res = minimize(
            _neg_objective, start, args=(template, spec, arrs),
            jac=_neg_gradient, method="BFGS",
            options={"gtol": SCORE_TOL, "maxiter": MAX_ITER},
        )
        total_iter += res.nit
        theta = template.with_free(res.x)
        try:
            ll = log_pseudo_likelihood(arrs, theta, spec)
            if not np.isfinite(ll):
                continue
            g = score(arrs, theta, spec)
        except FloatingPointError:
            continue
        sup = float(np.max(np.abs(g))) if g.size else 0.0
        candidates.append((theta, ll, sup))
        if sup < SCORE_TOL:
            break
    if candidates:
        theta_hat, ll, sup = select_candidate(candidates)
    else:
        # every attempt degenerated; report the untouched init, flagged
        theta_hat, ll, sup = template, -math.inf, math.inf
    converged = sup < SCORE_TOL
    if converged and _flat_directions(
            lambda v: -_neg_objective(v, template, spec, arrs),
            theta_hat.free_values(), ll):
        converged = False

    k = theta_hat.free_values().size
    bic = -2.0 * ll + k * math.log(n)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cov = sandwich_covariance(arrs, theta_hat, spec)
    except (np.linalg.LinAlgError, ValueError):
        cov = np.full((k, k), np.nan)
        converged = False
    return FitResult(
        theta_hat=theta_hat, covariance=cov, log_pl=ll, bic=bic,
        n_subjects=n, converged=converged, iterations=total_iter,
        spec=spec, free_names=spec.free_names(), score_sup_norm=sup,
    )


def _flat_directions(loglik_fn, free: np.ndarray, ll_hat: float) -> list[int]:
    """Indices of free parameters whose +-FLATNESS_DELTA move the data
    cannot reject (log-likelihood loss < FLATNESS_TOL); such a direction
    has its supremum at infinity rather than an interior optimum."""
    flat = []
    for j in range(free.size):
        for sign in (1.0, -1.0):
            trial = free.copy()
            trial[j] += sign * FLATNESS_DELTA
            if loglik_fn(trial) > ll_hat - FLATNESS_TOL:
                flat.append(j)
                break
    return flat


def _fd_score_jacobian(arrs, theta, spec, score_fn):
    """Central finite differences of the total score, column per parameter."""
    free = theta.free_values()
    k = free.size
    jac = np.empty((k, k))
    for j in range(k):
        h = 1e-5 * (1.0 + abs(free[j]))
        up = free.copy()
        up[j] += h
        dn = free.copy()
        dn[j] -= h
        jac[:, j] = (score_fn(arrs, theta.with_free(up), spec)
                     - score_fn(arrs, theta.with_free(dn), spec)) / (2.0 * h)
    return 0.5 * (jac + jac.T)


def sandwich_covariance(data, theta_hat: Theta, spec: ModelSpec) -> np.ndarray:
    """Robust covariance (1/n) I^-1 C I^-T of the free-parameter estimates.

    I is the score Jacobian (finite differences of the analytic
    per-subject scores), C the outer product of the per-subject scores.
    Raises LinAlgError naming the nearly-unidentified parameter when I is
    numerically singular.
    """
    arrs = as_arrays(data)
    n = arrs.n
    m = score_contributions(arrs, theta_hat, spec)
    g = m.sum(axis=0)
    sup = float(np.max(np.abs(g))) if g.size else 0.0
    if sup >= 1e-4:
        warnings.warn(
            f"sandwich evaluated away from a stationary point (score sup-norm {sup:.2e})",
            stacklevel=2,
        )
    info = _fd_score_jacobian(arrs, theta_hat, spec, score) / n
    c_mat = (m.T @ m) / n
    svals = np.linalg.svd(info, compute_uv=False)
    # near-singular information means an effectively unidentified direction,
    # e.g. a likelihood whose supremum sits at an infinite parameter value
    if svals[-1] <= NEAR_SINGULAR_RTOL * max(svals[0], 1.0):
        _, _, vt = np.linalg.svd(info)
        names = spec.free_names()
        culprit = names[int(np.argmax(np.abs(vt[-1])))]
        raise np.linalg.LinAlgError(
            f"information matrix is numerically singular; parameter {culprit!r} "
            "is not identified by the data"
        )
    inv_info = np.linalg.solve(info, np.eye(info.shape[0]))
    cov = inv_info @ c_mat @ inv_info.T / n
    return 0.5 * (cov + cov.T)


@dataclass
class VariantFit:
    name: str
    spec: ModelSpec
    fit: FitResult | None
    error: str | None = None

    @property
    def log_pl(self):
        return None if self.fit is None else self.fit.log_pl

    @property
    def bic(self):
        return None if self.fit is None else self.fit.bic


ETA_VARIANTS = (
    ("full", dict(fix_eta00=None, fix_eta10=None, p0_identically_one=False)),
    ("fix_eta00", dict(fix_eta00=7.0, fix_eta10=None, p0_identically_one=False)),
    ("fix_eta00_eta10", dict(fix_eta00=7.0, fix_eta10=-7.0, p0_identically_one=False)),
    ("p0_one_fix_eta10", dict(fix_eta00=None, fix_eta10=-7.0, p0_identically_one=True)),
)


def compare_eta_variants(data, covariates) -> list[VariantFit]:
    """Fit the four eta-structure variants and report LL/BIC for each.

    A failing variant is reported with its error instead of aborting the
    others.  Use :func:`best_variant` for the tie-broken winner.
    """
    out = []
    for name, kw in ETA_VARIANTS:
        spec = ModelSpec(covariate_names=tuple(covariates), **kw)
        try:
            out.append(VariantFit(name=name, spec=spec, fit=fit(data, spec)))
        except Exception as exc:  # structural failures only; fit never raises statistically
            out.append(VariantFit(name=name, spec=spec, fit=None, error=str(exc)))
    return out


def best_variant(variants: list[VariantFit]) -> VariantFit:
    """Lowest BIC; ties (within 1e-9) go to the variant with fewer free parameters."""
    ok = [v for v in variants if v.fit is not None]
    if not ok:
        raise ValueError("every variant failed to fit")
    return min(ok, key=lambda v: (round(v.fit.bic / 1e-9) * 1e-9, v.fit.n_free))


def _subset_subjects(arrs, keep_idx):
    from .model import SubjectArrays
    return SubjectArrays(x=arrs.x[:, keep_idx], s=arrs.s, z=arrs.z, w=arrs.w)


@dataclass
class StepwiseResult:
    selected: tuple[str, ...]
    fit: FitResult
    trace: list[dict] = field(default_factory=list)


def backward_stepwise(data, candidate_covariates, spec: ModelSpec) -> StepwiseResult:
    """Greedy BIC deletion: drop the covariate whose removal lowers BIC
    the most; stop when no deletion lowers it.  The intercept is always
    retained; the eta structure of ``spec`` is kept throughout.
    """
    candidates = list(candidate_covariates)
    if not candidates:
        raise ValueError("candidate covariate list is empty")
    arrs = as_arrays(data)
    if arrs.x.shape[1] != len(candidates):
        raise ValueError(
            f"data has {arrs.x.shape[1]} covariate columns but {len(candidates)} candidates given"
        )

    def fit_cols(names):
        idx = [candidates.index(nm) for nm in names]
        sub_spec = replace(spec, covariate_names=tuple(names))
        return fit(_subset_subjects(arrs, idx), sub_spec)

    current = list(candidates)
    current_fit = fit_cols(current)
    trace = [{"kept": tuple(current), "dropped": None, "bic": current_fit.bic,
              "log_pl": current_fit.log_pl}]
    while current:
        trials = []
        for name in current:
            reduced = [c for c in current if c != name]
            try:
                cand_fit = fit_cols(reduced)
                trials.append((cand_fit.bic, name, cand_fit))
            except Exception as exc:
                trace.append({"kept": tuple(reduced), "dropped": name,
                              "bic": math.inf, "error": str(exc)})
        if not trials:
            break
        trials.sort(key=lambda t: t[0])
        best_bic, drop_name, best_fit = trials[0]
        if best_bic >= current_fit.bic:
            break
        current = [c for c in current if c != drop_name]
        current_fit = best_fit
        trace.append({"kept": tuple(current), "dropped": drop_name,
                      "bic": best_fit.bic, "log_pl": best_fit.log_pl})
    return StepwiseResult(selected=tuple(current), fit=current_fit, trace=trace)


def fit_report(result: FitResult) -> dict:
    """JSON-serializable report with the fixed external field names."""
    spec = result.spec
    theta = result.theta_hat
    eta = {}
    for j, name in enumerate(("eta00", "eta01", "eta10", "eta11")):
        if spec.p0_identically_one and name in ("eta00", "eta01"):
            continue
        eta[name] = float(theta.eta[j])
    ses = {name: float(v) for name, v in zip(result.free_names, result.se)}
    report = {
        "beta": [float(b) for b in theta.beta],
        "covariates": list(spec.covariate_names),
        "eta": eta,
        "psi": None if theta.psi is None else [float(p) for p in theta.psi],
        "se": ses,
        "cov": {
            "params": list(result.free_names),
            "matrix": np.asarray(result.covariance).tolist(),
        },
        "log_pl": float(result.log_pl),
        "bic": float(result.bic),
        "n_subjects": result.n_subjects,
        "converged": bool(result.converged),
        "iterations": result.iterations,
        "recency_rate": result.recency_rate,
        "spec": {
            "covariate_names": list(spec.covariate_names),
            "fix_eta00": spec.fix_eta00,
            "fix_eta10": spec.fix_eta10,
            "p0_identically_one": spec.p0_identically_one,
            "extended": spec.extended,
            "z_model_covariate": spec.z_model_covariate,
        },
    }
    if theta.eta_x is not None:
        report["eta_x"] = float(theta.eta_x)
    if spec.extended:
        report["mu"] = result.mu
        report["constraint_residuals"] = (
            None if result.constraint_residuals is None
            else [float(r) for r in result.constraint_residuals]
        )
        report["infeasible_rejections"] = result.infeasible_rejections
    return report
