"""Density-ratio extension: exponential tilt on the time-gap distribution.

When the time since the last test is allowed to depend on recency
status, the two conditional densities are linked by the tilt
exp(psi0 + psi1 * s) and the baseline density is profiled out
nonparametrically (one jump per observed s).  The jumps have the closed
form

    p_i = w_i / (n + n * mu * (e_i - 1)),        e_i = tilt(s_i)

with a single multiplier mu solving

    g(mu) = sum_i w_i (e_i - 1) / (1 + mu (e_i - 1)) = 0,

which enforces both constraints sum(p) = 1 and sum(p (e - 1)) = 0.
g is strictly decreasing between the poles of its terms, so the root is
bracketed on the open interval where every denominator stays positive.

The profile objective adds -sum w_i log(1 + mu (e_i - 1)) to the tilted
pseudo-likelihood; its gradient is taken by central finite differences
because mu depends on psi through the inner root-find.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize

from .estimation import (
    FitResult,
    MAX_ITER,
    SCORE_TOL,
    _check_weights,
    _flat_directions,
    select_candidate,
)
from .likelihood import _case_terms
from .model import ModelSpec, Theta, as_arrays, check_theta_spec, initial_theta

__all__ = [
    "TiltSolution",
    "tilt",
    "solve_mu",
    "profile_log_likelihood",
    "fit_extended",
]

SUM_TOL = 1e-10       # |sum(p) - 1|
TILT_CONSTRAINT_TOL = 1e-8   # |sum(p (e - 1))|


def tilt(s, psi):
    """Density ratio exp(psi0 + psi1 * s); errors on overflow."""
    s = np.asarray(s, dtype=float)
    psi = np.asarray(psi, dtype=float)
    expo = psi[0] + psi[1] * s
    if np.any(expo > 700.0):
        raise OverflowError("tilt exponent overflows float64; bound psi during optimization")
    return np.exp(expo)


@dataclass(frozen=True)
class TiltSolution:
    """Multiplier and nonparametric jumps for one psi."""

    mu: float
    jumps: np.ndarray
    feasible: bool
    residual_sum: float    # sum(jumps) - 1
    residual_tilt: float   # sum(jumps * (e - 1))


def _solution(mu, w, n, d, feasible_extra=True):
    denom = 1.0 + mu * d
    jumps = w / (n * denom)
    r_sum = math.fsum(jumps) - 1.0
    r_tilt = math.fsum(jumps * d)
    feasible = (
        feasible_extra
        and np.all(denom > 0.0)
        and np.all(jumps <= 1.0 + 1e-12)
        and np.all(jumps >= 0.0)
        and abs(r_sum) <= SUM_TOL
        and abs(r_tilt) <= TILT_CONSTRAINT_TOL
    )
    if feasible and d.any():
        nz = d != 0.0
        u = (w[nz] - n) / (n * d[nz])
        neg = u[u < 0.0]
        pos = u[u > 0.0]
        lo = neg.max() if neg.size else -math.inf
        hi = pos.min() if pos.size else math.inf
        feasible = (lo - 1e-12) <= mu <= (hi + 1e-12)
    return TiltSolution(mu=float(mu), jumps=jumps, feasible=bool(feasible),
                        residual_sum=r_sum, residual_tilt=r_tilt)


def solve_mu(psi, data) -> TiltSolution:
    """Root-find the multiplier for given psi; infeasibility is a result,
    not an exception."""
    arrs = as_arrays(data)
    w = arrs.w
    n = arrs.n
    e = tilt(arrs.s, psi)
    d = e - 1.0
    if np.max(np.abs(d)) < 1e-10:
        # degenerate tilt: empirical weights are already the solution
        return _solution(0.0, w, n, d)
    dmax = d.max()
    dmin = d.min()
    if dmax <= 0.0 or dmin >= 0.0:
        # g keeps one sign on the whole feasible interval: no root
        return _solution(0.0, w, n, d, feasible_extra=False)

    def g(mu):
        # pairwise numpy sum: called ~60x per root-find, fsum is too slow here
        return float(np.sum(w * d / (1.0 + mu * d)))

    lo = -1.0 / dmax
    hi = -1.0 / dmin
    pad = 1e-12 * (hi - lo)
    lo_in, hi_in = lo + pad, hi - pad
    g_lo, g_hi = g(lo_in), g(hi_in)
    if not (g_lo > 0.0 > g_hi):
        return _solution(0.0, w, n, d, feasible_extra=False)
    mu = brentq(g, lo_in, hi_in, xtol=1e-15, rtol=8.9e-16, maxiter=200)
    return _solution(mu, w, n, d)


def _profile_pieces(arrs, theta, spec):
    """Per-subject profile contributions and the tilt solution, or None."""
    sol = solve_mu(theta.psi, arrs)
    if not sol.feasible:
        return None, sol
    e = tilt(arrs.s, theta.psi)
    mu_term = -np.log1p(sol.mu * (e - 1.0))
    contrib = arrs.w * (mu_term + _case_terms(arrs, theta, spec))
    return contrib, sol


def profile_log_likelihood(data, theta: Theta, spec: ModelSpec) -> float:
    """Profile objective over (beta, eta, psi); -inf when psi makes the
    jump constraints infeasible."""
    if not spec.extended:
        raise ValueError("profile likelihood requires an extended spec")
    check_theta_spec(theta, spec)
    arrs = as_arrays(data)
    contrib, _ = _profile_pieces(arrs, theta, spec)
    if contrib is None or np.isneginf(contrib).any():
        return -math.inf
    return math.fsum(contrib)


class _ProfileObjective:
    """Negated profile likelihood with rejection counting and FD gradient."""

    def __init__(self, arrs, template, spec):
        self.arrs = arrs
        self.template = template
        self.spec = spec
        self.rejections = 0
        self.max_residuals = [0.0, 0.0]

    def value(self, free):
        theta = self.template.with_free(free)
        try:
            contrib, sol = _profile_pieces(self.arrs, theta, self.spec)
        except (OverflowError, FloatingPointError):
            self.rejections += 1
            return math.inf
        if contrib is None or np.isneginf(contrib).any() or not np.isfinite(contrib).all():
            self.rejections += 1
            return math.inf
        self.max_residuals[0] = max(self.max_residuals[0], abs(sol.residual_sum))
        self.max_residuals[1] = max(self.max_residuals[1], abs(sol.residual_tilt))
        return -math.fsum(contrib)

    def contributions(self, free):
        theta = self.template.with_free(free)
        contrib, _ = _profile_pieces(self.arrs, theta, self.spec)
        if contrib is None:
            raise FloatingPointError("profile contributions requested at infeasible psi")
        return contrib

    def gradient(self, free, step=1e-5):
        """Central differences of the (positive) profile objective."""
        k = free.size
        grad = np.empty(k)
        for j in range(k):
            h = step * (1.0 + abs(free[j]))
            up = free.copy()
            up[j] += h
            dn = free.copy()
            dn[j] -= h
            f_up = -self.value(up)
            f_dn = -self.value(dn)
            if math.isfinite(f_up) and math.isfinite(f_dn):
                grad[j] = (f_up - f_dn) / (2.0 * h)
            elif math.isfinite(f_up):
                grad[j] = (f_up + self.value(free)) / h
            elif math.isfinite(f_dn):
                grad[j] = (-self.value(free) - f_dn) / h
            else:
                grad[j] = 0.0  # infeasible on both sides: no usable slope
        return grad

    def contribution_jacobian(self, free, step=1e-5):
        """Per-subject profile scores m_i by central differences; (n, k)."""
        k = free.size
        m = np.empty((self.arrs.n, k))
        for j in range(k):
            h = step * (1.0 + abs(free[j]))
            up = free.copy()
            up[j] += h
            dn = free.copy()
            dn[j] -= h
            m[:, j] = (self.contributions(up) - self.contributions(dn)) / (2.0 * h)
        return m

    def hessian(self, free, step=1e-4):
        """Central differences of the FD gradient, symmetrized; (k, k)."""
        k = free.size
        hess = np.empty((k, k))
        for j in range(k):
            h = step * (1.0 + abs(free[j]))
            up = free.copy()
            up[j] += h
            dn = free.copy()
            dn[j] -= h
            hess[:, j] = (self.gradient(up) - self.gradient(dn)) / (2.0 * h)
        return 0.5 * (hess + hess.T)

    def newton_polish(self, free, ll, max_steps=5):
        """Push the gradient below tolerance once BFGS stalls on value noise.

        The line-search-free Newton iteration only needs the FD gradient
        (noise ~1e-8), so it converges past the ~1e-5 floor imposed by
        comparing near-equal objective values.
        """
        x = free.copy()
        for _ in range(max_steps):
            g = self.gradient(x)
            if np.max(np.abs(g)) < SCORE_TOL:
                break
            try:
                step_vec = np.linalg.solve(self.hessian(x), -g)
            except np.linalg.LinAlgError:
                break
            scale = 1.0
            improved = False
            for _ in range(8):
                cand = x + scale * step_vec
                ll_cand = -self.value(cand)
                # tolerate value-noise-level regressions: the gradient is
                # the convergence witness here, not the objective
                if math.isfinite(ll_cand) and ll_cand >= ll - 1e-8:
                    x, ll = cand, ll_cand
                    improved = True
                    break
                scale *= 0.5
            if not improved:
                break
        return x, ll


def fit_extended(data, spec: ModelSpec, init: Theta | None = None, *,
                 enforce_weight_sum: bool = True) -> FitResult:
    """Maximize the profile likelihood over (beta, free eta, psi0, psi1).

    Sandwich covariance is built from finite-difference per-subject
    profile scores.  The result carries the multiplier at the optimum,
    the worst constraint residuals seen over accepted evaluations, and
    the number of infeasible-psi rejections.
    """
    if not spec.extended:
        raise ValueError("fit_extended requires spec.extended")
    arrs = as_arrays(data)
    n = arrs.n
    if enforce_weight_sum:
        _check_weights(arrs, n)
    template = init if init is not None else initial_theta(spec)
    obj = _ProfileObjective(arrs, template, spec)
    x0 = template.free_values()

    # psi = 0 sits on the boundary of the feasible cone (the tilt must
    # cross 1 inside the observed s-range), so start a small step inside
    # each of the two sign-compatible cones and keep the better optimum.
    med_s = float(np.median(arrs.s))
    names = spec.free_names()
    i0, i1 = names.index("psi0"), names.index("psi1")
    delta = 0.1
    starts = []
    if init is not None and (init.psi is not None and np.any(init.psi != 0.0)):
        starts.append(x0)
    for sign in (+1.0, -1.0):
        cone = x0.copy()
        cone[i0] = sign * delta
        cone[i1] = -sign * delta / med_s
        starts.append(cone)

    candidates = []
    total_iter = 0

    def run_from(start):
        nonlocal total_iter
        res = minimize(
            obj.value, start,
            jac=lambda z: -obj.gradient(z),
            method="BFGS",
            options={"gtol": SCORE_TOL, "maxiter": MAX_ITER},
        )
        total_iter += res.nit
        ll = -obj.value(res.x)
        if math.isfinite(ll):
            g = obj.gradient(res.x)
            candidates.append((res.x.copy(), ll, float(np.max(np.abs(g)))))

    for start in starts:
        run_from(start)
    # BFGS stalls once objective differences fall below value noise;
    # Newton steps on the FD gradient finish the last decades
    if candidates:
        lead_x, lead_ll, lead_sup = select_candidate(candidates)
        if lead_sup >= SCORE_TOL:
            x_pol, ll_pol = obj.newton_polish(lead_x, lead_ll)
            g = obj.gradient(x_pol)
            candidates.append((x_pol, ll_pol, float(np.max(np.abs(g)))))
    x_hat, ll, sup = select_candidate(candidates) if candidates else (x0, -math.inf, math.inf)
    theta_hat = template.with_free(x_hat)
    converged = sup < SCORE_TOL
    if converged and _flat_directions(lambda v: -obj.value(v), x_hat, ll):
        converged = False

    k = x_hat.size
    bic = -2.0 * ll + k * math.log(n)
    sol = solve_mu(theta_hat.psi, arrs)
    try:
        m = obj.contribution_jacobian(x_hat)
        c_mat = (m.T @ m) / n
        info = np.empty((k, k))
        for j in range(k):
            h = 1e-4 * (1.0 + abs(x_hat[j]))
            up = x_hat.copy()
            up[j] += h
            dn = x_hat.copy()
            dn[j] -= h
            info[:, j] = (obj.gradient(up) - obj.gradient(dn)) / (2.0 * h)
        info = 0.5 * (info + info.T) / n
        svals = np.linalg.svd(info, compute_uv=False)
        if svals[-1] <= 1e-10 * max(svals[0], 1.0):
            raise np.linalg.LinAlgError("singular profile information")
        inv_info = np.linalg.solve(info, np.eye(k))
        cov = inv_info @ c_mat @ inv_info.T / n
        cov = 0.5 * (cov + cov.T)
    except (np.linalg.LinAlgError, FloatingPointError):
        cov = np.full((k, k), np.nan)
        converged = False
    return FitResult(
        theta_hat=theta_hat, covariance=cov, log_pl=ll, bic=bic,
        n_subjects=n, converged=converged, iterations=total_iter,
        spec=spec, free_names=spec.free_names(), score_sup_norm=sup,
        mu=sol.mu if sol.feasible else None,
        constraint_residuals=(obj.max_residuals[0], obj.max_residuals[1]),
        infeasible_rejections=obj.rejections,
    )
