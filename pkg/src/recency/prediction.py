"""Recent-infection risk predictions, recency rate, and incidence.

Type-1 risk uses biomarkers alone; Type-2 risk folds in the self-report
testing history, which pins the label exactly for two of the four (s, z)
cells and has a closed Bayes form in the other two.  The incidence
formula converts a recency rate into an annual incidence given externally
supplied prevalence and treatment-coverage inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ModelSpec,
    Subject,
    Theta,
    as_arrays,
    check_theta_spec,
    derive_label,
    pi_recent,
)

__all__ = [
    "RiskPair",
    "type1_risk",
    "type2_risk",
    "risk_pairs",
    "recency_rate",
    "incidence",
    "rita_classify",
    "export_predictions",
]


@dataclass(frozen=True)
class RiskPair:
    type1: float
    type2: float | None


def type1_risk(subject: Subject, theta_hat: Theta) -> float:
    """P(recent | covariates) at the fitted coefficients."""
    return pi_recent(subject.covariates, theta_hat.beta)


def _type2_vector(arrs, theta: Theta, spec: ModelSpec) -> np.ndarray:
    lb = theta.beta[0] + arrs.x @ theta.beta[1:]
    log_pi = -np.logaddexp(0.0, -lb)
    log_1m_pi = -np.logaddexp(0.0, lb)
    q0 = theta.eta[0] + theta.eta[1] * (arrs.s - 1.0)
    q1 = theta.eta[2] + theta.eta[3] * (arrs.s - 1.0)
    if spec is not None and spec.z_model_covariate is not None:
        xz = arrs.x[:, spec.z_model_covariate_index]
        q0 = q0 + theta.eta_x * xz
        q1 = q1 + theta.eta_x * xz
    log_p1 = -np.logaddexp(0.0, -q1)
    if spec is not None and spec.p0_identically_one:
        log_1m_p0 = np.full_like(q0, -np.inf)
    else:
        log_1m_p0 = -np.logaddexp(0.0, q0)
    if theta.psi is not None:
        tilt_exp = theta.psi[0] + theta.psi[1] * arrs.s
    else:
        tilt_exp = np.zeros_like(arrs.s)

    inside = arrs.recent_window
    pos = arrs.z == 1
    out = np.empty(arrs.n)
    out[inside & ~pos] = 1.0   # label-determined: recent
    out[~inside & pos] = 0.0   # label-determined: long-term
    m3 = inside & pos
    log_num3 = log_pi[m3] + tilt_exp[m3] + log_p1[m3]
    out[m3] = np.exp(log_num3 - np.logaddexp(log_1m_pi[m3], log_num3))
    m4 = ~inside & ~pos
    log_num4 = log_pi[m4] + tilt_exp[m4]
    out[m4] = np.exp(log_num4 - np.logaddexp(log_1m_pi[m4] + log_1m_p0[m4], log_num4))
    return out


def type2_risk(subject: Subject, theta_hat: Theta, spec: ModelSpec | None = None) -> float:
    """P(recent | s, z, covariates).

    Exactly 1 for (s <= 1, z = 0) and exactly 0 for (s > 1, z = 1); the
    unknown cells use the closed Bayes forms, which under p0 == 1 reduce
    to 1 in the (s > 1, z = 0) cell.  A fitted tilt (psi present) enters
    the recent-infection branch of both forms.
    """
    if spec is not None:
        check_theta_spec(theta_hat, spec)
    arrs = as_arrays([subject])
    return float(_type2_vector(arrs, theta_hat, spec)[0])


def risk_pairs(data, theta_hat: Theta, spec: ModelSpec | None = None) -> list[RiskPair]:
    arrs = as_arrays(data)
    t1 = pi_recent(arrs.x, theta_hat.beta)
    t2 = _type2_vector(arrs, theta_hat, spec)
    return [RiskPair(type1=float(a), type2=float(b)) for a, b in zip(np.atleast_1d(t1), t2)]


def recency_rate(data, theta_hat: Theta, spec: ModelSpec | None = None) -> float:
    """Weighted average Type-2 risk over every subject in the sample."""
    arrs = as_arrays(data)
    t2 = _type2_vector(arrs, theta_hat, spec)
    return math.fsum(arrs.w * t2) / math.fsum(arrs.w)


def incidence(p_hiv: float, p_art: float, e_y: float) -> float:
    """Annual incidence from prevalence, ART coverage, and recency rate."""
    for name, val in (("p_hiv", p_hiv), ("p_art", p_art), ("e_y", e_y)):
        if not 0.0 <= val <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {val}")
    num = p_hiv * (1.0 - p_art) * e_y
    den = (1.0 - p_hiv) + num
    if den == 0.0:
        raise ZeroDivisionError("incidence undefined: prevalence 1 with no recent infections")
    return num / den


def rita_classify(odn: float, vl: float) -> int:
    """Baseline rule: recent iff ODn <= 1.5 and viral load >= 1000.

    Takes raw (unstandardized) assay values; comparator only.
    """
    return int(odn <= 1.5 and vl >= 1000.0)


def export_predictions(path, data, theta_hat: Theta, spec: ModelSpec | None = None,
                       ids=None) -> None:
    """Write the prediction CSV: id, s, z, label, type1, type2."""
    subjects = list(data)
    arrs = as_arrays(subjects)
    t1 = np.atleast_1d(pi_recent(arrs.x, theta_hat.beta))
    t2 = _type2_vector(arrs, theta_hat, spec)
    if ids is None:
        ids = [str(i) for i in range(arrs.n)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "s", "z", "label", "type1", "type2"])
        for i, sub in enumerate(subjects):
            label = derive_label(sub.s, sub.z)
            writer.writerow([
                ids[i], repr(float(sub.s)), sub.z, label.value,
                repr(float(t1[i])), repr(float(t2[i])),
            ])
