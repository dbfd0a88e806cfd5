"""Scenario generators, AUC, and the Monte-Carlo replicate harness.

Scenarios
---------
S1  single standard-normal covariate; time gaps from one Gamma law,
    independent of everything else; test results from the two-expit
    model with deterministic cells.
S2  two covariates from a bivariate normal; the intercept is solved per
    draw so the recent fraction hits a target; adds a third equal-size
    split (a contingency-table arm for external consumers).
S5  S1 plus reporting error injected into the training half only:
    uniform jitter on the time gap and random flips of the reported
    test result.
S6  time gaps from two Gamma laws sharing a shape, conditional on the
    recency status; the implied density ratio is exactly the
    exponential tilt with psi0 = shape*log(rate1/rate0),
    psi1 = rate0 - rate1.
S7  S1 with the first covariate leaking into both test-result expits.

Each replicate derives its RNG stream from the config seed via
SeedSequence.spawn, so results are bit-identical regardless of how many
workers execute them.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.stats import rankdata

from .estimation import fit
from .glm import fit_weighted_logistic
from .model import ModelSpec, Subject, as_arrays, logistic
from .prediction import _type2_vector, recency_rate

__all__ = [
    "ScenarioConfig",
    "GeneratedData",
    "default_config",
    "generate",
    "auc",
    "run_replicates",
    "ParamStats",
    "ReplicateSummary",
    "summary_to_dict",
    "write_replicates_csv",
]

SCENARIOS = ("S1", "S2", "S5", "S6", "S7")
S_FLOOR = 1.0 / 365.0   # jittered gaps are clamped one day short of the interview


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a scenario needs to be regenerated exactly."""

    scenario: str
    n_total: int = 2000
    beta_true: tuple[float, ...] = (0.95, -0.53)
    eta_true: tuple[float, float, float, float] = (7.0, -0.62, -7.0, -5.71)
    s_gamma: tuple[float, ...] = (0.60, 0.19)   # (shape, rate); S6: (shape, rate0, rate1)
    cov_mean: tuple[float, float] | None = None         # S2
    cov_cov: tuple[tuple[float, float], ...] | None = None
    target_mean_y: float | None = None                  # S2: solve intercept for this
    noise: tuple[float, float] = (0.0, 0.0)             # (s jitter half-width, z flip rate)
    odn_in_z_coeff: float = 0.0                         # S7
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.n_total % 2 != 0:
            raise ValueError("n_total must be even (half train, half test)")
        if self.scenario == "S2" and self.n_total % 3 != 0:
            raise ValueError("S2 splits into three equal groups; n_total must be divisible by 3")
        if not 0.0 <= self.noise[1] < 1.0:
            raise ValueError("z flip rate must be in [0, 1)")
        if any(g <= 0 for g in self.s_gamma):
            raise ValueError("gamma parameters must be positive")
        if self.scenario == "S6" and len(self.s_gamma) != 3:
            raise ValueError("S6 needs s_gamma = (shape, rate0, rate1)")

    @property
    def psi_true(self) -> tuple[float, float] | None:
        """Tilt implied by the two-Gamma construction (S6 only)."""
        if self.scenario != "S6":
            return None
        shape, r0, r1 = self.s_gamma
        return (shape * math.log(r1 / r0), r0 - r1)


def default_config(scenario: str, n_total: int | None = None, seed: int = 0,
                   **overrides) -> ScenarioConfig:
    """Canonical configs matching each scenario's protocol."""
    scenario = scenario.upper() if scenario.upper().startswith("S") else f"S{scenario}"
    base: dict = {"scenario": scenario, "seed": seed}
    if scenario == "S2":
        base.update(
            n_total=3000 if n_total is None else n_total,
            beta_true=(0.0, -0.19, -0.49),    # (solved intercept, logvl, odn)
            cov_mean=(3.5, 1.7),
            cov_cov=((4.0, -0.6), (-0.6, 1.2)),
            target_mean_y=0.5,
        )
    elif scenario == "S5":
        base.update(noise=(1.0 / 6.0, 0.02))
    elif scenario == "S6":
        base.update(s_gamma=(0.60, 0.12, 0.19))
    elif scenario == "S7":
        base.update(odn_in_z_coeff=0.5)
    if n_total is not None:
        base["n_total"] = n_total
    base.update(overrides)
    return ScenarioConfig(**base)


@dataclass
class GeneratedData:
    """Simulated train/test split plus the latent truth for evaluation."""

    train: list[Subject]
    y_train: np.ndarray
    test: list[Subject]
    y_test: np.ndarray
    contingency: list[Subject] | None = None
    y_contingency: np.ndarray | None = None
    solved_beta0: float | None = None

    @property
    def test_labeled_mask(self) -> np.ndarray:
        return np.array([sub.label.value != "unknown" for sub in self.test])

    @property
    def test_a(self) -> list[Subject]:
        mask = self.test_labeled_mask
        return [sub for sub, m in zip(self.test, mask) if m]

    @property
    def test_b(self) -> list[Subject]:
        mask = self.test_labeled_mask
        return [sub for sub, m in zip(self.test, mask) if not m]

    @property
    def y_test_a(self) -> np.ndarray:
        return self.y_test[self.test_labeled_mask]

    @property
    def y_test_b(self) -> np.ndarray:
        return self.y_test[~self.test_labeled_mask]

    @property
    def labeled_train_count(self) -> int:
        return sum(1 for sub in self.train if sub.label.value != "unknown")


def _draw_z(rng, y, s, q0, q1):
    """Test results: deterministic cells plus the two Bernoulli branches."""
    n = y.size
    z = np.empty(n, dtype=int)
    inside = s <= 1.0
    z[inside & (y == 0)] = 1
    z[~inside & (y == 1)] = 0
    m1 = inside & (y == 1)
    z[m1] = (rng.random(m1.sum()) < logistic(q1[m1])).astype(int)
    m0 = ~inside & (y == 0)
    z[m0] = (rng.random(m0.sum()) < logistic(q0[m0])).astype(int)
    return z


def _subjects(x, s, z):
    return [Subject(covariates=x[i], s=s[i], z=z[i], w=1.0) for i in range(s.size)]


def generate(config: ScenarioConfig, rng: np.random.Generator | None = None) -> GeneratedData:
    """Draw one dataset; equal sampling weights throughout."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n = config.n_total
    eta = np.asarray(config.eta_true)
    solved_beta0 = None

    if config.scenario == "S2":
        mean = np.asarray(config.cov_mean, dtype=float)
        cov = np.asarray(config.cov_cov, dtype=float)
        x = rng.multivariate_normal(mean, cov, size=n)
        slopes = np.asarray(config.beta_true[1:], dtype=float)
        lin = x @ slopes

        def mean_y(b0):
            return float(np.mean(logistic(b0 + lin))) - config.target_mean_y

        solved_beta0 = brentq(mean_y, -30.0, 30.0, xtol=1e-12)
        beta = np.concatenate([[solved_beta0], slopes])
    else:
        x = rng.standard_normal((n, 1))
        beta = np.asarray(config.beta_true, dtype=float)

    pi = logistic(beta[0] + x @ beta[1:])
    y = (rng.random(n) < pi).astype(int)

    shape = config.s_gamma[0]
    if config.scenario == "S6":
        _, r0, r1 = config.s_gamma
        rates = np.where(y == 1, r1, r0)
        s = rng.gamma(shape, 1.0 / rates)
    else:
        rate = config.s_gamma[1]
        s = rng.gamma(shape, 1.0 / rate, size=n)

    q0 = eta[0] + eta[1] * (s - 1.0)
    q1 = eta[2] + eta[3] * (s - 1.0)
    if config.odn_in_z_coeff:
        q0 = q0 + config.odn_in_z_coeff * x[:, 0]
        q1 = q1 + config.odn_in_z_coeff * x[:, 0]
    z = _draw_z(rng, y, s, q0, q1)

    perm = rng.permutation(n)
    if config.scenario == "S2":
        third = n // 3
        idx_ct, idx_tr, idx_te = perm[:third], perm[third:2 * third], perm[2 * third:]
    else:
        half = n // 2
        idx_ct, idx_tr, idx_te = None, perm[:half], perm[half:]

    s_tr, z_tr = s[idx_tr].copy(), z[idx_tr].copy()
    if config.scenario == "S5":
        jitter, flip_rate = config.noise
        if jitter > 0:
            s_tr = np.maximum(s_tr + rng.uniform(-jitter, jitter, size=s_tr.size), S_FLOOR)
        if flip_rate > 0:
            flips = rng.random(z_tr.size) < flip_rate
            z_tr[flips] = 1 - z_tr[flips]

    data = GeneratedData(
        train=_subjects(x[idx_tr], s_tr, z_tr),
        y_train=y[idx_tr],
        test=_subjects(x[idx_te], s[idx_te], z[idx_te]),
        y_test=y[idx_te],
        solved_beta0=solved_beta0,
    )
    if idx_ct is not None:
        data.contingency = _subjects(x[idx_ct], s[idx_ct], z[idx_ct])
        data.y_contingency = y[idx_ct]
    return data


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with midrank tie handling."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n1 = int((labels == 1).sum())
    n0 = int((labels == 0).sum())
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


@dataclass
class ParamStats:
    truth: float
    mean_estimate: float
    mean_se: float
    sd: float
    coverage95: float
    n: int

    @property
    def mc_se(self) -> float:
        return self.sd / math.sqrt(self.n) if self.n > 1 else math.nan


@dataclass
class ReplicateSummary:
    scenario: str
    n_reps: int
    n_converged: int
    params: dict[str, ParamStats]
    lr_params: dict[str, ParamStats]
    auc_type1: float
    auc_type2: float
    auc_logistic: float
    e_y_mean: float
    e_y_sd: float
    lr_e_y_mean: float
    lr_e_y_sd: float
    labeled_train_mean: float
    replicates: list[dict] = field(default_factory=list)


def _truth_map(config: ScenarioConfig, spec: ModelSpec, solved_beta0=None) -> dict[str, float]:
    beta = list(config.beta_true)
    if solved_beta0 is not None:
        beta[0] = solved_beta0
    names = ["beta0"] + [f"beta_{c}" for c in spec.covariate_names]
    truth = dict(zip(names, beta))
    for name, val in zip(("eta00", "eta01", "eta10", "eta11"), config.eta_true):
        truth[name] = val
    truth["eta_x"] = config.odn_in_z_coeff
    psi = config.psi_true
    truth["psi0"] = psi[0] if psi else 0.0
    truth["psi1"] = psi[1] if psi else 0.0
    return truth


def _one_replicate(args):
    config, spec, rep, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    gen = generate(config, rng)
    truth = _truth_map(config, spec, gen.solved_beta0)

    result = fit(gen.train, spec)
    row = {"rep": rep, "converged": bool(result.converged),
           "labeled_train": gen.labeled_train_count}
    est = result.estimates()
    ses = dict(zip(result.free_names, result.se))
    row["params"] = {
        name: {
            "estimate": est[name],
            "se": float(ses[name]),
            "truth": truth[name],
            "covered": bool(abs(est[name] - truth[name]) <= 1.96 * ses[name]),
        }
        for name in result.free_names
    }
    if spec.extended:
        row["constraint_residuals"] = result.constraint_residuals
        row["infeasible_rejections"] = result.infeasible_rejections

    # comparator: plain logistic regression on the label-determined train subset
    labeled = [(sub, 1 if sub.label.value == "recent" else 0)
               for sub in gen.train if sub.label.value != "unknown"]
    lr_row = {}
    lr_e_y = math.nan
    auc_lr = math.nan
    if labeled:
        xs = np.stack([sub.covariates for sub, _ in labeled])
        ys = np.array([lab for _, lab in labeled])
        ws = np.array([sub.w for sub, _ in labeled])
        try:
            lr = fit_weighted_logistic(xs, ys, ws)
            lr_names = ["beta0"] + [f"beta_{c}" for c in spec.covariate_names]
            for j, name in enumerate(lr_names):
                lr_row[name] = {
                    "estimate": float(lr.beta[j]),
                    "se": float(lr.se[j]),
                    "truth": truth[name],
                    "covered": bool(abs(lr.beta[j] - truth[name]) <= 1.96 * lr.se[j]),
                }
            x_test = np.stack([sub.covariates for sub in gen.test])
            auc_lr = auc(lr.predict(x_test), gen.y_test)
            x_train = np.stack([sub.covariates for sub in gen.train])
            w_train = np.array([sub.w for sub in gen.train])
            lr_e_y = float(np.average(lr.predict(x_train), weights=w_train))
        except (ValueError, np.linalg.LinAlgError):
            pass
    row["lr_params"] = lr_row

    theta = result.theta_hat
    x_test = np.stack([sub.covariates for sub in gen.test])
    scores1 = logistic(theta.beta[0] + x_test @ theta.beta[1:])
    row["auc1"] = auc(scores1, gen.y_test)
    test_b = gen.test_b
    y_b = gen.y_test_b
    if len(test_b) and 0 < y_b.sum() < y_b.size:
        t2 = _type2_vector(as_arrays(test_b), theta, spec)
        row["auc2"] = auc(t2, y_b)
    else:
        row["auc2"] = math.nan
    row["auc_lr"] = auc_lr
    row["e_y"] = recency_rate(gen.train, theta, spec)
    row["lr_e_y"] = lr_e_y
    return row


def _aggregate(param_rows: list[dict], names: Sequence[str]) -> dict[str, ParamStats]:
    out = {}
    for name in names:
        vals = np.array([r[name]["estimate"] for r in param_rows if name in r])
        ses = np.array([r[name]["se"] for r in param_rows if name in r])
        cov = np.array([r[name]["covered"] for r in param_rows if name in r])
        if vals.size == 0:
            continue
        out[name] = ParamStats(
            truth=float(next(r[name]["truth"] for r in param_rows if name in r)),
            mean_estimate=float(vals.mean()),
            mean_se=float(ses.mean()),
            sd=float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            coverage95=float(cov.mean()),
            n=int(vals.size),
        )
    return out


def run_replicates(config: ScenarioConfig, n_reps: int, spec: ModelSpec,
                   n_jobs: int | None = None) -> ReplicateSummary:
    """Generate/fit/evaluate ``n_reps`` independent replicates.

    Non-converged replicates are counted and excluded from every
    estimate aggregate.  ``n_jobs`` defaults to the RECENCY_THREADS
    environment variable (1 = sequential).
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    if n_jobs is None:
        n_jobs = int(os.environ.get("RECENCY_THREADS", "1"))
    seeds = np.random.SeedSequence(config.seed).spawn(n_reps)
    tasks = [(config, spec, r, seeds[r]) for r in range(n_reps)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(_one_replicate, tasks, chunksize=max(1, n_reps // (4 * n_jobs))))
    else:
        rows = [_one_replicate(t) for t in tasks]

    ok = [r for r in rows if r["converged"]]
    params = _aggregate([r["params"] for r in ok], spec.free_names())
    lr_names = ["beta0"] + [f"beta_{c}" for c in spec.covariate_names]
    lr_params = _aggregate([r["lr_params"] for r in ok if r["lr_params"]], lr_names)

    def nanmean(key):
        vals = np.array([r[key] for r in ok], dtype=float)
        vals = vals[np.isfinite(vals)]
        return float(vals.mean()) if vals.size else math.nan

    def nansd(key):
        vals = np.array([r[key] for r in ok], dtype=float)
        vals = vals[np.isfinite(vals)]
        return float(vals.std(ddof=1)) if vals.size > 1 else math.nan

    return ReplicateSummary(
        scenario=config.scenario,
        n_reps=n_reps,
        n_converged=len(ok),
        params=params,
        lr_params=lr_params,
        auc_type1=nanmean("auc1"),
        auc_type2=nanmean("auc2"),
        auc_logistic=nanmean("auc_lr"),
        e_y_mean=nanmean("e_y"),
        e_y_sd=nansd("e_y"),
        lr_e_y_mean=nanmean("lr_e_y"),
        lr_e_y_sd=nansd("lr_e_y"),
        labeled_train_mean=float(np.mean([r["labeled_train"] for r in rows])),
        replicates=rows,
    )


def summary_to_dict(summary: ReplicateSummary) -> dict:
    """JSON-ready view of a ReplicateSummary (replicate rows omitted)."""

    def stats_block(d):
        return {
            name: {
                "truth": ps.truth, "mean_estimate": ps.mean_estimate,
                "mean_se": ps.mean_se, "sd": ps.sd,
                "coverage95": ps.coverage95, "n": ps.n,
            }
            for name, ps in d.items()
        }

    return {
        "scenario": summary.scenario,
        "n_reps": summary.n_reps,
        "n_converged": summary.n_converged,
        "params": stats_block(summary.params),
        "lr_params": stats_block(summary.lr_params),
        "auc_type1": summary.auc_type1,
        "auc_type2": summary.auc_type2,
        "auc_logistic": summary.auc_logistic,
        "e_y_mean": summary.e_y_mean,
        "e_y_sd": summary.e_y_sd,
        "lr_e_y_mean": summary.lr_e_y_mean,
        "lr_e_y_sd": summary.lr_e_y_sd,
        "labeled_train_mean": summary.labeled_train_mean,
    }


def write_replicates_csv(path, summary: ReplicateSummary) -> None:
    """Long-format per-replicate rows: one line per (replicate, parameter)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rep", "param", "estimate", "se", "covered",
                         "auc1", "auc2", "e_y", "converged"])
        for row in summary.replicates:
            for name, cell in row["params"].items():
                writer.writerow([
                    row["rep"], name, repr(cell["estimate"]), repr(cell["se"]),
                    int(cell["covered"]), repr(row["auc1"]), repr(row["auc2"]),
                    repr(row["e_y"]), int(row["converged"]),
                ])
