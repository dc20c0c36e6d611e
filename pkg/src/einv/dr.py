"""Doubly robust e-invariance test.

The data are split in two halves, stratified by environment. Outcome models
``mu_e(x, t)`` (one per environment) and a propensity model ``pi(1 | x)`` are
fit on the first half. Pseudo-outcomes::

    O = mu_e(x, 1) - mu_e(x, 0)
        + 1{t=1} (y - mu_e(x, 1)) / pi(1|x) - 1{t=0} (y - mu_e(x, 0)) / (1 - pi(1|x))

are formed on the second half. ``E[O | X^S, E=e]`` equals the CATE given
``X^S`` when either nuisance is correct, so e-invariance of ``S`` reduces to
``E[O | X^S, E] = E[O | X^S]``. That is tested with a generalised covariance
measure (GCM) between the residuals of ``O`` on ``X^S`` and the residuals of
reference-coded environment dummies on ``X^S``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .data import PROPENSITY_CLIP, Dataset, as_subset, project_subset
from .exceptions import EnvironmentTooSmall, MultiLevelTreatmentUnsupported, PropensityUnderflow, SingleEnvironment
from .policies import Policy, as_generator
from .report import TestReport, decide
from .stats import chi_square_tail, knn_predict, logistic_fit, ols, quadratic_form, sigmoid

REGRESSORS = ("knn", "linear", "linear_knn")
GCM_REGRESSORS = ("knn", "linear")
PROPENSITIES = ("given", "logistic")


# -- outcome models ------------------------------------------------------------

class OutcomeModel:
    """``predict(env_labels, x, t)`` evaluates ``mu_e(x, t)`` row by row."""

    def predict(self, env_labels: np.ndarray, x: np.ndarray, t) -> np.ndarray:
        raise NotImplementedError


class _ArmRegressor:
    """One arm of one environment: ``linear`` (OLS), ``knn``, or ``linear_knn``
    (OLS plus a kNN fit of its residuals)."""

    def __init__(self, kind: str, x: np.ndarray, y: np.ndarray, k: int | None):
        self.kind = kind
        self.coef = None
        if kind in ("linear", "linear_knn"):
            self.coef = ols(np.column_stack([np.ones(len(y)), x]), y).coef
            y = y - self.coef[0] - x @ self.coef[1:]
        if kind in ("knn", "linear_knn"):
            self.x, self.y = x, y
            self.k = None if k is None else min(k, len(y))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(len(x))
        if self.coef is not None:
            out += self.coef[0] + x @ self.coef[1:]
        if self.kind != "linear":
            out += knn_predict(self.x, self.y, x, self.k)
        return out


class PerEnvOutcome(OutcomeModel):
    """Separate regressions of ``Y`` on ``X`` for every (environment, arm)."""

    def __init__(self, regressors: dict[str, dict[int, _ArmRegressor]], kind: str):
        self.regressors = regressors
        self.kind = kind

    def predict(self, env_labels, x, t):
        env_labels = np.asarray(env_labels, dtype=object)
        t = np.broadcast_to(np.asarray(t), env_labels.shape)
        out = np.empty(len(env_labels))
        for lab, arms in self.regressors.items():
            for arm, reg in arms.items():
                mask = (env_labels == lab) & (t == arm)
                if mask.any():
                    out[mask] = reg(x[mask])
        return out


class ConstantOutcome(OutcomeModel):
    def __init__(self, value: float = 0.0):
        self.value = float(value)

    def predict(self, env_labels, x, t):
        return np.full(len(x), self.value)


class CallableOutcome(OutcomeModel):
    """Wraps ``fn(env_label, x, t_array) -> values`` (e.g. a simulator oracle)."""

    def __init__(self, fn: Callable):
        self.fn = fn

    def predict(self, env_labels, x, t):
        env_labels = np.asarray(env_labels, dtype=object)
        t = np.broadcast_to(np.asarray(t), env_labels.shape)
        out = np.empty(len(env_labels))
        for lab in dict.fromkeys(env_labels.tolist()):
            mask = env_labels == lab
            out[mask] = self.fn(lab, x[mask], t[mask])
        return out


# -- propensity models ---------------------------------------------------------

class PropensityModel:
    """``treated(ds)`` returns ``pi(1 | x_i)`` for every row of ``ds``."""

    def treated(self, ds: Dataset) -> np.ndarray:
        raise NotImplementedError


class GivenPropensity(PropensityModel):
    """Reads the recorded behaviour probabilities."""

    def treated(self, ds):
        return ds.propensity_treated()


class LogisticPropensity(PropensityModel):
    def __init__(self, coef: np.ndarray):
        self.coef = np.asarray(coef, dtype=float)

    @classmethod
    def fit(cls, ds: Dataset) -> "LogisticPropensity":
        return cls(logistic_fit(np.column_stack([np.ones(ds.n), ds.x]), ds.t))

    def treated(self, ds):
        return sigmoid(self.coef[0] + ds.x @ self.coef[1:])


class ConstantPropensity(PropensityModel):
    def __init__(self, q: float):
        self.q = float(q)

    def treated(self, ds):
        return np.full(ds.n, self.q)


class PolicyPropensity(PropensityModel):
    """Exact propensities of a known behaviour policy."""

    def __init__(self, policy: Policy):
        self.policy = policy

    def treated(self, ds):
        return self.policy.probabilities(ds.x)[:, 1]


@dataclass
class NuisanceModels:
    mu: OutcomeModel
    pi_bar: PropensityModel
    clip: float = PROPENSITY_CLIP

    def propensity(self, ds: Dataset) -> np.ndarray:
        return np.clip(self.pi_bar.treated(ds), self.clip, 1.0 - self.clip)


def fit_nuisances(d1: Dataset, regressor: str = "linear_knn", propensity: str = "given", k: int | None = None) -> NuisanceModels:
    """Per-environment outcome regressions and a propensity model on ``d1``."""
    if regressor not in REGRESSORS:
        raise ValueError(f"regressor must be one of {REGRESSORS}")
    if propensity not in PROPENSITIES:
        raise ValueError(f"propensity must be one of {PROPENSITIES}")
    if d1.k != 2:
        raise MultiLevelTreatmentUnsupported("doubly robust pseudo-outcomes need a binary treatment")
    regs: dict[str, dict[int, _ArmRegressor]] = {}
    min_arm = d1.x.shape[1] + 1 if regressor != "knn" else 1
    for code, lab in enumerate(d1.env_labels):
        rows = d1.env == code
        if rows.sum() < 2 * d1.k:
            raise EnvironmentTooSmall(f"environment {lab!r} has {rows.sum()} rows, need {2 * d1.k}")
        regs[lab] = {}
        for arm in range(d1.k):
            sel = rows & (d1.t == arm)
            if sel.sum() < min_arm:
                raise EnvironmentTooSmall(f"environment {lab!r} has {sel.sum()} rows with t={arm}")
            regs[lab][arm] = _ArmRegressor(regressor, d1.x[sel], d1.y[sel], k)
    if propensity == "given":
        d1.require_propensity()
        pi_bar: PropensityModel = GivenPropensity()
    else:
        pi_bar = LogisticPropensity.fit(d1)
    return NuisanceModels(PerEnvOutcome(regs, regressor), pi_bar)


def pseudo_outcomes(d2: Dataset, nm: NuisanceModels) -> np.ndarray:
    """Doubly robust pseudo-outcomes for the rows of ``d2`` (baseline ``t=0``)."""
    if d2.k != 2:
        raise MultiLevelTreatmentUnsupported("doubly robust pseudo-outcomes need a binary treatment")
    labels = d2.env_names()
    mu1 = nm.mu.predict(labels, d2.x, 1)
    mu0 = nm.mu.predict(labels, d2.x, 0)
    pi1 = nm.propensity(d2)
    treated = d2.t == 1
    resid = np.where(treated, (d2.y - mu1) / pi1, -(d2.y - mu0) / (1.0 - pi1))
    out = mu1 - mu0 + resid
    if not np.isfinite(out).all():
        raise PropensityUnderflow("non-finite pseudo-outcome after clipping")
    return out


def stratified_split(ds: Dataset, seed, fraction: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Row indices of two parts; every environment is split ``fraction : 1 - fraction``."""
    rng = as_generator(seed)
    first, second = [], []
    for code in range(ds.n_envs):
        rows = rng.permutation(np.flatnonzero(ds.env == code))
        cut = int(np.floor(fraction * len(rows)))
        first.append(rows[:cut])
        second.append(rows[cut:])
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(second))


def crossfit_pseudo_outcomes(ds: Dataset, seed, regressor: str = "linear_knn", propensity: str = "given", k: int | None = None) -> np.ndarray:
    """Two-fold cross-fitted pseudo-outcomes for every row of ``ds``."""
    a, b = stratified_split(ds, seed)
    out = np.empty(ds.n)
    for fit_rows, eval_rows in ((a, b), (b, a)):
        nm = fit_nuisances(ds.take(fit_rows), regressor, propensity, k)
        out[eval_rows] = pseudo_outcomes(ds.take(eval_rows), nm)
    return out


# -- generalised covariance measure ----------------------------------------------

def _regress_on(xs: np.ndarray, targets: np.ndarray, regressor: str, k: int | None) -> np.ndarray:
    """In-sample fitted values of each target column given ``xs``."""
    if xs.shape[1] == 0:
        return np.broadcast_to(targets.mean(axis=0), targets.shape)
    if regressor == "linear":
        design = np.column_stack([np.ones(len(xs)), xs])
        coef = np.linalg.lstsq(design, targets, rcond=None)[0]
        return design @ coef
    return knn_predict(xs, targets, xs, k)


def gcm_test(
    o: np.ndarray,
    xs: np.ndarray,
    env: np.ndarray,
    alpha: float = 0.05,
    regressor: str = "knn",
    k: int | None = None,
    subset: Sequence[int] = (),
) -> TestReport:
    """GCM test of ``E[O | X^S, E] = E[O | X^S]``.

    ``env`` holds integer codes with 0 the reference environment. Residual
    products ``R_i = eps_i * delta_i`` (one column per non-reference
    environment) give ``n Rbar' Sigma^{-1} Rbar ~ chi2(l - 1)``.
    """
    if regressor not in GCM_REGRESSORS:
        raise ValueError(f"regressor must be one of {GCM_REGRESSORS}")
    o = np.asarray(o, dtype=float)
    n = len(o)
    xs = np.asarray(xs, dtype=float).reshape(n, -1)
    env = np.asarray(env)
    levels = np.unique(env)
    if len(levels) < 2:
        raise SingleEnvironment("the GCM test needs at least two environments")
    dummies = (env[:, None] == levels[None, 1:]).astype(float)
    fitted = _regress_on(xs, np.column_stack([o, dummies]), regressor, k)
    eps = o - fitted[:, 0]
    delta = dummies - fitted[:, 1:]
    r = eps[:, None] * delta
    rbar = r.mean(axis=0)
    sigma = np.atleast_2d(np.cov(r, rowvar=False, bias=True))
    quad, rank, used_pinv = quadratic_form(rbar, sigma)
    stat = n * quad
    dof = rank if used_pinv else len(levels) - 1
    p_value = chi_square_tail(stat, dof) if dof > 0 else 1.0
    diagnostics = {"n": n, "nominal_dof": len(levels) - 1, "pseudo_inverse": used_pinv, "gcm_regressor": regressor}
    return TestReport(tuple(subset), float(stat), int(dof), float(p_value), decide(p_value, alpha), alpha, "dr", diagnostics)


# -- full test -----------------------------------------------------------------

@dataclass(frozen=True)
class DRConfig:
    """Settings of the doubly robust test.

    ``regressor`` fits the outcome models, ``gcm_regressor`` the two
    regressions on ``X^S`` inside the GCM; ``k=None`` picks
    ``max(10, ceil(sqrt(m)))`` neighbours.
    """

    regressor: str = "linear_knn"
    propensity: str = "given"
    gcm_regressor: str = "knn"
    k: int | None = None
    split_fraction: float = 0.5

    def with_(self, **changes) -> "DRConfig":
        return replace(self, **changes)


def _prepare(ds: Dataset, split_seed, config: DRConfig):
    if ds.n_envs < 2:
        raise SingleEnvironment("the DR test needs at least two environments")
    idx1, idx2 = stratified_split(ds, split_seed, config.split_fraction)
    d1, d2 = ds.take(idx1), ds.take(idx2)
    nm = fit_nuisances(d1, config.regressor, config.propensity, config.k)
    return d1, d2, pseudo_outcomes(d2, nm)


def _report(d1, d2, o, subset, alpha, config, split_seed) -> TestReport:
    rep = gcm_test(o, project_subset(d2, subset), d2.env, alpha, config.gcm_regressor, config.k, subset)
    rep.diagnostics.update(
        n_fit=d1.n,
        n_test=d2.n,
        split_seed=split_seed,
        regressor=config.regressor,
        propensity=config.propensity,
    )
    return rep


def dr_einv_test(ds: Dataset, subset: Sequence[int], alpha: float = 0.05, split_seed=0, config: DRConfig | None = None) -> TestReport:
    """Doubly robust test of ``H0: S is effect-invariant``."""
    config = config or DRConfig()
    subset = as_subset(subset, ds.d)
    d1, d2, o = _prepare(ds, split_seed, config)
    return _report(d1, d2, o, subset, alpha, config, split_seed)


def dr_einv_tests(ds: Dataset, subsets: Sequence[Sequence[int]], alpha: float = 0.05, split_seed=0, config: DRConfig | None = None) -> list[TestReport]:
    """Several subsets on one split; pseudo-outcomes do not depend on ``S``."""
    config = config or DRConfig()
    subsets = [as_subset(s, ds.d) for s in subsets]
    d1, d2, o = _prepare(ds, split_seed, config)
    return [_report(d1, d2, o, s, alpha, config, split_seed) for s in subsets]
