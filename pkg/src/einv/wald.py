"""Wald test of effect invariance under a linear CATE model.

Working model for environment ``e`` and treatment ``t``::

    (alpha + A_e) . (1, x)  +  (v_t - q(x^S)) (beta + B_e) . (1, x^S)

fitted by weighted least squares with weights ``q(t | x^S) / pi_tr(t | x)``,
where ``q`` is a fixed reference policy depending on ``x^S`` only. Centering
the treatment by ``q`` and reweighting keeps the treatment-effect block
consistent when the main effect is misspecified. ``H0: B = 0`` is tested with
a sandwich covariance.

Large inverse-propensity weights give some rows high leverage, and the plain
(``hc0``) sandwich then understates the variance at moderate n. The default
``hc3`` meat rescales each score by ``1 / (1 - h_i)`` with ``h_i`` the
weighted leverage; ``hc0`` is available for the textbook estimator.

Environments are reference coded (no ``A_e``/``B_e`` for the first label), so
the statistic has ``(l - 1)(1 + |S|)`` degrees of freedom.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, as_subset, project_subset
from .exceptions import MultiLevelTreatmentUnsupported, SingleEnvironment
from .policies import Policy, bernoulli
from .report import TestReport, decide
from .stats import chi_square_tail, quadratic_form, sandwich_covariance, weighted_least_squares

DEFAULT_Q = 0.5


@dataclass(frozen=True)
class WaldDesign:
    design: np.ndarray
    weights: np.ndarray
    centered_t: np.ndarray
    block: slice
    dof: int
    effect_block: slice


def _env_dummies(ds: Dataset) -> np.ndarray:
    """Indicator columns for every environment but the reference (first) one."""
    return (ds.env[:, None] == np.arange(1, ds.n_envs)[None, :]).astype(float)


def _row_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, :, None] * b[:, None, :]).reshape(len(a), -1)


def _reference_policy(tilde_pi: Policy | None, q: float) -> Policy:
    return bernoulli(q) if tilde_pi is None else tilde_pi


def centering_terms(ds: Dataset, subset, tilde_pi: Policy | None = None, q: float = DEFAULT_Q):
    """``(centered treatment, weights)`` for the reference policy ``tilde_pi``."""
    if ds.k != 2:
        raise MultiLevelTreatmentUnsupported("Wald test handles binary treatments only")
    tilde_pi = _reference_policy(tilde_pi, q)
    if not set(tilde_pi.subset) <= set(subset):
        raise ValueError("reference policy must depend on x^S only")
    p_obs = ds.require_propensity()
    ref = tilde_pi.probabilities(ds.x)
    centered = ds.t - ref[:, 1]
    weights = ref[np.arange(ds.n), ds.t] / p_obs
    return centered, weights


def build_wald_design(ds: Dataset, subset: Sequence[int], tilde_pi: Policy | None = None, q: float = DEFAULT_Q) -> WaldDesign:
    subset = as_subset(subset, ds.d)
    if ds.n_envs < 2:
        raise SingleEnvironment("the Wald test needs at least two environments")
    centered, weights = centering_terms(ds, subset, tilde_pi, q)
    x_full = np.column_stack([np.ones(ds.n), ds.x])
    x_s = np.column_stack([np.ones(ds.n), project_subset(ds, subset)])
    dummies = _env_dummies(ds)
    main = np.hstack([x_full, _row_kron(dummies, x_full)])
    effect = centered[:, None] * x_s
    interaction = centered[:, None] * _row_kron(dummies, x_s)
    design = np.hstack([main, effect, interaction])
    start = main.shape[1]
    stop = start + effect.shape[1]
    return WaldDesign(
        design=design,
        weights=weights,
        centered_t=centered,
        block=slice(stop, design.shape[1]),
        dof=(ds.n_envs - 1) * (1 + len(subset)),
        effect_block=slice(start, stop),
    )


HC_TYPES = ("hc0", "hc3")


def _fit_and_covariance(ds: Dataset, wd: WaldDesign, hc: str):
    if hc not in HC_TYPES:
        raise ValueError(f"hc must be one of {HC_TYPES}, got {hc!r}")
    X, w = wd.design, wd.weights
    fit = weighted_least_squares(X, ds.y, w)
    resid = fit.residuals
    if hc == "hc3":
        leverage = w * np.einsum("ij,jk,ik->i", X, fit.xtwx_inverse, X)
        resid = resid / np.maximum(1.0 - leverage, 1e-8)
    scores = (w * resid)[:, None] * X
    bread = (X * w[:, None]).T @ X / ds.n
    return fit, sandwich_covariance(scores, bread=bread)


def wald_einv_test(
    ds: Dataset,
    subset: Sequence[int],
    alpha: float = 0.05,
    tilde_pi: Policy | None = None,
    q: float = DEFAULT_Q,
    hc: str = "hc3",
) -> TestReport:
    """Test ``H0: S is effect-invariant`` across the environments of ``ds``.

    Parameters
    ----------
    ds : Dataset
        Binary-treatment data from at least two environments, with ``p_obs``.
    subset : sequence of int
        0-based covariate indices.
    alpha : float
        Level; the test rejects iff ``p_value < alpha``.
    tilde_pi : Policy, optional
        Reference policy reading ``x^S`` only. Defaults to ``bernoulli(q)``.
    hc : {"hc3", "hc0"}
        Sandwich meat.
    """
    subset = as_subset(subset, ds.d)
    wd = build_wald_design(ds, subset, tilde_pi, q)
    fit, cov = _fit_and_covariance(ds, wd, hc)
    b_hat = fit.coef[wd.block]
    quad, rank, used_pinv = quadratic_form(b_hat, cov[wd.block, wd.block])
    stat = ds.n * quad
    dof = rank if used_pinv else wd.dof
    p_value = chi_square_tail(stat, dof) if dof > 0 else 1.0
    diagnostics = {
        "n": ds.n,
        "n_per_env": ds.env_counts(),
        "condition": fit.condition,
        "nominal_dof": wd.dof,
        "pseudo_inverse": used_pinv,
        "reference_env": ds.env_labels[0],
        "max_weight": float(wd.weights.max()),
        "hc": hc,
    }
    if ds.propensity_source != "given":
        diagnostics["propensity_estimated"] = "behaviour propensities were fitted; covariance ignores that error"
    return TestReport(subset, float(stat), int(dof), float(p_value), decide(p_value, alpha), alpha, "wald", diagnostics)


def wald_effect_covariance(ds: Dataset, subset: Sequence[int], tilde_pi: Policy | None = None, q: float = DEFAULT_Q, hc: str = "hc3"):
    """``(B_hat, Var(B_hat))`` with the variance already divided by ``n``."""
    wd = build_wald_design(ds, as_subset(subset, ds.d), tilde_pi, q)
    fit, cov = _fit_and_covariance(ds, wd, hc)
    return fit.coef[wd.block], cov[wd.block, wd.block] / ds.n
