"""Few-shot adaptation of a training CATE to a labelled test sample.

With ``N`` the covariates outside ``S``, the test-environment CATE is
modelled as::

    tau(x, 1) = tau_tr(x^S, 1) + theta . (x^N - q(x^S))

where ``q(x^S)`` is the linear regression of ``X^N`` on ``X^S`` under the
test covariate law. Subtracting ``q`` keeps ``E[tau(X, 1) | X^S]`` equal to
the training CATE, so only ``theta`` is learnt from the test labels. It is
the least-squares fit of cross-fitted doubly robust pseudo-outcomes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, as_subset, complement, project_subset
from .dr import crossfit_pseudo_outcomes
from .exceptions import DataError, RankDeficient, TestSampleTooSmall
from .stats import ols
from .zero_shot import CateModel


@dataclass(frozen=True)
class LinearConditional:
    """Least-squares map ``x^S -> E[X^N | X^S]``."""

    s: tuple[int, ...]
    n_idx: tuple[int, ...]
    intercepts: np.ndarray
    coefficients: np.ndarray  # |S| x |N|

    def predict(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float).reshape(-1, len(self.s)) if self.s else np.zeros((len(xs), 0))
        return self.intercepts + xs @ self.coefficients


def fit_xn_given_xs(x_test, subset: Sequence[int]) -> LinearConditional:
    """Regress every ``X^N`` column on ``(1, X^S)`` over the test covariates."""
    x_test = np.asarray(x_test, dtype=float)
    m, d = x_test.shape
    s = as_subset(subset, d)
    n_idx = complement(s, d)
    if m <= len(s) + 1:
        raise RankDeficient(f"{m} rows cannot identify a regression on {len(s)} covariates")
    design = np.column_stack([np.ones(m), x_test[:, list(s)]])
    coef = np.empty((len(s) + 1, len(n_idx)))
    for j, col in enumerate(n_idx):
        coef[:, j] = ols(design, x_test[:, col]).coef
    return LinearConditional(s, n_idx, coef[0].copy(), coef[1:].copy())


@dataclass
class FewShotModel:
    """Training CATE on ``S`` plus a learnt correction along ``X^N``."""

    s: tuple[int, ...]
    tau_tr: CateModel
    theta_n: np.ndarray  # (k - 1) x |N|
    qhat: LinearConditional
    d: int
    k: int = 2

    @property
    def subset(self) -> tuple[int, ...]:
        return tuple(range(self.d))

    def residual_features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x[:, list(self.qhat.n_idx)] - self.qhat.predict(x[:, list(self.s)])

    def effect(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        base = self.tau_tr.effect(x[:, list(self.s)])
        return base + self.residual_features(x) @ self.theta_n[0]

    def effects(self, x) -> np.ndarray:
        eff = self.effect(x)
        return np.column_stack([np.zeros(len(eff)), eff])

    def to_dict(self) -> dict:
        return {
            "s": list(self.s),
            "n": list(self.qhat.n_idx),
            "theta_n": self.theta_n.tolist(),
            "qhat": {"intercepts": self.qhat.intercepts.tolist(), "coefficients": self.qhat.coefficients.tolist()},
            "tau_tr": self.tau_tr.to_dict(),
        }


def _check_test_sample(d_test: Dataset, n_free: int) -> None:
    if d_test.k != 2:
        raise DataError("few-shot fitting handles binary treatments only")
    d_test.require_propensity()
    need = 4 * (n_free + 1)
    if d_test.n < need:
        raise TestSampleTooSmall(f"{d_test.n} test rows, need at least {need}")


def test_pseudo_outcomes(d_test: Dataset, seed=0, regressor: str = "linear") -> np.ndarray:
    """Two-fold cross-fitted pseudo-outcomes on the test sample."""
    return crossfit_pseudo_outcomes(d_test, seed, regressor, "given")


test_pseudo_outcomes.__test__ = False


def few_shot_fit(
    d_test: Dataset,
    tau_tr: CateModel,
    subset: Sequence[int],
    seed=0,
    regressor: str = "linear",
    pseudo: np.ndarray | None = None,
) -> FewShotModel:
    """Fit ``theta`` on a labelled test sample; ``tau_tr`` stays fixed.

    ``pseudo`` may pass precomputed pseudo-outcomes for ``d_test``.
    """
    s = as_subset(subset, d_test.d)
    n_idx = complement(s, d_test.d)
    _check_test_sample(d_test, len(n_idx))
    if tuple(tau_tr.subset) != s:
        raise DataError(f"training CATE uses {tau_tr.subset}, few-shot set is {s}")
    qhat = fit_xn_given_xs(d_test.x, s)
    if not n_idx:
        return FewShotModel(s, tau_tr, np.zeros((1, 0)), qhat, d_test.d)
    o = test_pseudo_outcomes(d_test, seed, regressor) if pseudo is None else np.asarray(pseudo, dtype=float)
    target = o - tau_tr.effect(project_subset(d_test, s))
    z = d_test.x[:, list(n_idx)] - qhat.predict(d_test.x[:, list(s)])
    theta = ols(z, target).coef
    return FewShotModel(s, tau_tr, theta.reshape(1, -1), qhat, d_test.d)


def unconstrained_fit(d_test: Dataset, seed=0, regressor: str = "linear", pseudo: np.ndarray | None = None) -> CateModel:
    """Comparator: full linear CATE ``a + b . x`` fitted on the test sample alone."""
    _check_test_sample(d_test, d_test.d)
    o = test_pseudo_outcomes(d_test, seed, regressor) if pseudo is None else np.asarray(pseudo, dtype=float)
    coef = ols(np.column_stack([np.ones(d_test.n), d_test.x]), o).coef
    return CateModel(tuple(range(d_test.d)), "linear", float(coef[0]), coef[1:].copy())
