"""Zero-shot policy learning from e-invariant covariate sets.

Pipeline: test every candidate subset for e-invariance, fit a pooled CATE on
each accepted set, act greedily on it, and keep the set whose greedy policy
has the largest estimated improvement over the baseline on the test
covariates.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, as_subset, format_subset, project_subset
from .dr import DRConfig, crossfit_pseudo_outcomes, dr_einv_tests
from .exceptions import DataError, EinvError, EmptyModelList, TooManyCandidates
from .policies import CateGreedyPolicy, Policy, as_generator
from .report import TestReport
from .stats import default_neighbors, knn_predict, ols, weighted_least_squares
from .synth import MCEstimate
from .wald import DEFAULT_Q, centering_terms, wald_einv_test

MAX_DEFAULT_DIM = 12
ESTIMATORS = ("linear_wls", "dr_knn")


# -- CATE models -----------------------------------------------------------------

@dataclass
class CateModel:
    """Fitted CATE ``tau(x^S, t)`` with ``tau(., 0) = 0``.

    ``form="linear"`` stores ``intercept`` and ``coefficients`` of the effect
    of ``t=1``; ``form="knn"`` stores training ``x^S`` and pseudo-outcomes.
    """

    subset: tuple[int, ...]
    form: str
    intercept: float = 0.0
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    train_xs: np.ndarray | None = None
    train_o: np.ndarray | None = None
    neighbors: int | None = None
    k: int = 2

    def effect(self, xs) -> np.ndarray:
        """``tau(x^S, 1)`` for rows of ``xs`` (already projected onto ``S``)."""
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs.reshape(-1, len(self.subset)) if self.subset else xs.reshape(len(xs), 0)
        if self.form == "linear":
            return self.intercept + xs @ self.coefficients
        return knn_predict(self.train_xs, self.train_o, xs, self.neighbors)

    def effects(self, xs) -> np.ndarray:
        eff = self.effect(xs)
        return np.column_stack([np.zeros(len(eff)), eff])

    def tau(self, xs, t: int) -> np.ndarray:
        return self.effects(xs)[:, t]

    def to_dict(self) -> dict:
        out = {"subset": list(self.subset), "form": self.form}
        if self.form == "linear":
            out.update(intercept=self.intercept, coefficients=np.asarray(self.coefficients).tolist())
        else:
            out.update(neighbors=self.neighbors, n_train=len(self.train_o))
        return out


def fit_pooled_cate(
    ds: Dataset,
    subset: Sequence[int],
    estimator: str = "linear_wls",
    seed=0,
    q: float = DEFAULT_Q,
    dr_config: DRConfig | None = None,
) -> CateModel:
    """CATE on ``x^S`` fitted on all environments of ``ds`` pooled.

    ``linear_wls`` is the centered, weighted regression of the Wald test with
    per-environment main effects and a common effect ``beta . (1, x^S)``.
    ``dr_knn`` averages two-fold cross-fitted pseudo-outcomes over the
    nearest neighbours in ``x^S``.
    """
    subset = as_subset(subset, ds.d)
    xs = project_subset(ds, subset)
    if estimator == "linear_wls":
        centered, weights = centering_terms(ds, subset, None, q)
        x_full = np.column_stack([np.ones(ds.n), ds.x])
        dummies = (ds.env[:, None] == np.arange(1, ds.n_envs)[None, :]).astype(float)
        main = np.hstack([x_full, (dummies[:, :, None] * x_full[:, None, :]).reshape(ds.n, -1)])
        effect = centered[:, None] * np.column_stack([np.ones(ds.n), xs])
        fit = weighted_least_squares(np.hstack([main, effect]), ds.y, weights)
        beta = fit.coef[main.shape[1]:]
        return CateModel(subset, "linear", float(beta[0]), beta[1:].copy())
    if estimator == "dr_knn":
        cfg = dr_config or DRConfig()
        o = crossfit_pseudo_outcomes(ds, seed, cfg.regressor, cfg.propensity, cfg.k)
        nb = cfg.k if cfg.k is not None else default_neighbors(ds.n)
        return CateModel(subset, "knn", train_xs=xs.copy(), train_o=o, neighbors=min(nb, ds.n))
    raise ValueError(f"estimator must be one of {ESTIMATORS}")


def greedy_policy(cm: CateModel, d: int | None = None) -> CateGreedyPolicy:
    """All mass on maximising treatments (baseline included); ties share mass."""
    return CateGreedyPolicy(cm, d=d)


def set_score(cm: CateModel, x_test) -> float:
    """Mean over test rows of ``sum_t tau(x^S, t) pi(t | x^S)`` for the greedy policy."""
    x_test = np.asarray(x_test, dtype=float)
    tau = cm.effects(project_subset(x_test, cm.subset))
    probs = greedy_policy(cm).probabilities(x_test)
    return float((tau * probs).sum(axis=1).mean())


def select_optimal_set(models: Sequence[CateModel], x_test, seed=0) -> tuple[tuple[int, ...], dict]:
    """Subset maximising :func:`set_score`; exact ties are broken at random."""
    if not models:
        raise EmptyModelList("no CATE models to choose from")
    x_test = np.asarray(x_test, dtype=float)
    if x_test.ndim != 2 or len(x_test) == 0:
        raise DataError("x_test must be a nonempty matrix")
    scores = {m.subset: set_score(m, x_test) for m in models}
    best = max(scores.values())
    tied = [s for s, v in scores.items() if v == best]
    pick = tied[int(as_generator(seed).integers(len(tied)))] if len(tied) > 1 else tied[0]
    return pick, scores


# -- candidate screening -----------------------------------------------------------

def all_subsets(d: int) -> list[tuple[int, ...]]:
    return [c for r in range(d + 1) for c in itertools.combinations(range(d), r)]


def test_candidates(
    ds: Dataset,
    candidates: Sequence[Sequence[int]] | None = None,
    method: str = "wald",
    alpha: float = 0.05,
    seed=0,
    dr_config: DRConfig | None = None,
    hc: str = "hc3",
) -> tuple[list[tuple[tuple[int, ...], TestReport]], list[str]]:
    """Run the chosen test on every candidate; returns ``(reports, warnings)``.

    Candidates whose test fails numerically are dropped with a warning.
    """
    if candidates is None:
        if ds.d > MAX_DEFAULT_DIM:
            raise TooManyCandidates(f"{2 ** ds.d} subsets for d={ds.d}; pass candidates explicitly")
        candidates = all_subsets(ds.d)
    candidates = [as_subset(c, ds.d) for c in candidates]
    if not candidates:
        raise ValueError("no candidate subsets")
    notes: list[str] = []
    out = []
    if method == "dr":
        for rep in dr_einv_tests(ds, candidates, alpha, seed, dr_config):
            out.append((rep.subset, rep))
    elif method == "wald":
        for s in candidates:
            try:
                out.append((s, wald_einv_test(ds, s, alpha, hc=hc)))
            except EinvError as exc:
                msg = f"{format_subset(s)} excluded: {type(exc).__name__}: {exc}"
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                notes.append(msg)
    else:
        raise ValueError("method must be 'wald' or 'dr'")
    return out, notes


test_candidates.__test__ = False


def find_einv_sets(ds: Dataset, candidates=None, method: str = "wald", alpha: float = 0.05, seed=0, dr_config=None, hc: str = "hc3"):
    """Candidates not rejected at level ``alpha``, each with its report."""
    reports, _ = test_candidates(ds, candidates, method, alpha, seed, dr_config, hc)
    return [(s, r) for s, r in reports if not r.reject]


# -- pipeline ------------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroShotConfig:
    method: str = "wald"
    alpha: float = 0.05
    estimator: str | None = None
    seed: int = 0
    candidates: tuple | None = None
    dr_config: DRConfig | None = None
    hc: str = "hc3"

    def resolved_estimator(self) -> str:
        if self.estimator is not None:
            return self.estimator
        return "linear_wls" if self.method == "wald" else "dr_knn"


@dataclass
class ZeroShotReport:
    accepted_sets: list[tuple[tuple[int, ...], float]]
    s_star: tuple[int, ...]
    per_set_scores: dict
    policy: CateGreedyPolicy
    cate_model: CateModel
    warnings: list[str]
    tests: list[TestReport]
    fallback: bool = False

    def to_dict(self) -> dict:
        return {
            "accepted_sets": [{"subset": list(s), "label": format_subset(s), "p_value": p} for s, p in self.accepted_sets],
            "s_star": list(self.s_star),
            "s_star_label": format_subset(self.s_star),
            "per_set_scores": [{"subset": list(s), "label": format_subset(s), "score": v} for s, v in self.per_set_scores.items()],
            "policy": self.policy.to_dict(),
            "warnings": list(self.warnings),
            "fallback": self.fallback,
            "multiple_testing_correction": None,
            "tests": [r.to_dict() for r in self.tests],
        }


def zero_shot_pipeline(train: Dataset, x_test, config: ZeroShotConfig | None = None) -> ZeroShotReport:
    config = config or ZeroShotConfig()
    x_test = np.asarray(x_test, dtype=float)
    if x_test.ndim != 2 or x_test.shape[1] != train.d:
        raise DataError(f"x_test must have {train.d} columns")
    reports, notes = test_candidates(train, config.candidates, config.method, config.alpha, config.seed, config.dr_config, config.hc)
    accepted = [(s, r.p_value) for s, r in reports if not r.reject]
    estimator = config.resolved_estimator()
    fallback = not accepted
    if fallback:
        msg = "no candidate set accepted; falling back to the empty set (heuristic)"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        sets = [()]
    else:
        sets = [s for s, _ in accepted]
    models = [fit_pooled_cate(train, s, estimator, config.seed, dr_config=config.dr_config) for s in sets]
    s_star, scores = select_optimal_set(models, x_test, config.seed)
    model = models[sets.index(s_star)]
    return ZeroShotReport(accepted, s_star, scores, greedy_policy(model, d=train.d), model, notes, [r for _, r in reports], fallback)


# -- semi-synthetic evaluation ---------------------------------------------------------

def semireal_evaluate(d_test: Dataset, policy: Policy, n_eval: int = 1000, seed=0, effect_subset: Sequence[int] | None = None) -> MCEstimate:
    """Relative value of ``policy`` on one environment via a fitted outcome model.

    Fits ``y = a . (1, x) + b . (1, x^F) t`` by least squares, resamples
    ``(x, residual)`` pairs with replacement, draws treatments from
    ``policy`` and averages the simulated reward minus the reward under the
    baseline on the same resample.
    """
    if d_test.n_envs != 1:
        raise DataError("semireal_evaluate expects a single environment")
    if d_test.k != 2:
        raise DataError("semireal_evaluate handles binary treatments only")
    feats = tuple(range(d_test.d)) if effect_subset is None else as_subset(effect_subset, d_test.d)
    g = np.column_stack([np.ones(d_test.n), d_test.x])
    f = np.column_stack([np.ones(d_test.n), project_subset(d_test, feats)])
    fit = ols(np.hstack([g, f * d_test.t[:, None]]), d_test.y)
    b = fit.coef[g.shape[1]:]
    rng = as_generator(seed)
    idx = rng.integers(d_test.n, size=n_eval)
    x_bar = d_test.x[idx]
    t_bar = policy.sample(x_bar, rng)
    # residual and main-effect terms cancel in the paired difference
    gain = (f[idx] @ b) * t_bar
    se = float(gain.std(ddof=1) / np.sqrt(n_eval)) if n_eval > 1 else float("nan")
    return MCEstimate(float(gain.mean()), se)
