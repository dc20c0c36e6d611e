"""Treatment policies: maps from covariates to distributions over treatments.

Every policy exposes ``probabilities(x) -> (n, k)`` on full covariate rows and
reads only the columns in ``policy.subset``.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import expit

from .exceptions import DimensionMismatch

TIE_TOL = 1e-12


def _rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    return x


def as_generator(rng_state) -> np.random.Generator:
    if isinstance(rng_state, np.random.Generator):
        return rng_state
    return np.random.default_rng(rng_state)


def draw_from_probabilities(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw: row ``i`` takes the first t with cumulative prob > u_i."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return (u[:, None] >= cdf).sum(axis=1).astype(np.intp)


class Policy:
    """Base class. Subclasses implement :meth:`_probabilities`."""

    variant = "abstract"

    def __init__(self, k: int = 2, subset: Sequence[int] = (), d: int | None = None):
        self.k = int(k)
        self.subset = tuple(subset)
        self.d = d

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = _rows(x)
        if self.d is not None and x.shape[1] != self.d:
            raise DimensionMismatch(f"expected {self.d} covariates, got {x.shape[1]}")
        if self.subset and x.shape[1] <= max(self.subset):
            raise DimensionMismatch(f"policy reads covariate {max(self.subset)}, x has {x.shape[1]}")
        return x

    def probabilities(self, x) -> np.ndarray:
        x = self._check(x)
        return self._probabilities(x)

    def _probabilities(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def probability(self, x, t: int) -> float:
        if not 0 <= t < self.k:
            raise DimensionMismatch(f"treatment {t} outside 0..{self.k - 1}")
        return float(self.probabilities(x)[0, t])

    def sample(self, x, rng_state=None) -> np.ndarray:
        probs = self.probabilities(x)
        u = as_generator(rng_state).random(len(probs))
        return draw_from_probabilities(probs, u)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "k": self.k, "subset": list(self.subset)}

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class UniformPolicy(Policy):
    variant = "uniform"

    def _probabilities(self, x):
        return np.full((len(x), self.k), 1.0 / self.k)


class ConstantPolicy(Policy):
    variant = "constant"

    def __init__(self, treatment: int, k: int = 2, d: int | None = None):
        if not 0 <= treatment < k:
            raise DimensionMismatch(f"treatment {treatment} outside 0..{k - 1}")
        super().__init__(k=k, d=d)
        self.treatment = int(treatment)

    def _probabilities(self, x):
        out = np.zeros((len(x), self.k))
        out[:, self.treatment] = 1.0
        return out

    def to_dict(self):
        return {**super().to_dict(), "treatment": self.treatment}


class LogisticPolicy(Policy):
    """Binary policy with ``P(T=1 | x) = sigmoid(c0 + c . x^S)``.

    With ``subset=None`` the coefficients after the intercept apply to
    ``x[0], x[1], ...`` in order.
    """

    variant = "logistic"

    def __init__(self, coefficients: Sequence[float], subset: Sequence[int] | None = None, d: int | None = None):
        coef = np.asarray(coefficients, dtype=float).ravel()
        if subset is None:
            subset = range(len(coef) - 1)
        subset = tuple(subset)
        if len(coef) != len(subset) + 1:
            raise DimensionMismatch("need one coefficient per covariate plus an intercept")
        super().__init__(k=2, subset=subset, d=d)
        self.coefficients = coef

    def _probabilities(self, x):
        eta = self.coefficients[0] + x[:, list(self.subset)] @ self.coefficients[1:]
        return np.column_stack([expit(-eta), expit(eta)])

    def to_dict(self):
        return {**super().to_dict(), "coefficients": self.coefficients.tolist()}


def bernoulli(q: float) -> LogisticPolicy:
    """Covariate-free binary policy choosing ``t=1`` with probability ``q``."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    return LogisticPolicy([math.log(q / (1.0 - q))], subset=())


class CateGreedyPolicy(Policy):
    """All mass on the treatments maximising a fitted CATE; exact ties share mass.

    ``model`` must expose ``subset``, ``k`` and ``effects(xs) -> (n, k)`` with
    the baseline column identically zero.
    """

    variant = "cate_greedy"

    def __init__(self, model, d: int | None = None):
        super().__init__(k=model.k, subset=model.subset, d=d)
        self.model = model

    def _probabilities(self, x):
        tau = self.model.effects(x[:, list(self.subset)])
        best = tau.max(axis=1, keepdims=True)
        winners = (tau >= best - TIE_TOL).astype(float)
        return winners / winners.sum(axis=1, keepdims=True)

    def to_dict(self):
        return {**super().to_dict(), "cate_model": self.model.to_dict()}


def policy_probability(policy: Policy, x, t: int) -> float:
    return policy.probability(x, t)


def sample_treatment(policy: Policy, x, rng_state=None) -> np.ndarray:
    return policy.sample(x, rng_state)


def parse_policy(text: str, k: int = 2) -> Policy:
    """Parse ``uniform``, ``constant:T`` or ``logistic:a,b,c,...`` (CLI syntax)."""
    name, _, args = text.partition(":")
    name = name.strip().lower()
    if name == "uniform":
        return UniformPolicy(k=k)
    if name == "constant":
        return ConstantPolicy(int(args), k=k)
    if name == "logistic":
        return LogisticPolicy([float(a) for a in args.split(",")])
    if name == "bernoulli":
        return bernoulli(float(args))
    raise ValueError(f"unknown policy {text!r}")
