"""Numerical kernel: weighted least squares, sandwich covariance, chi-square
distribution functions, k-nearest-neighbour regression and logistic fitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit

from .exceptions import (
    DataError,
    DidNotConverge,
    EmptyTrainingSet,
    InvalidDof,
    RankDeficient,
    SeparableData,
    SingularJacobian,
)
from .kernels import knn_mean

RANK_TOL = 1e-10


def sigmoid(eta):
    return expit(eta)


# -- least squares -------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    coef: np.ndarray
    residuals: np.ndarray
    xtwx_inverse: np.ndarray
    condition: float

    def predict(self, design) -> np.ndarray:
        return np.asarray(design, dtype=float) @ self.coef


def weighted_least_squares(design, y, w=None) -> FitResult:
    """Minimise ``sum_i w_i (y_i - design_i . coef)^2`` by pivoted QR.

    Raises :class:`RankDeficient` when the weighted design has numerical rank
    below its column count (tolerance ``1e-10`` relative to the largest
    pivot).
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if w is None:
        w = np.ones(n)
    w = np.asarray(w, dtype=float)
    if n < p:
        raise RankDeficient(f"{n} rows for {p} columns")
    if (w <= 0).any() or not np.isfinite(w).all():
        raise DataError("weights must be positive and finite")
    if p == 0:
        return FitResult(np.zeros(0), y.copy(), np.zeros((0, 0)), 1.0)
    sw = np.sqrt(w)
    A = X * sw[:, None]
    Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0.0 or diag[-1] <= RANK_TOL * diag[0]:
        raise RankDeficient(f"numerical rank {(diag > RANK_TOL * diag[0]).sum()} < {p}")
    z = linalg.solve_triangular(R, Q.T @ (sw * y))
    coef = np.empty(p)
    coef[piv] = z
    r_inv = linalg.solve_triangular(R, np.eye(p))
    inv_perm = r_inv @ r_inv.T
    xtwx_inverse = np.empty((p, p))
    xtwx_inverse[np.ix_(piv, piv)] = inv_perm
    xtwx_inverse = 0.5 * (xtwx_inverse + xtwx_inverse.T)
    sv = linalg.svdvals(R)
    return FitResult(coef, y - X @ coef, xtwx_inverse, float(sv[0] / sv[-1]))


def ols(design, y) -> FitResult:
    return weighted_least_squares(design, y)


# -- sandwich ------------------------------------------------------------------

def sandwich_covariance(scores, jacobians=None, *, bread=None) -> np.ndarray:
    """``B^{-1} M B^{-T}`` with ``B`` the mean Jacobian and ``M`` the mean
    outer product of the per-row scores.

    Pass either per-row ``jacobians`` (n x p x p) or their mean as ``bread``.
    The result estimates the covariance of ``sqrt(n) (theta_hat - theta)``.
    """
    G = np.asarray(scores, dtype=float)
    n, p = G.shape
    if bread is None:
        if jacobians is None:
            raise ValueError("need jacobians or bread")
        bread = np.asarray(jacobians, dtype=float).mean(axis=0)
    bread = np.asarray(bread, dtype=float)
    sv = linalg.svdvals(bread) if p else np.ones(1)
    if sv[0] == 0.0 or sv[-1] <= 1e-12 * sv[0]:
        raise SingularJacobian("mean Jacobian is singular")
    meat = G.T @ G / n
    left = linalg.solve(bread, meat)
    cov = linalg.solve(bread, left.T).T
    return 0.5 * (cov + cov.T)


def quadratic_form(vec, cov, rcond: float = 1e-10):
    """``vec' cov^{-1} vec`` with a Moore-Penrose fallback.

    Returns ``(value, rank, used_pinv)``; ``rank`` is the numerical rank of
    ``cov`` and serves as the chi-square degrees of freedom.
    """
    vec = np.asarray(vec, dtype=float)
    cov = np.asarray(cov, dtype=float)
    sv = linalg.svdvals(cov)
    if sv.size == 0 or sv[0] <= 0.0:
        return 0.0, 0, True
    rank = int((sv > rcond * sv[0]).sum())
    if rank == len(vec):
        try:
            c = linalg.cho_factor(cov)
            return float(vec @ linalg.cho_solve(c, vec)), rank, False
        except linalg.LinAlgError:
            pass
    pinv = linalg.pinvh(cov, atol=rcond * sv[0])
    return float(vec @ pinv @ vec), rank, True


# -- chi-square ----------------------------------------------------------------

_EPS = 1e-16
_TINY = 1e-300


def _gamma_series(a: float, x: float) -> float:
    """Regularised lower incomplete gamma P(a, x) by its power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(100_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_fraction(a: float, x: float) -> float:
    """Regularised upper incomplete gamma Q(a, x) by modified Lentz."""
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 100_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma(a: float, x: float) -> tuple[float, float]:
    """``(P(a, x), Q(a, x))``."""
    if x <= 0.0:
        return 0.0, 1.0
    if x < a + 1.0:
        p = _gamma_series(a, x)
        return p, 1.0 - p
    q = _gamma_cont_fraction(a, x)
    return 1.0 - q, q


def _check_dof(dof) -> float:
    if dof is None or not float(dof).is_integer() or dof < 1:
        raise InvalidDof(f"degrees of freedom must be a positive integer, got {dof!r}")
    return float(dof)


def chi_square_cdf(stat: float, dof: int) -> float:
    k = _check_dof(dof)
    return regularized_gamma(0.5 * k, 0.5 * max(float(stat), 0.0))[0]


def chi_square_tail(stat: float, dof: int) -> float:
    """Upper tail ``P(chi2_dof > stat)``."""
    k = _check_dof(dof)
    if stat < 0 or math.isnan(stat):
        raise ValueError("statistic must be non-negative")
    if math.isinf(stat):
        return 0.0
    return regularized_gamma(0.5 * k, 0.5 * float(stat))[1]


def chi_square_quantile(p: float, dof: int) -> float:
    """Inverse of :func:`chi_square_cdf` by bracketed root finding."""
    k = _check_dof(dof)
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if p < 0.5:
        f = lambda s: chi_square_cdf(s, k) - p
    else:
        f = lambda s: (1.0 - p) - chi_square_tail(s, k)
    hi = max(1.0, k)
    while f(hi) < 0.0:
        hi *= 2.0
    return optimize.brentq(f, 0.0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=500)


# -- nearest neighbours --------------------------------------------------------

def default_neighbors(m: int) -> int:
    return int(min(m, max(10, math.ceil(math.sqrt(m)))))


def knn_predict(train_x, train_y, query_x, k: int | None = None) -> np.ndarray:
    """kNN means at every query row (Euclidean, ties to the lower row index).

    ``train_y`` may hold several outcome columns sharing one neighbour search.
    With zero feature columns every training row is equidistant; the
    prediction is then the mean of all training outcomes.
    """
    train_x = np.asarray(train_x, dtype=float)
    train_y = np.asarray(train_y, dtype=float)
    m = len(train_y)
    if m == 0:
        raise EmptyTrainingSet("no training rows")
    query_x = np.asarray(query_x, dtype=float)
    if train_x.ndim == 1:
        train_x = train_x.reshape(m, -1)
    if query_x.ndim == 1:
        query_x = query_x.reshape(-1, train_x.shape[1]) if train_x.shape[1] else query_x.reshape(-1, 0)
    if k is None:
        k = default_neighbors(m)
    if not 1 <= k <= m:
        raise ValueError(f"k={k} outside 1..{m}")
    if train_x.shape[1] == 0:
        return np.broadcast_to(train_y.mean(axis=0), (len(query_x),) + train_y.shape[1:]).copy()
    return knn_mean(train_x, train_y, query_x, k)


def knn_regress(train_x, train_y, query, k: int) -> float:
    train_x = np.asarray(train_x, dtype=float)
    if train_x.ndim == 1:
        train_x = train_x.reshape(-1, 1)
    if len(train_x) == 0:
        raise EmptyTrainingSet("no training rows")
    query = np.asarray(query, dtype=float).reshape(1, train_x.shape[1])
    if train_x.shape[1] == 0:
        # all rows tie at distance zero; lower indices win
        return float(np.asarray(train_y, dtype=float)[:k].mean())
    return float(knn_predict(train_x, train_y, query, k)[0])


# -- logistic regression -------------------------------------------------------

def logistic_fit(design, t, max_iter: int = 100, tol: float = 1e-8, return_info: bool = False):
    """Maximum-likelihood logistic regression by damped Newton-Raphson.

    Converged when the sup-norm of the mean score drops below ``tol``.
    """
    X = np.asarray(design, dtype=float)
    t = np.asarray(t, dtype=float)
    n, p = X.shape
    if not ((t == 0) | (t == 1)).all():
        raise DataError("logistic_fit expects a 0/1 response")
    if t.min() == t.max():
        raise DataError("logistic_fit needs both classes present")

    def loglik(b):
        eta = X @ b
        return float((t * eta - np.logaddexp(0.0, eta)).sum())

    coef = np.zeros(p)
    ll = loglik(coef)
    decrements = []
    for it in range(max_iter):
        mu = expit(X @ coef)
        grad = X.T @ (t - mu) / n
        if np.abs(grad).max() < tol:
            eta = X @ coef
            if eta[t == 1].min() > eta[t == 0].max():
                # a finite optimum cannot separate the classes perfectly
                raise SeparableData("fitted index separates the classes perfectly")
            info = {"iterations": it, "decrements": decrements, "loglik": ll}
            return (coef, info) if return_info else coef
        wts = mu * (1.0 - mu)
        hess = (X * wts[:, None]).T @ X / n
        step = linalg.lstsq(hess, grad, cond=1e-14)[0]
        decrements.append(float(grad @ step))
        scale = 1.0
        while True:
            cand = coef + scale * step
            cand_ll = loglik(cand)
            if cand_ll >= ll - 1e-12 * abs(ll) or scale < 1e-8:
                break
            scale *= 0.5
        coef, ll = cand, cand_ll
        if np.linalg.norm(coef) > 1e3:
            raise SeparableData("coefficient norm diverged; classes look separable")
    raise DidNotConverge(f"no convergence after {max_iter} iterations", iterate=coef)
