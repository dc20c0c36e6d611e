"""Multi-environment structural models with Gaussian noise and exact oracles.

Variants
--------
``intro``
    ``U = eps_U``, ``X = e U + eps_X``,
    ``Y = 2e + X + U + T (1 + X) + eps_Y``.
``example1_linear``
    ``U1, U2`` latent; ``X3 = g3 U1 + eps``, ``X2 = g2 U2 + eps``,
    ``X1 = X2 + g1 U1 + eps``; ``Y = T (1 + X2/2 + U1/2) + mu + U1 + U2 + X2 + X3 + eps_Y``.
``example1_nl_main``
    as linear with ``-X2 X3 / 2`` added to the main effect.
``example1_nl_effect``
    as nl_main with treatment term ``1 + (X2)^2/2 + (X2)^3/2 + U1/2``.

Treatment is assigned by an external policy, so the covariates are a linear
map ``X = M z`` of standard normal latents ``z``; conditioning on any subset
of ``X`` is therefore exact Gaussian conditioning, which the Monte-Carlo
oracles below use.
"""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .data import Dataset, as_subset
from .exceptions import DataError, DegeneratePolicy, EmptyClass, UnknownEnvironment, UnsupportedSubset
from .policies import Policy, draw_from_probabilities

VARIANTS = ("intro", "example1_linear", "example1_nl_main", "example1_nl_effect")
EXAMPLE1 = VARIANTS[1:]
PARAM_RANGE = (-3.0, 3.0)


@dataclass(frozen=True)
class EnvParams:
    gamma1: float = 0.0
    gamma2: float = 0.0
    gamma3: float = 0.0
    mu: float = 0.0
    e: float = 0.0  # intro variant only


@dataclass
class ScmConfig:
    variant: str
    env_params: dict[str, EnvParams]
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        self.env_params = {str(k): v for k, v in self.env_params.items()}
        for label, p in self.env_params.items():
            if not np.isfinite(list(asdict(p).values())).all():
                raise DataError(f"non-finite parameter for environment {label!r}")

    @property
    def labels(self) -> list[str]:
        return list(self.env_params)

    def params(self, env: str) -> EnvParams:
        try:
            return self.env_params[str(env)]
        except KeyError:
            raise UnknownEnvironment(f"environment {env!r} not in config") from None

    @property
    def d(self) -> int:
        return 1 if self.variant == "intro" else 3

    @classmethod
    def random(cls, variant: str, labels: Sequence[str], seed: int, low: float = PARAM_RANGE[0], high: float = PARAM_RANGE[1]) -> "ScmConfig":
        """Environment parameters drawn i.i.d. Uniform[low, high] from a dedicated sub-seed."""
        if variant == "intro":
            raise ValueError("intro environments are labelled by their scalar e; build them with ScmConfig.intro")
        rng = np.random.default_rng([int(seed), 0x5EED])
        params = {}
        for label in labels:
            g1, g2, g3, mu = rng.uniform(low, high, size=4)
            params[str(label)] = EnvParams(float(g1), float(g2), float(g3), float(mu))
        return cls(variant, params, seed=seed)

    @classmethod
    def intro(cls, es: Sequence[float] = (1.0, -1.0), seed: int = 0) -> "ScmConfig":
        return cls("intro", {f"{e:g}": EnvParams(e=float(e)) for e in es}, seed=seed)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "env_params": {k: asdict(v) for k, v in self.env_params.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScmConfig":
        return cls(data["variant"], {k: EnvParams(**v) for k, v in data["env_params"].items()}, seed=data.get("seed", 0))


@dataclass(frozen=True)
class EnvClass:
    """Environments assumed to share one covariate law."""

    members: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(str(m) for m in self.members))
        if not self.members:
            raise EmptyClass("environment class has no members")


class MCEstimate(NamedTuple):
    value: float
    se: float


def env_stream(seed: int, label: str, *extra: int) -> np.random.Generator:
    """Generator keyed on (seed, environment label, extra counters)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(str(label).encode()), *extra])


# -- structural equations --------------------------------------------------------

def latent_dim(variant: str) -> int:
    return 2 if variant == "intro" else 5


def mixing_matrix(variant: str, p: EnvParams) -> np.ndarray:
    """``M`` with ``X = z @ M.T`` for standard normal latents ``z``."""
    if variant == "intro":
        return np.array([[p.e, 1.0]])
    # latents: eps_U1, eps_U2, eps_X1, eps_X2, eps_X3
    return np.array(
        [
            [p.gamma1, p.gamma2, 1.0, 1.0, 0.0],
            [0.0, p.gamma2, 0.0, 1.0, 0.0],
            [p.gamma3, 0.0, 0.0, 0.0, 1.0],
        ]
    )


def _unobserved(variant: str, z: np.ndarray) -> np.ndarray:
    return z[:, :1] if variant == "intro" else z[:, :2]


def treatment_effect(variant: str, p: EnvParams, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Outcome difference between ``T=1`` and ``T=0`` for fixed (x, u)."""
    if variant == "intro":
        return 1.0 + x[:, 0]
    x2 = x[:, 1]
    if variant == "example1_nl_effect":
        return 1.0 + 0.5 * x2**2 + 0.5 * x2**3 + 0.5 * u[:, 0]
    return 1.0 + 0.5 * x2 + 0.5 * u[:, 0]


def main_effect(variant: str, p: EnvParams, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    if variant == "intro":
        return 2.0 * p.e + x[:, 0] + u[:, 0]
    base = p.mu + u[:, 0] + u[:, 1] + x[:, 1] + x[:, 2]
    if variant != "example1_linear":
        base = base - 0.5 * x[:, 1] * x[:, 2]
    return base


def _draw_xu(variant: str, p: EnvParams, n: int, rng: np.random.Generator):
    z = rng.standard_normal((n, latent_dim(variant)))
    x = z @ mixing_matrix(variant, p).T
    return x, _unobserved(variant, z)


def simulate(cfg: ScmConfig, env: str, n: int, policy: Policy, seed) -> dict:
    """Raw draws (including the unobserved ``u``) from one environment.

    No positivity check; use :func:`sample_dataset` for training data.
    """
    p = cfg.params(env)
    rng = seed if isinstance(seed, np.random.Generator) else env_stream(seed, env)
    x, u = _draw_xu(cfg.variant, p, n, rng)
    probs = policy.probabilities(x)
    t = draw_from_probabilities(probs, rng.random(n))
    eff = treatment_effect(cfg.variant, p, x, u)
    y = main_effect(cfg.variant, p, x, u) + t * eff + rng.standard_normal(n)
    return {"x": x, "u": u, "t": t, "y": y, "probs": probs}


def sample_dataset(cfg: ScmConfig, envs: Sequence[str] | None, n_per_env, behavior: Policy, seed: int) -> Dataset:
    """Training data from ``envs`` under ``behavior``; rows grouped by environment.

    ``p_obs`` holds the exact behaviour probability of each observed
    treatment. ``n_per_env`` may be an int or a ``{label: n}`` mapping.
    """
    envs = cfg.labels if envs is None else [str(e) for e in envs]
    for e in envs:
        cfg.params(e)
    env_col, xs, ts, ys, ps = [], [], [], [], []
    for e in envs:
        n = int(n_per_env[e] if isinstance(n_per_env, dict) else n_per_env)
        draw = simulate(cfg, e, n, behavior, env_stream(seed, e))
        if (draw["probs"] <= 0.0).any():
            raise DegeneratePolicy("behaviour policy assigns zero probability to some treatment")
        env_col += [e] * n
        xs.append(draw["x"])
        ts.append(draw["t"])
        ys.append(draw["y"])
        ps.append(draw["probs"][np.arange(n), draw["t"]])
    ds = Dataset.from_arrays(env_col, np.vstack(xs), np.concatenate(ts), np.concatenate(ys), p_obs=np.concatenate(ps), k=behavior.k)
    ds.meta["scm"] = cfg.to_dict()
    ds.meta["behavior"] = behavior.to_dict()
    return ds


# -- oracles -------------------------------------------------------------------

def _conditional_latent(variant: str, p: EnvParams, subset: tuple[int, ...], xs: np.ndarray):
    """Mean and a square root of the covariance of ``z | X^S = xs``."""
    M = mixing_matrix(variant, p)[list(subset)]
    dim = latent_dim(variant)
    if not subset:
        return np.zeros(dim), np.eye(dim)
    gram = M @ M.T
    H = M.T @ np.linalg.solve(gram, M)
    mean = M.T @ np.linalg.solve(gram, np.asarray(xs, dtype=float))
    return mean, np.eye(dim) - H  # projection, so it is its own square root


def linear_cate_coefficients(cfg: ScmConfig, env: str, subset: Sequence[int]) -> tuple[float, np.ndarray]:
    """Exact ``(intercept, slopes)`` of ``x -> tau^S_e(x, 1)`` for the linear-effect variants."""
    subset = as_subset(subset, cfg.d)
    p = cfg.params(env)
    if cfg.variant == "example1_nl_effect":
        raise UnsupportedSubset("treatment effect is nonlinear in this variant")
    M = mixing_matrix(cfg.variant, p)
    if cfg.variant == "intro":
        effect_row = M[0]  # tau = 1 + X
    else:
        effect_row = 0.5 * M[1] + 0.5 * np.eye(5)[0]  # tau = 1 + X2/2 + U1/2
    if not subset:
        return 1.0, np.zeros(0)
    Ms = M[list(subset)]
    slopes = np.linalg.solve(Ms @ Ms.T, Ms @ effect_row)
    return 1.0, slopes


def oracle_cate(cfg: ScmConfig, env: str, xs, subset: Sequence[int], t: int) -> float:
    """Closed-form ``tau^S_e(x, t)`` (baseline ``t=0``).

    Linear-effect variants are covered for every subset; ``example1_nl_effect``
    only for ``S = {X2}`` and the empty set.
    """
    subset = as_subset(subset, cfg.d)
    if t == 0:
        return 0.0
    if t != 1:
        raise ValueError("built-in models have binary treatments")
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if len(xs) != len(subset):
        raise DataError(f"x^S has length {len(xs)}, subset has {len(subset)} entries")
    if cfg.variant == "example1_nl_effect":
        if subset == (1,):
            x2 = xs[0]
            return float(1.0 + 0.5 * x2**2 + 0.5 * x2**3)
        if subset == ():
            return 1.0 + 0.5 * (cfg.params(env).gamma2**2 + 1.0)
        raise UnsupportedSubset(f"no closed form for subset {subset}; use mc_cate")
    intercept, slopes = linear_cate_coefficients(cfg, env, subset)
    return float(intercept + slopes @ xs)


def mc_conditional(cfg: ScmConfig, env: str, subset: Sequence[int], xs, mc_n: int, seed) -> dict[str, MCEstimate]:
    """Monte-Carlo ``E[tau | X^S = xs]`` and ``E[Y(t0) | X^S = xs]`` by exact
    conditional sampling of the latent noise."""
    subset = as_subset(subset, cfg.d)
    p = cfg.params(env)
    mean, root = _conditional_latent(cfg.variant, p, subset, np.atleast_1d(np.asarray(xs, dtype=float)))
    rng = env_stream(seed, env, 7)
    z = mean + rng.standard_normal((mc_n, len(mean))) @ root.T
    x = z @ mixing_matrix(cfg.variant, p).T
    u = _unobserved(cfg.variant, z)
    eff = treatment_effect(cfg.variant, p, x, u)
    base = main_effect(cfg.variant, p, x, u)
    sq = np.sqrt(mc_n)
    return {
        "effect": MCEstimate(float(eff.mean()), float(eff.std(ddof=1) / sq)),
        "baseline": MCEstimate(float(base.mean()), float(base.std(ddof=1) / sq)),
    }


def mc_cate(cfg: ScmConfig, env: str, subset: Sequence[int], xs, mc_n: int = 100_000, seed: int = 0) -> MCEstimate:
    return mc_conditional(cfg, env, subset, xs, mc_n, seed)["effect"]


def oracle_outcome_mean(cfg: ScmConfig, env: str, x, t) -> np.ndarray:
    """Exact ``E^e[Y | X = x, T = t]`` for the example-1 and intro variants."""
    p = cfg.params(env)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(x),))
    M = mixing_matrix(cfg.variant, p)
    # E[z | X] for full X; X = M z with M of full row rank
    ez = x @ np.linalg.solve(M @ M.T, M)
    eu = _unobserved(cfg.variant, ez)
    eff = treatment_effect(cfg.variant, p, x, eu)  # linear in u
    return main_effect(cfg.variant, p, x, eu) + t * eff


def oracle_value(cfg: ScmConfig, env: str, policy: Policy, mc_n: int = 100_000, seed: int = 0) -> MCEstimate:
    """``E^{e,pi}[Y] - E^{e,pi_t0}[Y]`` by common random numbers.

    The paired difference reduces to ``sum_t pi(t|X) (Y(t) - Y(t0))``, averaged
    over draws of ``(X, U)``.
    """
    if mc_n < 1:
        raise ValueError("mc_n must be positive")
    p = cfg.params(env)
    x, u = _draw_xu(cfg.variant, p, mc_n, env_stream(seed, env, 11))
    eff = treatment_effect(cfg.variant, p, x, u)
    probs = policy.probabilities(x)
    gain = probs[:, 1] * eff if probs.shape[1] > 1 else np.zeros(mc_n)
    se = float(gain.std(ddof=1) / np.sqrt(mc_n)) if mc_n > 1 else float("nan")
    return MCEstimate(float(gain.mean()), se)


class WorstCase(NamedTuple):
    value: float
    se: float
    member: str
    per_member: dict


def check_shared_covariate_law(cfg: ScmConfig, cls: EnvClass, n: int = 20_000, seed: int = 0, z: float = 5.0) -> None:
    """Two-sample mean check of X across class members; raises on mismatch."""
    draws = {m: _draw_xu(cfg.variant, cfg.params(m), n, env_stream(seed, m, 13))[0] for m in cls.members}
    ref = cls.members[0]
    for m in cls.members[1:]:
        a, b = draws[ref], draws[m]
        se = np.sqrt(a.var(axis=0, ddof=1) / n + b.var(axis=0, ddof=1) / n)
        if (np.abs(a.mean(axis=0) - b.mean(axis=0)) > z * se).any():
            raise DataError(f"environments {ref!r} and {m!r} have different covariate means")


def worst_case_value(cfg: ScmConfig, cls: EnvClass, policy: Policy, mc_n: int = 100_000, seed: int = 0) -> WorstCase:
    """Minimum of :func:`oracle_value` over the members of ``cls``."""
    if not cls.members:
        raise EmptyClass("environment class has no members")
    check_shared_covariate_law(cfg, cls, seed=seed)
    per = {m: oracle_value(cfg, m, policy, mc_n, seed) for m in cls.members}
    worst = min(per, key=lambda m: per[m].value)
    return WorstCase(per[worst].value, per[worst].se, worst, per)
