"""Experiment harness: rejection-rate sweeps, leave-one-environment-out policy
comparisons, few-shot sweeps, and CSV/JSON/SVG report writing.

Every replication draws its randomness from
``SeedSequence([seed, experiment tag, setting, n, rep])``, so outputs depend on
the configuration only and not on execution order.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from .data import format_subset
from .dr import DRConfig, dr_einv_tests
from .exceptions import EinvError
from .few_shot import few_shot_fit, test_pseudo_outcomes, unconstrained_fit
from .policies import ConstantPolicy, LogisticPolicy, UniformPolicy, bernoulli
from .synth import EnvParams, ScmConfig, linear_cate_coefficients, oracle_value, sample_dataset, simulate
from .wald import wald_einv_test
from .zero_shot import ZeroShotConfig, all_subsets, fit_pooled_cate, greedy_policy, zero_shot_pipeline

EXPERIMENTS = ("rejection_rates", "zero_shot_loeo", "few_shot_sweep")
SETTINGS = ("example1_linear", "example1_nl_main", "example1_nl_effect")
BEHAVIOR_COEFFICIENTS = (0.5, 1.0, -0.5, 0.3)
_TAGS = {name: i for i, name in enumerate(EXPERIMENTS)}
Z95 = 1.959963984540054


LOEO_TREAT_PROBABILITY = 0.6


def behavior_policy() -> LogisticPolicy:
    """Logistic behaviour policy reading all three covariates."""
    return LogisticPolicy(BEHAVIOR_COEFFICIENTS)


def trial_policy() -> LogisticPolicy:
    """Micro-randomised-trial style behaviour: constant treatment probability."""
    return bernoulli(LOEO_TREAT_PROBABILITY)


@dataclass
class BenchConfig:
    experiment: str = "rejection_rates"
    variants: list = field(default_factory=lambda: list(SETTINGS))
    sample_sizes: list = field(default_factory=lambda: [1000, 2000, 4000, 8000])
    reps: int = 500
    alpha: float = 0.05
    methods: list = field(default_factory=lambda: ["wald", "dr"])
    seed: int = 0
    out: str | None = None
    subsets: list | None = None
    n_envs: int = 20
    n_per_env: int = 1000
    mc_n: int = 100_000
    dr_regressor: str = "linear_knn"
    hc: str = "hc3"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"experiment must be one of {EXPERIMENTS}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.sample_sizes or any(int(n) <= 0 for n in self.sample_sizes):
            raise ValueError("sample sizes must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        unknown = set(self.methods) - {"wald", "dr"}
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    @classmethod
    def from_dict(cls, data: dict) -> "BenchConfig":
        names = {f.name for f in fields(cls)}
        extra = set(data) - names
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


def rep_seed(cfg: BenchConfig, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, _TAGS[cfg.experiment], *[int(k) for k in keys]])


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def wilson_interval(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("need at least one trial")
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class Table:
    """Rows of a result table with a fixed column order."""

    kind: str
    columns: list
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, **row) -> None:
        self.rows.append({c: row.get(c) for c in self.columns})

    def __len__(self):
        return len(self.rows)

    def select(self, **match) -> list:
        return [r for r in self.rows if all(r[k] == v for k, v in match.items())]


# -- rejection rates ---------------------------------------------------------------

RATE_COLUMNS = ["setting", "method", "subset", "n", "rejection_rate", "rejections", "reps", "ci_low", "ci_high"]


def rejection_replication(variant: str, n: int, ss: np.random.SeedSequence, subsets, methods, alpha: float, dr_config: DRConfig, hc: str) -> dict:
    """One simulated dataset, every method on every subset; ``{(method, S): reject}``."""
    param_ss, data_ss, split_ss = ss.spawn(3)
    scm = ScmConfig.random(variant, ["0", "1"], seed=_int_seed(param_ss))
    ds = sample_dataset(scm, None, n // 2, behavior_policy(), seed=_int_seed(data_ss))
    out = {}
    if "wald" in methods:
        for s in subsets:
            out[("wald", s)] = wald_einv_test(ds, s, alpha, hc=hc).reject
    if "dr" in methods:
        for rep in dr_einv_tests(ds, subsets, alpha, _int_seed(split_ss), dr_config):
            out[("dr", rep.subset)] = rep.reject
    return out


def run_rejection_experiment(cfg: BenchConfig) -> Table:
    subsets = [tuple(s) for s in cfg.subsets] if cfg.subsets is not None else all_subsets(3)
    dr_config = DRConfig(regressor=cfg.dr_regressor)
    table = Table("rates", RATE_COLUMNS)
    for vi, variant in enumerate(cfg.variants):
        if variant not in SETTINGS:
            raise ValueError(f"variant must be one of {SETTINGS}")
        for n in cfg.sample_sizes:
            counts = {(m, s): 0 for m in ("wald", "dr") if m in cfg.methods for s in subsets}
            for rep in range(cfg.reps):
                result = rejection_replication(variant, int(n), rep_seed(cfg, vi, n, rep), subsets, cfg.methods, cfg.alpha, dr_config, cfg.hc)
                for key, rejected in result.items():
                    counts[key] += int(rejected)
            for (method, s), k in counts.items():
                lo, hi = wilson_interval(k, cfg.reps)
                table.add(setting=variant, method=method, subset=format_subset(s), n=int(n),
                          rejection_rate=k / cfg.reps, rejections=k, reps=cfg.reps, ci_low=lo, ci_high=hi)
    return table


# -- leave-one-environment-out ------------------------------------------------------------

LOEO_COLUMNS = ["env", "kind", "s_star", "einv_value", "einv_se", "fullset_value", "fullset_se", "random_value", "random_se", "always_treat_value", "difference"]


# (kind, probability, range of gamma1 and gamma3)
LOEO_MIX = (("aligned", 0.30, (2.0, 3.0)), ("null", 0.30, (0.0, 0.0)), ("flipped", 0.40, (-1.5, -0.75)))


def loeo_environments(n_envs: int, seed: int) -> ScmConfig:
    """Simulated environments for the leave-one-out comparison.

    ``gamma2`` and ``mu`` are Uniform[-3, 3]. The hidden-modifier loadings
    ``gamma1, gamma3`` follow the mixture ``LOEO_MIX``: a minority of
    ``aligned`` environments with strong positive loadings, ``null``
    environments where ``X1, X3`` carry no information on the modifier, and
    ``flipped`` environments with weaker negative loadings. The strong
    environments dominate a pooled fit, so using ``X1, X3`` pays off only
    in the aligned minority.
    """
    rng = np.random.default_rng([seed, 0x10E0])
    probs = [p for _, p, _ in LOEO_MIX]
    params = {}
    for i in range(n_envs):
        g2, mu = rng.uniform(-3.0, 3.0, size=2)
        _, _, (lo, hi) = LOEO_MIX[int(rng.choice(len(LOEO_MIX), p=probs))]
        g1, g3 = rng.uniform(lo, hi, size=2)
        params[f"e{i:02d}"] = EnvParams(float(g1), float(g2), float(g3), float(mu))
    return ScmConfig("example1_linear", params, seed)


def run_loeo_experiment(cfg: BenchConfig) -> Table:
    if cfg.n_envs < 3:
        raise ValueError("leave-one-environment-out needs at least three environments")
    scm = loeo_environments(cfg.n_envs, cfg.seed)
    labels = scm.labels
    beh = trial_policy()
    table = Table("loeo", LOEO_COLUMNS)
    for i, held in enumerate(labels):
        ss_train, ss_test, ss_eval = rep_seed(cfg, i).spawn(3)
        train = sample_dataset(scm, [e for e in labels if e != held], cfg.n_per_env, beh, seed=_int_seed(ss_train))
        x_test = simulate(scm, held, cfg.n_per_env, UniformPolicy(), _int_seed(ss_test))["x"]
        zs = zero_shot_pipeline(train, x_test, ZeroShotConfig(method="wald", alpha=cfg.alpha, seed=cfg.seed, hc=cfg.hc))
        full = greedy_policy(fit_pooled_cate(train, (0, 1, 2), "linear_wls"), d=3)
        eval_seed = _int_seed(ss_eval)
        # common random numbers: every policy is evaluated on the same draws
        v_einv = oracle_value(scm, held, zs.policy, cfg.mc_n, eval_seed)
        v_full = oracle_value(scm, held, full, cfg.mc_n, eval_seed)
        v_rand = oracle_value(scm, held, UniformPolicy(), cfg.mc_n, eval_seed)
        v_treat = oracle_value(scm, held, ConstantPolicy(1), cfg.mc_n, eval_seed)
        p = scm.params(held)
        kind = "null" if p.gamma1 == 0.0 else ("aligned" if p.gamma1 > 0 else "flipped")
        table.add(env=held, kind=kind, s_star=format_subset(zs.s_star),
                  einv_value=v_einv.value, einv_se=v_einv.se, fullset_value=v_full.value, fullset_se=v_full.se,
                  random_value=v_rand.value, random_se=v_rand.se, always_treat_value=v_treat.value,
                  difference=v_einv.value - v_full.value)
    diffs = np.array([r["difference"] for r in table.rows])
    wins = int((diffs > 0).sum())
    nonzero = int((diffs != 0).sum())
    table.summary = {
        "mean_difference": float(diffs.mean()),
        "median_difference": float(np.median(diffs)),
        "wins": wins,
        "envs": len(diffs),
        "sign_test_p": float(binomtest(wins, nonzero, alternative="greater").pvalue) if nonzero else 1.0,
    }
    return table


# -- few-shot sweep -------------------------------------------------------------------------

FEW_SHOT_COLUMNS = ["m", "reps", "mse_constrained", "mse_unconstrained", "theta_error"]


def run_few_shot_sweep(cfg: BenchConfig, n_train: int = 20_000, n_eval: int = 20_000) -> Table:
    """Constrained vs unconstrained CATE error on a separable test environment."""
    scm = ScmConfig.random("example1_linear", ["0", "1", "2", "tst"], seed=cfg.seed)
    subset = (1,)
    ss_train, ss_eval = rep_seed(cfg, 0).spawn(2)
    train = sample_dataset(scm, ["0", "1", "2"], n_train // 3, behavior_policy(), seed=_int_seed(ss_train))
    tau_tr = fit_pooled_cate(train, subset, "linear_wls")
    intercept, slopes = linear_cate_coefficients(scm, "tst", (0, 1, 2))
    theta_star = slopes[[0, 2]]
    x_eval = simulate(scm, "tst", n_eval, UniformPolicy(), _int_seed(ss_eval))["x"]
    truth = intercept + x_eval @ slopes
    table = Table("few_shot", FEW_SHOT_COLUMNS)
    for m in cfg.sample_sizes:
        mse_c, mse_u, err = [], [], []
        for rep in range(cfg.reps):
            ss = rep_seed(cfg, 1, m, rep)
            d_test = sample_dataset(scm, ["tst"], int(m), UniformPolicy(), seed=_int_seed(ss))
            try:
                o = test_pseudo_outcomes(d_test, _int_seed(ss))
                fm = few_shot_fit(d_test, tau_tr, subset, pseudo=o)
                um = unconstrained_fit(d_test, pseudo=o)
            except EinvError:
                continue
            mse_c.append(np.mean((fm.effect(x_eval) - truth) ** 2))
            mse_u.append(np.mean((um.effect(x_eval) - truth) ** 2))
            err.append(float(np.abs(fm.theta_n[0] - theta_star).max()))
        table.add(m=int(m), reps=len(mse_c), mse_constrained=float(np.mean(mse_c)),
                  mse_unconstrained=float(np.mean(mse_u)), theta_error=float(np.mean(err)))
    table.summary = {"theta_star": theta_star.tolist(), "subset": list(subset)}
    return table


def run_experiment(cfg: BenchConfig) -> Table:
    if cfg.experiment == "rejection_rates":
        return run_rejection_experiment(cfg)
    if cfg.experiment == "zero_shot_loeo":
        return run_loeo_experiment(cfg)
    return run_few_shot_sweep(cfg)


# -- acceptance checks ------------------------------------------------------------------------

def check_thresholds(table: Table) -> list[str]:
    """Human-readable list of violated thresholds (empty when all hold)."""
    bad = []
    if table.kind == "rates":
        for r in table.rows:
            where = f"{r['setting']}/{r['method']}/{r['subset']}/n={r['n']}: rate {r['rejection_rate']:.3f}"
            invariant = r["subset"] == "{X2}"
            if r["method"] == "wald" and invariant and r["setting"] != "example1_nl_effect" and r["n"] == 2000:
                if not 0.025 <= r["rejection_rate"] <= 0.085:
                    bad.append(where + " outside [0.025, 0.085]")
            if r["method"] == "wald" and invariant and r["setting"] == "example1_nl_effect" and r["n"] == 8000:
                if not r["rejection_rate"] > 0.10:
                    bad.append(where + " not above 0.10")
            if r["method"] == "dr" and invariant and r["n"] == 8000 and r["rejection_rate"] > 0.10:
                bad.append(where + " above 0.10")
            if r["method"] == "wald" and not invariant and r["setting"] == "example1_linear" and r["n"] == 8000:
                if r["rejection_rate"] < 0.9:
                    bad.append(where + " below 0.9")
    elif table.kind == "loeo":
        s = table.summary
        if not s["wins"] > s["envs"] / 2:
            bad.append(f"e-inv beats full-set in {s['wins']} of {s['envs']} environments (no majority)")
    elif table.kind == "few_shot":
        for r in table.rows:
            if r["m"] == 50 and r["mse_constrained"] > r["mse_unconstrained"]:
                bad.append(f"m=50: constrained MSE {r['mse_constrained']:.4f} > unconstrained {r['mse_unconstrained']:.4f}")
            if r["m"] >= 10_000 and r["theta_error"] > 0.1:
                bad.append(f"m={r['m']}: theta error {r['theta_error']:.4f} > 0.1")
    return bad


# -- report writing ------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return "" if v is None else str(v)


def table_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for r in table.rows:
        w.writerow([_fmt(r[c]) for c in table.columns])
    return buf.getvalue()


_PALETTE = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]


def _svg_panels(panels: list, y_label: str, x_label: str, y_max: float | None = None) -> str:
    """Static line chart: ``panels`` is a list of ``(title, {series: [(x, y), ...]})``."""
    pw, ph, margin = 320, 240, 45
    legend_h = 18 * max((len(s) for _, s in panels), default=1)
    width = margin + len(panels) * (pw + margin)
    height = ph + 2 * margin + legend_h
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for i, (title, series) in enumerate(panels):
        x0 = margin + i * (pw + margin)
        y0 = margin
        xs = sorted({x for pts in series.values() for x, _ in pts})
        ys = [y for pts in series.values() for _, y in pts]
        top = y_max if y_max is not None else (max(ys) if ys else 1.0) or 1.0
        bottom = min(0.0, min(ys)) if ys else 0.0
        span = top - bottom or 1.0

        def px(x):
            return x0 + (pw * (xs.index(x) / (len(xs) - 1)) if len(xs) > 1 else pw / 2)

        def py(y):
            return y0 + ph - ph * (y - bottom) / span

        parts.append(f'<text x="{x0 + pw / 2:.1f}" y="{y0 - 10}" text-anchor="middle">{title}</text>')
        parts.append(f'<rect x="{x0}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
        for x in xs:
            parts.append(f'<text x="{px(x):.1f}" y="{y0 + ph + 14}" text-anchor="middle">{x}</text>')
        for frac in (0.0, 0.5, 1.0):
            val = bottom + frac * span
            parts.append(f'<text x="{x0 - 4}" y="{py(val) + 4:.1f}" text-anchor="end">{val:.2g}</text>')
        parts.append(f'<text x="{x0 + pw / 2:.1f}" y="{y0 + ph + 30}" text-anchor="middle">{x_label}</text>')
        for j, (name, pts) in enumerate(sorted(series.items())):
            colour = _PALETTE[j % len(_PALETTE)]
            pts = sorted(pts)
            path = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in pts)
            parts.append(f'<polyline points="{path}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
            for x, y in pts:
                parts.append(f'<circle cx="{px(x):.1f}" cy="{py(y):.1f}" r="2.5" fill="{colour}"/>')
            ly = y0 + ph + 40 + 16 * j
            parts.append(f'<rect x="{x0}" y="{ly - 8}" width="10" height="3" fill="{colour}"/>')
            parts.append(f'<text x="{x0 + 14}" y="{ly - 4}">{name}</text>')
    parts.append(f'<text x="12" y="{margin + ph / 2}" transform="rotate(-90 12 {margin + ph / 2})" text-anchor="middle">{y_label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def table_svg(table: Table) -> str:
    if table.kind == "rates":
        panels = []
        for setting in dict.fromkeys(r["setting"] for r in table.rows):
            for method in dict.fromkeys(r["method"] for r in table.rows):
                series: dict = {}
                for r in table.select(setting=setting, method=method):
                    series.setdefault(r["subset"], []).append((r["n"], r["rejection_rate"]))
                if series:
                    panels.append((f"{setting} ({method})", series))
        return _svg_panels(panels, "rejection rate", "n", y_max=1.0)
    if table.kind == "few_shot":
        series = {
            "constrained": [(r["m"], r["mse_constrained"]) for r in table.rows],
            "unconstrained": [(r["m"], r["mse_unconstrained"]) for r in table.rows],
        }
        return _svg_panels([("CATE mean squared error", series)], "MSE", "m")
    series = {
        "e-inv": [(i, r["einv_value"]) for i, r in enumerate(table.rows)],
        "full set": [(i, r["fullset_value"]) for i, r in enumerate(table.rows)],
        "random": [(i, r["random_value"]) for i, r in enumerate(table.rows)],
    }
    return _svg_panels([("held-out environment values", series)], "relative value", "environment")


def write_report(table: Table, out_dir, formats: Sequence[str] = ("csv", "json", "svg"), name: str | None = None) -> list[Path]:
    """Write the table; raises before touching the disk when it is empty."""
    if len(table) == 0:
        raise ValueError("refusing to write an empty table")
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise ValueError(f"unknown formats {sorted(unknown)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = name or table.kind
    written = []
    for fmt in formats:
        path = out_dir / f"{stem}.{fmt}"
        if fmt == "csv":
            text = table_csv(table)
        elif fmt == "json":
            text = json.dumps({"kind": table.kind, "columns": table.columns, "rows": table.rows, "summary": table.summary}, indent=2) + "\n"
        else:
            text = table_svg(table)
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written
