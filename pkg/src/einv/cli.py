"""Command-line interface: ``einv {simulate,test,zero-shot,few-shot,bench}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import BenchConfig, check_thresholds, run_experiment, write_report
from .data import export_csv, format_subset, ingest_csv, parse_subset, read_covariates
from .dr import DRConfig, REGRESSORS, dr_einv_test
from .exceptions import EinvError
from .few_shot import few_shot_fit
from .policies import parse_policy
from .synth import VARIANTS, ScmConfig, sample_dataset
from .wald import HC_TYPES, wald_einv_test
from .zero_shot import ESTIMATORS, ZeroShotConfig, fit_pooled_cate, zero_shot_pipeline


def _write_json(obj: dict, path) -> None:
    text = json.dumps(obj, indent=2, default=lambda o: o.tolist() if hasattr(o, "tolist") else str(o))
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _labels(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def cmd_simulate(args) -> int:
    labels = _labels(args.envs or "0,1")
    if args.params:
        data = json.loads(Path(args.params).read_text(encoding="utf-8"))
        scm = ScmConfig.from_dict(data.get("scm", data))
        labels = _labels(args.envs) if args.envs else scm.labels
    elif args.variant == "intro":
        scm = ScmConfig.intro([float(e) for e in labels], seed=args.seed)
        labels = scm.labels
    else:
        scm = ScmConfig.random(args.variant, labels, seed=args.seed)
    behavior = parse_policy(args.behavior)
    ds = sample_dataset(scm, labels, args.n, behavior, seed=args.seed)
    out = Path(args.out)
    export_csv(ds, out)
    record = {"scm": scm.to_dict(), "behavior": behavior.to_dict(), "envs": labels, "n_per_env": args.n, "seed": args.seed}
    _write_json(record, out.with_suffix(".params.json"))
    print(f"wrote {ds.n} rows to {out}")
    return 0


def cmd_test(args) -> int:
    ds = ingest_csv(args.input, behavior_mode=args.behavior_mode)
    subset = parse_subset(args.subset, ds.d)
    if args.method == "wald":
        rep = wald_einv_test(ds, subset, args.alpha, q=args.tilde_q, hc=args.hc)
    else:
        rep = dr_einv_test(ds, subset, args.alpha, args.split_seed, DRConfig(regressor=args.regressor, propensity="given"))
    _write_json(rep.to_dict(), args.out)
    if args.out:
        verdict = "reject" if rep.reject else "accept"
        print(f"{format_subset(subset)}: statistic={rep.statistic:.4f} dof={rep.dof} p={rep.p_value:.4g} -> {verdict}")
    return 0


def cmd_zero_shot(args) -> int:
    train = ingest_csv(args.train, behavior_mode=args.behavior_mode)
    x_test = read_covariates(args.test_x)
    cfg = ZeroShotConfig(method=args.method, alpha=args.alpha, estimator=args.estimator, seed=args.seed)
    rep = zero_shot_pipeline(train, x_test, cfg)
    _write_json(rep.to_dict(), args.out)
    if args.out:
        print(f"selected {format_subset(rep.s_star)} from {len(rep.accepted_sets)} accepted set(s)")
    return 0


def cmd_few_shot(args) -> int:
    train = ingest_csv(args.train, behavior_mode=args.behavior_mode)
    test = ingest_csv(args.test)
    if args.subset is None:
        zs = zero_shot_pipeline(train, test.x, ZeroShotConfig(alpha=args.alpha, seed=args.seed))
        subset, chosen_by = zs.s_star, "zero-shot selection"
    else:
        subset, chosen_by = parse_subset(args.subset, train.d), "user"
    tau_tr = fit_pooled_cate(train, subset, "linear_wls")
    model = few_shot_fit(test, tau_tr, subset, seed=args.seed)
    _write_json({"subset": list(subset), "subset_label": format_subset(subset), "subset_source": chosen_by, "model": model.to_dict()}, args.out)
    if args.out:
        print(f"few-shot model on {format_subset(subset)}; theta = {np.round(model.theta_n[0], 4).tolist()}")
    return 0


def cmd_bench(args) -> int:
    cfg = BenchConfig.from_json(args.config) if args.config else BenchConfig()
    table = run_experiment(cfg)
    out = args.out or cfg.out or "bench_out"
    for path in write_report(table, out):
        print(f"wrote {path}")
    if args.assert_:
        bad = check_thresholds(table)
        for line in bad:
            print(f"VIOLATION {line}", file=sys.stderr)
        if bad:
            return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="einv", description="Effect-invariance tests and invariant policy learning.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate multi-environment training data")
    s.add_argument("--variant", choices=VARIANTS, default="example1_linear")
    s.add_argument("--envs", help="comma-separated labels (intro: values of e); default 0,1 or all in --params")
    s.add_argument("--n", type=int, default=1000, help="rows per environment")
    s.add_argument("--behavior", default="logistic:0.5,1,-0.5,0.3", help="uniform | constant:T | bernoulli:q | logistic:a,b,...")
    s.add_argument("--params", help="parameter JSON written by a previous simulate run")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("test", help="test one covariate subset for effect invariance")
    t.add_argument("--method", choices=("wald", "dr"), default="wald")
    t.add_argument("--subset", default="", help="1-based indices, e.g. '1,3'; empty for the empty set")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--tilde-q", type=float, default=0.5)
    t.add_argument("--hc", choices=HC_TYPES, default="hc3")
    t.add_argument("--regressor", choices=REGRESSORS, default="linear_knn")
    t.add_argument("--split-seed", type=int, default=0)
    t.add_argument("--behavior-mode", choices=("given", "fit_logistic"), default="given")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--out")
    t.set_defaults(func=cmd_test)

    z = sub.add_parser("zero-shot", help="select an e-invariant set and its greedy policy")
    z.add_argument("--train", required=True)
    z.add_argument("--test-x", required=True)
    z.add_argument("--method", choices=("wald", "dr"), default="wald")
    z.add_argument("--alpha", type=float, default=0.05)
    z.add_argument("--estimator", choices=ESTIMATORS)
    z.add_argument("--behavior-mode", choices=("given", "fit_logistic"), default="given")
    z.add_argument("--seed", type=int, default=0)
    z.add_argument("--out")
    z.set_defaults(func=cmd_zero_shot)

    f = sub.add_parser("few-shot", help="adapt the training CATE with a labelled test sample")
    f.add_argument("--train", required=True)
    f.add_argument("--test", required=True)
    f.add_argument("--subset", help="1-based indices; default: the zero-shot selection")
    f.add_argument("--alpha", type=float, default=0.05)
    f.add_argument("--behavior-mode", choices=("given", "fit_logistic"), default="given")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_few_shot)

    b = sub.add_parser("bench", help="run a benchmark experiment and write CSV/JSON/SVG")
    b.add_argument("--config", help="JSON mirroring BenchConfig fields")
    b.add_argument("--out", help="output directory")
    b.add_argument("--assert", dest="assert_", action="store_true", help="exit 2 on any threshold violation")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (EinvError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
