import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from einv.bench import behavior_policy
from einv.data import Dataset
from einv.exceptions import MultiLevelTreatmentUnsupported, SingleEnvironment
from einv.policies import LogisticPolicy
from einv.synth import EnvParams, ScmConfig, sample_dataset
from einv.wald import build_wald_design, wald_effect_covariance, wald_einv_test

# fixed fixture: two environments, one covariate
FIX_ENV = ["a"] * 6 + ["b"] * 6
FIX_X = np.array([-1.2, -0.4, 0.1, 0.7, 1.5, 2.2, -1.8, -0.9, 0.0, 0.6, 1.1, 1.9])
FIX_T = np.array([0, 1, 0, 1, 1, 0, 1, 0, 1, 0, 1, 1])
FIX_Y = np.array([0.3, 1.9, -0.2, 2.4, 3.1, 1.0, 0.2, -1.1, 1.6, 0.9, 2.8, 3.9])
FIX_P = np.array([0.4, 0.55, 0.5, 0.62, 0.7, 0.25, 0.35, 0.6, 0.45, 0.5, 0.66, 0.8])


def fixture_dataset():
    return Dataset.from_arrays(FIX_ENV, FIX_X[:, None], FIX_T, FIX_Y, p_obs=FIX_P)


def spreadsheet_wald(hc, with_x):
    """Row-by-row WLS and sandwich, written independently of the package."""
    n = len(FIX_Y)
    rows, weights = [], []
    for i in range(n):
        u = 1.0 if FIX_ENV[i] == "b" else 0.0
        c = FIX_T[i] - 0.5
        x = FIX_X[i]
        if with_x:
            rows.append([1.0, x, u, u * x, c, c * x, c * u, c * u * x])
        else:
            rows.append([1.0, x, u, u * x, c, c * u])
        weights.append(0.5 / FIX_P[i])
    X = np.array(rows)
    w = np.array(weights)
    xtwx = sum(w[i] * np.outer(X[i], X[i]) for i in range(n))
    xtwy = sum(w[i] * X[i] * FIX_Y[i] for i in range(n))
    inv = np.linalg.inv(xtwx)
    b = inv @ xtwy
    p = X.shape[1]
    meat = np.zeros((p, p))
    for i in range(n):
        r = FIX_Y[i] - X[i] @ b
        if hc == "hc3":
            r /= 1.0 - w[i] * X[i] @ inv @ X[i]
        meat += (w[i] * r) ** 2 * np.outer(X[i], X[i])
    cov = inv @ meat @ inv
    blk = slice(6, 8) if with_x else slice(5, 6)
    return float(b[blk] @ np.linalg.solve(cov[blk, blk], b[blk]))


# with S={X1} one (environment, arm) cell has leverage 1, where hc3 is undefined
@pytest.mark.parametrize("hc, subset", [("hc0", (0,)), ("hc0", ()), ("hc3", ())])
def test_fixture_matches_spreadsheet(hc, subset):
    rep = wald_einv_test(fixture_dataset(), subset, hc=hc)
    assert rep.statistic == pytest.approx(spreadsheet_wald(hc, bool(subset)), rel=1e-6)
    assert rep.dof == 1 + len(subset)


def test_single_environment_refused():
    ds = Dataset.from_arrays(["a"] * 12, FIX_X[:, None], FIX_T, FIX_Y, p_obs=FIX_P)
    with pytest.raises(SingleEnvironment):
        wald_einv_test(ds, (0,))


def test_multilevel_refused():
    t = FIX_T.copy()
    t[0] = 2
    ds = Dataset.from_arrays(FIX_ENV, FIX_X[:, None], t, FIX_Y, p_obs=FIX_P)
    with pytest.raises(MultiLevelTreatmentUnsupported):
        wald_einv_test(ds, (0,))


def test_reference_policy_must_read_s_only(two_env_data):
    with pytest.raises(ValueError):
        wald_einv_test(two_env_data, (1,), tilde_pi=LogisticPolicy([0.0, 0.2], subset=(0,)))
    rep = wald_einv_test(two_env_data, (1,), tilde_pi=LogisticPolicy([0.0, 0.2], subset=(1,)))
    assert 0.0 <= rep.p_value <= 1.0


def test_dof_and_design_shape():
    scm = ScmConfig.random("example1_linear", ["a", "b", "c"], seed=2)
    ds = sample_dataset(scm, None, 300, behavior_policy(), seed=2)
    for s in [(), (1,), (0, 2), (0, 1, 2)]:
        wd = build_wald_design(ds, s)
        assert wd.dof == 2 * (1 + len(s))
        assert wd.design.shape[1] == 3 * 4 + 3 * (1 + len(s))
        assert wald_einv_test(ds, s).dof == wd.dof


@given(st.lists(st.floats(-3, 3), min_size=8, max_size=8), st.integers(0, 2**31 - 1))
def test_invariant_to_environment_main_effects(shift, seed):
    # adding a per-environment linear main effect changes nothing: it lies in the design span
    scm = ScmConfig.random("example1_linear", ["a", "b"], seed=seed % 1000)
    ds = sample_dataset(scm, None, 150, behavior_policy(), seed=seed)
    coef = np.array(shift).reshape(2, 4)
    x1 = np.column_stack([np.ones(ds.n), ds.x])
    y2 = ds.y + (x1 * coef[ds.env]).sum(axis=1)
    ds2 = Dataset(ds.env, ds.x, ds.t, y2, ds.env_labels, p_obs=ds.p_obs)
    a, b = wald_einv_test(ds, (1,)), wald_einv_test(ds2, (1,))
    assert b.statistic == pytest.approx(a.statistic, rel=1e-6, abs=1e-8)


def test_row_order_irrelevant(two_env_data):
    perm = np.random.default_rng(0).permutation(two_env_data.n)
    # keep environment "0" first so the reference level is unchanged
    perm = np.concatenate([perm[two_env_data.env[perm] == 0], perm[two_env_data.env[perm] == 1]])
    shuffled = two_env_data.take(perm)
    assert wald_einv_test(shuffled, (1,)).statistic == pytest.approx(wald_einv_test(two_env_data, (1,)).statistic, rel=1e-8)


def test_effect_covariance_block(two_env_data):
    b, v = wald_effect_covariance(two_env_data, (1,))
    assert b.shape == (2,) and v.shape == (2, 2)
    assert np.all(np.linalg.eigvalsh(v) > 0)


def test_estimated_propensity_flagged(two_env_data):
    ds = Dataset(two_env_data.env, two_env_data.x, two_env_data.t, two_env_data.y, two_env_data.env_labels,
                 p_obs=two_env_data.p_obs, propensity_source="fitted")
    assert "propensity_estimated" in wald_einv_test(ds, (1,)).diagnostics


def test_alpha_zero_never_rejects(two_env_data):
    assert not wald_einv_test(two_env_data, (0,), alpha=0.0).reject


def test_coin_flip_labels_level():
    rejections = 0
    reps = 500
    scm = ScmConfig("example1_linear", {"a": EnvParams(1.0, 0.5, -1.0, 0.0)})
    for r in range(reps):
        one = sample_dataset(scm, None, 600, behavior_policy(), seed=r)
        labels = np.random.default_rng([r, 1]).integers(0, 2, one.n)
        ds = Dataset.from_arrays(labels.astype(str), one.x, one.t, one.y, p_obs=one.p_obs)
        rejections += wald_einv_test(ds, (1,)).reject
    assert 0.025 <= rejections / reps <= 0.085


def test_power_against_x1():
    # {X1} slopes -1/36 vs 11/36: a clear violation of invariance
    scm = ScmConfig("example1_linear", {"0": EnvParams(-1.5, 0.5, 1.0, 0.0), "1": EnvParams(1.5, 0.5, 1.0, 0.0)})
    reps = 60
    hits = 0
    for r in range(reps):
        ds = sample_dataset(scm, None, 4000, behavior_policy(), seed=100 + r)
        hits += wald_einv_test(ds, (0,)).reject
    assert hits / reps >= 0.9
