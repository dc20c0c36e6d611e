import numpy as np
import pytest

from einv.data import Dataset
from einv.dr import (
    ConstantOutcome,
    ConstantPropensity,
    DRConfig,
    NuisanceModels,
    crossfit_pseudo_outcomes,
    dr_einv_test,
    dr_einv_tests,
    fit_nuisances,
    gcm_test,
    pseudo_outcomes,
    stratified_split,
)
from einv.exceptions import EnvironmentTooSmall, MultiLevelTreatmentUnsupported, SingleEnvironment
from einv.policies import bernoulli
from einv.synth import ScmConfig, sample_dataset


def test_linear_regressor_exact():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 2))
    t = np.tile([0, 1], 20)
    y = 1.0 + x @ [2.0, -1.0] + 3.0 * t
    ds = Dataset.from_arrays(["a"] * 40, x, t, y, p_obs=np.full(40, 0.5))
    nm = fit_nuisances(ds, "linear")
    np.testing.assert_allclose(nm.mu.predict(np.array(["a"] * 40, dtype=object), x, 1), 4.0 + x @ [2.0, -1.0], atol=1e-8)


def test_given_bernoulli_propensity():
    scm = ScmConfig.random("example1_linear", ["a", "b"], seed=1)
    ds = sample_dataset(scm, None, 200, bernoulli(0.5), seed=1)
    np.testing.assert_allclose(fit_nuisances(ds, "linear").propensity(ds), 0.5)


def test_tiny_environment():
    ds = Dataset.from_arrays(["a"] * 10 + ["b"], np.arange(11.0)[:, None], [0, 1] * 5 + [1], np.arange(11.0), p_obs=np.full(11, 0.5))
    with pytest.raises(EnvironmentTooSmall):
        fit_nuisances(ds)


def test_pseudo_outcome_collapse():
    ds = Dataset.from_arrays(["a", "a"], np.zeros((2, 1)), [1, 0], [1.0, 1.0], p_obs=[0.5, 0.5])
    o = pseudo_outcomes(ds, NuisanceModels(ConstantOutcome(0.0), ConstantPropensity(0.5)))
    np.testing.assert_allclose(o, [2.0, -2.0])


def test_multilevel_refused():
    ds = Dataset.from_arrays(["a", "b"] * 6, np.zeros((12, 1)), [0, 1, 2] * 4, np.zeros(12), p_obs=np.full(12, 1 / 3))
    with pytest.raises(MultiLevelTreatmentUnsupported):
        dr_einv_test(ds, ())


def test_split_is_stratified(two_env_data):
    a, b = stratified_split(two_env_data, 3)
    assert len(np.intersect1d(a, b)) == 0 and len(a) + len(b) == two_env_data.n
    counts = np.bincount(two_env_data.env[a])
    np.testing.assert_array_equal(counts, [500, 500])


def test_gcm_zero_residual_products():
    x = np.repeat(np.arange(5.0), 4)[:, None]
    env = np.tile([0, 1], 10)
    o = 2.0 * x[:, 0]
    rep = gcm_test(o, x, env, regressor="linear")
    assert rep.statistic == pytest.approx(0.0, abs=1e-20)
    assert rep.p_value == pytest.approx(1.0)


def test_gcm_single_env():
    with pytest.raises(SingleEnvironment):
        gcm_test(np.zeros(5), np.zeros((5, 1)), np.zeros(5, dtype=int))


def test_gcm_detects_dependence():
    rng = np.random.default_rng(0)
    env = rng.integers(0, 3, 3000)
    x = rng.normal(size=(3000, 1))
    o = x[:, 0] + 0.3 * env + rng.normal(size=3000)
    rep = gcm_test(o, x, env)
    assert rep.reject and rep.dof == 2


def test_determinism_and_shared_split(two_env_data):
    a = dr_einv_test(two_env_data, (1,), split_seed=4)
    b = dr_einv_test(two_env_data, (1,), split_seed=4)
    assert a == b
    many = dr_einv_tests(two_env_data, [(0,), (1,)], split_seed=4)
    assert many[1].statistic == pytest.approx(a.statistic)
    assert a.diagnostics["n_fit"] + a.diagnostics["n_test"] == two_env_data.n


def test_config_variants(two_env_data):
    for cfg in (DRConfig(regressor="linear"), DRConfig(regressor="knn", k=15), DRConfig(propensity="logistic", gcm_regressor="linear")):
        rep = dr_einv_test(two_env_data, (1,), config=cfg)
        assert 0.0 <= rep.p_value <= 1.0
        assert rep.dof == 1
    assert DRConfig().with_(k=5).k == 5


def test_crossfit_covers_all_rows(two_env_data):
    o = crossfit_pseudo_outcomes(two_env_data, 0, "linear")
    assert o.shape == (two_env_data.n,) and np.isfinite(o).all()


def test_power_against_effect_shift():
    # the effect is 1 in environment a and 1.5 in b; the GCM sees the mean shift
    rng = np.random.default_rng(8)
    n = 4000
    env = np.repeat(["a", "b"], n // 2)
    x = rng.normal(size=(n, 2))
    t = rng.integers(0, 2, n)
    y = x[:, 0] + t * (1.0 + 0.5 * (env == "b") + 0.5 * x[:, 1]) + rng.normal(size=n)
    ds = Dataset.from_arrays(env, x, t, y, p_obs=np.full(n, 0.5))
    assert dr_einv_test(ds, (1,)).reject
    assert dr_einv_test(ds, (0, 1)).reject
