import numpy as np
import pytest

from tools.cvine_tool import gaussian_cvine, normal_scores, sample_copula
from tools.dataset_tool import Dataset
from tools.errors import DataError, DomainError, NumericError
from tools.forest_tool import ForestConfig
from tools.numerics_tool import RngStream, ols_fit, standardize
from tools.privacy_tool import (
    AIAConfig,
    CVineGenerator,
    MIAConfig,
    privacy_gain,
    run_aia,
    run_mia,
    select_targets,
    synthetic_features,
    block_independence_check,
    theoretical_beta,
)

TINY_MIA = MIAConfig(n_iter=4, size_raw_a=50, n_shadows=4, n_syn_a=3, size_raw_t=50, size_syn_t=50, n_syn_t=2)


class IndependentColumns:
    """Resample every column on its own, destroying all dependence."""

    def __call__(self, train, n_sets, size, rng):
        gen = rng.generator()
        out = []
        for _ in range(n_sets):
            m = train.matrix()
            cols = [m[gen.integers(0, train.n_rows, size=size), k] for k in range(m.shape[1])]
            out.append(Dataset(np.column_stack(cols[:-1]), cols[-1], train.names))
        return out


class FixedSet:
    def __init__(self, data):
        self.data = data

    def __call__(self, train, n_sets, size, rng):
        return [self.data] * n_sets


class Bootstrap:
    def __call__(self, train, n_sets, size, rng):
        gen = rng.generator()
        return [train.subset(gen.integers(0, train.n_rows, size=size)) for _ in range(n_sets)]


def block_rho(sizes, within=0.3):
    d = sum(sizes)
    rho = np.zeros((d, d))
    start = 0
    for size in sizes:
        rho[start:start + size, start:start + size] = within
        start += size
    np.fill_diagonal(rho, 1.0)
    return rho


def ols_on_vine(rho, tau, j, n=20_000, seed=0):
    u = sample_copula(gaussian_cvine(rho, truncation_level=tau), n, RngStream(seed))[:, ::-1]
    z = standardize(normal_scores(u))
    others = [k for k in range(rho.shape[0]) if k != j]
    return ols_fit(z[:, others], z[:, j]).coefficients


# ---------------------------------------------------------------------------
# closed-form coefficients
# ---------------------------------------------------------------------------

def test_identity_gives_zero_coefficients():
    result = theoretical_beta(np.eye(5), 2, 3)
    assert np.all(result.beta == 0.0)
    assert result.sigma2 == 1.0


def test_untruncated_matches_direct_solve(correlation_factory):
    rho = correlation_factory(6, 3)
    j = 2
    others = [k for k in range(6) if k != j]
    direct = np.linalg.lstsq(rho[np.ix_(others, others)], rho[others, j], rcond=None)[0]
    result = theoretical_beta(rho, j + 1, None)
    assert np.allclose(result.beta, direct, atol=1e-10)
    assert result.regressors == [1, 2, 4, 5, 6]


def test_zero_pattern_grows_by_one_per_level(correlation_factory):
    rho = correlation_factory(7, 4)
    d = 6
    for tau in range(1, d + 1):
        beta = theoretical_beta(rho, 1, tau).beta
        assert np.all(beta[: d - tau] == 0.0)
        assert np.count_nonzero(np.abs(beta) > 1e-12) == tau


def test_truncated_coefficients_match_sampled_vine(correlation_factory):
    rho = correlation_factory(7, 5)
    d, j_star = 6, 2
    tau = d + 1 - j_star
    theory = theoretical_beta(rho, j_star, tau).beta
    assert np.all(np.abs(theory[: d - tau]) <= 1e-12)
    empirical = ols_on_vine(rho, tau, j_star - 1, seed=1)
    assert np.max(np.abs(empirical - theory)) <= 0.03


def test_block_structure_hides_the_sensitive_variable():
    # positions: S={1}, K={2,3}, then four covariates and the response
    rho = block_rho([3, 5])
    d = 7
    tau = d + 1 - 3
    check = block_independence_check(rho, [2, 3], [1], tau)
    assert check["holds"]
    assert check["max_abs_beta"] <= 1e-12
    assert np.max(np.abs(ols_on_vine(rho, tau, 0, seed=2))) <= 0.03


def test_cross_block_link_breaks_the_guarantee():
    rho = block_rho([3, 5])
    rho[0, 7] = rho[7, 0] = 0.5
    check = block_independence_check(rho, [2, 3], [1], 5)
    assert not check["holds"]
    assert check["per_sensitive"][1] > 0.1


def test_closed_form_argument_checks(correlation_factory):
    rho = correlation_factory(5, 6)
    with pytest.raises(DomainError):
        theoretical_beta(rho, 2, 4)
    with pytest.raises(DomainError):
        theoretical_beta(rho, 6, 1)
    with pytest.raises(NumericError):
        theoretical_beta(np.ones((3, 3)), 1, 1)
    with pytest.raises(DomainError):
        theoretical_beta(np.array([[1.0, 0.2], [0.3, 1.0]]), 1, 1)
    with pytest.raises(DomainError):
        block_independence_check(block_rho([3, 5]), [1, 2], [1], 3)
    with pytest.raises(DomainError):
        block_independence_check(block_rho([3, 5]), [2, 3], [1], 6)


# ---------------------------------------------------------------------------
# targets and privacy gain
# ---------------------------------------------------------------------------

def ramp_data():
    x = np.column_stack([np.arange(1.0, 101.0), np.random.default_rng(0).normal(size=100)])
    return Dataset(x, np.arange(100) % 2, ("s", "other"))


def test_outlier_targets_are_the_extremes():
    rows = select_targets(ramp_data(), 0, "outlier", 4, RngStream(0))
    assert sorted(ramp_data().features[rows, 0]) == [1.0, 2.0, 99.0, 100.0]


def test_random_targets_are_seeded():
    a = select_targets(ramp_data(), 0, "random", 5, RngStream(3))
    b = select_targets(ramp_data(), 0, "random", 5, RngStream(3))
    assert np.array_equal(a, b)
    assert len(set(a.tolist())) == 5


def test_target_selection_errors():
    with pytest.raises(DataError):
        select_targets(ramp_data(), 0, "outlier", 7, RngStream(0))
    with pytest.raises(DomainError):
        select_targets(ramp_data(), 0, "median", 1, RngStream(0))
    with pytest.raises(DomainError):
        select_targets(ramp_data(), 2, "random", 1, RngStream(0))


@pytest.mark.parametrize(
    "tp,fp,expected",
    [(1.0, 1.0, 1.0), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (0.5, 0.5, 1.0), (0.0, 1.0, 2.0)],
)
def test_privacy_gain(tp, fp, expected):
    assert privacy_gain(tp, fp) == expected


# ---------------------------------------------------------------------------
# attribute inference
# ---------------------------------------------------------------------------

def test_independent_generator_leaks_noise_only(small_data):
    cfg = AIAConfig(n_iter=2, size_raw_t=300, size_syn_t=400, n_synth=5, bootstrap_size=200)
    report = run_aia(small_data, IndependentColumns(), 0, [3, 10], cfg, RngStream(1))
    assert report.mab <= 3.0 / np.sqrt(cfg.size_syn_t)
    assert report.wcab >= report.mab
    assert report.beta.shape == (4, 2, 5)
    assert report.skipped == 0


def test_exact_linear_synthetic_set_recovers_coefficients():
    gen = np.random.default_rng(4)
    x = gen.normal(size=(200, 3))
    x[:, 0] = 0.5 * x[:, 1] - 0.25 * x[:, 2]
    y = gen.integers(0, 2, size=200)
    data = Dataset(x, y, ("s", "a", "b"))
    sd = x.std(axis=0, ddof=1)
    expected = np.mean([0.5 * sd[1] / sd[0], 0.25 * sd[2] / sd[0], 0.0])

    cfg = AIAConfig(n_iter=1, size_raw_t=100, size_syn_t=200, n_synth=1, bootstrap_size=100)
    report = run_aia(data, FixedSet(data), 0, [0, 1], cfg, RngStream(2))
    assert report.mab == pytest.approx(expected, abs=1e-9)
    assert report.mr2 == pytest.approx(1.0)
    assert np.allclose(report.mse_synthetic, 0.0, atol=1e-12)


def test_aia_report_outputs(small_data):
    cfg = AIAConfig(n_iter=2, size_raw_t=200, size_syn_t=200, n_synth=3, bootstrap_size=100)
    report = run_aia(small_data, IndependentColumns(), 1, [5], cfg, RngStream(6))
    doc = report.to_dict()
    assert doc["targets"] == [5]
    assert doc["n_iter"] == 2 and doc["n_synth"] == 3
    assert len(doc["mse_real"]) == 1
    assert len(report.iteration_rows()) == 6
    assert report.per_set_mab().shape == (6,)


def test_constant_synthetic_sets_are_skipped(small_data):
    flat = Dataset(np.ones((50, 4)), np.arange(50) % 2, small_data.names)
    cfg = AIAConfig(n_iter=1, size_raw_t=100, size_syn_t=50, n_synth=2, bootstrap_size=50)
    with pytest.raises(NumericError):
        run_aia(small_data, FixedSet(flat), 0, [0], cfg, RngStream(0))


def test_aia_rejects_unknown_sensitive(small_data):
    with pytest.raises(DomainError):
        run_aia(small_data, IndependentColumns(), 4, [0], AIAConfig(), RngStream(0))


def test_aia_config_accepts_camel_case():
    cfg = AIAConfig.model_validate({"nIter": 3, "sizeSynT": 100})
    assert cfg.n_iter == 3 and cfg.size_syn_t == 100


# ---------------------------------------------------------------------------
# membership inference
# ---------------------------------------------------------------------------

def test_synthetic_features_layout(small_data):
    f = synthetic_features(small_data)
    assert f.shape == (5 * 5 + 10,)
    assert np.all(np.isfinite(f))


def test_mia_runs_balanced_challenges(small_data):
    report = run_mia(small_data, Bootstrap(), 7, TINY_MIA, RngStream(3), forest_cfg=ForestConfig(n_trees=10))
    assert report.n_challenges == 4
    assert sum(row["member"] for row in report.challenge_rows) == 2
    assert 0.0 <= report.privacy_gain <= 2.0
    assert report.to_dict()["adv_real"] == 1.0


def test_mia_is_seeded(small_data):
    a = run_mia(small_data, Bootstrap(), 7, TINY_MIA, RngStream(3), forest_cfg=ForestConfig(n_trees=10))
    b = run_mia(small_data, Bootstrap(), 7, TINY_MIA, RngStream(3), forest_cfg=ForestConfig(n_trees=10))
    assert a.to_dict() == b.to_dict()


def test_mia_needs_both_shadow_labels(small_data):
    cfg = TINY_MIA.model_copy(update={"n_shadows": 1})
    with pytest.raises(DataError):
        run_mia(small_data, Bootstrap(), 7, cfg, RngStream(3))


def test_cvine_generator_draws_requested_sets(small_data):
    sets = CVineGenerator([0, 1, 2, 3], t_max=2, truncation=1)(small_data, 2, 30, RngStream(5))
    assert len(sets) == 2
    assert all(s.n_rows == 30 and s.names == small_data.names for s in sets)
