import json

import numpy as np
import pytest
from scipy import stats

from tools.cvine_tool import (
    CVineModel,
    Marginal,
    VineCopula,
    check_order,
    copula_log_density,
    deserialize,
    edge_label,
    fit_cvine,
    gaussian_cvine,
    log_density,
    load_model,
    normal_scores,
    position_names,
    psi_decomposition,
    recommended_t_max,
    sample,
    sample_copula,
    save_model,
    serialize,
    summary,
    truncate,
)
from tools.dataset_tool import Dataset
from tools.errors import DataError, DomainError, ModelFormatError
from tools.numerics_tool import RngStream, kendall_tau, ks_uniform_statistic
from tools.pair_copula_tool import INDEPENDENCE, INDEPENDENCE_COPULA, FamilyKind, PairCopula, PairCopulaFamily

GAUSSIAN_ONLY = [INDEPENDENCE, PairCopulaFamily(FamilyKind.GAUSSIAN)]
ORDER = (2, 0, 3, 1)


@pytest.fixture(scope="module")
def model(small_data):
    return fit_cvine(small_data, ORDER, t_max=4, rng=RngStream(5))


@pytest.fixture(scope="module")
def gaussian_model(small_data):
    return fit_cvine(small_data, ORDER, t_max=4, rng=RngStream(5), candidates=GAUSSIAN_ONLY)


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def test_fit_shapes(model, small_data):
    assert model.d == 4
    assert model.truncation_level == 4
    assert [len(edges) for edges in model.trees] == [4, 3, 2, 1]
    assert model.names == small_data.names
    assert model.n_train == small_data.n_rows
    assert model.response_prevalence == pytest.approx(small_data.response.mean())


def test_positions_are_root_first(model):
    assert model.position_columns() == [-1, 1, 3, 0, 2]
    assert position_names(model) == ["y", "x2", "x4", "x1", "x3"]
    assert edge_label(model, 0, 0) == "x2,y"
    assert edge_label(model, 1, 0) == "x4,x2|y"


def test_correlated_pairs_get_dependent_first_tree_edges(model):
    # x1-x2 and x3-x4 are correlated and every covariate is shifted by the class
    assert all(not pc.is_independence for pc in model.trees[0])


def test_t_max_one_leaves_a_single_fitted_tree(small_data):
    m = fit_cvine(small_data, ORDER, t_max=1, rng=RngStream(5))
    assert m.truncation_level == 1
    assert all(pc.is_independence for edges in m.trees[1:] for pc in edges)


def test_refit_with_same_seed_is_identical(small_data, model):
    again = fit_cvine(small_data, ORDER, t_max=4, rng=RngStream(5))
    assert serialize(again) == serialize(model)


def test_check_order_accepts_permutations_only():
    assert check_order([2, 0, 1], 3) == (2, 0, 1)
    with pytest.raises(DataError):
        check_order([0, 1, 1], 3)
    with pytest.raises(DataError):
        check_order([0, 1], 3)


def test_fit_rejects_small_constant_or_single_class_data(small_data):
    with pytest.raises(DataError):
        fit_cvine(small_data.subset(range(20)), ORDER, 2)
    flat = small_data.features.copy()
    flat[:, 1] = 3.0
    with pytest.raises(DataError):
        fit_cvine(Dataset(flat, small_data.response, small_data.names), ORDER, 2)
    with pytest.raises(DataError):
        fit_cvine(Dataset(small_data.features, np.zeros(small_data.n_rows), small_data.names), ORDER, 2)
    with pytest.raises(DataError):
        fit_cvine(small_data, (0, 1, 2, 2), 2)
    with pytest.raises(DomainError):
        fit_cvine(small_data, ORDER, 5)


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------

def test_truncate_keeps_lower_trees(model):
    t2 = truncate(model, 2)
    assert t2.truncation_level == 2
    assert t2.trees[:2] == model.trees[:2]
    assert all(pc.is_independence for edges in t2.trees[2:] for pc in edges)
    assert t2.marginals is model.marginals


@pytest.mark.parametrize("t", [1, 2, 3])
def test_truncated_full_fit_samples_like_a_direct_fit(model, small_data, t):
    direct = fit_cvine(small_data, ORDER, t_max=t, rng=RngStream(5))
    truncated = truncate(model, t)
    assert serialize(truncated) == serialize(direct)
    a = sample(truncated, 500, RngStream(17))
    b = sample(direct, 500, RngStream(17))
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.response, b.response)


def test_truncate_above_fitted_level_fails(small_data):
    m = fit_cvine(small_data, ORDER, t_max=2, rng=RngStream(5))
    with pytest.raises(DomainError):
        truncate(m, 3)


def test_vine_rejects_dependence_above_truncation():
    rho = PairCopula(PairCopulaFamily(FamilyKind.GAUSSIAN), 0.5)
    indep = PairCopula(INDEPENDENCE)
    with pytest.raises(DomainError):
        VineCopula(((rho, rho), (rho,)), 1)
    assert VineCopula(((rho, rho), (indep,)), 1).dim == 3


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_sample_shape_and_determinism(model, small_data):
    a = sample(model, 300, RngStream(9))
    b = sample(model, 300, RngStream(9))
    assert a.n_rows == 300
    assert a.names == small_data.names
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.response, b.response)
    assert set(np.unique(a.response)) <= {0, 1}


def test_sample_stays_within_training_range(model, small_data):
    syn = sample(model, 2000, RngStream(1))
    assert np.all(syn.features.min(axis=0) >= small_data.features.min(axis=0))
    assert np.all(syn.features.max(axis=0) <= small_data.features.max(axis=0))


def test_sample_reproduces_prevalence(model):
    syn = sample(model, 5000, RngStream(2))
    pi = model.response_prevalence
    assert abs(syn.response.mean() - pi) <= 4.0 * np.sqrt(pi * (1 - pi) / 5000)


def test_sample_reproduces_dependence(model, small_data):
    syn = sample(model, 4000, RngStream(3))
    real_tau = kendall_tau(small_data.features[:, 0], small_data.features[:, 1])
    syn_tau = kendall_tau(syn.features[:, 0], syn.features[:, 1])
    assert syn_tau == pytest.approx(real_tau, abs=0.08)


def test_sample_reproduces_covariate_response_dependence(model, small_data):
    syn = sample(model, 5000, RngStream(12))
    for j in range(small_data.n_features):
        real = stats.kendalltau(small_data.features[:, j], small_data.response, variant="b")[0]
        fake = stats.kendalltau(syn.features[:, j], syn.response, variant="b")[0]
        assert fake == pytest.approx(real, abs=0.05), small_data.names[j]


def test_first_tree_links_covariates_only_through_the_response(small_data):
    m = fit_cvine(small_data, ORDER, t_max=1, rng=RngStream(5))
    syn = sample(m, 4000, RngStream(4))
    # x1 and x2 are linked only through the class in tree 1
    assert abs(kendall_tau(syn.features[:, 0], syn.features[:, 1])) < kendall_tau(
        small_data.features[:, 0], small_data.features[:, 1]
    )


def test_copula_sample_has_uniform_margins(correlation_factory):
    vine = gaussian_cvine(correlation_factory(5, 0))
    u = sample_copula(vine, 5000, RngStream(6))
    for k in range(u.shape[1]):
        assert ks_uniform_statistic(u[:, k]) < 0.03


def test_gaussian_cvine_reproduces_correlation(correlation_factory):
    rho = correlation_factory(5, 1)
    u = sample_copula(gaussian_cvine(rho), 20_000, RngStream(7))[:, ::-1]
    est = np.corrcoef(normal_scores(u), rowvar=False)
    assert np.max(np.abs(est - rho)) < 0.03


def test_gaussian_cvine_of_identity_is_independent():
    vine = gaussian_cvine(np.eye(4))
    assert all(pc.is_independence for edges in vine.trees for pc in edges)


def test_sample_rejects_empty_request(model):
    with pytest.raises(DomainError):
        sample(model, 0, RngStream(1))


# ---------------------------------------------------------------------------
# density and log-odds
# ---------------------------------------------------------------------------

def test_log_density_is_finite(model, small_data):
    x = small_data.features[:10]
    values = log_density(model, x, small_data.response[:10])
    assert values.shape == (10,)
    assert np.all(np.isfinite(values))
    assert isinstance(log_density(model, x[0], 1), float)


def _two_covariate_model(tree_1, tree_2, seed=0):
    gen = np.random.default_rng(seed)
    marginals = (
        Marginal("x1", np.sort(gen.normal(size=200))),
        Marginal("x2", np.sort(gen.gamma(2.0, size=200))),
    )
    vine = VineCopula((tree_1, tree_2), 2)
    return CVineModel((0, 1), marginals, "y", 0.3, 200, vine)


def test_gaussian_copula_log_density_matches_closed_form():
    rho = np.array([[1.0, 0.55], [0.55, 1.0]])
    u = np.random.default_rng(3).uniform(0.02, 0.98, size=(50, 2))
    z = stats.norm.ppf(u)
    expected = stats.multivariate_normal(cov=rho).logpdf(z) - stats.norm.logpdf(z).sum(axis=1)
    assert np.max(np.abs(copula_log_density(gaussian_cvine(rho), u) - expected)) <= 1e-8


def test_log_density_of_a_gaussian_covariate_pair():
    rho = 0.55
    m = _two_covariate_model(
        (INDEPENDENCE_COPULA, INDEPENDENCE_COPULA), (PairCopula(PairCopulaFamily(FamilyKind.GAUSSIAN), rho),)
    )
    x = np.column_stack([np.linspace(-1.5, 1.5, 20), np.linspace(0.5, 4.0, 20)])
    # order (0, 1): position 1 is x2, position 2 is x1
    z = stats.norm.ppf(np.column_stack([m.marginals[1].cdf(x[:, 1]), m.marginals[0].cdf(x[:, 0])]))
    copula = stats.multivariate_normal(cov=[[1.0, rho], [rho, 1.0]]).logpdf(z) - stats.norm.logpdf(z).sum(axis=1)
    margins = m.marginals[0].logpdf(x[:, 0]) + m.marginals[1].logpdf(x[:, 1])
    for y, p_y in ((1, 0.3), (0, 0.7)):
        expected = copula + margins + np.log(p_y)
        assert np.max(np.abs(log_density(m, x, y) - expected)) <= 1e-8


def test_log_density_of_an_independence_model_is_the_margins():
    m = _two_covariate_model((INDEPENDENCE_COPULA, INDEPENDENCE_COPULA), (INDEPENDENCE_COPULA,))
    x = np.column_stack([np.linspace(-1.0, 1.0, 15), np.linspace(1.0, 3.0, 15)])
    y = np.arange(15) % 2
    margins = m.marginals[0].logpdf(x[:, 0]) + m.marginals[1].logpdf(x[:, 1])
    expected = margins + np.where(y == 1, np.log(0.3), np.log(0.7))
    assert np.max(np.abs(log_density(m, x, y) - expected)) <= 1e-12
    assert np.allclose(psi_decomposition(m, x).psi, np.log(0.3 / 0.7))


def test_psi_equals_log_density_ratio(gaussian_model, small_data):
    x = small_data.features[:100]
    psi = psi_decomposition(gaussian_model, x).psi
    ratio = log_density(gaussian_model, x, 1) - log_density(gaussian_model, x, 0)
    assert np.max(np.abs(psi - ratio)) <= 1e-8


def test_untruncated_psi_sums_every_term(gaussian_model, small_data):
    dec = psi_decomposition(gaussian_model, small_data.features[:50])
    assert np.array_equal(dec.truncated(gaussian_model.d), dec.psi)


def test_truncated_psi_matches_truncated_model(model, small_data):
    x = small_data.features[:50]
    full = psi_decomposition(model, x)
    short = psi_decomposition(truncate(model, 2), x)
    assert np.allclose(short.psi, full.truncated(2), atol=1e-12)
    assert np.all(short.terms[:, 2:] == 0.0)


def test_marginal_round_trip():
    m = Marginal("x", np.sort(np.random.default_rng(0).normal(size=100)))
    p = m.cdf(m.quantile_table[10:90])
    assert np.allclose(m.quantile(p), m.quantile_table[10:90])


def test_marginal_builds_its_kde_once():
    table = np.sort(np.random.default_rng(1).normal(size=150))
    m = Marginal("x", table)
    assert m.kde is m.kde
    grid = np.linspace(-2.0, 2.0, 9)
    expected = stats.gaussian_kde(table, bw_method="silverman").logpdf(grid)
    assert np.allclose(m.logpdf(grid), expected, rtol=1e-12)
    assert m.logpdf(0.0).shape == (1,)


# ---------------------------------------------------------------------------
# structure helpers
# ---------------------------------------------------------------------------

def test_recommended_t_max_keeps_sensitive_out_of_roots():
    # x0 sits at position 2 of a 4-covariate order: it would be the root of tree 4
    assert recommended_t_max([2, 0, 1, 3], [0]) == 3
    assert recommended_t_max([0, 1, 2, 3], [0]) == 4
    assert recommended_t_max([1, 2, 3, 0], [0]) == 1
    assert recommended_t_max([0, 1, 2, 3], []) == 4


def test_summary_counts_dependent_edges(model):
    rows = summary(model)
    assert [r["tree"] for r in rows] == [1, 2, 3, 4]
    assert rows[0]["root"] == "y"
    assert all(0 <= r["dependent"] <= r["edges"] for r in rows)
    assert all(len(r["edge_details"]) == r["dependent"] for r in rows)
    labels = [label for label, _ in rows[0]["edge_details"]]
    assert labels == [edge_label(model, 0, j) for j in range(4) if not model.trees[0][j].is_independence]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_serialize_round_trip_preserves_sampling(model):
    restored = deserialize(serialize(model))
    assert serialize(restored) == serialize(model)
    a = sample(model, 100, RngStream(8))
    b = sample(restored, 100, RngStream(8))
    assert np.array_equal(a.features, b.features)


def test_save_and_load(model, tmp_path):
    path = save_model(model, str(tmp_path / "nested" / "model.json"))
    assert serialize(load_model(path)) == serialize(model)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda doc: doc.update(version=99),
        lambda doc: doc.update(truncation_level=0),
        lambda doc: doc["trees"][0][0].update(family="student"),
        lambda doc: doc["trees"][0][0].update(theta=None),
        lambda doc: doc.pop("marginals"),
    ],
)
def test_deserialize_rejects_bad_documents(model, mutate):
    doc = json.loads(serialize(model))
    mutate(doc)
    with pytest.raises(ModelFormatError):
        deserialize(json.dumps(doc))


def test_load_missing_model(tmp_path):
    with pytest.raises(ModelFormatError):
        load_model(str(tmp_path / "absent.json"))
