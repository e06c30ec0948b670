"""Test the parametric distribution families."""
import math

import numpy as np
import pytest
from scipy import stats

from msfit.dist import (
    CureParams,
    DistributionSpec,
    GenGammaParams,
    LinkedDistribution,
    apply_links,
    cure_cdf,
    gengamma_cdf,
    gengamma_logpdf,
    get_family,
    quantile,
    sample,
)
from msfit.exceptions import ConfigError, DomainError
from msfit.model import CovariateDesign

LOG_PHI0 = math.log(0.3989422804014327)


@pytest.mark.parametrize(
    ("Q", "expected"),
    [(0.0, 0.5), (1.0, 1 - math.exp(-1)), (-1.0, math.exp(-1))],
)
def test_gengamma_cdf_at_one(Q, expected):
    assert gengamma_cdf(1.0, GenGammaParams(0.0, 1.0, Q)) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("Q", [-9e-6, -1e-6, 1e-6, 9e-6])
def test_gengamma_cdf_is_continuous_in_Q(Q):
    t = np.geomspace(0.1, 100.0, 31)
    near = gengamma_cdf(t, GenGammaParams(0.1, 0.9, Q))
    at = gengamma_cdf(t, GenGammaParams(0.1, 0.9, 0.0))
    lognormal = stats.norm.cdf((np.log(t) - 0.1) / 0.9)
    assert np.max(np.abs(near - at)) < 1e-6
    assert np.max(np.abs(at - lognormal)) < 1e-6


@pytest.mark.parametrize(
    ("Q", "family", "params"),
    [
        (0.0, "lognormal", {"meanlog": 0.4, "sdlog": 0.7}),
        (1.0, "weibull", {"shape": 1 / 0.7, "scale": math.exp(0.4)}),
        (0.7, "gamma", {"shape": 1 / 0.49, "rate": math.exp(-0.4) / 0.49}),
    ],
)
def test_gengamma_reduces_to_special_cases(Q, family, params):
    t = np.linspace(0.05, 10.0, 50)
    general = get_family("gengamma").cdf(t, mu=0.4, sigma=0.7, Q=Q)
    assert np.max(np.abs(general - get_family(family).cdf(t, **params))) < 1e-8


def test_gengamma_logpdf_values():
    assert gengamma_logpdf(1.0, GenGammaParams(0.0, 1.0, 0.0)) == pytest.approx(LOG_PHI0)
    assert gengamma_logpdf(1.0, GenGammaParams(0.0, 1.0, 1.0)) == pytest.approx(-1.0)


def test_gengamma_logpdf_matches_cdf_derivative():
    params = GenGammaParams(0.3, 0.8, 0.5)
    h = 1e-5
    numeric = (gengamma_cdf(2.0 + h, params) - gengamma_cdf(2.0 - h, params)) / (2 * h)
    assert math.exp(gengamma_logpdf(2.0, params)) == pytest.approx(numeric, abs=1e-6)


def test_gengamma_rejects_nonpositive_time():
    with pytest.raises(DomainError):
        gengamma_cdf(0.0, GenGammaParams(0.0, 1.0, 1.0))
    with pytest.raises(DomainError):
        GenGammaParams(0.0, -1.0, 1.0)


def test_cure_cdf():
    base = {"meanlog": 0.0, "sdlog": 1.0}
    assert cure_cdf(1.0, CureParams(0.3, base), "lognormal") == pytest.approx(0.35)
    assert cure_cdf(2.5, CureParams(1.0, base), "lognormal") == 0.0
    plain = get_family("lognormal").cdf(2.5, **base)
    assert cure_cdf(2.5, CureParams(0.0, base), "lognormal") == pytest.approx(plain)
    with pytest.raises(DomainError):
        CureParams(1.5, base)


def test_cure_logsf_tends_to_log_p():
    family = get_family("gengamma", cure=True)
    value = family.logsf(1e6, mu=0.0, sigma=1.0, Q=1.0, p=0.25)
    assert value == pytest.approx(math.log(0.25))


def test_quantile_values():
    assert quantile(0.5, DistributionSpec("lognormal"), {"meanlog": 0.0, "sdlog": 1.0}) == pytest.approx(1.0)
    u = 1 - math.exp(-1)
    gengamma = {"mu": 0.0, "sigma": 1.0, "Q": 1.0}
    assert quantile(u, DistributionSpec("gengamma"), gengamma) == pytest.approx(1.0)
    cured = {**gengamma, "p": 0.6}
    assert np.isinf(quantile(0.5, DistributionSpec("gengamma", cure=True), cured))


def test_quantile_inverts_cdf_for_negative_Q():
    family = get_family("gengamma")
    u = np.array([0.1, 0.5, 0.9])
    t = family.quantile(u, mu=0.4, sigma=0.6, Q=-0.7)
    assert family.cdf(t, mu=0.4, sigma=0.6, Q=-0.7) == pytest.approx(u)


def test_sample_cure_p_one_never_happens(rng):
    draws = sample(
        DistributionSpec("lognormal", cure=True),
        {"meanlog": 0.0, "sdlog": 1.0, "p": 1.0},
        rng,
        1000,
    )
    assert np.all(np.isinf(draws))


def test_sample_weibull_mean(rng):
    n = 100_000
    draws = sample(DistributionSpec("weibull"), {"shape": 1.0, "scale": 1.0}, rng, n)
    assert abs(draws.mean() - 1.0) < 3 / math.sqrt(n)


def test_sample_gengamma_matches_cdf(rng):
    params = GenGammaParams(0.2, 0.7, 0.4)
    draws = sample(DistributionSpec("gengamma"), params.as_dict(), rng, 10_000)
    result = stats.kstest(draws, lambda x: gengamma_cdf(x, params))
    assert result.pvalue > 0.01


@pytest.mark.parametrize(
    ("family", "params"),
    [
        ("gamma", {"shape": 2.0, "rate": 0.5}),
        ("weibull", {"shape": 1.5, "scale": 3.0}),
        ("lognormal", {"meanlog": 1.0, "sdlog": 0.5}),
        ("gengamma", {"mu": 1.0, "sigma": 0.5, "Q": 0.5}),
        ("exponential", {"rate": 0.4}),
    ],
)
def test_family_mean_matches_samples(rng, family, params):
    dist = get_family(family)
    draws = dist.sample(rng, 200_000, **params)
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - float(dist.mean(**params))) < 5 * se


def test_get_family_aliases_and_unknown():
    assert get_family("log-normal").name == "lognormal"
    assert get_family("gengamma", cure=True).parameters == ("mu", "sigma", "Q", "p")
    with pytest.raises(ConfigError):
        get_family("pareto")


def test_spec_rejects_unknown_parameter_link():
    with pytest.raises(ConfigError):
        DistributionSpec("gamma", links={"mu": ("gender",)})


def test_spec_label_and_dict():
    spec = DistributionSpec("lognormal", cure=True, links={"p": ("age", "gender")})
    assert spec.label == "lognormal-cure[p:age+gender]"
    assert DistributionSpec.from_dict(spec.to_dict()) == spec


def test_apply_links_zero_coefficients_keeps_baseline():
    design = CovariateDesign(names=("z",))
    spec = DistributionSpec("gengamma", links={"mu": ("z",)})
    params = apply_links(spec, [0.7, 0.0, math.log(1.3), 0.2], {"z": 5.0}, design)
    assert params["mu"] == pytest.approx([0.7])
    assert params["sigma"] == pytest.approx([1.3])
    assert params["Q"] == pytest.approx([0.2])


def test_apply_links_log_and_logit():
    design = CovariateDesign(names=("z",))
    sigma_spec = DistributionSpec("gengamma", links={"sigma": ("z",)})
    params = apply_links(sigma_spec, [0.0, 0.0, math.log(2.0), 0.0], {"z": 1.0}, design)
    assert params["sigma"] == pytest.approx([2.0])

    cure_spec = DistributionSpec("lognormal", cure=True, links={"p": ("z",)})
    params = apply_links(cure_spec, [0.0, 0.0, 0.0, 1.0], {"z": 1.0}, design)
    assert params["p"] == pytest.approx([1 / (1 + math.exp(-1))])


def test_apply_links_unknown_covariate():
    with pytest.raises(ConfigError):
        apply_links(DistributionSpec("gamma", links={"rate": ("age",)}), [0, 0, 0], {}, CovariateDesign())


def test_linked_distribution_layout():
    design = CovariateDesign(names=("gender",), levels={"gender": ("F", "M")})
    linked = LinkedDistribution(DistributionSpec("weibull", links={"scale": ("gender",)}), design)
    assert linked.names == ("shape", "scale", "scale:gender=M")
    assert linked.transforms == ("log", "log", "log")
    theta = linked.theta_from_natural({"shape": 2.0, "scale": 3.0, "scale:gender=M": 0.5})
    assert theta == pytest.approx([math.log(2.0), math.log(3.0), 0.5])
    assert linked.natural_baselines(theta) == pytest.approx({"shape": 2.0, "scale": 3.0})
    Z = np.array([[0.0], [1.0]])
    assert linked.resolve(theta, Z)["scale"] == pytest.approx([3.0, 3.0 * math.exp(0.5)])


def test_linked_distribution_requires_covariates():
    design = CovariateDesign(names=("z",))
    linked = LinkedDistribution(DistributionSpec("gamma", links={"rate": ("z",)}), design)
    with pytest.raises(ConfigError):
        linked.resolve(np.zeros(linked.n_coef))
    with pytest.raises(ConfigError):
        linked.theta_from_natural({"shape": 1.0})


def test_linked_initial_is_finite():
    linked = LinkedDistribution(DistributionSpec("gengamma", cure=True), CovariateDesign())
    theta = linked.initial([1.0, 2.0, 3.0, 4.0], [True, False, True, False])
    assert np.all(np.isfinite(theta))
    assert 0 < linked.natural_baselines(theta)["p"] < 1
