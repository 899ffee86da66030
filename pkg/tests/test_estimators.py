import numpy as np
import pytest

from proxdtr.categorical import exact_joint, marginalize
from proxdtr.estimators import (
    ContingencyTable,
    estimate_nuca,
    estimate_oracle,
    estimate_proxy,
    estimate_proxy_loglinear,
    fit_contingency,
    nuca_joint,
)
from proxdtr.identification import CellEmptyError
from proxdtr.loglinear import fit_loglinear, margin_subsets, max_margin_discrepancy
from proxdtr.oracle import optimal_regime, regret
from proxdtr.simulator import Dataset, sample

from conftest import unconfound


@pytest.fixture(scope="module")
def table_100k(net):
    return fit_contingency(sample(net, 100_000, (21, 0)))


def test_counts_sum_to_rows(net):
    data = sample(net, 1234, 5)
    table = fit_contingency(data)
    assert table.n == 1234 and table.counts.shape == (2,) * 9
    assert table.names == net.observed
    assert table.joint().probs.sum() == pytest.approx(1.0)


def test_smoothing_empty_dataset_is_uniform(net):
    empty = Dataset(net.observed, np.zeros((0, 9), dtype=np.int8), cards=(2,) * 9)
    table = fit_contingency(empty, alpha=1.0)
    np.testing.assert_allclose(table.joint().probs, 1 / 512)
    assert fit_contingency(empty).joint().probs.sum() == 0.0
    with pytest.raises(ValueError):
        ContingencyTable(table.variables, table.counts, alpha=-1.0)


def test_empirical_table_converges(table_100k, observed_joint):
    # expected total variation is at most half of sqrt(cells / n)
    tv = 0.5 * np.abs(table_100k.joint().probs - observed_joint.probs).sum()
    assert tv < 0.5 * np.sqrt(512 / table_100k.n)


def test_population_consistency_ladder(net, observed_joint, spectrum):
    assert regret(net, estimate_proxy(observed_joint).regime) == pytest.approx(0.0, abs=1e-12)
    full = exact_joint(net)
    assert regret(net, estimate_oracle(full).regime) == pytest.approx(0.0, abs=1e-12)
    nuca = regret(net, estimate_nuca(observed_joint).regime)
    assert nuca == pytest.approx(0.09159, abs=5e-5)
    assert spectrum.contains(nuca, 1e-15)


def test_nuca_is_valid_without_confounding(net):
    plain = unconfound(net)
    obs = marginalize(exact_joint(plain), plain.observed)
    nuca = estimate_nuca(obs).regime
    assert regret(plain, nuca) == pytest.approx(0.0, abs=1e-12)
    assert estimate_proxy(obs, mode="pinv").regime == nuca


def test_nuca_stage_two_rule_is_conditional_mean_argmax(observed_joint):
    cf = nuca_joint(observed_joint)
    p = marginalize(observed_joint, ["Y0", "A1", "Y1", "A2", "Y2"]).probs
    mean = p[..., 1] / p.sum(-1)  # [y0, a1, y1, a2]
    regime, _ = optimal_regime(cf)
    np.testing.assert_array_equal(regime.d2, mean.argmax(-1))


def test_nuca_empty_cells(net):
    small = fit_contingency(sample(net, 20, 1))
    with pytest.raises(CellEmptyError):
        estimate_nuca(small)
    cf = nuca_joint(small, on_empty="uniform")
    assert np.isfinite(cf.joint).all()


def test_saturated_loglinear_reproduces_table(table_100k):
    fit = fit_loglinear(table_100k, 9)
    assert fit.converged and fit.iterations == 1
    np.testing.assert_allclose(fit.joint().probs, table_100k.joint().probs, atol=1e-12)
    a = estimate_proxy(table_100k)
    b, _ = estimate_proxy_loglinear(table_100k, 9)
    assert a.regime == b.regime


def test_order_six_matches_all_margins(table_100k):
    fit = fit_loglinear(table_100k, 6)
    assert fit.converged
    target = table_100k.joint().probs
    assert max_margin_discrepancy(fit.joint().probs, target, 6) < 1e-8
    # lower-order margins are implied by the fitted ones
    for m in (2, 4, 5):
        assert max_margin_discrepancy(fit.joint().probs, target, m) < 1e-8
    assert fit.joint().probs.sum() == pytest.approx(1.0, abs=1e-10)


def test_margin_subsets_are_lexicographic():
    assert margin_subsets(4, 3) == [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]


def test_non_convergence_is_flagged(table_100k):
    fit = fit_loglinear(table_100k, 3, tol=0.0, max_iters=2)
    assert not fit.converged and fit.iterations == 2 and fit.max_discrepancy > 0


def test_order_bounds(table_100k):
    for bad in (1, 10):
        with pytest.raises(ValueError):
            fit_loglinear(table_100k, bad)


def test_estimated_regrets_lie_in_spectrum(net, table_100k, spectrum):
    for est in (estimate_proxy(table_100k), estimate_nuca(table_100k)):
        r = regret(net, est.regime)
        assert spectrum.regret_of(est.regime) == r
        assert spectrum.contains(r, 1e-15)


def test_same_dataset_same_regime(net):
    data = sample(net, 25_000, (3, 3))
    a = estimate_proxy(fit_contingency(data))
    b = estimate_proxy(fit_contingency(Dataset(data.variables, data.rows.copy())))
    assert a.regime == b.regime
