import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxdtr.categorical import cond_matrix, exact_joint, marginalize
from proxdtr.estimators import fit_contingency, nuca_joint
from proxdtr.identification import (
    CellEmptyError,
    IdInputsK2,
    SingularityError,
    build_id_inputs,
    build_stage_tables,
    extract_bridges,
    identify_general_k,
    identify_k2,
    invert,
    population_tables,
)
from proxdtr.oracle import counterfactual_joint_gformula, latent_gformula
from proxdtr.simulator import ProximalTemplate, random_proximal_net, sample

from conftest import unconfound


@pytest.fixture(scope="module")
def bundled_inputs(net):
    return population_tables(net)


def test_population_matches_gformula(net, bundled_inputs):
    truth = counterfactual_joint_gformula(net)
    cf = identify_k2(bundled_inputs)
    assert np.abs(cf.joint - truth.joint).max() < 1e-10
    assert np.abs(cf.marginal - truth.marginal).max() < 1e-10
    assert cf.provenance == "proxy"
    diag = cf.diagnostics
    assert len(diag.condition) == 4 + 16
    assert diag.out_of_range == 0 and diag.normalization_error < 1e-10


def test_all_population_columns_defined(bundled_inputs):
    assert bundled_inputs.filled_columns == 0
    assert isinstance(bundled_inputs, IdInputsK2)
    assert bundled_inputs.M_WZ.shape == (2, 2, 2, 2, 4, 4)
    assert bundled_inputs.M_Wy1Z1.shape == (2, 2, 2, 4, 2)
    np.testing.assert_allclose(bundled_inputs.M_WZ.sum(axis=-2), 1.0, atol=1e-12)
    np.testing.assert_allclose(bundled_inputs.M_Wy1Z1.sum(axis=(-3, -2)), 1.0, atol=1e-12)


def test_pinv_equals_inverse_on_square_inputs(bundled_inputs):
    a = identify_k2(bundled_inputs, "inverse")
    b = identify_k2(bundled_inputs, "pinv")
    assert np.abs(a.joint - b.joint).max() < 1e-10


def test_general_recursion_is_the_two_stage_formula(bundled_inputs):
    levels, _ = identify_general_k(bundled_inputs)
    cf = identify_k2(bundled_inputs)
    np.testing.assert_array_equal(levels[2], cf.joint)
    np.testing.assert_array_equal(levels[1], cf.marginal)


def test_hand_assembled_product_for_one_cell(bundled_inputs):
    t = bundled_inputs
    y0, a1, a2, y1, y2 = 1, 0, 1, 1, 0
    value = (
        t.R_y2[y0, y1, a1, a2, y2]
        @ np.linalg.inv(t.M_WZ[y0, y1, a1, a2])
        @ t.M_Wy1Z1[y0, a1, y1]
        @ np.linalg.inv(t.M_W1Z1[y0, a1])
        @ t.v_W1[y0]
    )
    assert identify_k2(t).joint[y0, a1, a2, y1, y2] == pytest.approx(value, abs=1e-13)


def test_bridges(net, bundled_inputs):
    b = extract_bridges(bundled_inputs)
    # summing the two-stage bridge over y2 gives the one-stage bridge
    assert np.abs(b.h21.sum(axis=4) - b.h11[:, :, None]).max() < 1e-10
    cf = identify_k2(bundled_inputs)
    recomposed = np.einsum("iabjkw,iw->iabjk", b.h21, bundled_inputs.v)
    np.testing.assert_allclose(recomposed, cf.joint, atol=1e-15)
    # contracting h22 with P(W2bar | U1bar, ...) reproduces a density in y2
    joint = exact_joint(net)
    for y0, y1, a1, a2 in np.ndindex(2, 2, 2, 2):
        ctx = {"Y0": y0, "Y1": y1, "A1": a1, "A2": a2}
        w_u = cond_matrix(joint, ["W1", "W2"], ["U0", "U1"], ctx).entries
        total = sum(b.h22[y0, y1, a1, a2, y2] @ w_u for y2 in range(2))
        np.testing.assert_allclose(total, 1.0, atol=1e-8)


def test_identity_matrices_pass_rows_through(bundled_inputs):
    t = bundled_inputs
    M = {k: np.broadcast_to(np.eye(m.shape[-1]), m.shape).copy() for k, m in t.M.items()}
    eye = IdInputsK2(t.K, t.cards, t.R, M, t.N, t.v)
    b = extract_bridges(eye)
    np.testing.assert_allclose(b.h22, t.R_y2, atol=0)
    np.testing.assert_allclose(b.h11, t.R_y1, atol=0)


def test_unconfounded_net_collapses_to_observed_regression(net):
    plain = unconfound(net)
    obs = marginalize(exact_joint(plain), plain.observed)
    # Z and W carry no information here, so only the pseudoinverse applies
    with pytest.raises(SingularityError):
        identify_k2(build_id_inputs(obs), "inverse")
    cf = identify_k2(build_id_inputs(obs), "pinv")
    np.testing.assert_allclose(cf.joint, nuca_joint(obs).joint, atol=1e-10)
    np.testing.assert_allclose(cf.joint, counterfactual_joint_gformula(plain).joint, atol=1e-10)


def test_z_state_permutation_leaves_result_unchanged(bundled_inputs):
    t = bundled_inputs
    perm2 = np.array([2, 0, 3, 1])
    perm1 = np.array([1, 0])
    R = {1: t.R[1][..., perm1], 2: t.R[2][..., perm2]}
    M = {1: t.M[1][..., perm1], 2: t.M[2][..., perm2]}
    N = {1: t.N[1][..., perm1]}
    shuffled = IdInputsK2(t.K, t.cards, R, M, N, t.v)
    assert np.abs(identify_k2(shuffled).joint - identify_k2(t).joint).max() < 1e-12


def test_singular_and_shape_errors():
    with pytest.raises(SingularityError, match="condition number"):
        invert(np.ones((2, 2)) / 2, "inverse", " here")
    with pytest.raises(ValueError, match="square"):
        invert(np.ones((3, 2)) / 3, "inverse")
    with pytest.raises(ValueError):
        invert(np.eye(2), "lu")
    inv, cond, smin = invert(np.array([[0.9, 0.2], [0.1, 0.8]]), "inverse")
    np.testing.assert_allclose(inv @ np.array([[0.9, 0.2], [0.1, 0.8]]), np.eye(2), atol=1e-14)


def test_empty_cells_and_fill(net):
    small = fit_contingency(sample(net, 300, (4, 4)))
    with pytest.raises(CellEmptyError, match="empty conditioning cell"):
        build_id_inputs(small)
    filled = build_id_inputs(small, on_empty="uniform")
    assert filled.filled_columns > 0
    smoothed = fit_contingency(sample(net, 300, (4, 4)), alpha=1.0)
    assert build_id_inputs(smoothed).filled_columns == 0


def test_estimates_may_leave_unit_interval_without_clipping(net):
    data = fit_contingency(sample(net, 25000, (8, 0)))
    cf = identify_k2(build_id_inputs(data))
    assert cf.diagnostics.out_of_range == cf.out_of_range
    clipped = identify_k2(build_id_inputs(data), clip=True)
    assert clipped.out_of_range == 0
    assert clipped.normalization_error() < 1e-12


def _check_against_gformula(net, K, mode):
    levels, diag = identify_general_k(population_tables(net, K), mode)
    truth = latent_gformula(exact_joint(net), ProximalTemplate(K).roles)
    for k in truth:
        assert np.abs(levels[k] - truth[k]).max() < 1e-8
    assert diag.normalization_error < 1e-8


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10**6))
def test_random_two_stage_nets(seed):
    net = random_proximal_net(ProximalTemplate(2), (5, seed))
    _check_against_gformula(net, 2, "inverse")
    b = extract_bridges(population_tables(net))
    assert np.abs(b.h21.sum(axis=4) - b.h11[:, :, None]).max() < 1e-8


@settings(max_examples=4, deadline=None)
@given(st.integers(0, 10**6))
def test_random_three_stage_nets(seed):
    _check_against_gformula(random_proximal_net(ProximalTemplate(3), (6, seed)), 3, "inverse")


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 10**6))
def test_over_identified_nets(seed):
    t = ProximalTemplate(2, card_Z=3, card_W=3)
    net = random_proximal_net(t, (7, seed))
    _check_against_gformula(net, 2, "pinv")
    # three proxy states against two latent states: square but rank deficient
    with pytest.raises(SingularityError):
        identify_k2(population_tables(net), "inverse")


def test_stage_tables_for_one_stage(net):
    t = ProximalTemplate(1)
    one = random_proximal_net(t, 3)
    tables = build_stage_tables(marginalize(exact_joint(one), one.observed), 1)
    levels, _ = identify_general_k(tables)
    truth = latent_gformula(exact_joint(one), t.roles)
    np.testing.assert_allclose(levels[1], truth[1], atol=1e-10)
