import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import BSpline

from rodshape.basis import (
    COMPONENTS,
    XI_REF,
    BasisConfig,
    RankDeficientFit,
    basis_row,
    basis_rows,
    clamped_uniform_knots,
    eval_strain,
    eval_strain_many,
    fit_coeffs,
)

L = 0.4
S1 = BasisConfig(L, {"k_x": 8, "k_y": 10, "k_z": 5, "p_z": 5})


def scipy_basis(n_ctrl, s):
    """Oracle: scipy's de Boor evaluation of each clamped uniform basis function."""
    t = clamped_uniform_knots(n_ctrl, L)
    out = np.empty(n_ctrl)
    for j in range(n_ctrl):
        c = np.zeros(n_ctrl)
        c[j] = 1.0
        out[j] = BSpline(t, c, 3)(s)
    return out


def test_knot_vector_clamped_uniform():
    t = clamped_uniform_knots(8, L)
    np.testing.assert_array_equal(t[:4], 0.0)
    np.testing.assert_array_equal(t[-4:], L)
    np.testing.assert_allclose(np.diff(t[3:-3]), L / 5)
    assert len(t) == 8 + 4


def test_config_sizes_and_blocks():
    assert S1.size == 28
    assert S1.active == ["k_x", "k_y", "k_z", "p_z"]
    assert S1.blocks["k_y"] == slice(8, 18)
    assert S1.blocks["p_z"] == slice(23, 28)


def test_config_rejects_too_few_control_points():
    with pytest.raises(ValueError):
        BasisConfig(L, {"k_x": 3})


def test_config_rejects_empty():
    with pytest.raises(ValueError):
        BasisConfig(L, {})


def test_row_at_base_is_first_basis_function():
    row = basis_row(S1, 0.0)
    for c in S1.active:
        block = row[COMPONENTS.index(c), S1.blocks[c]]
        expected = np.zeros(S1.n_ctrl[c])
        expected[0] = 1.0
        np.testing.assert_array_equal(block, expected)


def test_row_at_tip_is_last_basis_function():
    row = basis_row(S1, L)
    for c in S1.active:
        block = row[COMPONENTS.index(c), S1.blocks[c]]
        assert block[-1] == pytest.approx(1.0)
        np.testing.assert_allclose(block[:-1], 0.0, atol=1e-15)


def test_inactive_rows_are_zero():
    rows = basis_rows(S1, np.linspace(0, L, 17))
    for c in ("p_x", "p_y"):
        assert not rows[:, COMPONENTS.index(c)].any()


def test_row_only_touches_own_block():
    row = basis_row(S1, 0.123)
    for i, c in enumerate(COMPONENTS):
        for other, sl in S1.blocks.items():
            if other != c:
                assert not row[i, sl].any()


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, L))
def test_partition_of_unity_and_sparsity(s):
    row = basis_row(S1, s)
    for c in S1.active:
        r = row[COMPONENTS.index(c)]
        assert r.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.count_nonzero(r) <= 4
        assert np.all(r >= -1e-15)


def test_midspan_matches_de_boor_oracle():
    cfg = BasisConfig(L, {"k_y": 4})
    block = basis_row(cfg, L / 2)[1, cfg.blocks["k_y"]]
    np.testing.assert_allclose(block, scipy_basis(4, L / 2), atol=1e-15)
    # n_c = 4 is the single-span Bernstein basis: (1/8, 3/8, 3/8, 1/8) at the midpoint
    np.testing.assert_allclose(block, [1 / 8, 3 / 8, 3 / 8, 1 / 8], atol=1e-15)


@pytest.mark.parametrize("n_ctrl", [4, 5, 8, 10, 14])
def test_matches_scipy_bspline(n_ctrl):
    cfg = BasisConfig(L, {"k_x": n_ctrl})
    for s in np.linspace(0, L, 41):
        np.testing.assert_allclose(basis_row(cfg, s)[0], scipy_basis(n_ctrl, s), atol=1e-14)


def cox_de_boor(t, j, k, s):
    """Textbook recursion with 0/0 := 0; the closed right end joins the last span."""
    if k == 0:
        last = t[j + 1] == t[-1] and t[j] < t[j + 1]
        return 1.0 if t[j] <= s < t[j + 1] or (last and s == t[-1]) else 0.0
    out = 0.0
    if t[j + k] > t[j]:
        out += (s - t[j]) / (t[j + k] - t[j]) * cox_de_boor(t, j, k - 1, s)
    if t[j + k + 1] > t[j + 1]:
        out += (t[j + k + 1] - s) / (t[j + k + 1] - t[j + 1]) * cox_de_boor(t, j + 1, k - 1, s)
    return out


@pytest.mark.parametrize("n_ctrl", [4, 6, 10])
def test_matches_cox_de_boor_recursion(n_ctrl):
    cfg = BasisConfig(L, {"k_z": n_ctrl})
    t = clamped_uniform_knots(n_ctrl, L)
    for s in np.r_[np.linspace(0, L, 23), t[4:-4]]:
        expected = [cox_de_boor(t, j, 3, s) for j in range(n_ctrl)]
        np.testing.assert_allclose(basis_row(cfg, s)[2], expected, atol=1e-14)


def test_eval_strain_many_matches_basis_rows():
    rng = np.random.default_rng(3)
    q = rng.normal(size=S1.size)
    s = np.r_[0.0, rng.uniform(0, L, 50), L]
    np.testing.assert_allclose(eval_strain_many(S1, q, s), basis_rows(S1, s) @ q + XI_REF, atol=1e-13)


def test_local_support_overlap():
    cfg = BasisConfig(L, {"k_x": 10})
    prev = None
    for s in np.linspace(0, L, 200):
        support = set(np.flatnonzero(basis_row(cfg, s)[0]))
        if prev is not None:
            assert support & prev
        prev = support


def test_rejects_out_of_range_arclength():
    with pytest.raises(ValueError):
        basis_row(S1, -1e-6)
    with pytest.raises(ValueError):
        basis_row(S1, L + 1e-6)


def test_eval_strain_zero_is_reference():
    for s in np.linspace(0, L, 7):
        np.testing.assert_array_equal(eval_strain(S1, np.zeros(S1.size), s), XI_REF)


def test_constant_curvature_field():
    kappa = 2.5
    q = np.zeros(S1.size)
    q[S1.blocks["k_y"]] = kappa
    for s in np.linspace(0, L, 11):
        np.testing.assert_allclose(eval_strain(S1, q, s), [0, kappa, 0, 0, 0, 1], atol=1e-14)


def test_eval_strain_matches_oracle():
    rng = np.random.default_rng(0)
    q = rng.normal(size=S1.size)
    s = 0.1357 * L
    expected = XI_REF.copy()
    for c in S1.active:
        expected[COMPONENTS.index(c)] += scipy_basis(S1.n_ctrl[c], s) @ q[S1.blocks[c]]
    np.testing.assert_allclose(eval_strain(S1, q, s), expected, atol=1e-14)


def test_eval_strain_rejects_wrong_length():
    with pytest.raises(ValueError):
        eval_strain(S1, np.zeros(S1.size + 1), 0.1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, L))
def test_eval_strain_affine(seed, s):
    rng = np.random.default_rng(seed)
    q1, q2 = rng.normal(size=(2, S1.size))
    lhs = eval_strain(S1, q1 + q2, s) - eval_strain(S1, q2, s) - eval_strain(S1, q1, s) + XI_REF
    np.testing.assert_allclose(lhs, 0.0, atol=1e-13)


def test_fit_recovers_coefficients():
    rng = np.random.default_rng(1)
    q = rng.normal(size=S1.size)
    s = np.linspace(0, L, 60)
    q_hat, resid = fit_coeffs(S1, s, eval_strain_many(S1, q, s))
    np.testing.assert_allclose(q_hat, q, atol=1e-9)
    assert resid < 1e-10


def test_fit_reference_gives_zero():
    s = np.linspace(0, L, 40)
    q_hat, resid = fit_coeffs(S1, s, np.tile(XI_REF, (40, 1)))
    np.testing.assert_allclose(q_hat, 0.0, atol=1e-14)
    assert resid < 1e-13


def test_fit_quartic_residual_decreases_with_control_points():
    s = np.linspace(0, L, 200)
    field = np.tile(XI_REF, (len(s), 1))
    field[:, 1] = 40.0 * (s / L) ** 4 - 30.0 * (s / L) ** 2 + 5.0 * s / L
    residuals = []
    for n in range(6, 15):
        cfg = BasisConfig(L, {"k_y": n})
        residuals.append(fit_coeffs(cfg, s, field)[1])
    assert residuals[4] > 1e-6  # n_c = 10 cannot represent a quartic exactly
    assert all(b < a for a, b in zip(residuals, residuals[1:]))


def test_fit_rejects_rank_deficient_samples():
    s = np.full(30, 0.1)
    with pytest.raises(RankDeficientFit, match="k_y"):
        fit_coeffs(BasisConfig(L, {"k_y": 6}), s, np.tile(XI_REF, (30, 1)))


def test_config_round_trip():
    assert BasisConfig.from_dict(S1.to_dict()) == S1
