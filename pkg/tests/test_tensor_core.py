import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xcflow.tensor_core import (
    EPSILON,
    NonPositiveMetric,
    SingularTensor,
    det3,
    einstein_from_mu,
    generalized_eigenvalues,
    inv3,
    invert_sym2,
    kulkarni_nomizu,
    mu_contract_h,
    project_curvature,
    random_curvature,
    random_spd,
    require_positive_definite,
    riemann_symmetry_defect,
    space_form_riemann,
    sym2_to_vec,
    vec_to_sym2,
    volume_forms,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
matrices = arrays(np.float64, (3, 3), elements=finite)
seeds = st.integers(0, 2**32 - 1)


@given(matrices)
def test_det3_matches_numpy(m):
    assert det3(m) == pytest.approx(np.linalg.det(m), abs=1e-9 * (1 + np.abs(m).max() ** 3))


@given(seeds)
def test_batched_inverse(seed):
    rng = np.random.default_rng(seed)
    s = random_spd(rng, (5, 4))
    assert np.allclose(inv3(s) @ s, np.eye(3), atol=1e-10)
    assert np.allclose(det3(s), np.linalg.det(s))


def test_invert_sym2_rejects_singular():
    with pytest.raises(SingularTensor):
        invert_sym2(np.diag([1.0, 1.0, 0.0]))


def test_positive_definite_check():
    require_positive_definite(np.eye(3))
    with pytest.raises(NonPositiveMetric):
        require_positive_definite(np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(NonPositiveMetric):
        require_positive_definite(np.full((3, 3), np.nan))


@given(seeds)
def test_generalized_eigenvalues(seed):
    rng = np.random.default_rng(seed)
    g = random_spd(rng)
    s = random_spd(rng) - 2 * np.eye(3)
    expected = np.sort(np.linalg.eigvals(np.linalg.solve(g, s)).real)
    assert np.allclose(generalized_eigenvalues(s, g), expected, atol=1e-9)
    # contravariant input: eigenvalues of s^ij g_jk
    expected_up = np.sort(np.linalg.eigvals(s @ g).real)
    assert np.allclose(generalized_eigenvalues(s, g, upper=True), expected_up, atol=1e-9)


def test_sym2_vector_round_trip(rng):
    s = random_spd(rng, (7,))
    assert np.allclose(vec_to_sym2(sym2_to_vec(s)), s, rtol=1e-15, atol=1e-15)


def test_volume_forms_are_dual(rng):
    g = random_spd(rng)
    down, up = volume_forms(g)
    assert np.isclose(down[0, 1, 2] * up[0, 1, 2], 1.0)
    assert np.array_equal(np.sign(down), EPSILON)


@given(seeds)
@settings(max_examples=30)
def test_random_curvature_has_curvature_symmetries(seed):
    R = random_curvature(np.random.default_rng(seed), (4,))
    assert riemann_symmetry_defect(R) < 1e-12


@given(seeds)
@settings(max_examples=30)
def test_projection_is_idempotent_and_fixes_curvature(seed):
    rng = np.random.default_rng(seed)
    R = random_curvature(rng, (3,))
    assert np.allclose(project_curvature(R), R, atol=1e-13)
    noisy = R + 1e-3 * rng.standard_normal(R.shape)
    once = project_curvature(noisy)
    assert riemann_symmetry_defect(once) < 1e-13
    assert np.allclose(project_curvature(once), once, atol=1e-15)


@pytest.mark.parametrize("K", [-1.0, 1.0, 0.3])
def test_space_form_cross_curvature(K, rng):
    g = random_spd(rng)
    R = space_form_riemann(g, K)
    _, mu_up = volume_forms(g)
    # constant curvature K: P = -K g^-1, h = K^2 g
    assert np.allclose(einstein_from_mu(R, mu_up), -K * np.linalg.inv(g), atol=1e-12)
    assert np.allclose(mu_contract_h(R, mu_up), K**2 * g, atol=1e-12)


def test_kulkarni_nomizu_space_form_convention():
    g = np.eye(3)
    R = space_form_riemann(g, -1.0)
    # R_1212 = K (g_11 g_22 - g_12^2)
    assert R[0, 1, 0, 1] == -1.0
    assert np.array_equal(kulkarni_nomizu(g, g), -2 * R)


@given(seeds)
@settings(max_examples=30)
def test_h_is_detP_times_inverse_einstein(seed):
    rng = np.random.default_rng(seed)
    g = random_spd(rng)
    R = random_curvature(rng)
    _, mu_up = volume_forms(g)
    P = einstein_from_mu(R, mu_up)
    h = mu_contract_h(R, mu_up)
    detP = det3(P) * det3(g)
    assert np.allclose(P @ h, detP * np.eye(3), atol=1e-9 * (1 + abs(detP)))
