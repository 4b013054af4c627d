import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xcflow.functionals import (
    DomainError,
    J_density,
    J_functional,
    J_rhs_density,
    antisym12,
    compute_T,
    decomposition,
    detP_power,
    eta_functional,
    eta_rhs_density,
    half_density_from_E,
    logdetP_rhs,
    sample_functionals,
    trace_from_logdet,
    vnorm_sq,
)
from xcflow.grid import GridGeometry, GridSpec, random_metric
from xcflow.presets import build_preset
from xcflow.tensor_core import random_spd
from xcflow.verify import random_einstein_data


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_decomposition_identities(seed):
    rng = np.random.default_rng(seed)
    P, D = random_einstein_data(rng, 20, definite=bool(seed % 2))
    V = np.linalg.inv(P)
    dec = compute_T(P, D, V)
    assert np.allclose(np.einsum("nij,nijk->nk", V, dec.E), 0, atol=1e-9)
    assert np.allclose(np.einsum("njk,nijk->ni", V, dec.E), 0, atol=1e-9)
    lhs = vnorm_sq(antisym12(dec.T), V)
    rhs = vnorm_sq(antisym12(dec.E), V) + vnorm_sq(dec.Ttr, V)
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


def test_trace_from_logdet_matches_on_grid():
    G = GridGeometry(GridSpec(n=24), random_metric(GridSpec(n=24), eps=0.05, seed=1))
    b = G.bundle
    m = b.mask()
    with np.errstate(divide="ignore", invalid="ignore"):
        dlog = G.nabla(b.detP, "") / b.detP[..., None]
    second = trace_from_logdet(b.P_up, dlog)[m]
    first = decomposition(G).Ttr
    mid = np.abs(b.detP[m]) > 0.2 * np.abs(b.detP).max()
    assert np.max(np.abs(first[mid] - second[mid])) < 1e-2 * np.max(np.abs(first[mid]))


def test_space_form_values():
    geom = build_preset("hyperbolic_solvable:1,1")[1]
    assert J_density(geom) == pytest.approx(0, abs=1e-14)
    assert J_rhs_density(geom) == pytest.approx(0, abs=1e-14)
    assert eta_functional(geom, 0.5) == pytest.approx(1.0)
    # eta density on a space form: (1 - 2 eta) detP^eta H with T = 0
    for eta in (1 / 3, 0.5, 1.0, 2.0):
        assert eta_rhs_density(geom, eta) == pytest.approx((1 - 2 * eta) * 3)
    assert logdetP_rhs(geom) == pytest.approx(-6.0)


def test_nil_values():
    geom = build_preset("nil")[1]
    assert eta_functional(geom, 1.0) == pytest.approx(3 / 64)
    assert eta_functional(geom, 1 / 3) == pytest.approx((3 / 64) ** (1 / 3))
    # detP > 0 but P indefinite: J is defined and AM-GM fails
    assert J_density(geom) == pytest.approx((0.25) / 3 - (3 / 64) ** (1 / 3))
    assert J_density(geom) < 0


def test_fractional_powers_need_positive_detP():
    with pytest.raises(DomainError):
        detP_power(np.array([-1.0, 2.0]), 0.5)
    assert detP_power(-2.0, 3.0) == -8.0
    with pytest.raises(DomainError):
        eta_functional(build_preset("su2_round")[1], 0.5)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_half_density_is_nonnegative(seed):
    rng = np.random.default_rng(seed)
    base = build_preset("hyperbolic_solvable:1,3")[1]
    X = base.with_metric(random_spd(rng, (), 0.4, 2.5))
    if not np.all(X.bundle.sec > 0):
        return
    lhs = float(eta_rhs_density(X, 0.5))
    assert lhs == pytest.approx(float(half_density_from_E(X)), rel=1e-10, abs=1e-12)
    assert lhs >= -1e-12
    assert J_rhs_density(X) <= 1e-12
    assert J_functional(X) >= -1e-14


def test_sample_row_names():
    s = sample_functionals(build_preset("hyperbolic_solvable:1,2")[1], 0.0)
    row = s.as_row()
    assert {"eta_0p333333", "eta_0p5", "eta_1", "eta_2", "P_integral", "J"} <= set(row)
    su2 = sample_functionals(build_preset("su2_round")[1], 0.0).as_row()
    assert np.isnan(su2["eta_0p5"]) and su2["eta_1"] == pytest.approx(-1.0)
