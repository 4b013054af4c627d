import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xcflow.curvature import MetricJet2, curvature_from_jet
from xcflow.flow import parabolic_cap
from xcflow.grid import (
    GridGeometry,
    GridSpec,
    MetricGrid,
    diff,
    diff2,
    divergence_residual,
    integrate,
    load_snapshot,
    random_metric,
    save_snapshot,
)
from xcflow.tensor_core import NonPositiveMetric, riemann_symmetry_defect

A = 0.15


def conformal(spec):
    """g = exp(2u) delta with u = A (cos x + cos y + cos z), plus its exact 2-jet."""
    X = np.stack(spec.coords(), axis=-1)
    u = A * np.cos(X).sum(-1)
    du = -A * np.sin(X)
    ddu = np.einsum("...k,kl->...kl", -A * np.cos(X), np.eye(3))
    e = np.exp(2 * u)[..., None, None]
    I = np.eye(3)
    g = e * I
    dg = 2 * e[..., None] * np.einsum("...k,ij->...kij", du, I)
    ddg = e[..., None, None] * np.einsum("...kl,ij->...klij",
                                         4 * np.einsum("...k,...l->...kl", du, du) + 2 * ddu, I)
    return g, MetricJet2(g, dg, ddg)


@pytest.mark.parametrize("order", [2, 4, 6])
def test_stencil_orders(order):
    errs = []
    for n in (16, 32):
        spec = GridSpec(n=n, order=order)
        x = spec.coords()[0]
        f = np.sin(2 * x) + np.cos(x)
        errs.append((np.max(np.abs(diff(f, 0, spec) - (2 * np.cos(2 * x) - np.sin(x)))),
                     np.max(np.abs(diff2(f, 0, spec) - (-4 * np.sin(2 * x) - np.cos(x))))))
    errs = np.array(errs)
    slopes = np.log2(errs[0] / errs[1])
    assert np.all(slopes >= order - 0.2)


def test_grid_curvature_converges_to_exact_jet():
    errs = []
    for n in (16, 32):
        spec = GridSpec(n=n, order=4)
        g, jet = conformal(spec)
        G = GridGeometry(spec, g)
        exact = curvature_from_jet(jet).riem
        errs.append(np.max(np.abs(G.riem - exact)))
        assert riemann_symmetry_defect(G.riem) < 1e-13
    assert np.log2(errs[0] / errs[1]) >= 3.8


def test_flat_volume_and_divergence_theorem(rng):
    spec = GridSpec(n=16)
    G = GridGeometry(spec, np.broadcast_to(np.eye(3), (16,) * 3 + (3, 3)))
    assert integrate(np.ones((16,) * 3), G) == pytest.approx((2 * np.pi) ** 3)
    m = MetricGrid(spec, random_metric(spec, eps=0.1, seed=2))
    X = np.stack(spec.coords(), axis=-1)
    W = np.stack([np.sin(X[..., 1]), np.cos(X[..., 0] + X[..., 2]), np.sin(X[..., 0])], -1)
    assert divergence_residual(W, m) < 1e-10


def test_random_metric_is_resolution_independent():
    coarse = random_metric(GridSpec(n=16), seed=4)
    fine = random_metric(GridSpec(n=32), seed=4)
    assert np.allclose(fine[::2, ::2, ::2], coarse, atol=1e-14)


def test_grid_rejects_indefinite_metric():
    spec = GridSpec(n=9, order=4)
    g = np.broadcast_to(np.diag([1.0, -1.0, 1.0]), (9,) * 3 + (3, 3))
    with pytest.raises(NonPositiveMetric):
        GridGeometry(spec, g)
    with pytest.raises(ValueError):
        GridSpec(n=8, order=4)


@pytest.mark.parametrize("fmt", ["bin", "csv"])
def test_snapshot_round_trip(tmp_path, fmt):
    spec = GridSpec(n=10, order=4)
    g = random_metric(spec, seed=5)
    path = tmp_path / f"snap.{fmt}"
    save_snapshot(path, spec, g, t=0.125, fmt=fmt)
    spec2, g2, t = load_snapshot(path)
    assert spec2 == spec and t == 0.125
    assert np.array_equal(g2, g)


def test_parabolic_cap_shrinks_fourfold():
    caps = []
    for n in (16, 32):
        spec = GridSpec(n=n)
        caps.append(parabolic_cap(GridGeometry(spec, conformal(spec)[0])))
    # same field: only the spacing and the (converged) curvature change
    assert caps[0] / caps[1] == pytest.approx(4.0, rel=0.02)


@given(st.integers(0, 1000))
@settings(max_examples=10, deadline=None)
def test_integration_of_exact_divergence_vanishes(seed):
    spec = GridSpec(n=12)
    rng = np.random.default_rng(seed)
    m = MetricGrid(spec, random_metric(spec, eps=0.05, seed=seed))
    X = np.stack(spec.coords(), axis=-1)
    k = rng.integers(-1, 2, size=(3, 3))
    W = np.cos(X @ k.T + rng.uniform(0, 6, 3))
    assert divergence_residual(W, m) < 1e-9
