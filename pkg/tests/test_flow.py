import math

import numpy as np
import pytest

from xcflow.flow import (
    FlowConfig,
    MixedCurvatureSign,
    adapt_dt,
    analytic_dmu_dt,
    analytic_dP_dt,
    analytic_dRiem_dt,
    rate_bound,
    run_flow,
    step_rk4,
    temporal_derivative,
    xcf_rhs,
)
from xcflow.presets import build_preset
from xcflow.tensor_core import riemann_symmetry_defect


def hyperbolic(scale=1.0):
    geom = build_preset("hyperbolic_solvable:1,1")[1]
    return geom.with_metric(scale * np.eye(3))


def test_rhs_examples():
    assert np.allclose(xcf_rhs(hyperbolic()), 2 * np.eye(3))
    assert np.allclose(xcf_rhs(build_preset("abelian_flat")[1]), 0)
    assert np.allclose(xcf_rhs(build_preset("su2_round")[1], "positive"), -2 * np.eye(3))
    with pytest.raises(MixedCurvatureSign):
        xcf_rhs(build_preset("nil")[1])


def test_zero_rhs_step_is_identity():
    flat = build_preset("abelian_flat")[1]
    assert np.array_equal(step_rk4(flat, 0.1, "negative").g, flat.g)


def test_single_step_local_error():
    for dt in (1e-3, 1e-2):
        g = step_rk4(hyperbolic(), dt, "negative").g
        assert abs(g[0, 0] - math.sqrt(1 + 4 * dt)) < 10 * dt**5


def test_global_error_is_fourth_order():
    errs = []
    dts = (1e-2, 5e-3, 2.5e-3)
    for dt in dts:
        tr = run_flow(FlowConfig(branch="negative", t_end=1.0, dt_init=dt, adaptive=False,
                                 functionals=False), hyperbolic())
        errs.append(abs(tr.final.g[0, 0] - math.sqrt(5)) / math.sqrt(5))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope >= 3.8


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_scaling_law(lam):
    tr = run_flow(FlowConfig(branch="negative", t_end=1.0, dt_init=1e-3, adaptive=False,
                             functionals=False), hyperbolic(lam))
    assert tr.final.g[0, 0] == pytest.approx(math.sqrt(lam**2 + 4), rel=1e-8)


def test_adaptive_controls():
    cfg = FlowConfig(t_end=1.0, dt_max=0.05)
    assert adapt_dt(build_preset("abelian_flat")[1], None, cfg) == 0.05
    # q = c I on the hyperbolic group: |2h| has eigenvalue 2 / c^2
    assert rate_bound(hyperbolic(3.0)) == pytest.approx(4.5)
    small = FlowConfig(t_end=1.0)
    assert adapt_dt(hyperbolic(0.5), None, small) == pytest.approx(
        adapt_dt(hyperbolic(1.0), None, small) / 4)
    assert adapt_dt(hyperbolic(), 1e-4, small) == pytest.approx(1.5e-4)
    tr = run_flow(FlowConfig(branch="negative", t_end=1.0, dt_init=1e-3, functionals=False),
                  hyperbolic())
    assert tr.final.g[0, 0] == pytest.approx(math.sqrt(5), rel=1e-6)
    assert tr.steps < 100


def test_solvable_trace_volume_and_pinching():
    tr = run_flow(FlowConfig(branch="auto", t_end=0.5, dt_init=1e-3, adaptive=False),
                  build_preset("hyperbolic_solvable:1,2")[1])
    vol = tr.column("volume")
    pinch = tr.column("pinching")
    assert np.all(np.diff(vol) > 0)
    assert np.all(np.diff(pinch) <= 1e-12)
    assert np.all(tr.column("sec_min") > 0)
    assert tr.event is None and tr.t_final == 0.5


def test_sphere_breakdown_event():
    tr = run_flow(FlowConfig(branch="positive", t_end=1.0, dt_init=1e-3, adaptive=True,
                             functionals=False), build_preset("su2_round")[1])
    assert tr.event.reason in ("H_exceeded", "detP_below_threshold", "nonfinite")
    assert abs(tr.event.time - 0.25) < 1e-4
    assert tr.event.location == "homogeneous"


def test_run_is_deterministic():
    cfg = FlowConfig(branch="negative", t_end=0.2, dt_init=1e-2)
    a = run_flow(cfg, build_preset("hyperbolic_solvable:2,1")[1]).rows()
    b = run_flow(cfg, build_preset("hyperbolic_solvable:2,1")[1]).rows()
    assert a == b


def test_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(branch="sideways")
    with pytest.raises(ValueError):
        FlowConfig(t_end=0)


def test_space_form_rates():
    geom = hyperbolic()
    assert np.allclose(analytic_dP_dt(geom), -4 * geom.bundle.P_up)
    assert analytic_dmu_dt(geom) == pytest.approx(3.0)
    rate = analytic_dRiem_dt(geom)
    assert riemann_symmetry_defect(rate) < 1e-12
    flat = build_preset("abelian_flat")[1]
    assert np.all(analytic_dP_dt(flat) == 0) and np.all(analytic_dRiem_dt(flat) == 0)


@pytest.mark.parametrize("order,expected", [(2, 2.0), (4, 4.0)])
def test_temporal_difference_order(order, expected):
    geom = build_preset("hyperbolic_solvable:1,2")[1]
    exact = analytic_dP_dt(geom)
    dts = (0.02, 0.01, 0.005)
    errs = [np.max(np.abs(temporal_derivative(geom, lambda X: X.bundle.P_up, dt,
                                              order=order) - exact)) for dt in dts]
    assert np.polyfit(np.log(dts), np.log(errs), 1)[0] >= expected - 0.2
