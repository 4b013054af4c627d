"""Explicit integration of the cross curvature flow and its analytic evolution laws.

The flow is ``dg/dt = 2h`` when every sectional curvature is negative and
``dg/dt = -2h`` when every sectional curvature is positive. A state is a
geometry object (homogeneous or grid) plus a time; stepping replaces the
metric and recomputes curvature at every Runge-Kutta stage.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from xcflow._mutation import sign
from xcflow.functionals import sample_functionals
from xcflow.tensor_core import NonPositiveMetric, generalized_eigenvalues

BRANCHES = ("negative", "positive", "auto")


class MixedCurvatureSign(ValueError):
    """Auto branch requested but the sectional curvature has no uniform sign."""


class StepProducedInvalidMetric(ValueError):
    """A Runge-Kutta stage or step left the space of positive definite metrics."""


@dataclass
class FlowConfig:
    branch: str = "auto"
    t_end: float = 1.0
    dt_init: float = 1e-3
    adaptive: bool = True
    safety: float = 0.1
    max_growth: float = 1.5
    dt_max: float | None = None
    dt_min: float = 1e-14
    max_steps: int = 1_000_000
    retries: int = 30
    sample_every: int = 1
    detP_ratio: float = 1e-8
    H_ratio: float = 1e6
    etas: tuple = (1 / 3, 0.5, 1.0, 2.0)
    functionals: bool = True

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not self.dt_init > 0:
            raise ValueError("dt_init must be positive")
        self.etas = tuple(float(e) for e in self.etas)


@dataclass
class FlowSample:
    t: float
    dt: float
    sec_min: float
    sec_max: float
    detP_min: float
    detP_max: float
    H_min: float
    H_max: float
    volume: float
    pinching: float
    functionals: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {k: v for k, v in asdict(self).items() if k != "functionals"}
        row.update(self.functionals)
        return row


@dataclass
class BreakdownEvent:
    reason: str
    time: float
    location: str
    detP_min: float = math.nan
    H_at_min: float = math.nan


@dataclass
class FlowTrace:
    samples: list
    event: BreakdownEvent | None
    final: object
    t_final: float
    branch: str
    steps: int = 0

    @property
    def times(self):
        return np.array([s.t for s in self.samples])

    def column(self, name: str):
        return np.array([s.as_row()[name] for s in self.samples])

    def rows(self) -> list[dict]:
        return [s.as_row() for s in self.samples]


def branch_sign(bundle, branch: str) -> float:
    """+1 for the negative-curvature branch (``+2h``), -1 for the positive one."""
    if branch == "negative":
        return 1.0
    if branch == "positive":
        return -1.0
    cls = bundle.sign_class
    if cls == "mixed":
        raise MixedCurvatureSign("sectional curvature has no uniform sign; choose a branch")
    # flat: h = 0, both branches agree
    return -1.0 if cls == "positive" else 1.0


def xcf_rhs(geom, branch: str = "auto"):
    """``+-2h`` for the given branch."""
    b = geom.bundle
    return 2.0 * branch_sign(b, branch) * b.h


def _advance(geom, g):
    if not np.all(np.isfinite(g)):
        raise StepProducedInvalidMetric("non-finite metric")
    try:
        return geom.with_metric(g)
    except NonPositiveMetric as exc:
        raise StepProducedInvalidMetric(str(exc)) from None


def _stage_h(geom, g):
    # intermediate stages skip the definiteness test; the accepted step is checked
    with np.errstate(invalid="ignore", divide="ignore"):
        h = geom.with_metric(g, check=False).bundle.h
    if not np.isfinite(h).all():
        raise StepProducedInvalidMetric("stage metric is degenerate")
    return h


def step_rk4(geom, dt: float, branch: str = "auto"):
    """Classical four-stage step of the metric."""
    s = 2.0 * branch_sign(geom.bundle, branch)
    g0 = geom.g
    k1 = s * geom.bundle.h
    k2 = s * _stage_h(geom, g0 + 0.5 * dt * k1)
    k3 = s * _stage_h(geom, g0 + 0.5 * dt * k2)
    k4 = s * _stage_h(geom, g0 + dt * k3)
    return _advance(geom, g0 + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


def parabolic_cap(geom) -> float:
    """``dx^2 / (2 max |symbol|)`` over unit covectors; infinite off the grid."""
    if geom.backend != "grid":
        return math.inf
    top = float(np.max(np.abs(geom.bundle.sec)))
    return math.inf if top == 0 else geom.spec.spacing**2 / (2.0 * top)


def rate_bound(geom) -> float:
    """Inverse of the largest eigenvalue of ``|2h|`` with respect to ``g``."""
    lam = generalized_eigenvalues(2.0 * geom.bundle.h, geom.g)
    top = float(np.max(np.abs(lam)))
    return math.inf if top == 0 else 1.0 / top


def adapt_dt(geom, dt_prev: float, config: FlowConfig) -> float:
    dt_max = config.dt_max if config.dt_max is not None else config.t_end
    dt = min(config.safety * rate_bound(geom), parabolic_cap(geom), dt_max)
    if dt_prev is not None and dt_prev > 0:
        dt = min(dt, config.max_growth * dt_prev)
    return dt


def _sample(geom, t: float, dt: float, config: FlowConfig) -> FlowSample:
    b = geom.bundle
    sec = np.asarray(b.sec)
    detP = np.asarray(b.detP)
    H = np.asarray(b.H)
    absec = np.abs(sec)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = absec.max(axis=-1) / absec.min(axis=-1)
    funcs = {}
    if config.functionals:
        funcs = sample_functionals(geom, t, config.etas).as_row()
    return FlowSample(
        t=float(t), dt=float(dt),
        sec_min=float(sec.min()), sec_max=float(sec.max()),
        detP_min=float(detP.min()), detP_max=float(detP.max()),
        H_min=float(H.min()), H_max=float(H.max()),
        volume=float(geom.integrate(1.0)),
        pinching=float(ratio.max()),
        functionals=funcs,
    )


def _location(geom, flat_index) -> str:
    if geom.backend == "homogeneous":
        return "homogeneous"
    return "node" + str(tuple(int(i) for i in np.unravel_index(flat_index, geom.g.shape[:3])))


def _breakdown(geom, t, ref, sgn_class) -> BreakdownEvent | None:
    b = geom.bundle
    detP = np.asarray(b.detP).ravel()
    absdet = np.abs(detP)
    H = np.asarray(b.H).ravel()
    imin = int(absdet.argmin())

    def event(reason):
        return BreakdownEvent(reason, float(t), _location(geom, imin), float(detP[imin]),
                              float(H[imin]))

    if not (np.isfinite(absdet).all() and np.isfinite(H).all()):
        return event("nonfinite")
    if ref["detP"] > 0 and absdet[imin] < ref["detP_ratio"] * ref["detP"]:
        return event("detP_below_threshold")
    if ref["H"] > 0 and np.abs(H).max() > ref["H_ratio"] * ref["H"]:
        return event("H_exceeded")
    if sgn_class in ("negative", "positive") and b.sign_class != sgn_class:
        return event("curvature_sign_change")
    return None


def run_flow(config: FlowConfig, geom, t0: float = 0.0) -> FlowTrace:
    """Integrate to ``config.t_end`` or until a breakdown condition fires."""
    b0 = geom.bundle
    sgn = branch_sign(b0, config.branch)
    branch = "negative" if sgn > 0 else "positive"
    initial_class = b0.sign_class
    ref = {"detP": float(np.min(np.abs(b0.detP))), "H": float(np.max(np.abs(b0.H))),
           "detP_ratio": config.detP_ratio, "H_ratio": config.H_ratio}

    t = float(t0)
    dt = config.dt_init
    samples = [_sample(geom, t, 0.0, config)]
    event = None
    steps = 0
    while t < config.t_end and steps < config.max_steps:
        if config.adaptive:
            dt = adapt_dt(geom, dt if steps else None, config)
            if steps == 0:
                dt = min(dt, config.dt_init)
        else:
            dt = config.dt_init
        dt = min(dt, config.t_end - t)
        for attempt in range(config.retries + 1):
            try:
                new = step_rk4(geom, dt, branch)
                break
            except StepProducedInvalidMetric:
                if attempt == config.retries or dt / 2 < config.dt_min:
                    raise
                dt /= 2
        geom, t = new, t + dt
        if config.t_end - t < 1e-12 * max(1.0, config.t_end):
            t = config.t_end
        steps += 1
        event = _breakdown(geom, t, ref, initial_class)
        if event is not None or steps % config.sample_every == 0 or t >= config.t_end:
            samples.append(_sample(geom, t, dt, config))
        if event is not None:
            break
    return FlowTrace(samples=samples, event=event, final=geom, t_final=t, branch=branch,
                     steps=steps)


# -- analytic evolution laws ------------------------------------------------------------

def analytic_dP_dt(geom):
    """``nabla_k nabla_l (P^kl P^ij - P^ik P^jl) - detP g^ij - H P^ij``."""
    b = geom.bundle
    P = b.P_up
    nP = geom.nabla(P, "uu")                          # [l, i, j] = nabla_l P^ij
    div = np.einsum("...llk->...k", nP)               # nabla_l P^lk
    W = (np.einsum("...k,...ij->...kij", div, P)
         + np.einsum("...kl,...lij->...kij", P, nP)
         - np.einsum("...jl,...lik->...kij", P, nP)
         - np.einsum("...ik,...j->...kij", P, div))
    del nP
    second = np.einsum("...kkij->...ij", geom.nabla(W, "uuu"))
    return (second - sign("evolution_P") * b.detP[..., None, None] * geom.g_inv
            - b.H[..., None, None] * P)


def analytic_dRiem_dt(geom):
    """Rate of ``R_ijkl`` under ``dg/dt = 2h`` (second derivatives of h plus curvature terms)."""
    b = geom.bundle
    h = b.h
    nnh = geom.nabla(geom.nabla(h, "dd"), "ddd")      # [a, b, j, k] = nabla_a nabla_b h_jk
    rate = (np.einsum("...iljk->...ijkl", nnh) + np.einsum("...jkil->...ijkl", nnh)
            - np.einsum("...ikjl->...ijkl", nnh) - np.einsum("...jlik->...ijkl", nnh))
    del nnh
    hq = np.einsum("...pq,...ql->...pl", geom.g_inv, h)  # g^pq h_ql
    curv = (np.einsum("...ijkp,...pl->...ijkl", b.riem, hq)
            + np.einsum("...ijpl,...pk->...ijkl", b.riem, hq))
    return rate + sign("evolution_riem") * curv


def analytic_dmu_dt(geom):
    """``H sqrt(det g)``."""
    return sign("volume") * geom.bundle.H * geom.sqrt_det


# centred first-derivative weights for the temporal finite differences
FD_WEIGHTS = {
    2: {-1: -0.5, 1: 0.5},
    4: {-2: 1 / 12, -1: -2 / 3, 1: 2 / 3, 2: -1 / 12},
}


def temporal_derivative(geom, quantity, dt: float, branch: str = "auto", order: int = 2,
                        velocity=None):
    """Centred difference of ``quantity(geometry)`` along the flow direction.

    The metric is moved along its flow velocity ``g + s * dg/dt``; the
    difference quotient equals the time derivative along the flow up to
    ``O(dt**order)``.
    """
    if velocity is None:
        velocity = xcf_rhs(geom, branch)
    acc = None
    for s, w in FD_WEIGHTS[order].items():
        val = w * np.asarray(quantity(geom.with_metric(geom.g + s * dt * velocity)))
        acc = val if acc is None else acc + val
    return acc / dt
