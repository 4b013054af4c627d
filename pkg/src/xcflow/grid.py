"""Periodic finite-difference backend on the coordinate torus [0, 2pi)^3.

Fields are arrays whose first three axes index the nodes; the remaining axes
are tensor indices. Derivatives use explicit central stencils with periodic
wraparound, and derivative indices are inserted as the first tensor axis.

Snapshot layout (binary, little-endian)::

    8 bytes   magic  b"XCFGRID1"
    int32     N
    int32     stencil order
    float64   time
    N^3 * 6 float64   metric components (11, 12, 13, 22, 23, 33) per node,
                      nodes in row-major (x, y, z) order

The CSV variant writes ``# N=<N> order=<order> time=<t>`` followed by a
header row ``g11,g12,g13,g22,g23,g33`` and one row per node in the same order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from xcflow.curvature import (
    CurvatureBundle,
    bundle_from_riemann,
    christoffel,
    covariant_derivative,
    riemann,
)
from xcflow.tensor_core import (
    SYM_INDEX,
    det3,
    inv3,
    project_curvature,
    require_positive_definite,
    symmetrize,
)

# one-sided coefficients c_s of the antisymmetric first-derivative stencil
FIRST = {
    2: (1 / 2,),
    4: (2 / 3, -1 / 12),
    6: (3 / 4, -3 / 20, 1 / 60),
}
# (centre, one-sided coefficients) of the symmetric second-derivative stencil
SECOND = {
    2: (-2.0, (1.0,)),
    4: (-5 / 2, (4 / 3, -1 / 12)),
    6: (-49 / 18, (3 / 2, -3 / 20, 1 / 90)),
}

MAGIC = b"XCFGRID1"


@dataclass(frozen=True)
class GridSpec:
    n: int = 32
    order: int = 4

    def __post_init__(self):
        if self.order not in FIRST:
            raise ValueError(f"stencil order must be one of {sorted(FIRST)}")
        if self.n < 2 * self.order + 1:
            raise ValueError(f"need n >= {2 * self.order + 1} for order {self.order}")

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.n

    def coords(self):
        x = np.arange(self.n) * self.spacing
        return np.meshgrid(x, x, x, indexing="ij")


def _padded(f, axis: int, width: int):
    f = np.asarray(f, dtype=float)
    n = f.shape[axis]
    head = np.take(f, range(n - width, n), axis=axis)
    tail = np.take(f, range(width), axis=axis)
    return np.concatenate([head, f, tail], axis=axis), n


def _shift(fp, axis: int, width: int, n: int, s: int):
    """View of the padded field holding ``f[i + s]`` along ``axis``."""
    idx = [slice(None)] * fp.ndim
    idx[axis] = slice(width + s, width + s + n)
    return fp[tuple(idx)]


def diff(f, axis: int, spec: GridSpec):
    """First derivative along spatial ``axis`` (0, 1, 2)."""
    w = spec.order // 2
    fp, n = _padded(f, axis, w)
    out = np.zeros(np.shape(f))
    for s, c in enumerate(FIRST[spec.order], start=1):
        out += c * (_shift(fp, axis, w, n, s) - _shift(fp, axis, w, n, -s))
    out /= spec.spacing
    return out


def diff2(f, axis: int, spec: GridSpec):
    w = spec.order // 2
    centre, coeffs = SECOND[spec.order]
    fp, n = _padded(f, axis, w)
    out = centre * np.asarray(f, dtype=float)
    for s, c in enumerate(coeffs, start=1):
        out += c * (_shift(fp, axis, w, n, s) + _shift(fp, axis, w, n, -s))
    out /= spec.spacing**2
    return out


def gradient(f, spec: GridSpec):
    """Stack of partial derivatives with the derivative index at axis 3."""
    return np.stack([diff(f, a, spec) for a in range(3)], axis=3)


def coarse(field, n_fine: int, n_coarse: int):
    """Restrict a field to the nodes shared with a coarser grid."""
    s = n_fine // n_coarse
    return field[::s, ::s, ::s]


def random_metric(spec: GridSpec, eps: float = 0.05, seed: int = 0, n_modes: int = 3,
                  max_wavenumber: int = 1):
    """Deterministic smooth metric ``delta + eps * (trigonometric modes)``.

    The modes depend only on ``seed``, so the same continuous metric is
    sampled at every resolution. Samples that fail to be positive definite at
    some node are rejected and redrawn.
    """
    rng = np.random.default_rng(seed)
    X = np.stack(spec.coords(), axis=-1)
    for _ in range(100):
        pert = np.zeros((spec.n,) * 3 + (3, 3))
        for i, j in SYM_INDEX:
            for _m in range(n_modes):
                k = np.zeros(3)
                while not np.any(k):
                    k = rng.integers(-max_wavenumber, max_wavenumber + 1, size=3)
                amp = rng.uniform(-1.0, 1.0) / n_modes
                phase = rng.uniform(0, 2 * np.pi)
                wave = amp * np.cos(X @ k + phase)
                pert[..., i, j] += wave
                if i != j:
                    pert[..., j, i] += wave
        g = np.eye(3) + eps * pert
        if np.all(np.linalg.eigvalsh(g) > 0):
            return g
    raise RuntimeError("could not draw a positive definite metric")


class GridGeometry:
    """A metric field on the periodic grid with cached connection and curvature."""

    backend = "grid"

    def __init__(self, spec: GridSpec, g, check: bool = True):
        g = symmetrize(np.asarray(g, dtype=float))
        if g.shape != (spec.n,) * 3 + (3, 3):
            raise ValueError(f"metric shape {g.shape} does not match grid {spec.n}")
        if check:
            require_positive_definite(g)
        self.spec = spec
        self.g = g

    def with_metric(self, g, check: bool = True) -> "GridGeometry":
        return GridGeometry(self.spec, g, check=check)

    @cached_property
    def g_inv(self):
        return symmetrize(inv3(self.g))

    @cached_property
    def dg(self):
        return gradient(self.g, self.spec)

    @cached_property
    def gamma(self):
        return christoffel(self.g, self.dg, self.g_inv)

    @cached_property
    def dgamma(self):
        # differentiate the Gamma field itself, so discrete identities stay consistent
        return gradient(self.gamma, self.spec)

    @cached_property
    def riem(self):
        # discretisation breaks the pair symmetries at O(dx^order); restore them exactly
        return project_curvature(riemann(self.g, self.gamma, dgamma=self.dgamma))

    @cached_property
    def bundle(self) -> CurvatureBundle:
        return bundle_from_riemann(self.g, self.riem, self.g_inv)

    @cached_property
    def sqrt_det(self):
        return np.sqrt(det3(self.g))

    def nabla(self, T, variance: str):
        T = np.asarray(T, dtype=float)
        return covariant_derivative(T, variance, self.gamma, partial=gradient(T, self.spec))

    def integrate(self, f, where=None) -> float:
        """Trapezoidal quadrature ``sum f sqrt(det g) dx^3`` (optionally over a node mask)."""
        w = np.asarray(f, dtype=float) * self.sqrt_det
        if where is not None:
            w = np.where(where, w, 0.0)
        return float(np.sum(w) * self.spec.spacing**3)

    def christoffel_of(self, metric):
        """Levi-Civita connection of another (nondegenerate) metric field."""
        return christoffel(metric, gradient(metric, self.spec), inv3(metric))


@dataclass(frozen=True)
class MetricGrid:
    spec: GridSpec
    g: np.ndarray

    def __post_init__(self):
        require_positive_definite(self.g)

    def geometry(self) -> GridGeometry:
        return GridGeometry(self.spec, self.g)


def jet_at_nodes(m: MetricGrid):
    """Per-node 2-jets of the metric from central differences."""
    from xcflow.curvature import MetricJet2

    spec = m.spec
    dg = gradient(m.g, spec)
    ddg = np.empty(m.g.shape[:3] + (3, 3, 3, 3))
    for k in range(3):
        ddg[..., k, k, :, :] = diff2(m.g, k, spec)
        for l in range(k + 1, 3):
            mixed = diff(diff(m.g, k, spec), l, spec)
            ddg[..., k, l, :, :] = mixed
            ddg[..., l, k, :, :] = mixed
    return MetricJet2(g=m.g, dg=dg, ddg=ddg)


def covariant_derivative_grid(T, m: MetricGrid | GridGeometry, variance: str):
    geom = m.geometry() if isinstance(m, MetricGrid) else m
    if T.shape[:3] != geom.g.shape[:3]:
        raise ValueError("tensor field and metric grid have different shapes")
    return geom.nabla(T, variance)


def integrate(f, m: MetricGrid | GridGeometry) -> float:
    geom = m.geometry() if isinstance(m, MetricGrid) else m
    return geom.integrate(f)


def divergence_residual(W, m: MetricGrid | GridGeometry) -> float:
    """``|integral of nabla_i W^i dmu|``; vanishes on a closed manifold."""
    geom = m.geometry() if isinstance(m, MetricGrid) else m
    div = np.einsum("...ii->...", geom.nabla(W, "u"))
    return abs(geom.integrate(div))


def save_snapshot(path, spec: GridSpec, g, t: float = 0.0, fmt: str = "bin"):
    path = Path(path)
    comps = np.stack([g[..., i, j] for i, j in SYM_INDEX], axis=-1).reshape(-1, 6)
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<iid", spec.n, spec.order, t))
            fh.write(comps.astype("<f8").tobytes())
    elif fmt == "csv":
        with open(path, "w") as fh:
            fh.write(f"# N={spec.n} order={spec.order} time={t!r}\n")
            fh.write("g11,g12,g13,g22,g23,g33\n")
            for row in comps:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")


def load_snapshot(path):
    """Return ``(spec, g, t)`` from a binary or CSV snapshot."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
        if head == MAGIC:
            n, order, t = struct.unpack("<iid", fh.read(16))
            comps = np.frombuffer(fh.read(), dtype="<f8").reshape(-1, 6)
        else:
            fh.seek(0)
            text = fh.read().decode().splitlines()
            meta = dict(kv.split("=") for kv in text[0].lstrip("# ").split())
            n, order, t = int(meta["N"]), int(meta["order"]), float(meta["time"])
            comps = np.array([[float(x) for x in line.split(",")] for line in text[2:]])
    spec = GridSpec(n=n, order=order)
    g = np.empty((n, n, n, 3, 3))
    comps = comps.reshape(n, n, n, 6)
    for c, (i, j) in enumerate(SYM_INDEX):
        g[..., i, j] = comps[..., c]
        g[..., j, i] = comps[..., c]
    return spec, g, t
