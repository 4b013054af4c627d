"""Integral quantities built from the Einstein tensor and their evolution densities.

All functions take a geometry (:class:`~xcflow.curvature.HomogeneousGeometry`
or :class:`~xcflow.grid.GridGeometry`). On the grid, quantities that need
``V = P^{-1}`` or fractional powers of ``detP`` are evaluated on the node mask
where ``|detP|`` clears its singularity threshold; the mask fraction is
reported with every sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from xcflow._mutation import sign
from xcflow.tensor_core import det3, invert_sym2


class DomainError(ValueError):
    """A power of ``detP`` is undefined on the evaluation set."""


@dataclass(frozen=True)
class TDecomposition:
    """``T^{ijk} = P^{il} nabla_l P^{jk}``, its trace ``T^i`` and trace-free part ``E``."""

    T: np.ndarray
    Ttr: np.ndarray
    E: np.ndarray


def compute_T(P_up, nabla_P, V=None) -> TDecomposition:
    """Decompose ``T`` so that ``T = E - 1/10 (P^ij T^k + P^ik T^j) + 2/5 P^jk T^i``.

    ``nabla_P[..., l, j, k] = nabla_l P^{jk}``.
    """
    if V is None:
        V = invert_sym2(P_up)
    T = np.einsum("...il,...ljk->...ijk", P_up, nabla_P)
    Ttr = np.einsum("...jk,...ijk->...i", V, T)
    PT = np.einsum("...ij,...k->...ijk", P_up, Ttr)
    E = (T + sign("decomposition") * 0.1 * (PT + np.swapaxes(PT, -1, -2))
         - 0.4 * np.einsum("...jk,...i->...ijk", P_up, Ttr))
    return TDecomposition(T=T, Ttr=Ttr, E=E)


def trace_from_logdet(P_up, grad_logdetP):
    """Second route to ``T^i = P^{ij} nabla_j log detP``."""
    return np.einsum("...ij,...j->...i", P_up, grad_logdetP)


def vnorm_sq(X, V):
    """Square norm of a contravariant tensor using ``V_ij`` on every index.

    ``V`` need not be definite, in which case the result can be negative.
    """
    X = np.asarray(X, dtype=float)
    rank = X.ndim - (np.ndim(V) - 2)
    Y = X
    for p in range(rank):
        Y = _lower_axis(Y, V, Y.ndim - rank + p, rank)
    return np.sum((Y * X).reshape(X.shape[:X.ndim - rank] + (-1,)), axis=-1)


def _lower_axis(Y, V, axis, rank):
    Ym = np.moveaxis(Y, axis, -1)
    Vb = V.reshape(V.shape[:-2] + (1,) * (rank - 1) + (3, 3))
    out = np.einsum("...ab,...b->...a", Vb, Ym)
    return np.moveaxis(out, -1, axis)


def antisym12(X):
    """``X^{ijk} - X^{jik}``."""
    return X - np.swapaxes(X, -3, -2)


def is_integer(eta: float) -> bool:
    return float(eta).is_integer()


def detP_power(detP, eta: float):
    detP = np.asarray(detP, dtype=float)
    if is_integer(eta):
        return detP ** int(eta)
    if np.any(detP <= 0):
        raise DomainError(f"(detP)^{eta} undefined where detP <= 0")
    return detP**eta


def evaluation_mask(geom):
    """Nodes where ``V`` and fractional powers are evaluated (``None`` = everywhere)."""
    if geom.backend == "homogeneous":
        return None
    return geom.bundle.mask()


def mask_fraction(geom) -> float:
    m = evaluation_mask(geom)
    return 1.0 if m is None else float(np.mean(m))


def _on_mask(geom, *arrays):
    """Restrict per-node arrays to the evaluation set (a flat batch on the grid)."""
    m = evaluation_mask(geom)
    if m is None:
        return arrays
    return tuple(np.asarray(a)[m] for a in arrays)


def _integrate_masked(geom, values):
    """Integrate values given on the evaluation set."""
    m = evaluation_mask(geom)
    if m is None:
        return geom.integrate(values)
    full = np.zeros(m.shape)
    full[m] = values
    return geom.integrate(full, where=m)


def decomposition(geom) -> TDecomposition:
    """``T`` decomposition on the evaluation set."""
    b = geom.bundle
    nabla_P = geom.nabla(b.P_up, "uu")
    P_up, nP, V = _on_mask(geom, b.P_up, nabla_P, b.V)
    if V is None:
        V = invert_sym2(P_up)
    return compute_T(P_up, nP, V)


def _V_on_mask(geom):
    b = geom.bundle
    (V,) = _on_mask(geom, b.V)
    if V is None:
        V = invert_sym2(b.P_up)
    return V


def eta_functional(geom, eta: float) -> float:
    """``integral (detP)^eta dmu``."""
    (detP,) = _on_mask(geom, geom.bundle.detP)
    return _integrate_masked(geom, detP_power(detP, eta))


def eta_rhs_density(geom, eta: float, dec: TDecomposition | None = None):
    """``eta (1/2 |T^ijk - T^jik|^2 - eta |T^i|^2) detP^eta + (1 - 2 eta) detP^eta H``."""
    b = geom.bundle
    detP, H = _on_mask(geom, b.detP, b.H)
    power = detP_power(detP, eta)
    dec = dec or decomposition(geom)
    V = _V_on_mask(geom)
    anti = vnorm_sq(antisym12(dec.T), V)
    tr = vnorm_sq(dec.Ttr, V)
    return eta * (0.5 * anti - eta * tr) * power + (1 - 2 * eta) * power * H


def eta_rhs(geom, eta: float) -> float:
    return _integrate_masked(geom, eta_rhs_density(geom, eta))


def half_density_from_E(geom, dec: TDecomposition | None = None):
    """``1/4 |E^ijk - E^jik|^2 detP^(1/2)``."""
    (detP,) = _on_mask(geom, geom.bundle.detP)
    dec = dec or decomposition(geom)
    return 0.25 * vnorm_sq(antisym12(dec.E), _V_on_mask(geom)) * detP_power(detP, 0.5)


def trace_P(geom):
    """``P = g_ij P^ij``."""
    return np.einsum("...ij,...ij->...", geom.g, geom.bundle.P_up)


def J_density(geom):
    """``P/3 - detP^(1/3)``; nonnegative when P > 0 (AM-GM)."""
    b = geom.bundle
    Ptr, detP = _on_mask(geom, trace_P(geom), b.detP)
    if np.any(detP <= 0):
        raise DomainError("J needs detP > 0 on the evaluation set")
    return Ptr / 3 - np.cbrt(detP)


def J_functional(geom) -> float:
    return _integrate_masked(geom, J_density(geom))


def det_h_rel(geom):
    """Relative determinant ``det(h_ij) / det(g_ij)``."""
    return det3(geom.bundle.h) / det3(geom.g)


def J_rhs_density(geom, dec: TDecomposition | None = None):
    """``-1/6 (|E - E'|^2 + 1/3 |T^i|^2) detP^(1/3) - (H/3 - deth^(1/3)) detP^(1/3)``."""
    b = geom.bundle
    detP, H, deth = _on_mask(geom, b.detP, b.H, det_h_rel(geom))
    if np.any(detP <= 0) or np.any(deth <= 0):
        raise DomainError("J evolution needs detP > 0 and det h > 0")
    dec = dec or decomposition(geom)
    V = _V_on_mask(geom)
    third = np.cbrt(detP)
    quad = vnorm_sq(antisym12(dec.E), V) + vnorm_sq(dec.Ttr, V) / 3
    return -quad * third / 6 - (H / 3 - np.cbrt(deth)) * third


def dPintegral_rhs(geom) -> float:
    """``3 integral detP dmu``, the rate of ``integral P dmu``."""
    return 3.0 * geom.integrate(geom.bundle.detP)


def box(geom, f):
    """``P^ij nabla_i nabla_j f`` for a scalar field."""
    df = geom.nabla(f, "")
    ddf = geom.nabla(df, "d")
    return np.einsum("...ij,...ij->...", geom.bundle.P_up, ddf)


def box_log_abs(geom, f):
    """``P^ij nabla_i nabla_j log|f|`` from derivatives of ``f`` itself.

    Only ``f != 0`` at the node is needed, so the zero set of ``f`` does not
    leak into neighbouring stencils.
    """
    df = geom.nabla(f, "")
    ddf = geom.nabla(df, "d")
    P = geom.bundle.P_up
    f = np.asarray(f)[..., None, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.einsum("...ij,...ij->...", P, ddf / f
                         - np.einsum("...i,...j->...ij", df, df) / f**2)


def logdetP_rhs(geom, absolute: bool = False):
    """``box log detP + 1/2 |T^ijk - T^jik|^2 - 2H`` on the evaluation set.

    With ``absolute=True`` the logarithm is taken of ``|detP|``, which obeys the
    same equation wherever ``detP != 0``.
    """
    b = geom.bundle
    if not absolute:
        (detP,) = _on_mask(geom, b.detP)
        if np.any(detP <= 0):
            raise DomainError("log detP needs detP > 0")
    (boxf, H) = _on_mask(geom, box_log_abs(geom, b.detP), b.H)
    dec = decomposition(geom)
    anti = vnorm_sq(antisym12(dec.T), _V_on_mask(geom))
    return boxf + 0.5 * anti - sign("logdetP") * 2.0 * H


@dataclass
class FunctionalSample:
    t: float
    eta: dict = field(default_factory=dict)
    P_integral: float = math.nan
    detP_integral: float = math.nan
    J: float = math.nan
    volP: float = math.nan
    mask_fraction: float = 1.0

    def as_row(self) -> dict:
        row = {f"eta_{_eta_label(e)}": v for e, v in self.eta.items()}
        row.update(P_integral=self.P_integral, detP_integral=self.detP_integral,
                   J=self.J, volP=self.volP, mask_fraction=self.mask_fraction)
        return row


def _eta_label(eta: float) -> str:
    return f"{eta:.6g}".replace(".", "p").replace("-", "m")


def _safe(fn, *args) -> float:
    try:
        return float(fn(*args))
    except DomainError:
        return math.nan


def sample_functionals(geom, t: float, etas=(1 / 3, 0.5, 1.0, 2.0)) -> FunctionalSample:
    return FunctionalSample(
        t=t,
        eta={float(e): _safe(eta_functional, geom, e) for e in etas},
        P_integral=geom.integrate(trace_P(geom)),
        detP_integral=geom.integrate(geom.bundle.detP),
        J=_safe(J_functional, geom),
        volP=_safe(eta_functional, geom, 0.5),
        mask_fraction=mask_fraction(geom),
    )
