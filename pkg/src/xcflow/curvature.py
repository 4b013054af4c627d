"""Curvature of a 3-metric from a coordinate 2-jet or a left-invariant frame.

Conventions: ``Gamma[..., k, i, j]`` is the connection coefficient with
``nabla_{e_i} e_j = Gamma^k_{ij} e_k``; derivative indices come first, so
``nabla_T[..., a, i, j] = nabla_a T_ij``. The Riemann tensor is normalised so
that ``R_1212`` is the sectional curvature of the 1-2 plane in an orthonormal
frame, i.e. ``R_ijkl = K (g_ik g_jl - g_il g_jk)`` on a space form.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from xcflow._mutation import sign
from xcflow.tensor_core import (
    EPSILON,
    NonPositiveMetric,
    det3,
    inv3,
    SingularTensor,
    generalized_eigenvalues,
    invert_sym2,
    mu_contract_h,
    require_positive_definite,
    sym2_to_vec,
    symmetrize,
    vec_to_sym2,
)


class JacobiViolation(ValueError):
    """Structure constants do not satisfy the Jacobi identity."""


@dataclass(frozen=True)
class MetricJet2:
    """Second-order jet of a metric at one point (or a batch of points).

    ``dg[..., k, i, j] = d_k g_ij`` and ``ddg[..., k, l, i, j] = d_k d_l g_ij``.
    """

    g: np.ndarray
    dg: np.ndarray
    ddg: np.ndarray

    def __post_init__(self):
        require_positive_definite(self.g)
        if np.max(np.abs(self.ddg - np.swapaxes(self.ddg, -4, -3)), initial=0.0) > 1e-10:
            raise ValueError("ddg must be symmetric in its derivative indices")


def christoffel(g, dg, g_inv=None):
    """Levi-Civita connection ``Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)``."""
    if g_inv is None:
        g_inv = inv3(g)
    low = 0.5 * (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    batch = low.shape[:-3]
    return (g_inv @ low.reshape(batch + (3, 9))).reshape(batch + (3, 3, 3))


def christoffels_from_jet(jet: MetricJet2):
    return christoffel(jet.g, jet.dg)


def dgamma_from_jet(jet: MetricJet2):
    """Analytic ``d_a Gamma^k_ij`` from the 2-jet, layout ``[..., a, k, i, j]``."""
    g_inv = inv3(jet.g)
    low = 0.5 * (np.einsum("...ijl->...lij", jet.dg) + np.einsum("...jil->...lij", jet.dg)
                 - jet.dg)
    dlow = 0.5 * (np.einsum("...aijl->...alij", jet.ddg) + np.einsum("...ajil->...alij", jet.ddg)
                  - jet.ddg)
    dg_inv = -np.einsum("...km,...amn,...nl->...akl", g_inv, jet.dg, g_inv)
    return (np.einsum("...akl,...lij->...akij", dg_inv, low)
            + np.einsum("...kl,...alij->...akij", g_inv, dlow))


def riemann(g, gamma, dgamma=None, structure=None):
    """Covariant Riemann tensor from a connection.

    ``R(e_i, e_j) e_l = nabla_i nabla_j e_l - nabla_j nabla_i e_l - nabla_[e_i, e_j] e_l``
    and ``R_ijkl = <R(e_i, e_j) e_l, e_k>``. Coordinate frames pass ``dgamma``;
    left-invariant frames pass the structure constants ``C^m_ij`` instead.
    """
    batch = gamma.shape[:-3]
    quad = (gamma.reshape(batch + (9, 3)) @ gamma.reshape(batch + (3, 9)))
    quad = quad.reshape(batch + (3,) * 4)                  # [n, i, j, l] = G^m_jl G^n_im
    rvec = quad - np.swapaxes(quad, -3, -2)
    if dgamma is not None:
        dn = np.swapaxes(dgamma, -4, -3)                   # [n, i, j, l] = d_i G^n_jl
        rvec = rvec + dn - np.swapaxes(dn, -3, -2)
    if structure is not None:
        # C^m_ij Gamma^n_ml as [n, (i j), l]
        rvec = rvec - (structure.reshape(3, 9).T @ gamma).reshape(batch + (3,) * 4)
    R = (g @ rvec.reshape(batch + (3, 27))).reshape(batch + (3,) * 4)  # [k, i, j, l]
    n = len(batch)
    return R.transpose(tuple(range(n)) + (n + 1, n + 2, n, n + 3))


def detP_threshold(P_up, g):
    """Singularity threshold for the relative determinant of ``P``."""
    mixed = np.einsum("...ia,...aj->...ij", P_up, g)
    return 1e-12 * np.max(np.abs(mixed), axis=(-2, -1)) ** 3


@dataclass(frozen=True)
class CurvatureBundle:
    """Every pointwise curvature quantity at one point or a batch of points.

    ``V`` is the inverse of ``P^{ij}``; it is ``None`` at a single degenerate
    point and NaN at degenerate nodes of a batch. ``sec`` holds the ascending
    eigenvalues ``(a, b, c)`` of the Einstein tensor with respect to ``g``.
    Both are computed on first access.
    """

    g: np.ndarray
    riem: np.ndarray
    ric: np.ndarray
    scalar: np.ndarray
    P_up: np.ndarray
    h: np.ndarray
    g_inv: np.ndarray

    @cached_property
    def H(self):
        return np.einsum("...ij,...ij->...", self.g_inv, self.h)

    @cached_property
    def detP(self):
        return det3(self.P_up) * det3(self.g)

    @cached_property
    def sec(self):
        return generalized_eigenvalues(self.P_up, self.g, upper=True)

    @cached_property
    def V(self):
        ok = self.nondegenerate
        if np.ndim(self.detP) == 0:
            return symmetrize(inv3(self.P_up)) if ok else None
        return np.where(ok[..., None, None], symmetrize(inv3(self.P_up)), np.nan)

    @property
    def nondegenerate(self):
        return np.abs(self.detP) > detP_threshold(self.P_up, self.g)

    def mask(self, factor: float = 10.0):
        """Nodes where ``|detP|`` clears ``factor`` times the singularity threshold."""
        return np.abs(self.detP) > factor * detP_threshold(self.P_up, self.g)

    @property
    def sign_class(self) -> str:
        """'negative' if every sectional curvature is negative (a, b, c > 0), etc."""
        if np.all(self.sec == 0):
            return "flat"
        if np.all(self.sec > 0):
            return "negative"
        if np.all(self.sec < 0):
            return "positive"
        return "mixed"


def bundle_from_riemann(g, R, g_inv=None) -> CurvatureBundle:
    """Curvature bundle of ``R``. Passing ``g_inv`` asserts that ``g`` was already validated."""
    if g_inv is None:
        require_positive_definite(g)
        g_inv = symmetrize(inv3(g))
    ric = np.einsum("...ik,...ijkl->...jl", g_inv, R)
    scalar = np.einsum("...jl,...jl->...", g_inv, ric)
    ric_up = g_inv @ ric @ g_inv
    P_up = symmetrize(ric_up - sign("einstein_trace") * 0.5 * scalar[..., None, None] * g_inv)
    mu_up = EPSILON / np.sqrt(det3(g))[..., None, None, None]
    h = symmetrize(mu_contract_h(R, mu_up))
    return CurvatureBundle(g=g, riem=R, ric=ric, scalar=scalar, P_up=P_up, h=h, g_inv=g_inv)


def curvature_from_jet(jet: MetricJet2, dgamma=None) -> CurvatureBundle:
    """Curvature bundle of a 2-jet. ``dgamma`` defaults to the analytic derivative."""
    gamma = christoffels_from_jet(jet)
    if dgamma is None:
        dgamma = dgamma_from_jet(jet)
    return bundle_from_riemann(jet.g, riemann(jet.g, gamma, dgamma=dgamma))


def covariant_derivative(T, variance: str, gamma, partial=None):
    """``nabla_a T`` with the derivative index first.

    ``variance`` has one character per tensor index, ``'u'`` (upper) or
    ``'d'`` (lower). ``partial`` holds the frame/coordinate derivatives of the
    components in the same layout as the result; ``None`` means constant
    components (left-invariant tensors).
    """
    n = len(variance)
    letters = "bcdefgh"[:n]
    if partial is None:
        batch = np.broadcast_shapes(gamma.shape[:-3], T.shape[:T.ndim - n])
        out = np.zeros(batch + (3,) * (n + 1))
    else:
        out = np.array(partial, dtype=float, copy=True)
    for p, v in enumerate(variance):
        src = letters[:p] + "m" + letters[p + 1:]
        dst = "a" + letters
        if v == "u":
            out += np.einsum(f"...{letters[p]}am,...{src}->...{dst}", gamma, T)
        elif v == "d":
            out -= np.einsum(f"...ma{letters[p]},...{src}->...{dst}", gamma, T)
        else:
            raise ValueError(f"bad variance character {v!r}")
    return out


# -- left-invariant metrics on 3-dimensional Lie groups ---------------------------------

@dataclass(frozen=True)
class LieAlgebra:
    """Structure constants ``C[k, i, j] = C^k_ij`` with ``[e_i, e_j] = C^k_ij e_k``."""

    C: np.ndarray
    name: str = "custom"

    @classmethod
    def from_brackets(cls, brackets: dict, name: str = "custom") -> "LieAlgebra":
        """Build from ``{(i, j): (c1, c2, c3)}`` meaning ``[e_i, e_j] = c1 e1 + c2 e2 + c3 e3``."""
        C = np.zeros((3, 3, 3))
        for (i, j), coeffs in brackets.items():
            C[:, i, j] += coeffs
            C[:, j, i] -= coeffs
        return cls(C=C, name=name)

    @property
    def antisymmetry_defect(self) -> float:
        return float(np.max(np.abs(self.C + np.swapaxes(self.C, 1, 2))))

    @property
    def jacobi_defect(self) -> float:
        # [[e_i, e_j], e_k] = C^l_ij C^m_lk
        nested = np.einsum("lij,mlk->mijk", self.C, self.C)
        cyc = nested + np.einsum("mjki->mijk", nested) + np.einsum("mkij->mijk", nested)
        return float(np.max(np.abs(cyc)))

    @property
    def unimodular(self) -> bool:
        return bool(np.all(np.abs(np.einsum("jij->i", self.C)) < 1e-14))

    def validate(self):
        if self.antisymmetry_defect > 1e-14:
            raise JacobiViolation(f"{self.name}: structure constants not antisymmetric")
        if self.jacobi_defect > 1e-14:
            raise JacobiViolation(f"{self.name}: Jacobi identity fails "
                                  f"(defect {self.jacobi_defect:.3g})")


def frame_connection(C, q, q_inv=None):
    """Koszul formula for left-invariant fields in a frame with constant inner product ``q``."""
    if q_inv is None:
        q_inv = inv3(q)
    batch = q.shape[:-2]
    A = (q @ C.reshape(3, 9)).reshape(batch + (3, 3, 3))   # [l, i, j] = C^m_ij q_ml
    n = len(batch)
    ax = tuple(range(n))
    # low[l, i, j] = 1/2 (C^m_ij q_ml - C^m_jl q_mi + C^m_li q_mj)
    low = 0.5 * (A - A.transpose(ax + (n + 2, n, n + 1)) + A.transpose(ax + (n + 1, n + 2, n)))
    return (q_inv @ low.reshape(batch + (3, 9))).reshape(batch + (3, 3, 3))


def curvature_homogeneous(algebra: LieAlgebra, q) -> CurvatureBundle:
    algebra.validate()
    q = np.asarray(q, dtype=float)
    require_positive_definite(q)
    gamma = frame_connection(algebra.C, q)
    return bundle_from_riemann(q, riemann(q, gamma, structure=algebra.C))


class HomogeneousGeometry:
    """A left-invariant metric ``q`` on a Lie group; every tensor is constant in the frame."""

    backend = "homogeneous"

    def __init__(self, algebra: LieAlgebra, q, validated: bool = False, check: bool = True):
        if not validated:
            algebra.validate()
        q = symmetrize(np.asarray(q, dtype=float))
        if check:
            require_positive_definite(q)
        self.algebra = algebra
        self.g = q

    def with_metric(self, q, check: bool = True) -> "HomogeneousGeometry":
        """Same group, new metric; ``check=False`` skips the definiteness test."""
        return HomogeneousGeometry(self.algebra, q, validated=True, check=check)

    @cached_property
    def g_inv(self):
        return symmetrize(inv3(self.g))

    @cached_property
    def gamma(self):
        return frame_connection(self.algebra.C, self.g, self.g_inv)

    @cached_property
    def bundle(self) -> CurvatureBundle:
        return bundle_from_riemann(self.g, riemann(self.g, self.gamma, structure=self.algebra.C),
                                   self.g_inv)

    @cached_property
    def sqrt_det(self):
        return np.sqrt(det3(self.g))

    def nabla(self, T, variance: str):
        return covariant_derivative(np.asarray(T, dtype=float), variance, self.gamma)

    def integrate(self, density, where=None):
        """Density times the volume of a unit reference volume."""
        return float(np.asarray(density) * self.sqrt_det)

    def christoffel_of(self, metric):
        """Connection of another left-invariant (possibly indefinite) metric."""
        return frame_connection(self.algebra.C, metric)


# -- operators from the parabolicity and integrability analysis -----------------------

def symbol_apply(P_up, zeta, gt):
    """``-P^ml (z_i z_m gt_lj + z_l z_j gt_im - z_i z_j gt_lm - z_l z_m gt_ij)``."""
    t1 = np.einsum("...ml,...i,...m,...lj->...ij", P_up, zeta, zeta, gt)
    t2 = np.einsum("...ml,...l,...j,...im->...ij", P_up, zeta, zeta, gt)
    t3 = np.einsum("...ml,...i,...j,...lm->...ij", P_up, zeta, zeta, gt)
    t4 = np.einsum("...ml,...l,...m,...ij->...ij", P_up, zeta, zeta, gt)
    return -sign("symbol") * symmetrize(t1 + t2 - t3 - t4)


def symbol_matrix(P_up, zeta):
    """6x6 matrix of the symbol on Sym2 in the sqrt2-weighted orthonormal basis.

    The matrix is not symmetric in general; its eigenvalues are real and equal
    ``{0, 0, 0, zPz, zPz, zPz}``.
    """
    P_up = np.asarray(P_up, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    batch = np.broadcast_shapes(P_up.shape[:-2], zeta.shape[:-1])
    cols = []
    for n in range(6):
        e = np.zeros(batch + (6,))
        e[..., n] = 1.0
        cols.append(sym2_to_vec(symbol_apply(P_up, zeta, vec_to_sym2(e))))
    return np.stack(cols, axis=-1)


def integrability_L(h, nabla_T):
    """``L(T)_k = h^ij nabla_i T_jk - 1/2 h^ij nabla_k T_ij``."""
    h_inv = invert_sym2(h)
    return (np.einsum("...ij,...ijk->...k", h_inv, nabla_T)
            - sign("dual_bianchi") * 0.5 * np.einsum("...ij,...kij->...k", h_inv, nabla_T))


def tension_of_identity(domain, gamma_domain, gamma_target, require_definite: bool = True):
    """Tension of the identity map ``(M, domain) -> (M, target)``.

    ``tau^k = domain^ij (Gamma(target)^k_ij - Gamma(domain)^k_ij)``; zero
    means the identity is harmonic. Both connections must be expressed in the
    same frame.
    """
    if require_definite:
        require_positive_definite(domain, "domain metric")
    d_inv = invert_sym2(domain)
    diff = gamma_target - sign("tension") * gamma_domain
    return np.einsum("...ij,...kij->...k", d_inv, diff)


__all__ = [
    "CurvatureBundle", "HomogeneousGeometry", "JacobiViolation", "LieAlgebra", "MetricJet2",
    "NonPositiveMetric", "SingularTensor", "bundle_from_riemann", "christoffel",
    "christoffels_from_jet", "covariant_derivative", "curvature_from_jet",
    "curvature_homogeneous", "detP_threshold", "dgamma_from_jet", "frame_connection",
    "integrability_L", "riemann", "symbol_apply", "symbol_matrix", "tension_of_identity",
]
