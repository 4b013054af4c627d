"""Pointwise multilinear algebra on 3-dimensional tangent spaces.

Tensors are plain numpy arrays. A symmetric 2-tensor has shape ``(..., 3, 3)``,
a curvature-type tensor ``(..., 3, 3, 3, 3)``. Leading axes are batch axes
(grid nodes, ensembles), so every function here maps over them. Variance is
carried by argument names (``g`` covariant, ``P_up`` contravariant) rather than
by wrapper types.
"""

from __future__ import annotations

import numpy as np

from xcflow._mutation import sign


class SingularTensor(ValueError):
    """A symmetric 2-tensor is too close to singular to invert."""


class NonPositiveMetric(ValueError):
    """A metric argument is not positive definite."""


def _levi_civita() -> np.ndarray:
    eps = np.zeros((3, 3, 3))
    for (i, j, k), s in {(0, 1, 2): 1, (1, 2, 0): 1, (2, 0, 1): 1,
                         (0, 2, 1): -1, (2, 1, 0): -1, (1, 0, 2): -1}.items():
        eps[i, j, k] = s
    return eps


EPSILON = _levi_civita()
IDENTITY = np.eye(3)

# Ordering of the six independent components of a symmetric 2-tensor.
SYM_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def symmetrize(s):
    s = np.asarray(s)
    return 0.5 * (s + s.swapaxes(-1, -2))


def asymmetry(s) -> float:
    """Max-norm of the antisymmetric part of ``s``."""
    s = np.asarray(s)
    return float(np.max(np.abs(s - np.swapaxes(s, -1, -2)), initial=0.0))


def _cross(a, b):
    # np.cross carries heavy per-call overhead on tiny batches
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def det3(s):
    """Batched 3x3 determinant (cofactor expansion)."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 2:
        (a, b, c), (d, e, f), (g, h, i) = s.tolist()
        return np.float64(a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g))
    return np.sum(s[..., 0, :] * _cross(s[..., 1, :], s[..., 2, :]), axis=-1)


def inv3(s):
    """Batched 3x3 inverse via cross products of rows; no singularity check."""
    s = np.asarray(s, dtype=float)
    if s.ndim == 2:
        try:
            return np.linalg.inv(s)
        except np.linalg.LinAlgError:
            return np.full((3, 3), np.nan)
    r0, r1, r2 = s[..., 0, :], s[..., 1, :], s[..., 2, :]
    c0 = _cross(r1, r2)
    adj = np.stack([c0, _cross(r2, r0), _cross(r0, r1)], axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return adj / np.sum(r0 * c0, axis=-1)[..., None, None]


def det_tolerance(s):
    """Scale-aware singularity threshold ``1e-12 * max|s|**3`` (per batch entry)."""
    scale = np.max(np.abs(s), axis=(-2, -1))
    return 1e-12 * scale**3


def invert_sym2(s):
    """Inverse of a symmetric 2-tensor; the variance of the result is flipped."""
    s = np.asarray(s, dtype=float)
    d = det3(s)
    if np.any(np.abs(d) <= det_tolerance(s)):
        raise SingularTensor("symmetric tensor is singular within tolerance")
    return symmetrize(inv3(s))


def is_positive_definite(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    return np.all(np.linalg.eigvalsh(symmetrize(g)) > 0.0, axis=-1)


def require_positive_definite(g, what: str = "metric"):
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise NonPositiveMetric(f"{what} has non-finite components")
    try:
        np.linalg.cholesky(g)  # reads the lower triangle only
    except np.linalg.LinAlgError:
        raise NonPositiveMetric(f"{what} is not positive definite") from None


def det_rel(s_up, g):
    """Relative determinant ``det(s^{..}) / det(g^{..}) = det(s) det(g)``.

    Invariant under change of basis; for the Einstein tensor this is
    the product of its eigenvalues with respect to ``g``.
    """
    require_positive_definite(g)
    return det3(s_up) * det3(g)


def lower(s_up, g):
    return g @ s_up @ g


def raise_(s, g_inv):
    return g_inv @ s @ g_inv


def generalized_eigenvalues(s, g, upper: bool = False):
    """Ascending eigenvalues of ``s`` with respect to the metric ``g``.

    For covariant ``s`` these are the eigenvalues of ``g^{-1} s``; with
    ``upper=True`` the argument is contravariant and is lowered first.
    """
    g = np.asarray(g, dtype=float)
    s = np.asarray(s, dtype=float)
    try:
        chol = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise NonPositiveMetric("metric is not positive definite") from None
    if upper:
        # eigenvalues of s^ij g_jk equal those of L^T s L for g = L L^T
        m = chol.swapaxes(-1, -2) @ s @ chol
    else:
        linv = inv3(chol)
        m = linv @ s @ linv.swapaxes(-1, -2)
    if not np.all(np.isfinite(m)):
        raise NonPositiveMetric("metric or tensor has non-finite components")
    return np.linalg.eigvalsh(symmetrize(m))


def volume_forms(g):
    """Return ``(mu_down, mu_up)`` with ``mu_123 = sqrt(det g)``, ``mu^123 = 1/sqrt(det g)``."""
    require_positive_definite(g)
    root = np.sqrt(det3(g))[..., None, None, None]
    return root * EPSILON, EPSILON / root


def raise_mu(mu_down, g_inv):
    """Raise all three indices of a volume form with ``g_inv``."""
    return np.einsum("...ip,...jq,...kr,...pqr->...ijk", g_inv, g_inv, g_inv, mu_down)


def _flatten_pairs(R, mu_up):
    batch = np.broadcast_shapes(R.shape[:-4], mu_up.shape[:-3])
    if R.shape[:-4] != batch:
        R = np.broadcast_to(R, batch + (3,) * 4)
    if mu_up.shape[:-3] != batch:
        mu_up = np.broadcast_to(mu_up, batch + (3,) * 3)
    return batch, R.reshape(batch + (9, 9)), mu_up.reshape(batch + (9, 3))


def mu_contract_h(R, mu_up):
    """Cross curvature tensor as a polynomial in curvature.

    ``h_ij = 1/8 R_{ilpq} mu^{pqk} R_{kjrs} mu^{rsl}``. Total on flat and
    degenerate points since nothing is inverted.
    """
    batch, Rm, mu = _flatten_pairs(R, mu_up)
    prod = (Rm @ mu).reshape(batch + (3, 3, 3))           # [i, l, k] = R_ilpq mu^pqk
    left = prod.reshape(batch + (3, 9))                    # [i, (l k)]
    # [(l k), j] from [k, j, l]
    right = prod.transpose(tuple(range(len(batch))) + tuple(len(batch) + a for a in (2, 0, 1)))
    right = right.reshape(batch + (9, 3))
    return sign("h_mu") * 0.125 * (left @ right)


def einstein_from_mu(R, mu_up):
    """``P^{mn} = -1/4 mu^{ijm} mu^{kln} R_{ijkl}``."""
    batch, Rm, mu = _flatten_pairs(R, mu_up)
    return -sign("P_mu") * 0.25 * (np.swapaxes(mu, -1, -2) @ Rm @ mu)


def riemann_symmetry_defect(R) -> float:
    """Largest violation of the algebraic curvature symmetries."""
    R = np.asarray(R)
    anti1 = R + np.swapaxes(R, -4, -3)
    anti2 = R + np.swapaxes(R, -2, -1)
    pair = R - np.moveaxis(R, (-4, -3), (-2, -1))
    bianchi = (R + np.einsum("...iklj->...ijkl", R)
               + np.einsum("...iljk->...ijkl", R))
    return float(max(np.max(np.abs(x), initial=0.0) for x in (anti1, anti2, pair, bianchi)))


def project_curvature(R):
    """Nearest tensor with ``R_ijkl = -R_jikl = -R_ijlk = R_klij``.

    In three dimensions the first Bianchi identity then holds as well.
    """
    R = 0.5 * (R - np.swapaxes(R, -4, -3))
    R = 0.5 * (R - np.swapaxes(R, -2, -1))
    n = R.ndim
    return 0.5 * (R + R.transpose(tuple(range(n - 4)) + (n - 2, n - 1, n - 4, n - 3)))


def kulkarni_nomizu(a, b):
    """``(a o b)_ijkl = a_ik b_jl + a_jl b_ik - a_il b_jk - a_jk b_il``."""
    return (np.einsum("...ik,...jl->...ijkl", a, b) + np.einsum("...jl,...ik->...ijkl", a, b)
            - np.einsum("...il,...jk->...ijkl", a, b) - np.einsum("...jk,...il->...ijkl", a, b))


def space_form_riemann(g, K: float):
    """Constant curvature ``K``: ``R_ijkl = K (g_ik g_jl - g_il g_jk)``."""
    return 0.5 * K * kulkarni_nomizu(g, g)


def sym2_to_vec(s):
    """Orthonormal coordinates on Sym2: off-diagonal components weighted by sqrt 2."""
    w = np.sqrt(2.0)
    return np.stack([s[..., 0, 0], w * s[..., 0, 1], w * s[..., 0, 2],
                     s[..., 1, 1], w * s[..., 1, 2], s[..., 2, 2]], axis=-1)


def vec_to_sym2(v):
    w = 1.0 / np.sqrt(2.0)
    out = np.empty(v.shape[:-1] + (3, 3))
    for n, (i, j) in enumerate(SYM_INDEX):
        c = v[..., n] * (1.0 if i == j else w)
        out[..., i, j] = c
        out[..., j, i] = c
    return out


# -- random samplers used by property tests and the identity suite ---------------------

def random_spd(rng: np.random.Generator, size=(), low: float = 0.2, high: float = 5.0):
    """Random symmetric positive definite tensors with eigenvalues in [low, high]."""
    size = tuple(np.atleast_1d(size)) if size != () else ()
    q, _ = np.linalg.qr(rng.standard_normal(size + (3, 3)))
    lam = rng.uniform(low, high, size + (3,))
    return symmetrize(np.einsum("...ia,...a,...ja->...ij", q, lam, q))


def random_curvature(rng: np.random.Generator, size=(), terms: int = 3):
    """Random algebraic curvature tensors ``sum_n +-(S_ik S_jl - S_il S_jk)``."""
    size = tuple(np.atleast_1d(size)) if size != () else ()
    R = np.zeros(size + (3, 3, 3, 3))
    for n in range(terms):
        s = symmetrize(rng.standard_normal(size + (3, 3)))
        R += (-1.0) ** n * 0.5 * kulkarni_nomizu(s, s)
    return R
