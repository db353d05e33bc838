"""Intrinsic geometry of a sampled metric and extrinsic data of a sampled immersion.

Index layouts (components follow the node axes):

* metric ``g[i, j]``
* Christoffel ``gamma[k, i, j]`` = Gamma^k_ij
* Riemann ``R[i, j, k, l]`` = <R(d_i, d_j) d_l, d_k>, so R_1212 = K det g
* immersion ``f[a]``, a < n + k
* normal frame ``eta[alpha, a]``
* second form ``h[alpha, i, j]`` = d_i d_j f . eta_alpha
* normal connection ``kappa[i, alpha, beta]`` = d_i eta_alpha . eta_beta
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .grid import ChartField, gradient_array, partial, second_partial

SEED_TOL = 1e-6
RANK_TOL = 1e-8


def check_metric(g: ChartField) -> ChartField:
    """Validate a metric field: square symmetric components, positive definite everywhere."""
    if len(g.comp_shape) != 2 or g.comp_shape[0] != g.comp_shape[1] or g.comp_shape[0] != g.chart.dim:
        raise ValidationError(f"metric needs component shape ({g.chart.dim}, {g.chart.dim}), got {g.comp_shape}")
    v = g.values
    scale = max(float(np.max(np.abs(v))), 1.0)
    if np.max(np.abs(v - np.swapaxes(v, -1, -2))) > 1e-12 * scale:
        raise ValidationError("metric is not symmetric")
    if np.min(np.linalg.eigvalsh(v)) <= 0:
        raise ValidationError("metric is singular or indefinite at some node")
    return g


def inverse_metric(g: ChartField) -> np.ndarray:
    check_metric(g)
    return np.linalg.inv(g.values)


def christoffel(g: ChartField) -> ChartField:
    """Christoffel symbols of the second kind, layout ``[k, i, j]``."""
    ginv = inverse_metric(g)
    dg = gradient_array(g.values, g.chart)  # [..., a, b, c] = d_a g_bc
    lowered = (np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg)
    gamma = 0.5 * np.einsum("...kl,...lij->...kij", ginv, lowered)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, -1, -2))
    return ChartField(g.chart, gamma)


def riemann_from_christoffel(g: ChartField, gamma: ChartField) -> ChartField:
    dgam = gradient_array(gamma.values, g.chart)  # [..., a, m, j, l] = d_a Gamma^m_jl
    G = gamma.values
    # coefficient of d_m in R(d_i, d_j) d_l
    rm = (np.einsum("...imjl->...mlij", dgam) - np.einsum("...jmil->...mlij", dgam)
          + np.einsum("...pjl,...mip->...mlij", G, G) - np.einsum("...pil,...mjp->...mlij", G, G))
    R = np.einsum("...km,...mlij->...ijkl", g.values, rm)
    # the lowered index breaks the (k, l) antisymmetry at O(h^2); restore it exactly
    R = 0.5 * (R - np.swapaxes(R, -1, -2))
    return ChartField(g.chart, R)


def riemann(g: ChartField) -> ChartField:
    """Riemann tensor ``R[i, j, k, l]`` from finite differences of the Christoffel symbols."""
    return riemann_from_christoffel(g, christoffel(g))


# -- immersion data -------------------------------------------------------------

def jacobian(f: ChartField) -> np.ndarray:
    """``J[..., i, a] = d_i f^a``."""
    if len(f.comp_shape) != 1:
        raise ValidationError(f"immersion needs component shape (n+k,), got {f.comp_shape}")
    return gradient_array(f.values, f.chart)


def check_immersion(f: ChartField, tol: float = RANK_TOL) -> np.ndarray:
    J = jacobian(f)
    n = f.chart.dim
    if f.comp_shape[0] <= n:
        raise ValidationError("ambient dimension must exceed chart dimension")
    smin = np.linalg.svd(J, compute_uv=False)[..., -1]
    if np.min(smin) <= tol:
        raise ValidationError("immersion differential is rank deficient at some node")
    return J


def extract_first_form(f: ChartField) -> ChartField:
    """Induced metric ``g_ij = d_i f . d_j f``."""
    J = check_immersion(f)
    g = np.einsum("...ia,...ja->...ij", J, J)
    return ChartField(f.chart, 0.5 * (g + np.swapaxes(g, -1, -2)))


def _tangent_basis(J: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the tangent space as columns, shape ``(..., n+k, n)``."""
    q, _ = np.linalg.qr(np.swapaxes(J, -1, -2))
    return q


def seed_normals(J: np.ndarray, tol: float = SEED_TOL) -> np.ndarray:
    """Normal frame at a single node by the seed sweep.

    Gram-Schmidt of the ambient standard basis, in index order, against the
    tangent space and the normals already accepted; candidates whose
    residual falls below ``tol`` are skipped.
    """
    n, m = J.shape
    k = m - n
    if np.linalg.svd(J, compute_uv=False)[-1] <= tol:
        raise ValidationError("rank-deficient Jacobian at the seed node")
    basis = list(_tangent_basis(J).T)
    normals = []
    for a in range(m):
        v = np.zeros(m)
        v[a] = 1.0
        for b in basis:
            v = v - (v @ b) * b
        # second pass keeps the result orthogonal to working precision
        for b in basis:
            v = v - (v @ b) * b
        norm = np.linalg.norm(v)
        if norm < tol:
            continue
        v = v / norm
        basis.append(v)
        normals.append(v)
        if len(normals) == k:
            break
    if len(normals) < k:
        raise ValidationError("seed sweep could not produce a full normal frame (degenerate Jacobian)")
    return np.array(normals)


def _reproject(prev: np.ndarray, J: np.ndarray, tol: float) -> np.ndarray:
    """Carry a batch of frames ``prev[..., alpha, a]`` into the normal spaces of ``J``."""
    Q = _tangent_basis(J)
    out = prev - np.einsum("...la,...ab->...lb", np.einsum("...lb,...bt->...lt", prev, Q), np.swapaxes(Q, -1, -2))
    k = out.shape[-2]
    for alpha in range(k):
        v = out[..., alpha, :]
        for _ in range(2):
            v = v - np.einsum("...t,...at->...a", np.einsum("...a,...at->...t", v, Q), Q)
            for beta in range(alpha):
                w = out[..., beta, :]
                v = v - np.sum(v * w, axis=-1, keepdims=True) * w
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.min(norm) < tol:
            raise ValidationError("normal frame cannot be continued: normal space turns too fast for the grid")
        out[..., alpha, :] = v / norm
    return out


def extract_normal_frame(f: ChartField) -> ChartField:
    """Orthonormal normal frame, layout ``[alpha, a]``.

    The seed sweep fixes the frame at the base node (index 0); it is then
    carried along the canonical path (axis 0 from the base, then along axis 1
    from every axis-0 node, then axis 2) by projecting the neighbour's frame
    onto the local normal space and re-orthonormalizing.  This keeps the
    frame continuous where a per-node seed sweep would flip signs.
    """
    J = check_immersion(f)
    chart = f.chart
    m = f.comp_shape[0]
    k = m - chart.dim
    frame = np.empty(chart.counts + (k, m))
    base = (0,) * chart.dim
    frame[base] = seed_normals(J[base])
    for axis in range(chart.dim):
        for step in range(1, chart.counts[axis]):
            # nodes on earlier axes are all filled; later axes still sit at index 0
            idx_prev = tuple([slice(None)] * axis + [step - 1] + [0] * (chart.dim - axis - 1))
            idx_cur = tuple([slice(None)] * axis + [step] + [0] * (chart.dim - axis - 1))
            frame[idx_cur] = _reproject(frame[idx_prev], J[idx_cur], SEED_TOL)
    return ChartField(chart, frame)


def _check_pair(f: ChartField, frame: ChartField):
    if not f.chart.same_as(frame.chart):
        raise ValidationError("frame and immersion live on different charts")
    m = f.comp_shape[0]
    if len(frame.comp_shape) != 2 or frame.comp_shape[1] != m or frame.comp_shape[0] != m - f.chart.dim:
        raise ValidationError(f"frame shape {frame.comp_shape} does not match immersion into R^{m}")


def extract_second_form(f: ChartField, frame: ChartField) -> ChartField:
    """Second fundamental form ``h[alpha, i, j] = d_i d_j f . eta_alpha`` (symmetrized)."""
    _check_pair(f, frame)
    n = f.chart.dim
    k = frame.comp_shape[0]
    h = np.empty(f.chart.counts + (k, n, n))
    for i in range(n):
        for j in range(i, n):
            d2 = second_partial(f, i, j).values
            h[..., :, i, j] = np.einsum("...a,...la->...l", d2, frame.values)
            h[..., :, j, i] = h[..., :, i, j]
    return ChartField(f.chart, h)


def extract_normal_connection(f: ChartField, frame: ChartField, antisymmetrize: bool = True) -> ChartField:
    """Normal connection ``kappa[i, alpha, beta] = d_i eta_alpha . eta_beta``."""
    _check_pair(f, frame)
    n = f.chart.dim
    eta = frame.values
    parts = []
    for i in range(n):
        deta = partial(frame, i).values
        parts.append(np.einsum("...la,...ma->...lm", deta, eta))
    kappa = np.stack(parts, axis=f.chart.dim)
    if antisymmetrize:
        kappa = 0.5 * (kappa - np.swapaxes(kappa, -1, -2))
    return ChartField(f.chart, kappa)


def shape_operator(h: ChartField, g: ChartField, alpha: int) -> ChartField:
    """Mixed tensor ``S[i, j] = g^{ik} h^alpha_kj``."""
    k = h.comp_shape[0]
    if not 0 <= alpha < k:
        raise ValidationError(f"normal index {alpha} out of range (codimension {k})")
    if not h.chart.same_as(g.chart):
        raise ValidationError("h and g live on different charts")
    ginv = inverse_metric(g)
    return ChartField(g.chart, np.einsum("...ik,...kj->...ij", ginv, h.values[..., alpha, :, :]))


def orthonormal_frame(g: ChartField) -> np.ndarray:
    """Gram-Schmidt of the coordinate fields in the metric ``g``.

    Returns ``E[..., i, m]``: ``E_i = E[i, m] d_m`` with ``E g E^T = I``
    (``E`` is the inverse Cholesky factor, lower triangular).
    """
    check_metric(g)
    L = np.linalg.cholesky(g.values)
    return np.tril(np.linalg.inv(L))
