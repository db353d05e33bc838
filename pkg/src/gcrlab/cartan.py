"""Orthonormal frames, connection and canonical forms, structure residuals.

``W[..., i, a, b] = omega^a_b(d_i) = <d_i e_a, e_b>`` where ``e`` is the
adapted frame (tangent ``E_1..E_n`` then normals).  Stacking the frame
vectors as the rows of ``A`` gives the Pfaff system ``d_i A = W_i A`` and
``df = w A``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import check_metric, christoffel, orthonormal_frame
from .grid import Chart, ChartField, gradient_array


@dataclass
class FramePackage:
    """Orthonormal tangent frame ``E[i, m]`` and dual coframe ``omega[i, j] = omega^i(d_j)``."""

    E: ChartField
    omega: ChartField

    @property
    def chart(self) -> Chart:
        return self.E.chart


def orthonormal_coframe(g: ChartField) -> FramePackage:
    """Gram-Schmidt of the coordinate basis in index order."""
    check_metric(g)
    E = orthonormal_frame(g)
    omega = np.linalg.inv(np.swapaxes(E, -1, -2))
    return FramePackage(ChartField(g.chart, E), ChartField(g.chart, omega))


def connection_form(g: ChartField, h: ChartField, kappa: ChartField, frames: FramePackage) -> ChartField:
    """Connection form ``W[i, a, b]``, antisymmetric in ``(a, b)``."""
    chart = g.chart
    n = chart.dim
    k = h.comp_shape[0]
    for fld in (h, kappa, frames.E):
        if not fld.chart.same_as(chart):
            raise ValidationError("connection_form inputs live on different charts")
    if h.comp_shape != (k, n, n) or kappa.comp_shape != (n, k, k) or frames.E.comp_shape != (n, n):
        raise ValidationError("connection_form inputs have inconsistent component shapes")
    E = frames.E.values
    G = christoffel(g).values  # [m, j, q]
    dE = gradient_array(E, chart)  # [j, i, m]
    # covariant derivative of E_i along d_j, in coordinates: d_j E_i^m + Gamma^m_jq E_i^q
    cov = dE + np.einsum("...mjq,...iq->...jim", G, E)
    Wt = np.einsum("...jim,...mp,...lp->...jil", cov, g.values, E)
    Wt = 0.5 * (Wt - np.swapaxes(Wt, -1, -2))
    WB = np.einsum("...im,...amj->...jia", E, h.values)  # <B(E_i, d_j), eta_a>
    W = np.zeros(chart.counts + (n, n + k, n + k))
    W[..., :n, :n] = Wt
    W[..., :n, n:] = WB
    W[..., n:, :n] = -np.swapaxes(WB, -1, -2)
    W[..., n:, n:] = 0.5 * (kappa.values - np.swapaxes(kappa.values, -1, -2))
    return ChartField(chart, W)


def canonical_form(frames: FramePackage, codim: int) -> ChartField:
    """``w[i, a] = omega^a(d_i)`` padded with ``codim`` zeros."""
    n = frames.chart.dim
    w = np.zeros(frames.chart.counts + (n, n + codim))
    w[..., :, :n] = np.swapaxes(frames.omega.values, -1, -2)
    return ChartField(frames.chart, w)


def cartan_data(g: ChartField, h: ChartField, kappa: ChartField) -> tuple[FramePackage, ChartField, ChartField]:
    """Frames, canonical form and connection form in one call."""
    frames = orthonormal_coframe(g)
    return frames, canonical_form(frames, h.comp_shape[0]), connection_form(g, h, kappa, frames)


def first_structure_residual(w: ChartField, W: ChartField) -> ChartField:
    """``(dw - w ^ W)(d_i, d_j)``, layout ``[i, j, a]``."""
    if not w.chart.same_as(W.chart) or W.comp_shape[1:] != (w.comp_shape[1],) * 2 or W.comp_shape[0] != w.comp_shape[0]:
        raise ValidationError("canonical and connection forms do not match")
    dw = gradient_array(w.values, w.chart)  # [i, j, a] = d_i w_j
    dw = dw - np.swapaxes(dw, -2, -3)
    wW = np.einsum("...ia,...jab->...ijb", w.values, W.values)
    return ChartField(w.chart, dw - (wW - np.swapaxes(wW, -2, -3)))


def second_structure_residual(W: ChartField) -> ChartField:
    """``d_j W_i - d_i W_j + [W_i, W_j]``, layout ``[i, j, a, b]``.

    For left-multiplied frames (``dA = W A``) this is the curvature that
    vanishes exactly when the Pfaff system is integrable.
    """
    if len(W.comp_shape) != 3 or W.comp_shape[1] != W.comp_shape[2]:
        raise ValidationError("connection form needs component shape (n, m, m)")
    dW = gradient_array(W.values, W.chart)  # [j, i, a, b] = d_j W_i
    curl = np.swapaxes(dW, -3, -4) - dW
    V = W.values
    prod = np.einsum("...iac,...jcb->...ijab", V, V)
    return ChartField(W.chart, curl + prod - np.swapaxes(prod, -3, -4))


def structure_norm(res: ChartField, ring: int = 2) -> float:
    """Max over interior nodes and coordinate pairs of the Frobenius norm of the residual."""
    chart = res.chart
    vals = res.values[chart.interior(ring)]
    flat = vals.reshape(vals.shape[:chart.dim] + (chart.dim, chart.dim, -1))
    return float(np.max(np.linalg.norm(flat, axis=-1)))
