"""Gauss, Codazzi and Ricci residuals and their div-curl reformulation.

Layouts: ``gauss[i, j, k, l]``, ``codazzi[alpha, k, l, j]``,
``ricci[alpha, beta, k, l]``.  Every residual vanishes on data extracted from
a genuine immersion, with ``kappa[i, alpha, beta] = d_i eta_alpha . eta_beta``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .geometry import check_metric, christoffel, inverse_metric, orthonormal_frame, riemann
from .grid import ChartField, gradient_array, trapezoid_weights

#: Boundary ring excluded from residual norms.  Residuals contain second
#: derivatives; the one-sided stencil at the edge pollutes the first ring.
RING = 2

EQUATIONS = ("gauss", "codazzi", "ricci")


def _check_inputs(g: ChartField, h: ChartField, kappa: ChartField | None = None) -> tuple[int, int]:
    check_metric(g)
    n = g.chart.dim
    if not g.chart.same_as(h.chart):
        raise ValidationError("g and h live on different charts")
    if len(h.comp_shape) != 3 or h.comp_shape[1:] != (n, n):
        raise ValidationError(f"second form needs component shape (k, {n}, {n}), got {h.comp_shape}")
    k = h.comp_shape[0]
    if kappa is not None:
        if not g.chart.same_as(kappa.chart):
            raise ValidationError("kappa lives on a different chart")
        if kappa.comp_shape != (n, k, k):
            raise ValidationError(f"normal connection needs component shape ({n}, {k}, {k}), got {kappa.comp_shape}")
    return n, k


def zero_connection(h: ChartField) -> ChartField:
    """The trivial normal connection matching ``h``."""
    k, n = h.comp_shape[0], h.comp_shape[1]
    return ChartField(h.chart, np.zeros(h.chart.counts + (n, k, k)))


def gauss_residual(g: ChartField, h: ChartField, R: ChartField | None = None) -> ChartField:
    """``sum_alpha (h_ik h_jl - h_il h_jk) - R_ijkl``."""
    _check_inputs(g, h)
    R = riemann(g) if R is None else R
    H = h.values
    hh = np.einsum("...aik,...ajl->...ijkl", H, H)
    res = hh - np.swapaxes(hh, -1, -2) - R.values
    # enforce the exact antisymmetry in (i, j) that the formula has analytically
    res = 0.5 * (res - np.swapaxes(res, -3, -4))
    return ChartField(g.chart, res)


def codazzi_residual(g: ChartField, h: ChartField, kappa: ChartField,
                     gamma: ChartField | None = None) -> ChartField:
    """Codazzi residual ``[alpha, k, l, j]``, antisymmetric in ``(k, l)``."""
    _check_inputs(g, h, kappa)
    G = (christoffel(g) if gamma is None else gamma).values
    H = h.values
    K = kappa.values
    dh = gradient_array(H, g.chart)  # [..., k, alpha, l, j]
    t = (np.einsum("...kalj->...aklj", dh)
         + np.einsum("...mlj,...akm->...aklj", G, H)
         - np.einsum("...kab,...blj->...aklj", K, H))
    return ChartField(g.chart, t - np.swapaxes(t, -2, -3))


def ricci_residual(g: ChartField, h: ChartField, kappa: ChartField) -> ChartField:
    """Ricci residual ``[alpha, beta, k, l]``."""
    _check_inputs(g, h, kappa)
    ginv = inverse_metric(g)
    H = h.values
    K = kappa.values
    dk = gradient_array(K, g.chart)  # [..., k, l, alpha, beta]
    curl = np.einsum("...klab->...abkl", dk)
    curl = curl - np.swapaxes(curl, -1, -2)
    # t[a, b, k, l] = g^{mn} h^a_ml h^b_kn
    t = np.einsum("...mn,...aml,...bkn->...abkl", ginv, H, H)
    quad = t - np.swapaxes(t, -1, -2)
    comm = np.einsum("...kac,...lcb->...abkl", K, K)
    comm = comm - np.swapaxes(comm, -1, -2)
    return ChartField(g.chart, curl - quad - comm)


def _norms(res: ChartField, ring: int) -> tuple[float, float]:
    chart = res.chart
    sl = chart.interior(ring)
    vals = res.values[sl]
    if vals.size == 0:
        raise ValidationError(f"grid too small for a boundary ring of {ring} nodes")
    inf = float(np.max(np.abs(vals)))
    w = trapezoid_weights(chart)[sl]
    sq = np.sum(vals.reshape(vals.shape[:chart.dim] + (-1,)) ** 2, axis=-1)
    return inf, math.sqrt(float(np.sum(w * sq)))


@dataclass
class GcrResidual:
    """Residual fields of the three equations plus interior norms."""

    gauss: ChartField
    codazzi: ChartField
    ricci: ChartField
    ring: int = RING
    norms: dict[str, tuple[float, float]] = field(init=False)

    def __post_init__(self):
        self.norms = {name: _norms(getattr(self, name), self.ring) for name in EQUATIONS}

    @property
    def chart(self):
        return self.gauss.chart

    def max_norm(self) -> float:
        return max(v[0] for v in self.norms.values())

    def grid_label(self) -> str:
        return "x".join(str(c) for c in self.chart.counts)

    def rows(self) -> list[tuple[str, float, float, str]]:
        return [(name, *self.norms[name], self.grid_label()) for name in EQUATIONS]


def gcr_residuals(g: ChartField, h: ChartField, kappa: ChartField | None = None) -> GcrResidual:
    """All three residuals of the first formulation."""
    kappa = zero_connection(h) if kappa is None else kappa
    gamma = christoffel(g)
    from .geometry import riemann_from_christoffel

    R = riemann_from_christoffel(g, gamma)
    return GcrResidual(gauss_residual(g, h, R), codazzi_residual(g, h, kappa, gamma), ricci_residual(g, h, kappa))


def residual_csv(results: Sequence[GcrResidual]) -> str:
    """CSV summary with columns ``equation,norm_inf,norm_l2,grid``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["equation", "norm_inf", "norm_l2", "grid"])
    for r in results:
        for name, inf, l2, grid in r.rows():
            w.writerow([name, repr(inf), repr(l2), grid])
    return buf.getvalue()


def observed_orders(errors: Sequence[float], spacings: Sequence[float]) -> list[float]:
    """Observed convergence orders between consecutive refinements."""
    out = []
    for (e0, h0), (e1, h1) in zip(zip(errors, spacings), zip(errors[1:], spacings[1:])):
        if e0 <= 0 or e1 <= 0:
            out.append(math.inf if e1 <= 0 else -math.inf)
        else:
            out.append(math.log(e0 / e1) / math.log(h0 / h1))
    return out


# -- div-curl reformulation -----------------------------------------------------

@dataclass
class DivCurlPair:
    """A vector field ``V`` and a 1-form ``Omega`` on the same chart."""

    V: ChartField
    Omega: ChartField
    label: str


def _as_vector(X, n: int, name: str) -> np.ndarray:
    if isinstance(X, (int, np.integer)):
        if not 0 <= X < n:
            raise ValidationError(f"{name} index {X} out of range for dimension {n}")
        v = np.zeros(n)
        v[X] = 1.0
        return v
    v = np.asarray(X, dtype=float)
    if v.shape != (n,):
        raise ValidationError(f"{name} must be an axis index or a length-{n} coefficient vector")
    return v


def build_divcurl_pairs(h: ChartField, kappa: ChartField, X, Y, Z, eta: int) -> list[DivCurlPair]:
    """The B-pair for ``(Z, eta)`` and one normal-connection pair per second normal index.

    ``X``, ``Y``, ``Z`` are axis indices or constant coefficient vectors.
    """
    k, n = h.comp_shape[0], h.comp_shape[1]
    if kappa.comp_shape != (n, k, k) or not h.chart.same_as(kappa.chart):
        raise ValidationError("h and kappa do not match")
    if not 0 <= eta < k:
        raise ValidationError(f"normal index {eta} out of range (codimension {k})")
    X, Y, Z = _as_vector(X, n, "X"), _as_vector(Y, n, "Y"), _as_vector(Z, n, "Z")
    hz = np.einsum("...ij,j->...i", h.values[..., eta, :, :], Z)  # B(., Z, eta)
    bx = hz @ X
    by = hz @ Y
    V = bx[..., None] * Y - by[..., None] * X
    pairs = [DivCurlPair(ChartField(h.chart, V), ChartField(h.chart, -hz), f"B Z={Z.tolist()} eta={eta}")]
    K = kappa.values  # [..., i, a, b]
    for beta in range(k):
        c = K[..., :, eta, beta]  # <nabla_{d_i} eta_eta, eta_beta>
        cy = c @ Y
        cx = c @ X
        Vn = cy[..., None] * X - cx[..., None] * Y
        pairs.append(DivCurlPair(ChartField(h.chart, Vn), ChartField(h.chart, np.array(c)),
                                 f"normal xi={eta} eta={beta}"))
    return pairs


def _dform(omega: np.ndarray, chart) -> np.ndarray:
    """``d omega(d_k, d_l)`` for 1-forms stored with the form index last."""
    dw = gradient_array(omega, chart)  # [..., k, *, l]
    dw = np.moveaxis(dw, chart.dim, -2)  # [..., *, k, l]
    return dw - np.swapaxes(dw, -1, -2)


def second_formulation_residual(g: ChartField, h: ChartField, kappa: ChartField | None = None) -> GcrResidual:
    """Residuals assembled from the V/Omega pairs, oriented like :func:`gcr_residuals`.

    Normal sums run over the orthonormal normal frame; the tangential sum in
    the Ricci part runs over the metric-orthonormal frame of the chart.
    """
    kappa = zero_connection(h) if kappa is None else kappa
    n, k = _check_inputs(g, h, kappa)
    chart = g.chart
    H = h.values
    K = kappa.values
    gamma = christoffel(g)
    from .geometry import riemann_from_christoffel

    R = riemann_from_christoffel(g, gamma).values
    G = gamma.values
    I = np.eye(n)

    # V^B_{d_z, a}(d_k, d_l)[c] = B(d_k, d_z, a) delta_lc - B(d_l, d_z, a) delta_kc
    VB = np.einsum("...akz,lc->...zaklc", H, I) - np.einsum("...alz,kc->...zaklc", H, I)
    # Omega^B_{d_w, b}[c] = -B(d_c, d_w, b)
    OB = -np.einsum("...bcw->...wbc", H)
    # V^N_{a, b}(d_k, d_l)[c] = kappa_l[a,b] delta_kc - kappa_k[a,b] delta_lc
    VN = np.einsum("...lab,kc->...abklc", K, I) - np.einsum("...kab,lc->...abklc", K, I)
    # Omega^N_{a, b}[c] = kappa_c[a, b]
    ON = np.einsum("...cab->...abc", K)

    # Gauss: sum_a Omega^B_{d_l,a}(V^B_{d_k,a}(d_i,d_j)) + R_ijkl, negated
    pair = np.einsum("...kaijc,...lac->...ijkl", VB, OB)
    gauss = -(pair + R)

    # Codazzi: d Omega^B_{d_j,a}(d_k,d_l) + sum_b Omega^B_{d_j,b}(V^N_{a,b}(d_k,d_l)) + E(B), negated
    dOB = _dform(OB, chart)  # [..., j, a, k, l]
    pairN = np.einsum("...abklc,...jbc->...aklj", VN, OB)
    EB = (np.einsum("...mkj,...alm->...aklj", G, H) - np.einsum("...mlj,...akm->...aklj", G, H))
    codazzi = -(np.einsum("...jakl->...aklj", dOB) + pairN + EB)

    # Ricci: d Omega^N_{a,b} + sum_c Omega^N_{a,c}(V^N_{b,c}) - sum_Z Omega^B_{Z,b}(V^B_{Z,a})
    dON = _dform(ON, chart)  # [..., a, b, k, l]
    pairNN = np.einsum("...bgklc,...agc->...abkl", VN, ON)
    E = orthonormal_frame(g)  # E_z = E[z, m] d_m
    VBE = np.einsum("...zm,...maklc->...zaklc", E, VB)
    OBE = np.einsum("...zm,...mbc->...zbc", E, OB)
    pairB = np.einsum("...zaklc,...zbc->...abkl", VBE, OBE)
    ricci = dON + pairNN - pairB

    return GcrResidual(ChartField(chart, gauss), ChartField(chart, codazzi), ChartField(chart, ricci))


def default_gate(chart, scale: float = 1.0) -> float:
    """Gate for realization: ten times the expected second-order floor of the grid."""
    hmax = max(chart.spacing)
    return 10.0 * scale * hmax ** 2 + 1e-10
