"""Constructive realization of an immersion from (g, h, kappa).

Pipeline: orthonormal coframe, connection form ``W``, Pfaff integration of
the frame ``A`` (rows are the adapted frame vectors), then path integration
of ``df = w A``.  All integrations follow one canonical path: the axis-0
spine through the base node, then axis-1 lines from every spine node, then
axis 2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import expm

from .cartan import cartan_data
from .errors import GateViolation, NumericalFailure, ValidationError
from .gcr import default_gate, gcr_residuals, zero_connection
from .geometry import check_metric, jacobian
from .grid import Chart, ChartField

ORTHO_TOL = 1e-12
MAX_STEP_NORM = 10.0


def _check_orthogonal(A: np.ndarray, tol: float = 1e-8) -> None:
    m = A.shape[-1]
    if A.shape != (m, m) or np.max(np.abs(A.T @ A - np.eye(m))) > tol:
        raise ValidationError("initial frame must be an orthogonal matrix")


def polar_project(A: np.ndarray, tol: float = ORTHO_TOL, maxiter: int = 50) -> np.ndarray:
    """Orthogonal polar factor by the Newton iteration ``A <- (A + A^{-T}) / 2``."""
    I = np.eye(A.shape[-1])
    for _ in range(maxiter):
        if np.max(np.abs(np.swapaxes(A, -1, -2) @ A - I)) <= tol:
            return A
        A = 0.5 * (A + np.swapaxes(np.linalg.inv(A), -1, -2))
    raise NumericalFailure("polar projection did not converge")


def _sweeps(counts: Sequence[int], base: Sequence[int]) -> Iterator[tuple[int, tuple, tuple, int]]:
    """Yield ``(axis, prev_index, cur_index, step)`` slabs along the canonical path."""
    n = len(counts)
    for a in range(n):
        tail = tuple(base[a + 1:])
        head = (slice(None),) * a
        for t in range(base[a] + 1, counts[a]):
            yield a, head + (t - 1,) + tail, head + (t,) + tail, 1
        for t in range(base[a] - 1, -1, -1):
            yield a, head + (t + 1,) + tail, head + (t,) + tail, -1


def _base(chart: Chart, base) -> tuple[int, ...]:
    base = (0,) * chart.dim if base is None else tuple(int(b) for b in base)
    if len(base) != chart.dim or any(not 0 <= b < c for b, c in zip(base, chart.counts)):
        raise ValidationError(f"base node {base} outside grid {chart.counts}")
    return base


def _check_connection(W: ChartField) -> int:
    n = W.chart.dim
    if len(W.comp_shape) != 3 or W.comp_shape[0] != n or W.comp_shape[1] != W.comp_shape[2]:
        raise ValidationError(f"connection form needs component shape ({n}, m, m), got {W.comp_shape}")
    bad = np.max(np.abs(W.values + np.swapaxes(W.values, -1, -2)))
    if bad > 1e-10 * max(1.0, float(np.max(np.abs(W.values)))):
        raise ValidationError("connection form is not antisymmetric")
    hmax = np.asarray(W.chart.spacing)
    size = np.max(np.linalg.norm(W.values, ord=2, axis=(-2, -1)).reshape(-1, n) * hmax)
    if size > MAX_STEP_NORM:
        raise NumericalFailure(f"connection too large for the grid: max |W| h = {size:.3g} > {MAX_STEP_NORM}")
    return W.comp_shape[1]


def pfaff_integrate(W: ChartField, A0: np.ndarray | None = None, base=None) -> ChartField:
    """Solve ``d_i A = W_i A`` with midpoint-exponential edge steps."""
    m = _check_connection(W)
    chart = W.chart
    base = _base(chart, base)
    A0 = np.eye(m) if A0 is None else np.asarray(A0, dtype=float)
    _check_orthogonal(A0)
    A = np.empty(chart.counts + (m, m))
    A[base] = A0
    V = W.values
    for a, prev, cur, step in _sweeps(chart.counts, base):
        M = (step * 0.5 * chart.spacing[a]) * (V[prev][..., a, :, :] + V[cur][..., a, :, :])
        A[cur] = polar_project(expm(M) @ A[prev])
    return ChartField(chart, A)


def _edge_exponentials(W: ChartField, a: int) -> np.ndarray:
    V = W.values[..., a, :, :]
    lo = [slice(None)] * W.chart.dim
    hi = [slice(None)] * W.chart.dim
    lo[a] = slice(None, -1)
    hi[a] = slice(1, None)
    return expm(0.5 * W.chart.spacing[a] * (V[tuple(lo)] + V[tuple(hi)]))


def _take(arr: np.ndarray, slices: dict[int, slice]) -> np.ndarray:
    idx = [slice(None)] * (arr.ndim - 2)
    for ax, sl in slices.items():
        idx[ax] = sl
    return arr[tuple(idx)]


def plaquette_residuals(W: ChartField) -> dict[tuple[int, int], np.ndarray]:
    """``|| U4 U3 U2 U1 - I ||_F`` for every plaquette, keyed by axis pair."""
    _check_connection(W)
    n = W.chart.dim
    I = np.eye(W.comp_shape[1])
    U = [_edge_exponentials(W, a) for a in range(n)]
    out = {}
    for a in range(n):
        for b in range(a + 1, n):
            U1 = _take(U[a], {b: slice(None, -1)})            # p -> p + e_a
            U2 = _take(U[b], {a: slice(1, None)})             # p + e_a -> p + e_a + e_b
            U3 = np.swapaxes(_take(U[a], {b: slice(1, None)}), -1, -2)   # back along a
            U4 = np.swapaxes(_take(U[b], {a: slice(None, -1)}), -1, -2)  # back along b
            out[(a, b)] = np.linalg.norm(U4 @ U3 @ U2 @ U1 - I, axis=(-2, -1))
    return out


def holonomy_residual(W: ChartField) -> float:
    """Max over plaquettes of the loop-product defect."""
    return max(float(np.max(r)) for r in plaquette_residuals(W).values())


def _check_one_form(one_form: ChartField) -> int:
    n = one_form.chart.dim
    if len(one_form.comp_shape) != 2 or one_form.comp_shape[0] != n:
        raise ValidationError(f"integrand needs component shape ({n}, m), got {one_form.comp_shape}")
    return one_form.comp_shape[1]


def poincare_integrate(one_form: ChartField, f0=None, base=None) -> ChartField:
    """Solve ``d_i f = phi_i`` by trapezoid steps along the canonical path."""
    m = _check_one_form(one_form)
    chart = one_form.chart
    base = _base(chart, base)
    f = np.empty(chart.counts + (m,))
    f[base] = np.zeros(m) if f0 is None else np.asarray(f0, dtype=float).reshape(m)
    P = one_form.values
    for a, prev, cur, step in _sweeps(chart.counts, base):
        f[cur] = f[prev] + (step * 0.5 * chart.spacing[a]) * (P[prev][..., a, :] + P[cur][..., a, :])
    return ChartField(chart, f)


def loop_defect(one_form: ChartField) -> float:
    """Max over plaquettes of the Euclidean norm of the trapezoid loop integral."""
    _check_one_form(one_form)
    chart = one_form.chart
    n = chart.dim
    P = one_form.values
    worst = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            def node(da, db):
                idx = [slice(None)] * n
                idx[a] = slice(da, chart.counts[a] - 1 + da)
                idx[b] = slice(db, chart.counts[b] - 1 + db)
                return tuple(idx)

            ha, hb = chart.spacing[a], chart.spacing[b]
            p00, p10, p01, p11 = P[node(0, 0)], P[node(1, 0)], P[node(0, 1)], P[node(1, 1)]
            loop = (0.5 * ha * (p00[..., a, :] + p10[..., a, :]) + 0.5 * hb * (p10[..., b, :] + p11[..., b, :])
                    - 0.5 * ha * (p01[..., a, :] + p11[..., a, :]) - 0.5 * hb * (p00[..., b, :] + p01[..., b, :]))
            worst = max(worst, float(np.max(np.linalg.norm(loop, axis=-1))))
    return worst


def _central4(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(values, axis, 0)
    out = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12 * h)
    return np.moveaxis(out, 0, axis)


def isometry_defect(f: ChartField, g: ChartField) -> float:
    """Max of ``|d_i f . d_j f - g_ij|`` over nodes at least three from the boundary.

    Derivatives use the fourth-order central stencil so the check resolves
    the realization error rather than its own truncation error; the first
    ring is skipped because boundary stencils there are not smooth.
    """
    if not f.chart.same_as(g.chart):
        raise ValidationError("immersion and metric live on different charts")
    chart = f.chart
    if len(f.comp_shape) != 1:
        raise ValidationError("isometry_defect expects an immersion field")
    if min(chart.counts) < 7:
        J = jacobian(f)
        induced = np.einsum("...ia,...ja->...ij", J, J)
        return float(np.max(np.abs(induced - g.values)[chart.interior(1)]))
    ring = 3
    parts = []
    for a in range(chart.dim):
        d = _central4(f.values, chart.spacing[a], a)
        idx = tuple(slice(ring - 2, d.shape[b] - ring + 2) if b == a else slice(ring, -ring)
                    for b in range(chart.dim))
        parts.append(d[idx])
    J = np.stack(parts, axis=chart.dim)
    induced = np.einsum("...ia,...ja->...ij", J, J)
    return float(np.max(np.abs(induced - g.values[chart.interior(ring)])))


@dataclass
class RealizationResult:
    A: ChartField
    f: ChartField
    holonomy_defect: float
    isometry_defect: float
    path_defect: float
    frame: ChartField
    gcr_max: float
    gate: float
    notes: list[str] = field(default_factory=list)

    @property
    def gate_passed(self) -> bool:
        return self.gcr_max <= self.gate

    def normal_frame(self) -> ChartField:
        n = self.f.chart.dim
        return ChartField(self.f.chart, np.array(self.A.values[..., n:, :]))


def realize(g: ChartField, h: ChartField, kappa: ChartField | None = None, *, gate: float | None = None,
            allow_incompatible: bool = False, A0=None, f0=None, base=None) -> RealizationResult:
    """Integrate (g, h, kappa) to an immersion after checking the GCR gate."""
    check_metric(g)
    res = gcr_residuals(g, h, kappa)
    kappa = zero_connection(h) if kappa is None else kappa
    gate = default_gate(g.chart) if gate is None else float(gate)
    notes = []
    gmax = res.max_norm()
    if gmax > gate:
        msg = f"GCR residual {gmax:.3g} exceeds gate {gate:.3g}"
        if not allow_incompatible:
            raise GateViolation(msg + "; pass allow_incompatible to proceed")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    frames, w, W = cartan_data(g, h, kappa)
    A = pfaff_integrate(W, A0, base)
    n = g.chart.dim
    phi = np.einsum("...ia,...ab->...ib", w.values, A.values)
    one_form = ChartField(g.chart, phi)
    f = poincare_integrate(one_form, f0, base)
    frame = np.array(A.values)
    frame[..., :n, :] = phi
    return RealizationResult(
        A=A,
        f=f,
        holonomy_defect=holonomy_residual(W),
        isometry_defect=isometry_defect(f, g),
        path_defect=loop_defect(one_form),
        frame=ChartField(g.chart, frame),
        gcr_max=gmax,
        gate=gate,
        notes=notes,
    )


@dataclass
class Alignment:
    """Best rigid motion with ``f_ref ~ f @ rotation.T + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    rmse: float
    degenerate: bool = False

    def __iter__(self):
        return iter((self.rotation, self.translation, self.rmse))

    def apply(self, f: ChartField) -> ChartField:
        return f.with_values(f.values @ self.rotation.T + self.translation)


def rigid_align(f: ChartField, f_ref: ChartField) -> Alignment:
    """Orthogonal Procrustes with reflections allowed."""
    if not f.chart.same_as(f_ref.chart) or f.comp_shape != f_ref.comp_shape or len(f.comp_shape) != 1:
        raise ValidationError("immersions must share chart and ambient dimension")
    m = f.comp_shape[0]
    P = f.values.reshape(-1, m)
    Q = f_ref.values.reshape(-1, m)
    cp, cq = P.mean(axis=0), Q.mean(axis=0)
    H = (P - cp).T @ (Q - cq)
    U, s, Vt = np.linalg.svd(H)
    R = (U @ Vt).T
    t = cq - R @ cp
    resid = P @ R.T + t - Q
    rmse = math.sqrt(float(np.mean(np.sum(resid ** 2, axis=1))))
    degenerate = bool(s[-1] <= 1e-12 * max(s[0], 1e-300))
    return Alignment(R, t, rmse, degenerate)


def dumps_obj(f: ChartField, project: Sequence[int] | None = None) -> str:
    """Wavefront OBJ for a 2-chart immersion, triangle pairs per quad, 1-based indices."""
    if f.chart.dim != 2 or len(f.comp_shape) != 1:
        raise ValidationError("OBJ export needs an immersion of a 2-chart")
    m = f.comp_shape[0]
    project = tuple(range(min(3, m))) if project is None else tuple(int(p) for p in project)
    if len(project) != 3 or any(not 0 <= p < m for p in project):
        raise ValidationError(f"--project needs three ambient axes in [0, {m})")
    N0, N1 = f.chart.counts
    pts = f.values[..., list(project)].reshape(-1, 3)
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in pts]
    for i in range(N0 - 1):
        for j in range(N1 - 1):
            a = i * N1 + j + 1
            b = (i + 1) * N1 + j + 1
            c = b + 1
            d = a + 1
            lines.append(f"f {a} {b} {c}")
            lines.append(f"f {a} {c} {d}")
    return "\n".join(lines) + "\n"
