"""Discrete exterior calculus on flat periodic tori.

Cochains store pointwise form components (cell integral divided by cell
measure), so ``d`` divides the signed incidence sum by the spacing and the
Hodge star is a signed relabelling between the primal grid and the dual grid
shifted by half a cell.  With this convention every degree uses the same
inner product ``<a, b> = cell_volume * sum(a * b)``.

A primal q-cell is a base vertex plus an ascending tuple of q axes; the dual
cell of ``(v, S)`` spans the complementary axes and has dual base vertex
``v - 1_{S^c}`` (dual vertex ``w`` sits at ``w + 1/2``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalFailure, ValidationError
from .grid import _floats, _fmt_list, _ints, _parse_header, format_rows


@dataclass(frozen=True)
class TorusMesh:
    """Regular cubical mesh of the flat torus prod_i [0, L_i)."""

    periods: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        periods = tuple(float(x) for x in self.periods)
        resolution = tuple(int(x) for x in self.resolution)
        if len(periods) not in (2, 3) or len(resolution) != len(periods):
            raise ValidationError("torus dimension must be 2 or 3 with one period and resolution per axis")
        if any(not (p > 0 and math.isfinite(p)) for p in periods):
            raise ValidationError(f"periods must be positive, got {periods}")
        if any(r < 4 for r in resolution):
            raise ValidationError(f"resolutions must be >= 4, got {resolution}")
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "resolution", resolution)

    @classmethod
    def square(cls, n: int, N: int, L: float = 1.0) -> "TorusMesh":
        return cls((L,) * n, (N,) * n)

    @property
    def dim(self) -> int:
        return len(self.periods)

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.periods, self.resolution))

    @property
    def cell_volume(self) -> float:
        return math.prod(self.spacing)

    @property
    def volume(self) -> float:
        return math.prod(self.periods)

    def subsets(self, q: int) -> list[tuple[int, ...]]:
        """Axis subsets labelling q-cells at a vertex, in canonical order."""
        return list(combinations(range(self.dim), q))

    def num_cells(self, q: int) -> int:
        return math.prod(self.resolution) * math.comb(self.dim, q)

    def axes(self) -> list[np.ndarray]:
        return [h * np.arange(N) for h, N in zip(self.spacing, self.resolution)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def cell_centers(self, axes: Sequence[int], dual: bool = False) -> list[np.ndarray]:
        """Coordinates of the centres of all cells spanning ``axes``."""
        out = []
        for a, X in enumerate(self.mesh()):
            shift = (0.5 if a in axes else 0.0) + (0.5 if dual else 0.0)
            out.append(X + shift * self.spacing[a])
        return out


class Cochain:
    """Discrete q-form: one real per q-cell.

    ``values`` has shape ``(*resolution, C(n, q))``; the last axis runs over
    ``mesh.subsets(q)``.  ``dual`` marks cochains living on the dual mesh.
    """

    __slots__ = ("mesh", "degree", "values", "dual")

    def __init__(self, mesh: TorusMesh, degree: int, values, dual: bool = False):
        if not 0 <= degree <= mesh.dim:
            raise ValidationError(f"degree {degree} out of range for a {mesh.dim}-torus")
        ncomp = math.comb(mesh.dim, degree)
        arr = np.array(values, dtype=float)
        shape = mesh.resolution + (ncomp,)
        if arr.shape != shape:
            if arr.size != math.prod(shape):
                raise ValidationError(f"cochain array has shape {arr.shape}, expected {shape}")
            arr = arr.reshape(shape)
        arr.setflags(write=False)
        self.mesh = mesh
        self.degree = degree
        self.values = arr
        self.dual = bool(dual)

    @classmethod
    def zeros(cls, mesh: TorusMesh, degree: int, dual: bool = False) -> "Cochain":
        return cls(mesh, degree, np.zeros(mesh.resolution + (math.comb(mesh.dim, degree),)), dual)

    @classmethod
    def from_components(cls, mesh: TorusMesh, degree: int,
                        fn: Callable[[tuple[int, ...], list[np.ndarray]], np.ndarray]) -> "Cochain":
        """Sample ``fn(axes, centre_coords)`` at the centre of every q-cell."""
        comps = [np.broadcast_to(np.asarray(fn(S, mesh.cell_centers(S)), dtype=float), mesh.resolution)
                 for S in mesh.subsets(degree)]
        return cls(mesh, degree, np.stack(comps, axis=-1))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def like(self, values) -> "Cochain":
        return Cochain(self.mesh, self.degree, values, self.dual)

    def __add__(self, other: "Cochain") -> "Cochain":
        _check_compatible(self, other)
        return self.like(self.values + other.values)

    def __sub__(self, other: "Cochain") -> "Cochain":
        _check_compatible(self, other)
        return self.like(self.values - other.values)

    def __mul__(self, scalar: float) -> "Cochain":
        return self.like(self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "Cochain":
        return self.like(-self.values)

    def __repr__(self):
        kind = "dual" if self.dual else "primal"
        return f"Cochain({kind}, q={self.degree}, resolution={self.mesh.resolution})"


def _check_compatible(a: Cochain, b: Cochain):
    if a.mesh != b.mesh or a.degree != b.degree or a.dual != b.dual:
        raise ValidationError("cochains live on different meshes, degrees or complexes")


def _perm_sign(order: Sequence[int]) -> int:
    sign = 1
    order = list(order)
    for i in range(len(order)):
        for j in range(i + 1, len(order)):
            if order[i] > order[j]:
                sign = -sign
    return sign


def inner(a: Cochain, b: Cochain) -> float:
    """Star-weighted L2 inner product."""
    _check_compatible(a, b)
    return float(np.sum(a.values * b.values) * a.mesh.cell_volume)


def norm(a: Cochain) -> float:
    return math.sqrt(max(inner(a, a), 0.0))


def d(c: Cochain) -> Cochain:
    """Exterior derivative: signed coboundary divided by the spacing."""
    mesh, q = c.mesh, c.degree
    if q >= mesh.dim:
        raise ValidationError(f"d is undefined on top-degree ({q}) cochains")
    src = {S: i for i, S in enumerate(mesh.subsets(q))}
    out = []
    for T in mesh.subsets(q + 1):
        acc = np.zeros(mesh.resolution)
        for pos, a in enumerate(T):
            face = c.values[..., src[T[:pos] + T[pos + 1:]]]
            diff = (np.roll(face, -1, axis=a) - face) / mesh.spacing[a]
            acc = acc - diff if pos % 2 else acc + diff
        out.append(acc)
    return Cochain(mesh, q + 1, np.stack(out, axis=-1), c.dual)


def hodge_star(c: Cochain) -> Cochain:
    """Diagonal Hodge star between the primal and dual complexes.

    ``star(star(c)) == (-1)**(q*(n-q)) * c`` holds bit for bit.
    """
    mesh, q, n = c.mesh, c.degree, c.mesh.dim
    dst = {S: i for i, S in enumerate(mesh.subsets(n - q))}
    out = np.empty(mesh.resolution + (math.comb(n, n - q),))
    for i, S in enumerate(mesh.subsets(q)):
        comp = tuple(a for a in range(n) if a not in S)
        sign = _perm_sign(S + comp)
        vals = c.values[..., i]
        if not c.dual:
            # dual cell of (v, S) has base v - 1_comp, so dual value at w is primal value at w + 1_comp
            shift_axes, step = comp, -1
        else:
            shift_axes, step = S, 1
        if shift_axes:
            vals = np.roll(vals, (step,) * len(shift_axes), axis=shift_axes)
        out[..., dst[comp]] = sign * vals
    return Cochain(mesh, n - q, out, not c.dual)


def delta(c: Cochain) -> Cochain:
    """Codifferential ``(-1)**(n(q+1)+1) * star d star``."""
    n, q = c.mesh.dim, c.degree
    if q == 0:
        raise ValidationError("delta is undefined on 0-cochains")
    sign = -1 if (n * (q + 1) + 1) % 2 else 1
    return hodge_star(d(hodge_star(c))) * sign


def laplace(c: Cochain) -> Cochain:
    """Hodge Laplacian ``d delta + delta d`` (positive semi-definite)."""
    n, q = c.mesh.dim, c.degree
    out = np.zeros_like(c.values)
    if q > 0:
        out = out + d(delta(c)).values
    if q < n:
        out = out + delta(d(c)).values
    return c.like(out)


def harmonic_basis(mesh: TorusMesh, q: int) -> list[Cochain]:
    """Orthonormal harmonic q-cochains: the constant one per axis subset."""
    basis = []
    ncomp = math.comb(mesh.dim, q)
    scale = 1.0 / math.sqrt(mesh.volume)
    for i in range(ncomp):
        vals = np.zeros(mesh.resolution + (ncomp,))
        vals[..., i] = scale
        basis.append(Cochain(mesh, q, vals))
    return basis


def harmonic_dimension(mesh: TorusMesh, q: int, tol: float = 1e-9) -> int:
    """Kernel dimension of ``laplace`` on q-cochains, from its Fourier symbol.

    The operator is translation invariant, so impulse responses at one cell
    give a ``C(n, q)``-square symbol per frequency; zero eigenvalues are counted.
    """
    ncomp = math.comb(mesh.dim, q)
    axes = tuple(range(mesh.dim))
    symbol = np.empty(mesh.resolution + (ncomp, ncomp), dtype=complex)
    for j in range(ncomp):
        vals = np.zeros(mesh.resolution + (ncomp,))
        vals[(0,) * mesh.dim + (j,)] = 1.0
        symbol[..., :, j] = np.fft.fftn(laplace(Cochain(mesh, q, vals)).values, axes=axes)
    eig = np.linalg.eigvalsh(0.5 * (symbol + np.conj(np.swapaxes(symbol, -1, -2))))
    scale = max(float(np.max(np.abs(eig))), 1.0)
    return int(np.sum(np.abs(eig) <= tol * scale))


def harmonic_projection(c: Cochain) -> Cochain:
    """Orthogonal projection onto the harmonic cochains (per-component means)."""
    axes = tuple(range(c.mesh.dim))
    mean = c.values.mean(axis=axes, keepdims=True)
    return c.like(np.broadcast_to(mean, c.values.shape))


@dataclass
class CGInfo:
    iterations: int
    relative_residual: float


def conjugate_gradient(apply: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray,
                       project: Callable[[np.ndarray], np.ndarray], rtol: float = 1e-10,
                       maxiter: int | None = None) -> tuple[np.ndarray, CGInfo]:
    """CG for a symmetric operator that is positive definite on the range of ``project``.

    Iterates and residuals are re-projected every step so round-off cannot
    leak into the kernel.
    """
    b = project(rhs)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, CGInfo(0, 0.0)
    maxiter = maxiter if maxiter is not None else 10 * b.size
    r = b.copy()
    p = r.copy()
    rr = float(np.vdot(r, r))
    for it in range(1, maxiter + 1):
        Ap = project(apply(p))
        pAp = float(np.vdot(p, Ap))
        if pAp <= 0:
            raise NumericalFailure("CG breakdown: operator not positive on the deflated space")
        alpha = rr / pAp
        x += alpha * p
        r -= alpha * Ap
        rr_new = float(np.vdot(r, r))
        if math.sqrt(rr_new) <= rtol * bnorm:
            # confirm with a true residual to guard against drift
            x = project(x)
            true_r = b - project(apply(x))
            rel = float(np.linalg.norm(true_r)) / bnorm
            if rel <= rtol:
                return x, CGInfo(it, rel)
            r = true_r
            rr_new = float(np.vdot(r, r))
            p = r.copy()
            rr = rr_new
            continue
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise NumericalFailure(f"CG did not reach relative residual {rtol} in {maxiter} iterations")


def green(c: Cochain, rtol: float = 1e-10) -> Cochain:
    """Green operator: solves ``laplace(u) = c - pi_H c`` with ``pi_H u = 0``."""
    if c.dual:
        raise ValidationError("green expects a primal cochain")
    shape = c.values.shape
    axes = tuple(range(c.mesh.dim))

    def project(v):
        return v - v.mean(axis=axes, keepdims=True)

    def apply(v):
        return laplace(c.like(v)).values

    u, _ = conjugate_gradient(apply, np.array(c.values), project, rtol=rtol,
                              maxiter=10 * math.prod(shape))
    return c.like(u)


@dataclass
class HodgeParts:
    harmonic: Cochain
    exact: Cochain
    coexact: Cochain

    def total(self) -> Cochain:
        return self.harmonic + self.exact + self.coexact


def hodge_decompose(c: Cochain, rtol: float = 1e-10) -> HodgeParts:
    """``c = pi_H c + d delta G c + delta d G c``."""
    n, q = c.mesh.dim, c.degree
    G = green(c, rtol=rtol)
    exact = d(delta(G)) if q > 0 else Cochain.zeros(c.mesh, q)
    coexact = delta(d(G)) if q < n else Cochain.zeros(c.mesh, q)
    return HodgeParts(harmonic_projection(c), exact, coexact)


def hminus1_norm(c: Cochain, rtol: float = 1e-10) -> float:
    """H^{-1} proxy: ``<c - pi_H c, G c>**0.5 + ||pi_H c||``."""
    harm = harmonic_projection(c)
    G = green(c, rtol=rtol)
    return math.sqrt(max(inner(c - harm, G), 0.0)) + norm(harm)


def flat(vector_components: Sequence[np.ndarray], mesh: TorusMesh) -> Cochain:
    """Musical isomorphism on the flat torus: vector components -> primal 1-cochain."""
    return Cochain(mesh, 1, np.stack([np.broadcast_to(v, mesh.resolution) for v in vector_components], axis=-1))


def div(X: Cochain) -> Cochain:
    """Divergence of a vector field given as its flat 1-cochain: ``star d star X``."""
    if X.degree != 1:
        raise ValidationError("div expects a 1-cochain")
    return hodge_star(d(hodge_star(X)))


def curl(X: Cochain) -> Cochain:
    """Generalised curl ``d X`` of a 1-cochain."""
    if X.degree != 1:
        raise ValidationError("curl expects a 1-cochain")
    return d(X)


# -- text serialization -------------------------------------------------------

def dumps_cochain(c: Cochain) -> str:
    m = c.mesh
    header = (f"torus n={m.dim} N={_fmt_list(m.resolution)} L={_fmt_list(m.periods)} q={c.degree}"
              + (" dual=1" if c.dual else ""))
    rows = c.values.reshape(math.prod(m.resolution), -1)
    return header + "\n" + format_rows(rows)


def loads_cochain(text: str) -> Cochain:
    import io

    lines = text.splitlines()
    if not lines:
        raise ValidationError("empty cochain file")
    hdr = _parse_header(lines[0], "torus")
    for key in ("n", "N", "L", "q"):
        if key not in hdr:
            raise ValidationError(f"cochain header missing {key!r}")
    mesh = TorusMesh(_floats(hdr["L"]), _ints(hdr["N"]))
    if int(hdr["n"]) != mesh.dim:
        raise ValidationError("header n does not match N")
    q = int(hdr["q"])
    body = [ln for ln in lines[1:] if ln.strip()]
    data = np.loadtxt(io.StringIO("\n".join(body)), ndmin=2)
    return Cochain(mesh, q, data, dual=hdr.get("dual", "0") == "1")


def write_cochain(path: str | Path, c: Cochain) -> None:
    Path(path).write_text(dumps_cochain(c), encoding="utf-8")


def read_cochain(path: str | Path) -> Cochain:
    return loads_cochain(Path(path).read_text(encoding="utf-8"))
