"""Sequence generators and weak-convergence diagnostics.

Weak convergence is certified against a fixed finite dictionary of test
functions: tensor Fourier modes up to a cutoff plus tensor polynomials of
per-axis degree at most two, in coordinates normalized to the unit box.
Coefficients are ``c_m = (1/vol) * integral(f * psi_m)``.  A family has a
declared weak limit when the last three coefficient vectors are Cauchy
within ``cauchy_tol``; the limit is the Aitken extrapolation of that tail,
and reconstruction coefficients below ``zero_tol`` are snapped to zero.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from . import dec
from .dec import Cochain, TorusMesh
from .errors import ValidationError
from .gcr import EQUATIONS, gcr_residuals
from .geometry import (extract_first_form, extract_normal_connection, extract_normal_frame,
                       extract_second_form)
from .grid import Chart, ChartField, gradient_array, trapezoid_weights

FOURIER_CUTOFF = 2
POLY_DEGREE = 2
DICTIONARY_ID = f"fourier{FOURIER_CUTOFF}+poly{POLY_DEGREE}"
CAUCHY_TOL = 0.3
ZERO_TOL = 1e-2
KINDS = ("oscillation_pair", "fakir", "cylinder_family", "corrugation_family", "perturbed_gcr")


# -- dictionary -------------------------------------------------------------------

@dataclass(frozen=True)
class Basis1D:
    """One factor of a tensor test function on ``[0, 1]``."""

    kind: str  # "one", "cos", "sin" or "pow"
    k: int = 0

    @property
    def label(self) -> str:
        return {"one": "1", "cos": f"cos{self.k}", "sin": f"sin{self.k}", "pow": f"s^{self.k}"}[self.kind]

    def __call__(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if self.kind == "one":
            return np.ones_like(s)
        if self.kind == "cos":
            return np.cos(2 * np.pi * self.k * s)
        if self.kind == "sin":
            return np.sin(2 * np.pi * self.k * s)
        return s ** self.k

    def antiderivative(self, s):
        if self.kind == "one":
            return s
        w = 2 * np.pi * self.k
        if self.kind == "cos":
            return np.sin(w * s) / w
        if self.kind == "sin":
            return -np.cos(w * s) / w
        return s ** (self.k + 1) / (self.k + 1)


@dataclass
class Dictionary:
    """Tensor Fourier modes plus tensor polynomials on the unit box."""

    dim: int
    fourier_cutoff: int = FOURIER_CUTOFF
    poly_degree: int = POLY_DEGREE
    basis: list[Basis1D] = field(init=False)
    terms: list[tuple[int, ...]] = field(init=False)

    def __post_init__(self):
        b = [Basis1D("one")]
        for k in range(1, self.fourier_cutoff + 1):
            b += [Basis1D("cos", k), Basis1D("sin", k)]
        nf = len(b)
        b += [Basis1D("pow", d) for d in range(1, self.poly_degree + 1)]
        self.basis = b
        fourier = list(itertools.product(range(nf), repeat=self.dim))
        poly_idx = [0] + list(range(nf, len(b)))
        poly = [t for t in itertools.product(poly_idx, repeat=self.dim) if any(t)]
        self.terms = fourier + poly

    @property
    def ident(self) -> str:
        return f"fourier{self.fourier_cutoff}+poly{self.poly_degree}"

    def labels(self) -> list[str]:
        return ["*".join(self.basis[i].label for i in t) for t in self.terms]

    def index(self, label: str) -> int:
        return self.labels().index(label)

    def matrices(self, coords: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Per-axis matrices ``Phi_a[b, j] = basis[b](s_j)``."""
        return [np.stack([b(s) for b in self.basis]) for s in coords]

    def pick(self, tensor: np.ndarray) -> np.ndarray:
        """Select dictionary terms from a full per-axis product tensor (leading axes kept)."""
        idx = tuple(np.array([t[a] for t in self.terms]) for a in range(self.dim))
        return tensor[(Ellipsis,) + idx]

    def spread(self, coeffs: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`pick`: place term coefficients in a full product tensor."""
        full = np.zeros(coeffs.shape[:-1] + (len(self.basis),) * self.dim)
        for m, t in enumerate(self.terms):
            full[(Ellipsis,) + t] += coeffs[..., m]
        return full


# -- separable sampling -------------------------------------------------------------

@dataclass
class SampleSet:
    """Field values on a tensor grid with separable quadrature weights."""

    values: np.ndarray  # shape (N_0, ..., N_{n-1})
    weights: list[np.ndarray]
    coords: list[np.ndarray]  # normalized to [0, 1]
    keep: tuple[slice, ...]  # slice back to the member's own sample layout

    @property
    def volume(self) -> float:
        return math.prod(float(w.sum()) for w in self.weights)


def _contract(values: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """``T[b_0, ..., b_{n-1}] = sum values[j_0..] * prod_a mats[a][b_a, j_a]``."""
    out = values
    for M in mats:
        out = np.tensordot(out, M, axes=([0], [1]))
    return out


def _chart_sets(fld: ChartField) -> list[SampleSet]:
    chart = fld.chart
    w1 = []
    for N, h in zip(chart.counts, chart.spacing):
        w = np.full(N, h)
        w[0] = w[-1] = h / 2
        w1.append(w)
    coords = [(x - o) / e for x, o, e in zip(chart.axes(), chart.origin, chart.extent)]
    flat = fld.values.reshape(chart.counts + (-1,))
    keep = (slice(None),) * chart.dim
    return [SampleSet(flat[..., c], w1, coords, keep) for c in range(flat.shape[-1])]


def _cochain_sets(c: Cochain) -> list[SampleSet]:
    mesh = c.mesh
    sets = []
    for i, S in enumerate(mesh.subsets(c.degree)):
        vals = c.values[..., i]
        weights, coords = [], []
        keep = []
        for a, (N, h, L) in enumerate(zip(mesh.resolution, mesh.spacing, mesh.periods)):
            shift = (0.5 if a in S else 0.0) + (0.5 if c.dual else 0.0)
            if a in S or c.dual:
                # midpoint rule on cell centres
                weights.append(np.full(N, h))
                coords.append((np.arange(N) + shift) / N)
                keep.append(slice(None))
            else:
                # trapezoid rule with the periodic copy closing the interval
                vals = np.concatenate([vals, np.take(vals, [0], axis=a)], axis=a)
                w = np.full(N + 1, h)
                w[0] = w[-1] = h / 2
                weights.append(w)
                coords.append(np.arange(N + 1) / N)
                keep.append(slice(0, N))
        sets.append(SampleSet(vals, weights, coords, tuple(keep)))
    return sets


def sample_sets(member) -> list[SampleSet]:
    if isinstance(member, ChartField):
        return _chart_sets(member)
    if isinstance(member, Cochain):
        return _cochain_sets(member)
    raise ValidationError(f"cannot sample {type(member).__name__}")


def dictionary_coefficients(member, dictionary: Dictionary | None = None) -> np.ndarray:
    """Normalized coefficients ``(ncomp, nterms)`` of a ChartField or Cochain."""
    sets = sample_sets(member)
    dictionary = dictionary or Dictionary(len(sets[0].weights))
    out = []
    for ss in sets:
        mats = [Phi * w for Phi, w in zip(dictionary.matrices(ss.coords), ss.weights)]
        out.append(dictionary.pick(_contract(ss.values, mats)) / ss.volume)
    return np.array(out)


def dictionary_pairing(a, b, dictionary: Dictionary | None = None) -> np.ndarray:
    """``integral(<a, b> psi_m)`` for every dictionary term (unnormalized)."""
    if isinstance(a, Cochain):
        if not isinstance(b, Cochain) or a.mesh != b.mesh or a.degree != b.degree:
            raise ValidationError("paired cochains must share mesh and degree")
        prod = a.like(a.values * b.values)
    else:
        if not a.chart.same_as(b.chart) or a.comp_shape != b.comp_shape:
            raise ValidationError("paired fields must share chart and shape")
        prod = a.with_values(a.values * b.values)
    sets = sample_sets(prod)
    return sum(dictionary_coefficients(prod, dictionary)[i] * ss.volume for i, ss in enumerate(sets))


# -- weak limits --------------------------------------------------------------------

def _aitken(c1: np.ndarray, c2: np.ndarray, c3: np.ndarray) -> np.ndarray:
    d1, d2 = c2 - c1, c3 - c2
    denom = d2 - d1
    scale = np.maximum(np.abs(c3), 1.0)
    safe = np.abs(denom) > 1e-12 * scale
    corr = np.where(safe, d2 * d2 / np.where(safe, denom, 1.0), 0.0)
    # fall back to the last member where the correction is not a small tail step
    corr = np.where(np.abs(corr) <= 10 * np.abs(d2), corr, 0.0)
    return c3 - corr


@dataclass
class WeakLimit:
    """Coefficient table of a family and its declared weak limit."""

    eps: np.ndarray
    coefficients: np.ndarray  # (n_eps, ncomp, nterms)
    dictionary: Dictionary
    status: str
    limit: np.ndarray | None = None  # extrapolated coefficients (ncomp, nterms)
    recon: np.ndarray | None = None  # snapped reconstruction coefficients
    template: object = None

    @property
    def declared(self) -> bool:
        return self.status == "declared"

    def is_zero(self) -> bool:
        return self.declared and not np.any(self.recon)

    def field(self):
        """The reconstructed limit, on the members' chart or mesh."""
        if not self.declared:
            raise ValidationError("no declared weak limit")
        if self.template is None:
            raise ValidationError("family was given as raw coefficients; nothing to reconstruct on")
        sets = sample_sets(self.template)
        comps = []
        for i, ss in enumerate(sets):
            mats = [Phi.T for Phi in self.dictionary.matrices(ss.coords)]
            full = self.dictionary.spread(self.recon[i])
            comps.append(_contract(full, mats)[ss.keep])
        vals = np.stack(comps, axis=-1)
        if isinstance(self.template, ChartField):
            return self.template.with_values(vals.reshape(self.template.values.shape))
        return self.template.like(vals)


def _gram(ss: SampleSet, dictionary: Dictionary) -> np.ndarray:
    mats = dictionary.matrices(ss.coords)
    grams = [(Phi * w) @ Phi.T for Phi, w in zip(mats, ss.weights)]
    full = grams[0]
    for G in grams[1:]:
        full = np.multiply.outer(full, G)
    # full has axes (b0, b0', b1, b1', ...); reorder to (b0, b1, ..., b0', b1', ...)
    n = len(grams)
    full = full.transpose([2 * a for a in range(n)] + [2 * a + 1 for a in range(n)])
    idx = tuple(np.array([t[a] for t in dictionary.terms]) for a in range(n))
    G = full[idx][(slice(None),) + idx]
    return G / ss.volume


def weak_limit_estimate(members: Sequence, eps: Sequence[float], dictionary: Dictionary | None = None,
                        cauchy_tol: float = CAUCHY_TOL, zero_tol: float = ZERO_TOL) -> WeakLimit:
    """Dictionary coefficients per member and the declared weak limit, if any.

    ``members`` are ChartFields or Cochains on one chart/mesh, or a ready
    coefficient array of shape ``(n_eps, ncomp, nterms)``.
    """
    eps = np.asarray(eps, dtype=float)
    template = None
    if isinstance(members, np.ndarray):
        coeffs = members
        if dictionary is None:
            raise ValidationError("raw coefficient tables need their dictionary")
    else:
        members = list(members)
        if len(members) != len(eps):
            raise ValidationError("one member per epsilon required")
        first = members[0]
        for m in members[1:]:
            same = (m.chart.same_as(first.chart) and m.comp_shape == first.comp_shape) if isinstance(m, ChartField) \
                else (m.mesh == first.mesh and m.degree == first.degree)
            if not same:
                raise ValidationError("family members must share a chart or mesh")
        dictionary = dictionary or Dictionary(first.chart.dim if isinstance(first, ChartField) else first.mesh.dim)
        coeffs = np.array([dictionary_coefficients(m, dictionary) for m in members])
        template = first
    if len(eps) < 3:
        return WeakLimit(eps, coeffs, dictionary, "no declared limit", template=template)
    tail = coeffs[-3:]
    spread = max(float(np.max(np.abs(tail[i] - tail[j]))) for i, j in ((0, 1), (0, 2), (1, 2)))
    if spread > cauchy_tol:
        return WeakLimit(eps, coeffs, dictionary, "no declared limit", template=template)
    limit = _aitken(*tail)
    # the Gram can be badly conditioned, so residue must not reach the solve
    limit = np.where(np.abs(limit) <= zero_tol, 0.0, limit)
    if template is not None:
        recon = []
        for i, ss in enumerate(sample_sets(template)):
            a = np.linalg.lstsq(_gram(ss, dictionary), limit[i], rcond=None)[0]
            recon.append(np.where(np.abs(a) <= zero_tol, 0.0, a))
        recon = np.array(recon)
    else:
        recon = np.where(np.abs(limit) <= zero_tol, 0.0, limit)
    return WeakLimit(eps, coeffs, dictionary, "declared", limit, recon, template)


# -- Fakir's carpet -----------------------------------------------------------------

def _fakir_intervals(m: int) -> list[tuple[Fraction, Fraction]]:
    if m < 2:
        raise ValidationError("fakir needs m >= 2")
    one = Fraction(1)
    out = []
    for j in range(1, m + 1):
        a = Fraction(j, m)
        b = a + Fraction(1, m * m)
        a, b = max(a, Fraction(0)), min(b, one)
        if b > a:
            out.append((a, b))
    return out


def fakir_pairing(m: int) -> Fraction:
    """``integral <u, v>`` over the unit cube, exactly: ``m * total interval length``."""
    return m * sum((b - a for a, b in _fakir_intervals(m)), Fraction(0))


@dataclass(frozen=True)
class SeparablePoly:
    """``psi(x) = prod_a p_a(x_a)`` with rational coefficients (low degree first)."""

    factors: tuple[tuple[Fraction, ...], ...]
    name: str = ""

    @classmethod
    def of(cls, *factors, name: str = "") -> "SeparablePoly":
        return cls(tuple(tuple(Fraction(c) for c in f) for f in factors), name)

    @staticmethod
    def _eval(p, x):
        return sum((c * x ** i for i, c in enumerate(p)), Fraction(0))

    @staticmethod
    def _deriv(p):
        return tuple(i * c for i, c in enumerate(p))[1:] or (Fraction(0),)

    @staticmethod
    def _integral(p, a, b):
        return sum((c * (b ** (i + 1) - a ** (i + 1)) / (i + 1) for i, c in enumerate(p)), Fraction(0))

    @staticmethod
    def _sup(p) -> float:
        poly = Polynomial([float(c) for c in p])
        pts = [0.0, 1.0] + [float(r.real) for r in poly.deriv().roots()
                            if abs(r.imag) < 1e-12 and 0 <= r.real <= 1] if len(p) > 1 else [0.0, 1.0]
        return max(abs(float(poly(x))) for x in pts)

    def w1inf_norm(self) -> float:
        sups = [self._sup(p) for p in self.factors]
        dsups = [self._sup(self._deriv(p)) for p in self.factors]
        grads = [dsups[a] * math.prod(s for b, s in enumerate(sups) if b != a) for a in range(len(sups))]
        return max([math.prod(sups)] + grads)


DEFAULT_FAKIR_PSI = (
    SeparablePoly.of((0, 1), (1,), (1,), name="x1"),
    SeparablePoly.of((0, 0, 1), (1,), (1,), name="x1^2"),
    SeparablePoly.of((0, 1, -1), (0, 1, -1), (0, 1, -1), name="x1(1-x1)x2(1-x2)x3(1-x3)"),
)


@dataclass
class FakirDivBound:
    m: int
    exact_sum: Fraction  # sum_j integral_{I_j} d1 psi dx (over the whole cube)
    value: float  # sqrt(m) * |exact_sum|
    bound: float  # ||psi||_{W^{1,inf}} / sqrt(m)

    @property
    def ratio(self) -> float:
        return self.value / self.bound if self.bound > 0 else 0.0


def fakir_div_bound(m: int, psi: SeparablePoly) -> FakirDivBound:
    """Exact ``|integral (div u) psi| = sqrt(m) |sum_j integral_{I_j} d1 psi|`` and its bound."""
    if len(psi.factors) != 3:
        raise ValidationError("fakir test functions live on the unit cube")
    p1, p2, p3 = psi.factors
    dp1 = SeparablePoly._deriv(p1)
    s1 = sum((SeparablePoly._integral(dp1, a, b) for a, b in _fakir_intervals(m)), Fraction(0))
    total = s1 * SeparablePoly._integral(p2, Fraction(0), Fraction(1)) * SeparablePoly._integral(p3, Fraction(0), Fraction(1))
    return FakirDivBound(m, total, math.sqrt(m) * abs(float(total)), psi.w1inf_norm() / math.sqrt(m))


def fakir_coefficients(m: int, dictionary: Dictionary | None = None) -> np.ndarray:
    """Normalized dictionary coefficients of ``u`` (3 components) on the unit cube."""
    dictionary = dictionary or Dictionary(3)
    iv = _fakir_intervals(m)
    a = np.array([float(x) for x, _ in iv])
    b = np.array([float(y) for _, y in iv])
    first = np.array([math.sqrt(m) * float(np.sum(f.antiderivative(b) - f.antiderivative(a))) for f in dictionary.basis])
    whole = np.array([float(f.antiderivative(1.0) - f.antiderivative(0.0)) for f in dictionary.basis])
    tensor = np.multiply.outer(np.multiply.outer(first, whole), whole)
    out = np.zeros((3, len(dictionary.terms)))
    out[0] = dictionary.pick(tensor)
    return out


def fakir_tail_mass(m: int, lam: float) -> Fraction:
    """``integral_{|<u,u>| > lam} |<u,u>|`` for the pointwise product ``m * sum chi``."""
    return fakir_pairing(m) if m > lam else Fraction(0)


def fakir_pairing_against(m: int, psi: SeparablePoly) -> Fraction:
    """``integral <u, v> psi`` exactly for a separable polynomial."""
    p1, p2, p3 = psi.factors
    s1 = sum((SeparablePoly._integral(p1, a, b) for a, b in _fakir_intervals(m)), Fraction(0))
    return m * s1 * SeparablePoly._integral(p2, Fraction(0), Fraction(1)) * SeparablePoly._integral(p3, Fraction(0), Fraction(1))


# -- sequence specs and tables ------------------------------------------------------

@dataclass
class SequenceSpec:
    kind: str
    eps: tuple[float, ...]
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown sequence kind {self.kind!r}; choose from {', '.join(KINDS)}")
        self.eps = tuple(float(e) for e in self.eps)
        if not self.eps or any(e <= 0 for e in self.eps) or any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ValidationError("epsilon list must be positive and strictly decreasing")


@dataclass
class ConvergenceTable:
    rows: list[tuple[float, str, float]] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    verdict: str = ""

    def add(self, eps: float, name: str, value: float) -> None:
        self.rows.append((float(eps), name, float(value)))

    def values(self, name: str) -> list[float]:
        return [v for _, n, v in self.rows if n == name]

    def get(self, eps: float, name: str) -> float:
        for e, n, v in self.rows:
            if n == name and e == eps:
                return v
        raise KeyError((eps, name))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "diagnostic", "value"])
        for e, n, v in sorted(self.rows, key=lambda r: (-r[0], r[1])):
            w.writerow([repr(e), n, repr(v)])
        return buf.getvalue()


# -- oscillation pair -------------------------------------------------------------

def oscillation_pair(eps: float, negative: bool = False, L: float = 2 * np.pi,
                     N: int | None = None) -> tuple[Cochain, Cochain]:
    """``omega = cos(x/eps) dx`` (closed) and ``tau = cos(y/eps) dx`` (coclosed) on the 2-torus.

    With ``negative`` both are ``cos(x/eps) dx``, so ``tau`` is not coclosed.
    """
    m = L / (2 * np.pi * eps)
    if abs(m - round(m)) > 1e-9:
        raise ValidationError("the torus period must hold a whole number of oscillations")
    N = int(N) if N is not None else max(16, 8 * int(round(m)))
    if N * 2 * np.pi * eps / L < 8 - 1e-9:
        raise ValidationError(f"oscillation eps={eps} unresolved: need >= 8 cells per period")
    mesh = TorusMesh((L, L), (N, N))
    x, y = mesh.cell_centers((0,))
    omega = np.zeros((N, N, 2))
    tau = np.zeros((N, N, 2))
    omega[..., 0] = np.cos(x / eps)
    tau[..., 0] = np.cos((x if negative else y) / eps)
    return Cochain(mesh, 1, omega), Cochain(mesh, 1, tau)


def _pairing_defects(pairings: np.ndarray, limit_pairing: np.ndarray) -> np.ndarray:
    return np.max(np.abs(pairings - limit_pairing[None, :]), axis=1)


def divcurl_experiment(spec: SequenceSpec, grid: int | None = None, dictionary: Dictionary | None = None,
                       tol: float = 1e-3) -> ConvergenceTable:
    """Pairings against test functions versus the pairing of the declared weak limits."""
    if spec.kind == "fakir":
        return _divcurl_fakir(spec, tol)
    if spec.kind != "oscillation_pair":
        raise ValidationError("divcurl_experiment needs an oscillation_pair or fakir spec")
    negative = bool(spec.params.get("negative", False))
    L = float(spec.params.get("L", 2 * np.pi))
    N = grid or 8 * int(round(L / (2 * np.pi * min(spec.eps))))
    dictionary = dictionary or Dictionary(2)
    omegas, taus = zip(*(oscillation_pair(e, negative, L, N) for e in spec.eps))
    table = ConvergenceTable(metadata={"spec": spec, "grid": N, "dictionary": dictionary.ident})
    lim_w = weak_limit_estimate(omegas, spec.eps, dictionary)
    lim_t = weak_limit_estimate(taus, spec.eps, dictionary)
    pair = np.array([dictionary_pairing(w, t, dictionary) for w, t in zip(omegas, taus)])
    for e, w, t, p in zip(spec.eps, omegas, taus, pair):
        table.add(e, "pairing_const", p[0])
        table.add(e, "hminus1_d_omega", dec.hminus1_norm(dec.d(w)))
        table.add(e, "hminus1_delta_tau", dec.hminus1_norm(dec.delta(t)))
        table.add(e, "weak_coef_max_omega", float(np.max(np.abs(lim_w.coefficients[list(spec.eps).index(e)]))))
        table.add(e, "weak_coef_max_tau", float(np.max(np.abs(lim_t.coefficients[list(spec.eps).index(e)]))))
    if not (lim_w.declared and lim_t.declared):
        table.verdict = "inconclusive"
        return table
    limit_pair = dictionary_pairing(lim_w.field(), lim_t.field(), dictionary)
    defects = _pairing_defects(pair, limit_pair)
    for e, dft, p in zip(spec.eps, defects, pair):
        table.add(e, "pairing_defect", dft)
        table.add(e, "offset_const", p[0] - limit_pair[0])
    unit = np.zeros_like(omegas[0].values)
    unit[..., 0] = 1.0
    dx = omegas[0].like(unit)
    table.metadata["half_integral_psi"] = 0.5 * dictionary_pairing(dx, dx, dictionary)
    table.metadata["offsets"] = pair[-1] - limit_pair
    table.verdict = "converges" if defects[-1] <= tol else "fails"
    return table


def _divcurl_fakir(spec: SequenceSpec, tol: float) -> ConvergenceTable:
    ms = [int(math.floor(1 / e + 1e-9)) for e in spec.eps]
    dictionary = Dictionary(3)
    table = ConvergenceTable(metadata={"spec": spec, "grid": "closed form", "dictionary": dictionary.ident})
    coeffs = np.array([fakir_coefficients(m, dictionary) for m in ms])
    lim = weak_limit_estimate(coeffs, spec.eps, dictionary)
    for e, m, c in zip(spec.eps, ms, coeffs):
        table.add(e, "pairing_const", float(fakir_pairing(m)))
        table.add(e, "weak_coef_max_u", float(np.max(np.abs(c))))
        for psi in DEFAULT_FAKIR_PSI:
            table.add(e, f"div_bound_ratio[{psi.name}]", fakir_div_bound(m, psi).ratio)
        table.add(e, "tail_mass_half_m", float(fakir_tail_mass(m, m / 2)))
    if not lim.declared:
        table.verdict = "inconclusive"
        return table
    limit_pair = 0.0
    if np.any(lim.recon):
        # nonzero declared limit: integrate the reconstructed product on a fine unit-cube grid
        cube = ChartField(Chart.box((0.0,) * 3, (1.0,) * 3, (65,) * 3), np.zeros((65,) * 3 + (3,)))
        ss = sample_sets(cube)[0]
        limit_pair = float(sum(r @ _gram(ss, dictionary) @ r for r in lim.recon))
    for e, m in zip(spec.eps, ms):
        table.add(e, "pairing_defect", abs(float(fakir_pairing(m)) - limit_pair))
    last = abs(float(fakir_pairing(ms[-1])) - limit_pair)
    table.verdict = "converges" if last <= tol else "fails"
    return table


# -- equi-integrability ---------------------------------------------------------------

def equiintegrability_index(fld, lambdas: Sequence[float]) -> list[tuple[float, float]]:
    """``integral_{|f| > lam} |f|`` for each ``lam``; nonincreasing in ``lam``."""
    if isinstance(fld, tuple) and len(fld) == 2 and isinstance(fld[0], str):
        kind, m = fld
        if kind != "fakir":
            raise ValidationError(f"unknown closed-form field {kind!r}")
        return [(float(l), float(fakir_tail_mass(int(m), l))) for l in lambdas]
    sets = sample_sets(fld)
    if len(sets) != 1:
        raise ValidationError("equiintegrability_index expects a scalar field")
    ss = sets[0]
    w = ss.weights[0]
    for wa in ss.weights[1:]:
        w = np.multiply.outer(w, wa)
    a = np.abs(ss.values)
    order = np.argsort(a, axis=None)
    vals = a.reshape(-1)[order]
    mass = (a * w).reshape(-1)[order]
    tail = np.concatenate([np.cumsum(mass[::-1])[::-1], [0.0]])
    out = []
    for lam in lambdas:
        k = int(np.searchsorted(vals, lam, side="right"))
        out.append((float(lam), float(tail[k])))
    return out


def lp_norm(fld: ChartField, p: float) -> float:
    """``(integral |f|^p)^(1/p)`` with the pointwise Frobenius norm."""
    vals = fld.values.reshape(fld.chart.counts + (-1,))
    mag = np.linalg.norm(vals, axis=-1)
    return float(np.sum(trapezoid_weights(fld.chart) * mag ** p)) ** (1.0 / p)


# -- rigidity -------------------------------------------------------------------------

@dataclass
class FamilyMember:
    eps: float
    f: ChartField
    g: ChartField


def _family_chart(kind: str, eps_min: float, grid) -> Chart:
    if grid is not None:
        counts = (int(grid), int(grid)) if np.isscalar(grid) else tuple(int(c) for c in grid)
    elif kind == "corrugation_family":
        counts = (16 * int(round(1 / eps_min)) + 1, 9)
    else:
        counts = (129, 17)
    return Chart.box((0.0, 0.0), (2 * np.pi, 1.0), counts)


def immersion_family(kind: str, eps: float, grid=None, R: float = 1.0, chart: Chart | None = None) -> FamilyMember:
    """One member of an immersion family on ``[0, 2 pi] x [0, 1]``."""
    chart = chart or _family_chart(kind, eps, grid)
    x, y = chart.mesh()
    if kind == "cylinder_family":
        Re = R * (1 + eps)
        f = np.stack([Re * np.sin(x / Re), y, Re * np.cos(x / Re)], axis=-1)
        g = np.broadcast_to(np.eye(2), chart.counts + (2, 2))
    elif kind == "corrugation_family":
        inv = 1 / eps
        if abs(inv - round(inv)) > 1e-9:
            raise ValidationError("corrugation needs 1/eps integer on the 2 pi chart")
        if (chart.counts[0] - 1) * eps < 8 - 1e-9:
            raise ValidationError(f"corrugation eps={eps} unresolved: need >= 8 nodes per period")
        f = np.stack([x, y, eps ** 2 * np.sin(x / eps)], axis=-1)
        g = np.zeros(chart.counts + (2, 2))
        g[..., 0, 0] = 1 + eps ** 2 * np.cos(x / eps) ** 2
        g[..., 1, 1] = 1.0
    else:
        raise ValidationError(f"{kind!r} is not an immersion family")
    return FamilyMember(eps, ChartField(chart, f), ChartField(chart, np.array(g)))


def _smooth_noise(chart: Chart, seed: int, k: int, modes: int = 3) -> np.ndarray:
    """Seeded smooth symmetric noise of shape ``(*counts, k, n, n)``, max amplitude about one."""
    rng = np.random.default_rng(seed)
    n = chart.dim
    s = [(x - o) / e for x, o, e in zip(chart.mesh(), chart.origin, chart.extent)]
    out = np.zeros(chart.counts + (k, n, n))
    for a in range(k):
        for i in range(n):
            for j in range(i, n):
                acc = np.zeros(chart.counts)
                for _ in range(modes):
                    freq = rng.integers(0, 3, size=n)
                    phase = rng.uniform(0, 2 * np.pi)
                    amp = rng.uniform(-1, 1)
                    acc += amp * np.cos(2 * np.pi * sum(f * si for f, si in zip(freq, s)) + phase)
                out[..., a, i, j] = out[..., a, j, i] = acc / modes
    return out


def _limit_residual(wl_g: WeakLimit, wl_h: WeakLimit, wl_k: WeakLimit):
    return gcr_residuals(wl_g.field(), wl_h.field(), wl_k.field())


def rigidity_experiment(spec: SequenceSpec, grid=None, p: float = 4.0,
                        dictionary: Dictionary | None = None) -> ConvergenceTable:
    """GCR residuals of each member and of the declared weak-limit triple."""
    if spec.kind not in ("cylinder_family", "corrugation_family", "perturbed_gcr"):
        raise ValidationError("rigidity_experiment needs an immersion family or perturbed_gcr spec")
    dictionary = dictionary or Dictionary(2)
    gs, hs, ks = [], [], []
    table = ConvergenceTable(metadata={"spec": spec, "p": p, "dictionary": dictionary.ident})
    if spec.kind == "perturbed_gcr":
        from . import presets

        base = presets.get(spec.params.get("base", "cylinder"), int(grid or 65))
        noise = _smooth_noise(base.chart, spec.seed, base.codim)
        amp = float(spec.params.get("amplitude", 1.0))
        floor = gcr_residuals(base.g, base.h, base.kappa).max_norm()
        for e in spec.eps:
            gs.append(base.g)
            hs.append(base.h.with_values(base.h.values + amp * e * noise))
            ks.append(base.kappa)
        chart = base.chart
    else:
        chart = _family_chart(spec.kind, min(spec.eps), grid)
        for e in spec.eps:
            mem = immersion_family(spec.kind, e, chart=chart, R=float(spec.params.get("R", 1.0)))
            frame = extract_normal_frame(mem.f)
            gs.append(extract_first_form(mem.f))
            hs.append(extract_second_form(mem.f, frame))
            ks.append(extract_normal_connection(mem.f, frame))
        floor = None
    table.metadata["grid"] = chart.counts
    member_res = []
    for e, g, h, k in zip(spec.eps, gs, hs, ks):
        r = gcr_residuals(g, h, k)
        member_res.append(r.max_norm())
        for name in EQUATIONS:
            table.add(e, f"gcr_{name}", r.norms[name][0])
        table.add(e, f"lp{p:g}_norm_h", lp_norm(h, p))
        dg = gradient_array(g.values, chart)
        table.add(e, "max_dg", float(np.max(np.abs(dg[chart.interior(1)]))))
    if floor is None:
        floor = min(member_res)
    wl_g = weak_limit_estimate(gs, spec.eps, dictionary)
    wl_h = weak_limit_estimate(hs, spec.eps, dictionary)
    wl_k = weak_limit_estimate(ks, spec.eps, dictionary)
    for i, e in enumerate(spec.eps):
        table.add(e, "weak_coef_max_h", float(np.max(np.abs(wl_h.coefficients[i]))))
        table.add(e, "weak_coef_max_kappa", float(np.max(np.abs(wl_k.coefficients[i]))))
    table.metadata["weak_limits"] = (wl_g, wl_h, wl_k)
    if not (wl_g.declared and wl_h.declared and wl_k.declared):
        table.verdict = "inconclusive"
        return table
    gbar = wl_g.field()
    for i, e in enumerate(spec.eps):
        table.add(e, "max_g_minus_limit", float(np.max(np.abs(gs[i].values - gbar.values))))
    lim = _limit_residual(wl_g, wl_h, wl_k)
    for name in EQUATIONS:
        table.add(0.0, f"limit_gcr_{name}", lim.norms[name][0])
    tol = max(10.0 * floor, 1e-10)
    table.metadata["floor"] = floor
    table.metadata["limit_residual"] = lim.max_norm()
    if spec.kind == "perturbed_gcr":
        forcing = member_res
        decays = all(b < a for a, b in zip(forcing, forcing[1:]))
        ok = lim.max_norm() <= forcing[-1] + tol
        table.verdict = "rigid (approximate)" if decays and ok else "not rigid"
    else:
        table.verdict = "rigid" if lim.max_norm() <= tol else "not rigid"
    return table
