"""Rectangular chart domains, tensor-valued fields on them, and the
finite-difference / quadrature primitives everything else is built on.

Storage is node-centred.  A field's array has shape ``(*counts, *comp_shape)``
so node axes come first (axis 0 slowest) and components last; flattening that
array row-major gives the canonical ``(node, component)`` order used by the
text format.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Chart:
    """Uniform rectangular grid on a coordinate box in R^n (n = 2 or 3)."""

    counts: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        spacing = tuple(float(h) for h in self.spacing)
        origin = (0.0,) * len(counts) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(counts) not in (2, 3):
            raise ValidationError(f"chart dimension must be 2 or 3, got {len(counts)}")
        if len(spacing) != len(counts) or len(origin) != len(counts):
            raise ValidationError("counts, spacing and origin must have equal length")
        if any(c < 2 for c in counts):
            raise ValidationError(f"node counts must be >= 2, got {counts}")
        if any(not (h > 0 and math.isfinite(h)) for h in spacing):
            raise ValidationError(f"spacings must be positive, got {spacing}")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float], counts: Sequence[int]) -> "Chart":
        """Chart with ``counts[i]`` nodes spanning ``[lower[i], upper[i]]`` inclusive."""
        counts = tuple(int(c) for c in counts)
        spacing = tuple((b - a) / (c - 1) for a, b, c in zip(lower, upper, counts))
        return cls(counts, spacing, tuple(lower))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def num_nodes(self) -> int:
        return math.prod(self.counts)

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(h * (c - 1) for h, c in zip(self.spacing, self.counts))

    @property
    def volume(self) -> float:
        return math.prod(self.extent)

    def axes(self) -> list[np.ndarray]:
        """1-D coordinate arrays along each axis."""
        return [o + h * np.arange(c) for o, h, c in zip(self.origin, self.spacing, self.counts)]

    def mesh(self) -> list[np.ndarray]:
        """Coordinate arrays broadcast to the full node grid (ij indexing)."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def interior(self, ring: int = 1) -> tuple[slice, ...]:
        """Index tuple selecting nodes at least ``ring`` nodes away from the boundary."""
        return tuple(slice(ring, c - ring) for c in self.counts)

    def same_as(self, other: "Chart") -> bool:
        return self.counts == other.counts and np.allclose(self.spacing, other.spacing, rtol=1e-12) \
            and np.allclose(self.origin, other.origin, rtol=1e-12, atol=1e-12)


class ChartField:
    """Tensor-valued samples on every node of a chart.

    ``values`` has shape ``(*chart.counts, *comp_shape)`` and is read-only.
    """

    __slots__ = ("chart", "comp_shape", "values")

    def __init__(self, chart: Chart, values, comp_shape: Sequence[int] | None = None):
        arr = np.array(values, dtype=float)
        nd = chart.dim
        if comp_shape is None:
            comp_shape = arr.shape[nd:]
        comp_shape = tuple(int(c) for c in comp_shape)
        expected = chart.counts + comp_shape
        if arr.shape != expected:
            if arr.size == math.prod(expected):
                arr = arr.reshape(expected)
            else:
                raise ValidationError(f"field array has shape {arr.shape}, expected {expected}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("field contains non-finite values")
        arr.setflags(write=False)
        self.chart = chart
        self.comp_shape = comp_shape
        self.values = arr

    @classmethod
    def from_function(cls, chart: Chart, fn: Callable[..., np.ndarray], comp_shape: Sequence[int] = ()) -> "ChartField":
        """Sample ``fn(*coords)``; ``fn`` returns an array of shape ``(*comp_shape, *counts)``."""
        comp_shape = tuple(comp_shape)
        raw = np.asarray(fn(*chart.mesh()), dtype=float)
        raw = np.broadcast_to(raw, comp_shape + chart.counts)
        # move component axes behind node axes
        nc = len(comp_shape)
        arr = np.moveaxis(raw, list(range(nc)), list(range(chart.dim, chart.dim + nc)))
        return cls(chart, arr, comp_shape)

    @classmethod
    def constant(cls, chart: Chart, value) -> "ChartField":
        value = np.asarray(value, dtype=float)
        return cls(chart, np.broadcast_to(value, chart.counts + value.shape).copy(), value.shape)

    @property
    def num_components(self) -> int:
        return math.prod(self.comp_shape)

    def flat(self) -> np.ndarray:
        """Canonical flat array, one real per (node, component)."""
        return self.values.reshape(-1)

    def with_values(self, values, comp_shape: Sequence[int] | None = None) -> "ChartField":
        return ChartField(self.chart, values, comp_shape)

    def component(self, *index) -> "ChartField":
        """Scalar field holding one component."""
        return ChartField(self.chart, self.values[(Ellipsis,) + tuple(index)], ())

    def __add__(self, other):
        other_v = other.values if isinstance(other, ChartField) else other
        return self.with_values(self.values + other_v, self.comp_shape)

    def __sub__(self, other):
        other_v = other.values if isinstance(other, ChartField) else other
        return self.with_values(self.values - other_v, self.comp_shape)

    def __mul__(self, scalar):
        return self.with_values(self.values * scalar, self.comp_shape)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values, self.comp_shape)

    def __repr__(self):
        return f"ChartField(counts={self.chart.counts}, comp_shape={self.comp_shape})"


def partial(fld: ChartField, axis: int) -> ChartField:
    """Derivative along one coordinate axis.

    Second-order central differences inside, second-order one-sided
    three-point stencils on the boundary (first order if the axis has only
    two nodes).
    """
    n = fld.chart.dim
    if not 0 <= axis < n:
        raise ValidationError(f"axis {axis} out of range for a {n}-dimensional chart")
    count = fld.chart.counts[axis]
    out = np.gradient(fld.values, fld.chart.spacing[axis], axis=axis, edge_order=2 if count >= 3 else 1)
    return ChartField(fld.chart, out, fld.comp_shape)


def gradient_array(values: np.ndarray, chart: Chart) -> np.ndarray:
    """All partials of a raw ``(*counts, ...)`` array, stacked as a new axis right after the node axes."""
    parts = []
    for axis in range(chart.dim):
        edge = 2 if chart.counts[axis] >= 3 else 1
        parts.append(np.gradient(values, chart.spacing[axis], axis=axis, edge_order=edge))
    return np.stack(parts, axis=chart.dim)


def trapezoid_weights(chart: Chart) -> np.ndarray:
    """Tensor-product trapezoid weights on the node grid."""
    w = np.ones(chart.counts)
    for axis, (c, h) in enumerate(zip(chart.counts, chart.spacing)):
        w1 = np.full(c, h)
        w1[0] = w1[-1] = h / 2
        shape = [1] * chart.dim
        shape[axis] = c
        w = w * w1.reshape(shape)
    return w


def integrate(fld: ChartField, weight: ChartField | None = None) -> float:
    """Trapezoid-rule integral of a scalar field, optionally times a weight field."""
    if fld.comp_shape != ():
        raise ValidationError(f"integrate needs a scalar field, got component shape {fld.comp_shape}")
    vals = fld.values
    if weight is not None:
        if weight.comp_shape != () or not weight.chart.same_as(fld.chart):
            raise ValidationError("weight must be a scalar field on the same chart")
        vals = vals * weight.values
    return float(np.sum(vals * trapezoid_weights(fld.chart)))


# -- text serialization -------------------------------------------------------

def _fmt_list(xs) -> str:
    return ",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in xs)


def _parse_header(line: str, kind: str) -> dict[str, str]:
    tokens = line.split()
    if not tokens or tokens[0] != kind:
        raise ValidationError(f"expected header starting with {kind!r}, got {line[:40]!r}")
    out = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise ValidationError(f"malformed header token {tok!r}")
        key, val = tok.split("=", 1)
        out[key] = val
    return out


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",")) if s else ()


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",")) if s else ()


def format_rows(arr2d: np.ndarray) -> str:
    """One whitespace-separated row per node, 17 significant digits."""
    buf = io.StringIO()
    np.savetxt(buf, arr2d, fmt="%.17g", delimiter=" ")
    return buf.getvalue()


def dumps_field(fld: ChartField) -> str:
    c = fld.chart
    header = (f"chart n={c.dim} shape={_fmt_list(c.counts)} spacing={_fmt_list(c.spacing)} "
              f"comps={_fmt_list(fld.comp_shape)} origin={_fmt_list(c.origin)}")
    rows = fld.values.reshape(c.num_nodes, max(fld.num_components, 1))
    return header + "\n" + format_rows(rows)


def loads_field(text: str) -> ChartField:
    lines = text.splitlines()
    if not lines:
        raise ValidationError("empty field file")
    hdr = _parse_header(lines[0], "chart")
    for key in ("n", "shape", "spacing", "comps"):
        if key not in hdr:
            raise ValidationError(f"field header missing {key!r}")
    counts = _ints(hdr["shape"])
    if int(hdr["n"]) != len(counts):
        raise ValidationError("header n does not match shape")
    origin = _floats(hdr["origin"]) if "origin" in hdr else None
    chart = Chart(counts, _floats(hdr["spacing"]), origin)
    comps = _ints(hdr["comps"])
    body = [ln for ln in lines[1:] if ln.strip()]
    ncomp = max(math.prod(comps), 1)
    if len(body) != chart.num_nodes:
        raise ValidationError(f"expected {chart.num_nodes} rows, found {len(body)}")
    data = np.loadtxt(io.StringIO("\n".join(body)), ndmin=2)
    if data.shape != (chart.num_nodes, ncomp):
        raise ValidationError(f"expected rows of {ncomp} values, got shape {data.shape}")
    return ChartField(chart, data.reshape(counts + comps), comps)


def write_field(path: str | Path, fld: ChartField) -> None:
    Path(path).write_text(dumps_field(fld), encoding="utf-8")


def read_field(path: str | Path) -> ChartField:
    return loads_field(Path(path).read_text(encoding="utf-8"))


def second_partial(fld: ChartField, i: int, j: int) -> ChartField:
    """Second derivative along axes (i, j).

    Diagonal entries use the compact three-point stencil (four-point
    one-sided on the boundary); mixed entries apply ``partial`` twice.
    """
    n = fld.chart.dim
    if not (0 <= i < n and 0 <= j < n):
        raise ValidationError(f"axes ({i}, {j}) out of range for a {n}-dimensional chart")
    if i != j:
        return partial(partial(fld, i), j)
    count = fld.chart.counts[i]
    if count < 4:
        return partial(partial(fld, i), i)
    h2 = fld.chart.spacing[i] ** 2
    v = np.moveaxis(fld.values, i, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h2
    return ChartField(fld.chart, np.moveaxis(out, 0, i), fld.comp_shape)
