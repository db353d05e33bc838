"""Built-in datasets: closed-form immersions and their (g, h, kappa).

Each preset carries the analytic immersion, its metric, second form and
normal connection sampled on a chart, so tests and the CLI need no fixtures.
The two negative controls carry data that violates the GCR equations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .grid import Chart, ChartField


@dataclass
class Preset:
    name: str
    g: ChartField
    h: ChartField
    kappa: ChartField
    f: ChartField | None = None
    frame: ChartField | None = None
    compatible: bool = True

    @property
    def chart(self) -> Chart:
        return self.g.chart

    @property
    def codim(self) -> int:
        return self.h.comp_shape[0]


def _stack(chart: Chart, arr) -> ChartField:
    """Turn nested lists of node arrays (component axes first) into a ChartField."""
    a = np.asarray(np.broadcast_arrays(*[np.asarray(x, dtype=float) for x in _leaves(arr)]))
    shape = _shape(arr)
    a = a.reshape(shape + chart.counts)
    return ChartField(chart, np.moveaxis(a, tuple(range(len(shape))), tuple(range(chart.dim, chart.dim + len(shape)))))


def _leaves(arr):
    if isinstance(arr, (list, tuple)):
        for x in arr:
            yield from _leaves(x)
    else:
        yield arr


def _shape(arr) -> tuple[int, ...]:
    if isinstance(arr, (list, tuple)):
        return (len(arr),) + _shape(arr[0])
    return ()


def _full(chart: Chart, value) -> np.ndarray:
    return np.full(chart.counts, float(value))


def plane(N: int = 64) -> Preset:
    chart = Chart.box((0.0, 0.0), (1.0, 1.0), (N, N))
    x, y = chart.mesh()
    z, o = _full(chart, 0), _full(chart, 1)
    return Preset(
        "plane",
        g=_stack(chart, [[o, z], [z, o]]),
        h=_stack(chart, [[[z, z], [z, z]]]),
        kappa=_stack(chart, [[[z]], [[z]]]),
        f=_stack(chart, [x, y, z]),
        frame=_stack(chart, [[z, z, o]]),
    )


def cylinder(N: int = 64, turns: float = 1.0) -> Preset:
    """Unit cylinder ``(cos x, sin x, y)`` over ``x in [0, 2 pi turns]``, ``y in [0, 1]``."""
    chart = Chart.box((0.0, 0.0), (2 * np.pi * turns, 1.0), (N, N))
    x, y = chart.mesh()
    z, o = _full(chart, 0), _full(chart, 1)
    return Preset(
        "cylinder",
        g=_stack(chart, [[o, z], [z, o]]),
        h=_stack(chart, [[[-o, z], [z, z]]]),
        kappa=_stack(chart, [[[z]], [[z]]]),
        f=_stack(chart, [np.cos(x), np.sin(x), y]),
        frame=_stack(chart, [[np.cos(x), np.sin(x), z]]),
    )


def sphere(N: int = 64) -> Preset:
    """Unit sphere patch, ``theta in [pi/4, 3 pi/4]``, ``phi in [0, pi/2]``, outward normal."""
    chart = Chart.box((np.pi / 4, 0.0), (3 * np.pi / 4, np.pi / 2), (N, N))
    t, p = chart.mesh()
    z, o = _full(chart, 0), _full(chart, 1)
    s2 = np.sin(t) ** 2
    f = [np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)]
    return Preset(
        "sphere",
        g=_stack(chart, [[o, z], [z, s2]]),
        h=_stack(chart, [[[-o, z], [z, -s2]]]),
        kappa=_stack(chart, [[[z]], [[z]]]),
        f=_stack(chart, f),
        frame=_stack(chart, [f]),
    )


def plane_r4(N: int = 64) -> Preset:
    """Flat plane in R^4 with a normal frame rotating at unit rate along x."""
    chart = Chart.box((0.0, 0.0), (1.0, 1.0), (N, N))
    x, y = chart.mesh()
    z, o = _full(chart, 0), _full(chart, 1)
    c, s = np.cos(x), np.sin(x)
    zz = [[z, z], [z, z]]
    return Preset(
        "plane_r4",
        g=_stack(chart, [[o, z], [z, o]]),
        h=_stack(chart, [zz, zz]),
        kappa=_stack(chart, [[[z, o], [-o, z]], zz]),
        f=_stack(chart, [x, y, z, z]),
        frame=_stack(chart, [[z, z, c, s], [z, z, -s, c]]),
    )


def corrugation(N: int = 64, eps: float = 0.5) -> Preset:
    """Graph ``(x, y, eps^2 sin(x/eps))`` over ``[0, 2 pi] x [0, 1]`` with upward normal."""
    chart = Chart.box((0.0, 0.0), (2 * np.pi, 1.0), (N, N))
    x, y = chart.mesh()
    z, o = _full(chart, 0), _full(chart, 1)
    c, s = np.cos(x / eps), np.sin(x / eps)
    q = np.sqrt(1 + eps ** 2 * c ** 2)
    return Preset(
        "corrugation",
        g=_stack(chart, [[1 + eps ** 2 * c ** 2, z], [z, o]]),
        h=_stack(chart, [[[-s / q, z], [z, z]]]),
        kappa=_stack(chart, [[[z]], [[z]]]),
        f=_stack(chart, [x, y, eps ** 2 * s]),
        frame=_stack(chart, [[-eps * c / q, z, o / q]]),
    )


def noncommuting(N: int = 64) -> Preset:
    """Negative control: flat metric with constant ``h = [[0, 1], [1, 0]]``.

    Gauss fails (det h = -1 against R = 0) and the connection matrices do not commute.
    """
    chart = Chart.box((0.0, 0.0), (1.0, 1.0), (N, N))
    z, o = _full(chart, 0), _full(chart, 1)
    return Preset(
        "noncommuting",
        g=_stack(chart, [[o, z], [z, o]]),
        h=_stack(chart, [[[z, o], [o, z]]]),
        kappa=_stack(chart, [[[z]], [[z]]]),
        compatible=False,
    )


def mismatched(N: int = 64) -> Preset:
    """Negative control: sphere metric paired with ``h = 0``."""
    base = sphere(N)
    chart = base.chart
    z = _full(chart, 0)
    return Preset(
        "mismatched",
        g=base.g,
        h=_stack(chart, [[[z, z], [z, z]]]),
        kappa=base.kappa,
        compatible=False,
    )


POSITIVE: dict[str, Callable[..., Preset]] = {
    "plane": plane,
    "cylinder": cylinder,
    "sphere": sphere,
    "plane_r4": plane_r4,
    "corrugation": corrugation,
}
NEGATIVE: dict[str, Callable[..., Preset]] = {"noncommuting": noncommuting, "mismatched": mismatched}
ALL = {**POSITIVE, **NEGATIVE}


def get(name: str, N: int = 64) -> Preset:
    key = name.replace("-", "_")
    if key not in ALL:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(sorted(ALL))}")
    if N < 8:
        raise ValidationError("preset grids need at least 8 nodes per axis")
    return ALL[key](N)
