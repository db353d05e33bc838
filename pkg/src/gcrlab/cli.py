"""``gcrlab`` command-line interface.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, dec, presets
from .cartan import cartan_data, first_structure_residual, second_structure_residual, structure_norm
from .errors import GcrlabError, NumericalFailure, ValidationError
from .gcr import EQUATIONS, gcr_residuals, observed_orders, residual_csv
from .geometry import (christoffel, extract_first_form, extract_normal_connection, extract_normal_frame,
                       extract_second_form)
from .grid import dumps_field, read_field
from .realize import dumps_obj, realize, rigid_align
from .weakconv import (DEFAULT_FAKIR_PSI, ConvergenceTable, SequenceSpec, divcurl_experiment, fakir_coefficients,
                       fakir_div_bound, fakir_pairing, rigidity_experiment)

ORDER_MIN = 1.8
FLOOR = 1e-10


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text: str) -> list[float]:
    out = []
    try:
        for v in str(text).split(","):
            v = v.strip()
            if not v:
                continue
            if "/" in v:
                a, b = v.split("/")
                out.append(float(a) / float(b))
            else:
                out.append(float(v))
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _check_grids(ns: Sequence[int]) -> None:
    if any(n < 8 for n in ns):
        raise ValidationError("grid resolutions must be >= 8")


class Artifacts:
    """Output files collected during a run and written once at the end."""

    def __init__(self, out: str | None):
        self.out = Path(out) if out else None
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def flush(self) -> None:
        if self.out is None:
            return
        self.out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.out / name).write_text(text, encoding="utf-8")


def _preset_or_files(args, N: int):
    if args.preset:
        return presets.get(args.preset, N)
    if not (args.g and args.h):
        raise ValidationError("give --preset or both --g and --h field files")
    g = read_field(args.g)
    h = read_field(args.h)
    kappa = read_field(args.kappa) if args.kappa else None
    if kappa is None:
        kappa_vals = np.zeros(g.chart.counts + (g.chart.dim,) + (h.comp_shape[0],) * 2)
        from .grid import ChartField

        kappa = ChartField(g.chart, kappa_vals)
    return presets.Preset("input", g, h, kappa)


# -- subcommands ----------------------------------------------------------------

def cmd_christoffel(args, art: Artifacts) -> str:
    if args.metric:
        g = read_field(args.metric)
        name = Path(args.metric).stem
    else:
        p = presets.get(args.preset or "sphere", args.n)
        g, name = p.g, p.name
    gamma = christoffel(g)
    art.add(f"{name}_christoffel.txt", dumps_field(gamma))
    return f"christoffel: {name} grid {'x'.join(map(str, g.chart.counts))}, max |Gamma| = {np.max(np.abs(gamma.values)):.6g}"


def cmd_gcr_check(args, art: Artifacts) -> str:
    ns = args.n
    _check_grids(ns)
    results = []
    for N in ns:
        p = _preset_or_files(args, N)
        g, h, k = p.g, p.h, p.kappa
        if args.extract:
            if p.f is None:
                raise ValidationError("--extract needs a preset with a closed-form immersion")
            frame = extract_normal_frame(p.f)
            g, h, k = extract_first_form(p.f), extract_second_form(p.f, frame), extract_normal_connection(p.f, frame)
        results.append(gcr_residuals(g, h, k))
        if not args.preset:
            break
    name = args.preset or "input"
    art.add(f"{name}_gcr.csv", residual_csv(results))
    parts = []
    ok = True
    if len(results) > 1:
        spacings = [max(r.chart.spacing) for r in results]
        for eq in EQUATIONS:
            errs = [r.norms[eq][0] for r in results]
            if max(errs) <= FLOOR:
                parts.append(f"{eq} at floor")
                continue
            order = min(observed_orders(errs, spacings))
            ok &= order >= ORDER_MIN
            parts.append(f"{eq} order {order:.2f}")
    else:
        parts = [f"{eq} {results[0].norms[eq][0]:.3g}" for eq in EQUATIONS]
    verdict = "PASS" if ok else "FAIL"
    return f"gcr-check {name}: " + ", ".join(parts) + f" -> {verdict}"


def cmd_realize(args, art: Artifacts) -> str:
    _check_grids([args.n])
    p = _preset_or_files(args, args.n)
    res = realize(p.g, p.h, p.kappa, gate=args.gate, allow_incompatible=args.allow_incompatible)
    name = p.name
    rows = [("holonomy_defect", res.holonomy_defect), ("isometry_defect", res.isometry_defect),
            ("path_defect", res.path_defect), ("gcr_max", res.gcr_max), ("gate", res.gate)]
    if p.f is not None:
        rows.append(("rmse", rigid_align(res.f, p.f).rmse))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for q, v in rows:
        w.writerow([q, repr(float(v))])
    art.add(f"{name}_defects.csv", buf.getvalue())
    art.add(f"{name}_f.txt", dumps_field(res.f))
    if p.chart.dim == 2:
        art.add(f"{name}.obj", dumps_obj(res.f, args.project))
    summary = ", ".join(f"{q} {v:.3g}" for q, v in rows)
    return f"realize {name}: {summary}"


def cmd_hodge(args, art: Artifacts) -> str:
    if args.input:
        c = dec.read_cochain(args.input)
    else:
        _check_grids([args.n])
        mesh = dec.TorusMesh.square(args.dim, args.n, args.L)
        rng = np.random.default_rng(args.seed)
        c = dec.Cochain(mesh, args.degree, rng.standard_normal(mesh.resolution + (math.comb(args.dim, args.degree),)))
    parts = dec.hodge_decompose(c)
    total = dec.norm(c)
    recon = dec.norm(parts.total() - c) / max(total, 1e-300)
    pairs = [("harmonic", "exact"), ("harmonic", "coexact"), ("exact", "coexact")]
    ortho = max(abs(dec.inner(getattr(parts, a), getattr(parts, b))) for a, b in pairs) / max(total ** 2, 1e-300)
    for name in ("harmonic", "exact", "coexact"):
        art.add(f"hodge_{name}.txt", dec.dumps_cochain(getattr(parts, name)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for q, v in (("norm", total), ("norm_harmonic", dec.norm(parts.harmonic)), ("norm_exact", dec.norm(parts.exact)),
                 ("norm_coexact", dec.norm(parts.coexact)), ("reconstruction_rel", recon), ("orthogonality_rel", ortho),
                 ("hminus1", dec.hminus1_norm(c))):
        w.writerow([q, repr(float(v))])
    art.add("hodge_summary.csv", buf.getvalue())
    ok = recon <= 1e-8 and ortho <= 1e-8
    return f"hodge q={c.degree}: reconstruction {recon:.2e}, orthogonality {ortho:.2e} -> {'PASS' if ok else 'FAIL'}"


def cmd_divcurl(args, art: Artifacts) -> str:
    spec = SequenceSpec(args.kind, tuple(args.eps), {"negative": args.negative})
    table = divcurl_experiment(spec, grid=args.grid, tol=args.tol)
    tag = args.kind + ("_negative" if args.negative else "")
    art.add(f"divcurl_{tag}.csv", table.to_csv())
    last = table.values("pairing_defect")
    extra = f", final defect {last[-1]:.3g}" if last else ""
    return f"divcurl {tag}: verdict {table.verdict}{extra}"


def cmd_fakir(args, art: Artifacts) -> str:
    if any(m < 2 for m in args.m):
        raise ValidationError("fakir needs m >= 2")
    table = ConvergenceTable(metadata={"kind": "fakir"})
    for m in args.m:
        e = 1.0 / m
        table.add(e, "pairing", float(fakir_pairing(m)))
        table.add(e, "weak_coef_max_u", float(np.max(np.abs(fakir_coefficients(m)))))
        for psi in DEFAULT_FAKIR_PSI:
            b = fakir_div_bound(m, psi)
            table.add(e, f"div_value[{psi.name}]", b.value)
            table.add(e, f"div_bound[{psi.name}]", b.bound)
    art.add("fakir.csv", table.to_csv())
    vals = ", ".join(f"m={m}: {float(fakir_pairing(m)):.12g}" for m in args.m)
    return f"fakir pairings {vals}"


def cmd_rigidity(args, art: Artifacts) -> str:
    spec = SequenceSpec(args.kind, tuple(args.eps), {"base": args.base}, seed=args.seed)
    table = rigidity_experiment(spec, grid=args.grid, p=args.p)
    art.add(f"rigidity_{args.kind}.csv", table.to_csv())
    return f"rigidity {args.kind}: verdict {table.verdict}, limit residual {table.metadata.get('limit_residual', float('nan')):.3g}"


def cmd_demo(args, art: Artifacts) -> str:
    """Small end-to-end bundle; every artifact depends only on the seed."""
    rng = np.random.default_rng(args.seed)
    results = [gcr_residuals(p.g, p.h, p.kappa) for p in (presets.sphere(N) for N in (16, 32))]
    art.add("demo_sphere_gcr.csv", residual_csv(results))
    cyl = presets.cylinder(32)
    res = realize(cyl.g, cyl.h, cyl.kappa, A0=_random_rotation(rng, 3), f0=rng.standard_normal(3))
    art.add("demo_cylinder.obj", dumps_obj(res.f))
    fr, w, W = cartan_data(cyl.g, cyl.h, cyl.kappa)
    mesh = dec.TorusMesh.square(2, 16)
    c = dec.Cochain(mesh, 1, rng.standard_normal(mesh.resolution + (2,)))
    parts = dec.hodge_decompose(c)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["quantity", "value"])
    for q, v in (("cylinder_rmse", rigid_align(res.f, cyl.f).rmse), ("cylinder_holonomy", res.holonomy_defect),
                 ("cylinder_structure1", structure_norm(first_structure_residual(w, W))),
                 ("cylinder_structure2", structure_norm(second_structure_residual(W))),
                 ("hodge_exact_norm", dec.norm(parts.exact)), ("hodge_coexact_norm", dec.norm(parts.coexact)),
                 ("hodge_harmonic_norm", dec.norm(parts.harmonic))):
        wr.writerow([q, repr(float(v))])
    art.add("demo_summary.csv", buf.getvalue())
    spec = SequenceSpec("perturbed_gcr", (1 / 4, 1 / 8, 1 / 16), seed=args.seed)
    table = rigidity_experiment(spec, grid=33)
    art.add("demo_rigidity.csv", table.to_csv())
    fak = ConvergenceTable()
    for m in (10, 100, 1000):
        fak.add(1.0 / m, "pairing", float(fakir_pairing(m)))
    art.add("demo_fakir.csv", fak.to_csv())
    return f"demo seed={args.seed}: {len(art.files)} artifacts, rigidity verdict {table.verdict}"


def _random_rotation(rng: np.random.Generator, m: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((m, m)))
    return q * np.sign(np.diag(r))


# -- parser ------------------------------------------------------------------------

COMMANDS = {
    "christoffel": cmd_christoffel,
    "gcr-check": cmd_gcr_check,
    "realize": cmd_realize,
    "hodge": cmd_hodge,
    "divcurl": cmd_divcurl,
    "fakir": cmd_fakir,
    "rigidity": cmd_rigidity,
    "demo": cmd_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gcrlab", description="GCR residuals, Cartan realization, DEC and weak-convergence experiments.")
    parser.add_argument("--version", action="version", version=f"gcrlab {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", help="INI file with [section] key = value defaults")
        sp.add_argument("--out", help="output directory for artifacts")
        return sp

    preset_names = sorted(presets.ALL)
    sp = add("christoffel", "Christoffel symbols of a metric field")
    sp.add_argument("--preset", choices=preset_names)
    sp.add_argument("--metric", help="metric ChartField text file")
    sp.add_argument("--n", type=int, default=64, help="grid nodes per axis for presets")

    sp = add("gcr-check", "GCR residual table under grid refinement")
    sp.add_argument("--preset", choices=preset_names)
    sp.add_argument("--g")
    sp.add_argument("--h")
    sp.add_argument("--kappa")
    sp.add_argument("--n", type=_int_list, default=[32, 64, 128], help="comma-separated grid sizes")
    sp.add_argument("--extract", action="store_true", help="use data extracted from the preset immersion")

    sp = add("realize", "Realize an immersion from (g, h, kappa)")
    sp.add_argument("--preset", choices=preset_names)
    sp.add_argument("--g")
    sp.add_argument("--h")
    sp.add_argument("--kappa")
    sp.add_argument("--n", type=int, default=128)
    sp.add_argument("--gate", type=_positive, default=None, help="GCR gate (default 10 h^2)")
    sp.add_argument("--allow-incompatible", action="store_true", help="warn instead of failing the gate")
    sp.add_argument("--project", type=_int_list, default=None, help="three ambient axes for OBJ export")

    sp = add("hodge", "Hodge decomposition of a cochain on a flat torus")
    sp.add_argument("--input", help="cochain text file")
    sp.add_argument("--dim", type=int, default=2, choices=(2, 3))
    sp.add_argument("--degree", type=int, default=1)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--L", type=_positive, default=1.0)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("divcurl", "Div-curl lemma experiment")
    sp.add_argument("--kind", choices=("oscillation_pair", "fakir"), default="oscillation_pair")
    sp.add_argument("--eps", type=_float_list, default=[1 / 16, 1 / 32, 1 / 64, 1 / 128])
    sp.add_argument("--negative", action="store_true", help="use the non-coclosed negative control")
    sp.add_argument("--grid", type=int, default=None)
    sp.add_argument("--tol", type=_positive, default=1e-3)

    sp = add("fakir", "Fakir's carpet closed-form table")
    sp.add_argument("--m", type=_int_list, default=[10, 100, 1000])

    sp = add("rigidity", "Weak rigidity experiment")
    sp.add_argument("--kind", choices=("cylinder_family", "corrugation_family", "perturbed_gcr"),
                    default="corrugation_family")
    sp.add_argument("--eps", type=_float_list, default=[1 / 16, 1 / 32, 1 / 64, 1 / 128])
    sp.add_argument("--grid", type=int, default=None)
    sp.add_argument("--p", type=_positive, default=4.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--base", choices=sorted(presets.POSITIVE), default="cylinder")

    sp = add("demo", "Deterministic end-to-end demo")
    sp.add_argument("--seed", type=int, default=0)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str], args) -> argparse.Namespace:
    """Re-parse with config-file values as defaults; command-line flags still win."""
    cfg = configparser.ConfigParser()
    try:
        with open(args.config, encoding="utf-8") as fh:
            cfg.read_file(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
    except configparser.Error as exc:
        raise ValidationError(f"malformed config {args.config}: {exc}") from exc
    subparser = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}  # noqa: SLF001
    defaults = {}
    for section in cfg.sections():
        if section not in (args.command, "gcrlab"):
            raise ValidationError(f"unknown config section [{section}]")
        for key, raw in cfg.items(section):
            dest = key.replace("-", "_")
            if dest not in actions:
                raise ValidationError(f"unknown config key {key!r} in [{section}]")
            act = actions[dest]
            if act.const is True and act.nargs == 0:
                val = cfg.getboolean(section, key)
            elif act.type is not None:
                try:
                    val = act.type(raw)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise ValidationError(f"bad value for {key}: {exc}") from exc
            else:
                val = raw
            if act.choices is not None and val not in act.choices:
                raise ValidationError(f"bad value for {key}: {raw!r}")
            defaults[dest] = val
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        threads = os.environ.get("GCRLAB_THREADS", "").strip()
        if threads and not threads.isdigit():
            raise ValidationError(f"GCRLAB_THREADS must be a non-negative integer, got {threads!r}")
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if args.config:
            args = _apply_config(parser, argv, args)
        art = Artifacts(args.out)
        summary = COMMANDS[args.command](args, art)
        art.flush()
        print(summary)
        return 0
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except NumericalFailure as exc:
        print(f"gcrlab: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (GcrlabError, ValueError) as exc:
        print(f"gcrlab: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
