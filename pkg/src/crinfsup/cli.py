"""Command line driver: mesh analysis, inf-sup sweeps and verification suites.

Exit codes: 0 on success, 1 for invalid input, 2 for numerical failures
(including failed verification checks).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import femspace, infsup, mesh, orthopoly, rightinverse
from .errors import CrInfSupError, EmptyVelocitySpace, NoInnerVertex, ValidationError

CSV_COLUMNS = ("mesh", "k", "dim_v", "dim_p", "c", "scaled", "residual", "seconds", "scaled_ext", "ratio", "status")
VERIFY_BUDGET_SECONDS = 60.0


@dataclass
class RunConfig:
    """Parsed options shared by all sub-commands."""

    command: str
    meshes: list[str] = field(default_factory=list)
    generators: list[str] = field(default_factory=list)
    kmin: int = 1
    kmax: int = 8
    eta: float = mesh.DEFAULT_ETA
    out: str | None = None
    seed: int = 0
    fmt: str = "csv"
    timings: bool = False
    fix_orientation: bool = False

    def validate(self) -> None:
        if self.kmin < 1 or self.kmax < self.kmin:
            raise ValidationError(f"invalid degree range {self.kmin}..{self.kmax}")
        if self.eta < 0:
            raise ValidationError(f"eta must be non-negative, got {self.eta}")
        if self.command in ("analyze-mesh", "infsup-sweep") and not (self.meshes or self.generators):
            raise ValidationError("give a mesh with --mesh PATH or --gen SPEC")


def _load_meshes(cfg: RunConfig) -> list[tuple[str, mesh.Triangulation]]:
    out = []
    for path in cfg.meshes:
        out.append((path, mesh.read_mesh(path, fix_orientation=cfg.fix_orientation)))
    for spec in cfg.generators:
        out.append((spec, mesh.parse_generator(spec)))
    return out


def _emit(text: str, cfg: RunConfig) -> None:
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# analyze-mesh
# ---------------------------------------------------------------------------


def analyze(tri: mesh.Triangulation, eta: float) -> dict:
    """Topology report of one mesh as a JSON-ready dictionary."""
    report = mesh.classify_critical(tri, eta)
    try:
        mesh.fan_decomposition(tri, report)
    except CrInfSupError as exc:
        fans_error = f"{type(exc).__name__}: {exc}"
    else:
        fans_error = None
    try:
        report.extension_L = mesh.extension_sequence(tri)[0]
    except NoInnerVertex:
        report.extension_L = None
    data = json.loads(report.to_json())
    shape = mesh.shape_report(tri)
    data["shape"] = {"gamma": shape.gamma, "phi": shape.phi, "h_max": shape.h_max, "alpha_omega": shape.alpha_omega}
    data["n_vertices"] = tri.n_vertices
    data["n_triangles"] = tri.n_triangles
    data["fans_error"] = fans_error
    return data


def cmd_analyze_mesh(cfg: RunConfig) -> str:
    results = {name: analyze(tri, cfg.eta) for name, tri in _load_meshes(cfg)}
    if len(results) == 1:
        results = next(iter(results.values()))
    return json.dumps(results, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# infsup-sweep
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def sweep_rows(cfg: RunConfig) -> list[dict]:
    """One row per mesh and degree, in mesh order then increasing k."""
    rows = []
    first_c: dict[int, float] = {}
    for index, (name, tri) in enumerate(_load_meshes(cfg)):
        for k in range(cfg.kmin, cfg.kmax + 1):
            row = dict.fromkeys(CSV_COLUMNS)
            row.update(mesh=name, k=k)
            start = time.perf_counter()
            try:
                with warnings.catch_warnings():
                    # the status column carries the instability flag
                    warnings.simplefilter("ignore", infsup.ZeroInfSupWarning)
                    res = infsup.infsup_constant(tri, k)
            except EmptyVelocitySpace as exc:
                row["status"] = f"EmptyVelocitySpace: {exc}"
                rows.append(row)
                continue
            elapsed = time.perf_counter() - start
            row.update(
                dim_v=res.dim_v,
                dim_p=res.dim_p,
                c=res.c,
                scaled=res.scaled,
                residual=res.residual,
                scaled_ext=res.scaled_ext,
                seconds=elapsed if cfg.timings else None,
                status="unstable" if res.unstable else "ok",
            )
            if index == 0:
                first_c[k] = res.c
            elif k in first_c and first_c[k] > 0:
                row["ratio"] = res.c / first_c[k]
            rows.append(row)
    return rows


def cmd_infsup_sweep(cfg: RunConfig) -> str:
    rows = sweep_rows(cfg)
    if cfg.fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "worst": self.worst, "tolerance": self.tolerance, "detail": self.detail}


def _relative_check(name: str, pairs, tol: float) -> Check:
    worst, where = 0.0, ""
    for label, got, exact in pairs:
        err = abs(got - exact) / max(abs(exact), 1e-300)
        if not math.isfinite(err):
            err = math.inf
        if err >= worst:
            worst, where = err, label
    return Check(name, worst <= tol, worst, tol, where)


def check_weighted_integrals(kmax: int) -> list[Check]:
    return [
        _relative_check("weighted_l2_integral", ((f"k={k}", orthopoly.weighted_l2_integral(k), 2.0 / (2 * k + 1)) for k in range(kmax + 1)), 1e-12),
        _relative_check("weighted_h1_integral", ((f"k={k}", orthopoly.weighted_h1_integral(k), float(k * (k + 1))) for k in range(1, kmax + 1)), 1e-12),
    ]


def check_half_seminorms(kmax: int) -> list[Check]:
    rec = orthopoly.h12_recursion_sequence(kmax)
    wrec = orthopoly.weighted_sum_recursion_sequence(kmax)
    return [
        _relative_check("legendre_h12_seminorm_sq", ((f"k={k}", orthopoly.legendre_h12_seminorm_sq(k), orthopoly.harmonic_closed_form(k)) for k in range(1, kmax + 1)), 1e-10),
        _relative_check("h12_recursion", ((f"k={k}", float(rec[k]), orthopoly.harmonic_closed_form(k)) for k in range(1, kmax + 1)), 1e-10),
        _relative_check(
            "weighted_edge_identity",
            ((f"k={k}", orthopoly.weighted_seminorm_left_sq(orthopoly.Poly1D.legendre(k) + orthopoly.Poly1D.legendre(k - 1)), 2.0 / k) for k in range(1, kmax + 1)),
            1e-10,
        ),
        _relative_check("weighted_sum_recursion", ((f"k={k}", float(wrec[k]), 2.0 / k) for k in range(1, kmax + 1)), 1e-10),
    ]


def random_fan_angles(rng: np.random.Generator, n_max: int = 5, min_angle: float = math.pi / 12) -> np.ndarray:
    """Apex angles of a random admissible fan: at least ``min_angle`` each, total below a full turn."""
    n = int(rng.integers(1, n_max + 1))
    while True:
        ang = rng.uniform(min_angle, math.pi - min_angle, size=n + 1)
        if ang.sum() < 2 * math.pi - min_angle:
            return ang


def check_fan_determinants(seed: int, count: int = 100) -> list[Check]:
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(count):
        ang = random_fan_angles(rng)
        pairs.append((f"fan {i}", float(np.linalg.det(rightinverse.fan_tridiagonal_matrix(ang))), rightinverse.fan_determinant_closed_form(ang)))
    return [_relative_check("fan_determinant_closed_form", pairs, 1e-10)]


def check_cr_space(kmax: int) -> list[Check]:
    worst, where = 0.0, ""
    for spec in ("crisscross:2", "glued"):
        tri = mesh.parse_generator(spec)
        for k in range(1, min(kmax, 8) + 1):
            res = femspace.dofmap_jump_residuals(femspace.build_dofmap(tri, k, "cr"))
            r = float(res.max(initial=0.0))
            if r >= worst:
                worst, where = r, f"{spec} k={k}"
    return [Check("cr_jump_moments", worst <= 1e-11, worst, 1e-11, where)]


def check_right_inverse(seed: int) -> list[Check]:
    rng = np.random.default_rng(seed)
    means, members, consistency = [], [], []
    for spec, ks in (("crisscross:1", (5, 7)), ("diagonal:1", (4, 6))):
        tri = mesh.parse_generator(spec)
        report = mesh.classify_critical(tri, check_eta=False)
        for k in ks:
            q = random_mean_zero_pressure(tri, k, rng)
            res = rightinverse.pi_cr(tri, k, q, report=report)
            means.append((f"{spec} k={k}", float(np.max(np.abs(res.div_means)))))
            members.append((f"{spec} k={k}", res.membership.worst_ratio))
            for s in res.fan_systems + res.triangle_systems:
                consistency.append((f"{spec} k={k}", s.consistency))
    out = []
    for name, items, tol in (("pi_cr_div_means", means, 1e-10), ("pi_cr_membership", members, 1.0), ("system_consistency", consistency, 1e-9)):
        label, worst = max(items, key=lambda it: it[1])
        out.append(Check(name, worst <= tol, worst, tol, label))
    return out


def random_mean_zero_pressure(tri: mesh.Triangulation, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random pressure coefficients of degree k - 1 with zero mean."""
    pmap = femspace.build_dofmap(tri, k, "p")
    q = rng.standard_normal(pmap.n_scalar)
    one = infsup.constant_pressure(pmap)
    area = femspace.geometry(tri).area
    mass = np.repeat(area, femspace.dubiner_dim(k - 1))
    return q - (q @ (mass * one)) / (one @ (mass * one)) * one


def run_verify(cfg: RunConfig) -> dict:
    start = time.perf_counter()
    checks: list[Check] = []
    checks += check_weighted_integrals(cfg.kmax)
    checks += check_half_seminorms(cfg.kmax)
    checks += check_fan_determinants(cfg.seed)
    checks += check_cr_space(cfg.kmax)
    checks += check_right_inverse(cfg.seed)
    elapsed = time.perf_counter() - start
    failures = [c.name for c in checks if not c.passed]
    return {
        "passed": not failures,
        "failures": failures,
        "checks": [c.to_dict() for c in checks],
        "seconds": elapsed if cfg.timings else None,
        "within_budget": elapsed <= VERIFY_BUDGET_SECONDS,
    }


def cmd_verify(cfg: RunConfig) -> tuple[str, int]:
    summary = run_verify(cfg)
    code = 0 if summary["passed"] else 2
    return json.dumps(summary, indent=2, sort_keys=True) + "\n", code


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crinfsup", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mesh_input=True):
        if mesh_input:
            p.add_argument("--mesh", action="append", default=[], metavar="PATH", help="mesh file (repeatable)")
            p.add_argument("--gen", action="append", default=[], metavar="SPEC", help="generator such as crisscross:4 (repeatable)")
            p.add_argument("--fix-orientation", action="store_true", help="reorder clockwise triangles instead of failing")
        p.add_argument("--eta", type=float, default=mesh.DEFAULT_ETA, help="criticality threshold")
        p.add_argument("--out", metavar="PATH", help="write output to PATH instead of stdout")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized checks")
        p.add_argument("--timings", action="store_true", help="report wall-clock seconds")

    p = sub.add_parser("analyze-mesh", help="criticality classification, fans and extension length as JSON")
    common(p)
    p = sub.add_parser("infsup-sweep", help="discrete inf-sup constants over a degree range")
    common(p)
    p.add_argument("--kmin", type=int, default=1)
    p.add_argument("--kmax", type=int, default=8)
    p.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")
    p = sub.add_parser("verify", help="closed-form identities and construction invariants")
    common(p, mesh_input=False)
    p.add_argument("--kmax", type=int, default=30)
    p.add_argument("--format", dest="fmt", choices=("json",), default="json")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig(
        command=args.command,
        meshes=list(getattr(args, "mesh", []) or []),
        generators=list(getattr(args, "gen", []) or []),
        kmin=getattr(args, "kmin", 1),
        kmax=getattr(args, "kmax", 8),
        eta=args.eta,
        out=args.out,
        seed=args.seed,
        fmt=getattr(args, "fmt", "json"),
        timings=args.timings,
        fix_orientation=getattr(args, "fix_orientation", False),
    )
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        code = 0
        if cfg.command == "analyze-mesh":
            text = cmd_analyze_mesh(cfg)
        elif cfg.command == "infsup-sweep":
            text = cmd_infsup_sweep(cfg)
        else:
            text, code = cmd_verify(cfg)
        _emit(text, cfg)
        return code
    except CrInfSupError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
