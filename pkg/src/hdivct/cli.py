"""Command-line front end: verification suites and convergence experiments.

Subcommands:
  basis-check   shape-function counts, traces, orthonormality, divergence
  lemma1        rank of the interior divergence map per degree
  run           semi-Lagrangian convergence study, CSV output
  mesh-info     mesh statistics for a level range

Exit codes: 0 success, 1 check or solver failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

CSV_HEADER = "level,L2_error,order,div_norm,div_order,dimV,mode,walltime_s"


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if np.isnan(x) else f"{x:.8g}"
    return str(x)


def _apply_thread_cap():
    cap = os.environ.get("HDIVCT_THREADS")
    if cap and cap != "0":
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _parse_range(text: str) -> list[int]:
    """'2..4' -> [2,3,4]; '3' -> [3]; '1,2,4' -> [1,2,4]."""
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.split(",")]


def _load_config_file(path: str) -> dict:
    """Plain key=value lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def cmd_basis_check(args) -> int:
    from .basis import (FAMILIES, enumerate_shapes, family_counts, gram_matrix,
                        normalize, random_face_points)
    from .reference import FaceId

    rng = np.random.default_rng(args.seed)
    failed = False
    for p in _parse_range(args.p):
        if p < 1:
            print(f"p={p}: invalid (need p >= 1)")
            return 2
        shapes = enumerate_shapes(p)
        counts = family_counts(p)
        print(f"p={p}: counts " + " ".join(f"{f}={counts[f]}" for f in FAMILIES)
              + f" total={len(shapes)}")
        checks = []

        expected = (p + 1) * (p + 2) * (p + 3) // 2
        checks.append(("count", abs(len(shapes) - expected), 0.5))

        # normal-trace locality on faces
        worst = 0.0
        for j1 in range(4):
            pts = random_face_points(j1, 25, rng)
            nrm = FaceId(j1).unit_normal
            vals, _ = shapes.eval_all(pts)
            tr = vals @ nrm
            for a, d in enumerate(shapes.shapes):
                if d.face == j1 and d.family in ("EdgeFace", "FaceBubble"):
                    continue
                if d.family in ("EdgeFace", "FaceBubble") and d.face != j1:
                    worst = max(worst, np.abs(tr[:, a]).max())
                elif d.family not in ("EdgeFace", "FaceBubble"):
                    worst = max(worst, np.abs(tr[:, a]).max())
        checks.append(("trace-locality", worst, 1e-12))

        # within-family orthonormality after normalization
        normed = normalize(shapes)
        worst = 0.0
        for fam in FAMILIES:
            sl = normed.family_slice(fam)
            if sl.stop == sl.start:
                continue
            idx = np.arange(sl.start, sl.stop)
            G = gram_matrix(normed, idx)
            nrm_err = np.abs(np.diag(G) - 1.0).max()
            worst = max(worst, nrm_err)
        checks.append(("unit-norms", worst, 1e-10))

        # full Gram rank (independence)
        G = gram_matrix(normed)
        lam = np.linalg.eigvalsh(G)
        checks.append(("gram-independence", 0.0 if lam.min() > 1e-10 else 1.0, 0.5))
        print(f"  gram smallest eigenvalue {lam.min():.3e}")

        # analytic divergence vs finite differences at random interior points
        pts = rng.dirichlet((2.0,) * 4, size=20)[:, 1:]
        h = 1e-6
        _, divs = shapes.eval_all(pts)
        fd = np.zeros_like(divs)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            vp, _ = shapes.eval_all(pts + e)
            vm, _ = shapes.eval_all(pts - e)
            fd += (vp[:, :, k] - vm[:, :, k]) / (2 * h)
        checks.append(("div-vs-fd", np.abs(divs - fd).max(), 1e-5))

        for name, resid, tol in checks:
            ok = resid <= tol
            failed |= not ok
            print(f"  {name}: max residual {resid:.3e} "
                  + ("PASS" if ok else f"FAIL (tol {tol:g})"))
    return 1 if failed else 0


def cmd_lemma1(args) -> int:
    from .basis import interior_dim
    from .divfree import lemma1_check

    failed = False
    for p in _parse_range(args.p):
        if p < 2:
            print(f"p={p}: invalid (need p >= 2)")
            return 2
        rank, mdmax = lemma1_check(p)
        dimP = p * (p + 1) * (p + 2) // 6
        ok = rank == dimP - 1 and mdmax < 1e-12
        failed |= not ok
        print(f"p={p}: n_i={interior_dim(p)} dimP={dimP} rank={rank} "
              f"mean_div_max={mdmax:.2e} " + ("PASS" if ok else "FAIL"))
    return 1 if failed else 0


def cmd_mesh_info(args) -> int:
    from .mesh import Mesh

    for level in _parse_range(args.levels):
        if level < 1:
            print(f"level={level}: invalid")
            return 2
        m = Mesh(level)
        line = m.stats_text()
        if args.p:
            from .mesh import face_dof_count
            from .basis import interior_dim
            p = int(args.p)
            N = m.nfaces * face_dof_count(p) + m.ntets * interior_dim(p)
            line += f" N(p={p})={N}"
        print(line)
    return 0


def _pretty_rows(rows):
    head = ["level", "L2 error", "order", "div norm", "order", "dim V", "mode"]
    print("  ".join(f"{h:>10}" for h in head))
    for r in rows:
        cells = [r.level, f"{r.l2_error:.8f}",
                 "-" if np.isnan(r.order) else f"{r.order:.1f}",
                 f"{r.div_norm:.8f}",
                 "-" if np.isnan(r.div_order) else f"{r.div_order:.1f}",
                 r.dim, r.mode]
        print("  ".join(f"{str(c):>10}" for c in cells))


def cmd_run(args) -> int:
    from .induction import InductionProblem, fill_orders, run_experiment

    levels = _parse_range(args.levels)
    rows = []
    out = open(args.output, "w") if args.output else None
    lines = [CSV_HEADER]

    def emit(line):
        lines.append(line)
        if out:
            out.write(line + "\n")
            out.flush()

    if out:
        out.write(CSV_HEADER + "\n")
    try:
        for level in levels:
            prob = InductionProblem(level=level, p=args.p, dt=args.dt,
                                    steps=args.steps, mode=args.mode,
                                    cadence=args.cadence, tol=args.tol)
            row, _, _ = run_experiment(prob)
            rows.append(row)
            fill_orders(rows)
            emit(",".join(_fmt(v) for v in (
                row.level, row.l2_error, row.order, row.div_norm,
                row.div_order, row.dim, row.mode, row.wall_time)))
    except Exception as exc:  # noqa: BLE001 - report and flush partial CSV
        emit(f"# ABORTED: {exc}")
        print("\n".join(lines))
        if out:
            out.close()
        return 1
    if out:
        out.close()
    print("\n".join(lines))
    if args.pretty:
        print()
        _pretty_rows(rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdivct",
                                 description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="key=value file with default overrides")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("basis-check", help="shape-function verification")
    b.add_argument("--p", default="1..4", help="degree or range, e.g. 3 or 1..4")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_basis_check)

    l = sub.add_parser("lemma1", help="interior divergence rank check")
    l.add_argument("--p", default="2..5")
    l.set_defaults(func=cmd_lemma1)

    r = sub.add_parser("run", help="convergence experiment")
    r.add_argument("--levels", default="2..3")
    r.add_argument("--p", type=int, default=3)
    r.add_argument("--dt", type=float, default=0.005)
    r.add_argument("--steps", type=int, default=100)
    r.add_argument("--mode", default="none",
                   choices=["none", "local", "local+global", "global-full"])
    r.add_argument("--cadence", default="final", choices=["final", "every-step"])
    r.add_argument("--tol", type=float, default=5e-6)
    r.add_argument("--output", help="CSV file (stdout always mirrored)")
    r.add_argument("--pretty", action="store_true")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("mesh-info", help="mesh statistics")
    m.add_argument("--levels", default="1..3")
    m.add_argument("--p", help="also print dof count for this degree")
    m.set_defaults(func=cmd_mesh_info)

    ap.sub_map = {"basis-check": b, "lemma1": l, "run": r, "mesh-info": m}
    return ap


def main(argv=None) -> int:
    _apply_thread_cap()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.config:
        try:
            cfg = _load_config_file(args.config)
        except (OSError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        sp = ap.sub_map.get(args.command)
        for k, v in cfg.items():
            default = sp.get_default(k) if sp else None
            if hasattr(args, k) and default == getattr(args, k):
                cur = getattr(args, k)
                setattr(args, k, type(cur)(v) if cur is not None else v)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
