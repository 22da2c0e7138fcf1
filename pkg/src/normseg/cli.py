"""Command-line front end wiring the solvers into experiment pipelines.

Subcommands: generate (meshes and label sets), noise (vertex perturbation),
segment (one solver run with full outputs), sweep (beta grid search),
evaluate (metrics of a stored assignment).  Every run writes a JSON summary
holding all seeds and tolerances, so it can be reproduced from that file
alone; a ``--config file.json`` provides flag defaults that explicit flags
override.

Exit codes: 0 on success, 2 when the solver stopped at max_iters without
meeting its tolerance (outputs are still written), 1 on errors.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .atv import CpConfig, chambolle_pock
from .backends import BACKEND_NAME
from .errors import NormsegError
from .labels import (
    equator_pole_labels,
    fibonacci_labels,
    load_labels,
    save_labels,
    similarity_field,
)
from .ltv import DIAGNOSTIC_COLUMNS, AdmmConfig, admm_solve
from .mesh import add_vertex_noise, compute_geometry, icosphere, label_colors, load_mesh, save_mesh


def resolve_labels(spec):
    """Label source: 'equator:N', 'fibonacci:L', or a CSV path."""
    if spec.startswith("equator:"):
        return equator_pole_labels(int(spec.split(":", 1)[1]))
    if spec.startswith("fibonacci:"):
        return fibonacci_labels(int(spec.split(":", 1)[1]))
    return load_labels(spec)


def _write_assignment(path, phi):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["triangle"] + [f"phi_{l}" for l in range(phi.shape[1])])
        for t, row in enumerate(phi):
            w.writerow([t] + [repr(float(v)) for v in row])


def _write_hard_labels(path, hard):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["triangle", "label"])
        for t, l in enumerate(hard):
            w.writerow([t, int(l)])


def _write_means(path, m):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["triangle", "mx", "my", "mz"])
        for t, row in enumerate(m):
            w.writerow([t] + [repr(float(v)) for v in row])


def _write_diagnostics(path, columns, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for row in np.atleast_2d(rows):
            w.writerow(list(row))


def _read_table(path):
    """Numeric CSV rows, skipping one header line if present."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise NormsegError(f"{path}: empty file")
    start = 0
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        start = 1
    return np.array([[float(v) for v in r] for r in rows[start:]])


def read_assignment(path):
    """Assignment CSV as written by segment: drops the triangle index column."""
    return _read_table(path)[:, 1:]


def read_hard_labels(path):
    return _read_table(path)[:, 1].astype(np.int64)


def _load_instance(args):
    """Mesh + optional noise + labels + similarity, shared by segment/sweep.

    Returns (mesh, geometry, labels, similarity, reference, noise_applied)
    where reference is the clean-mesh fidelity argmin when noise was applied.
    """
    clean = load_mesh(args.mesh)
    labels = resolve_labels(args.labels)
    reference = None
    mesh = clean
    noise_applied = args.noise_var_factor > 0.0
    if noise_applied:
        clean_geometry = compute_geometry(clean)
        reference = np.argmin(similarity_field(clean_geometry.normals, labels), axis=1)
        mesh = add_vertex_noise(clean, args.noise_var_factor, args.seed)
    geometry = compute_geometry(mesh)
    similarity = similarity_field(geometry.normals, labels)
    return mesh, geometry, labels, similarity, reference, noise_applied


def cmd_generate(args):
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.what == "icosphere":
        save_mesh(icosphere(args.sub, args.radius), out)
    elif args.what == "labels-equator":
        save_labels(equator_pole_labels(args.n), out)
    else:
        save_labels(fibonacci_labels(args.L), out)
    print(f"wrote {out}")
    return 0


def cmd_noise(args):
    mesh = load_mesh(args.mesh)
    noisy = add_vertex_noise(mesh, args.noise_var_factor, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mesh(noisy, out)
    print(f"wrote {out}")
    return 0


def cmd_segment(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    mesh, geometry, labels, similarity, reference, noise_applied = _load_instance(args)
    if args.reference is not None:
        reference = read_hard_labels(args.reference)
    tolerances = {}
    if args.model == "atv":
        kwargs = {}
        if args.max_iters is not None:
            kwargs["max_iters"] = args.max_iters
        if args.tol is not None:
            kwargs["primal_tol"] = args.tol
        config = CpConfig(**kwargs)
        result = chambolle_pock(similarity, args.beta, mesh, geometry, config)
        phi = result.phi
        hard = metrics.hard_labels_atv(phi)
        tv = metrics.tv_assignment(phi, mesh, geometry)
        objective = metrics.objective_atv(phi, similarity, args.beta, mesh, geometry)
        iterations, converged, runtime = result.iterations, result.converged, result.runtime_s
        diag_columns = ("k", "primal_change")
        diag_rows = np.column_stack([np.arange(iterations), result.primal_changes])
        tolerances = {"max_iters": config.max_iters, "primal_tol": config.primal_tol}
    else:
        kwargs = {}
        if args.max_iters is not None:
            kwargs["max_iters"] = args.max_iters
        if args.tol is not None:
            kwargs["primal_tol"] = args.tol
        config = AdmmConfig(**kwargs)
        phi, means, diagnostics = admm_solve(
            similarity, labels, mesh, geometry, args.beta, args.rho, config
        )
        hard = metrics.hard_labels_ltv(means, labels)
        tv = metrics.tv_label(phi, labels, mesh, geometry)
        objective = metrics.objective_ltv(phi, similarity, args.beta, labels, mesh, geometry)
        iterations, converged = diagnostics.iterations, diagnostics.converged
        runtime = diagnostics.runtime_s
        diag_columns = DIAGNOSTIC_COLUMNS
        diag_rows = diagnostics.history
        _write_means(outdir / "means.csv", means)
        tolerances = {
            "max_iters": config.max_iters,
            "primal_tol": config.primal_tol,
            "change_tol": config.change_tol,
        }
    _write_assignment(outdir / "assignment.csv", phi)
    _write_hard_labels(outdir / "hard_labels.csv", hard)
    _write_diagnostics(outdir / "diagnostics.csv", diag_columns, diag_rows)
    colors = label_colors(len(labels))
    save_mesh(mesh, outdir / "segmentation.ply", face_colors=colors[hard])
    summary = {
        "command": "segment",
        "model": args.model,
        "mesh": args.mesh,
        "labels": args.labels,
        "beta": args.beta,
        "rho": args.rho if args.model == "ltv" else None,
        "noise": {"var_factor": args.noise_var_factor, "seed": args.seed},
        "tolerances": tolerances,
        "backend": BACKEND_NAME,
        "iterations": int(iterations),
        "converged": bool(converged),
        "objective": objective,
        "tv": tv,
        "fidelity": metrics.fidelity(phi, similarity, geometry),
        "correctness": None
        if reference is None
        else metrics.correctness(hard, reference, geometry.areas),
        "labels_used": metrics.labels_used(hard),
        "labels_used_area": metrics.labels_used_area(hard, geometry.areas),
        "runtime_s": runtime,
        "outputs": sorted(p.name for p in outdir.iterdir()),
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(
        f"{args.model} beta={args.beta:g}: objective {objective:.6g}, "
        f"{summary['labels_used']} labels used, "
        f"{'converged' if converged else 'max_iters reached'} after {iterations} iterations"
    )
    return 0 if converged else 2


def cmd_sweep(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.grid is not None:
        grid = [float(v) for v in args.grid.split(",")]
    else:
        grid = metrics.default_grid(args.beta_base)
    clean = load_mesh(args.mesh)
    labels = resolve_labels(args.labels)
    clean_geometry = compute_geometry(clean)
    reference = np.argmin(similarity_field(clean_geometry.normals, labels), axis=1)
    kwargs = {}
    if args.max_iters is not None:
        kwargs["max_iters"] = args.max_iters
    if args.tol is not None:
        kwargs["primal_tol"] = args.tol
    cp_config = CpConfig(**kwargs)
    admm_config = AdmmConfig(**kwargs)
    reports = []
    for r in range(args.repeats):
        seed = args.seed + r
        if args.noise_var_factor > 0.0:
            mesh = add_vertex_noise(clean, args.noise_var_factor, seed)
            geometry = compute_geometry(mesh)
        else:
            mesh, geometry = clean, clean_geometry
        similarity = similarity_field(geometry.normals, labels)
        reports.append(
            metrics.beta_sweep(
                args.model, grid, similarity, labels, mesh, geometry, reference,
                rho=args.rho, cp_config=cp_config, admm_config=admm_config, jobs=args.jobs,
            )
        )
    # aggregate across repeats by plain means per beta
    table = []
    for i, beta in enumerate(sorted(grid)):
        vals = [rep.rows[i] for rep in reports]
        table.append(
            [
                beta,
                float(np.mean([v.correctness for v in vals])),
                float(np.mean([v.labels_used for v in vals])),
                float(np.mean([v.objective for v in vals])),
                float(np.mean([v.iterations for v in vals])),
                float(np.mean([v.runtime_s for v in vals])),
            ]
        )
    with open(outdir / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(metrics.SWEEP_CSV_HEADER)
        w.writerows(table)
    finite = [row for row in table if np.isfinite(row[1])]
    beta_star = max(finite, key=lambda row: row[1])[0] if finite else None
    summary = {
        "command": "sweep",
        "model": args.model,
        "mesh": args.mesh,
        "labels": args.labels,
        "grid": sorted(grid),
        "rho": args.rho,
        "noise": {"var_factor": args.noise_var_factor, "seeds": list(range(args.seed, args.seed + args.repeats))},
        "tolerances": kwargs,
        "backend": BACKEND_NAME,
        "beta_star": beta_star,
        "repeats": args.repeats,
        "reports": [rep.as_dict() for rep in reports],
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    if beta_star is None:
        print(f"{args.model} sweep: all rows failed")
        return 1
    best = next(row for row in table if row[0] == beta_star)
    print(f"beta* = {beta_star:g} ({args.model}, mean correctness {best[1]:.4f})")
    return 0


def cmd_evaluate(args):
    mesh = load_mesh(args.mesh)
    labels = resolve_labels(args.labels)
    geometry = compute_geometry(mesh)
    similarity = similarity_field(geometry.normals, labels)
    phi = read_assignment(args.assignment)
    if phi.shape != similarity.shape:
        raise NormsegError(
            f"assignment shape {phi.shape} does not match mesh/labels {similarity.shape}"
        )
    hard = metrics.hard_labels_atv(phi)
    report = {
        "command": "evaluate",
        "mesh": args.mesh,
        "labels": args.labels,
        "assignment": args.assignment,
        "beta": args.beta,
        "tv_assignment": metrics.tv_assignment(phi, mesh, geometry),
        "tv_label": metrics.tv_label(phi, labels, mesh, geometry),
        "fidelity": metrics.fidelity(phi, similarity, geometry),
        "objective_atv": metrics.objective_atv(phi, similarity, args.beta, mesh, geometry),
        "objective_ltv": metrics.objective_ltv(phi, similarity, args.beta, labels, mesh, geometry),
        "labels_used": metrics.labels_used(hard),
        "labels_used_area": metrics.labels_used_area(hard, geometry.areas),
        "correctness": None,
    }
    if args.reference is not None:
        report["correctness"] = metrics.correctness(
            hard, read_hard_labels(args.reference), geometry.areas
        )
    text = json.dumps(report, indent=2)
    if args.out is not None:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "evaluation.json").write_text(text + "\n")
    print(text)
    return 0


def _add_common(parser, *, noise_default):
    parser.add_argument("--mesh", required=True, help="input mesh (OFF/OBJ/PLY)")
    parser.add_argument(
        "--labels", required=True, help="label source: equator:N, fibonacci:L, or CSV path"
    )
    parser.add_argument("--noise-var-factor", type=float, default=noise_default,
                        help="vertex noise variance factor c (sigma^2 = c * mean edge length^2)")
    parser.add_argument("--seed", type=int, default=0, help="noise seed")
    parser.add_argument("--max-iters", type=int, default=None, help="solver iteration cap")
    parser.add_argument("--tol", type=float, default=None, help="solver primal tolerance")
    parser.add_argument("--config", default=None, help="JSON file with flag defaults")
    parser.add_argument("--out", required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="normseg",
        description="Segment triangulated surfaces by labeling triangle normals "
        "with prescribed directions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    submap = {}

    gen = sub.add_parser("generate", help="write meshes or label sets")
    gensub = gen.add_subparsers(dest="what", required=True)
    g1 = gensub.add_parser("icosphere", help="subdivided icosahedron mesh")
    g1.add_argument("--sub", type=int, required=True, help="subdivision level")
    g1.add_argument("--radius", type=float, default=1.0)
    g1.add_argument("--out", required=True, help="output mesh file")
    g2 = gensub.add_parser("labels-equator", help="equatorial labels plus both poles")
    g2.add_argument("--n", type=int, required=True, help="number of equator labels")
    g2.add_argument("--out", required=True, help="output CSV file")
    g3 = gensub.add_parser("labels-fibonacci", help="spiral-distributed labels")
    g3.add_argument("--L", type=int, required=True, help="number of labels")
    g3.add_argument("--out", required=True, help="output CSV file")
    submap["generate"] = gen

    noise = sub.add_parser("noise", help="add Gaussian vertex noise to a mesh")
    noise.add_argument("--mesh", required=True)
    noise.add_argument("--noise-var-factor", type=float, default=0.04)
    noise.add_argument("--seed", type=int, default=0)
    noise.add_argument("--config", default=None, help="JSON file with flag defaults")
    noise.add_argument("--out", required=True, help="output mesh file")
    submap["noise"] = noise

    seg = sub.add_parser("segment", help="run one solver and write all outputs")
    _add_common(seg, noise_default=0.0)
    seg.add_argument("--model", choices=("atv", "ltv"), required=True)
    seg.add_argument("--beta", type=float, required=True, help="regularization weight")
    seg.add_argument("--rho", type=float, default=1.0, help="splitting penalty (ltv)")
    seg.add_argument("--reference", default=None, help="hard-label CSV to score against")
    submap["segment"] = seg

    swp = sub.add_parser("sweep", help="grid search over the regularization weight")
    _add_common(swp, noise_default=0.04)
    swp.add_argument("--model", choices=("atv", "ltv"), required=True)
    swp.add_argument("--beta-base", type=float, default=None,
                     help="grid center; grid = base * 2^{-3..3}")
    swp.add_argument("--grid", default=None, help="explicit comma-separated beta values")
    swp.add_argument("--rho", type=float, default=1.0)
    swp.add_argument("--repeats", type=int, default=1, help="noise realizations to average")
    swp.add_argument("--jobs", type=int, default=1, help="concurrent sweep rows")
    submap["sweep"] = swp

    ev = sub.add_parser("evaluate", help="metrics of a stored assignment")
    ev.add_argument("--mesh", required=True)
    ev.add_argument("--labels", required=True)
    ev.add_argument("--assignment", required=True, help="assignment CSV from segment")
    ev.add_argument("--beta", type=float, default=0.0)
    ev.add_argument("--reference", default=None)
    ev.add_argument("--config", default=None, help="JSON file with flag defaults")
    ev.add_argument("--out", default=None, help="output directory (otherwise stdout only)")
    submap["evaluate"] = ev

    return parser, submap


_COMMANDS = {
    "generate": cmd_generate,
    "noise": cmd_noise,
    "segment": cmd_segment,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, submap = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            file_defaults = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
            return 1
        target = submap[args.command]
        valid = {a.dest for a in target._actions}
        unknown = set(file_defaults) - valid
        if unknown:
            print(f"error: unknown config keys: {sorted(unknown)}", file=sys.stderr)
            return 1
        target.set_defaults(**file_defaults)
        args = parser.parse_args(argv)
    if args.command == "sweep" and args.grid is None and args.beta_base is None:
        print("error: sweep needs --beta-base or --grid", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (NormsegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
