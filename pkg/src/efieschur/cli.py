"""
Command-line experiment driver.

::

    efieschur generate --geometry plate:3
    efieschur solve    --geometry sphere:0.5:3 --sweep-phi-deg 0
    efieschur scaling  --ladder 2.6,3.7,5.2,7.3,10 --eta 7 --no-solve
    efieschur compare  --geometry cube:0.6 --density 20 --eta 0.7 --sweep-phi-deg 0:180:50
    efieschur pattern  --geometry plate:5 --density 9 --max-level 2 --all-orderings
    efieschur eig      --geometry plate:1.5

Every run writes its CSV files and ``config.txt`` (the resolved configuration)
into ``--out-dir``. A config file given with ``--config`` is read first and
flags override it. Exit status is 0 on success, 1 on a configuration error and
2 when a GMRES or ACA run fails to converge.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cluster, efie, hmatrix, schur, solver
from . import mesh as meshmod
from . import ordering as ordmod
from .config import PRECONDITIONERS, ConfigError, ExperimentConfig, load_config, make_mesh
from .lowrank import AcaConvergenceError

log = logging.getLogger("efieschur")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 1, 2

BENCH_COLUMNS = [
    "N", "leaves", "n_rhs", "t_sm", "t_sp", "p", "t_mm", "t_mpp", "t_mps",
    "nnz_scaling", "nnz_bound", "fillin_blocks", "memory_bytes", "t_total",
]


# --- shared pipeline ---


@dataclass
class Problem:
    cfg: ExperimentConfig
    mesh: object
    basis: object
    medium: efie.Medium
    tree: object
    partition: object
    graph: object
    order: ordmod.LeafOrdering
    H: hmatrix.HOperator | None = None
    timings: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.basis.n


def setup_problem(cfg, geometry=None, far=True):
    """Mesh, tree, partition, leaf ordering and (with ``far``) the full H operator."""
    m = make_mesh(cfg, geometry)
    basis = meshmod.build_rwg(m)
    medium = efie.Medium(cfg.frequency)
    tree = cluster.build_tree(basis, m, cfg.leaf_size, cfg.max_level)
    part = cluster.build_partition(tree, cfg.eta)
    graph = cluster.near_field_graph(part)
    order = ordmod.order_graph(graph, cfg.ordering)
    prob = Problem(cfg, m, basis, medium, tree, part, graph, order)
    t0 = time.perf_counter()
    if far:
        prob.H = hmatrix.assemble(basis, medium, part, cfg.tol_aca)
    else:
        near = hmatrix.assemble_near(basis, medium, part)
        prob.H = hmatrix.HOperator(tree.n, tree.perm, hmatrix._leaf_slices(tree), near)
    prob.timings["t_sm"] = time.perf_counter() - t0
    log.info("N=%d leaves=%d near=%d far=%d t_sm=%.2fs", basis.n, tree.n_leaves,
             len(part.near), len(part.far), prob.timings["t_sm"])
    return prob


def make_preconditioner(prob, pc, order=None):
    H, cfg = prob.H, prob.cfg
    order = prob.order if order is None else order
    if pc == "schur":
        return schur.build(H.near, H.leaf_slices, order, cfg.fill_tol)
    if pc == "nullfield":
        return schur.null_field_build(H.near, H.leaf_slices, order)
    if pc == "jacobi":
        return schur.block_jacobi_build(H.near, H.leaf_slices)
    if pc == "none":
        return schur.identity_preconditioner(H.leaf_slices)
    raise ConfigError(f"unknown preconditioner {pc!r}")


def excitations(prob):
    cfg = prob.cfg
    out = []
    for theta, phi in cfg.sweep_angles():
        wave = efie.PlaneWave.from_angles(theta, phi, cfg.polarization)
        out.append((theta, phi, wave, efie.excitation_vector(prob.basis, wave, prob.medium)))
    return out


def run_sweep(prob, pre, rhs_list=None):
    """Solve every excitation with one preconditioner; returns (solutions, reports, wall seconds)."""
    cfg = prob.cfg
    system = solver.PreconditionedSystem(prob.H, pre)
    rhs_list = excitations(prob) if rhs_list is None else rhs_list
    xs, reports = [], []
    t0 = time.perf_counter()
    for _, _, _, b in rhs_list:
        x, rep = solver.solve(system, b, cfg.gmres_tol, cfg.restart, cfg.max_iter)
        xs.append(x)
        reports.append(rep)
    return xs, reports, time.perf_counter() - t0


def total_time(t_sm, t_sp, p, n, t_mm, t_mpp, t_mps):
    """Setup plus p iterations for each of n right-hand sides."""
    return t_sm + t_sp + p * n * (t_mm + t_mpp + t_mps)


def scaling_apply_time(pre, n, rng, repeats=5):
    """Best-of-``repeats`` seconds for one left plus one right scaling application."""
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    pre.apply_left(pre.apply_right(x))  # warm-up (jit, caches)
    best = np.inf
    for _ in range(repeats):
        t = time.perf_counter()
        pre.apply_left(pre.apply_right(x))
        best = min(best, time.perf_counter() - t)
    return best


def fit_slope(n, y):
    """
    Least-squares slope of log y against log n. Returns ``(slope, low_confidence)``;
    two points give an exact but low-confidence slope, fewer give NaN.
    """
    n = np.asarray(n, float)
    y = np.asarray(y, float)
    ok = (n > 0) & (y > 0)
    n, y = n[ok], y[ok]
    if n.size < 2 or np.unique(n).size < 2:
        return float("nan"), True
    slope = np.polyfit(np.log(n), np.log(y), 1)[0]
    return float(slope), n.size < 3


def preconditioner_bytes(pre):
    diag = sum(lu.size for lu, _ in pre.diag.values())
    return 16 * (pre.scaling_nnz() + diag)


# --- output helpers ---


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / "config.txt.tmp"
    tmp.write_text(cfg.to_text())
    tmp.replace(out / "config.txt")
    return out


def write_csv(path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    tmp.replace(path)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# --- subcommands ---


def cmd_generate(cfg):
    out = _out_dir(cfg)
    m = make_mesh(cfg)
    basis = meshmod.build_rwg(m)
    path = out / "mesh.txt"
    meshmod.save_mesh(m, path)
    print(f"wrote {path}: {m.n_triangles} triangles, {m.n_vertices} vertices, {basis.n} unknowns")
    return EXIT_OK


def cmd_solve(cfg):
    out = _out_dir(cfg)
    prob = setup_problem(cfg)
    pre = make_preconditioner(prob, cfg.pc)
    rhs = excitations(prob)
    xs, reports, wall = run_sweep(prob, pre, rhs)
    dirs = np.array([w.direction for _, _, w, _ in rhs])
    rcs = efie.monostatic_rcs(np.column_stack(xs), prob.basis, prob.medium, dirs)
    write_csv(out / "rcs.csv", ["phi_deg", "sigma_dbsm"],
              [(np.rad2deg(phi), s) for (_, phi, _, _), s in zip(rhs, rcs)])
    write_csv(out / "residuals.csv", ["rhs", "iteration", "relative_residual"],
              [(i, k, r) for i, rep in enumerate(reports) for k, r in enumerate(rep.residuals)])
    rows = []
    check = _dense_check(prob, rhs, xs, cfg.dense_check)
    for i, ((theta, phi, _, _), rep) in enumerate(zip(rhs, reports)):
        rows.append((i, np.rad2deg(theta), np.rad2deg(phi), rep.iterations, rep.passes,
                     rep.final_residual, rep.original_residual, int(rep.converged),
                     rep.times["t_mm"], rep.times["t_mpp"], rep.times["t_mps"], check.get(i, "")))
    write_csv(out / "solve_report.csv",
              ["rhs", "theta_deg", "phi_deg", "iterations", "passes", "scaled_residual",
               "original_residual", "converged", "t_mm", "t_mpp", "t_mps", "dense_error"], rows)
    ok = all(r.converged for r in reports)
    print(f"N={prob.n} rhs={len(rhs)} iterations={[r.iterations for r in reports]} "
          f"setup={pre.stats['setup_seconds']:.2f}s solve={wall:.2f}s converged={ok}")
    return EXIT_OK if ok else EXIT_NONCONVERGED


def _dense_check(prob, rhs, xs, count):
    """Relative error against the dense LU solve on ``count`` evenly spaced angles."""
    if count <= 0:
        return {}
    idx = np.unique(np.linspace(0, len(rhs) - 1, min(count, len(rhs))).round().astype(int))
    z = efie.assemble_dense(prob.basis, prob.medium)
    out = {}
    for i in idx:
        xd = solver.dense_solve(prob.basis, prob.medium, rhs[i][3], z)
        out[int(i)] = float(np.linalg.norm(xs[i] - xd) / np.linalg.norm(xd))
    return out


def run_ladder(cfg, sides=None, solve=True):
    """
    One plate per side length (wavelengths). Returns BenchReport rows as dicts.
    With ``solve=False`` the far field and GMRES are skipped (p, t_mm, t_mpp are NaN).
    """
    sides = cfg.ladder_sides() if sides is None else sides
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for side in sides:
        prob = setup_problem(cfg, geometry=f"plate:{side}", far=solve)
        pre = make_preconditioner(prob, "schur")
        t_mps = scaling_apply_time(pre, prob.n, rng)
        p = t_mm = t_mpp = float("nan")
        converged = True
        n_rhs = 1
        if solve:
            rhs = excitations(prob)[:1]
            _, reports, _ = run_sweep(prob, pre, rhs)
            rep = reports[0]
            p, t_mm, t_mpp = rep.iterations, rep.times["t_mm"], rep.times["t_mpp"]
            converged = rep.converged
        leaves = prob.tree.n_leaves
        row = {
            "N": prob.n,
            "leaves": leaves,
            "n_rhs": n_rhs,
            "t_sm": prob.timings["t_sm"],
            "t_sp": pre.stats["setup_seconds"],
            "p": p,
            "t_mm": t_mm,
            "t_mpp": t_mpp,
            "t_mps": t_mps,
            "nnz_scaling": pre.stats["nnz"],
            "nnz_bound": 27 * prob.n * (prob.n / leaves),
            "fillin_blocks": pre.stats["fill_blocks"],
            "memory_bytes": preconditioner_bytes(pre),
            "converged": converged,
        }
        row["t_total"] = total_time(row["t_sm"], row["t_sp"], p, n_rhs, t_mm, t_mpp, t_mps)
        log.info("ladder side=%s %s", side, row)
        rows.append(row)
        del prob, pre
    return rows


def ladder_slopes(rows):
    n = [r["N"] for r in rows]
    out = {}
    for key in ("t_sp", "t_mps", "nnz_scaling", "memory_bytes"):
        out[key] = fit_slope(n, [r[key] for r in rows])
    return out


def cmd_scaling(cfg, solve=True):
    out = _out_dir(cfg)
    rows = run_ladder(cfg, solve=solve)
    write_csv(out / "bench.csv", BENCH_COLUMNS, [[r[c] for c in BENCH_COLUMNS] for r in rows])
    slopes = ladder_slopes(rows)
    write_csv(out / "slopes.csv", ["quantity", "slope", "points", "low_confidence"],
              [(k, s, len(rows), int(low)) for k, (s, low) in slopes.items()])
    for k, (s, low) in slopes.items():
        print(f"slope {k}: {s:.3f}{' (low confidence)' if low else ''}")
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NONCONVERGED


COMPARE_COLUMNS = [
    "pc", "ordering", "N", "n_rhs", "p", "t_sm", "t_sp", "t_mm", "t_mpp", "t_mps", "t_mp",
    "t_total", "t_wall", "nnz_scaling", "speedup_total", "speedup_wall", "max_solution_diff",
    "converged",
]


def run_compare(cfg, prob=None, orderings=None, pcs=PRECONDITIONERS):
    """Every preconditioner on one geometry and one RHS sweep; returns comparison rows."""
    prob = setup_problem(cfg) if prob is None else prob
    orderings = [cfg.ordering] if orderings is None else orderings
    rhs = excitations(prob)
    rows, sols = [], {}
    for pc in pcs:
        for name in orderings if pc in ("schur", "nullfield") else ["none"]:
            order = ordmod.order_graph(prob.graph, name)
            pre = make_preconditioner(prob, pc, order)
            xs, reports, wall = run_sweep(prob, pre, rhs)
            p = float(np.mean([r.iterations for r in reports]))
            t = {k: float(np.mean([r.times[k] for r in reports])) for k in ("t_mm", "t_mpp", "t_mps")}
            t_sp = pre.stats["setup_seconds"]
            rows.append({
                "pc": pc, "ordering": name, "N": prob.n, "n_rhs": len(rhs), "p": p,
                "t_sm": prob.timings["t_sm"], "t_sp": t_sp, **t, "t_mp": t["t_mpp"] + t["t_mps"],
                "t_total": total_time(prob.timings["t_sm"], t_sp, p, len(rhs), t["t_mm"], t["t_mpp"], t["t_mps"]),
                "t_wall": prob.timings["t_sm"] + t_sp + wall,
                "nnz_scaling": pre.stats["nnz"],
                "converged": all(r.converged for r in reports),
                "iterations": [r.iterations for r in reports],
            })
            sols[(pc, name)] = np.column_stack(xs)
    ref = next((r for r in rows if r["pc"] == "nullfield"), None)
    base = sols[(rows[0]["pc"], rows[0]["ordering"])]
    for r in rows:
        x = sols[(r["pc"], r["ordering"])]
        r["max_solution_diff"] = float(np.max(np.linalg.norm(x - base, axis=0) / np.linalg.norm(base, axis=0)))
        r["speedup_total"] = ref["t_total"] / r["t_total"] if ref else float("nan")
        r["speedup_wall"] = ref["t_wall"] / r["t_wall"] if ref else float("nan")
    return rows


def cmd_compare(cfg, all_orderings=False):
    out = _out_dir(cfg)
    orderings = list(ordmod.ALGORITHMS) if all_orderings else None
    rows = run_compare(cfg, orderings=orderings)
    write_csv(out / "compare.csv", COMPARE_COLUMNS, [[r[c] for c in COMPARE_COLUMNS] for r in rows])
    for r in rows:
        print(f"{r['pc']:>9} {r['ordering']:>5} p={r['p']:.1f} t_sp={r['t_sp']:.2f}s "
              f"t_total={r['t_total']:.2f}s speedup={r['speedup_total']:.2f}")
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NONCONVERGED


def scaling_pattern_lines(prob, pre):
    """Pattern-dump lines for the scaling blocks, relabelled to elimination positions."""
    pos = np.empty(len(pre.order), dtype=np.int64)
    pos[pre.order] = np.arange(len(pre.order))
    near = {(t, s) for t, s in prob.partition.near}
    tree = prob.tree
    sl = pre.leaf_slices
    lines = []
    for st in pre.steps:
        for j in st.cols:
            kind = "scaling" if (st.pivot, j) in near else "fill"
            k = st.pivot
            lines.append((int(pos[k]), int(pos[j]), kind, tree.nodes[tree.leaves[k]].level,
                          sl[k].stop - sl[k].start, sl[j].stop - sl[j].start))
    return lines


def cmd_pattern(cfg, all_orderings=False):
    out = _out_dir(cfg)
    prob = setup_problem(cfg, far=False)
    names = list(ordmod.ALGORITHMS) if all_orderings else [cfg.ordering]
    rows = []
    for name in names:
        order = ordmod.order_graph(prob.graph, name)
        pre = schur.build(prob.H.near, prob.H.leaf_slices, order, cfg.fill_tol)
        cluster.write_pattern(out / f"pattern_{name}.txt", prob.partition, order.perm,
                              scaling_pattern_lines(prob, pre))
        front = ordmod.wavefront(prob.graph, order)
        rows.append((name, prob.tree.n_leaves, len(prob.partition.near),
                     ordmod.bandwidth(prob.graph, order), ordmod.profile(prob.graph, order),
                     int(front.max()), float(front.mean()), pre.stats["nnz"],
                     pre.stats["fill_blocks"], pre.stats["setup_seconds"],
                     scaling_apply_time(pre, prob.n, np.random.default_rng(cfg.seed))))
    write_csv(out / "orderings.csv",
              ["ordering", "leaves", "near_blocks", "bandwidth", "profile", "max_wavefront",
               "mean_wavefront", "nnz_scaling", "fillin_blocks", "t_sp", "t_mps"], rows)
    for r in rows:
        print(f"{r[0]:>5} bandwidth={r[3]} profile={r[4]} nnz={r[7]} fill={r[8]}")
    return EXIT_OK


def cmd_eig(cfg):
    out = _out_dir(cfg)
    prob = setup_problem(cfg)
    pre = make_preconditioner(prob, cfg.pc)
    system = solver.PreconditionedSystem(prob.H, pre)
    diag = solver.eigen_diagnostic(prob.basis, prob.medium, system)
    solver.write_eigenvalues(out / "eigenvalues.csv", diag)
    before, after = solver.spread_ratio(diag["eigs_before"]), solver.spread_ratio(diag["eigs_after"])
    write_csv(out / "eig_summary.csv", ["N", "spread_before", "spread_after", "ratio"],
              [(prob.n, before, after, after / before)])
    print(f"N={prob.n} spread before={before:.3g} after={after:.3g} ratio={after / before:.3g}")
    return EXIT_OK


# --- argument parsing ---


def build_parser():
    ap = argparse.ArgumentParser(prog="efieschur", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file read before the flags")
    common.add_argument("--geometry", help="plate:W[xH] | cube:S | sphere:R[:L] | file:PATH")
    common.add_argument("--freq-ghz", type=float)
    common.add_argument("--density", type=float, help="cells per wavelength")
    common.add_argument("--leaf-size", type=int)
    common.add_argument("--max-level", type=int)
    common.add_argument("--eta", type=float, help="admissibility parameter")
    common.add_argument("--tol-aca", type=float)
    common.add_argument("--fill-tol", type=float, help="fill-in compression tolerance (0 = dense)")
    common.add_argument("--ordering", choices=ordmod.ALGORITHMS)
    common.add_argument("--pc", choices=PRECONDITIONERS)
    common.add_argument("--gmres-tol", type=float)
    common.add_argument("--restart", type=int)
    common.add_argument("--max-iter", type=int)
    common.add_argument("--sweep-theta-deg", type=float)
    common.add_argument("--sweep-phi-deg", help="start:stop:count")
    common.add_argument("--polarization", choices=("theta", "phi"))
    common.add_argument("--dense-check", type=int, help="angles checked against dense LU")
    common.add_argument("--ladder", help="comma-separated plate sides in wavelengths")
    common.add_argument("--out-dir")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write the mesh file")
    sub.add_parser("solve", parents=[common], help="monostatic sweep with one preconditioner")
    p = sub.add_parser("scaling", parents=[common], help="plate size ladder and log-log slopes")
    p.add_argument("--no-solve", action="store_true",
                   help="skip the far field and GMRES (setup, scaling and memory only)")
    p = sub.add_parser("compare", parents=[common], help="all preconditioners on one sweep")
    p.add_argument("--all-orderings", action="store_true")
    p = sub.add_parser("pattern", parents=[common], help="near/scaling pattern dumps and ordering metrics")
    p.add_argument("--all-orderings", action="store_true")
    sub.add_parser("eig", parents=[common], help="dense eigenvalues before and after preconditioning")
    return ap


_CONFIG_FLAGS = (
    "geometry", "freq_ghz", "density", "leaf_size", "max_level", "eta", "tol_aca", "fill_tol",
    "ordering", "pc", "gmres_tol", "restart", "max_iter", "sweep_theta_deg", "sweep_phi_deg",
    "polarization", "dense_check", "ladder", "out_dir", "seed",
)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = load_config(args.config, {k: getattr(args, k) for k in _CONFIG_FLAGS})
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "scaling":
            return cmd_scaling(cfg, not args.no_solve)
        if args.command == "compare":
            return cmd_compare(cfg, args.all_orderings)
        if args.command == "pattern":
            return cmd_pattern(cfg, args.all_orderings)
        return cmd_eig(cfg)
    except (ValueError, efie.DenseCapError) as exc:  # ConfigError, MeshError, bad geometry
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AcaConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
