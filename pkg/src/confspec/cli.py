"""Command-line front end: ``confspec <command> [--config run.json] [--out dir]``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .domains import FactorSpec, make_factor
from .eigensolve import cluster, cluster_indices, solve_symmetric, spectrum_csv
from .io import write_json, write_text
from .operators import ConjugatedFamily, CovariantOperator, operator_from_descriptor
from .perturb import (branches_csv, growth_bound_check, kernel_dimension, slope_report, solve_family,
                      sorted_growth_check, track_branches)
from .plots import branches_svg
from .splitter import find_splitting_factor, genericity_loop, plan_steps_from_dict, replay_plan
from .verify import growth_instances, run_battery
from .windows import SpectralWindow, continuity_check, multiplicity_report, window_stability

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_EXHAUSTED = 0, 1, 2, 3

log = logging.getLogger("confspec")


def _operator(cfg: RunConfig) -> CovariantOperator:
    return operator_from_descriptor(cfg.operator)


def _suffix(i: int, n: int) -> str:
    return "" if n == 1 else f"_{i}"


def _window(cfg: RunConfig) -> SpectralWindow | None:
    if cfg.window is None:
        return None
    return SpectralWindow(float(cfg.window[0]), float(cfg.window[1]), cfg.tolerances.guard)


def _families(cfg: RunConfig, op: CovariantOperator) -> list[ConjugatedFamily]:
    return [ConjugatedFamily(op, make_factor(op.domain, FactorSpec.parse(s))) for s in cfg.factors]


def cmd_spectrum(cfg: RunConfig, out: Path, args: argparse.Namespace) -> int:
    op = _operator(cfg)
    spec = solve_symmetric(op.background_matrix, op.weights, rank=op.rank)
    tol = cfg.tolerances.cluster_tol
    clusters = []
    for cid, g in enumerate(cluster_indices(spec.eigenvalues, tol)):
        clusters.append({"cluster_id": cid, "value": float(np.mean(spec.eigenvalues[g])),
                         "multiplicity": len(g), "indices": list(g)})
    write_text(out / "spectrum.csv", spectrum_csv(spec, tol))
    write_json(out / "clusters.json", {
        "operator": dict(op.descriptor), "cluster_tol": tol,
        "kernel_dimension": kernel_dimension(spec, cfg.tolerances.zero_tol), "clusters": clusters,
    })
    for c in clusters[:6]:
        print(f"{c['value']:.12g} x{c['multiplicity']}")
    return EXIT_OK


def _oracle_report(fam: ConjugatedFamily, eps_grid, spectra, window) -> dict[str, Any] | None:
    oracle = fam.operator.exact_oracle
    if oracle is None:
        return None
    rows = []
    for eps, spec in zip(eps_grid, spectra):
        v = spec.eigenvalues
        if window is not None:
            v = v[(v >= window[0]) & (v <= window[1])]
        if not v.size:
            continue
        # mode index of |v| is at most |v| L / 2 pi, and L / 2 pi <= e^{|eps| ||f||}
        kmax = int(np.max(np.abs(v)) * math.exp(abs(eps) * fam.factor.sup_norm)) + 3
        exact = oracle(fam.factor, float(eps), kmax)
        diff = np.min(np.abs(v[:, None] - exact[None, :]), axis=1)
        pos = v[v > 0]
        rows.append({"eps": float(eps), "max_abs_diff": float(diff.max()),
                     "lowest_positive": float(pos.min()) if pos.size else None,
                     "oracle_lowest_positive": float(exact[exact > 0].min())})
    return {"rows": rows, "max_abs_diff": max(r["max_abs_diff"] for r in rows) if rows else None}


def cmd_track(cfg: RunConfig, out: Path, args: argparse.Namespace) -> int:
    op = _operator(cfg)
    fams = _families(cfg, op)
    grid = sorted(set(float(e) for e in cfg.eps_grid))
    window = tuple(cfg.window) if cfg.window is not None else (-math.inf, math.inf)
    step = min(abs(e) for e in grid if e != 0) if len(grid) > 1 else 1e-3
    ok = True
    for i, fam in enumerate(fams):
        sfx = _suffix(i, len(fams))
        spectra = solve_family(fam, grid)
        branches = track_branches(fam, grid, window, cluster_tol=cfg.tolerances.cluster_tol,
                                  zero_tol=cfg.tolerances.zero_tol, spectra=spectra)
        write_text(out / f"branches{sfx}.csv", branches_csv(branches))
        slopes = slope_report(branches, step) if -step in grid else {"clusters": []}
        slopes["factor"] = fam.factor.description
        write_json(out / f"slopes{sfx}.json", slopes)
        reports = [growth_bound_check(b, op, fam.factor) for b in branches]
        kdims = [kernel_dimension(s, cfg.tolerances.zero_tol) for s in spectra]
        sorted_ok, sorted_margin = sorted_growth_check(spectra, grid, op, fam.factor)
        tracked_ok = all(r.passed for r, b in zip(reports, branches) if not b.uncertain)
        growth = {
            "factor": fam.factor.description, "eta": op.eta, "sup_norm": fam.factor.sup_norm,
            # uncertain branches may be mis-matched on coarse grids; the sorted check covers them
            "all_passed": sorted_ok and tracked_ok,
            "sorted_index": {"passed": sorted_ok, "min_margin": sorted_margin},
            "uncertain_branch_failures": sum(1 for r, b in zip(reports, branches) if b.uncertain and not r.passed),
            "kernel_dimension": {"eps": grid, "values": kdims, "constant": len(set(kdims)) == 1},
            "branches": [{"branch_id": b.branch_id, "origin_value": r.origin_value,
                          "max_deviation": float(r.deviation.max()), "min_margin": float(r.margin.min()),
                          "passed": r.passed, "uncertain": b.uncertain} for b, r in zip(branches, reports)],
        }
        oracle = _oracle_report(fam, grid, spectra, None if cfg.window is None else cfg.window)
        if oracle is not None:
            growth["oracle"] = oracle
        write_json(out / f"growth{sfx}.json", growth)
        if args.emit_plots:
            write_text(out / f"branches{sfx}.svg", branches_svg(branches, f"{op.name}, f = {fam.factor.description}"))
        ok &= growth["all_passed"] and growth["kernel_dimension"]["constant"]
        print(f"{fam.factor.description}: {len(branches)} branches, growth bound "
              f"{'ok' if growth['all_passed'] else 'VIOLATED'}, kernel {sorted(set(kdims))}")
        for row in slopes["clusters"]:
            print(f"  lambda={row['value']:.10g} predicted {np.round(row['predicted'], 8).tolist()} "
                  f"measured {np.round(row['measured'], 8).tolist()}")
        if oracle is not None:
            print(f"  oracle max |diff| {oracle['max_abs_diff']:.3e}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_split(cfg: RunConfig, out: Path, args: argparse.Namespace) -> int:
    if args.replay:
        return _replay(cfg, out, Path(args.replay))
    op = _operator(cfg)
    max_steps = args.max_steps if args.max_steps is not None else cfg.max_steps
    plan = genericity_loop(op, cfg.alpha, cfg.tolerances.gamma, max_steps,
                           zero_tol=cfg.tolerances.zero_tol, spread_tol=cfg.tolerances.spread_tol)
    data = plan.to_dict()
    data["operator"] = dict(op.descriptor)
    write_json(out / "plan.json", data)
    write_text(out / "final_spectrum.csv", spectrum_csv(plan.final_spectrum, cfg.tolerances.cluster_tol))
    write_text(out / "split.log", "\n".join(plan.log_lines) + "\n")
    for line in plan.log_lines:
        print(line)
    print(f"status {plan.status}: {len(plan.steps)} steps, kernel dimension {plan.kernel_dimension}")
    return EXIT_EXHAUSTED if plan.status == "exhausted" else EXIT_OK


def _replay(cfg: RunConfig, out: Path, plan_path: Path) -> int:
    try:
        plan = json.loads(plan_path.read_text())
        steps = plan_steps_from_dict(plan)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read plan {plan_path}: {exc}") from exc
    op = operator_from_descriptor(plan.get("operator", cfg.operator))
    spec = replay_plan(op, steps)
    alpha = float(plan.get("alpha", cfg.alpha))
    ztol = cfg.tolerances.zero_tol if cfg.tolerances.zero_tol is not None else 1e-9 * spec.scale
    v = spec.eigenvalues
    window_vals = v[(np.abs(v) <= alpha) & (np.abs(v) > ztol)]
    recorded = np.array(plan.get("final_spectrum", {}).get("window_eigenvalues", []), dtype=float)
    identical = window_vals.shape == recorded.shape and bool(np.all(window_vals == recorded))
    write_text(out / "final_spectrum.csv", spectrum_csv(spec, cfg.tolerances.cluster_tol))
    write_json(out / "replay.json", {"steps": len(steps), "bit_identical": identical,
                                     "window_eigenvalues": window_vals})
    print(f"replayed {len(steps)} steps; window spectrum bit-identical: {identical}")
    return EXIT_OK if identical else EXIT_VERIFY


def cmd_rigidity(cfg: RunConfig, out: Path, args: argparse.Namespace) -> int:
    op = _operator(cfg)
    spec = solve_symmetric(op.background_matrix, op.weights, rank=op.rank)
    ztol = cfg.tolerances.zero_tol if cfg.tolerances.zero_tol is not None else 1e-9 * spec.scale
    lo, hi = cfg.window if cfg.window is not None else (-cfg.alpha, cfg.alpha)
    rows = []
    for es in cluster(spec, cfg.tolerances.cluster_tol):
        if es.multiplicity < 2 or abs(es.value) <= ztol or not lo <= es.value <= hi:
            continue
        search = find_splitting_factor(es, op, spread_tol=cfg.tolerances.spread_tol)
        rows.append({**search.rigidity.to_dict(), "search_status": search.status, "best_spread": search.spread,
                     "best_factor": search.factor.description if search.factor else None,
                     "max_identity_deviation": max(fo.identity_deviation() for fo in search.first_orders)})
        print(f"lambda={es.value:.10g} x{es.multiplicity}: {search.rigidity.verdict}, score "
              f"{search.rigidity.score:.3e}, search {search.status} (spread {search.spread:.4g})")
    mult = multiplicity_report(spec, op, cfg.tolerances.cluster_tol, ztol, SpectralWindow(lo, hi))
    write_json(out / "rigidity.json", {"operator": dict(op.descriptor), "clusters": rows,
                                       "multiplicity": mult.to_dict()})
    return EXIT_OK


def cmd_windows(cfg: RunConfig, out: Path, args: argparse.Namespace) -> int:
    window = _window(cfg)
    if window is None:
        raise ConfigError("the windows command needs a 'window' in the config")
    op = _operator(cfg)
    fams = _families(cfg, op)
    ok = True
    for i, fam in enumerate(fams):
        sfx = _suffix(i, len(fams))
        stab = window_stability(fam, window, cfg.eps_grid)
        cont = continuity_check(fam, cfg.continuity_c, cfg.index_count, cfg.eps_grid)
        spec = solve_symmetric(op.background_matrix, op.weights, rank=op.rank)
        mult = multiplicity_report(spec, op, cfg.tolerances.cluster_tol, cfg.tolerances.zero_tol, window)
        write_text(out / f"window_sweep{sfx}.csv", stab.sweep_csv())
        write_json(out / f"windows{sfx}.json", {"factor": fam.factor.description, "stability": stab.to_dict(),
                                                "continuity": cont.to_dict(), "multiplicity": mult.to_dict()})
        ok &= stab.passed and cont.passed
        print(f"{fam.factor.description}: base count {stab.base_count}, certified |eps| <= {stab.radius:.4g}, "
              f"stable {stab.passed}, continuity {cont.passed}")
        for c in stab.crossings:
            print(f"  count {c.counts[0]} -> {c.counts[1]} in {c.bracket}, refined eps {c.refined:.6g}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_verify(cfg: RunConfig, out: Path, args: argparse.Namespace) -> int:
    results = run_battery(cfg)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    write_json(out / "verify.json", {"passed": not failed,
                                     "criteria": [{k: v for k, v in r.to_dict().items() if k != "seconds"}
                                                  for r in results]})
    if args.emit_plots:
        for name, op, spec, win in growth_instances():
            fam = ConjugatedFamily(op, make_factor(op.domain, spec))
            branches = track_branches(fam, cfg.eps_grid, window=win, cluster_tol=cfg.tolerances.cluster_tol)
            slug = "".join(ch if ch.isalnum() else "_" for ch in name).strip("_")
            write_text(out / f"branches_{slug}.csv", branches_csv(branches))
            write_text(out / f"branches_{slug}.svg", branches_svg(branches, name))
    if failed:
        print("failed: " + ", ".join(f"{r.number}. {r.title}" for r in failed), file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(results)} criteria passed")
    return EXIT_OK


COMMANDS = {
    "spectrum": (cmd_spectrum, "background spectrum CSV and cluster JSON"),
    "track": (cmd_track, "eigenvalue branches, slopes and growth-bound report"),
    "split": (cmd_split, "genericity loop splitting degenerate window eigenvalues"),
    "rigidity": (cmd_rigidity, "rigidity scores and splitting-factor search per cluster"),
    "windows": (cmd_windows, "window count stability and continuity envelopes"),
    "verify": (cmd_verify, "run the acceptance battery"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration JSON (defaults built in)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--emit-plots", action="store_true", help="also write branch diagrams as SVG")
    common.add_argument("--max-steps", type=int, help="step limit for the genericity loop")
    common.add_argument("--seed", type=int, help="seed for randomized probes")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="confspec", description="Spectra of conformally covariant operators "
                                     "under conformal deformation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "split":
            p.add_argument("--replay", type=Path, help="recompose a saved plan.json instead of searching")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig().validate()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.max_steps is not None:
            if args.max_steps < 0:
                raise ConfigError("--max-steps must be nonnegative")
            cfg.max_steps = args.max_steps
        out = args.out if args.out is not None else Path(cfg.out)
        fn, _ = COMMANDS[args.command]
        return fn(cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
