"""Command-line entry point: ``ptycho-crlb <command> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, InputError, NumericalError
from .fisher import assemble_fisher, crlb_from_fisher
from .forward import ObjectEstimate, expected_counts
from .montecarlo import (McStatistics, bias_variance_ratio, compare_to_crlb, evaluate_campaign,
                         run_campaign_detailed, write_report)
from .noise import RngSeed, sample_poisson_stack
from .optimizer import ALGORITHMS, CgConfig, run_cg
from .scenarios import build_case

log = logging.getLogger("ptycho_crlb")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _setup(args):
    spec, cg = io.load_config(args.config)
    if getattr(args, "photons", None) is not None:
        spec = type(spec)(**dict(spec.to_dict(), photons=args.photons))
    try:
        config = CgConfig(**cg)
    except (TypeError, InputError) as exc:
        raise ConfigError(f"invalid cg settings: {exc}") from exc
    return spec, config, build_case(spec)


def _check_finite(name, *arrays):
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise NumericalError(f"{name} produced non-finite values")


def cmd_simulate(args) -> int:
    spec, _, sc = _setup(args)
    out = Path(args.out)
    stack = expected_counts(sc.probe, sc.truth, sc.scan)
    noisy = sample_poisson_stack(stack, RngSeed(spec.seed, 0), repeats=args.repeats)
    io.write_object(out, "truth", sc.truth, spec.object_grid)
    io.write_array(out, "probe", sc.probe.field, role="probe", spacing=spec.spacing,
                   support_radius=spec.support_radius, photons=spec.photons)
    io.write_stack(out, "expected", stack, which="expected")
    if args.repeats == 1:
        io.write_stack(out, "counts", noisy, which="counts")
    else:
        for r, s in enumerate(noisy):
            io.write_stack(out, f"counts_r{r:03d}", s, which="counts", repeat=r)
    io.write_json(out / "manifest.json", {"command": "simulate", "config": spec.to_dict(),
                                          "config_hash": io.config_hash(spec.to_dict()),
                                          "seed": spec.seed, "repeats": args.repeats})
    log.info("wrote %d positions to %s", len(sc.scan), out)
    return EXIT_OK


def cmd_crlb(args) -> int:
    spec, _, sc = _setup(args)
    out = Path(args.out)
    fisher = assemble_fisher(sc.probe, sc.truth, sc.scan)
    try:
        bound = crlb_from_fisher(fisher, sc.truth.shape, args.fisher_tol)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    _check_finite("CRLB", bound.crlb_A, bound.crlb_phi)
    io.write_crlb(out, bound, PN=spec.photons, case=spec.case, spacing=spec.spacing)
    if args.save_fisher:
        io.write_array(out, "fisher", fisher, role="fisher", layout="[A, phi] raveled")
    io.write_json(out / "manifest.json", {"command": "crlb", "config": spec.to_dict(),
                                          "config_hash": io.config_hash(spec.to_dict()),
                                          "rank": bound.rank, "tolerance": bound.tolerance})
    total_A, total_phi = bound.total()
    print(f"rank {bound.rank}  sum crlb_A {total_A:.6g}  sum crlb_phi {total_phi:.6g}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    spec, config, sc = _setup(args)
    data = io.read_stack(args.data, args.counts_name)
    counts = data.counts if data.counts is not None else data.expected
    if counts.shape != (len(sc.scan),) + sc.probe.shape:
        raise InputError(f"data shape {counts.shape} does not match the configured geometry")
    if args.init == "truth":
        init = sc.truth
    else:
        init = ObjectEstimate.uniform(sc.truth.shape)
    est, trace = run_cg(sc.probe, sc.scan, counts, args.algorithm, config, init)
    _check_finite("reconstruction", est.A, est.phi)
    out = Path(args.out)
    io.write_object(out, "estimate", est, spec.object_grid, algorithm=args.algorithm)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    io.write_json(out / "manifest.json", {
        "command": "reconstruct", "algorithm": args.algorithm, "config": spec.to_dict(),
        "config_hash": io.config_hash(spec.to_dict()), "iterations": trace.iterations,
        "stop_reason": trace.stop_reason, "fallbacks": trace.fallbacks,
    })
    print(f"{args.algorithm}: {trace.iterations} iterations ({trace.stop_reason}), "
          f"final objective {trace.objective[-1]:.6g}")
    return EXIT_OK


STAT_MAPS = ("mean_A", "mean_phi", "var_A", "var_phi", "bias2_A", "bias2_phi")


def cmd_montecarlo(args) -> int:
    spec, config, sc = _setup(args)
    seed = spec.seed if args.seed is None else args.seed
    camp = run_campaign_detailed(sc, args.algorithm, spec.photons, args.trials, args.repeats,
                                 seed, config, noise_free=args.noise_free,
                                 batch_size=args.batch_size, workers=args.workers,
                                 align_phase=args.align_phase)
    stats, bound, row = evaluate_campaign(sc, camp, args.fisher_tol)
    _check_finite("campaign statistics", *(getattr(stats, k) for k in STAT_MAPS))
    out = Path(args.out)
    for key in STAT_MAPS:
        io.write_array(out, key, getattr(stats, key), role=key, trials=stats.trials)
    io.write_crlb(out, bound, PN_effective=spec.photons * args.repeats)
    write_report([row], out / "summary.csv")
    cfg = dict(spec.to_dict(), cg=vars(config))
    io.write_json(out / "manifest.json", {
        "command": "montecarlo", "case": spec.case, "algorithm": args.algorithm,
        "PN": spec.photons, "T_repeats": args.repeats, "trials": args.trials,
        "master_seed": seed, "seeds": camp.seeds, "noise_free": args.noise_free,
        "align_phase": args.align_phase, "config": cfg, "config_hash": io.config_hash(cfg),
        "iterations": [t.iterations for t in camp.traces],
        "fallbacks": int(sum(t.fallbacks for t in camp.traces)),
    })
    print(f"ratio_A {row['ratio_A']:.4g}  ratio_phi {row['ratio_phi']:.4g}  "
          f"bvr_A {row['bvr_A']:.3g}  bvr_phi {row['bvr_phi']:.3g}")
    return EXIT_OK


def load_campaign(directory):
    """Statistics, bound and manifest of a ``montecarlo`` output directory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise InputError(f"{directory} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    maps = {k: io.read_array(directory, k)[0] for k in STAT_MAPS}
    stats = McStatistics(**maps,
                         bvr_A=bias_variance_ratio(maps["bias2_A"], maps["var_A"]),
                         bvr_phi=bias_variance_ratio(maps["bias2_phi"], maps["var_phi"]),
                         trials=int(manifest["trials"]), seeds=manifest.get("seeds", []))
    return stats, io.read_crlb(directory), manifest


def cmd_report(args) -> int:
    rows = []
    for d in args.inputs:
        stats, bound, man = load_campaign(d)
        rows.append(compare_to_crlb(stats, bound, man["case"], man["algorithm"], man["PN"],
                                    man["T_repeats"]))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_report(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ptycho-crlb",
                                description="Ptychography CRLB and estimator benchmarks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="scenario config JSON")
        sp.add_argument("--photons", type=float, default=None, help="override PN")
        sp.add_argument("--out", required=True)
        return sp

    sp = with_config(sub.add_parser("simulate", help="expected and noisy diffraction stacks"))
    sp.add_argument("--repeats", type=int, default=1)
    sp.set_defaults(func=cmd_simulate)

    sp = with_config(sub.add_parser("crlb", help="Fisher matrix and per-pixel bounds"))
    sp.add_argument("--fisher-tol", type=float, default=None,
                    help="relative eigenvalue cut (default: matrix size * eps)")
    sp.add_argument("--save-fisher", action="store_true")
    sp.set_defaults(func=cmd_crlb)

    sp = with_config(sub.add_parser("reconstruct", help="one CG reconstruction"))
    sp.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    sp.add_argument("--data", required=True, help="directory written by simulate")
    sp.add_argument("--counts-name", default="counts")
    sp.add_argument("--init", choices=("truth", "uniform"), default="truth")
    sp.set_defaults(func=cmd_reconstruct)

    sp = with_config(sub.add_parser("montecarlo", help="campaign statistics vs CRLB"))
    sp.add_argument("--algorithm", choices=ALGORITHMS, required=True)
    sp.add_argument("--trials", type=int, required=True)
    sp.add_argument("--repeats", type=int, default=1)
    sp.add_argument("--seed", type=int, default=None, help="master seed (default: config seed)")
    sp.add_argument("--fisher-tol", type=float, default=None)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--batch-size", type=int, default=100)
    sp.add_argument("--noise-free", action="store_true")
    sp.add_argument("--align-phase", action="store_true",
                    help="remove the global phase offset of each estimate")
    sp.set_defaults(func=cmd_montecarlo)

    sp = sub.add_parser("report", help="aggregate CSV across montecarlo outputs")
    sp.add_argument("--in", dest="inputs", nargs="+", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
