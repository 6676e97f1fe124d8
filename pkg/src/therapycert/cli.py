"""Command-line front end.

Exit codes: 0 success, 1 unexpected error, 2 configuration/usage error,
3 simulation blow-up, 4 empty admissible set.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .certifier import (
    SAMPLE_SIZE_NOTE, CertificationSpec, Cost, certify, sample_size, validate_out_of_sample,
)
from .config import RunConfig, RunManifest, load_config
from .dynamics import PARAM_NAMES, ModelParams, UncertaintyModel
from .errors import BlowUpError, ConfigError
from .integrator import SimConfig, simulate_closed_loop
from .therapy import PRESETS, Protocol, TherapyDesign, validate_protocol

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_SIM, EXIT_EMPTY = 0, 1, 2, 3, 4

TABLE_N_THETA = (1, 5, 10, 100, 1000, 10000)
TABLE_ETA = (0.1, 0.05, 0.01, 0.001)
# published reference values (delta = 1e-3, m = 1), kept for side-by-side comparison
PUBLISHED_TABLE = {
    1: (132, 264, 1317, 13164),
    5: (154, 308, 1536, 15354),
    10: (163, 326, 1628, 16280),
    100: (193, 386, 1930, 19299),
    1000: (223, 445, 2225, 22249),
    10000: (252, 503, 2515, 25148),
}

log = logging.getLogger("therapycert")


def _dump_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


def _resolve(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, certification=replace(cfg.certification, master_seed=args.seed))
    if getattr(args, "threads", None) is not None:
        cfg = replace(cfg, flags=replace(cfg.flags, threads=args.threads))
    if getattr(args, "out_dir", None) is not None:
        cfg = replace(cfg, output_dir=args.out_dir)
    return cfg


# ----------------------------------------------------------------- commands

def sample_size_table(delta: float = 1e-3, m: int = 1) -> list[dict]:
    rows = []
    for n_theta in TABLE_N_THETA:
        for j, eta in enumerate(TABLE_ETA):
            pub = PUBLISHED_TABLE[n_theta][j] if (delta, m) == (1e-3, 1) else None
            rows.append({"n_theta": n_theta, "eta": eta,
                         "N": sample_size(eta, delta, m, n_theta), "published_N": pub})
    return rows


def cmd_sample_size(args) -> int:
    if args.table:
        out = sys.stdout
        out.write(f"# sample size sweep, delta={args.delta}, m={args.m}\n")
        out.write(f"# note: {SAMPLE_SIZE_NOTE}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["n_theta", "eta", "N", "published_N"])
        for r in sample_size_table(args.delta, args.m):
            w.writerow([r["n_theta"], r["eta"], r["N"], "" if r["published_N"] is None else r["published_N"]])
        return EXIT_OK
    print(sample_size(args.eta, args.delta, args.m, args.n_theta))
    return EXIT_OK


def _design_from_args(args) -> TherapyDesign:
    design = PRESETS[args.preset]
    overrides = {k: getattr(args, k) for k in ("beta", "r_target", "alpha", "mu2", "N_T",
                                               "gamma", "gamma_c", "d")
                 if getattr(args, k) is not None}
    return replace(design, **overrides)


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    proto = cfg.protocol
    if args.u_bar is not None:
        proto = replace(proto, u_bar=tuple(args.u_bar))
    design = _design_from_args(args)
    problems = validate_protocol(design, proto)
    if problems:
        raise ConfigError("; ".join(problems))
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out_dir / "simulate_manifest.json", "simulate", cfg, sys.argv[1:])
    try:
        traj = simulate_closed_loop(design, cfg.nominal_params, proto.x0, proto, cfg.sim,
                                    p_assumed=cfg.nominal_params)
    except BlowUpError as exc:
        manifest.finalize("blowup", [], {"error": str(exc)})
        raise
    traj_path = out_dir / f"trajectory_{args.preset}.csv"
    traj.write_csv(traj_path, stride=cfg.sim.record_stride)
    d1, d2 = design.budgets(proto)
    summary = {"preset": args.preset, "design": design.to_dict(), **traj.summary(),
               "drug1_available": d1, "drug2_available": d2,
               "health_ok": traj.min_x2 >= proto.C_min,
               "contraction_ok": traj.contraction_ratio <= design.gamma_c}
    sum_path = _dump_json(out_dir / f"simulate_summary_{args.preset}.json", summary)
    manifest.finalize("ok", [traj_path, sum_path])
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = _resolve(args)
    cert = cfg.certification
    for name in ("eta", "delta", "m"):
        if getattr(args, name) is not None:
            cert = replace(cert, **{name: getattr(args, name)})
    if args.cost is not None:
        cert = replace(cert, cost=Cost(args.cost, args.weight if args.weight is not None else 1.0))
    flags = cfg.flags
    if args.pruning:
        flags = replace(flags, pruning=True)
    if args.controller_knows_truth:
        flags = replace(flags, controller_knows_truth=True)
    if args.n_explicit is not None:
        flags = replace(flags, N_explicit=args.n_explicit)
    cfg = replace(cfg, certification=cert, flags=flags)

    grid = cfg.build_grid()
    spec = cfg.cert_spec()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out_dir / "certify_manifest.json", "certify", cfg, sys.argv[1:])
    cfg_path = out_dir / "resolved_config.json"
    cfg_path.write_text(cfg.dumps())

    report, gm, scenarios = certify(grid, cfg.uncertainty, spec, cfg.protocol, cfg.sim,
                                    pruning=flags.pruning, threads=flags.threads,
                                    p_nom=cfg.nominal_params,
                                    knows_truth=flags.controller_knows_truth)
    files = [cfg_path]
    scen_path = out_dir / "scenarios.csv"
    with open(scen_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario_id", *PARAM_NAMES])
        for ell, row in enumerate(scenarios):
            w.writerow([ell, *(repr(float(v)) for v in row)])
    g_path = out_dir / "gmatrix.csv"
    gm.write_csv(g_path)
    rs_path = out_dir / "gmatrix_rowsums.csv"
    gm.write_row_sums_csv(rs_path)
    rep_path = _dump_json(out_dir / "certification_report.json", report.to_dict())
    files += [scen_path, g_path, rs_path, rep_path]
    manifest.finalize(report.status, files, {"N": report.N, "n_theta": len(grid)})

    print(f"N = {report.N} (formula {report.N_formula}), n_theta = {len(grid)}, "
          f"simulations = {gm.stats['simulated']}")
    print(f"admissible: {len(report.admissible)} / {len(grid)}")
    if report.selection is None:
        print("empty admissible set: no design certified")
        return EXIT_EMPTY
    sel = report.selection
    print(f"optimal design #{sel.index}: {json.dumps(sel.design.to_dict())} cost={sel.cost}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _resolve(args)
    out_dir = Path(cfg.output_dir)
    rep_path = Path(args.report) if args.report else out_dir / "certification_report.json"
    if not rep_path.is_file():
        raise ConfigError(f"certification report not found: {rep_path}")
    try:
        rep = json.loads(rep_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"unreadable certification report {rep_path}: {exc}") from exc
    if rep.get("optimal") is None:
        print("report has no certified design (empty admissible set)")
        return EXIT_EMPTY
    multiplier = args.multiplier if args.multiplier is not None else cfg.validation_multiplier
    design = TherapyDesign.from_dict(rep["optimal"]["design"])
    proto = Protocol.from_dict(rep["protocol"])
    model = UncertaintyModel.from_dict(rep["uncertainty"])
    sim = SimConfig.from_dict(rep["sim"])
    p_nom = ModelParams.from_dict(rep["nominal_params"])
    seed = CertificationSpec.from_dict(rep["certification"]).master_seed

    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out_dir / "validate_manifest.json", "validate", cfg, sys.argv[1:])
    vr = validate_out_of_sample(design, model, multiplier, rep["N"], proto, sim, seed,
                                p_nom=p_nom, knows_truth=rep["controller_knows_truth"],
                                threads=cfg.flags.threads)
    summary = {"report": str(rep_path.name), **vr.to_dict()}
    vpath = _dump_json(out_dir / "validation_report.json", summary)
    spath = out_dir / "validation_scatter.csv"
    vr.write_scatter_csv(spath)
    manifest.finalize("ok", [vpath, spath])
    rate = vr.violation_rate
    print(f"scenarios = {vr.n_scenarios}, violations = {vr.violations}, "
          f"rate = {'n/a' if rate is None else repr(rate)}")
    return EXIT_OK


def cmd_init_config(args) -> int:
    text = RunConfig().dumps()
    if args.write:
        Path(args.write).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _unit_interval(name):
    def parse(s):
        v = float(s)
        if not 0.0 < v < 1.0:
            raise argparse.ArgumentTypeError(f"{name} must lie in (0, 1)")
        return v
    return parse


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError("must be a non-negative integer")
    return v


def _pos_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON run configuration")
    common.add_argument("--seed", type=_nonneg_int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--threads", type=_pos_int, default=argparse.SUPPRESS,
                        help="worker threads (default: all cores)")
    common.add_argument("--out-dir", dest="out_dir", default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="therapycert", parents=[common],
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-size", parents=[common], help="scenario count for (eta, delta, m, n_theta)")
    p.add_argument("--eta", type=_unit_interval("eta"), default=0.01)
    p.add_argument("--delta", type=_unit_interval("delta"), default=1e-3)
    p.add_argument("--m", type=_nonneg_int, default=1)
    p.add_argument("--n-theta", dest="n_theta", type=_pos_int, default=576)
    p.add_argument("--table", action="store_true", help="emit the n_theta x eta sweep as CSV")
    p.set_defaults(func=cmd_sample_size)

    p = sub.add_parser("simulate", parents=[common], help="one nominal closed-loop run")
    p.add_argument("--preset", choices=sorted(PRESETS), default="sim1")
    p.add_argument("--beta", type=float)
    p.add_argument("--r-target", dest="r_target", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mu2", type=float)
    p.add_argument("--n-t", dest="N_T", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--gamma-c", dest="gamma_c", type=float)
    p.add_argument("--d", type=float)
    p.add_argument("--u-bar", dest="u_bar", type=float, nargs=2, metavar=("U1", "U2"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("certify", parents=[common], help="run the certification pipeline")
    p.add_argument("--eta", type=_unit_interval("eta"))
    p.add_argument("--delta", type=_unit_interval("delta"))
    p.add_argument("--m", type=_nonneg_int)
    p.add_argument("--cost", choices=["min-drug", "min-hospitalization", "convex"])
    p.add_argument("--weight", type=float, help="weight on d for --cost convex")
    p.add_argument("--pruning", action="store_true")
    p.add_argument("--controller-knows-truth", action="store_true")
    p.add_argument("--n-explicit", dest="n_explicit", type=_pos_int)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("validate", parents=[common], help="out-of-sample check of the certified design")
    p.add_argument("--report", help="certification report (default: <out-dir>/certification_report.json)")
    p.add_argument("--multiplier", type=_nonneg_int)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("init-config", parents=[common], help="print or write the default configuration")
    p.add_argument("--write", metavar="PATH")
    p.set_defaults(func=cmd_init_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIM
    except Exception as exc:  # noqa: BLE001
        log.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
