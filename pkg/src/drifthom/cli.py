"""Command line: ``drifthom run|validate|oracle``."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import io
from .config import _num, check_assumptions, load_config
from .errors import AssumptionViolated, StageError
from .runner import STAGES, run


def _stages(text: str):
    return [s.strip() for s in text.split(",") if s.strip()]


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = args.out if args.out is not None else cfg["output"]["directory"]
    try:
        man = run(cfg, _stages(args.stages), out, args.seed, args.dump_matrices)
    except AssumptionViolated as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    for s, t in man["timings"].items():
        print(f"{s:<11s} {t:8.2f} s")
    print(f"manifest: {Path(out) / 'manifest.json'}  results_hash {man['results_hash'][:16]}")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    checks = check_assumptions(cfg)
    for c in checks:
        print(f"{c.name}  {'ok  ' if c.passed else 'FAIL'}  {c.evidence}")
    return 0 if all(c.passed for c in checks) else 2


def cmd_oracle(args) -> int:
    """Fine-grid reference tensors (B = 0 and drift at the given 𝔄), Richardson-extrapolated."""
    from .oracle import reference_dispersion
    cfg = load_config(args.config)
    g = cfg["geometry"]
    c = cfg["coefficients"]
    obs = None if g["obstacle"] is None else tuple(_num(v) for v in g["obstacle"])
    D = c["D"]
    d = (_num(D), _num(D)) if not isinstance(D, list) else (_num(D[0]), _num(D[-1]))
    if isinstance(D, list) and isinstance(D[0], list):
        d = (_num(D[0][0]), _num(D[1][1]))
    levels = tuple(int(v) for v in args.levels.split(","))
    out = {}
    t0 = time.perf_counter()
    common = dict(obstacle=obs, d=d, dirichlet_sides=tuple(g["dirichlet_faces"]))
    out["no_drift"] = reference_dispersion(levels, mean_flow=None, A_value=0.0, **common)
    dr = c["drift"]
    if dr["enabled"]:
        out["drift"] = reference_dispersion(levels, mean_flow=tuple(_num(v) for v in dr["mean_flow"]),
                                            cutoff_radius=_num(dr["cutoff_radius"]), A_value=args.A,
                                            **common)
    for v in out.values():
        v.pop("runs")
    out["levels"] = list(levels)
    out["wall_time"] = time.perf_counter() - t0
    io.write_json(args.out, out)
    print(f"oracle written to {args.out} ({out['wall_time']:.1f} s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drifthom", description="Homogenization with large drift: "
                                "cell problems, effective tensors, macro and micro solvers.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run pipeline stages from a config file")
    r.add_argument("config", nargs="?", help="TOML or JSON config (defaults when omitted)")
    r.add_argument("--stages", default=",".join(STAGES),
                   help="comma list from: " + ",".join(STAGES) + " (empty: manifest only)")
    r.add_argument("--out", default=None, help="output directory (default: output.directory)")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--dump-matrices", action="store_true", help="write MatrixMarket operator dumps")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check assumptions A1-A6")
    v.add_argument("config", nargs="?")
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle", help="fine-grid reference tensors for fixtures")
    o.add_argument("config", nargs="?")
    o.add_argument("--levels", default="120,240,480")
    o.add_argument("--A", type=float, default=1.0, help="𝔄 for the drift case")
    o.add_argument("--out", default="oracle.json")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
