"""Command-line entry point.

Exit codes: 0 on success, 2 for configuration problems, 3 when the run
finished but one or more replicates aborted (the manifest lists them).
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..observing import save_twin
from . import config as _config
from . import run as _run

logger = logging.getLogger(__name__)


def _add_config_flags(p):
    p.add_argument("--config", metavar="FILE", help="INI config file (may override a preset)")
    p.add_argument("--preset", metavar="NAME", help="named preset to start from")
    p.add_argument("--seed", type=int, metavar="N", help="override the master seed")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ensda",
        description="Twin-experiment runner for ensemble data assimilation on periodic 2-D grids.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run all replicates of one experiment")
    _add_config_flags(p)
    p.add_argument("--workers", type=int, metavar="N", help="process pool size (default: cpu count)")
    p.add_argument("--out", metavar="DIR", help="output directory (default: $ENSDA_OUT_DIR or ./runs)")
    p.add_argument("--full", action="store_true",
                   help="scale the config up to the full published setup (hours of runtime)")

    sub.add_parser("list-presets", help="list the named presets")

    p = sub.add_parser("export-truth", help="generate one truth replicate and save it")
    _add_config_flags(p)
    p.add_argument("--out", metavar="FILE", required=True, help="output .twin path")
    p.add_argument("--truth", type=int, default=0, metavar="T", help="truth replicate index (default 0)")
    return parser


def _load_cfg(args) -> _config.ExperimentConfig:
    if not args.config and not args.preset:
        raise ValueError("need --config and/or --preset")
    base = _config.preset(args.preset) if args.preset else None
    cfg = _config.load_config(args.config, base=base) if args.config else base
    if args.seed is not None:
        cfg.master_seed = args.seed
    if getattr(args, "full", False):
        cfg = _config.paper_scale(cfg)
        logger.warning("full-scale configuration: %dx%d grid, Ne=%d — expect a long run",
                       cfg.nx, cfg.ny, cfg.ne)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)

    if args.command == "list-presets":
        for name in _config.preset_names():
            c = _config.preset(name)
            print(f"{name:16s} {c.case:8s} {c.filter:6s} {c.nx}x{c.ny} "
                  f"Ne={c.ne} analyses={c.n_analyses} reps={c.n_truths}x{c.n_ens_rep}")
        return 0

    try:
        cfg = _load_cfg(args)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    if args.command == "export-truth":
        twin = _run.build_truth(cfg, t=args.truth)
        save_twin(args.out, twin)
        print(f"wrote {args.out} ({twin.grid.nx}x{twin.grid.ny}, "
              f"{len(twin.schedule)} observation times, seed {cfg.master_seed})")
        return 0

    manifest = _run.run_experiment(cfg, out_dir=args.out, workers=args.workers)
    out = _run.resolve_out_dir(cfg, args.out)
    print(f"wrote {len(manifest['files'])} files to {out}")
    if manifest["aborts"]:
        print(f"{len(manifest['aborts'])} replicate(s) aborted; see manifest.json", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
