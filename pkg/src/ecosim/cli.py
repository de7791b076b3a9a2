"""Command-line entry point: ``ecosim <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import PRESETS, ConfigError, load_scenario, load_training, read_json
from .curriculum import train_curriculum, write_training_log
from .rng import derive_seed
from .scenario import run_scenario
from .stats_io import RunManifest, read_populations, write_chart, write_run
from .terrain import generate_island, load_terrain, place_vegetation, save_terrain, save_vegetation


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="root seed (default 0)")
    parser.add_argument("--config", type=Path, default=d(None), help="JSON config file")
    parser.add_argument("--out-dir", type=Path, default=d(Path(".")), help="output directory (default .)")
    parser.add_argument("--threads", type=int, default=d(1), help="max parallel scenario replicates")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ecosim", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _globals(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    sub = p.add_subparsers(dest="command", metavar="command", required=True)

    g = sub.add_parser("gen-terrain", parents=[common], help="synthetic island to ASCII rasters")
    g.add_argument("--size", type=int, default=50)
    g.add_argument("--preset", choices=sorted(PRESETS), default="hilly")

    v = sub.add_parser("place-vegetation", parents=[common], help="scatter trees, grass and dandelions")
    v.add_argument("--altitude", type=Path, required=True)
    v.add_argument("--cover", type=Path, required=True)
    v.add_argument("--counts", default="tree=0,grass=400,dandelion=400", help="species=count,...")

    t = sub.add_parser("train", parents=[common], help="run a training curriculum for one species")
    t.add_argument("--species", choices=("hare", "fox"))
    t.add_argument("--quiet", action="store_true")

    r = sub.add_parser("run", parents=[common], help="run a scenario")
    r.add_argument("--replicates", type=int, default=1, help="seeds seed..seed+N-1, one sub-directory each")

    c = sub.add_parser("report", parents=[common], help="populations.csv to SVG chart")
    c.add_argument("populations", type=Path)
    c.add_argument("-o", "--output", type=Path, help="chart path (default <out-dir>/populations.svg)")
    c.add_argument("--title", default="")
    return p


def _counts(text: str) -> dict[str, int]:
    out = {}
    for part in filter(None, text.split(",")):
        name, _, n = part.partition("=")
        if not n.strip().lstrip("-").isdigit():
            raise ValueError(f"bad count entry {part!r}; expected species=count")
        out[name.strip()] = int(n)
    return out


def cmd_gen_terrain(args) -> None:
    params = PRESETS[args.preset]
    if args.config:
        over = read_json(args.config)
        over.pop("version", None)
        params = replace(params, **over)
    grid = generate_island(args.size, derive_seed(args.seed, "terrain"), params)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_terrain(grid, args.out_dir / "altitude.asc", args.out_dir / "cover.asc")
    print(f"wrote {args.out_dir / 'altitude.asc'} and {args.out_dir / 'cover.asc'} ({args.size}x{args.size})")


def cmd_place_vegetation(args) -> None:
    grid = load_terrain(args.altitude, args.cover)
    density = None
    if args.config:
        density = read_json(args.config)
        density.pop("version", None)
    veg = place_vegetation(grid, density, _counts(args.counts), derive_seed(args.seed, "vegetation"))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_vegetation(veg, args.out_dir / "vegetation.csv")
    print(f"wrote {len(veg)} placements to {args.out_dir / 'vegetation.csv'}")


def cmd_train(args) -> None:
    if args.config is None:
        raise ValueError("train needs --config (curriculum JSON)")
    cfg = load_training(args.config, args.species)
    args.out_dir.mkdir(parents=True, exist_ok=True)

    def progress(row):
        if not args.quiet:
            print(f"stage {row['stage']} episode {row['episode']}: length {row['length']} "
                  f"return {row['return']:.4f}", flush=True)

    res = train_curriculum(cfg.species, cfg.stages, cfg.hyperparams, args.seed, cfg.init_policy, cfg.hidden_size,
                           cfg.other_policies, progress=progress)
    for stage, theta in zip(cfg.stages, res.stage_weights):
        pol = res.policy.copy()
        pol.theta[:] = theta
        pol.save(args.out_dir / f"{cfg.species}_stage_{stage.name}.npz")
    res.policy.save(args.out_dir / f"{cfg.species}_policy.npz")
    write_training_log(res.log, args.out_dir / f"{cfg.species}_training_log.csv")
    print(f"wrote {args.out_dir / (cfg.species + '_policy.npz')}")


def _run_one(config_path: Path, seed: int, out_dir: Path) -> str:
    cfg = load_scenario(config_path, seed)
    series, events = run_scenario(cfg.grid, cfg.vegetation, cfg.policies, cfg.params, cfg.schedule, seed)
    write_run(out_dir, series, events, cfg.config_hash(), seed, cfg.schedule.total_steps)
    final = ", ".join(f"{sp} {series.final(sp)}" for sp in sorted(series.counts))
    return f"seed {seed}: final {final} -> {out_dir}"


def cmd_run(args) -> None:
    if args.config is None:
        raise ValueError("run needs --config (scenario JSON)")
    if args.replicates < 1 or args.threads < 1:
        raise ValueError("--replicates and --threads must be >= 1")
    load_scenario(args.config, args.seed)  # fail fast on config errors
    if args.replicates == 1:
        print(_run_one(args.config, args.seed, args.out_dir))
        return
    jobs = [(args.config, args.seed + k, args.out_dir / f"seed_{args.seed + k}") for k in range(args.replicates)]
    if args.threads == 1:
        for job in jobs:
            print(_run_one(*job), flush=True)
        return
    with ProcessPoolExecutor(max_workers=args.threads) as pool:
        for msg in pool.map(_run_one, *zip(*jobs)):
            print(msg, flush=True)


def cmd_report(args) -> None:
    series = read_populations(args.populations)
    man_path = args.populations.parent / "manifest.json"
    if man_path.is_file():
        series.markers = RunManifest.read(man_path).markers
    out = args.output or args.out_dir / "populations.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_chart(series, out, args.title)
    print(f"wrote {out}")


COMMANDS = {
    "gen-terrain": cmd_gen_terrain,
    "place-vegetation": cmd_place_vegetation,
    "train": cmd_train,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"ecosim: config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, TypeError, json.JSONDecodeError) as exc:
        print(f"ecosim: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
