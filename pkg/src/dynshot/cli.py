"""Command-line entry point: ``dynshot <command> [flags]``.

Exit codes: 0 success, 1 verification failure, 2 usage, 3 data/IO, 4 numeric.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .assembly import bench_assembly
from .checkpoint import CheckpointError
from .data import DataError, SynthConfig, gen_synthetic, load_features, save_features, split_classes
from .metric import FArch
from .relational import GArch
from .trainer import (
    DYNAMIC_LABEL,
    NumericDivergenceError,
    TrainConfig,
    evaluate,
    grid_csv,
    grid_text,
    new_cache,
    row_label,
    run_grid,
    train,
)

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
MANIFEST = "manifest.txt"
PARAMS = "params.dynp"
HISTORY = "history.csv"

log = logging.getLogger("dynshot")


# manifests --------------------------------------------------------------

def write_manifest(path: Path, fields: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={_fmt(v)}" for k, v in fields.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return " ".join(str(x) for x in v)
    return str(v)


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split()]


def _versions() -> dict:
    return {"dynshot_version": __version__, "numpy_version": np.__version__,
            "python_version": platform.python_version()}


# arch flags -------------------------------------------------------------

def _add_arch_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--g-hidden", type=int, nargs="+", default=[64])
    p.add_argument("--embed-dim", type=int, default=32)
    p.add_argument("--f-hidden", type=int, nargs="+", default=[64])
    p.add_argument("--activation", choices=["relu", "tanh"], default="relu")
    p.add_argument("--no-symmetrize", action="store_true",
                   help="use g(c_i, c_j) for i<j only instead of averaging both orders")


def _arch_from_args(args):
    return (GArch(args.g_hidden, args.embed_dim, args.activation, not args.no_symmetrize),
            FArch(args.f_hidden, args.activation))


def _arch_fields(arch_g: GArch, arch_f: FArch) -> dict:
    return {"g_hidden": arch_g.hidden_sizes, "g_embed_dim": arch_g.embed_dim,
            "g_activation": arch_g.activation, "g_symmetrize": int(arch_g.symmetrize),
            "f_hidden": arch_f.hidden_sizes, "f_activation": arch_f.activation}


def _arch_from_manifest(m: dict):
    return (GArch(_ints(m["g_hidden"]), int(m["g_embed_dim"]), m["g_activation"],
                  m["g_symmetrize"] == "1"),
            FArch(_ints(m["f_hidden"]), m["f_activation"]))


# commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = SynthConfig(args.classes, args.per_class, args.dim, args.center_scale,
                      args.noise_scale, args.seed)
    ds = gen_synthetic(cfg)
    if args.heldout_fraction > 0:
        ds = split_classes(ds, args.heldout_fraction, args.seed)
    save_features(ds, args.out)
    print(f"wrote {sum(len(x) for x in ds.classes.values())} rows to {args.out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    if args.fixed_shot is not None:
        shot = (args.fixed_shot, args.fixed_shot)
    else:
        shot = tuple(args.shot_range)
    return TrainConfig(args.alpha, args.mu, args.batch_size, args.momentum, shot,
                       args.steps, args.seed)


def cmd_train(args) -> int:
    if args.manifest:
        m = read_manifest(args.manifest)
        data = m["data"]
        lo, hi = _ints(m["shot_range"])
        cfg = TrainConfig(float(m["alpha"]), float(m["mu"]), int(m["batch_size"]),
                          m["momentum"], (lo, hi), int(m["steps"]), int(m["seed"]))
        arch_g, arch_f = _arch_from_manifest(m)
        out_dir = Path(args.out_dir or m["out_dir"])
    else:
        if not args.data or not args.out_dir:
            raise UsageError("train needs --data and --out-dir (or --manifest)")
        data, cfg = args.data, _train_config(args)
        arch_g, arch_f = _arch_from_args(args)
        out_dir = Path(args.out_dir)
    fields = {"command": "train", "data": data, "shot_range": cfg.shot_range,
              "steps": cfg.steps, "batch_size": cfg.batch_size, "alpha": repr(cfg.alpha),
              "mu": repr(cfg.mu), "momentum": cfg.momentum_kind, "seed": cfg.seed,
              **_arch_fields(arch_g, arch_f), "out_dir": out_dir,
              "checkpoint": out_dir / PARAMS, "history": out_dir / HISTORY, **_versions()}
    write_manifest(out_dir / MANIFEST, fields)
    ds = load_features(data)
    cache = new_cache(ds.s_v, cfg.seed, arch_g, arch_f)
    history = train(cache, ds, cfg)
    checkpoint.save(cache.registry.state(), out_dir / PARAMS)
    (out_dir / HISTORY).write_text(history.to_csv(), encoding="utf-8")
    tail = history.losses[-50:]
    print(f"trained {history.steps} steps; final mean loss {np.mean(tail) if tail else float('nan'):.4f}")
    return EXIT_OK


def _load_run(run_dir: Path, s_v: int):
    m = read_manifest(run_dir / MANIFEST)
    arch_g, arch_f = _arch_from_manifest(m)
    cache = new_cache(s_v, 0, arch_g, arch_f)
    lo, hi = _ints(m["shot_range"])
    cache.get_or_assemble(lo)
    cache.registry.load_state(checkpoint.load(run_dir / PARAMS))
    return cache, (lo if lo == hi else None)


def cmd_report(args) -> int:
    ds = load_features(args.data)
    rows: dict[str | int | None, list] = {}
    for run in args.run:
        run_dir = Path(run)
        if not (run_dir / PARAMS).exists():
            raise DataError(f"missing checkpoint {run_dir / PARAMS}")
        cache, train_size = _load_run(run_dir, ds.s_v)
        accs = [evaluate(cache, ds, n, args.episodes, np.random.default_rng(args.seed), args.split)
                for n in args.eval_sizes]
        rows.setdefault(train_size, []).append(accs)
    order = sorted((k for k in rows if k is not None)) + ([None] if None in rows else [])
    mean = [np.mean(rows[k], axis=0) for k in order]
    sd = [np.std(rows[k], axis=0, ddof=1) if len(rows[k]) > 1 else np.zeros(len(args.eval_sizes))
          for k in order]
    text = grid_text([row_label(k) for k in order], args.eval_sizes, mean, sd)
    csv_text = grid_csv(order, args.eval_sizes, mean, sd)
    print(text, end="")
    if args.out_csv:
        Path(args.out_csv).write_text(csv_text, encoding="utf-8")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(args.only, args.breakage)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<10} {r.seconds:7.2f}s  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_bench_assembly(args) -> int:
    arch_g, arch_f = _arch_from_args(args)
    rows = bench_assembly(range(args.min_n, args.max_n + 1), args.dim, arch_g, arch_f)
    lines = ["n,g_instances,node_count,param_count,assemble_micros"]
    lines += [f"{r['n']},{r['g_instances']},{r['node_count']},{r['param_count']},"
              f"{r['assemble_micros']}" for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_grid(args) -> int:
    arch_g, arch_f = _arch_from_args(args)
    cfg = TrainConfig(args.alpha, args.mu, args.batch_size, args.momentum,
                      (min(args.train_sizes), max(args.train_sizes)), args.steps, 0)
    out_dir = Path(args.out_dir)
    write_manifest(out_dir / MANIFEST, {
        "command": "grid", "data": args.data, "train_sizes": args.train_sizes,
        "eval_sizes": args.eval_sizes, "seeds": args.seeds, "steps": cfg.steps,
        "batch_size": cfg.batch_size, "alpha": repr(cfg.alpha), "mu": repr(cfg.mu),
        "momentum": cfg.momentum_kind, "episodes": args.episodes,
        **_arch_fields(arch_g, arch_f), **_versions()})
    ds = load_features(args.data)

    def progress(seed, label, accs):
        log.info("seed %s %-16s %s", seed, label, np.round(accs, 4).tolist())

    grid = run_grid(ds, cfg, args.train_sizes, args.eval_sizes, args.seeds,
                    num_episodes=args.episodes, arch_g=arch_g, arch_f=arch_f, progress=progress)
    (out_dir / "grid.csv").write_text(grid.to_csv(), encoding="utf-8")
    (out_dir / "grid.txt").write_text(grid.to_text(), encoding="utf-8")
    print(grid.to_text(), end="")
    avg, gap = grid.row_average(), grid.generalization_gap()
    for label, a, g in zip(grid.row_labels, avg, gap):
        print(f"{label:<16} mean over sizes {a:.4f}  train-heldout gap {g:+.4f}")
    return EXIT_OK


# parser -----------------------------------------------------------------

class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dynshot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic feature CSV")
    p.add_argument("--classes", type=int, default=28)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--center-scale", type=float, default=1.0)
    p.add_argument("--noise-scale", type=float, default=1.5)
    p.add_argument("--heldout-fraction", type=float, default=0.3,
                   help="fraction of classes tagged heldout; 0 tags every class train")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model and write checkpoint, history, manifest")
    p.add_argument("--data")
    shots = p.add_mutually_exclusive_group()
    shots.add_argument("--fixed-shot", type=int, metavar="K")
    shots.add_argument("--shot-range", type=int, nargs=2, metavar=("A", "B"), default=[2, 5])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--mu", type=float, default=0.9)
    p.add_argument("--momentum", choices=["classic", "nesterov"], default="classic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir")
    p.add_argument("--manifest", help="rerun exactly from a previous run's manifest.txt")
    _add_arch_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="accuracy grid for trained runs")
    p.add_argument("--data", required=True)
    p.add_argument("--run", action="append", required=True, metavar="DIR",
                   help="run directory from `train`; repeat for more rows or seeds")
    p.add_argument("--eval-sizes", type=int, nargs="+", default=[2, 3, 4, 5])
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--split", choices=["train", "heldout"], default="heldout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-csv")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="run the invariant suite")
    p.add_argument("--only", action="append", metavar="CHECK")
    p.add_argument("--break", dest="breakage", choices=["mean-to-sum"],
                   help="negative control: swap the class-embedding mean for a sum")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench-assembly", help="assembly census and timing per class size")
    p.add_argument("--min-n", type=int, default=2)
    p.add_argument("--max-n", type=int, default=12)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--out")
    _add_arch_flags(p)
    p.set_defaults(func=cmd_bench_assembly)

    p = sub.add_parser("grid", help="train fixed-size baselines and a dynamic model, then report")
    p.add_argument("--data", required=True)
    p.add_argument("--train-sizes", type=int, nargs="+", default=[2, 3, 4, 5])
    p.add_argument("--eval-sizes", type=int, nargs="+", default=[2, 3, 4, 5])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--mu", type=float, default=0.9)
    p.add_argument("--momentum", choices=["classic", "nesterov"], default="classic")
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--out-dir", required=True)
    _add_arch_flags(p)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dynshot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericDivergenceError as exc:
        print(f"dynshot: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError, KeyError) as exc:
        print(f"dynshot: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"dynshot: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
