"""Command-line entry point: ``ldpstream run|grid|mismatch|bench``."""
import argparse
import logging
import sys

from .experiment import (ExperimentConfig, load_config, mismatch_matrix, run_grid,
                         run_single, write_matrix_csv, write_metrics_csv, write_run_traces)


def _common(p):
    p.add_argument("--config", help="INI file with [experiment], [defense] and [grid] sections")
    p.add_argument("--out", help="output CSV path (stdout when omitted)")
    p.add_argument("--seeds", help="comma-separated seeds, or a count N meaning 0..N-1")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--protocol")
    p.add_argument("--attack", help="IUA, OUA, ISA, OSA, IAA, OAA or none")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--w", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--target")
    p.add_argument("--defense", choices=("on", "off"))
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=int)
    p.add_argument("--task", choices=("frequency", "mean"))
    p.add_argument("--knowledge", choices=("full", "partial", "mitm"))
    p.add_argument("--deterministic", action="store_true", help="write wall_ms as 0")


def _seeds(raw):
    if "," in raw:
        return tuple(int(x) for x in raw.split(",") if x)
    return tuple(range(int(raw)))


def build_config(args):
    config, axes = load_config(args.config) if args.config else (ExperimentConfig(), {})
    overrides = {}
    for key in ("protocol", "attack", "epsilon", "w", "beta", "target", "n", "T", "task",
                "knowledge"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.defense is not None:
        overrides["defense"] = args.defense == "on"
    if args.seeds is not None:
        overrides["seeds"] = _seeds(args.seeds)
    return config.replace(**overrides), axes


def _emit(args, records):
    if args.out:
        write_metrics_csv(args.out, records)
    else:
        write_metrics_csv(sys.stdout, records)


def cmd_run(args):
    config, _ = build_config(args)
    records = []
    for seed in config.seeds:
        result = run_single(config, seed, 0, args.deterministic)
        records.append(result.record)
        if args.out and args.traces:
            write_run_traces(f"{args.out.rsplit('.', 1)[0]}.seed{seed}", result)
    _emit(args, records)


def cmd_grid(args):
    config, axes = build_config(args)
    records, agg = run_grid(config, axes, args.threads, args.deterministic)
    _emit(args, records + agg)


def cmd_mismatch(args):
    config, _ = build_config(args)
    protocols = args.protocols.split(",")
    rows, _ = mismatch_matrix(protocols, protocols, config, args.threads, args.deterministic)
    if args.out:
        write_matrix_csv(args.out, rows)
    else:
        for r in rows:
            print(f"{r['protocol']},{r['attack_model']},{r['mse_attack']!r},{r['matched']}")


def cmd_bench(args):
    from ..bench import run_benchmark
    run_benchmark(repeats=args.repeats)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="ldpstream")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="simulate one configuration over its seeds")
    _common(p)
    p.add_argument("--traces", action="store_true", help="also write per-seed trace CSVs")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("grid", help="sweep the [grid] section of the config")
    _common(p)
    p.set_defaults(func=cmd_grid)
    p = sub.add_parser("mismatch", help="attacks tuned for one protocol run against another")
    _common(p)
    p.add_argument("--protocols", default="LBD,LBA,LPD,LPA")
    p.set_defaults(func=cmd_mismatch)
    p = sub.add_parser("bench", help="compare compiled and pure-Python kernels")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
