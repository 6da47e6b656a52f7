"""``augcl`` command line: pretrain, eval, inspect, sweep, gen-synth.

Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from augcl import pipeline as P
from augcl.config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    from_dict,
    load_config,
    parse_override,
    to_dict,
)
from augcl.encoder import EncoderParams
from augcl.graphs import SyntheticSpec, gen_synthetic, write_tu_dataset
from augcl.losses import column_map
from augcl.numerics import checkpoint

log = logging.getLogger("augcl")

SWEEP_KEYS = {"reward": "gambler.reward", "alpha": "mining.delta_coef", "estimator": "mining.estimator"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", required=config_required, help="INI config or a report JSON to re-run")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted override, e.g. gambler.reward=1.6 (repeatable)")
    p.add_argument("--data-dir", help="dataset root (default: $AUGCL_DATA_DIR or ./data)")
    p.add_argument("--out", default="runs", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="augcl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("pretrain", help="train an encoder and probe it")
    _common(p)

    p = sub.add_parser("eval", help="probe a saved encoder checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("inspect", help="run the mining phase on a checkpoint and dump U/W")
    _common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("sweep", help="one run per value of a hyperparameter")
    _common(p)
    p.add_argument("--param", required=True, help="reward, alpha (delta coefficient), estimator, or a dotted key")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--parallel", type=int, default=1, help="concurrent runs")

    p = sub.add_parser("gen-synth", help="write a planted-partition dataset in TU format")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="generator field, e.g. graphs_per_class=20")
    p.add_argument("--name", default="SYNTH")
    p.add_argument("--out", required=True)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = dict(parse_override(o) for o in args.overrides)
    if args.data_dir:
        overrides["dataset.root"] = args.data_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        return apply_overrides(cfg, overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _load_params(path: str, cfg: ExperimentConfig) -> EncoderParams:
    return EncoderParams.from_tensors(checkpoint.load(path), cfg.encoder.readout)


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    report = P.run_experiment(cfg)
    path = report.write(args.out)
    print(f"accuracy {report.probe['mean']:.4f} +- {report.probe['std']:.4f}  report {path}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    data = P.load_dataset(cfg)
    params = _load_params(args.checkpoint, cfg)
    emb, labels = P.embed_all(params, data)
    probe = P.linear_probe_eval(emb, labels, cfg.probe, cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {"checkpoint": str(args.checkpoint), "config": to_dict(cfg), "probe": probe, "seed": cfg.seed}
    (out / "eval.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    print(f"accuracy {probe['mean']:.4f} +- {probe['std']:.4f}")
    return 0


def write_uw_csv(path: Path, U: np.ndarray, W: np.ndarray, batch_idx: np.ndarray | None = None) -> None:
    n = U.shape[0]
    cols = column_map(n)
    ids = np.arange(n) if batch_idx is None else np.asarray(batch_idx)
    with open(path, "w") as fh:
        fh.write("anchor,candidate,u,w\n")
        for i in range(n):
            for c in range(n - 1):
                fh.write(f"{ids[i]},{ids[cols[i, c]]},{U[i, c]:.9g},{W[i, c]:.9g}\n")


def cmd_inspect(args) -> int:
    cfg = resolve_config(args)
    data = P.load_dataset(cfg)
    params = _load_params(args.checkpoint, cfg)
    bsz = cfg.train.resolve_batch_size(len(data))
    batches = P.epoch_batches(len(data), bsz, cfg.seed, cfg.train.switch_epoch)
    cache = P.mine_phase(params, data, batches, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    live = [b for b in range(len(batches)) if b not in cache.outcome.degenerate_batches]
    for k, b in enumerate(live):
        write_uw_csv(out / f"batch_{b:03d}.csv", cache.outcome.uncertainties[k].values, cache.weights[b].values, batches[b])
    summary = cache.summary(data.labels)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    for k, v in summary.items():
        print(f"{k}: {v}")
    return 0


def _sweep_one(job) -> str:
    cfg_dict, out = job
    report = P.run_experiment(from_dict(cfg_dict))
    return str(report.write(out))


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    key = SWEEP_KEYS.get(args.param, args.param)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise UsageError("sweep needs at least one value")
    jobs = []
    for v in values:
        try:
            run_cfg = apply_overrides(cfg, {key: v})
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
        jobs.append((to_dict(run_cfg), str(Path(args.out) / f"{args.param}_{v}")))
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as ex:
            paths = list(ex.map(_sweep_one, jobs))
    else:
        paths = [_sweep_one(j) for j in jobs]
    for p in paths:
        print(p)
    return 0


def cmd_gen_synth(args) -> int:
    fields = {}
    for o in args.overrides:
        k, v = parse_override(o)
        fields[k.removeprefix("dataset.")] = v
    defaults = SyntheticSpec()
    try:
        spec = SyntheticSpec(**{k: type(getattr(defaults, k))(v) for k, v in fields.items()})
    except AttributeError as exc:
        raise UsageError(f"unknown generator field: {exc}") from None
    coll = gen_synthetic(spec, args.seed)
    write_tu_dataset(coll, Path(args.out), args.name)
    print(f"wrote {len(coll)} graphs to {Path(args.out) / args.name}_*.txt")
    return 0


COMMANDS = {
    "pretrain": cmd_pretrain,
    "eval": cmd_eval,
    "inspect": cmd_inspect,
    "sweep": cmd_sweep,
    "gen-synth": cmd_gen_synth,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("augcl: a command is required")
        if getattr(args, "overrides", None):
            for o in args.overrides:
                parse_override(o)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"augcl {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
