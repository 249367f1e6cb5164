"""Command-line entry point: ``flagfed {synth,partition,analyze,train,sweep}``.

Experiment settings come from a flat JSON config (``--config``) with every
key optional; command-line flags override it. Keys match the fields of
:class:`ExperimentConfig`.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

from . import partition
from .data import SynthSpec, generate_synthetic, load_dataset, save_dataset
from .errors import ConfigurationError, FlagFedError
from .federate import KINDS, AggregationStrategy, run_federation
from .metrics import convergence
from .model import AslConfig, TrainConfig, save_params

log = logging.getLogger("flagfed")

DEFAULT_ALPHAS = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset directory holding train.jsonl and val.jsonl; None means synthesize inline
    data: str | None = None
    samples: int = 20000
    val_samples: int | None = None
    labels: int = 40
    features: int = 64
    themes: int = 10
    overlap: float = 0.1
    density: int = 3
    noise: float = 0.3

    clients: int = 10
    partitioner: str = "cmda"
    strategy: str = "flag"
    alpha: float = 0.3
    rounds: int = 10
    local_epochs: int = 4
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    hidden: int | None = None
    gamma_pos: float = 0.0
    gamma_neg: float = 4.0
    margin: float = 0.05
    asl_eps: float = 1e-8
    target_fraction: float = 0.8
    centralized: str | None = None
    seed: int = 0
    out: str = "out"

    def validate(self):
        if self.partitioner not in partition.PARTITIONERS:
            raise ConfigurationError(f"unknown partitioner {self.partitioner!r}")
        if self.strategy not in KINDS:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}")
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {self.rounds}")
        if self.clients < 2:
            raise ConfigurationError(f"clients must be >= 2, got {self.clients}")
        if not 0 < self.target_fraction <= 1:
            raise ConfigurationError(f"target_fraction must lie in (0, 1], got {self.target_fraction}")
        if self.data is not None and not Path(self.data).exists():
            raise ConfigurationError(f"dataset path {self.data} does not exist")
        self.synth_spec().validate()
        self.train_config()
        self.asl_config()
        self.aggregation()

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(self.samples, self.labels, self.features, self.themes, self.overlap,
                         self.density, self.noise, self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.learning_rate, self.weight_decay, self.local_epochs, self.seed)

    def asl_config(self) -> AslConfig:
        return AslConfig(self.gamma_pos, self.gamma_neg, self.margin, self.asl_eps)

    def aggregation(self) -> AggregationStrategy:
        if self.strategy == "flag":
            return AggregationStrategy.flag(self.alpha)
        return AggregationStrategy(self.strategy)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    for f in fields(ExperimentConfig):
        if f.name in raw and not _type_ok(raw[f.name], f.type):
            raise ConfigurationError(f"config key {f.name!r} must be {f.type}, got {raw[f.name]!r}")
    return ExperimentConfig(**raw)


_JSON_TYPES = {"int": (int,), "float": (int, float), "str": (str,)}


def _type_ok(value, annotation: str) -> bool:
    base, _, optional = annotation.partition(" | ")
    if value is None:
        return optional == "None"
    return isinstance(value, _JSON_TYPES[base]) and not isinstance(value, bool)


def synth_pair(cfg: ExperimentConfig):
    """Train and validation sets sharing label prototypes and themes."""
    spec = cfg.synth_spec()
    val_n = cfg.val_samples if cfg.val_samples is not None else max(1, cfg.samples // 4)
    train = generate_synthetic(spec, stream=0)
    val = generate_synthetic(replace(spec, n_samples=val_n), stream=1)
    return train, val


def load_pair(cfg: ExperimentConfig):
    if cfg.data is None:
        return synth_pair(cfg)
    root = Path(cfg.data)
    return load_dataset(root / "train.jsonl"), load_dataset(root / "val.jsonl")


def make_shards(cfg: ExperimentConfig, train, val):
    split = partition.PARTITIONERS[cfg.partitioner]
    return split(train, val, cfg.clients, seed=cfg.seed)


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def write_rounds_csv(path, log_records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "client_id", "map", "loss", "wall_seconds"])
        for rec in log_records:
            losses = rec.client_losses if len(rec.client_losses) == len(rec.per_client_map) else None
            for c, m in enumerate(rec.per_client_map):
                w.writerow([rec.round, c, _fmt(m), _fmt(losses[c] if losses else None), _fmt(rec.wall_seconds)])
            w.writerow([rec.round, "global", _fmt(rec.gmap), _fmt(rec.mean_train_loss), _fmt(rec.wall_seconds)])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def run_experiment(cfg: ExperimentConfig, shards=None, baseline=None) -> dict:
    """Train one configuration and write its outputs under ``cfg.out``.

    ``baseline`` is the centralized mAP for the convergence target; when
    absent it is read from ``cfg.centralized`` or ``<out>/centralized.json``,
    or computed by a same-budget centralized run.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if shards is None:
        train, val = load_pair(cfg)
        shards = make_shards(cfg, train, val)
    strategy = cfg.aggregation()
    ckpt = out / "checkpoints"

    def on_round(state, record):
        if state.has_global:
            save_params(state.global_params, ckpt / f"round_{record.round}.params")

    _, records = run_federation(shards, strategy, cfg.rounds, cfg.train_config(), cfg.asl_config(),
                                seed=cfg.seed, hidden=cfg.hidden, on_round=on_round)
    write_rounds_csv(out / "rounds.csv", records)

    if strategy.kind == "central":
        baseline = records[-1].gmap
        _write_json(out / "centralized.json", {"centralized_map": baseline, "rounds": cfg.rounds,
                                               "local_epochs": cfg.local_epochs, "seed": cfg.seed})
    elif baseline is None:
        baseline = centralized_baseline(cfg, shards)

    conv = convergence(records, cfg.target_fraction, baseline, cfg.local_epochs)
    _write_json(out / "convergence.json", conv.to_json())
    last = records[-1]
    return {"amap": last.amap, "wmap": last.wmap, "gmap": last.gmap, "convergence": conv, "records": records}


def centralized_baseline(cfg: ExperimentConfig, shards) -> float:
    candidates = [Path(cfg.centralized)] if cfg.centralized else [Path(cfg.out) / "centralized.json"]
    for path in candidates:
        if path.exists():
            try:
                return float(json.loads(path.read_text())["centralized_map"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigurationError(f"bad centralized baseline file {path}: {exc}") from None
        if cfg.centralized:
            raise ConfigurationError(f"centralized baseline file {path} does not exist")
    log.info("no centralized baseline found; running a same-budget centralized reference")
    central_cfg = replace(cfg, strategy="central", out=str(Path(cfg.out) / "centralized"))
    result = run_experiment(central_cfg, shards=shards)
    baseline = result["gmap"]
    _write_json(Path(cfg.out) / "centralized.json", {"centralized_map": baseline, "rounds": cfg.rounds,
                                                     "local_epochs": cfg.local_epochs, "seed": cfg.seed})
    return baseline


def cmd_synth(cfg: ExperimentConfig):
    cfg.synth_spec().validate()
    train, val = synth_pair(cfg)
    out = Path(cfg.out)
    save_dataset(train, out / "train.jsonl")
    save_dataset(val, out / "val.jsonl")
    print(f"wrote {train.n_samples} train and {val.n_samples} val rows to {out}")


def _write_report(shards, out, method):
    report = partition.heterogeneity_report(shards)
    report.write(out, method)
    print(f"{method}: total_kl={report.total_kl:.6g} sizes={report.client_sizes.tolist()}")
    return report


def cmd_partition(cfg: ExperimentConfig):
    cfg.validate()
    train, val = load_pair(cfg)
    shards = make_shards(cfg, train, val)
    out = Path(cfg.out)
    for shard in shards:
        d = out / f"client_{shard.client_id:02d}"
        save_dataset(shard.train, d / "train.jsonl")
        save_dataset(shard.val, d / "val.jsonl")
    _write_report(shards, out, cfg.partitioner)


def load_shards(root):
    dirs = sorted(p for p in Path(root).iterdir() if p.is_dir() and p.name.startswith("client_"))
    if len(dirs) < 2:
        raise ConfigurationError(f"{root} holds fewer than 2 client_* directories")
    return [partition.ClientShard(i, load_dataset(d / "train.jsonl"), load_dataset(d / "val.jsonl"))
            for i, d in enumerate(dirs)]


def cmd_analyze(cfg: ExperimentConfig, shards_dir=None):
    if shards_dir is not None:
        shards = load_shards(shards_dir)
        method = cfg.partitioner
        meta = Path(shards_dir) / "summary.json"
        if meta.exists():
            method = json.loads(meta.read_text()).get("method", method)
    else:
        cfg.validate()
        shards = make_shards(cfg, *load_pair(cfg))
        method = cfg.partitioner
    _write_report(shards, Path(cfg.out), method)


def cmd_train(cfg: ExperimentConfig):
    result = run_experiment(cfg)
    conv = result["convergence"]
    for rec in result["records"]:
        gmap = "n/a" if rec.gmap is None else f"{rec.gmap:.4f}"
        print(f"round {rec.round:3d}  AmAP={rec.amap:.4f}  WmAP={rec.wmap:.4f}  GmAP={gmap}  "
              f"loss={rec.mean_train_loss:.5f}")
    print(f"target mAP {conv.target_map:.4f}: rounds_to_target={conv.rounds_to_target} "
          f"epochs_to_target={conv.epochs_to_target} best={conv.best_map:.4f}@{conv.best_round}")
    return result


def cmd_sweep(cfg: ExperimentConfig, alphas):
    alphas = sorted(float(a) for a in alphas)
    if any(not 0 <= a <= 1 for a in alphas):
        raise ConfigurationError("alphas must lie in [0, 1]")
    cfg = replace(cfg, strategy="flag")
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    shards = make_shards(cfg, *load_pair(cfg))
    baseline = centralized_baseline(cfg, shards)
    rows = []
    for a in alphas:
        res = run_experiment(replace(cfg, alpha=a, out=str(out / f"alpha_{a:.2f}")), shards=shards,
                             baseline=baseline)
        rows.append((a, res["amap"], res["gmap"]))
        print(f"alpha={a:.2f}  AmAP={res['amap']:.4f}  GmAP={res['gmap']:.4f}")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "amap", "gmap"])
        for a, amap, gmap in rows:
            w.writerow([repr(a), repr(amap), repr(gmap)])
    return rows


FLAG_TO_FIELD = {
    "seed": "seed", "out": "out", "clients": "clients", "partitioner": "partitioner", "strategy": "strategy",
    "alpha": "alpha", "rounds": "rounds", "local_epochs": "local_epochs", "data": "data",
    "samples": "samples", "val_samples": "val_samples", "labels": "labels", "features": "features",
    "themes": "themes", "overlap": "overlap", "density": "density", "noise": "noise", "lr": "learning_rate",
    "batch_size": "batch_size", "weight_decay": "weight_decay", "hidden": "hidden",
    "target_fraction": "target_fraction", "centralized": "centralized",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="directory with train.jsonl and val.jsonl (default: synthesize)")
    data.add_argument("--samples", type=int)
    data.add_argument("--val-samples", type=int)
    data.add_argument("--labels", type=int)
    data.add_argument("--features", type=int)
    data.add_argument("--themes", type=int)
    data.add_argument("--overlap", type=float)
    data.add_argument("--density", type=int)
    data.add_argument("--noise", type=float)

    split = argparse.ArgumentParser(add_help=False)
    split.add_argument("--clients", type=int)
    split.add_argument("--partitioner", choices=sorted(partition.PARTITIONERS))

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--strategy", choices=sorted(KINDS))
    train.add_argument("--alpha", type=float)
    train.add_argument("--rounds", type=int)
    train.add_argument("--local-epochs", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--weight-decay", type=float)
    train.add_argument("--hidden", type=int)
    train.add_argument("--target-fraction", type=float)
    train.add_argument("--centralized", help="centralized.json providing the convergence baseline")

    parser = argparse.ArgumentParser(prog="flagfed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common, data], help="write a synthetic train/val dataset pair")
    sub.add_parser("partition", parents=[common, data, split], help="split a dataset into client shards")
    p = sub.add_parser("analyze", parents=[common, data, split], help="heterogeneity report for a split")
    p.add_argument("--shards", help="directory written by `partition` (default: split on the fly)")
    sub.add_parser("train", parents=[common, data, split, train], help="run one federated experiment")
    p = sub.add_parser("sweep", parents=[common, data, split, train], help="FLAG alpha sweep")
    p.add_argument("--alphas", type=float, nargs="+", default=list(DEFAULT_ALPHAS))
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for flag, name in FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[name] = value
    return replace(cfg, **overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "partition":
            cmd_partition(cfg)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.shards)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.alphas)
    except FlagFedError as exc:
        print(f"flagfed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"flagfed: I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
