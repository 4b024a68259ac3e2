"""Command-line entry point.

Commands: ``train``, ``eval``, ``sweep``, ``gradcheck``, ``params``,
``convert`` and ``gen-synth``. Runs are described by a flat config file of
``key = value`` lines (``#`` starts a comment); any key may also be given as a
flag, which wins over the file. Exit status is 0 on success, 1 on a runtime
failure and 2 on a usage error.

The data directory defaults to the ``data_dir`` key and can be overridden
with the ``SNN_DATA_DIR`` environment variable; relative dataset paths are
resolved against it.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import statistics
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import EventDataset, Events, SyntheticSpec, convert, gen_synthetic, load_dataset, write_interchange
from .network import Network, NetworkSpec, count_params, count_state_memory
from .training import TrainConfig, evaluate, fit, gradient_check

log = logging.getLogger("delaysnn")

DATA_DIR_ENV = "SNN_DATA_DIR"
GRADCHECK_TOL = 1e-4
SYNTH_WINDOW_US = 10_000


class UsageError(Exception):
    """Bad command line or config file; maps to exit status 2."""


@dataclass
class RunConfig:
    # network
    model: str = "adlif"
    h: int = 128
    l: int = 2
    nd: int = 5
    scheme: str = "uniform"
    trainable_asd: bool = False
    dropout: float = 0.4
    # optimisation
    lr: float = 1e-2
    weight_decay: float = 1e-5
    batch_size: int = 128
    epochs: int = 50
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    augment: bool = True
    mask_prob: float = 0.5
    mask_time_frac: float = 0.1
    mask_chan_frac: float = 0.1
    cutmix_prob: float = 0.5
    debug_checks: bool = False
    # data
    dataset: str = "shd"  # shd | file | synthetic
    data_dir: str = "."
    train_data: str = "shd_train.h5"
    test_data: str = "shd_test.h5"
    bin_factor: int = 5
    window_us: int = 10_000
    t_max: int = 100
    synth_channels: int = 4
    synth_seq_len: int = 40
    synth_lags: list[int] = field(default_factory=lambda: [2, 6])
    synth_noise: float = 0.03
    synth_probe: int = 1
    synth_train: int = 1024
    synth_test: int = 256
    # sweep grid (comma lists)
    sweep_models: list[str] = field(default_factory=lambda: ["lif", "adlif"])
    sweep_nd: list[int] = field(default_factory=lambda: [0, 5, 10])
    sweep_schemes: list[str] = field(default_factory=lambda: ["uniform"])
    sweep_h: list[int] = field(default_factory=lambda: [128])
    # output
    out: str = "reports"

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            base_lr=self.lr, weight_decay=self.weight_decay, dropout=self.dropout,
            batch_size=self.batch_size, epochs=self.epochs, seed=seed, augment=self.augment,
            mask_prob=self.mask_prob, mask_time_frac=self.mask_time_frac,
            mask_chan_frac=self.mask_chan_frac, cutmix_prob=self.cutmix_prob,
            debug_checks=self.debug_checks,
        )

    def network_spec(self, c_in: int, c_out: int, model=None, h=None, nd=None, scheme=None) -> NetworkSpec:
        return NetworkSpec.stack(
            model or self.model, h or self.h, self.l, self.nd if nd is None else nd,
            scheme or self.scheme, self.trainable_asd, c_in, c_out, dropout_rate=self.dropout,
        )


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(name: str, text: str):
    kind = _FIELDS[name].type
    text = text.strip()
    if kind == "bool":
        return _parse_bool(text)
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    if kind.startswith("list["):
        item = int if kind == "list[int]" else str
        return [item(x.strip()) for x in text.split(",") if x.strip()]
    return text


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse flat ``key = value`` text into a :class:`RunConfig`."""
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _convert(key, value))
        except ValueError as exc:
            raise UsageError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    for name in _FIELDS:
        p.add_argument("--" + name.replace("_", "-"), dest="cfg_" + name, metavar="VALUE", default=None)


def load_run_config(args) -> RunConfig:
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cfg = parse_config(path.read_text(), str(path))
    else:
        cfg = RunConfig()
    for name in _FIELDS:
        value = getattr(args, "cfg_" + name, None)
        if value is not None:
            try:
                setattr(cfg, name, _convert(name, value))
            except ValueError as exc:
                raise UsageError(f"--{name.replace('_', '-')}: {exc}") from None
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        cfg.data_dir = env
    return cfg


# -- data --------------------------------------------------------------------

def _resolve(cfg: RunConfig, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(cfg.data_dir) / p


def load_data(cfg: RunConfig):
    """Return ((train_x, train_y), (test_x, test_y), n_channels, n_classes)."""
    if cfg.dataset == "synthetic":
        mk = lambda n, seed: gen_synthetic(SyntheticSpec(
            n_classes=len(cfg.synth_lags), channels=cfg.synth_channels, seq_len=cfg.synth_seq_len,
            lags=tuple(cfg.synth_lags), noise_rate=cfg.synth_noise, n_samples=n,
            probe_channel=cfg.synth_probe, seed=seed))
        train, test = mk(cfg.synth_train, 1000), mk(cfg.synth_test, 2000)
        return (train.frames, train.labels), (test.frames, test.labels), cfg.synth_channels, len(cfg.synth_lags)
    if cfg.dataset not in ("shd", "file"):
        raise UsageError(f"unknown dataset kind {cfg.dataset!r}")
    splits = ("train", "test") if cfg.dataset == "shd" else (None, None)
    out = []
    for path, split in zip((cfg.train_data, cfg.test_data), splits):
        full = _resolve(cfg, path)
        if not full.is_file():
            raise FileNotFoundError(f"dataset file not found: {full} (set {DATA_DIR_ENV} or data_dir)")
        out.append(load_dataset(full, split, cfg.bin_factor, cfg.window_us, cfg.t_max))
    train, test = out
    return (train.frames, train.labels), (test.frames, test.labels), train.meta.c_binned, train.meta.n_classes


# -- reports -----------------------------------------------------------------

CSV_COLUMNS = ["config_hash", "model", "h", "l", "n_d", "scheme", "trainable_asd", "seed", "test_acc",
               "train_acc", "train_loss", "params_total", "params_delay", "state_memory",
               "epoch_seconds", "wall_seconds"]


def _run_cell(cfg: RunConfig, data, model, h, nd, scheme, out_dir: Path) -> list[dict]:
    train, test, c_in, c_out = data
    spec = cfg.network_spec(c_in, c_out, model, h, nd, scheme)
    pc = count_params(spec)
    rows = []
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        net = Network(spec, seed)
        tag = f"{model}_h{h}_nd{nd}_{scheme}_s{seed}"
        hist = fit(net, train, test, cfg.train_config(seed), metrics_path=out_dir / f"{tag}.jsonl")
        net.save(out_dir / f"{tag}.npz")
        last = hist[-1]
        rows.append({
            "config_hash": cfg.digest(), "model": model, "h": h, "l": cfg.l, "n_d": nd, "scheme": scheme,
            "trainable_asd": cfg.trainable_asd, "seed": seed, "test_acc": last["test_acc"],
            "train_acc": last["train_acc"], "train_loss": last["train_loss"], "params_total": pc.total,
            "params_delay": pc.delay, "state_memory": count_state_memory(spec),
            "epoch_seconds": float(np.mean([r["seconds"] for r in hist])),
            "wall_seconds": time.perf_counter() - t0,
        })
        log.info("%s: test accuracy %.4f", tag, last["test_acc"])
    return rows


def summarise(rows: list[dict]) -> list[dict]:
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault((r["model"], r["h"], r["n_d"], r["scheme"]), []).append(r)
    out = []
    for (model, h, nd, scheme), rs in cells.items():
        accs = [r["test_acc"] for r in rs]
        out.append({
            "model": model, "h": h, "n_d": nd, "scheme": scheme, "n_seeds": len(accs),
            "test_acc_mean": statistics.fmean(accs),
            "test_acc_std": statistics.stdev(accs) if len(accs) > 1 else 0.0,
            "params_total": rs[0]["params_total"], "params_delay": rs[0]["params_delay"],
            "state_memory": rs[0]["state_memory"],
            "epoch_seconds_mean": statistics.fmean(r["epoch_seconds"] for r in rs),
            "wall_seconds": sum(r["wall_seconds"] for r in rs),
        })
    return out


def write_report(cfg: RunConfig, rows: list[dict], out_dir: Path, name: str) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{name}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    summary = {"config_hash": cfg.digest(), "config": cfg.as_dict(), "cells": summarise(rows)}
    (out_dir / f"{name}.json").write_text(json.dumps(summary, indent=2))
    return summary


# -- commands ----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_run_config(args)
    data = load_data(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _run_cell(cfg, data, cfg.model, cfg.h, cfg.nd, cfg.scheme, out_dir)
    summary = write_report(cfg, rows, out_dir, "train")
    for cell in summary["cells"]:
        print(f"{cell['model']} h={cell['h']} n_d={cell['n_d']} {cell['scheme']}: "
              f"{100 * cell['test_acc_mean']:.1f} +/- {100 * cell['test_acc_std']:.1f} % "
              f"over {cell['n_seeds']} seeds")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_run_config(args)
    data = load_data(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for model, nd, scheme, h in itertools.product(cfg.sweep_models, cfg.sweep_nd, cfg.sweep_schemes, cfg.sweep_h):
        rows += _run_cell(cfg, data, model, h, nd, scheme, out_dir)
    summary = write_report(cfg, rows, out_dir, "sweep")
    for cell in summary["cells"]:
        print(json.dumps(cell))
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args)
    net = Network.load(args.checkpoint)
    _, (x, y), _, _ = load_data(cfg)
    if x.shape[2] != net.spec.c_in:
        raise ValueError(f"checkpoint expects {net.spec.c_in} channels, data has {x.shape[2]}")
    res = evaluate(net, x, y)
    print(json.dumps({"accuracy": res["accuracy"], "loss": res["loss"], "n": int(len(y))}))
    return 0


def cmd_gradcheck(args) -> int:
    spec = NetworkSpec.stack(args.model, args.h, args.l, args.nd, args.scheme, not args.frozen_asd,
                             args.cin, args.cout)
    errors = gradient_check(spec, batch=args.batch, T=args.T, seed=args.seed)
    worst = max(errors, key=errors.get)
    for name, err in errors.items():
        print(f"{name:24s} {err:.3e}")
    ok = errors[worst] <= GRADCHECK_TOL
    print(f"max relative error {errors[worst]:.3e} ({worst}) {'PASS' if ok else 'FAIL'} at tolerance {GRADCHECK_TOL:g}")
    return 0 if ok else 1


def cmd_params(args) -> int:
    spec = NetworkSpec.stack(args.model, args.h, args.l, args.nd, "uniform", args.train_asd, args.cin, args.cout)
    pc = count_params(spec)
    for k, v in pc.as_dict().items():
        print(f"{k}={v}")
    print(f"state_memory={count_state_memory(spec)}")
    return 0


def cmd_convert(args) -> int:
    data = convert(args.inp, args.out)
    print(f"wrote {len(data.samples)} samples ({data.c_raw} channels, {data.n_classes} classes) to {args.out}")
    return 0


def frames_to_events(frames: np.ndarray, window_us: int = SYNTH_WINDOW_US) -> Events:
    """Expand a count frame tensor [T, C] into events at the start of each window."""
    t, c = np.nonzero(frames)
    reps = frames[t, c].astype(np.int64)
    return Events(np.repeat(t * window_us, reps), np.repeat(c, reps))


def cmd_gen_synth(args) -> int:
    spec = SyntheticSpec(n_classes=len(args.lags), channels=args.channels, seq_len=args.seq_len,
                         lags=tuple(args.lags), noise_rate=args.noise, n_samples=args.n,
                         probe_channel=args.probe, seed=args.seed)
    ds = gen_synthetic(spec)
    data = EventDataset([frames_to_events(f) for f in ds.frames], ds.labels, spec.channels, spec.n_classes)
    write_interchange(args.out, data)
    print(f"wrote {spec.n_samples} samples to {args.out} "
          f"(load with bin_factor = 1, window_us = {SYNTH_WINDOW_US}, t_max = {spec.seq_len})")
    return 0


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaysnn", description="Delay-augmented spiking network toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    for name, fn, text in (("train", cmd_train, "train one configuration over the seed list"),
                           ("sweep", cmd_sweep, "train every cell of the sweep grid")):
        p = sub.add_parser(name, help=text)
        _add_config_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the configured test data")
    p.add_argument("--checkpoint", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="BPTT versus finite differences on the relaxed model")
    p.add_argument("--model", default="adlif")
    p.add_argument("--h", type=int, default=4)
    p.add_argument("--l", type=int, default=2)
    p.add_argument("--T", type=int, default=10)
    p.add_argument("--nd", type=int, default=3)
    p.add_argument("--scheme", default="uniform")
    p.add_argument("--frozen-asd", action="store_true")
    p.add_argument("--cin", type=int, default=3)
    p.add_argument("--cout", type=int, default=3)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="closed-form parameter and state-memory counts")
    p.add_argument("--model", default="adlif")
    p.add_argument("--h", type=int, default=128)
    p.add_argument("--l", type=int, default=2)
    p.add_argument("--cin", type=int, default=140)
    p.add_argument("--cout", type=int, default=20)
    p.add_argument("--nd", type=int, default=0)
    p.add_argument("--train-asd", action="store_true")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("convert", help="HDF5 event file to the flat interchange format")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("gen-synth", help="write a synthetic delayed-pattern dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--seq-len", type=int, default=40)
    p.add_argument("--lags", type=_int_list, default=[2, 6])
    p.add_argument("--noise", type=float, default=0.03)
    p.add_argument("--probe", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and map to exit 1
        log.debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
