"""Command-line entry point.

    camboost gen      out=runs/data seed=7
    camboost train    dataset=runs/data/train.bin out=runs/an --boost-infer
    camboost eval     checkpoint=runs/an/model.ckpt dataset=runs/data/test.bin --boost-infer
    camboost explain  checkpoint=runs/full/model.ckpt checkpoint_b=runs/an/model.ckpt dataset=...
    camboost sweep    alphas=1,2,3,5,8,12 betas=0 out=runs/sweep
    camboost ablate   out=runs/ablate seed=1

Settings are flat ``key=value`` pairs. They come from ``--config FILE`` first,
then from the command line in order (later wins). The switches --boost-train,
--boost-infer, --full-labels and --ll are shorthands for the matching keys and
are applied after the pairs. CAMBOOST_SEED, when set, replaces the seed. Every
run writes its resolved settings to ``config.txt`` in the output directory.

Failures exit with status 2 and print one line: ``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .boostlu import BoostParams, boostlu_general
from .data import Dataset, SyntheticSpec, generate_dataset, load_dataset, save_dataset
from .errors import CamBoostError, ConfigError, DimensionError
from .experiments import (ABLATION_FIELDS, SWEEP_FIELDS, TEST_SEED_OFFSET, Benchmark,
                          build_benchmark, collect_cams, explanation_rows, grid, net_config_for,
                          run_ablation, run_sweep, write_rows)
from .explain import write_analysis_csv, summarize
from .large_loss import LLConfig, write_ll_log
from .metrics import mean_ap, per_class_ap
from .network import NetConfig, init_net, read_checkpoint, same_architecture, save_checkpoint
from .train import TrainConfig, predict, train, write_history

log = logging.getLogger("camboost")

COMMANDS = ("gen", "train", "eval", "explain", "sweep", "ablate")

_spec, _train, _net = SyntheticSpec(), TrainConfig(), NetConfig()


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _ll(s: str) -> str:
    v = s.strip().lower()
    if v in ("", "none", "off"):
        return "none"
    if v not in ("r", "ct", "cp"):
        raise ValueError(f"expected one of none, r, ct, cp; got {s!r}")
    return v


def _str(s: str) -> str:
    return s


KEYS = {
    # data
    "num_classes": (int, _spec.num_classes),
    "height": (int, _spec.height),
    "width": (int, _spec.width),
    "num_samples": (int, _spec.num_samples),
    "test_samples": (int, 500),
    "blob_min": (int, _spec.blob_min),
    "blob_max": (int, _spec.blob_max),
    "min_positives": (int, _spec.min_positives),
    "max_positives": (int, _spec.max_positives),
    "noise": (float, _spec.noise),
    "jitter": (int, _spec.jitter),
    "label_mode": (_str, _spec.label_mode),
    # network
    "channels": (_ints, _net.channels),
    "kernel_size": (int, _net.kernel_size),
    "head_bias": (_bool, _net.head_bias),
    # training
    "epochs": (int, _train.epochs),
    "batch_size": (int, _train.batch_size),
    "lr": (float, _train.lr),
    "head_lr_mult": (float, _train.head_lr_mult),
    "adam_beta1": (float, _train.adam_beta1),
    "adam_beta2": (float, _train.adam_beta2),
    "adam_eps": (float, _train.adam_eps),
    "val_fraction": (float, _train.val_fraction),
    "skip_boost_without_positives": (_bool, _train.skip_boost_without_positives),
    "full_labels": (_bool, False),
    "boost_train": (_bool, False),
    "boost_infer": (_bool, False),
    "alpha": (float, 5.0),
    "beta": (float, 0.0),
    "ll": (_ll, "none"),
    "ll_delta_rel": (float, None),
    "ll_warmup_epochs": (int, 1),
    # runs
    "seed": (int, 0),
    "out": (_str, "."),
    "dataset": (_str, None),
    "test_dataset": (_str, None),
    "checkpoint": (_str, None),
    "checkpoint_b": (_str, None),
    "alphas": (_floats, (1.0, 2.0, 3.0, 5.0, 8.0, 12.0)),
    "betas": (_floats, (0.0,)),
    "sweep_ll": (_ll, "ct"),
    "fraction": (float, 0.05),
    "export_samples": (int, 4),
}


def parse_pair(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def read_config_file(path) -> list[tuple[str, str]]:
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            pairs.append(parse_pair(line))
    return pairs


def resolve(pairs: list[tuple[str, str]], env: Optional[dict] = None) -> dict:
    """Defaults, then ``pairs`` in order, then CAMBOOST_SEED."""
    env = os.environ if env is None else env
    cfg = {k: d for k, (_, d) in KEYS.items()}
    for key, raw in pairs:
        if key not in KEYS:
            raise ConfigError(f"unknown key '{key}'")
        parse = KEYS[key][0]
        try:
            cfg[key] = None if raw.lower() == "none" and KEYS[key][1] is None else parse(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for key '{key}': {exc}") from None
    if env.get("CAMBOOST_SEED"):
        try:
            cfg["seed"] = int(env["CAMBOOST_SEED"])
        except ValueError:
            raise ConfigError(f"CAMBOOST_SEED must be an integer, got {env['CAMBOOST_SEED']!r}") from None
    return cfg


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return "none" if v is None else str(v)


def write_resolved(cfg: dict, command: str, out: Path) -> Path:
    path = out / "config.txt"
    lines = [f"command={command}"] + [f"{k}={_fmt(cfg[k])}" for k in sorted(cfg)]
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- builders

def synthetic_spec(cfg: dict) -> SyntheticSpec:
    return SyntheticSpec(
        num_classes=cfg["num_classes"], height=cfg["height"], width=cfg["width"],
        num_samples=cfg["num_samples"], blob_min=cfg["blob_min"], blob_max=cfg["blob_max"],
        min_positives=cfg["min_positives"], max_positives=cfg["max_positives"],
        noise=cfg["noise"], jitter=cfg["jitter"], label_mode=cfg["label_mode"], seed=cfg["seed"])


def net_config(cfg: dict) -> NetConfig:
    return NetConfig(channels=cfg["channels"], kernel_size=cfg["kernel_size"],
                     head_bias=cfg["head_bias"])


def boost_params(cfg: dict) -> BoostParams:
    return BoostParams(cfg["alpha"], cfg["beta"])


def ll_config(cfg: dict, key: str = "ll") -> Optional[LLConfig]:
    if cfg[key] == "none":
        return None
    return LLConfig(cfg[key], cfg["ll_delta_rel"], cfg["ll_warmup_epochs"])


def train_config(cfg: dict) -> TrainConfig:
    b = boost_params(cfg)
    return TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], lr=cfg["lr"],
        head_lr_mult=cfg["head_lr_mult"], adam_beta1=cfg["adam_beta1"],
        adam_beta2=cfg["adam_beta2"], adam_eps=cfg["adam_eps"],
        boost_train=b if cfg["boost_train"] else None,
        boost_infer=b if cfg["boost_infer"] else None,
        ll=ll_config(cfg), full_labels=cfg["full_labels"],
        skip_boost_without_positives=cfg["skip_boost_without_positives"],
        val_fraction=cfg["val_fraction"], seed=cfg["seed"])


def _require(cfg: dict, key: str) -> str:
    if not cfg[key]:
        raise ConfigError(f"missing required key '{key}'")
    return cfg[key]


def _dataset(cfg: dict, key: str = "dataset") -> Dataset:
    return load_dataset(_require(cfg, key))


def _benchmark(cfg: dict) -> Benchmark:
    if cfg["dataset"]:
        return Benchmark(_dataset(cfg), _dataset(cfg, "test_dataset"), cfg["seed"])
    return build_benchmark(synthetic_spec(cfg), cfg["test_samples"])


# ---------------------------------------------------------------- commands

def cmd_gen(cfg: dict, out: Path) -> None:
    spec = synthetic_spec(cfg)
    train_ds = generate_dataset(spec)
    test_ds = generate_dataset(replace(spec, num_samples=cfg["test_samples"], label_mode="full",
                                       seed=spec.seed + TEST_SEED_OFFSET))
    save_dataset(train_ds, out / "train.bin")
    save_dataset(test_ds, out / "test.bin")
    summary = {"train": train_ds.summary(), "test": test_ds.summary()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'train.bin'} ({len(train_ds)} samples) and {out / 'test.bin'} "
          f"({len(test_ds)} samples)")


def train_metadata(cfg: dict, tc: TrainConfig, selected_epoch: int, val_map: float) -> dict:
    meta = {
        "boost_train": tc.boost_train is not None,
        "boost_infer": tc.boost_infer is not None,
        "alpha": cfg["alpha"], "beta": cfg["beta"],
        "ll": cfg["ll"], "full_labels": tc.full_labels, "seed": tc.seed,
        "selected_epoch": selected_epoch, "val_mAP": val_map,
    }
    if tc.boost_train is not None and tc.boost_infer is None:
        # trained through BoostLU but evaluated without it: known to underperform
        meta["boost_train_without_infer"] = True
    return meta


def cmd_train(cfg: dict, out: Path) -> None:
    ds = _dataset(cfg)
    tc = train_config(cfg)
    net = init_net(net_config_for(ds, net_config(cfg)), tc.seed)
    res = train(net, ds, tc)
    sel = res.best_boost if tc.boost_infer is not None else res.best_plain
    meta = train_metadata(cfg, tc, sel.epoch, sel.val_map)
    if meta.get("boost_train_without_infer"):
        log.warning("BoostLU used in training but not in inference")
    save_checkpoint(sel.net, out / "model.ckpt", meta)
    save_checkpoint(res.net, out / "last.ckpt", meta)
    write_history(out / "history.csv", res.history)
    if res.ll_state is not None:
        write_ll_log(out / "ll_log.csv", res.ll_state, tc.ll.policy.value)
    print(f"selected epoch {sel.epoch} val_mAP {sel.val_map:.4f} -> {out / 'model.ckpt'}")


def _check_compatible(net, ds: Dataset, what: str) -> None:
    if tuple(net.input_spec) != tuple(ds.image_shape) or net.num_classes != ds.num_classes:
        raise DimensionError(f"{what} expects input {tuple(net.input_spec)} with "
                             f"{net.num_classes} classes; dataset has {tuple(ds.image_shape)} "
                             f"with {ds.num_classes}")


def cmd_eval(cfg: dict, out: Path) -> None:
    net, _ = read_checkpoint(_require(cfg, "checkpoint"))
    ds = _dataset(cfg)
    _check_compatible(net, ds, "checkpoint")
    boost = boost_params(cfg) if cfg["boost_infer"] else None
    plain, boosted = predict(net, ds.images, boost)
    fields = ["scope", "mAP"] + (["mAP_boost"] if boost is not None else [])
    rows = [{"scope": "all", "mAP": mean_ap(plain, ds.full_labels)}]
    ap = per_class_ap(plain, ds.full_labels)
    ap_b = per_class_ap(boosted, ds.full_labels) if boost is not None else None
    if boost is not None:
        rows[0]["mAP_boost"] = mean_ap(boosted, ds.full_labels)
    for c in range(ds.num_classes):
        r = {"scope": f"class_{c}", "mAP": float(ap[c])}
        if boost is not None:
            r["mAP_boost"] = float(ap_b[c])
        rows.append(r)
    write_rows(out / "metrics.csv", rows, fields)
    print(" ".join(f"{k}={rows[0][k]:.4f}" for k in fields[1:]))


def _write_map(path_stem: Path, m: np.ndarray) -> None:
    with open(path_stem.with_suffix(".csv"), "w") as fh:
        for row in m:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    lo, hi = float(m.min()), float(m.max())
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    pix = np.rint(scaled * 255).astype(np.uint8)
    h, w = m.shape
    path_stem.with_suffix(".pgm").write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())


def cmd_explain(cfg: dict, out: Path) -> None:
    net_a, _ = read_checkpoint(_require(cfg, "checkpoint"))
    net_b, _ = read_checkpoint(_require(cfg, "checkpoint_b"))
    if not same_architecture(net_a, net_b):
        raise DimensionError("checkpoints have different architectures")
    ds = _dataset(cfg)
    _check_compatible(net_a, ds, "checkpoint")
    rows = explanation_rows(net_a, net_b, ds, cfg["fraction"])
    write_analysis_csv(out / "analysis.csv", rows)
    summary = summarize(rows)
    (out / "analysis_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    boost = boost_params(cfg) if cfg["boost_infer"] else None
    state = "plain" if boost is None else f"boost-a{cfg['alpha']:g}-b{cfg['beta']:g}"
    n = min(cfg["export_samples"], len(ds))
    cam_dir = out / "cams"
    cam_dir.mkdir(exist_ok=True)
    for tag, net in (("a", net_a), ("b", net_b)):
        cams = collect_cams(net, ds.subset(np.arange(n)))
        if boost is not None:
            cams = boostlu_general(cams, boost.alpha, boost.beta)
        for i in range(n):
            sid = int(ds.sample_ids[i])
            for c in np.flatnonzero(ds.full_labels[i]):
                _write_map(cam_dir / f"cam_{tag}_s{sid}_c{c}_{state}", cams[i, c])
    print(f"{summary['n']} rows; median spearman {summary['median_spearman']:.4f}; "
          f"gaussian control {summary['median_spearman_gaussian']:.4f}")


def cmd_sweep(cfg: dict, out: Path) -> None:
    bench = _benchmark(cfg)
    points = grid(cfg["alphas"], cfg["betas"])
    for a, b in points:
        BoostParams(a, b)  # validate the whole grid before training anything
    rows = run_sweep(bench, points, train_config(cfg), net_config(cfg), ll_config(cfg, "sweep_ll"))
    write_rows(out / "sweep.csv", rows, SWEEP_FIELDS)
    for r in rows:
        print(f"alpha={r['alpha']:g} beta={r['beta']:g} mAP={r['test_mAP']:.4f}")


def cmd_ablate(cfg: dict, out: Path) -> None:
    bench = _benchmark(cfg)
    rows = run_ablation(bench, train_config(cfg), net_config(cfg), boost_params(cfg))
    write_rows(out / "ablation.csv", rows, ABLATION_FIELDS)
    for r in rows:
        print(f"{r['row']} {r['name']:<30} mAP={r['test_mAP']:.4f}")


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "explain": cmd_explain,
            "sweep": cmd_sweep, "ablate": cmd_ablate}


class _Flag(argparse.Action):
    """Turns a switch into a key=value pair queued after the positional ones."""

    def __init__(self, option_strings, dest, key, value=None, **kw):
        self.key, self.value = key, value
        super().__init__(option_strings, dest, nargs=0 if value is not None else 1, **kw)

    def __call__(self, parser, ns, values, option_string=None):
        v = self.value if self.value is not None else values[0]
        ns.flag_pairs = (ns.flag_pairs or []) + [(self.key, v)]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="camboost", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key=value file")
        sp.add_argument("--boost-train", action=_Flag, key="boost_train", value="true")
        sp.add_argument("--boost-infer", action=_Flag, key="boost_infer", value="true")
        sp.add_argument("--full-labels", action=_Flag, key="full_labels", value="true")
        sp.add_argument("--ll", action=_Flag, key="ll", choices=["r", "ct", "cp"])
        sp.set_defaults(flag_pairs=None)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    # key=value pairs may sit anywhere among the switches, so they arrive as extras
    args, extras = parser.parse_known_args(argv)
    stray = [t for t in extras if "=" not in t or t.startswith("-")]
    if stray:
        parser.error(f"unrecognized arguments: {' '.join(stray)}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        pairs = read_config_file(args.config) if args.config else []
        pairs += [parse_pair(t) for t in extras]
        pairs += args.flag_pairs or []
        cfg = resolve(pairs)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, args.command, out)
        HANDLERS[args.command](cfg, out)
    except CamBoostError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        where = exc.filename if exc.filename is not None else ""
        print(f"error: io: {where}: {exc.strerror or exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
