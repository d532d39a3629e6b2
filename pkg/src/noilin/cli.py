"""Command-line driver: ``python -m noilin {gen-data,train,eval,attack}``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .attacks import AttackConfig, AttackError, pgd_chunked
from .data import (
    DEFAULT_CENTERS, IdxFormatError, LabeledDataset, SplitSpec, load_csv, load_idx_pair,
    make_ternary_gaussian, save_csv, split,
)
from .metrics import EVAL_ATTACKS, accuracy, eval_attack, logit_margin_stats, write_report
from .models import load_checkpoint
from .noise import NoiseSpec
from .scheduler import NoilinState
from .tensor import ShapeError
from .train import METHODS, SCHEDULES, SITES, SMOOTHING, NumericError, TrainConfig, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}

_DATASET = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["ternary", "csv", "idx"]},
        "n": _POS_INT,
        "sigma": {"type": "number", "exclusiveMinimum": 0},
        "centers": {"type": "array", "items": {"type": "array", "items": _NUM}},
        "seed": {"type": "integer"},
        "path": {"type": "string"},
        "num_classes": _POS_INT,
        "bounds": {"type": ["array", "null"], "items": _NUM, "minItems": 2, "maxItems": 2},
        "images": {"type": "string"},
        "labels": {"type": "string"},
        "classes": {"type": "array", "items": {"type": "integer"}, "minItems": 2},
        "train_count": _POS_INT,
        "validation_count": _POS_INT,
        "test_count": _POS_INT,
        "split_seed": {"type": "integer"},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "noilin experiment",
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset"],
    "properties": {
        "dataset": _DATASET,
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"hidden": {"type": "array", "items": _POS_INT}},
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": list(METHODS)},
                "injection_site": {"enum": list(SITES)},
                "noise": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["symmetric", "pair"]},
                        "rate": {"type": "number", "minimum": 0, "maximum": 1},
                        "seed": {"type": "integer"},
                        "pair_map": {"type": "array", "items": {"type": "integer"}},
                    },
                },
                "epochs": _POS_INT,
                "batch_size": _POS_INT,
                "lr_schedule": {"enum": list(SCHEDULES)},
                "base_lr": {"type": "number", "exclusiveMinimum": 0},
                "momentum": {"type": "number", "minimum": 0, "maximum": 1},
                "weight_decay": {"type": "number", "minimum": 0},
                "attack": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "epsilon": {"type": "number", "minimum": 0},
                        "alpha": {"type": "number", "exclusiveMinimum": 0},
                        "steps": {"type": "integer", "minimum": 0},
                        "kappa": {"type": "number", "minimum": 0},
                        "random_start": {"type": "boolean"},
                        "clamp": {
                            "oneOf": [
                                {"enum": ["dataset", None]},
                                {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
                            ]
                        },
                    },
                },
                "trades_beta": {"type": "number", "minimum": 0},
                "label_smoothing": {"enum": list(SMOOTHING)},
                "smoothing_rho": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eval_epsilon": {"type": "number", "minimum": 0},
            },
        },
        "noilin": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "eta_min": {"type": "number", "minimum": 0, "maximum": 1},
                "eta_max": {"type": "number", "minimum": 0, "maximum": 1},
                "tau": _POS_INT,
                "gamma": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "eval_attacks": {"type": "array", "items": {"enum": sorted(EVAL_ATTACKS)}},
        "output_dir": {"type": "string"},
        "seed": {"type": "integer"},
    },
}

# choices fixed in code that a reader of a run directory may want to know about
DECISIONS = {
    "cw_objective": "hinge max(max_{j!=y} f_j - f_y - kappa, 0)",
    "eval_attack_step": "epsilon/4 with uniform random start",
    "trades_attack_start": "x + 0.001 * N(0, 1)",
    "symmetric_flip": "uniform over the other C-1 classes",
    "pair_flip": "c -> (c + 1) mod C unless pair_map is given",
    "noilin_trigger": "sum of latest tau+1 accuracies < sum of previous window",
    "weight_decay": "L2 on all parameters, added to the gradient",
    "best_checkpoint": "argmax robust validation accuracy (PGD-10), first epoch on ties",
}


def blob_sha1(data: bytes) -> str:
    """Content hash in the form git uses for blob objects."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))


def _resolve(base: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base / path


def load_dataset(spec: dict, base_dir: Path) -> LabeledDataset:
    kind = spec["kind"]
    if kind == "ternary":
        n = spec.get("n", 300)
        if n % 3:
            raise ConfigError(f"dataset/n: ternary data needs a multiple of 3 rows, got {n}")
        return make_ternary_gaussian(n // 3, spec.get("centers", DEFAULT_CENTERS),
                                     spec.get("sigma", 0.3), spec.get("seed", 0))
    if kind == "csv":
        if "path" not in spec:
            raise ConfigError("dataset/path: required for kind 'csv'")
        bounds = spec.get("bounds")
        return load_csv(_resolve(base_dir, spec["path"]), spec.get("num_classes"),
                        tuple(bounds) if bounds else None)
    for key in ("images", "labels"):
        if key not in spec:
            raise ConfigError(f"dataset/{key}: required for kind 'idx'")
    ds = load_idx_pair(_resolve(base_dir, spec["images"]), _resolve(base_dir, spec["labels"]))
    if "classes" in spec:
        ds = ds.select_classes(spec["classes"])
    return ds


def split_dataset(ds: LabeledDataset, spec: dict, seed: int):
    """Cut (train, valid, test); ``train_count`` optionally subsamples what remains."""
    s = spec.get("split_seed", seed)
    test_count = spec.get("test_count", max(1, len(ds) // 5))
    valid_count = spec.get("validation_count", max(1, len(ds) // 5))
    rest, test = split(ds, SplitSpec(test_count, s))
    train, valid = split(rest, SplitSpec(valid_count, s + 1))
    if "train_count" in spec and spec["train_count"] < len(train):
        keep = np.random.default_rng([s, 2]).permutation(len(train))[: spec["train_count"]]
        train = train.subset(np.sort(keep))
    return train, valid, test


def build_train_config(cfg: dict, bounds) -> TrainConfig:
    t = dict(cfg.get("train", {}))
    seed = cfg.get("seed", 0)
    noise = t.pop("noise", {})
    if "pair_map" in noise:
        noise = {**noise, "pair_map": tuple(noise["pair_map"])}
    a = dict(t.pop("attack", {}))
    clamp = a.pop("clamp", "dataset")
    if clamp == "dataset":
        clamp = bounds
    eps = a.pop("epsilon", 8 / 255)
    attack = AttackConfig(eps, a.pop("alpha", eps / 4), a.pop("steps", 10), clamp=clamp, **a)
    noilin = None
    if "noilin" in cfg:
        defaults = NoilinState.for_method(t.get("method", "sat"))
        noilin = NoilinState(**{k: cfg["noilin"].get(k, getattr(defaults, k))
                                for k in ("eta_min", "eta_max", "tau", "gamma")})
    return TrainConfig(noise=NoiseSpec(**noise), attack=attack, noilin=noilin, seed=seed, **t)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(args) -> int:
    if args.n <= 0:
        raise ConfigError(f"--n must be positive, got {args.n}")
    spec = {"kind": "ternary", "n": args.n, "sigma": args.sigma, "seed": args.seed}
    ds = load_dataset(spec, Path("."))
    out = Path(args.out)
    save_csv(ds, out)
    sidecar = out.with_suffix(".json")
    _write_json(sidecar, {"dataset": spec, "rows": len(ds), "csv": out.name,
                          "centers": [list(c) for c in DEFAULT_CENTERS]})
    print(f"wrote {len(ds)} rows to {out} and parameters to {sidecar}")
    return EXIT_OK


def cmd_train(args) -> int:
    path = Path(args.config)
    raw = path.read_bytes()
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    validate_config(cfg)
    base = path.parent
    seed = cfg.get("seed", 0)
    try:
        ds = load_dataset(cfg["dataset"], base)
        train_ds, valid, test = split_dataset(ds, cfg["dataset"], seed)
        tcfg = build_train_config(cfg, ds.bounds)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, IdxFormatError):
            raise
        raise ConfigError(str(exc)) from exc
    out = Path(args.out or cfg.get("output_dir") or "run")
    if not out.is_absolute() and args.out is None and "output_dir" in cfg:
        out = base / out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_bytes(raw)
    save_csv(test, out / "test.csv")
    save_csv(valid, out / "valid.csv")
    config_hash = blob_sha1(raw)
    hidden = tuple(cfg.get("model", {}).get("hidden", [64]))
    result = run(tcfg, train_ds, valid, test, hidden=hidden, out_dir=out, config_hash=config_hash,
                 on_epoch=lambda m, r: print(",".join(r.row()), flush=True) if args.verbose else None)
    _write_json(out / "metadata.json", {
        "config_sha1": config_hash,
        "seeds": {"run": seed, "noise": tcfg.noise.seed, "model": seed,
                  "split": cfg["dataset"].get("split_seed", seed)},
        "sizes": {"train": len(train_ds), "valid": len(valid), "test": len(test)},
        "hidden": list(hidden),
        "best_epoch": result.best_epoch,
        "eval_epsilon": tcfg.eval_eps,
        "clamp": tcfg.attack.clamp,
        "trades_beta": tcfg.trades_beta,
        "noilin": None if tcfg.noilin is None else {
            k: getattr(tcfg.noilin, k) for k in ("eta_min", "eta_max", "tau", "gamma")},
        "decisions": {**DECISIONS, "train_attack_random_start": tcfg.attack.random_start,
                      "pgd_clamp": tcfg.attack.clamp},
    })
    if cfg.get("eval_attacks"):
        write_report(out / "last_eval.csv", evaluation_row(
            result.final, test, cfg["eval_attacks"], tcfg.eval_eps, tcfg.attack.clamp, seed))
    last = result.records[-1]
    print(f"{out}: {len(result.records)} epochs, best epoch {result.best_epoch}, "
          f"last rob_test_pgd40 {last.rob_test_pgd40:.4f}")
    return EXIT_OK


def evaluation_row(model, ds, attacks, eps, clamp, seed) -> dict[str, float]:
    """Natural accuracy, robust accuracy per named attack, and logit-margin statistics.

    Attack ``name`` with ``K`` steps is seeded with ``[seed, K]``, the same
    streams the training loop uses for its per-epoch test columns.
    """
    row = {"nat_acc": accuracy(model, ds)}
    for name in attacks:
        cfg = eval_attack(name, eps, clamp)
        row[f"rob_{name}"] = accuracy(model, ds, cfg, seed=[seed, cfg.steps])
    row["margin_median"], row["margin_std"] = logit_margin_stats(model, ds)
    return row


def _eval_inputs(args):
    model, header = load_checkpoint(args.checkpoint)
    meta = header.get("meta", {})
    bounds = meta.get("clamp")
    ds = load_csv(args.data, num_classes=model.num_classes, bounds=tuple(bounds) if bounds else None)
    if ds.dim != model.input_dim:
        raise ShapeError(f"checkpoint expects {model.input_dim} features, {args.data} has {ds.dim}")
    eps = args.epsilon if args.epsilon is not None else meta.get("eval_epsilon", 8 / 255)
    seed = args.seed if args.seed is not None else (header.get("seed") or 0)
    return model, ds, eps, bounds, seed


def cmd_eval(args) -> int:
    attacks = args.attack or []
    for name in attacks:
        if name not in EVAL_ATTACKS:
            raise ConfigError(f"unknown attack {name!r}; valid names: {', '.join(sorted(EVAL_ATTACKS))}")
    model, ds, eps, clamp, seed = _eval_inputs(args)
    row = evaluation_row(model, ds, attacks, eps, clamp, seed)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".eval.csv")
    write_report(out, row)
    for k, v in row.items():
        print(f"{k},{v!r}")
    return EXIT_OK


def cmd_attack(args) -> int:
    if args.attack not in EVAL_ATTACKS:
        raise ConfigError(f"unknown attack {args.attack!r}; valid names: {', '.join(sorted(EVAL_ATTACKS))}")
    model, ds, eps, clamp, seed = _eval_inputs(args)
    cfg = eval_attack(args.attack, eps, clamp)
    x_adv = pgd_chunked(model, ds.features, ds.labels, cfg, [seed, cfg.steps])
    adv = LabeledDataset(x_adv, ds.labels, ds.num_classes, ds.bounds, ds.index)
    save_csv(adv, args.out)
    print(f"wrote {len(adv)} adversarial rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="python -m noilin", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV plus a JSON sidecar")
    g.add_argument("--ternary", action="store_true", required=True, help="three Gaussian blobs in the plane")
    g.add_argument("--n", type=int, default=300, help="total rows (multiple of 3)")
    g.add_argument("--sigma", type=float, default=0.3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="ternary.csv")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one experiment from a JSON config")
    t.add_argument("config")
    t.add_argument("--out", help="run directory (overrides output_dir)")
    t.add_argument("--verbose", action="store_true", help="echo each epoch's CSV row")
    t.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "accuracy report for a checkpoint"),
                                 ("attack", cmd_attack, "dump adversarial examples as CSV")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("checkpoint")
        e.add_argument("--data", required=True, help="CSV dataset")
        e.add_argument("--epsilon", type=float, help="defaults to the value stored in the checkpoint")
        e.add_argument("--seed", type=int, help="attack seed; defaults to the checkpoint's run seed")
        if name == "eval":
            e.add_argument("--attack", action="append", help=f"one of {', '.join(sorted(EVAL_ATTACKS))}; repeatable")
            e.add_argument("--out", help="report CSV path")
        else:
            e.add_argument("--attack", default="pgd40")
            e.add_argument("--out", required=True)
        e.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, jsonschema.ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, AttackError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, IdxFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
