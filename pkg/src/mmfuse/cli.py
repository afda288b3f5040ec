"""Command-line surface: synth, split, validate, train, eval, gradcheck, dims.

Values resolve flags-over-config-file-over-defaults; the config file is
INI-style `key = value` sections selected with --config or the
MMFUSE_CONFIG environment variable. Exit codes: 0 success, 1 validation
or gradient-check failure, 2 usage/config errors.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

from .data import SyntheticSpec, load_dataset, split_dataset, synth_generate, validate, write_manifest
from .errors import ConfigError, FormatError, ShapeError, SplitError
from .fusion import FusionOp, build_plan, parse_fusion_op
from .metrics import render_report, save_report
from .model import gradient_check_suite, load_params, parse_head_variant, save_params
from .training import TrainConfig, evaluate, train

CONFIG_ENV_VAR = "MMFUSE_CONFIG"

_CONFIG_SCHEMA = {
    "run": {"seed"},
    "plan": {"inner", "outer", "final", "d_text", "d_image"},
    "train": {
        "epochs", "batch_size", "optimizer", "lr", "weight_decay",
        "variant", "dropout", "hidden", "kernel_len", "mask",
    },
    "synth": {"n_coarse", "n_fine", "samples_per_class", "sigma", "d_text", "d_image", "regions"},
    "paths": {"dataset", "out", "params", "out_params", "out_metrics"},
}


class ConfigFile:
    """Validated `key = value` sections with typed lookups."""

    def __init__(self, path: str | None):
        self.values: dict[str, dict[str, str]] = {}
        if not path:
            return
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from None
        for section in parser.sections():
            if section not in _CONFIG_SCHEMA:
                raise ConfigError(f"{path}: unknown config section [{section}]")
            for key in parser[section]:
                if key not in _CONFIG_SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown config key {key!r} in [{section}]")
                self.values.setdefault(section, {})[key] = parser[section][key]

    def pick(self, flag_value, section: str, key: str, cast, default):
        """Flag beats config file beats default."""
        if flag_value is not None:
            return flag_value
        raw = self.values.get(section, {}).get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except (ValueError, ShapeError, ConfigError) as exc:
            raise ConfigError(f"config [{section}] {key} = {raw!r}: {exc}") from None


def _parse_hidden(text: str) -> tuple[int, int]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ConfigError(f"hidden dims must be two integers like '512,256', got {text!r}")
    return int(parts[0]), int(parts[1])


def _parse_mask(entries) -> frozenset[str]:
    names: set[str] = set()
    for entry in entries or []:
        names.update(p.strip() for p in entry.split(",") if p.strip())
    return frozenset(names)


def _require(cfg: ConfigFile, args, flag_value, section: str, key: str, flag: str):
    value = cfg.pick(flag_value, section, key, str, None)
    if value is None:
        args.parser.error(f"{flag} is required")
    return value


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args, cfg: ConfigFile) -> int:
    out_dir = _require(cfg, args, args.out, "paths", "out", "--out")
    spec = SyntheticSpec(
        n_coarse=cfg.pick(args.n_coarse, "synth", "n_coarse", int, 9),
        n_fine=cfg.pick(args.n_fine, "synth", "n_fine", int, 3),
        samples_per_class=cfg.pick(args.per_class, "synth", "samples_per_class", int, 50),
        noise_sigma=cfg.pick(args.sigma, "synth", "sigma", float, 0.1),
        d_text=cfg.pick(args.d_text, "synth", "d_text", int, 32),
        d_image_raw=cfg.pick(args.d_image, "synth", "d_image", int, 64),
        n_regions=cfg.pick(args.regions, "synth", "regions", int, 8),
    )
    seed = cfg.pick(args.seed, "run", "seed", int, 0)
    descriptor = synth_generate(spec, seed, out_dir)
    print(f"wrote {spec.n_classes * spec.samples_per_class} samples -> {descriptor}")
    return 0


def cmd_split(args, cfg: ConfigFile) -> int:
    dataset_path = _require(cfg, args, args.dataset, "paths", "dataset", "--dataset")
    seed = cfg.pick(args.seed, "run", "seed", int, 0)
    dataset = load_dataset(dataset_path)
    split_dataset(dataset.rows, args.test_fraction, seed)
    manifest_path = dataset.base_dir / dataset.desc.manifest
    write_manifest(manifest_path, dataset.rows)
    counts = {name: len(dataset.indices(name)) for name in ("train", "val", "test")}
    print(f"assigned splits -> {manifest_path} "
          f"(train={counts['train']} val={counts['val']} test={counts['test']})")
    return 0


def cmd_validate(args, cfg: ConfigFile) -> int:
    dataset_path = _require(cfg, args, args.dataset, "paths", "dataset", "--dataset")
    try:
        dataset = load_dataset(dataset_path)
    except FormatError as exc:
        print(f"-: file: {exc}", file=sys.stderr)
        return 1
    violations = validate(dataset)
    for violation in violations:
        print(str(violation), file=sys.stderr)
    if violations:
        print(f"{len(violations)} violations")
        return 1
    print("OK: 0 violations")
    return 0


def _plan_from(args, cfg: ConfigFile, d_text: int, d_image_raw: int):
    return build_plan(
        cfg.pick(args.inner, "plan", "inner", parse_fusion_op, FusionOp.AVERAGE),
        cfg.pick(args.outer, "plan", "outer", parse_fusion_op, FusionOp.AVERAGE),
        cfg.pick(args.final, "plan", "final", parse_fusion_op, FusionOp.AVERAGE),
        d_text=d_text,
        d_image_raw=d_image_raw,
    )


def cmd_train(args, cfg: ConfigFile) -> int:
    dataset_path = _require(cfg, args, args.dataset, "paths", "dataset", "--dataset")
    dataset = load_dataset(dataset_path)
    plan = _plan_from(args, cfg, dataset.desc.d_text, dataset.desc.d_image_raw)
    config = TrainConfig(
        plan=plan,
        epochs=cfg.pick(args.epochs, "train", "epochs", int, 20),
        batch_size=cfg.pick(args.batch_size, "train", "batch_size", int, 32),
        optimizer=cfg.pick(args.optimizer, "train", "optimizer", str, "adam"),
        lr=cfg.pick(args.lr, "train", "lr", float, None),
        weight_decay=cfg.pick(args.weight_decay, "train", "weight_decay", float, None),
        seed=cfg.pick(args.seed, "run", "seed", int, 0),
        variant=cfg.pick(args.variant, "train", "variant", parse_head_variant,
                         parse_head_variant("basic")),
        dropout_p=cfg.pick(args.dropout, "train", "dropout", float, 0.3),
        hidden_dims=cfg.pick(args.hidden, "train", "hidden", _parse_hidden, (512, 256)),
        kernel_len=cfg.pick(args.kernel_len, "train", "kernel_len", int, 9),
        unimodal_mask=cfg.pick(
            _parse_mask(args.mask) if args.mask else None,
            "train", "mask", lambda raw: _parse_mask([raw]), frozenset(),
        ),
    )
    params, report = train(config, dataset)
    out_params = cfg.pick(args.out_params, "paths", "out_params", str, "params.mmpr")
    out_metrics = cfg.pick(args.out_metrics, "paths", "out_metrics", str, "metrics.json")
    save_params(out_params, params, plan, dataset.desc.c)
    save_report(out_metrics, report)
    print(render_report(report, per_class=args.per_class))
    print(f"best epoch {report.best_epoch}; params -> {out_params}; metrics -> {out_metrics}")
    return 0


def cmd_eval(args, cfg: ConfigFile) -> int:
    dataset_path = _require(cfg, args, args.dataset, "paths", "dataset", "--dataset")
    params_path = _require(cfg, args, args.params, "paths", "params", "--params")
    dataset = load_dataset(dataset_path)
    params, plan, n_classes = load_params(params_path)
    if n_classes != dataset.desc.c:
        raise ConfigError(f"params were trained for {n_classes} classes, dataset has {dataset.desc.c}")
    if plan.d_text != dataset.desc.d_text or plan.d_image_raw != dataset.desc.d_image_raw:
        raise ConfigError("params plan dims do not match the dataset descriptor")
    report = evaluate(params, plan, dataset, args.split, _parse_mask(args.mask))
    print(render_report(report, per_class=args.per_class))
    out_metrics = cfg.pick(args.out_metrics, "paths", "out_metrics", str, None)
    if out_metrics:
        save_report(out_metrics, report)
        print(f"metrics -> {out_metrics}")
    return 0


def cmd_gradcheck(args, cfg: ConfigFile) -> int:
    seed = cfg.pick(args.seed, "run", "seed", int, 7)
    results = gradient_check_suite(
        seed=seed, d_text=args.d_text, d_image_raw=args.d_image,
        n_classes=args.classes, eps=args.eps,
    )
    worst = max(err for _, err in results)
    for label, err in results:
        status = "ok  " if err < args.tolerance else "FAIL"
        print(f"{status} {err:.3e}  {label}")
    print(f"max relative error {worst:.3e} (tolerance {args.tolerance:g})")
    return 0 if worst < args.tolerance else 1


def cmd_dims(args, cfg: ConfigFile) -> int:
    plan = _plan_from(
        args, cfg,
        cfg.pick(args.d_text, "plan", "d_text", int, 768),
        cfg.pick(args.d_image, "plan", "d_image", int, 2048),
    )
    print(f"branch_dim={plan.branch_dim}")
    print(f"text_dim={plan.text_dim}")
    print(f"adapter_target={plan.adapter_target}")
    print(f"d_fused={plan.d_fused}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmfuse",
        description="Multimodal product classification by hierarchical fusion of frozen embeddings.",
    )
    sub = parser.add_subparsers(dest="command")

    def add(name: str, help_text: str, func):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help=f"INI config file (default ${CONFIG_ENV_VAR})")
        p.set_defaults(func=func, parser=p)
        return p

    p = add("synth", "generate a synthetic benchmark dataset", cmd_synth)
    p.add_argument("--out", help="output directory")
    p.add_argument("--n-coarse", type=int)
    p.add_argument("--n-fine", type=int)
    p.add_argument("--per-class", type=int, help="samples per class")
    p.add_argument("--sigma", type=float, help="noise standard deviation")
    p.add_argument("--d-text", type=int)
    p.add_argument("--d-image", type=int)
    p.add_argument("--regions", type=int)
    p.add_argument("--seed", type=int)

    p = add("split", "assign stratified train/val/test splits", cmd_split)
    p.add_argument("--dataset", help="dataset descriptor file")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int)

    p = add("validate", "check a dataset for violations", cmd_validate)
    p.add_argument("--dataset", help="dataset descriptor file")

    p = add("train", "train the fusion model on a dataset", cmd_train)
    p.add_argument("--dataset", help="dataset descriptor file")
    p.add_argument("--out-params")
    p.add_argument("--out-metrics")
    for slot in ("inner", "outer", "final"):
        p.add_argument(f"--{slot}", type=parse_fusion_op, help="add | concat | avg")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=("adam", "adamw"))
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--variant", type=parse_head_variant, help="basic | dropout | more-layers")
    p.add_argument("--dropout", type=float)
    p.add_argument("--hidden", type=_parse_hidden, help="head widths, e.g. 512,256")
    p.add_argument("--kernel-len", type=int)
    p.add_argument("--mask", action="append", help="modalities to zero out (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--per-class", action="store_true", help="print the per-class table")

    p = add("eval", "evaluate saved parameters on a split", cmd_eval)
    p.add_argument("--dataset", help="dataset descriptor file")
    p.add_argument("--params", help="parameter file from train")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--mask", action="append", help="modalities to zero out (repeatable)")
    p.add_argument("--out-metrics")
    p.add_argument("--per-class", action="store_true")

    p = add("gradcheck", "finite-difference check of all fusion plans and head variants", cmd_gradcheck)
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--d-text", type=int, default=8)
    p.add_argument("--d-image", type=int, default=32)
    p.add_argument("--classes", type=int, default=3)

    p = add("dims", "print inferred dimensions for a fusion plan", cmd_dims)
    for slot in ("inner", "outer", "final"):
        p.add_argument(f"--{slot}", type=parse_fusion_op, help="add | concat | avg")
    p.add_argument("--d-text", type=int)
    p.add_argument("--d-image", type=int)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = ConfigFile(args.config or os.environ.get(CONFIG_ENV_VAR))
        return args.func(args, cfg)
    except (ConfigError, ShapeError, SplitError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
