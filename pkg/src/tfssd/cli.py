"""Command-line interface: train / eval / bench / inspect / synth.

Configuration is JSON with dotted-path --set overrides.  Every subcommand
prints the fully resolved configuration before doing any work, so a run can
be reproduced from its log alone.  Exit codes: 0 ok, 2 bad configuration or
arguments, 3 I/O problems, 4 semantic mismatches between valid artifacts,
5 numeric failure during training.
"""

import argparse
import copy
import csv
import json
import platform
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    SyntheticSpec,
    load_dataset,
    load_features,
    load_manifest,
    write_synthetic_dataset,
)
from .errors import (
    ConfigError,
    FormatError,
    InvalidArgumentError,
    NumericError,
    ResourceLimitError,
    SemanticMismatchError,
    TfssdError,
)
from .model import ModelConfig, load_checkpoint, model_forward, param_count
from .ssd import SsdConfig, SsdInputs, ssd_chunked, ssd_dual_materialized, ssd_sequential
from .tf_block import TfBlockConfig
from .trainer import TrainConfig, evaluate, fit

VARIANTS = {
    "baseline": {"use_encoder": False, "use_blocks": False, "contrastive": False},
    "attn": {"use_encoder": True, "use_blocks": False, "contrastive": False},
    "attn+temporal": {
        "use_encoder": True,
        "use_blocks": True,
        "domains": ("time",),
        "contrastive": False,
    },
    "attn+temporal+freq": {
        "use_encoder": True,
        "use_blocks": True,
        "domains": ("time", "freq"),
        "contrastive": False,
    },
    "full": {
        "use_encoder": True,
        "use_blocks": True,
        "domains": ("time", "freq"),
        "contrastive": True,
    },
    "dual_temporal": {
        "use_encoder": True,
        "use_blocks": True,
        "domains": ("time", "time"),
        "contrastive": True,
    },
}

DEFAULT_CONFIG = {
    "variant": "full",
    "seed": 0,
    "out": "runs/latest",
    "folds": 5,
    "model": {
        "d_model": 24,
        "heads": 4,
        "d_inner": 16,
        "d_state": 4,
        "n_groups": 1,
        "d_conv": 3,
        "chunk": 64,
        "n_blocks": 1,
        "mlp_hidden": 32,
        "gate_mode": "soft",
    },
    "train": {
        "lr": 5e-4,
        "batch": 32,
        "epochs": 30,
        "weight_decay": 0.01,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps_opt": 1e-8,
        "lambda": 0.1,
        "tau": 0.1,
    },
    "data": {"manifest": None},
    "bench": {
        "lengths": [64, 256, 1024],
        "repeats": 31,
        "warmup": 5,
        "d_in": 32,
        "n_classes": 4,
        "ssd": {"channels": 64, "n_groups": 1, "state_dim": 16, "chunk": 64},
    },
}


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
    key, raw_value = assignment.split("=", 1)
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    node = config
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set path {key!r} crosses a non-table value")
    node[parts[-1]] = value


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(args) -> dict:
    resolved = copy.deepcopy(DEFAULT_CONFIG)
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"unreadable config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("config root must be a JSON object")
        resolved = _merge(resolved, file_cfg)
    for assignment in args.set or []:
        _apply_set(resolved, assignment)
    if args.out is not None:
        resolved["out"] = args.out
    if args.seed is not None:
        resolved["seed"] = args.seed
    variant = resolved.get("variant")
    if variant not in VARIANTS:
        raise ConfigError(
            f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}"
        )
    return resolved


def dump_config(resolved: dict) -> None:
    print("resolved config:")
    print(json.dumps(resolved, indent=2, sort_keys=True))


def build_model_config(resolved: dict, d_in: int, n_classes: int) -> ModelConfig:
    variant = VARIANTS[resolved["variant"]]
    m = resolved["model"]
    try:
        use_encoder = variant["use_encoder"]
        use_blocks = variant["use_blocks"]
        width = int(m["d_model"]) if use_encoder else int(d_in)
        block = TfBlockConfig(
            d_model=width,
            d_inner=int(m["d_inner"]),
            d_state=int(m["d_state"]),
            n_groups=int(m["n_groups"]),
            d_conv=int(m["d_conv"]),
            chunk=int(m["chunk"]),
            gate_mode=str(m["gate_mode"]),
            branch_domains=variant.get("domains", ("time", "freq")),
        )
        return ModelConfig(
            d_in=int(d_in),
            d_model=int(m["d_model"]),
            heads=int(m["heads"]),
            block=block,
            n_blocks=int(m["n_blocks"]),
            n_classes=int(n_classes),
            mlp_hidden=int(m["mlp_hidden"]),
            use_encoder=use_encoder,
            use_blocks=use_blocks,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model section: {exc}") from exc


def build_train_config(resolved: dict) -> TrainConfig:
    t = resolved["train"]
    weight = t.get("lambda", t.get("cmdt_weight", 0.1))
    if not VARIANTS[resolved["variant"]]["contrastive"]:
        weight = 0.0
    try:
        return TrainConfig(
            lr=float(t["lr"]),
            batch=int(t["batch"]),
            epochs=int(t["epochs"]),
            weight_decay=float(t["weight_decay"]),
            beta1=float(t["beta1"]),
            beta2=float(t["beta2"]),
            eps_opt=float(t["eps_opt"]),
            seed=int(resolved["seed"]),
            cmdt_weight=float(weight),
            tau=float(t["tau"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad train section: {exc}") from exc


def _require_manifest(resolved: dict, cli_manifest: str | None):
    path = cli_manifest or resolved.get("data", {}).get("manifest")
    if not path:
        raise ConfigError("no manifest given: set data.manifest or --manifest")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return path


def cmd_train(args) -> int:
    resolved = resolve_config(args)
    dump_config(resolved)
    manifest_path = _require_manifest(resolved, args.manifest)
    manifest = load_manifest(manifest_path)
    features, _, _ = load_dataset(manifest)
    model_cfg = build_model_config(
        resolved, d_in=features[0].shape[1], n_classes=len(manifest.classes)
    )
    train_cfg = build_train_config(resolved)
    out_dir = Path(resolved["out"])
    result = fit(manifest, model_cfg, train_cfg, int(resolved["folds"]), out_dir)
    print(f"artifacts written to {out_dir}")
    for outcome in result.folds:
        print(
            f"fold {outcome.fold}: best epoch {outcome.best_epoch} "
            f"wa={outcome.report.wa:.4f} ua={outcome.report.ua:.4f} "
            f"wf1={outcome.report.wf1:.4f}"
        )
    summary = result.summary
    print(
        f"aggregate: wa={summary['wa']['mean']:.4f}+-{summary['wa']['std']:.4f} "
        f"ua={summary['ua']['mean']:.4f} wf1={summary['wf1']['mean']:.4f}"
    )
    return 0


def cmd_eval(args) -> int:
    resolved = resolve_config(args)
    dump_config(resolved)
    cfg, params, _, _, extra = load_checkpoint(args.checkpoint)
    manifest = load_manifest(_require_manifest(resolved, args.manifest))
    stored_classes = extra.get("classes")
    if stored_classes is not None and list(stored_classes) != list(manifest.classes):
        raise SemanticMismatchError(
            f"checkpoint classes {stored_classes} do not match manifest "
            f"classes {manifest.classes}"
        )
    if cfg.n_classes != len(manifest.classes):
        raise SemanticMismatchError(
            f"checkpoint expects {cfg.n_classes} classes, manifest has "
            f"{len(manifest.classes)}"
        )
    features, labels, _ = load_dataset(manifest)
    report = evaluate(params, cfg, features, labels)
    print(f"wa={report.wa!r} ua={report.ua!r} wf1={report.wf1!r}")
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    confusion_path = out_dir / "confusion.csv"
    with open(confusion_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + manifest.classes)
        for class_id, row in enumerate(report.confusion):
            writer.writerow([manifest.classes[class_id]] + row.tolist())
    print(f"confusion matrix written to {confusion_path}")
    return 0


def _median_ms(fn, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - start) * 1e3)
    return statistics.median(samples)


def cmd_bench(args) -> int:
    resolved = resolve_config(args)
    dump_config(resolved)
    bench = resolved["bench"]
    lengths = [int(x) for x in bench["lengths"]]
    repeats = int(bench["repeats"])
    warmup = int(bench["warmup"])
    rng = np.random.default_rng(int(resolved["seed"]))
    model_cfg = build_model_config(
        resolved, d_in=int(bench["d_in"]), n_classes=int(bench["n_classes"])
    )
    from .model import init_params  # local import keeps module load light

    params = init_params(model_cfg, rng)
    rows = []
    n_params = param_count(model_cfg)
    for length in lengths:
        x = rng.standard_normal((length, model_cfg.d_in))
        median = _median_ms(
            lambda: model_forward(x, params, model_cfg), repeats, warmup
        )
        rows.append(("model_forward", length, median, n_params))
    ssd_spec = bench["ssd"]
    channels = int(ssd_spec["channels"])
    groups = int(ssd_spec["n_groups"])
    state_dim = int(ssd_spec["state_dim"])
    chunk = int(ssd_spec["chunk"])
    discrepancy = 0.0
    for length in lengths:
        inputs = SsdInputs(
            x=rng.standard_normal((length, channels)),
            a=rng.uniform(0.05, 1.0, size=(length, channels)),
            b=rng.standard_normal((length, groups * state_dim)),
            c=rng.standard_normal((length, groups * state_dim)),
            n_groups=groups,
        )
        cfg = SsdConfig.from_inputs(inputs, chunk=chunk)
        outputs = {}

        def run_sequential():
            outputs["sequential"] = ssd_sequential(inputs)

        def run_dual():
            outputs["dual"] = ssd_dual_materialized(inputs)

        def run_chunked():
            outputs["chunked"] = ssd_chunked(inputs, cfg)

        rows.append(
            ("ssd_sequential", length, _median_ms(run_sequential, repeats, warmup), "")
        )
        try:
            rows.append(
                ("ssd_dual", length, _median_ms(run_dual, repeats, warmup), "")
            )
        except ResourceLimitError:
            print(f"skipping materialized dual at L={length} (over guard)")
        rows.append(
            ("ssd_chunked", length, _median_ms(run_chunked, repeats, warmup), "")
        )
        present = [outputs[k] for k in sorted(outputs)]
        for i in range(1, len(present)):
            discrepancy = max(
                discrepancy, float(np.abs(present[i] - present[0]).max())
            )
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    bench_path = out_dir / "bench.csv"
    with open(bench_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "seq_len", "median_ms", "params"])
        for kind, length, median, extra in rows:
            writer.writerow([kind, length, repr(float(median)), extra])
    meta = {
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "repeats": repeats,
        "warmup": warmup,
        "max_ssd_discrepancy": discrepancy,
    }
    with open(out_dir / "bench_meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for kind, length, median, _ in rows:
        print(f"{kind:16s} L={length:<6d} median {median:9.3f} ms")
    print(f"max ssd discrepancy: {discrepancy:.3e}")
    print(f"bench table written to {bench_path}")
    return 0


def cmd_inspect(args) -> int:
    resolved = resolve_config(args)
    dump_config(resolved)
    cfg, params, _, _, _ = load_checkpoint(args.checkpoint)
    record = load_features(args.feature)
    if not cfg.use_blocks:
        raise SemanticMismatchError(
            "checkpoint variant has no sequence blocks; nothing to inspect"
        )
    trace: dict = {}
    model_forward(record.features, params, cfg, trace=trace)
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "token_intensity_in" in trace:
        path = out_dir / "intensity.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["token", "input_intensity", "output_intensity"])
            for t, (before, after) in enumerate(
                zip(trace["token_intensity_in"], trace["token_intensity_out"])
            ):
                writer.writerow([t, repr(float(before)), repr(float(after))])
        written.append(path)
    if "power_before" in trace:
        path = out_dir / "spectrum.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin", "power_before", "power_after"])
            for b, (before, after) in enumerate(
                zip(trace["power_before"], trace["power_after"])
            ):
                writer.writerow([b, repr(float(before)), repr(float(after))])
        written.append(path)
    if not written:
        raise SemanticMismatchError(
            "no traceable branch found in the first block"
        )
    for path in written:
        print(f"trace written to {path}")
    return 0


def cmd_synth(args) -> int:
    resolved = resolve_config(args)
    dump_config(resolved)
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"unreadable synthetic spec: {exc}") from exc
    try:
        spec = SyntheticSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic spec: {exc}") from exc
    manifest_path = write_synthetic_dataset(spec, resolved["out"])
    n_files = spec.n_classes * spec.per_class
    print(f"{n_files} feature files and manifest written to {manifest_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tfssd",
        description="Bi-domain state-space sequence classifier toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="dotted-path config override, repeatable",
        )
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="global seed override")

    p_train = sub.add_parser("train", help="cross-validated training")
    common(p_train)
    p_train.add_argument("--manifest", help="dataset manifest CSV")
    p_train.set_defaults(handler=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--manifest", help="dataset manifest CSV")
    p_eval.set_defaults(handler=cmd_eval)

    p_bench = sub.add_parser("bench", help="latency and parameter report")
    common(p_bench)
    p_bench.set_defaults(handler=cmd_bench)

    p_inspect = sub.add_parser("inspect", help="branch traces for one utterance")
    common(p_inspect)
    p_inspect.add_argument("--checkpoint", required=True)
    p_inspect.add_argument("--feature", required=True, help="one feature file")
    p_inspect.set_defaults(handler=cmd_inspect)

    p_synth = sub.add_parser("synth", help="write a synthetic dataset")
    common(p_synth)
    p_synth.add_argument("--spec", required=True, help="SyntheticSpec JSON")
    p_synth.set_defaults(handler=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, InvalidArgumentError, ResourceLimitError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 5
    except SemanticMismatchError as exc:
        print(f"mismatch: {exc}", file=sys.stderr)
        return 4
    except FormatError as exc:
        print(f"malformed artifact: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except TfssdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
