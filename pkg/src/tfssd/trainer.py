"""Optimization loop: AdamW over the full parameter tree, CV orchestration.

Everything is deterministic given the config seed: parameter init, batch
order, and therefore every logged number.  Batch order is drawn from a
seed stream keyed by (seed, fold, epoch); per-fold init is keyed by
(seed, fold).  A non-finite loss, gradient, or parameter aborts the run
with the name of the offending tensor.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DatasetManifest,
    MetricsReport,
    compute_metrics,
    load_dataset,
    make_folds,
    write_metrics_csv,
    metrics_summary,
)
from .errors import InvalidArgumentError, NumericError, ShapeMismatchError
from .losses import LossConfig, PrototypeBank, cmdt_loss, cross_entropy, ser_loss
from .model import (
    ModelConfig,
    ModelParams,
    blank_params,
    init_params,
    model_forward,
    save_checkpoint,
)
from . import autodiff as ad

__all__ = [
    "TrainConfig",
    "AdamWState",
    "init_adamw",
    "adamw_step",
    "EpochStats",
    "batch_loss",
    "train_epoch",
    "evaluate",
    "FoldOutcome",
    "FitResult",
    "fit",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch: int = 32
    epochs: int = 40
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    seed: int = 0
    cmdt_weight: float = 0.1
    tau: float = 0.1

    def __post_init__(self):
        if self.lr <= 0.0:
            raise InvalidArgumentError(f"lr must be positive, got {self.lr}")
        if self.batch < 1:
            raise InvalidArgumentError(f"batch must be >= 1, got {self.batch}")
        if self.epochs < 1:
            raise InvalidArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidArgumentError("betas must lie in [0, 1)")
        if self.eps_opt <= 0.0 or self.weight_decay < 0.0:
            raise InvalidArgumentError("bad optimizer constants")

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, weight=self.cmdt_weight)


@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adamw(named: dict[str, ad.Tensor]) -> AdamWState:
    return AdamWState(
        m={name: np.zeros_like(t.data) for name, t in named.items()},
        v={name: np.zeros_like(t.data) for name, t in named.items()},
    )


def adamw_step(
    named: dict[str, ad.Tensor],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    cfg: TrainConfig,
) -> None:
    """One decoupled-decay Adam update; decay applies before the moment step."""
    state.step += 1
    correction1 = 1.0 - cfg.beta1**state.step
    correction2 = 1.0 - cfg.beta2**state.step
    for name, tensor in named.items():
        grad = grads[name]
        if grad.shape != tensor.data.shape:
            raise ShapeMismatchError(
                f"gradient shape {grad.shape} does not match {name} "
                f"{tensor.data.shape}"
            )
        theta = tensor.data * (1.0 - cfg.lr * cfg.weight_decay)
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * grad
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * (
            grad * grad
        )
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data = theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps_opt)


@dataclass
class EpochStats:
    ce: float
    cmdt: float
    total: float


def batch_loss(
    params: ModelParams,
    model_cfg: ModelConfig,
    features: list[np.ndarray],
    labels: np.ndarray,
    loss_cfg: LossConfig,
) -> tuple[ad.Tensor, float, float]:
    """Mean cross-entropy plus weighted contrastive term over one batch.

    Returns (loss node, ce value, cmdt value).  With weight 0 the
    contrastive term is not built into the graph at all, so parameter
    trajectories match a build without it; its value is still computed
    (detached) for reporting.
    """
    ce_rows = []
    pooled_rows = []
    for x, label in zip(features, labels):
        logits, pooled = model_forward(x, params, model_cfg)
        ce_rows.append(ad.reshape(cross_entropy(logits, int(label)), (1,)))
        pooled_rows.append(ad.reshape(pooled, (1, pooled.shape[0])))
    ce = ad.tmean(ad.concat(ce_rows, axis=0))
    pooled_mat = ad.concat(pooled_rows, axis=0)
    bank = PrototypeBank(params.prototypes)
    if loss_cfg.weight > 0.0:
        cmdt = cmdt_loss(pooled_mat, labels, bank, loss_cfg)
        total = ser_loss(ce, cmdt, loss_cfg)
        return total, float(ce.data), float(cmdt.data)
    total = ser_loss(ce, 0.0, loss_cfg)
    try:
        detached_bank = PrototypeBank(ad.constant(params.prototypes.data))
        cmdt_value = float(
            cmdt_loss(ad.constant(pooled_mat.data), labels, detached_bank, loss_cfg).data
        )
    except InvalidArgumentError:
        cmdt_value = float("nan")
    return total, float(ce.data), cmdt_value


def _check_finite(kind: str, items) -> None:
    for name, arr in items:
        if arr is None or not np.isfinite(arr).all():
            raise NumericError(f"non-finite {kind} detected", tensor_name=name)


def train_epoch(
    params: ModelParams,
    opt_state: AdamWState,
    features: list[np.ndarray],
    labels: np.ndarray,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    epoch: int,
    fold: int = 0,
) -> EpochStats:
    """One pass over the slice: seeded order, one optimizer step per batch."""
    n = len(features)
    if n == 0:
        raise InvalidArgumentError("cannot train on an empty slice")
    loss_cfg = cfg.loss_config()
    named = params.named_tensors()
    order = np.random.default_rng([cfg.seed, 977, fold, epoch]).permutation(n)
    sums = np.zeros(3)
    for start in range(0, n, cfg.batch):
        chosen = order[start : start + cfg.batch]
        batch_feats = [features[i] for i in chosen]
        batch_labels = labels[chosen]
        for tensor in named.values():
            tensor.reset_grad()
        loss, ce_value, cmdt_value = batch_loss(
            params, model_cfg, batch_feats, batch_labels, loss_cfg
        )
        if not np.isfinite(loss.data):
            raise NumericError("non-finite loss", tensor_name="loss")
        loss.backward()
        grads = {name: tensor.grad for name, tensor in named.items()}
        _check_finite("gradient", grads.items())
        adamw_step(named, grads, opt_state, cfg)
        _check_finite(
            "parameter", ((name, t.data) for name, t in named.items())
        )
        weight = len(chosen)
        sums += weight * np.array([ce_value, cmdt_value, float(loss.data)])
    return EpochStats(*(sums / n))


def evaluate(
    params: ModelParams,
    model_cfg: ModelConfig,
    features: list[np.ndarray],
    labels: np.ndarray,
) -> MetricsReport:
    """Argmax predictions (ties to the lowest class id) -> metrics."""
    if len(features) == 0:
        raise InvalidArgumentError("cannot evaluate an empty slice")
    k = model_cfg.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    for x, label in zip(features, labels):
        logits, _ = model_forward(x, params, model_cfg)
        confusion[int(label), int(np.argmax(logits.data))] += 1
    return compute_metrics(confusion)


@dataclass
class FoldOutcome:
    fold: int
    best_epoch: int
    report: MetricsReport
    log_rows: list[dict] = field(default_factory=list)


@dataclass
class FitResult:
    folds: list[FoldOutcome]
    summary: dict

    def aggregate_dict(self) -> dict:
        return {
            "folds": [
                {
                    "fold": outcome.fold,
                    "best_epoch": outcome.best_epoch,
                    "wa": outcome.report.wa,
                    "ua": outcome.report.ua,
                    "wf1": outcome.report.wf1,
                }
                for outcome in self.folds
            ],
            "summary": self.summary,
        }


LOG_COLUMNS = ["epoch", "ce", "cmdt", "total", "eval_wa", "eval_ua", "eval_wf1"]


def _write_log(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    key: (value if isinstance(value, int) else repr(value))
                    for key, value in row.items()
                }
            )


def fit(
    manifest: DatasetManifest,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    n_folds: int,
    out_dir=None,
) -> FitResult:
    """Cross-validated training; optionally writes logs/checkpoints/reports."""
    features, labels, _ = load_dataset(manifest)
    if model_cfg.n_classes != len(manifest.classes):
        raise InvalidArgumentError(
            f"model has {model_cfg.n_classes} classes, manifest "
            f"{len(manifest.classes)}"
        )
    folds = make_folds(manifest, n_folds, cfg.seed)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    outcomes = []
    for split in folds:
        rng = np.random.default_rng([cfg.seed, 31, split.index])
        params = init_params(model_cfg, rng)
        opt_state = init_adamw(params.named_tensors())
        train_feats = [features[i] for i in split.train_ids]
        train_labels = labels[list(split.train_ids)]
        test_feats = [features[i] for i in split.test_ids]
        test_labels = labels[list(split.test_ids)]
        best_wa = -1.0
        best_epoch = -1
        best_report = None
        best_snapshot = None
        rows = []
        for epoch in range(cfg.epochs):
            stats = train_epoch(
                params,
                opt_state,
                train_feats,
                train_labels,
                model_cfg,
                cfg,
                epoch,
                fold=split.index,
            )
            report = evaluate(params, model_cfg, test_feats, test_labels)
            rows.append(
                {
                    "epoch": epoch,
                    "ce": stats.ce,
                    "cmdt": stats.cmdt,
                    "total": stats.total,
                    "eval_wa": report.wa,
                    "eval_ua": report.ua,
                    "eval_wf1": report.wf1,
                }
            )
            if report.wa > best_wa:
                best_wa = report.wa
                best_epoch = epoch
                best_report = report
                best_snapshot = {
                    name: tensor.data.copy()
                    for name, tensor in params.named_tensors().items()
                }
        outcome = FoldOutcome(split.index, best_epoch, best_report, rows)
        outcomes.append(outcome)
        if out_dir is not None:
            _write_log(out_dir / f"fold{split.index}_log.csv", rows)
            keeper = blank_params(model_cfg)
            for name, tensor in keeper.named_tensors().items():
                tensor.data = best_snapshot[name]
            save_checkpoint(
                out_dir / f"fold{split.index}_best.ckpt",
                model_cfg,
                keeper,
                step=opt_state.step,
                seed=cfg.seed,
                extra={
                    "classes": manifest.classes,
                    "fold": split.index,
                    "best_epoch": best_epoch,
                },
            )
    result = FitResult(
        outcomes, metrics_summary([outcome.report for outcome in outcomes])
    )
    if out_dir is not None:
        write_metrics_csv(
            out_dir / "metrics.csv", [outcome.report for outcome in outcomes]
        )
        with open(out_dir / "aggregate.json", "w", encoding="utf-8") as fh:
            json.dump(result.aggregate_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return result
