"""Dataset plumbing: feature files, manifests, folds, synthetic data, metrics.

Feature files are binary for exactness: magic "TFF1", u32 version, u32 id
length + UTF-8 id, u32 L, u32 D, u32 label, L*D little-endian float32
values row-major, trailing CRC-32 of the payload bytes.  A JSON import path
exists for hand-written fixtures.

The synthetic generator plants two independent class cues in Gaussian token
noise: a per-class temporal energy envelope and a per-class carrier
sinusoid along the token axis, confined to a random subset of channels.
Either cue can be disabled (same envelope everywhere, or same carrier bin
everywhere), which is how the ablation datasets are built.
"""

import csv
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    InvalidArgumentError,
    SemanticMismatchError,
    ShapeMismatchError,
)

__all__ = [
    "FeatureFile",
    "write_feature_file",
    "load_feature_file",
    "load_feature_text",
    "load_features",
    "ManifestEntry",
    "DatasetManifest",
    "write_manifest",
    "load_manifest",
    "load_dataset",
    "FoldSplit",
    "make_folds",
    "SyntheticSpec",
    "envelope",
    "synth_generate",
    "write_synthetic_dataset",
    "periodogram_predictions",
    "MetricsReport",
    "compute_metrics",
    "write_metrics_csv",
    "metrics_summary",
]

FEATURE_MAGIC = b"TFF1"
FEATURE_VERSION = 1


@dataclass
class FeatureFile:
    """One utterance: id, (L, D) float features, integer class label."""

    uid: str
    features: np.ndarray
    label: int

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2 or min(self.features.shape) < 1:
            raise ShapeMismatchError(
                f"features must be a nonempty (L, D) array, got "
                f"{self.features.shape}"
            )
        if self.label < 0:
            raise InvalidArgumentError(f"label must be >= 0, got {self.label}")


def write_feature_file(path, record: FeatureFile) -> None:
    payload = np.ascontiguousarray(record.features, dtype="<f4").tobytes()
    uid_bytes = record.uid.encode("utf-8")
    length, dim = record.features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<I", FEATURE_VERSION))
        fh.write(struct.pack("<I", len(uid_bytes)))
        fh.write(uid_bytes)
        fh.write(struct.pack("<III", length, dim, record.label))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load_feature_file(path) -> FeatureFile:
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated feature file while reading {what}", pos)
        out = blob[pos : pos + n]
        pos += n
        return out

    magic = take(4, "magic")
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad feature-file magic {magic!r}", 0)
    version = struct.unpack("<I", take(4, "version"))[0]
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature-file version {version}", 4)
    uid_len = struct.unpack("<I", take(4, "id length"))[0]
    uid = take(uid_len, "id").decode("utf-8")
    length, dim, label = struct.unpack("<III", take(12, "shape and label"))
    if length < 1 or dim < 1:
        raise FormatError(f"degenerate shape ({length}, {dim})", pos - 12)
    payload_at = pos
    payload = take(4 * length * dim, f"payload of {length}x{dim} floats")
    crc = struct.unpack("<I", take(4, "payload checksum"))[0]
    actual_crc = zlib.crc32(payload)
    if crc != actual_crc:
        raise FormatError(
            f"payload checksum mismatch: stored {crc:#010x}, "
            f"computed {actual_crc:#010x}",
            pos - 4,
        )
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after checksum", pos)
    features = np.frombuffer(payload, dtype="<f4").reshape(length, dim)
    finite = np.isfinite(features)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.ravel())[0])
        raise FormatError(
            f"non-finite feature value at flat index {bad}", payload_at + 4 * bad
        )
    return FeatureFile(uid, features.astype(np.float64), int(label))


def load_feature_text(path) -> FeatureFile:
    """JSON fixture path: {"id": ..., "label": ..., "features": [[...], ...]}."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable feature JSON: {exc}", exc.pos) from exc
    try:
        record = FeatureFile(
            str(raw["id"]),
            np.asarray(raw["features"], dtype=np.float64),
            int(raw["label"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad feature JSON structure: {exc}") from exc
    if not np.isfinite(record.features).all():
        raise FormatError("non-finite feature value in JSON payload")
    return record


def load_features(path) -> FeatureFile:
    """Dispatch on extension: .json fixtures, binary otherwise."""
    if str(path).endswith(".json"):
        return load_feature_text(path)
    return load_feature_file(path)


# -- manifests ---------------------------------------------------------------


@dataclass
class ManifestEntry:
    path: str
    label: int
    fold_hint: int | None = None


@dataclass
class DatasetManifest:
    classes: list[str]
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)
    note: str | None = None

    def __post_init__(self):
        k = len(self.classes)
        if k < 2:
            raise InvalidArgumentError(f"need at least 2 classes, got {k}")
        seen = set()
        for entry in self.entries:
            if entry.path in seen:
                raise InvalidArgumentError(f"duplicate manifest path {entry.path!r}")
            seen.add(entry.path)
            if not 0 <= entry.label < k:
                raise SemanticMismatchError(
                    f"label {entry.label} of {entry.path!r} outside [0, {k})"
                )

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path


def _sidecar_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".classes.json")


def write_manifest(manifest_path, manifest: DatasetManifest) -> None:
    manifest_path = Path(manifest_path)
    with open(manifest_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "fold_hint"])
        for entry in manifest.entries:
            hint = "" if entry.fold_hint is None else str(entry.fold_hint)
            writer.writerow([entry.path, entry.label, hint])
    sidecar = {"classes": manifest.classes}
    if manifest.note is not None:
        sidecar["sample_rate_note"] = manifest.note
    with open(_sidecar_path(manifest_path), "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(manifest_path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    sidecar_file = _sidecar_path(manifest_path)
    try:
        with open(sidecar_file, "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable class sidecar: {exc}", exc.pos) from exc
    classes = sidecar.get("classes")
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise FormatError(f"sidecar {sidecar_file} lacks a valid class list")
    entries = []
    with open(manifest_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label", "fold_hint"]:
            raise FormatError(
                f"manifest header must be path,label,fold_hint; got {header}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"manifest line {line_no} has {len(row)} fields")
            try:
                hint = None if row[2] == "" else int(row[2])
                entries.append(ManifestEntry(row[0], int(row[1]), hint))
            except ValueError as exc:
                raise FormatError(f"manifest line {line_no}: {exc}") from exc
    return DatasetManifest(
        classes,
        entries,
        root=manifest_path.parent,
        note=sidecar.get("sample_rate_note"),
    )


def load_dataset(
    manifest: DatasetManifest,
) -> tuple[list[np.ndarray], np.ndarray, list[str]]:
    """Load all features in manifest order; widths must agree across files."""
    features, labels, ids = [], [], []
    width = None
    for entry in manifest.entries:
        record = load_features(manifest.resolve(entry))
        if record.label != entry.label:
            raise SemanticMismatchError(
                f"{entry.path!r}: file label {record.label} disagrees with "
                f"manifest label {entry.label}"
            )
        if width is None:
            width = record.features.shape[1]
        elif record.features.shape[1] != width:
            raise SemanticMismatchError(
                f"{entry.path!r}: width {record.features.shape[1]} differs "
                f"from dataset width {width}"
            )
        features.append(record.features)
        labels.append(entry.label)
        ids.append(record.uid)
    return features, np.asarray(labels, dtype=np.int64), ids


# -- folds ---------------------------------------------------------------------


@dataclass(frozen=True)
class FoldSplit:
    index: int
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]


def make_folds(manifest: DatasetManifest, n_folds: int, seed: int) -> list[FoldSplit]:
    """Stratified splits; explicit fold hints win when every entry has one."""
    n = len(manifest.entries)
    if n_folds < 2:
        raise InvalidArgumentError(f"need at least 2 folds, got {n_folds}")
    if n_folds > n:
        raise InvalidArgumentError(f"cannot cut {n} samples into {n_folds} folds")
    hints = [entry.fold_hint for entry in manifest.entries]
    assignment = np.empty(n, dtype=np.int64)
    if all(h is not None for h in hints):
        for i, hint in enumerate(hints):
            if not 0 <= hint < n_folds:
                raise InvalidArgumentError(
                    f"fold hint {hint} outside [0, {n_folds})"
                )
            assignment[i] = hint
    elif any(h is not None for h in hints):
        raise InvalidArgumentError(
            "fold hints must be given for every entry or for none"
        )
    else:
        rng = np.random.default_rng(seed)
        labels = np.asarray([entry.label for entry in manifest.entries])
        for label in np.unique(labels):
            members = np.flatnonzero(labels == label)
            members = members[rng.permutation(members.size)]
            for position, idx in enumerate(members):
                assignment[idx] = position % n_folds
    folds = []
    everything = np.arange(n)
    for fold in range(n_folds):
        test = everything[assignment == fold]
        if test.size == 0:
            raise InvalidArgumentError(f"fold {fold} received no test samples")
        train = everything[assignment != fold]
        folds.append(FoldSplit(fold, tuple(train.tolist()), tuple(test.tolist())))
    return folds


# -- synthetic dataset -----------------------------------------------------------


def envelope(env_id: int, length: int) -> np.ndarray:
    """Temporal energy profile library; all profiles stay positive."""
    if length < 1:
        raise InvalidArgumentError("envelope length must be >= 1")
    if length == 1:
        return np.ones(1)
    r = np.linspace(0.0, 1.0, length)
    if env_id == 0:
        return np.ones(length)
    if env_id == 1:
        return 0.25 + 1.5 * r
    if env_id == 2:
        return 1.75 - 1.5 * r
    if env_id == 3:
        return 0.25 + 1.5 * np.sin(np.pi * r)
    if env_id == 4:
        return 1.75 - 1.5 * np.sin(np.pi * r)
    if env_id == 5:
        return 0.25 + 1.5 * np.sin(2.0 * np.pi * r) ** 2
    raise InvalidArgumentError(f"unknown envelope id {env_id}")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic labeled dataset.

    Duplicate carrier bins are allowed on purpose: giving every class the
    same bin removes the frequency cue, which the ablation datasets rely on.
    """

    n_classes: int
    per_class: int
    seq_len: int
    dim: int
    carrier_bins: tuple[int, ...]
    envelope_ids: tuple[int, ...]
    noise: float = 0.1
    seed: int = 0
    carrier_amp: float = 1.0
    channel_frac: float = 0.5
    token_scale: float = 1.0
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "carrier_bins", tuple(self.carrier_bins))
        object.__setattr__(self, "envelope_ids", tuple(self.envelope_ids))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.n_classes < 2:
            raise InvalidArgumentError("need at least 2 classes")
        if self.per_class < 1 or self.seq_len < 2 or self.dim < 2:
            raise InvalidArgumentError("per_class >= 1, seq_len >= 2, dim >= 2")
        if len(self.carrier_bins) != self.n_classes:
            raise InvalidArgumentError("one carrier bin per class required")
        if len(self.envelope_ids) != self.n_classes:
            raise InvalidArgumentError("one envelope id per class required")
        bins_limit = self.seq_len // 2 + 1
        for b in self.carrier_bins:
            if not 0 <= b < bins_limit:
                raise InvalidArgumentError(
                    f"carrier bin {b} outside [0, {bins_limit})"
                )
        if self.noise < 0.0:
            raise InvalidArgumentError("noise level must be >= 0")
        if not 0.0 < self.channel_frac <= 1.0:
            raise InvalidArgumentError("channel_frac must be in (0, 1]")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise InvalidArgumentError("one class name per class required")

    def names(self) -> list[str]:
        if self.class_names is not None:
            return list(self.class_names)
        return [f"class{i}" for i in range(self.n_classes)]


def synth_generate(spec: SyntheticSpec) -> list[FeatureFile]:
    """Deterministic dataset: same spec (and seed) gives identical bytes."""
    rng = np.random.default_rng(spec.seed)
    steps = np.arange(spec.seq_len)
    n_carrier_channels = max(1, round(spec.channel_frac * spec.dim))
    records = []
    for class_id in range(spec.n_classes):
        profile = envelope(spec.envelope_ids[class_id], spec.seq_len)
        bin_id = spec.carrier_bins[class_id]
        for sample in range(spec.per_class):
            tokens = rng.standard_normal((spec.seq_len, spec.dim))
            tokens *= spec.token_scale * profile[:, None]
            channels = rng.choice(spec.dim, size=n_carrier_channels, replace=False)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            carrier = spec.carrier_amp * np.sin(
                2.0 * np.pi * bin_id * steps / spec.seq_len + phase
            )
            tokens[:, channels] += carrier[:, None]
            tokens += spec.noise * rng.standard_normal((spec.seq_len, spec.dim))
            records.append(
                FeatureFile(
                    f"synth-{class_id}-{sample:04d}",
                    tokens.astype(np.float32),
                    class_id,
                )
            )
    return records


def write_synthetic_dataset(spec: SyntheticSpec, out_dir) -> Path:
    """Write feature files plus manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    feature_dir = out_dir / "features"
    feature_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for record in synth_generate(spec):
        rel = f"features/{record.uid}.tff"
        write_feature_file(out_dir / rel, record)
        entries.append(ManifestEntry(rel, record.label))
    manifest = DatasetManifest(
        spec.names(),
        entries,
        root=out_dir,
        note="synthetic stand-in; real features assume 16 kHz source audio",
    )
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, manifest)
    return manifest_path


def periodogram_predictions(
    features: list[np.ndarray], spec: SyntheticSpec
) -> np.ndarray:
    """Nearest-carrier oracle: argmax of mean bin power over the class bins.

    Ties go to the lowest class id, so with identical carriers everywhere
    this predicts class 0 always (chance level on balanced data).
    """
    predictions = np.empty(len(features), dtype=np.int64)
    for i, mat in enumerate(features):
        spectrum = np.fft.rfft(mat, axis=0)
        power = (spectrum.real**2 + spectrum.imag**2).mean(axis=1)
        scores = [power[b] for b in spec.carrier_bins]
        predictions[i] = int(np.argmax(scores))
    return predictions


# -- metrics ---------------------------------------------------------------------


@dataclass
class MetricsReport:
    confusion: np.ndarray
    wa: float
    ua: float
    wf1: float


def compute_metrics(confusion) -> MetricsReport:
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeMismatchError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise InvalidArgumentError("confusion counts must be nonnegative")
    total = cm.sum()
    if total == 0:
        raise InvalidArgumentError("confusion matrix has no observations")
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    diag = np.diag(cm)
    wa = float(diag.sum() / total)
    with_support = support > 0
    recalls = np.divide(diag, support, out=np.zeros_like(diag), where=with_support)
    ua = float(recalls[with_support].mean())
    precisions = np.divide(
        diag, predicted, out=np.zeros_like(diag), where=predicted > 0
    )
    pr_sum = precisions + recalls
    f1 = np.divide(
        2.0 * precisions * recalls, pr_sum, out=np.zeros_like(diag), where=pr_sum > 0
    )
    wf1 = float(((support / total) * f1).sum())
    return MetricsReport(np.asarray(confusion, dtype=np.int64), wa, ua, wf1)


def write_metrics_csv(path, reports: list[MetricsReport]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "wa", "ua", "wf1"])
        for fold, report in enumerate(reports):
            writer.writerow(
                [fold, repr(report.wa), repr(report.ua), repr(report.wf1)]
            )


def metrics_summary(reports: list[MetricsReport]) -> dict:
    """Mean and population standard deviation of each metric across folds."""
    summary = {}
    for name in ("wa", "ua", "wf1"):
        values = np.asarray([getattr(r, name) for r in reports])
        summary[name] = {
            "mean": float(values.mean()),
            "std": float(values.std()),
        }
    return summary
