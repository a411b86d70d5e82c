"""Training objectives: cross-entropy plus a frequency-domain contrastive term.

The contrastive term moves each utterance's pooled vector (after an FFT into
the complex domain) toward a learnable prototype of its own class and away
from the prototypes of the other labels present in the batch, using complex
cosine similarity and an InfoNCE shape: the positive pair sits in its own
denominator, so the loss is nonnegative and exactly zero for a batch of one.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import numerics
from .autodiff import Tensor
from .errors import InvalidArgumentError, ShapeMismatchError

__all__ = [
    "LossConfig",
    "PrototypeBank",
    "vec_sim",
    "to_complex_domain",
    "cmdt_loss",
    "cross_entropy",
    "ser_loss",
]


@dataclass(frozen=True)
class LossConfig:
    """tau: contrastive temperature; weight: contrastive share of the total."""

    tau: float = 0.1
    weight: float = 0.1

    def __post_init__(self):
        if self.tau <= 0.0:
            raise InvalidArgumentError(f"tau must be positive, got {self.tau}")
        if self.weight < 0.0:
            raise InvalidArgumentError(
                f"contrastive weight must be >= 0, got {self.weight}"
            )


@dataclass
class PrototypeBank:
    """One learnable anchor target per class, rows of shape (K, D)."""

    prototypes: Tensor

    def __post_init__(self):
        if self.prototypes.ndim != 2:
            raise ShapeMismatchError(
                f"prototypes must be (K, D), got {self.prototypes.shape}"
            )


def vec_sim(u, v) -> float:
    """Complex cosine similarity Re(sum(u * conj(v))) / (|u| |v|), in [-1, 1]."""
    u = np.asarray(u, dtype=np.complex128).ravel()
    v = np.asarray(v, dtype=np.complex128).ravel()
    if u.shape != v.shape:
        raise ShapeMismatchError(f"length mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise InvalidArgumentError("vec_sim is undefined for zero-magnitude vectors")
    return float(np.real(np.sum(u * np.conj(v))) / (nu * nv))


def to_complex_domain(v) -> np.ndarray:
    """Real vector -> one-sided spectrum used as its complex-domain image."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 2:
        raise InvalidArgumentError(
            f"need a real vector of length >= 2, got shape {v.shape}"
        )
    return numerics.fft_real_1d(v)


def _spectrum_parts(rows: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Per-row one-sided spectrum -> (real part, imag part, row norms)."""
    spec = ad.rfft(rows, axis=1)
    re = ad.creal(spec)
    im = ad.cimag(spec)
    norms = ad.sqrt(ad.tsum(re * re + im * im, axis=1))
    return re, im, norms


def cmdt_loss(
    pooled: Tensor, labels, bank: PrototypeBank, cfg: LossConfig
) -> Tensor:
    """Batch contrastive loss over complex-domain pooled vectors.

    Anchors are the FFTs of the pooled rows; the target of row i is the FFT
    of the prototype for label i, and the denominator of row i runs over the
    targets of every row in the batch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if pooled.ndim != 2 or pooled.shape[0] < 1:
        raise ShapeMismatchError(
            f"pooled batch must be (N, D) with N >= 1, got {pooled.shape}"
        )
    if pooled.shape[1] < 2:
        raise InvalidArgumentError("pooled width must be >= 2 for the FFT image")
    if labels.shape != (pooled.shape[0],):
        raise ShapeMismatchError(
            f"got {labels.shape[0] if labels.ndim else 0} labels "
            f"for {pooled.shape[0]} rows"
        )
    k = bank.prototypes.shape[0]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InvalidArgumentError(f"labels must lie in [0, {k})")
    if bank.prototypes.shape[1] != pooled.shape[1]:
        raise ShapeMismatchError(
            f"prototype width {bank.prototypes.shape[1]} does not match "
            f"pooled width {pooled.shape[1]}"
        )

    targets = ad.take_rows(bank.prototypes, labels)
    re_a, im_a, norm_a = _spectrum_parts(pooled)
    re_t, im_t, norm_t = _spectrum_parts(targets)
    if norm_a.data.min() == 0.0:
        raise InvalidArgumentError("zero-magnitude anchor spectrum in batch")
    if norm_t.data.min() == 0.0:
        raise InvalidArgumentError("zero-magnitude prototype spectrum in batch")

    n = pooled.shape[0]
    dots = re_a @ re_t.T + im_a @ im_t.T  # (N, N): Re(anchor_i . conj(target_j))
    denom = ad.reshape(norm_a, (n, 1)) * ad.reshape(norm_t, (1, n))
    sims = (dots / denom) * (1.0 / cfg.tau)
    diagonal = ad.tsum(sims * ad.constant(np.eye(n)), axis=1)
    return ad.tmean(ad.logsumexp(sims, axis=1) - diagonal)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log-softmax probability of ``label``, max-shifted."""
    if logits.ndim != 1:
        raise ShapeMismatchError(f"logits must be 1-D, got shape {logits.shape}")
    k = logits.shape[0]
    label = int(label)
    if not 0 <= label < k:
        raise InvalidArgumentError(f"label {label} outside [0, {k})")
    log_norm = ad.logsumexp(ad.reshape(logits, (1, k)), axis=1)
    picked = ad.slice_axis(logits, 0, label, 1)
    return ad.reshape(log_norm, ()) - ad.reshape(picked, ())


def ser_loss(ce: Tensor, cmdt, cfg: LossConfig) -> Tensor:
    """Weighted total: cross-entropy plus weight * contrastive."""
    return ce + ad.as_tensor(cmdt) * cfg.weight
