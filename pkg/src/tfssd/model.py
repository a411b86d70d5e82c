"""End-to-end classifier over precomputed embedding sequences.

Pipeline: input projection + one pre-norm multi-head self-attention layer
(optional), a stack of bi-domain blocks (optional), mean pooling over
tokens, and a two-layer MLP head.  The pooled vector is exposed alongside
the logits because the contrastive loss consumes it.

The checkpoint container is a single binary file: magic "TFMB", a u32
format version, a length-prefixed JSON header (config, step, seed, extras),
then one record per parameter tensor (u32 name length, UTF-8 name, u32
rank, u32 extents, float64 little-endian payload, row-major).
"""

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    ConfigError,
    FormatError,
    InvalidArgumentError,
    SemanticMismatchError,
    ShapeMismatchError,
)
from .tf_block import (
    LN_EPS,
    RHO_INIT,
    TfBlockConfig,
    TfBlockParams,
    BranchParams,
    tf_block_forward,
)

__all__ = [
    "ModelConfig",
    "EncoderParams",
    "ClassifierParams",
    "ModelParams",
    "init_params",
    "blank_params",
    "attention_encoder",
    "pool_mean",
    "classifier_forward",
    "model_forward",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"TFMB"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    d_in: int
    d_model: int
    heads: int
    block: TfBlockConfig
    n_blocks: int = 1
    n_classes: int = 4
    mlp_hidden: int = 64
    use_encoder: bool = True
    use_blocks: bool = True

    def __post_init__(self):
        if self.d_in < 1 or self.d_model < 1 or self.mlp_hidden < 1:
            raise ConfigError("model widths must be positive")
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by heads {self.heads}"
            )
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.use_blocks and self.block.d_model != self.width:
            raise ConfigError(
                f"block width {self.block.d_model} must match the stream "
                f"width {self.width} at its position in the pipeline"
            )

    @property
    def width(self) -> int:
        """Token width entering the blocks, pooling, and classifier."""
        return self.d_model if self.use_encoder else self.d_in

    def to_dict(self) -> dict:
        return {
            "d_in": self.d_in,
            "d_model": self.d_model,
            "heads": self.heads,
            "n_blocks": self.n_blocks,
            "n_classes": self.n_classes,
            "mlp_hidden": self.mlp_hidden,
            "use_encoder": self.use_encoder,
            "use_blocks": self.use_blocks,
            "block": {
                "d_model": self.block.d_model,
                "d_inner": self.block.d_inner,
                "d_state": self.block.d_state,
                "n_groups": self.block.n_groups,
                "d_conv": self.block.d_conv,
                "chunk": self.block.chunk,
                "gate_mode": self.block.gate_mode,
                "branch_domains": list(self.block.branch_domains),
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        try:
            block_raw = dict(raw["block"])
            block_raw["branch_domains"] = tuple(block_raw["branch_domains"])
            block = TfBlockConfig(**block_raw)
            fields = {k: v for k, v in raw.items() if k != "block"}
            return cls(block=block, **fields)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad model config: {exc}") from exc


@dataclass
class EncoderParams:
    in_proj: Tensor
    in_bias: Tensor
    norm_gain: Tensor
    norm_shift: Tensor
    q_proj: Tensor
    q_bias: Tensor
    k_proj: Tensor
    k_bias: Tensor
    v_proj: Tensor
    v_bias: Tensor
    o_proj: Tensor
    o_bias: Tensor


@dataclass
class ClassifierParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class ModelParams:
    encoder: EncoderParams | None
    blocks: list[TfBlockParams]
    classifier: ClassifierParams
    prototypes: Tensor

    def named_tensors(self) -> dict[str, Tensor]:
        """All learnable tensors keyed by hierarchical name, in stable order."""
        named: dict[str, Tensor] = {}
        if self.encoder is not None:
            for attr in (
                "in_proj",
                "in_bias",
                "norm_gain",
                "norm_shift",
                "q_proj",
                "q_bias",
                "k_proj",
                "k_bias",
                "v_proj",
                "v_bias",
                "o_proj",
                "o_bias",
            ):
                named[f"encoder.{attr}"] = getattr(self.encoder, attr)
        for i, block in enumerate(self.blocks):
            prefix = f"blocks.{i}"
            named[f"{prefix}.norm_gain"] = block.norm_gain
            named[f"{prefix}.norm_shift"] = block.norm_shift
            for j, branch in enumerate(block.branches):
                bp = f"{prefix}.branches.{j}"
                named[f"{bp}.proj"] = branch.proj
                if branch.domain == "time":
                    named[f"{bp}.conv_kernel"] = branch.conv_kernel
                    named[f"{bp}.conv_bias"] = branch.conv_bias
                else:
                    named[f"{bp}.rho_omega"] = branch.rho_omega
            named[f"{prefix}.out_proj"] = block.out_proj
            named[f"{prefix}.out_bias"] = block.out_bias
        named["classifier.w1"] = self.classifier.w1
        named["classifier.b1"] = self.classifier.b1
        named["classifier.w2"] = self.classifier.w2
        named["classifier.b2"] = self.classifier.b2
        named["prototypes"] = self.prototypes
        return named


def _build_params(cfg: ModelConfig, draw) -> ModelParams:
    """Assemble the parameter tree; ``draw(shape, fan_in)`` fills weights."""

    def weight(shape, fan_in):
        return Tensor(draw(shape, fan_in), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape), requires_grad=True)

    encoder = None
    if cfg.use_encoder:
        d = cfg.d_model
        encoder = EncoderParams(
            in_proj=weight((cfg.d_in, d), cfg.d_in),
            in_bias=zeros(d),
            norm_gain=ones(d),
            norm_shift=zeros(d),
            q_proj=weight((d, d), d),
            q_bias=zeros(d),
            k_proj=weight((d, d), d),
            k_bias=zeros(d),
            v_proj=weight((d, d), d),
            v_bias=zeros(d),
            o_proj=weight((d, d), d),
            o_bias=zeros(d),
        )
    blocks = []
    if cfg.use_blocks:
        bc = cfg.block
        for _ in range(cfg.n_blocks):
            block = TfBlockParams(
                norm_gain=ones(bc.d_model),
                norm_shift=zeros(bc.d_model),
            )
            for domain in bc.branch_domains:
                branch = BranchParams(
                    domain=domain,
                    proj=weight((bc.d_model, bc.proj_width), bc.d_model),
                )
                if domain == "time":
                    branch.conv_kernel = weight((bc.d_conv, bc.proj_width), bc.d_conv)
                    branch.conv_bias = zeros(bc.proj_width)
                else:
                    branch.rho_omega = Tensor(np.float64(RHO_INIT), requires_grad=True)
                block.branches.append(branch)
            cat_width = len(bc.branch_domains) * bc.d_inner
            block.out_proj = weight((cat_width, bc.d_model), cat_width)
            block.out_bias = zeros(bc.d_model)
            blocks.append(block)
    classifier = ClassifierParams(
        w1=weight((cfg.width, cfg.mlp_hidden), cfg.width),
        b1=zeros(cfg.mlp_hidden),
        w2=weight((cfg.mlp_hidden, cfg.n_classes), cfg.mlp_hidden),
        b2=zeros(cfg.n_classes),
    )
    prototypes = weight((cfg.n_classes, cfg.width), cfg.width)
    return ModelParams(encoder, blocks, classifier, prototypes)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Centered uniform init at scale 1/sqrt(fan_in); biases and shifts zero."""

    def draw(shape, fan_in):
        scale = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-scale, scale, size=shape)

    return _build_params(cfg, draw)


def blank_params(cfg: ModelConfig) -> ModelParams:
    """All-zero parameter tree, used as a fill target by loaders."""
    return _build_params(cfg, lambda shape, fan_in: np.zeros(shape))


def attention_encoder(x: Tensor, enc: EncoderParams, cfg: ModelConfig) -> Tensor:
    """Input projection, then one pre-norm self-attention layer with residual."""
    if x.ndim != 2 or x.shape[1] != cfg.d_in:
        raise ShapeMismatchError(f"expected input (L, {cfg.d_in}), got {x.shape}")
    if x.shape[0] < 1:
        raise InvalidArgumentError("need at least one token")
    z = x @ enc.in_proj + enc.in_bias
    u = ad.layer_norm(z, enc.norm_gain, enc.norm_shift, LN_EPS)
    q = u @ enc.q_proj + enc.q_bias
    k = u @ enc.k_proj + enc.k_bias
    v = u @ enc.v_proj + enc.v_bias
    head_width = cfg.d_model // cfg.heads
    scale = 1.0 / math.sqrt(head_width)
    mixed = []
    for h in range(cfg.heads):
        qh = ad.slice_axis(q, 1, h * head_width, head_width)
        kh = ad.slice_axis(k, 1, h * head_width, head_width)
        vh = ad.slice_axis(v, 1, h * head_width, head_width)
        scores = (qh @ kh.T) * scale
        weights = ad.softmax(scores, axis=1)
        mixed.append(weights @ vh)
    merged = ad.concat(mixed, axis=1)
    return z + (merged @ enc.o_proj + enc.o_bias)


def pool_mean(tokens: Tensor) -> Tensor:
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise InvalidArgumentError(
            f"pooling needs a nonempty (L, D) input, got shape {tokens.shape}"
        )
    return ad.tmean(tokens, axis=0)


def classifier_forward(pooled: Tensor, clf: ClassifierParams) -> Tensor:
    hidden = ad.silu(pooled @ clf.w1 + clf.b1)
    return hidden @ clf.w2 + clf.b2


def model_forward(
    x, params: ModelParams, cfg: ModelConfig, trace: dict | None = None
) -> tuple[Tensor, Tensor]:
    """Run the full pipeline; returns (logits, pooled token vector)."""
    tokens = ad.as_tensor(x)
    if cfg.use_encoder:
        tokens = attention_encoder(tokens, params.encoder, cfg)
    if cfg.use_blocks:
        for block in params.blocks:
            tokens = tf_block_forward(tokens, block, cfg.block, trace=trace)
            trace = None  # only the first block is traced
    pooled = pool_mean(tokens)
    return classifier_forward(pooled, params.classifier), pooled


def param_count(cfg: ModelConfig) -> int:
    """Closed-form learnable-scalar count; must match the tensor enumeration."""
    total = 0
    if cfg.use_encoder:
        d = cfg.d_model
        total += cfg.d_in * d + d  # input projection
        total += 2 * d  # norm
        total += 4 * (d * d + d)  # q, k, v, o
    if cfg.use_blocks:
        bc = cfg.block
        per_block = 2 * bc.d_model
        for domain in bc.branch_domains:
            per_block += bc.d_model * bc.proj_width
            if domain == "time":
                per_block += bc.d_conv * bc.proj_width + bc.proj_width
            else:
                per_block += 1
        cat_width = len(bc.branch_domains) * bc.d_inner
        per_block += cat_width * bc.d_model + bc.d_model
        total += cfg.n_blocks * per_block
    total += cfg.width * cfg.mlp_hidden + cfg.mlp_hidden
    total += cfg.mlp_hidden * cfg.n_classes + cfg.n_classes
    total += cfg.n_classes * cfg.width  # class prototypes
    return total


# -- checkpoint container --------------------------------------------------------


def save_checkpoint(
    path,
    cfg: ModelConfig,
    params: ModelParams,
    step: int,
    seed: int,
    extra: dict | None = None,
) -> None:
    header = {
        "config": cfg.to_dict(),
        "step": int(step),
        "seed": int(seed),
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(header_bytes)))
    buf.write(header_bytes)
    for name, tensor in params.named_tensors().items():
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_bytes)))
        buf.write(name_bytes)
        arr = np.asarray(tensor.data, dtype="<f8", order="C")
        buf.write(struct.pack("<I", arr.ndim))
        for extent in arr.shape:
            buf.write(struct.pack("<I", extent))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams, int, int, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)
    magic = reader.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}", 0)
    version = reader.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    header_len = reader.u32("header length")
    header_raw = reader.take(header_len, "header")
    try:
        header = json.loads(header_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", 12) from exc
    cfg = ModelConfig.from_dict(header["config"])
    loaded: dict[str, np.ndarray] = {}
    while reader.pos < len(blob):
        at = reader.pos
        name_len = reader.u32("tensor name length")
        name = reader.take(name_len, "tensor name").decode("utf-8")
        rank = reader.u32("tensor rank")
        shape = tuple(reader.u32("tensor extent") for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = reader.take(8 * count, f"payload of {name}")
        if name in loaded:
            raise FormatError(f"duplicate tensor record {name!r}", at)
        loaded[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    params = blank_params(cfg)
    expected = params.named_tensors()
    if set(expected) != set(loaded):
        missing = sorted(set(expected) - set(loaded))
        surplus = sorted(set(loaded) - set(expected))
        raise SemanticMismatchError(
            f"checkpoint tensors do not match config: missing {missing}, "
            f"unexpected {surplus}"
        )
    for name, tensor in expected.items():
        if loaded[name].shape != tensor.data.shape:
            raise SemanticMismatchError(
                f"tensor {name!r} has shape {loaded[name].shape}, "
                f"config expects {tensor.data.shape}"
            )
        tensor.data = loaded[name]
    return cfg, params, int(header["step"]), int(header["seed"]), header.get("extra", {})
