"""Bi-domain sequence block: a time branch and a frequency branch over one scan.

The block pre-normalizes its input once, projects it separately for each
branch, runs each branch's selective state-space scan, concatenates the
branch outputs, projects back to model width, and adds the residual.

The time branch conditions the scan streams with a causal depthwise
convolution and SiLU.  The frequency branch instead moves the projected
columns into the frequency domain, suppresses low-power bins with a
learnable threshold gate, and reconstructs before scanning.  The decay
columns bypass the FFT in the frequency branch but do pass through the
convolution in the time branch.

Raw decay columns are mapped through a = exp(-softplus(raw)) so every decay
lands in (0, 1) and the scan stays stable regardless of parameter drift.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import numerics
from .autodiff import Tensor
from .errors import InvalidArgumentError, ShapeMismatchError
from .ssd import ssd_scan

__all__ = [
    "LN_EPS",
    "RHO_INIT",
    "TfBlockConfig",
    "BranchParams",
    "TfBlockParams",
    "init_tf_block",
    "project_inputs",
    "decay_from_raw",
    "temporal_branch",
    "spectral_gate",
    "frequency_branch",
    "tf_block_forward",
]

LN_EPS = 1e-5

# softplus(RHO_INIT) == 0.5: the gate threshold starts at half of the
# per-column mean normalized power.
RHO_INIT = math.log(math.expm1(0.5))

_DOMAINS = ("time", "freq")
_GATE_MODES = ("soft", "hard")


@dataclass(frozen=True)
class TfBlockConfig:
    """Shape and mode switches for one block.

    d_model is the residual width, d_inner the per-branch scan width,
    d_state/n_groups the scan's state layout, d_conv the causal kernel
    length, and branch_domains the ordered branch kinds (the canonical
    block is ("time", "freq"); the dual-time ablation swaps the second).
    """

    d_model: int
    d_inner: int
    d_state: int
    n_groups: int = 1
    d_conv: int = 3
    chunk: int = 64
    gate_mode: str = "soft"
    branch_domains: tuple[str, ...] = ("time", "freq")

    def __post_init__(self):
        if min(self.d_model, self.d_inner, self.d_state, self.n_groups) < 1:
            raise InvalidArgumentError("block extents must be positive")
        if self.d_conv < 1:
            raise InvalidArgumentError(f"d_conv must be >= 1, got {self.d_conv}")
        if self.chunk < 1:
            raise InvalidArgumentError(f"chunk must be >= 1, got {self.chunk}")
        if self.d_inner % self.n_groups != 0:
            raise InvalidArgumentError(
                f"d_inner {self.d_inner} not divisible by n_groups {self.n_groups}"
            )
        if self.gate_mode not in _GATE_MODES:
            raise InvalidArgumentError(f"unknown gate mode {self.gate_mode!r}")
        if not self.branch_domains:
            raise InvalidArgumentError("a block needs at least one branch")
        for domain in self.branch_domains:
            if domain not in _DOMAINS:
                raise InvalidArgumentError(f"unknown branch domain {domain!r}")

    @property
    def proj_width(self) -> int:
        """Columns per branch projection: [X | B | C | A_raw]."""
        return 2 * self.d_inner + 2 * self.n_groups * self.d_state

    @property
    def stream_width(self) -> int:
        """Columns of one B or C stream."""
        return self.n_groups * self.d_state


@dataclass
class BranchParams:
    domain: str
    proj: Tensor
    conv_kernel: Tensor | None = None
    conv_bias: Tensor | None = None
    rho_omega: Tensor | None = None


@dataclass
class TfBlockParams:
    norm_gain: Tensor
    norm_shift: Tensor
    branches: list[BranchParams] = field(default_factory=list)
    out_proj: Tensor = None
    out_bias: Tensor = None
    gate_slope: float = 1.0


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    scale = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-scale, scale, size=shape)


def init_tf_block(cfg: TfBlockConfig, rng: np.random.Generator) -> TfBlockParams:
    params = TfBlockParams(
        norm_gain=Tensor(np.ones(cfg.d_model), requires_grad=True),
        norm_shift=Tensor(np.zeros(cfg.d_model), requires_grad=True),
    )
    for domain in cfg.branch_domains:
        branch = BranchParams(
            domain=domain,
            proj=Tensor(
                _uniform(rng, (cfg.d_model, cfg.proj_width), cfg.d_model),
                requires_grad=True,
            ),
        )
        if domain == "time":
            branch.conv_kernel = Tensor(
                _uniform(rng, (cfg.d_conv, cfg.proj_width), cfg.d_conv),
                requires_grad=True,
            )
            branch.conv_bias = Tensor(np.zeros(cfg.proj_width), requires_grad=True)
        else:
            branch.rho_omega = Tensor(np.float64(RHO_INIT), requires_grad=True)
        params.branches.append(branch)
    cat_width = len(cfg.branch_domains) * cfg.d_inner
    params.out_proj = Tensor(
        _uniform(rng, (cat_width, cfg.d_model), cat_width), requires_grad=True
    )
    params.out_bias = Tensor(np.zeros(cfg.d_model), requires_grad=True)
    return params


def project_inputs(
    x: Tensor, params: TfBlockParams, cfg: TfBlockConfig
) -> tuple[Tensor, ...]:
    """Normalize once, then project per branch; no bias on the projections."""
    if x.ndim != 2 or x.shape[1] != cfg.d_model:
        raise ShapeMismatchError(
            f"expected input (L, {cfg.d_model}), got {x.shape}"
        )
    normed = ad.layer_norm(x, params.norm_gain, params.norm_shift, LN_EPS)
    return tuple(normed @ branch.proj for branch in params.branches)


def decay_from_raw(raw: Tensor) -> Tensor:
    """Map unconstrained reals to stable scan decays in (0, 1)."""
    return ad.exp(-ad.softplus(raw))


def _split_streams(activated: Tensor, cfg: TfBlockConfig):
    inner, stream = cfg.d_inner, cfg.stream_width
    x = ad.slice_axis(activated, 1, 0, inner)
    b = ad.slice_axis(activated, 1, inner, stream)
    c = ad.slice_axis(activated, 1, inner + stream, stream)
    return x, b, c


def temporal_branch(phi: Tensor, branch: BranchParams, cfg: TfBlockConfig) -> Tensor:
    """Conv + SiLU over all columns, split into streams, scan."""
    if phi.shape[1] != cfg.proj_width:
        raise ShapeMismatchError(
            f"expected projection width {cfg.proj_width}, got {phi.shape[1]}"
        )
    activated = ad.silu(ad.conv1d_depthwise(phi, branch.conv_kernel, branch.conv_bias))
    x, b, c = _split_streams(activated, cfg)
    raw = ad.slice_axis(activated, 1, cfg.d_inner + 2 * cfg.stream_width, cfg.d_inner)
    return ssd_scan(x, decay_from_raw(raw), b, c, cfg.n_groups, cfg.chunk)


def spectral_gate(
    theta: Tensor,
    omega,
    slope: float,
    mode: str,
    normalize: bool = False,
) -> Tensor:
    """Suppress low-power bins of a spectrum.

    Hard mode keeps bin (k, c) iff its power exceeds the threshold; it has
    zero gradient in the threshold.  Soft mode blends with a sigmoid of
    (power - threshold)/slope and is differentiable in both arguments.
    With ``normalize`` the power of each column is divided by its mean over
    bins first, so one threshold is commensurable across channels.
    """
    if mode not in _GATE_MODES:
        raise InvalidArgumentError(f"unknown gate mode {mode!r}")
    if slope <= 0.0:
        raise InvalidArgumentError(f"slope must be positive, got {slope}")
    omega = ad.as_tensor(omega)
    if omega.data.shape != ():
        raise ShapeMismatchError("threshold must be a scalar")
    if float(omega.data) < 0.0:
        raise InvalidArgumentError(f"threshold must be >= 0, got {float(omega.data)}")
    power = ad.cabs2(theta)
    if normalize:
        # The tiny floor keeps all-zero columns at gate zero instead of 0/0.
        power = power / (ad.tmean(power, axis=0, keepdims=True) + 1e-30)
    if mode == "hard":
        mask = ad.constant((power.data > float(omega.data)).astype(np.float64))
        return theta * mask
    gate = ad.sigmoid((power - omega) * (1.0 / slope))
    return theta * gate


def frequency_branch(
    phi: Tensor,
    branch: BranchParams,
    cfg: TfBlockConfig,
    gate_slope: float = 1.0,
    trace: dict | None = None,
) -> Tensor:
    """FFT the [X|B|C] columns, gate, reconstruct, scan.

    The decay columns skip the spectral path entirely.
    """
    if phi.shape[1] != cfg.proj_width:
        raise ShapeMismatchError(
            f"expected projection width {cfg.proj_width}, got {phi.shape[1]}"
        )
    length = phi.shape[0]
    head_width = cfg.d_inner + 2 * cfg.stream_width
    head = ad.slice_axis(phi, 1, 0, head_width)
    raw = ad.slice_axis(phi, 1, head_width, cfg.d_inner)
    theta = ad.rfft(head, axis=0)
    omega = ad.softplus(branch.rho_omega)
    gated = spectral_gate(theta, omega, gate_slope, cfg.gate_mode, normalize=True)
    if trace is not None:
        trace["power_before"] = numerics.power_spectrum(theta.data).mean(axis=1)
        trace["power_after"] = numerics.power_spectrum(gated.data).mean(axis=1)
    recon = ad.irfft(gated, n=length, axis=0)
    x = ad.slice_axis(recon, 1, 0, cfg.d_inner)
    b = ad.slice_axis(recon, 1, cfg.d_inner, cfg.stream_width)
    c = ad.slice_axis(recon, 1, cfg.d_inner + cfg.stream_width, cfg.stream_width)
    return ssd_scan(x, decay_from_raw(raw), b, c, cfg.n_groups, cfg.chunk)


def tf_block_forward(
    x: Tensor,
    params: TfBlockParams,
    cfg: TfBlockConfig,
    trace: dict | None = None,
) -> Tensor:
    """Full block: norm, branch projections, scans, concat, egress, residual."""
    phis = project_inputs(x, params, cfg)
    outs = []
    traced_time = False
    for phi, branch in zip(phis, params.branches):
        if branch.domain == "time":
            out = temporal_branch(phi, branch, cfg)
            if trace is not None and not traced_time:
                trace["token_intensity_in"] = np.linalg.norm(phi.data, axis=1)
                trace["token_intensity_out"] = np.linalg.norm(out.data, axis=1)
                traced_time = True
        else:
            out = frequency_branch(
                phi, branch, cfg, params.gate_slope, trace=trace
            )
        outs.append(out)
    merged = ad.concat(outs, axis=1)
    return x + (merged @ params.out_proj + params.out_bias)
