"""Scalar-decay state-space scan, implemented three equivalent ways.

Per channel c (grouped; channels in group g share the B/C streams) with
state h in R^d:

    h_t = a_{t,c} * h_{t-1} + x_{t,c} * B_g[t]        h_0 = 0
    y_{t,c} = C_g[t] . h_t

``ssd_sequential`` is the literal recurrence, ``ssd_dual_materialized``
builds the equivalent lower-triangular map from x to y per channel, and
``ssd_chunked`` mixes the two: materialized dual inside fixed-size time
blocks, recurrence across blocks.  Decay products are handled in log space
so long sequences with strong decay neither overflow nor underflow.

``ssd_scan`` is the differentiable version used by the network; its
backward pass is the adjoint recurrence, evaluated with the same chunked
machinery as the forward pass.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, make_tensor_node
from .errors import InvalidArgumentError, ResourceLimitError, ShapeMismatchError

__all__ = [
    "SsdInputs",
    "SsdConfig",
    "ssd_sequential",
    "ssd_dual_materialized",
    "ssd_chunked",
    "ssd_scan",
]

DUAL_MAX_LEN = 4096


@dataclass
class SsdInputs:
    """One scan instance.

    x, a: (L, C) input stream and per-channel decay, decays in (0, 1].
    b, c: (L, G*d) input/output matrix streams, laid out group-major.
    """

    x: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    n_groups: int = 1

    def dims(self) -> tuple[int, int, int, int]:
        """Validate shapes and return (L, C, G, d)."""
        x = np.asarray(self.x, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        if x.ndim != 2 or a.ndim != 2 or b.ndim != 2 or c.ndim != 2:
            raise ShapeMismatchError("ssd inputs must all be 2-D")
        length, channels = x.shape
        if a.shape != (length, channels):
            raise ShapeMismatchError(
                f"decay shape {a.shape} does not match input shape {x.shape}"
            )
        if b.shape != c.shape or b.shape[0] != length:
            raise ShapeMismatchError(
                f"B/C shapes {b.shape}/{c.shape} inconsistent with L={length}"
            )
        groups = self.n_groups
        if groups < 1 or channels % groups != 0:
            raise InvalidArgumentError(
                f"channel count {channels} not divisible into {groups} groups"
            )
        if b.shape[1] == 0 or b.shape[1] % groups != 0:
            raise ShapeMismatchError(
                f"B width {b.shape[1]} not divisible into {groups} groups"
            )
        state_dim = b.shape[1] // groups
        if a.size and (a.min() <= 0.0 or a.max() > 1.0):
            raise InvalidArgumentError("decay entries must lie in (0, 1]")
        return length, channels, groups, state_dim


@dataclass(frozen=True)
class SsdConfig:
    seq_len: int
    channels: int
    n_groups: int
    state_dim: int
    chunk: int = 64

    @classmethod
    def from_inputs(cls, inputs: SsdInputs, chunk: int = 64) -> "SsdConfig":
        length, channels, groups, state_dim = inputs.dims()
        return cls(length, channels, groups, state_dim, chunk)

    def check(self, inputs: SsdInputs) -> None:
        length, channels, groups, state_dim = inputs.dims()
        if (length, channels, groups, state_dim) != (
            self.seq_len,
            self.channels,
            self.n_groups,
            self.state_dim,
        ):
            raise ShapeMismatchError(
                f"inputs ({length}, {channels}, {groups}, {state_dim}) do not "
                f"match config ({self.seq_len}, {self.channels}, "
                f"{self.n_groups}, {self.state_dim})"
            )
        if self.chunk < 1:
            raise InvalidArgumentError(f"chunk must be >= 1, got {self.chunk}")


def _expand_groups(mat: np.ndarray, groups: int, members: int) -> np.ndarray:
    """(L, G*d) group-major stream -> per-channel (L, C, d) view."""
    length = mat.shape[0]
    return np.repeat(mat.reshape(length, groups, -1), members, axis=1)


def ssd_sequential(inputs: SsdInputs) -> np.ndarray:
    """Reference implementation: literal time recurrence."""
    length, channels, groups, _ = inputs.dims()
    members = channels // groups
    x = np.asarray(inputs.x, dtype=np.float64)
    a = np.asarray(inputs.a, dtype=np.float64)
    b_rep = _expand_groups(np.asarray(inputs.b, dtype=np.float64), groups, members)
    c_rep = _expand_groups(np.asarray(inputs.c, dtype=np.float64), groups, members)
    state = np.zeros((channels, b_rep.shape[2]))
    out = np.empty((length, channels))
    for t in range(length):
        state = a[t][:, None] * state + x[t][:, None] * b_rep[t]
        out[t] = (state * c_rep[t]).sum(axis=1)
    return out


def _channel_dual(
    cb: np.ndarray, log_cum: np.ndarray, x_col: np.ndarray, tri: np.ndarray
) -> np.ndarray:
    """y for one channel: masked decay-weighted score matrix applied to x."""
    diff = log_cum[:, None] - log_cum[None, :]
    weights = np.exp(np.where(tri, diff, -np.inf))
    return (cb * weights) @ x_col


def ssd_dual_materialized(inputs: SsdInputs, max_len: int = DUAL_MAX_LEN) -> np.ndarray:
    """Oracle: per channel, materialize the full L x L lower-triangular map."""
    length, channels, groups, _ = inputs.dims()
    if length > max_len:
        raise ResourceLimitError(
            f"sequence length {length} exceeds materialization guard {max_len}"
        )
    members = channels // groups
    x = np.asarray(inputs.x, dtype=np.float64)
    a = np.asarray(inputs.a, dtype=np.float64)
    b = np.asarray(inputs.b, dtype=np.float64)
    c = np.asarray(inputs.c, dtype=np.float64)
    log_cum = np.cumsum(np.log(a), axis=0)
    tri = np.tril(np.ones((length, length), dtype=bool))
    out = np.empty((length, channels))
    for g in range(groups):
        cols = slice(g * (b.shape[1] // groups), (g + 1) * (b.shape[1] // groups))
        cb = np.tril(c[:, cols] @ b[:, cols].T)
        for ch in range(g * members, (g + 1) * members):
            out[:, ch] = _channel_dual(cb, log_cum[:, ch], x[:, ch], tri)
    return out


def ssd_chunked(
    inputs: SsdInputs, cfg: SsdConfig | None = None, *, chunk: int | None = None
) -> np.ndarray:
    """Block-parallel form: dual inside blocks, recurrence across blocks."""
    if cfg is None:
        cfg = SsdConfig.from_inputs(inputs, chunk=chunk if chunk is not None else 64)
    cfg.check(inputs)
    length, channels, groups, state_dim = inputs.dims()
    members = channels // groups
    x = np.asarray(inputs.x, dtype=np.float64)
    a = np.asarray(inputs.a, dtype=np.float64)
    b = np.asarray(inputs.b, dtype=np.float64)
    c = np.asarray(inputs.c, dtype=np.float64)
    b_rep = _expand_groups(b, groups, members)
    c_rep = _expand_groups(c, groups, members)
    state = np.zeros((channels, state_dim))
    out = np.empty((length, channels))
    for start in range(0, length, cfg.chunk):
        stop = min(start + cfg.chunk, length)
        width = stop - start
        log_cum = np.cumsum(np.log(a[start:stop]), axis=0)
        tri = np.tril(np.ones((width, width), dtype=bool))
        x_blk = x[start:stop]
        for g in range(groups):
            cols = slice(g * state_dim, (g + 1) * state_dim)
            cb = np.tril(c[start:stop, cols] @ b[start:stop, cols].T)
            for ch in range(g * members, (g + 1) * members):
                out[start:stop, ch] = _channel_dual(
                    cb, log_cum[:, ch], x_blk[:, ch], tri
                )
        # Contribution of the carried-in state and the carry-out update.
        scale = np.exp(log_cum)  # (width, C): running decay product in block
        out[start:stop] += scale * np.einsum(
            "tcd,cd->tc", c_rep[start:stop], state
        )
        tail = np.exp(log_cum[-1][None, :] - log_cum)  # decay from step s to end
        state = scale[-1][:, None] * state + np.einsum(
            "tc,tcd->cd", tail * x_blk, b_rep[start:stop]
        )
    return out


# -- differentiable scan -------------------------------------------------------


def _decayed_cumulative(a: np.ndarray, u: np.ndarray, chunk: int) -> np.ndarray:
    """All prefix states of s_t = a_t * s_{t-1} + u_t with s_{-1} = 0.

    a: (L, C) decays in (0, 1]; u: (L, C, d).  Runs block-parallel: inside a
    block every prefix is a masked weighted sum, across blocks the last state
    is carried.
    """
    length = a.shape[0]
    out = np.empty_like(u)
    state = np.zeros(u.shape[1:])
    log_a = np.log(a)
    for start in range(0, length, chunk):
        stop = min(start + chunk, length)
        width = stop - start
        log_cum = np.cumsum(log_a[start:stop], axis=0)  # (width, C)
        diff = log_cum[:, None, :] - log_cum[None, :, :]  # (t, s, C)
        tri = np.tril(np.ones((width, width), dtype=bool))[:, :, None]
        weights = np.exp(np.where(tri, diff, -np.inf))
        block = np.einsum("tsc,scd->tcd", weights, u[start:stop])
        block += np.exp(log_cum)[:, :, None] * state[None]
        out[start:stop] = block
        state = block[-1]
    return out


def _reverse_scan(a: np.ndarray, u: np.ndarray, chunk: int) -> np.ndarray:
    """Backward-in-time scan s_t = u_t + a_{t+1} * s_{t+1}, s_L = 0."""
    flipped_decay = np.vstack([np.ones((1, a.shape[1])), np.flip(a, axis=0)[:-1]])
    flipped = _decayed_cumulative(flipped_decay, np.flip(u, axis=0), chunk)
    return np.flip(flipped, axis=0)


def ssd_scan(
    x: Tensor, a: Tensor, b: Tensor, c: Tensor, n_groups: int, chunk: int = 64
) -> Tensor:
    """Differentiable scan over tape tensors; one tape node, custom adjoint."""
    inputs = SsdInputs(x.data, a.data, b.data, c.data, n_groups)
    length, channels, groups, state_dim = inputs.dims()
    if chunk < 1:
        raise InvalidArgumentError(f"chunk must be >= 1, got {chunk}")
    members = channels // groups
    b_rep = _expand_groups(b.data, groups, members)
    c_rep = _expand_groups(c.data, groups, members)
    hidden = _decayed_cumulative(a.data, x.data[:, :, None] * b_rep, chunk)
    out = np.einsum("tcd,tcd->tc", hidden, c_rep)

    cache: dict[str, np.ndarray] = {}

    def _adjoint(g: np.ndarray) -> dict[str, np.ndarray]:
        if cache:
            return cache
        lam = _reverse_scan(a.data, g[:, :, None] * c_rep, chunk)
        prev_hidden = np.concatenate(
            [np.zeros((1, channels, state_dim)), hidden[:-1]], axis=0
        )
        cache["x"] = (lam * b_rep).sum(axis=2)
        cache["a"] = (lam * prev_hidden).sum(axis=2)
        cache["b"] = (
            (lam * x.data[:, :, None])
            .reshape(length, groups, members, state_dim)
            .sum(axis=2)
            .reshape(length, groups * state_dim)
        )
        cache["c"] = (
            (g[:, :, None] * hidden)
            .reshape(length, groups, members, state_dim)
            .sum(axis=2)
            .reshape(length, groups * state_dim)
        )
        return cache

    return make_tensor_node(
        out,
        [
            (x, lambda g: _adjoint(g)["x"]),
            (a, lambda g: _adjoint(g)["a"]),
            (b, lambda g: _adjoint(g)["b"]),
            (c, lambda g: _adjoint(g)["c"]),
        ],
    )
