"""Double-precision array kernels used throughout the package.

Real inputs are float64, spectra are complex128.  The FFT pair is backed by
numpy's FFT; ``dft_oracle`` is an independent O(L^2) reference kept for
cross-checking the fast path and is intentionally not implemented in terms
of ``numpy.fft``.
"""

import numpy as np

from .errors import InvalidArgumentError, ShapeMismatchError


def _as_f64_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise InvalidArgumentError(f"{name} must have at least one sample")
    return arr


def fft_real_1d(x) -> np.ndarray:
    """One-sided DFT of a real vector of length L; returns L//2 + 1 bins."""
    arr = _as_f64_vector(x, "signal")
    return np.fft.rfft(arr)


def ifft_real_1d(spectrum, n: int) -> np.ndarray:
    """Inverse of ``fft_real_1d`` back to a real vector of length ``n``.

    The imaginary parts of the DC bin, and of the Nyquist bin when ``n``
    is even, do not correspond to any real signal and are ignored.
    """
    spec = np.asarray(spectrum, dtype=np.complex128)
    if spec.ndim != 1:
        raise ShapeMismatchError(f"spectrum must be 1-D, got shape {spec.shape}")
    if n < 1:
        raise InvalidArgumentError(f"output length must be positive, got {n}")
    if spec.shape[0] != n // 2 + 1:
        raise ShapeMismatchError(
            f"spectrum has {spec.shape[0]} bins, expected {n // 2 + 1} for length {n}"
        )
    return np.fft.irfft(spec, n=n)


def dft_oracle(x) -> np.ndarray:
    """Direct O(L^2) one-sided DFT used to validate the fast transform."""
    arr = _as_f64_vector(x, "signal")
    length = arr.shape[0]
    bins = np.arange(length // 2 + 1)
    samples = np.arange(length)
    basis = np.exp(-2j * np.pi * np.outer(bins, samples) / length)
    return basis @ arr.astype(np.complex128)


def power_spectrum(spectrum) -> np.ndarray:
    """Per-bin power re^2 + im^2 of a complex array."""
    spec = np.asarray(spectrum, dtype=np.complex128)
    return spec.real**2 + spec.imag**2


def sigmoid(x) -> np.ndarray:
    """Logistic function, computed through tanh so large |x| cannot overflow."""
    arr = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * arr))


def softplus(x) -> np.ndarray:
    """log(1 + exp(x)) without overflow for large positive x."""
    arr = np.asarray(x, dtype=np.float64)
    return np.logaddexp(0.0, arr)


def silu(x) -> np.ndarray:
    """x * sigmoid(x)."""
    arr = np.asarray(x, dtype=np.float64)
    return arr * sigmoid(arr)


def depthwise_conv1d(x, kernel, bias) -> np.ndarray:
    """Causal per-channel convolution.

    Args:
        x: input of shape (L, C).
        kernel: per-channel taps of shape (k, C); ``kernel[-1]`` multiplies
            the current step, earlier rows reach back in time.
        bias: per-channel offset of shape (C,).

    Returns:
        Array of shape (L, C).  Output at step t only depends on steps <= t;
        positions before the start of the sequence are treated as zero.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 2 or kernel.ndim != 2 or bias.ndim != 1:
        raise ShapeMismatchError(
            f"expected x (L, C), kernel (k, C), bias (C,); got "
            f"{x.shape}, {kernel.shape}, {bias.shape}"
        )
    length, channels = x.shape
    taps = kernel.shape[0]
    if taps < 1:
        raise InvalidArgumentError("kernel must have at least one tap")
    if kernel.shape[1] != channels or bias.shape[0] != channels:
        raise ShapeMismatchError(
            f"channel counts disagree: x has {channels}, kernel "
            f"{kernel.shape[1]}, bias {bias.shape[0]}"
        )
    padded = np.vstack([np.zeros((taps - 1, channels)), x])
    out = np.broadcast_to(bias, (length, channels)).copy()
    for j in range(taps):
        out += kernel[j] * padded[j : j + length]
    return out


def layer_norm(x, gain, shift, eps: float = 1e-5) -> np.ndarray:
    """Normalize each row of (L, C) to zero mean / unit variance, then affine."""
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    shift = np.asarray(shift, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"x must be 2-D, got shape {x.shape}")
    if gain.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
        raise ShapeMismatchError(
            f"gain/shift must have shape ({x.shape[1]},), got "
            f"{gain.shape} and {shift.shape}"
        )
    if eps <= 0.0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    mean = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gain + shift
