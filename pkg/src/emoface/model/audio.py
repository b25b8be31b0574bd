"""Audio frontends producing frame-aligned feature sequences.

The first stage (log-mel filterbank, or features read from a FEAT file) has
no parameters and is never optimised. The second stage is a small trainable
temporal convolution stack that maps the frozen features to width ``C``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, tanh
from ..errors import DimensionError, NumericError
from ..nn import Linear, Module


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.isfinite(self.samples).all():
            raise NumericError("audio contains non-finite samples")
        if self.samples.size and np.abs(self.samples).max() > 1.0:
            raise ValueError("audio samples must lie in [-1, 1]")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def frame_count(duration: float, fps: float) -> int:
    """Round-half-up ``duration * fps``."""
    return int(np.floor(duration * fps + 0.5))


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK-mel filters, shape ``n_mels x (n_fft//2+1)``."""
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    mels = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz = mel_to_hz(mels)
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    fb = np.zeros((n_mels, bins.size))
    for m in range(n_mels):
        lo, mid, hi = hz[m], hz[m + 1], hz[m + 2]
        up = (bins - lo) / (mid - lo)
        down = (hi - bins) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def log_mel(samples: np.ndarray, sample_rate: int, fps: float, n_mels: int = 64,
            window_s: float = 0.025) -> np.ndarray:
    """Log-mel frames with a hop of ``sample_rate / fps`` samples (rounded)."""
    win = int(round(window_s * sample_rate))
    hop = max(1, int(round(sample_rate / fps)))
    n_fft = 1 << (win - 1).bit_length()
    padded = np.concatenate([np.zeros(win // 2), samples, np.zeros(win // 2)])
    n_frames = 1 + max(0, padded.size - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = padded[idx] * np.hanning(win)[None, :]
    power = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    mel = power @ mel_filterbank(n_mels, n_fft, sample_rate).T
    return np.log(mel + 1e-6) / 10.0


def resample_frames(features: np.ndarray, n_out: int) -> np.ndarray:
    """Linear interpolation along time with aligned endpoints."""
    n_in = features.shape[0]
    if n_in == n_out:
        return features.copy()
    if n_in == 1:
        return np.repeat(features, n_out, axis=0)
    pos = np.linspace(0.0, n_in - 1, n_out)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    w = (pos - i0)[:, None]
    return features[i0] * (1.0 - w) + features[i0 + 1] * w


class FrozenFrontend:
    """Parameter-free first stage: log-mel filterbank."""

    def __init__(self, n_mels: int = 64, fps: float = 30.0):
        self.n_mels = n_mels
        self.fps = fps

    def __call__(self, clip: AudioClip, n_frames: int | None = None) -> np.ndarray:
        if clip.samples.size == 0:
            raise ValueError("empty audio clip")
        if n_frames is None:
            n_frames = frame_count(clip.duration, self.fps)
        if n_frames < 1:
            raise ValueError(f"clip of {clip.duration:.4f} s yields no frames at {self.fps} fps")
        feats = log_mel(clip.samples, clip.sample_rate, self.fps, self.n_mels)
        return resample_frames(feats, n_frames)


def _unfold(features: np.ndarray, width: int) -> np.ndarray:
    """Stack ``width`` neighbouring frames (zero padded, centred) per row."""
    T, C = features.shape
    half = width // 2
    padded = np.concatenate([np.zeros((half, C)), features, np.zeros((width - 1 - half, C))])
    return np.concatenate([padded[i:i + T] for i in range(width)], axis=1)


class AudioEncoder(Module):
    """Trainable stage: width-``kernel`` temporal conv + tanh + linear to ``C``."""

    def __init__(self, n_in: int, C: int, rng: np.random.Generator, kernel: int = 3):
        self.n_in = n_in
        self.kernel = kernel
        self.conv = Linear(kernel * n_in, C, rng)
        self.proj = Linear(C, C, rng)

    def __call__(self, frozen: np.ndarray) -> Tensor:
        frozen = np.asarray(frozen, dtype=np.float64)
        if frozen.ndim != 2 or frozen.shape[1] != self.n_in:
            raise DimensionError(f"frozen features must be T x {self.n_in}, got {frozen.shape}")
        x = Tensor(_unfold(frozen, self.kernel))
        return self.proj(tanh(self.conv(x)))
