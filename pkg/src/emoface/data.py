"""Parameter-track smoothing, frame-rate conversion and sequence containers.

MSEQ layout (little-endian)::

    b"MSEQ" | u32 version=1 | u32 V | u32 T | f32 fps | u32 flags |
    [V*3 f32 template if flags & 1] | T*V*3 f32 frames

FEAT layout: ``b"FEAT" | u32 T | u32 C | T*C f32``.
"""

from __future__ import annotations

import csv
import struct
import wave
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import FormatError, NumericError, ResampleError

MSEQ_MAGIC = b"MSEQ"
MSEQ_VERSION = 1
FEAT_MAGIC = b"FEAT"
_MSEQ_HEADER = struct.Struct("<4sIIIfI")


@dataclass
class MeshSequence:
    frames: np.ndarray              # T x V x 3
    fps: float
    template: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[2] != 3:
            raise ValueError(f"frames must be T x V x 3, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ValueError("a mesh sequence needs at least one frame")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if not np.isfinite(self.frames).all():
            raise NumericError("mesh sequence contains non-finite positions")
        if self.template is not None:
            self.template = np.asarray(self.template, dtype=np.float64)
            if self.template.shape != self.frames.shape[1:]:
                raise ValueError(f"template {self.template.shape} does not match frames {self.frames.shape}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def V(self) -> int:
        return self.frames.shape[1]


@dataclass
class ParamTrack:
    values: np.ndarray              # T x P
    fps: float = 30.0
    names: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ValueError(f"track must be T x P with P >= 1, got {self.values.shape}")
        if self.names is not None and len(self.names) != self.values.shape[1]:
            raise ValueError(f"{len(self.names)} names for {self.values.shape[1]} channels")


# -- smoothing -----------------------------------------------------------------

def kalman_smooth(track: ParamTrack, q: float = 1e-4, r: float = 1e-2, rts: bool = False,
                  channels: Sequence[int] | None = None) -> ParamTrack:
    """Constant-velocity Kalman filter run independently on each channel.

    State is ``[value, velocity]`` with unit frame step, process noise ``q*I``,
    measurement noise ``r``, initial covariance ``I`` and initial state
    ``[first measurement, 0]``. With ``rts`` the forward pass is followed by a
    Rauch-Tung-Striebel backward pass.
    """
    if not (q > 0 and r > 0):
        raise ValueError(f"noise parameters must be positive, got q={q}, r={r}")
    z = track.values
    if not np.isfinite(z).all():
        raise NumericError("parameter track contains non-finite values")
    sel = np.arange(z.shape[1]) if channels is None else np.asarray(channels, dtype=np.int64)
    if sel.size and (sel.min() < -z.shape[1] or sel.max() >= z.shape[1]):
        raise IndexError(f"channel index out of range for {z.shape[1]} channels")
    meas = z[:, sel]
    T = meas.shape[0]
    F = np.array([[1.0, 1.0], [0.0, 1.0]])
    Q = q * np.eye(2)
    # every channel shares dynamics and initial covariance, so the covariance
    # recursion (and hence the gain sequence) is channel-independent
    x = np.stack([meas[0], np.zeros_like(meas[0])])      # 2 x P
    P = np.eye(2)
    xs_f, xs_p, Ps_f, Ps_p = [], [], [], []
    for t in range(T):
        if t > 0:
            x = F @ x
            P = F @ P @ F.T + Q
        xs_p.append(x.copy())
        Ps_p.append(P.copy())
        S = P[0, 0] + r
        K = P[:, 0] / S
        x = x + np.outer(K, meas[t] - x[0])
        P = P - np.outer(K, P[0, :])
        xs_f.append(x.copy())
        Ps_f.append(P.copy())
    if rts:
        xs = [None] * T
        xs[-1] = xs_f[-1]
        for t in range(T - 2, -1, -1):
            C = Ps_f[t] @ F.T @ np.linalg.inv(Ps_p[t + 1])
            xs[t] = xs_f[t] + C @ (xs[t + 1] - xs_p[t + 1])
    else:
        xs = xs_f
    out = z.copy()
    out[:, sel] = np.stack([s[0] for s in xs])
    return ParamTrack(out, track.fps, None if track.names is None else list(track.names))


def fix_params(track: ParamTrack, indices: Sequence[int] | None = None, mode: str = "first_frame") -> ParamTrack:
    """Pin channels to zero or to their first-frame value. Defaults to the last three channels."""
    P = track.values.shape[1]
    if indices is None:
        indices = list(range(max(P - 3, 0), P))
    idx = []
    for i in indices:
        if not -P <= int(i) < P:
            raise ValueError(f"channel {i} out of range for {P} channels")
        idx.append(int(i) % P)
    out = track.values.copy()
    if mode == "zero":
        out[:, idx] = 0.0
    elif mode == "first_frame":
        out[:, idx] = out[0, idx]
    else:
        raise ValueError(f"unknown fix mode {mode!r} (expected 'zero' or 'first_frame')")
    return ParamTrack(out, track.fps, None if track.names is None else list(track.names))


# -- frame rate ------------------------------------------------------------------

def resample_fps(seq: MeshSequence, dst_fps: float) -> MeshSequence:
    """Linear-interpolation resampling that keeps the first and last frames exact.

    The output has ``round((T-1)*dst/src)+1`` frames spread uniformly over the
    source time span; when the timelines coincide (e.g. 60 -> 30 fps with odd
    T) output frames are copies of source frames.
    """
    if not dst_fps > 0:
        raise ResampleError(f"target fps must be positive, got {dst_fps}")
    if dst_fps == seq.fps:
        return MeshSequence(seq.frames.copy(), seq.fps, None if seq.template is None else seq.template.copy())
    T = seq.T
    if T < 2:
        raise ResampleError(f"cannot resample a {T}-frame sequence from {seq.fps} to {dst_fps} fps")
    n_out = int(np.floor((T - 1) * dst_fps / seq.fps + 0.5)) + 1
    n_out = max(n_out, 2)
    pos = np.arange(n_out) * (T - 1) / (n_out - 1)
    pos[-1] = T - 1
    i0 = np.minimum(np.floor(pos).astype(np.int64), T - 1)
    i1 = np.minimum(i0 + 1, T - 1)
    w = (pos - i0)[:, None, None]
    frames = seq.frames[i0] * (1.0 - w) + seq.frames[i1] * w
    exact = w[:, 0, 0] == 0.0
    frames[exact] = seq.frames[i0[exact]]
    return MeshSequence(frames, dst_fps, None if seq.template is None else seq.template.copy())


# -- MSEQ ----------------------------------------------------------------------

def mseq_bytes(seq: MeshSequence) -> bytes:
    flags = 1 if seq.template is not None else 0
    parts = [_MSEQ_HEADER.pack(MSEQ_MAGIC, MSEQ_VERSION, seq.V, seq.T, seq.fps, flags)]
    if seq.template is not None:
        parts.append(np.ascontiguousarray(seq.template, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())
    return b"".join(parts)


def write_mseq(seq: MeshSequence, path) -> None:
    with open(path, "wb") as fh:
        fh.write(mseq_bytes(seq))


def parse_mseq(data: bytes) -> MeshSequence:
    if len(data) < 4 or data[:4] != MSEQ_MAGIC:
        raise FormatError("bad magic: not an MSEQ file")
    if len(data) < _MSEQ_HEADER.size:
        raise FormatError("truncated header")
    _, version, V, T, fps, flags = _MSEQ_HEADER.unpack_from(data, 0)
    if version != MSEQ_VERSION:
        raise FormatError(f"unsupported version {version}")
    if T < 1 or V < 1:
        raise FormatError(f"invalid dimensions V={V}, T={T}")
    if not np.isfinite(fps) or fps <= 0:
        raise FormatError(f"invalid fps {fps}")
    if flags & ~1:
        raise FormatError(f"unknown flags 0x{flags:x}")
    off = _MSEQ_HEADER.size
    template = None
    if flags & 1:
        n = V * 3 * 4
        if len(data) < off + n:
            raise FormatError("truncated template")
        template = np.frombuffer(data, dtype="<f4", count=V * 3, offset=off).reshape(V, 3)
        off += n
    n = T * V * 3 * 4
    if len(data) < off + n:
        raise FormatError(f"truncated frames: expected {n} bytes, found {len(data) - off}")
    if len(data) > off + n:
        raise FormatError(f"{len(data) - off - n} trailing bytes after frames")
    frames = np.frombuffer(data, dtype="<f4", count=T * V * 3, offset=off).reshape(T, V, 3)
    return MeshSequence(frames.astype(np.float64), float(fps),
                        None if template is None else template.astype(np.float64))


def read_mseq(path) -> MeshSequence:
    with open(path, "rb") as fh:
        return parse_mseq(fh.read())


def mseq_size(V: int, T: int, template: bool = False) -> int:
    return _MSEQ_HEADER.size + (V * 3 * 4 if template else 0) + T * V * 3 * 4


# -- FEAT ----------------------------------------------------------------------

def write_feat(features: np.ndarray, path) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise ValueError(f"features must be T x C, got {features.shape}")
    T, C = features.shape
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC + struct.pack("<II", T, C))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_feat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != FEAT_MAGIC:
        raise FormatError("bad magic: not a FEAT file")
    if len(data) < 12:
        raise FormatError("truncated header")
    T, C = struct.unpack_from("<II", data, 4)
    if len(data) != 12 + T * C * 4:
        raise FormatError(f"payload size {len(data) - 12} != T*C*4 = {T * C * 4}")
    return np.frombuffer(data, dtype="<f4", offset=12).reshape(T, C).astype(np.float64)


# -- WAV -----------------------------------------------------------------------

def read_wav(path, target_rate: int | None = 16000) -> tuple[np.ndarray, int]:
    """Mono float samples in [-1, 1]; other rates are linearly resampled to ``target_rate``."""
    try:
        with wave.open(str(path), "rb") as w:
            n_ch, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if width != 2:
        raise FormatError(f"{path}: only 16-bit PCM is supported (got {8 * width}-bit)")
    x = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_ch > 1:
        x = x.reshape(-1, n_ch).mean(axis=1)
    if target_rate and rate != target_rate and x.size > 1:
        n_out = int(round(x.size * target_rate / rate))
        x = np.interp(np.arange(n_out) * rate / target_rate, np.arange(x.size), x)
        rate = target_rate
    return x, rate


def write_wav(path, samples: np.ndarray, rate: int = 16000) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(pcm.tobytes())


# -- CSV tracks ----------------------------------------------------------------

def read_track_csv(path, fps: float = 30.0) -> ParamTrack:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV")
    names = rows[0]
    try:
        vals = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value ({exc})") from exc
    if vals.size == 0:
        raise FormatError(f"{path}: no data rows")
    if vals.shape[1] != len(names):
        raise FormatError(f"{path}: {vals.shape[1]} columns but {len(names)} header names")
    return ParamTrack(vals, fps, names)


def write_track_csv(track: ParamTrack, path) -> None:
    names = track.names or [f"p{i}" for i in range(track.values.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in track.values:
            w.writerow([repr(float(v)) for v in row])
