"""Lip and emotional vertex errors.

Per frame, take the largest squared vertex distance inside a region mask,
then average over frames. ``squared=False`` uses plain Euclidean distances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import MeshSequence
from .errors import MetricError

REGIONS = ("lip", "eye_forehead")


@dataclass(frozen=True)
class VertexMask:
    indices: tuple[int, ...]
    region: str = "lip"

    def __post_init__(self):
        if not self.indices:
            raise MetricError("vertex mask is empty")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise MetricError("vertex mask must be strictly ascending")
        if self.indices[0] < 0:
            raise MetricError(f"negative vertex index {self.indices[0]} in mask")
        if self.region not in REGIONS:
            raise MetricError(f"unknown region {self.region!r}")

    @classmethod
    def from_indices(cls, indices: Iterable[int], region: str = "lip") -> "VertexMask":
        return cls(tuple(sorted(set(int(i) for i in indices))), region)


def read_mask(path, region: str = "lip") -> VertexMask:
    idx = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                idx.append(int(line))
            except ValueError as exc:
                raise MetricError(f"{path}:{lineno}: not an integer index: {line!r}") from exc
    return VertexMask.from_indices(idx, region)


def _frames(x) -> np.ndarray:
    return x.frames if isinstance(x, MeshSequence) else np.asarray(x, dtype=np.float64)


def per_frame_max_error(pred, ref, mask: VertexMask, squared: bool = True) -> np.ndarray:
    p, r = _frames(pred), _frames(ref)
    if p.shape != r.shape:
        raise MetricError(f"prediction {p.shape} and reference {r.shape} differ in shape")
    if p.ndim != 3 or p.shape[2] != 3:
        raise MetricError(f"expected T x V x 3 sequences, got {p.shape}")
    if not mask.indices:
        raise MetricError("vertex mask is empty")
    if mask.indices[-1] >= p.shape[1]:
        raise MetricError(f"mask index {mask.indices[-1]} out of range for V={p.shape[1]}")
    idx = np.asarray(mask.indices)
    d = p[:, idx] - r[:, idx]
    err = (d * d).sum(axis=-1)
    if not squared:
        err = np.sqrt(err)
    return err.max(axis=1)


def lve(pred, ref, lip_mask: VertexMask, squared: bool = True) -> float:
    return float(per_frame_max_error(pred, ref, lip_mask, squared).mean())


def eve(pred, ref, eye_forehead_mask: VertexMask, squared: bool = True) -> float:
    return float(per_frame_max_error(pred, ref, eye_forehead_mask, squared).mean())


def region_error_over_set(pairs: Sequence[tuple], mask: VertexMask, squared: bool = True) -> tuple[float, float]:
    """Error over a test set: ``(pooled over all frames, mean of per-sequence means)``."""
    if not pairs:
        raise MetricError("no sequence pairs given")
    per_seq = [per_frame_max_error(p, r, mask, squared) for p, r in pairs]
    pooled = float(np.concatenate(per_seq).mean())
    return pooled, float(np.mean([e.mean() for e in per_seq]))
