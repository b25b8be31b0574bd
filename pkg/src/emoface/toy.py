"""Procedural toy corpus: 2 contents x 2 emotions on a 12-vertex icosahedron.

Each clip is a second of synthetic "speech": a sequence of voiced syllables
whose pitch pattern depends on the content and whose loudness and pitch
shift depend on the emotion. Targets move a lower "lip" vertex group with the
syllable envelope (scaled by emotion) and raise an upper "brow" group with
the emotion.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import MeshSequence, write_mseq, write_wav
from .mesh import icosphere, write_obj

SAMPLE_RATE = 16000
FPS = 30.0
CONTENT_PITCHES = {"c0": (180.0, 240.0, 150.0, 300.0, 200.0), "c1": (260.0, 140.0, 220.0, 170.0, 280.0)}
EMOTIONS = {"neutral": (0.35, 1.0, 0.0), "happy": (0.7, 1.3, 1.0)}   # loudness, pitch scale, brow
LIP_VERTS = (2, 3, 4, 6)
BROW_VERTS = (0, 1, 5, 7)
AMPLITUDE = 0.5


def syllable_envelope(t: np.ndarray, n_syll: int = 5, duration: float = 1.0) -> np.ndarray:
    """Raised-sine bumps, one per syllable."""
    phase = (t / duration) * n_syll
    return np.sin(np.pi * (phase % 1.0)) ** 2


def make_audio(content: str, emotion: str, duration: float = 1.0) -> np.ndarray:
    loud, pitch_scale, _ = EMOTIONS[emotion]
    pitches = CONTENT_PITCHES[content]
    t = np.arange(int(duration * SAMPLE_RATE)) / SAMPLE_RATE
    syl = np.minimum((t / duration * len(pitches)).astype(int), len(pitches) - 1)
    f0 = np.asarray(pitches)[syl] * pitch_scale
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    voice = np.sin(phase) + 0.5 * np.sin(2 * phase) + 0.25 * np.sin(3 * phase)
    return 0.5 * loud * syllable_envelope(t, len(pitches), duration) * voice / 1.75


def make_offsets(content: str, emotion: str, V: int, duration: float = 1.0) -> np.ndarray:
    loud, _, brow = EMOTIONS[emotion]
    T = int(np.floor(duration * FPS + 0.5))
    t = np.arange(T) / FPS
    n = len(CONTENT_PITCHES[content])
    env = syllable_envelope(t, n, duration)
    # content-specific mouth shape: syllable order modulates the opening width
    width = np.asarray(CONTENT_PITCHES[content])[np.minimum((t / duration * n).astype(int), n - 1)] / 300.0
    off = np.zeros((T, V, 3))
    for v in LIP_VERTS:
        off[:, v, 1] = -AMPLITUDE * loud * env * 1.5
        off[:, v, 0] = AMPLITUDE * 0.5 * env * width
    for v in BROW_VERTS:
        off[:, v, 1] = AMPLITUDE * 0.6 * brow * (0.5 + 0.5 * env)
    return off


def build_toy_dataset(out_dir, duration: float = 1.0) -> dict:
    """Write wavs, MSEQ targets, mesh, masks and a JSON-lines manifest. Returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    verts, faces = icosphere(0)
    write_obj(out / "template.obj", verts, faces)
    (out / "lip_mask.txt").write_text("\n".join(map(str, LIP_VERTS)) + "\n")
    (out / "emo_mask.txt").write_text("\n".join(map(str, BROW_VERTS)) + "\n")
    lines = []
    for content in CONTENT_PITCHES:
        for level, emotion in enumerate(EMOTIONS):
            stem = f"{content}_{emotion}"
            write_wav(out / f"{stem}.wav", make_audio(content, emotion, duration), SAMPLE_RATE)
            frames = verts[None] + make_offsets(content, emotion, len(verts), duration)
            write_mseq(MeshSequence(frames.astype(np.float32), FPS, verts.astype(np.float32)), out / f"{stem}.mseq")
            lines.append(json.dumps({
                "path": f"{stem}.wav", "speaker": "toy", "content_id": content,
                "emotion": emotion, "level": level, "mesh_sequence": f"{stem}.mseq",
            }))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    return {"dir": out, "manifest": out / "manifest.jsonl", "mesh": out / "template.obj",
            "lip_mask": out / "lip_mask.txt", "emo_mask": out / "emo_mask.txt"}


def toy_run_config(data_dir, out_dir, total_epochs: int = 40, **overrides) -> dict:
    data_dir = Path(data_dir)
    cfg = {
        "paths": {
            "manifest": str(data_dir / "manifest.jsonl"),
            "mesh": str(data_dir / "template.obj"),
            "out_dir": str(out_dir),
        },
        "model": {"C": 64, "n_styles": 1, "n_emotions": len(EMOTIONS), "fps": FPS},
        "train": {"total_epochs": total_epochs, "seed": 0, "checkpoint_every": 10},
    }
    for section, values in overrides.items():
        cfg.setdefault(section, {}).update(values)
    return cfg
