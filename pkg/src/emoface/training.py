"""Cross-reconstruction training with a two-stage guidance schedule.

Stage 1 (``epoch < switch_epoch``) trains with teacher forcing only. From
``switch_epoch`` on, every pair additionally runs a scheduled-sampling pass
whose per-frame guidance probability decays linearly to ``ratio_floor``;
that pass contributes the second ("primed") group of reconstruction losses.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Adam, Tensor, cross_entropy, getitem, mean_sq_l2
from .data import MeshSequence, read_mseq, read_wav
from .errors import ConfigError, DataError, NumericError
from .model import AudioClip, EmoFaceModel, StyleCondition, forward_pair
from .model.audio import frame_count
from .model.core import PairOutput


LOSS_TERMS = ("self", "cross", "vel", "branch")


@dataclass
class TrainConfig:
    lambda1: float = 1000.0
    lambda2: float = 1000.0
    lambda3: float = 500.0
    lambda4: float = 1000.0
    lambda5: float = 0.0001
    total_epochs: int = 225
    switch_epoch: int | None = None
    ratio_floor: float = 0.0
    lr: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    self_growing_enabled: bool = True
    mesh_attention_enabled: bool = True
    scheduled_mode: str = "two_pass"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.switch_epoch is None:
            self.switch_epoch = max(1, self.total_epochs // 2)
        if not 0 < self.switch_epoch <= self.total_epochs:
            raise ConfigError(f"switch_epoch must lie in (0, {self.total_epochs}], got {self.switch_epoch}")
        if not 0.0 <= self.ratio_floor <= 1.0:
            raise ConfigError(f"ratio_floor must lie in [0, 1], got {self.ratio_floor}")
        for i in range(1, 6):
            if getattr(self, f"lambda{i}") < 0:
                raise ConfigError(f"lambda{i} must be non-negative")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size != 1:
            raise ConfigError("only batch_size = 1 is supported")
        if self.scheduled_mode not in ("two_pass", "autoregressive"):
            raise ConfigError(f"scheduled_mode must be 'two_pass' or 'autoregressive', got {self.scheduled_mode!r}")

    @property
    def lambdas(self) -> tuple[float, float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5)


@dataclass
class LossBreakdown:
    self: float = 0.0
    cross: float = 0.0
    vel: float = 0.0
    branch: float = 0.0
    cls: float = 0.0
    self_p: float = 0.0
    cross_p: float = 0.0
    vel_p: float = 0.0
    branch_p: float = 0.0
    total: float = 0.0
    graph: Tensor | None = field(default=None, repr=False, compare=False)

    def values(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "graph"}


def weighted_total(parts: dict[str, float], lambdas) -> float:
    l1, l2, l3, l4, l5 = lambdas
    return (l1 * (parts["self"] + parts["self_p"]) + l2 * (parts["cross"] + parts["cross_p"])
            + l3 * (parts["vel"] + parts["vel_p"]) + l4 * (parts["branch"] + parts["branch_p"])
            + l5 * parts["cls"])


# -- schedule --------------------------------------------------------------------

def sampling_ratio(epoch: int, config: TrainConfig) -> float:
    """Probability that a history frame comes from the reference at ``epoch``."""
    if not 0 <= epoch < config.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.total_epochs})")
    s = config.switch_epoch
    if epoch < s:
        return 1.0
    span = config.total_epochs - 1 - s
    if span <= 0:
        return config.ratio_floor
    # anchored at the floor so the last epoch lands on it exactly
    floor = config.ratio_floor
    return floor + (1.0 - floor) * (config.total_epochs - 1 - epoch) / span


def in_stage_two(epoch: int, config: TrainConfig) -> bool:
    return config.self_growing_enabled and epoch >= config.switch_epoch


def guidance_mask(T: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    mask = rng.random(T) < ratio
    mask[0] = True   # slot 0 always holds the seed frame
    return mask


# -- pairs -----------------------------------------------------------------------

@dataclass
class ClipRecord:
    audio: str
    speaker: str
    content_id: str
    emotion: str
    level: int
    mesh_sequence: str


@dataclass
class CrossPair:
    clip_a: AudioClip
    clip_b: AudioClip
    ref_a: MeshSequence
    ref_b: MeshSequence
    emotion_a: int
    emotion_b: int
    level_a: int
    level_b: int
    speaker: int
    content_id: str = ""

    def __post_init__(self):
        if self.ref_a.V != self.ref_b.V:
            raise DataError(f"pair references differ in V: {self.ref_a.V} vs {self.ref_b.V}")


def pair_indices(rows: Sequence) -> list[tuple[int, int]]:
    """Ordered ``(a, b)`` row pairs sharing speaker and content with different emotions.

    A content that has a single emotion yields the degenerate pair ``(a, a)``.
    """
    if not rows:
        raise DataError("empty dataset")
    groups: dict[tuple, list[int]] = defaultdict(list)
    for i, row in enumerate(rows):
        groups[(_get(row, "speaker"), _get(row, "content_id"))].append(i)
    out = []
    for key in sorted(groups, key=lambda k: (str(k[0]), str(k[1]))):
        members = groups[key]
        emotions = {_get(rows[i], "emotion") for i in members}
        if len(emotions) == 1:
            out.extend((i, i) for i in members)
            continue
        for a in members:
            for b in members:
                if _get(rows[a], "emotion") != _get(rows[b], "emotion"):
                    out.append((a, b))
    return out


def _get(row, key):
    return row[key] if isinstance(row, dict) else getattr(row, key)


def _trim(seq: MeshSequence, T: int) -> MeshSequence:
    return MeshSequence(seq.frames[:T], seq.fps, seq.template)


def make_cross_pairs(samples: Sequence[dict], emotions: Sequence[str] | None = None,
                     speakers: Sequence[str] | None = None, fps: float = 30.0) -> list[CrossPair]:
    """Build pairs from loaded samples (dicts with ``clip``, ``mesh`` and metadata keys).

    Both clips and references of a pair are trimmed to their common frame count.
    """
    idx = pair_indices(samples)
    emotions = list(emotions) if emotions is not None else sorted({s["emotion"] for s in samples})
    speakers = list(speakers) if speakers is not None else sorted({s["speaker"] for s in samples})
    pairs = []
    for a, b in idx:
        sa, sb = samples[a], samples[b]
        T = min(sa["mesh"].T, sb["mesh"].T,
                frame_count(sa["clip"].duration, fps), frame_count(sb["clip"].duration, fps))
        if T < 1:
            raise DataError(f"pair ({a}, {b}) has no common frames")
        pairs.append(CrossPair(
            clip_a=_trim_clip(sa["clip"], T, fps), clip_b=_trim_clip(sb["clip"], T, fps),
            ref_a=_trim(sa["mesh"], T), ref_b=_trim(sb["mesh"], T),
            emotion_a=emotions.index(sa["emotion"]), emotion_b=emotions.index(sb["emotion"]),
            level_a=int(sa["level"]), level_b=int(sb["level"]),
            speaker=speakers.index(sa["speaker"]), content_id=str(sa["content_id"]),
        ))
    return pairs


def _trim_clip(clip: AudioClip, T: int, fps: float) -> AudioClip:
    n = int(round(T / fps * clip.sample_rate))
    return AudioClip(clip.samples[:n], clip.sample_rate) if n < clip.samples.size else clip


@dataclass
class PreparedPair:
    frozen_a: np.ndarray
    frozen_b: np.ndarray
    ref_a: Tensor
    ref_b: Tensor
    cond_a: StyleCondition
    cond_b: StyleCondition
    label_a: int
    label_b: int

    @property
    def T(self) -> int:
        return self.ref_a.shape[0]


def prepare_pair(model: EmoFaceModel, pair: CrossPair) -> PreparedPair:
    """Cache the frozen audio stage and reference offsets of a pair."""
    T = pair.ref_a.T
    cfg = model.config

    def offsets(seq):
        base = seq.template if seq.template is not None else model.template
        return Tensor(seq.frames - base[None])

    return PreparedPair(
        frozen_a=model.frozen_features(pair.clip_a, T),
        frozen_b=model.frozen_features(pair.clip_b, T),
        ref_a=offsets(pair.ref_a), ref_b=offsets(pair.ref_b),
        cond_a=StyleCondition.from_indices(pair.speaker, pair.level_a, cfg.n_styles, cfg.n_levels),
        cond_b=StyleCondition.from_indices(pair.speaker, pair.level_b, cfg.n_styles, cfg.n_levels),
        label_a=pair.emotion_a, label_b=pair.emotion_b,
    )


# -- losses ----------------------------------------------------------------------

def velocity_loss(pred: Tensor, ref: Tensor) -> Tensor:
    T = pred.shape[0]
    if T < 2:
        return Tensor(0.0)
    dp = getitem(pred, slice(1, T)) - getitem(pred, slice(0, T - 1))
    dr = getitem(ref, slice(1, T)) - getitem(ref, slice(0, T - 1))
    return mean_sq_l2(dp, dr)


def reconstruction_terms(out: PairOutput, ref_a: Tensor, ref_b: Tensor) -> dict[str, Tensor]:
    return {
        "self": mean_sq_l2(out.fused_self, ref_a),
        "cross": mean_sq_l2(out.fused_cross, ref_b),
        "vel": velocity_loss(out.fused_self, ref_a) + velocity_loss(out.fused_cross, ref_b),
        "branch": (mean_sq_l2(out.emotion_self, ref_a) + mean_sq_l2(out.content, ref_a)
                   + mean_sq_l2(out.emotion_cross, ref_b) + mean_sq_l2(out.content, ref_b)),
    }


def compute_losses(tf: PairOutput, ss: PairOutput | None, ref_a: Tensor, ref_b: Tensor,
                   label_a: int, label_b: int, config: TrainConfig) -> LossBreakdown:
    """Weighted loss of the teacher-forced pass ``tf`` and optional scheduled pass ``ss``."""
    l1, l2, l3, l4, l5 = config.lambdas
    terms = reconstruction_terms(tf, ref_a, ref_b)
    terms["cls"] = (cross_entropy(tf.logits_a, [label_a]) + cross_entropy(tf.logits_b, [label_b])) * 0.5
    if ss is not None:
        for k, v in reconstruction_terms(ss, ref_a, ref_b).items():
            terms[f"{k}_p"] = v
    for name, t in terms.items():
        if not np.isfinite(t.data).all():
            raise NumericError(f"loss term {name!r} is not finite")
    zero = Tensor(0.0)
    graph = (
        (terms["self"] + terms.get("self_p", zero)) * l1
        + (terms["cross"] + terms.get("cross_p", zero)) * l2
        + (terms["vel"] + terms.get("vel_p", zero)) * l3
        + (terms["branch"] + terms.get("branch_p", zero)) * l4
        + terms["cls"] * l5
    )
    vals = {k: float(v.data) for k, v in terms.items()}
    parts = {k: vals.get(k, 0.0) for k in ("self", "cross", "vel", "branch", "cls",
                                            "self_p", "cross_p", "vel_p", "branch_p")}
    return LossBreakdown(**parts, total=float(graph.data), graph=graph)


# -- epoch loop ----------------------------------------------------------------------

STAT_COLUMNS = ("epoch", "ratio", "self", "cross", "vel", "branch", "cls",
                "self_p", "cross_p", "vel_p", "branch_p", "total")


@dataclass
class EpochStats:
    epoch: int
    ratio: float
    losses: LossBreakdown

    def row(self) -> list[str]:
        v = self.losses.values()
        return [str(self.epoch), repr(self.ratio)] + [repr(v[c]) for c in STAT_COLUMNS[2:]]


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Per-epoch generator, so a resumed run draws the same numbers as an unbroken one."""
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, epoch])


def train_step(model: EmoFaceModel, optimizer: Adam, pair: PreparedPair, epoch: int,
               config: TrainConfig, rng: np.random.Generator) -> LossBreakdown:
    tf = forward_pair(model, pair.frozen_a, pair.frozen_b, pair.cond_a, pair.cond_b, pair.ref_a, pair.ref_b)
    ss = None
    if in_stage_two(epoch, config):
        mask = guidance_mask(pair.T, sampling_ratio(epoch, config), rng)
        ss = forward_pair(model, pair.frozen_a, pair.frozen_b, pair.cond_a, pair.cond_b,
                          pair.ref_a, pair.ref_b, mask, config.scheduled_mode, own=tf)
    losses = compute_losses(tf, ss, pair.ref_a, pair.ref_b, pair.label_a, pair.label_b, config)
    optimizer.zero_grad()
    losses.graph.backward()
    for name, p in model.named_parameters().items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient for {name} at epoch {epoch}")
    optimizer.step()
    losses.graph = None
    return losses


def train_epoch(model: EmoFaceModel, optimizer: Adam, pairs: Sequence[PreparedPair], epoch: int,
                config: TrainConfig, rng: np.random.Generator | None = None) -> EpochStats:
    """One pass over shuffled pairs, one Adam step per pair; returns mean losses."""
    rng = epoch_rng(config.seed, epoch) if rng is None else rng
    order = rng.permutation(len(pairs))
    sums: dict[str, float] = defaultdict(float)
    for i in order:
        try:
            losses = train_step(model, optimizer, pairs[i], epoch, config, rng)
        except NumericError as exc:
            if "epoch" in str(exc):
                raise
            raise NumericError(f"{exc} at epoch {epoch}") from exc
        for k, v in losses.values().items():
            sums[k] += v
    n = max(len(pairs), 1)
    means = LossBreakdown(**{k: sums[k] / n for k in LossBreakdown().values()})
    ratio = sampling_ratio(epoch, config) if config.self_growing_enabled else 1.0
    return EpochStats(epoch, ratio, means)


# -- trainer with checkpoints ----------------------------------------------------------

class Trainer:
    def __init__(self, model: EmoFaceModel, pairs: Sequence[PreparedPair], config: TrainConfig):
        self.model = model
        self.pairs = list(pairs)
        self.config = config
        self.optimizer = Adam(model.parameters(), lr=config.lr)
        self.epoch = 0

    def run(self, until: int | None = None, on_epoch: Callable[[EpochStats], None] | None = None) -> list[EpochStats]:
        until = self.config.total_epochs if until is None else min(until, self.config.total_epochs)
        history = []
        while self.epoch < until:
            stats = train_epoch(self.model, self.optimizer, self.pairs, self.epoch, self.config)
            self.epoch += 1
            history.append(stats)
            if on_epoch is not None:
                on_epoch(stats)
        return history

    def state_tensors(self):
        from .model.core import model_tensors

        t = model_tensors(self.model)
        names = list(self.model.named_parameters())
        st = self.optimizer.state
        for name, m, v in zip(names, st.m, st.v):
            t[f"adam/m/{name}"] = m
            t[f"adam/v/{name}"] = v
        t["adam/step"] = np.array(float(st.step))
        t["train/epoch"] = np.array(float(self.epoch))
        return t

    def save(self, path) -> None:
        from .autodiff import save_tensors

        save_tensors(path, self.state_tensors())

    def restore(self, tensors) -> None:
        names = list(self.model.named_parameters())
        self.model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("param/")})
        st = self.optimizer.state
        for i, name in enumerate(names):
            st.m[i][...] = tensors[f"adam/m/{name}"]
            st.v[i][...] = tensors[f"adam/v/{name}"]
        st.step = int(float(tensors["adam/step"]))
        self.epoch = int(float(tensors["train/epoch"]))


# -- manifest --------------------------------------------------------------------------

def read_manifest(path) -> list[ClipRecord]:
    """JSON-lines manifest; relative paths resolve against the manifest's directory."""
    base = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            want = {f.name for f in fields(ClipRecord)}
            if "path" in row and "audio" not in row:
                row["audio"] = row.pop("path")
            missing = want - set(row)
            if missing:
                raise DataError(f"{path}:{lineno}: missing fields {sorted(missing)}")
            extra = set(row) - want
            if extra:
                raise DataError(f"{path}:{lineno}: unknown fields {sorted(extra)}")
            row["audio"] = str(base / row["audio"])
            row["mesh_sequence"] = str(base / row["mesh_sequence"])
            row["level"] = int(row["level"])
            records.append(ClipRecord(**row))
    if not records:
        raise DataError(f"{path}: empty manifest")
    return records


def load_samples(records: Sequence[ClipRecord], sample_rate: int = 16000) -> list[dict]:
    samples = []
    for r in records:
        x, rate = read_wav(r.audio, sample_rate)
        samples.append({
            "clip": AudioClip(x, rate), "mesh": read_mseq(r.mesh_sequence),
            "speaker": r.speaker, "content_id": r.content_id, "emotion": r.emotion, "level": r.level,
        })
    return samples
