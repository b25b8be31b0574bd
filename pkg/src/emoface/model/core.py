"""Two-branch speech-to-mesh-offset model.

A content branch and an emotion branch each encode the audio and decode
per-frame vertex offsets autoregressively; a fusion stage blends them. The
content decoder output is computed once per content clip and shared between
the self- and cross-reconstruction paths.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, fields

import numpy as np

from ..autodiff import Tensor, mean, no_grad, reshape, softmax
from ..autodiff.checkpoint import dumps_tensors, loads_tensors
from ..data import MeshSequence
from ..errors import ConfigError, FormatError, SequenceError
from ..mesh import MeshTopology, build_spiral_table
from ..nn import Linear, Module
from .audio import AudioClip, AudioEncoder, FrozenFrontend, frame_count, resample_frames
from .decoder import BranchDecoder, autoregress, teacher_history
from .fusion import MeshAttention

FUSION_MODES = ("mesh_attention", "add")
ALIGNMENT_MODES = ("hard", "soft")


@dataclass
class ModelConfig:
    C: int = 64
    n_styles: int = 1
    n_emotions: int = 8
    n_levels: int = 2
    heads: int = 4
    layers: int = 1
    fps: float = 30.0
    sample_rate: int = 16000
    n_mels: int = 64
    spiral_k: int = 2
    spiral_cap: int = 16
    spiral_dilation: int = 1
    delta: int = 3
    fusion_layers: int = 2
    fusion: str = "mesh_attention"
    alpha_per_axis: bool = False
    replicate_pad: bool = False
    alignment: str = "hard"
    zero_init_head: bool = True

    def __post_init__(self):
        if self.C % 16:
            raise ConfigError(f"C must be divisible by 16, got {self.C}")
        if self.C % self.heads:
            raise ConfigError(f"C={self.C} not divisible by heads={self.heads}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        if self.alignment not in ALIGNMENT_MODES:
            raise ConfigError(f"alignment must be one of {ALIGNMENT_MODES}, got {self.alignment!r}")
        for name in ("n_styles", "n_emotions", "n_levels", "layers", "delta", "fusion_layers", "spiral_dilation"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class StyleCondition:
    style_onehot: np.ndarray
    level_onehot: np.ndarray

    def __post_init__(self):
        for name in ("style_onehot", "level_onehot"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if not (np.count_nonzero(v == 1.0) == 1 and np.count_nonzero(v) == 1):
                raise ValueError(f"{name} must be one-hot, got {v.tolist()}")
            setattr(self, name, v)

    @classmethod
    def from_indices(cls, style: int, level: int, n_styles: int, n_levels: int = 2) -> "StyleCondition":
        if not 0 <= style < n_styles:
            raise ValueError(f"style index {style} outside [0, {n_styles})")
        if not 0 <= level < n_levels:
            raise ValueError(f"level index {level} outside [0, {n_levels})")
        return cls(np.eye(n_styles)[style], np.eye(n_levels)[level])


class EmoFaceModel(Module):
    def __init__(self, config: ModelConfig, topology: MeshTopology, template: np.ndarray, seed: int = 0):
        rng = np.random.default_rng(seed)
        template = np.asarray(template, dtype=np.float64)
        if template.shape != (topology.V, 3):
            raise ValueError(f"template must be {topology.V} x 3, got {template.shape}")
        self.config = config
        self.topology = topology
        self.template = template
        V, C = topology.V, config.C
        self.spiral_table = build_spiral_table(topology, config.spiral_k, None,
                                               config.spiral_dilation, cap=config.spiral_cap)
        self.frontend = FrozenFrontend(config.n_mels, config.fps)
        self.content_encoder = AudioEncoder(config.n_mels, C, rng)
        self.emotion_encoder = AudioEncoder(config.n_mels, C, rng)
        dec = dict(layers=config.layers, heads=config.heads, alignment=config.alignment,
                   zero_head=config.zero_init_head)
        self.content_decoder = BranchDecoder(V, C, config.n_styles, config.n_levels, rng, **dec)
        self.emotion_decoder = BranchDecoder(V, C, config.n_styles, config.n_levels, rng, **dec)
        self.mesh_attention = MeshAttention(V, C, self.spiral_table, rng, config.delta,
                                            config.fusion_layers, config.alpha_per_axis,
                                            config.replicate_pad)
        self.emotion_classifier = Linear(C, config.n_emotions, rng)

    @property
    def V(self) -> int:
        return self.topology.V

    def encoder(self, which: str) -> AudioEncoder:
        if which == "content":
            return self.content_encoder
        if which == "emotion":
            return self.emotion_encoder
        raise ValueError(f"unknown encoder {which!r}")

    def decoder(self, which: str) -> BranchDecoder:
        return self.content_decoder if which == "content" else self.emotion_decoder

    def frozen_features(self, source, n_frames: int | None = None) -> np.ndarray:
        """Frozen first-stage features for an :class:`AudioClip` or a precomputed ``T x n_mels`` array."""
        if isinstance(source, AudioClip):
            return self.frontend(source, n_frames)
        arr = np.asarray(source, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != self.config.n_mels:
            raise ValueError(f"precomputed features must be T x {self.config.n_mels}, got {arr.shape}")
        return arr if n_frames is None else resample_frames(arr, n_frames)

    def fuse(self, f_e: Tensor, f_c: Tensor, d_e: Tensor, d_c: Tensor) -> Tensor:
        """Offsets ``T x V x 3`` from unbatched features/offsets."""
        if self.config.fusion == "add":
            return d_e + d_c
        T = d_e.shape[0]
        out = self.mesh_attention(
            reshape(f_e, (1,) + f_e.shape), reshape(f_c, (1,) + f_c.shape),
            reshape(d_e, (1, T, self.V, 3)), reshape(d_c, (1, T, self.V, 3)),
        )
        return reshape(out, (T, self.V, 3))

    def class_logits(self, f_e: Tensor) -> Tensor:
        return self.emotion_classifier(mean(f_e, axis=0, keepdims=True))


# -- operations -----------------------------------------------------------------

def encode_audio(model: EmoFaceModel, clip, which: str, target_fps: float | None = None) -> Tensor:
    """``T x C`` features, ``T = round(duration * target_fps)``."""
    fps = model.config.fps if target_fps is None else target_fps
    if not fps > 0:
        raise ValueError(f"target fps must be positive, got {fps}")
    if isinstance(clip, AudioClip):
        if clip.samples.size == 0:
            raise ValueError("empty audio clip")
        n = frame_count(clip.duration, fps)
        frozen = model.frozen_features(clip, n)
    else:
        frozen = model.frozen_features(clip)
    return model.encoder(which)(frozen)


def classify_emotion(model: EmoFaceModel, f_e: Tensor) -> Tensor:
    if f_e.ndim != 2 or f_e.shape[0] < 1:
        raise ValueError(f"emotion features must be T x C with T >= 1, got {f_e.shape}")
    return reshape(softmax(model.class_logits(f_e), axis=-1), (model.config.n_emotions,))


def _as_offsets(model: EmoFaceModel, reference, template=None) -> Tensor:
    if isinstance(reference, Tensor):
        return reference
    if isinstance(reference, MeshSequence):
        base = reference.template if template is None and reference.template is not None else template
        base = model.template if base is None else base
        return Tensor(reference.frames - np.asarray(base)[None])
    return Tensor(np.asarray(reference, dtype=np.float64))


def branch_offsets(decoder, features: Tensor, cond, ref_off: Tensor, mask=None,
                   mode: str = "two_pass", own: Tensor | None = None) -> Tensor:
    """Run one branch decoder over a full sequence under a guidance mask.

    ``mask=None`` or all-true is teacher forcing (one parallel pass). In
    ``two_pass`` mode, unguided history slots take the branch's own
    teacher-forced prediction of the previous frame (``own``, computed here if
    not given) without back-propagating through it; in ``autoregressive`` mode
    decoding is sequential and unguided slots take the live previous output.
    """
    T = ref_off.shape[0]
    seed = ref_off[0]
    if mask is None or all(bool(m) for m in mask[1:]):
        return decoder(features, cond.style_onehot, cond.level_onehot, teacher_history(seed, ref_off))
    if len(mask) != T:
        raise SequenceError(f"guidance mask has {len(mask)} entries for {T} frames")
    if mode == "autoregressive":
        return autoregress(decoder, features, cond, seed, T, ref_off, mask)
    if mode != "two_pass":
        raise ValueError(f"unknown scheduled-sampling mode {mode!r}")
    if own is None:
        with no_grad():
            own = decoder(features, cond.style_onehot, cond.level_onehot, teacher_history(seed, ref_off))
    guided = np.asarray(mask, dtype=bool)[1:, None, None]
    prev = np.where(guided, ref_off.data[:-1], own.data[:-1])
    hist = np.concatenate([ref_off.data[:1], prev], axis=0)
    return decoder(features, cond.style_onehot, cond.level_onehot, Tensor(hist))


@dataclass
class ForwardOutput:
    fused: Tensor          # T x V x 3
    emotion: Tensor        # T x V x 3
    content: Tensor        # T x V x 3
    probs: Tensor          # N_e
    logits: Tensor         # 1 x N_e


def forward_train(model: EmoFaceModel, clip_e, clip_c, cond: StyleCondition, reference,
                  guidance_mask=None, mode: str = "autoregressive", template=None) -> ForwardOutput:
    """Single reconstruction path: emotion from ``clip_e``, content from ``clip_c``.

    Unguided frames feed back the branch's live previous output by default;
    ``mode="two_pass"`` uses the cheaper training approximation instead.
    """
    ref_off = _as_offsets(model, reference, template)
    T = ref_off.shape[0]
    f_e = _features(model, clip_e, "emotion", T)
    f_c = _features(model, clip_c, "content", T)
    if guidance_mask is not None and len(guidance_mask) != T:
        raise SequenceError(f"guidance mask has {len(guidance_mask)} entries for {T} frames")
    d_e = branch_offsets(model.emotion_decoder, f_e, cond, ref_off, guidance_mask, mode)
    d_c = branch_offsets(model.content_decoder, f_c, cond, ref_off, guidance_mask, mode)
    logits = model.class_logits(f_e)
    return ForwardOutput(model.fuse(f_e, f_c, d_e, d_c), d_e, d_c,
                         reshape(softmax(logits, axis=-1), (model.config.n_emotions,)), logits)


def _features(model, source, which, T) -> Tensor:
    if isinstance(source, Tensor):
        f = source
    elif isinstance(source, AudioClip):
        f = model.encoder(which)(model.frozen_features(source, frame_count(source.duration, model.config.fps)))
    else:
        f = model.encoder(which)(model.frozen_features(source))
    if f.shape[0] != T:
        raise SequenceError(f"{which} audio gives {f.shape[0]} frames, reference has {T}")
    return f


@dataclass
class PairOutput:
    fused_self: Tensor
    fused_cross: Tensor
    emotion_self: Tensor
    emotion_cross: Tensor
    content: Tensor
    logits_a: Tensor
    logits_b: Tensor


def forward_pair(model: EmoFaceModel, frozen_a: np.ndarray, frozen_b: np.ndarray,
                 cond_a: StyleCondition, cond_b: StyleCondition, ref_a: Tensor, ref_b: Tensor,
                 mask=None, mode: str = "two_pass", own: PairOutput | None = None) -> PairOutput:
    """Self and cross reconstruction for clips ``a`` (c1, e1) and ``b`` (c1, e2).

    The content decoder runs once on clip ``a`` and feeds both paths.
    """
    f_c = model.content_encoder(frozen_a)
    f_e1 = model.emotion_encoder(frozen_a)
    f_e2 = model.emotion_encoder(frozen_b)
    d_c = branch_offsets(model.content_decoder, f_c, cond_a, ref_a, mask, mode,
                         None if own is None else own.content)
    d_e1 = branch_offsets(model.emotion_decoder, f_e1, cond_a, ref_a, mask, mode,
                          None if own is None else own.emotion_self)
    d_e2 = branch_offsets(model.emotion_decoder, f_e2, cond_b, ref_b, mask, mode,
                          None if own is None else own.emotion_cross)
    return PairOutput(
        fused_self=model.fuse(f_e1, f_c, d_e1, d_c),
        fused_cross=model.fuse(f_e2, f_c, d_e2, d_c),
        emotion_self=d_e1,
        emotion_cross=d_e2,
        content=d_c,
        logits_a=model.class_logits(f_e1),
        logits_b=model.class_logits(f_e2),
    )


def predict_sequence(model: EmoFaceModel, clip, cond: StyleCondition, template=None,
                     first_frame=None) -> MeshSequence:
    """Fully autoregressive inference; ``first_frame`` (default: template) seeds both decoders."""
    template = model.template if template is None else np.asarray(template, dtype=np.float64)
    if isinstance(clip, AudioClip) and clip.samples.size == 0:
        raise ValueError("empty audio clip")
    with no_grad():
        f_c = encode_audio(model, clip, "content")
        f_e = encode_audio(model, clip, "emotion")
        T = f_c.shape[0]
        seed_frame = template if first_frame is None else np.asarray(first_frame, dtype=np.float64)
        seed = Tensor(seed_frame - template)
        d_c = autoregress(model.content_decoder, f_c, cond, seed, T)
        d_e = autoregress(model.emotion_decoder, f_e, cond, seed, T)
        fused = model.fuse(f_e, f_c, d_e, d_c)
    return MeshSequence(template[None] + fused.data, model.config.fps, template.copy())


# -- checkpoints -------------------------------------------------------------------

def config_tensors(config: ModelConfig, V: int) -> "OrderedDict[str, np.ndarray]":
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    out["config/V"] = np.array(float(V))
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "fusion":
            value = FUSION_MODES.index(value)
        elif f.name == "alignment":
            value = ALIGNMENT_MODES.index(value)
        out[f"config/{f.name}"] = np.array(float(value))
    return out


def config_from_tensors(tensors) -> tuple[ModelConfig, int]:
    kw = {}
    for f in fields(ModelConfig):
        key = f"config/{f.name}"
        if key not in tensors:
            raise FormatError(f"checkpoint lacks {key}")
        raw = float(tensors[key])
        if f.name == "fusion":
            kw[f.name] = FUSION_MODES[int(raw)]
        elif f.name == "alignment":
            kw[f.name] = ALIGNMENT_MODES[int(raw)]
        elif f.type in ("bool", bool):
            kw[f.name] = bool(raw)
        elif f.type in ("int", int):
            kw[f.name] = int(raw)
        else:
            kw[f.name] = raw
    if "config/V" not in tensors:
        raise FormatError("checkpoint lacks config/V")
    return ModelConfig(**kw), int(float(tensors["config/V"]))


def model_tensors(model: EmoFaceModel) -> "OrderedDict[str, np.ndarray]":
    out = config_tensors(model.config, model.V)
    out["template"] = model.template
    for k, v in model.state_dict().items():
        out[f"param/{k}"] = v
    return out


def model_from_tensors(tensors, topology: MeshTopology, template=None) -> EmoFaceModel:
    config, V = config_from_tensors(tensors)
    if V != topology.V:
        raise FormatError(f"checkpoint was trained on V={V}, mesh has V={topology.V}")
    if template is None:
        template = tensors["template"]
    model = EmoFaceModel(config, topology, template)
    model.load_state_dict({k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")})
    return model


def save_model(model: EmoFaceModel, path, extra=None) -> None:
    t = model_tensors(model)
    if extra:
        t.update(extra)
    with open(path, "wb") as fh:
        fh.write(dumps_tensors(t))


def load_model(path, topology: MeshTopology, template=None) -> EmoFaceModel:
    with open(path, "rb") as fh:
        return model_from_tensors(loads_tensors(fh.read()), topology, template)
