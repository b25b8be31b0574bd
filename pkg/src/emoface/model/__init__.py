from .audio import AudioClip, AudioEncoder, FrozenFrontend, frame_count, log_mel
from .core import (
    EmoFaceModel,
    ForwardOutput,
    ModelConfig,
    PairOutput,
    StyleCondition,
    branch_offsets,
    classify_emotion,
    encode_audio,
    forward_pair,
    forward_train,
    load_model,
    predict_sequence,
    save_model,
)
from .decoder import BranchDecoder, autoregress, decode_branch
from .fusion import MeshAttention, mesh_attention_fuse

__all__ = [
    "AudioClip", "AudioEncoder", "BranchDecoder", "EmoFaceModel", "ForwardOutput",
    "FrozenFrontend", "MeshAttention", "ModelConfig", "PairOutput", "StyleCondition",
    "autoregress", "branch_offsets", "classify_emotion", "decode_branch", "encode_audio",
    "forward_pair", "forward_train", "frame_count", "load_model", "log_mel",
    "mesh_attention_fuse", "predict_sequence", "save_model",
]
