import numpy as np
import pytest

from emoface.mesh import build_adjacency, tetrahedron
from emoface.model import AudioClip, EmoFaceModel, ModelConfig


def tiny_model(seed=0, **overrides):
    """V=4 tetrahedron model, small enough for finite-difference checks."""
    verts, faces = tetrahedron()
    kw = dict(C=16, heads=2, n_mels=8, n_styles=2, n_emotions=3, spiral_k=1, spiral_cap=4)
    kw.update(overrides)
    return EmoFaceModel(ModelConfig(**kw), build_adjacency(faces, 4), verts * 0.5, seed=seed)


def chirp(duration=0.2, rate=16000, f0=220.0, seed=0):
    t = np.arange(int(round(duration * rate))) / rate
    noise = np.random.default_rng(seed).normal(scale=0.05, size=t.size)
    return AudioClip(0.4 * np.sin(2 * np.pi * f0 * (1 + t) * t) + noise, rate)


@pytest.fixture
def model():
    return tiny_model(zero_init_head=False)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    from emoface.toy import build_toy_dataset

    return build_toy_dataset(tmp_path_factory.mktemp("toy"))


# -- acceptance report -----------------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
