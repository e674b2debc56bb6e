import numpy as np
import pytest

from vqvc import codec as codec_mod
from vqvc.autoencoder import AutoencoderConfig
from vqvc.context import ContextConfig
from vqvc.quantizer import CodebookSpec


TOY_KEY_SPEC = CodebookSpec((64, 32, 16))
TOY_PRED_SPEC = CodebookSpec((8, 32, 16))


def toy_config(gop=4, pred_spec=TOY_PRED_SPEC):
    return codec_mod.CodecConfig(
        gop=gop,
        key_spec=TOY_KEY_SPEC,
        pred_spec=pred_spec,
        ae=AutoencoderConfig(widths=(8, 16), n_c=16, resblocks=1),
        ctx=ContextConfig(channels=16, heads=4, head_dim=4),
    )


@pytest.fixture(scope="session")
def toy_model():
    cfg = toy_config()
    return codec_mod.CodecModel(cfg, codec_mod.init_bundle(cfg, seed=1))


@pytest.fixture(scope="session")
def toy_clip():
    """Six 128x128 frames: a textured pattern drifting sideways."""
    rng = np.random.default_rng(0)
    base = rng.uniform(size=(3, 128, 128)).astype(np.float32)
    yy, xx = np.mgrid[0:128, 0:128]
    base = 0.5 * base + 0.5 * np.sin(0.1 * (xx + 2 * yy))[None].astype(np.float32)
    base = np.clip(0.5 + 0.5 * base, 0, 1).astype(np.float32)
    return [np.roll(base, 2 * t, axis=2) for t in range(6)]
