# Why ship codebook indices instead of an arithmetic-coded stream?
#
# This script walks through both halves of the argument at desk scale.
# Part 1 encodes symbols with a range coder and decodes them with a model
# whose probabilities are off by one part in a million -- the kind of gap
# cross-platform float math produces for free.  Part 2 decodes an actual
# bitstream under several float-perturbation modes and shows the decoded
# indices never move.
#
# Run:  python3 demos/desync_vs_indices.py

import numpy as np

from vqvc.codec import CodecConfig, CodecModel, encode_sequence, init_bundle
from vqvc.autoencoder import AutoencoderConfig
from vqvc.context import ContextConfig
from vqvc.determinism import (
    PerturbationSpec,
    SymbolModel,
    ac_roundtrip_demo,
    cross_decode_report,
)
from vqvc.quantizer import CodebookSpec

# ---- part 1: the entropy-coded baseline falls over -----------------------

print("=" * 60)
print("part 1: range coder with a slightly wrong decoder model")
print("=" * 60)

model = SymbolModel(64)
symbols = model.sample(20_000, seed=0)

clean = ac_roundtrip_demo(symbols, model, eps=0.0)
print(f"eps=0      -> lossless over {clean.symbol_count} symbols")

for seed in range(5):
    r = ac_roundtrip_demo(symbols, model, eps=1e-6, seed=seed)
    where = f"desync at symbol {r.first_mismatch}" if r.desynced else "survived"
    print(f"eps=1e-6 seed={seed} -> {where}")

# Note the shape of the failure: it is not a sprinkle of independent
# symbol errors.  Once the decoder's interval drifts off the encoder's,
# every later symbol is drawn from the wrong interval -- the stream is
# garbage from the first mismatch on.

# ---- part 2: the index pipeline does not care ----------------------------

print()
print("=" * 60)
print("part 2: decoding one real bitstream under float perturbations")
print("=" * 60)

cfg = CodecConfig(
    gop=4,
    key_spec=CodebookSpec((64, 32, 16)),
    pred_spec=CodebookSpec((8, 32, 16)),
    ae=AutoencoderConfig(widths=(8, 16), n_c=16, resblocks=1),
    ctx=ContextConfig(channels=16, heads=4, head_dim=4),
)
codec = CodecModel(cfg, init_bundle(cfg, seed=1))

rng = np.random.default_rng(0)
base = rng.uniform(size=(3, 128, 128)).astype(np.float32)
clip = [np.roll(base, 2 * t, axis=2) for t in range(4)]
stream = encode_sequence(clip, codec)[0]

rows = cross_decode_report(stream, codec)
print(f"{'mode':<32} {'index hash':<18} {'bpp':<10} min PSNR vs none")
for row in rows:
    print(f"{row.mode:<32} {row.index_hash:016x}  {row.bpp:<10.5f} "
          f"{min(row.psnr_vs_none):.1f} dB")

# Every mode consumed byte-identical indices (one hash, one bpp).  The
# perturbations only jiggle the *pixels* after dequantization, and even
# the crudest one (rounding every intermediate to 16 bits) stays far
# above the 40 dB visually-lossless line.
