"""Walk through the mixed-resolution coding chain on a synthetic clip.

Run:  python3 demos/01_codec_chain.py
"""
from fractions import Fraction

import numpy as np

from mixedrc.chain import bicubic_baseline, decode_mixed, encode_mixed
from mixedrc.chain.toycodec import toy_encode, toy_quantize
from mixedrc.evaluation import psnr, ssim
from mixedrc.train import synth_clip

# A 32-frame 64x64 luma clip: gratings and shapes drifting at under a pixel per frame.
clip = synth_clip(32, 64, seed=11)
print("source clip", clip.shape)

# The toy intra codec trades bytes for quality through its QP, like a real codec.
for qp in (22, 28, 37, 45):
    n = len(toy_encode(clip[:1], qp))
    print(f"  one frame at qp={qp:2d}: {n:5d} bytes, {psnr(toy_quantize(clip[:1], qp), clip[:1]):.2f} dB")

# Mixed-resolution coding: the whole clip at half resolution (base layer)
# plus one full-resolution key-frame per 16-frame GOP (enhancement layer).
stream = encode_mixed(clip, r=2, gop=16, base_qp=37, el_qp=28)
data = stream.to_bytes()
counts = stream.picture_counts()
el = sum(map(len, stream.el))
bl = sum(map(len, stream.bl))
print(f"container: {len(data)} bytes  (EL {el}, BL {bl}, headers {len(data) - el - bl})")
print(f"key-frames per transmitted picture: {Fraction(counts['el'], counts['bl'])}")

# The decoder recovers the LR clip and one HR reference per GOP.
lr, refs, layout = decode_mixed(data)
print("decoded LR", lr.shape, "refs", len(refs), "of", refs[0].shape)

# Without restoration the best we can do is upsample the base layer.
up = bicubic_baseline(data)
print(f"bicubic baseline: {psnr(up, clip):.2f} dB, SSIM {ssim(up, clip):.4f}")
print(f"key-frame quality: {psnr(np.stack(refs), clip[::16]):.2f} dB")
