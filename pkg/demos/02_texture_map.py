"""Visualise where a compressed frame departs from its upsampled version.

Pixels whose deviation points the same way a blur would push them are
artifacts (black); deviations against the blur are texture (green); the rest
are flat (gray).

Run:  python3 demos/02_texture_map.py [out.png]
"""
import sys

import numpy as np
from PIL import Image

from mixedrc import imgops, texture
from mixedrc.train import degrade, synth_clip

gt = synth_clip(1, 128, seed=5)[0]
lr = degrade(gt[None], 2, 37)[0]

d = texture.analysis_map(gt, lr)
total = d.size
for name, value in (("artifact", texture.ARTIFACT), ("texture", texture.TEXTURE),
                    ("flat", texture.FLAT)):
    print(f"{name:9s} {np.count_nonzero(d == value) / total:6.1%}")

# A perfect restoration shares the ground-truth map; bicubic does not.
up = imgops.bicubic_resize(lr, 2)
print("loss of bicubic output  ", round(texture.disentangled_loss(lr, up, gt), 4))
print("loss of ground truth    ", texture.disentangled_loss(lr, gt, gt))

out = sys.argv[1] if len(sys.argv) > 1 else "texture_map.png"
Image.fromarray(texture.render_map(d)).save(out)
print("map written to", out)
