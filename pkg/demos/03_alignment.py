"""Refined offsets vs stacked deformable layers on a 9-pixel translation.

Both aligners have about the same number of weights.  The refined aligner
estimates one offset field and improves it in place; the stacked one chains
three independently predicted deformable convolutions.

Run:  python3 demos/03_alignment.py [steps]   (400 steps take a few minutes)
"""
import sys

import torch

from mixedrc.train.aligntask import REFINED_0, REFINED_3, STACKED_3, TranslationTask, fit_aligner

torch.set_num_threads(1)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 400
task = TranslationTask(shift=(0, 9))

for name, cfg in (("refined, 3 refiners", REFINED_3), ("stacked, 3 layers", STACKED_3),
                  ("refined, no refiner", REFINED_0)):
    res = fit_aligner(cfg, task, steps=steps, seed=0)
    print(f"{name:22s} params={res['params']:6d}  error={res['error']:.4f}  "
          f"(unaligned {res['unaligned']:.4f})")
