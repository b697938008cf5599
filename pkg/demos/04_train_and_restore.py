"""Train the small restoration network and compare it with plain upsampling.

Trains with the desk preset (easy-to-hard reference distances 8, 16, 24, 32),
restores a held-out clip coded at qp 37, then runs a short RD sweep and
reports the BD-rate of restoration against bicubic upsampling.

Run:  python3 demos/04_train_and_restore.py [workdir]   (about 4 minutes on one core)
"""
import sys
from pathlib import Path

import torch

from mixedrc.chain import bicubic_baseline, encode_mixed, restore_stream
from mixedrc.evaluation import bd_rate, bicubic_restorer, model_restorer, psnr, rd_sweep, write_csv
from mixedrc.train import DESK, desk_model_config, run_curriculum, synth_clip

torch.set_num_threads(1)
work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")
work.mkdir(exist_ok=True)

model, report = run_curriculum(DESK, desk_model_config(), work)
for row in report:
    print(f"stage {row['stage']} d<={row['d_max']:2d}: val {row['psnr']:.2f} dB "
          f"({row['seconds']:.0f} s)")

clip = synth_clip(32, 64, seed=777, motion=DESK.motion)
data = encode_mixed(clip, 2, 16, 37, 28).to_bytes()
timings = []
restored = restore_stream(data, model, timings=timings)
print(f"restored {psnr(restored, clip):.2f} dB vs bicubic {psnr(bicubic_baseline(data), clip):.2f} dB"
      f", {1000 * sum(timings) / len(timings):.1f} ms/frame")

qps = [27, 32, 37, 42]
anchor = rd_sweep(clip, qps, bicubic_restorer, el_qp=28, label="bicubic")
test = rd_sweep(clip, qps, model_restorer(model), el_qp=28, label="r3n")
write_csv(work / "rd.csv", [anchor, test])
print(f"BD-rate of restoration vs bicubic: {bd_rate(anchor, test):.1f}%")
