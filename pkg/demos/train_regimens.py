"""Supervised, unsupervised and fused training of the depth network.

A small desk-scale run: 32 training panoramas at 64x128 and a few epochs
per regimen.  The fused regimen starts from photometric (unsupervised)
training and switches to depth supervision once the unsupervised loss
stops improving.

    python demos/train_regimens.py [epochs]
"""

import sys
import tempfile
import time

from panodepth import padenet
from panodepth import trainer as T
from panodepth.geometry import RigConfig
from panodepth.panorama_io import RunConfig
from panodepth.scenegen import SceneParams, make_dataset

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 4
rig = RigConfig(0.26, 128, 64)
root = tempfile.mkdtemp(prefix="panodepth_demo_")
splits = {}
for name, seed, count in (("train", 100, 32), ("val", 200, 8), ("test", 300, 8)):
    make_dataset(seed, count, rig, SceneParams(), f"{root}/{name}")
    splits[name] = T.StereoDataset.from_dir(f"{root}/{name}")
train, val, test = splits["train"], splits["val"], splits["test"]

config = RunConfig(epochs=epochs, seed=0)
print(f"untrained  abs rel {T.evaluate(padenet.build(seed=0), test).abs_rel:.3f}")

t0 = time.time()
model = padenet.build(seed=0)
run = T.train_supervised(model, train, val, config)
model.load_state_dict(run.best_state)
print(run.log_text())
print(f"supervised abs rel {T.evaluate(model, test).abs_rel:.3f}  ({time.time() - t0:.0f} s)")

# The unsupervised run never sees ground truth, only the bottom view.
t0 = time.time()
model = padenet.build(seed=0)
phase1 = T.train_unsupervised(model, train, val, config)
model.load_state_dict(phase1.best_state)
print(f"unsupervised abs rel {T.evaluate(model, test).abs_rel:.3f}  ({time.time() - t0:.0f} s)")

# Fused training reuses the finished unsupervised phase up to its steady epoch.
t0 = time.time()
model = padenet.build(seed=0)
fused = T.train_fused(model, train, val, config, phase1=phase1)
model.load_state_dict(fused.best_state)
print(f"fused abs rel {T.evaluate(model, test).abs_rel:.3f}  ({time.time() - t0:.0f} s)")
print(T.evaluate(model, test).table("fused"))
