"""Repairing the global scale of a network depth map with SGM.

A monocular network can be off by a global factor, for example after a
change of camera.  SGM depth is metric but full of holes.  Fusion keeps the
network's dense structure and borrows SGM's median as the absolute scale.

    python demos/fusion_repair.py [checkpoint]

Without a checkpoint a network is trained for a few epochs first.
"""

import sys
import tempfile

from panodepth import fusion, padenet, sgm
from panodepth import trainer as T
from panodepth.geometry import RigConfig
from panodepth.metrics import compute_metrics
from panodepth.panorama_io import Panorama, RunConfig
from panodepth.scenegen import SceneParams, make_dataset

rig = RigConfig(0.26, 128, 64)
root = tempfile.mkdtemp(prefix="panodepth_demo_")
make_dataset(300, 4, rig, SceneParams(), f"{root}/test")
test = T.StereoDataset.from_dir(f"{root}/test")

if len(sys.argv) > 1:
    model, _ = T.model_from_checkpoint(sys.argv[1])
else:
    make_dataset(100, 32, rig, SceneParams(), f"{root}/train")
    model = padenet.build(seed=0)
    run = T.train_supervised(model, T.StereoDataset.from_dir(f"{root}/train"), None, RunConfig(epochs=4))
    model.load_state_dict(run.best_state)

depth = T.disparity_maps_to_depth(T.predict_disparity(model, test.top), rig)
gt = test.gt_depth()[:, 0]
for i in range(len(test)):
    top = Panorama(test.top[i].transpose(1, 2, 0), "rgb")
    bottom = Panorama(test.bottom[i].transpose(1, 2, 0), "rgb")
    _, sgm_depth = sgm.sgm_depth(top, bottom, rig)
    for k in (0.5, 2.0):
        skewed = k * depth[i]
        fused, report = fusion.fuse(skewed, sgm_depth)
        before, after = compute_metrics(skewed, gt[i]), compute_metrics(fused, gt[i])
        print(f"scene {i} k={k}: scale x{report.scale:.2f}  "
              f"rmse {before.rmse:.3f} -> {after.rmse:.3f}  "
              f"d<1.25 {before.acc_1:.2f} -> {after.acc_1:.2f}")
