"""Training loops for the supervised, unsupervised and fused regimens, and
held-out evaluation.

A run is fully determined by (seed, config, dataset contents): the model is
initialized from ``config.seed`` and the epoch shuffles come from a PCG64
stream seeded the same way.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from panodepth import losses
from panodepth.autodiff import Adam, Tensor
from panodepth.errors import DataError
from panodepth.geometry import RigConfig, angle_matrix, disparity_to_depth
from panodepth.metrics import MetricsReport, compute_metrics
from panodepth.padenet import PadeNetConfig, PadeNetModel, build
from panodepth.panorama_io import RunConfig, ensure_dir, load_checkpoint, save_checkpoint
from panodepth.scenegen import load_sample, read_manifest

EVAL_BATCH = 8


class StereoDataset:
    """Stereo pairs held in memory as (N, 3, H, W) float32 arrays.

    Ground truth is only handed out through :meth:`gt_disparity` and
    :meth:`gt_depth`, which count their calls in ``gt_reads`` so a caller can
    prove that a run never touched it.  A dataset built with
    ``allow_gt=False`` refuses those calls outright.
    """

    def __init__(self, top, bottom, rig: RigConfig, gt_disparity=None, gt_depth=None,
                 allow_gt: bool = True, name: str = ""):
        self.top = np.asarray(top, dtype=np.float32)
        self.bottom = np.asarray(bottom, dtype=np.float32)
        if self.top.shape != self.bottom.shape or self.top.ndim != 4 or self.top.shape[1] != 3:
            raise DataError(f"views must be matching (N, 3, H, W) arrays, got {self.top.shape}, {self.bottom.shape}")
        self.rig = rig
        self._gt_disparity = None if gt_disparity is None else np.asarray(gt_disparity, dtype=np.float32)
        self._gt_depth = None if gt_depth is None else np.asarray(gt_depth, dtype=np.float32)
        self.allow_gt = allow_gt
        self.gt_reads = 0
        self.name = name

    @classmethod
    def from_samples(cls, samples, **kw) -> "StereoDataset":
        samples = list(samples)
        if not samples:
            raise DataError("dataset is empty")
        rig = samples[0].rig
        top = np.stack([s.top_rgb.data.transpose(2, 0, 1) for s in samples])
        bottom = np.stack([s.bottom_rgb.data.transpose(2, 0, 1) for s in samples])
        has_gt = all(s.gt_disparity is not None and s.top_depth is not None for s in samples)
        disp = np.stack([s.gt_disparity.data[None] for s in samples]) if has_gt else None
        depth = np.stack([s.top_depth.data[None] for s in samples]) if has_gt else None
        return cls(top, bottom, rig, disp, depth, **kw)

    @classmethod
    def from_dir(cls, root, with_gt: bool = True) -> "StereoDataset":
        """Load every sample listed in ``root/manifest.txt``."""
        entries = read_manifest(root)
        rigs = {e.rig for e in entries}
        if len(rigs) != 1:
            raise DataError(f"{root}: samples use {len(rigs)} different rigs")
        try:
            samples = [load_sample(root, e, with_gt=with_gt) for e in entries]
        except FileNotFoundError as exc:
            raise DataError(f"{root}: missing file {exc.filename}") from None
        return cls.from_samples(samples, allow_gt=with_gt, name=str(root))

    def __len__(self):
        return self.top.shape[0]

    @property
    def has_gt(self) -> bool:
        return self.allow_gt and self._gt_disparity is not None

    def subset(self, indices, allow_gt: Optional[bool] = None) -> "StereoDataset":
        idx = np.asarray(indices, dtype=np.int64)
        pick = (lambda a: None if a is None else a[idx])
        return StereoDataset(self.top[idx], self.bottom[idx], self.rig, pick(self._gt_disparity),
                             pick(self._gt_depth), self.allow_gt if allow_gt is None else allow_gt, self.name)

    def without_gt(self) -> "StereoDataset":
        return StereoDataset(self.top, self.bottom, self.rig, allow_gt=False, name=self.name)

    def views(self, indices):
        return self.top[indices], self.bottom[indices]

    def _gt(self, arr, what):
        if not self.allow_gt:
            raise DataError(f"ground-truth {what} requested from a dataset without gt access")
        if arr is None:
            raise DataError(f"dataset has no ground-truth {what}")
        self.gt_reads += 1
        return arr

    def gt_disparity(self, indices=slice(None)):
        return self._gt(self._gt_disparity, "disparity")[indices]

    def gt_depth(self, indices=slice(None)):
        return self._gt(self._gt_depth, "depth")[indices]


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    val_abs_rel: float
    checkpoint: str = "-"

    def line(self) -> str:
        return f"{self.epoch} {self.phase} {self.loss!r} {self.val_abs_rel!r} {self.checkpoint}"


@dataclass
class PlateauDetector:
    """Flags a plateau after ``patience`` epochs in a row whose relative loss
    improvement is below ``tol``."""

    tol: float = 0.01
    patience: int = 3
    last: Optional[float] = None
    streak: int = 0

    def update(self, loss: float) -> bool:
        if self.last is not None:
            gain = (self.last - loss) / abs(self.last) if self.last else 0.0
            self.streak = self.streak + 1 if gain < self.tol else 0
        self.last = loss
        return self.streak >= self.patience


@dataclass
class TrainRun:
    config: RunConfig
    regimen: str
    history: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    best_state: Optional[dict] = None
    best_val: float = float("inf")
    best_epoch: Optional[int] = None
    final_state: Optional[dict] = None
    steady_epoch: Optional[int] = None
    phase1: Optional["TrainRun"] = None
    handoff_state: Optional[dict] = None
    plateau: PlateauDetector = field(default_factory=PlateauDetector)

    def log_text(self) -> str:
        return "".join(r.line() + "\n" for r in self.history)

    def losses(self, phase: Optional[str] = None) -> list:
        return [r.loss for r in self.history if phase is None or r.phase == phase]


# -- evaluation ----------------------------------------------------------------

def predict_disparity(model: PadeNetModel, rgb: np.ndarray, batch: int = EVAL_BATCH) -> np.ndarray:
    """Full-resolution disparity (N, H, W) for (N, 3, H, W) inputs."""
    out = []
    for i in range(0, rgb.shape[0], batch):
        out.append(model(Tensor(rgb[i:i + batch]))[-1].data[:, 0])
    return np.concatenate(out)


def disparity_maps_to_depth(disp: np.ndarray, rig: RigConfig) -> np.ndarray:
    cos_lat = angle_matrix(rig.with_size(disp.shape[-1], disp.shape[-2])).values
    return disparity_to_depth(disp.astype(np.float64), cos_lat, rig)


def evaluate(model: Optional[PadeNetModel], data: StereoDataset, rig: Optional[RigConfig] = None,
             cap: float = 20.0, disparity=None) -> MetricsReport:
    """Metrics pooled over every pixel of every sample.

    The full-resolution network output is converted to depth with the rig's
    cos-latitude matrix.  Passing ``disparity`` (N, H, W) skips the network.
    """
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    rig = rig or data.rig
    if disparity is None:
        if model is None:
            raise ValueError("need a model or precomputed disparity")
        disparity = predict_disparity(model, data.top)
    depth = disparity_maps_to_depth(np.asarray(disparity), rig)
    return compute_metrics(depth, data.gt_depth()[:, 0], cap)


# -- training ------------------------------------------------------------------

def _phase_loss(phase: str, config: RunConfig, rig: RigConfig):
    if phase == "supervised":
        def fn(model, data, idx):
            top, _ = data.views(idx)
            return losses.multiscale_supervised(model(Tensor(top)), data.gt_disparity(idx))
    else:
        def fn(model, data, idx):
            top, bottom = data.views(idx)
            return losses.unsupervised_loss(model(Tensor(top)), top, bottom, rig, config.lambda_smooth)
    return fn


def checkpoint_meta(model: PadeNetModel, rig: RigConfig, phase: str, **extra) -> dict:
    """Phase tag, model architecture and rig, plus any ``extra`` entries."""
    return {"phase": phase, **extra, **model.config.to_meta(),
            "rig.baseline": repr(float(rig.baseline)), "rig.fov_w": repr(float(rig.fov_w)),
            "rig.fov_h": repr(float(rig.fov_h))}


def _checkpoint(model: PadeNetModel, run: TrainRun, phase: str, epoch: int, loss: float, rig, out_dir) -> str:
    if out_dir is None:
        return "-"
    tag = "fused" if run.regimen == "fused" and phase == "supervised" else phase
    path = os.path.join(out_dir, f"{run.regimen}_{phase}_epoch{epoch:02d}.ckpt")
    meta = checkpoint_meta(model, rig, tag, regimen=run.regimen, stage=phase, epoch=epoch,
                           seed=run.config.seed, loss=repr(float(loss)))
    save_checkpoint(model.state_dict(), meta, path)
    return path


def _run_phase(model: PadeNetModel, train: StereoDataset, val: Optional[StereoDataset], config: RunConfig,
               phase: str, run: TrainRun, out_dir, stop_when_steady: bool = False, select_best: bool = True):
    """Run up to ``config.epochs`` epochs of one phase, appending to ``run``."""
    if len(train) == 0:
        raise DataError("training set is empty")
    if phase == "supervised" and not train.has_gt:
        raise DataError("supervised training needs ground-truth disparity")
    loss_fn = _phase_loss(phase, config, train.rig)
    opt = Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.Generator(np.random.PCG64([config.seed, 1 if phase == "supervised" else 0]))
    detector = PlateauDetector(config.plateau_tol, config.plateau_patience)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        batch_losses = []
        for start in range(0, len(order), config.batch_size):
            idx = np.sort(order[start:start + config.batch_size])
            opt.zero_grad()
            breakdown = loss_fn(model, train, idx)
            breakdown.total.backward()
            opt.step()
            batch_losses.append(breakdown.value)
        epoch_loss = float(np.mean(batch_losses))
        val_abs_rel = evaluate(model, val, cap=config.depth_cap).abs_rel if val is not None else float("nan")
        path = _checkpoint(model, run, phase, epoch, epoch_loss, train.rig, out_dir)
        run.history.append(EpochRecord(epoch, phase, epoch_loss, val_abs_rel, path))
        if path != "-":
            run.checkpoints.append(path)
        if select_best and val is not None and val_abs_rel < run.best_val:
            run.best_val, run.best_epoch, run.best_state = val_abs_rel, epoch, model.state_dict()
        steady = detector.update(epoch_loss)
        if steady and run.steady_epoch is None:
            run.steady_epoch = epoch
            run.handoff_state = model.state_dict()
            if stop_when_steady:
                break
    run.plateau = detector
    run.final_state = model.state_dict()
    if run.handoff_state is None:
        run.handoff_state = run.final_state
    if run.best_state is None:
        run.best_state = run.final_state
    return run


def _write_log(run: TrainRun, out_dir) -> None:
    if out_dir is not None:
        with open(os.path.join(out_dir, "train.log"), "w", encoding="ascii") as f:
            f.write(run.log_text())


def train_supervised(model: PadeNetModel, train: StereoDataset, val: Optional[StereoDataset],
                     config: RunConfig, out_dir=None) -> TrainRun:
    """Adam on the multi-scale smooth-L1 loss; keeps the best-validation state.

    The model is trained in place; ``run.best_state`` holds the parameters of
    the epoch with the lowest validation Abs Rel.
    """
    if out_dir is not None:
        ensure_dir(out_dir)
    run = _run_phase(model, train, val, config, "supervised", TrainRun(config, "supervised"), out_dir)
    _write_log(run, out_dir)
    return run


def train_unsupervised(model: PadeNetModel, train: StereoDataset, val: Optional[StereoDataset],
                       config: RunConfig, out_dir=None, stop_when_steady: bool = False) -> TrainRun:
    """Adam on the photometric + smoothness objective; never reads training gt.

    The plateau detector records ``steady_epoch`` and keeps the parameters of
    that epoch in ``run.handoff_state`` (the last epoch if the loss never
    settles).  With ``stop_when_steady`` the run also ends there.
    """
    if out_dir is not None:
        ensure_dir(out_dir)
    run = _run_phase(model, train.without_gt(), val, config, "unsupervised", TrainRun(config, "unsupervised"),
                     out_dir, stop_when_steady=stop_when_steady)
    _write_log(run, out_dir)
    return run


def train_fused(model: PadeNetModel, train: StereoDataset, val: Optional[StereoDataset],
                config: RunConfig, out_dir=None, phase1: Optional[TrainRun] = None) -> TrainRun:
    """Unsupervised training until the loss is steady, then supervised
    fine-tuning from exactly those parameters.

    ``phase1`` may pass an existing unsupervised run with the same seed and
    config; its handoff state is then reused instead of retraining, which
    is equivalent because training is deterministic.
    """
    if not train.has_gt:
        raise DataError("fused training needs ground-truth disparity for its second phase")
    if out_dir is not None:
        ensure_dir(out_dir)
    run = TrainRun(config, "fused")
    if phase1 is None:
        phase1 = _run_phase(model, train.without_gt(), val, config, "unsupervised", TrainRun(config, "fused"),
                            out_dir, stop_when_steady=True, select_best=False)
    elif phase1.config != config:
        raise ValueError("phase-1 run was trained with a different config")
    stop = phase1.steady_epoch or config.epochs
    run.phase1 = phase1
    run.steady_epoch = phase1.steady_epoch
    run.history.extend(r for r in phase1.history if r.epoch <= stop)
    run.checkpoints.extend(r.checkpoint for r in phase1.history if r.epoch <= stop and r.checkpoint != "-")
    run.handoff_state = {k: v.copy() for k, v in phase1.handoff_state.items()}
    model.load_state_dict(run.handoff_state)
    phase2 = TrainRun(config, "fused")
    _run_phase(model, train, val, config, "supervised", phase2, out_dir)
    run.history.extend(phase2.history)
    run.checkpoints.extend(phase2.checkpoints)
    run.best_state, run.best_val, run.best_epoch = phase2.best_state, phase2.best_val, phase2.best_epoch
    run.final_state = phase2.final_state
    _write_log(run, out_dir)
    return run


def train(regimen: str, model: PadeNetModel, train_data: StereoDataset, val: Optional[StereoDataset],
          config: RunConfig, out_dir=None) -> TrainRun:
    fn = {"supervised": train_supervised, "unsupervised": train_unsupervised, "fused": train_fused}
    if regimen not in fn:
        raise ValueError(f"unknown regimen {regimen!r}")
    return fn[regimen](model, train_data, val, config, out_dir)


def model_from_checkpoint(path):
    """Rebuild a model (architecture from the checkpoint meta) with its weights.

    Returns ``(model, meta)``.
    """
    params, meta = load_checkpoint(path)
    model = build(PadeNetConfig.from_meta(meta), seed=0)
    model.load_state_dict(params)
    return model, meta
