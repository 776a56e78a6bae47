"""Optimization loop, triplet data loading and checkpoints."""

from dataclasses import dataclass
import hashlib
import logging
import math
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import CheckpointMismatch, SequenceIOError, TrainingDiverged, ValidationError
from .flow import make_flow_estimator
from .losses import total_loss
from .model import ImplicitVSR
from .sequence_io import load_sequence, to_tensor

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class Clip:
    name: str
    lr: torch.Tensor
    dn: torch.Tensor
    gt: torch.Tensor


def _load_clip(root, name):
    parts = {}
    for key in ("lr", "dn", "gt"):
        parts[key] = to_tensor(load_sequence(root / key))
    if parts["lr"].shape != parts["dn"].shape:
        raise SequenceIOError(f"{root}: lr {tuple(parts['lr'].shape)} and dn "
                              f"{tuple(parts['dn'].shape)} differ")
    if parts["gt"].shape[0] != parts["lr"].shape[0]:
        raise SequenceIOError(f"{root}: gt and lr frame counts differ")
    return Clip(name, parts["lr"], parts["dn"], parts["gt"])


def load_triplets(data_root):
    """Load one triplet directory (with lr/, dn/, gt/) or a directory of them."""
    root = Path(data_root)
    if not root.is_dir():
        raise SequenceIOError(f"data root not found: {root}")
    if (root / "lr").is_dir():
        return [_load_clip(root, root.name)]
    clips = [_load_clip(d, d.name) for d in sorted(root.iterdir()) if (d / "lr").is_dir()]
    if not clips:
        raise SequenceIOError(f"no triplet directories (lr/, dn/, gt/) under {root}")
    return clips


class Trainer:
    """Adam with cosine-annealed learning rate over windows of 2M+1 frames.

    Each step draws ``batch`` random windows with random LR crops of side
    ``patch`` (clipped to the frame size) and the matching GT/DN crops.
    """

    def __init__(self, cfg, clips):
        if not clips:
            raise ValidationError("no training clips")
        self.cfg = cfg
        self.clips = clips
        self.window = 2 * cfg.model.radius + 1
        for clip in clips:
            if clip.lr.shape[0] < self.window:
                raise ValidationError(f"clip {clip.name} has {clip.lr.shape[0]} frames, "
                                      f"need at least {self.window}")
        torch.manual_seed(cfg.train.seed)
        self.model = ImplicitVSR(cfg.model, make_flow_estimator(cfg.flow))
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=cfg.train.lr)
        self.total_steps = self._total_steps()
        self.scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            self.optimizer, T_max=self.total_steps, eta_min=cfg.train.lr_min)
        self.rng = np.random.default_rng(cfg.train.seed)
        self.step = 0
        self.history = []

    def _total_steps(self):
        t = self.cfg.train
        if t.steps > 0:
            return t.steps
        windows = sum(c.lr.shape[0] - self.window + 1 for c in self.clips)
        return t.epochs * max(1, math.ceil(windows / t.batch))

    def sample_batch(self):
        scale = self.cfg.model.scale
        lr, dn, gt = [], [], []
        for _ in range(self.cfg.train.batch):
            clip = self.clips[self.rng.integers(len(self.clips))]
            start = self.rng.integers(clip.lr.shape[0] - self.window + 1)
            h, w = clip.lr.shape[-2:]
            ph, pw = min(self.cfg.train.patch, h), min(self.cfg.train.patch, w)
            ph, pw = ph - ph % 4, pw - pw % 4
            y = self.rng.integers(h - ph + 1)
            x = self.rng.integers(w - pw + 1)
            frames = slice(start, start + self.window)
            lr.append(clip.lr[frames, :, y:y + ph, x:x + pw])
            dn.append(clip.dn[frames, :, y:y + ph, x:x + pw])
            gt.append(clip.gt[frames, :, y * scale:(y + ph) * scale, x * scale:(x + pw) * scale])
        return torch.stack(lr), torch.stack(dn), torch.stack(gt)

    def loss_on(self, lr, dn, gt):
        sr, corrected = self.model(lr)
        return total_loss(sr, gt, corrected, dn, self.cfg.loss, no_lc=self.cfg.train.no_lc)

    def train_step(self):
        self.model.train()
        lr, dn, gt = self.sample_batch()
        self.optimizer.zero_grad(set_to_none=True)
        loss = self.loss_on(lr, dn, gt)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(self.step + 1, value)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.train.grad_clip)
        self.optimizer.step()
        self.model.project_()
        if self.step < self.total_steps:
            self.scheduler.step()
        self.step += 1
        self.history.append(value)
        return value

    def run(self, steps=None, checkpoint_dir=None, callback=None):
        """Train until ``steps`` (default: the configured total) have been taken."""
        target = self.total_steps if steps is None else steps
        t = self.cfg.train
        while self.step < target:
            value = self.train_step()
            if t.log_every and self.step % t.log_every == 0:
                log.info("step %d loss %.6f lr %.3g", self.step, value, self.scheduler.get_last_lr()[0])
            if checkpoint_dir is not None and t.checkpoint_every and self.step % t.checkpoint_every == 0:
                self.save(Path(checkpoint_dir) / f"step_{self.step:07d}.pt")
            if callback is not None:
                callback(self)
        if checkpoint_dir is not None:
            return self.save(Path(checkpoint_dir) / "last.pt")
        return None

    def state(self):
        return {
            "version": CHECKPOINT_VERSION,
            "fingerprint": self.cfg.fingerprint(),
            "model_fingerprint": self.cfg.model_fingerprint(),
            "config": self.cfg.to_dict(),
            "params": {name: m.state_dict() for name, m in self.model.parameter_groups().items()},
            "optimizer": self.optimizer.state_dict(),
            "scheduler": self.scheduler.state_dict(),
            "rng": {"torch": torch.get_rng_state(), "numpy": self.rng.bit_generator.state},
            "step": self.step,
            "history": list(self.history),
        }

    def save(self, path):
        return save_checkpoint(self.state(), path)

    @classmethod
    def resume(cls, path, clips):
        ckpt = read_checkpoint(path)
        trainer = cls(RunConfig.from_dict(ckpt["config"]), clips)
        load_params(trainer.model, ckpt)
        trainer.optimizer.load_state_dict(ckpt["optimizer"])
        trainer.scheduler.load_state_dict(ckpt["scheduler"])
        torch.set_rng_state(ckpt["rng"]["torch"])
        trainer.rng.bit_generator.state = ckpt["rng"]["numpy"]
        trainer.step = ckpt["step"]
        trainer.history = list(ckpt["history"])
        return trainer


def save_checkpoint(state, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(state, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise CheckpointMismatch(f"checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported checkpoint version {ckpt.get('version')!r}")
    stored = ckpt["fingerprint"]
    actual = RunConfig.from_dict(ckpt["config"]).fingerprint()
    if stored != actual:
        raise CheckpointMismatch(f"{path}: stored fingerprint {stored} does not match its config ({actual})")
    return ckpt


def checkpoint_id(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def load_params(model, ckpt):
    groups = model.parameter_groups()
    missing = set(groups) ^ set(ckpt["params"])
    if missing:
        raise CheckpointMismatch(f"parameter groups differ: {sorted(missing)}")
    for name, module in groups.items():
        module.load_state_dict(ckpt["params"][name])


def load_model(path, expected=None):
    """Rebuild the model stored in a checkpoint.

    ``expected`` (a RunConfig) is checked against the checkpoint's model
    section; a mismatch raises with both fingerprints.
    """
    ckpt = read_checkpoint(path)
    cfg = RunConfig.from_dict(ckpt["config"])
    if expected is not None and expected.model_fingerprint() != cfg.model_fingerprint():
        raise CheckpointMismatch(
            f"checkpoint model fingerprint {cfg.model_fingerprint()} != requested "
            f"{expected.model_fingerprint()}")
    model = ImplicitVSR(cfg.model, make_flow_estimator(cfg.flow))
    load_params(model, ckpt)
    model.eval()
    return model, cfg

