"""Evaluation report: per-clip and aggregate PSNR-Y, SSIM-Y and tOF."""

from dataclasses import asdict, dataclass, field
import json
from pathlib import Path

import numpy as np

from .degradation import bicubic_up
from .flow import ClassicalFlow
from .metrics import clip_psnr_y, ssim_y, tof
from .model import restore_clip
from .training import checkpoint_id, load_model, load_triplets

REPORT_SCHEMA = 1
METRICS = ("psnr_y", "ssim", "tof")


@dataclass
class ClipMetrics:
    name: str
    psnr_y: float
    ssim: float
    tof: float
    bicubic_psnr_y: float


@dataclass
class MetricsReport:
    clips: list
    config_fingerprint: str
    checkpoint_id: str
    aggregate: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = aggregate(self.clips)

    def to_dict(self):
        return {
            "schema_version": REPORT_SCHEMA,
            "checkpoint_id": self.checkpoint_id,
            "config_fingerprint": self.config_fingerprint,
            "aggregate": self.aggregate,
            "clips": [asdict(c) for c in self.clips],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def aggregate(clips):
    keys = METRICS + ("bicubic_psnr_y",)
    return {k: float(np.mean([getattr(c, k) for c in clips])) for k in keys}


def score_clip(name, sr, gt, lr, estimator=None):
    estimator = estimator or ClassicalFlow()
    base = bicubic_up(lr, 4).clamp(0, 1)
    return ClipMetrics(
        name=name,
        psnr_y=round(clip_psnr_y(sr, gt), 6),
        ssim=round(ssim_y(sr, gt), 6),
        tof=round(tof(sr, gt, estimator), 6) if sr.shape[0] > 1 else 0.0,
        bicubic_psnr_y=round(clip_psnr_y(base, gt), 6),
    )


def evaluate(checkpoint, data_root, expected=None, bypass=False):
    """Restore every clip under ``data_root`` with the checkpointed model and score it.

    ``bypass`` scores the ground truth against itself (no model run), which
    pins the metric ceilings.
    """
    model, cfg = load_model(checkpoint, expected)
    clips = load_triplets(data_root)
    scores = []
    for clip in clips:
        sr = clip.gt if bypass else restore_clip(model, clip.lr)[0]
        scores.append(score_clip(clip.name, sr, clip.gt, clip.lr))
    return MetricsReport(scores, cfg.fingerprint(), checkpoint_id(checkpoint))


def write_report(report, out_dir, plot=False):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(report.to_json())
    paths = [path]
    if plot:
        paths.append(plot_psnr(report, out_dir / "psnr_per_clip.png"))
    return paths


def plot_psnr(report, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = [c.name for c in report.clips]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(names) + 2), 3))
    ax.plot(x, [c.psnr_y for c in report.clips], "o-", label="restored")
    ax.plot(x, [c.bicubic_psnr_y for c in report.clips], "s--", label="bicubic")
    ax.set_xticks(x, names, rotation=45, ha="right")
    ax.set_ylabel("PSNR-Y (dB)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
