"""Reading and writing clips as directories of numbered 8-bit RGB PNG frames."""

from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .errors import SequenceIOError


def load_sequence(directory):
    """Load every PNG in ``directory`` (lexicographic order) as a (T, H, W, 3) uint8 array."""
    directory = Path(directory)
    if not directory.is_dir():
        raise SequenceIOError(f"frame directory not found: {directory}")
    entries = sorted(p for p in directory.iterdir() if p.is_file() and not p.name.startswith("."))
    if not entries:
        raise SequenceIOError(f"no frames in {directory}")
    frames = []
    for path in entries:
        try:
            with Image.open(path) as img:
                arr = np.asarray(img.convert("RGB"))
        except (UnidentifiedImageError, OSError) as exc:
            raise SequenceIOError(f"not a readable image: {path}") from exc
        if frames and arr.shape != frames[0].shape:
            raise SequenceIOError(
                f"frame {path.name} has size {arr.shape[1]}x{arr.shape[0]}, expected "
                f"{frames[0].shape[1]}x{frames[0].shape[0]} (from {entries[0].name})")
        frames.append(arr)
    return np.stack(frames)


def save_sequence(frames, directory, digits=8):
    """Write frames as ``00000000.png``, ``00000001.png``, ...

    Accepts a (T, H, W, 3) uint8 array or a (T, 3, H, W) float tensor in [0, 1].
    """
    if isinstance(frames, torch.Tensor):
        frames = to_uint8(frames)
    frames = np.asarray(frames)
    if frames.dtype != np.uint8 or frames.ndim != 4 or frames.shape[-1] != 3:
        raise SequenceIOError(f"expected (T, H, W, 3) uint8 frames, got {frames.dtype} {frames.shape}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, frame in enumerate(frames):
        path = directory / f"{t:0{digits}d}.png"
        Image.fromarray(frame).save(path)
        paths.append(path)
    return paths


def to_uint8(clip):
    """(T, 3, H, W) float tensor in [0, 1] -> (T, H, W, 3) uint8 array (rounded)."""
    arr = clip.detach().cpu().clamp(0, 1).permute(0, 2, 3, 1).numpy()
    return np.round(arr * 255.0).astype(np.uint8)


def to_tensor(frames, dtype=torch.float32):
    """(T, H, W, 3) uint8 array -> (T, 3, H, W) float tensor in [0, 1]."""
    return torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2).to(dtype) / 255.0
