import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


def write_triplets(root, names=("clip_a", "clip_b"), frames=5, size=64, scenario="gaussian"):
    from implicit_vsr.degradation import make_triplet, synthetic_clip
    from implicit_vsr.sequence_io import save_sequence

    for k, name in enumerate(names):
        triplet = make_triplet(synthetic_clip(frames, size, size, seed=k), scenario, seed=k)
        for part in ("lr", "dn", "gt"):
            save_sequence(getattr(triplet, part), Path(root) / name / part)
    return Path(root)


@pytest.fixture(scope="session")
def triplet_root(tmp_path_factory):
    return write_triplets(tmp_path_factory.mktemp("data"))
