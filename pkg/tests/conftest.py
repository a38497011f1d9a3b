import sys
from pathlib import Path

import pytest

# make tests/oracles.py importable regardless of invocation directory
sys.path.insert(0, str(Path(__file__).parent))

from auxcount.synthetic import make_synthetic, write_split_manifests  # noqa: E402


@pytest.fixture(scope="session")
def tiny_scene_dir(tmp_path_factory):
    """Four 64x64 scenes with a train/val split; enough for harness tests."""
    out = tmp_path_factory.mktemp("tiny_scenes")
    manifest = make_synthetic(4, count_range=(8, 16), seed=11, out_dir=out, size=64)
    write_split_manifests(manifest, out, {"train": 3, "val": 1}, seed=11)
    return out
