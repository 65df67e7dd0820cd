import pytest

from segrefine.synthetic import build_synthetic_bundle
from segrefine.tensorio import write_bundle

from bundles import toy_bundle


@pytest.fixture
def bundle_dir(tmp_path):
    """A valid bundle written to disk; returns (manifest path, bundle)."""
    bundle = toy_bundle()
    manifest = write_bundle(tmp_path / "bundle", bundle)
    return manifest, bundle


@pytest.fixture
def synthetic_case(tmp_path):
    """Noise-free separable bundle on disk plus its ground-truth labels."""
    bundle, gt = build_synthetic_bundle(grid=(6, 6), patch_px=4, num_classes=2,
                                        feature_dim=8)
    manifest = write_bundle(tmp_path / "synthetic", bundle)
    return manifest, bundle, gt
