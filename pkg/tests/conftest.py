import os

import numpy as np
import pytest

from ocular.schemas.box import Annotation, Box, RegionClass
from ocular.schemas.dataset import DatasetManifest, ManifestEntry, Split
from ocular.schemas.network import DEFAULT_ANCHORS, NetworkConfig, Profile
from ocular.services.annotations import write_annotations
from ocular.services.dataset import write_manifest
from ocular.services.image_codec import write_image
from ocular.services.synth import synth_generate


def pytest_collection_modifyitems(config, items):
    if os.environ.get("OCULAR_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set OCULAR_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    """2-class tiny network on 64x64 grayscale input (2x2 grid)"""
    return NetworkConfig(
        num_classes=2,
        input_channels=1,
        input_size=64,
        profile=Profile.TINY,
        anchor_priors=list(DEFAULT_ANCHORS),
    )


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """12 grayscale 64x64 synthetic images; returns the manifest path"""
    out = tmp_path_factory.mktemp("synth")
    synth_generate(count=12, seed=3, image_size=64, output_dir=str(out), channels=1)
    return str(out / "manifest.txt")


def iris(cx, cy, w, h):
    return Annotation(class_id=RegionClass.IRIS, box=Box(cx=cx, cy=cy, w=w, h=h))


def periocular(cx, cy, w, h):
    return Annotation(class_id=RegionClass.PERIOCULAR, box=Box(cx=cx, cy=cy, w=w, h=h))


@pytest.fixture
def make_test_manifest(tmp_path):
    """Writes annotations (and blank images) for {image_id: annotations}, all in the test split"""

    def factory(ground_truth, split=Split.TEST):
        entries = []
        for image_id, annotations in ground_truth.items():
            image_path = tmp_path / f"{image_id}.pgm"
            label_path = tmp_path / f"{image_id}.txt"
            write_image(str(image_path), np.zeros((64, 64), dtype=np.uint8))
            write_annotations(str(label_path), annotations)
            entries.append(ManifestEntry(
                image_id=image_id, image_path=str(image_path), annotation_path=str(label_path), split=split,
            ))
        manifest = DatasetManifest(entries=entries, seed=0)
        path = tmp_path / "manifest.txt"
        write_manifest(str(path), manifest)
        return manifest, str(path)

    return factory


@pytest.fixture
def iris_factory():
    return iris


@pytest.fixture
def periocular_factory():
    return periocular
