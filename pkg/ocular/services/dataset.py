"""
Dataset manifests, 40/40/20 splits and image loading for the network
"""
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging
import os
import numpy as np
from PIL import Image
from pydantic import ValidationError

from ..exceptions import DatasetError, FormatError
from ..schemas.box import Annotation
from ..schemas.dataset import DatasetManifest, ManifestEntry, Split
from .annotations import read_annotations
from .image_codec import read_image

logger = logging.getLogger(__name__)

SEED_HEADER = "# seed="
TEST_FRACTION = 0.4
VAL_FRACTION = 0.2

ImageRecord = Union[ManifestEntry, Tuple[str, str, str]]


def split_sizes(count: int) -> Tuple[int, int, int]:
    """(train, test, val): floor of 40/40/20 with the remainder going to train"""
    test = int(np.floor(count * TEST_FRACTION))
    val = int(np.floor(count * VAL_FRACTION))
    return count - test - val, test, val


def make_splits(images: Sequence[ImageRecord], seed: int) -> DatasetManifest:
    """Seeded shuffle, then contiguous train / test / val runs"""
    if len(images) == 0:
        raise DatasetError("cannot split an empty image list")
    if seed < 0:
        raise DatasetError(f"seed must be non-negative, got {seed}")

    records = []
    for item in images:
        if isinstance(item, ManifestEntry):
            records.append((item.image_id, item.image_path, item.annotation_path))
        else:
            records.append(tuple(item))

    n_train, n_test, _ = split_sizes(len(records))
    order = np.random.default_rng(seed).permutation(len(records))
    assigned: Dict[int, Split] = {}
    for rank, index in enumerate(order):
        if rank < n_train:
            assigned[int(index)] = Split.TRAIN
        elif rank < n_train + n_test:
            assigned[int(index)] = Split.TEST
        else:
            assigned[int(index)] = Split.VAL

    entries = [
        ManifestEntry(image_id=image_id, image_path=image_path, annotation_path=annotation_path, split=assigned[i])
        for i, (image_id, image_path, annotation_path) in enumerate(records)
    ]
    manifest = DatasetManifest(entries=entries, seed=seed)
    logger.info(f"Split {len(entries)} images with seed {seed}: {manifest.counts()}")
    return manifest


def read_manifest(path: str) -> DatasetManifest:
    """Relative paths in the file resolve against the manifest's directory"""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")

    seed = 0
    entries = []
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith(SEED_HEADER):
            try:
                seed = int(line[len(SEED_HEADER):].strip())
            except ValueError:
                raise FormatError(f"invalid seed header {line!r}", path=path, line=number)
            continue
        if line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise FormatError(
                f"expected 4 tab-separated fields image_id, image_path, annotation_path, split; got {len(fields)}",
                path=path, line=number,
            )
        image_id, image_path, annotation_path, split = fields
        try:
            entries.append(ManifestEntry(
                image_id=image_id,
                image_path=os.path.join(base, image_path),
                annotation_path=os.path.join(base, annotation_path),
                split=Split(split.strip()),
            ))
        except (ValidationError, ValueError) as e:
            raise FormatError(f"invalid manifest entry: {e}", path=path, line=number) from e

    try:
        return DatasetManifest(entries=entries, seed=seed)
    except ValidationError as e:
        raise FormatError(f"invalid manifest: {e}", path=path) from e


def write_manifest(path: str, manifest: DatasetManifest) -> None:
    base = os.path.dirname(os.path.abspath(path))

    def relative(p: str) -> str:
        return os.path.relpath(os.path.abspath(p), base)

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{SEED_HEADER}{manifest.seed}\n")
        for e in manifest.entries:
            f.write(f"{e.image_id}\t{relative(e.image_path)}\t{relative(e.annotation_path)}\t{e.split.value}\n")
    logger.info(f"Wrote manifest {path} ({len(manifest.entries)} entries)")


def resplit(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    return make_splits(manifest.entries, seed)


def load_ground_truth(manifest: DatasetManifest, split: Optional[Split] = None) -> Dict[str, List[Annotation]]:
    entries = manifest.entries if split is None else manifest.split_entries(split)
    return {e.image_id: read_annotations(e.annotation_path) for e in entries}


def to_network_input(pixels: np.ndarray, channels: int, size: int) -> np.ndarray:
    """uint8 raster -> float32 (channels, size, size) in [0, 1]"""
    image = Image.fromarray(pixels)
    image = image.convert("L" if channels == 1 else "RGB")
    if image.size != (size, size):
        image = image.resize((size, size), Image.BILINEAR)
    array = np.asarray(image, dtype=np.float32) / 255.0
    if channels == 1:
        return array[None, :, :]
    return np.ascontiguousarray(array.transpose(2, 0, 1))


def load_image_tensor(path: str, channels: int, size: int) -> np.ndarray:
    return to_network_input(read_image(path), channels, size)


def load_split(
    manifest: DatasetManifest, split: Split, channels: int, size: int
) -> Tuple[List[str], np.ndarray, List[List[Annotation]]]:
    """(image ids, stacked images (N, C, size, size), annotations) of one split"""
    entries = manifest.split_entries(split)
    if not entries:
        return [], np.zeros((0, channels, size, size), dtype=np.float32), []
    images = np.stack([load_image_tensor(e.image_path, channels, size) for e in entries])
    annotations = [read_annotations(e.annotation_path) for e in entries]
    return [e.image_id for e in entries], images, annotations
