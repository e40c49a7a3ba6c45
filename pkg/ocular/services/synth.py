"""
Synthetic ocular images with coarse iris and periocular annotations

Each image shows a noisy background, a lighter rounded periocular patch
with darker eyelid arcs, and inside it a dark iris ellipse with a darker
pupil. Fine regions are the drawn shapes; coarse annotations expand every
fine region outward by a per-image margin of 5-15% of its size and clip to
the image. Fine boxes are kept under `fine/` for containment checks.
"""
from dataclasses import dataclass
from typing import List, Tuple, Union
import logging
import os
import numpy as np
from PIL import Image, ImageDraw

from ..exceptions import ConfigError
from ..schemas.box import Annotation, Box, RegionClass
from ..schemas.dataset import DatasetManifest
from .annotations import write_annotations
from .dataset import make_splits, write_manifest
from .image_codec import write_image

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 64
MARGIN_RANGE = (0.05, 0.15)
MANIFEST_NAME = "manifest.txt"

PixelBox = Tuple[float, float, float, float]  # x0, y0, x1, y1


@dataclass
class SynthSample:
    pixels: np.ndarray
    coarse: List[Annotation]
    fine: List[Annotation]
    margin: float


def _to_box(corners: PixelBox, size: int) -> Box:
    x0, y0, x1, y1 = (c / size for c in corners)
    return Box.from_corners(x0, y0, x1, y1)


def _expand(corners: PixelBox, margin: float, size: int) -> PixelBox:
    x0, y0, x1, y1 = corners
    dx = margin * (x1 - x0)
    dy = margin * (y1 - y0)
    return (max(0.0, x0 - dx), max(0.0, y0 - dy), min(float(size), x1 + dx), min(float(size), y1 + dy))


def _tone(rng: np.random.Generator, level: float, channels: int) -> Union[int, Tuple[int, int, int]]:
    if channels == 1:
        return int(np.clip(level, 0, 255))
    # warm skin-like tint for visible-light images
    tint = np.array([1.0, 0.82, 0.7]) * rng.uniform(0.9, 1.1, size=3)
    return tuple(int(v) for v in np.clip(level * tint, 0, 255))


def render_sample(rng: np.random.Generator, size: int, channels: int = 3) -> SynthSample:
    """Draws one image; all randomness comes from `rng`"""
    margin = float(rng.uniform(*MARGIN_RANGE))
    border = max(2.0, 0.02 * size)

    # periocular patch, kept off the image border so its coarse box strictly contains it
    peri_w = size * rng.uniform(0.45, 0.75)
    peri_h = peri_w * rng.uniform(0.45, 0.7)
    px0 = rng.uniform(border, size - border - peri_w)
    py0 = rng.uniform(border, size - border - peri_h)
    peri = (px0, py0, px0 + peri_w, py0 + peri_h)

    # iris ellipse; its coarse box must stay inside the fine periocular patch
    radius = peri_h * rng.uniform(0.22, 0.32)
    iris_w = 2.0 * radius
    iris_h = iris_w * rng.uniform(0.9, 1.0)
    reach_x = iris_w * (0.5 + margin) + 1.0
    reach_y = iris_h * (0.5 + margin) + 1.0
    icx = rng.uniform(peri[0] + reach_x, peri[2] - reach_x)
    icy = rng.uniform(peri[1] + reach_y, peri[3] - reach_y)
    iris = (icx - iris_w / 2, icy - iris_h / 2, icx + iris_w / 2, icy + iris_h / 2)
    pupil_r = radius * rng.uniform(0.3, 0.5)

    background = rng.uniform(60, 110)
    noise = rng.normal(0.0, 12.0, size=(size, size, channels))
    base = np.clip(background + noise, 0, 255).astype(np.uint8)
    mode = "L" if channels == 1 else "RGB"
    image = Image.fromarray(base[:, :, 0] if channels == 1 else base, mode=mode)
    draw = ImageDraw.Draw(image)

    skin = background + rng.uniform(60, 90)
    draw.rounded_rectangle(peri, radius=0.25 * min(peri_w, peri_h), fill=_tone(rng, skin, channels))
    lid_width = max(1, size // 100)
    lid_color = _tone(rng, skin * 0.45, channels)
    draw.arc(peri, start=200, end=340, fill=lid_color, width=lid_width)
    draw.arc(peri, start=20, end=160, fill=lid_color, width=lid_width)
    draw.ellipse(iris, fill=_tone(rng, rng.uniform(30, 60), channels))
    draw.ellipse(
        (icx - pupil_r, icy - pupil_r, icx + pupil_r, icy + pupil_r),
        fill=_tone(rng, rng.uniform(5, 20), channels),
    )

    pixels = np.asarray(image, dtype=np.float64)
    pixels = np.clip(pixels + rng.normal(0.0, 4.0, size=pixels.shape), 0, 255).astype(np.uint8)

    fine = [
        Annotation(class_id=RegionClass.IRIS, box=_to_box(iris, size)),
        Annotation(class_id=RegionClass.PERIOCULAR, box=_to_box(peri, size)),
    ]
    coarse = [
        Annotation(class_id=RegionClass.IRIS, box=_to_box(_expand(iris, margin, size), size)),
        Annotation(class_id=RegionClass.PERIOCULAR, box=_to_box(_expand(peri, margin, size), size)),
    ]
    return SynthSample(pixels=pixels, coarse=coarse, fine=fine, margin=margin)


class SynthGenerator:
    def __init__(self, output_dir: str, image_size: int = 160, channels: int = 3):
        if image_size < MIN_IMAGE_SIZE:
            raise ConfigError(f"image_size must be at least {MIN_IMAGE_SIZE}, got {image_size}")
        if channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {channels}")
        self.output_dir = output_dir
        self.image_size = image_size
        self.channels = channels
        self._ensure_output_dirs()

    def _ensure_output_dirs(self):
        """Ensure image, label and fine-box directories exist"""
        for sub in ("images", "labels", "fine"):
            os.makedirs(os.path.join(self.output_dir, sub), exist_ok=True)

    @property
    def extension(self) -> str:
        return ".pgm" if self.channels == 1 else ".ppm"

    def generate(self, count: int, seed: int) -> DatasetManifest:
        if count < 1:
            raise ConfigError(f"count must be at least 1, got {count}")
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")

        records = []
        for index in range(count):
            image_id = f"synth_{index:05d}"
            # one independent stream per image
            rng = np.random.default_rng([seed, index])
            sample = render_sample(rng, self.image_size, self.channels)

            image_path = os.path.join(self.output_dir, "images", image_id + self.extension)
            label_path = os.path.join(self.output_dir, "labels", image_id + ".txt")
            write_image(image_path, sample.pixels)
            write_annotations(label_path, sample.coarse)
            write_annotations(os.path.join(self.output_dir, "fine", image_id + ".txt"), sample.fine)
            records.append((image_id, image_path, label_path))
            if (index + 1) % 100 == 0:
                logger.info(f"Generated {index + 1}/{count} images")

        manifest = make_splits(records, seed)
        write_manifest(os.path.join(self.output_dir, MANIFEST_NAME), manifest)
        logger.info(f"Generated {count} synthetic images in {self.output_dir}")
        return manifest


def synth_generate(count: int, seed: int, image_size: int, output_dir: str, channels: int = 3) -> DatasetManifest:
    return SynthGenerator(output_dir, image_size, channels).generate(count, seed)
