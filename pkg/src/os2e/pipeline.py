"""Multi-ratio / multi-scale crop-and-fuse recognition pipeline.

An image is resized under two aspect-ratio modes (smaller-side-preserving and
square) at several scales, densely cropped on a grid, and each crop is scored
by per-stream scorer callables (object stream and scene stream).  Scores are
fused twice: a weighted average across streams per region, then a plain mean
across regions.  With the default config this produces 2 x 3 x 9 = 54 regions
per image.

Scorers receive a mean-subtracted crop array of shape (crop, crop, channels)
and must return a probability vector over event classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RATIO_ASPECT = "aspect_preserving"
RATIO_SQUARE = "square"

DEFAULT_MEAN_PIXEL = 0.5
TRAIN_CROP_FRACTIONS = (1.0, 0.875, 0.75, 0.625, 0.5)


@dataclass
class ImageBuffer:
    """Row-major float image with pixels in [0, 1], 1 or 3 channels."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise ValueError(f"expected HxWxC pixels, got shape {px.shape}")
        h, w, c = px.shape
        if h < 1 or w < 1:
            raise ValueError("image dims must be >= 1")
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixels must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class CropConfig:
    base_side: int = 256
    crop_side: int = 224
    scale_factors: tuple[float, ...] = (1.0, 1.5, 2.0)
    ratio_modes: tuple[str, ...] = (RATIO_ASPECT, RATIO_SQUARE)
    grid: int = 3

    def __post_init__(self):
        if self.crop_side > self.base_side:
            raise ValueError("crop_side must be <= base_side")
        if self.crop_side < 1:
            raise ValueError("crop_side must be >= 1")
        if any(s < 1.0 for s in self.scale_factors):
            raise ValueError("scale factors must be >= 1")
        if self.grid < 1:
            raise ValueError("grid must be >= 1")
        for mode in self.ratio_modes:
            if mode not in (RATIO_ASPECT, RATIO_SQUARE):
                raise ValueError(f"unknown ratio mode {mode!r}")

    @property
    def region_count(self) -> int:
        return len(self.ratio_modes) * len(self.scale_factors) * self.grid**2


@dataclass(frozen=True)
class RegionSpec:
    """One crop: where it lives in which resized view of the image."""

    ratio_mode: str
    scale_factor: float
    grid_row: int
    grid_col: int
    top: int
    left: int
    height: int
    width: int
    resized_height: int
    resized_width: int

    def __post_init__(self):
        if self.top < 0 or self.left < 0:
            raise ValueError("rect must start inside the image")
        if (
            self.top + self.height > self.resized_height
            or self.left + self.width > self.resized_width
        ):
            raise ValueError("rect extends past the resized image")


@dataclass
class RegionScore:
    """Per-stream event score vectors for one region, plus the fused vector."""

    spec: RegionSpec
    object_scores: np.ndarray
    scene_scores: np.ndarray
    fused: np.ndarray | None = None


def _source_coords(src: int, target: int) -> np.ndarray:
    # half-pixel-center convention, clamped at the borders
    coords = (np.arange(target) + 0.5) * (src / target) - 0.5
    return np.clip(coords, 0.0, src - 1.0)


def resize_bilinear(image: ImageBuffer, target_h: int, target_w: int) -> ImageBuffer:
    """Bilinear resample to the target size (half-pixel-center convention)."""
    if target_h < 1 or target_w < 1:
        raise ValueError("target dims must be >= 1")
    px = image.pixels
    h, w, _ = px.shape
    if (target_h, target_w) == (h, w):
        return ImageBuffer(px.copy())
    ys = _source_coords(h, target_h)
    xs = _source_coords(w, target_w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = px[y0][:, x0] * (1.0 - wx) + px[y0][:, x1] * wx
    bottom = px[y1][:, x0] * (1.0 - wx) + px[y1][:, x1] * wx
    return ImageBuffer(top * (1.0 - wy) + bottom * wy)


def hflip(image: ImageBuffer) -> ImageBuffer:
    """Mirror left-right; applying it twice returns the original image."""
    return ImageBuffer(image.pixels[:, ::-1, :].copy())


def resized_dims(
    height: int, width: int, ratio_mode: str, scale: float, base_side: int
) -> tuple[int, int]:
    """Target dims for one (ratio mode, scale): square, or smaller side pinned."""
    t = int(round(base_side * scale))
    if ratio_mode == RATIO_SQUARE:
        return t, t
    if ratio_mode == RATIO_ASPECT:
        if height <= width:
            return t, (width * t) // height
        return (height * t) // width, t
    raise ValueError(f"unknown ratio mode {ratio_mode!r}")


def grid_offsets(length: int, crop: int, grid: int) -> list[int]:
    """Evenly spread crop offsets along one axis, floor-rounded."""
    if grid == 1:
        return [0]
    return [(i * (length - crop)) // (grid - 1) for i in range(grid)]


def generate_regions(
    height: int, width: int, config: CropConfig
) -> list[RegionSpec]:
    """All crop rects for an image: ratio modes x scales x grid cells."""
    if height < 1 or width < 1:
        raise ValueError("image dims must be >= 1")
    specs = []
    for mode in config.ratio_modes:
        for scale in config.scale_factors:
            rh, rw = resized_dims(height, width, mode, scale, config.base_side)
            if min(rh, rw) < config.crop_side:
                raise ValueError(
                    f"image too small after resize: {rh}x{rw} for crop "
                    f"{config.crop_side}"
                )
            rows = grid_offsets(rh, config.crop_side, config.grid)
            cols = grid_offsets(rw, config.crop_side, config.grid)
            for gi, top in enumerate(rows):
                for gj, left in enumerate(cols):
                    specs.append(
                        RegionSpec(
                            ratio_mode=mode,
                            scale_factor=scale,
                            grid_row=gi,
                            grid_col=gj,
                            top=top,
                            left=left,
                            height=config.crop_side,
                            width=config.crop_side,
                            resized_height=rh,
                            resized_width=rw,
                        )
                    )
    return specs


def crop_extract(image: ImageBuffer, spec: RegionSpec) -> ImageBuffer:
    """Exact pixel copy of the region's rect; the image must be the resized view."""
    if (image.height, image.width) != (spec.resized_height, spec.resized_width):
        raise ValueError(
            f"image is {image.height}x{image.width}, spec expects the "
            f"{spec.resized_height}x{spec.resized_width} resized view"
        )
    if spec.top + spec.height > image.height or spec.left + spec.width > image.width:
        raise ValueError("rect out of bounds")
    return ImageBuffer(
        image.pixels[
            spec.top : spec.top + spec.height, spec.left : spec.left + spec.width
        ].copy()
    )


def _check_scorer_output(v, num_classes: int | None) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or (num_classes is not None and v.size != num_classes):
        raise ValueError("scorer output off simplex: wrong shape")
    if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-6:
        raise ValueError("scorer output off simplex")
    return v


def score_regions(
    image: ImageBuffer,
    config: CropConfig,
    scorers: dict[str, object],
    mean_pixel=DEFAULT_MEAN_PIXEL,
) -> list[RegionScore]:
    """Score every generated region with the object and scene stream scorers.

    Crops are mean-subtracted before scoring.  Output order matches
    ``generate_regions``.
    """
    if set(scorers) != {"object", "scene"}:
        raise ValueError("scorers must map exactly the 'object' and 'scene' streams")
    mean = np.asarray(mean_pixel, dtype=np.float64)
    specs = generate_regions(image.height, image.width, config)
    resized: dict[tuple[str, float], ImageBuffer] = {}
    out = []
    m = None
    for spec in specs:
        key = (spec.ratio_mode, spec.scale_factor)
        if key not in resized:
            resized[key] = resize_bilinear(
                image, spec.resized_height, spec.resized_width
            )
        crop = crop_extract(resized[key], spec)
        x = crop.pixels - mean
        obj = _check_scorer_output(scorers["object"](x), m)
        m = obj.size
        scn = _check_scorer_output(scorers["scene"](x), m)
        out.append(RegionScore(spec=spec, object_scores=obj, scene_scores=scn))
    return out


def fuse_streams(
    region: RegionScore, alpha_o: float = 0.5, alpha_s: float = 0.5
) -> np.ndarray:
    """Weighted average of the object and scene stream scores for one region."""
    if alpha_o < 0 or alpha_s < 0:
        raise ValueError("fusion weights must be >= 0")
    if region.object_scores.shape != region.scene_scores.shape:
        raise ValueError("stream score lengths differ")
    return alpha_o * region.object_scores + alpha_s * region.scene_scores


def fuse_regions(
    regions: list[RegionScore], alpha_o: float = 0.5, alpha_s: float = 0.5
) -> np.ndarray:
    """Image-level score: mean of the fused stream scores across all regions.

    The mean keeps scores normalized and ranks classes identically to the sum.
    """
    if not regions:
        raise ValueError("no regions to fuse")
    fused = np.stack([fuse_streams(r, alpha_o, alpha_s) for r in regions])
    return fused.mean(axis=0)


def classify_image(
    image: ImageBuffer,
    config: CropConfig,
    scorers: dict[str, object],
    alpha_o: float = 0.5,
    alpha_s: float = 0.5,
    mean_pixel=DEFAULT_MEAN_PIXEL,
) -> tuple[np.ndarray, list[RegionScore]]:
    """Full pipeline: crop, score, fuse; returns image scores and per-region detail."""
    regions = score_regions(image, config, scorers, mean_pixel=mean_pixel)
    for region in regions:
        region.fused = fuse_streams(region, alpha_o, alpha_s)
    return fuse_regions(regions, alpha_o, alpha_s), regions


def training_crop_sample(
    image: ImageBuffer,
    config: CropConfig,
    rng: np.random.Generator,
    sizes: tuple[int, ...] | None = None,
    flip_prob: float = 0.5,
) -> ImageBuffer:
    """One augmentation sample: random-size random-offset crop, resize, maybe flip.

    The image is first resized square to ``base_side``; the crop side is drawn
    from ``sizes`` (defaults to base_side scaled by the standard fractions,
    e.g. 256/224/192/160/128 at base 256), the offset uniformly among valid
    positions, and the crop resized to ``crop_side``.
    """
    base = config.base_side
    if sizes is None:
        sizes = tuple(int(round(base * f)) for f in TRAIN_CROP_FRACTIONS)
    if any(s < 1 or s > base for s in sizes):
        raise ValueError("crop sizes must lie in [1, base_side]")
    square = resize_bilinear(image, base, base)
    side = sizes[int(rng.integers(0, len(sizes)))]
    top = int(rng.integers(0, base - side + 1))
    left = int(rng.integers(0, base - side + 1))
    crop = ImageBuffer(square.pixels[top : top + side, left : left + side].copy())
    if side != config.crop_side:
        crop = resize_bilinear(crop, config.crop_side, config.crop_side)
    if rng.random() < flip_prob:
        crop = hflip(crop)
    return crop
