"""Canvas composition: place a recolored seed on a blank canvas, render the
outpainting mask and derive the self-annotation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.special import ndtr
from sklearn.base import BaseEstimator, TransformerMixin

from . import _rng
from ._validation import check_rgb_image
from .geometry import NormAnnotation, PixelBox
from .seeds import SeedRecord

CHANNEL_PERMUTATIONS: tuple[tuple[int, int, int], ...] = tuple(itertools.permutations(range(3)))
DEFAULT_FILL = 128
MASK_GENERATE = 255
MASK_PRESERVE = 0
FALLBACK_SIGMA = 2.0


class UnplaceableSeedError(ValueError):
    """The seed cannot be scaled to satisfy both the canvas and the size floor."""

    reason = "unplaceable"


@dataclass(frozen=True)
class PlacementSpec:
    canvas_size: int
    scale: float
    top_left: tuple[int, int]
    channel_perm: tuple[int, int, int] = (0, 1, 2)

    def __post_init__(self):
        if tuple(sorted(self.channel_perm)) != (0, 1, 2):
            raise ValueError(f"channel_perm must be a permutation of (0, 1, 2), got {self.channel_perm}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "top_left", tuple(int(v) for v in self.top_left))
        object.__setattr__(self, "channel_perm", tuple(int(v) for v in self.channel_perm))

    def pasted_size(self, crop_width, crop_height) -> tuple[int, int]:
        return max(1, round(self.scale * crop_width)), max(1, round(self.scale * crop_height))

    def to_dict(self) -> dict:
        return {
            "canvas_size": self.canvas_size,
            "scale": self.scale,
            "top_left": list(self.top_left),
            "channel_perm": list(self.channel_perm),
        }

    @classmethod
    def from_dict(cls, d) -> "PlacementSpec":
        return cls(int(d["canvas_size"]), float(d["scale"]), tuple(d["top_left"]), tuple(d["channel_perm"]))


@dataclass
class CanvasBundle:
    seed_id: str
    image_index: int
    canvas: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    annotation: NormAnnotation
    placement: PlacementSpec
    inner_box: PixelBox

    @property
    def stem(self) -> str:
        return f"{self.seed_id}_{self.image_index:03d}"

    @property
    def class_id(self) -> int:
        return self.annotation.class_id

    @property
    def preserve(self) -> np.ndarray:
        return self.mask == MASK_PRESERVE


def scale_bounds(seed, canvas_size=512, min_dim=32):
    cw, ch = seed.crop_width, seed.crop_height
    s_max = min(canvas_size / cw, canvas_size / ch)
    s_min = min_dim * seed.buffer.buffer_factor / min(cw, ch)
    return s_min, s_max


def sample_placement(seed, canvas_size=512, rng=None, min_dim=32) -> PlacementSpec:
    """Draw scale, top-left corner and channel permutation uniformly over the legal set."""
    rng = _rng.as_generator(rng)
    s_min, s_max = scale_bounds(seed, canvas_size, min_dim)
    if s_min > s_max:
        raise UnplaceableSeedError(
            f"seed {seed.seed_id}: minimal scale {s_min:.4f} exceeds maximal scale {s_max:.4f}"
        )
    scale = float(rng.uniform(s_min, s_max))
    # both the rasterized paste and the continuous crop must stay on the canvas
    span_x = min(math.ceil(scale * seed.crop_width - 1e-9), canvas_size)
    span_y = min(math.ceil(scale * seed.crop_height - 1e-9), canvas_size)
    x0 = int(rng.integers(0, canvas_size - span_x + 1))
    y0 = int(rng.integers(0, canvas_size - span_y + 1))
    perm = CHANNEL_PERMUTATIONS[int(rng.integers(len(CHANNEL_PERMUTATIONS)))]
    return PlacementSpec(canvas_size, scale, (x0, y0), perm)


def permute_channels(image, perm):
    """Output channel ``c`` is input channel ``perm[c]``."""
    arr = check_rgb_image(image)
    if tuple(sorted(perm)) != (0, 1, 2):
        raise ValueError(f"not a channel permutation: {perm}")
    return arr[:, :, list(perm)]


def derive_annotation(seed, placement) -> NormAnnotation:
    return NormAnnotation.from_box(seed.class_id, annotation_box(seed, placement), placement.canvas_size, placement.canvas_size)


def annotation_box(seed, placement) -> PixelBox:
    """Inner object box on the canvas, in pixels."""
    inner = seed.inner_box
    x0, y0 = placement.top_left
    s = placement.scale
    return PixelBox(x0 + s * inner.x_min, y0 + s * inner.y_min, x0 + s * inner.x_max, y0 + s * inner.y_max)


def _pasted_geometry(seed, placement):
    """Buffered rectangle and inner box as actually rasterized on the canvas."""
    pw, ph = placement.pasted_size(seed.crop_width, seed.crop_height)
    x0, y0 = placement.top_left
    if x0 < 0 or y0 < 0 or x0 + pw > placement.canvas_size or y0 + ph > placement.canvas_size:
        raise ValueError(f"placement {placement} puts seed {seed.seed_id} off the canvas")
    sx, sy = pw / seed.crop_width, ph / seed.crop_height
    inner = seed.inner_box
    rect = (float(x0), float(y0), float(x0 + pw), float(y0 + ph))
    raster_inner = (x0 + sx * inner.x_min, y0 + sy * inner.y_min, x0 + sx * inner.x_max, y0 + sy * inner.y_max)
    return rect, raster_inner, (sx, sy)


def _blurred_interval(coords, a, b, sigma):
    if sigma <= 0:
        return ((coords >= a) & (coords <= b)).astype(np.float64)
    return ndtr((coords - a) / sigma) - ndtr((coords - b) / sigma)


def mask_sigma(seed, placement, blur_sigma_fraction=0.5) -> float:
    if blur_sigma_fraction <= 0:
        return 0.0
    _, _, (sx, sy) = _pasted_geometry(seed, placement)
    inner = seed.inner_box
    left, top, right, bottom = seed.buffer.per_side_fractions
    margins = [
        left * inner.width * sx,
        right * inner.width * sx,
        top * inner.height * sy,
        bottom * inner.height * sy,
    ]
    positive = [m for m in margins if m > 0]
    if not positive:
        return FALLBACK_SIGMA
    return blur_sigma_fraction * min(positive)


def render_mask(seed, placement, blur_sigma_fraction=0.5) -> np.ndarray:
    """Single-channel ``uint8`` mask, 255 where the backend may generate.

    The hard mask (0 on the pasted buffered crop, 255 elsewhere) is convolved
    with a Gaussian whose sigma is ``blur_sigma_fraction`` times the thinnest
    non-zero buffer margin. The convolution is evaluated in closed form at
    pixel centers. Afterwards every pixel touching the inner object box is
    forced to 0 and every pixel beyond three sigmas of the buffered rectangle
    is forced to 255.
    """
    n = placement.canvas_size
    rect, raster_inner, _ = _pasted_geometry(seed, placement)
    ann = annotation_box(seed, placement)
    sigma = mask_sigma(seed, placement, blur_sigma_fraction)
    centers = np.arange(n) + 0.5
    fx = _blurred_interval(centers, rect[0], rect[2], sigma)
    fy = _blurred_interval(centers, rect[1], rect[3], sigma)
    mask = np.rint(MASK_GENERATE * (1.0 - np.outer(fy, fx)))

    if sigma > 0:
        reach = 3 * sigma
        outside_x = (centers < rect[0] - reach) | (centers > rect[2] + reach)
        outside_y = (centers < rect[1] - reach) | (centers > rect[3] + reach)
        mask[outside_y, :] = MASK_GENERATE
        mask[:, outside_x] = MASK_GENERATE

    # cover both the annotated box and the rasterized object
    ix0 = math.floor(min(ann.x_min, raster_inner[0]))
    iy0 = math.floor(min(ann.y_min, raster_inner[1]))
    ix1 = math.ceil(max(ann.x_max, raster_inner[2]))
    iy1 = math.ceil(max(ann.y_max, raster_inner[3]))
    mask[max(iy0, 0):min(iy1, n), max(ix0, 0):min(ix1, n)] = MASK_PRESERVE
    return mask.astype(np.uint8)


def compose_canvas(seed, placement, fill_value=DEFAULT_FILL, blur_sigma_fraction=0.5, image_index=0) -> CanvasBundle:
    crop = check_rgb_image(seed.crop_image, "seed crop").astype(np.uint8)
    n = placement.canvas_size
    pw, ph = placement.pasted_size(seed.crop_width, seed.crop_height)
    x0, y0 = placement.top_left
    if x0 + pw > n or y0 + ph > n:
        raise ValueError(f"placement {placement} does not fit seed {seed.seed_id} on a {n}x{n} canvas")
    pasted = permute_channels(crop, placement.channel_perm)
    if pasted.shape[:2] != (ph, pw):
        pasted = np.asarray(Image.fromarray(np.ascontiguousarray(pasted)).resize((pw, ph), Image.BILINEAR))
    canvas = np.full((n, n, 3), fill_value, dtype=np.uint8)
    canvas[y0:y0 + ph, x0:x0 + pw] = pasted
    return CanvasBundle(
        seed_id=seed.seed_id,
        image_index=image_index,
        canvas=canvas,
        mask=render_mask(seed, placement, blur_sigma_fraction),
        annotation=derive_annotation(seed, placement),
        placement=placement,
        inner_box=annotation_box(seed, placement),
    )


def invert_mask(mask):
    """Flip polarity for backends that expect 255 on the region to keep."""
    return (MASK_GENERATE - np.asarray(mask, dtype=np.uint8)).astype(np.uint8)


class CanvasComposer(TransformerMixin, BaseEstimator):
    """Turn seed records into composed canvases, masks and annotations.

    Parameters
    ----------
    canvas_size : int, default=512
    fill_value : int, default=128
        Gray level of the blank canvas.
    blur_sigma_fraction : float, default=0.5
        Mask blur sigma as a fraction of the thinnest buffer margin; 0 gives a hard mask.
    min_dim : int, default=32
        Smallest on-canvas object width/height.
    images_per_seed : int, default=1
    random_state : int, default=0
        Global seed; each ``(seed_id, image_index)`` gets its own stream.
    """

    def __init__(self, canvas_size=512, fill_value=DEFAULT_FILL, blur_sigma_fraction=0.5, min_dim=32,
                 images_per_seed=1, random_state=0):
        self.canvas_size = canvas_size
        self.fill_value = fill_value
        self.blur_sigma_fraction = blur_sigma_fraction
        self.min_dim = min_dim
        self.images_per_seed = images_per_seed
        self.random_state = random_state

    def _check_params(self):
        if int(self.canvas_size) < 1:
            raise ValueError("canvas_size must be positive")
        if not 0 <= int(self.fill_value) <= 255:
            raise ValueError("fill_value must be in [0, 255]")
        if self.blur_sigma_fraction < 0:
            raise ValueError("blur_sigma_fraction must be >= 0")
        if int(self.images_per_seed) < 1:
            raise ValueError("images_per_seed must be >= 1")

    @staticmethod
    def _check_seeds(X):
        seeds = list(X)
        for s in seeds:
            if not isinstance(s, SeedRecord):
                raise TypeError(f"expected SeedRecord, got {type(s).__name__}")
        return seeds

    def fit(self, X, y=None):
        self._check_params()
        self.n_seeds_ = len(self._check_seeds(X))
        return self

    def compose_seed(self, seed, image_index=0) -> CanvasBundle:
        rng = _rng.stream(self.random_state, "placement", seed.seed_id, image_index)
        placement = sample_placement(seed, self.canvas_size, rng, self.min_dim)
        return compose_canvas(seed, placement, self.fill_value, self.blur_sigma_fraction, image_index)

    def transform(self, X):
        self._check_params()
        bundles = []
        for seed in self._check_seeds(X):
            for k in range(self.images_per_seed):
                bundles.append(self.compose_seed(seed, k))
        return bundles
