"""Region-mask generation and application.

A mask is a (1,1,H,W) binary map with 1 on dropped (hidden) pixels and 0 on
visible context.  Three families: a centered square, a union of random
rectangles, and smooth random blobs; the random families never drop more than
a quarter of the image.  For centered masks the generator predicts a slightly
larger patch than it hides, and the rim where prediction overlaps visible
context gets a 10x reconstruction weight.
"""

from dataclasses import dataclass

import numpy as np

from ctxfill.ops import resize_bilinear
from ctxfill.rng import RngState

OVERLAP_WEIGHT = 10.0
MAX_DROP_FRACTION = 0.25


@dataclass
class RegionMask:
    mask: np.ndarray  # (1,1,H,W), values exactly 0.0 or 1.0
    kind: str         # "central" | "random_block" | "random_region"
    meta: dict

    @property
    def height(self) -> int:
        return self.mask.shape[2]

    @property
    def width(self) -> int:
        return self.mask.shape[3]

    def dropped_fraction(self) -> float:
        return float(self.mask.mean())

    def predicted_box(self) -> tuple[int, int, int, int]:
        """(top, left, height, width) of the region the generator outputs."""
        if self.kind == "central":
            t, l, s = self.meta["patch_box"]
            return t, l, s, s
        return 0, 0, self.height, self.width


def central_mask(h: int, w: int, patch: int, overlap: int) -> RegionMask:
    """Centered square mask: predicted patch of side ``patch``, of which only
    the interior (patch - 2*overlap)^2 square is actually hidden."""
    if patch > min(h, w):
        raise ValueError(f"patch {patch} exceeds image side {min(h, w)}")
    if overlap < 0 or 2 * overlap >= patch:
        raise ValueError(f"overlap {overlap} leaves no hidden interior in patch {patch}")
    top = (h - patch) // 2
    left = (w - patch) // 2
    d = patch - 2 * overlap
    dt, dl = top + overlap, left + overlap
    mask = np.zeros((1, 1, h, w))
    mask[:, :, dt:dt + d, dl:dl + d] = 1.0
    meta = {"patch": patch, "overlap": overlap,
            "patch_box": (top, left, patch), "dropped_box": (dt, dl, d)}
    return RegionMask(mask, "central", meta)


def random_block_mask(h: int, w: int, rng: RngState, max_blocks: int = 5,
                      side_frac: tuple[float, float] = (0.1, 0.4),
                      max_tries: int = 1000) -> RegionMask:
    """Union of 1..max_blocks uniformly placed rectangles, possibly overlapping,
    resampled until the dropped fraction is at most 1/4."""
    if h < 8 or w < 8:
        raise ValueError(f"image too small for block masks: {h}x{w}")
    lo, hi = side_frac
    for _ in range(max_tries):
        count = int(rng.integers(1, max_blocks + 1))
        mask = np.zeros((1, 1, h, w))
        blocks = []
        for _ in range(count):
            bh = max(1, int(round(float(rng.uniform((), lo, hi)) * h)))
            bw = max(1, int(round(float(rng.uniform((), lo, hi)) * w)))
            bh, bw = min(bh, h), min(bw, w)
            top = int(rng.integers(0, h - bh + 1))
            left = int(rng.integers(0, w - bw + 1))
            mask[:, :, top:top + bh, left:left + bw] = 1.0
            blocks.append((top, left, bh, bw))
        if mask.mean() <= MAX_DROP_FRACTION:
            return RegionMask(mask, "random_block", {"blocks": blocks})
    # Degenerate ranges can starve the sampler; clamp to one small block.
    bh, bw = max(1, h // 5), max(1, w // 5)
    top = int(rng.integers(0, h - bh + 1))
    left = int(rng.integers(0, w - bw + 1))
    mask = np.zeros((1, 1, h, w))
    mask[:, :, top:top + bh, left:left + bw] = 1.0
    return RegionMask(mask, "random_block", {"blocks": [(top, left, bh, bw)]})


def random_region_mask(h: int, w: int, rng: RngState,
                       frac_range: tuple[float, float] = (0.05, MAX_DROP_FRACTION)) -> RegionMask:
    """Smooth arbitrary-shaped blobs from thresholded low-frequency noise,
    rolled to a random position; dropped fraction stays in (0, 1/4]."""
    if h < 8 or w < 8:
        raise ValueError(f"image too small for region masks: {h}x{w}")
    frac = float(rng.uniform((), *frac_range))
    coarse = rng.uniform((1, h // 8 + 2, w // 8 + 2))
    noise = resize_bilinear(coarse, h, w)[0]
    k = max(1, int(frac * h * w))
    # Exactly k pixels: take the k largest noise values.
    order = np.argsort(noise, axis=None)[::-1][:k]
    mask = np.zeros((1, 1, h, w))
    mask.reshape(-1)[order] = 1.0
    dy = int(rng.integers(0, h))
    dx = int(rng.integers(0, w))
    mask = np.roll(mask, (dy, dx), axis=(2, 3))
    return RegionMask(mask, "random_region", {"fraction": k / (h * w), "shift": (dy, dx)})


def apply_mask(x: np.ndarray, m: RegionMask, fill) -> np.ndarray:
    """Replace dropped pixels with per-channel fill values; context pixels pass
    through bit-exactly and ``x`` is left untouched."""
    if x.shape[2:] != m.mask.shape[2:]:
        raise ValueError(f"mask {m.mask.shape[2:]} does not match image {x.shape[2:]}")
    fill = np.asarray(fill, dtype=x.dtype).reshape(1, -1, 1, 1)
    if fill.shape[1] not in (1, x.shape[1]):
        raise ValueError(f"fill must be scalar or per-channel, got {fill.size} values for {x.shape[1]} channels")
    return np.where(m.mask.astype(bool), fill, x)


def overlap_weight_map(m: RegionMask) -> np.ndarray:
    """(1,1,H,W) reconstruction weights: 10 on the context-overlap band, 1 on
    the hidden interior, 0 outside the predicted patch.  Non-central masks
    (and overlap=0) have no band, so the weights equal the mask."""
    if m.kind != "central" or m.meta["overlap"] == 0:
        return m.mask.copy()
    weights = np.zeros_like(m.mask)
    t, l, s = m.meta["patch_box"]
    weights[:, :, t:t + s, l:l + s] = OVERLAP_WEIGHT
    dt, dl, d = m.meta["dropped_box"]
    weights[:, :, dt:dt + d, dl:dl + d] = 1.0
    return weights


def crop_to_predicted(arr: np.ndarray, m: RegionMask) -> np.ndarray:
    """Crop an NCHW array (image or weight map) to the predicted region."""
    t, l, bh, bw = m.predicted_box()
    return arr[:, :, t:t + bh, l:l + bw]


def save_mask_pgm(m: RegionMask, path) -> None:
    """Binary PGM (P5) export, 255 on dropped pixels, for visual inspection."""
    plane = (m.mask[0, 0] * 255).astype(np.uint8)
    h, w = plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(plane.tobytes())
