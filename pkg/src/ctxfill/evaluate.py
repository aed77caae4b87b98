"""Evaluation: per-image error metrics over the hidden region, context
embeddings from the generator's encoder, a HOG descriptor baseline, and
nearest-neighbor retrieval/inpainting.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ctxfill.masking import RegionMask, apply_mask, central_mask, crop_to_predicted, \
    random_block_mask, random_region_mask
from ctxfill.model import GeneratorConfig, Network
from ctxfill.rng import RngState

PSNR_CAP_DB = 99.0

METHODS = ("reconstruction", "nn_ours", "nn_hog")


def _masked_diff(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} vs target {target.shape}")
    sel = np.broadcast_to(mask.astype(bool), pred.shape)
    if not sel.any():
        raise ValueError("empty mask")
    return pred[sel] - target[sel]


def mean_error_pct(pred: np.ndarray, target: np.ndarray, mask: np.ndarray, norm: str = "l1") -> float:
    """Mean L1 (|diff|) or L2 (diff^2) over dropped pixels, as a percentage of
    the [0,1] intensity scale."""
    diff = _masked_diff(pred, target, mask)
    if norm == "l1":
        return float(np.abs(diff).mean() * 100.0)
    if norm == "l2":
        return float((diff * diff).mean() * 100.0)
    raise ValueError(f"norm must be 'l1' or 'l2', got {norm!r}")


def psnr(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    """Peak signal-to-noise ratio 10*log10(1/MSE) in dB over dropped pixels of
    [0,1] images; identical inputs are capped at 99 dB.  Batched inputs return
    the mean of per-image values."""
    n = pred.shape[0]
    if n > 1:
        return float(np.mean([psnr(pred[i:i + 1], target[i:i + 1], mask) for i in range(n)]))
    diff = _masked_diff(pred, target, mask)
    mse = float((diff * diff).mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def embed_context(gen: Network, masked_image: np.ndarray) -> np.ndarray:
    """Flattened bottleneck activation of the encoder for a mean-filled image.

    Only context pixels influence the embedding: everything under the mask was
    replaced by the constant fill before the encoder ever sees it.
    """
    if gen.bottleneck_end is None:
        raise ValueError("network has no bottleneck marker; not a generator?")
    feat = gen.forward_prefix(masked_image, gen.bottleneck_end, train=False)
    return feat.reshape(masked_image.shape[0], -1).copy()


def hog_descriptor(image: np.ndarray, cell: int = 8, bins: int = 9) -> np.ndarray:
    """Histogram-of-oriented-gradients descriptor.

    Luminance gradients, unsigned orientations in [0,180) split into ``bins``,
    cell histograms over cell x cell pixels, 2x2-cell blocks, L2 block
    normalization.  A constant image yields the all-zero descriptor.
    """
    if image.ndim == 4:
        image = image[0]
    gray = 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
    h, w = gray.shape
    cy, cx = h // cell, w // cell
    if cy < 2 or cx < 2:
        raise ValueError(f"image {h}x{w} smaller than one 2x2-cell block of {cell}px cells")
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ang = np.degrees(np.arctan2(gy, gx)) % 180.0
    bin_idx = np.minimum((ang / (180.0 / bins)).astype(np.int64), bins - 1)

    hy, hx = cy * cell, cx * cell
    cell_y = (np.arange(hy) // cell)[:, None]
    cell_x = (np.arange(hx) // cell)[None, :]
    flat = ((cell_y * cx + cell_x) * bins + bin_idx[:hy, :hx]).ravel()
    hist = np.bincount(flat, weights=mag[:hy, :hx].ravel(), minlength=cy * cx * bins)
    hist = hist.reshape(cy, cx, bins)

    blocks = []
    for by in range(cy - 1):
        for bx in range(cx - 1):
            v = hist[by:by + 2, bx:bx + 2].ravel()
            norm = np.sqrt(np.sum(v * v) + 1e-12)
            blocks.append(v / norm if norm > 1e-6 else np.zeros_like(v))
    return np.concatenate(blocks)


def nn_retrieve(query: np.ndarray, db: list) -> list:
    """Rank (id, vector) database entries by ascending Euclidean distance to
    the query, breaking ties by id."""
    if not db:
        raise ValueError("empty retrieval database")
    query = np.asarray(query).ravel()
    ranked = []
    for item_id, vec in db:
        vec = np.asarray(vec).ravel()
        if vec.shape != query.shape:
            raise ValueError(f"dimension mismatch: query {query.shape} vs {item_id} {vec.shape}")
        ranked.append((item_id, float(np.linalg.norm(query - vec))))
    ranked.sort(key=lambda t: (t[1], t[0]))
    return ranked


def nn_inpaint(query_image: np.ndarray, mask: RegionMask, db_images: np.ndarray,
               features: str = "ours", gen: Network | None = None,
               fill=0.5, db_ids=None):
    """Fill the dropped region with pixels from the nearest database image
    under a context-feature distance ("ours": generator embedding, "hog":
    HOG of the masked image).  Returns (inpainted image, ranked id list)."""
    if db_images.shape[0] == 0:
        raise ValueError("empty inpainting database")
    if features not in ("ours", "hog"):
        raise ValueError(f"features must be 'ours' or 'hog', got {features!r}")
    if features == "ours" and gen is None:
        raise ValueError("features='ours' needs a generator")
    if db_ids is None:
        db_ids = list(range(db_images.shape[0]))

    def describe(img):
        masked = apply_mask(img, mask, fill)
        if features == "ours":
            return embed_context(gen, masked)[0]
        return hog_descriptor(masked)

    query_vec = describe(query_image)
    db = [(db_ids[i], describe(db_images[i:i + 1])) for i in range(db_images.shape[0])]
    ranked = nn_retrieve(query_vec, db)
    best = db_ids.index(ranked[0][0])
    filled = np.where(mask.mask.astype(bool), db_images[best:best + 1], query_image)
    return filled, ranked


@dataclass
class EvalReport:
    method: str
    mean_l1_pct: float
    mean_l2_pct: float
    psnr_db: float
    per_image: list = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"method\t{self.method}",
                 f"mean_l1_pct\t{self.mean_l1_pct:.6f}",
                 f"mean_l2_pct\t{self.mean_l2_pct:.6f}",
                 f"psnr_db\t{self.psnr_db:.6f}"]
        for entry in self.per_image:
            lines.append(f"image\t{entry['id']}\t{entry['l1_pct']:.6f}"
                         f"\t{entry['l2_pct']:.6f}\t{entry['psnr_db']:.6f}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({"method": self.method, "mean_l1_pct": self.mean_l1_pct,
                           "mean_l2_pct": self.mean_l2_pct, "psnr_db": self.psnr_db,
                           "per_image": self.per_image}, indent=2)


def _mask_for(gcfg: GeneratorConfig, kind: str, seed: int, index: int) -> RegionMask:
    h = gcfg.image_size
    if kind == "central":
        return central_mask(h, h, gcfg.patch, gcfg.overlap)
    rng = RngState(seed).child(index)
    if kind == "random_block":
        return random_block_mask(h, h, rng)
    return random_region_mask(h, h, rng)


def inpaint_with_generator(gen: Network, image: np.ndarray, mask: RegionMask, fill) -> np.ndarray:
    """Predict the hidden region and composite it into the visible context."""
    masked = apply_mask(image, mask, fill)
    pred = gen.forward(masked, train=False)
    t, l, bh, bw = mask.predicted_box()
    full = image.copy()
    patch = full[:, :, t:t + bh, l:l + bw]
    full[:, :, t:t + bh, l:l + bw] = np.where(
        crop_to_predicted(mask.mask, mask).astype(bool), pred, patch)
    return full


def evaluate_dataset(data, method: str, gcfg: GeneratorConfig, gen: Network | None = None,
                     mask_kind: str | None = None, seed: int = 0) -> EvalReport:
    """Score one method over the held-out split, masking each image the same
    deterministic way, and aggregate per-image metrics."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if method != "nn_hog" and gen is None:
        raise ValueError(f"method {method} needs a trained generator")
    kind = mask_kind or gcfg.mask_kind
    held = data.held_images()
    ids = data.held_ids()
    if held.shape[0] == 0:
        raise ValueError("dataset has no held-out images")
    train = data.train_images()
    fill = data.channel_mean

    per_image = []
    for i in range(held.shape[0]):
        img = held[i:i + 1]
        mask = _mask_for(gcfg, kind, seed, i)
        if method == "reconstruction":
            result = inpaint_with_generator(gen, img, mask, fill)
        else:
            feats = "ours" if method == "nn_ours" else "hog"
            result, _ = nn_inpaint(img, mask, train, features=feats, gen=gen,
                                   fill=fill, db_ids=data.train_ids())
        per_image.append({
            "id": ids[i],
            "l1_pct": mean_error_pct(result, img, mask.mask, "l1"),
            "l2_pct": mean_error_pct(result, img, mask.mask, "l2"),
            "psnr_db": psnr(result, img, mask.mask),
        })
    return EvalReport(
        method=method,
        mean_l1_pct=float(np.mean([e["l1_pct"] for e in per_image])),
        mean_l2_pct=float(np.mean([e["l2_pct"] for e in per_image])),
        psnr_db=float(np.mean([e["psnr_db"] for e in per_image])),
        per_image=per_image,
    )
