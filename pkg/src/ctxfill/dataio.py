"""Image codecs, dataset ingestion/splitting, and the checkpoint container.

Images travel as (1,3,H,W) float64 arrays in [0,1].  PPM (P6, 8-bit) is
decoded and encoded by hand; PNG is delegated to Pillow but restricted to
8-bit RGB/grayscale.  Checkpoints are a single binary file: magic, version,
a JSON header (architecture descriptors, config snapshot, trainer state, and
a tensor manifest), then 8-byte-aligned little-endian tensor payloads.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ctxfill.model import Network, rebuild_from_descriptor
from ctxfill.ops import resize_bilinear
from ctxfill.rng import RngState

CHECKPOINT_MAGIC = b"CENC"
CHECKPOINT_VERSION = 1


class DataError(ValueError):
    """Unreadable, unsupported, or inconsistent input data."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


# ---------------------------------------------------------------------------
# image codecs

def _read_ppm(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if not data.startswith(b"P6"):
        raise DataError(f"{path}: not a P6 PPM")
    # Header tokens: magic, width, height, maxval; '#' comments run to EOL.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise DataError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise DataError(f"{path}: unsupported PPM maxval {maxval} (only 8-bit supported)")
    need = 3 * w * h
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise DataError(f"{path}: truncated PPM payload ({len(raw)} of {need} bytes)")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)


def _read_png(path: Path) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DataError(f"{path}: {exc}") from exc
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.uint8)
        return np.repeat(arr[:, :, None], 3, axis=2)
    if img.mode == "RGB":
        return np.asarray(img, dtype=np.uint8)
    raise DataError(f"{path}: unsupported PNG mode {img.mode!r} (only 8-bit RGB/gray)")


def load_image(path) -> np.ndarray:
    """Load a PPM (P6) or PNG file as a (1,3,H,W) array in [0,1]."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        hwc = _read_ppm(path)
    elif suffix == ".png":
        hwc = _read_png(path)
    else:
        raise DataError(f"{path}: unsupported format {suffix!r} (use .ppm or .png)")
    chw = hwc.astype(np.float64).transpose(2, 0, 1) / 255.0
    return chw[None]


def save_image(arr: np.ndarray, path) -> None:
    """Write a (1,3,H,W) or (3,H,W) array in [0,1] as PPM or PNG."""
    path = Path(path)
    if arr.ndim == 4:
        arr = arr[0]
    hwc = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        h, w, _ = hwc.shape
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(hwc.tobytes())
    elif suffix == ".png":
        Image.fromarray(hwc, mode="RGB").save(path)
    else:
        raise DataError(f"{path}: unsupported output format {suffix!r}")


def _fit_to_size(img: np.ndarray, size: int) -> np.ndarray:
    """Resize the shorter side to ``size`` (bilinear) and center-crop square."""
    c, h, w = img.shape
    if h == size and w == size:
        return img
    if h <= w:
        nh, nw = size, max(size, round(w * size / h))
    else:
        nh, nw = max(size, round(h * size / w)), size
    resized = resize_bilinear(img, nh, nw)
    top = (nh - size) // 2
    left = (nw - size) // 2
    return resized[:, top:top + size, left:left + size]


# ---------------------------------------------------------------------------
# dataset ingestion

@dataclass
class DatasetHandle:
    root: str
    ids: list[str]               # all image ids, sorted by filename
    train_indices: np.ndarray
    held_indices: np.ndarray
    images: np.ndarray           # (M,3,S,S) in [0,1]
    channel_mean: np.ndarray     # (3,), over the training partition only
    image_size: int

    def train_images(self) -> np.ndarray:
        return self.images[self.train_indices]

    def held_images(self) -> np.ndarray:
        return self.images[self.held_indices]

    def train_ids(self) -> list[str]:
        return [self.ids[i] for i in self.train_indices]

    def held_ids(self) -> list[str]:
        return [self.ids[i] for i in self.held_indices]


def ingest_dataset(root, held_out_fraction: float = 0.2, seed: int = 0,
                   image_size: int = 64) -> DatasetHandle:
    """Load every .ppm/.png under ``root`` (sorted by name), resize/center-crop
    to ``image_size``, and split deterministically into train/held-out."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in (".ppm", ".png"))
    failures = []
    loaded = []
    for p in paths:
        try:
            loaded.append(_fit_to_size(load_image(p)[0], image_size))
        except DataError as exc:
            failures.append(str(exc))
    if failures:
        raise DataError("unreadable images:\n  " + "\n  ".join(failures))
    if len(loaded) < 2:
        raise DataError(f"{root}: need at least 2 readable images, found {len(loaded)}")

    images = np.stack(loaded)
    n = images.shape[0]
    perm = RngState(seed).permutation(n)
    held_count = int(math.floor(n * held_out_fraction + 0.5))
    if held_count >= n:
        raise DataError(f"held_out_fraction {held_out_fraction} leaves no training images")
    held = np.sort(perm[:held_count])
    train = np.sort(perm[held_count:])
    mean = images[train].mean(axis=(0, 2, 3)) if train.size else np.full(3, 0.5)
    return DatasetHandle(root=str(root), ids=[p.name for p in paths],
                         train_indices=train, held_indices=held,
                         images=images, channel_mean=mean, image_size=image_size)


# ---------------------------------------------------------------------------
# synthetic dataset

def generate_synthetic_dataset(out_dir, count: int = 16, size: int = 64, seed: int = 0) -> list[str]:
    """Write ``count`` seeded synthetic textures (linear gradients,
    checkerboards, Gaussian blobs) as PPM files; the stand-in for real photos."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(count):
        rng = RngState(seed).child(i)
        kind = i % 3
        if kind == 0:
            img = _synth_gradient(size, rng)
        elif kind == 1:
            img = _synth_checkerboard(size, rng)
        else:
            img = _synth_blobs(size, rng)
        name = f"synth_{i:04d}.ppm"
        save_image(img, out_dir / name)
        names.append(name)
    return names


def _synth_gradient(size: int, rng: RngState) -> np.ndarray:
    c0 = rng.uniform(3)
    c1 = rng.uniform(3)
    theta = float(rng.uniform((), 0.0, 2.0 * np.pi))
    ys, xs = np.mgrid[0:size, 0:size] / (size - 1)
    t = (np.cos(theta) * xs + np.sin(theta) * ys)
    t = (t - t.min()) / (t.max() - t.min() + 1e-12)
    return c0[:, None, None] + (c1 - c0)[:, None, None] * t[None]


def _synth_checkerboard(size: int, rng: RngState) -> np.ndarray:
    cell = int(rng.integers(max(2, size // 16), max(3, size // 4)))
    phase_y = int(rng.integers(0, cell))
    phase_x = int(rng.integers(0, cell))
    c0 = rng.uniform(3)
    c1 = rng.uniform(3)
    ys, xs = np.mgrid[0:size, 0:size]
    checks = (((ys + phase_y) // cell + (xs + phase_x) // cell) % 2).astype(np.float64)
    return c0[:, None, None] + (c1 - c0)[:, None, None] * checks[None]


def _synth_blobs(size: int, rng: RngState) -> np.ndarray:
    img = np.tile(rng.uniform((3, 1, 1), 0.0, 0.3), (1, size, size))
    ys, xs = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(2, 6))):
        cy = float(rng.uniform((), 0.0, size))
        cx = float(rng.uniform((), 0.0, size))
        sigma = float(rng.uniform((), size / 12, size / 4))
        color = rng.uniform(3, 0.2, 1.0)
        bump = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma * sigma))
        img += color[:, None, None] * bump[None]
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    version: int
    arch: dict          # {"generator": descriptor, "discriminator": descriptor | None}
    config: dict        # TrainConfig snapshot
    trainer: dict       # iteration, rng [seed, counter], adam step counters, guard state
    tensors: dict[str, np.ndarray]


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    names = sorted(ckpt.tensors)
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        manifest.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
        if offset % 8:
            pad = 8 - offset % 8
            blobs.append(b"\x00" * pad)
            offset += pad
    header = json.dumps({"arch": ckpt.arch, "config": ckpt.config,
                         "trainer": ckpt.trainer, "tensors": manifest}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(ckpt.version).tobytes())
        fh.write(np.uint64(len(header)).tobytes())
        fh.write(header)
        if len(header) % 8:
            fh.write(b"\x00" * (8 - len(header) % 8))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such checkpoint")
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    version = int(np.frombuffer(data[4:8], dtype="<u4")[0])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    hlen = int(np.frombuffer(data[8:16], dtype="<u8")[0])
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    payload_start = 16 + hlen
    if payload_start % 8:
        payload_start += 8 - payload_start % 8
    tensors = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if expected != entry["nbytes"]:
            raise CheckpointError(f"{path}: tensor {entry['name']}: {entry['nbytes']} bytes "
                                  f"inconsistent with shape {shape} and dtype {dtype}")
        start = payload_start + entry["offset"]
        raw = data[start:start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    return Checkpoint(version=version, arch=header["arch"], config=header["config"],
                      trainer=header["trainer"], tensors=tensors)


def make_checkpoint(gen: Network, disc: Network | None, adam_gen, adam_disc,
                    iteration: int, rng: RngState, cfg, saturated: int = 0,
                    channel_mean=None) -> Checkpoint:
    from dataclasses import asdict

    tensors = {f"gen/{k}": v for k, v in gen.state_arrays().items()}
    for k, arr in adam_gen.m.items():
        tensors[f"adam/gen/{k}/m"] = arr
    for k, arr in adam_gen.v.items():
        tensors[f"adam/gen/{k}/v"] = arr
    arch = {"generator": gen.descriptor, "discriminator": None}
    trainer = {"iteration": iteration, "rng": [rng.seed, rng.counter],
               "adam_gen_t": adam_gen.t, "adam_disc_t": None, "saturated": saturated,
               "channel_mean": None if channel_mean is None else [float(c) for c in channel_mean]}
    if disc is not None:
        arch["discriminator"] = disc.descriptor
        tensors.update({f"disc/{k}": v for k, v in disc.state_arrays().items()})
        for k, arr in adam_disc.m.items():
            tensors[f"adam/disc/{k}/m"] = arr
        for k, arr in adam_disc.v.items():
            tensors[f"adam/disc/{k}/v"] = arr
        trainer["adam_disc_t"] = adam_disc.t
    return Checkpoint(version=CHECKPOINT_VERSION, arch=arch, config=asdict(cfg),
                      trainer=trainer, tensors=tensors)


def _strip(tensors: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    plen = len(prefix)
    return {k[plen:]: v for k, v in tensors.items() if k.startswith(prefix)}


def restore_networks(ckpt: Checkpoint) -> tuple[Network, Network | None]:
    """Rebuild networks from the architecture descriptors and load their
    tensors, validating names and shapes along the way."""
    gen = rebuild_from_descriptor(ckpt.arch["generator"])
    try:
        gen.load_state(_strip(ckpt.tensors, "gen/"))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"generator state inconsistent with descriptor: {exc}") from exc
    disc = None
    if ckpt.arch.get("discriminator"):
        disc = rebuild_from_descriptor(ckpt.arch["discriminator"])
        try:
            disc.load_state(_strip(ckpt.tensors, "disc/"))
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"discriminator state inconsistent with descriptor: {exc}") from exc
    return gen, disc


def restore_training(ckpt: Checkpoint):
    """(gen, disc, adam_gen, adam_disc, iteration, saturated) for resuming."""
    from ctxfill.train import AdamState

    gen, disc = restore_networks(ckpt)
    adam_gen = AdamState(m=_strip({k: v for k, v in ckpt.tensors.items() if k.endswith("/m")}, "adam/gen/"),
                         v=_strip({k: v for k, v in ckpt.tensors.items() if k.endswith("/v")}, "adam/gen/"),
                         t=ckpt.trainer["adam_gen_t"])
    adam_gen.m = {k[:-2]: v for k, v in adam_gen.m.items()}
    adam_gen.v = {k[:-2]: v for k, v in adam_gen.v.items()}
    adam_disc = None
    if disc is not None:
        m = {k[len("adam/disc/"):-2]: v for k, v in ckpt.tensors.items()
             if k.startswith("adam/disc/") and k.endswith("/m")}
        v = {k[len("adam/disc/"):-2]: v for k, v in ckpt.tensors.items()
             if k.startswith("adam/disc/") and k.endswith("/v")}
        adam_disc = AdamState(m=m, v=v, t=ckpt.trainer["adam_disc_t"])
    return gen, disc, adam_gen, adam_disc, ckpt.trainer["iteration"], ckpt.trainer.get("saturated", 0)
