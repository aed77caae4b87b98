"""Adam optimization and the alternating generator/discriminator loop.

Determinism contract: (seed, config, data) fix every drawn mask, dropout mask,
shuffle order, and therefore every logged loss, bit-exactly.  All per-step
randomness comes from streams derived functionally from (seed, iteration), so
resuming from a checkpoint replays the remaining iterations identically.
"""

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ctxfill.loss import (LossValue, discriminator_loss, generator_adv_loss, joint_loss,
                          reconstruction_loss)
from ctxfill.masking import (apply_mask, central_mask, crop_to_predicted, overlap_weight_map,
                             random_block_mask, random_region_mask)
from ctxfill.model import GeneratorConfig, Network, build_discriminator, build_generator
from ctxfill.rng import RngState

ADAM_BETA1 = 0.5
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

SATURATION_FLOOR = 1e-6
SATURATION_PATIENCE = 200

# Child-stream tags for the run's base RngState.
_TAG_INIT = 1
_TAG_STEPS = 2
_TAG_SHUFFLE = 3


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, iteration: int, last_good: str | None):
        super().__init__(message)
        self.iteration = iteration
        self.last_good = last_good


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 16
    lr_discriminator: float = 2e-4
    lr_generator: float | None = None      # defaults to 10x the discriminator rate
    lambda_rec: float = 0.999
    lambda_adv: float = 0.001
    mask_kind: str = "central"
    loss_mode: str = "joint"               # "joint" | "l2_only"
    rec_norm: str = "l2"                   # "l2" | "l1"
    seed: int = 0
    checkpoint_every: int = 0              # 0: final checkpoint only
    precision: str = "float64"             # "float64" | "float32"

    def __post_init__(self):
        if self.lr_generator is None:
            self.lr_generator = 10.0 * self.lr_discriminator
        if self.loss_mode not in ("joint", "l2_only"):
            raise ValueError(f"loss_mode must be 'joint' or 'l2_only', got {self.loss_mode!r}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be 'float64' or 'float32', got {self.precision!r}")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(m={p.name: np.zeros_like(p.value) for p in params},
                   v={p.name: np.zeros_like(p.value) for p in params})


def adam_step(params, state: AdamState, lr: float):
    """Bias-corrected Adam update in place; aborts on non-finite gradients."""
    for p in params:
        if p.grad is None or p.grad.shape != p.value.shape:
            raise ValueError(f"{p.name}: missing or mismatched gradient")
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient for {p.name}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p in params:
        m = state.m[p.name]
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad * p.grad
        p.value = p.value - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def _draw_masks(gcfg: GeneratorConfig, kind: str, n: int, rng: RngState):
    h = gcfg.image_size
    if kind == "central":
        return [central_mask(h, h, gcfg.patch, gcfg.overlap)] * n
    if kind == "random_block":
        return [random_block_mask(h, h, rng) for _ in range(n)]
    return [random_region_mask(h, h, rng) for _ in range(n)]


def train_step(gen: Network, disc: Network | None, batch: np.ndarray, cfg: TrainConfig,
               adam_gen: AdamState, adam_disc: AdamState | None, rng: RngState,
               fill) -> dict:
    """One alternating iteration: fresh masks, discriminator update on real vs
    predicted regions, then generator update on the weighted joint loss."""
    gcfg = GeneratorConfig(**gen.descriptor["config"])
    n = batch.shape[0]
    joint_mode = cfg.loss_mode == "joint"

    masks = _draw_masks(gcfg, cfg.mask_kind, n, rng)
    masked = np.concatenate([apply_mask(batch[i:i + 1], masks[i], fill) for i in range(n)])

    if cfg.mask_kind == "central":
        m = masks[0]
        target = crop_to_predicted(batch, m)
        weights = crop_to_predicted(overlap_weight_map(m), m)
    else:
        target = batch
        weights = np.concatenate([mk.mask for mk in masks])
    weights = weights.astype(batch.dtype)

    gen_caches = []
    pred = gen.forward(masked, train=True, caches=gen_caches, rng=rng)
    rec = reconstruction_loss(pred, target, weights, cfg.rec_norm)
    if not math.isfinite(rec.value):
        raise FloatingPointError(f"non-finite reconstruction loss {rec.value}")

    d_value = None
    adv_value = None
    if joint_mode:
        if disc is None or adam_disc is None:
            raise ValueError("joint mode needs a discriminator and its optimizer state")
        if cfg.mask_kind == "central":
            d_real_in, d_fake_in = target, pred
            fake_mask = None
        else:
            # Prediction composited into the visible context; only hidden
            # pixels carry generator gradient from the adversarial term.
            fake_mask = np.concatenate([mk.mask for mk in masks]).astype(bool)
            d_real_in = batch
            d_fake_in = np.where(fake_mask, pred, batch)

        disc.zero_grads()
        real_caches, fake_caches = [], []
        d_real = disc.forward(d_real_in, train=True, caches=real_caches)
        d_fake = disc.forward(d_fake_in, train=True, caches=fake_caches)
        d_loss = discriminator_loss(d_real, d_fake)
        d_value = d_loss.value
        disc.backward(d_loss.grad_real, real_caches)
        disc.backward(d_loss.grad_fake, fake_caches)
        adam_step(disc.params(), adam_disc, cfg.lr_discriminator)

        # Generator pass against the just-updated discriminator.
        disc.zero_grads()
        adv_caches = []
        d_fake2 = disc.forward(d_fake_in, train=True, caches=adv_caches)
        adv = generator_adv_loss(d_fake2)
        adv_value = adv.value
        d_input_grad = disc.backward(adv.grad, adv_caches)
        if fake_mask is not None:
            d_input_grad = np.where(fake_mask, d_input_grad, 0.0)
        total = joint_loss(rec, LossValue(adv.value, d_input_grad),
                           cfg.lambda_rec, cfg.lambda_adv)
        if not math.isfinite(d_value) or not math.isfinite(adv_value):
            raise FloatingPointError("non-finite adversarial loss")
    else:
        total = rec

    gen.zero_grads()
    gen.backward(total.grad, gen_caches)
    adam_step(gen.params(), adam_gen, cfg.lr_generator)
    return {"rec": rec.value, "d": d_value, "g_adv": adv_value}


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.17g}"


def format_log_line(iteration: int, metrics: dict) -> str:
    return f"{iteration}\t{_fmt(metrics['rec'])}\t{_fmt(metrics['d'])}\t{_fmt(metrics['g_adv'])}"


@dataclass
class TrainResult:
    gen: Network
    disc: Network | None
    adam_gen: AdamState
    adam_disc: AdamState | None
    log_lines: list[str] = field(default_factory=list)
    iteration: int = 0
    checkpoint_path: str | None = None


def train_loop(data, cfg: TrainConfig, gcfg: GeneratorConfig, out_dir=None,
               resume=None, on_checkpoint=None) -> TrainResult:
    """Run cfg.iterations of alternating updates over deterministic shuffles.

    ``data`` is a DatasetHandle (dataio).  ``resume`` is a loaded Checkpoint;
    iterations already done are skipped and the loss log continues seamlessly.
    Checkpoints are written to ``out_dir`` when given.
    """
    from ctxfill import dataio  # local import: dataio depends on model, not train

    images = data.train_images()
    if images.shape[0] == 0:
        raise ValueError("dataset has no training images")
    dtype = np.float32 if cfg.precision == "float32" else np.float64
    images = images.astype(dtype)
    fill = data.channel_mean.astype(dtype)

    base = RngState(cfg.seed)
    joint = cfg.loss_mode == "joint"
    if resume is not None:
        gen, disc, adam_gen, adam_disc, start_iter, saturated = dataio.restore_training(resume)
        if joint and disc is None:
            raise ValueError("checkpoint has no discriminator but loss_mode is joint")
    else:
        init_rng = base.child(_TAG_INIT)
        gen = build_generator(gcfg, init_rng)
        disc = build_discriminator(gcfg, init_rng) if joint else None
        if dtype is np.float32:
            gen.astype(dtype)
            if disc is not None:
                disc.astype(dtype)
        adam_gen = AdamState.for_params(gen.params())
        adam_disc = AdamState.for_params(disc.params()) if disc is not None else None
        start_iter = 0
        saturated = 0

    m = images.shape[0]
    bsz = min(cfg.batch_size, m)
    batches_per_epoch = math.ceil(m / bsz)
    steps_rng = base.child(_TAG_STEPS)
    shuffle_rng = base.child(_TAG_SHUFFLE)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.tsv" if out_dir is not None else None
    log_fh = open(log_path, "a" if resume is not None else "w") if log_path else None

    result = TrainResult(gen, disc, adam_gen, adam_disc, iteration=start_iter)
    last_good = None

    def save(tag: str, iteration: int) -> str:
        ckpt = dataio.make_checkpoint(gen, disc, adam_gen, adam_disc, iteration,
                                      base, cfg, saturated, channel_mean=data.channel_mean)
        path = out_dir / f"{tag}.ckpt"
        dataio.save_checkpoint(ckpt, path)
        if on_checkpoint is not None:
            on_checkpoint(str(path), iteration)
        return str(path)

    try:
        for i in range(start_iter, cfg.iterations):
            epoch, slot = divmod(i, batches_per_epoch)
            perm = shuffle_rng.child(epoch).permutation(m)
            idx = perm[slot * bsz:(slot + 1) * bsz]
            batch = images[idx]
            step_rng = steps_rng.child(i)
            try:
                metrics = train_step(gen, disc, batch, cfg, adam_gen, adam_disc,
                                     step_rng, fill)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"iteration {i}: {exc}", i, last_good) from exc

            if metrics["d"] is not None and metrics["d"] < SATURATION_FLOOR:
                saturated += 1
                if saturated >= SATURATION_PATIENCE:
                    raise TrainingDiverged(
                        f"discriminator saturated for {saturated} consecutive steps", i, last_good)
            else:
                saturated = 0

            line = format_log_line(i, metrics)
            result.log_lines.append(line)
            if log_fh is not None:
                log_fh.write(line + "\n")
                log_fh.flush()
            result.iteration = i + 1

            if out_dir is not None and cfg.checkpoint_every > 0 and (i + 1) % cfg.checkpoint_every == 0:
                last_good = save(f"iter{i + 1:07d}", i + 1)
    finally:
        if log_fh is not None:
            log_fh.close()

    if out_dir is not None:
        result.checkpoint_path = save("final", result.iteration)
    return result
