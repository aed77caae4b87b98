"""Command-line entry point: train, inpaint, eval, nn, gradcheck, synth-data.

Exit codes: 0 success, 1 usage/config error, 2 data or I/O error, 3 numeric
failure (training divergence or a failed gradient check).  Every run prints
its fully resolved configuration before doing any work.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from ctxfill import dataio
from ctxfill.backend import backend_name
from ctxfill.evaluate import evaluate_dataset, inpaint_with_generator, nn_inpaint
from ctxfill.masking import central_mask, random_block_mask, random_region_mask, save_mask_pgm
from ctxfill.model import GeneratorConfig
from ctxfill.rng import RngState
from ctxfill.train import TrainConfig, TrainingDiverged, train_loop
from ctxfill.verify import run_gradient_suite

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_MASK_FLAG_TO_KIND = {"central": "central", "block": "random_block", "region": "random_region"}

# key -> (target config, parser); config-file keys and their flag overrides
_CONFIG_KEYS = {
    "image_size": ("gen", int),
    "base_channels": ("gen", int),
    "bottleneck_units": ("gen", int),
    "bottleneck_kind": ("gen", str),
    "pool_free": ("gen", lambda s: s.lower() in ("1", "true", "yes")),
    "leaky_slope": ("gen", float),
    "patch": ("gen", int),
    "overlap": ("gen", int),
    "dropout": ("gen", float),
    "iterations": ("train", int),
    "batch_size": ("train", int),
    "lr_discriminator": ("train", float),
    "lr_generator": ("train", float),
    "lambda_rec": ("train", float),
    "lambda_adv": ("train", float),
    "loss_mode": ("train", str),
    "rec_norm": ("train", str),
    "seed": ("train", int),
    "checkpoint_every": ("train", int),
    "precision": ("train", str),
    "mask_kind": ("both", str),
    "held_out_fraction": ("extra", float),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_config_file(path: str) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _CONFIG_KEYS[key][1](val.strip())
    return values


def _resolve_configs(args) -> tuple[GeneratorConfig, TrainConfig, dict]:
    file_vals = _read_config_file(args.config) if getattr(args, "config", None) else {}
    gen_kwargs, train_kwargs = {}, {}
    extra = {"held_out_fraction": 0.2}
    for key, val in file_vals.items():
        dest, _ = _CONFIG_KEYS[key]
        if dest in ("gen", "both"):
            gen_kwargs[key] = val
        if dest in ("train", "both"):
            train_kwargs[key] = val
        if dest == "extra":
            extra[key] = val

    if getattr(args, "mask", None):
        kind = _MASK_FLAG_TO_KIND[args.mask]
        gen_kwargs["mask_kind"] = kind
        train_kwargs["mask_kind"] = kind
    for flag, key in (("patch", "patch"), ("overlap", "overlap")):
        if getattr(args, flag, None) is not None:
            gen_kwargs[key] = getattr(args, flag)
    for flag, key in (("seed", "seed"), ("iterations", "iterations")):
        if getattr(args, flag, None) is not None:
            train_kwargs[key] = getattr(args, flag)
    if getattr(args, "loss", None):
        train_kwargs["loss_mode"] = {"l2": "l2_only", "joint": "joint"}[args.loss]
    if "mask_kind" in gen_kwargs:
        train_kwargs.setdefault("mask_kind", gen_kwargs["mask_kind"])

    gcfg = GeneratorConfig(**gen_kwargs)
    tcfg = TrainConfig(**train_kwargs)
    tcfg.mask_kind = gcfg.mask_kind
    return gcfg, tcfg, extra


def _print_config(command: str, gcfg: GeneratorConfig | None, tcfg: TrainConfig | None,
                  extra: dict):
    print(f"resolved config ({command}, backend={backend_name()}):")
    merged = dict(extra)
    if gcfg is not None:
        merged.update({f"gen.{k}": v for k, v in vars(gcfg).items()})
    if tcfg is not None:
        merged.update({f"train.{k}": v for k, v in vars(tcfg).items()})
    for key in sorted(merged):
        print(f"  {key} = {merged[key]}")


def _mask_from_args(gcfg: GeneratorConfig, kind: str, seed: int):
    size = gcfg.image_size
    if kind == "central":
        return central_mask(size, size, gcfg.patch, gcfg.overlap)
    rng = RngState(seed).child(0xA5)
    if kind == "random_block":
        return random_block_mask(size, size, rng)
    return random_region_mask(size, size, rng)


def _load_generator(ckpt_path: str):
    ckpt = dataio.load_checkpoint(ckpt_path)
    gen, disc = dataio.restore_networks(ckpt)
    mean = ckpt.trainer.get("channel_mean")
    fill = np.array(mean) if mean else np.full(3, 0.5)
    gcfg = GeneratorConfig(**ckpt.arch["generator"]["config"])
    return ckpt, gen, disc, gcfg, fill


def _cmd_synth_data(args) -> int:
    _print_config("synth-data", None, None,
                  {"out": args.out, "count": args.count, "size": args.size, "seed": args.seed})
    names = dataio.generate_synthetic_dataset(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(names)} images to {args.out}")
    return 0


def _cmd_train(args) -> int:
    gcfg, tcfg, extra = _resolve_configs(args)
    extra.update({"data": args.data, "out": args.out})
    _print_config("train", gcfg, tcfg, extra)
    data = dataio.ingest_dataset(args.data, extra["held_out_fraction"], tcfg.seed,
                                 gcfg.image_size)
    resume = dataio.load_checkpoint(args.ckpt) if args.ckpt else None
    result = train_loop(data, tcfg, gcfg, out_dir=args.out, resume=resume)
    print(f"trained to iteration {result.iteration}; checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_inpaint(args) -> int:
    ckpt, gen, _, gcfg, fill = _load_generator(args.ckpt)
    seed = args.seed if args.seed is not None else 0
    kind = _MASK_FLAG_TO_KIND[args.mask] if args.mask else gcfg.mask_kind
    if args.patch is not None or args.overlap is not None:
        gcfg = GeneratorConfig(**{**vars(gcfg),
                                  "patch": args.patch or gcfg.patch,
                                  "overlap": gcfg.overlap if args.overlap is None else args.overlap})
    _print_config("inpaint", gcfg, None,
                  {"ckpt": args.ckpt, "input": args.input, "out": args.out,
                   "mask": kind, "seed": seed})

    image = dataio.load_image(args.input)
    if image.shape[2] != gcfg.image_size or image.shape[3] != gcfg.image_size:
        from ctxfill.dataio import _fit_to_size
        image = _fit_to_size(image[0], gcfg.image_size)[None]
    mask = _mask_from_args(gcfg, kind, seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = Path(args.input).suffix.lower() if Path(args.input).suffix.lower() in (".ppm", ".png") else ".ppm"
    composited = inpaint_with_generator(gen, image, mask, fill)
    from ctxfill.masking import apply_mask
    pred = gen.forward(apply_mask(image, mask, fill), train=False)
    dataio.save_image(composited, out_dir / f"composited{ext}")
    dataio.save_image(pred, out_dir / f"prediction{ext}")
    save_mask_pgm(mask, out_dir / "mask.pgm")
    print(f"wrote {out_dir / ('composited' + ext)}, {out_dir / ('prediction' + ext)}, "
          f"{out_dir / 'mask.pgm'}")
    return 0


_METHOD_FLAG = {"rec": "reconstruction", "nn-ours": "nn_ours", "nn-hog": "nn_hog"}


def _cmd_eval(args) -> int:
    ckpt, gen, _, gcfg, fill = _load_generator(args.ckpt)
    method = _METHOD_FLAG[args.method]
    kind = _MASK_FLAG_TO_KIND[args.mask] if args.mask else gcfg.mask_kind
    seed = args.seed if args.seed is not None else 0
    held_fraction = 0.2
    if args.config:
        held_fraction = _read_config_file(args.config).get("held_out_fraction", 0.2)
    _print_config("eval", gcfg, None,
                  {"ckpt": args.ckpt, "data": args.data, "method": method,
                   "mask": kind, "seed": seed, "format": args.format,
                   "held_out_fraction": held_fraction})
    data = dataio.ingest_dataset(args.data, held_fraction, seed, gcfg.image_size)
    report = evaluate_dataset(data, method, gcfg, gen=gen, mask_kind=kind, seed=seed)
    text = report.to_json() if args.format == "json" else report.to_text()
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        suffix = "json" if args.format == "json" else "txt"
        path = Path(args.out) / f"eval_{method}.{suffix}"
        path.write_text(text + "\n")
        print(f"wrote {path}")
    return 0


def _cmd_nn(args) -> int:
    ckpt, gen, _, gcfg, fill = _load_generator(args.ckpt)
    kind = _MASK_FLAG_TO_KIND[args.mask] if args.mask else gcfg.mask_kind
    seed = args.seed if args.seed is not None else 0
    _print_config("nn", gcfg, None,
                  {"ckpt": args.ckpt, "input": args.input, "data": args.data,
                   "mask": kind, "seed": seed})
    data = dataio.ingest_dataset(args.data, 0.0, seed, gcfg.image_size)
    query = dataio.load_image(args.input)
    if query.shape[2] != gcfg.image_size or query.shape[3] != gcfg.image_size:
        from ctxfill.dataio import _fit_to_size
        query = _fit_to_size(query[0], gcfg.image_size)[None]
    mask = _mask_from_args(gcfg, kind, seed)
    _, ranked = nn_inpaint(query, mask, data.images, features="ours", gen=gen,
                           fill=fill, db_ids=data.ids)
    print("rank\tid\tdistance")
    for rank, (item_id, dist) in enumerate(ranked, 1):
        print(f"{rank}\t{item_id}\t{dist:.6g}")
    return 0


def _cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    _print_config("gradcheck", None, None, {"seed": seed})
    results = run_gradient_suite(seed)
    failures = 0
    for res in results:
        status = "ok" if res.ok else "FAIL"
        print(f"{status}\t{res.name}\trel_err={res.error:.3e}\ttol={res.tol:.0e}")
        failures += 0 if res.ok else 1
    if failures:
        print(f"{failures} of {len(results)} gradient checks failed")
        return EXIT_NUMERIC
    print(f"all {len(results)} gradient checks passed")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ctxfill", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        if "config" in flags:
            p.add_argument("--config", help="flat key=value config file")
        if "seed" in flags:
            p.add_argument("--seed", type=int, help="RNG seed")
        if "mask" in flags:
            p.add_argument("--mask", choices=sorted(_MASK_FLAG_TO_KIND),
                           help="mask family")
            p.add_argument("--patch", type=int, help="central patch side")
            p.add_argument("--overlap", type=int, help="central overlap band width")

    p = sub.add_parser("train", help="train a model")
    common(p, "config", "seed", "mask")
    p.add_argument("--data", required=True, help="image directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--ckpt", help="checkpoint to resume from")
    p.add_argument("--iterations", type=int)
    p.add_argument("--loss", choices=("l2", "joint"))
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("inpaint", help="fill a masked region of one image")
    common(p, "seed", "mask")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="input image (.ppm/.png)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_inpaint)

    p = sub.add_parser("eval", help="score methods on the held-out split")
    common(p, "config", "seed", "mask")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=sorted(_METHOD_FLAG), default="rec")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", help="directory for the report file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("nn", help="rank nearest neighbors by context features")
    common(p, "seed", "mask")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--data", required=True, help="database image directory")
    p.set_defaults(func=_cmd_nn)

    p = sub.add_parser("gradcheck", help="run the gradient-check suite")
    common(p, "seed")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("synth-data", help="write the bundled synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        if exc.last_good:
            print(f"last good checkpoint: {exc.last_good}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (dataio.DataError, dataio.CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
