"""Command-line entry point: ``scvae <subcommand> ...``.

Exit codes: 0 success, 1 runtime error (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import downstream
from .checkpoint import read_tensors, write_tensors
from .dictionary import build_dct_dictionary, dictionary_from_atoms
from .errors import ConfigError, DimensionError, ScvaeError
from .images import list_images, read_image, read_mask, write_image, write_label_pgm, write_label_png
from .metrics import hoyer_sparsity_batch, iou_dice, psnr, ssim
from .training import load_checkpoint, load_config, model_from_checkpoint, train

log = logging.getLogger("scvae")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def _load_model(path):
    return model_from_checkpoint(load_checkpoint(path))


def _input_paths(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        return list_images(path)
    if path.is_file():
        return [path]
    raise OSError(f"input {path} does not exist")


def _read_checked(model, path, any_size=False):
    cfg = model.config
    img = read_image(path, cfg.channels)
    if any_size:
        # encoder-only commands take any size the downsampling divides
        f = 2 ** cfg.downsample_blocks
        if img.shape[1] % f or img.shape[2] % f:
            raise DimensionError(f"{path.name}: image size {img.shape[1:]} is not divisible by {f}")
        return img
    want = (cfg.channels, cfg.image_size, cfg.image_size)
    if img.shape != want:
        raise DimensionError(f"{path.name}: image shape {img.shape} does not match model input {want}")
    return img


def _load_inputs(model, path, any_size=False):
    paths = _input_paths(path)
    if not paths:
        raise OSError(f"no images in {path}")
    return paths, [_read_checked(model, p, any_size) for p in paths]


def _mask_for(data_dir: Path, name: str):
    stem = Path(name).stem
    for cand in sorted((data_dir / "masks").glob(stem + ".*")):
        if cand.suffix.lower() in (".png", ".pgm"):
            return read_mask(cand)
    return None


def _g(x: float) -> str:
    return f"{x:.6f}"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _per_image_metrics(model, paths, images):
    rows = []
    for p, img in zip(paths, images):
        x = img.astype(model.dtype)
        rec = model.reconstruct(x[None])[0].astype(np.float64)
        codes = model.codes_grid(x)
        hoyer = float(hoyer_sparsity_batch(codes.reshape(-1, codes.shape[-1])).mean())
        rows.append((p.name, psnr(img, rec), ssim(img, rec), hoyer, rec))
    return rows


def _segment(model, img, args):
    return downstream.segment_image(model, img, args.classes, args.method, seed=args.seed,
                                    knn=args.knn, tau=args.tau, context=args.context)


def _score(model, result, truth):
    factor = 2 ** model.config.downsample_blocks
    return iou_dice(downstream.upsample_mask(result.fg_mask, factor), truth)


# -------------------------------------------------------------- subcommands


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_make_dict(args):
    d = build_dct_dictionary(args.n, args.atoms)
    write_tensors(args.out, {"dictionary.atoms": np.array(d.atoms),
                             "dictionary.lipschitz": np.array([d.lipschitz_bound])})
    print(f"wrote {args.n}x{args.atoms} dictionary to {args.out} (L={d.lipschitz_bound:.6g})")


def cmd_train(args):
    config = load_config(args.config)
    if args.data is not None:
        config.data_dir = str(args.data)
    if args.seed is not None:
        config.seed = args.seed
    dictionary = None
    if args.dict is not None:
        dictionary = dictionary_from_atoms(read_tensors(args.dict)["dictionary.atoms"])
        want = (config.model.latent_dim, config.model.dict_atoms)
        if dictionary.atoms.shape != want:
            raise ConfigError(f"dictionary shape {dictionary.atoms.shape} does not match config {want}")
    res = train(config, max_steps=args.max_steps, out_dir=args.out, dictionary=dictionary)
    print(f"trained {res.last.step} steps; best epoch-mean loss {res.last.best_loss:.6f}; "
          f"artifacts in {args.out}")


def cmd_encode(args):
    model = _load_model(args.ckpt)
    paths, images = _load_inputs(model, args.input)
    out = {}
    for p, img in zip(paths, images):
        out[f"codes.{p.name}"] = model.codes_grid(img.astype(model.dtype))
    write_tensors(args.out, out)
    print(f"wrote codes for {len(out)} images to {args.out}")


def cmd_reconstruct(args):
    model = _load_model(args.ckpt)
    paths, images = _load_inputs(model, args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, p_, s_, h_, rec in _per_image_metrics(model, paths, images):
        write_image(out / (Path(name).stem + ".png"), rec)
        rows.append([name, _g(p_), _g(s_), _g(h_)])
    csv_path = Path(args.csv) if args.csv else out / "metrics.csv"
    text = _csv_text(["filename", "psnr", "ssim", "hoyer"], rows)
    if csv_path.exists() and csv_path.stat().st_size > 0:
        text = text.split("\n", 1)[1]
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "a", encoding="utf-8", newline="") as f:
        f.write(text)
    print(f"reconstructed {len(rows)} images into {out}")


def cmd_cluster_patches(args):
    model = _load_model(args.ckpt)
    paths, images = _load_inputs(model, args.data)
    grids = [model.codes_grid(img.astype(model.dtype)) for img in images]
    s = model.config.latent_size
    points = np.concatenate([g.reshape(s * s, -1) for g in grids])
    res = downstream.kmeans(points, args.clusters, seed=args.seed, max_iters=args.max_iters)
    rows = []
    for i, p in enumerate(paths):
        labels = res.labels[i * s * s:(i + 1) * s * s]
        for cell, lab in enumerate(labels):
            rows.append([p.name, cell // s, cell % s, int(lab)])
    _write_text(args.out, _csv_text(["filename", "row", "col", "cluster"], rows))
    print(f"clustered {points.shape[0]} code vectors into {args.clusters} groups; inertia {res.inertia:.6f}")


def cmd_segment(args):
    model = _load_model(args.ckpt)
    paths, images = _load_inputs(model, args.data, any_size=args.context > 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p, img in zip(paths, images):
        res = _segment(model, img, args)
        stem = Path(p.name).stem
        write_label_pgm(out / f"{stem}.labels.pgm", res.label_grid)
        write_label_png(out / f"{stem}.fg.png", res.fg_mask.astype(np.uint8))
    print(f"segmented {len(paths)} images into {out}")


def cmd_eval(args):
    model = _load_model(args.ckpt)
    paths, images = _load_inputs(model, args.data)
    rows = _per_image_metrics(model, paths, images)
    table = [[n, _g(a), _g(b), _g(c)] for n, a, b, c, _ in rows]
    table.append(["mean", _g(np.mean([r[1] for r in rows])), _g(np.mean([r[2] for r in rows])),
                  _g(np.mean([r[3] for r in rows]))])
    sys.stdout.write(_csv_text(["filename", "psnr", "ssim", "hoyer"], table))


def cmd_noise_sweep(args):
    model = _load_model(args.ckpt)
    data = Path(args.data)
    paths, images = _load_inputs(model, data, any_size=args.context > 0)
    try:
        sigmas = [float(v) for v in args.sigmas.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sigma list {args.sigmas!r}") from None
    if not sigmas or any(s < 0 for s in sigmas):
        raise ConfigError("sigmas must be a non-empty list of values >= 0")
    pairs = []
    for p, img in zip(paths, images):
        mask = _mask_for(data, p.name)
        if mask is None:
            log.warning("no mask for %s; skipping", p.name)
            continue
        pairs.append((img, mask))
    if not pairs:
        raise OSError(f"no image in {data} has a mask under {data / 'masks'}")
    rows = []
    for si, sigma in enumerate(sigmas):
        rng = np.random.default_rng([args.seed, si])
        scores = []
        for img, mask in pairs:
            noisy = img if sigma == 0 else np.clip(img + rng.normal(0.0, sigma, img.shape), 0.0, 1.0)
            scores.append(_score(model, _segment(model, noisy, args), mask))
        rows.append([_g(sigma), _g(np.mean([s[0] for s in scores])), _g(np.mean([s[1] for s in scores]))])
    text = _csv_text(["sigma", "mean_iou", "mean_dice"], rows)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------- parser


def _seg_flags(p):
    p.add_argument("--classes", type=int, default=2, help="clusters per image (>= 2)")
    p.add_argument("--method", choices=["spectral", "kmeans"], default="spectral", help="clustering method")
    p.add_argument("--knn", type=int, default=None, help="neighbours in the spectral affinity graph (default: all)")
    p.add_argument("--context", type=int, default=4, help="latent cells of mirrored border added while encoding")
    p.add_argument("--tau", type=float, default=1.0, help="boundary-connectivity background threshold")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scvae", description="Sparse-coding VAE toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-dict", help="write an overcomplete DCT dictionary")
    p.add_argument("--n", type=int, required=True, help="atom length (latent dimension)")
    p.add_argument("--atoms", type=int, required=True, help="number of atoms K")
    p.add_argument("--out", required=True, help="output .scvk file")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_make_dict)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--out", default=".", help="directory for best.scvk, last.scvk, losses.csv")
    p.add_argument("--data", default=None, help="override data_dir from the config")
    p.add_argument("--dict", default=None, help="dictionary .scvk from make-dict (default: built in)")
    p.add_argument("--max-steps", type=int, default=None, help="cap on optimizer steps")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="write sparse code grids for images")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--in", dest="input", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output .scvk file of codes.<filename> tensors")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("reconstruct", help="reconstruct images and report metrics")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--in", dest="input", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output directory for PNG reconstructions")
    p.add_argument("--csv", default=None, help="CSV to append to (default: <out>/metrics.csv)")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("cluster-patches", help="k-means over all code vectors of a directory")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="image directory")
    p.add_argument("--clusters", type=int, required=True, help="number of clusters")
    p.add_argument("--max-iters", type=int, default=300, help="Lloyd iteration cap")
    p.add_argument("--out", required=True, help="output CSV filename,row,col,cluster")
    p.add_argument("--seed", type=int, default=0, help="k-means++ seed")
    p.set_defaults(func=cmd_cluster_patches)

    p = sub.add_parser("segment", help="unsupervised segmentation masks")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="image file or directory")
    p.add_argument("--out", required=True, help="output directory for .labels.pgm / .fg.png")
    p.add_argument("--seed", type=int, default=0, help="clustering seed")
    _seg_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="print PSNR / SSIM / Hoyer per image as CSV")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="image file or directory")
    p.add_argument("--seed", type=int, default=0, help="unused; accepted for uniformity")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise-sweep", help="segmentation IoU / DICE under Gaussian noise")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="image directory with masks/ alongside")
    p.add_argument("--sigmas", default="0,0.05,0.1", help="comma-separated noise levels")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.add_argument("--seed", type=int, default=0, help="noise and clustering seed")
    _seg_flags(p)
    p.set_defaults(func=cmd_noise_sweep)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        args.func(args)
    except (ScvaeError, OSError, ValueError, KeyError) as exc:
        print(f"scvae {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
