"""Segment two-texture images with a trained model and score against the known masks."""

import argparse

import numpy as np

from scvae.downstream import segment_image, upsample_mask
from scvae.metrics import iou_dice
from scvae.model import ModelConfig
from scvae.synthetic import segmentation_set, toy_corpus
from scvae.training import TrainConfig, load_checkpoint, model_from_checkpoint, save_checkpoint, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ckpt", help="trained checkpoint; trains a desk model when omitted")
    ap.add_argument("--save", help="where to save the freshly trained checkpoint")
    ap.add_argument("--count", type=int, default=8, help="number of test images")
    ap.add_argument("--method", choices=["spectral", "kmeans"], default="spectral")
    ap.add_argument("--size", type=int, default=64, help="test image side in pixels")
    ap.add_argument("--knn", type=int, default=None, help="spectral graph neighbours (default: all cells)")
    ap.add_argument("--context", type=int, default=4, help="mirrored border in latent cells")
    ap.add_argument("--tau", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if args.ckpt:
        model = model_from_checkpoint(load_checkpoint(args.ckpt))
    else:
        cfg = TrainConfig(learning_rate=1e-4, batch_size=8, epochs=10_000, model=ModelConfig())
        res = train(cfg, images=toy_corpus(200), max_steps=2000)
        if args.save:
            save_checkpoint(res.last, args.save)
        model = res.model

    images, masks = segmentation_set(args.count, size=args.size)
    factor = 2 ** model.config.downsample_blocks
    scores = []
    for i, (img, mask) in enumerate(zip(images, masks)):
        seg = segment_image(model, img, classes=2, method=args.method, seed=args.seed, knn=args.knn,
                            tau=args.tau, context=args.context)
        iou, dice = iou_dice(upsample_mask(seg.fg_mask, factor), mask)
        scores.append((iou, dice))
        print(f"image {i}: IoU {iou:.3f} DICE {dice:.3f} BndCon {np.round(seg.bndcon_per_class, 2).tolist()}")
    iou, dice = np.mean(scores, axis=0)
    print(f"mean IoU {iou:.3f} mean DICE {dice:.3f}")


if __name__ == "__main__":
    main()
