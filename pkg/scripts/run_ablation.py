"""Rollout ablation: train one desk model per LISTA depth and compare them.

Reports train-set PSNR/SSIM and, on held-out images, latent reconstruction MSE
and mean Hoyer sparsity of the codes.
"""

import argparse
import csv
import sys
import time

import numpy as np

from scvae.metrics import hoyer_sparsity_batch, psnr, ssim
from scvae.model import ModelConfig
from scvae.synthetic import toy_corpus
from scvae.training import TrainConfig, train


def evaluate(model, train_images, held_out, batch=50):
    rec = np.concatenate([model.reconstruct(train_images[i:i + batch].astype(model.dtype))
                          for i in range(0, len(train_images), batch)])
    mse, hoyer = [], []
    for i in range(0, len(held_out), batch):
        fwd = model.forward(held_out[i:i + batch].astype(model.dtype))
        mse.append(((fwd.latents.data - fwd.recon_latents.data) ** 2).mean(axis=1))
        hoyer.append(hoyer_sparsity_batch(fwd.codes.data))
    return {
        "psnr": float(np.mean([psnr(a, b) for a, b in zip(train_images, rec)])),
        "ssim": float(np.mean([ssim(a, b) for a, b in zip(train_images, rec)])),
        "latent_mse": float(np.concatenate(mse).mean()),
        "hoyer": float(np.concatenate(hoyer).mean()),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", default="1,8", help="comma-separated LISTA depths")
    ap.add_argument("--max-steps", type=int, default=2000, help="optimizer steps per model")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="CSV path (stdout if omitted)")
    args = ap.parse_args()

    images = toy_corpus(200, seed=args.seed)
    held_out = toy_corpus(60, seed=args.seed + 7)
    rows = []
    for s in (int(v) for v in args.steps.split(",")):
        cfg = TrainConfig(learning_rate=1e-4, batch_size=8, epochs=10_000, seed=args.seed,
                          model=ModelConfig(lista_steps=s))
        start = time.perf_counter()
        res = train(cfg, images=images, max_steps=args.max_steps)
        row = {"s": s, "seconds": round(time.perf_counter() - start, 1), **evaluate(res.model, images, held_out)}
        print(row, file=sys.stderr, flush=True)
        rows.append(row)
    f = open(args.out, "w", newline="") if args.out else sys.stdout
    writer = csv.DictWriter(f, fieldnames=list(rows[0]))
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        f.close()


if __name__ == "__main__":
    main()
