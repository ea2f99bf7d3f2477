"""Write the bundled toy corpus, a two-texture segmentation set, and a desk config."""

import argparse
from pathlib import Path

from scvae.synthetic import segmentation_set, toy_corpus, write_corpus

CONFIG = """\
# desk-scale run on the toy corpus
learning_rate = 0.0001
batch_size = 8
epochs = 80
seed = 0
data_dir = {data}
model.latent_dim = 16
model.dict_atoms = 64
model.lista_steps = 8
model.alpha = 1.0
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("toy"), help="output directory")
    ap.add_argument("--count", type=int, default=200, help="training images")
    ap.add_argument("--seg-count", type=int, default=8, help="two-texture images with masks")
    ap.add_argument("--seg-size", type=int, default=64, help="side of the segmentation images")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    train_dir = args.out / "train"
    write_corpus(train_dir, toy_corpus(args.count, seed=args.seed))
    images, masks = segmentation_set(args.seg_count, size=args.seg_size, seed=args.seed + 100)
    write_corpus(args.out / "seg", images, masks)
    (args.out / "desk.cfg").write_text(CONFIG.format(data=train_dir.resolve()))
    print(f"{args.count} training images in {train_dir}, {args.seg_count} masked images in {args.out / 'seg'}")
    print(f"config: {args.out / 'desk.cfg'}")


if __name__ == "__main__":
    main()
