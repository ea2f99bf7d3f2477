import re

import numpy as np
import pytest

from scvae.checkpoint import read_tensors
from scvae.cli import build_parser, run
from scvae.images import read_image
from scvae.synthetic import segmentation_set, toy_corpus, write_corpus

CONFIG = """\
# tiny desk config
learning_rate = 0.001
batch_size = 8
epochs = 2
seed = 3
model.image_size = 32
model.latent_dim = 16
model.dict_atoms = 64
model.lista_steps = 2
model.base_channels = 4
model.mid_channels = 8
model.norm_groups = 2
"""

SUBCOMMANDS = ["make-dict", "train", "encode", "reconstruct", "cluster-patches", "segment", "eval", "noise-sweep"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_corpus(root / "data", toy_corpus(64, seed=1))
    imgs, masks = segmentation_set(3)
    write_corpus(root / "seg", imgs, masks)
    (root / "cfg.txt").write_text(CONFIG + f"data_dir = {root / 'data'}\n")
    assert run(["train", "--config", str(root / "cfg.txt"), "--out", str(root / "run")]) == 0
    return root


def test_help_exits_zero_and_lists_flags(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name in SUBCOMMANDS:
        assert run([name, "--help"]) == 0
        text = capsys.readouterr().out
        for action in sub.choices[name]._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
            if action.option_strings and action.dest != "help":
                assert action.help, (name, action.dest)


def test_usage_errors(capsys):
    assert run([]) == 2
    assert run(["eval", "--nope"]) == 2
    assert run(["frobnicate"]) == 2
    assert run(["make-dict", "--n", "x", "--atoms", "4", "--out", "o"]) == 2


def test_make_dict(tmp_path):
    out = tmp_path / "dict.scvk"
    assert run(["make-dict", "--n", "256", "--atoms", "512", "--out", str(out)]) == 0
    assert read_tensors(out)["dictionary.atoms"].shape == (256, 512)


def test_make_dict_bad_sizes(tmp_path, capsys):
    assert run(["make-dict", "--n", "16", "--atoms", "8", "--out", str(tmp_path / "d")]) == 1
    assert "K >= n" in capsys.readouterr().err


def test_train_artifacts(workspace):
    for name in ("best.scvk", "last.scvk", "losses.csv"):
        assert (workspace / "run" / name).exists()


def test_train_with_external_dictionary(workspace, tmp_path):
    d = tmp_path / "d.scvk"
    assert run(["make-dict", "--n", "16", "--atoms", "64", "--out", str(d)]) == 0
    assert run(["train", "--config", str(workspace / "cfg.txt"), "--dict", str(d), "--out", str(tmp_path / "r"),
                "--max-steps", "2"]) == 0
    wrong = tmp_path / "w.scvk"
    run(["make-dict", "--n", "16", "--atoms", "32", "--out", str(wrong)])
    assert run(["train", "--config", str(workspace / "cfg.txt"), "--dict", str(wrong), "--out",
                str(tmp_path / "r2")]) == 1


def test_train_missing_data(tmp_path):
    (tmp_path / "c.txt").write_text(CONFIG + f"data_dir = {tmp_path / 'none'}\n")
    assert run(["train", "--config", str(tmp_path / "c.txt"), "--out", str(tmp_path / "o")]) == 1


def test_reconstruct(workspace, tmp_path):
    out = tmp_path / "rec"
    ckpt = str(workspace / "run" / "best.scvk")
    assert run(["reconstruct", "--ckpt", ckpt, "--in", str(workspace / "seg"), "--out", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "filename,psnr,ssim,hoyer" and len(lines) == 4
    assert read_image(out / "img0000.png", 1).shape == (1, 32, 32)
    # a second run appends rows without repeating the header
    assert run(["reconstruct", "--ckpt", ckpt, "--in", str(workspace / "seg"), "--out", str(out)]) == 0
    assert len((out / "metrics.csv").read_text().splitlines()) == 7


def test_reconstruct_empty_dir(workspace, tmp_path):
    (tmp_path / "empty").mkdir()
    out = tmp_path / "rec"
    assert run(["reconstruct", "--ckpt", str(workspace / "run" / "best.scvk"), "--in", str(tmp_path / "empty"),
                "--out", str(out)]) == 1
    assert not out.exists()


def test_reconstruct_size_mismatch(workspace, tmp_path, capsys):
    write_corpus(tmp_path / "big", [np.zeros((1, 48, 48))])
    assert run(["reconstruct", "--ckpt", str(workspace / "run" / "best.scvk"), "--in", str(tmp_path / "big"),
                "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "(1, 48, 48)" in err and "(1, 32, 32)" in err


def test_encode(workspace, tmp_path):
    out = tmp_path / "codes.scvk"
    assert run(["encode", "--ckpt", str(workspace / "run" / "best.scvk"), "--in", str(workspace / "seg"),
                "--out", str(out)]) == 0
    codes = read_tensors(out)
    assert sorted(codes) == ["codes.img0000.png", "codes.img0001.png", "codes.img0002.png"]
    assert codes["codes.img0000.png"].shape == (16, 16, 64)


def test_cluster_patches(workspace, tmp_path):
    out = tmp_path / "clusters.csv"
    assert run(["cluster-patches", "--ckpt", str(workspace / "run" / "best.scvk"), "--data", str(workspace / "seg"),
                "--clusters", "5", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "filename,row,col,cluster" and len(lines) == 1 + 3 * 256
    assert {int(line.split(",")[-1]) for line in lines[1:]} <= set(range(5))


def test_segment_outputs(workspace, tmp_path):
    out = tmp_path / "seg"
    assert run(["segment", "--ckpt", str(workspace / "run" / "best.scvk"), "--data", str(workspace / "seg"),
                "--out", str(out), "--classes", "2"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == sorted([f"img000{i}{s}" for i in range(3) for s in (".labels.pgm", ".fg.png")])


def test_segment_larger_images(workspace, tmp_path, capsys):
    imgs, masks = segmentation_set(2, size=48)
    write_corpus(tmp_path / "big", imgs, masks)
    ckpt = str(workspace / "run" / "best.scvk")
    assert run(["segment", "--ckpt", ckpt, "--data", str(tmp_path / "big"), "--out", str(tmp_path / "seg")]) == 0
    assert read_image(tmp_path / "seg" / "img0000.fg.png", 1).shape == (1, 24, 24)
    assert run(["noise-sweep", "--ckpt", ckpt, "--data", str(tmp_path / "big"), "--sigmas", "0"]) == 0
    # without the mirrored border the model only takes its training size
    capsys.readouterr()
    assert run(["segment", "--ckpt", ckpt, "--data", str(tmp_path / "big"), "--out", str(tmp_path / "s0"),
                "--context", "0"]) == 1
    assert "does not match model input" in capsys.readouterr().err


def test_eval_table_deterministic(workspace, capsys):
    args = ["eval", "--ckpt", str(workspace / "run" / "best.scvk"), "--data", str(workspace / "seg")]
    assert run(args) == 0
    first = capsys.readouterr().out
    assert run(args) == 0
    assert capsys.readouterr().out == first
    lines = first.splitlines()
    assert lines[0] == "filename,psnr,ssim,hoyer" and lines[-1].startswith("mean,")
    assert len(lines) == 5


def test_noise_sweep(workspace, tmp_path):
    out = tmp_path / "sweep.csv"
    ckpt = str(workspace / "run" / "best.scvk")
    assert run(["noise-sweep", "--ckpt", ckpt, "--data", str(workspace / "seg"), "--sigmas", "0,0.05,0.1",
                "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "sigma,mean_iou,mean_dice"
    assert [line.split(",")[0] for line in lines[1:]] == ["0.000000", "0.050000", "0.100000"]
    clean = tmp_path / "clean.csv"
    assert run(["noise-sweep", "--ckpt", ckpt, "--data", str(workspace / "seg"), "--sigmas", "0",
                "--out", str(clean)]) == 0
    assert clean.read_text().splitlines()[1] == lines[1]


def test_noise_sweep_missing_masks(workspace, tmp_path, caplog):
    write_corpus(tmp_path / "d", segmentation_set(2)[0])
    assert run(["noise-sweep", "--ckpt", str(workspace / "run" / "best.scvk"), "--data", str(tmp_path / "d"),
                "--sigmas", "0"]) == 1
    assert "no mask" in caplog.text


def test_noise_sweep_bad_sigmas(workspace):
    assert run(["noise-sweep", "--ckpt", str(workspace / "run" / "best.scvk"), "--data", str(workspace / "seg"),
                "--sigmas", "0,abc"]) == 1


def test_seeded_outputs_byte_identical(workspace, tmp_path):
    ckpt = str(workspace / "run" / "best.scvk")
    for tag in ("a", "b"):
        assert run(["segment", "--ckpt", ckpt, "--data", str(workspace / "seg"), "--out", str(tmp_path / tag),
                    "--seed", "9"]) == 0
        assert run(["cluster-patches", "--ckpt", ckpt, "--data", str(workspace / "seg"), "--clusters", "4",
                    "--out", str(tmp_path / tag / "c.csv"), "--seed", "9"]) == 0
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name


def test_train_cli_reproducible(workspace, tmp_path):
    for tag in ("x", "y"):
        assert run(["train", "--config", str(workspace / "cfg.txt"), "--out", str(tmp_path / tag),
                    "--max-steps", "3", "--seed", "5"]) == 0
    for name in ("best.scvk", "last.scvk", "losses.csv"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()
    assert re.search(r"seed = 5", read_tensors(tmp_path / "x" / "last.scvk")["meta.config"].tobytes().decode())


def test_outputs_create_parent_dirs(workspace, tmp_path):
    assert run(["make-dict", "--n", "16", "--atoms", "64", "--out", str(tmp_path / "a" / "b" / "d.scvk")]) == 0
    assert run(["cluster-patches", "--ckpt", str(workspace / "run" / "best.scvk"), "--data", str(workspace / "seg"),
                "--clusters", "2", "--out", str(tmp_path / "c" / "clusters.csv")]) == 0
    assert (tmp_path / "a" / "b" / "d.scvk").exists() and (tmp_path / "c" / "clusters.csv").exists()
