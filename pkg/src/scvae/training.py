"""Adam, the mini-batch training loop, config files, datasets and checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .checkpoint import read_tensors, write_tensors
from .dictionary import dictionary_from_atoms
from .errors import ConfigError, NumericalError
from .images import list_images, read_image, resize_bilinear
from .model import SCVAE, LossReport, ModelConfig, weight_shapes
from .solvers import ListaParams

log = logging.getLogger(__name__)

DECOMPOSITION_TOL = 1e-8


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0
    data_dir: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "model":
                continue
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        for f in fields(self.model):
            lines.append(f"model.{f.name} = {_fmt(getattr(self.model, f.name))}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(raw: str, kind, key):
    try:
        if kind is bool or kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind is int or kind == "int":
            return int(raw)
        if kind is float or kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` comments, dotted ``model.*`` keys)."""
    top = {f.name: f.type for f in fields(TrainConfig) if f.name != "model"}
    nested = {f.name: f.type for f in fields(ModelConfig)}
    tvals, mvals = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key.startswith("model."):
            sub = key[len("model."):]
            if sub not in nested:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            mvals[sub] = _coerce(raw, nested[sub], key)
        elif key in top:
            tvals[key] = _coerce(raw, top[key], key)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return TrainConfig(model=ModelConfig(**mvals), **tvals)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# -------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update from each tensor's ``.grad``.

    Parameters whose name ends in ``theta`` are clamped at zero afterwards.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data -= update.astype(p.data.dtype, copy=False)
        if name.endswith("theta"):
            np.maximum(p.data, 0.0, out=p.data)


# ------------------------------------------------------------------ data


def load_dataset(data_dir, image_size: int, channels: int):
    """Sorted (names, N x C x S x S float32 array) of every decodable image in ``data_dir``."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise OSError(f"data directory {data_dir} does not exist")
    names, arrays = [], []
    for path in list_images(data_dir):
        try:
            img = read_image(path, channels)
        except Exception as exc:  # noqa: BLE001 - any decoder failure means skip
            log.warning("skipping undecodable image %s: %s", path.name, exc)
            continue
        names.append(path.name)
        arrays.append(resize_bilinear(img, image_size))
    if not arrays:
        raise OSError(f"no usable images in {data_dir}")
    return names, np.stack(arrays).astype(np.float32)


# ------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    tensors: dict
    step: int
    config: TrainConfig
    epoch_losses: list = field(default_factory=list)
    best_loss: float = math.inf
    epoch_sum: float = 0.0
    epoch_count: int = 0

    def to_tensors(self) -> dict:
        out = dict(self.tensors)
        out["meta.step"] = np.array([self.step], dtype=np.int64)
        out["meta.config"] = np.frombuffer(self.config.to_text().encode("utf-8"), dtype=np.uint8)
        out["meta.epoch_losses"] = np.asarray(self.epoch_losses, dtype=np.float64)
        out["meta.running"] = np.array([self.best_loss, self.epoch_sum, self.epoch_count], dtype=np.float64)
        return out

    @classmethod
    def from_tensors(cls, tensors: dict):
        tensors = dict(tensors)
        step = int(tensors.pop("meta.step")[0])
        config = parse_config(tensors.pop("meta.config").tobytes().decode("utf-8"))
        losses = tensors.pop("meta.epoch_losses").tolist()
        best, esum, ecount = tensors.pop("meta.running").tolist()
        return cls(tensors, step, config, losses, best, esum, int(ecount))


def save_checkpoint(ckpt: Checkpoint, path):
    write_tensors(path, ckpt.to_tensors())


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_tensors(read_tensors(path))


def model_tensors(model: SCVAE, adam: AdamState | None = None) -> dict:
    out = {f"model.{k}": v.data.copy() for k, v in model.weights.items()}
    out.update({k: v.data.copy() for k, v in model.lista.tensors().items()})
    out["dictionary.atoms"] = np.array(model.dictionary.atoms)
    if adam is not None:
        out["adam.t"] = np.array([adam.t], dtype=np.int64)
        for name in model.parameters():
            if name in adam.m:
                out[f"adam.m.{name}"] = adam.m[name].copy()
                out[f"adam.v.{name}"] = adam.v[name].copy()
    return out


def model_from_tensors(config: ModelConfig, tensors: dict) -> SCVAE:
    dictionary = dictionary_from_atoms(tensors["dictionary.atoms"])
    weights = {}
    for name in weight_shapes(config):
        arr = tensors[f"model.{name}"]
        weights[name] = ad.Tensor(arr.copy(), requires_grad=True, dtype=arr.dtype, name=name)
    lista = ListaParams(
        w_e=ad.Tensor(tensors["lista.w_e"].copy(), requires_grad=True, dtype=tensors["lista.w_e"].dtype),
        s_matrix=ad.Tensor(tensors["lista.s"].copy(), requires_grad=True, dtype=tensors["lista.s"].dtype),
        theta=ad.Tensor(tensors["lista.theta"].copy(), requires_grad=True, dtype=tensors["lista.theta"].dtype),
        steps=config.lista_steps,
    )
    return SCVAE(config, weights, lista, dictionary)


def adam_from_tensors(tensors: dict) -> AdamState:
    state = AdamState(t=int(tensors["adam.t"][0]) if "adam.t" in tensors else 0)
    for k, v in tensors.items():
        if k.startswith("adam.m."):
            state.m[k[len("adam.m."):]] = v.copy()
        elif k.startswith("adam.v."):
            state.v[k[len("adam.v."):]] = v.copy()
    return state


def model_from_checkpoint(ckpt: Checkpoint) -> SCVAE:
    return model_from_tensors(ckpt.config.model, ckpt.tensors)


# ------------------------------------------------------------------- train


@dataclass
class TrainResult:
    last: Checkpoint
    best: Checkpoint
    epoch_reports: list
    step_reports: list
    model: SCVAE


def _mean_report(reports):
    return LossReport(
        rec=float(np.mean([r.rec for r in reports])),
        latent=float(np.mean([r.latent for r in reports])),
        total=float(np.mean([r.total for r in reports])),
        sparsity_hoyer=float(np.mean([r.sparsity_hoyer for r in reports])),
    )


def train(config: TrainConfig, *, images=None, max_steps: int | None = None, resume: Checkpoint | None = None,
          out_dir=None, on_step=None, dictionary=None) -> TrainResult:
    """Run Adam on the sparse-coding VAE loss; deterministic given ``config.seed``.

    ``images`` (N x C x H x W) overrides ``config.data_dir``. ``max_steps`` caps
    the total optimizer steps (counted from zero, including resumed ones).
    ``dictionary`` replaces the default DCT dictionary for a fresh run.
    The "best" checkpoint is the end-of-epoch state with the lowest epoch-mean
    total loss. A step cap that cuts an epoch short leaves it open, so a resumed
    run continues the same epoch.
    """
    if images is None:
        _, images = load_dataset(config.data_dir, config.model.image_size, config.model.channels)
    images = np.asarray(images, dtype=np.float32)
    n = images.shape[0]
    spe = n // config.batch_size
    if spe == 0:
        raise OSError(f"dataset has {n} images, fewer than batch_size={config.batch_size}")

    if resume is None:
        model = SCVAE.create(config.model, seed=config.seed, dictionary=dictionary)
        adam = AdamState()
        ckpt = Checkpoint({}, 0, config)
    else:
        model = model_from_checkpoint(resume)
        adam = adam_from_tensors(resume.tensors)
        ckpt = Checkpoint({}, resume.step, config, list(resume.epoch_losses), resume.best_loss,
                          resume.epoch_sum, resume.epoch_count)
    params = model.parameters()
    s = config.model.latent_size
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    total_steps = config.epochs * spe if max_steps is None else min(max_steps, config.epochs * spe)
    step = ckpt.step
    best = None
    epoch_reports, step_reports, running = [], [], []

    def snapshot():
        return Checkpoint(model_tensors(model, adam), step, config, list(ckpt.epoch_losses),
                          ckpt.best_loss, ckpt.epoch_sum, ckpt.epoch_count)

    def close_epoch():
        nonlocal best
        mean = ckpt.epoch_sum / ckpt.epoch_count
        ckpt.epoch_losses.append(mean)
        ckpt.epoch_sum, ckpt.epoch_count = 0.0, 0
        if running:
            epoch_reports.append(_mean_report(running))
            running.clear()
        if mean < ckpt.best_loss:
            ckpt.best_loss = mean
            best = snapshot()

    while step < total_steps:
        epoch, offset = divmod(step, spe)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        for b in range(offset, spe):
            if step >= total_steps:
                break
            batch = images[order[b * config.batch_size:(b + 1) * config.batch_size]]
            model.zero_grad()
            with ad.Tape() as tape:
                try:
                    report, total, _ = model.loss(batch)
                except NumericalError as exc:
                    raise NumericalError(f"step {step}: {exc}") from None
            gap = report.total - (report.rec + report.latent / (s * s))
            if not abs(gap) <= DECOMPOSITION_TOL:
                raise NumericalError(f"step {step}: loss decomposition off by {gap:.3g}")
            ad.backward(total, tape)
            try:
                adam_step(params, adam, config.learning_rate, config.adam_beta1,
                          config.adam_beta2, config.adam_eps)
            except NumericalError as exc:
                raise NumericalError(f"step {step}: {exc}") from None
            step += 1
            ckpt.epoch_sum += report.total
            ckpt.epoch_count += 1
            running.append(report)
            step_reports.append(report)
            if on_step is not None:
                on_step(step, report)
            if ckpt.epoch_count and step % spe == 0:
                close_epoch()
            if out_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
                save_checkpoint(snapshot(), out_dir / "last.scvk")
        if step >= total_steps:
            break

    if ckpt.epoch_count and (max_steps is None or step == config.epochs * spe):
        close_epoch()
    last = snapshot()
    if best is None:
        best = last
    if out_dir is not None:
        save_checkpoint(last, out_dir / "last.scvk")
        save_checkpoint(best, out_dir / "best.scvk")
        write_loss_csv(out_dir / "losses.csv", epoch_reports)
    return TrainResult(last, best, epoch_reports, step_reports, model)


def write_loss_csv(path, reports):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "rec", "latent", "total", "hoyer"])
        for i, r in enumerate(reports, 1):
            w.writerow([i, f"{r.rec:.6f}", f"{r.latent:.6f}", f"{r.total:.6f}", f"{r.sparsity_hoyer:.6f}"])
